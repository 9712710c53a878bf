"""Mixed-batch training loop.

Every step runs a source forward pass (segmentation losses) and, unless the
single-task variant is trained, a target forward pass (steering, adversarial
and memory-regularisation losses). The summed loss drives one SGD/Nesterov
update of the segmentation network; the discriminators then take one Adam
step on detached segmentations.
"""
from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from .adversarial import DiscriminatorPair
from .config import RunConfig, normalize_mode
from .data.dataset import Sample, SampleStore, batch_indices, load_batch, load_manifest
from .data.preprocess import PhotometricConfig, flip_augment, photometric_augment, resize_and_random_crop, resize_pair
from .errors import ConfigError, ContractError, RoadMTLError
from .losses import SourceLossBreakdown, TargetLossBreakdown, source_loss, target_loss
from .metrics import EvalReport, evaluate_set
from .mti import RoadMTLNet

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "roadmtl-checkpoint"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = (
    "step", "lr", "seg_p", "seg_a", "deep_seg", "sfseg", "deep_sfseg", "source_total",
    "steer", "deep_steer", "adv_p", "adv_a", "mr", "target_total", "disc_p", "disc_a",
)
SOURCE_STREAM, TARGET_STREAM = 0, 1


@dataclass
class StepResult:
    step: int
    lr: float
    source: SourceLossBreakdown
    target: Optional[TargetLossBreakdown]
    disc: Optional[tuple]

    def log_row(self) -> List[float]:
        s = dict(self.source.items())
        t = dict(self.target.items()) if self.target is not None else {}
        nan = float("nan")
        d = [float(x) for x in self.disc] if self.disc is not None else [nan, nan]
        return [
            self.step, self.lr, s["seg_p"], s["seg_a"], s["deep_seg"], s["sfseg"], s["deep_sfseg"], s["total"],
            t.get("steer", nan), t.get("deep_steer", nan), t.get("adv_p", nan), t.get("adv_a", nan),
            t.get("mr", nan), t.get("total", nan), d[0], d[1],
        ]


@dataclass
class TrainState:
    step: int = 0
    best_val_miou: float = -math.inf
    best_checkpoint_path: Optional[str] = None
    val_history: List[tuple] = field(default_factory=list)
    loss_history: List[list] = field(default_factory=list)


def set_deterministic(flag: bool) -> None:
    torch.use_deterministic_algorithms(flag, warn_only=True)


def source_transform(config: RunConfig):
    d = config.data
    photo = PhotometricConfig(d.brightness, d.contrast, d.saturation, d.max_blur_sigma)

    def apply(sample: Sample, rng: np.random.Generator) -> Sample:
        image, mask = resize_and_random_crop(sample.image, sample.road_mask, rng, d.source_size, d.scale_jitter)
        image = photometric_augment(image, rng, photo)
        return Sample(image=image, kind="source", id=sample.id, road_mask=mask)

    return apply


def target_transform(config: RunConfig):
    d = config.data
    photo = PhotometricConfig(d.brightness, d.contrast, d.saturation, d.max_blur_sigma)

    def apply(sample: Sample, rng: np.random.Generator) -> Sample:
        image, mask = sample.image, sample.road_mask
        if tuple(image.shape[-2:]) != d.target_size:
            image, mask = resize_pair(image, mask, d.target_size)
        image, angle, mask = flip_augment(image, sample.steer_angle, rng, d.flip_p, mask)
        image = photometric_augment(image, rng, photo)
        return Sample(image=image, kind="target", id=sample.id, road_mask=mask, steer_angle=angle)

    return apply


def _stack_images(samples: Sequence[Sample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.image for s in samples])).float()


def _stack_masks(samples: Sequence[Sample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.road_mask for s in samples])).float()


def make_generator_optimizer(params, tc) -> torch.optim.SGD:
    """SGD with Nesterov momentum and weight decay (decay on the generator only)."""
    return torch.optim.SGD(params, lr=tc.sgd_lr, momentum=tc.nesterov_momentum,
                           nesterov=tc.nesterov_momentum > 0, weight_decay=tc.weight_decay)


class Trainer:
    def __init__(self, config: RunConfig, source=None, target=None, val=None):
        self.config = config
        self.mode = normalize_mode(config.train.mode)
        self.weights = config.loss_weights
        tc = config.train
        torch.manual_seed(tc.seed)
        self.model = RoadMTLNet(config.model_config())
        self.discriminators = DiscriminatorPair(config.discriminator)
        self.opt_g = make_generator_optimizer(self.model.parameters(), tc)
        self.opt_d = self.discriminators.make_optimizer()
        self.state = TrainState()
        self.source = source
        self.target = target
        self.val = val
        self.to_source = source_transform(config)
        self.to_target = target_transform(config)

    # -- single step -----------------------------------------------------

    def current_lr(self, step: Optional[int] = None) -> float:
        tc = self.config.train
        step = self.state.step if step is None else step
        if tc.lr_poly_power > 0 and tc.total_steps > 0:
            return tc.sgd_lr * (1 - step / tc.total_steps) ** tc.lr_poly_power
        return tc.sgd_lr

    def _check_batches(self, source_batch, target_batch):
        tc = self.config.train
        if len(source_batch) != tc.source_batch:
            raise ContractError(f"expected {tc.source_batch} source samples, got {len(source_batch)}")
        if any(s.kind != "source" or s.road_mask is None for s in source_batch):
            raise ContractError("source sub-batch must hold source samples with road masks")
        if self.mode == "st":
            if target_batch:
                raise ContractError("single-task training takes no target samples")
            return
        if target_batch is None or len(target_batch) != tc.target_batch:
            got = 0 if target_batch is None else len(target_batch)
            raise ContractError(f"expected {tc.target_batch} target samples, got {got}")
        if any(s.kind != "target" for s in target_batch):
            raise ContractError("target sub-batch must hold target samples")
        if self.mode == "mtl" and any(s.steer_angle is None for s in target_batch):
            raise ContractError("multi-task training needs steering angles on every target sample")

    def train_step(self, source_batch: Sequence[Sample], target_batch: Optional[Sequence[Sample]] = None) -> StepResult:
        self._check_batches(source_batch, target_batch)
        step = self.state.step + 1  # 1-based index of the step being taken
        lr = self.current_lr()
        for group in self.opt_g.param_groups:
            group["lr"] = lr
        self.model.train()
        self.discriminators.train()

        out_s = self.model(_stack_images(source_batch), "source")
        ls = source_loss(out_s, _stack_masks(source_batch), self.weights)
        total = ls.total
        lt = None
        out_t = None
        if self.mode != "st":
            use_steering = self.mode == "mtl"
            out_t = self.model(_stack_images(target_batch), "target", steering=use_steering)
            scores = self.discriminators.generator_scores(
                torch.sigmoid(out_t.primary_seg_logits), torch.sigmoid(out_t.aux_seg_logits)
            )
            angles = None
            if use_steering:
                angles = torch.tensor([s.steer_angle for s in target_batch], dtype=torch.float32)
            lt = target_loss(out_t, angles, scores, self.weights, step, use_steering=use_steering)
            total = total + lt.total

        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()

        disc = None
        if out_t is not None:
            disc = self.discriminators.update(
                self.opt_d,
                torch.sigmoid(out_s.primary_seg_logits),
                torch.sigmoid(out_t.primary_seg_logits),
                torch.sigmoid(out_t.aux_seg_logits),
            )
        self.state.step = step
        result = StepResult(step, lr, _detach(ls), _detach(lt), disc)
        self.state.loss_history.append(result.log_row())
        return result

    # -- evaluation ------------------------------------------------------

    def validate(self, samples=None, batch_size: int = 8) -> EvalReport:
        samples = self.val if samples is None else samples
        if samples is None or len(samples) == 0:
            raise ContractError("validation needs at least one annotated sample")
        return evaluate_set(self.model, samples, batch_size=batch_size)

    # -- batching --------------------------------------------------------

    def batches_for_step(self, step: int):
        """Augmented (source, target) sub-batches for 0-based ``step``."""
        tc = self.config.train
        src_idx = batch_indices(len(self.source), tc.source_batch, tc.seed, step)
        src = load_batch(self.source, src_idx, self.to_source, tc.seed, SOURCE_STREAM, step, self.config.data.workers)
        tgt = None
        if self.mode != "st":
            tgt_idx = batch_indices(len(self.target), tc.target_batch, tc.seed + 1, step)
            tgt = load_batch(self.target, tgt_idx, self.to_target, tc.seed, TARGET_STREAM, step, self.config.data.workers)
        return src, tgt

    # -- persistence -----------------------------------------------------

    def checkpoint_dict(self, metrics: Optional[dict] = None) -> dict:
        return {
            "header": {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION},
            "step": self.state.step,
            "mode": self.mode,
            "metrics": metrics or {},
            "config": self.config.to_dict(),
            "model": self.model.state_dict(),
            "discriminators": self.discriminators.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "state": {
                "best_val_miou": self.state.best_val_miou,
                "best_checkpoint_path": self.state.best_checkpoint_path,
                "val_history": self.state.val_history,
            },
        }

    def save_checkpoint(self, path, metrics: Optional[dict] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            torch.save(self.checkpoint_dict(metrics), path)
        except OSError as exc:
            raise RoadMTLError(f"step {self.state.step}: failed to write checkpoint {path}: {exc}") from exc
        return path

    def load_checkpoint(self, path) -> dict:
        ckpt = read_checkpoint(path)
        if ckpt["mode"] != self.mode:
            raise ConfigError(f"checkpoint was trained in mode {ckpt['mode']!r}, not {self.mode!r}")
        self.model.load_state_dict(ckpt["model"])
        self.discriminators.load_state_dict(ckpt["discriminators"])
        self.opt_g.load_state_dict(ckpt["opt_g"])
        self.opt_d.load_state_dict(ckpt["opt_d"])
        st = ckpt["state"]
        self.state = TrainState(
            step=ckpt["step"],
            best_val_miou=st["best_val_miou"],
            best_checkpoint_path=st["best_checkpoint_path"],
            val_history=[tuple(v) for v in st["val_history"]],
        )
        return ckpt

    # -- main loop -------------------------------------------------------

    def fit(self, resume_from=None, run_log=None) -> TrainState:
        tc = self.config.train
        set_deterministic(tc.deterministic)
        if resume_from is not None:
            self.load_checkpoint(resume_from)
        if self.source is None or len(self.source) == 0:
            raise ContractError("training needs a non-empty source dataset")
        if self.mode != "st" and (self.target is None or len(self.target) == 0):
            raise ContractError("this training mode needs a non-empty target dataset")
        ckpt_dir = Path(tc.checkpoint_dir)
        log_file = None
        if run_log is not None:
            run_log = Path(run_log)
            fresh = resume_from is None or not run_log.exists()
            run_log.parent.mkdir(parents=True, exist_ok=True)
            log_file = run_log.open("w" if fresh else "a")
            if fresh:
                log_file.write("\t".join(LOG_COLUMNS) + "\n")
        try:
            while self.state.step < tc.total_steps:
                src, tgt = self.batches_for_step(self.state.step)
                result = self.train_step(src, tgt)
                if log_file is not None:
                    log_file.write("\t".join(_fmt(v) for v in result.log_row()) + "\n")
                    log_file.flush()
                if self.state.step % tc.val_every == 0:
                    self._validate_and_checkpoint(ckpt_dir)
        finally:
            if log_file is not None:
                log_file.close()
        return self.state

    def _validate_and_checkpoint(self, ckpt_dir: Path) -> None:
        step = self.state.step
        metrics = {}
        if self.val is not None and len(self.val):
            report = self.validate()
            metrics = {"miou": report.miou, "precision": report.precision, "recall": report.recall}
            self.state.val_history.append((step, report.miou, report.precision, report.recall))
            log.info("step %d: val mIoU %.4f P %.4f R %.4f", step, report.miou, report.precision, report.recall)
        path = ckpt_dir / f"step_{step:07d}.pt"
        improved = metrics and metrics["miou"] > self.state.best_val_miou
        if improved:
            self.state.best_val_miou = metrics["miou"]
            self.state.best_checkpoint_path = str(path)
        self.save_checkpoint(path, metrics)
        if improved:
            shutil.copyfile(path, ckpt_dir / "best.pt")


def _detach(breakdown):
    if breakdown is None:
        return None
    out = {}
    for k, v in vars(breakdown).items():
        out[k] = None if v is None else (v.detach() if torch.is_tensor(v) else torch.tensor(float(v)))
    return type(breakdown)(**out)


def _fmt(v) -> str:
    return repr(float(v)) if not isinstance(v, int) else str(v)


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    header = ckpt.get("header", {}) if isinstance(ckpt, dict) else {}
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a roadmtl checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {header.get('version')}")
    return ckpt


def load_model(path) -> RoadMTLNet:
    """Rebuild the segmentation network stored in a checkpoint (eval mode)."""
    ckpt = read_checkpoint(path)
    config = RunConfig.from_dict(ckpt["config"])
    model = RoadMTLNet(config.model_config())
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model


def stores_from_config(config: RunConfig, root=None):
    """Source, target and validation sample stores named by the data section."""
    root = Path(root or config.data.root or ".")
    source = SampleStore(load_manifest(root / config.data.source_manifest), "source")
    target = SampleStore(load_manifest(root / config.data.target_manifest), "target")
    val = SampleStore(load_manifest(root / config.data.val_manifest), "target")
    return source, target, val


def train_variant(mode: str, config: RunConfig, source, target, val, resume_from=None, run_log=None) -> TrainState:
    """Train the single-task, transfer-learning or multi-task model on identical architecture."""
    config.train.mode = normalize_mode(mode)
    trainer = Trainer(config, source, target if config.train.mode != "st" else None, val)
    return trainer.fit(resume_from=resume_from, run_log=run_log)
