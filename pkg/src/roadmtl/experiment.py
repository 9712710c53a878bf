"""Desk-scale comparison of the three training variants on synthetic scenes.

Source scenes use clear weather; target and validation scenes are snow and
gravel roads, so the target domain is visibly shifted. Each variant is
trained from the same initial seed and the best validation mIoU is reported.
"""
from __future__ import annotations

import copy
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import MODES, RunConfig, desk_config
from .data.dataset import Sample
from .data.synth import generate_synth_scene, pick_weather, sample_scene_params
from .trainer import Trainer

log = logging.getLogger(__name__)

SOURCE_WEATHERS = ("clear",)
TARGET_WEATHERS = ("snow", "gravel")


def synth_samples(n: int, size, kind: str, weathers: Sequence[str], rng: np.random.Generator,
                  prefix: str, annotated: bool = False) -> List[Sample]:
    out = []
    for i in range(n):
        params = sample_scene_params(rng, size, pick_weather(rng, weathers))
        s = generate_synth_scene(params, rng, size, kind, f"{prefix}{i:05d}")
        if kind == "target" and not annotated:
            s.road_mask = None
        out.append(s)
    return out


@dataclass
class DeskData:
    source: List[Sample]
    target: List[Sample]
    val: List[Sample]


def make_desk_data(seed: int = 0, n_source: int = 200, n_target: int = 400, n_val: int = 100,
                   source_size=(96, 128), target_size=(64, 128)) -> DeskData:
    rng = np.random.default_rng(seed)
    return DeskData(
        source=synth_samples(n_source, source_size, "source", SOURCE_WEATHERS, rng, "src"),
        target=synth_samples(n_target, target_size, "target", TARGET_WEATHERS, rng, "tgt"),
        val=synth_samples(n_val, target_size, "target", TARGET_WEATHERS, rng, "val", annotated=True),
    )


@dataclass
class ExperimentResult:
    miou: Dict[str, List[float]] = field(default_factory=dict)
    seconds: float = 0.0

    def median(self, mode: str) -> float:
        return statistics.median(self.miou[mode])


def run_desk_experiment(seeds: Sequence[int] = (0, 1, 2), steps: int = 2000, data: Optional[DeskData] = None,
                        base: Optional[RunConfig] = None, out_dir="desk_runs", modes: Sequence[str] = MODES) -> ExperimentResult:
    data = data or make_desk_data()
    base = base or desk_config(total_steps=steps)
    result = ExperimentResult({m: [] for m in modes})
    t0 = time.time()
    for seed in seeds:
        for mode in modes:
            cfg = copy.deepcopy(base)
            cfg.train.total_steps = steps
            cfg.train.seed = seed
            cfg.train.mode = mode
            cfg.train.checkpoint_dir = str(Path(out_dir) / f"{mode}_seed{seed}")
            cfg.train.__post_init__()
            trainer = Trainer(cfg, data.source, data.target if mode != "st" else None, data.val)
            state = trainer.fit(run_log=Path(cfg.train.checkpoint_dir) / "run_log.tsv")
            result.miou[mode].append(state.best_val_miou)
            log.info("seed %d mode %s best val mIoU %.4f", seed, mode, state.best_val_miou)
    result.seconds = time.time() - t0
    return result
