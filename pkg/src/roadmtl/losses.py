"""Loss functions for the source (segmentation) and target (steering) batches."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractError, DataError, ShapeError

EPS = 1e-7


@dataclass
class LossWeights:
    lambda_aux: float = 0.5
    lambda_deep: float = 1.0
    lambda_sfseg: float = 0.3
    lambda_steer: float = 0.5
    lambda_adv_p: float = 0.001
    lambda_adv_a: float = 0.0002
    lambda_mr: float = 0.1
    road_class_weight: float = 2.287
    mr_start_step: int = 15000

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ConfigError(f"loss weight {f.name} must be non-negative, got {v}")
        if int(self.mr_start_step) != self.mr_start_step:
            raise ConfigError("mr_start_step must be an integer")
        self.mr_start_step = int(self.mr_start_step)

    def mr_active(self, step: int) -> bool:
        return step > self.mr_start_step


def _zero(like: Optional[torch.Tensor] = None):
    if like is None:
        return torch.tensor(0.0)
    return like.new_zeros(())


@dataclass
class SourceLossBreakdown:
    seg_p: torch.Tensor
    seg_a: torch.Tensor
    deep_seg: torch.Tensor
    sfseg: torch.Tensor
    deep_sfseg: torch.Tensor
    total: torch.Tensor

    @classmethod
    def compose(cls, seg_p, seg_a, deep_seg, sfseg, deep_sfseg, weights: LossWeights):
        w = weights
        total = seg_p + w.lambda_aux * seg_a + w.lambda_deep * deep_seg + w.lambda_sfseg * (
            sfseg + w.lambda_deep * deep_sfseg
        )
        return cls(seg_p, seg_a, deep_seg, sfseg, deep_sfseg, total)

    def items(self):
        return {k: float(v) for k, v in asdict(self).items()}.items()


@dataclass
class TargetLossBreakdown:
    steer: torch.Tensor
    deep_steer: torch.Tensor
    adv_p: torch.Tensor
    adv_a: torch.Tensor
    mr: Optional[torch.Tensor]
    total: torch.Tensor

    @classmethod
    def compose(cls, steer, deep_steer, adv_p, adv_a, mr, weights: LossWeights, step: int):
        """Weighted target loss; the memory term counts only after ``mr_start_step``."""
        w = weights
        total = w.lambda_steer * (steer + w.lambda_deep * deep_steer) + w.lambda_adv_p * adv_p + w.lambda_adv_a * adv_a
        if not w.mr_active(step):
            mr = None
        if mr is not None:
            total = total + w.lambda_mr * mr
        return cls(steer, deep_steer, adv_p, adv_a, mr, total)

    def items(self):
        out = {}
        for k, v in asdict(self).items():
            out[k] = float("nan") if v is None else float(v)
        return out.items()


def weighted_bce(seg_logits: torch.Tensor, target_mask: torch.Tensor, road_weight: float) -> torch.Tensor:
    """Pixel-mean binary cross entropy with the road (positive) term scaled by ``road_weight``."""
    if seg_logits.shape[-2:] != target_mask.shape[-2:]:
        raise ShapeError(f"logits {tuple(seg_logits.shape)} and mask {tuple(target_mask.shape)} differ in size")
    t = target_mask.to(seg_logits.dtype)
    if not torch.all((t == 0) | (t == 1)):
        raise DataError("segmentation mask values must be 0 or 1")
    t = t.expand_as(seg_logits)
    pos = seg_logits.new_tensor(road_weight)
    return F.binary_cross_entropy_with_logits(seg_logits, t, pos_weight=pos)


def steering_mse(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    pred = pred.reshape(-1)
    gt = gt.reshape(-1).to(pred.dtype)
    if pred.numel() == 0:
        raise ContractError("steering MSE of an empty batch")
    if pred.numel() != gt.numel():
        raise ShapeError(f"{pred.numel()} predicted angles vs {gt.numel()} ground-truth angles")
    return torch.mean((pred - gt) ** 2)


def adversarial_gen_loss(d_output: torch.Tensor) -> torch.Tensor:
    """LSGAN generator term 2 * E[(D(x) - 1)^2] on target-set segmentations."""
    return 2.0 * torch.mean((d_output - 1.0) ** 2)


def memory_reg_loss(p_primary: torch.Tensor, p_aux: torch.Tensor) -> torch.Tensor:
    """Symmetric two-class cross entropy between primary and auxiliary road probabilities.

    Evaluated per pixel on the distributions (p, 1 - p) and averaged over
    pixels, so the value does not depend on image resolution.
    """
    if p_primary.shape != p_aux.shape:
        raise ShapeError(f"probability maps differ in shape: {tuple(p_primary.shape)} vs {tuple(p_aux.shape)}")
    pp = p_primary.clamp(EPS, 1 - EPS)
    pa = p_aux.clamp(EPS, 1 - EPS)
    ce_ap = pa * torch.log(pp) + (1 - pa) * torch.log(1 - pp)
    ce_pa = pp * torch.log(pa) + (1 - pp) * torch.log(1 - pa)
    return -(ce_ap + ce_pa).mean()


def deep_supervision_sum(per_scale_losses: Sequence[torch.Tensor]):
    total = 0.0
    for loss in per_scale_losses:
        total = total + loss
    return total


def _upsampled_bce(logits, mask, weight):
    if logits.shape[-2:] != mask.shape[-2:]:
        logits = F.interpolate(logits, size=mask.shape[-2:], mode="bilinear", align_corners=False)
    return weighted_bce(logits, mask, weight)


def source_loss(outputs, mask: Optional[torch.Tensor], weights: LossWeights) -> SourceLossBreakdown:
    if mask is None:
        raise ContractError("source loss needs a road mask")
    if mask.dim() == 3:
        mask = mask.unsqueeze(1)
    w = weights.road_class_weight
    seg_p = weighted_bce(outputs.primary_seg_logits, mask, w)
    seg_a = weighted_bce(outputs.aux_seg_logits, mask, w)
    deep_seg = deep_supervision_sum([_upsampled_bce(p.seg_logits, mask, w) for p in outputs.initial])
    sfseg = weighted_bce(outputs.sfseg_logits, mask, w)
    deep_sfseg = deep_supervision_sum([_upsampled_bce(p.sfseg_logits, mask, w) for p in outputs.initial])
    return SourceLossBreakdown.compose(seg_p, seg_a, deep_seg, sfseg, deep_sfseg, weights)


def target_loss(
    outputs,
    gt_angle: Optional[torch.Tensor],
    d_outputs,
    weights: LossWeights,
    step: int,
    use_steering: bool = True,
) -> TargetLossBreakdown:
    """Target-set loss.

    ``d_outputs`` is the pair of discriminator score maps (primary, auxiliary)
    computed on the target segmentations. With ``use_steering=False`` the
    steering terms are fixed at zero and no angle is required.
    """
    ref = outputs.primary_seg_logits
    if use_steering:
        if gt_angle is None:
            raise ContractError("target loss needs ground-truth steering angles")
        if not outputs.has_steering:
            raise ContractError("model outputs carry no steering predictions")
        steer = steering_mse(outputs.steer_angle_final, gt_angle)
        deep_steer = deep_supervision_sum([steering_mse(a, gt_angle) for a in outputs.steer_angle_deep])
    else:
        steer = deep_steer = _zero(ref)
    d_primary, d_aux = d_outputs
    adv_p = adversarial_gen_loss(d_primary) if d_primary is not None else _zero(ref)
    adv_a = adversarial_gen_loss(d_aux) if d_aux is not None else _zero(ref)
    mr = None
    if weights.mr_active(step):
        mr = memory_reg_loss(torch.sigmoid(outputs.primary_seg_logits), torch.sigmoid(outputs.aux_seg_logits))
    return TargetLossBreakdown.compose(steer, deep_steer, adv_p, adv_a, mr, weights, step)
