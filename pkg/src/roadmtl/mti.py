"""Multi-scale task-interaction network for road segmentation + steering feature.

Per pyramid scale (coarse to fine) an initial-prediction block emits a road
logit map and a 4-channel steering feature; a propagation block hands task
features on to the next finer scale. Distillation then mixes the two tasks
at every scale and an aggregation head per task produces the full-resolution
outputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import Backbone, BackboneConfig, FeaturePyramid, check_input_size, extract_pyramid
from .errors import ConfigError, ContractError, ShapeError
from .heads import (
    DEEP_HEAD_TAGS,
    DEFAULT_TARGET_SIZE,
    STEER_CHANNELS,
    AggregationHead,
    AuxSegHead,
    SteeringFeatureSegHead,
    SteeringHead,
    steering_specs_for,
)

TASKS = ("seg", "steer")
TASK_OUTPUT_CHANNELS = {"seg": 1, "steer": STEER_CHANNELS}


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    width: int = 64
    target_size: Tuple[int, int] = DEFAULT_TARGET_SIZE
    compact_steer_width: int = 16

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        self.target_size = tuple(int(v) for v in self.target_size)
        if len(self.target_size) != 2:
            raise ConfigError(f"target_size must be (height, width), got {self.target_size}")
        check_input_size(*self.target_size)
        if self.width <= 0:
            raise ConfigError("width must be positive")


@dataclass
class InitialPrediction:
    scale_index: int
    seg_logits: torch.Tensor
    steer_feature: torch.Tensor
    features: Dict[str, torch.Tensor]
    sfseg_logits: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.steer_feature.shape[1] != STEER_CHANNELS:
            raise ShapeError(f"steering feature must have {STEER_CHANNELS} channels")
        if self.seg_logits.shape[-2:] != self.steer_feature.shape[-2:]:
            raise ShapeError("segmentation and steering predictions differ in spatial size")


@dataclass
class ModelOutputs:
    primary_seg_logits: torch.Tensor
    aux_seg_logits: torch.Tensor
    final_steer_feature: torch.Tensor
    sfseg_logits: torch.Tensor
    initial: List[InitialPrediction]
    steer_angle_final: Optional[torch.Tensor] = None
    steer_angle_deep: Optional[List[torch.Tensor]] = None

    @property
    def has_steering(self) -> bool:
        return self.steer_angle_final is not None


def _block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class InitialTaskPrediction(nn.Module):
    def __init__(self, scale_index: int, in_channels: int, width: int):
        super().__init__()
        self.scale_index = scale_index
        self.has_propagated = scale_index < 3
        cin = in_channels + (width if self.has_propagated else 0)
        self.refine = nn.ModuleDict({t: nn.Sequential(_block(cin, width), _block(width, width)) for t in TASKS})
        self.decode = nn.ModuleDict({t: nn.Conv2d(width, TASK_OUTPUT_CHANNELS[t], 1) for t in TASKS})

    def forward(self, feature: torch.Tensor, propagated: Optional[Dict[str, torch.Tensor]] = None) -> InitialPrediction:
        if self.has_propagated and propagated is None:
            raise ContractError(f"scale {self.scale_index} needs propagated features from scale {self.scale_index + 1}")
        if not self.has_propagated and propagated is not None:
            raise ContractError("the coarsest scale takes no propagated features")
        feats = {}
        for t in TASKS:
            x = feature
            if propagated is not None:
                p = propagated[t]
                if p.shape[-2:] != feature.shape[-2:]:
                    raise ShapeError(
                        f"propagated {t} feature {tuple(p.shape[-2:])} does not match backbone "
                        f"feature {tuple(feature.shape[-2:])} at scale {self.scale_index}"
                    )
                x = torch.cat([feature, p], dim=1)
            feats[t] = self.refine[t](x)
        return InitialPrediction(
            scale_index=self.scale_index,
            seg_logits=self.decode["seg"](feats["seg"]),
            steer_feature=self.decode["steer"](feats["steer"]),
            features=feats,
        )


class FeaturePropagation(nn.Module):
    """Shared gated refinement of both task features, then x2 upsampling."""

    def __init__(self, width: int):
        super().__init__()
        self.shared = _block(len(TASKS) * width, width)
        self.gates = nn.ModuleDict({t: nn.Conv2d(width, width, 1) for t in TASKS})

    def forward(self, pred: InitialPrediction) -> Dict[str, torch.Tensor]:
        if pred.scale_index < 1:
            raise ContractError("feature propagation is undefined for the finest scale")
        shared = self.shared(torch.cat([pred.features[t] for t in TASKS], dim=1))
        out = {}
        for t in TASKS:
            x = pred.features[t] + torch.sigmoid(self.gates[t](shared)) * shared
            out[t] = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return out


class MultiModalDistillation(nn.Module):
    """Each task receives the other task's feature through a learned sigmoid gate."""

    def __init__(self, width: int):
        super().__init__()
        self.gates = nn.ModuleDict({t: nn.Conv2d(len(TASKS) * width, width, 1) for t in TASKS})

    def forward(self, pred: InitialPrediction) -> Dict[str, torch.Tensor]:
        feats = pred.features
        both = torch.cat([feats[t] for t in TASKS], dim=1)
        out = {}
        for t in TASKS:
            gate = torch.sigmoid(self.gates[t](both))
            out[t] = feats[t] + sum(gate * feats[o] for o in TASKS if o != t)
        return out


class RoadMTLNet(nn.Module):
    def __init__(self, config: ModelConfig, backbone: Optional[Backbone] = None):
        super().__init__()
        self.config = config
        w = config.width
        self.backbone = backbone if backbone is not None else Backbone(config.backbone)
        ch = self.backbone.channels
        self.initial = nn.ModuleList([InitialTaskPrediction(i, ch[i], w) for i in range(4)])
        # propagation from scale i to i-1 lives at index i-1
        self.propagation = nn.ModuleList([FeaturePropagation(w) for _ in range(3)])
        self.distillation = nn.ModuleList([MultiModalDistillation(w) for _ in range(4)])
        self.aggregation = nn.ModuleDict({t: AggregationHead([w] * 4, TASK_OUTPUT_CHANNELS[t], w) for t in TASKS})
        self.aux_head = AuxSegHead(ch, w)
        self.sfseg_final = SteeringFeatureSegHead()
        self.sfseg_deep = nn.ModuleList([SteeringFeatureSegHead() for _ in range(4)])
        specs = steering_specs_for(config.target_size, config.compact_steer_width)
        self.steer_heads = nn.ModuleDict({tag: SteeringHead(spec) for tag, spec in specs.items()})

    def initial_task_prediction(self, scale_index, feature, propagated=None) -> InitialPrediction:
        return self.initial[scale_index](feature, propagated)

    def feature_propagation(self, pred: InitialPrediction) -> Dict[str, torch.Tensor]:
        if pred.scale_index < 1:
            raise ContractError("feature propagation is undefined for the finest scale")
        return self.propagation[pred.scale_index - 1](pred)

    def multi_modal_distillation(self, pred: InitialPrediction) -> Dict[str, torch.Tensor]:
        return self.distillation[pred.scale_index](pred)

    def feature_aggregation(self, distilled: List[Dict[str, torch.Tensor]], task: str, output_size) -> torch.Tensor:
        if len(distilled) != 4:
            raise ContractError(f"feature aggregation needs 4 scales, got {len(distilled)}")
        return self.aggregation[task]([d[task] for d in distilled], output_size)

    def decode(self, pyramid: FeaturePyramid, steering: bool) -> ModelOutputs:
        size = pyramid.input_size
        preds: List[Optional[InitialPrediction]] = [None] * 4
        propagated = None
        for i in (3, 2, 1, 0):
            preds[i] = self.initial_task_prediction(i, pyramid[i], propagated)
            if i > 0:
                propagated = self.feature_propagation(preds[i])
        distilled = [self.multi_modal_distillation(p) for p in preds]
        primary = self.feature_aggregation(distilled, "seg", size)
        steer_feature = self.feature_aggregation(distilled, "steer", size)
        for i, p in enumerate(preds):
            p.sfseg_logits = self.sfseg_deep[i](p.steer_feature)
        out = ModelOutputs(
            primary_seg_logits=primary,
            aux_seg_logits=self.aux_head(pyramid.levels, size),
            final_steer_feature=steer_feature,
            sfseg_logits=self.sfseg_final(steer_feature),
            initial=preds,
        )
        if steering:
            out.steer_angle_final = self.steer_heads["full"](steer_feature)
            out.steer_angle_deep = [self.steer_heads[tag](p.steer_feature) for tag, p in zip(DEEP_HEAD_TAGS, preds)]
        return out

    def forward(self, image: torch.Tensor, dataset_kind: str = "source", steering: Optional[bool] = None) -> ModelOutputs:
        """Run the full model on an ``N x 3 x H x W`` batch with values in [0, 1].

        Steering angles are produced for target-kind batches (or when
        ``steering`` is forced on); those must have the configured target size.
        """
        if dataset_kind not in ("source", "target"):
            raise ContractError(f"dataset_kind must be 'source' or 'target', got {dataset_kind!r}")
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if steering is None:
            steering = dataset_kind == "target"
        if steering and tuple(image.shape[-2:]) != self.config.target_size:
            raise ShapeError(
                f"steering heads are built for {self.config.target_size} inputs, got {tuple(image.shape[-2:])}"
            )
        pyramid = extract_pyramid(self.backbone.normalize(image), self.backbone)
        return self.decode(pyramid, steering)


def model_forward(model: RoadMTLNet, image: torch.Tensor, dataset_kind: str = "source") -> ModelOutputs:
    return model(image, dataset_kind)
