"""Task heads: steering heads, steering-feature segmentation heads, auxiliary segmentation.

The five steering heads reduce a 4-channel steering feature to a scalar
angle. At the 320x1216 target resolution their layer stacks are fixed
exactly (no padding, floor division everywhere); for any other target
resolution a compact head with the same 25-unit linear tail is generated.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError, ShapeError

STEER_CHANNELS = 4
SCALE_TAGS = ("full", "s4", "s8", "s16", "s32")
# scale index of the initial prediction each deep steering head consumes
DEEP_HEAD_TAGS = ("s4", "s8", "s16", "s32")
DEFAULT_TARGET_SIZE = (320, 1216)


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | bn | relu | maxpool | avgpool_to | flatten | linear
    out_shape: Tuple[int, ...]
    kernel: Optional[Tuple[int, int]] = None
    stride: Optional[Tuple[int, int]] = None
    padding: Tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class SteeringHeadSpec:
    scale_tag: str
    expected_input: Tuple[int, int, int]
    layer_trace: Tuple[LayerSpec, ...]

    @property
    def flatten_size(self) -> int:
        return next(l.out_shape[0] for l in self.layer_trace if l.kind == "flatten")


def conv_out(n: int, kernel: int, stride: int, padding: int = 0) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def build_trace(input_shape, blocks, width=64, hidden=25, padding=0) -> Tuple[LayerSpec, ...]:
    """Expand a compact block list into the full per-layer output-shape trace.

    ``blocks`` holds ``("conv", kernel, stride)``, ``("pool", kernel, stride)``
    or ``("avgpool_to", (h, w))`` entries. Every conv becomes Conv -> BN -> ReLU.
    """
    c, h, w = input_shape
    pad = _pair(padding)
    trace = []
    for block in blocks:
        kind = block[0]
        if kind == "conv":
            k, s = _pair(block[1]), _pair(block[2])
            c = width
            h, w = conv_out(h, k[0], s[0], pad[0]), conv_out(w, k[1], s[1], pad[1])
            if h < 1 or w < 1:
                raise ShapeError(f"steering head input {input_shape} too small for conv {k}")
            trace.append(LayerSpec("conv", (c, h, w), k, s, pad))
            trace.append(LayerSpec("bn", (c, h, w)))
            trace.append(LayerSpec("relu", (c, h, w)))
        elif kind == "pool":
            k, s = _pair(block[1]), _pair(block[2])
            h, w = conv_out(h, k[0], s[0]), conv_out(w, k[1], s[1])
            if h < 1 or w < 1:
                raise ShapeError(f"steering head input {input_shape} too small for pool {k}")
            trace.append(LayerSpec("maxpool", (c, h, w), k, s))
        elif kind == "avgpool_to":
            h, w = block[1]
            trace.append(LayerSpec("avgpool_to", (c, h, w)))
        else:
            raise ValueError(f"unknown block kind {kind!r}")
    trace.append(LayerSpec("flatten", (c * h * w,)))
    trace.append(LayerSpec("linear", (hidden,)))
    trace.append(LayerSpec("relu", (hidden,)))
    trace.append(LayerSpec("linear", (1,)))
    return tuple(trace)


# Block layouts at the 320x1216 target resolution. Pool strides equal the
# kernel; the 2x3 pool uses stride (2, 3).
_FIXED_BLOCKS = {
    "full": ((4, 320, 1216), [("conv", 5, 2), ("pool", 3, 3), ("conv", 5, 2), ("pool", 2, 2),
                              ("conv", 3, 1), ("pool", 2, 2), ("conv", 3, 1), ("conv", 3, 1)]),
    "s4": ((4, 80, 304), [("conv", 5, 2), ("pool", 2, 2), ("conv", 5, 2), ("pool", 2, 2),
                          ("conv", 3, 1), ("conv", (2, 3), 1)]),
    "s8": ((4, 40, 152), [("conv", 5, 2), ("pool", (2, 3), (2, 3)), ("conv", 3, 1), ("conv", 3, 1),
                          ("conv", 3, 1), ("conv", 3, 1)]),
    "s16": ((4, 20, 76), [("conv", 5, 2), ("conv", 3, 1), ("conv", 3, 1), ("conv", 3, 1),
                          ("conv", (2, 3), 1)]),
    "s32": ((4, 10, 38), [("conv", 3, 1), ("conv", 3, 1), ("conv", 3, 1), ("conv", 3, 1),
                          ("conv", (2, 3), 1)]),
}


def fixed_steering_spec(tag: str) -> SteeringHeadSpec:
    shape, blocks = _FIXED_BLOCKS[tag]
    return SteeringHeadSpec(tag, shape, build_trace(shape, blocks))


def compact_steering_spec(tag: str, input_hw: Tuple[int, int], width: int = 16) -> SteeringHeadSpec:
    """Small head for non-default target sizes: one padded conv then a fixed 2x4 pool."""
    shape = (STEER_CHANNELS,) + tuple(input_hw)
    blocks = [("conv", 3, 1), ("avgpool_to", (2, 4))]
    return SteeringHeadSpec(tag, shape, build_trace(shape, blocks, width=width, padding=1))


def steering_specs_for(target_size: Tuple[int, int], compact_width: int = 16) -> Dict[str, SteeringHeadSpec]:
    """Head specs for every scale tag given the target image size."""
    target_size = tuple(target_size)
    if target_size == DEFAULT_TARGET_SIZE:
        return {tag: fixed_steering_spec(tag) for tag in SCALE_TAGS}
    h, w = target_size
    sizes = {"full": (h, w), "s4": (h // 4, w // 4), "s8": (h // 8, w // 8),
             "s16": (h // 16, w // 16), "s32": (h // 32, w // 32)}
    return {tag: compact_steering_spec(tag, sizes[tag], compact_width) for tag in SCALE_TAGS}


class SteeringHead(nn.Module):
    """Reduces a ``N x 4 x h x w`` steering feature to ``N`` angles."""

    def __init__(self, spec: SteeringHeadSpec):
        super().__init__()
        self.spec = spec
        layers = []
        cin = spec.expected_input[0]
        for layer in spec.layer_trace:
            if layer.kind == "conv":
                layers.append(nn.Conv2d(cin, layer.out_shape[0], layer.kernel, layer.stride, layer.padding))
                cin = layer.out_shape[0]
            elif layer.kind == "bn":
                layers.append(nn.BatchNorm2d(cin))
            elif layer.kind == "relu":
                layers.append(nn.ReLU())
            elif layer.kind == "maxpool":
                layers.append(nn.MaxPool2d(layer.kernel, layer.stride))
            elif layer.kind == "avgpool_to":
                layers.append(nn.AdaptiveAvgPool2d(layer.out_shape[1:]))
            elif layer.kind == "flatten":
                layers.append(nn.Flatten())
                cin = layer.out_shape[0]
            elif layer.kind == "linear":
                layers.append(nn.Linear(cin, layer.out_shape[0]))
                cin = layer.out_shape[0]
        self.layers = nn.Sequential(*layers)

    def check_input(self, x: torch.Tensor) -> None:
        if tuple(x.shape[1:]) != self.spec.expected_input:
            raise ShapeError(
                f"steering head {self.spec.scale_tag!r} expects input {self.spec.expected_input}, "
                f"got {tuple(x.shape[1:])}"
            )

    def trace(self, x: torch.Tensor) -> List[Tuple[int, ...]]:
        """Per-layer output shapes (without the batch dimension)."""
        self.check_input(x)
        shapes = []
        for layer in self.layers:
            x = layer(x)
            shapes.append(tuple(x.shape[1:]))
        return shapes

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.layers(x).squeeze(1)


class SteeringFeatureSegHead(nn.Module):
    """Conv3x3(4->4) -> BN -> ReLU -> Conv3x3(4->1), size-preserving."""

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(STEER_CHANNELS, STEER_CHANNELS, 3, padding=1)
        self.bn = nn.BatchNorm2d(STEER_CHANNELS)
        self.conv2 = nn.Conv2d(STEER_CHANNELS, 1, 3, padding=1)

    def forward(self, steer_feature: torch.Tensor) -> torch.Tensor:
        if steer_feature.dim() != 4 or steer_feature.shape[1] != STEER_CHANNELS:
            raise ShapeError(
                f"steering feature segmentation head needs {STEER_CHANNELS} input channels, "
                f"got shape {tuple(steer_feature.shape)}"
            )
        return self.conv2(F.relu(self.bn(self.conv1(steer_feature))))


class AggregationHead(nn.Module):
    """Upsamples coarser inputs to the finest one, concatenates and projects.

    Used both as the task-interaction network's feature aggregation and,
    over backbone levels 0-2, as the auxiliary segmentation head.
    """

    def __init__(self, in_channels: Sequence[int], out_channels: int, width: int = 64):
        super().__init__()
        self.in_channels = list(in_channels)
        self.fuse = nn.Sequential(
            nn.Conv2d(sum(in_channels), width, 3, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
        )
        self.project = nn.Conv2d(width, out_channels, 1)

    def forward(self, features: Sequence[torch.Tensor], output_size: Tuple[int, int]) -> torch.Tensor:
        if len(features) != len(self.in_channels) or any(f is None for f in features):
            raise ContractError(
                f"aggregation needs {len(self.in_channels)} feature maps, got "
                f"{sum(f is not None for f in features)}"
            )
        size = features[0].shape[-2:]
        ups = [features[0]] + [
            F.interpolate(f, size=size, mode="bilinear", align_corners=False) for f in features[1:]
        ]
        out = self.project(self.fuse(torch.cat(ups, dim=1)))
        return F.interpolate(out, size=tuple(output_size), mode="bilinear", align_corners=False)


class AuxSegHead(nn.Module):
    """Auxiliary road segmentation from the three finest backbone levels."""

    def __init__(self, backbone_channels: Sequence[int], width: int = 64):
        super().__init__()
        self.agg = AggregationHead(list(backbone_channels)[:3], 1, width)

    def forward(self, levels: Sequence[torch.Tensor], output_size: Tuple[int, int]) -> torch.Tensor:
        if len(levels) < 3:
            raise ContractError(f"auxiliary segmentation head needs 3 pyramid levels, got {len(levels)}")
        return self.agg(list(levels)[:3], output_size)
