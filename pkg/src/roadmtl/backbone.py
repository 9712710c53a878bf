"""Multi-scale feature extractors.

Any backbone used by the task-interaction network must return four feature
maps at 1/4, 1/8, 1/16 and 1/32 of the input resolution. ``reference_tiny`` is
a small randomly initialised CNN that keeps every test runnable on a laptop;
``pyramid_128`` is a ResNet-18 with a 128-channel FPN on top.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError

BACKBONE_KINDS = ("reference_tiny", "pyramid_128", "custom")


@dataclass
class BackboneConfig:
    kind: str = "reference_tiny"
    channels: List[int] = field(default_factory=lambda: [16, 16, 16, 16])
    weights_path: Optional[str] = None
    mean: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: Tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigError(f"unknown backbone kind {self.kind!r}; expected one of {BACKBONE_KINDS}")
        self.channels = [int(c) for c in self.channels]
        if len(self.channels) != 4:
            raise ConfigError(f"backbone needs exactly 4 channel counts, got {len(self.channels)}")
        if any(c <= 0 for c in self.channels):
            raise ConfigError(f"backbone channel counts must be positive, got {self.channels}")
        if self.kind == "pyramid_128" and self.channels != [128] * 4:
            raise ConfigError("pyramid_128 backbone has 128 channels on every level")
        self.mean = tuple(float(m) for m in self.mean)
        self.std = tuple(float(s) for s in self.std)


@dataclass
class FeaturePyramid:
    levels: List[torch.Tensor]
    input_size: Tuple[int, int]

    @property
    def channels(self) -> List[int]:
        return [lvl.shape[1] for lvl in self.levels]

    @property
    def sizes(self) -> List[Tuple[int, int]]:
        return [tuple(lvl.shape[-2:]) for lvl in self.levels]

    def __getitem__(self, i):
        return self.levels[i]

    def __len__(self):
        return len(self.levels)


def pyramid_sizes(height: int, width: int) -> List[Tuple[int, int]]:
    """Spatial sizes of the four pyramid levels for an ``height`` x ``width`` input."""
    h0, w0 = height // 4, width // 4
    return [(h0 // 2 ** i, w0 // 2 ** i) for i in range(4)]


def check_input_size(height: int, width: int) -> None:
    for name, n in (("height", height), ("width", width)):
        if n % 32 != 0:
            raise ShapeError(f"input {name} {n} is not divisible by 32")


def _conv_bn_relu(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class TinyBackbone(nn.Module):
    """Stride-2 stem followed by four stride-2 stages (1/4 ... 1/32)."""

    def __init__(self, channels: Sequence[int]):
        super().__init__()
        stem = max(8, channels[0] // 2)
        self.stem = _conv_bn_relu(3, stem, stride=2)
        stages = []
        cin = stem
        for cout in channels:
            stages.append(nn.Sequential(_conv_bn_relu(cin, cout, stride=2), _conv_bn_relu(cout, cout)))
            cin = cout
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        x = self.stem(x)
        out = []
        for stage in self.stages:
            x = stage(x)
            out.append(x)
        return out


class ResNetFPN(nn.Module):
    """ResNet-18 body with a 128-channel feature pyramid (randomly initialised)."""

    def __init__(self, out_channels: int = 128):
        super().__init__()
        from torchvision.models import resnet18
        from torchvision.ops import FeaturePyramidNetwork

        body = resnet18(weights=None)
        self.stem = nn.Sequential(body.conv1, body.bn1, body.relu, body.maxpool)
        self.layers = nn.ModuleList([body.layer1, body.layer2, body.layer3, body.layer4])
        self.fpn = FeaturePyramidNetwork([64, 128, 256, 512], out_channels)

    def forward(self, x):
        x = self.stem(x)
        feats = {}
        for i, layer in enumerate(self.layers):
            x = layer(x)
            feats[str(i)] = x
        return list(self.fpn(feats).values())


class Backbone(nn.Module):
    """Wraps a feature extractor and enforces the pyramid contract."""

    def __init__(self, config: BackboneConfig, body: Optional[nn.Module] = None):
        super().__init__()
        self.config = config
        if body is not None:
            self.body = body
        elif config.kind == "reference_tiny":
            self.body = TinyBackbone(config.channels)
        elif config.kind == "pyramid_128":
            self.body = ResNetFPN(128)
        else:
            raise ConfigError("custom backbone kind requires an explicit body module")
        self.register_buffer("mean", torch.tensor(config.mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(config.std).view(1, 3, 1, 1))
        if config.weights_path:
            path = Path(config.weights_path)
            if not path.is_file():
                raise ConfigError(f"backbone weights file not found: {path}")
            state = torch.load(path, map_location="cpu", weights_only=True)
            self.body.load_state_dict(state)

    @property
    def channels(self) -> List[int]:
        return list(self.config.channels)

    def normalize(self, image: torch.Tensor) -> torch.Tensor:
        return (image - self.mean.to(image.dtype)) / self.std.to(image.dtype)

    def forward(self, image: torch.Tensor) -> FeaturePyramid:
        """Extract the pyramid from an already-normalised ``N x 3 x H x W`` batch."""
        return extract_pyramid(image, self)


def extract_pyramid(image: torch.Tensor, backbone: Backbone) -> FeaturePyramid:
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4 or image.shape[1] != 3:
        raise ShapeError(f"expected an N x 3 x H x W image batch, got {tuple(image.shape)}")
    height, width = image.shape[-2:]
    check_input_size(height, width)
    levels = list(backbone.body(image))
    if len(levels) != 4:
        raise ShapeError(f"backbone returned {len(levels)} levels, expected 4")
    expected = pyramid_sizes(height, width)
    for i, (lvl, size) in enumerate(zip(levels, expected)):
        if tuple(lvl.shape[-2:]) != size:
            raise ShapeError(f"pyramid level {i} has size {tuple(lvl.shape[-2:])}, expected {size}")
        if lvl.shape[1] != backbone.config.channels[i]:
            raise ConfigError(
                f"pyramid level {i} has {lvl.shape[1]} channels but the config declares "
                f"{backbone.config.channels[i]}"
            )
    return FeaturePyramid(levels=levels, input_size=(height, width))
