"""Procedural road scenes with both a road mask and a steering angle.

The road is drawn in a simple perspective: its half-width shrinks linearly to
zero at the horizon and its centre line bends sideways by
``0.5 * curvature * u**2`` where ``u`` is the row distance above the bottom
edge. The steering angle is ``clip(gain * curvature, -1, 1)``. Weather
presets change the colour palette and texture of sky, ground and road, which
is what separates the "source" and "target" domains in the desk experiments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError
from .dataset import Sample

WEATHERS = ("clear", "snow", "gravel")
# road centre may drift at most this fraction of the width by the horizon
MAX_SHIFT_FRACTION = 0.4
HORIZON_RANGE = (0.3, 0.5)
ROAD_WIDTH_RANGE = (0.45, 1.1)  # fraction of image width at the bottom row


@dataclass
class SynthSceneParams:
    curvature: float = 0.0
    road_width: float = 100.0
    horizon: float = 0.4
    noise_level: float = 0.03
    weather: str = "clear"

    def validate(self, size: Tuple[int, int]) -> None:
        if self.road_width <= 0:
            raise ContractError(f"road width must be positive, got {self.road_width}")
        if not 0.0 < self.horizon < 1.0:
            raise ContractError(f"horizon must be a row fraction in (0, 1), got {self.horizon}")
        if self.weather not in WEATHERS:
            raise ContractError(f"unknown weather {self.weather!r}")
        if self.noise_level < 0:
            raise ContractError("noise level must be non-negative")
        if abs(self.curvature) > curvature_limit(size, self.horizon) * (1 + 1e-9):
            raise ContractError(f"curvature {self.curvature} would push the road out of frame")


def _rows_to_horizon(size, horizon):
    height = size[0]
    return height - 1 - int(horizon * height)


def curvature_limit(size: Tuple[int, int], horizon: float) -> float:
    """Largest |curvature| that keeps the road centre inside the frame."""
    u = max(_rows_to_horizon(size, horizon), 1)
    return 2.0 * MAX_SHIFT_FRACTION * size[1] / u ** 2


def steering_gain(size: Tuple[int, int]) -> float:
    """Gain mapping curvature to a normalised angle; depends only on the image size."""
    return 1.0 / curvature_limit(size, HORIZON_RANGE[1])


def steering_angle(curvature: float, size: Tuple[int, int]) -> float:
    return float(np.clip(steering_gain(size) * curvature, -1.0, 1.0))


def render_road_mask(params: SynthSceneParams, size: Tuple[int, int]) -> np.ndarray:
    height, width = size
    hr = int(params.horizon * height)
    u_max = max(height - 1 - hr, 1)
    y = np.arange(height, dtype=np.float64)[:, None]
    x = np.arange(width, dtype=np.float64)[None, :]
    u = (height - 1) - y
    depth = np.clip((y - hr) / u_max, 0.0, 1.0)  # 1 at the bottom row, 0 at the horizon
    centre = (width - 1) / 2.0 + 0.5 * params.curvature * u ** 2
    half = 0.5 * params.road_width * depth
    mask = (np.abs(x - centre) <= half) & (y > hr)
    return mask.astype(np.uint8)[None]


_PALETTES = {
    # sky, ground, road, marking
    "clear": ((0.45, 0.65, 0.95), (0.25, 0.55, 0.2), (0.3, 0.3, 0.32), (0.95, 0.95, 0.9)),
    "snow": ((0.78, 0.8, 0.84), (0.92, 0.93, 0.95), (0.68, 0.68, 0.7), (0.5, 0.5, 0.52)),
    "gravel": ((0.6, 0.7, 0.85), (0.3, 0.45, 0.2), (0.62, 0.52, 0.38), (0.5, 0.42, 0.3)),
}


def _smooth_noise(rng, size, scale):
    """Low-frequency noise by upsampling a coarse random grid."""
    h, w = size
    gh, gw = max(2, h // scale + 2), max(2, w // scale + 2)
    grid = rng.standard_normal((gh, gw))
    ys = np.linspace(0, gh - 1.001, h)
    xs = np.linspace(0, gw - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx + g10 * fy * (1 - fx) + g11 * fy * fx)


def render_scene(params: SynthSceneParams, size: Tuple[int, int], rng: np.random.Generator):
    """Return ``(image, mask)`` for the given scene parameters."""
    params.validate(size)
    height, width = size
    mask = render_road_mask(params, size)
    sky_c, ground_c, road_c, mark_c = (np.array(c) for c in _PALETTES[params.weather])
    jitter = lambda c: np.clip(c + rng.normal(0, 0.06, 3), 0, 1)  # noqa: E731
    sky_c, ground_c, road_c, mark_c = jitter(sky_c), jitter(ground_c), jitter(road_c), jitter(mark_c)

    hr = int(params.horizon * height)
    y = np.arange(height)[:, None]
    img = np.empty((3, height, width), dtype=np.float64)
    tex = 0.08 * _smooth_noise(rng, size, 8) + 0.04 * _smooth_noise(rng, size, 3)
    sky_grad = np.clip((hr - y) / max(hr, 1), 0, 1) * 0.15
    for c in range(3):
        ground = ground_c[c] + tex
        sky = sky_c[c] + sky_grad + 0.02 * tex
        img[c] = np.where(y <= hr, sky, ground)

    road = mask[0].astype(bool)
    road_tex = 0.05 * _smooth_noise(rng, size, 5)
    for c in range(3):
        img[c][road] = road_c[c] + road_tex[road]

    # centre line (clear/gravel: dashed marking; snow: darker wheel tracks)
    u = (height - 1) - y.astype(np.float64)
    centre = (width - 1) / 2.0 + 0.5 * params.curvature * u ** 2
    depth = np.clip((y - hr) / max(height - 1 - hr, 1), 0, 1)
    half = 0.5 * params.road_width * depth
    x = np.arange(width)[None, :]
    if params.weather == "snow":
        offsets, line_w = (-0.45, 0.45), 0.12
        dashed = np.ones_like(depth, dtype=bool)
    else:
        offsets, line_w = (0.0,), 0.03
        phase = rng.uniform(0, 2 * np.pi)
        dashed = np.sin(12.0 / np.maximum(depth, 0.05) + phase) > 0
    for off in offsets:
        line = (np.abs(x - (centre + off * half)) <= np.maximum(line_w * half, 0.5)) & road & dashed
        for c in range(3):
            img[c][line] = mark_c[c]

    img += rng.normal(0.0, params.noise_level, img.shape)
    return np.clip(img, 0, 1).astype(np.float32), mask


def sample_scene_params(rng: np.random.Generator, size: Tuple[int, int], weather: str = "clear",
                        noise_level: float = 0.03) -> SynthSceneParams:
    horizon = float(rng.uniform(*HORIZON_RANGE))
    limit = curvature_limit(size, horizon)
    curvature = float(rng.uniform(-1.0, 1.0)) * limit
    road_width = float(rng.uniform(*ROAD_WIDTH_RANGE)) * size[1]
    return SynthSceneParams(curvature, road_width, horizon, noise_level, weather)


def generate_synth_scene(params: SynthSceneParams, rng: np.random.Generator, size: Tuple[int, int] = (320, 1216),
                         kind: str = "target", sample_id: str = "synth") -> Sample:
    """Render one scene as a Sample carrying both the road mask and the steering angle.

    Source-kind samples drop the angle, as source data never carries one.
    """
    image, mask = render_scene(params, size, rng)
    angle = steering_angle(params.curvature, size)
    return Sample(image=image, kind=kind, id=sample_id, road_mask=mask,
                  steer_angle=None if kind == "source" else angle)


def pick_weather(rng: np.random.Generator, weathers: Sequence[str], probs: Optional[Sequence[float]] = None) -> str:
    return str(rng.choice(list(weathers), p=probs))
