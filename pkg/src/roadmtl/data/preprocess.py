"""Preprocessing and augmentation for source (segmentation) and target (steering) images.

Images are float32 ``3 x H x W`` arrays in [0, 1]; masks are uint8 ``1 x H x W``
arrays holding 0 (non-road) or 1 (road). Every geometric operation takes the
mask alongside the image and applies the identical transform to it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import gaussian_filter

from ..errors import DataError

# Mapillary Vistas v1.2 label ids of the drivable classes: plain crosswalk,
# parking, rail track, road, service lane, crosswalk and general lane
# markings, manhole, pothole. Other dataset versions need their own list.
MAPILLARY_V12_DRIVABLE_IDS = (8, 10, 12, 13, 14, 23, 24, 41, 43)
MIN_ROAD_FRACTION = 0.05
SOURCE_SIZE = (768, 1024)


def merge_road_classes(label_mask: np.ndarray, drivable_ids: Sequence[int] = MAPILLARY_V12_DRIVABLE_IDS) -> np.ndarray:
    """Collapse an integer label mask into a binary road mask (uint8 0/1)."""
    labels = np.asarray(label_mask)
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"label mask must be integer typed, got {labels.dtype}")
    if labels.size and labels.min() < 0:
        raise DataError(f"label mask contains negative label {int(labels.min())}")
    return np.isin(labels, np.asarray(drivable_ids)).astype(np.uint8)


def road_fraction(mask: np.ndarray) -> float:
    mask = np.asarray(mask)
    return float(np.count_nonzero(mask)) / mask.size


def filter_by_road_fraction(mask: np.ndarray, min_fraction: float = MIN_ROAD_FRACTION) -> bool:
    """True to keep the sample; samples with strictly less road than ``min_fraction`` are dropped."""
    mask = np.asarray(mask)
    # small slack so exactly 5.0% survives float rounding of the product
    return np.count_nonzero(mask) >= min_fraction * mask.size - 1e-9


def crop_top_quarter(image: np.ndarray, mask: Optional[np.ndarray] = None):
    """Drop the top ``floor(H / 4)`` rows of an image (and its mask)."""
    height = image.shape[-2]
    top = height // 4
    cropped = image[..., top:, :]
    if mask is None:
        return cropped, None
    if mask.shape[-2] != height:
        raise DataError(f"image height {height} and mask height {mask.shape[-2]} differ")
    return cropped, mask[..., top:, :]


def resize_pair(image: np.ndarray, mask: Optional[np.ndarray], size: Tuple[int, int]):
    """Bilinear resize for the image, nearest for the mask."""
    size = tuple(int(s) for s in size)
    if tuple(image.shape[-2:]) == size:
        return image, mask
    img = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).unsqueeze(0)
    down = size[0] < image.shape[-2] or size[1] < image.shape[-1]
    img = F.interpolate(img, size=size, mode="bilinear", align_corners=False, antialias=down)
    out_img = img[0].clamp(0, 1).numpy()
    out_mask = None
    if mask is not None:
        m = torch.from_numpy(np.ascontiguousarray(mask, dtype=np.uint8)).unsqueeze(0).float()
        out_mask = F.interpolate(m, size=size, mode="nearest")[0].numpy().astype(np.uint8)
    return out_img, out_mask


def resize_and_random_crop(
    image: np.ndarray,
    mask: Optional[np.ndarray],
    rng: np.random.Generator,
    target: Tuple[int, int] = SOURCE_SIZE,
    scale_range: Optional[Tuple[float, float]] = (0.8, 1.2),
):
    """Scale to ``target`` times a random factor, then randomly crop ``target``.

    Scaled sizes smaller than the crop are raised to the crop size.
    """
    th, tw = target
    scale = 1.0 if scale_range is None else float(rng.uniform(*scale_range))
    sh, sw = max(th, int(round(th * scale))), max(tw, int(round(tw * scale)))
    image, mask = resize_pair(image, mask, (sh, sw))
    top = int(rng.integers(0, sh - th + 1))
    left = int(rng.integers(0, sw - tw + 1))
    image = image[:, top:top + th, left:left + tw]
    if mask is not None:
        mask = mask[:, top:top + th, left:left + tw]
    return image, mask


def flip_augment(image: np.ndarray, angle: Optional[float], rng: np.random.Generator, p: float = 0.5,
                 mask: Optional[np.ndarray] = None):
    """Mirror horizontally and negate the steering angle with probability ``p``."""
    if rng.random() >= p:
        return image, angle, mask
    image = image[..., ::-1].copy()
    if mask is not None:
        mask = mask[..., ::-1].copy()
    if angle is not None:
        angle = -angle
    return image, angle, mask


@dataclass
class PhotometricConfig:
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    max_blur_sigma: float = 1.0

    @classmethod
    def off(cls):
        return cls(0.0, 0.0, 0.0, 0.0)

    @property
    def is_identity(self) -> bool:
        return not any((self.brightness, self.contrast, self.saturation, self.max_blur_sigma))


def _gray(image):
    return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]


def photometric_augment(image: np.ndarray, rng: np.random.Generator, config: Optional[PhotometricConfig] = None):
    """Brightness/contrast/saturation jitter and a small Gaussian blur, clamped to [0, 1]."""
    config = config or PhotometricConfig()
    if config.is_identity:
        return image
    out = image.astype(np.float32, copy=True)
    if config.brightness:
        out *= rng.uniform(1 - config.brightness, 1 + config.brightness)
    if config.contrast:
        m = _gray(out).mean()
        out = (out - m) * rng.uniform(1 - config.contrast, 1 + config.contrast) + m
    if config.saturation:
        g = _gray(out)[None]
        out = g + (out - g) * rng.uniform(1 - config.saturation, 1 + config.saturation)
    if config.max_blur_sigma:
        sigma = rng.uniform(0.0, config.max_blur_sigma)
        if sigma > 0.05:
            out = gaussian_filter(out, sigma=(0, sigma, sigma), mode="reflect")
    return np.clip(out, 0.0, 1.0).astype(np.float32)
