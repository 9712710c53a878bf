"""Overlay rendering for steering features and segmentation masks."""
from __future__ import annotations

import numpy as np

RED = np.array([1.0, 0.0, 0.0])
BLUE = np.array([0.0, 0.0, 1.0])
GREEN = np.array([0.0, 1.0, 0.0])
OVERLAY_ALPHA = 0.5


def feature_overlay(image: np.ndarray, feature: np.ndarray) -> np.ndarray:
    """Red for positive, blue for negative values, scaled by max |value| of this map.

    ``image`` is ``H x W x 3`` in [0, 1]. An all-zero map leaves the image untouched.
    """
    feature = np.asarray(feature, dtype=np.float64)
    peak = np.abs(feature).max() if feature.size else 0.0
    if peak == 0:
        return image.copy()
    v = feature / peak
    pos = np.clip(v, 0, None)[..., None] * OVERLAY_ALPHA
    neg = np.clip(-v, 0, None)[..., None] * OVERLAY_ALPHA
    out = image * (1 - pos - neg) + RED * pos + BLUE * neg
    return np.clip(out, 0, 1)


def mask_overlay(image: np.ndarray, mask: np.ndarray, color=GREEN) -> np.ndarray:
    a = np.asarray(mask, dtype=bool)[..., None] * OVERLAY_ALPHA
    return np.clip(image * (1 - a) + np.asarray(color) * a, 0, 1)


def steer_feature_panel(image_chw: np.ndarray, steer_feature: np.ndarray) -> np.ndarray:
    """Original image followed by one overlay per steering-feature channel."""
    img = np.asarray(image_chw).transpose(1, 2, 0)
    tiles = [img] + [feature_overlay(img, ch) for ch in steer_feature]
    return np.concatenate(tiles, axis=1)


def segmentation_panel(image_chw: np.ndarray, pred_mask: np.ndarray, gt_mask=None) -> np.ndarray:
    img = np.asarray(image_chw).transpose(1, 2, 0)
    tiles = [img]
    if gt_mask is not None:
        tiles.append(mask_overlay(img, gt_mask))
    tiles.append(mask_overlay(img, pred_mask))
    return np.concatenate(tiles, axis=1)


def to_uint8(panel: np.ndarray) -> np.ndarray:
    return np.clip(np.round(panel * 255.0), 0, 255).astype(np.uint8)
