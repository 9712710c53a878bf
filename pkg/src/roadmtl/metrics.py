"""Road-area segmentation metrics: per-sample IoU, precision and recall.

mIoU is the unweighted mean of per-sample road IoU over the evaluation set,
not a dataset-pooled IoU.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, List, Tuple

import numpy as np

from .errors import DataError, ShapeError


def _as_bool(pred_mask, gt_mask):
    pred = np.asarray(pred_mask).astype(bool)
    gt = np.asarray(gt_mask).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def confusion_counts(pred_mask, gt_mask) -> Tuple[int, int, int]:
    pred, gt = _as_bool(pred_mask, gt_mask)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return tp, fp, fn


def road_iou(pred_mask, gt_mask) -> float:
    """IoU of the road class; 1.0 when both masks are empty."""
    tp, fp, fn = confusion_counts(pred_mask, gt_mask)
    union = tp + fp + fn
    return 1.0 if union == 0 else tp / union


def precision_recall(pred_mask, gt_mask) -> Tuple[float, float]:
    tp, fp, fn = confusion_counts(pred_mask, gt_mask)
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return precision, recall


@dataclass
class EvalReport:
    miou: float
    precision: float
    recall: float
    per_sample: List[Tuple[str, float, float, float]] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return len(self.per_sample)

    @classmethod
    def from_samples(cls, per_sample):
        per_sample = list(per_sample)
        if not per_sample:
            raise DataError("cannot build an evaluation report from zero samples")
        arr = np.array([row[1:] for row in per_sample], dtype=np.float64)
        miou, precision, recall = arr.mean(axis=0)
        return cls(float(miou), float(precision), float(recall), per_sample)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("id\tiou\tprecision\trecall\n")
        for sid, iou, p, r in self.per_sample:
            buf.write(f"{sid}\t{iou!r}\t{p!r}\t{r!r}\n")
        buf.write(f"# mean\t{self.miou!r}\t{self.precision!r}\t{self.recall!r}\n")
        buf.write(f"# n_samples\t{self.n_samples}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        rows = []
        for line in text.splitlines()[1:]:
            if not line or line.startswith("#"):
                continue
            sid, iou, p, r = line.split("\t")
            rows.append((sid, float(iou), float(p), float(r)))
        return cls.from_samples(rows)


def evaluate_masks(pairs: Iterable[Tuple[str, np.ndarray, np.ndarray]]) -> EvalReport:
    """Build a report from ``(id, predicted_mask, gt_mask)`` triples."""
    rows = []
    for sid, pred, gt in pairs:
        if gt is None:
            raise DataError(f"sample {sid!r} has no road annotation")
        p, r = precision_recall(pred, gt)
        rows.append((sid, road_iou(pred, gt), p, r))
    return EvalReport.from_samples(rows)


def predict_road(model, images, threshold: float = 0.5) -> np.ndarray:
    """Boolean road masks (N x H x W) from the model's primary segmentation."""
    import torch

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(images, "source", steering=False)
            prob = torch.sigmoid(out.primary_seg_logits)[:, 0]
    finally:
        model.train(was_training)
    return (prob > threshold).numpy()


def evaluate_set(model, samples, batch_size: int = 8, threshold: float = 0.5) -> EvalReport:
    """Per-sample metrics of the primary segmentation over annotated samples.

    ``samples`` is any sequence of samples, or a dataset manifest.
    """
    import torch

    from .data.dataset import DatasetManifest, SampleStore

    if isinstance(samples, DatasetManifest):
        samples = SampleStore(samples, "target")
    triples = []
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in range(start, min(start + batch_size, len(samples)))]
        for s in chunk:
            if s.road_mask is None:
                raise DataError(f"sample {s.id!r} has no road annotation")
        images = torch.from_numpy(np.stack([s.image for s in chunk])).float()
        preds = predict_road(model, images, threshold)
        triples.extend((s.id, p, s.road_mask[0]) for s, p in zip(chunk, preds))
    return evaluate_masks(triples)
