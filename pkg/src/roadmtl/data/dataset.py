"""On-disk dataset layout, manifests and deterministic batching.

Layout under a dataset root::

    images/<id>.png      RGB image
    masks/<id>.png       8-bit grayscale, 0 = non-road, 255 = road (optional)
    train.tsv, val.tsv, test.tsv

A manifest starts with a ``#max_angle<TAB><value>`` line followed by a header
``id  image  mask  angle  timestamp``; empty fields mean "absent". Angles are
stored raw and divided by ``max_angle`` when loaded.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Sequence

import numpy as np
from PIL import Image

from ..errors import ContractError, DataError

SPLITS = ("train", "val", "test")
COLUMNS = ("id", "image", "mask", "angle", "timestamp")


@dataclass
class Sample:
    image: np.ndarray
    kind: str
    id: str
    road_mask: Optional[np.ndarray] = None
    steer_angle: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("source", "target"):
            raise ContractError(f"sample kind must be 'source' or 'target', got {self.kind!r}")
        if self.kind == "source":
            if self.road_mask is None:
                raise ContractError(f"source sample {self.id!r} has no road mask")
            if self.steer_angle is not None:
                raise ContractError(f"source sample {self.id!r} carries a steering angle")
        elif self.steer_angle is None and self.road_mask is None:
            raise ContractError(f"target sample {self.id!r} has neither angle nor mask")


@dataclass
class ManifestEntry:
    id: str
    image: str
    mask: Optional[str] = None
    angle: Optional[float] = None
    timestamp: Optional[float] = None


@dataclass
class DatasetManifest:
    root: Path
    entries: List[ManifestEntry] = field(default_factory=list)
    split: str = "train"
    max_angle: float = 1.0

    def __len__(self):
        return len(self.entries)

    @property
    def annotated(self) -> bool:
        return bool(self.entries) and all(e.mask is not None for e in self.entries)


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_manifest(manifest: DatasetManifest, path=None) -> Path:
    path = Path(path) if path is not None else Path(manifest.root) / f"{manifest.split}.tsv"
    lines = [f"#max_angle\t{manifest.max_angle!r}", "\t".join(COLUMNS)]
    for e in manifest.entries:
        lines.append("\t".join(_fmt(v) for v in (e.id, e.image, e.mask, e.angle, e.timestamp)))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    split = path.stem if path.stem in SPLITS else "train"
    max_angle = 1.0
    entries = []
    header_seen = False
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("\t")
            if key == "max_angle":
                max_angle = float(value)
            continue
        cols = line.split("\t")
        if not header_seen:
            if tuple(cols) != COLUMNS:
                raise DataError(f"{path}: expected header {COLUMNS}, got {tuple(cols)}")
            header_seen = True
            continue
        if len(cols) != len(COLUMNS):
            raise DataError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(cols)}")
        sid, image, mask, angle, ts = cols
        angle_v = float(angle) if angle else None
        if angle_v is not None and not math.isfinite(angle_v):
            raise DataError(f"{path}:{lineno}: steering angle for {sid!r} is not finite")
        entries.append(ManifestEntry(sid, image, mask or None, angle_v, float(ts) if ts else None))
    if not math.isfinite(max_angle) or max_angle <= 0:
        raise DataError(f"{path}: max_angle must be a positive finite number")
    manifest = DatasetManifest(path.parent, entries, split, max_angle)
    if check_files:
        missing = [e.id for e in entries if not (manifest.root / e.image).is_file()
                   or (e.mask is not None and not (manifest.root / e.mask).is_file())]
        if missing:
            raise DataError(f"{path}: missing files for ids {', '.join(missing)}")
    return manifest


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)


def read_mask(path) -> np.ndarray:
    """Binary mask from an 8-bit grayscale PNG, thresholded at > 127."""
    with Image.open(path) as im:
        if im.mode not in ("L", "1", "P"):
            raise DataError(f"mask {path} is not a grayscale image (mode {im.mode})")
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)[None]


def write_mask(path, mask: np.ndarray) -> None:
    arr = (np.asarray(mask).reshape(mask.shape[-2:]) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, "L").save(path)


def load_sample(manifest: DatasetManifest, entry: ManifestEntry, kind: str) -> Sample:
    image = read_image(manifest.root / entry.image)
    mask = read_mask(manifest.root / entry.mask) if entry.mask else None
    angle = None if entry.angle is None else entry.angle / manifest.max_angle
    if kind == "source":
        angle = None
    return Sample(image=image, kind=kind, id=entry.id, road_mask=mask, steer_angle=angle)


class SampleStore:
    """Loads (and optionally caches) the samples of one manifest."""

    def __init__(self, manifest: DatasetManifest, kind: str, cache: bool = True):
        self.manifest = manifest
        self.kind = kind
        self.cache = cache
        self._cache = {}
        self.access_count = 0

    def __len__(self):
        return len(self.manifest)

    def __getitem__(self, index: int) -> Sample:
        self.access_count += 1
        if index in self._cache:
            return self._cache[index]
        sample = load_sample(self.manifest, self.manifest.entries[index], self.kind)
        if self.cache:
            self._cache[index] = sample
        return sample


@lru_cache(maxsize=16)
def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    perm.flags.writeable = False
    return perm


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> List[int]:
    """Indices of batch ``step`` in a stream of per-epoch shuffles (no replacement within an epoch).

    A pure function of its arguments, so a resumed run reproduces the
    original batch sequence exactly.
    """
    if n == 0:
        return []
    out = []
    for pos in range(step * batch_size, (step + 1) * batch_size):
        epoch, offset = divmod(pos, n)
        out.append(int(epoch_permutation(n, seed, epoch)[offset]))
    return out


def batch_iterator(manifest: DatasetManifest, batch_size: int, seed: int, start_step: int = 0,
                   num_batches: Optional[int] = None) -> Iterator[List[ManifestEntry]]:
    """Stream of entry batches; an empty manifest yields nothing."""
    if batch_size <= 0:
        raise ContractError("batch size must be positive")
    n = len(manifest)
    if n == 0:
        return
    step = start_step
    while num_batches is None or step < start_step + num_batches:
        yield [manifest.entries[i] for i in batch_indices(n, batch_size, seed, step)]
        step += 1


def sample_rng(seed: int, stream: int, step: int, index: int) -> np.random.Generator:
    """Independent random stream for one sample position of one batch."""
    return np.random.default_rng([seed, stream, step, index])


def load_batch(store: SampleStore, indices: Sequence[int], transform: Callable[[Sample, np.random.Generator], Sample],
               seed: int, stream: int, step: int, workers: int = 0) -> List[Sample]:
    """Load and augment a batch; worker threads do not affect the result order or values."""
    def one(j_idx):
        j, idx = j_idx
        return transform(store[idx], sample_rng(seed, stream, step, j))

    items = list(enumerate(indices))
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]
