"""Dataset loading: MNIST IDX files and class-per-folder image corpora."""
from __future__ import annotations

import gzip
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import DatasetLayoutError, IDXFormatError, IDXLengthError, ImageDecodeError, StratificationError

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")
CRACK_CLASSES = {"Negative": 0, "Positive": 1}
MAX_SKIP_FRACTION = 0.10


@dataclass(frozen=True, eq=False)
class Sample:
    image: np.ndarray  # [1, H, W] in [0, 1]
    label: int
    source: int = -1  # index in the originating file/listing

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 3 or img.shape[0] != 1:
            raise ValueError(f"sample image must be [1, H, W], got {img.shape}")
        if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("sample pixels must be finite and within [0, 1]")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        img.flags.writeable = False
        object.__setattr__(self, "image", img)


@dataclass
class DatasetSplit:
    train: list[Sample]
    validation: list[Sample]
    seed: int = 0
    meta: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        overlap = {s.source for s in self.train} & {s.source for s in self.validation} - {-1}
        if overlap:
            raise StratificationError(f"{len(overlap)} source indices appear in both splits")
        for name, part in (("train", self.train), ("validation", self.validation)):
            if {s.label for s in part} != {0, 1}:
                raise StratificationError(f"{name} split must contain both classes")


def stack(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Samples -> (images [N, 1, H, W], labels [N])."""
    return np.stack([s.image for s in samples]), np.array([s.label for s in samples], dtype=np.int64)


# --- IDX ---------------------------------------------------------------------------

def _read_bytes(path: str | os.PathLike) -> bytes:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def read_idx_images(path: str | os.PathLike) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 16:
        raise IDXLengthError(f"{path}: header truncated")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IDXFormatError(f"{path}: bad image magic 0x{magic:08X}")
    expected = 16 + count * rows * cols
    if len(data) < expected:
        raise IDXLengthError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows, cols)


def read_idx_labels(path: str | os.PathLike) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 8:
        raise IDXLengthError(f"{path}: header truncated")
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IDXFormatError(f"{path}: bad label magic 0x{magic:08X}")
    if len(data) < 8 + count:
        raise IDXLengthError(f"{path}: expected {8 + count} bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8)


def write_idx_images(path: str | os.PathLike, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    payload = struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def write_idx_labels(path: str | os.PathLike, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    payload = struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def _balanced_order(labels: np.ndarray, rng: np.random.Generator) -> list[int]:
    """Shuffle each class, then interleave them so every prefix is balanced."""
    per_class = [list(rng.permutation(np.flatnonzero(labels == c))) for c in (0, 1)]
    order = []
    for pair in zip(*per_class):
        order.extend(pair)
    longest = max(per_class, key=len)
    order.extend(longest[min(map(len, per_class)):])
    return [int(i) for i in order]


def load_mnist_idx(images_path, labels_path, keep_digits: Sequence[int] = (0, 1), max_per_split: int = 200,
                   seed: int = 0, validation_size: int | None = None) -> DatasetSplit:
    """Two-digit subset of an IDX file pair.

    ``keep_digits[0]`` becomes label 0 and ``keep_digits[1]`` label 1.  The
    first ``max_per_split`` samples of a class-interleaved shuffle go to
    training; the next ``validation_size`` (default ``max_per_split``) are
    held out.
    """
    images = read_idx_images(images_path)
    digits = read_idx_labels(labels_path)
    if len(images) != len(digits):
        raise IDXLengthError(f"{len(images)} images but {len(digits)} labels")
    if len(keep_digits) != 2:
        raise ValueError("keep_digits must name exactly two digits")
    keep = np.flatnonzero(np.isin(digits, keep_digits))
    labels = (digits[keep] == keep_digits[1]).astype(np.int64)

    rng = np.random.default_rng(seed)
    order = _balanced_order(labels, rng)
    n_val = max_per_split if validation_size is None else validation_size
    train_idx = order[:max_per_split]
    val_idx = order[max_per_split:max_per_split + n_val]
    train_idx = [train_idx[i] for i in rng.permutation(len(train_idx))]

    def to_samples(idx):
        return [Sample(images[keep[i]][None] / 255.0, int(labels[i]), int(keep[i])) for i in idx]

    return DatasetSplit(to_samples(train_idx), to_samples(val_idx), seed,
                        {"source": str(images_path), "keep_digits": tuple(keep_digits)})


def load_mnist_samples(images_path, labels_path, keep_digits: Sequence[int] = (0, 1), limit: int | None = None,
                       seed: int = 0) -> list[Sample]:
    """Balanced two-digit samples from an IDX pair, e.g. a held-out test file."""
    images = read_idx_images(images_path)
    digits = read_idx_labels(labels_path)
    keep = np.flatnonzero(np.isin(digits, keep_digits))
    labels = (digits[keep] == keep_digits[1]).astype(np.int64)
    order = _balanced_order(labels, np.random.default_rng(seed))[:limit]
    return [Sample(images[keep[i]][None] / 255.0, int(labels[i]), int(keep[i])) for i in order]


# --- image folders ---------------------------------------------------------------------

def load_image(path: str | os.PathLike, size: int | tuple[int, int]) -> np.ndarray:
    """Decode -> grayscale luminance -> bilinear resize -> ``[1, H, W]`` in [0, 1]."""
    h, w = (size, size) if isinstance(size, int) else size
    with Image.open(path) as im:
        gray = im.convert("L").convert("F")
    if gray.size != (w, h):
        gray = gray.resize((w, h), Image.Resampling.BILINEAR)
    arr = np.asarray(gray, dtype=np.float64) / 255.0
    return np.clip(arr, 0.0, 1.0)[None]


def list_class_images(root: str | os.PathLike, classes: Mapping[str, int]) -> list[tuple[Path, int]]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetLayoutError(f"dataset root {root} does not exist")
    out = []
    for name, label in sorted(classes.items(), key=lambda kv: kv[1]):
        d = root / name
        if not d.is_dir():
            raise DatasetLayoutError(f"missing class directory {d}")
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        out.extend((p, label) for p in files)
    return out


def load_image_folder(root, classes: Mapping[str, int] = CRACK_CLASSES, resize_to: int = 64,
                      max_per_class: int | None = 1000, seed: int = 0, split_ratio: float = 0.8) -> DatasetSplit:
    listing = list_class_images(root, classes)
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for label in sorted(set(classes.values())):
        idx = [i for i, (_, lab) in enumerate(listing) if lab == label]
        picked = rng.permutation(idx)[:max_per_class] if max_per_class else idx
        chosen.extend(sorted(int(i) for i in picked))

    samples, skipped = [], 0
    for i in chosen:
        path, label = listing[i]
        try:
            img = load_image(path, resize_to)
        except (OSError, ValueError) as exc:
            log.warning("skipping undecodable image %s: %s", path, exc)
            skipped += 1
            continue
        samples.append(Sample(img, label, i))
    if chosen and skipped / len(chosen) > MAX_SKIP_FRACTION:
        raise ImageDecodeError(f"{skipped} of {len(chosen)} images under {root} failed to decode")
    out = split(samples, split_ratio, seed)
    out.meta.update(source=str(root), resize_to=resize_to)
    return out


def split(samples: Sequence[Sample], ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Stratified shuffled split; each class contributes ``round(ratio * n_c)`` to train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for label in (0, 1):
        members = [s for s in samples if s.label == label]
        n_train = int(round(ratio * len(members)))
        if n_train == 0 or n_train == len(members):
            raise StratificationError(f"class {label} ({len(members)} samples) would be empty in one split")
        perm = rng.permutation(len(members))
        train += [members[i] for i in perm[:n_train]]
        val += [members[i] for i in perm[n_train:]]
    train = [train[i] for i in rng.permutation(len(train))]
    return DatasetSplit(train, val, seed)


def two_blob_toy(n_per_class: int = 40, size: int = 8, seed: int = 0, noise: float = 0.1) -> list[Sample]:
    """Linearly separable toy images: a bright patch top-left (0) or bottom-right (1)."""
    rng = np.random.default_rng(seed)
    half = size // 2
    out = []
    for i in range(2 * n_per_class):
        label = i % 2
        img = rng.uniform(0, noise, size=(size, size))
        if label == 0:
            img[:half, :half] += 1 - noise
        else:
            img[half:, half:] += 1 - noise
        out.append(Sample(np.clip(img, 0, 1)[None], label, i))
    return out
