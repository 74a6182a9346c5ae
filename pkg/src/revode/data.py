"""CIFAR binary ingestion, augmentation and stratified subsampling."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

IMAGE_SHAPE = (3, 32, 32)
PIXELS = 3 * 32 * 32
RECORD_BYTES = {"cifar10": 1 + PIXELS, "cifar100": 2 + PIXELS}
CLASSES = {"cifar10": 10, "cifar100": 100}
SPLIT_FILES = {
    ("cifar10", "train"): [f"data_batch_{i}.bin" for i in range(1, 6)],
    ("cifar10", "test"): ["test_batch.bin"],
    ("cifar100", "train"): ["train.bin"],
    ("cifar100", "test"): ["test.bin"],
}


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # uint8, (N, C, H, W)
    labels: np.ndarray  # int64, (N,)
    classes: int
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataFormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DataFormatError(f"labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def channel_mean(self) -> np.ndarray:
        return self.images.mean(axis=(0, 2, 3)) / 255.0

    @property
    def channel_std(self) -> np.ndarray:
        return (self.images / 255.0).std(axis=(0, 2, 3))

    def take(self, idx: np.ndarray) -> "Dataset":
        return replace(self, images=self.images[idx], labels=self.labels[idx])


def load_cifar_binary(paths: str | os.PathLike | Sequence[str | os.PathLike], variant: str = "cifar10",
                      split: str = "train") -> Dataset:
    """Read one or more CIFAR binary files (fine labels for CIFAR-100)."""
    if variant not in RECORD_BYTES:
        raise ValueError(f"unknown CIFAR variant {variant!r}")
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    rec = RECORD_BYTES[variant]
    images, labels = [], []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size % rec:
            whole = raw.size // rec
            raise DataFormatError(f"{path}: truncated record at byte offset {whole * rec} "
                                  f"({raw.size} bytes is not a multiple of {rec})")
        raw = raw.reshape(-1, rec)
        lab = raw[:, rec - PIXELS - 1].astype(np.int64)
        bad = np.flatnonzero(lab >= CLASSES[variant])
        if bad.size:
            i = int(bad[0])
            raise DataFormatError(f"{path}: label {lab[i]} out of range at byte offset {i * rec + rec - PIXELS - 1}")
        images.append(raw[:, rec - PIXELS:].reshape(-1, *IMAGE_SHAPE))
        labels.append(lab)
    if not images:
        raise DataFormatError("no input files")
    return Dataset(np.concatenate(images), np.concatenate(labels), CLASSES[variant], split)


def load_cifar_dir(directory: str | os.PathLike, variant: str = "cifar10", split: str = "train") -> Dataset:
    directory = Path(directory)
    names = SPLIT_FILES[(variant, split)]
    missing = [n for n in names if not (directory / n).exists()]
    if missing:
        raise FileNotFoundError(f"{directory}: missing {', '.join(missing)}")
    return load_cifar_binary([directory / n for n in names], variant, split)


def write_cifar_binary(path, images: np.ndarray, labels: np.ndarray, variant: str = "cifar10",
                       coarse: np.ndarray | None = None) -> None:
    """Write records in the binary layout read by ``load_cifar_binary``."""
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), PIXELS)
    cols = [np.asarray(labels, dtype=np.uint8)[:, None], images]
    if variant == "cifar100":
        c = np.zeros(len(labels), np.uint8) if coarse is None else np.asarray(coarse, np.uint8)
        cols.insert(0, c[:, None])
    np.concatenate(cols, axis=1).tofile(path)


def load_manifest(path: str | os.PathLike, split: str = "train") -> Dataset:
    """Generic raw-binary dataset: a JSON manifest describing fixed-size records.

    Keys: ``shape`` [C, H, W], ``classes``, ``label_offset`` (byte index of the
    label inside a record, default 0), ``pixel_offset`` (default 1),
    ``record_bytes`` and ``files`` (per split, relative to the manifest).
    """
    path = Path(path)
    meta = json.loads(path.read_text())
    shape = tuple(meta["shape"])
    rec = int(meta["record_bytes"])
    lo, po = int(meta.get("label_offset", 0)), int(meta.get("pixel_offset", 1))
    npix = int(np.prod(shape))
    if po + npix > rec:
        raise DataFormatError(f"{path}: pixels overrun the {rec}-byte record")
    images, labels = [], []
    for name in meta["files"][split]:
        raw = np.fromfile(path.parent / name, dtype=np.uint8)
        if raw.size % rec:
            raise DataFormatError(f"{name}: truncated record at byte offset {raw.size // rec * rec}")
        raw = raw.reshape(-1, rec)
        labels.append(raw[:, lo].astype(np.int64))
        images.append(raw[:, po:po + npix].reshape(-1, *shape))
    return Dataset(np.concatenate(images), np.concatenate(labels), int(meta["classes"]), split)


# -- augmentation ----------------------------------------------------------------

def hflip(img: np.ndarray) -> np.ndarray:
    return img[..., ::-1]


def standardize(img: np.ndarray) -> np.ndarray:
    """Per-image standardization: (x - mean) / max(std, 1/sqrt(N)) over each image."""
    x = np.asarray(img, dtype=np.float32)
    axes = tuple(range(x.ndim - 3, x.ndim))
    n = np.prod(x.shape[-3:])
    mean = x.mean(axis=axes, keepdims=True)
    std = np.maximum(x.std(axis=axes, keepdims=True), float(1.0 / np.sqrt(n)))
    return (x - mean) / std


def standardize_dataset(img: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    x = np.asarray(img, dtype=np.float32) / 255.0
    return (x - mean[:, None, None]) / std[:, None, None]


def augment(img: np.ndarray, rng: np.random.Generator, pad: int = 4,
            crop: tuple[int, int] | None = None, flip: bool | None = None) -> np.ndarray:
    """Zero pad, random crop back to size, random horizontal flip, standardize.

    ``crop`` (top, left offsets into the padded image) and ``flip`` override
    the random draws.
    """
    c, hgt, wid = img.shape
    padded = np.zeros((c, hgt + 2 * pad, wid + 2 * pad), dtype=img.dtype)
    padded[:, pad:pad + hgt, pad:pad + wid] = img
    top, left = crop if crop is not None else rng.integers(0, 2 * pad + 1, size=2)
    out = padded[:, top:top + hgt, left:left + wid]
    do_flip = bool(rng.random() < 0.5) if flip is None else flip
    if do_flip:
        out = hflip(out)
    return standardize(out)


def augment_batch(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Vectorized ``augment`` over a (B, C, H, W) uint8 batch."""
    b, c, hgt, wid = images.shape
    padded = np.zeros((b, c, hgt + 2 * pad, wid + 2 * pad), dtype=images.dtype)
    padded[:, :, pad:pad + hgt, pad:pad + wid] = images
    offs = rng.integers(0, 2 * pad + 1, size=(b, 2))
    flips = rng.random(b) < 0.5
    out = np.empty_like(images)
    for i in range(b):
        t, l = offs[i]
        crop = padded[i, :, t:t + hgt, l:l + wid]
        out[i] = crop[..., ::-1] if flips[i] else crop
    return standardize(out)


# -- subsampling ------------------------------------------------------------------

def subsample(ds: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Seeded class-stratified sample without replacement, equal count per class."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    per_class = int(round(fraction * len(ds))) // ds.classes
    if per_class < 1:
        raise ValueError(f"fraction {fraction} leaves fewer than one image per class")
    rng = np.random.default_rng(seed)
    picks = []
    for k in range(ds.classes):
        idx = np.flatnonzero(ds.labels == k)
        if len(idx) < per_class:
            raise ValueError(f"class {k} has {len(idx)} images, need {per_class}")
        picks.append(rng.choice(idx, size=per_class, replace=False))
    return ds.take(np.sort(np.concatenate(picks)))
