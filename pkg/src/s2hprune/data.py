"""Seeded synthetic datasets, IDX/CSV loaders and deterministic batching.

All randomness goes through numpy's Philox counter-based generator seeded
from a ``SeedSequence`` of integers, so streams are reproducible across
platforms.
"""

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) == 0 or len(self.features) != len(self.labels):
            raise ValueError("dataset must be non-empty with one label per sample")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels out of range")

    def __len__(self):
        return len(self.labels)


class Splits(NamedTuple):
    train: Dataset
    val: Dataset


def rng_for(*key):
    """Philox generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def blob_centers(num_classes, centers_per_class=1, radius=2.0):
    """Cluster centres on a circle; centre ``j`` belongs to class ``j % K``.

    With several centres per class the classes interleave around the circle
    and are not linearly separable.
    """
    n = num_classes * centers_per_class
    ang = 2 * np.pi * np.arange(n) / n
    centers = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return centers, np.arange(n) % num_classes


def gen_synthetic(kind, n, num_classes, noise, seed, centers_per_class=1, val_fraction=0.2):
    """Balanced synthetic 2-D classification data, split 80/20 by seeded shuffle."""
    if n < num_classes:
        raise ValueError("n must be at least num_classes")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = rng_for(seed, 0xDA7A)
    per_class = [n // num_classes + (1 if k < n % num_classes else 0) for k in range(num_classes)]
    labels = np.concatenate([np.full(c, k) for k, c in enumerate(per_class)])
    if kind == "blobs":
        centers, owner = blob_centers(num_classes, centers_per_class)
        base = np.empty((n, 2))
        for k in range(num_classes):
            mine = centers[owner == k]
            idx = np.flatnonzero(labels == k)
            base[idx] = mine[np.arange(idx.size) % len(mine)]
        feats = base + noise * rng.standard_normal((n, 2))
    elif kind == "spirals":
        feats = np.empty((n, 2))
        for k in range(num_classes):
            idx = np.flatnonzero(labels == k)
            t = np.linspace(0.05, 1.0, idx.size)
            ang = 3.0 * np.pi * t + 2 * np.pi * k / num_classes
            feats[idx, 0] = t * np.cos(ang)
            feats[idx, 1] = t * np.sin(ang)
        feats = feats + noise * rng.standard_normal((n, 2))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    prov = {"generator": kind, "n": n, "num_classes": num_classes, "noise": noise,
            "seed": seed, "centers_per_class": centers_per_class}
    return Splits(
        Dataset(feats[train_idx], labels[train_idx], num_classes, "train", dict(prov)),
        Dataset(feats[val_idx], labels[val_idx], num_classes, "val", dict(prov)),
    )


def batch_iter(ds, batch_size, seed, epoch):
    """Yield ``(x, y)`` batches in a permutation fixed by ``(seed, epoch)``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = rng_for(seed, epoch, 0xBA7C).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = perm[start:start + batch_size]
        yield ds.features[idx], ds.labels[idx]


# -- IDX -------------------------------------------------------------------

def _read_idx(path, expected_magic, what):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    magic, = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(
            f"{path}: bad magic 0x{magic:08X} for {what} (expected 0x{expected_magic:08X})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < count:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {count} bytes)")
    data = np.frombuffer(payload, dtype=np.uint8, count=count).reshape(dims)
    return data, hashlib.sha256(raw).hexdigest()


def load_idx(images_path, labels_path, split="train", num_classes=None):
    """MNIST-style IDX pair -> Dataset with features in [0, 1], shape (N,1,H,W)."""
    images, h1 = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels, h2 = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"count mismatch: {images.shape[0]} images, {labels.shape[0]} labels")
    feats = images.astype(np.float64)[:, None, :, :] / 255.0
    k = int(labels.max()) + 1 if num_classes is None else num_classes
    return Dataset(feats, labels.astype(np.int64), k, split,
                   {"images_sha256": h1, "labels_sha256": h2})


def write_idx(ds, images_path, labels_path):
    """Write a Dataset of (N,1,H,W) images in [0,1] as an IDX pair."""
    feats = np.asarray(ds.features)
    if feats.ndim == 4:
        feats = feats[:, 0]
    if feats.ndim != 3:
        raise FormatError("IDX images need (N, H, W) or (N, 1, H, W) features")
    pix = np.rint(feats * 255.0).astype(np.uint8)
    n, h, w = pix.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(pix.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())


# -- CSV -------------------------------------------------------------------

def load_csv(path, split="train", num_classes=None):
    """CSV with a header row; column ``label`` holds the class, the rest are features."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        if "label" not in header:
            raise FormatError(f"{path}: no 'label' column")
        li = header.index("label")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                labels.append(int(row[li]))
                feats.append([float(v) for i, v in enumerate(row) if i != li])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    labels = np.array(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if num_classes is None else num_classes
    with open(path, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    return Dataset(np.array(feats, dtype=np.float64), labels, k, split, {"csv_sha256": digest})
