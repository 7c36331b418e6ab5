"""Datasets, client shards, and weak/strong augmentation.

A labeled pool lives on the server; every client holds an unlabeled shard.
Shards keep the true class of each sample as private provenance so that
evaluation code can measure pseudo-label quality; training code never reads it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IdxFormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# Lattice spacing (in units of the unit blob covariance) between class centers.
_BLOB_SPACING = 8.0

Seed = int | np.random.SeedSequence


@dataclass(frozen=True)
class Dataset:
    """A labeled sample pool: features in [0,1], integer labels in [0, K)."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray    # (n,) int64
    num_classes: int
    image_shape: tuple[int, int] | None = None  # (rows, cols) when features are images

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Shard:
    """One client's unlabeled sample pool.

    ``provenance`` records the true class of each sample for evaluation only.
    """

    owner: int
    features: np.ndarray
    provenance: np.ndarray

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class FederatedData:
    """A partitioned dataset: server keeps labels, clients get disjoint shards."""

    server_x: np.ndarray
    server_y: np.ndarray
    shards: list[Shard]
    num_classes: int
    image_shape: tuple[int, int] | None = None


def generate_synthetic(num_classes: int, per_class: int, feature_dim: int,
                       seed: Seed) -> Dataset:
    """Gaussian blobs with class centers on a fixed lattice, normalized to [0,1].

    Class k's center repeats the base-``side`` digits of k across all feature
    dimensions (side = ceil(sqrt(K))), spaced widely relative to the unit
    covariance so classes stay linearly separable. Deterministic per seed.
    """
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if per_class < 10:
        raise ConfigError(f"per_class must be >= 10, got {per_class}")
    if feature_dim < 2:
        raise ConfigError(f"feature_dim must be >= 2, got {feature_dim}")

    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(num_classes)))
    ndigits = 1
    while side ** ndigits < num_classes:
        ndigits += 1

    means = np.zeros((num_classes, feature_dim))
    for k in range(num_classes):
        for j in range(feature_dim):
            digit = (k // side ** (j % ndigits)) % side
            means[k, j] = _BLOB_SPACING * digit

    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    features = rng.normal(size=(num_classes * per_class, feature_dim))
    features += means[labels]

    # Affine-normalize each dimension into [0,1], then clamp (outliers clip).
    lo = features.min(axis=0)
    hi = features.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    features = np.clip((features - lo) / span, 0.0, 1.0)
    return Dataset(features, labels, num_classes)


def _read_be_u32(buf: bytes, offset: int, what: str) -> int:
    if len(buf) < offset + 4:
        raise IdxFormatError(f"truncated {what} at offset {offset}")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair (big-endian, standard handwriting-digit layout).

    Pixels are scaled to [0,1]; labels are the stored byte codes (0-9).
    """
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lbl_buf = f.read()

    magic = _read_be_u32(img_buf, 0, "image magic")
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(
            f"bad image magic 0x{magic:08x} at offset 0 (expected 0x{IDX_IMAGE_MAGIC:08x})")
    n = _read_be_u32(img_buf, 4, "image count")
    rows = _read_be_u32(img_buf, 8, "image rows")
    cols = _read_be_u32(img_buf, 12, "image cols")
    expected = 16 + n * rows * cols
    if len(img_buf) != expected:
        raise IdxFormatError(
            f"image payload at offset 16 has {len(img_buf) - 16} bytes, expected {expected - 16}")

    magic = _read_be_u32(lbl_buf, 0, "label magic")
    if magic != IDX_LABEL_MAGIC:
        raise IdxFormatError(
            f"bad label magic 0x{magic:08x} at offset 0 (expected 0x{IDX_LABEL_MAGIC:08x})")
    n_lbl = _read_be_u32(lbl_buf, 4, "label count")
    if len(lbl_buf) != 8 + n_lbl:
        raise IdxFormatError(
            f"label payload at offset 8 has {len(lbl_buf) - 8} bytes, expected {n_lbl}")
    if n_lbl != n:
        raise IdxFormatError(f"label count {n_lbl} does not match image count {n}")

    pixels = np.frombuffer(img_buf, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    features = pixels.astype(np.float64) / 255.0
    labels = np.frombuffer(lbl_buf, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(features, labels, int(labels.max()) + 1 if n else 0, (rows, cols))


def split_test(ds: Dataset, fraction: float, seed: Seed) -> tuple[Dataset, Dataset]:
    """Hold out a class-stratified test split; returns (train, test)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"test fraction must be in (0,1), got {fraction}")
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in range(ds.num_classes):
        pool = np.flatnonzero(ds.labels == c)
        pool = rng.permutation(pool)
        k = int(round(fraction * len(pool)))
        test_idx.append(pool[:k])
    test_idx = np.sort(np.concatenate(test_idx))
    mask = np.zeros(len(ds), dtype=bool)
    mask[test_idx] = True
    train = Dataset(ds.features[~mask], ds.labels[~mask], ds.num_classes, ds.image_shape)
    test = Dataset(ds.features[mask], ds.labels[mask], ds.num_classes, ds.image_shape)
    return train, test


def partition(ds: Dataset, m: int, n_server: int, mode: str, seed: Seed) -> FederatedData:
    """Split a dataset into a labeled server pool and m unlabeled client shards.

    iid mode deals every class evenly across clients; non_iid restricts each
    shard to exactly two randomly assigned classes. The partition is exhaustive
    and disjoint: server pool plus shards cover the dataset exactly once.
    """
    if m < 1:
        raise ConfigError(f"client count m must be >= 1, got {m}")
    if not 1 <= n_server < len(ds):
        raise ConfigError(
            f"server sample count must be in [1, {len(ds) - 1}], got {n_server}")
    if mode not in ("iid", "non_iid"):
        raise ConfigError(f"distribution mode must be iid or non_iid, got {mode!r}")

    rng = np.random.default_rng(seed)
    pools = [list(rng.permutation(np.flatnonzero(ds.labels == c)))
             for c in range(ds.num_classes)]

    # Server pool: deal one sample per class round-robin so labels stay balanced.
    server_idx: list[int] = []
    c = 0
    while len(server_idx) < n_server:
        if pools[c]:
            server_idx.append(pools[c].pop())
        c = (c + 1) % ds.num_classes

    if mode == "iid":
        # Rotate chunk assignment per class so remainder chunks spread evenly.
        per_client: list[list[int]] = [[] for _ in range(m)]
        for c, pool in enumerate(pools):
            for i, chunk in enumerate(np.array_split(np.asarray(pool, dtype=np.int64), m)):
                per_client[(i + c) % m].extend(chunk.tolist())
    else:
        per_client = _assign_two_class_shards(pools, m, ds.num_classes, rng)

    if any(len(idx) == 0 for idx in per_client):
        raise ConfigError(f"m={m} leaves at least one shard empty")

    shards = [Shard(i, ds.features[idx], ds.labels[idx])
              for i, idx in enumerate(per_client)]
    server_idx = np.asarray(server_idx, dtype=np.int64)
    return FederatedData(ds.features[server_idx], ds.labels[server_idx],
                         shards, ds.num_classes, ds.image_shape)


def _assign_two_class_shards(pools: list[list[int]], m: int, num_classes: int,
                             rng: np.random.Generator) -> list[list[int]]:
    if 2 * m < num_classes:
        raise ConfigError(
            f"non_iid needs 2*m >= num_classes to cover every class; got m={m}")

    # Balanced class-slot counts (2 slots per client), randomized remainder.
    base, rem = divmod(2 * m, num_classes)
    counts = np.full(num_classes, base)
    if rem:
        counts[rng.choice(num_classes, size=rem, replace=False)] += 1

    # Pair the two most-loaded classes per client so no client repeats a class.
    priority = rng.permutation(num_classes)
    remaining = counts.copy()
    assigned: list[tuple[int, int]] = []
    for _ in range(m):
        order = sorted(range(num_classes), key=lambda c: (-remaining[c], priority[c]))
        a, b = order[0], order[1]
        if remaining[b] <= 0:
            raise ConfigError(f"m={m} is infeasible for a 2-class partition")
        remaining[a] -= 1
        remaining[b] -= 1
        assigned.append((a, b))

    holders: list[list[int]] = [[] for _ in range(num_classes)]
    for client, (a, b) in enumerate(assigned):
        holders[a].append(client)
        holders[b].append(client)

    per_client: list[list[int]] = [[] for _ in range(m)]
    for c, pool in enumerate(pools):
        if not holders[c]:
            continue
        chunks = np.array_split(np.asarray(pool, dtype=np.int64), len(holders[c]))
        for client, chunk in zip(holders[c], chunks):
            if len(chunk) == 0:
                raise ConfigError(
                    f"m={m} exceeds what the 2-class constraint permits: "
                    f"class {c} has fewer samples than assigned clients")
            per_client[client].extend(chunk.tolist())
    return per_client


def _shift_image(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate by (dy, dx) with zero fill; positive moves content down/right."""
    out = np.zeros_like(img)
    rows, cols = img.shape
    if abs(dy) >= rows or abs(dx) >= cols:
        return out
    src_r = slice(max(0, -dy), rows - max(0, dy))
    dst_r = slice(max(0, dy), rows - max(0, -dy))
    src_c = slice(max(0, -dx), cols - max(0, dx))
    dst_c = slice(max(0, dx), cols - max(0, -dx))
    out[dst_r, dst_c] = img[src_r, src_c]
    return out


def augment_weak(x: np.ndarray, rng: np.random.Generator,
                 image_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Weak augmentation: flip-and-shift for images, small jitter otherwise."""
    if image_shape is not None:
        img = x.reshape(image_shape)
        if rng.random() < 0.5:
            img = img[:, ::-1]
        dy, dx = rng.integers(-2, 3, size=2)
        return np.clip(_shift_image(img, int(dy), int(dx)).reshape(-1), 0.0, 1.0)
    return np.clip(x + rng.normal(0.0, 0.01, size=x.shape), 0.0, 1.0)


def augment_strong(x: np.ndarray, rng: np.random.Generator,
                   image_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Strong augmentation: shift plus random crop-and-pad for images, 5x the
    weak jitter otherwise.

    Synthetic-mode corruption stays label-preserving on purpose: harsher
    schemes (feature dropout) leave the consistency objective unfittable, so
    client updates never shrink and training degenerates into a tug-of-war
    with the server.
    """
    if image_shape is not None:
        img = x.reshape(image_shape)
        dy, dx = rng.integers(-2, 3, size=2)
        img = _shift_image(img, int(dy), int(dx))
        rows, cols = image_shape
        padded = np.pad(img, 4)
        top, left = rng.integers(0, 9, size=2)
        img = padded[top:top + rows, left:left + cols]
        return np.clip(img.reshape(-1), 0.0, 1.0)
    return np.clip(x + rng.normal(0.0, 0.05, size=x.shape), 0.0, 1.0)


def augment_batch(X: np.ndarray, rng: np.random.Generator, strong: bool,
                  image_shape: tuple[int, int] | None = None) -> np.ndarray:
    fn = augment_strong if strong else augment_weak
    return np.stack([fn(X[i], rng, image_shape) for i in range(X.shape[0])])
