"""Datasets: Gaussian blobs, MNIST IDX files, and IID client sharding."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Samples:
    x: np.ndarray  # (n, dim) float64
    y: np.ndarray  # (n,) int64

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ConfigurationError(f"inconsistent sample arrays {self.x.shape} / {self.y.shape}")

    def __len__(self):
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "Samples":
        return Samples(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class DatasetBundle:
    client_shards: list[Samples]
    shared: Samples
    test: Samples
    # positions in the source pool(s), kept for disjointness checks
    shard_indices: list[np.ndarray] = field(default_factory=list, repr=False)
    shared_indices: np.ndarray | None = field(default=None, repr=False)
    test_indices: np.ndarray | None = field(default=None, repr=False)
    held_out: bool = False


def gen_blobs(num_classes: int, dim: int, n: int, spread: float, seed: int) -> Samples:
    """Balanced isotropic Gaussian blobs around centres on the unit sphere."""
    if num_classes < 2 or dim < 1:
        raise ConfigurationError("need at least two classes and one dimension")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    y = rng.permutation(np.arange(n) % num_classes)
    x = centers[y] + spread * rng.standard_normal((n, dim))
    return Samples(x.astype(np.float64), y.astype(np.int64))


def blob_centers(num_classes: int, dim: int, seed: int) -> np.ndarray:
    """The centres :func:`gen_blobs` uses for the same ``seed``."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, dim))
    return centers / np.linalg.norm(centers, axis=1, keepdims=True)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(buf: bytes, magic: int, what: str) -> np.ndarray:
    if len(buf) < 4:
        raise IngestionError(f"{what}: file too short for a magic number", offset=len(buf))
    (found,) = struct.unpack_from(">I", buf, 0)
    if found != magic:
        raise IngestionError(f"{what}: bad magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IngestionError(f"{what}: truncated header", offset=len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    expected = int(np.prod(dims))
    available = len(buf) - header
    if available < expected:
        raise IngestionError(
            f"{what}: truncated payload, {available} of {expected} bytes present", offset=len(buf)
        )
    if available > expected:
        raise IngestionError(f"{what}: {available - expected} trailing bytes", offset=header + expected)
    return np.frombuffer(buf, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> Samples:
    """Read an IDX image/label file pair (plain or ``.gz``).

    Pixels are scaled to [0, 1] and flattened; labels must lie in 0-9.
    """
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, str(images_path))
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise IngestionError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels", offset=4
        )
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise IngestionError(f"label {labels[bad]} outside 0-9", offset=8 + bad)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Samples(x, labels.astype(np.int64))


def write_idx(samples: Samples, images_path, labels_path, shape=(28, 28)) -> None:
    """Write ``samples`` (pixels in [0, 1]) as an IDX pair; inverse of :func:`load_idx`."""
    n = len(samples)
    if int(np.prod(shape)) != samples.dim:
        raise ConfigurationError(f"image shape {shape} does not hold {samples.dim} pixels")
    pixels = np.clip(np.rint(samples.x * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IMAGES_MAGIC))
        fh.write(struct.pack(">3I", n, *shape))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, n))
        fh.write(samples.y.astype(np.uint8).tobytes())


def load_mnist_subset() -> Samples:
    """The 5000-sample MNIST excerpt that ships with ``mlxtend``."""
    try:
        from mlxtend.data import mnist_data
    except ImportError as err:  # pragma: no cover - depends on environment
        raise ConfigurationError("mnist_subset needs the optional 'mlxtend' package") from err
    x, y = mnist_data()
    return Samples(np.asarray(x, dtype=np.float64) / 255.0, np.asarray(y, dtype=np.int64))


def make_bundle(samples: Samples, M: int, D_m: int, D_o: int, test_n: int, seed: int,
                held_out: Samples | None = None) -> DatasetBundle:
    """Seeded shuffle then disjoint slices: M shards, shared set, test set.

    With ``held_out`` the shared and test sets come from that pool (used
    when the training pool is fully consumed by the shards).
    """
    if min(M, D_m) < 1 or D_o < 0 or test_n < 0:
        raise ConfigurationError("M and D_m must be positive; D_o and test_n non-negative")
    rng = np.random.default_rng(seed)
    if held_out is None:
        need = M * D_m + D_o + test_n
        if len(samples) < need:
            raise ConfigurationError(f"need {need} samples, pool has {len(samples)}")
        order = rng.permutation(len(samples))
        shard_idx = [order[m * D_m:(m + 1) * D_m] for m in range(M)]
        base = M * D_m
        shared_idx = order[base:base + D_o]
        test_idx = order[base + D_o:base + D_o + test_n]
        shared_pool = test_pool = samples
    else:
        if len(samples) < M * D_m:
            raise ConfigurationError(f"need {M * D_m} training samples, pool has {len(samples)}")
        if len(held_out) < D_o + test_n:
            raise ConfigurationError(f"need {D_o + test_n} held-out samples, have {len(held_out)}")
        order = rng.permutation(len(samples))
        shard_idx = [order[m * D_m:(m + 1) * D_m] for m in range(M)]
        held = rng.permutation(len(held_out))
        shared_idx = held[:D_o]
        test_idx = held[D_o:D_o + test_n]
        shared_pool = test_pool = held_out
    return DatasetBundle(
        client_shards=[samples.take(i) for i in shard_idx],
        shared=shared_pool.take(shared_idx),
        test=test_pool.take(test_idx),
        shard_indices=shard_idx,
        shared_indices=shared_idx,
        test_indices=test_idx,
        held_out=held_out is not None,
    )
