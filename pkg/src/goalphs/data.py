"""Datasets: IDX and CIFAR-10 binary readers, synthetic blobs, batching, splits."""
import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError

__all__ = [
    "Dataset", "BatchPlan", "load_idx", "idx_bytes", "write_idx", "load_cifar10_binary",
    "synth_blobs", "minibatches", "split", "subset", "IDX_IMAGE_MAGIC", "IDX_LABEL_MAGIC",
    "CIFAR_RECORD_BYTES",
]

IDX_IMAGE_MAGIC = 2051  # 0x00000803: unsigned byte, 3 dims
IDX_LABEL_MAGIC = 2049  # 0x00000801: unsigned byte, 1 dim
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32


@dataclass(frozen=True, eq=False)
class Dataset:
    """``features`` is an ``(n, d)`` float array, ``labels`` an ``(n,)`` int array."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = ""

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ConsistencyError("features must be a 2-D array")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConsistencyError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConsistencyError(f"labels must lie in [0, {self.n_classes - 1}]")

    def __len__(self):
        return self.labels.shape[0]

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.n_classes == other.n_classes
                and self.name == other.name
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


def _read_bytes(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(buf, expected_magic, path):
    if len(buf) < 8:
        raise OSError(f"{path}: truncated IDX header")
    magic = struct.unpack(">i", buf[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: expected IDX magic {expected_magic}, found {magic}")
    ndim = buf[3]
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise OSError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}i", buf[4:header])
    size = int(np.prod(dims))
    if len(buf) - header < size:
        raise OSError(f"{path}: truncated IDX payload ({len(buf) - header} of {size} bytes)")
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, name=None, n_classes=10):
    """Read an IDX image/label file pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGE_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABEL_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} "
            f"holds {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], int(np.prod(images.shape[1:])))
    features = flat.astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), n_classes,
                   name or Path(images_path).name)


def idx_bytes(array, magic):
    """Serialize a uint8 array as IDX (big-endian header)."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise FormatError("only unsigned-byte IDX payloads are supported")
    header = struct.pack(">i", magic) + struct.pack(f">{array.ndim}i", *array.shape)
    return header + array.tobytes(order="C")


def write_idx(dataset, images_path, labels_path, shape=None):
    """Write ``dataset`` as an IDX pair; features are mapped back to bytes (x 255).

    ``shape`` gives the per-image ``(rows, cols)``; by default images are square.
    """
    n, d = dataset.features.shape
    if shape is None:
        side = int(round(d ** 0.5))
        if side * side != d:
            raise ConfigError("non-square feature dim needs an explicit shape", ["shape"])
        shape = (side, side)
    pixels = np.rint(dataset.features * 255.0)
    if pixels.min(initial=0) < 0 or pixels.max(initial=0) > 255:
        raise FormatError("features must lie in [0, 1] to be written as bytes")
    images = pixels.astype(np.uint8).reshape(n, *shape)
    for path, payload in ((images_path, idx_bytes(images, IDX_IMAGE_MAGIC)),
                          (labels_path, idx_bytes(dataset.labels.astype(np.uint8),
                                                  IDX_LABEL_MAGIC))):
        if Path(path).suffix == ".gz":
            # mtime=0 keeps gzip output byte-stable
            with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
                f.write(payload)
        else:
            with open(path, "wb") as f:
                f.write(payload)


def load_cifar10_binary(paths, name="cifar10"):
    """Concatenate CIFAR-10 binary batches (label byte + 3072 channel-major pixels)."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    feats, labels = [], []
    for path in paths:
        buf = _read_bytes(path)
        if len(buf) % CIFAR_RECORD_BYTES:
            raise FormatError(
                f"{path}: size {len(buf)} is not a multiple of {CIFAR_RECORD_BYTES}")
        rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        if rec.shape[0] and rec[:, 0].max() > 9:
            raise ConsistencyError(f"{path}: label byte {rec[:, 0].max()} > 9")
        labels.append(rec[:, 0].astype(np.int64))
        feats.append(rec[:, 1:].astype(np.float64) / 255.0)
    if not feats:
        return Dataset(np.zeros((0, CIFAR_RECORD_BYTES - 1)), np.zeros(0, np.int64), 10, name)
    return Dataset(np.concatenate(feats), np.concatenate(labels), 10, name)


def synth_blobs(n, d, q, spread, seed, name="blobs"):
    """``q`` Gaussian clusters in ``d`` dimensions with standard-normal centres.

    Labels are balanced (``i % q``) and shuffled.  Features are not rescaled
    to [0, 1].
    """
    bad = [f for f, ok in (("n", n >= q), ("d", d >= 1), ("q", q >= 1), ("spread", spread > 0))
           if not ok]
    if bad:
        raise ConfigError(f"invalid blob parameters: {', '.join(bad)}", bad)
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((q, d))
    labels = rng.permutation(np.arange(n) % q).astype(np.int64)
    features = centers[labels] + spread * rng.standard_normal((n, d))
    return Dataset(features, labels, q, name)


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 128
    seed: int = 0
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive", ["batch_size"])


def minibatches(dataset, plan, epoch):
    """Index batches for one epoch, shuffled by a generator seeded with ``(seed, epoch)``.

    ``dataset`` may also be a sample count.
    """
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    if plan.batch_size > n:
        raise ConfigError(f"batch_size {plan.batch_size} exceeds dataset size {n}", ["batch_size"])
    order = np.random.default_rng([plan.seed, epoch]).permutation(n)
    stop = n - n % plan.batch_size if plan.drop_last else n
    return [order[i:i + plan.batch_size] for i in range(0, stop, plan.batch_size)]


def subset(dataset, indices, name=None):
    indices = np.asarray(indices, dtype=np.int64)
    return Dataset(dataset.features[indices], dataset.labels[indices], dataset.n_classes,
                   dataset.name if name is None else name)


def split(dataset, test_fraction, seed):
    """Seeded disjoint train/test split. Returns ``(train, test)``."""
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must lie in (0, 1)", ["test_fraction"])
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    test_idx, train_idx = np.sort(order[:n_test]), np.sort(order[n_test:])
    return (subset(dataset, train_idx, f"{dataset.name}-train"),
            subset(dataset, test_idx, f"{dataset.name}-test"))
