"""Dataset provisioning: synthetic generators and byte-validated file loaders.

Synthetic sources are generated in-repo rather than via sklearn so the
exact draw sequence is owned here and cannot drift across library
versions; the determinism contract covers the bytes of every array.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .rng import RngState

SOURCES = ("two_moons", "gaussian_blobs", "mnist_idx", "cifar10_binary")

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801
_CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3*32*32 pixel bytes, channel-major


class DataFormatError(ValueError):
    """A file-backed source violated its byte-format contract."""

    def __init__(self, message: str, *, path=None, offset: Optional[int] = None):
        loc = f"{path}" if path is not None else "input"
        if offset is not None:
            loc += f" at byte {offset}"
        super().__init__(f"{loc}: {message}")
        self.path = path
        self.offset = offset


@dataclass(frozen=True)
class DatasetSpec:
    """What to load or generate, and how to split it."""

    source: str
    n_train: int = 1000
    n_test: int = 1000
    val_fraction: float = 0.1
    # synthetic generator knobs
    noise: float = 0.1
    classes: int = 3
    dim: int = 2
    spread: float = 1.0
    center_scale: float = 4.0
    # file-backed sources (paths resolved against a data dir)
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    batches: tuple[str, ...] = ()
    test_batch: Optional[str] = None
    # x -> (x - offset) / scale
    normalization: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown dataset source {self.source!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie strictly between 0 and 1")
        if self.n_train < 2 or self.n_test < 1:
            raise ValueError("split sizes too small")
        if self.normalization[1] == 0:
            raise ValueError("normalization scale must be nonzero")


@dataclass(frozen=True)
class Splits:
    """Disjoint train/val/test arrays plus the shapes downstream code needs."""

    train: tuple[np.ndarray, np.ndarray]
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]
    input_shape: tuple[int, ...]
    num_classes: int


def provision_dataset(spec: DatasetSpec, rng: RngState, data_dir=None) -> Splits:
    """Deterministically generate or load the requested dataset."""
    gen = rng.generator()
    if spec.source == "two_moons":
        x, y = _two_moons(spec.n_train + spec.n_test, spec.noise, gen)
        num_classes = 2
    elif spec.source == "gaussian_blobs":
        x, y = _gaussian_blobs(
            spec.n_train + spec.n_test, spec.classes, spec.dim, spec.spread,
            spec.center_scale, gen,
        )
        num_classes = spec.classes
    elif spec.source == "mnist_idx":
        train = _load_idx_pair(spec.train_images, spec.train_labels, data_dir)
        test = _load_idx_pair(spec.test_images, spec.test_labels, data_dir)
        return _split_pretest(spec, gen, train, test, num_classes=10)
    else:
        train, test = _load_cifar10(spec, data_dir)
        return _split_pretest(spec, gen, train, test, num_classes=10)

    offset, scale = spec.normalization
    x = (x - offset) / scale
    order = gen.permutation(len(y))
    x, y = x[order], y[order]
    split = spec.n_train
    return _carve_val(
        spec, x[:split], y[:split],
        x[split : split + spec.n_test], y[split : split + spec.n_test],
        num_classes,
    )


def _carve_val(spec, train_x, train_y, test_x, test_y, num_classes) -> Splits:
    n_val = max(1, int(round(spec.val_fraction * len(train_y))))
    if n_val >= len(train_y):
        raise ValueError("validation fraction leaves no training data")
    return Splits(
        train=(train_x[n_val:], train_y[n_val:]),
        val=(train_x[:n_val], train_y[:n_val]),
        test=(test_x, test_y),
        input_shape=tuple(train_x.shape[1:]),
        num_classes=num_classes,
    )


def _split_pretest(spec, gen, train, test, num_classes) -> Splits:
    """File-backed sources arrive pre-split; cap sizes after a seeded shuffle."""
    offset, scale = spec.normalization
    train_x, train_y = train
    test_x, test_y = test
    order = gen.permutation(len(train_y))[: spec.n_train]
    train_x, train_y = (train_x[order] - offset) / scale, train_y[order]
    order = gen.permutation(len(test_y))[: spec.n_test]
    test_x, test_y = (test_x[order] - offset) / scale, test_y[order]
    return _carve_val(spec, train_x, train_y, test_x, test_y, num_classes)


def _two_moons(n: int, noise: float, gen: np.random.Generator):
    n_upper = n // 2
    n_lower = n - n_upper
    t_upper = np.linspace(0.0, np.pi, n_upper)
    t_lower = np.linspace(0.0, np.pi, n_lower)
    upper = np.stack([np.cos(t_upper), np.sin(t_upper)], axis=1)
    lower = np.stack([1.0 - np.cos(t_lower), 0.5 - np.sin(t_lower)], axis=1)
    x = np.concatenate([upper, lower])
    x += gen.normal(0.0, noise, size=x.shape)
    y = np.concatenate([np.zeros(n_upper, dtype=np.intp), np.ones(n_lower, dtype=np.intp)])
    return x, y


def _gaussian_blobs(n, classes, dim, spread, center_scale, gen: np.random.Generator):
    centers = gen.normal(0.0, center_scale, size=(classes, dim))
    counts = [n // classes + (1 if i < n % classes else 0) for i in range(classes)]
    xs, ys = [], []
    for label, count in enumerate(counts):
        xs.append(centers[label] + gen.normal(0.0, spread, size=(count, dim)))
        ys.append(np.full(count, label, dtype=np.intp))
    return np.concatenate(xs), np.concatenate(ys)


def _resolve(path, data_dir):
    if path is None:
        raise ValueError("file-backed dataset is missing a path")
    p = Path(path)
    if not p.is_absolute() and data_dir is not None:
        p = Path(data_dir) / p
    return p


def _read_idx(path: Path, expected_magic: int):
    raw = path.read_bytes()
    if len(raw) < 4:
        raise DataFormatError("truncated IDX header", path=path, offset=len(raw))
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(
            f"bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}",
            path=path,
            offset=0,
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError("truncated IDX dimension header", path=path, offset=len(raw))
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise DataFormatError(
            f"IDX payload has {len(raw) - header} bytes, expected {expected - header}",
            path=path,
            offset=min(len(raw), expected),
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def _load_idx_pair(images_path, labels_path, data_dir):
    images = _read_idx(_resolve(images_path, data_dir), _IDX_IMAGE_MAGIC)
    labels = _read_idx(_resolve(labels_path, data_dir), _IDX_LABEL_MAGIC)
    if images.ndim != 3:
        raise DataFormatError(
            f"expected 3-D image tensor, got {images.ndim}-D", path=images_path, offset=3
        )
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels", path=labels_path
        )
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataFormatError(
            f"label {labels[bad[0]]} out of range [0, 9]",
            path=labels_path,
            offset=8 + int(bad[0]),
        )
    x = images.astype(np.float64)[:, None, :, :]  # (n, 1, H, W)
    return x, labels.astype(np.intp)


def _read_cifar_batch(path: Path):
    raw = path.read_bytes()
    if len(raw) == 0 or len(raw) % _CIFAR_RECORD_BYTES:
        raise DataFormatError(
            f"file size {len(raw)} is not a multiple of the {_CIFAR_RECORD_BYTES}-byte record",
            path=path,
            offset=len(raw) - (len(raw) % _CIFAR_RECORD_BYTES),
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD_BYTES)
    labels = records[:, 0]
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataFormatError(
            f"label {labels[bad[0]]} out of range [0, 9]",
            path=path,
            offset=int(bad[0]) * _CIFAR_RECORD_BYTES,
        )
    x = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64)
    return x, labels.astype(np.intp)


def _load_cifar10(spec: DatasetSpec, data_dir):
    if not spec.batches or spec.test_batch is None:
        raise ValueError("cifar10_binary needs 'batches' and 'test_batch' paths")
    xs, ys = [], []
    for batch in spec.batches:
        x, y = _read_cifar_batch(_resolve(batch, data_dir))
        xs.append(x)
        ys.append(y)
    train = (np.concatenate(xs), np.concatenate(ys))
    test = _read_cifar_batch(_resolve(spec.test_batch, data_dir))
    return train, test
