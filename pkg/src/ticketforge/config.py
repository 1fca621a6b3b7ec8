"""Experiment configuration: strict JSON schema, defaults, and digests.

Configs are plain JSON.  Unknown keys are errors (with a closest-match
suggestion) so typos cannot silently fall back to defaults, and every
violation found is reported in one pass.
"""

from __future__ import annotations

import difflib
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .datasets import DatasetSpec
from .network import Conv2d, Dense, Flatten, MaxPool, NetworkSpec, ReLU
from .ticket_search import TicketSearchConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Config file failed to parse or validate; message enumerates every problem."""


@dataclass(frozen=True)
class ArchitectureConfig:
    id: str
    kind: str  # "mlp" or "cnn"
    hidden: tuple[int, ...] = ()
    conv_channels: tuple[int, ...] = ()
    kernel: int = 5
    pool: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    master_seed: int
    n_runs: int
    output_dir: str
    architectures: tuple[ArchitectureConfig, ...]
    dataset: DatasetSpec
    search: TicketSearchConfig


_TOP_KEYS = {"name", "master_seed", "n_runs", "output_dir", "architectures", "dataset",
             "search", "probe"}
_SEARCH_KEYS = {"stages", "prune_fraction", "train"}
_TRAIN_KEYS = {"learning_rate", "batch_size", "max_epochs", "patience", "min_delta"}
_PROBE_KEYS = {"n_points", "radius"}
_NORM_KEYS = {"offset", "scale"}
_ARCH_KEYS = {"id", "type", "hidden", "conv_channels", "kernel", "pool"}
_DATASET_KEYS = {
    "two_moons": {"source", "n_train", "n_test", "val_fraction", "normalization", "noise"},
    "gaussian_blobs": {"source", "n_train", "n_test", "val_fraction", "normalization",
                       "classes", "dim", "spread", "center_scale"},
    "mnist_idx": {"source", "n_train", "n_test", "val_fraction", "normalization",
                  "train_images", "train_labels", "test_images", "test_labels"},
    "cifar10_binary": {"source", "n_train", "n_test", "val_fraction", "normalization",
                       "batches", "test_batch"},
}

_TRAIN_DEFAULTS = {"learning_rate": 0.1, "batch_size": 32, "max_epochs": 50,
                   "patience": 5, "min_delta": 0.0}


class _Collector:
    def __init__(self):
        self.problems: list[str] = []

    def add(self, where: str, message: str):
        self.problems.append(f"{where}: {message}")

    def check_keys(self, where: str, obj: dict, allowed: set[str]):
        for key in obj:
            if key not in allowed:
                hint = difflib.get_close_matches(key, allowed, n=1)
                suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
                self.add(where, f"unknown key {key!r}{suffix}")

    def expect(self, where: str, obj: dict, key: str, types, required=True, default=None):
        if key not in obj:
            if required:
                self.add(where, f"missing required key {key!r}")
            return default
        value = obj[key]
        if isinstance(value, bool) or not isinstance(value, types):
            names = types.__name__ if isinstance(types, type) else "/".join(
                t.__name__ for t in types
            )
            self.add(f"{where}.{key}", f"expected {names}, got {type(value).__name__}")
            return default
        return value

    def raise_if_any(self, path):
        if self.problems:
            lines = "\n  - ".join(self.problems)
            raise ConfigError(f"invalid config {path}:\n  - {lines}")


def load_config(path, data_dir=None) -> ExperimentConfig:
    """Read, validate, and default-fill an experiment config file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}, "
            f"column {exc.colno}"
        ) from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")

    c = _Collector()
    c.check_keys("config", raw, _TOP_KEYS)
    name = c.expect("config", raw, "name", str)
    master_seed = c.expect("config", raw, "master_seed", int)
    if master_seed is not None and master_seed < 0:
        c.add("config.master_seed", "must be non-negative")
    n_runs = c.expect("config", raw, "n_runs", int, required=False, default=50)
    if n_runs is not None and n_runs < 1:
        c.add("config.n_runs", "must be at least 1")
    output_dir = c.expect("config", raw, "output_dir", str)

    architectures = _parse_architectures(c, raw.get("architectures"))
    dataset = _parse_dataset(c, raw.get("dataset"), data_dir)
    search = _parse_search(c, raw.get("search", {}), raw.get("probe", {}))

    c.raise_if_any(path)
    return ExperimentConfig(
        name=name,
        master_seed=master_seed,
        n_runs=n_runs,
        output_dir=output_dir,
        architectures=tuple(architectures),
        dataset=dataset,
        search=search,
    )


def _parse_architectures(c: _Collector, raw) -> list[ArchitectureConfig]:
    if raw is None:
        c.add("config", "missing required key 'architectures'")
        return []
    if not isinstance(raw, list) or not raw:
        c.add("config.architectures", "must be a non-empty list")
        return []
    out = []
    seen = set()
    for i, entry in enumerate(raw):
        where = f"config.architectures[{i}]"
        if not isinstance(entry, dict):
            c.add(where, "must be an object")
            continue
        c.check_keys(where, entry, _ARCH_KEYS)
        arch_id = c.expect(where, entry, "id", str)
        kind = c.expect(where, entry, "type", str)
        if arch_id:
            if arch_id in seen:
                c.add(where, f"duplicate architecture id {arch_id!r}")
            seen.add(arch_id)
        if kind not in ("mlp", "cnn"):
            c.add(f"{where}.type", f"must be 'mlp' or 'cnn', got {kind!r}")
            continue
        hidden = _int_list(c, f"{where}.hidden", entry.get("hidden"),
                           required=(kind == "mlp"))
        conv = _int_list(c, f"{where}.conv_channels", entry.get("conv_channels"),
                         required=(kind == "cnn"))
        kernel = c.expect(where, entry, "kernel", int, required=False, default=5)
        pool = c.expect(where, entry, "pool", int, required=False, default=2)
        if kind == "mlp" and (entry.get("conv_channels") or "kernel" in entry or "pool" in entry):
            c.add(where, "conv settings are only valid for type 'cnn'")
        out.append(
            ArchitectureConfig(
                id=arch_id or f"arch{i}",
                kind=kind,
                hidden=tuple(hidden or ()),
                conv_channels=tuple(conv or ()),
                kernel=kernel,
                pool=pool,
            )
        )
    return out


def _int_list(c: _Collector, where: str, value, required: bool):
    if value is None:
        if required:
            c.add(where, "missing required list of positive integers")
        return []
    if (
        not isinstance(value, list)
        or not value
        or any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in value)
    ):
        c.add(where, "must be a non-empty list of positive integers")
        return []
    return value


def _parse_dataset(c: _Collector, raw, data_dir) -> Optional[DatasetSpec]:
    if raw is None:
        c.add("config", "missing required key 'dataset'")
        return None
    if not isinstance(raw, dict):
        c.add("config.dataset", "must be an object")
        return None
    source = c.expect("config.dataset", raw, "source", str)
    if source not in _DATASET_KEYS:
        c.add("config.dataset.source",
              f"must be one of {sorted(_DATASET_KEYS)}, got {source!r}")
        return None
    c.check_keys("config.dataset", raw, _DATASET_KEYS[source])

    kwargs = {"source": source}
    for key, types in (("n_train", int), ("n_test", int), ("val_fraction", (int, float)),
                       ("noise", (int, float)), ("classes", int), ("dim", int),
                       ("spread", (int, float)), ("center_scale", (int, float))):
        if key in raw:
            value = c.expect("config.dataset", raw, key, types)
            if value is not None:
                kwargs[key] = float(value) if types != int else value
    for key in ("train_images", "train_labels", "test_images", "test_labels", "test_batch"):
        if key in raw:
            kwargs[key] = c.expect("config.dataset", raw, key, str)
    if "batches" in raw:
        value = raw["batches"]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            c.add("config.dataset.batches", "must be a list of paths")
        else:
            kwargs["batches"] = tuple(value)
    if "normalization" in raw:
        norm = raw["normalization"]
        if not isinstance(norm, dict):
            c.add("config.dataset.normalization", "must be an object")
        else:
            c.check_keys("config.dataset.normalization", norm, _NORM_KEYS)
            offset = c.expect("config.dataset.normalization", norm, "offset",
                              (int, float), required=False, default=0.0)
            scale = c.expect("config.dataset.normalization", norm, "scale",
                             (int, float), required=False, default=1.0)
            kwargs["normalization"] = (float(offset), float(scale))
    elif source in ("mnist_idx", "cifar10_binary"):
        kwargs["normalization"] = (0.0, 255.0)

    if source == "mnist_idx":
        missing = [k for k in ("train_images", "train_labels", "test_images", "test_labels")
                   if not kwargs.get(k)]
        for k in missing:
            c.add(f"config.dataset.{k}", "required for mnist_idx")
    if source == "cifar10_binary":
        if not kwargs.get("batches"):
            c.add("config.dataset.batches", "required for cifar10_binary")
        if not kwargs.get("test_batch"):
            c.add("config.dataset.test_batch", "required for cifar10_binary")
    if c.problems:
        return None

    try:
        spec = DatasetSpec(**kwargs)
    except ValueError as exc:
        c.add("config.dataset", str(exc))
        return None

    for key in ("train_images", "train_labels", "test_images", "test_labels", "test_batch"):
        value = getattr(spec, key)
        if value is not None and not _resolves(value, data_dir):
            c.add(f"config.dataset.{key}", f"file not found: {value}")
    for batch in spec.batches:
        if not _resolves(batch, data_dir):
            c.add("config.dataset.batches", f"file not found: {batch}")
    return spec


def _resolves(path, data_dir) -> bool:
    p = Path(path)
    if not p.is_absolute() and data_dir is not None:
        p = Path(data_dir) / p
    return p.is_file()


def _parse_search(c: _Collector, raw_search, raw_probe) -> Optional[TicketSearchConfig]:
    if not isinstance(raw_search, dict):
        c.add("config.search", "must be an object")
        return None
    if not isinstance(raw_probe, dict):
        c.add("config.probe", "must be an object")
        return None
    c.check_keys("config.search", raw_search, _SEARCH_KEYS)
    c.check_keys("config.probe", raw_probe, _PROBE_KEYS)

    stages = c.expect("config.search", raw_search, "stages", int, required=False, default=5)
    fraction = c.expect("config.search", raw_search, "prune_fraction", (int, float),
                        required=False, default=0.16)
    raw_train = raw_search.get("train", {})
    if not isinstance(raw_train, dict):
        c.add("config.search.train", "must be an object")
        return None
    c.check_keys("config.search.train", raw_train, _TRAIN_KEYS)
    train_kwargs = dict(_TRAIN_DEFAULTS)
    for key in _TRAIN_KEYS:
        if key in raw_train:
            types = int if key in ("batch_size", "max_epochs", "patience") else (int, float)
            value = c.expect("config.search.train", raw_train, key, types)
            if value is not None:
                train_kwargs[key] = value
    n_points = c.expect("config.probe", raw_probe, "n_points", int,
                        required=False, default=1000)
    radius = c.expect("config.probe", raw_probe, "radius", (int, float),
                      required=False, default=1.0)
    if c.problems:
        return None
    try:
        return TicketSearchConfig(
            train=TrainConfig(
                learning_rate=float(train_kwargs["learning_rate"]),
                batch_size=train_kwargs["batch_size"],
                max_epochs=train_kwargs["max_epochs"],
                patience=train_kwargs["patience"],
                min_delta=float(train_kwargs["min_delta"]),
            ),
            stages=stages,
            prune_fraction=float(fraction),
            probe_points=n_points,
            probe_radius=float(radius),
        )
    except ValueError as exc:
        c.add("config.search", str(exc))
        return None


def build_network(arch: ArchitectureConfig, input_shape, num_classes: int) -> NetworkSpec:
    """Materialize an architecture entry against the dataset's shapes."""
    layers = []
    shape = tuple(input_shape)
    if arch.kind == "cnn":
        if len(shape) != 3:
            raise ConfigError(
                f"architecture {arch.id!r} needs image input (C, H, W), got {shape}"
            )
        channels = shape[0]
        for out_ch in arch.conv_channels:
            layers.append(Conv2d(channels, out_ch, (arch.kernel, arch.kernel)))
            layers.append(ReLU())
            layers.append(MaxPool(arch.pool))
            channels = out_ch
        layers.append(Flatten())
        h, w = shape[1], shape[2]
        for _ in arch.conv_channels:
            h = (h - arch.kernel + 1) // arch.pool
            w = (w - arch.kernel + 1) // arch.pool
        width = channels * h * w
    else:
        if len(shape) > 1:
            layers.append(Flatten())
        width = int(np.prod(shape)) if len(shape) > 1 else shape[0]
    for hidden in arch.hidden:
        layers.append(Dense(width, hidden))
        layers.append(ReLU())
        width = hidden
    layers.append(Dense(width, num_classes))
    return NetworkSpec(tuple(layers), tuple(input_shape), num_classes)


def resolved_dict(cfg: ExperimentConfig) -> dict:
    """Fully-defaulted config as plain JSON-able data."""
    dataset = {
        "source": cfg.dataset.source,
        "n_train": cfg.dataset.n_train,
        "n_test": cfg.dataset.n_test,
        "val_fraction": cfg.dataset.val_fraction,
        "normalization": list(cfg.dataset.normalization),
    }
    if cfg.dataset.source == "two_moons":
        dataset["noise"] = cfg.dataset.noise
    elif cfg.dataset.source == "gaussian_blobs":
        dataset.update(
            classes=cfg.dataset.classes,
            dim=cfg.dataset.dim,
            spread=cfg.dataset.spread,
            center_scale=cfg.dataset.center_scale,
        )
    elif cfg.dataset.source == "mnist_idx":
        dataset.update(
            train_images=cfg.dataset.train_images,
            train_labels=cfg.dataset.train_labels,
            test_images=cfg.dataset.test_images,
            test_labels=cfg.dataset.test_labels,
        )
    else:
        dataset.update(batches=list(cfg.dataset.batches), test_batch=cfg.dataset.test_batch)
    return {
        "name": cfg.name,
        "master_seed": cfg.master_seed,
        "n_runs": cfg.n_runs,
        "output_dir": cfg.output_dir,
        "architectures": [
            {
                "id": a.id,
                "type": a.kind,
                "hidden": list(a.hidden),
                "conv_channels": list(a.conv_channels),
                "kernel": a.kernel,
                "pool": a.pool,
            }
            for a in cfg.architectures
        ],
        "dataset": dataset,
        "search": {
            "stages": cfg.search.stages,
            "prune_fraction": cfg.search.prune_fraction,
            "train": {
                "learning_rate": cfg.search.train.learning_rate,
                "batch_size": cfg.search.train.batch_size,
                "max_epochs": cfg.search.train.max_epochs,
                "patience": cfg.search.train.patience,
                "min_delta": cfg.search.train.min_delta,
            },
        },
        "probe": {"n_points": cfg.search.probe_points, "radius": cfg.search.probe_radius},
    }


def config_digest(cfg: ExperimentConfig) -> str:
    """Hash of the result-determining config fields.

    Excludes name, n_runs, and output_dir so an experiment can be
    renamed, extended with more runs, or relocated and still resume.
    """
    payload = resolved_dict(cfg)
    for key in ("name", "n_runs", "output_dir"):
        payload.pop(key)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
