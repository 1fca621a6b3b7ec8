"""LAMP scoring, global score-threshold pruning, and cumulative mask algebra.

Pruning fractions apply to the *currently surviving* weights, so repeated
stages compound geometrically; fraction-of-original is the rejected
alternative.  All tie-breaks are by ascending flat index (and layer index
across layers) so runs are bitwise reproducible.  Biases are never pruned.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .network import NetworkSpec, Parameters, ShapeMismatchError


@dataclass
class MaskSet:
    """Per-layer binary survivor indicators, congruent with the weight arrays."""

    layers: list[np.ndarray]

    def __post_init__(self):
        self.layers = [np.ascontiguousarray(m, dtype=np.uint8) for m in self.layers]
        for m in self.layers:
            if m.size and m.max() > 1:
                raise ValueError("mask entries must be 0 or 1")

    @staticmethod
    def full(spec: NetworkSpec) -> "MaskSet":
        return MaskSet([np.ones(s, dtype=np.uint8) for s in spec.weight_shapes()])

    @staticmethod
    def full_like(params: Parameters) -> "MaskSet":
        return MaskSet([np.ones_like(w, dtype=np.uint8) for w in params.weights])

    def copy(self) -> "MaskSet":
        return MaskSet([m.copy() for m in self.layers])

    @property
    def surviving_count(self) -> int:
        return int(sum(int(m.sum()) for m in self.layers))

    @property
    def total_count(self) -> int:
        return sum(m.size for m in self.layers)


@dataclass
class LampScoreSet:
    """Per-layer LAMP scores in [0, 1]; masked-out weights score 0."""

    layers: list[np.ndarray]


@dataclass(frozen=True)
class PruneResult:
    """Stage mask plus how many weights the stage actually removed."""

    mask: MaskSet
    pruned: int

    @property
    def is_noop(self) -> bool:
        return self.pruned == 0


def lamp_scores(params: Parameters, mask: MaskSet) -> LampScoreSet:
    """Layer-adaptive magnitude scores of the surviving weights.

    Within each layer the surviving weights are ranked by ascending
    squared magnitude (ties by ascending flat index) and each weight is
    scored as its squared magnitude divided by the sum of squared
    magnitudes of all weights at or above it in that ranking.  The
    per-layer maximum therefore scores exactly 1.0, which is what makes
    the scores comparable across layers.  A layer whose surviving
    weights are all zero scores 0 everywhere.
    """
    _check_congruent(params, mask)
    scored = []
    for w, m in zip(params.weights, mask.layers):
        flat_w = w.ravel()
        scores = np.zeros(flat_w.shape[0], dtype=np.float64)
        surv = np.flatnonzero(m.ravel())
        if surv.size:
            sq = flat_w[surv] ** 2
            order = np.lexsort((surv, sq))
            sq_sorted = sq[order]
            if sq_sorted[-1] > 0.0:
                suffix = np.cumsum(sq_sorted[::-1])[::-1]
                scores[surv[order]] = sq_sorted / suffix
        scored.append(scores.reshape(w.shape))
    return LampScoreSet(scored)


def select_prune(scores: LampScoreSet, mask: MaskSet, fraction: float) -> PruneResult:
    """Remove the floor(fraction * survivors) globally lowest-scored weights.

    Score ties break by ascending (layer, flat index).  Previously pruned
    weights stay pruned; when the floor yields zero the returned mask is
    an unchanged copy, flagged by ``pruned == 0``.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    layer_idx, flat_idx, vals = [], [], []
    for li, (s, m) in enumerate(zip(scores.layers, mask.layers)):
        surv = np.flatnonzero(m.ravel())
        layer_idx.append(np.full(surv.shape, li, dtype=np.intp))
        flat_idx.append(surv)
        vals.append(s.ravel()[surv])
    layer_idx = np.concatenate(layer_idx)
    flat_idx = np.concatenate(flat_idx)
    vals = np.concatenate(vals)

    surviving = vals.shape[0]
    n_prune = math.floor(fraction * surviving)
    new_mask = mask.copy()
    if n_prune == 0:
        return PruneResult(new_mask, 0)
    order = np.lexsort((flat_idx, layer_idx, vals))
    victims = order[:n_prune]
    for li in np.unique(layer_idx[victims]):
        sel = victims[layer_idx[victims] == li]
        new_mask.layers[li].ravel()[flat_idx[sel]] = 0
    return PruneResult(new_mask, int(n_prune))


def compose_masks(masks: Sequence[MaskSet], like: Optional[MaskSet] = None) -> MaskSet:
    """Elementwise product of a mask sequence; empty input yields all-ones.

    The all-ones fallback needs ``like`` for shapes.
    """
    masks = list(masks)
    if not masks:
        if like is None:
            raise ValueError("composing an empty mask list requires a template")
        return MaskSet([np.ones_like(m) for m in like.layers])
    out = masks[0].copy()
    for other in masks[1:]:
        if len(other.layers) != len(out.layers):
            raise ShapeMismatchError("mask layer counts differ")
        for acc, m in zip(out.layers, other.layers):
            if acc.shape != m.shape:
                raise ShapeMismatchError(f"mask shapes differ: {acc.shape} vs {m.shape}")
            acc &= m
    return out


def apply_mask(init_params: Parameters, mask: MaskSet) -> Parameters:
    """Zero out pruned weights, keeping survivors (and all biases) bitwise intact."""
    _check_congruent(init_params, mask)
    weights = [np.where(m != 0, w, 0.0) for w, m in zip(init_params.weights, mask.layers)]
    biases = [b.copy() for b in init_params.biases]
    return Parameters(weights, biases)


def sparsity(mask: MaskSet) -> float:
    """Fraction of weights still surviving, in [0, 1]."""
    total = mask.total_count
    if total == 0:
        return 0.0
    return mask.surviving_count / total


def _check_congruent(params: Parameters, mask: MaskSet):
    if len(mask.layers) != len(params.weights):
        raise ShapeMismatchError("mask layer count does not match parameters")
    for w, m in zip(params.weights, mask.layers):
        if w.shape != m.shape:
            raise ShapeMismatchError(f"mask shape {m.shape} != weight shape {w.shape}")


# --- serialization: one record per layer, packed little-endian bitset ----


def pack_mask(mask: MaskSet) -> list[dict]:
    """Mask as JSON-able records: layer index, shape, hex bitset (row-major, little-endian)."""
    records = []
    for i, m in enumerate(mask.layers):
        bits = np.packbits(m.ravel(), bitorder="little")
        records.append({"layer": i, "shape": list(m.shape), "bits": bits.tobytes().hex()})
    return records


def unpack_mask(records: Iterable[dict]) -> MaskSet:
    layers = []
    for rec in sorted(records, key=lambda r: r["layer"]):
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(bytes.fromhex(rec["bits"]), dtype=np.uint8)
        flat = np.unpackbits(raw, count=count, bitorder="little")
        layers.append(flat.reshape(shape))
    return MaskSet(layers)


def mask_digest(mask: MaskSet, prev_digest: Optional[str] = None) -> str:
    """SHA-256 over the packed mask, chained onto the previous stage's digest."""
    h = hashlib.sha256()
    if prev_digest:
        h.update(bytes.fromhex(prev_digest))
    for rec in pack_mask(mask):
        h.update(str(rec["layer"]).encode())
        h.update(str(rec["shape"]).encode())
        h.update(bytes.fromhex(rec["bits"]))
    return h.hexdigest()
