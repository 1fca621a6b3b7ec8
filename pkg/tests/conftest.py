"""Shared fixtures and independent oracles.

The oracles here deliberately re-derive results by the dumbest route
available (explicit per-element sums, nested loops, finite differences)
so they cannot share a bug with the implementations they check.
"""

from __future__ import annotations

import numpy as np
import pytest

from ticketforge.network import (
    Conv2d,
    Dense,
    Flatten,
    MaxPool,
    NetworkSpec,
    Parameters,
    ReLU,
)
from ticketforge.pruning import MaskSet
from ticketforge.rng import RngState
from ticketforge.training import loss_and_grads


def lamp_bruteforce(weights: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """O(n^2) LAMP scores: for each survivor, explicitly sum every surviving
    weight at or above it in the (squared magnitude, flat index) order."""
    flat_w = weights.ravel().astype(np.float64)
    flat_m = mask.ravel().astype(bool)
    sq = flat_w**2
    scores = np.zeros_like(flat_w)
    surv = np.flatnonzero(flat_m)
    for u in surv:
        at_or_above = [
            v for v in surv if sq[v] > sq[u] or (sq[v] == sq[u] and v >= u)
        ]
        denom = sum(sq[v] for v in at_or_above)
        scores[u] = sq[u] / denom if denom > 0 else 0.0
    return scores.reshape(weights.shape)


def lamp_bruteforce_chunked(weights: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Same per-weight definition as :func:`lamp_bruteforce`, with the inner
    sum vectorized in chunks so 10^4-weight layers stay tractable."""
    flat_w = weights.ravel().astype(np.float64)
    flat_m = mask.ravel().astype(bool)
    sq = flat_w**2
    scores = np.zeros_like(flat_w)
    surv = np.flatnonzero(flat_m)
    sq_surv = sq[surv]
    for start in range(0, surv.size, 256):
        block = surv[start : start + 256]
        sq_block = sq[block]
        above = sq_surv[None, :] > sq_block[:, None]
        tied = (sq_surv[None, :] == sq_block[:, None]) & (surv[None, :] >= block[:, None])
        denoms = np.where(above | tied, sq_surv[None, :], 0.0).sum(axis=1)
        with np.errstate(invalid="ignore"):
            scores[block] = np.where(denoms > 0, sq_block / denoms, 0.0)
    return scores.reshape(weights.shape)


def conv_bruteforce(x, w, b, stride):
    """Nested-loop 2D convolution (valid padding), independent of im2col."""
    n, _, h, wd = x.shape
    out_ch, in_ch, kh, kw = w.shape
    oh = (h - kh) // stride + 1
    ow = (wd - kw) // stride + 1
    out = np.zeros((n, out_ch, oh, ow))
    for img in range(n):
        for oc in range(out_ch):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(in_ch):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += (
                                    w[oc, ic, di, dj]
                                    * x[img, ic, i * stride + di, j * stride + dj]
                                )
                    out[img, oc, i, j] = acc + b[oc]
    return out


def finite_difference_grads(spec, params, mask, batch, labels, h=1e-5):
    """Central-difference gradient of the mean cross-entropy loss."""

    def loss_at(p):
        return loss_and_grads(spec, p, mask, batch, labels)[0]

    grads = Parameters(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )
    for arrays, out in ((params.weights, grads.weights), (params.biases, grads.biases)):
        for li, arr in enumerate(arrays):
            flat = arr.ravel()
            for j in range(flat.size):
                original = flat[j]
                flat[j] = original + h
                hi = loss_at(params)
                flat[j] = original - h
                lo = loss_at(params)
                flat[j] = original
                out[li].ravel()[j] = (hi - lo) / (2 * h)
    return grads


def max_relative_error(analytic: Parameters, numeric: Parameters) -> float:
    worst = 0.0
    for a_arrs, n_arrs in (
        (analytic.weights, numeric.weights),
        (analytic.biases, numeric.biases),
    ):
        for a, n in zip(a_arrs, n_arrs):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


@pytest.fixture
def tiny_mlp_spec():
    return NetworkSpec(
        layers=(Dense(2, 6), ReLU(), Dense(6, 3)),
        input_shape=(2,),
        num_classes=3,
    )


@pytest.fixture
def tiny_cnn_spec():
    return NetworkSpec(
        layers=(
            Conv2d(1, 2, (3, 3)),
            ReLU(),
            MaxPool(2),
            Flatten(),
            Dense(8, 3),
        ),
        input_shape=(1, 6, 6),
        num_classes=3,
    )


def full_mask(params: Parameters) -> MaskSet:
    return MaskSet.full_like(params)


def seeded_params(spec: NetworkSpec, seed: int) -> Parameters:
    from ticketforge.network import init_kaiming_uniform

    return init_kaiming_uniform(spec, RngState(seed))
