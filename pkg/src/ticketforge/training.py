"""Softmax cross-entropy gradients, plain SGD, and early-stopped training."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .network import NetworkSpec, Parameters, _col2im, _run_forward, forward
from .rng import RngState

if TYPE_CHECKING:
    from .pruning import MaskSet


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one early-stopped training run.

    ``patience`` counts consecutive epochs without the validation
    accuracy improving by more than ``min_delta``; 0 stops at the first
    non-improving epoch.
    """

    learning_rate: float
    batch_size: int
    max_epochs: int
    patience: int = 5
    min_delta: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if self.min_delta < 0:
            raise ValueError("min_delta must be non-negative")


def _softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy loss and d(loss)/d(logits)."""
    n = logits.shape[0]
    zmax = logits.max(axis=1, keepdims=True)
    shifted = logits - zmax
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + zmax
    log_probs = logits - logsumexp
    loss = float(-log_probs[np.arange(n), labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def loss_and_grads(
    spec: NetworkSpec,
    params: Parameters,
    mask: Optional["MaskSet"],
    batch: np.ndarray,
    labels: np.ndarray,
):
    """Mean softmax cross-entropy and its gradient w.r.t. every parameter.

    Gradients of masked-out weights are exactly zero: pruned weights
    never receive updates.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != np.asarray(batch).shape[0]:
        raise ValueError("labels must be a 1-D array matching the batch")
    if labels.min() < 0 or labels.max() >= spec.num_classes:
        raise ValueError(f"labels must lie in [0, {spec.num_classes})")

    with np.errstate(over="ignore", invalid="ignore"):
        logits, caches = _run_forward(spec, params, mask, batch, keep_caches=True)
    loss, delta = _softmax_cross_entropy(logits, labels.astype(np.intp))

    grad_w = [np.zeros_like(w) for w in params.weights]
    grad_b = [np.zeros_like(b) for b in params.biases]
    for cache in reversed(caches):
        kind = cache[0]
        if kind == "dense":
            _, p, h_in, w_eff = cache
            grad_w[p] = delta.T @ h_in
            grad_b[p] = delta.sum(axis=0)
            delta = delta @ w_eff
        elif kind == "conv":
            _, p, cols, x_shape, wflat, layer, out_h, out_w = cache
            n = delta.shape[0]
            dz = delta.reshape(n, layer.out_ch, out_h * out_w)
            grad_w[p] = np.einsum("nop,nkp->ok", dz, cols).reshape(params.weights[p].shape)
            grad_b[p] = dz.sum(axis=(0, 2))
            dcols = np.einsum("ok,nop->nkp", wflat, dz)
            delta = _col2im(
                dcols, x_shape, layer.kernel[0], layer.kernel[1], layer.stride, out_h, out_w
            )
        elif kind == "relu":
            delta = np.where(cache[1], delta, 0.0)
        elif kind == "maxpool":
            _, arg, x_shape, win = cache
            n, c, hh, ww = x_shape
            oh, ow = hh // win, ww // win
            dtiles = np.zeros((n, c, oh, ow, win * win))
            np.put_along_axis(dtiles, arg[..., None], delta[..., None], axis=-1)
            delta = (
                dtiles.reshape(n, c, oh, ow, win, win)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(x_shape)
            )
        else:  # flatten
            delta = delta.reshape(cache[1])

    if mask is not None:
        grad_w = [np.where(m != 0, g, 0.0) for g, m in zip(grad_w, mask.layers)]
    return loss, Parameters(grad_w, grad_b)


def sgd_step(
    params: Parameters,
    grads: Parameters,
    mask: Optional["MaskSet"],
    lr: float,
) -> Parameters:
    """One plain-SGD update, w' = w - lr * g; masked-out entries stay untouched."""
    weights = []
    for i, (w, g) in enumerate(zip(params.weights, grads.weights)):
        if mask is not None:
            g = np.where(mask.layers[i] != 0, g, 0.0)
        weights.append(w - lr * g)
    biases = [b - lr * g for b, g in zip(params.biases, grads.biases)]
    return Parameters(weights, biases)


def evaluate_accuracy(
    spec: NetworkSpec,
    params: Parameters,
    mask: Optional["MaskSet"],
    split,
) -> float:
    """Fraction of argmax-correct predictions; argmax ties go to the lowest class."""
    x, y = split
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty split")
    logits = forward(spec, params, mask, x)
    preds = logits.argmax(axis=1)
    return float((preds == np.asarray(y)).mean())


def train_until_early_stop(
    spec: NetworkSpec,
    params: Parameters,
    mask: Optional["MaskSet"],
    train_split,
    val_split,
    cfg: TrainConfig,
    rng: RngState,
):
    """Mini-batch SGD with best-epoch restoration.

    Stops once validation accuracy has failed to improve by more than
    ``min_delta`` for ``patience`` consecutive epochs (or at
    ``max_epochs``), and returns the parameters from the best-validation
    epoch along with that accuracy and the number of epochs run.
    """
    train_x, train_y = train_split
    n = len(train_y)
    if n == 0 or len(val_split[1]) == 0:
        raise ValueError("training and validation splits must be non-empty")
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds training-set size {n}")

    gen = rng.generator()
    params = params.copy()
    best_params = params
    best_val = -np.inf
    stale = 0
    epochs_run = 0
    for _ in range(cfg.max_epochs):
        order = gen.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grads = loss_and_grads(spec, params, mask, train_x[idx], train_y[idx])
            params = sgd_step(params, grads, mask, cfg.learning_rate)
        epochs_run += 1
        val_acc = evaluate_accuracy(spec, params, mask, val_split)
        if val_acc > best_val + cfg.min_delta:
            best_val = val_acc
            best_params = params
            stale = 0
        else:
            stale += 1
            if stale >= max(cfg.patience, 1):
                break
    return best_params, float(best_val), epochs_run
