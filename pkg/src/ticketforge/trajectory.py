"""Expressivity probe: push an input-space circle through a network and
measure the arc length of the 2D-projected output curve.

The probe circle lives on a random orthonormal 2-plane of the input
space; the output tap point is the pre-softmax logits, projected onto a
seeded random orthonormal pair that stays frozen across every
measurement being compared.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import NetworkSpec, Parameters, ShapeMismatchError, forward
from .rng import RngState


@dataclass(frozen=True)
class CircleProbe:
    """Sampled circle x(t_i) = radius * (u cos t_i + v sin t_i), t_i = 2*pi*i/n."""

    points: np.ndarray  # (n_points, input_dim)
    basis_u: np.ndarray
    basis_v: np.ndarray
    radius: float

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def input_dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class Projection2D:
    """Orthonormal pair in logit space; columns of ``axes`` (num_classes, 2)."""

    axes: np.ndarray


@dataclass(frozen=True)
class TrajectoryResult:
    length: float
    projected: np.ndarray  # (n_points, 2)


def _orthonormal_pair(dim: int, gen: np.random.Generator):
    # Gram-Schmidt on standard-normal draws; redraw on (measure-zero) degeneracy.
    while True:
        u = gen.standard_normal(dim)
        nu = np.linalg.norm(u)
        if nu > 1e-12:
            u = u / nu
            break
    while True:
        v = gen.standard_normal(dim)
        v = v - (v @ u) * u
        nv = np.linalg.norm(v)
        if nv > 1e-12:
            return u, v / nv


def make_probe(input_dim: int, n_points: int, radius: float, rng: RngState) -> CircleProbe:
    """Build a deterministic circle probe on a random 2-plane of the input space."""
    if input_dim < 2:
        raise ValueError("probe needs an input space of dimension >= 2")
    if n_points < 3:
        raise ValueError("need at least 3 probe points")
    if radius <= 0:
        raise ValueError("radius must be positive")
    u, v = _orthonormal_pair(input_dim, rng.generator())
    t = 2.0 * np.pi * np.arange(n_points) / n_points
    points = radius * (np.cos(t)[:, None] * u + np.sin(t)[:, None] * v)
    return CircleProbe(points, u, v, float(radius))


def make_projection(output_dim: int, rng: RngState) -> Projection2D:
    """Random orthonormal pair in output space, frozen for an experiment."""
    if output_dim < 2:
        raise ValueError("projection needs an output space of dimension >= 2")
    u, v = _orthonormal_pair(output_dim, rng.generator())
    return Projection2D(np.stack([u, v], axis=1))


def polyline_length(points: np.ndarray, closed: bool = False) -> float:
    """Sum of Euclidean segment lengths; ``closed`` adds the wrap-around segment."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two points")
    diffs = np.diff(pts, axis=0)
    total = float(np.sqrt((diffs**2).sum(axis=1)).sum())
    if closed:
        total += float(np.linalg.norm(pts[0] - pts[-1]))
    return total


def measure(
    spec: NetworkSpec,
    params: Parameters,
    mask,
    probe: CircleProbe,
    projection: Projection2D,
) -> TrajectoryResult:
    """Trajectory length of the network output over the probe circle.

    Probe points are forwarded to pre-softmax logits, projected onto the
    2D plane, and measured as a closed polyline.
    """
    input_dim = int(np.prod(spec.input_shape))
    if probe.input_dim != input_dim:
        raise ShapeMismatchError(
            f"probe dimension {probe.input_dim} != network input dimension {input_dim}"
        )
    if projection.axes.shape != (spec.num_classes, 2):
        raise ShapeMismatchError(
            f"projection shape {projection.axes.shape} != ({spec.num_classes}, 2)"
        )
    batch = probe.points.reshape(probe.n_points, *spec.input_shape)
    logits = forward(spec, params, mask, batch)
    projected = logits @ projection.axes
    return TrajectoryResult(polyline_length(projected, closed=True), projected)


def dump_projected_points(path, result: TrajectoryResult):
    """Write the projected curve as CSV rows (t, p1, p2) for plotting."""
    n = result.projected.shape[0]
    t = 2.0 * np.pi * np.arange(n) / n
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "p1", "p2"])
        for ti, (p1, p2) in zip(t, result.projected):
            writer.writerow([repr(float(ti)), repr(float(p1)), repr(float(p2))])
