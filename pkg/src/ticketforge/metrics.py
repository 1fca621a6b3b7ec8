"""Search-quality metrics and cross-run aggregation.

Gains are computed per run against that run's own dense baseline and
only then averaged; aggregating means first and taking one gain at the
end is a different (wrong) statistic, and the test suite pins the
difference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ticket_search import RunRecord, WinningTickets

DENSE = "Dense"
BEST_SPARSE = "BestSparse"
SPARSEST_MATCHING = "SparsestMatching"

VARIANTS = (DENSE, BEST_SPARSE, SPARSEST_MATCHING)


@dataclass(frozen=True)
class AggregateStat:
    """Mean and population standard deviation of n values."""

    mean: float
    std: float
    n: int

    @staticmethod
    def of(values: Sequence[float]) -> "AggregateStat":
        if len(values) == 0:
            raise ValueError("cannot aggregate zero values")
        arr = np.asarray(values, dtype=np.float64)
        return AggregateStat(float(arr.mean()), float(arr.std()), len(values))


@dataclass(frozen=True)
class VariantSummary:
    trajectory_length: AggregateStat
    tl_gain_pct: AggregateStat
    test_acc: AggregateStat
    acc_gain_pct: AggregateStat


@dataclass(frozen=True)
class ExperimentSummary:
    """One architecture's aggregate over repeated searches."""

    architecture: str
    variants: dict[str, VariantSummary]
    success_rate_pct: float
    lts_score: float
    n_total: int
    n_success: int
    n_completed: int


def success_rate(n_success: int, n_total: int) -> float:
    """Percentage of searches that yielded at least one winning ticket."""
    if n_total < 1:
        raise ValueError("n_total must be at least 1")
    if not 0 <= n_success <= n_total:
        raise ValueError("need 0 <= n_success <= n_total")
    return n_success / n_total * 100.0


def accuracy_gain(a_sparse: float, a_dense: float) -> float:
    """Percentage test-accuracy improvement of a sparse model over its dense baseline."""
    if a_dense <= 0:
        raise ValueError("dense accuracy must be positive")
    return (a_sparse - a_dense) / a_dense * 100.0


def lts_score(a_gain_pct: float, success_rate_pct: float) -> float:
    """Accuracy gain weighted by the success rate (entering as a fraction).

    Quantifies what a search is worth under a finite budget: the gain a
    winning ticket brings, discounted by how often one is found.  A
    negative gain gives a negative score; no clamping.
    """
    if not 0.0 <= success_rate_pct <= 100.0:
        raise ValueError("success_rate_pct must lie in [0, 100]")
    return a_gain_pct * (success_rate_pct / 100.0)


def tl_gain(tl_sparse: float, tl_dense: float) -> float:
    """Percentage change of trajectory length relative to the dense model."""
    if tl_dense <= 0:
        raise ValueError("dense trajectory length must be positive")
    return (tl_sparse - tl_dense) / tl_dense * 100.0


def summarize(
    runs: Sequence[tuple[RunRecord, Optional[WinningTickets]]],
    architecture: Optional[str] = None,
) -> ExperimentSummary:
    """Aggregate repeated searches of one architecture.

    Dense statistics average over all completed runs; sparse-variant
    statistics average over successful runs only (unsuccessful runs have
    no winning ticket to aggregate).  The success rate counts every
    attempted run, failed ones included.
    """
    if not runs:
        raise ValueError("no runs to summarize")
    archs = {rec.arch for rec, _ in runs}
    if len(archs) > 1:
        raise ValueError(f"runs mix architectures: {sorted(archs)}")
    if architecture is None:
        architecture = next(iter(archs))

    completed = [(rec, t) for rec, t in runs if rec.complete]
    if not completed:
        raise ValueError("no completed runs to summarize")
    successes = [(rec, t) for rec, t in completed if t is not None and t.success]

    n_total = len(runs)
    n_success = len(successes)
    sr = success_rate(n_success, n_total)

    dense_stages = [rec.stages[0] for rec, _ in completed]
    zero = AggregateStat(0.0, 0.0, len(completed))
    variants = {
        DENSE: VariantSummary(
            trajectory_length=AggregateStat.of([s.trajectory_length for s in dense_stages]),
            tl_gain_pct=zero,
            test_acc=AggregateStat.of([s.test_acc for s in dense_stages]),
            acc_gain_pct=zero,
        )
    }

    score = 0.0
    if successes:
        for name, pick in (
            (BEST_SPARSE, lambda t: t.best_sparse),
            (SPARSEST_MATCHING, lambda t: t.sparsest_matching),
        ):
            tls, tlg, accs, accg = [], [], [], []
            for rec, tickets in successes:
                dense = rec.stages[0]
                stage = rec.stages[pick(tickets)]
                tls.append(stage.trajectory_length)
                tlg.append(tl_gain(stage.trajectory_length, dense.trajectory_length))
                accs.append(stage.test_acc)
                accg.append(accuracy_gain(stage.test_acc, dense.test_acc))
            variants[name] = VariantSummary(
                trajectory_length=AggregateStat.of(tls),
                tl_gain_pct=AggregateStat.of(tlg),
                test_acc=AggregateStat.of(accs),
                acc_gain_pct=AggregateStat.of(accg),
            )
        score = lts_score(variants[BEST_SPARSE].acc_gain_pct.mean, sr)

    return ExperimentSummary(
        architecture=architecture,
        variants=variants,
        success_rate_pct=sr,
        lts_score=score,
        n_total=n_total,
        n_success=n_success,
        n_completed=len(completed),
    )
