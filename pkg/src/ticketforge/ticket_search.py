"""Iterative train-prune-rewind search and winning-ticket identification.

One search runs ``stages`` rounds of: train the current (masked) network
to early stop, score survivors with LAMP, prune the lowest-scored
fraction globally, and rewind survivors to the stored initial weights.
A final training pass on the last mask is included, so a record holds
``stages + 1`` trained models: the dense stage 0 plus one per sparsity
level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .network import NetworkSpec, NumericalOverflowError, init_kaiming_uniform
from .pruning import (
    MaskSet,
    apply_mask,
    compose_masks,
    lamp_scores,
    mask_digest,
    select_prune,
    sparsity,
)
from .rng import RngState
from .trajectory import CircleProbe, Projection2D, make_probe, make_projection, measure
from .training import TrainConfig, evaluate_accuracy, train_until_early_stop

# Fixed sub-stream layout of a run's RngState; part of the determinism contract.
INIT_STREAM = 0
PROBE_STREAM = 1
PROJECTION_STREAM = 2
STAGE_TRAIN_STREAM_BASE = 16


class IncompleteRunError(ValueError):
    """Winning tickets were requested from a failed or truncated run."""


@dataclass(frozen=True)
class TicketSearchConfig:
    train: TrainConfig
    stages: int = 5
    prune_fraction: float = 0.16
    probe_points: int = 1000
    probe_radius: float = 1.0

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("need at least one pruning stage")
        if not 0.0 < self.prune_fraction < 1.0:
            raise ValueError("prune_fraction must lie strictly between 0 and 1")
        if self.probe_points < 3:
            raise ValueError("probe_points must be at least 3")
        if self.probe_radius <= 0:
            raise ValueError("probe_radius must be positive")


@dataclass(frozen=True)
class StageRecord:
    stage: int
    surviving_fraction: float
    val_acc: float
    test_acc: float
    trajectory_length: float
    epochs_run: int


@dataclass
class RunRecord:
    """Everything one train-prune-rewind search produced."""

    run_id: str
    seed: int
    arch: str
    stages: list[StageRecord]
    mask_digests: list[str] = field(default_factory=list)
    status: str = "complete"

    @property
    def complete(self) -> bool:
        return self.status == "complete"


@dataclass(frozen=True)
class WinningTickets:
    """Identified winning stages; both indices are present iff ``success``."""

    success: bool
    best_sparse: Optional[int] = None
    sparsest_matching: Optional[int] = None


def run_ticket_search(
    spec: NetworkSpec,
    splits,
    cfg: TicketSearchConfig,
    rng: RngState,
    *,
    probe: Optional[CircleProbe] = None,
    projection: Optional[Projection2D] = None,
    run_id: str = "run",
    arch: str = "",
    stage_hook: Optional[Callable[[int, object, MaskSet], None]] = None,
    trained_hook: Optional[Callable[[int, object], None]] = None,
) -> RunRecord:
    """Execute one full ticket search.

    ``probe`` and ``projection`` default to run-local seeded instances
    but a harness normally passes experiment-wide ones so trajectory
    lengths are comparable across runs.  ``stage_hook(k, start_params,
    mask)`` fires before each stage trains and ``trained_hook(k,
    trained_params)`` right after, which is how tests observe rewound
    and trained weights.  A training overflow marks the run failed and
    returns the partial record.
    """
    init_params = init_kaiming_uniform(spec, rng.at(INIT_STREAM))
    if probe is None:
        input_dim = int(np.prod(spec.input_shape))
        probe = make_probe(input_dim, cfg.probe_points, cfg.probe_radius, rng.at(PROBE_STREAM))
    if projection is None:
        projection = make_projection(spec.num_classes, rng.at(PROJECTION_STREAM))

    record = RunRecord(run_id=run_id, seed=rng.seed, arch=arch, stages=[])
    mask = MaskSet.full(spec)
    stage_masks: list[MaskSet] = []
    start_params = init_params.copy()
    for k in range(cfg.stages + 1):
        if stage_hook is not None:
            stage_hook(k, start_params, mask)
        try:
            trained, val_acc, epochs = train_until_early_stop(
                spec,
                start_params,
                mask,
                splits.train,
                splits.val,
                cfg.train,
                rng.at(STAGE_TRAIN_STREAM_BASE + k),
            )
        except NumericalOverflowError:
            record.status = "failed"
            return record
        if trained_hook is not None:
            trained_hook(k, trained)
        record.stages.append(
            StageRecord(
                stage=k,
                surviving_fraction=sparsity(mask),
                val_acc=val_acc,
                test_acc=evaluate_accuracy(spec, trained, mask, splits.test),
                trajectory_length=measure(spec, trained, mask, probe, projection).length,
                epochs_run=epochs,
            )
        )
        if k == cfg.stages:
            break
        stage_mask = select_prune(lamp_scores(trained, mask), mask, cfg.prune_fraction).mask
        stage_masks.append(stage_mask)
        # Product over the stage-mask history is the canonical rewind mask;
        # nesting makes it equal the latest stage mask, which we verify.
        mask = compose_masks(stage_masks)
        if any(
            not np.array_equal(a, b) for a, b in zip(mask.layers, stage_mask.layers)
        ):
            raise RuntimeError("stage masks are not nested")
        record.mask_digests.append(
            mask_digest(mask, record.mask_digests[-1] if record.mask_digests else None)
        )
        start_params = apply_mask(init_params, mask)
    return record


def identify_winning_tickets(run: RunRecord) -> WinningTickets:
    """Pick the best-sparse and sparsest-matching stages of a completed run.

    The dense baseline is stage 0's test accuracy.  The search succeeds
    when any pruned stage tests at least as well; the best-sparse stage
    maximizes test accuracy (accuracy ties go to the sparser stage) and
    the sparsest-matching stage is the sparsest one still matching the
    dense baseline.
    """
    if not run.complete:
        raise IncompleteRunError(f"run {run.run_id} has status {run.status!r}")
    if len(run.stages) < 2:
        raise IncompleteRunError(f"run {run.run_id} has no pruned stages")
    dense_acc = run.stages[0].test_acc
    pruned = run.stages[1:]
    matching = [s.stage for s in pruned if s.test_acc >= dense_acc]
    if not matching:
        return WinningTickets(success=False)
    best_acc = max(s.test_acc for s in pruned)
    best_sparse = max(s.stage for s in pruned if s.test_acc == best_acc)
    return WinningTickets(
        success=True,
        best_sparse=best_sparse,
        sparsest_matching=max(matching),
    )
