"""Desk-scale lottery-ticket laboratory.

Train small dense networks, search for winning tickets with iterative
LAMP-pruned train-prune-rewind rounds, probe expressivity via trajectory
length, and aggregate success-rate / gain metrics over repeated seeded
runs.
"""

from .config import (
    ArchitectureConfig,
    ConfigError,
    ExperimentConfig,
    build_network,
    config_digest,
    load_config,
)
from .datasets import DataFormatError, DatasetSpec, Splits, provision_dataset
from .harness import ArtifactError, emit_reports, run_experiment, write_summary
from .metrics import (
    AggregateStat,
    ExperimentSummary,
    accuracy_gain,
    lts_score,
    success_rate,
    summarize,
    tl_gain,
)
from .network import (
    Conv2d,
    Dense,
    Flatten,
    InvalidNetworkError,
    MaxPool,
    NetworkSpec,
    NumericalOverflowError,
    Parameters,
    ReLU,
    ShapeMismatchError,
    forward,
    init_kaiming_uniform,
    load_checkpoint,
    save_checkpoint,
)
from .pruning import (
    LampScoreSet,
    MaskSet,
    PruneResult,
    apply_mask,
    compose_masks,
    lamp_scores,
    mask_digest,
    pack_mask,
    select_prune,
    sparsity,
    unpack_mask,
)
from .rng import RngState, derive_stream_seed
from .ticket_search import (
    IncompleteRunError,
    RunRecord,
    StageRecord,
    TicketSearchConfig,
    WinningTickets,
    identify_winning_tickets,
    run_ticket_search,
)
from .trajectory import (
    CircleProbe,
    Projection2D,
    TrajectoryResult,
    dump_projected_points,
    make_probe,
    make_projection,
    measure,
    polyline_length,
)
from .training import (
    TrainConfig,
    evaluate_accuracy,
    loss_and_grads,
    sgd_step,
    train_until_early_stop,
)

__version__ = "0.1.0"
