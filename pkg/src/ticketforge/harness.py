"""Experiment driver: seeded run dispatch, append-only persistence, reports.

Run results land in ``runs.jsonl`` (one JSON object per line, fsynced as
each run finishes) keyed by (run_id, config digest), so a crashed or
interrupted experiment resumes by skipping runs already on disk.  Run
seeds derive from the master seed by a pure 64-bit mix, so parallel and
serial execution produce the same records, and summary/report files are
always computed from runs sorted by run id.
"""

from __future__ import annotations

import csv
import fcntl
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .config import ArchitectureConfig, ExperimentConfig, build_network, config_digest, resolved_dict
from .datasets import DatasetSpec, Splits, provision_dataset
from .metrics import (
    BEST_SPARSE,
    DENSE,
    SPARSEST_MATCHING,
    ExperimentSummary,
    summarize,
    tl_gain,
)
from .rng import RngState, derive_stream_seed
from .ticket_search import (
    PROBE_STREAM,
    PROJECTION_STREAM,
    RunRecord,
    StageRecord,
    WinningTickets,
    identify_winning_tickets,
    run_ticket_search,
)
from .trajectory import make_probe, make_projection

RUNS_FILE = "runs.jsonl"
SUMMARY_FILE = "summary.csv"
LOCK_FILE = ".lock"
EXPERIMENT_FILE = "experiment.json"

# Stream indices reserved off the master seed; runs use 1 + global run index.
DATASET_STREAM_INDEX = 0

SUMMARY_COLUMNS = [
    "architecture", "variant",
    "tl_mean", "tl_std", "tl_gain_mean", "tl_gain_std",
    "acc_mean", "acc_std", "acc_gain_mean", "acc_gain_std",
    "sr_pct", "lts_score",
]

RUN_SCHEMA = {
    "type": "object",
    "required": [
        "run_id", "seed", "arch", "config_digest", "stages", "success",
        "best_sparse_stage", "sparsest_matching_stage", "status",
    ],
    "properties": {
        "run_id": {"type": "string"},
        "seed": {"type": "integer"},
        "arch": {"type": "string"},
        "arch_params": {"type": "integer"},
        "config_digest": {"type": "string"},
        "stages": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "k", "surviving_fraction", "val_acc", "test_acc",
                    "trajectory_length", "epochs",
                ],
                "properties": {
                    "k": {"type": "integer", "minimum": 0},
                    "surviving_fraction": {"type": "number"},
                    "val_acc": {"type": "number"},
                    "test_acc": {"type": "number"},
                    "trajectory_length": {"type": "number"},
                    "epochs": {"type": "integer"},
                },
                "additionalProperties": False,
            },
        },
        "mask_digests": {"type": "array", "items": {"type": "string"}},
        "success": {"type": "boolean"},
        "best_sparse_stage": {"type": ["integer", "null"]},
        "sparsest_matching_stage": {"type": ["integer", "null"]},
        "status": {"enum": ["complete", "failed"]},
    },
    "additionalProperties": False,
}


class ArtifactError(RuntimeError):
    """The artifact directory is locked, mixed-config, or malformed."""


@dataclass
class ExperimentResult:
    output_dir: Path
    n_executed: int
    n_skipped: int
    n_failed: int
    n_total: int


def run_line(record: RunRecord, tickets: Optional[WinningTickets], digest: str,
             arch_params: int) -> dict:
    return {
        "run_id": record.run_id,
        "seed": record.seed,
        "arch": record.arch,
        "arch_params": arch_params,
        "config_digest": digest,
        "stages": [
            {
                "k": s.stage,
                "surviving_fraction": s.surviving_fraction,
                "val_acc": s.val_acc,
                "test_acc": s.test_acc,
                "trajectory_length": s.trajectory_length,
                "epochs": s.epochs_run,
            }
            for s in record.stages
        ],
        "mask_digests": list(record.mask_digests),
        "success": bool(tickets.success) if tickets else False,
        "best_sparse_stage": tickets.best_sparse if tickets else None,
        "sparsest_matching_stage": tickets.sparsest_matching if tickets else None,
        "status": record.status,
    }


def run_from_line(line: dict) -> tuple[RunRecord, Optional[WinningTickets]]:
    record = RunRecord(
        run_id=line["run_id"],
        seed=line["seed"],
        arch=line["arch"],
        stages=[
            StageRecord(
                stage=s["k"],
                surviving_fraction=s["surviving_fraction"],
                val_acc=s["val_acc"],
                test_acc=s["test_acc"],
                trajectory_length=s["trajectory_length"],
                epochs_run=s["epochs"],
            )
            for s in line["stages"]
        ],
        mask_digests=list(line.get("mask_digests", [])),
        status=line["status"],
    )
    tickets = None
    if record.complete:
        tickets = WinningTickets(
            success=line["success"],
            best_sparse=line["best_sparse_stage"],
            sparsest_matching=line["sparsest_matching_stage"],
        )
    return record, tickets


# --- worker side -----------------------------------------------------------

_WORKER_STATE: dict = {}


def _worker_init(payload: dict):
    # Keep each worker's BLAS single-threaded; run-level parallelism owns the cores.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    _WORKER_STATE["payload"] = payload
    _WORKER_STATE["splits"] = None


def _worker_splits(payload: dict) -> Splits:
    if _WORKER_STATE.get("splits") is None:
        spec = DatasetSpec(**payload["dataset_kwargs"])
        rng = RngState(derive_stream_seed(payload["master_seed"], DATASET_STREAM_INDEX))
        _WORKER_STATE["splits"] = provision_dataset(spec, rng, payload.get("data_dir"))
    return _WORKER_STATE["splits"]


def _execute_run(task: dict) -> dict:
    payload = _WORKER_STATE["payload"]
    splits = _worker_splits(payload)
    arch = ArchitectureConfig(
        id=task["arch"]["id"],
        kind=task["arch"]["type"],
        hidden=tuple(task["arch"]["hidden"]),
        conv_channels=tuple(task["arch"]["conv_channels"]),
        kernel=task["arch"]["kernel"],
        pool=task["arch"]["pool"],
    )
    net = build_network(arch, splits.input_shape, splits.num_classes)
    search = _search_from_payload(payload)
    exp_rng = RngState(derive_stream_seed(payload["master_seed"], DATASET_STREAM_INDEX))
    probe = make_probe(
        int(np.prod(splits.input_shape)), search.probe_points, search.probe_radius,
        exp_rng.at(PROBE_STREAM),
    )
    projection = make_projection(splits.num_classes, exp_rng.at(PROJECTION_STREAM))
    record = run_ticket_search(
        net,
        splits,
        search,
        RngState(task["seed"]),
        probe=probe,
        projection=projection,
        run_id=task["run_id"],
        arch=arch.id,
    )
    tickets = identify_winning_tickets(record) if record.complete else None
    return run_line(record, tickets, task["digest"], net.total_parameter_count())


def _search_from_payload(payload: dict):
    from .ticket_search import TicketSearchConfig
    from .training import TrainConfig

    search = payload["search"]
    return TicketSearchConfig(
        train=TrainConfig(**search["train"]),
        stages=search["stages"],
        prune_fraction=search["prune_fraction"],
        probe_points=payload["probe"]["n_points"],
        probe_radius=payload["probe"]["radius"],
    )


# --- coordinator -----------------------------------------------------------


def _read_runs(path: Path, *, repair: bool = False) -> list[dict]:
    """Parse runs.jsonl; with ``repair`` a truncated final line is dropped."""
    if not path.exists():
        return []
    lines = []
    raw = path.read_bytes()
    offset = 0
    entries = raw.split(b"\n")
    for i, entry in enumerate(entries):
        if not entry:
            offset += 1
            continue
        try:
            lines.append(json.loads(entry))
        except json.JSONDecodeError:
            trailing = i == len(entries) - 1
            if repair and trailing:
                with open(path, "r+b") as fh:
                    fh.truncate(offset)
                break
            raise ArtifactError(f"{path}: malformed JSON on line {i + 1}")
        offset += len(entry) + 1
    return lines


def load_runs(artifact_dir, digest: Optional[str] = None):
    """Validated (RunRecord, WinningTickets) pairs from an artifact directory."""
    path = Path(artifact_dir) / RUNS_FILE
    if not path.exists():
        raise ArtifactError(f"{path} not found")
    lines = _read_runs(path)
    if not lines:
        raise ArtifactError(f"{path} holds no runs")
    out = []
    for line in lines:
        jsonschema.validate(line, RUN_SCHEMA)
        if digest is not None and line["config_digest"] != digest:
            raise ArtifactError(
                f"{path}: run {line['run_id']} was produced by a different config "
                f"({line['config_digest'][:12]}… vs {digest[:12]}…)"
            )
        out.append(line)
    digests = {line["config_digest"] for line in out}
    if len(digests) > 1:
        raise ArtifactError(f"{path} mixes runs from {len(digests)} different configs")
    return out


def run_experiment(
    cfg: ExperimentConfig,
    *,
    jobs: Optional[int] = None,
    resume: bool = True,
    data_dir=None,
    output_dir=None,
) -> ExperimentResult:
    """Dispatch every (architecture, run index) ticket search and write artifacts.

    Individual run failures are recorded and the experiment continues;
    completed runs found on disk are skipped when resuming.
    """
    out_dir = Path(output_dir if output_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)
    payload = resolved_dict(cfg)
    payload["dataset_kwargs"] = _dataset_kwargs(cfg.dataset)
    payload["data_dir"] = str(data_dir) if data_dir is not None else None

    lock_handle = open(out_dir / LOCK_FILE, "w")
    try:
        fcntl.flock(lock_handle, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except BlockingIOError:
        lock_handle.close()
        raise ArtifactError(f"{out_dir} is owned by another running experiment")
    try:
        (out_dir / EXPERIMENT_FILE).write_text(
            json.dumps({"config": resolved_dict(cfg), "config_digest": digest}, indent=2)
            + "\n"
        )
        runs_path = out_dir / RUNS_FILE
        existing = _read_runs(runs_path, repair=True) if resume else []
        if not resume and runs_path.exists():
            runs_path.unlink()
        done = set()
        for line in existing:
            if line.get("config_digest") != digest:
                raise ArtifactError(
                    f"{runs_path} holds runs from a different config; "
                    "use a fresh output directory"
                )
            done.add(line["run_id"])

        splits = provision_dataset(
            cfg.dataset,
            RngState(derive_stream_seed(cfg.master_seed, DATASET_STREAM_INDEX)),
            data_dir,
        )
        if cfg.search.train.batch_size > len(splits.train[1]):
            raise ValueError(
                f"batch_size {cfg.search.train.batch_size} exceeds training split "
                f"size {len(splits.train[1])}"
            )
        arch_dicts = {
            a.id: d for a, d in zip(cfg.architectures, payload["architectures"])
        }

        tasks = []
        for arch_index, arch in enumerate(cfg.architectures):
            build_network(arch, splits.input_shape, splits.num_classes)  # validate early
            for i in range(cfg.n_runs):
                run_id = f"{arch.id}-r{i:03d}"
                if run_id in done:
                    continue
                global_index = arch_index * cfg.n_runs + i
                tasks.append(
                    {
                        "run_id": run_id,
                        "seed": derive_stream_seed(cfg.master_seed, 1 + global_index),
                        "arch": arch_dicts[arch.id],
                        "digest": digest,
                    }
                )

        n_failed = 0
        n_executed = 0
        if tasks:
            with open(runs_path, "a") as sink:
                for line in _run_tasks(tasks, payload, jobs):
                    sink.write(json.dumps(line, sort_keys=True) + "\n")
                    sink.flush()
                    os.fsync(sink.fileno())
                    n_executed += 1
                    if line["status"] == "failed":
                        n_failed += 1

        all_lines = load_runs(out_dir, digest)
        completed = [l for l in all_lines if l["status"] == "complete"]
        if completed:
            write_summary(out_dir)
            emit_reports(out_dir)
        return ExperimentResult(
            output_dir=out_dir,
            n_executed=n_executed,
            n_skipped=len(done),
            n_failed=sum(1 for l in all_lines if l["status"] == "failed"),
            n_total=len(all_lines),
        )
    finally:
        fcntl.flock(lock_handle, fcntl.LOCK_UN)
        lock_handle.close()


def _dataset_kwargs(spec: DatasetSpec) -> dict:
    return {
        "source": spec.source,
        "n_train": spec.n_train,
        "n_test": spec.n_test,
        "val_fraction": spec.val_fraction,
        "noise": spec.noise,
        "classes": spec.classes,
        "dim": spec.dim,
        "spread": spec.spread,
        "center_scale": spec.center_scale,
        "train_images": spec.train_images,
        "train_labels": spec.train_labels,
        "test_images": spec.test_images,
        "test_labels": spec.test_labels,
        "batches": tuple(spec.batches),
        "test_batch": spec.test_batch,
        "normalization": tuple(spec.normalization),
    }


def _run_tasks(tasks, payload, jobs):
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(tasks) == 1:
        _worker_init(payload)
        for task in tasks:
            yield _execute_run(task)
        return
    ctx = get_context("spawn")
    with ProcessPoolExecutor(
        max_workers=min(jobs, len(tasks)),
        mp_context=ctx,
        initializer=_worker_init,
        initargs=(payload,),
    ) as pool:
        for line in pool.map(_execute_run, tasks):
            yield line


def _sorted_lines(lines):
    return sorted(lines, key=lambda l: l["run_id"])


def _arch_order(lines) -> list[str]:
    """Architecture ids by ascending parameter count (ties keep first-seen order)."""
    sizes = {}
    seen = []
    for line in lines:
        if line["arch"] not in sizes:
            seen.append(line["arch"])
            sizes[line["arch"]] = line.get("arch_params", 0)
    return sorted(seen, key=lambda a: (sizes[a], seen.index(a)))


def _fmt(value) -> str:
    return repr(float(value))


def summarize_lines(lines) -> list[ExperimentSummary]:
    """Per-architecture summaries in ascending parameter-count order."""
    by_arch: dict[str, list] = {}
    for line in _sorted_lines(lines):
        by_arch.setdefault(line["arch"], []).append(run_from_line(line))
    return [
        summarize(by_arch[arch], architecture=arch)
        for arch in _arch_order(lines)
        if any(rec.complete for rec, _ in by_arch[arch])
    ]


def write_summary(artifact_dir) -> Path:
    """Aggregate runs.jsonl into summary.csv (one row per architecture variant)."""
    out_dir = Path(artifact_dir)
    lines = load_runs(out_dir)
    summaries = summarize_lines(lines)
    path = out_dir / SUMMARY_FILE
    digest = lines[0]["config_digest"]
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_digest={digest}\n")
        fh.write("# sparse-variant rows aggregate successful runs only\n")
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            for variant in (DENSE, BEST_SPARSE, SPARSEST_MATCHING):
                if variant not in s.variants:
                    continue
                v = s.variants[variant]
                writer.writerow(
                    [
                        s.architecture, variant,
                        _fmt(v.trajectory_length.mean), _fmt(v.trajectory_length.std),
                        _fmt(v.tl_gain_pct.mean), _fmt(v.tl_gain_pct.std),
                        _fmt(v.test_acc.mean), _fmt(v.test_acc.std),
                        _fmt(v.acc_gain_pct.mean), _fmt(v.acc_gain_pct.std),
                        _fmt(s.success_rate_pct), _fmt(s.lts_score),
                    ]
                )
    return path


def emit_reports(artifact_dir) -> list[Path]:
    """Write the four figure-data CSVs from runs.jsonl.

    Architectures are ordered by ascending parameter count in every file.
    ``acc_gain_by_arch`` carries one row per successful run (distribution
    data); the other three carry one row per architecture or per
    (architecture, stage).
    """
    out_dir = Path(artifact_dir)
    lines = load_runs(out_dir)
    digest = lines[0]["config_digest"]
    order = _arch_order(lines)
    by_arch: dict[str, list[dict]] = {arch: [] for arch in order}
    for line in _sorted_lines(lines):
        by_arch[line["arch"]].append(line)

    summaries = {s.architecture: s for s in summarize_lines(lines)}
    paths = []

    def open_report(name, header):
        path = out_dir / name
        fh = open(path, "w", newline="")
        fh.write(f"# config_digest={digest}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        paths.append(path)
        return fh, writer

    fh, writer = open_report("sr_by_arch.csv", ["architecture", "sr_pct"])
    with fh:
        for arch in order:
            if arch in summaries:
                writer.writerow([arch, _fmt(summaries[arch].success_rate_pct)])

    fh, writer = open_report(
        "acc_gain_by_arch.csv", ["architecture", "run_id", "acc_gain_pct"]
    )
    with fh:
        for arch in order:
            for line in by_arch[arch]:
                if line["status"] != "complete" or not line["success"]:
                    continue
                dense = line["stages"][0]["test_acc"]
                best = line["stages"][line["best_sparse_stage"]]["test_acc"]
                writer.writerow(
                    [arch, line["run_id"], _fmt((best - dense) / dense * 100.0)]
                )

    fh, writer = open_report("lts_by_arch.csv", ["architecture", "lts_score"])
    with fh:
        for arch in order:
            if arch in summaries:
                writer.writerow([arch, _fmt(summaries[arch].lts_score)])

    fh, writer = open_report(
        "tl_gain_by_stage.csv", ["architecture", "stage", "tl_gain_mean_pct"]
    )
    with fh:
        for arch in order:
            complete = [l for l in by_arch[arch] if l["status"] == "complete"]
            if not complete:
                continue
            n_stages = max(len(l["stages"]) for l in complete)
            for k in range(n_stages):
                gains = [
                    tl_gain(
                        l["stages"][k]["trajectory_length"],
                        l["stages"][0]["trajectory_length"],
                    )
                    for l in complete
                    if k < len(l["stages"])
                ]
                if gains:
                    writer.writerow([arch, k, _fmt(sum(gains) / len(gains))])
    return paths
