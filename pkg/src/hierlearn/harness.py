"""Experiment driver: variance sweeps, feature-file experiments, CSV reports.

Replicates are pure functions of (config, replicate index), each on its own
derived substream, so runs are reproducible byte-for-byte regardless of the
worker count. Result CSVs echo only scientific parameters (never thread
counts, paths, or timings), which keeps them byte-identical across
executions of the same configuration.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import Hierarchy, LabeledDataset, RngSeed, subsample_fraction
from .hierclass import (
    HierarchicalClassifier,
    InductionConfig,
    fit_flat,
    fit_hierarchical,
    induce_cond_mean,
    induce_task_sim,
    random_matched,
)
from .metrics import adjusted_rand_index, aggregate, empirical_risk, learning_efficiency
from .simgen import SimConfig, sample_patterns, simulate_dataset

__all__ = [
    "SweepConfig",
    "FeatureProtocol",
    "ResultRow",
    "ExperimentReport",
    "ReplicateFailure",
    "run_sim_sweep",
    "run_feature_experiment",
    "emit_plot_data",
    "write_results_csv",
    "write_metadata_csv",
    "load_config_file",
]

logger = logging.getLogger(__name__)

DEFAULT_GAMMA0_GRID = (0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)

SWEEP_METHODS = ("flat", "cond_mean", "random_cm", "truth")
FEATURE_METHODS = ("flat", "cond_mean", "random_cm", "task_sim", "random_ts", "truth")


class ReplicateFailure(RuntimeError):
    """A replicate failed; the message records the substream that produced it."""


@dataclass(frozen=True)
class SweepConfig:
    """Simulation sweep over the parent-level coordinate variance."""

    gamma0_grid: tuple[float, ...] = DEFAULT_GAMMA0_GRID
    gamma1: float = 1.0
    per_parent: int = 5
    n_per_class: int = 50
    dim: int = 2
    replicates: int = 30
    coarse_trees: int = 10
    fine_trees: int = 5
    flat_trees: int = 30
    max_depth: int = 20
    coarse_k: int = 4
    covariance_mode: str = "tied"
    restarts: int = 10
    # False limits the sweep to induction quality (ari rows only); classifier
    # training dominates runtime and is not always wanted
    train_classifiers: bool = True
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))

    def __post_init__(self):
        if not self.gamma0_grid or any(g <= 0 for g in self.gamma0_grid):
            raise ValueError("gamma0 grid must be non-empty and positive")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")


@dataclass(frozen=True)
class FeatureProtocol:
    """Protocol for experiments on an externally supplied feature file."""

    train_fraction: float = 0.1
    replicates: int = 10
    coarse_trees: int = 100
    fine_trees: int = 100
    hier_depth: int = 10
    flat_trees: int = 300
    flat_depth: int = 20
    pca_dim: int = 128
    embed_dim: int = 16
    n_refs: int = 10
    coarse_k: int | str = "bic"
    covariance_mode: str = "tied"
    restarts: int = 10
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")


class ResultRow(NamedTuple):
    gamma0: float | None
    method: str
    metric: str
    mean: float
    se: float
    reps: int


@dataclass
class ExperimentReport:
    """Aggregated results plus the config echo and tree-count ledger."""

    rows: list[ResultRow]
    config: dict[str, str]
    tree_counts: dict[str, int]
    metadata: dict[str, str]
    wall_clock: float

    def __post_init__(self):
        keys = [(r.gamma0, r.method, r.metric) for r in self.rows]
        if len(keys) != len(set(keys)):
            raise ValueError("duplicate (gamma0, method, metric) rows in report")

    def row(self, method: str, metric: str, gamma0: float | None = None) -> ResultRow:
        for r in self.rows:
            if r.method == method and r.metric == metric and r.gamma0 == gamma0:
                return r
        raise KeyError(f"no row for ({gamma0}, {method}, {metric})")

    def methods(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen


def _config_echo(cfg) -> dict[str, str]:
    # scientific parameters only; execution details (threads, paths) stay out
    echo: dict[str, str] = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, RngSeed):
            echo[f"{f.name}.seed"] = str(value.seed)
            echo[f"{f.name}.stream"] = str(value.stream)
        elif isinstance(value, tuple):
            echo[f.name] = ";".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        else:
            echo[f.name] = repr(value) if isinstance(value, float) else str(value)
    return echo


# ---------------------------------------------------------------------------
# Simulation sweep


def _sweep_replicate(cfg: SweepConfig, gamma_index: int, rep: int) -> dict[str, float]:
    gamma0 = cfg.gamma0_grid[gamma_index]
    seed = cfg.seed.child("gamma", gamma_index, "rep", rep)
    world = simulate_dataset(
        SimConfig(
            gamma0=gamma0,
            gamma1=cfg.gamma1,
            per_parent=cfg.per_parent,
            n_per_class=cfg.n_per_class,
            dim=cfg.dim,
            seed=seed.child("world"),
        )
    )
    train = world.dataset
    test = sample_patterns(world.class_means, cfg.gamma1, cfg.n_per_class, seed.child("test"))

    icfg = InductionConfig(
        method="cond_mean",
        coarse_k=cfg.coarse_k,
        covariance_mode=cfg.covariance_mode,
        restarts=cfg.restarts,
        seed=seed.child("induce"),
    )
    induced = induce_cond_mean(train, icfg)
    shuffled = random_matched(induced, seed.child("random"))
    truth = world.truth

    record = {
        "ari.cond_mean": adjusted_rand_index(induced.parent_of, truth.parent_of),
        "ari.random_cm": adjusted_rand_index(shuffled.parent_of, truth.parent_of),
    }
    if not cfg.train_classifiers:
        return record

    flat = fit_flat(train, cfg.flat_trees, cfg.max_depth, seed.child("clf", "flat"))
    risk_flat = empirical_risk(flat.predict_class_batch(test.features), test.labels).risk
    record["accuracy.flat"] = 1.0 - risk_flat

    for name, hierarchy in (("cond_mean", induced), ("truth", truth)):
        clf = fit_hierarchical(
            train, hierarchy, cfg.coarse_trees, cfg.fine_trees, cfg.max_depth, seed.child("clf", name)
        )
        risk = empirical_risk(clf.predict_class_batch(test.features), test.labels).risk
        record[f"accuracy.{name}"] = 1.0 - risk
        record[f"le_vs_flat.{name}"] = learning_efficiency(risk_flat, risk)
    return record


def _run_replicates(worker, jobs, threads: int):
    """Run (index-tuple -> record) jobs, preserving job order in the output."""
    if threads <= 1:
        return [worker(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(worker, *job) for job in jobs]
        return [f.result() for f in futures]


def run_sim_sweep(cfg: SweepConfig, threads: int = 1) -> ExperimentReport:
    """Sweep gamma0: induce, train induced/truth hierarchical and flat, evaluate.

    Per replicate the world is redrawn (class means and patterns), the
    hierarchy is induced from conditional means with the configured coarse
    count, and risks are measured on a fresh draw of the same size. A failed
    replicate aborts the sweep with its substream recorded.
    """
    start = time.perf_counter()
    jobs = [(cfg, gi, rep) for gi in range(len(cfg.gamma0_grid)) for rep in range(cfg.replicates)]
    try:
        records = _run_replicates(_sweep_replicate, jobs, threads)
    except Exception as exc:
        raise ReplicateFailure(f"sweep replicate failed (base seed {cfg.seed}): {exc}") from exc

    by_gamma: dict[int, list[dict[str, float]]] = {}
    for (_, gi, _), record in zip(jobs, records):
        by_gamma.setdefault(gi, []).append(record)

    rows: list[ResultRow] = []
    for gi, gamma0 in enumerate(cfg.gamma0_grid):
        group = by_gamma[gi]
        for key in group[0]:
            metric, method = key.split(".", 1)
            agg = aggregate([r[key] for r in group])
            rows.append(ResultRow(gamma0, method, metric, agg.mean, agg.se, agg.reps))
    rows.sort(key=lambda r: (r.gamma0, SWEEP_METHODS.index(r.method), r.metric))

    tree_counts = {
        "coarse_trees": cfg.coarse_trees,
        "fine_trees_per_coarse": cfg.fine_trees,
        "fine_trees_total": cfg.fine_trees * cfg.coarse_k,
        "hierarchical_total": cfg.coarse_trees + cfg.fine_trees * cfg.coarse_k,
        "flat_trees": cfg.flat_trees,
    }
    wall = time.perf_counter() - start
    logger.info("sweep finished in %.1fs (%d replicates)", wall, len(jobs))
    return ExperimentReport(
        rows=rows,
        config=_config_echo(cfg),
        tree_counts=tree_counts,
        metadata={},
        wall_clock=wall,
    )


# ---------------------------------------------------------------------------
# Feature-file experiment


def _restrict_truth(truth: Hierarchy, kept: np.ndarray) -> Hierarchy:
    return Hierarchy.from_assignments(truth.parent_of[kept])


def _feature_replicate(ds: LabeledDataset, truth: Hierarchy | None, p: FeatureProtocol, rep: int):
    seed = p.seed.child("rep", rep)
    split = subsample_fraction(ds, p.train_fraction, seed.child("subsample"))
    train, test = split.train, split.rest
    if test.n == 0:
        raise ValueError("training fraction leaves no held-out rows to evaluate on")
    truth_local = _restrict_truth(truth, split.kept_classes) if truth is not None else None

    base = dict(
        pca_dim=p.pca_dim,
        embed_dim=p.embed_dim,
        coarse_k=p.coarse_k,
        n_refs=p.n_refs,
        covariance_mode=p.covariance_mode,
        restarts=p.restarts,
    )
    hierarchies = {
        "cond_mean": induce_cond_mean(
            train, InductionConfig(method="cond_mean", seed=seed.child("induce-cm"), **base)
        ),
        "task_sim": induce_task_sim(
            train, InductionConfig(method="task_sim", seed=seed.child("induce-ts"), **base)
        ),
    }
    hierarchies["random_cm"] = random_matched(hierarchies["cond_mean"], seed.child("random-cm"))
    hierarchies["random_ts"] = random_matched(hierarchies["task_sim"], seed.child("random-ts"))
    if truth_local is not None:
        hierarchies["truth"] = truth_local

    record: dict[str, float] = {}
    notes: dict[str, str] = {}
    if split.dropped_classes.size:
        notes["dropped_classes"] = ";".join(str(c) for c in split.dropped_classes)

    flat = fit_flat(train, p.flat_trees, p.flat_depth, seed.child("clf", "flat"))
    risk_flat = empirical_risk(flat.predict_class_batch(test.features), test.labels).risk
    record["accuracy.flat"] = 1.0 - risk_flat
    record["risk.flat"] = risk_flat
    notes["trees.flat"] = str(p.flat_trees)
    if truth_local is not None:
        record["ari.flat"] = 0.0
        record["ari.truth"] = 1.0

    for name, hierarchy in hierarchies.items():
        clf = fit_hierarchical(train, hierarchy, p.coarse_trees, p.fine_trees, p.hier_depth, seed.child("clf", name))
        risk = empirical_risk(clf.predict_class_batch(test.features), test.labels).risk
        record[f"accuracy.{name}"] = 1.0 - risk
        record[f"risk.{name}"] = risk
        notes[f"coarse_k.{name}"] = str(hierarchy.c)
        notes[f"trees.{name}"] = str(clf.tree_counts()["total_trees"])
        if truth_local is not None and name != "truth":
            record[f"ari.{name}"] = adjusted_rand_index(hierarchy.parent_of, truth_local.parent_of)
    return record, notes


def run_feature_experiment(
    ds: LabeledDataset,
    truth: Hierarchy | None,
    protocol: FeatureProtocol,
    threads: int = 1,
) -> ExperimentReport:
    """Repeatedly subsample, induce, train all classifiers, evaluate on the rest.

    Produces accuracy rows for every method, ARI rows when a reference
    hierarchy is supplied, and learning-efficiency rows computed as the ratio
    of mean errors (flat over method); LE rows carry no dispersion estimate
    and report se = 0.
    """
    ds.require_full()
    if truth is not None and truth.k != ds.k:
        raise ValueError("reference hierarchy must cover every class in the dataset")
    start = time.perf_counter()
    jobs = [(ds, truth, protocol, rep) for rep in range(protocol.replicates)]
    try:
        results = _run_replicates(_feature_replicate, jobs, threads)
    except Exception as exc:
        raise ReplicateFailure(f"experiment replicate failed (base seed {protocol.seed}): {exc}") from exc
    records = [r[0] for r in results]
    notes = [r[1] for r in results]

    methods = [m for m in FEATURE_METHODS if f"accuracy.{m}" in records[0] or f"ari.{m}" in records[0]]
    rows: list[ResultRow] = []
    mean_risk: dict[str, float] = {}
    for method in methods:
        for metric in ("ari", "accuracy"):
            key = f"{metric}.{method}"
            if key in records[0]:
                agg = aggregate([r[key] for r in records])
                rows.append(ResultRow(None, method, metric, agg.mean, agg.se, agg.reps))
        risk_key = f"risk.{method}"
        if risk_key in records[0]:
            mean_risk[method] = aggregate([r[risk_key] for r in records]).mean
    for method in methods:
        if method in mean_risk:
            le = learning_efficiency(mean_risk["flat"], mean_risk[method])
            rows.append(ResultRow(None, method, "le_vs_flat", le, 0.0, protocol.replicates))

    metadata: dict[str, str] = {}
    for rep, note in enumerate(notes):
        for key, value in sorted(note.items()):
            metadata[f"rep{rep}.{key}"] = value

    tree_counts = {
        "coarse_trees": protocol.coarse_trees,
        "fine_trees_per_coarse": protocol.fine_trees,
        "flat_trees": protocol.flat_trees,
    }
    wall = time.perf_counter() - start
    logger.info("feature experiment finished in %.1fs (%d replicates)", wall, protocol.replicates)
    return ExperimentReport(
        rows=rows,
        config=_config_echo(protocol),
        tree_counts=tree_counts,
        metadata=metadata,
        wall_clock=wall,
    )


# ---------------------------------------------------------------------------
# CSV emission


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_plot_data(report: ExperimentReport, path) -> None:
    """Long-format CSV: one row per (gamma0, method, metric)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["gamma0", "method", "metric", "mean", "se"])
        for r in report.rows:
            writer.writerow([_format_value(r.gamma0), r.method, r.metric, repr(r.mean), repr(r.se)])


def write_results_csv(report: ExperimentReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["gamma0", "method", "metric", "mean", "se", "reps"])
        for r in report.rows:
            writer.writerow(
                [_format_value(r.gamma0), r.method, r.metric, repr(r.mean), repr(r.se), r.reps]
            )


def write_metadata_csv(report: ExperimentReport, path) -> None:
    """Config echo, tree-count ledger, and per-replicate notes as key/value rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "value"])
        for key, value in report.config.items():
            writer.writerow([f"config.{key}", value])
        for key, value in report.tree_counts.items():
            writer.writerow([f"trees.{key}", str(value)])
        for key, value in report.metadata.items():
            writer.writerow([key, value])


def write_report(report: ExperimentReport, out_dir) -> dict[str, Path]:
    """Write results.csv, plot_data.csv, and metadata.csv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": out / "results.csv",
        "plot_data": out / "plot_data.csv",
        "metadata": out / "metadata.csv",
    }
    write_results_csv(report, paths["results"])
    emit_plot_data(report, paths["plot_data"])
    write_metadata_csv(report, paths["metadata"])
    return paths


def load_config_file(path) -> dict[str, str]:
    """Plain key=value config file; '#' starts a comment, blank lines ignored."""
    options: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            options[key.strip()] = value.strip()
    return options
