"""Command-line entry point.

Subcommands: simulate | similarity | induce | train | predict | evaluate |
sweep | experiment. Global flags (--seed, --threads, --out-dir, --config)
come before the subcommand; values in a key=value config file are used for
any option not given on the command line. All outputs are CSV; on failure a
single machine-readable JSON error line goes to stderr and the exit code is
nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import (
    Hierarchy,
    RngSeed,
    load_dataset,
    load_hierarchy,
    save_dataset,
    save_hierarchy,
)
from .forest import UncertaintyForest
from .harness import (
    FeatureProtocol,
    SweepConfig,
    load_config_file,
    run_feature_experiment,
    run_sim_sweep,
    write_report,
)
from .hierclass import (
    InductionConfig,
    fit_flat,
    fit_hierarchical,
    induce_cond_mean,
    induce_task_sim,
    load_model,
    random_matched,
    save_model,
)
from .metrics import empirical_risk
from .simgen import SimConfig, simulate_dataset
from .tasksim import pairwise_similarity_matrix

logger = logging.getLogger(__name__)


def _resolve(args, config: dict[str, str], name: str, cast, default):
    """Option precedence: command line > config file > built-in default."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in config:
        raw = config[name]
        if cast is bool:
            return raw.lower() in ("1", "true", "yes")
        return cast(raw)
    return default


def _parse_coarse_k(raw) -> int | str:
    if raw is None or raw == "bic":
        return "bic"
    return int(raw)


def _write_similarity_csv(path, values: np.ndarray, names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(names))
        for row in values:
            writer.writerow([repr(float(v)) for v in row])


def cmd_simulate(args, config) -> int:
    gamma0 = _resolve(args, config, "gamma0", float, None)
    gamma1 = _resolve(args, config, "gamma1", float, None)
    if gamma0 is None or gamma1 is None:
        raise ValueError("gamma0 and gamma1 are required (flag or config file)")
    cfg = SimConfig(
        gamma0=gamma0,
        gamma1=gamma1,
        per_parent=_resolve(args, config, "per-parent", int, 5),
        n_per_class=_resolve(args, config, "n-per-class", int, 50),
        dim=_resolve(args, config, "dim", int, 2),
        seed=RngSeed(args.seed),
    )
    world = simulate_dataset(cfg)
    save_dataset(world.dataset, args.out)
    if args.truth_out:
        save_hierarchy(world.truth, args.truth_out)
    print(f"wrote {world.dataset.n} rows, k={world.dataset.k} -> {args.out}")
    return 0


def cmd_similarity(args, config) -> int:
    ds = load_dataset(args.input, args.label_column)
    n_refs = _resolve(args, config, "n-refs", int, 10)
    sim = pairwise_similarity_matrix(ds, n_refs, RngSeed(args.seed).child("tasksim"))
    names = [ds.class_name(i) for i in range(ds.k)]
    _write_similarity_csv(args.out, sim.values, names)
    print(f"wrote {ds.k}x{ds.k} similarity matrix -> {args.out}")
    return 0


def cmd_induce(args, config) -> int:
    ds = load_dataset(args.input, args.label_column)
    method = args.method.replace("-", "_")
    seed = RngSeed(args.seed)
    if method == "random":
        if not args.base:
            raise ValueError("--base hierarchy CSV is required for method=random")
        base = load_hierarchy(args.base)
        hierarchy = random_matched(base, seed.child("random"))
    elif method == "truth":
        if not args.truth:
            raise ValueError("--truth hierarchy CSV is required for method=truth")
        hierarchy = load_hierarchy(args.truth)
        if hierarchy.k != ds.k:
            raise ValueError("truth hierarchy does not cover every class in the dataset")
    else:
        cfg = InductionConfig(
            method="cond_mean" if method == "cond_mean" else "task_sim",
            pca_dim=_resolve(args, config, "pca-dim", int, 128),
            embed_dim=_resolve(args, config, "embed-dim", int, 16),
            coarse_k=_parse_coarse_k(_resolve(args, config, "coarse-k", str, "bic")),
            n_refs=_resolve(args, config, "n-refs", int, 10),
            covariance_mode=_resolve(args, config, "covariance", str, "tied"),
            seed=seed.child("induce"),
        )
        diagnostics: dict | None = {} if args.dump_diagnostics else None
        if method == "cond_mean":
            hierarchy = induce_cond_mean(ds, cfg, diagnostics)
        elif method == "task_sim":
            hierarchy = induce_task_sim(ds, cfg, diagnostics)
        else:
            raise ValueError(f"unknown induction method {args.method!r}")
        if diagnostics:
            _dump_diagnostics(diagnostics, Path(args.dump_diagnostics))
    save_hierarchy(hierarchy, args.out)
    print(f"wrote hierarchy with c={hierarchy.c} coarse labels -> {args.out}")
    return 0


def _dump_diagnostics(diagnostics: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if "bic_table" in diagnostics:
        with open(out_dir / "bic.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["c", "log_likelihood", "bic"])
            for c, ll, bic in diagnostics["bic_table"]:
                writer.writerow([c, repr(ll), repr(bic)])
    if "eigenvalues" in diagnostics:
        with open(out_dir / "eigenvalues.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "eigenvalue"])
            for i, v in enumerate(diagnostics["eigenvalues"]):
                writer.writerow([i, repr(float(v))])


def cmd_train(args, config) -> int:
    ds = load_dataset(args.input, args.label_column)
    seed = RngSeed(args.seed).child("train")
    max_depth = _resolve(args, config, "max-depth", int, 20)
    if args.hierarchy:
        hierarchy = load_hierarchy(args.hierarchy)
        model = fit_hierarchical(
            ds,
            hierarchy,
            coarse_trees=_resolve(args, config, "coarse-trees", int, 100),
            fine_trees=_resolve(args, config, "fine-trees", int, 100),
            max_depth=max_depth,
            seed=seed,
        )
        counts = model.tree_counts()
        print(f"trained hierarchical model ({counts['total_trees']} trees) -> {args.out}")
    else:
        model = fit_flat(ds, _resolve(args, config, "n-trees", int, 300), max_depth, seed)
        print(f"trained flat model ({model.n_trees} trees) -> {args.out}")
    save_model(model, args.out, label_names=ds.label_names)
    return 0


def cmd_predict(args, config) -> int:
    model, names = load_model(args.model)
    ds = load_dataset(args.input, args.label_column)
    if isinstance(model, UncertaintyForest):
        posterior = model.predict_posterior_batch(ds.features)
    else:
        posterior = model.predict_leaf_posterior_batch(ds.features)
    predicted = np.argmax(posterior, axis=1)
    k = posterior.shape[1]
    header_names = list(names) if names else [str(i) for i in range(k)]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row_id", "predicted_leaf"] + [f"posterior_{n}" for n in header_names])
        for i in range(posterior.shape[0]):
            leaf = header_names[int(predicted[i])]
            writer.writerow([i, leaf] + [repr(float(v)) for v in posterior[i]])
    print(f"wrote {posterior.shape[0]} predictions -> {args.out}")
    return 0


def cmd_evaluate(args, config) -> int:
    ds = load_dataset(args.input, args.label_column)
    with open(args.pred, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["row_id", "predicted_leaf"]:
            raise ValueError("predictions file must start with row_id,predicted_leaf columns")
        predicted = [row[1] for row in reader]
    if len(predicted) != ds.n:
        raise ValueError(f"predictions cover {len(predicted)} rows but dataset has {ds.n}")
    encoding = {ds.class_name(i): i for i in range(ds.k)}
    pred_ids = np.array([encoding.get(p, -1) for p in predicted], dtype=np.int64)
    record = empirical_risk(pred_ids, ds.labels)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["accuracy", "risk", "n_test"])
        writer.writerow([repr(record.accuracy), repr(record.risk), record.n_test])
    print(f"accuracy {record.accuracy:.4f} on {record.n_test} rows -> {args.out}")
    return 0


def _parse_grid(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.split(",") if part.strip())


def cmd_sweep(args, config) -> int:
    cfg = SweepConfig(
        gamma0_grid=_parse_grid(_resolve(args, config, "gamma0-grid", str, "0.0625,0.125,0.25,0.5,1,2,4,8,16")),
        gamma1=_resolve(args, config, "gamma1", float, 1.0),
        per_parent=_resolve(args, config, "per-parent", int, 5),
        n_per_class=_resolve(args, config, "n-per-class", int, 50),
        replicates=_resolve(args, config, "replicates", int, 30),
        coarse_trees=_resolve(args, config, "coarse-trees", int, 10),
        fine_trees=_resolve(args, config, "fine-trees", int, 5),
        flat_trees=_resolve(args, config, "flat-trees", int, 30),
        max_depth=_resolve(args, config, "max-depth", int, 20),
        seed=RngSeed(args.seed),
    )
    report = run_sim_sweep(cfg, threads=args.threads)
    paths = write_report(report, args.out_dir)
    print(f"sweep complete in {report.wall_clock:.1f}s; results -> {paths['results']}")
    return 0


def cmd_experiment(args, config) -> int:
    ds = load_dataset(args.input, args.label_column)
    truth = load_hierarchy(args.truth) if args.truth else None
    protocol = FeatureProtocol(
        train_fraction=_resolve(args, config, "train-fraction", float, 0.1),
        replicates=_resolve(args, config, "replicates", int, 10),
        coarse_trees=_resolve(args, config, "coarse-trees", int, 100),
        fine_trees=_resolve(args, config, "fine-trees", int, 100),
        hier_depth=_resolve(args, config, "hier-depth", int, 10),
        flat_trees=_resolve(args, config, "flat-trees", int, 300),
        flat_depth=_resolve(args, config, "flat-depth", int, 20),
        pca_dim=_resolve(args, config, "pca-dim", int, 128),
        embed_dim=_resolve(args, config, "embed-dim", int, 16),
        n_refs=_resolve(args, config, "n-refs", int, 10),
        coarse_k=_parse_coarse_k(_resolve(args, config, "coarse-k", str, "bic")),
        seed=RngSeed(args.seed),
    )
    report = run_feature_experiment(ds, truth, protocol, threads=args.threads)
    paths = write_report(report, args.out_dir)
    print(f"experiment complete in {report.wall_clock:.1f}s; results -> {paths['results']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierlearn",
        description="Induce label hierarchies and compare hierarchical vs flat forest classifiers",
    )
    parser.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for replicates")
    parser.add_argument("--out-dir", default="results", help="output directory for sweep/experiment")
    parser.add_argument("--config", default=None, help="key=value config file; flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a two-level Gaussian world to CSV")
    p.add_argument("--gamma0", type=float, default=None)
    p.add_argument("--gamma1", type=float, default=None)
    p.add_argument("--per-parent", type=int, default=None)
    p.add_argument("--n-per-class", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("similarity", help="pairwise task-similarity matrix of a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--label-column", required=True)
    p.add_argument("--n-refs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("induce", help="induce a coarse-label hierarchy")
    p.add_argument("--input", required=True)
    p.add_argument("--label-column", required=True)
    p.add_argument("--method", required=True, choices=["cond-mean", "task-sim", "random", "truth"])
    p.add_argument("--coarse-k", default=None, help="coarse label count or 'bic'")
    p.add_argument("--pca-dim", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--n-refs", type=int, default=None)
    p.add_argument("--covariance", default=None, choices=["spherical", "diagonal", "full", "tied"])
    p.add_argument("--base", default=None, help="hierarchy CSV to permute (method=random)")
    p.add_argument("--truth", default=None, help="hierarchy CSV to pass through (method=truth)")
    p.add_argument("--dump-diagnostics", default=None, help="directory for BIC/eigenvalue tables")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_induce)

    p = sub.add_parser("train", help="train a hierarchical or flat model")
    p.add_argument("--input", required=True)
    p.add_argument("--label-column", required=True)
    p.add_argument("--hierarchy", default=None, help="hierarchy CSV; omit to train a flat model")
    p.add_argument("--coarse-trees", type=int, default=None)
    p.add_argument("--fine-trees", type=int, default=None)
    p.add_argument("--n-trees", type=int, default=None, help="flat model tree count")
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="leaf predictions and posteriors for a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--label-column", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="accuracy/risk of a predictions file")
    p.add_argument("--pred", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--label-column", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="variance sweep on the simulated world")
    p.add_argument("--gamma0-grid", default=None, help="comma-separated gamma0 values")
    p.add_argument("--gamma1", type=float, default=None)
    p.add_argument("--per-parent", type=int, default=None)
    p.add_argument("--n-per-class", type=int, default=None)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--coarse-trees", type=int, default=None)
    p.add_argument("--fine-trees", type=int, default=None)
    p.add_argument("--flat-trees", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("experiment", help="subsample/induce/train/evaluate on a feature CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--label-column", required=True)
    p.add_argument("--truth", default=None, help="reference hierarchy CSV (optional)")
    p.add_argument("--train-fraction", type=float, default=None)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--coarse-trees", type=int, default=None)
    p.add_argument("--fine-trees", type=int, default=None)
    p.add_argument("--hier-depth", type=int, default=None)
    p.add_argument("--flat-trees", type=int, default=None)
    p.add_argument("--flat-depth", type=int, default=None)
    p.add_argument("--pca-dim", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--n-refs", type=int, default=None)
    p.add_argument("--coarse-k", default=None)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    config = {}
    try:
        if args.config:
            config = load_config_file(args.config)
        return args.func(args, config)
    except Exception as exc:  # single machine-readable error line, nonzero exit
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
