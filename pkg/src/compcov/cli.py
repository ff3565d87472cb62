"""Command-line front end: count-table ingestion, estimation, tuning, and exports.

Commands
--------
estimate        fit at fixed penalties and write per-population matrices
cv              cross-validate (lambda, gamma), refit at the selected pair
simulate        replicate a synthetic study and write metric tables
stability       bootstrap the point estimate and write edge-frequency tables
export-network  turn an estimate directory into per-population graph files

Matrices are written as tab-separated text with a header row of variable
names and 17-significant-digit values, so re-loading reproduces the exact
floating-point numbers. A JSON sidecar records dimensions, population names,
penalties, and convergence information.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import CompositionDataset, variation_tensor
from .metrics import to_correlation
from .solver import NumericError, SolverConfig, fit
from .study import METHODS, run_simulation_study, summarize
from .tuning import (
    TuningGrid,
    bootstrap_stability,
    cv_select,
    default_gamma_grid,
    default_lambda_grid,
)

DEFAULT_PSEUDOCOUNT = 0.5
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def ingest_counts(path, label_column: str, pseudocount: float = DEFAULT_PSEUDOCOUNT) -> CompositionDataset:
    """Read a delimited count table and convert rows to compositions.

    The delimiter (tab or comma) is detected from the header line. Every
    count gets the pseudocount added before row normalization; rows are
    grouped into populations by the label column, in order of first
    appearance.
    """
    path = Path(path)
    with path.open(newline="") as handle:
        header_line = handle.readline()
        if not header_line:
            raise ValueError(f"{path}: empty file")
        delimiter = "\t" if "\t" in header_line else ","
        header = next(csv.reader([header_line], delimiter=delimiter))
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r} in header")
        label_idx = header.index(label_column)
        variables = [name for i, name in enumerate(header) if i != label_idx]
        rows, labels = [], []
        for row_num, row in enumerate(csv.reader(handle, delimiter=delimiter), start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}")
            labels.append(row[label_idx])
            values = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: row {row_num}, column {header[i]!r}: non-numeric cell {cell!r}"
                    ) from None
                if value < 0:
                    raise ValueError(f"{path}: row {row_num}, column {header[i]!r}: negative count {cell}")
                values.append(value)
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    counts = np.asarray(rows, dtype=float)
    if pseudocount < 0:
        raise ValueError("pseudocount must be nonnegative")
    if pseudocount == 0 and (counts == 0).any():
        raise ValueError("zero counts present: a positive pseudocount is required")
    counts = counts + pseudocount
    compositions = counts / counts.sum(axis=1, keepdims=True)

    population_order: list[str] = []
    for label in labels:
        if label not in population_order:
            population_order.append(label)
    blocks = []
    for name in population_order:
        mask = np.asarray([lab == name for lab in labels])
        if mask.sum() < 2:
            raise ValueError(f"population {name!r} has fewer than 2 samples")
        blocks.append(compositions[mask])
    return CompositionDataset(tuple(blocks), labels=tuple(variables),
                              population_names=tuple(population_order))


def write_matrix(path, matrix: np.ndarray, labels) -> None:
    """Tab-separated matrix with a header row; values survive a round trip exactly."""
    with Path(path).open("w") as handle:
        handle.write("\t".join(labels) + "\n")
        for row in matrix:
            handle.write("\t".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as handle:
        labels = handle.readline().rstrip("\n").split("\t")
        matrix = np.loadtxt(handle, delimiter="\t", ndmin=2)
    return labels, matrix


class _OutputTracker:
    """Collects written paths so partial outputs can be removed on failure."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.paths: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def discard_all(self) -> None:
        for p in self.paths:
            p.unlink(missing_ok=True)


def _solver_config(args, h_count: int | None = None) -> SolverConfig:
    per_pop = None
    if getattr(args, "per_population_lambda", None):
        per_pop = tuple(float(v) for v in args.per_population_lambda.split(","))
        if h_count is not None and len(per_pop) != h_count:
            raise ValueError(f"--per-population-lambda needs {h_count} values, got {len(per_pop)}")
    epsilon = None if args.epsilon.lower() in ("none", "-inf") else float(args.epsilon)
    return SolverConfig(
        lam=args.lam,
        gamma=args.gamma,
        per_population_lam=per_pop,
        epsilon=epsilon,
        tol=args.tol,
        max_iter=args.max_iter,
    )


def _sidecar(tracker: _OutputTracker, dataset: CompositionDataset, cfg: SolverConfig, result, extra=None) -> None:
    info = {
        "p": dataset.p,
        "population_names": list(dataset.population_names),
        "population_sizes": list(dataset.sizes),
        "variable_names": list(dataset.labels or ()),
        "lambda": cfg.lam,
        "gamma": cfg.gamma,
        "per_population_lambda": list(cfg.per_population_lam) if cfg.per_population_lam else None,
        "epsilon": cfg.epsilon,
        "converged": result.converged,
        "iterations": result.iterations,
        "objective": result.objective,
        "matrix_files": [f"omega_{name}.tsv" for name in dataset.population_names],
    }
    if extra:
        info.update(extra)
    tracker.path("estimate.json").write_text(json.dumps(info, indent=2) + "\n")


def _write_estimate(tracker: _OutputTracker, dataset: CompositionDataset, result) -> None:
    labels = list(dataset.labels or (f"v{j + 1}" for j in range(dataset.p)))
    for name, matrix in zip(dataset.population_names, result.estimate.omega):
        write_matrix(tracker.path(f"omega_{name}.tsv"), matrix, labels)


def cmd_estimate(args) -> int:
    dataset = ingest_counts(args.input, args.labels_column, args.pseudocount)
    cfg = _solver_config(args, dataset.h_count)
    if dataset.h_count == 1 and cfg.gamma > 0:
        print("warning: gamma has no cross-population effect with a single population", file=sys.stderr)
    theta = variation_tensor(dataset)
    result = fit(theta, cfg)
    tracker = _OutputTracker(Path(args.out))
    try:
        _write_estimate(tracker, dataset, result)
        _sidecar(tracker, dataset, cfg, result)
    except Exception:
        tracker.discard_all()
        raise
    if not result.converged and not args.allow_nonconverged:
        print(f"fit did not converge in {result.iterations} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_cv(args) -> int:
    dataset = ingest_counts(args.input, args.labels_column, args.pseudocount)
    cfg = _solver_config(args, dataset.h_count)
    theta = variation_tensor(dataset)
    grid = TuningGrid(
        lambdas=default_lambda_grid(theta),
        gammas=default_gamma_grid(theta),
        folds=args.folds,
        seed=args.seed,
    )
    report = cv_select(dataset, grid, cfg)
    best_cfg = replace(cfg, lam=report.selected_lambda, gamma=report.selected_gamma,
                       per_population_lam=None)
    result = fit(theta, best_cfg)
    tracker = _OutputTracker(Path(args.out))
    try:
        tracker.path("cv_report.json").write_text(json.dumps({
            "lambdas": list(report.lambdas),
            "gammas": list(report.gammas),
            "folds": report.folds,
            "seed": report.seed,
            "score_surface": report.score_surface.tolist(),
            "selected_lambda": report.selected_lambda,
            "selected_gamma": report.selected_gamma,
        }, indent=2) + "\n")
        _write_estimate(tracker, dataset, result)
        _sidecar(tracker, dataset, best_cfg, result, extra={"tuning": "cv"})
    except Exception:
        tracker.discard_all()
        raise
    if not result.converged and not args.allow_nonconverged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _format_table(rows: list[dict], columns: list[str]) -> str:
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            value = row[col]
            cells.append(f"{value:.17g}" if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",")) if args.methods else METHODS
    records = run_simulation_study(args.model, args.p, args.n, args.reps, args.seed, methods=methods)
    per_rep = [{"rep": rec.rep, **rec.report.as_row()} for rec in records]
    summary = summarize(records)
    tracker = _OutputTracker(Path(args.out))
    try:
        tracker.path("metrics.csv").write_text(_format_table(
            per_rep, ["rep", "method", "tpr", "tnr", "frob_per_p_cov", "l1_per_p_cov",
                      "frob_per_p_cor", "l1_per_p_cor"]))
        tracker.path("metrics_summary.csv").write_text(_format_table(
            summary, ["method", "reps", "tpr", "tnr", "frob_per_p_cov", "l1_per_p_cov",
                      "frob_per_p_cor", "l1_per_p_cor"]))
        tracker.path("study.json").write_text(json.dumps({
            "model": args.model, "n": args.n, "p": args.p, "reps": args.reps,
            "seed": args.seed, "methods": list(methods),
        }, indent=2) + "\n")
    except Exception:
        tracker.discard_all()
        raise
    return EXIT_OK


def cmd_stability(args) -> int:
    dataset = ingest_counts(args.input, args.labels_column, args.pseudocount)
    cfg = _solver_config(args, dataset.h_count)
    report = bootstrap_stability(dataset, args.bootstrap, cfg, args.seed)
    tracker = _OutputTracker(Path(args.out))

    def fmt(value: float) -> str:
        return "---" if np.isnan(value) else f"{value:.1f}"

    lines = [f"bootstrap replicates: {report.b} (failed: {report.failed_replicates})", ""]
    lines.append("All correlations")
    header = "            " + "  ".join(f"{name:>10}" for name in report.population_names)
    lines.append(header)
    lines.append("Positive    " + "  ".join(f"{c:>10}" for c in report.positive_counts))
    lines.append("Negative    " + "  ".join(f"{c:>10}" for c in report.negative_counts))
    lines.append("Stability   " + "  ".join(f"{fmt(s):>10}" for s in report.per_population_stability))
    lines.append("")
    lines.append("Shared correlations")
    lines.append(f"Same sign   {report.shared_same_sign}")
    lines.append(f"Diff sign   {report.shared_diff_sign}")
    lines.append(f"Stability   {fmt(report.shared_stability)}")
    lines.append("")
    lines.append("Distinct correlations")
    for name, count in zip(report.population_names, report.distinct_counts):
        lines.append(f"D({name})   {count}")
    lines.append(f"Stability   {fmt(report.distinct_stability)}")
    try:
        tracker.path("stability.txt").write_text("\n".join(lines) + "\n")
        tracker.path("stability.json").write_text(json.dumps({
            "b": report.b,
            "failed_replicates": report.failed_replicates,
            "population_names": list(report.population_names),
            "positive_counts": list(report.positive_counts),
            "negative_counts": list(report.negative_counts),
            "per_population_stability": [None if np.isnan(s) else s for s in report.per_population_stability],
            "shared_same_sign": report.shared_same_sign,
            "shared_diff_sign": report.shared_diff_sign,
            "shared_stability": None if np.isnan(report.shared_stability) else report.shared_stability,
            "distinct_counts": list(report.distinct_counts),
            "distinct_stability": None if np.isnan(report.distinct_stability) else report.distinct_stability,
            "edge_frequency": report.edge_frequency.tolist(),
            "support_threshold": report.support_threshold,
            "lambda": cfg.lam,
            "gamma": cfg.gamma,
            "seed": args.seed,
        }, indent=2) + "\n")
    except Exception:
        tracker.discard_all()
        raise
    return EXIT_OK


def cmd_export_network(args) -> int:
    import networkx as nx

    run_dir = Path(args.input)
    sidecar_path = run_dir / "estimate.json" if run_dir.is_dir() else run_dir
    info = json.loads(sidecar_path.read_text())
    base = sidecar_path.parent
    slices, labels = [], None
    for name in info["matrix_files"]:
        labels, matrix = read_matrix(base / name)
        slices.append(matrix)
    omega = np.stack(slices)
    correlation = to_correlation(omega).omega

    tracker = _OutputTracker(Path(args.out))
    try:
        for name, corr in zip(info["population_names"], correlation):
            graph = nx.Graph()
            for label in labels:
                graph.add_node(label)
            p = corr.shape[0]
            for j in range(p):
                for k in range(j + 1, p):
                    value = corr[j, k]
                    if abs(value) > 1e-8:
                        graph.add_edge(
                            labels[j], labels[k],
                            weight=float(value),
                            sign="positive" if value > 0 else "negative",
                            width=float(5.0 * abs(value)),
                        )
            nx.write_gml(graph, tracker.path(f"network_{name}.gml"))
    except Exception:
        tracker.discard_all()
        raise
    return EXIT_OK


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lambda", dest="lam", type=float, default=0.0,
                        help="elementwise penalty weight")
    parser.add_argument("--gamma", type=float, default=0.0, help="fiber penalty weight")
    parser.add_argument("--per-population-lambda", default=None,
                        help="comma-separated per-population overrides of --lambda")
    parser.add_argument("--epsilon", default="1e-4",
                        help="eigenvalue floor, or 'none' to drop the constraint")
    parser.add_argument("--tol", type=float, default=1e-7, help="relative objective tolerance")
    parser.add_argument("--max-iter", type=int, default=10_000, help="iteration budget")
    parser.add_argument("--allow-nonconverged", action="store_true",
                        help="exit 0 even when the iteration budget is exhausted")


def _add_input_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="count table (tsv or csv)")
    parser.add_argument("--labels-column", default="population",
                        help="name of the population label column")
    parser.add_argument("--pseudocount", type=float, default=DEFAULT_PSEUDOCOUNT,
                        help="constant added to every count before normalization")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compcov",
        description="Sparse positive-definite covariance estimation for compositional data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit at fixed penalties")
    _add_input_flags(est)
    _add_solver_flags(est)
    est.add_argument("--out", required=True)
    est.set_defaults(func=cmd_estimate)

    cv = sub.add_parser("cv", help="cross-validate penalties, then refit")
    _add_input_flags(cv)
    _add_solver_flags(cv)
    cv.add_argument("--folds", type=int, default=10)
    cv.add_argument("--seed", type=int, default=0)
    cv.add_argument("--out", required=True)
    cv.set_defaults(func=cmd_cv)

    sim = sub.add_parser("simulate", help="replicate a synthetic study")
    sim.add_argument("--model", type=int, required=True, choices=(1, 2, 3))
    sim.add_argument("--n", type=int, required=True, help="samples per population")
    sim.add_argument("--p", type=int, required=True, help="number of variables")
    sim.add_argument("--reps", type=int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--methods", default=None, help=f"comma-separated subset of {METHODS}")
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    stab = sub.add_parser("stability", help="bootstrap stability of a point estimate")
    _add_input_flags(stab)
    _add_solver_flags(stab)
    stab.add_argument("--bootstrap", type=int, default=100, help="replicate count")
    stab.add_argument("--seed", type=int, default=0)
    stab.add_argument("--out", required=True)
    stab.set_defaults(func=cmd_stability)

    exp = sub.add_parser("export-network", help="emit per-population graph files")
    exp.add_argument("--input", required=True, help="estimate directory or sidecar path")
    exp.add_argument("--out", required=True)
    exp.set_defaults(func=cmd_export_network)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
