"""Tuning-parameter selection and bootstrap stability assessment.

Grid cells, folds, and bootstrap replicates are independent work items; they
may run on a thread pool (size taken from the ``COMPCOV_THREADS`` environment
variable) and are always reduced in index order, so results are deterministic
regardless of scheduling.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .data import CompositionDataset, variation_matrix
from .solver import NumericError, SolverConfig, fit, loss

THREADS_ENV_VAR = "COMPCOV_THREADS"
STABILITY_FRACTION = 0.95


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        warnings.warn(f"ignoring non-integer {THREADS_ENV_VAR}={raw!r}")
        return 1


def _map_indexed(func: Callable, items: Sequence) -> list:
    """Apply ``func`` to items, possibly threaded, preserving input order."""
    workers = _thread_count()
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


@dataclass(frozen=True)
class TuningGrid:
    """Candidate penalty values (descending) and fold layout.

    ``pure_group`` permits a zero elementwise penalty for grids that rely on
    the fiber penalty alone.
    """

    lambdas: tuple[float, ...]
    gammas: tuple[float, ...]
    folds: int = 10
    seed: int = 0
    pure_group: bool = False

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        gams = tuple(float(v) for v in self.gammas)
        if not lams or not gams:
            raise ValueError("lambda and gamma candidate lists must be nonempty")
        if list(lams) != sorted(lams, reverse=True) or list(gams) != sorted(gams, reverse=True):
            raise ValueError("candidate lists must be descending")
        if min(lams) <= 0 and not self.pure_group:
            raise ValueError("lambda candidates must be strictly positive (set pure_group for 0)")
        if min(lams) < 0 or min(gams) < 0:
            raise ValueError("candidates must be nonnegative")
        if self.folds < 2:
            raise ValueError("cross-validation requires at least 2 folds")
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "gammas", gams)


@dataclass(frozen=True)
class CvReport:
    """Cross-validation surface and the selected penalty pair."""

    lambdas: tuple[float, ...]
    gammas: tuple[float, ...]
    folds: int
    seed: int
    score_surface: np.ndarray
    per_fold_scores: np.ndarray
    selected_lambda: float
    selected_gamma: float

    def __post_init__(self):
        if not np.isfinite(self.score_surface).all():
            raise ValueError("cross-validation surface contains non-finite scores")


@dataclass(frozen=True)
class StabilityReport:
    """Bootstrap edge-frequency tables around a point estimate.

    Frequencies count replicates (out of ``b``) in which an edge was nonzero;
    stability percentages are the share of tallied edges selected in at least
    95% of the replicates. ``edge_frequency`` is per population;
    ``joint_frequency`` counts replicates where the edge was nonzero in every
    population at once.
    """

    b: int
    population_names: tuple[str, ...]
    positive_counts: tuple[int, ...]
    negative_counts: tuple[int, ...]
    per_population_stability: tuple[float, ...]
    edge_frequency: np.ndarray
    joint_frequency: np.ndarray
    shared_same_sign: int
    shared_diff_sign: int
    shared_stability: float
    distinct_counts: tuple[int, ...]
    distinct_stability: float
    failed_replicates: int
    support_threshold: float


def make_folds(sizes: Sequence[int], v: int, seed: int) -> list[np.ndarray]:
    """Per-population fold labels: a seeded permutation split into v parts."""
    if v < 2:
        raise ValueError("at least 2 folds are required")
    if v > min(sizes):
        raise ValueError(f"{v} folds exceed the smallest population size {min(sizes)}")
    rng = np.random.default_rng(seed)
    assignments = []
    for n in sizes:
        labels = np.empty(n, dtype=int)
        for fold, chunk in enumerate(np.array_split(rng.permutation(n), v)):
            labels[chunk] = fold
        assignments.append(labels)
    return assignments


def _fold_variation(data: CompositionDataset, assignments: list[np.ndarray], v: int):
    """Variation tensors from outside fold v (train) and inside it (score)."""
    train = np.stack([variation_matrix(b[a != v]) for b, a in zip(data.populations, assignments)])
    held = np.stack([variation_matrix(b[a == v]) for b, a in zip(data.populations, assignments)])
    return train, held


def _select_pair(lambdas, gammas, surface: np.ndarray) -> tuple[float, float]:
    """Minimum of the surface, ties broken toward larger gamma then larger lambda."""
    best = surface.min()
    ties = np.argwhere(surface == best)
    pick = max(ties.tolist(), key=lambda ij: (gammas[ij[1]], lambdas[ij[0]]))
    return float(lambdas[pick[0]]), float(gammas[pick[1]])


def cv_select(data: CompositionDataset, grid: TuningGrid, cfg: SolverConfig) -> CvReport:
    """V-fold cross-validation over the (lambda, gamma) grid.

    For every fold, each candidate pair is fit on variation tensors computed
    from the samples outside the fold and scored by the Frobenius criterion
    against the variation tensor of the held-out samples. Fits are cold
    starts, so the surface does not depend on evaluation order.
    """
    assignments = make_folds(data.sizes, grid.folds, grid.seed)
    splits = [_fold_variation(data, assignments, v) for v in range(grid.folds)]

    cells = [(i, j) for i in range(len(grid.lambdas)) for j in range(len(grid.gammas))]

    def score_cell(cell):
        i, j = cell
        cell_cfg = replace(cfg, lam=grid.lambdas[i], gamma=grid.gammas[j], per_population_lam=None)
        scores = np.empty(grid.folds)
        for v, (train, held) in enumerate(splits):
            try:
                result = fit(train, cell_cfg)
            except NumericError as err:
                raise NumericError(
                    f"fold {v} failed at lambda={grid.lambdas[i]:.6g}, gamma={grid.gammas[j]:.6g}: {err}"
                ) from err
            scores[v] = loss(result.estimate, held)
        return scores

    per_cell = _map_indexed(score_cell, cells)
    per_fold = np.empty((grid.folds, len(grid.lambdas), len(grid.gammas)))
    for (i, j), scores in zip(cells, per_cell):
        per_fold[:, i, j] = scores
    surface = per_fold.sum(axis=0)
    sel_lam, sel_gam = _select_pair(grid.lambdas, grid.gammas, surface)
    return CvReport(
        lambdas=grid.lambdas,
        gammas=grid.gammas,
        folds=grid.folds,
        seed=grid.seed,
        score_surface=surface,
        per_fold_scores=per_fold,
        selected_lambda=sel_lam,
        selected_gamma=sel_gam,
    )


def validation_select(theta_train, theta_val, lambdas: Sequence[float], gammas: Sequence[float],
                      cfg: SolverConfig) -> tuple[float, float, np.ndarray]:
    """Pick (lambda, gamma) by the held-out Frobenius criterion on a validation tensor.

    The grid protocol used by the simulation studies: fit every candidate on
    the training variation tensor, score against the validation one, and keep
    the minimizer (ties toward larger gamma then larger lambda). Returns the
    selected pair and the score surface.
    """
    lambdas = [float(v) for v in lambdas]
    gammas = [float(v) for v in gammas]

    def score_cell(cell):
        lam, gam = cell
        result = fit(theta_train, replace(cfg, lam=lam, gamma=gam, per_population_lam=None))
        return loss(result.estimate, theta_val)

    cells = [(lam, gam) for lam in lambdas for gam in gammas]
    scores = _map_indexed(score_cell, cells)
    surface = np.asarray(scores).reshape(len(lambdas), len(gammas))
    sel_lam, sel_gam = _select_pair(lambdas, gammas, surface)
    return sel_lam, sel_gam, surface


def default_lambda_grid(theta, count: int = 10, span: float = 1e-3) -> tuple[float, ...]:
    """Descending log-spaced elementwise penalties below the gradient scale.

    The upper end is max |4 theta_hjk| over off-diagonal entries: the
    magnitude of the loss gradient's off-diagonal block at the diagonal
    initializer, above which the elementwise penalty zeroes everything.
    """
    arr = np.asarray(getattr(theta, "theta", theta), dtype=float)
    lam_max = float(np.abs(4.0 * arr).max())
    if lam_max <= 0:
        raise ValueError("variation tensor has no off-diagonal signal to scale a grid")
    return tuple(np.geomspace(lam_max, lam_max * span, count))


def default_gamma_grid(theta, count: int = 10, span: float = 1e-3) -> tuple[float, ...]:
    """Descending log-spaced fiber penalties below the gradient fiber-norm scale."""
    arr = np.asarray(getattr(theta, "theta", theta), dtype=float)
    fiber = np.sqrt(((4.0 * arr) ** 2).sum(axis=0))
    gam_max = float(fiber.max())
    if gam_max <= 0:
        raise ValueError("variation tensor has no off-diagonal signal to scale a grid")
    return tuple(np.geomspace(gam_max, gam_max * span, count))


def _upper_pairs(p: int) -> np.ndarray:
    return np.triu(np.ones((p, p), dtype=bool), k=1)


def bootstrap_stability(data: CompositionDataset, b: int, cfg_point: SolverConfig,
                        seed: int, support_threshold: float = 1e-8) -> StabilityReport:
    """Refit on resampled data and tabulate edge selection frequencies.

    The point estimate is fit on the full data. Each replicate resamples rows
    with replacement within every population (sizes preserved), recomputes
    variation tensors, and refits with the same penalties. Edges are read on
    unordered pairs at the absolute ``support_threshold``. Replicates whose
    fit fails numerically are excluded and counted.
    """
    if b < 1:
        raise ValueError("at least one bootstrap replicate is required")
    theta_full = np.stack([variation_matrix(block) for block in data.populations])
    point = fit(theta_full, cfg_point).estimate.omega
    p = data.p
    h_count = data.h_count
    upper = _upper_pairs(p)

    point_sign = np.where(np.abs(point) > support_threshold, np.sign(point), 0.0)
    point_nz = point_sign != 0
    positive = tuple(int(((point_sign[h] > 0) & upper).sum()) for h in range(h_count))
    negative = tuple(int(((point_sign[h] < 0) & upper).sum()) for h in range(h_count))

    rng = np.random.default_rng(seed)
    index_sets = [
        [rng.integers(0, n, size=n) for n in data.sizes]
        for _ in range(b)
    ]

    def refit(indices):
        theta = np.stack([
            variation_matrix(block[idx]) for block, idx in zip(data.populations, indices)
        ])
        try:
            return np.abs(fit(theta, cfg_point).estimate.omega) > support_threshold
        except NumericError as err:
            warnings.warn(f"bootstrap replicate failed and was excluded: {err}")
            return None

    supports = _map_indexed(refit, index_sets)
    failed = sum(1 for s in supports if s is None)
    kept = [s for s in supports if s is not None]
    edge_frequency = np.zeros((h_count, p, p), dtype=int)
    joint_frequency = np.zeros((p, p), dtype=int)
    for s in kept:
        edge_frequency += s.astype(int)
        joint_frequency += s.all(axis=0).astype(int)

    need = STABILITY_FRACTION * b

    def stable_share(mask: np.ndarray, freq: np.ndarray) -> float:
        total = int(mask.sum())
        if total == 0:
            return float("nan")
        return 100.0 * float((freq[mask] >= need).sum()) / total

    per_pop_stability = tuple(
        stable_share(point_nz[h] & upper, edge_frequency[h]) for h in range(h_count)
    )

    nz_everywhere = point_nz.all(axis=0)
    same_sign = nz_everywhere & (np.abs(point_sign.sum(axis=0)) == h_count)
    shared_same = int((same_sign & upper).sum())
    shared_diff = int(((nz_everywhere & ~same_sign) & upper).sum())
    shared_stability = stable_share(nz_everywhere & upper, joint_frequency)

    exactly_one = point_nz.sum(axis=0) == 1
    distinct_counts = tuple(
        int(((point_nz[h] & exactly_one) & upper).sum()) for h in range(h_count)
    )
    distinct_mask = np.concatenate([
        (point_nz[h] & exactly_one & upper).ravel() for h in range(h_count)
    ])
    distinct_freq = np.concatenate([edge_frequency[h].ravel() for h in range(h_count)])
    distinct_stability = stable_share(distinct_mask, distinct_freq)

    return StabilityReport(
        b=b,
        population_names=data.population_names,
        positive_counts=positive,
        negative_counts=negative,
        per_population_stability=per_pop_stability,
        edge_frequency=edge_frequency,
        joint_frequency=joint_frequency,
        shared_same_sign=shared_same,
        shared_diff_sign=shared_diff,
        shared_stability=shared_stability,
        distinct_counts=distinct_counts,
        distinct_stability=distinct_stability,
        failed_replicates=failed,
        support_threshold=support_threshold,
    )
