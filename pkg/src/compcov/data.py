"""Compositional data model, sample variation matrices, and synthetic ground truths.

Compositions live on the probability simplex; the quantity of interest is the
covariance of the latent log-abundances underlying them. The variation matrix
(variances of pairwise log-ratios) is the observable summary that links the
two: theta = omega 1' + 1 omega' - 2 Omega, where omega = diag(Omega).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ROW_SUM_TOL = 1e-9
FEASIBILITY_SLACK = 1e-8


def _as_array(x, attr: str) -> np.ndarray:
    """Accept either a domain wrapper or a bare ndarray."""
    return np.asarray(getattr(x, attr, x), dtype=float)


@dataclass(frozen=True)
class CompositionDataset:
    """Per-population samples on the probability simplex.

    Parameters
    ----------
    populations : sequence of ndarray
        One block per population; block h has shape (n_h, p) with strictly
        positive rows summing to one. Zeros must be removed by pseudocounting
        before construction.
    labels : sequence of str, optional
        Variable names, length p.
    population_names : sequence of str, optional
        Length-H names; defaults to ``pop1, pop2, ...``.
    """

    populations: tuple[np.ndarray, ...]
    labels: tuple[str, ...] | None = None
    population_names: tuple[str, ...] = ()

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=float) for b in self.populations)
        if len(blocks) < 1:
            raise ValueError("at least one population is required")
        for h, b in enumerate(blocks):
            if b.ndim != 2:
                raise ValueError(f"population {h} is not a 2-d sample block")
            if b.shape[0] < 2:
                raise ValueError(f"population {h} has fewer than 2 samples")
            if b.shape[1] != blocks[0].shape[1]:
                raise ValueError("all populations must share the same number of variables")
            if not np.isfinite(b).all() or (b <= 0).any():
                raise ValueError(f"population {h} contains nonpositive or non-finite entries")
            if np.abs(b.sum(axis=1) - 1.0).max() > ROW_SUM_TOL:
                raise ValueError(f"population {h} has rows that do not sum to 1 within {ROW_SUM_TOL}")
        if blocks[0].shape[1] < 2:
            raise ValueError("at least 2 variables are required")
        object.__setattr__(self, "populations", blocks)
        names = tuple(self.population_names) or tuple(f"pop{h + 1}" for h in range(len(blocks)))
        if len(names) != len(blocks):
            raise ValueError("population_names length must equal the number of populations")
        object.__setattr__(self, "population_names", names)
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != blocks[0].shape[1]:
                raise ValueError("labels length must equal the number of variables")
            object.__setattr__(self, "labels", labels)

    @property
    def h_count(self) -> int:
        return len(self.populations)

    @property
    def p(self) -> int:
        return self.populations[0].shape[1]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.populations)


@dataclass(frozen=True)
class VariationTensor:
    """H stacked sample variation matrices (variance units of log-ratios)."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 3 or theta.shape[1] != theta.shape[2]:
            raise ValueError("theta must have shape (H, p, p)")
        if not np.isfinite(theta).all():
            raise ValueError("theta contains non-finite entries")
        if not np.array_equal(theta, theta.transpose(0, 2, 1)):
            raise ValueError("each variation matrix must be exactly symmetric")
        if np.diagonal(theta, axis1=1, axis2=2).any():
            raise ValueError("variation matrices must have an exactly zero diagonal")
        if (theta < 0).any():
            raise ValueError("variation matrices must be nonnegative")
        object.__setattr__(self, "theta", theta)

    @property
    def h_count(self) -> int:
        return self.theta.shape[0]

    @property
    def p(self) -> int:
        return self.theta.shape[1]


@dataclass(frozen=True)
class CovarianceTensor:
    """H stacked covariance matrices of log-abundances.

    When ``feasible_floor`` is set, construction verifies that the smallest
    eigenvalue of every slice is at least the floor minus a small slack.
    """

    omega: np.ndarray
    feasible_floor: float | None = None

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        if omega.ndim != 3 or omega.shape[1] != omega.shape[2]:
            raise ValueError("omega must have shape (H, p, p)")
        if not np.isfinite(omega).all():
            raise ValueError("omega contains non-finite entries")
        if not np.array_equal(omega, omega.transpose(0, 2, 1)):
            raise ValueError("each covariance slice must be exactly symmetric")
        object.__setattr__(self, "omega", omega)
        if self.feasible_floor is not None:
            smallest = min(np.linalg.eigvalsh(s)[0] for s in omega)
            if smallest < self.feasible_floor - FEASIBILITY_SLACK:
                raise ValueError(
                    f"slice eigenvalue {smallest:.3e} violates floor {self.feasible_floor:.3e}"
                )

    @property
    def h_count(self) -> int:
        return self.omega.shape[0]

    @property
    def p(self) -> int:
        return self.omega.shape[1]

    @property
    def diagonals(self) -> np.ndarray:
        """(H, p) array of per-slice diagonals."""
        return np.diagonal(self.omega, axis1=1, axis2=2).copy()


@dataclass(frozen=True)
class GroundTruthSpec:
    """Synthetic ground-truth family: four populations per model.

    Model 1 is banded (two off-diagonals) with all-positive or all-negative
    correlations; Model 2 is block diagonal with one AR(1) block per
    population; Model 3 rescales overlapping AR(1) blocks by heterogeneous
    standard deviations equally spaced from 3 to 1.
    """

    model_id: int
    p: int

    H_COUNT = 4

    def __post_init__(self):
        if self.model_id not in (1, 2, 3):
            raise ValueError("model_id must be 1, 2, or 3")
        if self.model_id == 1 and self.p < 3:
            raise ValueError("model 1 requires p >= 3")
        if self.model_id == 2 and self.p % 4 != 0:
            raise ValueError("model 2 requires p divisible by 4")
        if self.model_id == 3 and self.p % 6 != 0:
            raise ValueError("model 3 requires p divisible by 6")

    def blocks(self) -> list[range]:
        """Per-population index blocks (0-based half-open ranges)."""
        p = self.p
        if self.model_id == 2:
            w = p // 4
            return [range(h * w, (h + 1) * w) for h in range(4)]
        if self.model_id == 3:
            s = p // 6
            return [range(0, 3 * s), range(s, 4 * s), range(2 * s, 5 * s), range(3 * s, 6 * s)]
        raise ValueError("model 1 has no block structure")

    def scale(self) -> np.ndarray:
        """Model-3 standard-deviation profile (3 down to 1)."""
        if self.model_id != 3:
            raise ValueError("only model 3 carries a scale matrix")
        return np.linspace(3.0, 1.0, self.p)


def variation_matrix(x: np.ndarray) -> np.ndarray:
    """Sample variation matrix of one composition block.

    Entry (j, k) is the variance (divisor n, not n-1) of the log-ratios
    log(x_ij / x_ik) across rows i. Computed through the log-scale sample
    covariance S as theta_jk = S_jj + S_kk - 2 S_jk, which is algebraically
    identical and keeps the output exactly symmetric with a zero diagonal.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("expected a (n, p) block with n >= 1")
    logx = np.log(x)
    if not np.isfinite(logx).all():
        raise ValueError("non-finite log-ratio: compositions must be strictly positive")
    y = logx - logx.mean(axis=0)
    s = (y.T @ y) / x.shape[0]
    s = (s + s.T) / 2.0
    d = np.diagonal(s)
    theta = d[:, None] + d[None, :] - 2.0 * s
    np.fill_diagonal(theta, 0.0)
    # variances are nonnegative; the covariance identity can round to -1e-17
    return np.maximum(theta, 0.0)


def variation_tensor(data: CompositionDataset) -> VariationTensor:
    """Stacked sample variation matrices, one slice per population."""
    return VariationTensor(np.stack([variation_matrix(b) for b in data.populations]))


def closed_form_diagonal(theta: np.ndarray) -> np.ndarray:
    """Exact diagonal solution when all off-diagonal covariances are zero.

    For p >= 3 the least-squares fit of the variation identity with all
    off-diagonals pinned to zero has the unique closed form

        w_j = sum_{k != j} theta_jk / (p - 1)
              - sum_{k != j} sum_{l != j} theta_lk / (2 (p - 1) (p - 2)).

    Entries may be negative; no clamping is applied here.
    """
    theta = _as_array(theta, "theta")
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
        raise ValueError("theta must be a square matrix")
    p = theta.shape[0]
    if p < 3:
        raise ValueError("closed-form diagonal requires p >= 3")
    row = theta.sum(axis=1)
    excluded = row.sum() - 2.0 * row
    return row / (p - 1) - excluded / (2.0 * (p - 1) * (p - 2))


def _model1_tensor(p: int) -> np.ndarray:
    j = np.arange(p)
    band = (np.abs(j[:, None] - j[None, :]) >= 1) & (np.abs(j[:, None] - j[None, :]) <= 2)
    pos = np.eye(p) + 0.3 * band
    neg = np.eye(p) - 0.2 * band
    return np.stack([pos, pos, neg, neg])


def _blocked_ar1(p: int, block: range, rho: float, max_lag: int | None) -> np.ndarray:
    j = np.arange(p)
    m = np.zeros((p, p))
    idx = np.asarray(block)
    lag = np.abs(idx[:, None] - idx[None, :])
    sub = rho ** lag.astype(float)
    if max_lag is not None:
        sub = np.where(lag < max_lag, sub, 0.0)
    m[np.ix_(idx, idx)] = sub
    outside = np.setdiff1d(j, idx)
    m[outside, outside] = 1.0
    return m


def model_truth(spec: GroundTruthSpec) -> CovarianceTensor:
    """Ground-truth covariance tensor (H = 4) for the requested model."""
    p = spec.p
    if spec.model_id == 1:
        omega = _model1_tensor(p)
    elif spec.model_id == 2:
        omega = np.stack([_blocked_ar1(p, b, 0.8, p // 4) for b in spec.blocks()])
    else:
        d = spec.scale()
        slices = []
        for b in spec.blocks():
            c = _blocked_ar1(p, b, 0.9, None)
            m = d[:, None] * c * d[None, :]
            slices.append((m + m.T) / 2.0)
        omega = np.stack(slices)
    for h, s in enumerate(omega):
        if np.linalg.eigvalsh(s)[0] <= 0:
            raise ValueError(f"model {spec.model_id} slice {h} is not positive definite")
    return CovarianceTensor(omega)


def draw_log_basis(truth: CovarianceTensor, sizes: Sequence[int], rng: np.random.Generator) -> list[np.ndarray]:
    """Draw latent log-abundance samples, one (n_h, p) block per population.

    Each row is L z with z standard normal and L the lower Cholesky factor
    of the population's covariance slice.
    """
    omega = _as_array(truth, "omega")
    if len(sizes) != omega.shape[0]:
        raise ValueError("sizes length must equal the number of populations")
    if any(n < 2 for n in sizes):
        raise ValueError("every population needs at least 2 samples")
    try:
        factors = [np.linalg.cholesky(s) for s in omega]
    except np.linalg.LinAlgError as err:
        raise ValueError("truth tensor is not positive definite") from err
    return [rng.standard_normal((n, omega.shape[1])) @ L.T for n, L in zip(sizes, factors)]


def compositions_from_basis(log_basis: Sequence[np.ndarray],
                            population_names: Sequence[str] | None = None) -> CompositionDataset:
    """Close latent log-abundances onto the simplex."""
    blocks = []
    for logw in log_basis:
        w = np.exp(logw)
        blocks.append(w / w.sum(axis=1, keepdims=True))
    return CompositionDataset(tuple(blocks), population_names=tuple(population_names or ()))


def simulate_dataset(truth: CovarianceTensor, sizes: Sequence[int], seed: int) -> CompositionDataset:
    """Simulate compositions whose latent log-basis has the given covariances.

    Deterministic for a fixed seed (PCG64 generator). Compositions are
    strictly positive by construction, so no pseudocount step is needed.
    """
    rng = np.random.default_rng(seed)
    return compositions_from_basis(draw_log_basis(truth, sizes, rng))
