"""Joint sparse covariance estimation by adaptive proximal-proximal gradient descent.

The objective is a sum of three convex pieces over the (H, p, p) tensor of
covariance slices:

* a smooth Frobenius loss tying each slice to its sample variation matrix,
* an elementwise L1 penalty plus a group penalty on cross-population fibers
  (handled by a closed-form sparse-group proximal map), and
* the indicator of the symmetric matrices with eigenvalues at or above a
  floor (handled by an eigenvalue-clamp projection).

The three-operator splitting alternates a gradient step through the
sparse-group prox, the eigenvalue projection, and a running correction
tensor, with a backtracking step size that only ever shrinks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CovarianceTensor, _as_array, closed_form_diagonal


class NumericError(RuntimeError):
    """Numerical failure inside the solver (backtracking exhausted, NaNs, ...)."""


def default_step_size(p: int) -> float:
    """Initial step size 1/(8p), the order of the quadratic's curvature."""
    return 1.0 / (8.0 * p)


@dataclass(frozen=True)
class SolverConfig:
    """Penalties, eigenvalue floor, and step-size policy.

    Parameters
    ----------
    lam : float
        Elementwise penalty weight (off-diagonals only).
    gamma : float
        Fiber penalty weight on the length-H vectors of a fixed (j, k) entry.
    per_population_lam : sequence of float, optional
        Length-H override of ``lam``, one weight per population.
    epsilon : float or None
        Eigenvalue floor. ``None`` (or ``-inf``) disables the projection
        entirely, leaving an unconstrained penalized least-squares problem.
    alpha0 : float, optional
        Initial step size; defaults to 1/(8p) at fit time.
    tau : float
        Backtracking shrink factor in (0, 1).
    tol : float
        Relative change of the penalized objective that stops the loop.
    max_iter, max_backtracks : int
        Iteration budgets.

    Note: both penalties sum over ordered pairs j != k (both triangles), so
    effective weights are doubled relative to an upper-triangle convention.
    """

    lam: float = 0.0
    gamma: float = 0.0
    per_population_lam: tuple[float, ...] | None = None
    epsilon: float | None = 1e-4
    alpha0: float | None = None
    tau: float = 0.5
    tol: float = 1e-7
    max_iter: int = 10_000
    max_backtracks: int = 60

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("penalty weights must be nonnegative")
        eps = self.epsilon
        if eps is not None and np.isneginf(eps):
            eps = None
        if eps is not None and not np.isfinite(eps):
            raise ValueError("epsilon must be finite, None, or -inf")
        object.__setattr__(self, "epsilon", eps)
        if self.per_population_lam is not None:
            lams = tuple(float(v) for v in self.per_population_lam)
            if any(v < 0 for v in lams):
                raise ValueError("per-population penalties must be nonnegative")
            object.__setattr__(self, "per_population_lam", lams)
        if self.alpha0 is not None and self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.max_backtracks < 1:
            raise ValueError("iteration budgets must be at least 1")

    def lambda_vector(self, h_count: int) -> np.ndarray:
        """Per-population L1 weights, broadcasting the scalar default."""
        if self.per_population_lam is None:
            return np.full(h_count, float(self.lam))
        if len(self.per_population_lam) != h_count:
            raise ValueError(
                f"per_population_lam has length {len(self.per_population_lam)}, expected {h_count}"
            )
        return np.asarray(self.per_population_lam, dtype=float)


@dataclass
class SolverState:
    """Iterate blocks of the splitting (bare arrays for the inner loop)."""

    omega: np.ndarray
    omega_tilde: np.ndarray
    psi: np.ndarray
    alpha: float
    iteration: int = 0


@dataclass(frozen=True)
class FitResult:
    """Solver output: the feasible iterate at termination plus diagnostics."""

    estimate: CovarianceTensor
    objective_trace: np.ndarray
    converged: bool
    iterations: int
    final_alpha: float
    backtrack_count: int
    accepted_loss: np.ndarray
    accepted_surrogate: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.objective_trace).all():
            raise ValueError("objective trace contains non-finite values")

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


def _residual(omega: np.ndarray, theta: np.ndarray) -> np.ndarray:
    d = np.diagonal(omega, axis1=1, axis2=2)
    return theta - d[:, :, None] - d[:, None, :] + 2.0 * omega


def _check_shapes(omega: np.ndarray, theta: np.ndarray) -> None:
    if omega.shape != theta.shape or omega.ndim != 3:
        raise ValueError(f"shape mismatch: omega {omega.shape} vs theta {theta.shape}")


def loss(omega, theta) -> float:
    """Smooth part: sum over populations of the squared Frobenius residual.

    The residual of slice h is theta_h - w 1' - 1 w' + 2 Omega_h with
    w = diag(Omega_h); its diagonal vanishes identically.
    """
    omega = _as_array(omega, "omega")
    theta = _as_array(theta, "theta")
    _check_shapes(omega, theta)
    r = _residual(omega, theta)
    return float((r * r).sum())


def grad_loss(omega, theta) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the full (H, p, p) tensor.

    Off-diagonal entries are 8 Omega_hjk - 4 Omega_hjj - 4 Omega_hkk
    + 4 theta_hjk; diagonal entries are -4 times the residual row sums.
    Slices of the output are symmetric whenever the inputs are.
    """
    omega = _as_array(omega, "omega")
    theta = _as_array(theta, "theta")
    _check_shapes(omega, theta)
    r = _residual(omega, theta)
    g = 4.0 * r
    idx = np.arange(omega.shape[1])
    g[:, idx, idx] = -4.0 * r.sum(axis=2)
    return g


def penalty(omega, cfg: SolverConfig) -> float:
    """Nonsmooth part: L1 on off-diagonals plus the fiber group norm."""
    omega = _as_array(omega, "omega")
    lam = cfg.lambda_vector(omega.shape[0])
    return _penalty_value(omega, lam, cfg.gamma)


def _penalty_value(omega: np.ndarray, lam: np.ndarray, gamma: float) -> float:
    off = omega.copy()
    idx = np.arange(omega.shape[1])
    off[:, idx, idx] = 0.0
    l1 = float((lam * np.abs(off).sum(axis=(1, 2))).sum())
    fiber = np.sqrt((off * off).sum(axis=0))
    return l1 + gamma * float(fiber.sum())


def prox_sparse_group(gamma_point: np.ndarray, a_lambda, a_gamma: float) -> np.ndarray:
    """Closed-form prox of the sparse-group penalty, fiber by fiber.

    Diagonal fibers pass through unchanged. Off-diagonal fibers are
    soft-thresholded elementwise at ``a_lambda`` (scalar, or one threshold per
    population) and then shrunk as a group: scaled by (1 - a_gamma/||w||)_+,
    zeroed when the thresholded fiber norm is at most ``a_gamma``.
    """
    g = np.asarray(gamma_point, dtype=float)
    t = np.asarray(a_lambda, dtype=float)
    if t.ndim == 1:
        t = t[:, None, None]
    w = np.sign(g) * np.maximum(np.abs(g) - t, 0.0)
    norms = np.sqrt((w * w).sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norms > 0.0, np.maximum(1.0 - a_gamma / norms, 0.0), 0.0)
    out = factor[None, :, :] * w
    idx = np.arange(g.shape[1])
    out[:, idx, idx] = g[:, idx, idx]
    return out


def project_psd_floor(a: np.ndarray, epsilon: float | None) -> np.ndarray:
    """Frobenius projection onto symmetric matrices with eigenvalues >= epsilon.

    Symmetrizes the input, clamps the eigenvalues, and reconstructs. With
    ``epsilon`` None (or -inf) only the symmetrization is applied.
    """
    a = np.asarray(a, dtype=float)
    sym = (a + a.T) / 2.0
    if epsilon is None or np.isneginf(epsilon):
        return sym
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as err:
        raise NumericError(f"eigendecomposition failed on a {a.shape} matrix: {err}") from err
    out = (vecs * np.maximum(vals, epsilon)) @ vecs.T
    return (out + out.T) / 2.0


def _project_slices(tensor: np.ndarray, epsilon: float | None) -> np.ndarray:
    """Slice-wise eigenvalue-floor projection with one batched decomposition."""
    sym = (tensor + tensor.transpose(0, 2, 1)) / 2.0
    if epsilon is None:
        return sym
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as err:
        raise NumericError(f"eigendecomposition failed on a {tensor.shape} tensor: {err}") from err
    out = (vecs * np.maximum(vals, epsilon)[:, None, :]) @ vecs.transpose(0, 2, 1)
    return (out + out.transpose(0, 2, 1)) / 2.0


def surrogate_q(candidate, base, grad_at_base, loss_at_base: float, alpha: float) -> float:
    """Quadratic upper model whose comparison with the loss drives backtracking."""
    diff = np.asarray(candidate, dtype=float) - np.asarray(base, dtype=float)
    lin = float((np.asarray(grad_at_base) * diff).sum())
    return loss_at_base + lin + float((diff * diff).sum()) / (2.0 * alpha)


def _default_init(theta: np.ndarray, epsilon: float | None) -> np.ndarray:
    """Diagonal starting tensor from the closed-form variance estimates.

    For p < 3 (where the closed form is undefined) half the mean off-diagonal
    per row is used instead. Diagonals are clamped at the floor when active.
    """
    h_count, p = theta.shape[0], theta.shape[1]
    init = np.zeros_like(theta)
    for h in range(h_count):
        if p >= 3:
            diag = closed_form_diagonal(theta[h])
        else:
            diag = theta[h].sum(axis=1) / (2.0 * (p - 1))
        if epsilon is not None:
            diag = np.maximum(diag, epsilon)
        init[h, np.arange(p), np.arange(p)] = diag
    return init


def fit(theta, cfg: SolverConfig, init: CovarianceTensor | np.ndarray | None = None) -> FitResult:
    """Run the adaptive proximal-proximal gradient descent loop.

    Each iteration performs a gradient step through the sparse-group prox
    (diagonals take the bare gradient step), backtracks the step size until
    the loss is bounded by its quadratic model at the previous feasible
    iterate, projects slice-wise onto the eigenvalue-floor set, and updates
    the correction tensor. The loop stops when the relative change of the
    penalized objective at the feasible iterate falls below ``cfg.tol``.

    Returns the feasible iterate at termination. The step size never
    increases between iterations.
    """
    theta = _as_array(theta, "theta")
    if theta.ndim != 3 or theta.shape[1] != theta.shape[2]:
        raise ValueError("theta must have shape (H, p, p)")
    h_count, p = theta.shape[0], theta.shape[1]
    if p < 2:
        raise ValueError("p = 1 is degenerate: there are no off-diagonal entries")
    lam = cfg.lambda_vector(h_count)
    eps = cfg.epsilon
    alpha = cfg.alpha0 if cfg.alpha0 is not None else default_step_size(p)

    if init is None:
        omega_tilde = _default_init(theta, eps)
    else:
        start = _as_array(init, "omega")
        if start.shape != theta.shape:
            raise ValueError("init shape must match theta")
        omega_tilde = _project_slices(start, eps)
    state = SolverState(omega_tilde.copy(), omega_tilde, np.zeros_like(theta), alpha)

    loss_base = loss(state.omega_tilde, theta)
    objective_prev = loss_base + _penalty_value(state.omega_tilde, lam, cfg.gamma)
    trace = [objective_prev]
    accepted_loss: list[float] = []
    accepted_q: list[float] = []
    backtracks = 0
    converged = False

    for iteration in range(1, cfg.max_iter + 1):
        grad = grad_loss(state.omega_tilde, theta)

        omega_new = None
        for _ in range(cfg.max_backtracks + 1):
            gamma_point = state.omega_tilde - state.alpha * (state.psi + grad)
            candidate = prox_sparse_group(gamma_point, state.alpha * lam, state.alpha * cfg.gamma)
            loss_new = loss(candidate, theta)
            q = surrogate_q(candidate, state.omega_tilde, grad, loss_base, state.alpha)
            if loss_new <= q:
                omega_new = candidate
                break
            state.alpha *= cfg.tau
            backtracks += 1
        if omega_new is None:
            raise NumericError(
                f"backtracking exhausted after {cfg.max_backtracks} shrinks "
                f"(alpha={state.alpha:.3e}) at iteration {iteration}"
            )

        omega_tilde_new = _project_slices(omega_new + state.alpha * state.psi, eps)
        state.psi = state.psi + (omega_new - omega_tilde_new) / state.alpha
        state.omega = omega_new
        state.omega_tilde = omega_tilde_new
        state.iteration = iteration

        loss_base = loss(omega_tilde_new, theta)
        objective = loss_base + _penalty_value(omega_tilde_new, lam, cfg.gamma)
        if not np.isfinite(objective):
            raise NumericError(f"objective became non-finite at iteration {iteration}")
        trace.append(objective)
        accepted_loss.append(loss_new)
        accepted_q.append(q)

        if abs(objective - objective_prev) / max(1.0, abs(objective_prev)) < cfg.tol:
            converged = True
            break
        objective_prev = objective

    estimate = CovarianceTensor(state.omega_tilde, feasible_floor=eps)
    return FitResult(
        estimate=estimate,
        objective_trace=np.asarray(trace),
        converged=converged,
        iterations=state.iteration,
        final_alpha=state.alpha,
        backtrack_count=backtracks,
        accepted_loss=np.asarray(accepted_loss),
        accepted_surrogate=np.asarray(accepted_q),
    )
