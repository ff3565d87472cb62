"""Evaluation metrics: norm errors, support recovery rates, and the latent-basis baseline."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import CovarianceTensor, _as_array

SUPPORT_THRESHOLD = 1e-8


@dataclass(frozen=True)
class ErrorNorms:
    """Average per-population norm errors, each divided by p."""

    frob_per_p: float
    l1_per_p: float
    per_population_frob: tuple[float, ...]
    per_population_l1: tuple[float, ...]


@dataclass(frozen=True)
class MetricsReport:
    """Support-recovery and norm-error summary for one estimate."""

    method: str
    tpr: float
    tnr: float
    frob_per_p_cov: float
    l1_per_p_cov: float
    frob_per_p_cor: float
    l1_per_p_cor: float

    def as_row(self) -> dict:
        return {
            "method": self.method,
            "tpr": self.tpr,
            "tnr": self.tnr,
            "frob_per_p_cov": self.frob_per_p_cov,
            "l1_per_p_cov": self.l1_per_p_cov,
            "frob_per_p_cor": self.frob_per_p_cor,
            "l1_per_p_cor": self.l1_per_p_cor,
        }


def to_correlation(omega) -> CovarianceTensor:
    """Rescale every slice to unit diagonal: R_hjk = O_hjk / sqrt(O_hjj O_hkk)."""
    arr = _as_array(omega, "omega")
    diag = np.diagonal(arr, axis1=1, axis2=2)
    if (diag <= 0).any():
        raise ValueError("correlation scaling requires strictly positive diagonals")
    scale = np.sqrt(diag)
    r = arr / (scale[:, :, None] * scale[:, None, :])
    r = (r + r.transpose(0, 2, 1)) / 2.0
    idx = np.arange(arr.shape[1])
    r[:, idx, idx] = 1.0
    return CovarianceTensor(r)


def error_norms(est, truth) -> ErrorNorms:
    """Frobenius and L1 matrix-norm errors averaged over populations, each / p.

    The L1 matrix norm is the maximum of the L1 vector norms of the columns.
    """
    a = _as_array(est, "omega")
    b = _as_array(truth, "omega")
    if a.shape != b.shape or a.ndim != 3:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    p = a.shape[1]
    diff = a - b
    frob = [float(np.linalg.norm(d, "fro")) / p for d in diff]
    l1 = [float(np.abs(d).sum(axis=0).max()) / p for d in diff]
    return ErrorNorms(
        frob_per_p=float(np.mean(frob)),
        l1_per_p=float(np.mean(l1)),
        per_population_frob=tuple(frob),
        per_population_l1=tuple(l1),
    )


def tpr_tnr(est, truth, threshold: float = SUPPORT_THRESHOLD) -> tuple[float, float]:
    """True positive / true negative rates of off-diagonal support recovery.

    Entries are classified nonzero at magnitude > ``threshold``; counts run
    over ordered pairs j != k and the per-population ratios are averaged.
    A population with no true nonzeros (or no true zeros) is excluded from
    the corresponding average with a warning.
    """
    a = _as_array(est, "omega")
    b = _as_array(truth, "omega")
    if a.shape != b.shape or a.ndim != 3:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    off = ~np.eye(a.shape[1], dtype=bool)
    tprs, tnrs = [], []
    for h in range(a.shape[0]):
        est_nz = np.abs(a[h]) > threshold
        tru_nz = np.abs(b[h]) > threshold
        pos = tru_nz & off
        neg = ~tru_nz & off
        if pos.sum() > 0:
            tprs.append(float((est_nz & pos).sum() / pos.sum()))
        else:
            warnings.warn(f"population {h} has no true nonzero off-diagonals; excluded from TPR")
        if neg.sum() > 0:
            tnrs.append(float((~est_nz & neg).sum() / neg.sum()))
        else:
            warnings.warn(f"population {h} has no true zero off-diagonals; excluded from TNR")
    tpr = float(np.mean(tprs)) if tprs else float("nan")
    tnr = float(np.mean(tnrs)) if tnrs else float("nan")
    return tpr, tnr


def soft_threshold_offdiag(cov: np.ndarray, level: float) -> np.ndarray:
    """Soft-threshold the off-diagonal entries of a covariance matrix."""
    out = np.sign(cov) * np.maximum(np.abs(cov) - level, 0.0)
    np.fill_diagonal(out, np.diagonal(cov))
    return out


def oracle_baseline(train_log_basis: Sequence[np.ndarray],
                    validation_log_basis: Sequence[np.ndarray],
                    thresholds: Sequence[float] | None = None) -> CovarianceTensor:
    """Soft-thresholded sample covariance of the latent log-abundances.

    Usable on synthetic runs only, where the basis samples are observable.
    Per population, the threshold is picked from the grid by Frobenius
    distance between the thresholded training covariance and the validation
    sample covariance; diagonals are never thresholded. Reported elsewhere as
    "oracle-soft" since the thresholding is plain, not adaptive.
    """
    if len(train_log_basis) != len(validation_log_basis):
        raise ValueError("train and validation need the same number of populations")
    slices = []
    for train, val in zip(train_log_basis, validation_log_basis):
        s_train = np.cov(np.asarray(train, dtype=float), rowvar=False)
        s_val = np.cov(np.asarray(val, dtype=float), rowvar=False)
        s_train = (s_train + s_train.T) / 2.0
        if thresholds is not None:
            grid = np.asarray(thresholds, dtype=float)
        else:
            off_max = float(np.abs(s_train - np.diag(np.diagonal(s_train))).max())
            grid = np.linspace(0.0, off_max, 25)
        best = min(grid, key=lambda t: float(np.linalg.norm(soft_threshold_offdiag(s_train, t) - s_val, "fro")))
        slices.append(soft_threshold_offdiag(s_train, float(best)))
    return CovarianceTensor(np.stack(slices))


def metrics_report(est, truth, method: str = "estimate") -> MetricsReport:
    """Bundle TPR/TNR with covariance- and correlation-scale norm errors."""
    cov = error_norms(est, truth)
    cor = error_norms(to_correlation(est), to_correlation(truth))
    tpr, tnr = tpr_tnr(est, truth)
    return MetricsReport(
        method=method,
        tpr=tpr,
        tnr=tnr,
        frob_per_p_cov=cov.frob_per_p,
        l1_per_p_cov=cov.l1_per_p,
        frob_per_p_cor=cor.frob_per_p,
        l1_per_p_cor=cor.l1_per_p,
    )
