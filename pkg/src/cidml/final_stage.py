"""Weighted residual regression and sandwich variances."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import linalg
from scipy.stats import norm

from cidml.crossfit import CrossFitResult
from cidml.errors import ArgumentError, EstimationError
from cidml.weighting import EstimandSpec, WeightedSample


def z_value(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ArgumentError(f"confidence level must be in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2.0))


def normal_ci(center: float | np.ndarray, var: float | np.ndarray, level: float):
    half = z_value(level) * np.sqrt(var)
    return center - half, center + half


def _check_inputs(*arrays: np.ndarray) -> None:
    n = arrays[0].shape[0]
    if n < 2:
        raise ArgumentError("residual regression needs at least 2 rows")
    for a in arrays[1:]:
        if a.shape[0] != n:
            raise ArgumentError("residual vectors differ in length")


def weighted_ols_scalar(y_res: np.ndarray, d_res: np.ndarray, w: np.ndarray) -> float:
    """beta = sum(w d y) / sum(w d^2); no intercept."""
    y, d, w = (np.asarray(a, dtype=float) for a in (y_res, d_res, w))
    _check_inputs(y, d, w)
    denom = float(np.sum(w * d * d))
    if not denom > 0:
        raise EstimationError("degenerate treatment residuals: sum(w * d_res^2) is zero")
    return float(np.sum(w * d * y) / denom)


def sandwich_variance(
    y_res: np.ndarray, d_res: np.ndarray, w: np.ndarray, beta: float
) -> tuple[float, float]:
    """(homoscedastic, Huber-White) variance of the scalar coefficient.

    H = (D'WD)^-1 D'W, Sigma = diag(u_p^2) with u = y - d beta.
    The homoscedastic flavor replaces u_p^2 by sum(w u^2) / sum(w).
    """
    y, d, w = (np.asarray(a, dtype=float) for a in (y_res, d_res, w))
    _check_inputs(y, d, w)
    denom = float(np.sum(w * d * d))
    if not denom > 0:
        raise EstimationError("degenerate treatment residuals: sum(w * d_res^2) is zero")
    h = w * d / denom
    u2 = (y - d * beta) ** 2
    h2 = h * h
    var_hc = float(np.sum(h2 * u2))
    sigma2 = float(np.sum(w * u2) / np.sum(w))
    var_homo = sigma2 * float(np.sum(h2))
    return var_homo, var_hc


def _gram(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (z * w[:, None]).T @ z


def weighted_ols(z: np.ndarray, y: np.ndarray, w: np.ndarray, *, pinv: bool = False) -> np.ndarray:
    """Weighted least squares for a design without intercept column added."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    _check_inputs(z, y, w)
    a = _gram(z, w)
    rhs = (z * w[:, None]).T @ y
    if pinv:
        return linalg.pinv(a) @ rhs
    rank = np.linalg.matrix_rank(z * np.sqrt(w)[:, None])
    if rank < z.shape[1]:
        raise EstimationError(
            f"design has rank {rank} < {z.shape[1]} columns; use fewer clusters",
            details={"rank": int(rank), "columns": int(z.shape[1])},
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        return linalg.solve(a, rhs, assume_a="pos")


def sandwich_covariance(
    z: np.ndarray, y: np.ndarray, w: np.ndarray, beta: np.ndarray, *, pinv: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """(homoscedastic, HC) K x K covariance; same H Sigma H' construction as the scalar case."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    a = _gram(z, w)
    a_inv = linalg.pinv(a) if pinv else linalg.inv(a)
    h = a_inv @ (z * w[:, None]).T
    u2 = (np.asarray(y, dtype=float) - z @ beta) ** 2
    cov_hc = (h * u2) @ h.T
    sigma2 = float(np.sum(w * u2) / np.sum(w))
    cov_homo = sigma2 * (h @ h.T)
    return (cov_homo + cov_homo.T) / 2.0, (cov_hc + cov_hc.T) / 2.0


@dataclass(frozen=True)
class AttEstimate:
    beta: float
    var_homoscedastic: float
    var_hc: float
    ci_homoscedastic: tuple[float, float]
    ci_hc: tuple[float, float]
    n_used: int
    estimand: EstimandSpec
    level: float = 0.95

    @property
    def se_homoscedastic(self) -> float:
        return float(np.sqrt(self.var_homoscedastic))

    @property
    def se_hc(self) -> float:
        return float(np.sqrt(self.var_hc))

    @property
    def width_hc(self) -> float:
        return self.ci_hc[1] - self.ci_hc[0]

    @property
    def width_homoscedastic(self) -> float:
        return self.ci_homoscedastic[1] - self.ci_homoscedastic[0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "beta": self.beta,
            "se_homo": self.se_homoscedastic,
            "se_hc": self.se_hc,
            "ci_homo": list(self.ci_homoscedastic),
            "ci_hc": list(self.ci_hc),
            "n_used": self.n_used,
            "level": self.level,
            "estimand": self.estimand.kind,
        }


def estimate_att(
    cf: CrossFitResult, ws: WeightedSample, level: float = 0.95, *, intercept: bool = False
) -> AttEstimate:
    """Final DML stage on the kept customers: weighted OLS of y_res on d_res."""
    idx = ws.kept_indices
    y, d, w = cf.y_res[idx], cf.d_res[idx], ws.weights
    if intercept:
        z = np.column_stack([np.ones(idx.size), d])
        coef = weighted_ols(z, y, w)
        cov_homo, cov_hc = sandwich_covariance(z, y, w, coef)
        beta, var_homo, var_hc = float(coef[1]), float(cov_homo[1, 1]), float(cov_hc[1, 1])
    else:
        beta = weighted_ols_scalar(y, d, w)
        var_homo, var_hc = sandwich_variance(y, d, w, beta)

    lo_h, hi_h = normal_ci(beta, var_homo, level)
    lo_r, hi_r = normal_ci(beta, var_hc, level)
    return AttEstimate(
        beta=beta,
        var_homoscedastic=var_homo,
        var_hc=var_hc,
        ci_homoscedastic=(float(lo_h), float(hi_h)),
        ci_hc=(float(lo_r), float(hi_r)),
        n_used=int(idx.size),
        estimand=ws.estimand,
        level=level,
    )
