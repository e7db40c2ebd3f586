"""Nuisance learners: closed-form ridge and IRLS logistic regression, plus the model registry."""

from __future__ import annotations

import logging
import warnings
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal, Protocol

import numpy as np
from scipy import linalg
from scipy.special import expit
from sklearn.preprocessing import StandardScaler

from cidml.dataset import assign_folds
from cidml.errors import ArgumentError, EstimationError, NumericalError

log = logging.getLogger(__name__)

PROB_EPS = 1e-12
DEFAULT_GRID: tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> Standardizer:
        # constant columns keep scale 1 (sklearn convention)
        sc = StandardScaler().fit(x)
        return cls(mean=sc.mean_.copy(), scale=sc.scale_.copy())

    @classmethod
    def identity(cls, m: int) -> Standardizer:
        return cls(mean=np.zeros(m), scale=np.ones(m))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale


class FittedModel(Protocol):
    def predict(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class RidgeModel:
    coefficients: np.ndarray
    intercept: float
    lam: float
    standardizer: Standardizer | None = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = self.standardizer.transform(x) if self.standardizer else np.asarray(x, dtype=float)
        return z @ self.coefficients + self.intercept

    def raw_coefficients(self) -> tuple[np.ndarray, float]:
        """(coefficients, intercept) on the original feature scale."""
        if self.standardizer is None:
            return self.coefficients.copy(), self.intercept
        w = self.coefficients / self.standardizer.scale
        return w, float(self.intercept - w @ self.standardizer.mean)


@dataclass(frozen=True)
class LogisticModel:
    coefficients: np.ndarray
    intercept: float
    l2: float
    converged: bool
    iterations: int
    standardizer: Standardizer | None = None

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        z = self.standardizer.transform(x) if self.standardizer else np.asarray(x, dtype=float)
        return z @ self.coefficients + self.intercept

    def predict(self, x: np.ndarray) -> np.ndarray:
        # strictly inside (0, 1)
        return np.clip(expit(self.decision_function(x)), PROB_EPS, 1.0 - PROB_EPS)


def _as_matrix(x: np.ndarray) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def fit_ridge(x: np.ndarray, y: np.ndarray, lam: float, *, standardize: bool = False) -> RidgeModel:
    """Minimize ||y - Xw - b||^2 + lam ||w||^2 via the normal equations; b is unpenalized."""
    x = _as_matrix(x)
    y = np.asarray(y, dtype=float)
    if x.shape[0] < 2:
        raise ArgumentError("ridge needs at least 2 rows")
    if lam < 0 or not np.isfinite(lam):
        raise ArgumentError(f"lambda must be a finite value >= 0, got {lam}")

    std = Standardizer.fit(x) if standardize else None
    z = std.transform(x) if std else x
    z_mean = z.mean(axis=0)
    y_mean = float(y.mean())
    zc = z - z_mean
    a = zc.T @ zc + lam * np.eye(z.shape[1])
    rhs = zc.T @ (y - y_mean)

    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            w = linalg.solve(a, rhs, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning) as e:
            hint = " ; use lambda > 0" if lam == 0 else ""
            raise NumericalError(f"ridge normal equations are singular{hint}") from e

    if not np.all(np.isfinite(w)):
        raise NumericalError("ridge produced non-finite coefficients")
    return RidgeModel(coefficients=w, intercept=float(y_mean - z_mean @ w), lam=float(lam), standardizer=std)


def penalized_loglik(xa: np.ndarray, d: np.ndarray, theta: np.ndarray, l2: float) -> float:
    """Bernoulli log-likelihood minus (l2/2)||w||^2; xa has a leading column of ones."""
    eta = xa @ theta
    ll = float(np.sum(d * eta - np.logaddexp(0.0, eta)))
    return ll - 0.5 * l2 * float(theta[1:] @ theta[1:])


def _newton_step(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            return linalg.solve(h, g, assume_a="sym")
        except (linalg.LinAlgError, linalg.LinAlgWarning):
            pass
    # flat directions (constant columns, separation) get the minimum-norm step
    return linalg.lstsq(h, g)[0]


def fit_logistic(
    x: np.ndarray,
    d: np.ndarray,
    l2: float,
    *,
    max_iter: int = 100,
    tol: float = 1e-8,
    standardize: bool = False,
) -> LogisticModel:
    """L2-penalized logistic regression by IRLS (Newton) with step-halving.

    `converged` is True only when the penalized gradient is below
    `tol * max(1, n)`. Separable data with l2=0 has no finite optimum: the
    fit stalls or hits `max_iter` and reports `converged=False`.
    """
    x = _as_matrix(x)
    d = np.asarray(d, dtype=float)
    if l2 < 0 or not np.isfinite(l2):
        raise ArgumentError(f"l2 must be a finite value >= 0, got {l2}")
    if d.min() == d.max():
        raise EstimationError("logistic regression needs both treatment classes")

    std = Standardizer.fit(x) if standardize else None
    z = std.transform(x) if std else x
    n, m = z.shape
    xa = np.column_stack([np.ones(n), z])
    penalty = np.full(m + 1, l2)
    penalty[0] = 0.0

    base = float(np.clip(d.mean(), PROB_EPS, 1 - PROB_EPS))
    theta = np.zeros(m + 1)
    theta[0] = np.log(base / (1 - base))
    current = penalized_loglik(xa, d, theta, l2)

    grad_tol = tol * max(1.0, float(n))
    stopped = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(xa @ theta)
        grad = xa.T @ (d - p) - penalty * theta
        hess = (xa * (p * (1 - p))[:, None]).T @ xa + np.diag(penalty)
        step = _newton_step(hess, grad)
        if not np.all(np.isfinite(step)):
            break

        t = 1.0
        cand = theta + step
        value = penalized_loglik(xa, d, cand, l2)
        while value < current and t >= 1e-10:
            t *= 0.5
            cand = theta + t * step
            value = penalized_loglik(xa, d, cand, l2)
        if value < current:
            # no ascent left at machine precision
            stopped = True
            break
        change = float(np.max(np.abs(cand - theta)))
        theta, current = cand, value
        if change < tol:
            stopped = True
            break

    eta = xa @ theta
    grad = xa.T @ (d - expit(eta)) - penalty * theta
    converged = stopped and float(np.max(np.abs(grad))) < grad_tol
    if converged and l2 == 0 and np.array_equal(eta > 0, d == 1):
        # perfect separation: the unpenalized optimum is at infinity
        converged = False

    if not converged:
        log.info("logistic IRLS stopped after %d iterations without converging (l2=%g)", it, l2)
    return LogisticModel(
        coefficients=theta[1:].copy(),
        intercept=float(theta[0]),
        l2=float(l2),
        converged=converged,
        iterations=it,
        standardizer=std,
    )


Role = Literal["outcome", "propensity"]


def _ridge_loss(y: np.ndarray, pred: np.ndarray) -> float:
    return float(np.mean((y - pred) ** 2))


def _log_loss(d: np.ndarray, p: np.ndarray) -> float:
    return float(-np.mean(d * np.log(p) + (1 - d) * np.log(1 - p)))


@dataclass(frozen=True)
class RegisteredModel:
    name: str
    role: Role
    fit: Callable[..., FittedModel]
    loss: Callable[[np.ndarray, np.ndarray], float]
    options: frozenset[str]


def _fit_ridge_entry(x, y, penalty, spec) -> RidgeModel:
    return fit_ridge(x, y, penalty, standardize=spec.standardize)


def _fit_logistic_entry(x, y, penalty, spec) -> LogisticModel:
    return fit_logistic(x, y, penalty, max_iter=spec.max_iter, tol=spec.tol, standardize=spec.standardize)


MODEL_REGISTRY: dict[str, RegisteredModel] = {}


def register_model(entry: RegisteredModel) -> None:
    """Extension point for extra nuisance learners; names must be unique."""
    if entry.name in MODEL_REGISTRY:
        raise ArgumentError(f"model {entry.name!r} is already registered")
    MODEL_REGISTRY[entry.name] = entry


register_model(
    RegisteredModel(
        name="ridge",
        role="outcome",
        fit=_fit_ridge_entry,
        loss=_ridge_loss,
        options=frozenset({"name", "penalty", "grid", "standardize"}),
    )
)
register_model(
    RegisteredModel(
        name="logistic",
        role="propensity",
        fit=_fit_logistic_entry,
        loss=_log_loss,
        options=frozenset({"name", "penalty", "grid", "standardize", "max_iter", "tol"}),
    )
)


def registered_names(role: Role | None = None) -> list[str]:
    return sorted(k for k, v in MODEL_REGISTRY.items() if role is None or v.role == role)


@dataclass(frozen=True)
class NuisanceSpec:
    """Which learner to use and how; `penalty=None` selects it from `grid`."""

    name: str
    penalty: float | None = None
    grid: tuple[float, ...] = DEFAULT_GRID
    standardize: bool = True
    max_iter: int = 100
    tol: float = 1e-8

    @property
    def entry(self) -> RegisteredModel:
        try:
            return MODEL_REGISTRY[self.name]
        except KeyError:
            raise ArgumentError(
                f"unknown model {self.name!r}; registered: {registered_names()}"
            ) from None

    def to_dict(self) -> dict[str, object]:
        out: dict[str, object] = {
            "name": self.name,
            "penalty": self.penalty,
            "grid": list(self.grid),
            "standardize": self.standardize,
        }
        if "max_iter" in self.entry.options:
            out["max_iter"] = self.max_iter
            out["tol"] = self.tol
        return out


def select_penalty(x: np.ndarray, y: np.ndarray, spec: NuisanceSpec, seed: int) -> float:
    """Grid search on a seeded 2-fold split of the given (training) rows."""
    if spec.penalty is not None:
        return float(spec.penalty)
    if not spec.grid:
        raise ArgumentError(f"{spec.name}: empty penalty grid")
    entry = spec.entry
    plan = assign_folds(len(y), 2, seed)
    halves = [(plan.train_index(f), plan.test_index(f)) for f in range(2)]
    if entry.role == "propensity":
        for train, _ in halves:
            if np.unique(y[train]).size < 2:
                raise EstimationError(f"{spec.name}: penalty search split has a single treatment class")

    best_value, best_loss = spec.grid[0], np.inf
    for value in spec.grid:
        loss = 0.0
        for train, test in halves:
            model = entry.fit(x[train], y[train], float(value), spec)
            loss += entry.loss(y[test], model.predict(x[test]))
        if loss < best_loss:
            best_value, best_loss = value, loss
    return float(best_value)


def fit_nuisance(x: np.ndarray, y: np.ndarray, spec: NuisanceSpec, seed: int) -> tuple[FittedModel, float]:
    penalty = select_penalty(x, y, spec, seed)
    return spec.entry.fit(x, y, penalty, spec), penalty
