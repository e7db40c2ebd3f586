from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from sklearn.metrics import r2_score, roc_auc_score

from cidml.dataset import Dataset, FoldPlan
from cidml.errors import ArgumentError, EstimationError
from cidml.models import NuisanceSpec, fit_nuisance
from cidml.workers import derive_seed, map_ordered

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldMetrics:
    fold: int
    n_train: int
    n_test: int
    outcome_r2: float
    propensity_auc: float
    outcome_penalty: float
    propensity_penalty: float
    propensity_converged: bool
    propensity_iterations: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "fold": self.fold,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "outcome_r2": _nan_to_none(self.outcome_r2),
            "propensity_auc": _nan_to_none(self.propensity_auc),
            "outcome_penalty": self.outcome_penalty,
            "propensity_penalty": self.propensity_penalty,
            "propensity_converged": self.propensity_converged,
            "propensity_iterations": self.propensity_iterations,
        }


def _nan_to_none(v: float) -> float | None:
    return None if not np.isfinite(v) else float(v)


@dataclass(frozen=True)
class CrossFitResult:
    """Out-of-fold nuisance predictions pooled across folds (DML2)."""

    y_hat: np.ndarray
    e_hat: np.ndarray
    y_res: np.ndarray
    d_res: np.ndarray
    treatment: np.ndarray
    fold_plan: FoldPlan
    fit_metrics: tuple[FoldMetrics, ...]

    @property
    def n(self) -> int:
        return int(self.y_hat.size)

    def metrics_summary(self) -> dict[str, Any]:
        r2 = np.array([m.outcome_r2 for m in self.fit_metrics])
        auc = np.array([m.propensity_auc for m in self.fit_metrics])
        return {
            "outcome_r2_mean": _nan_to_none(float(np.nanmean(r2))) if np.isfinite(r2).any() else None,
            "propensity_auc_mean": _nan_to_none(float(np.nanmean(auc))) if np.isfinite(auc).any() else None,
            "folds": [m.to_dict() for m in self.fit_metrics],
        }


def _safe_auc(d: np.ndarray, p: np.ndarray) -> float:
    if np.unique(d).size < 2:
        return float("nan")
    return float(roc_auc_score(d, p))


def _safe_r2(y: np.ndarray, pred: np.ndarray) -> float:
    if y.size < 2:
        return float("nan")
    return float(r2_score(y, pred))


def cross_fit(
    ds: Dataset,
    plan: FoldPlan,
    outcome_cfg: NuisanceSpec,
    propensity_cfg: NuisanceSpec,
    *,
    seed: int = 0,
    n_jobs: int = 1,
) -> CrossFitResult:
    """Fit both nuisance models on each fold's complement and score the held-out fold."""
    if plan.n != ds.n:
        raise ArgumentError(f"fold plan covers {plan.n} rows, dataset has {ds.n}")
    if outcome_cfg.entry.role != "outcome":
        raise ArgumentError(f"{outcome_cfg.name!r} is not an outcome model")
    if propensity_cfg.entry.role != "propensity":
        raise ArgumentError(f"{propensity_cfg.name!r} is not a propensity model")
    ds.require_both_arms()

    x, d, y = ds.features, ds.treatment.astype(float), ds.outcome
    for f in range(plan.n_folds):
        train = plan.train_index(f)
        if np.unique(d[train]).size < 2:
            raise EstimationError(
                f"training rows for fold {f} contain a single treatment class",
                details={"fold": f},
            )

    def _one(f: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, FoldMetrics]:
        train, test = plan.train_index(f), plan.test_index(f)
        fold_seed = derive_seed(seed, f)
        outcome_model, lam = fit_nuisance(x[train], y[train], outcome_cfg, fold_seed)
        prop_model, l2 = fit_nuisance(x[train], d[train], propensity_cfg, fold_seed)
        y_pred = outcome_model.predict(x[test])
        e_pred = prop_model.predict(x[test])
        metrics = FoldMetrics(
            fold=f,
            n_train=int(train.size),
            n_test=int(test.size),
            outcome_r2=_safe_r2(y[test], y_pred),
            propensity_auc=_safe_auc(d[test], e_pred),
            outcome_penalty=lam,
            propensity_penalty=l2,
            propensity_converged=bool(getattr(prop_model, "converged", True)),
            propensity_iterations=int(getattr(prop_model, "iterations", 0)),
        )
        return test, y_pred, e_pred, metrics

    results = map_ordered(_one, list(range(plan.n_folds)), n_jobs)

    y_hat = np.empty(ds.n)
    e_hat = np.empty(ds.n)
    metrics: list[FoldMetrics] = []
    for test, y_pred, e_pred, m in results:
        y_hat[test] = y_pred
        e_hat[test] = e_pred
        metrics.append(m)
        if not m.propensity_converged:
            log.warning("propensity model for fold %d did not converge", m.fold)

    return CrossFitResult(
        y_hat=y_hat,
        e_hat=e_hat,
        y_res=y - y_hat,
        d_res=d - e_hat,
        treatment=ds.treatment.copy(),
        fold_plan=plan,
        fit_metrics=tuple(metrics),
    )
