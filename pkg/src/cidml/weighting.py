from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Literal

import numpy as np

from cidml.crossfit import CrossFitResult
from cidml.errors import ArgumentError, EstimationError

Estimand = Literal["ATT", "ATE"]
SCALED_MAX = 1.0 - 1e-12


@dataclass(frozen=True)
class EstimandSpec:
    kind: Estimand = "ATT"
    alpha: float = 0.001
    rescale: bool = True
    common_support: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("ATT", "ATE"):
            raise ArgumentError(f"estimand must be ATT or ATE, got {self.kind!r}")
        if not 0.0 <= self.alpha < 0.5:
            raise ArgumentError(f"alpha must be in [0, 0.5), got {self.alpha}")

    @classmethod
    def unfiltered(cls, kind: Estimand = "ATT") -> EstimandSpec:
        return cls(kind=kind, alpha=0.0, rescale=False, common_support=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimand": self.kind,
            "alpha": self.alpha,
            "rescale": self.rescale,
            "common_support": self.common_support,
        }


@dataclass(frozen=True)
class DropLog:
    support_treated: int = 0
    support_control: int = 0
    trim_treated: int = 0
    trim_control: int = 0

    @property
    def total(self) -> int:
        return self.support_treated + self.support_control + self.trim_treated + self.trim_control

    def to_dict(self) -> dict[str, Any]:
        return {
            "treated": {"common_support": self.support_treated, "trimming": self.trim_treated},
            "control": {"common_support": self.support_control, "trimming": self.trim_control},
            "total": self.total,
        }


@dataclass(frozen=True)
class WeightedSample:
    kept_indices: np.ndarray
    weights: np.ndarray
    e_scaled: np.ndarray
    drop_log: DropLog
    estimand: EstimandSpec
    support: tuple[float, float] | None = None

    @property
    def n_kept(self) -> int:
        return int(self.kept_indices.size)


def _check_open_unit(e: np.ndarray, name: str) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    if not np.all((e > 0.0) & (e < 1.0)):
        raise ArgumentError(f"{name} must lie strictly inside (0, 1)")
    return e


def rescale_propensities(e_hat: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Scale propensities so their mean equals the treated share; clamped below 1."""
    e = _check_open_unit(e_hat, "e_hat")
    d = np.asarray(d, dtype=float)
    factor = d.mean() / e.mean()
    return np.minimum(factor * e, SCALED_MAX)


def ipw_weights(e: np.ndarray, d: np.ndarray, kind: Estimand) -> np.ndarray:
    e = _check_open_unit(e, "propensity")
    d = np.asarray(d, dtype=float)
    if kind == "ATE":
        return d / e + (1.0 - d) / (1.0 - e)
    if kind == "ATT":
        return d + (1.0 - d) * e / (1.0 - e)
    raise ArgumentError(f"unknown estimand {kind!r}")


def common_support_bounds(e: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    treated, control = e[d == 1], e[d == 0]
    lo = max(float(treated.min()), float(control.min()))
    hi = min(float(treated.max()), float(control.max()))
    return lo, hi


def apply_support_and_trim(cf: CrossFitResult, spec: EstimandSpec) -> WeightedSample:
    """Rescale, restrict to common support, trim to [alpha, 1 - alpha], then weight."""
    d = np.asarray(cf.treatment, dtype=int)
    if d.min() == d.max():
        raise EstimationError("weighting needs both treated and control customers")

    e = rescale_propensities(cf.e_hat, d) if spec.rescale else _check_open_unit(cf.e_hat, "e_hat")
    keep = np.ones(d.size, dtype=bool)
    support: tuple[float, float] | None = None

    support_t = support_c = 0
    if spec.common_support:
        lo, hi = common_support_bounds(e, d)
        support = (lo, hi)
        inside = (e >= lo) & (e <= hi)
        support_t = int(np.sum(~inside & (d == 1)))
        support_c = int(np.sum(~inside & (d == 0)))
        keep &= inside

    trim_t = trim_c = 0
    if spec.alpha > 0:
        in_range = (e >= spec.alpha) & (e <= 1.0 - spec.alpha)
        dropped = keep & ~in_range
        trim_t = int(np.sum(dropped & (d == 1)))
        trim_c = int(np.sum(dropped & (d == 0)))
        keep &= in_range

    drop_log = DropLog(support_t, support_c, trim_t, trim_c)
    kept = np.flatnonzero(keep)
    n_treated = int(d[kept].sum())
    if n_treated == 0 or n_treated == kept.size:
        raise EstimationError(
            "no treated or no control customers left after common support and trimming",
            details={"drop_log": drop_log.to_dict()},
        )

    weights = ipw_weights(e[kept], d[kept], spec.kind)
    return WeightedSample(
        kept_indices=kept,
        weights=weights,
        e_scaled=e[kept],
        drop_log=drop_log,
        estimand=spec,
        support=support,
    )
