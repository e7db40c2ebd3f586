"""Data generating processes with known ground truth.

Features are standard normal, treatment follows a logistic propensity along a
fixed direction, and the outcome is additively separable in the treatment:

    Y = g(X) + D * tau(X) + noise,    g(X) = 2 + X b + c (X a) + 0.5 x0 x1

so a linear outcome model is mildly misspecified while selection on observables
holds. Segmented effects shift the first features by segment so that the
features reveal the segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Literal

import numpy as np
from scipy.special import expit
from sklearn.metrics import roc_auc_score

from cidml.dataset import Dataset
from cidml.errors import ArgumentError
from cidml.workers import derive_seed

PLACEBO_PERSISTENCE = 0.9


@dataclass(frozen=True)
class EffectSpec:
    kind: Literal["constant", "segmented"] = "constant"
    tau: float = 5.0
    segment_taus: tuple[float, ...] = ()
    segment_shift: float = 3.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "segmented"):
            raise ArgumentError(f"effect kind must be constant or segmented, got {self.kind!r}")
        if self.kind == "segmented" and len(self.segment_taus) < 2:
            raise ArgumentError("segmented effects need at least two segment taus")

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "constant":
            return {"kind": "constant", "tau": self.tau}
        return {
            "kind": "segmented",
            "segment_taus": list(self.segment_taus),
            "segment_shift": self.segment_shift,
        }


@dataclass(frozen=True)
class DgpSpec:
    n: int = 20000
    m: int = 5
    effect: EffectSpec = field(default_factory=EffectSpec)
    confounding_strength: float = 1.0
    noise_sd: float = 1.0
    heteroscedastic: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ArgumentError("n and m must be >= 1")
        if not self.noise_sd > 0:
            raise ArgumentError("noise_sd must be > 0")

    def with_seed(self, seed: int) -> DgpSpec:
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "m": self.m,
            "effect": self.effect.to_dict(),
            "confounding_strength": self.confounding_strength,
            "noise_sd": self.noise_sd,
            "heteroscedastic": self.heteroscedastic,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class DgpTruth:
    true_att: float
    true_ate: float
    per_customer_effect: np.ndarray
    true_propensity: np.ndarray
    segment: np.ndarray | None = None
    oracle_r2: float = float("nan")
    oracle_auc: float = float("nan")
    # E[Y|X] = g(X) + tau(X) e(X), the best any outcome learner can predict
    conditional_mean: np.ndarray | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "true_att": self.true_att,
            "true_ate": self.true_ate,
            "oracle_r2": self.oracle_r2,
            "oracle_auc": self.oracle_auc,
        }
        if self.segment is not None:
            segs = np.unique(self.segment)
            out["segments"] = {
                str(int(s)): float(self.per_customer_effect[self.segment == s][0]) for s in segs
            }
        return out


def propensity_direction(m: int) -> np.ndarray:
    a = 1.0 / np.arange(1, m + 1)
    a[1::2] *= -1.0
    return a / np.linalg.norm(a)


def outcome_direction(m: int) -> np.ndarray:
    return 0.5 / np.arange(1, m + 1)


def _baseline_outcome(x: np.ndarray, c: float) -> np.ndarray:
    m = x.shape[1]
    g = 2.0 + x @ outcome_direction(m) + c * (x @ propensity_direction(m))
    if m >= 2:
        g = g + 0.5 * x[:, 0] * x[:, 1]
    return g


def _noise_sd(x: np.ndarray, spec: DgpSpec) -> np.ndarray:
    if not spec.heteroscedastic:
        return np.full(x.shape[0], spec.noise_sd)
    # noise grows toward extreme propensities, where the IPW leverage is
    return spec.noise_sd * (0.5 + np.abs(x @ propensity_direction(x.shape[1])))


def _features(rng: np.random.Generator, spec: DgpSpec) -> tuple[np.ndarray, np.ndarray | None]:
    x = rng.standard_normal((spec.n, spec.m))
    if spec.effect.kind != "segmented":
        return x, None
    n_seg = len(spec.effect.segment_taus)
    segment = rng.integers(0, n_seg, spec.n)
    centre = segment - (n_seg - 1) / 2.0
    for j in range(min(2, spec.m)):
        x[:, j] += spec.effect.segment_shift * centre
    return x, segment


def _effects(spec: DgpSpec, segment: np.ndarray | None) -> np.ndarray:
    if spec.effect.kind == "constant":
        return np.full(spec.n, float(spec.effect.tau))
    return np.asarray(spec.effect.segment_taus, dtype=float)[segment]


def _customer_ids(n: int) -> tuple[str, ...]:
    width = max(7, len(str(n)))
    return tuple(f"c{i:0{width}d}" for i in range(n))


def generate(spec: DgpSpec) -> tuple[Dataset, DgpTruth]:
    """Draw a dataset and record its truth; same spec and seed give identical bits."""
    rng = np.random.default_rng(spec.seed)
    x, segment = _features(rng, spec)
    propensity = expit(spec.confounding_strength * (x @ propensity_direction(spec.m)))
    d = (rng.random(spec.n) < propensity).astype(np.int8)
    tau = _effects(spec, segment)
    sd = _noise_sd(x, spec)
    noise = rng.standard_normal(spec.n) * sd
    g = _baseline_outcome(x, spec.confounding_strength)
    y = g + d * tau + noise

    treated = d == 1
    true_att = float(tau[treated].mean()) if treated.any() else float("nan")
    oracle_auc = float(roc_auc_score(d, propensity)) if 0 < treated.sum() < spec.n else float("nan")
    var_y = float(y.var())
    # best achievable R2 of E[Y|X]: outcome noise plus the Bernoulli part of D * tau
    unexplained = float(np.mean(sd**2 + tau**2 * propensity * (1.0 - propensity)))
    oracle_r2 = 1.0 - unexplained / var_y if var_y > 0 else float("nan")

    ds = Dataset(
        customer_ids=_customer_ids(spec.n),
        features=x,
        treatment=d,
        outcome=y,
        feature_names=tuple(f"x{j}" for j in range(spec.m)),
    )
    truth = DgpTruth(
        true_att=true_att,
        true_ate=float(tau.mean()),
        per_customer_effect=tau,
        true_propensity=propensity,
        segment=segment,
        oracle_r2=oracle_r2,
        oracle_auc=oracle_auc,
        conditional_mean=g + tau * propensity,
    )
    return ds, truth


def make_placebo(ds: Dataset, truth: DgpTruth, spec: DgpSpec) -> Dataset:
    """Same customers and treatment flags, features redrawn for a shifted period, no effect.

    New features keep each customer's profile: x' = rho x + sqrt(1 - rho^2) e.
    The outcome is regenerated from g(x') and fresh noise, so the true effect is 0.
    """
    if truth.per_customer_effect.shape[0] != ds.n:
        raise ArgumentError("truth does not belong to this dataset")
    rng = np.random.default_rng(derive_seed(spec.seed, 1))
    rho = PLACEBO_PERSISTENCE
    x = rho * ds.features + np.sqrt(1.0 - rho * rho) * rng.standard_normal(ds.features.shape)
    noise = rng.standard_normal(ds.n) * _noise_sd(x, spec)
    y = _baseline_outcome(x, spec.confounding_strength) + noise
    return Dataset(
        customer_ids=ds.customer_ids,
        features=x,
        treatment=ds.treatment,
        outcome=y,
        feature_names=ds.feature_names,
    )
