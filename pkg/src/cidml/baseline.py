"""Potential-outcomes baseline: propensity binning plus per-bin regression adjustment."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Any

import numpy as np

from cidml.dataset import Dataset
from cidml.errors import ArgumentError, CidmlError, EstimationError
from cidml.models import fit_ridge
from cidml.workers import derive_seed, map_ordered

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BinEstimate:
    bin: int
    e_lo: float
    e_hi: float
    n_treated: int
    n_control: int
    counterfactual_mean: float
    actual_mean: float
    delta: float

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class PoEstimate:
    att: float
    bin_estimates: tuple[BinEstimate, ...]
    ci_bootstrap: tuple[float, float] | None
    n_bootstrap: int
    n_bootstrap_failed: int = 0
    level: float = 0.95
    runtime_seconds: float = 0.0

    @property
    def width(self) -> float | None:
        if self.ci_bootstrap is None:
            return None
        return self.ci_bootstrap[1] - self.ci_bootstrap[0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "att": self.att,
            "ci_bootstrap": None if self.ci_bootstrap is None else list(self.ci_bootstrap),
            "n_bootstrap": self.n_bootstrap,
            "n_bootstrap_failed": self.n_bootstrap_failed,
            "level": self.level,
            "bins": [b.to_dict() for b in self.bin_estimates],
        }


def quantile_bins(e_hat: np.ndarray, customer_ids: tuple[str, ...], n_bins: int) -> np.ndarray:
    """Equal-count bins on e_hat; ties ordered by customer_id so row order does not matter."""
    order = np.lexsort((np.asarray(customer_ids, dtype=object).astype(str), e_hat))
    rank = np.empty(e_hat.size, dtype=int)
    rank[order] = np.arange(e_hat.size)
    return rank * n_bins // e_hat.size


def _merge_bins(bins: np.ndarray, d: np.ndarray, n_bins: int) -> list[np.ndarray]:
    # a usable bin has a treated customer and at least two controls for the ridge fit
    groups = [np.flatnonzero(bins == b) for b in range(n_bins)]
    groups = [g for g in groups if g.size]

    def usable(g: np.ndarray) -> bool:
        return d[g].sum() >= 1 and (g.size - d[g].sum()) >= 2

    while len(groups) > 1:
        bad = [i for i, g in enumerate(groups) if not usable(g)]
        if not bad:
            break
        i = bad[0]
        j = i + 1 if i + 1 < len(groups) else i - 1
        log.info("merging propensity bin %d into neighbour %d (missing an arm)", i, j)
        lo, hi = min(i, j), max(i, j)
        groups[lo] = np.concatenate([groups[lo], groups[hi]])
        del groups[hi]

    groups = [g for g in groups if usable(g)]
    if not groups:
        raise EstimationError("no propensity bin contains both treated and control customers")
    return groups


def _point_estimate(
    x: np.ndarray,
    y: np.ndarray,
    d: np.ndarray,
    e_hat: np.ndarray,
    ids: tuple[str, ...],
    n_bins: int,
    penalty: float,
    standardize: bool,
) -> tuple[float, tuple[BinEstimate, ...]]:
    bins = quantile_bins(e_hat, ids, n_bins)
    out: list[BinEstimate] = []
    for b, g in enumerate(_merge_bins(bins, d, n_bins)):
        treated, control = g[d[g] == 1], g[d[g] == 0]
        model = fit_ridge(x[control], y[control], penalty, standardize=standardize)
        counterfactual = model.predict(x[treated])
        actual = y[treated]
        out.append(
            BinEstimate(
                bin=b,
                e_lo=float(e_hat[g].min()),
                e_hi=float(e_hat[g].max()),
                n_treated=int(treated.size),
                n_control=int(control.size),
                counterfactual_mean=float(counterfactual.mean()),
                actual_mean=float(actual.mean()),
                delta=float(np.mean(actual - counterfactual)),
            )
        )
    n_t = np.array([b.n_treated for b in out], dtype=float)
    deltas = np.array([b.delta for b in out])
    return float(np.sum(n_t * deltas) / np.sum(n_t)), tuple(out)


def estimate_po(
    ds: Dataset,
    e_hat: np.ndarray,
    n_bins: int = 5,
    n_bootstrap: int = 200,
    seed: int = 0,
    *,
    penalty: float = 1.0,
    standardize: bool = True,
    level: float = 0.95,
    n_jobs: int = 1,
) -> PoEstimate:
    """ATT by regression adjustment within propensity quantile bins, percentile bootstrap CI.

    The interval is the percentile interval of the successful replicates,
    widened where needed so it always contains `att`: (min(lo, att), max(hi, att)).
    """
    if n_bins < 1:
        raise ArgumentError(f"n_bins must be >= 1, got {n_bins}")
    if n_bootstrap < 0:
        raise ArgumentError(f"n_bootstrap must be >= 0, got {n_bootstrap}")
    e_hat = np.asarray(e_hat, dtype=float)
    if e_hat.shape != (ds.n,):
        raise ArgumentError("e_hat length does not match the dataset")
    ds.require_both_arms()

    started = time.perf_counter()
    x, y, d = ds.features, ds.outcome, ds.treatment.astype(int)
    att, bins = _point_estimate(x, y, d, e_hat, ds.customer_ids, n_bins, penalty, standardize)

    ci: tuple[float, float] | None = None
    failed = 0
    if n_bootstrap > 0:
        ids = np.asarray(ds.customer_ids, dtype=object)

        def _replicate(r: int) -> float:
            rng = np.random.default_rng(derive_seed(seed, r))
            idx = rng.integers(0, ds.n, ds.n)
            # resampled duplicates keep a stable, order-free tie-break
            boot_ids = tuple(f"{ids[i]}#{k}" for k, i in enumerate(idx))
            try:
                value, _ = _point_estimate(
                    x[idx], y[idx], d[idx], e_hat[idx], boot_ids, n_bins, penalty, standardize
                )
            except CidmlError as e:
                log.info("bootstrap replicate %d failed: %s", r, e)
                return float("nan")
            return value

        draws = np.array(map_ordered(_replicate, list(range(n_bootstrap)), n_jobs))
        ok = draws[np.isfinite(draws)]
        failed = int(draws.size - ok.size)
        if ok.size < 2:
            raise EstimationError("too few successful bootstrap replicates", details={"failed": failed})
        tail = 100.0 * (1.0 - level) / 2.0
        lo, hi = np.percentile(ok, [tail, 100.0 - tail])
        # widened to contain the point estimate
        ci = (float(min(lo, att)), float(max(hi, att)))

    return PoEstimate(
        att=att,
        bin_estimates=bins,
        ci_bootstrap=ci,
        n_bootstrap=n_bootstrap,
        n_bootstrap_failed=failed,
        level=level,
        runtime_seconds=time.perf_counter() - started,
    )
