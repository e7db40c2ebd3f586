from __future__ import annotations

import numpy as np
import pytest

from cidml.baseline import estimate_po, quantile_bins
from cidml.dataset import Dataset
from cidml.errors import ArgumentError, EstimationError


def _linear_ds(rng: np.random.Generator, n: int = 400, tau: float = 3.0) -> tuple[Dataset, np.ndarray]:
    x = rng.standard_normal((n, 2))
    e = 1.0 / (1.0 + np.exp(-x[:, 0]))
    d = (rng.random(n) < e).astype(int)
    y = 1.0 + x @ [1.5, -0.5] + tau * d
    return Dataset(tuple(f"c{i:04d}" for i in range(n)), x, d, y), e


def test_quantile_bins_equal_counts(rng):
    e = rng.random(100)
    ids = tuple(str(i) for i in range(100))
    bins = quantile_bins(e, ids, 5)
    assert np.bincount(bins).tolist() == [20] * 5
    # higher propensity never lands in a lower bin
    order = np.argsort(e)
    assert np.all(np.diff(bins[order]) >= 0)


def test_quantile_bins_break_ties_by_id():
    e = np.full(4, 0.5)
    assert quantile_bins(e, ("d", "c", "b", "a"), 2).tolist() == [1, 1, 0, 0]


def test_exact_linear_outcome_recovers_tau(rng):
    ds, e = _linear_ds(rng)
    po = estimate_po(ds, e, n_bins=4, n_bootstrap=0, penalty=1e-9, standardize=False)
    assert po.att == pytest.approx(3.0, abs=1e-6)
    assert po.ci_bootstrap is None
    assert po.width is None
    assert sum(b.n_treated for b in po.bin_estimates) == int(ds.treatment.sum())


def test_bootstrap_interval_brackets_point_estimate(rng):
    ds, e = _linear_ds(rng)
    ds = Dataset(ds.customer_ids, ds.features, ds.treatment, ds.outcome + rng.standard_normal(ds.n))
    po = estimate_po(ds, e, n_bins=3, n_bootstrap=40, seed=2)
    lo, hi = po.ci_bootstrap
    assert lo <= po.att <= hi
    assert po.width > 0
    assert po.n_bootstrap_failed == 0
    again = estimate_po(ds, e, n_bins=3, n_bootstrap=40, seed=2, n_jobs=2)
    assert again.ci_bootstrap == po.ci_bootstrap


@pytest.mark.parametrize("seed", range(5))
def test_two_replicate_interval_still_contains_estimate(rng, seed):
    ds, e = _linear_ds(rng)
    ds = Dataset(ds.customer_ids, ds.features, ds.treatment, ds.outcome + 3 * rng.standard_normal(ds.n))
    po = estimate_po(ds, e, n_bins=3, n_bootstrap=2, seed=seed)
    lo, hi = po.ci_bootstrap
    assert lo <= po.att <= hi


def test_row_order_does_not_change_estimate(rng):
    ds, e = _linear_ds(rng)
    perm = rng.permutation(ds.n)
    a = estimate_po(ds, e, n_bootstrap=0)
    b = estimate_po(ds.subset(perm), e[perm], n_bootstrap=0)
    assert a.att == pytest.approx(b.att, rel=1e-10)


def test_bin_without_treated_is_merged():
    n = 30
    x = np.arange(n, dtype=float)[:, None]
    e = np.linspace(0.05, 0.95, n)
    d = np.zeros(n, dtype=int)
    d[[15, 20, 25, 28]] = 1  # nobody treated in the lowest third
    y = 2.0 * x[:, 0] + 4.0 * d
    ds = Dataset(tuple(f"c{i:02d}" for i in range(n)), x, d, y)
    po = estimate_po(ds, e, n_bins=3, n_bootstrap=0, penalty=1e-9, standardize=False)
    assert len(po.bin_estimates) == 2
    assert all(b.n_treated >= 1 for b in po.bin_estimates)
    assert po.att == pytest.approx(4.0, abs=1e-5)


def test_argument_checks(rng):
    ds, e = _linear_ds(rng, n=50)
    with pytest.raises(ArgumentError):
        estimate_po(ds, e, n_bins=0)
    with pytest.raises(ArgumentError):
        estimate_po(ds, e, n_bootstrap=-1)
    with pytest.raises(ArgumentError):
        estimate_po(ds, e[:10])


def test_single_arm_rejected():
    ds = Dataset(("a", "b", "c"), np.zeros((3, 1)), np.ones(3, dtype=int), np.ones(3))
    with pytest.raises(EstimationError):
        estimate_po(ds, np.full(3, 0.5))
