from __future__ import annotations

import numpy as np
import pytest

from cidml.crossfit import CrossFitResult
from cidml.dataset import assign_folds
from cidml.errors import ArgumentError, EstimationError
from cidml.weighting import (
    EstimandSpec,
    apply_support_and_trim,
    common_support_bounds,
    ipw_weights,
    rescale_propensities,
)


def make_cf(e: np.ndarray, d: np.ndarray, y: np.ndarray | None = None) -> CrossFitResult:
    n = e.size
    y = np.zeros(n) if y is None else y
    return CrossFitResult(
        y_hat=np.zeros(n),
        e_hat=e,
        y_res=y,
        d_res=d - e,
        treatment=d.astype(np.int8),
        fold_plan=assign_folds(n, 2, 0),
        fit_metrics=(),
    )


@pytest.mark.parametrize("seed", range(100))
def test_weights_and_rescaling_match_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 40))
    e = rng.uniform(0.01, 0.99, n)
    d = np.zeros(n, dtype=int)
    d[: max(1, n // 3)] = 1
    rng.shuffle(d)

    scaled = rescale_propensities(e, d)
    for i in range(n):
        expected = min(e[i] * (d.sum() / n) / (e.sum() / n), 1.0 - 1e-12)
        assert scaled[i] == pytest.approx(expected, rel=1e-8)

    att = ipw_weights(e, d, "ATT")
    ate = ipw_weights(e, d, "ATE")
    for i in range(n):
        if d[i] == 1:
            assert att[i] == 1.0
            assert ate[i] == pytest.approx(1.0 / e[i], rel=1e-8)
        else:
            assert att[i] == pytest.approx(e[i] / (1.0 - e[i]), rel=1e-8)
            assert ate[i] == pytest.approx(1.0 / (1.0 - e[i]), rel=1e-8)


def test_rescaled_mean_equals_treated_share():
    e = np.array([0.1, 0.2, 0.3, 0.4])
    d = np.array([1, 0, 0, 1])
    assert rescale_propensities(e, d).mean() == pytest.approx(0.5)


def test_rescaling_clamps_below_one():
    e = np.array([0.5, 0.9, 0.05, 0.05])
    d = np.array([1, 1, 1, 0])
    assert np.all(rescale_propensities(e, d) < 1.0)


def test_propensities_must_be_inside_unit_interval():
    with pytest.raises(ArgumentError):
        ipw_weights(np.array([0.0, 0.5]), np.array([0, 1]), "ATT")


def test_common_support_bounds():
    e = np.array([0.05, 0.2, 0.5, 0.3, 0.6, 0.9])
    d = np.array([0, 0, 0, 1, 1, 1])
    assert common_support_bounds(e, d) == (0.3, 0.5)


def test_filter_order_and_drop_log():
    e = np.array([0.0005, 0.2, 0.4, 0.3, 0.6, 0.9995, 0.5])
    d = np.array([0, 0, 0, 1, 1, 1, 0])
    spec = EstimandSpec(kind="ATT", alpha=0.001, rescale=False, common_support=True)
    ws = apply_support_and_trim(make_cf(e, d), spec)
    # support is [0.3, 0.5] within treated/control ranges [0.3, 0.9995] and [0.0005, 0.5]
    assert ws.support == (0.3, 0.5)
    assert ws.kept_indices.tolist() == [2, 3, 6]
    assert ws.drop_log.support_control == 2
    assert ws.drop_log.support_treated == 2
    assert ws.drop_log.trim_treated == 0
    assert ws.drop_log.trim_control == 0
    np.testing.assert_allclose(ws.weights, [0.4 / 0.6, 1.0, 1.0])


def test_trimming_counts_after_support():
    e = np.array([0.0005, 0.0008, 0.3, 0.4, 0.6])
    d = np.array([1, 0, 0, 1, 0])
    ws = apply_support_and_trim(make_cf(e, d), EstimandSpec(alpha=0.001, rescale=False, common_support=False))
    assert ws.drop_log.trim_treated == 1
    assert ws.drop_log.trim_control == 1
    assert ws.kept_indices.tolist() == [2, 3, 4]


def test_unfiltered_keeps_everyone():
    e = np.array([0.0005, 0.2, 0.4, 0.3, 0.6, 0.9995])
    d = np.array([0, 0, 0, 1, 1, 1])
    ws = apply_support_and_trim(make_cf(e, d), EstimandSpec.unfiltered())
    assert ws.n_kept == 6
    assert ws.drop_log.total == 0


def test_empty_arm_after_filtering_reports_drop_log():
    e = np.array([0.1, 0.2, 0.8, 0.9])
    d = np.array([0, 0, 1, 1])
    with pytest.raises(EstimationError) as exc:
        apply_support_and_trim(make_cf(e, d), EstimandSpec(rescale=False))
    assert "drop_log" in exc.value.details


def test_estimand_validation():
    with pytest.raises(ArgumentError):
        EstimandSpec(kind="ATC")  # type: ignore[arg-type]
    with pytest.raises(ArgumentError):
        EstimandSpec(alpha=0.5)


@pytest.mark.parametrize("seed", range(10))
def test_larger_alpha_never_keeps_more(seed):
    rng = np.random.default_rng(seed)
    n = 300
    e = np.clip(rng.beta(0.5, 0.5, n), 1e-6, 1 - 1e-6)
    d = (rng.random(n) < e).astype(int)
    cf = make_cf(e, d)
    previous: set[int] | None = None
    for alpha in (0.0, 0.001, 0.01, 0.05, 0.1, 0.2):
        kept = set(apply_support_and_trim(cf, EstimandSpec(alpha=alpha)).kept_indices.tolist())
        if previous is not None:
            assert kept <= previous
        previous = kept
