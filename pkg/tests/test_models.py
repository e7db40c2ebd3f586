from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from cidml.errors import ArgumentError, NumericalError
from cidml.models import (
    NuisanceSpec,
    fit_logistic,
    fit_nuisance,
    fit_ridge,
    penalized_loglik,
    registered_names,
    select_penalty,
)


def _solve_exact(a: list[list[Fraction]], b: list[Fraction]) -> list[Fraction]:
    # Gauss-Jordan on rationals
    n = len(b)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for c in range(n):
        p = next(r for r in range(c, n) if m[r][c] != 0)
        m[c], m[p] = m[p], m[c]
        piv = m[c][c]
        m[c] = [v / piv for v in m[c]]
        for r in range(n):
            if r != c and m[r][c] != 0:
                f = m[r][c]
                m[r] = [vr - f * vc for vr, vc in zip(m[r], m[c], strict=True)]
    return [m[i][n] for i in range(n)]


def test_ridge_exact_linear_fit():
    model = fit_ridge(np.array([[1.0], [2.0], [3.0]]), np.array([2.0, 4.0, 6.0]), 0.0)
    assert model.coefficients[0] == pytest.approx(2.0, abs=1e-9)
    assert model.intercept == pytest.approx(0.0, abs=1e-9)


def test_ridge_infinite_penalty_limit():
    model = fit_ridge(np.array([[1.0], [2.0], [3.0]]), np.array([2.0, 4.0, 6.0]), 1e9)
    assert model.coefficients[0] == pytest.approx(0.0, abs=1e-6)
    assert model.intercept == pytest.approx(4.0, abs=1e-6)


def test_ridge_matches_rational_normal_equations(rng):
    x = rng.standard_normal((50, 5))
    y = rng.standard_normal(50)
    lam = 0.1
    model = fit_ridge(x, y, lam)

    xf = [[Fraction(float(v)) for v in row] for row in x]
    yf = [Fraction(float(v)) for v in y]
    n, m = 50, 5
    xbar = [sum(xf[i][j] for i in range(n)) / n for j in range(m)]
    ybar = sum(yf) / n
    xc = [[xf[i][j] - xbar[j] for j in range(m)] for i in range(n)]
    a = [
        [sum(xc[i][j] * xc[i][k] for i in range(n)) + (Fraction(lam) if j == k else 0) for k in range(m)]
        for j in range(m)
    ]
    b = [sum(xc[i][j] * (yf[i] - ybar) for i in range(n)) for j in range(m)]
    w = _solve_exact(a, b)
    np.testing.assert_allclose(model.coefficients, [float(v) for v in w], atol=1e-8)
    assert model.intercept == pytest.approx(float(ybar - sum(xbar[j] * w[j] for j in range(m))), abs=1e-8)


def test_ridge_singular_without_penalty_advises_lambda():
    x = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(NumericalError, match="lambda > 0"):
        fit_ridge(x, np.array([1.0, 2.0, 3.0]), 0.0)


def test_ridge_rejects_negative_lambda():
    with pytest.raises(ArgumentError):
        fit_ridge(np.ones((3, 1)), np.ones(3), -1.0)


def test_ridge_standardized_raw_coefficients_predict_same(rng):
    x = rng.standard_normal((40, 3)) * [1.0, 10.0, 100.0] + 5.0
    y = rng.standard_normal(40)
    model = fit_ridge(x, y, 0.5, standardize=True)
    w, b = model.raw_coefficients()
    np.testing.assert_allclose(x @ w + b, model.predict(x), atol=1e-10)


def test_logistic_intercept_only():
    d = np.array([1] * 30 + [0] * 70)
    model = fit_logistic(np.zeros((100, 1)), d, 0.0)
    np.testing.assert_allclose(model.predict(np.zeros((100, 1))), 0.3, atol=1e-6)
    assert model.converged


def test_logistic_label_flip_negates(rng):
    x = rng.standard_normal((200, 3))
    d = (rng.random(200) < 1 / (1 + np.exp(-x @ [1.0, -0.5, 0.25]))).astype(int)
    a = fit_logistic(x, d, 0.5)
    b = fit_logistic(x, 1 - d, 0.5)
    np.testing.assert_allclose(a.coefficients, -b.coefficients, atol=1e-8)
    assert a.intercept == pytest.approx(-b.intercept, abs=1e-8)


def test_logistic_solution_beats_random_perturbations(rng):
    x = rng.standard_normal((100, 3))
    d = (rng.random(100) < 0.4).astype(int)
    model = fit_logistic(x, d, 1.0)
    xa = np.column_stack([np.ones(100), x])
    theta = np.concatenate([[model.intercept], model.coefficients])
    best = penalized_loglik(xa, d, theta, 1.0)
    for _ in range(1000):
        other = theta + rng.normal(scale=0.1, size=theta.size)
        assert best >= penalized_loglik(xa, d, other, 1.0)


def test_logistic_separable_data_does_not_diverge():
    x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    d = np.array([0, 0, 1, 1])
    model = fit_logistic(x, d, 0.0, max_iter=25)
    assert not model.converged
    assert model.iterations <= 25
    assert np.all(np.isfinite(model.coefficients))
    p = model.predict(x)
    assert np.all((p > 0) & (p < 1))


def test_logistic_separable_line_reports_not_converged():
    x = np.linspace(-3, 3, 40)
    d = (x > 0).astype(int)
    model = fit_logistic(x, d, 0.0)
    assert not model.converged


def test_logistic_separable_plane_reports_not_converged(rng):
    x = rng.standard_normal((400, 3))
    d = (x[:, 0] + x[:, 1] > 0).astype(int)
    model = fit_logistic(x, d, 0.0)
    assert not model.converged


def test_logistic_separable_with_penalty_converges():
    x = np.linspace(-3, 3, 40)
    d = (x > 0).astype(int)
    model = fit_logistic(x, d, 1.0)
    assert model.converged
    assert np.all(np.isfinite(model.coefficients))


def test_registry_names():
    assert registered_names("outcome") == ["ridge"]
    assert registered_names("propensity") == ["logistic"]


def test_unknown_model_lists_registered_names():
    with pytest.raises(ArgumentError, match="ridge"):
        NuisanceSpec("forest").entry


def test_fixed_penalty_skips_search(rng):
    x = rng.standard_normal((60, 2))
    assert select_penalty(x, x[:, 0], NuisanceSpec("ridge", penalty=3.0), seed=0) == 3.0


def test_grid_search_prefers_small_penalty_for_clean_signal(rng):
    x = rng.standard_normal((200, 2))
    y = x @ [2.0, -1.0] + 0.01 * rng.standard_normal(200)
    spec = NuisanceSpec("ridge", grid=(0.001, 1000.0), standardize=False)
    model, lam = fit_nuisance(x, y, spec, seed=3)
    assert lam == 0.001
    np.testing.assert_allclose(model.coefficients, [2.0, -1.0], atol=0.01)


def test_grid_search_is_seed_deterministic(rng):
    x = rng.standard_normal((120, 3))
    d = (rng.random(120) < 0.5).astype(float)
    spec = NuisanceSpec("logistic")
    assert select_penalty(x, d, spec, seed=11) == select_penalty(x, d, spec, seed=11)
