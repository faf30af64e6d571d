"""Regression basis and least-squares fitting."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entropic_stopping.errors import ConfigurationError, InsufficientDataError, StateError
from entropic_stopping.regression import (
    BasisSpec,
    LeastSquaresProjector,
    RegressionModel,
    eval_basis,
    fit,
    predict,
)


def test_constant_only_basis():
    spec = BasisSpec(degree=0, include_payoff_terms=False)
    assert spec.count(2) == 1
    np.testing.assert_array_equal(eval_basis(spec, [3.0, 4.0], 0.0), [1.0])


def test_sorted_linear_basis():
    spec = BasisSpec(degree=1, include_payoff_terms=False)
    np.testing.assert_array_equal(eval_basis(spec, [7.0, 5.0], 0.0), [1.0, 7.0, 5.0])
    # sorting: the larger price comes first regardless of asset order
    np.testing.assert_array_equal(eval_basis(spec, [5.0, 7.0], 0.0), [1.0, 7.0, 5.0])


def test_default_basis_by_hand():
    spec = BasisSpec()
    assert spec.count(2) == 13
    y1, y2, g = 100.0, 90.0, 0.0  # payoff of (100, 90) at K = 100
    expected = [1, y1, y1**2, y1**3, y2, y2**2, y2**3, y1 * y2, y1**2 * y2, y1 * y2**2, g, g**2, g * y1]
    got = eval_basis(spec, [90.0, 100.0], g)
    np.testing.assert_array_equal(got, expected)
    assert got[10] == 0.0


def test_default_basis_with_positive_payoff():
    g = 15.0
    got = eval_basis(BasisSpec(), [115.0, 80.0], g)
    np.testing.assert_allclose(got[-3:], [15.0, 225.0, 15.0 * 115.0])


def test_basis_vectorised_over_paths_and_steps():
    rng = np.random.default_rng(0)
    S = rng.uniform(50, 150, size=(4, 3, 2))
    g = np.maximum(S.max(-1) - 100, 0)
    X = eval_basis(BasisSpec(), S, g)
    assert X.shape == (4, 3, 13)
    np.testing.assert_allclose(X[2, 1], eval_basis(BasisSpec(), S[2, 1], g[2, 1]))


def test_basis_counts_other_dimensions():
    assert BasisSpec(degree=2, include_payoff_terms=False).count(1) == 3
    # d=3, degree 2: 1 + 6 pure powers + 3 cross products
    assert BasisSpec(degree=2, include_payoff_terms=False).count(3) == 10


def test_custom_basis():
    spec = BasisSpec(kind="custom", function=lambda s, g: np.log(s), n_custom=2)
    np.testing.assert_allclose(eval_basis(spec, [1.0, np.e], 0.0), [1.0, 0.0, 1.0])
    with pytest.raises(ConfigurationError):
        BasisSpec(kind="custom")


def test_capacity_guard():
    BasisSpec().check_capacity(2, 130)
    with pytest.raises(InsufficientDataError):
        BasisSpec().check_capacity(2, 129)


# ---------------------------------------------------------------------------
# fitting

def test_exact_span_interpolation():
    rng = np.random.default_rng(1)
    S = rng.uniform(80, 120, size=(500, 2))
    g = np.maximum(S.max(-1) - 100, 0)
    X = eval_basis(BasisSpec(), S, g)
    beta = rng.normal(size=13) / np.abs(X).mean(axis=0)
    y = X @ beta
    res = fit(X, y)
    resid = y - X @ res.coefficients
    assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(y)
    model = RegressionModel(BasisSpec())
    model.fit_step(3, S, g, y)
    np.testing.assert_allclose(predict(model, 3, S, g), y, rtol=1e-8, atol=1e-8 * np.abs(y).max())


def test_default_basis_payoff_interaction_is_collinear():
    # for the max-call g*y1 = g^2 + K*g, so the 13 functions span 12 dimensions
    rng = np.random.default_rng(8)
    S = rng.uniform(80, 120, size=(1000, 2))
    g = np.maximum(S.max(-1) - 100, 0)
    X = eval_basis(BasisSpec(), S, g)
    np.testing.assert_allclose(X[:, 12], X[:, 11] + 100 * X[:, 10], rtol=1e-12)
    res = fit(X, g)
    assert res.rank_deficient and res.rank == 12
    assert not fit(eval_basis(BasisSpec(include_payoff_terms=False), S, g), g).rank_deficient


def test_constant_targets():
    X = np.ones((20, 1))
    res = fit(X, np.full(20, 4.25))
    np.testing.assert_allclose(res.coefficients, [4.25])
    model = RegressionModel(BasisSpec(degree=0, include_payoff_terms=False))
    model.fit_step(0, np.full((20, 2), 100.0), np.zeros(20), np.full(20, 4.25))
    assert predict(model, 0, [55.0, 77.0], 0.0) == pytest.approx(4.25)


def test_linear_synthetic_matches_normal_equations():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, 10_000)
    y = 2 + 3 * x + rng.normal(0, 0.01, x.size)
    X = np.column_stack([np.ones_like(x), x])
    coef = fit(X, y).coefficients
    oracle = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(coef, oracle, rtol=0, atol=1e-6)
    np.testing.assert_allclose(coef, [2, 3], atol=0.01)
    spec = BasisSpec(kind="custom", function=lambda s, g: s[..., :1], n_custom=1)
    model = RegressionModel(spec)
    model.fit_step(0, x[:, None], np.zeros_like(x), y)
    assert predict(model, 0, [0.4], 0.0) == pytest.approx(2 + 3 * 0.4, abs=0.02)


def test_default_basis_matches_normal_equations_oracle():
    # polynomial design on price-like data: compare with extended-precision normal equations
    rng = np.random.default_rng(3)
    S = 100 * np.exp(rng.normal(0, 0.3, size=(20_000, 2)))
    g = np.maximum(S.max(-1) - 100, 0)
    X = eval_basis(BasisSpec(), S, g)
    y = g + rng.normal(0, 1, g.size) + 0.01 * S[:, 0]
    coef = fit(X, y).coefficients
    # normal equations on standardised columns (the oracle), mapped back
    mu, sd = X[:, 1:].mean(0), X[:, 1:].std(0)
    Z = np.column_stack([np.ones(len(y)), (X[:, 1:] - mu) / sd])
    b = np.linalg.solve(Z.T @ Z, Z.T @ y)
    fitted_oracle = Z @ b
    np.testing.assert_allclose(X @ coef, fitted_oracle, rtol=0, atol=1e-6)


def test_residuals_orthogonal_to_basis():
    rng = np.random.default_rng(4)
    S = 100 * np.exp(rng.normal(0, 0.2, size=(5000, 2)))
    g = np.maximum(S.max(-1) - 100, 0)
    X = eval_basis(BasisSpec(), S, g)
    y = np.sqrt(S.sum(-1)) + rng.normal(size=g.size)
    resid = y - X @ fit(X, y).coefficients
    inner = X.T @ resid
    scale = np.linalg.norm(X, axis=0) * np.linalg.norm(y)
    assert np.max(np.abs(inner) / scale) <= 1e-6


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_fit_invariant_under_reordering(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(300), rng.normal(size=(300, 3))])
    y = rng.normal(size=300)
    perm = rng.permutation(300)
    np.testing.assert_allclose(fit(X, y).coefficients, fit(X[perm], y[perm]).coefficients,
                               rtol=1e-9, atol=1e-12)


def test_rank_deficient_design_is_flagged():
    # all paths share one state, as at t = 0
    X = eval_basis(BasisSpec(), np.full((200, 2), 100.0), np.zeros(200))
    y = np.linspace(0, 1, 200)
    res = fit(X, y)
    assert res.rank_deficient
    assert np.all(np.isfinite(res.coefficients))
    np.testing.assert_allclose(X @ res.coefficients, y.mean(), atol=1e-12)
    # duplicated column
    x = np.linspace(0, 1, 50)
    res = fit(np.column_stack([np.ones(50), x, x]), 1 + 2 * x)
    assert res.rank_deficient
    np.testing.assert_allclose(res.coefficients[1] + res.coefficients[2], 2, atol=1e-6)


def test_insufficient_data():
    with pytest.raises(InsufficientDataError):
        fit(np.ones((3, 4)), np.ones(3))


def test_predict_unfitted_step():
    with pytest.raises(StateError):
        predict(RegressionModel(BasisSpec()), 5, [100.0, 100.0], 0.0)


def test_projector_preserves_mean_and_matches_fit():
    rng = np.random.default_rng(5)
    S = 100 * np.exp(rng.normal(0, 0.2, size=(3000, 2)))
    g = np.maximum(S.max(-1) - 100, 0)
    X = eval_basis(BasisSpec(), S, g)
    y = g * rng.uniform(0.5, 1.5, g.size)
    proj = LeastSquaresProjector(X)
    fitted = proj(y)
    assert fitted.mean() == pytest.approx(y.mean(), rel=1e-14)
    np.testing.assert_allclose(fitted, X @ fit(X, y).coefficients, rtol=1e-9, atol=1e-9)


def test_projector_in_the_money_mask():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, 2000)
    X = np.column_stack([np.ones_like(x), x])
    y = np.where(x > 0, 1 + x, 0.0)
    proj = LeastSquaresProjector(X, mask=x > 0)
    np.testing.assert_allclose(proj(y), 1 + x, atol=1e-10)  # extrapolated to all rows


def test_coefficient_dump(tmp_path):
    model = RegressionModel(BasisSpec(degree=1, include_payoff_terms=False))
    rng = np.random.default_rng(7)
    S = rng.uniform(90, 110, size=(100, 2))
    model.fit_step(1, S, np.zeros(100), S[:, 0])
    out = tmp_path / "coef.csv"
    model.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "step,coef_0,coef_1,coef_2"
    assert lines[1].startswith("1,")
