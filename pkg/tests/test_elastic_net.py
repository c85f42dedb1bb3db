import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcpanel.elastic_net import enet_lambda_max, fit_elastic_net, fit_elastic_net_cv, kkt_residual


def _ols(x, y):
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    coef = np.linalg.solve(xc.T @ xc, xc.T @ yc)
    return coef, y.mean() - x.mean(axis=0) @ coef


def test_zero_penalty_is_ols():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 5))
    y = x @ rng.standard_normal(5) + 0.3 * rng.standard_normal(40) + 2.0
    coef, b0 = _ols(x, y)
    for alpha in (0.0, 0.5, 1.0):
        w = fit_elastic_net(x, y, 0.0, alpha)
        assert w.converged
        np.testing.assert_allclose(w.coefficients, coef, atol=1e-6)
        assert w.intercept == pytest.approx(b0, abs=1e-6)


def test_large_penalty_zeroes_everything():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((25, 4))
    y = rng.standard_normal(25)
    # independent subgradient threshold
    xc = x - x.mean(axis=0)
    lam = np.max(np.abs(xc.T @ (y - y.mean()))) / 25
    w = fit_elastic_net(x, y, lam, 1.0)
    np.testing.assert_array_equal(w.coefficients, 0.0)
    assert w.intercept == pytest.approx(y.mean())
    assert enet_lambda_max(x, y, 1.0) == pytest.approx(lam)
    w = fit_elastic_net(x, y, 0.9 * lam, 1.0)
    assert np.count_nonzero(w.coefficients) >= 1


@pytest.mark.parametrize("lam", [0.0, 0.1, 0.5, 3.0])
def test_single_predictor_lasso_closed_form(lam):
    rng = np.random.default_rng(2)
    x = rng.standard_normal(30)
    x = (x - x.mean()) / x.std()
    y = 0.8 * x + rng.standard_normal(30)
    z = x @ (y - y.mean()) / 30
    expected = np.sign(z) * max(abs(z) - lam, 0.0)
    w = fit_elastic_net(x[:, None], y, lam, 1.0)
    assert w.coefficients[0] == pytest.approx(expected, abs=1e-9)


def test_constant_column_gets_zero_weight():
    rng = np.random.default_rng(3)
    x = np.column_stack([rng.standard_normal(10), np.full(10, 4.0)])
    y = x[:, 0] + 1.0
    w = fit_elastic_net(x, y, 0.01, 0.5)
    assert w.coefficients[1] == 0.0
    assert kkt_residual(x, y, w, 0.01, 0.5) < 1e-6


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 10_000),
    st.sampled_from([0.0, 0.5, 1.0]),
    st.integers(3, 30),
    st.integers(1, 40),
    st.floats(1e-3, 1.0),
)
def test_kkt_holds(seed, alpha, n, p, frac):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    y = x[:, 0] - 0.5 * x[:, -1] + rng.standard_normal(n)
    lam = frac * max(enet_lambda_max(x, y, max(alpha, 0.05)), 1e-3)
    w = fit_elastic_net(x, y, lam, alpha)
    assert w.converged
    assert kkt_residual(x, y, w, lam, alpha) < 1e-6


def test_sweep_budget_flagged():
    rng = np.random.default_rng(4)
    z = rng.standard_normal(20)
    x = np.column_stack([z, z + 1e-3 * rng.standard_normal(20)])
    w = fit_elastic_net(x, z, 1e-6, 0.5, max_sweeps=2)
    assert not w.converged
    assert np.all(np.isfinite(w.coefficients))


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        fit_elastic_net(np.ones((3, 2)), np.ones(4), 0.1, 0.5)
    with pytest.raises(ValueError):
        fit_elastic_net(np.ones((3, 2)), np.ones(3), 0.1, 1.5)
    with pytest.raises(ValueError):
        fit_elastic_net(np.ones((3, 2)), np.ones(3), -1.0, 0.5)


def test_cv_recovers_signal_and_is_deterministic():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((60, 10))
    y = 3 * x[:, 2] + 0.1 * rng.standard_normal(60)
    a = fit_elastic_net_cv(x, y, 0.5, seed=7)
    b = fit_elastic_net_cv(x, y, 0.5, seed=7)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)
    assert int(np.argmax(np.abs(a.coefficients))) == 2
    assert a.coefficients[2] == pytest.approx(3.0, rel=0.05)


def test_cv_single_row_is_intercept_only():
    w = fit_elastic_net_cv(np.array([[1.0, 2.0]]), np.array([5.0]))
    np.testing.assert_array_equal(w.coefficients, 0.0)
    assert w.intercept == 5.0
