import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import low_rank, random_mask
from mcpanel.errors import EmptyMaskError, PanelError
from mcpanel.panel import ObservationMask, mask_staggered, norm
from mcpanel.soft_impute import (
    CvConfig,
    FitResult,
    McnnmConfig,
    _draw_folds,
    cross_validate,
    cv_subset_size,
    default_lambda_grid,
    factorize,
    fit_mcnnm,
    fit_mcnnm_cv,
    lambda_max,
    objective,
    shrink,
    svd_triple,
)


def full(n, t):
    return ObservationMask(np.ones((n, t), bool))


# -- shrink -----------------------------------------------------------------

def test_shrink_diagonal():
    np.testing.assert_allclose(shrink(np.diag([3.0, 1.0]), 1.0), np.diag([2.0, 0.0]), atol=1e-12)
    np.testing.assert_allclose(shrink(np.diag([3.0, 1.0]), 3.0), np.zeros((2, 2)), atol=0)


def test_shrink_zero_threshold_is_identity(rng):
    a = rng.standard_normal((7, 5))
    np.testing.assert_allclose(shrink(a, 0.0), a, atol=1e-10)


def test_shrink_rejects_negative_threshold():
    with pytest.raises(ValueError):
        shrink(np.eye(2), -1.0)


matrices = st.tuples(st.integers(1, 7), st.integers(1, 7)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(-100, 100))
)


@settings(max_examples=60, deadline=None)
@given(matrices, st.floats(0, 50))
def test_shrink_spectrum_law(a, tau):
    s_before = np.linalg.svd(a, compute_uv=False)
    s_after = np.linalg.svd(shrink(a, tau), compute_uv=False)
    np.testing.assert_allclose(s_after, np.maximum(s_before - tau, 0), atol=1e-8 * max(1.0, s_before[0]))


def test_shrink_nonexpansive(rng):
    for _ in range(100):
        a, b = rng.standard_normal((2, 6, 5))
        tau = rng.uniform(0, 3)
        lhs = np.linalg.norm(shrink(a, tau) - shrink(b, tau))
        assert lhs <= np.linalg.norm(a - b) + 1e-8


def test_svd_triple_invariants(rng):
    a = rng.standard_normal((9, 4))
    tri = svd_triple(a)
    np.testing.assert_allclose(tri.left.T @ tri.left, np.eye(4), atol=1e-8)
    np.testing.assert_allclose(tri.right.T @ tri.right, np.eye(4), atol=1e-8)
    assert np.all(np.diff(tri.singular_values) <= 0) and np.all(tri.singular_values >= 0)
    np.testing.assert_allclose(tri.reconstruct(), a, atol=1e-8 * tri.singular_values[0])


# -- fit_mcnnm --------------------------------------------------------------

def test_fully_observed_fixed_point(rng):
    y = rng.standard_normal((8, 6))
    lam = 0.05
    fit = fit_mcnnm(y, full(8, 6), lam=lam)
    np.testing.assert_allclose(fit.estimate, shrink(y, lam * 48 / 2), atol=1e-10)
    assert fit.converged and fit.n_iter <= 2


def test_lambda_max_annihilates(rng):
    y = rng.standard_normal((10, 8))
    m = random_mask(rng, 10, 8, 0.4)
    top = lambda_max(y, m)
    assert np.abs(fit_mcnnm(y, m, lam=top).estimate).max() < 1e-10
    assert np.abs(fit_mcnnm(y, m, lam=0.99 * top).estimate).max() > 1e-6


def test_lambda_zero_fully_observed_returns_data(rng):
    y = rng.standard_normal((6, 9))
    np.testing.assert_allclose(fit_mcnnm(y, full(6, 9), lam=0.0).estimate, y, atol=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_noiseless_rank_one_recovery(seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(20)
    v = rng.standard_normal(20)
    l_star = 20 * np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
    m = random_mask(rng, 20, 20, 0.3)
    fit = fit_mcnnm(l_star, m, lam=0.01 * lambda_max(l_star, m))
    assert np.linalg.norm(fit.estimate - l_star) / np.linalg.norm(l_star) < 0.05


def test_missing_entries_are_ignored(rng):
    y = rng.standard_normal((6, 5))
    m = random_mask(rng, 6, 5, 0.3)
    y_nan = np.where(m.observed, y, np.nan)
    a = fit_mcnnm(y, m, lam=0.01).estimate
    b = fit_mcnnm(y_nan, m, lam=0.01).estimate
    np.testing.assert_array_equal(a, b)


def test_empty_mask_raises():
    with pytest.raises(EmptyMaskError):
        fit_mcnnm(np.ones((2, 2)), ObservationMask(np.zeros((2, 2), bool)), lam=0.1)


def test_objective_trace_nonincreasing_and_matches(rng):
    y = low_rank(rng, 15, 12, 2) + 0.1 * rng.standard_normal((15, 12))
    m = mask_staggered(rng.integers(4, 13, size=15), 12)
    lam = 0.05 * lambda_max(y, m)
    fit = fit_mcnnm(y, m, lam=lam)
    assert np.all(np.diff(fit.objective_trace) <= 1e-10)
    assert fit.objective_trace[-1] == pytest.approx(objective(y, m, fit.estimate, lam), rel=1e-9)


def test_nonconvergence_is_flagged(rng):
    y = low_rank(rng, 20, 20, 2)
    m = random_mask(rng, 20, 20, 0.5)
    fit = fit_mcnnm(y, m, McnnmConfig(lam=1e-4 * lambda_max(y, m), max_iter=3))
    assert not fit.converged and fit.n_iter == 3


def test_clip_max(rng):
    y = 10 * rng.standard_normal((5, 5))
    fit = fit_mcnnm(y, full(5, 5), McnnmConfig(lam=0.0, clip_max=2.0))
    assert np.abs(fit.estimate).max() <= 2.0


def test_config_validation():
    with pytest.raises(ValueError):
        McnnmConfig(lam=-1)
    with pytest.raises(ValueError):
        McnnmConfig(tol=0)
    with pytest.raises(ValueError):
        McnnmConfig(max_iter=0)
    with pytest.raises(ValueError):
        CvConfig(lambda_grid=(1.0, 2.0))


# -- lambda_max -------------------------------------------------------------

def test_lambda_max_examples(rng):
    assert lambda_max(np.array([[4.0, 0.0], [0.0, 0.0]]), full(2, 2)) == pytest.approx(2.0)
    with pytest.warns(RuntimeWarning):
        assert lambda_max(np.zeros((3, 3)), full(3, 3)) == 0.0
    y = rng.standard_normal((10, 8))
    m = random_mask(rng, 10, 8, 0.4)
    direct = 2 * np.linalg.svd(np.where(m.observed, y, 0), compute_uv=False)[0] / m.n_observed
    assert lambda_max(y, m) == pytest.approx(direct, rel=1e-12)


def test_default_grid_shape(rng):
    y = rng.standard_normal((6, 6))
    m = random_mask(rng, 6, 6, 0.2)
    grid = default_lambda_grid(y, m)
    assert len(grid) == 31 and grid[-1] == 0.0
    assert grid[0] == pytest.approx(lambda_max(y, m))
    assert grid[-2] == pytest.approx(1e-4 * grid[0])
    assert np.all(np.diff(grid) < 0)


# -- cross-validation -------------------------------------------------------

def test_cv_subset_size():
    assert cv_subset_size(80, 10, 10) == 64
    assert 80 - cv_subset_size(80, 10, 10) == 16


def test_cv_singleton_grid(rng):
    y = rng.standard_normal((6, 5))
    m = random_mask(rng, 6, 5, 0.2)
    assert cross_validate(y, m, CvConfig(lambda_grid=(0.3,))).lam == 0.3


def test_cv_prefers_small_lambda_on_noiseless_rank_one(rng):
    y = 5 * np.outer(rng.standard_normal(10), rng.standard_normal(10))
    m = random_mask(rng, 10, 10, 0.2)
    folds = _draw_folds(m, 3, 7)
    # lambda_max of the largest training subset: every fold fit is zero there
    top = max(lambda_max(y, ObservationMask(f)) for f in folds)
    cv = CvConfig(n_folds=3, lambda_grid=(top, 0.001 * top), seed=7)
    res = cross_validate(y, m, cv)
    assert res.lam == pytest.approx(0.001 * top)
    expected = [np.mean(y[m.observed & ~f] ** 2) for f in folds]
    np.testing.assert_allclose(res.fold_mse[:, 0], expected, rtol=1e-12)
    assert res.mean_mse[1] < res.mean_mse[0]


def test_cv_rejects_fully_observed(rng):
    with pytest.raises(PanelError):
        cross_validate(rng.standard_normal((4, 4)), full(4, 4))


def test_cv_rejects_zero_subset():
    obs = np.zeros((4, 4), bool)
    obs[0, 0] = True
    with pytest.raises(PanelError):
        cross_validate(np.ones((4, 4)), ObservationMask(obs))


def test_cv_folds_have_expected_cardinality(rng):
    m = random_mask(rng, 10, 10, 0.2)
    for f in _draw_folds(m, 5, 3):
        assert f.sum() == 64
        assert np.all(m.observed[f])


def test_cv_deterministic_and_thread_independent(rng):
    y = low_rank(rng, 12, 10, 2) + 0.2 * rng.standard_normal((12, 10))
    m = mask_staggered(rng.integers(5, 11, size=12), 10)
    cv = CvConfig(n_folds=4, lambda_grid=default_lambda_grid(y, m, n_points=8), seed=11)
    a, ra = fit_mcnnm_cv(y, m, cv)
    b, rb = fit_mcnnm_cv(y, m, cv, workers=4)
    assert ra.lam == rb.lam
    np.testing.assert_array_equal(ra.mean_mse, rb.mean_mse)
    np.testing.assert_allclose(a.estimate, b.estimate, atol=1e-12, rtol=0)
    assert a.lam == ra.lam


# -- factorize --------------------------------------------------------------

def test_factorize_zero():
    pair = factorize(FitResult(np.zeros((3, 4)), 0, np.array([0.0]), 1, True, 1.0))
    assert pair.a.shape == (3, 0) and pair.b.shape == (4, 0) and pair.rank == 0


def test_factorize_rank_one_closed_form(rng):
    u = rng.standard_normal(5)
    v = rng.standard_normal(4)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    pair = factorize(2 * np.outer(u, v))
    assert pair.rank == 1
    sign = np.sign(pair.a[0, 0] / u[0])
    np.testing.assert_allclose(pair.a[:, 0], sign * np.sqrt(2) * u, atol=1e-12)
    np.testing.assert_allclose(pair.b[:, 0], sign * np.sqrt(2) * v, atol=1e-12)
    assert np.sum(pair.a**2) == pytest.approx(2.0)


def test_factorize_rank_two_identity(rng):
    l = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 4))
    pair = factorize(l)
    nuc = np.linalg.svd(l, compute_uv=False).sum()
    assert pair.rank == 2
    assert np.sum(pair.a**2) + np.sum(pair.b**2) == pytest.approx(2 * nuc, abs=1e-10)
    np.testing.assert_allclose(pair.a @ pair.b.T, l, atol=1e-10)


def test_factorize_fit_identity(rng):
    y = low_rank(rng, 12, 9, 3) + 0.3 * rng.standard_normal((12, 9))
    m = random_mask(rng, 12, 9, 0.25)
    fit = fit_mcnnm(y, m, lam=0.1 * lambda_max(y, m))
    pair = factorize(fit)
    nuc = norm(fit.estimate, "nuclear")
    assert pair.rank == fit.effective_rank
    assert np.sum(pair.a**2) == pytest.approx(nuc, rel=1e-8)
    assert np.sum(pair.b**2) == pytest.approx(nuc, rel=1e-8)
    s1 = np.linalg.svd(fit.estimate, compute_uv=False)[0]
    assert np.abs(pair.a @ pair.b.T - fit.estimate).max() <= 1e-8 * s1
