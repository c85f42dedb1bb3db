import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcpanel.errors import DimensionError, PanelError
from mcpanel.panel import (
    ObservationMask,
    mask_block,
    mask_from_pairs,
    mask_staggered,
    norm,
    project_missing,
    project_observed,
)

A = np.array([[1.0, 2.0], [3.0, 4.0]])


def test_project_full_mask_is_identity():
    m = ObservationMask(np.ones((2, 2), bool))
    np.testing.assert_array_equal(project_observed(A, m), A)
    np.testing.assert_array_equal(project_missing(A, m), np.zeros((2, 2)))


def test_project_single_cell():
    m = mask_from_pairs(2, 2, [(0, 0)])
    np.testing.assert_array_equal(project_observed(A, m), [[1, 0], [0, 0]])
    np.testing.assert_array_equal(project_missing(A, m), [[0, 2], [3, 4]])


def test_project_empty_mask_gives_zero():
    m = ObservationMask(np.zeros((2, 2), bool))
    np.testing.assert_array_equal(project_observed(A, m), np.zeros((2, 2)))


def test_project_dimension_mismatch():
    m = ObservationMask(np.ones((3, 2), bool))
    with pytest.raises(DimensionError):
        project_observed(A, m)
    with pytest.raises(DimensionError):
        project_missing(A, m)


panels = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda s: st.tuples(
        arrays(np.float64, s, elements=st.floats(-1e6, 1e6)),
        arrays(np.bool_, s),
    )
)


@given(panels)
def test_partition_and_idempotence(pair):
    a, obs = pair
    m = ObservationMask(obs)
    po = project_observed(a, m)
    np.testing.assert_array_equal(po + project_missing(a, m), a)
    np.testing.assert_array_equal(project_observed(po, m), po)


def test_norm_examples():
    assert norm(np.eye(2), "nuclear") == pytest.approx(2.0)
    assert norm(np.diag([3.0, 4.0]), "frobenius") == pytest.approx(5.0)
    assert norm([[1, -2], [0, 3]], "l1") == pytest.approx(6.0)
    assert norm(np.diag([3.0, 4.0]), "operator") == pytest.approx(4.0)
    assert norm([[1, -7], [0, 3]], "max") == 7.0
    assert norm(np.diag([3.0, 4.0]), "schatten", p=2) == pytest.approx(5.0)
    assert norm(np.diag([3.0, 4.0]), "schatten", p=1) == pytest.approx(7.0)
    assert norm(np.outer([1, 2, 3], [1, 1]), "rank") == 1
    assert norm(np.zeros((3, 3)), "rank") == 0


def test_schatten_requires_p_at_least_one():
    with pytest.raises(ValueError):
        norm(np.eye(2), "schatten", p=0.5)
    with pytest.raises(ValueError):
        norm(np.eye(2), "schatten")


def test_norm_rejects_non_finite():
    with pytest.raises(PanelError):
        norm([[np.nan, 1.0]], "frobenius")


def test_norm_ordering_on_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.standard_normal((8, 6))
        op, fro, nuc = norm(a, "operator"), norm(a, "frobenius"), norm(a, "nuclear")
        r = norm(a, "rank")
        assert op <= fro * (1 + 1e-10)
        assert fro <= nuc * (1 + 1e-10)
        assert nuc <= r * op * (1 + 1e-10)
        sv = np.linalg.svd(a, compute_uv=False)
        assert np.sqrt(np.sum(sv**2)) == pytest.approx(np.sqrt(np.sum(a * a)), rel=1e-10)


def test_mask_block_examples():
    m = mask_block(2, 3, 2, [1])
    assert [tuple(p) for p in np.argwhere(m.missing)] == [(1, 2)]
    assert m.structure == "block"
    assert mask_block(3, 3, 0, []).n_missing == 0
    m = mask_block(3, 3, 1, [0, 2])
    assert [tuple(p) for p in np.argwhere(m.missing)] == [(0, 1), (0, 2), (2, 1), (2, 2)]
    assert m.n_observed + m.n_missing == 9


def test_mask_block_out_of_range():
    with pytest.raises(PanelError):
        mask_block(2, 3, 3, [0])
    with pytest.raises(PanelError):
        mask_block(2, 3, -1, [0])


def test_mask_staggered_examples():
    m = mask_staggered([4, 4, 4], 4)
    assert m.n_missing == 0 and m.n_control == 3
    m = mask_staggered([4, 4, 1], 4)
    assert m.observed[2].tolist() == [True, False, False, False]
    assert m.n_control == 2
    m = mask_staggered([3, 2], 3)
    assert [tuple(p) for p in m.pairs] == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]
    assert m.structure == "staggered"


def test_mask_staggered_never_is_full_row():
    m = mask_staggered([None, 2], 3)
    assert m.adoption_times == (3, 2)


def test_mask_staggered_out_of_range():
    with pytest.raises(PanelError):
        mask_staggered([0, 3], 3)
    with pytest.raises(PanelError):
        mask_staggered([4], 3)


@settings(max_examples=50)
@given(st.integers(1, 8).flatmap(lambda t: st.tuples(st.just(t), st.lists(st.integers(1, t), min_size=1, max_size=8))))
def test_staggered_mask_is_monotone(args):
    t, times = args
    m = mask_staggered(times, t)
    obs = m.observed
    # observed at t implies observed at every earlier period
    assert np.all(np.cumprod(obs, axis=1) == obs)
    assert m.n_control == sum(1 for x in times if x == t)
    np.testing.assert_array_equal(m.row_prefix_lengths(), times)


def test_mask_is_immutable():
    m = mask_block(2, 2, 1, [0])
    with pytest.raises(ValueError):
        m.observed[0, 0] = False


def test_missing_block_detection():
    m = mask_block(4, 5, 3, [1, 3])
    rows, cols = m.missing_block()
    assert rows.tolist() == [1, 3] and cols.tolist() == [3, 4]
    assert mask_staggered([5, 3, 2], 5).missing_block() is None
