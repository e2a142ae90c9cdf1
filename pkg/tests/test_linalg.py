import tracemalloc

import numpy as np
import pytest
import scipy.sparse as sp

from turbocmtf.linalg import PinvOptions, kr_solve, ls_solve, pinv, stacked_kr_pinv_apply
from turbocmtf.tensor import khatri_rao


def naive(a, b, m, rhs):
    return np.linalg.pinv(np.vstack([khatri_rao(a, b), m])) @ rhs


def test_pinv_identity_and_threshold():
    np.testing.assert_array_equal(pinv(np.eye(3)), np.eye(3))
    np.testing.assert_array_equal(pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))


def test_pinv_tolerance_is_relative():
    m = np.diag([1.0, 1e-12])
    assert pinv(m)[1, 1] == 0.0
    assert pinv(m, PinvOptions(1e-14))[1, 1] == pytest.approx(1e12)
    with pytest.raises(ValueError):
        PinvOptions(0.0)


@pytest.mark.parametrize("shape", [(6, 3), (3, 6), (5, 5)])
def test_penrose_conditions(rng, shape):
    m = rng.standard_normal(shape)
    p = pinv(m)
    np.testing.assert_allclose(m @ p @ m, m, atol=1e-8)
    np.testing.assert_allclose(p @ m @ p, p, atol=1e-8)
    np.testing.assert_allclose((m @ p).T, m @ p, atol=1e-8)
    np.testing.assert_allclose((p @ m).T, p @ m, atol=1e-8)
    if shape[0] >= shape[1]:
        np.testing.assert_allclose(p @ m, np.eye(shape[1]), atol=1e-8)


def test_pinv_rejects_nonfinite():
    with pytest.raises(ValueError):
        pinv(np.array([[np.inf]]))


def test_stacked_scalar_case():
    one = np.ones((1, 1))
    out = stacked_kr_pinv_apply(one, one, one, np.array([[2.0], [3.0]]))
    assert out.item() == pytest.approx(2.5)


def test_stacked_matches_naive(rng):
    a, b, m = rng.standard_normal((4, 2)), rng.standard_normal((3, 2)), rng.standard_normal((5, 2))
    rhs = rng.standard_normal((17, 6))
    np.testing.assert_allclose(stacked_kr_pinv_apply(a, b, m, rhs), naive(a, b, m, rhs), atol=1e-8)


def test_stacked_without_coupling(rng):
    a, b = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
    rhs = rng.standard_normal((12, 3))
    expect = np.linalg.pinv(khatri_rao(a, b)) @ rhs
    np.testing.assert_allclose(stacked_kr_pinv_apply(a, b, np.zeros((0, 2)), rhs), expect, atol=1e-8)
    np.testing.assert_allclose(stacked_kr_pinv_apply(a, b, None, rhs), expect, atol=1e-8)


def test_stacked_block_rhs_and_sparse(rng):
    a, b, m = rng.standard_normal((4, 2)), rng.standard_normal((3, 2)), rng.standard_normal((5, 2))
    rhs = rng.standard_normal((17, 6)) * (rng.random((17, 6)) < 0.3)
    full = stacked_kr_pinv_apply(a, b, m, rhs)
    split = stacked_kr_pinv_apply(a, b, m, (sp.csr_matrix(rhs[:12]), rhs[12:]))
    np.testing.assert_allclose(split, full, atol=1e-12)


def test_stacked_dimension_errors(rng):
    a, b = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
    with pytest.raises(ValueError):
        stacked_kr_pinv_apply(a, rng.standard_normal((3, 3)), None, np.zeros((12, 1)))
    with pytest.raises(ValueError):
        stacked_kr_pinv_apply(a, b, np.ones((2, 3)), np.zeros((14, 1)))
    with pytest.raises(ValueError):
        stacked_kr_pinv_apply(a, b, np.ones((2, 2)), np.zeros((13, 1)))


def test_stacked_allocation_bound(rng):
    # the only tall allocation allowed is one F-column block the height of the stack
    F, I, J, M, k = 3, 60, 50, 40, 1
    a, b, m = rng.standard_normal((I, F)), rng.standard_normal((J, F)), rng.standard_normal((M, F))
    rhs = rng.standard_normal((I * J + M, k))
    stacked_kr_pinv_apply(a, b, m, rhs)  # warm caches
    tracemalloc.start()
    out = stacked_kr_pinv_apply(a, b, m, rhs)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    bound = 8 * max(F * F, F * (I * J + M)) + out.nbytes
    naive_pinv = 8 * F * (I * J + M) * 2
    assert peak <= bound + 16384
    assert peak < naive_pinv


def test_ls_solve():
    r = np.arange(6.0).reshape(3, 2)
    np.testing.assert_allclose(ls_solve(np.eye(3), r), r)
    assert ls_solve(np.array([[1.0], [1.0]]), np.array([[1.0], [3.0]])).item() == pytest.approx(2.0)
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    rhs = np.array([[1.0], [2.0]])
    np.testing.assert_allclose(ls_solve(a, rhs), np.linalg.inv(a) @ rhs, atol=1e-10)
    with pytest.raises(ValueError):
        ls_solve(np.eye(2), np.ones((3, 1)))


@pytest.mark.parametrize("sparse", [False, True])
def test_kr_solve_matches_naive(rng, sparse):
    a, b = rng.random((5, 3)), rng.random((4, 3))
    x = rng.random((6, 20))
    want = (np.linalg.pinv(khatri_rao(a, b)) @ x.T).T
    got = kr_solve(a, b, sp.csr_matrix(x) if sparse else x, 1e-10)
    assert isinstance(got, np.ndarray)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_kr_solve_nonfinite_raises(rng):
    a, b = rng.random((3, 2)), rng.random((2, 2))
    a[0, 0] = np.nan
    with pytest.raises(np.linalg.LinAlgError):
        kr_solve(a, b, rng.random((4, 6)), 1e-10)
