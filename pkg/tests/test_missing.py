import numpy as np
import pytest

from conftest import brute_cp, random_coupled
from turbocmtf.als import SolverOptions, cmtf_als, objective
from turbocmtf.factors import FactorSet, reconstruct
from turbocmtf.missing import (WeightMask, cmtf_wals, masked_data, scalar_wls, weighted_objective,
                               wls_factor)
from turbocmtf.synth import planted
from turbocmtf.tensor import Tensor3


def random_mask(rng, data, keep=0.7):
    w = Tensor3.from_dense((rng.random(data.x.dims) < keep).astype(float))
    sides = [None if y is None else (rng.random(y.shape) < keep).astype(float) for y in data.sides]
    return WeightMask(w, *sides)


def test_mask_must_be_binary():
    with pytest.raises(ValueError):
        WeightMask(Tensor3.from_dense(np.full((1, 1, 1), 0.5)))


def test_mask_shape_check(rng):
    data = random_coupled(rng, (3, 4, 5), (2, None, None))
    with pytest.raises(ValueError):
        WeightMask(Tensor3.from_dense(np.ones((3, 4, 4)))).check(data)
    with pytest.raises(ValueError):
        WeightMask(Tensor3.from_dense(np.ones((3, 4, 5))), np.ones((3, 3))).check(data)


def test_weighted_objective_cases(rng):
    data = random_coupled(rng, (3, 4, 5), (2, 3, None))
    f = FactorSet(*(rng.standard_normal((n, 2)) for n in (3, 4, 5, 2, 3)))
    assert weighted_objective(data, WeightMask.full(data), f) == pytest.approx(objective(data, f))
    zero = WeightMask(Tensor3.from_dense(np.zeros((3, 4, 5))), np.zeros((3, 2)), np.zeros((4, 3)))
    assert weighted_objective(data, zero, f) == 0
    mask = random_mask(rng, data)
    x, w = data.x.to_dense(), mask.w.to_dense()
    oracle = np.sum((w * (x - brute_cp(f.a, f.b, f.c))) ** 2)
    for y, wy, t, s in zip(data.sides, mask.sides, (f.a, f.b), (f.d, f.e)):
        for i in range(y.shape[0]):
            for j in range(y.shape[1]):
                oracle += wy[i, j] * (y[i, j] - t[i] @ s[j]) ** 2
    assert weighted_objective(data, mask, f) == pytest.approx(oracle, rel=1e-10)


def test_scalar_wls_examples():
    assert scalar_wls([2, 4], [1, 2], [1, 1]) == pytest.approx(2.0)
    assert scalar_wls([2, 999], [1, 5], [1, 0]) == pytest.approx(2.0)
    assert scalar_wls([2, 4], [1, 2], [0, 0]) == 0.0
    with pytest.raises(ValueError):
        scalar_wls([1], [1, 2], [1, 1])


def test_scalar_wls_stationary(rng):
    for _ in range(50):
        x, a = rng.standard_normal(8), rng.standard_normal(8)
        w = (rng.random(8) < 0.6).astype(float)
        w[0] = 1
        b = scalar_wls(x, a, w)
        # derivative of sum w (x - a b)^2 at b
        assert abs(-2 * np.sum(w * a * (x - a * b))) < 1e-10


def test_wls_full_mask_matches_lstsq(rng):
    a, x = rng.standard_normal((12, 3)), rng.standard_normal((12, 5))
    b = wls_factor(x, np.ones_like(x), a, np.zeros((5, 3)), tol=1e-14, max_sweeps=2000)
    np.testing.assert_allclose(b, np.linalg.lstsq(a, x, rcond=None)[0].T, atol=1e-6)


def test_wls_rank_one_half_masked(rng):
    a, b = rng.random((10, 1)) + 0.1, rng.random((6, 1)) + 0.1
    x = a @ b.T
    w = (rng.random(x.shape) < 0.5).astype(float)
    w[0] = 1
    out = wls_factor(x, w, a, np.zeros((6, 1)), max_sweeps=1)
    np.testing.assert_allclose(out, b, atol=1e-6)


def test_wls_fixed_point(rng):
    a, x = rng.standard_normal((12, 3)), rng.standard_normal((12, 5))
    w = (rng.random(x.shape) < 0.7).astype(float)
    b = wls_factor(x, w, a, np.zeros((5, 3)), tol=0.0, max_sweeps=5000)
    again = wls_factor(x, w, a, b, max_sweeps=1)
    np.testing.assert_allclose(again, b, atol=1e-12)


def test_wls_every_update_decreases(rng):
    a, x = rng.standard_normal((9, 3)), rng.standard_normal((9, 4))
    w = (rng.random(x.shape) < 0.6).astype(float)
    b0 = rng.standard_normal((4, 3))
    seen = [float(np.sum((w * (x - a @ b0.T)) ** 2))]
    wls_factor(x, w, a, b0, max_sweeps=20, on_update=seen.append)
    assert all(t1 <= t0 * (1 + 1e-12) + 1e-15 for t0, t1 in zip(seen, seen[1:]))


def test_wls_shape_mismatch(rng):
    with pytest.raises(ValueError):
        wls_factor(np.ones((4, 3)), np.ones((4, 2)), np.ones((4, 1)), np.ones((3, 1)))


def test_masked_entries_are_inert(rng):
    inst = planted((8, 7, 6), 2, (4, None, 3), snr_db=20, missing=0.3, seed=5)
    data, mask = inst.data, inst.mask
    opts = SolverOptions(rank=2, seed=1, max_iters=30)
    f1, t1 = cmtf_wals(data, mask, opts)
    x = data.x.to_dense().copy()
    w = mask.w.to_dense()
    x[w == 0] = rng.standard_normal(int((w == 0).sum())) * 1e3
    y1 = data.y1.copy()
    y1[mask.w1 == 0] = 77.0
    other = type(data)(Tensor3.from_dense(x), y1, None, data.y3)
    f2, t2 = cmtf_wals(other, mask, opts)
    assert t1 == t2
    for n in f1.present():
        assert np.array_equal(getattr(f1, n), getattr(f2, n))


def test_masked_data_zeroes_missing(rng):
    data = random_coupled(rng, (3, 4, 5), (2, None, None))
    mask = random_mask(rng, data)
    md = masked_data(data, mask)
    assert np.all(md.x.to_dense()[mask.w.to_dense() == 0] == 0)
    assert np.all(md.y1[mask.w1 == 0] == 0)


def test_wals_full_mask_matches_als():
    inst = planted((10, 9, 8), 2, (5, 4, None), snr_db=30, seed=6)
    opts = SolverOptions(rank=2, seed=2)
    _, t_als = cmtf_als(inst.data, opts)
    _, t_w = cmtf_wals(inst.data, WeightMask.full(inst.data), opts)
    assert t_w[-1] == pytest.approx(t_als[-1], rel=1e-6)


def test_wals_monotone_and_recovers_with_missing():
    inst = planted((15, 15, 15), 2, (8, 8, 8), missing=0.1, seed=7)
    f, trace = cmtf_wals(inst.data, inst.mask, SolverOptions(rank=2, seed=0))
    ref = trace[0]
    assert all(b <= a + 1e-9 * ref for a, b in zip(trace, trace[1:]))
    w = inst.mask.w.to_dense()
    x = inst.data.x.to_dense()
    err = np.linalg.norm(w * (x - reconstruct(f).to_dense())) / np.linalg.norm(w * x)
    assert err < 1e-3


def test_wals_half_missing_completes():
    inst = planted((12, 12, 12), 2, (6, None, None), missing=0.5, seed=8)
    f, trace = cmtf_wals(inst.data, inst.mask, SolverOptions(rank=2, seed=0, max_iters=100))
    assert np.isfinite(trace[-1])
    assert np.all(np.isfinite(f.a))
