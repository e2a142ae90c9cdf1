import numpy as np
import pytest

from turbocmtf.als import SolverOptions, cmtf_als, objective
from turbocmtf.driver import (PARALLELISM_ENV, RepetitionError, TurboOptions, default_parallelism,
                              turbo_cmtf)
from turbocmtf.missing import weighted_objective
from turbocmtf.sampling import SamplingOptions
from turbocmtf.synth import planted


@pytest.fixture(scope="module")
def inst():
    return planted((24, 20, 18), 2, (10, None, 8), snr_db=25, seed=3)


def turbo(data, mask=None, s=2.0, p=0.35, r=3, seed=0, parallel=1, core="als", rank=2):
    opts = TurboOptions(SolverOptions(rank=rank, seed=seed, max_iters=200),
                        SamplingOptions(s=s, p=p, r=r, seed=seed), parallel, core)
    return turbo_cmtf(data, mask, opts)


def test_degenerate_sampling_is_als(inst):
    f, rep = turbo(inst.data, s=1, p=0, r=1, seed=5)
    g, trace = cmtf_als(inst.data, SolverOptions(rank=2, seed=5, max_iters=200))
    for n in g.present():
        assert np.array_equal(getattr(f, n), getattr(g, n))
    assert rep.rep_traces[0] == trace


def test_unsampled_rows_are_zero(inst):
    f, rep = turbo(inst.data, s=3, p=0.35, r=2)
    for name, mode in zip(("a", "b", "c", "d", "g"), ("a", "b", "c", "d", "g")):
        sampled = np.unique(np.concatenate([s.indices(mode) for s in rep.specs]))
        off = np.setdiff1d(np.arange(getattr(f, name).shape[0]), sampled)
        assert np.all(getattr(f, name)[off] == 0)
        assert np.count_nonzero(getattr(f, name)) <= sum(s.indices(mode).size for s in rep.specs) * 2


def test_common_block_in_every_repetition(inst):
    _, rep = turbo(inst.data, s=2, p=0.4, r=4)
    for m in ("a", "b", "c", "d", "g"):
        common = rep.specs[0][m].common
        assert common.size > 0
        for s in rep.specs:
            assert np.isin(common, s.indices(m)).all()


def test_report_objective_recomputed(inst):
    f, rep = turbo(inst.data)
    assert rep.objective == pytest.approx(objective(inst.data, f), rel=1e-10)
    assert len(rep.rep_objectives) == 3
    assert set(rep.timings) == {"sample", "fit", "merge"}
    assert all(np.all(lam > 0) for lam in f.lambdas.values())


def test_parallel_matches_serial(inst):
    f1, r1 = turbo(inst.data, r=3, parallel=1)
    f2, r2 = turbo(inst.data, r=3, parallel=3)
    for n in f1.present():
        assert np.array_equal(getattr(f1, n), getattr(f2, n))
        assert np.array_equal(f1.lam(n), f2.lam(n))
    assert r1.rep_traces == r2.rep_traces


def test_wals_core_with_mask():
    inst = planted((16, 14, 12), 2, (6, None, None), snr_db=30, missing=0.1, seed=4)
    f, rep = turbo(inst.data, inst.mask, s=1.5, r=2, core="wals")
    assert rep.objective == pytest.approx(weighted_objective(inst.data, inst.mask, f), rel=1e-10)


def test_no_common_block_still_merges(inst):
    f, rep = turbo(inst.data, p=0.0, r=2)
    assert np.isfinite(rep.objective)
    assert all(np.all(lam == 1) for lam in f.lambdas.values())


def test_repetition_failure_names_index(inst, monkeypatch):
    import turbocmtf.driver as drv

    calls = []

    def boom(sub, submask, solver, core):
        calls.append(1)
        if len(calls) == 2:
            raise ValueError("bad block")
        return cmtf_als(sub, solver)

    monkeypatch.setattr(drv, "_fit", boom)
    with pytest.raises(RepetitionError) as err:
        turbo(inst.data, r=3)
    assert err.value.rep == 1
    assert isinstance(err.value.__cause__, ValueError)


def test_options_validation():
    with pytest.raises(ValueError):
        SamplingOptions(r=0)
    with pytest.raises(ValueError):
        TurboOptions(SolverOptions(rank=1), parallel=0)
    with pytest.raises(ValueError):
        TurboOptions(SolverOptions(rank=1), core="gd")


def test_default_parallelism(monkeypatch):
    monkeypatch.setenv(PARALLELISM_ENV, "3")
    assert default_parallelism() == 3
    monkeypatch.delenv(PARALLELISM_ENV)
    assert default_parallelism() >= 1


@pytest.fixture(scope="module")
def noiseless60():
    inst = planted((60, 60, 60), 2, (30, None, None), seed=0)
    base, _ = cmtf_als(inst.data, SolverOptions(rank=2, seed=0))
    return inst, base


def _turbo_cost(inst, base, r, seed):
    from turbocmtf.metrics import relative_cost

    opts = TurboOptions(SolverOptions(rank=2, seed=seed), SamplingOptions(s=3, p=0.5, r=r, seed=seed))
    f, _ = turbo_cmtf(inst.data, None, opts)
    return relative_cost(inst.data, f, base)


def test_noiseless_relative_cost_bound(noiseless60):
    inst, base = noiseless60
    cost = _turbo_cost(inst, base, 4, 0)
    assert 0 < cost <= 1.5, f"relative cost {cost:.3g}"


def test_more_repetitions_lower_mean_cost(noiseless60):
    inst, base = noiseless60
    mean1 = np.mean([_turbo_cost(inst, base, 1, seed) for seed in range(20)])
    mean4 = np.mean([_turbo_cost(inst, base, 4, seed) for seed in range(20)])
    assert mean4 <= mean1
