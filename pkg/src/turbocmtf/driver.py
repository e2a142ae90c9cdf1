"""Sample, fit each sample, merge: the end-to-end sampled solver."""
from __future__ import annotations

import logging
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .als import SolverOptions, cmtf_als, objective
from .factors import FACTOR_NAMES, FactorSet
from .merge import MergeReport, PartialFactor, average_lambdas, merge, normalize_common
from .missing import WeightMask, cmtf_wals, masked_data, weighted_objective
from .sampling import (MODES, SampleSpec, SamplingOptions, density_profile, draw_common,
                       draw_repetition, extract)
from .tensor import CoupledData

log = logging.getLogger(__name__)

PARALLELISM_ENV = "TURBOCMTF_PARALLELISM"

# factor name -> sampled mode holding its rows
_FACTOR_MODE = dict(zip(FACTOR_NAMES, MODES))


def default_parallelism() -> int:
    env = os.environ.get(PARALLELISM_ENV)
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class TurboOptions:
    solver: SolverOptions
    sampling: SamplingOptions = field(default_factory=SamplingOptions)
    parallel: int = 1
    core: str = "als"

    def __post_init__(self):
        if self.parallel < 1:
            raise ValueError("parallel must be >= 1")
        if self.core not in ("als", "wals"):
            raise ValueError(f"core must be 'als' or 'wals', got {self.core!r}")


@dataclass
class RunReport:
    rep_objectives: List[float] = field(default_factory=list)
    rep_traces: List[List[float]] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    merge_reports: Dict[str, MergeReport] = field(default_factory=dict)
    flagged_columns: List[tuple] = field(default_factory=list)
    specs: List[SampleSpec] = field(default_factory=list)
    objective: float = float("nan")


class RepetitionError(RuntimeError):
    def __init__(self, rep: int, cause: Exception):
        super().__init__(f"repetition {rep} failed: {cause}")
        self.rep = rep
        self.__cause__ = cause


def extract_mask(mask: WeightMask, spec: SampleSpec) -> WeightMask:
    idx = {m: spec.indices(m) for m in spec.modes}
    w = mask.w.subtensor(idx["a"], idx["b"], idx["c"])
    sides = []
    for m, rows, cols in zip(mask.sides, "abc", "deg"):
        sides.append(None if m is None else m[np.ix_(idx[rows], idx[cols])])
    return WeightMask(w, *sides)


def _fit(sub: CoupledData, submask: Optional[WeightMask], solver: SolverOptions, core: str):
    if core == "wals":
        return cmtf_wals(sub, submask, solver)
    return cmtf_als(sub, solver)


def _fit_task(args):
    rep, sub, submask, solver, core = args
    try:
        return _fit(sub, submask, solver, core)
    except Exception as exc:  # re-raised in the parent with the repetition index
        return RepetitionError(rep, exc)


def _pool(n: int):
    ctx = multiprocessing.get_context("fork") if "fork" in multiprocessing.get_all_start_methods() \
        else None
    return ProcessPoolExecutor(max_workers=n, mp_context=ctx)


def turbo_cmtf(data: CoupledData, mask: Optional[WeightMask], opts: TurboOptions):
    """Fit a coupled model from ``opts.sampling.r`` density-biased samples.

    Every repetition shares the common index block, adds its own fresh block,
    fits the core solver (``als`` or ``wals``) on the sub-data and puts the
    factors back at their sampled rows. Columns are scaled to a unit-norm
    common part, merged per factor and the scales averaged. Rows that no
    repetition sampled stay exactly zero.

    Repetitions draw from random streams keyed by their index, so the result
    does not depend on ``opts.parallel``. Returns ``(FactorSet, RunReport)``.
    """
    sopts = opts.sampling
    F = opts.solver.rank
    if mask is not None:
        mask.check(data)
    report = RunReport()

    t0 = time.perf_counter()
    dens_data = data if mask is None else masked_data(data, mask)
    dp = density_profile(dens_data)
    common = draw_common(dp, sopts, F)
    specs = [draw_repetition(dp, common, sopts, i, F) for i in range(sopts.r)]
    jobs = []
    for i, spec in enumerate(specs):
        sub = extract(data, spec)
        for name, n in (("y1", 0), ("y2", 1), ("y3", 2)):
            if name in sub.index_maps:
                assert sub.index_maps[name][0] is sub.index_maps["x"][n]
        jobs.append((i, sub, None if mask is None else extract_mask(mask, spec),
                     opts.solver, opts.core))
    report.specs = specs
    report.timings["sample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if opts.parallel > 1 and len(jobs) > 1:
        with _pool(min(opts.parallel, len(jobs))) as ex:
            results = list(ex.map(_fit_task, jobs))
    else:
        results = [_fit_task(j) for j in jobs]
    for r in results:
        if isinstance(r, RepetitionError):
            raise r
    report.timings["fit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    present = [n for n in FACTOR_NAMES if getattr(results[0][0], n) is not None]
    full_dims = {"a": data.x.dims[0], "b": data.x.dims[1], "c": data.x.dims[2]}
    for n, y in zip("deg", data.sides):
        if y is not None:
            full_dims[n] = y.shape[1]
    merged, lambdas = {}, {}
    for name in present:
        mode = _FACTOR_MODE[name]
        common_idx = common[mode]
        partials, lams = [], []
        for i, (fs, trace) in enumerate(results):
            full = np.zeros((full_dims[name], F))
            full[specs[i].indices(mode)] = getattr(fs, name)
            if common_idx.size:
                full, lam, flagged = normalize_common(full, common_idx)
                report.flagged_columns.extend((i, name, f) for f in flagged)
            else:
                lam = np.ones(F)
            partials.append(PartialFactor(full, common_idx, lam))
            lams.append(lam)
        if not common_idx.size and len(partials) > 1:
            log.warning("no common block for factor %s; column matching is arbitrary", name)
        merged[name], mrep = merge(partials)
        report.merge_reports[name] = mrep
        lambdas[name] = average_lambdas(lams, mrep.assignments)
    result = FactorSet(*(merged.get(n) for n in FACTOR_NAMES), lambdas=lambdas)
    report.timings["merge"] = time.perf_counter() - t0

    report.rep_traces = [trace for _, trace in results]
    report.rep_objectives = [trace[-1] for trace in report.rep_traces]
    report.objective = objective(data, result) if mask is None else \
        weighted_objective(data, mask, result)
    return result, report
