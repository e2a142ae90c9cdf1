"""Evaluation metrics and prediction through the side-matrix factors."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .als import ROUNDOFF_FLOOR, objective
from .driver import turbo_cmtf
from .factors import FactorSet
from .missing import WeightMask, weighted_objective
from .tensor import CoupledData, Tensor3, frobenius_norm_sq

INF = math.inf
NNZ_TOL = 1e-12


@dataclass(frozen=True)
class MetricsReport:
    relative_cost: float
    relative_sparsity: float
    snr: Optional[float] = None
    wall_clock_fraction: Optional[float] = None


def _ratio(num: float, den: float, floor: float = 0.0) -> float:
    # errors at or below ``floor`` are rounding noise around an exact fit
    num, den = (0.0 if num <= floor else num), (0.0 if den <= floor else den)
    if den == 0:
        return 1.0 if num == 0 else INF
    return num / den


def relative_cost(data: CoupledData, f_fast: FactorSet, f_base: FactorSet,
                  mask: Optional[WeightMask] = None) -> float:
    """Model error of ``f_fast`` divided by that of ``f_base`` (``inf`` if only the base is exact)."""
    floor = ROUNDOFF_FLOOR * data.energy()
    if mask is None:
        return _ratio(objective(data, f_fast), objective(data, f_base), floor)
    return _ratio(weighted_objective(data, mask, f_fast), weighted_objective(data, mask, f_base),
                  floor)


def relative_sparsity(f_base: FactorSet, f_fast: FactorSet) -> float:
    """Nonzero count of all base factors over that of the fast factors."""
    if f_base.present() != f_fast.present():
        raise ValueError("factor sets hold different factors")
    for n in f_base.present():
        if getattr(f_base, n).shape != getattr(f_fast, n).shape:
            raise ValueError(f"factor {n} shapes differ")
    fast = f_fast.nnz(NNZ_TOL)
    if fast == 0:
        return INF
    return f_base.nnz(NNZ_TOL) / fast


def snr(x_m: Tensor3, x_0: Tensor3) -> float:
    """``||x_m||^2 / ||x_m - x_0||^2``; ``inf`` when the two agree to rounding."""
    if x_m.dims != x_0.dims:
        raise ValueError("reconstructions differ in shape")
    diff = x_m.to_dense() - x_0.to_dense()
    den = float(np.sum(diff * diff))
    if den < 1e-300:
        return INF
    return frobenius_norm_sq(x_m) / den


def prediction_factors(f: FactorSet, scaled: bool = True):
    """``(B, D)`` used for prediction, optionally with their lambdas absorbed."""
    if f.d is None:
        raise ValueError("prediction needs the side factor d")
    if scaled:
        return f.scaled("b"), f.scaled("d")
    return f.b, f.d


def predict_from_side(f: FactorSet, q, scaled: bool = True) -> np.ndarray:
    """Project ``q`` into the latent space with ``D^T`` and expand with ``B``."""
    b, d = prediction_factors(f, scaled)
    q = np.asarray(q, dtype=float)
    if q.shape[0] != d.shape[0]:
        raise ValueError(f"q has length {q.shape[0]}, expected {d.shape[0]}")
    return b @ (d.T @ q)


def _center(v):
    v = np.asarray(v, dtype=float)
    return v - v.mean()


def pair_correct(v1, v2, v1_hat, v2_hat) -> bool:
    """Whether matched pairs are closer than swapped pairs (ties count as wrong).

    All four vectors are mean-centered first.
    """
    v1, v2, p1, p2 = (_center(v) for v in (v1, v2, v1_hat, v2_hat))
    matched = np.linalg.norm(v1 - p1) + np.linalg.norm(v2 - p2)
    swapped = np.linalg.norm(v1 - p2) + np.linalg.norm(v2 - p1)
    return bool(matched < swapped)


def drop_rows(data: CoupledData, rows: Sequence[int]) -> CoupledData:
    keep = np.setdiff1d(np.arange(data.x.dims[0]), rows)
    x = data.x.subtensor(keep, np.arange(data.x.dims[1]), np.arange(data.x.dims[2]))
    y1 = None if data.y1 is None else data.y1[keep]
    return CoupledData(x, y1, data.y2, data.y3)


def leave_two_out(data: CoupledData, pair, opts, trials: int = 1, scaled: bool = True,
                  parallel: int = 1) -> float:
    """Accuracy of telling two held-out mode-1 slices apart from their side rows.

    Both rows are removed from the tensor and ``y1``; the rest is fitted with
    :func:`turbocmtf.driver.turbo_cmtf` once per trial (sampling seed offset
    by the trial number). For every mode-3 slice the held-out mode-2 vectors
    are predicted from their ``y1`` rows and scored with :func:`pair_correct`.
    Returns the fraction of correct decisions over slices and trials.
    """
    i1, i2 = (int(i) for i in pair)
    n = data.x.dims[0]
    if i1 == i2 or not (0 <= i1 < n and 0 <= i2 < n):
        raise ValueError(f"pair must be two distinct rows in [0, {n})")
    if data.y1 is None:
        raise ValueError("leave_two_out needs the mode-1 side matrix y1")
    if opts.solver.rank > n - 2:
        raise ValueError("rank exceeds the number of remaining rows")
    train = drop_rows(data, (i1, i2))
    x = data.x.to_dense()
    q1, q2 = data.y1[i1], data.y1[i2]
    outcomes = []
    for t in range(trials):
        topts = replace(opts, sampling=replace(opts.sampling, seed=opts.sampling.seed + t),
                        parallel=parallel)
        f, _ = turbo_cmtf(train, None, topts)
        p1 = predict_from_side(f, q1, scaled)
        p2 = predict_from_side(f, q2, scaled)
        for k in range(data.x.dims[2]):
            outcomes.append(pair_correct(x[i1, :, k], x[i2, :, k], p1, p2))
    return float(np.mean(outcomes))
