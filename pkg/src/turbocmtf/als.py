"""Alternating least squares for PARAFAC and for coupled matrix-tensor models."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .factors import SIDE_PAIRS, FactorSet, reconstruct
from .linalg import DEFAULT_PINV, PinvOptions, kr_solve, pinv, stacked_kr_pinv_apply
from .tensor import CoupledData, Tensor3, cp_values, frobenius_norm_sq, khatri_rao, unfold

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Raised when a solver produces a non-finite objective."""


@dataclass(frozen=True)
class SolverOptions:
    rank: int
    max_iters: int = 500
    rel_change_tol: float = 1e-6
    seed: int = 0
    pinv: PinvOptions = field(default_factory=PinvOptions)

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_change_tol > 0:
            raise ValueError("rel_change_tol must be positive")


def _cp_error(x: Tensor3, x3, a, b, c, w) -> float:
    # x3 is the mode-3 unfolding of x (dense array or sparse matrix)
    if not x.is_sparse:
        r = x3 - (c * w) @ khatri_rao(a, b).T
        return float(np.sum(r * r))
    # stored entries exactly, the rest through the Gram identity
    model = cp_values(a, b, c, w, x.coords)
    diff = x.vals - model
    gram = np.outer(w, w) * (a.T @ a) * (b.T @ b) * (c.T @ c)
    off_support = float(gram.sum()) - float(np.sum(model * model))
    return float(np.sum(diff * diff)) + max(off_support, 0.0)


def tensor_error(x: Tensor3, f: FactorSet) -> float:
    """Squared Frobenius error of the tensor term of the model."""
    w = f.lam("a") * f.lam("b") * f.lam("c")
    return _cp_error(x, None if x.is_sparse else unfold(x, 3), f.a, f.b, f.c, w)


def objective(data: CoupledData, f: FactorSet) -> float:
    """Coupled least-squares objective with lambda scaling applied.

    Absent side matrices contribute nothing.
    """
    if data.x.dims != (f.a.shape[0], f.b.shape[0], f.c.shape[0]):
        raise ValueError("factor shapes do not match the tensor")
    total = tensor_error(data.x, f)
    for name, y in zip(("y1", "y2", "y3"), data.sides):
        if y is None:
            continue
        t, s = SIDE_PAIRS[name]
        if getattr(f, s) is None:
            raise ValueError(f"factor {s} is required for {name}")
        if getattr(f, s).shape[0] != y.shape[1]:
            raise ValueError(f"factor {s} does not match {name}")
        r = y - reconstruct(f, name)
        total += float(np.sum(r * r))
    return total


# objectives below this fraction of the data energy are rounding noise
ROUNDOFF_FLOOR = 1e-24


def _converged(prev: float, cur: float, tol: float, floor: float = 0.0) -> bool:
    if cur <= floor or prev <= floor:
        return True
    return abs(prev - cur) / prev < tol


def _check_finite(value: float, where: str) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite objective ({value}) at {where}")


def _unfoldings(x: Tensor3):
    return unfold(x, 1), unfold(x, 2), unfold(x, 3)


def _parafac(x: Tensor3, opts: SolverOptions):
    I, J, K = x.dims
    rng = np.random.default_rng(opts.seed)
    b = rng.random((J, opts.rank))
    c = rng.random((K, opts.rank))
    x1, x2, x3 = _unfoldings(x)
    floor = ROUNDOFF_FLOOR * frobenius_norm_sq(x)
    ones = np.ones(opts.rank)
    trace = []
    converged = False
    tol = opts.pinv.rank_tolerance
    for it in range(opts.max_iters):
        a = kr_solve(b, c, x1, tol)
        b = kr_solve(c, a, x2, tol)
        c = kr_solve(a, b, x3, tol)
        obj = _cp_error(x, x3, a, b, c, ones)
        _check_finite(obj, f"PARAFAC iteration {it + 1}")
        trace.append(obj)
        if obj <= floor or len(trace) > 1 and _converged(trace[-2], obj, opts.rel_change_tol):
            converged = True
            break
    return a, b, c, trace, converged


def parafac_als(x: Tensor3, opts: SolverOptions):
    """Plain CP/PARAFAC fit by ALS.

    ``B`` and ``C`` start from a seeded uniform ``[0, 1)`` draw and ``A`` is
    solved first. Returns ``(FactorSet, trace)`` where ``trace`` holds the
    squared error after every sweep.
    """
    a, b, c, trace, _ = _parafac(x, opts)
    return FactorSet(a, b, c), trace


def init_coupled_factor(y, a, opts: PinvOptions = DEFAULT_PINV) -> np.ndarray:
    """Least-squares side factor ``d`` for ``y ~ a @ d.T``, i.e. ``(pinv(a) @ y).T``.

    ``y`` has the coupled mode on its rows, so the result has one row per
    column of ``y``.
    """
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    if y.shape[0] != a.shape[0]:
        raise ValueError(f"y has {y.shape[0]} rows, a has {a.shape[0]}")
    return (pinv(a, opts) @ y).T


def cmtf_als(data: CoupledData, opts: SolverOptions):
    """Coupled matrix-tensor factorization by alternating least squares.

    ``A, B, C`` are initialized by :func:`parafac_als` on the tensor and the
    side factors by :func:`init_coupled_factor`. Each sweep then updates
    ``A``, ``B``, ``C`` from the unfolded tensor side by side with its coupled
    matrix, followed by the side factors. Iteration stops once the relative
    objective change drops below ``opts.rel_change_tol``.

    Without side matrices the PARAFAC initialization already solves the
    problem, so its trajectory is returned unchanged (continued only if it
    ran out of iterations before converging).

    Returns ``(FactorSet, trace)``; all lambdas are one.
    """
    x = data.x
    y1, y2, y3 = data.sides
    a, b, c, ptrace, converged = _parafac(x, opts)
    side = [None if y is None else init_coupled_factor(y, f, opts.pinv)
            for y, f in zip(data.sides, (a, b, c))]

    def model():
        return FactorSet(a, b, c, *side)

    floor = ROUNDOFF_FLOOR * data.energy()
    if data.has_sides:
        trace = [objective(data, model())]
        _check_finite(trace[0], "initialization")
        converged = trace[0] <= floor
    else:
        trace = list(ptrace)

    x1, x2, x3 = _unfoldings(x)
    it = 0
    while not converged and it < opts.max_iters:
        it += 1
        d, e, g = side
        a = stacked_kr_pinv_apply(b, c, d, (x1.T, None if y1 is None else y1.T), opts.pinv).T
        b = stacked_kr_pinv_apply(c, a, e, (x2.T, None if y2 is None else y2.T), opts.pinv).T
        c = stacked_kr_pinv_apply(a, b, g, (x3.T, None if y3 is None else y3.T), opts.pinv).T
        side = [None if y is None else init_coupled_factor(y, f, opts.pinv)
                for y, f in zip(data.sides, (a, b, c))]
        obj = objective(data, model())
        _check_finite(obj, f"iteration {it}")
        converged = _converged(trace[-1], obj, opts.rel_change_tol, floor)
        trace.append(obj)
    log.debug("cmtf_als finished after %d coupled sweeps, objective %.6g", it, trace[-1])
    return model(), trace


__all__ = [
    "NumericalError", "SolverOptions", "objective", "tensor_error", "parafac_als",
    "init_coupled_factor", "cmtf_als",
]
