"""Weighted (missing-value tolerant) coupled factorization.

Missing entries are carried as binary weight masks and excluded from every
least-squares block; they are never replaced by sentinel values, since an
observed zero is data.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .als import ROUNDOFF_FLOOR, NumericalError, SolverOptions, _converged
from .factors import SIDE_PAIRS, FactorSet, reconstruct
from .tensor import CoupledData, Tensor3, as_matrix, khatri_rao, unfold

log = logging.getLogger(__name__)

DEFAULT_MAX_SWEEPS = 10


def _binary(arr, name):
    arr = np.asarray(arr, dtype=float)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr


@dataclass(frozen=True)
class WeightMask:
    """1 marks an observed entry, 0 a missing one."""

    w: Tensor3
    w1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    w3: Optional[np.ndarray] = None

    def __post_init__(self):
        dense = _binary(self.w.to_dense(), "w")
        if self.w.is_sparse:
            object.__setattr__(self, "w", Tensor3.from_dense(dense))
        for n in ("w1", "w2", "w3"):
            m = getattr(self, n)
            if m is not None:
                object.__setattr__(self, n, as_matrix(_binary(m, n), n))

    @classmethod
    def full(cls, data: CoupledData) -> "WeightMask":
        return cls(Tensor3.from_dense(np.ones(data.x.dims)),
                   *[None if y is None else np.ones(y.shape) for y in data.sides])

    @property
    def sides(self):
        return (self.w1, self.w2, self.w3)

    def check(self, data: CoupledData) -> None:
        if self.w.dims != data.x.dims:
            raise ValueError(f"mask dims {self.w.dims} do not match tensor {data.x.dims}")
        for n, y, m in zip(("w1", "w2", "w3"), data.sides, self.sides):
            if y is not None and m is not None and m.shape != y.shape:
                raise ValueError(f"{n} shape {m.shape} does not match side matrix {y.shape}")
            if y is None and m is not None:
                raise ValueError(f"{n} given without its side matrix")

    def side(self, n: int, y) -> Optional[np.ndarray]:
        m = self.sides[n]
        if m is None and y is not None:
            return np.ones(y.shape)
        return m


def masked_data(data: CoupledData, mask: WeightMask) -> CoupledData:
    """Copy of ``data`` with every masked entry set to zero."""
    mask.check(data)
    w = mask.w.to_dense()
    x = data.x
    if x.is_sparse:
        keep = w[tuple(x.coords.T)] != 0
        xm = Tensor3.from_coords(x.dims, x.coords[keep], x.vals[keep])
    else:
        xm = Tensor3.from_dense(np.where(w != 0, x.to_dense(), 0.0))
    ys = [None if y is None else np.where(mask.side(n, y) != 0, y, 0.0)
          for n, y in enumerate(data.sides)]
    return CoupledData(xm, *ys, index_maps=data.index_maps)


def weighted_objective(data: CoupledData, mask: WeightMask, f: FactorSet) -> float:
    """Squared model error summed over observed entries only."""
    mask.check(data)
    w = mask.w.to_dense()
    r = w * (data.x.to_dense() - reconstruct(f, "tensor").to_dense())
    total = float(np.sum(r * r))
    for n, (name, y) in enumerate(zip(("y1", "y2", "y3"), data.sides)):
        if y is None:
            continue
        if getattr(f, SIDE_PAIRS[name][1]) is None:
            raise ValueError(f"factor {SIDE_PAIRS[name][1]} is required for {name}")
        r = mask.side(n, y) * (y - reconstruct(f, name))
        total += float(np.sum(r * r))
    return total


def scalar_wls(x, a, w) -> float:
    """Best scalar ``b`` for ``w*x ~ (w*a) b``; zero when nothing is observed."""
    x, a, w = (np.asarray(v, dtype=float) for v in (x, a, w))
    if not (x.shape == a.shape == w.shape):
        raise ValueError("x, a and w must have the same length")
    xa = w * x
    aa = w * a
    denom = float(aa @ aa)
    if denom < 1e-300:
        return 0.0
    return float(xa @ aa) / denom


def wls_factor(x, w, a, b_init, tol: float = 1e-9,
               max_sweeps: int = DEFAULT_MAX_SWEEPS, on_update=None) -> np.ndarray:
    """Minimize ``||w * (x - a @ b.T)||_F`` over ``b`` by coordinate descent.

    Each coordinate ``b[j, f]`` is set to its exact scalar least-squares
    value over the observed entries of column ``j``. Sweeps run over ``f``
    then ``j``; since the ``b[:, f]`` subproblems of one column index are
    independent, each ``f`` step is done for all ``j`` at once. Stops when a
    sweep changes the objective by less than ``tol`` (relative) or after
    ``max_sweeps``. ``on_update(objective)`` is called after every column
    update if given.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.array(b_init, dtype=float)
    if x.shape != w.shape or a.shape[0] != x.shape[0] or b.shape != (x.shape[1], a.shape[1]):
        raise ValueError(f"shape mismatch: x {x.shape}, w {w.shape}, a {a.shape}, b {b.shape}")
    resid = w * (x - a @ b.T)
    obj = float(np.sum(resid * resid))
    a_sq = a * a
    for _ in range(max_sweeps):
        prev = obj
        for f in range(a.shape[1]):
            col = a[:, f]
            resid += w * np.outer(col, b[:, f])
            num = col @ resid
            den = a_sq[:, f] @ w
            new = np.zeros_like(num)
            ok = den >= 1e-300
            new[ok] = num[ok] / den[ok]
            b[:, f] = new
            resid -= w * np.outer(col, new)
            if on_update is not None:
                on_update(float(np.sum(resid * resid)))
        obj = float(np.sum(resid * resid))
        if prev == 0.0 or (prev - obj) <= tol * prev:
            break
    return b


def _block(x_unf, y, w_unf, wy):
    """Stack an unfolded tensor with its coupled matrix (transposed for wls_factor)."""
    if y is None:
        return x_unf.T, w_unf.T
    return np.vstack([x_unf.T, y.T]), np.vstack([w_unf.T, wy.T])


def cmtf_wals(data: CoupledData, mask: Optional[WeightMask], opts: SolverOptions,
              max_sweeps: int = DEFAULT_MAX_SWEEPS):
    """Coupled ALS where every block is a weighted least-squares problem.

    The block order and initialization mirror :func:`cmtf_als`: a weighted
    PARAFAC fit of the tensor from a seeded uniform start, side factors from
    their weighted least-squares problems, then sweeps over ``A, B, C`` (each
    stacked with its coupled matrix) and the side factors. Returns
    ``(FactorSet, trace)`` with the weighted objective per outer iteration.
    """
    if mask is None:
        mask = WeightMask.full(data)
    data = masked_data(data, mask)
    I, J, K = data.x.dims
    F = opts.rank
    X = data.x.to_dense()
    W = mask.w.to_dense()
    xs = [unfold(Tensor3.from_dense(X), m) for m in (1, 2, 3)]
    ws = [unfold(Tensor3.from_dense(W), m) for m in (1, 2, 3)]
    ys = data.sides
    wys = [mask.side(n, y) for n, y in enumerate(ys)]
    inner_tol = opts.rel_change_tol * 1e-3

    rng = np.random.default_rng(opts.seed)
    b = rng.random((J, F))
    c = rng.random((K, F))
    a = np.zeros((I, F))

    def tensor_sweep(a, b, c, coupled):
        side = coupled if coupled is not None else (None, None, None)
        order = [(0, lambda a, b, c: khatri_rao(b, c)), (1, lambda a, b, c: khatri_rao(c, a)),
                 (2, lambda a, b, c: khatri_rao(a, b))]
        fs = [a, b, c]
        for m, kr in order:
            design = kr(*fs)
            y = ys[m] if coupled is not None else None
            if y is not None:
                design = np.vstack([design, side[m]])
            xb, wb = _block(xs[m], y, ws[m], wys[m])
            fs[m] = wls_factor(xb, wb, design, fs[m], inner_tol, max_sweeps)
        return fs

    def side_update(fs, side):
        out = []
        for m, y in enumerate(ys):
            if y is None:
                out.append(None)
                continue
            init = side[m] if side is not None else np.zeros((y.shape[1], F))
            out.append(wls_factor(y, wys[m], fs[m], init, inner_tol, max_sweeps))
        return out

    def model(fs, side):
        return FactorSet(*fs, *side)

    # weighted PARAFAC initialization
    floor = ROUNDOFF_FLOOR * (float(np.sum(X * X)) + sum(
        float(np.sum(y * y)) for y in ys if y is not None))
    fs = [a, b, c]
    ptrace = []
    tensor_only, tensor_mask = CoupledData(data.x), WeightMask(mask.w)
    for it in range(opts.max_iters):
        fs = tensor_sweep(*fs, None)
        obj = weighted_objective(tensor_only, tensor_mask, FactorSet(*fs))
        if not np.isfinite(obj):
            raise NumericalError(f"non-finite objective at weighted PARAFAC iteration {it + 1}")
        ptrace.append(obj)
        if obj <= floor or len(ptrace) > 1 and _converged(ptrace[-2], obj, opts.rel_change_tol):
            break
    side = side_update(fs, None)
    if not data.has_sides:
        return model(fs, side), ptrace
    trace = [weighted_objective(data, mask, model(fs, side))]

    converged = trace[0] <= floor
    it = 0
    while not converged and it < opts.max_iters:
        it += 1
        fs = tensor_sweep(*fs, side)
        side = side_update(fs, side)
        obj = weighted_objective(data, mask, model(fs, side))
        if not np.isfinite(obj):
            raise NumericalError(f"non-finite weighted objective at iteration {it}")
        converged = _converged(trace[-1], obj, opts.rel_change_tol, floor)
        trace.append(obj)
    log.debug("cmtf_wals finished after %d coupled sweeps, objective %.6g", it, trace[-1])
    return model(fs, side), trace
