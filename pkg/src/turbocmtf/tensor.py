"""Three-mode tensors, coupled data containers and the multilinear kernels.

Unfolding convention (0-based, C order):

* mode 0: ``I x (J*K)``, element ``(i, j, k)`` at column ``j*K + k``
* mode 1: ``J x (K*I)``, element ``(i, j, k)`` at column ``k*I + i``
* mode 2: ``K x (I*J)``, element ``(i, j, k)`` at column ``i*J + j``

With :func:`khatri_rao` ordering rows as ``i*b.rows + r`` this gives
``X(0) = A (B kr C)^T``, ``X(1) = B (C kr A)^T`` and ``X(2) = C (A kr B)^T``.

Public functions take ``mode`` in ``{1, 2, 3}`` to match the usual
mathematical notation; everything else is 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

SPARSE_DENSITY_THRESHOLD = 0.25

# axis permutation bringing ``mode`` first, followed by the cyclic remainder
_PERM = {0: (0, 1, 2), 1: (1, 2, 0), 2: (2, 0, 1)}


def _check_mode(mode: int) -> int:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite 2-D float array (read-only view)."""
    arr = np.array(m, dtype=float, ndmin=2, copy=True)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    arr.setflags(write=False)
    return arr


class Tensor3:
    """Immutable three-mode array with dense or coordinate storage.

    Use :meth:`from_dense`, :meth:`from_coords` or :meth:`auto` to build one.
    Coordinates are kept sorted lexicographically with no duplicates.
    """

    __slots__ = ("dims", "_dense", "_coords", "_vals")

    def __init__(self, dims, dense=None, coords=None, vals=None):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be three positive integers, got {dims}")
        self.dims = dims
        self._dense = None
        self._coords = None
        self._vals = None
        if dense is not None:
            arr = np.array(dense, dtype=float, copy=True)
            if arr.shape != dims:
                raise ValueError(f"dense shape {arr.shape} does not match dims {dims}")
            if not np.all(np.isfinite(arr)):
                raise ValueError("tensor contains NaN or Inf")
            arr.setflags(write=False)
            self._dense = arr
        else:
            coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
            vals = np.asarray(vals, dtype=float).reshape(-1)
            if coords.shape[0] != vals.shape[0]:
                raise ValueError("coords and vals differ in length")
            if not np.all(np.isfinite(vals)):
                raise ValueError("tensor contains NaN or Inf")
            if coords.size and (coords.min() < 0 or np.any(coords.max(axis=0) >= dims)):
                raise ValueError("coordinate outside tensor dims")
            order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
            coords, vals = coords[order], vals[order]
            if coords.shape[0] > 1:
                same = np.all(coords[1:] == coords[:-1], axis=1)
                if np.any(same):
                    dup = coords[1:][np.argmax(same)]
                    raise ValueError(f"duplicate coordinate {tuple(int(c) for c in dup)}")
            coords.setflags(write=False)
            vals.setflags(write=False)
            self._coords = coords
            self._vals = vals

    @classmethod
    def from_dense(cls, arr) -> "Tensor3":
        arr = np.asarray(arr, dtype=float)
        return cls(arr.shape, dense=arr)

    @classmethod
    def from_coords(cls, dims, coords, vals) -> "Tensor3":
        return cls(dims, coords=coords, vals=vals)

    @classmethod
    def auto(cls, arr) -> "Tensor3":
        """Dense array in, storage chosen by density (sparse below 25%)."""
        arr = np.asarray(arr, dtype=float)
        nz = np.count_nonzero(arr)
        if nz < SPARSE_DENSITY_THRESHOLD * arr.size:
            coords = np.argwhere(arr)
            return cls(arr.shape, coords=coords, vals=arr[tuple(coords.T)])
        return cls(arr.shape, dense=arr)

    @property
    def is_sparse(self) -> bool:
        return self._dense is None

    @property
    def coords(self) -> np.ndarray:
        if self.is_sparse:
            return self._coords
        return np.argwhere(self._dense)

    @property
    def vals(self) -> np.ndarray:
        if self.is_sparse:
            return self._vals
        return self._dense[tuple(self.coords.T)]

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return int(self._vals.shape[0])
        return int(np.count_nonzero(self._dense))

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def to_dense(self) -> np.ndarray:
        if not self.is_sparse:
            return self._dense
        out = np.zeros(self.dims)
        out[tuple(self._coords.T)] = self._vals
        return out

    def to_sparse(self) -> "Tensor3":
        if self.is_sparse:
            return self
        c = np.argwhere(self._dense)
        return Tensor3(self.dims, coords=c, vals=self._dense[tuple(c.T)])

    def abs_marginals(self):
        """Sums of absolute values over all but one mode, one vector per mode."""
        if self.is_sparse:
            a = np.abs(self._vals)
            return tuple(np.bincount(self._coords[:, m], weights=a, minlength=self.dims[m])
                         for m in range(3))
        a = np.abs(self._dense)
        return a.sum(axis=(1, 2)), a.sum(axis=(0, 2)), a.sum(axis=(0, 1))

    def subtensor(self, ii, jj, kk) -> "Tensor3":
        """Restrict to the index sets (each sorted, 0-based). Storage type is kept."""
        ii, jj, kk = (np.asarray(s, dtype=np.int64) for s in (ii, jj, kk))
        for s, d in zip((ii, jj, kk), self.dims):
            if s.size and (s.min() < 0 or s.max() >= d):
                raise IndexError("sample index outside tensor dims")
        dims = (ii.size, jj.size, kk.size)
        if not self.is_sparse:
            return Tensor3(dims, dense=self._dense[np.ix_(ii, jj, kk)])
        maps = []
        for s, d in zip((ii, jj, kk), self.dims):
            m = np.full(d, -1, dtype=np.int64)
            m[s] = np.arange(s.size)
            maps.append(m)
        new = np.column_stack([maps[m][self._coords[:, m]] for m in range(3)])
        keep = np.all(new >= 0, axis=1)
        return Tensor3(dims, coords=new[keep], vals=self._vals[keep])

    def with_values(self, vals) -> "Tensor3":
        """Same sparsity pattern (or dense shape) with new values."""
        if self.is_sparse:
            return Tensor3(self.dims, coords=self._coords, vals=vals)
        return Tensor3(self.dims, dense=vals)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor3) or other.dims != self.dims:
            return NotImplemented if not isinstance(other, Tensor3) else False
        return bool(np.array_equal(self.to_dense(), other.to_dense()))

    __hash__ = None

    def __repr__(self) -> str:
        kind = "sparse" if self.is_sparse else "dense"
        return f"Tensor3({self.dims[0]}x{self.dims[1]}x{self.dims[2]}, {kind}, nnz={self.nnz})"


Matrix = np.ndarray
MatrixLike = Union[np.ndarray, sp.spmatrix]


@dataclass(frozen=True)
class CoupledData:
    """A tensor plus up to three side matrices sharing its modes.

    ``y1`` is coupled on mode 1 (rows = I), ``y2`` on mode 2, ``y3`` on mode 3.
    ``index_maps`` is filled in by sampling so partial factors can be put back
    into the full index space.
    """

    x: Tensor3
    y1: Optional[np.ndarray] = None
    y2: Optional[np.ndarray] = None
    y3: Optional[np.ndarray] = None
    index_maps: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        for n, m in enumerate(("y1", "y2", "y3")):
            y = getattr(self, m)
            if y is None:
                continue
            y = as_matrix(y, m)
            object.__setattr__(self, m, y)
            if y.shape[0] != self.x.dims[n]:
                raise ValueError(
                    f"{m} has {y.shape[0]} rows but tensor mode {n + 1} has size {self.x.dims[n]}")

    @property
    def sides(self):
        return (self.y1, self.y2, self.y3)

    @property
    def has_sides(self) -> bool:
        return any(y is not None for y in self.sides)

    def energy(self) -> float:
        """Total squared Frobenius norm of all data blocks."""
        return frobenius_norm_sq(self.x) + sum(
            frobenius_norm_sq(y) for y in self.sides if y is not None)


def unfold(x: Tensor3, mode: int) -> MatrixLike:
    """Matricize ``x`` along ``mode`` (1, 2 or 3).

    Dense tensors give an ndarray; sparse ones give a CSR matrix so the
    downstream products never densify the data.
    """
    m = _check_mode(mode)
    perm = _PERM[m]
    rows = x.dims[m]
    cols = x.size // rows
    if not x.is_sparse:
        return np.ascontiguousarray(x.to_dense().transpose(perm)).reshape(rows, cols)
    c = x.coords
    a, b = perm[1], perm[2]
    col = c[:, a] * x.dims[b] + c[:, b]
    return sp.csr_matrix((x.vals, (c[:, m], col)), shape=(rows, cols))


def refold(mat, mode: int, dims) -> Tensor3:
    """Inverse of :func:`unfold`. Returns a dense tensor for dense input."""
    m = _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    perm = _PERM[m]
    shape = (dims[perm[0]], dims[perm[1]] * dims[perm[2]])
    if mat.shape != shape:
        raise ValueError(f"matrix shape {mat.shape} inconsistent with mode {mode} of {dims}")
    inv = np.argsort(perm)
    if sp.issparse(mat):
        coo = mat.tocoo()
        p1 = coo.col // dims[perm[2]]
        p2 = coo.col % dims[perm[2]]
        stacked = np.column_stack([coo.row, p1, p2])
        return Tensor3(dims, coords=stacked[:, inv], vals=coo.data)
    arr = np.asarray(mat, dtype=float).reshape(dims[perm[0]], dims[perm[1]], dims[perm[2]])
    return Tensor3(dims, dense=arr.transpose(inv))


def khatri_rao(a, b) -> np.ndarray:
    """Column-wise Kronecker product; row ``i*b.rows + r`` holds ``a[i]*b[r]``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"khatri_rao needs equal column counts, got {a.shape} and {b.shape}")
    # einsum writes straight into the result; broadcasting would buffer a copy
    return np.einsum("if,jf->ijf", a, b).reshape(-1, a.shape[1])


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"hadamard needs identical shapes, got {a.shape} and {b.shape}")
    return a * b


def frobenius_norm_sq(x) -> float:
    """Sum of squared entries; for sparse storage only stored entries count."""
    if isinstance(x, Tensor3):
        v = x.vals if x.is_sparse else x.to_dense()
        return float(np.sum(v * v))
    if sp.issparse(x):
        return float(np.sum(x.data * x.data))
    x = np.asarray(x, dtype=float)
    return float(np.sum(x * x))


def cp_values(a, b, c, weights, coords) -> np.ndarray:
    """Evaluate ``sum_f w_f a[i,f] b[j,f] c[k,f]`` at the given coordinates only."""
    i, j, k = coords[:, 0], coords[:, 1], coords[:, 2]
    return np.einsum("nf,nf,nf,f->n", a[i], b[j], c[k], weights)
