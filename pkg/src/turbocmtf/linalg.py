"""Pseudoinverse and least-squares kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .tensor import khatri_rao


@dataclass(frozen=True)
class PinvOptions:
    """Singular values below ``rank_tolerance * sigma_max`` are treated as zero."""

    rank_tolerance: float = 1e-10

    def __post_init__(self):
        if not self.rank_tolerance > 0:
            raise ValueError("rank_tolerance must be positive")


DEFAULT_PINV = PinvOptions()


def pinv(m, opts: PinvOptions = DEFAULT_PINV) -> np.ndarray:
    """Moore-Penrose pseudoinverse through a thresholded SVD.

    Raises ``numpy.linalg.LinAlgError`` if the SVD does not converge.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError("pinv expects a 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise np.linalg.LinAlgError("pinv input contains NaN or Inf")
    if m.size == 0:
        return np.zeros((m.shape[1], m.shape[0]))
    return _pinv_svd(m, opts.rank_tolerance)


def _pinv_svd(m: np.ndarray, rank_tolerance: float) -> np.ndarray:
    # unchecked core of pinv; a non-finite m makes the SVD raise LinAlgError
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    keep = s > rank_tolerance * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def _matmul_t(left, rhs) -> np.ndarray:
    # left^T @ rhs where rhs may be scipy sparse
    if sp.issparse(rhs):
        return np.asarray((rhs.T @ left).T)
    return left.T @ rhs


def stacked_kr_pinv_apply(a, b, m, rhs, opts: PinvOptions = DEFAULT_PINV) -> np.ndarray:
    """Apply the pseudoinverse of ``[khatri_rao(a, b); m]`` to ``rhs``.

    Only the ``F x F`` Gram matrix ``a'a * b'b + m'm`` is pseudoinverted; the
    tall stacked matrix is never formed. ``rhs`` may be a pair
    ``(top, bottom)`` of blocks (either may be scipy sparse) instead of one
    stacked matrix, which avoids concatenating a large unfolded tensor.

    When the stacked matrix is column-rank deficient the result follows the
    Gram formula, which may differ from the strict Moore-Penrose solution.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    F = a.shape[1]
    if b.shape[1] != F:
        raise ValueError(f"a and b must share a column count, got {a.shape} and {b.shape}")
    m = np.zeros((0, F)) if m is None or np.size(m) == 0 else np.asarray(m, dtype=float)
    if m.shape[1] != F:
        raise ValueError(f"m must have {F} columns, got {m.shape}")
    n_kr = a.shape[0] * b.shape[0]
    if isinstance(rhs, tuple):
        top, bottom = rhs
        if bottom is None:
            bottom = np.zeros((0, top.shape[1]))
    else:
        if rhs.shape[0] != n_kr + m.shape[0]:
            raise ValueError(
                f"rhs has {rhs.shape[0]} rows, expected {n_kr} + {m.shape[0]}")
        top, bottom = rhs[:n_kr], rhs[n_kr:]
    if top.shape[0] != n_kr or bottom.shape[0] != m.shape[0]:
        raise ValueError("rhs blocks do not match the stacked matrix")
    if top.ndim == 1:
        top = top.reshape(-1, 1)
        bottom = np.asarray(bottom).reshape(-1, 1)

    gram = (a.T @ a) * (b.T @ b) + m.T @ m
    proj = _matmul_t(khatri_rao(a, b), top)
    if m.shape[0]:
        proj += _matmul_t(m, bottom)
    return pinv(gram, opts) @ proj


def kr_solve(a: np.ndarray, b: np.ndarray, top_t, rank_tolerance: float) -> np.ndarray:
    """Unchecked ``stacked_kr_pinv_apply(a, b, None, (top_t.T, None))``, transposed.

    ``top_t`` is the dense or sparse unfolding, one row per output row. Used in
    inner ALS loops where the shapes are fixed and already validated.
    """
    gram = (a.T @ a) * (b.T @ b)
    return (top_t @ khatri_rao(a, b)) @ _pinv_svd(gram, rank_tolerance).T


def ls_solve(a, rhs, opts: PinvOptions = DEFAULT_PINV) -> np.ndarray:
    """Minimum-norm least-squares solution ``pinv(a) @ rhs``."""
    a = np.asarray(a, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if a.shape[0] != rhs.shape[0]:
        raise ValueError(f"row mismatch: a is {a.shape}, rhs is {rhs.shape}")
    return pinv(a, opts) @ rhs
