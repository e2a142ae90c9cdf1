"""The factor model and its reconstruction."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .tensor import Tensor3, as_matrix

FACTOR_NAMES = ("a", "b", "c", "d", "e", "g")
# side matrix -> (tensor-mode factor, side factor)
SIDE_PAIRS = {"y1": ("a", "d"), "y2": ("b", "e"), "y3": ("c", "g")}


@dataclass(frozen=True)
class FactorSet:
    """Factor matrices of a coupled model plus per-column scales.

    ``d``, ``e``, ``g`` pair with the side matrices ``y1``, ``y2``, ``y3``.
    Missing scale vectors default to ones.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: Optional[np.ndarray] = None
    e: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    lambdas: dict = field(default_factory=dict)

    def __post_init__(self):
        F = np.asarray(self.a).shape[1] if np.ndim(self.a) == 2 else None
        if F is None:
            raise ValueError("factor a must be 2-D")
        lam = {}
        for n in FACTOR_NAMES:
            m = getattr(self, n)
            if m is None:
                if n in self.lambdas:
                    raise ValueError(f"lambda given for absent factor {n}")
                continue
            m = as_matrix(m, n)
            if m.shape[1] != F:
                raise ValueError(f"factor {n} has {m.shape[1]} columns, expected {F}")
            object.__setattr__(self, n, m)
            v = np.asarray(self.lambdas.get(n, np.ones(F)), dtype=float).copy()
            if v.shape != (F,):
                raise ValueError(f"lambda_{n} must have length {F}")
            if not np.all(v > 0):
                raise ValueError(f"lambda_{n} must be strictly positive")
            v.setflags(write=False)
            lam[n] = v
        object.__setattr__(self, "lambdas", lam)

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    def present(self):
        return [n for n in FACTOR_NAMES if getattr(self, n) is not None]

    def factor(self, name: str) -> np.ndarray:
        m = getattr(self, name)
        if m is None:
            raise ValueError(f"factor {name} is not present")
        return m

    def lam(self, name: str) -> np.ndarray:
        if name not in self.lambdas:
            raise ValueError(f"factor {name} is not present")
        return self.lambdas[name]

    def scaled(self, name: str) -> np.ndarray:
        """Factor with its lambda scale absorbed into the columns."""
        return self.factor(name) * self.lam(name)

    def nnz(self, tol: float = 1e-12) -> int:
        return sum(int(np.count_nonzero(np.abs(getattr(self, n)) >= tol)) for n in self.present())

    def replace(self, **kw) -> "FactorSet":
        return replace(self, **kw)


def reconstruct(f: FactorSet, which: str = "tensor"):
    """Model estimate of the tensor (dense :class:`Tensor3`) or of a side matrix.

    ``which`` is one of ``"tensor"``, ``"y1"``, ``"y2"``, ``"y3"``.
    """
    if which == "tensor":
        w = f.lam("a") * f.lam("b") * f.lam("c")
        return Tensor3.from_dense(np.einsum("if,jf,kf,f->ijk", f.a, f.b, f.c, w))
    if which not in SIDE_PAIRS:
        raise ValueError(f"unknown block {which!r}")
    t, s = SIDE_PAIRS[which]
    return (f.factor(t) * (f.lam(t) * f.lam(s))) @ f.factor(s).T
