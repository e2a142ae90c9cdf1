"""Density-biased index sampling of coupled data.

Each sampled mode draws a common block, shared by every repetition, and a
fresh block per repetition from the remaining indices. Modes are keyed
``a, b, c`` (tensor modes, shared with the row modes of the side matrices)
and ``d, e, g`` (column modes of ``y1``, ``y2``, ``y3``).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Union

import numpy as np

from .tensor import CoupledData

log = logging.getLogger(__name__)

TENSOR_MODES = ("a", "b", "c")
SIDE_MODES = ("d", "e", "g")
MODES = TENSOR_MODES + SIDE_MODES

_PHASE_COMMON = 0
_PHASE_FRESH = 1


@dataclass(frozen=True)
class DensityProfile:
    """Per-index sums of absolute values, one vector per sampled mode.

    Tensor modes include the absolute row sums of their coupled matrix;
    side modes (``d, e, g``) are the absolute column sums of ``y1..y3``.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: Optional[np.ndarray] = None
    e: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None

    def __getitem__(self, mode: str) -> Optional[np.ndarray]:
        return getattr(self, mode)

    def modes(self):
        return [m for m in MODES if self[m] is not None]


@dataclass(frozen=True)
class ModeSample:
    common: np.ndarray
    fresh: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return np.union1d(self.common, self.fresh)


@dataclass(frozen=True)
class SampleSpec:
    """Index sets of one repetition, mode name -> :class:`ModeSample`."""

    modes: Dict[str, ModeSample]

    def __getitem__(self, mode: str) -> ModeSample:
        return self.modes[mode]

    def indices(self, mode: str) -> np.ndarray:
        return self.modes[mode].indices

    @classmethod
    def full(cls, data: CoupledData) -> "SampleSpec":
        empty = np.zeros(0, dtype=np.int64)
        return cls({m: ModeSample(empty, np.arange(n)) for m, n in _mode_sizes(data).items()})


@dataclass(frozen=True)
class SamplingOptions:
    """Sampling factors per mode, common fraction ``p``, repetitions ``r``.

    ``s`` is either one factor for every mode or a mapping from mode name to
    factor (modes not listed use ``default_s``).
    """

    s: Union[float, Dict[str, float]] = 2.0
    p: float = 0.35
    r: int = 4
    seed: int = 0
    default_s: float = 1.0

    def __post_init__(self):
        factors = self.s.values() if isinstance(self.s, dict) else [self.s]
        if any(v < 1 for v in factors) or self.default_s < 1:
            raise ValueError("sampling factors must be >= 1")
        if not 0 <= self.p < 1:
            raise ValueError("p must be in [0, 1)")
        if self.r < 1:
            raise ValueError("r must be >= 1")

    def factor(self, mode: str) -> float:
        if isinstance(self.s, dict):
            return float(self.s.get(mode, self.default_s))
        return float(self.s)

    def sizes(self, mode: str, dim: int, rank: int):
        """(common size, fresh size) for a mode of length ``dim``."""
        target = min(dim, max(rank, int(round(dim / self.factor(mode)))))
        common = math.ceil(self.p * target) if self.p > 0 else 0
        return common, target - common


def _mode_sizes(data: CoupledData) -> Dict[str, int]:
    sizes = dict(zip(TENSOR_MODES, data.x.dims))
    for m, y in zip(SIDE_MODES, data.sides):
        if y is not None:
            sizes[m] = y.shape[1]
    return sizes


def density_profile(data: CoupledData) -> DensityProfile:
    marg = list(data.x.abs_marginals())
    side = []
    for n, y in enumerate(data.sides):
        if y is None:
            side.append(None)
            continue
        ay = np.abs(y)
        marg[n] = marg[n] + ay.sum(axis=1)
        side.append(ay.sum(axis=0))
    return DensityProfile(*marg, *side)


def stream(seed: int, phase: int, rep: int, mode: str) -> np.random.Generator:
    """Independent generator keyed by (seed, phase, repetition, mode)."""
    return np.random.default_rng(np.random.SeedSequence([seed, phase, rep, MODES.index(mode)]))


def weighted_sample(weights, k: int, rng: np.random.Generator, exclude=None) -> np.ndarray:
    """Draw ``k`` distinct indices with probability proportional to ``weights``.

    Successive draws, renormalizing over the remaining indices. Once the
    positive mass is exhausted the rest are drawn uniformly. Returns a sorted
    array.
    """
    w = np.array(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    avail = np.ones(w.size, dtype=bool)
    if exclude is not None and len(exclude):
        avail[np.asarray(exclude)] = False
    if k > avail.sum():
        log.warning("requested %d indices but only %d available; clamping", k, avail.sum())
        k = int(avail.sum())
    w[~avail] = 0.0
    if k > 0 and w.sum() == 0:
        log.warning("all-zero density over %d candidates; sampling uniformly", int(avail.sum()))
    chosen = []
    for _ in range(k):
        total = w.sum()
        if total > 0:
            u = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(w), u, side="right"))
            idx = min(idx, w.size - 1)
            # guard against landing on a zero-weight index through rounding
            while w[idx] == 0:
                idx -= 1
        else:
            idx = int(rng.choice(np.flatnonzero(avail)))
        chosen.append(idx)
        w[idx] = 0.0
        avail[idx] = False
    return np.sort(np.asarray(chosen, dtype=np.int64))


def draw_common(dp: DensityProfile, opts: SamplingOptions, rank: int = 1) -> Dict[str, np.ndarray]:
    """Common index block per mode, shared by all repetitions."""
    out = {}
    for m in dp.modes():
        dens = dp[m]
        n_common, _ = opts.sizes(m, dens.size, rank)
        if opts.p > 0 and opts.p * dens.size / opts.factor(m) < 1:
            log.warning("common block of mode %s rounds up from below one index", m)
        out[m] = weighted_sample(dens, n_common, stream(opts.seed, _PHASE_COMMON, 0, m))
    return out


def draw_repetition(dp: DensityProfile, common: Dict[str, np.ndarray], opts: SamplingOptions,
                    rep_index: int, rank: int = 1) -> SampleSpec:
    """Common block plus a fresh density-biased block for repetition ``rep_index``."""
    modes = {}
    for m in dp.modes():
        dens = dp[m]
        _, n_fresh = opts.sizes(m, dens.size, rank)
        fresh = weighted_sample(dens, n_fresh, stream(opts.seed, _PHASE_FRESH, rep_index, m),
                                exclude=common[m])
        modes[m] = ModeSample(np.asarray(common[m], dtype=np.int64), fresh)
    return SampleSpec(modes)


def draw_all(data: CoupledData, opts: SamplingOptions, rank: int = 1, dp: DensityProfile = None):
    """All ``opts.r`` sample specs for ``data``."""
    dp = density_profile(data) if dp is None else dp
    common = draw_common(dp, opts, rank)
    return [draw_repetition(dp, common, opts, i, rank) for i in range(opts.r)]


def extract(data: CoupledData, spec: SampleSpec) -> CoupledData:
    """Restrict ``data`` to the sampled indices.

    Side matrices reuse the tensor-mode index array for their rows, so the
    coupling is preserved. ``index_maps`` maps ``"x"``, ``"y1"``.. to the
    index arrays (into the full data) of each axis.
    """
    idx = {m: spec.indices(m) for m in spec.modes}
    x = data.x.subtensor(idx["a"], idx["b"], idx["c"])
    maps = {"x": (idx["a"], idx["b"], idx["c"])}
    ys = []
    for name, rows, cols, y in zip(("y1", "y2", "y3"), TENSOR_MODES, SIDE_MODES, data.sides):
        if y is None:
            ys.append(None)
            continue
        r, c = idx[rows], idx[cols]
        if (r.size and r.max() >= y.shape[0]) or (c.size and c.max() >= y.shape[1]):
            raise IndexError(f"sample index outside {name}")
        ys.append(y[np.ix_(r, c)])
        maps[name] = (r, c)
    return CoupledData(x, *ys, index_maps=maps)
