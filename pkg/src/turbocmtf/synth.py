"""Planted low-rank coupled instances for testing and benchmarking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .factors import FactorSet, reconstruct
from .missing import WeightMask
from .tensor import CoupledData, Tensor3


@dataclass(frozen=True)
class PlantedInstance:
    data: CoupledData
    truth: FactorSet
    mask: Optional[WeightMask] = None


def _factor(rng, rows, rank, keep):
    m = rng.random((rows, rank))
    if keep < 1.0:
        m *= rng.random((rows, rank)) < keep
        # every component keeps at least one row so the planted rank is exact
        for f in range(rank):
            if not m[:, f].any():
                m[rng.integers(rows), f] = rng.random() + 0.5
    return m


def _add_noise(rng, values, snr_db):
    if snr_db is None or not values.size:
        return values
    signal = float(np.sum(values * values))
    noise = rng.standard_normal(values.shape)
    scale = np.sqrt(signal / (10.0 ** (snr_db / 10.0)) / float(np.sum(noise * noise)))
    return values + scale * noise


def planted(dims: Sequence[int], rank: int, side_dims: Sequence[Optional[int]] = (None, None, None),
            *, snr_db: Optional[float] = None, density: float = 1.0, missing: float = 0.0,
            seed: int = 0) -> PlantedInstance:
    """Draw a rank-``rank`` coupled instance with nonnegative planted factors.

    ``density`` below one makes factor entries Bernoulli-sparse so that the
    tensor has roughly that fraction of nonzeros; noise (``snr_db``) is then
    added to stored entries only. ``missing`` hides that fraction of every
    block behind a weight mask.
    """
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    if not 0 <= missing < 1:
        raise ValueError("missing must be in [0, 1)")
    rng = np.random.default_rng(seed)
    # per-entry keep probability q with 1 - (1 - q^3)^F = density
    keep = 1.0 if density >= 1 else (1 - (1 - density) ** (1.0 / rank)) ** (1.0 / 3.0)
    I, J, K = dims
    a, b, c = (_factor(rng, n, rank, keep) for n in (I, J, K))
    side = [None if n is None else _factor(rng, n, rank, keep) for n in side_dims]
    truth = FactorSet(a, b, c, *side)

    clean = reconstruct(truth, "tensor").to_dense()
    if density < 1:
        noisy = clean.copy()
        nz = clean != 0
        noisy[nz] = _add_noise(rng, clean[nz], snr_db)
        x = Tensor3.auto(noisy)
    else:
        x = Tensor3.from_dense(_add_noise(rng, clean, snr_db))
    ys = []
    for name, s in zip(("y1", "y2", "y3"), side):
        if s is None:
            ys.append(None)
            continue
        ys.append(_add_noise(rng, reconstruct(truth, name), snr_db))
    data = CoupledData(x, *ys)

    mask = None
    if missing > 0:
        w = Tensor3.from_dense((rng.random(dims) >= missing).astype(float))
        ws = [None if y is None else (rng.random(y.shape) >= missing).astype(float) for y in ys]
        mask = WeightMask(w, *ws)
    return PlantedInstance(data, truth, mask)
