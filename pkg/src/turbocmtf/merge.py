"""Column normalization and greedy merging of per-repetition factors."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

log = logging.getLogger(__name__)

ZERO_NORM = 1e-12
LOW_SIMILARITY = 0.9
TIE_GAP = 1e-6


@dataclass(frozen=True)
class PartialFactor:
    """One repetition's factor in the full index space (zero off-sample)."""

    matrix: np.ndarray
    common_indices: np.ndarray
    lam: np.ndarray
    flagged: tuple = ()


@dataclass
class MergeReport:
    """Column assignment of every partial and the assignments worth a look.

    ``assignments[i][f]`` is the output column that column ``f`` of partial
    ``i`` was written to. ``ambiguous`` holds
    ``(partial, column, target, similarity, runner_up)`` tuples.
    """

    assignments: List[np.ndarray] = field(default_factory=list)
    ambiguous: List[tuple] = field(default_factory=list)


def normalize_common(m, common):
    """Scale every column to unit norm on the common rows.

    Returns ``(matrix, lam, flagged)``: ``lam[f]`` is the common-part norm of
    column ``f``. Columns whose common part is numerically zero are left as
    they are with ``lam = 1`` and listed in ``flagged``.
    """
    common = np.asarray(common, dtype=np.int64)
    if common.size == 0:
        raise ValueError("normalize_common needs a non-empty common index set")
    m = np.array(m, dtype=float)
    lam = np.linalg.norm(m[common], axis=0)
    flagged = tuple(int(f) for f in np.flatnonzero(lam < ZERO_NORM))
    if flagged:
        log.warning("columns %s have a zero common part; left unscaled", flagged)
    lam[list(flagged)] = 1.0
    return m / lam, lam, flagged


def merge(partials: Sequence[PartialFactor]):
    """Stitch partial factors together column by column.

    The first partial seeds the result. For every later partial, each of its
    columns is matched to the still-unassigned result column whose common
    part has the largest inner product with it (lowest index on ties), and
    copied into that column only where the result is still zero. Returns
    ``(matrix, MergeReport)``.
    """
    if not partials:
        raise ValueError("nothing to merge")
    first = partials[0]
    shape = first.matrix.shape
    common = np.asarray(first.common_indices, dtype=np.int64)
    for p in partials[1:]:
        if p.matrix.shape != shape:
            raise ValueError(f"partial shape {p.matrix.shape} differs from {shape}")
        if not np.array_equal(np.asarray(p.common_indices), common):
            raise ValueError("partials disagree on the common index set")
    F = shape[1]
    result = np.array(first.matrix, dtype=float)
    report = MergeReport(assignments=[np.arange(F)])
    for i, p in enumerate(partials[1:], start=1):
        free = list(range(F))
        assign = np.empty(F, dtype=np.int64)
        for f1 in range(F):
            v = result[common][:, free].T @ p.matrix[common, f1]
            order = np.argsort(-v, kind="stable")
            best = free[order[0]]
            top = float(v[order[0]])
            runner = float(v[order[1]]) if len(free) > 1 else -np.inf
            if top < LOW_SIMILARITY or top - runner <= TIE_GAP:
                report.ambiguous.append((i, f1, best, top, runner))
            col = result[:, best]
            empty = col == 0
            col[empty] = p.matrix[empty, f1]
            assign[f1] = best
            free.remove(best)
        report.assignments.append(assign)
    if report.ambiguous:
        log.info("%d merge assignments were ambiguous", len(report.ambiguous))
    return result, report


def average_lambdas(lambdas: Sequence[np.ndarray], assignments: Sequence[np.ndarray] = None):
    """Mean of per-repetition scale vectors after aligning their columns.

    ``assignments[i][f]`` gives the output column of partial ``i``'s column
    ``f`` (as in :class:`MergeReport`); without it the vectors are taken as
    already aligned.
    """
    if not lambdas:
        raise ValueError("no lambda vectors")
    F = len(lambdas[0])
    aligned = []
    for i, lam in enumerate(lambdas):
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (F,):
            raise ValueError("lambda vectors differ in length")
        if assignments is not None:
            out = np.empty(F)
            out[np.asarray(assignments[i])] = lam
            lam = out
        aligned.append(lam)
    return np.mean(aligned, axis=0)
