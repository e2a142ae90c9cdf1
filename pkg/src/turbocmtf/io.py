"""Plain-text coordinate formats for tensors, matrices, factors and reports.

Tensor files::

    tensor I J K nnz
    i j k value        (nnz lines, 1-based indices)

Matrix files use ``matrix rows cols nnz`` and ``i j value`` lines. Values are
written with 17 significant digits so they read back exactly. Paths ending
in ``.gz`` are compressed transparently.
"""
from __future__ import annotations

import gzip
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .factors import FACTOR_NAMES, FactorSet
from .missing import WeightMask
from .tensor import SPARSE_DENSITY_THRESHOLD, CoupledData, Tensor3

FACTOR_FILES = {n: f"{n.upper()}.mtx" for n in FACTOR_NAMES}
LAMBDA_FILE = "lambdas.txt"
REPORT_FILE = "report.txt"


class DataFormatError(ValueError):
    """Malformed input file; ``line`` is 1-based (0 for whole-file problems)."""

    def __init__(self, path, line: int, msg: str):
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {msg}")
        self.path = str(path)
        self.line = line


def _open(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="ascii")
    return open(path, mode, encoding="ascii")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _read_coords(path, kind: str, ndim: int):
    with _open(path, "r") as fh:
        lines = fh.read().splitlines()
    body = [(n, ln.split()) for n, ln in enumerate(lines, start=1) if ln.strip()]
    if not body:
        raise DataFormatError(path, 0, "empty file")
    hline, head = body[0]
    if len(head) != ndim + 2 or head[0] != kind:
        raise DataFormatError(path, hline, f"expected header '{kind} <dims> <nnz>'")
    try:
        dims = tuple(int(v) for v in head[1:1 + ndim])
        nnz = int(head[-1])
    except ValueError:
        raise DataFormatError(path, hline, "header sizes must be integers") from None
    if any(d < 1 for d in dims) or nnz < 0:
        raise DataFormatError(path, hline, "header sizes must be positive")
    entries = body[1:]
    if len(entries) != nnz:
        raise DataFormatError(path, 0, f"header declares {nnz} entries, found {len(entries)}")
    coords = np.empty((nnz, ndim), dtype=np.int64)
    vals = np.empty(nnz)
    seen = {}
    for row, (lineno, parts) in enumerate(entries):
        if len(parts) != ndim + 1:
            raise DataFormatError(path, lineno, f"expected {ndim} indices and a value")
        try:
            idx = tuple(int(p) for p in parts[:ndim])
            val = float(parts[ndim])
        except ValueError:
            raise DataFormatError(path, lineno, "unparsable entry") from None
        if not np.isfinite(val):
            raise DataFormatError(path, lineno, "value is not finite")
        for i, d in zip(idx, dims):
            if not 1 <= i <= d:
                raise DataFormatError(path, lineno, f"index {i} outside 1..{d}")
        if idx in seen:
            raise DataFormatError(path, lineno, f"duplicate coordinate (first on line {seen[idx]})")
        seen[idx] = lineno
        coords[row] = idx
        vals[row] = val
    return dims, coords - 1, vals


def read_tensor(path) -> Tensor3:
    dims, coords, vals = _read_coords(path, "tensor", 3)
    keep = vals != 0
    size = dims[0] * dims[1] * dims[2]
    if keep.sum() < SPARSE_DENSITY_THRESHOLD * size:
        return Tensor3.from_coords(dims, coords[keep], vals[keep])
    dense = np.zeros(dims)
    dense[tuple(coords.T)] = vals
    return Tensor3.from_dense(dense)


def write_tensor(t: Tensor3, path) -> None:
    """Sparse tensors list stored entries; dense ones list every entry."""
    if t.is_sparse:
        coords, vals = t.coords, t.vals
    else:
        coords = np.indices(t.dims).reshape(3, -1).T
        vals = t.to_dense().reshape(-1)
    with _open(path, "w") as fh:
        fh.write(f"tensor {t.dims[0]} {t.dims[1]} {t.dims[2]} {len(vals)}\n")
        for (i, j, k), v in zip(coords + 1, vals):
            fh.write(f"{i} {j} {k} {_fmt(v)}\n")


def read_matrix(path) -> np.ndarray:
    dims, coords, vals = _read_coords(path, "matrix", 2)
    out = np.zeros(dims)
    out[tuple(coords.T)] = vals
    return out


def write_matrix(m, path) -> None:
    """Only nonzero entries are listed."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError("write_matrix expects a 2-D array")
    coords = np.argwhere(m)
    with _open(path, "w") as fh:
        fh.write(f"matrix {m.shape[0]} {m.shape[1]} {len(coords)}\n")
        for i, j in coords:
            fh.write(f"{i + 1} {j + 1} {_fmt(m[i, j])}\n")


def _check_binary(arr, path):
    if not np.all((arr == 0) | (arr == 1)):
        raise DataFormatError(path, 0, "mask values must be 0 or 1")
    return arr


def read_mask(w_path, side_paths=(None, None, None)) -> WeightMask:
    w = read_tensor(w_path)
    _check_binary(w.to_dense(), w_path)
    sides = [None if p is None else _check_binary(read_matrix(p), p) for p in side_paths]
    return WeightMask(Tensor3.from_dense(w.to_dense()), *sides)


def write_mask(mask: WeightMask, w_path, side_paths=(None, None, None)) -> None:
    write_tensor(mask.w.to_sparse(), w_path)
    for m, p in zip(mask.sides, side_paths):
        if m is not None and p is not None:
            write_matrix(m, p)


def read_data(tensor, y1=None, y2=None, y3=None) -> CoupledData:
    sides = [None if p is None else read_matrix(p) for p in (y1, y2, y3)]
    return CoupledData(read_tensor(tensor), *sides)


def read_vector(path) -> np.ndarray:
    """Either a matrix file with one column or row, or plain whitespace-separated numbers."""
    with _open(path, "r") as fh:
        text = fh.read()
    if text.lstrip().startswith("matrix"):
        m = read_matrix(path)
        if 1 not in m.shape:
            raise DataFormatError(path, 1, "vector file must have a single row or column")
        return m.reshape(-1)
    try:
        return np.array([float(v) for v in text.split()])
    except ValueError:
        raise DataFormatError(path, 0, "vector file holds non-numeric text") from None


def write_lambdas(f: FactorSet, path) -> None:
    with _open(path, "w") as fh:
        for n in f.present():
            fh.write(" ".join([f"lambda_{n}"] + [_fmt(v) for v in f.lam(n)]) + "\n")


def read_factors(directory) -> FactorSet:
    directory = Path(directory)
    mats = {}
    for n, fname in FACTOR_FILES.items():
        p = directory / fname
        if p.exists():
            mats[n] = read_matrix(p)
    if not all(n in mats for n in "abc"):
        raise DataFormatError(directory, 0, "factor directory needs A.mtx, B.mtx and C.mtx")
    lambdas = {}
    lp = directory / LAMBDA_FILE
    if lp.exists():
        with _open(lp, "r") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if not parts[0].startswith("lambda_"):
                    raise DataFormatError(lp, lineno, "expected 'lambda_<factor> values...'")
                lambdas[parts[0][len("lambda_"):]] = np.array([float(v) for v in parts[1:]])
    return FactorSet(*(mats.get(n) for n in FACTOR_NAMES), lambdas=lambdas)


def _report_lines(report) -> list:
    lines = []
    if report is None:
        return lines
    traces = getattr(report, "rep_traces", None)
    if traces is None and isinstance(report, dict):
        traces = report.get("traces")
    for key, value in _items(report):
        lines.append(f"{key} {value}")
    for i, tr in enumerate(traces or []):
        lines.append(f"trace {i + 1} " + " ".join(_fmt(v) for v in tr))
    merges = getattr(report, "merge_reports", {}) or {}
    for name, mrep in merges.items():
        for i, f1, target, sim, runner in mrep.ambiguous:
            lines.append(f"ambiguous factor={name} repetition={i + 1} column={f1 + 1} "
                         f"target={target + 1} similarity={_fmt(sim)} runner_up={_fmt(runner)}")
    return lines


def _items(report):
    if isinstance(report, dict):
        for k, v in report.items():
            if k == "traces":
                continue
            yield k, _fmt(v) if isinstance(v, float) else v
        return
    yield "objective", _fmt(report.objective)
    for phase, secs in report.timings.items():
        yield f"wall_clock_{phase}", _fmt(secs)
    yield "wall_clock_total", _fmt(sum(report.timings.values()))
    for i, obj in enumerate(report.rep_objectives):
        yield f"repetition_objective {i + 1}", _fmt(obj)
    for i, name, f in report.flagged_columns:
        yield "zero_common_part", f"repetition={i + 1} factor={name} column={f + 1}"


def write_factors(f: FactorSet, report, directory) -> None:
    """Write factor matrices, lambdas and a plain-text run report to ``directory``.

    ``report`` is a :class:`turbocmtf.driver.RunReport` or a plain dict of
    ``key -> value`` (with optional ``"traces"`` list of objective traces).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for n in f.present():
        write_matrix(getattr(f, n), directory / FACTOR_FILES[n])
    write_lambdas(f, directory / LAMBDA_FILE)
    with open(directory / REPORT_FILE, "w", encoding="ascii") as fh:
        for line in _report_lines(report):
            fh.write(line + "\n")


def read_report(directory) -> dict:
    """Scalar ``key value`` lines of a report file (traces and logs skipped)."""
    out = {}
    p = Path(directory) / REPORT_FILE
    if not p.exists():
        return out
    with open(p, encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 2:
                try:
                    out[parts[0]] = float(parts[1])
                except ValueError:
                    out[parts[0]] = parts[1]
    return out


def write_data(data: CoupledData, directory, mask: Optional[WeightMask] = None) -> dict:
    """Write a coupled dataset (and mask) with the default file names; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"tensor": directory / "X.tns"}
    write_tensor(data.x, paths["tensor"])
    for n, y in enumerate(data.sides, start=1):
        if y is not None:
            paths[f"y{n}"] = directory / f"Y{n}.mtx"
            write_matrix(y, paths[f"y{n}"])
    if mask is not None:
        paths["mask"] = directory / "W.tns"
        side = [directory / f"W{n}.mtx" if m is not None else None
                for n, m in enumerate(mask.sides, start=1)]
        write_mask(mask, paths["mask"], side)
        for n, p in enumerate(side, start=1):
            if p is not None:
                paths[f"w{n}"] = p
    return {k: os.fspath(v) for k, v in paths.items()}
