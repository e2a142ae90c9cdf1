"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .als import NumericalError, SolverOptions, cmtf_als
from .driver import RepetitionError, TurboOptions, default_parallelism, turbo_cmtf
from .factors import reconstruct
from .linalg import PinvOptions
from .metrics import leave_two_out, predict_from_side, relative_cost, relative_sparsity, snr
from .missing import cmtf_wals
from .sampling import MODES, SamplingOptions
from .synth import planted

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_data_args(p, masks=False):
    p.add_argument("--tensor", required=True, help="tensor file (coordinate format)")
    for n in (1, 2, 3):
        p.add_argument(f"--y{n}", help=f"side matrix coupled on mode {n}")
    if masks:
        p.add_argument("--mask", help="binary weight tensor marking observed entries")
        for n in (1, 2, 3):
            p.add_argument(f"--w{n}", help=f"binary weight matrix for --y{n}")


def _add_solver_args(p):
    p.add_argument("--rank", type=int, required=True, help="number of components F")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="relative objective change that stops ALS (default 1e-6)")
    p.add_argument("--max-iters", type=int, default=500, help="ALS iteration cap (default 500)")
    p.add_argument("--rank-tol", type=float, default=1e-10,
                   help="relative singular value cutoff of the pseudoinverse (default 1e-10)")


def _add_sampling_args(p):
    p.add_argument("--s", type=float, nargs="+", default=[2.0], metavar="S",
                   help="sampling factor: one value for every mode, three for the tensor "
                        "modes (side modes use 1) or six for modes A B C D E G (default 2)")
    p.add_argument("--p", type=float, default=0.35,
                   help="fraction of each sample shared by all repetitions (default 0.35)")
    p.add_argument("--r", type=int, default=None,
                   help="number of repetitions (default: available parallelism)")
    p.add_argument("--parallel", type=int, default=1,
                   help="repetitions fitted concurrently (default 1)")
    p.add_argument("--core", choices=("als", "wals"), default="als",
                   help="solver for each sample (default als)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="turbocmtf", description="Sampled coupled matrix-tensor factorization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit-als", help="full coupled ALS baseline")
    _add_data_args(p)
    _add_solver_args(p)
    p.add_argument("--out", required=True, help="output directory for factors and report")

    p = sub.add_parser("fit-turbo", help="sampled fit, merged over repetitions")
    _add_data_args(p, masks=True)
    _add_solver_args(p)
    _add_sampling_args(p)
    p.add_argument("--out", required=True, help="output directory for factors and report")

    p = sub.add_parser("fit-missing", help="weighted coupled ALS ignoring masked entries")
    _add_data_args(p, masks=True)
    _add_solver_args(p)
    p.add_argument("--out", required=True, help="output directory for factors and report")

    p = sub.add_parser("eval", help="compare two factor directories on the same data")
    _add_data_args(p, masks=True)
    p.add_argument("--fast", required=True, help="factor directory of the method under test")
    p.add_argument("--base", required=True, help="factor directory of the baseline")

    p = sub.add_parser("predict", help="predict a mode-2 vector from a y1 row: B D^T q")
    p.add_argument("--factors", required=True, help="factor directory")
    p.add_argument("--q", required=True, help="vector file (plain numbers or 1-column matrix)")
    p.add_argument("--unscaled", action="store_true", help="ignore the lambda scales")
    p.add_argument("--out", help="write the prediction here instead of stdout")

    p = sub.add_parser("loo", help="leave-two-out classification accuracy")
    _add_data_args(p)
    _add_solver_args(p)
    _add_sampling_args(p)
    p.add_argument("--pair", type=int, nargs=2, required=True, metavar=("I1", "I2"),
                   help="1-based mode-1 indices to hold out")
    p.add_argument("--trials", type=int, default=20, help="number of randomized fits (default 20)")
    p.add_argument("--unscaled", action="store_true", help="predict without lambda scales")

    p = sub.add_parser("gen", help="write a planted low-rank coupled instance")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dims", type=int, nargs=3, required=True, metavar=("I", "J", "K"))
    p.add_argument("--side-dims", type=int, nargs=3, default=[0, 0, 0],
                   metavar=("I2", "J2", "K2"), help="side matrix widths, 0 for none")
    p.add_argument("--rank", type=int, required=True, help="planted rank")
    p.add_argument("--snr-db", type=float, default=None, help="noise level; omit for noiseless")
    p.add_argument("--density", type=float, default=1.0, help="approximate tensor density")
    p.add_argument("--missing", type=float, default=0.0, help="fraction of entries masked")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _solver(args) -> SolverOptions:
    return SolverOptions(rank=args.rank, max_iters=args.max_iters, rel_change_tol=args.tol,
                         seed=args.seed, pinv=PinvOptions(args.rank_tol))


def _sampling(args) -> SamplingOptions:
    s = args.s
    if len(s) == 1:
        factors = s[0]
    elif len(s) == 3:
        factors = dict(zip(MODES[:3], s))
    elif len(s) == 6:
        factors = dict(zip(MODES, s))
    else:
        raise UsageError("--s takes 1, 3 or 6 values")
    r = args.r if args.r is not None else default_parallelism()
    return SamplingOptions(s=factors, p=args.p, r=r, seed=args.seed)


def _data(args):
    return io.read_data(args.tensor, args.y1, args.y2, args.y3)


def _mask(args, data):
    if not getattr(args, "mask", None):
        if any(getattr(args, f"w{n}", None) for n in (1, 2, 3)):
            raise UsageError("--w1/--w2/--w3 need --mask")
        return None
    mask = io.read_mask(args.mask, (args.w1, args.w2, args.w3))
    mask.check(data)
    return mask


def _cmd_fit_als(args):
    data = _data(args)
    t0 = time.perf_counter()
    f, trace = cmtf_als(data, _solver(args))
    secs = time.perf_counter() - t0
    io.write_factors(f, {"objective": trace[-1], "iterations": len(trace),
                         "wall_clock_total": secs, "traces": [trace]}, args.out)
    print(f"objective {trace[-1]:.10g}")


def _cmd_fit_turbo(args):
    data = _data(args)
    mask = _mask(args, data)
    opts = TurboOptions(_solver(args), _sampling(args), args.parallel, args.core)
    f, report = turbo_cmtf(data, mask, opts)
    io.write_factors(f, report, args.out)
    print(f"objective {report.objective:.10g}")


def _cmd_fit_missing(args):
    data = _data(args)
    mask = _mask(args, data)
    t0 = time.perf_counter()
    f, trace = cmtf_wals(data, mask, _solver(args))
    secs = time.perf_counter() - t0
    io.write_factors(f, {"objective": trace[-1], "iterations": len(trace),
                         "wall_clock_total": secs, "traces": [trace]}, args.out)
    print(f"weighted_objective {trace[-1]:.10g}")


def _cmd_eval(args):
    data = _data(args)
    mask = _mask(args, data)
    fast = io.read_factors(args.fast)
    base = io.read_factors(args.base)
    print(f"relative_cost {relative_cost(data, fast, base, mask):.10g}")
    print(f"relative_sparsity {relative_sparsity(base, fast):.10g}")
    print(f"snr {snr(reconstruct(fast), reconstruct(base)):.10g}")
    t_fast = io.read_report(args.fast).get("wall_clock_total")
    t_base = io.read_report(args.base).get("wall_clock_total")
    if isinstance(t_fast, float) and isinstance(t_base, float) and t_base > 0:
        print(f"wall_clock_fraction {t_fast / t_base:.10g}")


def _cmd_predict(args):
    f = io.read_factors(args.factors)
    v = predict_from_side(f, io.read_vector(args.q), scaled=not args.unscaled)
    if args.out:
        io.write_matrix(v.reshape(-1, 1), args.out)
    else:
        for x in v:
            print(io._fmt(x))


def _cmd_loo(args):
    data = _data(args)
    opts = TurboOptions(_solver(args), _sampling(args), args.parallel, args.core)
    pair = (args.pair[0] - 1, args.pair[1] - 1)
    acc = leave_two_out(data, pair, opts, trials=args.trials, scaled=not args.unscaled,
                        parallel=args.parallel)
    print(f"accuracy {acc:.10g}")


def _cmd_gen(args):
    sides = [d if d > 0 else None for d in args.side_dims]
    inst = planted(args.dims, args.rank, sides, snr_db=args.snr_db, density=args.density,
                   missing=args.missing, seed=args.seed)
    paths = io.write_data(inst.data, args.out, inst.mask)
    io.write_factors(inst.truth, None, Path(args.out) / "truth")
    for k, v in paths.items():
        print(f"{k} {v}")


COMMANDS = {
    "fit-als": _cmd_fit_als, "fit-turbo": _cmd_fit_turbo, "fit-missing": _cmd_fit_missing,
    "eval": _cmd_eval, "predict": _cmd_predict, "loo": _cmd_loo, "gen": _cmd_gen,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"turbocmtf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"turbocmtf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RepetitionError as exc:
        code = EXIT_NUMERIC if isinstance(exc.__cause__, (NumericalError, np.linalg.LinAlgError)) \
            else EXIT_DATA
        print(f"turbocmtf: {exc}", file=sys.stderr)
        return code
    except (OSError, ValueError, IndexError, KeyError) as exc:
        print(f"turbocmtf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
