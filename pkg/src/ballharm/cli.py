"""Command-line interface: ``ballharm <subcommand> ...``.

Exit codes: 0 success, 1 I/O error, 2 plan hypothesis violated, 3 numerical
failure (including a verification run exceeding its tolerance).
"""
from __future__ import annotations

import argparse
import contextlib
import json
import math
import sys
import time
import warnings

import numpy as np

from . import __version__
from .basis import bandlimit_default, bandlimit_max, build_index
from .grids import make_voxel_grid
from .io import (CoeffVector, FormatError, read_coeffs, read_volume, write_coeffs,
                 write_volume)
from .nufft import NufftPrecisionError
from .special_fn import real_complex_coeff_convert
from .transforms import (DenseOperator, PlanHypothesisError, dense_memory_bytes,
                         fast_B_apply, fast_Bstar_apply, plan)

REPORT_VERSION = 1
EXIT_IO, EXIT_PLAN, EXIT_NUMERIC = 1, 2, 3
VERIFY_MAX_N = 32


class VerificationFailed(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def resolve_bandlimit(spec, N: int) -> float:
    """``"auto"`` -> pi N / 2, ``"max"`` -> largest admissible, else a number."""
    if spec is None or spec == "auto":
        return bandlimit_default(N)
    if spec == "max":
        return bandlimit_max(N)
    try:
        lam = float(spec)
    except ValueError:
        raise PlanHypothesisError("bandlimit must be a number, 'auto' or 'max'") from None
    if not math.isfinite(lam) or lam <= 0:
        raise PlanHypothesisError("bandlimit must be positive and finite")
    return lam


@contextlib.contextmanager
def thread_limits(threads, deterministic):
    """Cap numba and BLAS threads; deterministic runs pin BLAS to one thread."""
    import numba
    from threadpoolctl import threadpool_limits

    old = numba.get_num_threads()
    if threads:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
    blas = 1 if deterministic else threads
    try:
        if blas:
            with threadpool_limits(limits=int(blas)):
                yield
        else:
            yield
    finally:
        numba.set_num_threads(old)


def _emit(args, report: dict, text: str) -> None:
    if args.json:
        report = {"report_version": REPORT_VERSION, **report}
        print(json.dumps(report, indent=2, default=_json_default))
    else:
        print(text)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o).__name__)


def _plan_text(p) -> str:
    d = p.to_dict()
    a = d["budget"]["analysis"]
    s = d["budget"]["synthesis"]
    return ("N=%d lambda=%.6g n=%d L=%d K=%d Q=%d S=%d eps=%.3g selectors=%s\n"
            "  eps_dis=%.3g  eps_nuf(analysis)=%.3g  eps_nuf(synthesis)=%.3g"
            % (d["N"], d["lambda"], d["n"], d["L"], d["K"], d["Q"], d["S"], d["eps"],
               d["selectors"], a["eps_dis"], a["eps_nuf_used"], s["eps_nuf_used"]))


def _make_plan(args, N, bandlimit=None):
    lam = resolve_bandlimit(args.bandlimit if bandlimit is None else bandlimit, N)
    return plan(N, lam, args.eps, selectors=args.selectors,
                workers=args.threads or None)


def _embed(values, src_index, dst_index) -> np.ndarray:
    """Place coefficients of ``src_index`` at their positions in ``dst_index``."""
    if src_index.n == dst_index.n and np.array_equal(src_index.k, dst_index.k) \
            and np.array_equal(src_index.ell, dst_index.ell) \
            and np.array_equal(src_index.m, dst_index.m):
        return np.asarray(values, dtype=np.complex128)
    out = np.zeros(dst_index.n, dtype=np.complex128)
    for i, (k, l, m, _) in enumerate(src_index.entries()):
        try:
            out[dst_index.position(k, l, m)] = values[i]
        except KeyError:
            raise PlanHypothesisError(
                "coefficient (k=%d, ell=%d, m=%d) is outside the plan's basis" % (k, l, m)
            ) from None
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_expand(args) -> int:
    f = read_volume(args.input)
    N = f.shape[0]
    p = _make_plan(args, N)
    t0 = time.perf_counter()
    if args.dense:
        alpha = DenseOperator(p.index, p.grid).adjoint(f)
    else:
        alpha = fast_Bstar_apply(p, f)
    elapsed = time.perf_counter() - t0
    if not np.all(np.isfinite(alpha)):
        raise FloatingPointError("non-finite coefficients")
    if args.basis == "real":
        alpha = real_complex_coeff_convert(alpha, p.index, to="real")
    write_coeffs(args.output, CoeffVector(p.index, alpha, args.basis))
    report = {"command": "expand", "plan": p.to_dict(), "basis": args.basis,
              "dense": bool(args.dense), "seconds": elapsed, "output": args.output}
    _emit(args, report, _plan_text(p) + "\nwrote %d coefficients to %s (%.2f s)"
          % (p.index.n, args.output, elapsed))
    return 0


def cmd_synthesize(args) -> int:
    cv = read_coeffs(args.input)
    N = args.size
    p = _make_plan(args, N, bandlimit=args.bandlimit or cv.index.bandlimit)
    vals = cv.values
    if cv.basis == "real":
        vals = real_complex_coeff_convert(vals, cv.index, to="complex")
    alpha = _embed(vals, cv.index, p.index)
    t0 = time.perf_counter()
    if args.dense:
        f = DenseOperator(p.index, p.grid).apply(alpha)
    else:
        f = fast_B_apply(p, alpha)
    elapsed = time.perf_counter() - t0
    if not np.all(np.isfinite(f)):
        raise FloatingPointError("non-finite volume")
    if args.real:
        f = f.real
    write_volume(args.output, f)
    report = {"command": "synthesize", "plan": p.to_dict(), "dense": bool(args.dense),
              "seconds": elapsed, "output": args.output}
    _emit(args, report, _plan_text(p) + "\nwrote %d^3 volume to %s (%.2f s)"
          % (N, args.output, elapsed))
    return 0


def cmd_lowpass(args) -> int:
    f = read_volume(args.input)
    N = f.shape[0]
    p = _make_plan(args, N)
    lam = p.index.bandlimit
    if args.new_bandlimit is not None:
        new = float(args.new_bandlimit)
    else:
        if args.factor < 1:
            raise PlanHypothesisError("--factor must be at least 1")
        new = lam / args.factor
    if new > lam:
        raise PlanHypothesisError("new bandlimit %.6g exceeds the plan's %.6g" % (new, lam))
    keep = p.index.lam <= new
    kept = int(np.count_nonzero(keep))
    if kept == 0:
        warnings.warn("no basis function has lam <= %.6g; output is zero" % new,
                      RuntimeWarning)
        g = np.zeros((N, N, N))
    else:
        alpha = fast_Bstar_apply(p, f)
        g = fast_B_apply(p, np.where(keep, alpha, 0))
        if not np.iscomplexobj(f):
            g = g.real
    write_volume(args.output, g)
    report = {"command": "lowpass", "bandlimit": lam, "new_bandlimit": new,
              "n_total": p.index.n, "n_retained": kept, "output": args.output}
    _emit(args, report, "bandlimit %.6g -> %.6g: retained %d of %d basis functions"
          % (lam, new, kept, p.index.n))
    return 0


def _rel_errors(approx, exact, inp):
    d = np.abs(approx - exact)
    return (float(d.max() / np.abs(inp).sum()),
            float(np.linalg.norm(approx - exact) / np.linalg.norm(exact)))


def cmd_verify(args) -> int:
    sizes = args.sizes or [16]
    eps_list = args.eps_list or [1e-4, 1e-7, 1e-10]
    for N in sizes:
        if N > VERIFY_MAX_N:
            grid = make_voxel_grid(N)
            idx = build_index(resolve_bandlimit(args.bandlimit, N))
            gib = dense_memory_bytes(idx, grid) / 2 ** 30
            raise PlanHypothesisError(
                "dense verification at N=%d would need about %.1f GiB and O(V n) work; "
                "refusing sizes above %d" % (N, gib, VERIFY_MAX_N))
    rng = np.random.default_rng(args.seed)
    rows = []
    ok = True
    for N in sizes:
        lam = resolve_bandlimit(args.bandlimit, N)
        dense = None
        f = rng.uniform(-1, 1, (N, N, N))
        for eps in eps_list:
            p = plan(N, lam, eps, selectors=args.selectors, workers=args.threads or None)
            if dense is None:
                dense = DenseOperator(p.index, p.grid)
                alpha = rng.uniform(-1, 1, p.index.n) + 1j * rng.uniform(-1, 1, p.index.n)
                Bs_f = dense.adjoint(f)
                B_a = dense.apply(alpha)
            t0 = time.perf_counter()
            fa = fast_Bstar_apply(p, f)
            fb = fast_B_apply(p, alpha)
            dt = time.perf_counter() - t0
            err_a, err2_a = _rel_errors(fa, Bs_f, f)
            err_f, err2_f = _rel_errors(fb, B_a, alpha)
            passed = err_a <= eps and err_f <= eps
            ok &= passed
            rows.append({"N": N, "eps": eps, "Q": p.Q, "S": p.S, "n": p.index.n,
                         "err_a": err_a, "err_f": err_f, "err2_a": err2_a,
                         "err2_f": err2_f, "seconds": dt, "pass": passed})
    lines = ["%4s %8s %5s %5s %7s %10s %10s %10s %10s  %s"
             % ("N", "eps", "Q", "S", "n", "err_a", "err_f", "err2_a", "err2_f", "result")]
    for r in rows:
        lines.append("%4d %8.0e %5d %5d %7d %10.2e %10.2e %10.2e %10.2e  %s"
                     % (r["N"], r["eps"], r["Q"], r["S"], r["n"], r["err_a"], r["err_f"],
                        r["err2_a"], r["err2_f"], "pass" if r["pass"] else "FAIL"))
    _emit(args, {"command": "verify", "rows": rows, "pass": ok}, "\n".join(lines))
    if not ok:
        raise VerificationFailed("an error exceeded its tolerance")
    return 0


def loglog_slope(sizes, times) -> float:
    """Least-squares slope of log(time) against log(N)."""
    if len(sizes) < 2:
        return float("nan")
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])


def run_bench(sizes, eps=1e-7, bandlimit=None, selectors="optimized", workers=None,
              direction="analysis", seed=0):
    """Time the fast transforms at each N.

    Returns one row per size with per-step times, the measured total and the
    plan construction time (not part of the total).
    """
    rng = np.random.default_rng(seed)
    rows = []
    for N in sizes:
        t0 = time.perf_counter()
        p = plan(N, resolve_bandlimit(bandlimit, N), eps, selectors=selectors,
                 workers=workers)
        t_plan = time.perf_counter() - t0
        steps = {}
        if direction == "analysis":
            f = rng.uniform(-1, 1, (N, N, N))
            t0 = time.perf_counter()
            fast_Bstar_apply(p, f, steps)
        else:
            a = rng.uniform(-1, 1, p.index.n) + 0j
            t0 = time.perf_counter()
            fast_B_apply(p, a, steps)
        total = time.perf_counter() - t0
        rows.append({"N": N, "Q": p.Q, "S": p.S, "n": p.index.n, "targets": p.n_targets,
                     "plan_seconds": t_plan, "total": total,
                     "step1": steps.get("step1", 0.0), "step2": steps.get("step2", 0.0),
                     "step3": steps.get("step3", 0.0)})
    return rows


def cmd_bench(args) -> int:
    sizes = args.sizes or [32, 64, 128]
    rows = []
    for direction in (["analysis", "synthesis"] if args.both else ["analysis"]):
        for r in run_bench(sizes, args.eps, args.bandlimit, args.selectors,
                           args.threads or None, direction):
            r["direction"] = direction
            rows.append(r)
    report = {"command": "bench", "eps": args.eps, "rows": rows, "slopes": {}}
    lines = ["%-9s %4s %5s %5s %9s %8s %8s %8s %8s %6s"
             % ("direction", "N", "Q", "S", "n", "step1", "step2", "step3", "total",
                "steps%")]
    for direction in sorted({r["direction"] for r in rows}):
        sub = [r for r in rows if r["direction"] == direction]
        for r in sub:
            frac = (r["step1"] + r["step2"] + r["step3"]) / r["total"]
            lines.append("%-9s %4d %5d %5d %9d %8.2f %8.2f %8.2f %8.2f %5.1f%%"
                         % (direction, r["N"], r["Q"], r["S"], r["n"], r["step1"],
                            r["step2"], r["step3"], r["total"], 100 * frac))
        slope = loglog_slope([r["N"] for r in sub], [r["total"] for r in sub])
        report["slopes"][direction] = slope
        lines.append("%s log-log slope: %.3f" % (direction, slope))
    _emit(args, report, "\n".join(lines))
    return 0


def cmd_info(args) -> int:
    N = args.size
    if N is None and args.input:
        N = read_volume(args.input).shape[0]
    if N is None:
        raise PlanHypothesisError("give --size or an input volume")
    p = _make_plan(args, N)
    d = p.to_dict()
    d["bandlimit_max"] = bandlimit_max(N)
    _emit(args, {"command": "info", "plan": d},
          _plan_text(p) + "\n  bandlimit_max=%.6g targets=%d" % (d["bandlimit_max"],
                                                                d["targets"]))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _float_list(s):
    return [float(x) for x in s.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--bandlimit", default=None,
                        help="number, 'auto' (pi N / 2, default) or 'max'")
    common.add_argument("--eps", type=float, default=1e-7, help="target accuracy")
    common.add_argument("--basis", choices=("complex", "real"), default="complex")
    common.add_argument("--selectors", choices=("optimized", "strict"), default="optimized")
    common.add_argument("--deterministic", action="store_true",
                        help="pin BLAS to one thread for bitwise reproducible output")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("--dense", action="store_true", help="use the dense reference operator")
    common.add_argument("--json", action="store_true", help="machine-readable report")

    ap = argparse.ArgumentParser(prog="ballharm",
                                 description="Fast ball-harmonic expansions of cubic volumes.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("expand", parents=[common], help="volume -> coefficient file")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("synthesize", parents=[common], help="coefficient file -> volume")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--size", type=int, required=True, help="grid size N")
    p.add_argument("--real", action="store_true", help="write the real part only")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("lowpass", parents=[common], help="restrict a volume to a lower bandlimit")
    p.add_argument("input")
    p.add_argument("output")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--factor", type=float, help="divide the bandlimit by this factor")
    g.add_argument("--new-bandlimit", type=float)
    p.set_defaults(func=cmd_lowpass)

    p = sub.add_parser("verify", parents=[common], help="compare fast and dense operators")
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--eps-list", type=_float_list)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", parents=[common], help="time the fast transforms")
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--both", action="store_true", help="also time the synthesis")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("info", parents=[common], help="show plan parameters")
    p.add_argument("input", nargs="?")
    p.add_argument("--size", type=int)
    p.set_defaults(func=cmd_info)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    def _show(message, category, filename, lineno, file=None, line=None):
        print("warning: %s" % message, file=sys.stderr)

    warnings.showwarning = _show
    try:
        with thread_limits(args.threads, args.deterministic):
            return args.func(args)
    except (PlanHypothesisError, NufftPrecisionError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_PLAN
    except (OSError, FormatError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
