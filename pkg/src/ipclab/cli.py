"""Command-line entry point: ``ipclab <subcommand> [options]``.

Exit codes: 0 on success, 1 on a domain error or a failed verification
check, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import sys
from typing import Iterable, Sequence

import numpy as np

from . import limits
from .errors import ConfigError, IpclabError, RegimeError
from .fmw import run_chains
from .ipc import build_kcut, prim
from .offspring import OffspringDist, Sibuya, Zeta, parse_dist
from .rng import DEFAULT_SEED, map_blocks, resolve_threads, stream
from .survival import Regime, SurvivalSolver, alpha_hat
from .verify import SUITES, SuiteConfig, reports_to_json, run_suite, verdict

_CHAIN_BLOCK = 1024
_KCUT_BLOCK = 16


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return format(float(v), ".17g")


@contextlib.contextmanager
def _open_out(path: str):
    if path == "-":
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with _open_out(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: str, obj) -> None:
    with _open_out(path) as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# argument types


def _dist_arg(text: str) -> OffspringDist:
    try:
        return parse_dist(text)
    except (IpclabError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _seed_arg(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def parse_grid(spec: str) -> np.ndarray:
    """``lin:a:b:n``, ``log:a:b:n`` (log-spaced, a and b > 0) or ``x1,x2,...``."""
    try:
        kind, _, rest = spec.partition(":")
        if kind in ("lin", "log"):
            a, b, n = rest.split(":")
            a, b, n = float(a), float(b), int(n)
            if n < 1:
                raise ValueError
            if kind == "lin":
                return np.linspace(a, b, n)
            if a <= 0 or b <= 0:
                raise ValueError
            return np.geomspace(a, b, n)
        return np.array([float(x) for x in spec.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {spec!r}; use lin:a:b:n, log:a:b:n or a comma list") from None


def _default_dist(alpha: float) -> OffspringDist:
    return Sibuya(alpha) if alpha < 1 else Zeta(alpha)


# ---------------------------------------------------------------------------
# subcommands


def cmd_theta(args) -> int:
    solver = SurvivalSolver(args.dist)
    out = {"dist": args.dist.spec, "p": args.p, "theta": solver.theta(args.p), "p_c": solver.p_c}
    try:
        out["nu"], out["C_theta"] = solver.asymptotics()
    except RegimeError:
        out["nu"] = out["C_theta"] = None
    if args.prime:
        out["theta_prime"] = solver.theta_prime(args.p)
    if args.inv is not None:
        out["inv_x"] = args.inv
        out["theta_inv"] = solver.theta_inv(args.inv)
    _write_json(args.out, out)
    return 0


def _chain_rows(batch, first: int, rescale: bool, solver: SurvivalSolver):
    rows = []
    inf_mean = rescale and solver.regime is Regime.INFINITE_MEAN
    ah = alpha_hat(solver.dist.alpha)
    for j, traj in enumerate(batch.trajectories()):
        lv = traj.log_values()
        jumped = np.zeros(lv.size, dtype=bool)
        jumped[traj.jump_indices[traj.jump_indices < lv.size]] = True
        for i in range(lv.size):
            row = [first + j, i, math.exp(lv[i]), lv[i], jumped[i]]
            if rescale:
                if i == 0:
                    row.append(None)
                elif inf_mean:
                    row.append(math.exp(lv[i] / i))
                else:
                    row.append(i * (math.exp(lv[i]) - solver.p_c) * (ah - 1.0) / solver.p_c)
            rows.append(row)
    return rows


def cmd_fmw(args) -> int:
    solver = SurvivalSolver(args.dist)
    if args.rescale:
        solver.regime  # fail early on boundary tail indices

    def block(rng, first, m):
        return _chain_rows(run_chains(solver, args.k, m, rng), first, args.rescale, solver)

    parts = map_blocks(block, args.seed, "cli-fmw", args.trials, _CHAIN_BLOCK, args.threads)
    header = ["trial", "step", "w", "log_w", "jumped"] + (["rescaled"] if args.rescale else [])
    _write_csv(args.out, header, (row for part in parts for row in part))
    return 0


def cmd_kcut(args) -> int:
    solver = SurvivalSolver(args.dist)
    floor = None if args.no_rescale else args.theta_floor

    def block(rng, first, m):
        rows = []
        for j in range(m):
            run = build_kcut(solver, args.k, rng, theta_floor=floor)
            for r in run.records():
                rows.append([first + j, r.k, r.w, r.d, r.d_eff, r.h, r.m_cum, r.rescaled])
        return rows

    parts = map_blocks(block, args.seed, "cli-kcut", args.trials, _KCUT_BLOCK, args.threads)
    _write_csv(args.out, ["trial", "k", "w", "d", "d_eff", "h", "m", "rescaled"],
               (row for part in parts for row in part))
    return 0


def cmd_prim(args) -> int:
    c = prim(args.dist, args.steps, stream(args.seed, "cli-prim"))
    rows = zip(c.child, c.weight, c.parent, c.depth)
    _write_csv(args.out, ["step", "weight", "parent", "depth"], rows)
    return 0


def _regime_params(args) -> limits.RegimeParams:
    dist = args.dist or _default_dist(args.alpha)
    return limits.RegimeParams.from_dist(dist, corrected=args.corrected)


def cmd_limit(args) -> int:
    proc, a, t = args.process, args.alpha, args.t
    eps = args.eps if args.eps is not None else 0.01 * t

    def block(rng, first, m):
        rows = []
        if proc in ("alep", "glep"):
            eta = 0.0 if proc == "alep" else args.eta
            for j in range(m):
                path = limits.alep_path(alpha_hat(a), eta, eps, t, rng)
                rows += [[first + j, s, lv] for s, lv in zip(path.breakpoints, path.levels)]
        elif proc == "epdp":
            x = limits.epdp_log_sample(a, args.eta, t, rng, m)
            rows += [[first + j, v, math.exp(-v)] for j, v in enumerate(x)]
        elif proc == "cox":
            params = _regime_params(args)
            for j in range(m):
                draw = limits.cox_points(params, t, eps, rng)
                rows.append([first + j, draw.volume, draw.x.size, draw.small_mass])
        else:
            params = _regime_params(args)
            z = limits.z_process_sample(params, args.lmax, args.tol, rng, m)
            for j in range(m):
                rows += [[first + j, lvl, z.values[j, lvl]] for lvl in range(args.lmax + 1)]
        return rows

    headers = {
        "alep": ["trial", "time", "level"],
        "glep": ["trial", "time", "level"],
        "epdp": ["trial", "neg_log", "value"],
        "cox": ["trial", "volume", "points", "small_mass"],
        "z": ["trial", "l", "z"],
    }
    block_size = 256 if proc in ("cox", "alep", "glep") else 4096
    parts = map_blocks(block, args.seed, f"cli-limit-{proc}", args.trials, block_size, args.threads)
    _write_csv(args.out, headers[proc], (row for part in parts for row in part))
    return 0


def cmd_density(args) -> int:
    x = args.grid
    if args.which == "stable":
        y = limits.stable_density(args.alpha, args.c, x, skew=args.skew)
    else:
        y = limits.h_density(_regime_params(args), x, args.a)
    _write_csv(args.out, ["x", "density"], zip(x, np.atleast_1d(y)))
    return 0


def cmd_verify(args) -> int:
    names = sorted(SUITES, key=lambda n: SUITES[n][0]) if args.suite == "all" else [args.suite]
    cfg = SuiteConfig(seed=args.seed, quick=args.quick, threads=args.threads)
    reports = [r for name in names for r in run_suite(name, cfg)]
    with _open_out(args.out) as fh:
        fh.write(reports_to_json(reports, timings=args.timings))
    return 0 if verdict(reports) else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed_arg, default=DEFAULT_SEED,
                        help=f"root seed (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads; the IPCLAB_THREADS variable overrides this")
    common.add_argument("--out", default="-", help="output file (default stdout)")

    parser = argparse.ArgumentParser(prog="ipclab", description="Invasion percolation on Galton-Watson trees.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("theta", parents=[common], help="survival probability and critical constants")
    p.add_argument("--dist", type=_dist_arg, required=True, help="offspring law, e.g. zeta:alpha=2.3")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--prime", action="store_true", help="also report the derivative")
    p.add_argument("--inv", type=float, default=None, metavar="X", help="also report theta^-1(X)")
    p.set_defaults(func=cmd_theta)

    p = sub.add_parser("fmw", parents=[common], help="future-maximum-weight chains (CSV)")
    p.add_argument("--dist", type=_dist_arg, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--trials", type=_positive_int, default=1)
    p.add_argument("--rescale", action="store_true", help="add the regime-rescaled value")
    p.set_defaults(func=cmd_fmw)

    p = sub.add_parser("kcut", parents=[common], help="k-cut cluster records (CSV)")
    p.add_argument("--dist", type=_dist_arg, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--trials", type=_positive_int, default=1)
    p.add_argument("--theta-floor", type=float, default=1e-3,
                   help="survival level below which infinite-mean forests are drawn rescaled")
    p.add_argument("--no-rescale", action="store_true", help="always draw forests exactly")
    p.set_defaults(func=cmd_kcut)

    p = sub.add_parser("prim", parents=[common], help="invasion steps on one tree (CSV)")
    p.add_argument("--dist", type=_dist_arg, required=True)
    p.add_argument("--steps", type=_positive_int, required=True)
    p.set_defaults(func=cmd_prim)

    p = sub.add_parser("limit", parents=[common], help="samples of the limiting processes (CSV)")
    p.add_argument("--process", choices=["alep", "glep", "epdp", "cox", "z"], required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=None, help="lower time cutoff (default 0.01 t)")
    p.add_argument("--trials", type=_positive_int, default=1)
    p.add_argument("--dist", type=_dist_arg, default=None,
                   help="law fixing the constants of cox and z (default zeta or sibuya with this alpha)")
    p.add_argument("--corrected", action="store_true", help="explored-edge prefactor and one-sided stable law")
    p.add_argument("--lmax", type=int, default=0, help="largest index for the z process")
    p.add_argument("--tol", type=float, default=1e-6, help="truncation tolerance for the z process")
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("density", parents=[common], help="stable or forest-size density on a grid (CSV)")
    p.add_argument("--which", choices=["stable", "h"], required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0, help="stable scale")
    p.add_argument("--skew", action="store_true", help="totally skewed stable law")
    p.add_argument("--grid", type=parse_grid, required=True, help="lin:a:b:n, log:a:b:n or a comma list")
    p.add_argument("--dist", type=_dist_arg, default=None)
    p.add_argument("--corrected", action="store_true")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("verify", parents=[common], help="run verification suites (JSON)")
    p.add_argument("--suite", choices=["all", *SUITES], required=True)
    p.add_argument("--quick", action="store_true", help="reduced sample sizes")
    p.add_argument("--timings", action="store_true", help="include runtimes (breaks byte-identity)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.threads = resolve_threads(args.threads)
    try:
        return args.func(args)
    except (IpclabError, ValueError, ZeroDivisionError, OverflowError) as exc:
        if isinstance(exc, ConfigError):
            print(f"ipclab: usage error: {exc}", file=sys.stderr)
            parser.print_usage(sys.stderr)
            return 2
        print(f"ipclab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
