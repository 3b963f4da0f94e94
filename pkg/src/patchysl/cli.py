"""
Command-line front end: ``patchysl {solve,regime,decompose,bench}``.

Exit codes: 0 success, 1 usage error, 2 non-convergence, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .grid import build_grid, write_field_csv
from .patchy import build_decomposition
from .problem import DIFFUSION_KINDS, PROBLEM_KEYS, builtin_problem, estimate_bounds
from .runner import INIT_POLICIES, RunConfig, RunMetrics, run_dd, run_pdd, write_metrics
from .scheme import alpha_bounds, solve_fixed_point

logger = logging.getLogger("patchysl")

EXIT_OK, EXIT_USAGE, EXIT_NOCONV, EXIT_IO = 0, 1, 2, 3
BOX = ((-1.0, -1.0), (1.0, 1.0))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- flags


def _add_problem_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", choices=PROBLEM_KEYS, default="eikonal")
    p.add_argument("--diffusion", choices=tuple(DIFFUSION_KINDS), default="iso")
    p.add_argument("--eps", type=float, default=0.0, help="diffusion coefficient")
    p.add_argument("--upper-only", action="store_true",
                   help="diffusion only where x2 >= 0")
    p.add_argument("--cost", choices=("l1", "l2", "l3"), default="l1")
    p.add_argument("--theta", type=float, default=math.pi / 4, help="Zermelo drift angle")
    p.add_argument("--eta", type=int, choices=(0, 1), default=1, help="Zermelo drift switch")
    p.add_argument("--controls", type=int, default=16, help="number of control directions")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", type=int, default=101, help="fine grid nodes per side")
    p.add_argument("--coarse", type=int, default=50, help="coarse grid nodes per side")
    p.add_argument("--patches", type=int, default=4)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--tau-p", type=float, default=0.5)
    p.add_argument("--max-iter", type=int, default=None,
                   help="sweep/round cap (default: 100 N)")
    p.add_argument("--init", choices=INIT_POLICIES, default="auto",
                   help="start value: BIG or the coarse guess (auto: dd BIG, pdd coarse)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--deterministic", dest="deterministic", action="store_true", default=True,
                      help="sweep patches one after another (default)")
    mode.add_argument("--concurrent", dest="deterministic", action="store_false",
                      help="sweep patches on a thread pool")


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ppm", action="store_true", help="also write PPM heatmaps")
    p.add_argument("--figures", type=Path, default=None, help="directory for PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patchysl", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one problem and write the field")
    _add_problem_flags(s)
    _add_run_flags(s)
    s.add_argument("--method", choices=("single", "dd", "pdd"), default="single")
    s.add_argument("--kernel", choices=("modified", "original"), default="modified")
    s.add_argument("--out", type=Path, default=Path("solution.csv"))
    s.add_argument("--metrics", type=Path, default=None)
    s.add_argument("--patch-out", type=Path, default=None,
                   help="patch map CSV for pdd (default: next to --out)")
    _add_output_flags(s)

    r = sub.add_parser("regime", help="print the time-step regime report")
    _add_problem_flags(r)
    r.add_argument("--grid", type=int, default=101)
    r.add_argument("--dx", type=float, default=None, help="grid step; overrides --grid")

    d = sub.add_parser("decompose", help="write the patchy decomposition")
    _add_problem_flags(d)
    d.add_argument("--grid", type=int, default=101)
    d.add_argument("--coarse", type=int, default=50)
    d.add_argument("--patches", type=int, default=4)
    d.add_argument("--tau-p", type=float, default=0.5)
    d.add_argument("--overlap", action="store_true")
    d.add_argument("--out", type=Path, default=Path("patches.csv"))
    _add_output_flags(d)

    b = sub.add_parser("bench", help="iteration/time table over grids x eps x methods")
    _add_problem_flags(b)
    b.add_argument("--grids", type=int, nargs="+", default=[101])
    b.add_argument("--eps-list", type=float, nargs="*", default=None, dest="eps_list")
    b.add_argument("--methods", nargs="+", choices=("dd", "pdd"), default=["pdd", "dd"])
    b.add_argument("--coarse", type=int, default=50)
    b.add_argument("--patches", type=int, default=4)
    b.add_argument("--tol", type=float, default=1e-6)
    b.add_argument("--tau-p", type=float, default=0.5)
    b.add_argument("--init", choices=INIT_POLICIES, default="auto")
    b.add_argument("--workers", type=int, default=1,
                   help="if > 1, also time a concurrent run and report the speedup")
    b.add_argument("--out", type=Path, default=Path("bench.txt"))
    b.add_argument("--csv", type=Path, default=Path("bench.csv"))
    b.add_argument("--figures", type=Path, default=None)
    return parser


# ---------------------------------------------------------------- helpers


def _problem(args, eps: float | None = None):
    return builtin_problem(args.problem, diffusion=args.diffusion,
                           eps=args.eps if eps is None else eps, upper_only=args.upper_only,
                           cost=args.cost, theta=args.theta, eta=args.eta,
                           n_controls=args.controls)


def _grid(n: int):
    if n < 3:
        raise UsageError("grid needs at least 3 nodes per side")
    return build_grid(*BOX, n)


def _config(args, method: str) -> RunConfig:
    return RunConfig(method=method, workers=args.workers, tol=args.tol,
                     deterministic=args.deterministic, kernel=getattr(args, "kernel", "modified"),
                     tau_p=args.tau_p, init=args.init, max_rounds=args.max_iter)


def _sibling(path: Path, suffix: str, ext: str) -> Path:
    return path.with_name(path.stem + suffix + ext)


def _write_labels_csv(path: Path, grid, labels) -> None:
    x = grid.positions()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "patch"])
        for (xi, yi), lab in zip(x, labels):
            w.writerow([f"{xi:.17g}", f"{yi:.17g}", int(lab)])


def _mkdir(path: Path | None) -> None:
    if path is not None:
        path.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------- commands


def cmd_solve(args) -> int:
    problem = _problem(args)
    fine = _grid(args.grid)
    dec = None
    if args.method == "single":
        t0 = time.perf_counter()
        u, stats = solve_fixed_point(problem, fine, kernel=args.kernel, tol=args.tol,
                                      max_iter=args.max_iter)
        eps = float(problem.diffusion.eps(fine.positions()).max()) if problem.diffusion.rank else 0.0
        metrics = RunMetrics("single", fine.n, fine.dx, 1, 1, stats.iterations, stats.converged,
                             0.0, time.perf_counter() - t0, eps)
    elif args.method == "dd":
        u, metrics = run_dd(problem, fine, args.patches, _config(args, "dd"))
    else:
        u, metrics, dec = run_pdd(problem, _grid(args.coarse), fine, args.patches,
                                  config=_config(args, "pdd"))

    write_field_csv(args.out, u)
    if args.metrics is not None:
        write_metrics(args.metrics, metrics)
    labels = None
    if dec is not None:
        labels = dec.label_map()
        _write_labels_csv(args.patch_out or _sibling(args.out, "_patches", ".csv"), fine, labels)
    _emit_images(args, u, labels, fine, f"{problem.name} ({args.method})")

    print(f"method = {metrics.method}")
    print(f"iterations = {metrics.iterations}")
    print(f"converged = {'true' if metrics.converged else 'false'}")
    print(f"total_seconds = {metrics.total_seconds:.6g}")
    if not metrics.converged:
        print("error: did not converge", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def _emit_images(args, u, labels, grid, title: str) -> None:
    if not (args.ppm or args.figures):
        return
    from . import plotting

    if args.ppm and u is not None:
        plotting.write_field_ppm(_sibling(args.out, "", ".ppm"), u)
    if args.ppm and labels is not None:
        plotting.write_labels_ppm(_sibling(args.out, "_patches" if u is not None else "", ".ppm"),
                                  labels, grid.n)
    if args.figures:
        _mkdir(args.figures)
        if u is not None:
            plotting.plot_field(args.figures / f"{args.out.stem}_field.png", u, title)
        if labels is not None:
            plotting.plot_patches(args.figures / f"{args.out.stem}_patches.png", labels, grid,
                                  title)


def cmd_regime(args) -> int:
    problem = _problem(args)
    if args.dx is not None:
        if not args.dx > 0:
            raise UsageError("--dx must be positive")
        n = int(round((BOX[1][0] - BOX[0][0]) / args.dx)) + 1
    else:
        n = args.grid
    grid = _grid(n)
    report = alpha_bounds(estimate_bounds(problem, grid), grid.dx)
    sys.stdout.write(f"problem = {problem.name}\ngrid_n = {grid.n}\ndx = {grid.dx:.17g}\n")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_decompose(args) -> int:
    problem = _problem(args)
    fine = _grid(args.grid)
    dec, u_hat = build_decomposition(problem, _grid(args.coarse), fine, args.patches,
                                     args.tau_p, overlap=args.overlap)
    labels = dec.label_map()
    _write_labels_csv(args.out, fine, labels)
    _emit_images(args, None, labels, fine, f"{problem.name}: {args.patches} patches")
    sizes = " ".join(str(int(s)) for s in dec.sizes())
    print(f"patches = {dec.n_patches}")
    print(f"sizes = {sizes}")
    return EXIT_OK


@dataclass
class BenchSpec:
    problem: str
    grids: list[int]
    eps: list[float]
    methods: list[str]
    patches: int = 4
    coarse: int = 50
    tol: float = 1e-6
    tau_p: float = 0.5
    init: str = "auto"
    workers: int = 1
    outputs: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.grids or not self.eps or not self.methods:
            raise UsageError("bench needs nonempty grid, eps and method lists")
        if min(self.grids) < 3:
            raise UsageError("grid sizes must be >= 3")
        if min(self.eps) < 0:
            raise UsageError("eps values must be >= 0")


BENCH_COLUMNS = ("problem", "grid_n", "dx", "eps", "method", "iterations", "converged",
                 "precompute_seconds", "solve_seconds", "total_seconds", "in_regime",
                 "eps_threshold", "speedup", "error")


def run_bench(spec: BenchSpec, args) -> list[dict]:
    """Every (grid, eps, method) cell in deterministic mode; failures are recorded, not raised."""
    rows = []
    coarse = _grid(spec.coarse)
    for n in spec.grids:
        fine = _grid(n)
        for eps in spec.eps:
            problem = _problem(args, eps)
            report = alpha_bounds(estimate_bounds(problem, fine), fine.dx)
            for method in spec.methods:
                row = dict.fromkeys(BENCH_COLUMNS, None)
                row.update(problem=spec.problem, grid_n=n, dx=fine.dx, eps=eps, method=method,
                           in_regime=report.holds, eps_threshold=report.eps_threshold, error="")
                init = "auto" if method == "dd" and spec.init == "coarse" else spec.init
                cfg = RunConfig(method=method, tol=spec.tol, tau_p=spec.tau_p, init=init)
                try:
                    m = _bench_cell(problem, coarse, fine, spec, cfg)
                    row.update(iterations=m.iterations, converged=m.converged,
                               precompute_seconds=m.precompute_seconds,
                               solve_seconds=m.solve_seconds, total_seconds=m.total_seconds)
                    if spec.workers > 1:
                        conc = RunConfig(method=method, tol=spec.tol, tau_p=spec.tau_p,
                                         init=cfg.init, workers=spec.workers,
                                         deterministic=False)
                        mc = _bench_cell(problem, coarse, fine, spec, conc)
                        row["speedup"] = m.solve_seconds / max(mc.solve_seconds, 1e-12)
                except Exception as exc:  # a failed cell is reported and the matrix goes on
                    logger.warning("cell N=%d eps=%g %s failed: %s", n, eps, method, exc)
                    row["error"] = str(exc) or type(exc).__name__
                rows.append(row)
    return rows


def _bench_cell(problem, coarse, fine, spec: BenchSpec, cfg: RunConfig) -> RunMetrics:
    if cfg.method == "dd":
        return run_dd(problem, fine, spec.patches, cfg)[1]
    return run_pdd(problem, coarse, fine, spec.patches, config=cfg)[1]


def format_bench(rows: list[dict]) -> str:
    """Aligned text table; ``*`` marks cells computed inside the regime."""
    header = ["N", "dx", "eps", "method", "iters", "pre[s]", "solve[s]", "total[s]", "regime"]
    if any(r["speedup"] is not None for r in rows):
        header.append("speedup")
    lines = [header]
    for r in rows:
        if r["error"]:
            cells = [str(r["grid_n"]), f"{r['dx']:.4g}", f"{r['eps']:.3g}", r["method"],
                     "FAILED", "", "", "", ""]
        else:
            it = f"{r['iterations']}" + ("" if r["converged"] else "!")
            cells = [str(r["grid_n"]), f"{r['dx']:.4g}", f"{r['eps']:.3g}", r["method"], it,
                     f"{r['precompute_seconds']:.3f}", f"{r['solve_seconds']:.3f}",
                     f"{r['total_seconds']:.3f}", "*" if r["in_regime"] else ""]
        if len(header) > 9:
            cells.append("" if r["speedup"] is None else f"{r['speedup']:.2f}")
        lines.append(cells)
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    out = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in lines]
    out.insert(1, "  ".join("-" * w for w in widths))
    out.append("* inside the upwind diffusion ball regime; ! not converged")
    return "\n".join(out) + "\n"


def write_bench_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else
                            f"{v:.17g}" if isinstance(v, float) else
                            str(v).lower() if isinstance(v, bool) else v)
                        for k, v in r.items()})


def cmd_bench(args) -> int:
    eps = args.eps_list if args.eps_list is not None else [args.eps]
    spec = BenchSpec(args.problem, list(args.grids), list(eps), list(args.methods), args.patches,
                     args.coarse, args.tol, args.tau_p, args.init, args.workers)
    rows = run_bench(spec, args)
    table = format_bench(rows)
    sys.stdout.write(table)
    args.out.write_text(table)
    write_bench_csv(args.csv, rows)
    if args.figures:
        from . import plotting

        _mkdir(args.figures)
        plotting.plot_bench(args.figures / f"{args.out.stem}.png", rows, spec.problem)
    if any(r["error"] for r in rows):
        return EXIT_NOCONV
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NOCONV


COMMANDS = {"solve": cmd_solve, "regime": cmd_regime, "decompose": cmd_decompose,
            "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"patchysl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"patchysl: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"patchysl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"patchysl: error: {exc}", file=sys.stderr)
        return EXIT_NOCONV


if __name__ == "__main__":
    sys.exit(main())
