"""
Parallel fine solves over a static (DD) or patchy (PDD) decomposition.

All patches share one solution array.  A round lets every patch sweep its own
node list once; rounds are separated by a barrier and the largest change of
the round decides convergence.  In deterministic mode the patches sweep one
after another in index order; otherwise they run on a thread pool and may see
each other's updates mid-round.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .grid import Grid, ScalarField
from .patchy import Decomposition, build_decomposition
from .problem import Problem
from .scheme import KERNELS, MAX_SWEEPS_PER_NODE, Setup, initial_field, prepare

METHODS = ("dd", "pdd")
# "auto": BIG for dd, the prolonged coarse solution for pdd
INIT_POLICIES = ("auto", "big", "coarse")


@dataclass
class RunConfig:
    method: str = "pdd"
    workers: int = 1
    tol: float = 1e-6
    deterministic: bool = True
    kernel: str = "modified"
    max_rounds: int | None = None
    tau_p: float = 0.5
    tol_c: float = 1e-6
    tol_p: float = 1e-2
    overlap: bool = False
    init: str = "auto"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")
        if self.init not in INIT_POLICIES:
            raise ValueError(f"init must be one of {INIT_POLICIES}")

    def start(self) -> str:
        """Resolved start policy, ``"big"`` or ``"coarse"``."""
        if self.init != "auto":
            return self.init
        return "coarse" if self.method == "pdd" else "big"


@dataclass
class RunMetrics:
    method: str
    grid_n: int
    dx: float
    patches: int
    workers: int
    iterations: int = 0
    converged: bool = False
    precompute_seconds: float = 0.0
    solve_seconds: float = 0.0
    eps: float | None = None
    history: list[list[float]] = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return self.precompute_seconds + self.solve_seconds

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("history")
        d["total_seconds"] = self.total_seconds
        keys = ["method", "grid_n", "dx", "eps", "patches", "workers", "iterations",
                "precompute_seconds", "solve_seconds", "total_seconds", "converged"]
        return {k: d[k] for k in keys}


def write_metrics(path, metrics: RunMetrics) -> None:
    Path(path).write_text(json.dumps(metrics.as_dict(), indent=2) + "\n")


def read_metrics(path) -> dict:
    return json.loads(Path(path).read_text())


def transmission_merge(values: np.ndarray, node: int, candidate: float) -> float:
    """Keep the smaller of the stored and the incoming value at a shared node."""
    values[node] = min(values[node], candidate)
    return values[node]


# ---------------------------------------------------------------- decompositions


def make_static_decomposition(grid: Grid, n_patches: int = 4) -> Decomposition:
    """Split the interior into ``k x k`` axis-aligned blocks (``n_patches = k^2``).

    Blocks are numbered row-major from the top-left; each block keeps the
    lexicographic node order.
    """
    k = math.isqrt(n_patches)
    if n_patches < 1 or k * k != n_patches:
        raise ValueError("static decomposition needs a perfect-square number of patches")
    inner = np.arange(1, grid.n - 1)
    if k > len(inner):
        raise ValueError("more blocks than interior rows")
    block = np.empty(grid.n, dtype=np.int64)
    for b, chunk in enumerate(np.array_split(inner, k)):
        block[chunk] = b
    block[0], block[-1] = 0, k - 1
    row, col = grid.rowcol(np.arange(grid.num_nodes))
    label = block[row] * k + block[col]
    boundary = grid.boundary_mask()
    owner = np.where(boundary, -1, label)
    orders = [np.flatnonzero(owner == p) for p in range(n_patches)]
    gamma = [np.flatnonzero(boundary & (label == p)) for p in range(n_patches)]
    return Decomposition(grid, owner, orders, gamma)


# ---------------------------------------------------------------- rounds


def _sweep_patch(u, order, setup: Setup, modified: bool, shared, stamp, rnd) -> float:
    op = setup.op
    return _kernels.gs_sweep(u, order, op.row_of, op.lam0, op.hl, op.nbr, op.w,
                             modified, shared, stamp, rnd)


def run_rounds(u: ScalarField, setup: Setup, dec: Decomposition, config: RunConfig,
               ) -> tuple[int, bool, list[list[float]]]:
    """Round-based parallel Gauss-Seidel until the round change drops below ``tol``."""
    values = u.values
    modified = config.kernel == "modified"
    shared = np.ascontiguousarray(dec.shared, dtype=np.bool_)
    stamp = np.zeros(u.grid.num_nodes, dtype=np.int64)
    orders = [np.ascontiguousarray(o, dtype=np.int64) for o in dec.orders]
    cap = config.max_rounds or MAX_SWEEPS_PER_NODE * u.grid.n
    history: list[list[float]] = []

    if config.deterministic or config.workers == 1:
        def one_round(rnd):
            return [_sweep_patch(values, o, setup, modified, shared, stamp, rnd) for o in orders]
        pool = None
    else:
        pool = ThreadPoolExecutor(max_workers=config.workers)
        groups = [list(range(w, len(orders), config.workers)) for w in range(config.workers)]

        def work(ids, rnd):
            return [(p, _sweep_patch(values, orders[p], setup, modified, shared, stamp, rnd))
                    for p in ids]

        def one_round(rnd):
            changes = [0.0] * len(orders)
            futures = [pool.submit(work, ids, rnd) for ids in groups if ids]
            for fut in futures:  # barrier
                for p, c in fut.result():
                    changes[p] = c
            return changes

    try:
        for rnd in range(1, cap + 1):
            changes = one_round(rnd)
            history.append(changes)
            if max(changes) < config.tol:
                return rnd, True, history
        return cap, False, history
    finally:
        if pool is not None:
            pool.shutdown()


def _eps_label(problem: Problem, grid: Grid) -> float:
    return float(problem.diffusion.eps(grid.positions()).max()) if problem.diffusion.rank else 0.0


def run_dd(problem: Problem, fine_grid: Grid, n_patches: int = 4,
           config: RunConfig | None = None) -> tuple[ScalarField, RunMetrics]:
    """Static blocks, lexicographic order inside each block, BIG start."""
    config = config or RunConfig(method="dd")
    if config.init == "coarse":
        raise ValueError("dd has no coarse guess; use init 'big' or 'auto'")
    t0 = time.perf_counter()
    dec = make_static_decomposition(fine_grid, n_patches)
    setup = prepare(problem, fine_grid)
    u = initial_field(problem, fine_grid)
    rounds, ok, hist = run_rounds(u, setup, dec, config)
    metrics = RunMetrics("dd", fine_grid.n, fine_grid.dx, n_patches, config.workers,
                         rounds, ok, 0.0, time.perf_counter() - t0,
                         _eps_label(problem, fine_grid), hist)
    return u, metrics


def run_pdd(problem: Problem, coarse_grid: Grid, fine_grid: Grid, n_patches: int = 4,
            tau_p: float | None = None, config: RunConfig | None = None,
            ) -> tuple[ScalarField, RunMetrics, Decomposition]:
    """Patchy decomposition, causal order inside each patch.

    Starts from the coarse guess unless ``config.init`` asks for BIG.
    """
    config = config or RunConfig(method="pdd")
    tau_p = config.tau_p if tau_p is None else tau_p
    t0 = time.perf_counter()
    dec, u_hat = build_decomposition(problem, coarse_grid, fine_grid, n_patches, tau_p,
                                     config.tol_c, config.tol_p, config.overlap)
    t1 = time.perf_counter()
    setup = prepare(problem, fine_grid)
    u = initial_field(problem, fine_grid)
    if config.init in ("auto", "coarse"):
        interior = ~fine_grid.boundary_mask()
        u.values[interior] = u_hat.values[interior]
    rounds, ok, hist = run_rounds(u, setup, dec, config)
    metrics = RunMetrics("pdd", fine_grid.n, fine_grid.dx, n_patches, config.workers,
                         rounds, ok, t1 - t0, time.perf_counter() - t1,
                         _eps_label(problem, fine_grid), hist)
    return u, metrics, dec
