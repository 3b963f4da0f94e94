"""
Semi-Lagrangian value iteration for exit-time HJB problems with diffusion.

Each interior node ``x_i`` looks at the ``2d`` points

    x_i + h f(x_i, a) +/- sqrt(h) sigma_k(x_i, a),      k = 1..d

and averages the bilinear reconstruction of ``u`` there.  Because the time
step keeps every point inside the cells around ``x_i``, each reconstruction
carries a weight on ``u(x_i)`` itself.  Collecting those weights into
``lam0(a)`` and everything else (plus ``h l``) into ``rest(a)``, the update

    u_i = min_a  lam0(a) u_i + rest(a)                       ("original")

has the same fixed point as the explicit form

    u_i = min_a  rest(a) / (1 - lam0(a))                     ("modified")

which no longer reads ``u_i`` and so propagates information in a single pass
when nodes are visited in causal order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grid import BIG, Grid, InterpStencil, ScalarField, interp_stencil, stencil_arrays
from .problem import Problem, ProblemBounds, estimate_bounds

KERNELS = ("original", "modified")

# outside the regime alpha sits at the midpoint of the admissible interval (0, alpha_upper)
OVER_THRESHOLD_FACTOR = 0.5

# default sweep cap is this many sweeps per grid node along an axis; small time
# steps (strong diffusion) need far more sweeps than the hyperbolic regime
MAX_SWEEPS_PER_NODE = 100


# ---------------------------------------------------------------- time step


@dataclass(frozen=True)
class RegimeReport:
    bounds: ProblemBounds
    dx: float
    alpha_lower: float
    alpha_upper: float
    tau_dx: float
    holds: bool
    alpha: float

    @property
    def h(self) -> float:
        return self.alpha * self.dx / self.bounds.f_min

    @property
    def eps_threshold(self) -> float:
        """Largest ``eps`` with ``|sigma| = sqrt(2 eps)`` still inside the regime."""
        return 0.5 * self.bounds.f_min * self.tau_dx

    def as_dict(self) -> dict:
        b = self.bounds
        return {
            "f_min": b.f_min,
            "f_max": b.f_max,
            "sigma_inf": b.sigma_inf,
            "Upsilon": b.anisotropy,
            "omega": b.omega,
            "alpha_lower": self.alpha_lower,
            "alpha_upper": self.alpha_upper,
            "tau_dx": self.tau_dx,
            "eps_threshold": self.eps_threshold,
            "holds": self.holds,
            "alpha": self.alpha,
            "h": self.h,
        }

    def to_text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            else:
                v = f"{v:.17g}"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def alpha_bounds(bounds: ProblemBounds, dx: float) -> RegimeReport:
    """Admissible range of ``alpha`` in ``h = alpha dx / f_min``.

    Below ``alpha_lower`` the diffusion ball reaches downwind of the drift;
    above ``alpha_upper`` the stencil leaves the first neighbouring cells.
    """
    if bounds.degenerate:
        raise ValueError("f_min = 0: the dynamics vanish somewhere, no admissible time step")
    if dx <= 0:
        raise ValueError("dx must be positive")
    ups = bounds.anisotropy
    omega = bounds.omega
    inv_omega = 0.0 if math.isinf(omega) else 1.0 / omega
    lower = inv_omega / dx
    if inv_omega == 0.0:
        upper = 1.0 / ups
    else:
        root = math.sqrt(1.0 + 4.0 * omega * dx * ups)
        upper = (root - 1.0) / ((root + 1.0) * ups)
    tau = dx / (1.0 + ups)
    holds = inv_omega < tau
    alpha = 1.0 / (1.0 + ups) if holds else OVER_THRESHOLD_FACTOR * upper
    return RegimeReport(bounds, dx, lower, upper, tau, holds, alpha)


@dataclass(frozen=True)
class TimeStep:
    h: float
    alpha: float
    policy: str  # "regime" or "safe-upper-bound"


def upper_bound_margin(bounds: ProblemBounds, h: float, dx: float) -> float:
    """``dx - (h f_max + sqrt(h) |sigma|)``; positive keeps stencils local."""
    return dx - (h * bounds.f_max + math.sqrt(h) * bounds.sigma_inf)


def choose_time_step(bounds: ProblemBounds, dx: float) -> TimeStep:
    rep = alpha_bounds(bounds, dx)
    h = rep.alpha * dx / bounds.f_min
    if not (rep.alpha > 0 and upper_bound_margin(bounds, h, dx) > 0):
        raise ValueError("no positive time step keeps the stencil in the neighbouring cells")
    return TimeStep(h, rep.alpha, "regime" if rep.holds else "safe-upper-bound")


def first_order_step(bounds: ProblemBounds, dx: float) -> float:
    """Time step of the diffusion-free scheme, ``dx / ((1 + Upsilon) f_min)``."""
    nodiff = ProblemBounds(bounds.f_min, bounds.f_max, 0.0)
    return choose_time_step(nodiff, dx).h


# ---------------------------------------------------------------- successor points


def _successors(problem: Problem, h: float, x: np.ndarray, a: np.ndarray) -> list[np.ndarray]:
    """Successor points for states ``x`` (m, 2) under control ``a``: list of (m, 2)."""
    drift = x + h * problem.f(x, a)
    rows = problem.sigma(x, a)
    if rows.shape[1] == 0:
        return [drift]
    sq = math.sqrt(h)
    pts = []
    for k in range(rows.shape[1]):
        for s in (1.0, -1.0):
            pts.append(drift + s * sq * rows[:, k, :])
    return pts


def successor_points(problem: Problem, grid: Grid, h: float, node: int,
                     control: int) -> list[tuple[np.ndarray, InterpStencil]]:
    x = grid.position(node)[None, :]
    a = problem.controls.controls[control]
    return [(p[0], interp_stencil(grid, node, p[0])) for p in _successors(problem, h, x, a)]


def _check_interior(grid: Grid, node: int) -> None:
    if grid.boundary_mask()[node]:
        raise ValueError(f"node {node} is on the boundary; it holds the exit cost")


def _split_weights(field: ScalarField, problem: Problem, h: float, node: int):
    """``(lam0, rest)`` per control for one node, straight from the stencils."""
    grid = field.grid
    x = grid.position(node)[None, :]
    u = field.values
    out = []
    for c, a in enumerate(problem.controls):
        pts = successor_points(problem, grid, h, node, c)
        m = len(pts)
        lam0 = sum(st.self_weight for _, st in pts) / m
        rest = sum(wt * u[i] for _, st in pts for i, wt in st.neighbors) / m
        rest += h * float(problem.l(x, a)[0])
        out.append((lam0, rest))
    return out


def node_value_original(field: ScalarField, problem: Problem, h: float, node: int) -> float:
    _check_interior(field.grid, node)
    u0 = field.values[node]
    return min(lam0 * u0 + rest for lam0, rest in _split_weights(field, problem, h, node))


def node_value_modified(field: ScalarField, problem: Problem, h: float,
                        node: int) -> tuple[float, int]:
    """Self-dependency-free update and the index of the minimising control."""
    _check_interior(field.grid, node)
    best, arg = math.inf, -1
    for c, (lam0, rest) in enumerate(_split_weights(field, problem, h, node)):
        if lam0 >= 1 - 1e-12:
            raise ValueError(f"self weight {lam0} at node {node}: degenerate stencil or h = 0")
        v = rest / (1 - lam0)
        if v < best:
            best, arg = v, c
    return best, arg


# ---------------------------------------------------------------- compiled operator


@dataclass
class SLOperator:
    """Precomputed stencils of the scheme on a grid for a fixed time step.

    For interior row ``r`` (node ``nodes[r]``) and control ``a``:
    ``lam0[r, a]`` is the averaged self weight, ``hl[r, a] = h l(x, a)`` and
    ``nbr[r, a, :]`` / ``w[r, a, :]`` the other stencil nodes with weights
    already divided by the number of successor points.
    """

    grid: Grid
    h: float
    nodes: np.ndarray
    row_of: np.ndarray
    lam0: np.ndarray
    hl: np.ndarray
    nbr: np.ndarray
    w: np.ndarray

    @property
    def n_controls(self) -> int:
        return self.lam0.shape[1]


def build_operator(problem: Problem, grid: Grid, h: float,
                   nodes: np.ndarray | None = None) -> SLOperator:
    nodes = grid.interior_nodes() if nodes is None else np.asarray(nodes, dtype=np.int64)
    x = grid.position(nodes)
    m, na = len(nodes), len(problem.controls)
    lam0 = np.zeros((m, na))
    hl = np.zeros((m, na))
    per_control = []
    for c, a in enumerate(problem.controls):
        pts = _successors(problem, h, x, a)
        idx_list, w_list = [], []
        for p in pts:
            idx, wt = stencil_arrays(grid, nodes, p)
            lam0[:, c] += wt[:, 0] / len(pts)
            idx_list.append(idx[:, 1:])
            w_list.append(wt[:, 1:] / len(pts))
        hl[:, c] = h * problem.l(x, a)
        per_control.append((np.concatenate(idx_list, axis=1), np.concatenate(w_list, axis=1)))
    n_terms = max(i.shape[1] for i, _ in per_control)
    nbr = np.zeros((m, na, n_terms), dtype=np.int64)
    w = np.zeros((m, na, n_terms))
    for c, (i, wt) in enumerate(per_control):
        nbr[:, c, : i.shape[1]] = i
        w[:, c, : wt.shape[1]] = wt
        # padding entries point at the node itself with zero weight
        nbr[:, c, i.shape[1]:] = nodes[:, None]
    row_of = np.full(grid.num_nodes, -1, dtype=np.int64)
    row_of[nodes] = np.arange(m)
    if np.any(lam0 >= 1 - 1e-12):
        raise ValueError("degenerate stencil: self weight reaches 1 (h too small?)")
    return SLOperator(grid, h, nodes, row_of, lam0, hl, nbr, w)


# ---------------------------------------------------------------- sweeping


def default_order(grid: Grid) -> np.ndarray:
    """Interior nodes left to right, top to bottom."""
    return grid.interior_nodes()


def initial_field(problem: Problem, grid: Grid, fill: float = BIG) -> ScalarField:
    u = np.full(grid.num_nodes, float(fill))
    b = grid.boundary_nodes()
    u[b] = problem.g(grid.position(b))
    return ScalarField(grid, u)


_NO_SHARED: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _no_shared(n: int):
    if n not in _NO_SHARED:
        _NO_SHARED[n] = (np.zeros(n, dtype=np.bool_), np.zeros(n, dtype=np.int64))
    return _NO_SHARED[n]


def sweep(field: ScalarField, op: SLOperator, order: np.ndarray, kernel: str = "modified") -> float:
    """One in-place Gauss-Seidel pass; returns ``max |new - old|``."""
    if kernel not in KERNELS:
        raise ValueError(f"kernel must be one of {KERNELS}")
    shared, stamp = _no_shared(field.grid.num_nodes)
    return _kernels.gs_sweep(field.values, np.asarray(order, dtype=np.int64), op.row_of,
                             op.lam0, op.hl, op.nbr, op.w, kernel == "modified",
                             shared, stamp, 0)


@dataclass
class SolveStats:
    iterations: int
    residual: float
    converged: bool
    history: list[float] = field(default_factory=list)


@dataclass
class Setup:
    """Everything derived from a problem and a grid before sweeping."""

    problem: Problem
    grid: Grid
    bounds: ProblemBounds
    regime: RegimeReport
    step: TimeStep
    op: SLOperator


def prepare(problem: Problem, grid: Grid, h: float | None = None) -> Setup:
    bounds = estimate_bounds(problem, grid)
    regime = alpha_bounds(bounds, grid.dx)
    if h is None:
        step = choose_time_step(bounds, grid.dx)
    else:
        step = TimeStep(h, h * bounds.f_min / grid.dx, "user")
    if upper_bound_margin(bounds, step.h, grid.dx) <= 0:
        raise ValueError("time step violates h f_max + sqrt(h) |sigma| < dx")
    return Setup(problem, grid, bounds, regime, step, build_operator(problem, grid, step.h))


def solve_fixed_point(problem: Problem, grid: Grid, order=None, kernel: str = "modified",
                      tol: float = 1e-6, init: ScalarField | None = None,
                      max_iter: int | None = None, setup: Setup | None = None,
                      ) -> tuple[ScalarField, SolveStats]:
    """Sweep until the sup-norm change drops below ``tol``.

    The sweep that detects convergence is counted.  Boundary nodes are reset
    to the exit cost before the first sweep.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    setup = setup or prepare(problem, grid)
    order = default_order(grid) if order is None else np.asarray(order, dtype=np.int64)
    max_iter = max_iter or MAX_SWEEPS_PER_NODE * grid.n
    u = initial_field(problem, grid)
    if init is not None:
        interior = ~grid.boundary_mask()
        u.values[interior] = init.values[interior]
    history = []
    for it in range(1, max_iter + 1):
        change = sweep(u, setup.op, order, kernel)
        history.append(change)
        if change < tol:
            return u, SolveStats(it, change, True, history)
    return u, SolveStats(max_iter, history[-1], False, history)
