"""
Dynamic ("patchy") domain decomposition driven by the optimal feedback.

A cheap coarse solve without diffusion is prolonged to the fine grid, the
feedback control is synthesised from it, and each boundary piece grows its
patch by advecting its indicator function along the optimal drift.  Patches
are then thresholded into a partition and each one is ordered by increasing
coarse value so that sweeps follow the flow of information.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grid import Grid, ScalarField, prolong
from .problem import Problem, estimate_bounds
from .scheme import (
    SLOperator,
    build_operator,
    default_order,
    first_order_step,
    solve_fixed_point,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeedbackControl:
    """Index of the optimal control at every interior node (``-1`` on the boundary)."""

    grid: Grid
    index: np.ndarray


@dataclass(frozen=True)
class BoundarySplit:
    pieces: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.pieces)

    def labels(self, grid: Grid) -> np.ndarray:
        lab = np.full(grid.num_nodes, -1, dtype=np.int64)
        for p, nodes in enumerate(self.pieces):
            lab[nodes] = p
        return lab


@dataclass
class Decomposition:
    """Ownership of the interior nodes and the per-patch sweep orders.

    ``owner`` holds the patch id of every interior node (``-1`` on the
    boundary).  ``orders[p]`` lists the nodes patch ``p`` sweeps, in order;
    with overlap a node may appear in several lists and is then flagged in
    ``shared``.
    """

    grid: Grid
    owner: np.ndarray
    orders: list[np.ndarray]
    gamma: list[np.ndarray]
    shared: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.shared is None:
            self.shared = np.zeros(self.grid.num_nodes, dtype=np.bool_)

    @property
    def n_patches(self) -> int:
        return len(self.orders)

    def sizes(self) -> np.ndarray:
        interior = self.owner[self.owner >= 0]
        return np.bincount(interior, minlength=self.n_patches)

    def label_map(self) -> np.ndarray:
        """Patch id per node; boundary nodes take the id of their boundary piece."""
        lab = self.owner.copy()
        for p, nodes in enumerate(self.gamma):
            lab[nodes] = p
        return lab


# ---------------------------------------------------------------- pipeline steps


def coarse_solve(problem: Problem, coarse_grid: Grid, tol_c: float = 1e-6,
                 max_iter: int | None = None) -> ScalarField:
    """Diffusion-free value function on the coarse grid (default order, BIG start)."""
    u, stats = solve_fixed_point(problem.without_diffusion(), coarse_grid, tol=tol_c,
                                 max_iter=max_iter)
    if not stats.converged:
        raise RuntimeError(f"coarse solve did not converge in {stats.iterations} sweeps")
    return u


def _first_order_operator(problem: Problem, grid: Grid, h: float | None) -> SLOperator:
    nodiff = problem.without_diffusion()
    if h is None:
        h = first_order_step(estimate_bounds(nodiff, grid), grid.dx)
    return build_operator(nodiff, grid, h)


def synthesize_feedback(u_hat: ScalarField, problem: Problem, h: float | None = None,
                        op: SLOperator | None = None) -> FeedbackControl:
    """Argmin over controls of ``u_hat(x + h f(x, a)) + h l(x, a)``.

    ``h`` defaults to the diffusion-free time step of the grid.
    """
    grid = u_hat.grid
    op = op or _first_order_operator(problem, grid, h)
    arg = _kernels.feedback_argmin(u_hat.values, op.nodes, op.lam0, op.hl, op.nbr, op.w, 1e-12)
    index = np.full(grid.num_nodes, -1, dtype=np.int64)
    index[op.nodes] = arg
    return FeedbackControl(grid, index)


def boundary_walk(grid: Grid) -> np.ndarray:
    """Boundary nodes counter-clockwise, starting just after the bottom-left corner.

    Sides come in the order bottom, right, top, left; each corner closes the
    side that precedes it in the walk.
    """
    n, last = grid.n, grid.n - 1
    k = np.arange(1, n)
    bottom = grid.index(np.full(last, last), k)
    right = grid.index(last - k, np.full(last, last))
    top = grid.index(np.zeros(last, dtype=int), last - k)
    left = grid.index(k, np.zeros(last, dtype=int))
    walk = np.concatenate([bottom, right, top, left]).astype(np.int64)
    assert len(walk) == 4 * (n - 1)
    return walk


def split_boundary(grid: Grid, n_patches: int) -> BoundarySplit:
    """Contiguous equal arcs of the boundary walk; four pieces are the four sides."""
    walk = boundary_walk(grid)
    if n_patches < 1 or n_patches > len(walk):
        raise ValueError(f"cannot split {len(walk)} boundary nodes into {n_patches} pieces")
    return BoundarySplit(tuple(np.array_split(walk, n_patches)))


def grow_patch(feedback: FeedbackControl, problem: Problem, gamma: np.ndarray,
               tol_p: float = 1e-2, h: float | None = None,
               max_iter: int | None = None, op: SLOperator | None = None) -> ScalarField:
    """Advect the indicator of ``gamma`` along the optimal drift.

    The fixed point is computed in its self-dependency-free form, which has the
    same solution as ``phi(x) = phi(x + h f(x, a*(x)))``.
    """
    grid = feedback.grid
    op = _feedback_tables(feedback, op or _first_order_operator(problem, grid, h))
    phi = np.zeros(grid.num_nodes)
    phi[np.asarray(gamma, dtype=np.int64)] = 1.0
    order = default_order(grid)
    lam0, nbr, w = op
    max_iter = max_iter or 10 * grid.n
    rows = np.full(grid.num_nodes, -1, dtype=np.int64)
    rows[order] = np.arange(len(order))
    for _ in range(max_iter):
        if _kernels.linear_sweep(phi, order, rows, lam0, nbr, w) < tol_p:
            return ScalarField(grid, np.clip(phi, 0.0, 1.0))
    raise RuntimeError("patch growth did not converge")


def _feedback_tables(feedback: FeedbackControl, op: SLOperator):
    """Stencil tables restricted to the feedback control of each node."""
    sel = feedback.index[op.nodes]
    r = np.arange(len(op.nodes))
    return op.lam0[r, sel], op.nbr[r, sel], op.w[r, sel]


def assign_patches(phis, tau_p: float = 0.5, overlap: bool = False):
    """Threshold the patch indicators into an ownership map.

    Returns ``(owner, members)``: ``owner`` is the winning patch per node and
    ``members`` a boolean ``(n_patches, n_nodes)`` matrix of patch membership
    (only the owner unless ``overlap`` is on).
    """
    if not 0 < tau_p < 1:
        raise ValueError("tau_p must lie in (0, 1)")
    phi = np.vstack([np.asarray(p.values if isinstance(p, ScalarField) else p, dtype=float)
                     for p in phis])
    candidate = phi >= tau_p
    masked = np.where(candidate, phi, -np.inf)
    owner = np.where(candidate.any(axis=0), masked.argmax(axis=0), phi.argmax(axis=0))
    dead = ~(phi > 0).any(axis=0)
    if dead.any():
        warnings.warn(f"{int(dead.sum())} nodes are unreached by every patch", RuntimeWarning,
                      stacklevel=2)
    members = np.zeros_like(candidate)
    members[owner, np.arange(phi.shape[1])] = True
    if overlap:
        members |= candidate
    return owner, members


def _nearest_piece(grid: Grid, split: BoundarySplit, nodes: np.ndarray) -> np.ndarray:
    bpos = [grid.position(g) for g in split.pieces]
    x = grid.position(nodes)
    dist = np.stack([np.min(np.linalg.norm(x[:, None, :] - b[None, :, :], axis=-1), axis=1)
                     for b in bpos])
    return dist.argmin(axis=0)


def build_decomposition(problem: Problem, coarse_grid: Grid, fine_grid: Grid,
                        n_patches: int = 4, tau_p: float = 0.5, tol_c: float = 1e-6,
                        tol_p: float = 1e-2, overlap: bool = False,
                        ) -> tuple[Decomposition, ScalarField]:
    """Full pre-computation: coarse solve to per-patch causal orders.

    Returns the decomposition and the prolonged coarse solution ``u_hat``.
    """
    u_c = coarse_solve(problem, coarse_grid, tol_c)
    u_hat = prolong(u_c, fine_grid)
    bnd = fine_grid.boundary_nodes()
    u_hat.values[bnd] = problem.g(fine_grid.position(bnd))

    op = _first_order_operator(problem, fine_grid, None)
    feedback = synthesize_feedback(u_hat, problem, op=op)
    split = split_boundary(fine_grid, n_patches)
    interior = fine_grid.interior_nodes()
    if n_patches == 1:
        owner_i = np.zeros(len(interior), dtype=np.int64)
        members = np.ones((1, len(interior)), dtype=bool)
    else:
        phis = [grow_patch(feedback, problem, g, tol_p, op=op).values[interior]
                for g in split.pieces]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            owner_i, members = assign_patches(phis, tau_p, overlap)
        if caught:
            dead = ~(np.vstack(phis) > 0).any(axis=0)
            owner_i[dead] = _nearest_piece(fine_grid, split, interior[dead])
            logger.warning("assigned %d unreached nodes to the nearest boundary piece",
                           int(dead.sum()))
    owner = np.full(fine_grid.num_nodes, -1, dtype=np.int64)
    owner[interior] = owner_i
    orders = []
    for p in range(n_patches):
        nodes = interior[members[p]]
        orders.append(nodes[np.lexsort((nodes, u_hat.values[nodes]))])
    shared = np.zeros(fine_grid.num_nodes, dtype=np.bool_)
    shared[interior] = members.sum(axis=0) > 1
    return Decomposition(fine_grid, owner, orders, list(split.pieces), shared), u_hat


def nearest_side_labels(grid: Grid) -> np.ndarray:
    """Reference partition of ``[-1,1]^2``-like boxes by nearest side (bottom, right, top, left).

    Ties go to the lowest side index.
    """
    x = grid.positions()
    lo, up = grid.lower, grid.upper
    d = np.stack([x[:, 1] - lo[1], up[0] - x[:, 0], up[1] - x[:, 1], x[:, 0] - lo[0]])
    return d.argmin(axis=0)
