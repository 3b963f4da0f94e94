"""
Uniform square grids, scalar fields and bilinear interpolation stencils.

Nodes are numbered row-major with row 0 at the top of the domain and column 0
at the left, so ascending index visits the grid left to right, top to bottom.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BIG = 1.0e6

# Points escaping a cell (or the box) by less than this fraction of dx are clamped.
_SLACK = 1e-12


class StencilError(ValueError):
    """Raised when a query point is not inside the base node's neighbour cells."""


@dataclass(frozen=True)
class Grid:
    """Square lattice of ``n x n`` nodes covering ``[lower, upper]``."""

    lower: tuple[float, float]
    upper: tuple[float, float]
    n: int
    dx: float = field(init=False)

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.lower)
        up = tuple(float(v) for v in self.upper)
        if self.n < 3:
            raise ValueError(f"need at least 3 nodes per axis, got {self.n}")
        if not (up[0] > lo[0] and up[1] > lo[1]):
            raise ValueError("upper corner must exceed lower corner componentwise")
        if not np.isclose(up[0] - lo[0], up[1] - lo[1], rtol=1e-12, atol=0.0):
            raise ValueError("only square domains are supported")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "dx", (up[0] - lo[0]) / (self.n - 1))

    @property
    def num_nodes(self) -> int:
        return self.n * self.n

    @property
    def x_coords(self) -> np.ndarray:
        """Abscissa of each column."""
        return self.lower[0] + self.dx * np.arange(self.n)

    @property
    def y_coords(self) -> np.ndarray:
        """Ordinate of each row (row 0 is the top)."""
        return self.lower[1] + self.dx * np.arange(self.n - 1, -1, -1)

    def index(self, row, col):
        return np.asarray(row) * self.n + np.asarray(col)

    def rowcol(self, idx):
        return np.divmod(np.asarray(idx), self.n)

    def position(self, idx) -> np.ndarray:
        row, col = self.rowcol(idx)
        x = self.lower[0] + self.dx * col
        y = self.lower[1] + self.dx * (self.n - 1 - row)
        return np.stack([x, y], axis=-1).astype(float)

    def positions(self) -> np.ndarray:
        """All node positions, shape ``(n*n, 2)`` in node order."""
        return self.position(np.arange(self.num_nodes))

    def boundary_mask(self) -> np.ndarray:
        row, col = self.rowcol(np.arange(self.num_nodes))
        last = self.n - 1
        return (row == 0) | (row == last) | (col == 0) | (col == last)

    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask())

    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask())

    def same_box(self, other: Grid) -> bool:
        return np.allclose(self.lower, other.lower, rtol=0, atol=1e-12) and np.allclose(
            self.upper, other.upper, rtol=0, atol=1e-12
        )


def build_grid(lower, upper, n: int) -> Grid:
    return Grid(tuple(lower), tuple(upper), int(n))


@dataclass
class ScalarField:
    """Per-node real values on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.num_nodes,):
            raise ValueError(
                f"expected {self.grid.num_nodes} values, got shape {self.values.shape}"
            )

    @classmethod
    def full(cls, grid: Grid, value: float) -> ScalarField:
        return cls(grid, np.full(grid.num_nodes, float(value)))

    def as_image(self) -> np.ndarray:
        """Values reshaped to ``(n, n)`` with row 0 at the top."""
        return self.values.reshape(self.grid.n, self.grid.n)

    def copy(self) -> ScalarField:
        return ScalarField(self.grid, self.values.copy())


@dataclass(frozen=True)
class InterpStencil:
    base: int
    self_weight: float
    neighbors: tuple[tuple[int, float], tuple[int, float], tuple[int, float]]

    @property
    def nodes(self) -> tuple[int, ...]:
        return (self.base,) + tuple(i for i, _ in self.neighbors)

    @property
    def weights(self) -> tuple[float, ...]:
        return (self.self_weight,) + tuple(w for _, w in self.neighbors)


def stencil_arrays(grid: Grid, base, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised bilinear stencils anchored at ``base`` nodes.

    Returns ``(idx, w)`` of shape ``(m, 4)``; column 0 is the base node itself,
    then the horizontal, vertical and diagonal corners of the containing cell.
    Raises :class:`StencilError` if a point leaves the base node's four cells.
    """
    base = np.atleast_1d(np.asarray(base, dtype=np.int64))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape != (base.size, 2):
        raise ValueError("points must have shape (len(base), 2)")
    row, col = grid.rowcol(base)
    origin = grid.position(base)
    p = (pts[:, 0] - origin[:, 0]) / grid.dx
    q = (pts[:, 1] - origin[:, 1]) / grid.dx  # positive upwards

    ap, aq = np.abs(p), np.abs(q)
    if np.any(ap > 1 + _SLACK) or np.any(aq > 1 + _SLACK):
        bad = int(np.argmax(np.maximum(ap, aq)))
        raise StencilError(
            f"point {pts[bad]} is outside the cells around node {base[bad]} "
            f"(offset {p[bad]:.6g}, {q[bad]:.6g} cells)"
        )
    ap = np.minimum(ap, 1.0)
    aq = np.minimum(aq, 1.0)

    step_c = np.where(p >= 0, 1, -1)
    step_r = np.where(q >= 0, -1, 1)
    # A zero-weight corner may sit outside the grid; point it back at the base.
    ncol = col + step_c
    nrow = row + step_r
    ncol = np.where((ncol < 0) | (ncol >= grid.n), np.where(ap > 0, -1, col), ncol)
    nrow = np.where((nrow < 0) | (nrow >= grid.n), np.where(aq > 0, -1, row), nrow)
    if np.any(ncol < 0) or np.any(nrow < 0):
        raise StencilError("point lies outside the domain box")

    idx = np.stack(
        [base, grid.index(row, ncol), grid.index(nrow, col), grid.index(nrow, ncol)],
        axis=1,
    )
    w = np.stack(
        [(1 - ap) * (1 - aq), ap * (1 - aq), (1 - ap) * aq, ap * aq], axis=1
    )
    return idx.astype(np.int64), w


def interp_stencil(grid: Grid, base_node: int, point) -> InterpStencil:
    """Bilinear stencil of ``point`` with the weight of ``base_node`` singled out."""
    pt = np.asarray(point, dtype=float)
    lo, up = np.asarray(grid.lower), np.asarray(grid.upper)
    tol = _SLACK * grid.dx
    if np.any(pt < lo - tol) or np.any(pt > up + tol):
        raise StencilError(f"point {pt} lies outside the domain box")
    pt = np.clip(pt, lo, up)
    idx, w = stencil_arrays(grid, [base_node], pt[None, :])
    idx, w = idx[0], w[0]
    nbrs = tuple((int(i), float(x)) for i, x in zip(idx[1:], w[1:]))
    return InterpStencil(int(idx[0]), float(w[0]), nbrs)


def interp_value(field: ScalarField, stencil: InterpStencil) -> float:
    u = field.values
    return stencil.self_weight * u[stencil.base] + sum(w * u[i] for i, w in stencil.neighbors)


def _locate(coords0: float, dx: float, n: int, x: np.ndarray):
    """Cell index and fractional offset along one axis (snapped onto nodes)."""
    t = (x - coords0) / dx
    snapped = np.round(t)
    t = np.where(np.abs(t - snapped) < 1e-9, snapped, t)
    cell = np.clip(np.floor(t).astype(np.int64), 0, n - 2)
    return cell, t - cell


def prolong(coarse: ScalarField, fine_grid: Grid) -> ScalarField:
    """Bilinear interpolation of a coarse field onto every node of ``fine_grid``."""
    cg = coarse.grid
    if not cg.same_box(fine_grid):
        raise ValueError("coarse and fine grids must cover the same box")
    pos = fine_grid.positions()
    c, s = _locate(cg.lower[0], cg.dx, cg.n, pos[:, 0])
    # rows count downward from the top, so locate the height from the top edge
    r, t = _locate(-cg.upper[1], cg.dx, cg.n, -pos[:, 1])
    u = coarse.as_image()
    v = (
        (1 - s) * (1 - t) * u[r, c]
        + s * (1 - t) * u[r, c + 1]
        + (1 - s) * t * u[r + 1, c]
        + s * t * u[r + 1, c + 1]
    )
    # exact reproduction where fine and coarse nodes coincide
    on_node = ((s == 0) | (s == 1)) & ((t == 0) | (t == 1))
    v = np.where(on_node, u[r + (t == 1), c + (s == 1)], v)
    return ScalarField(fine_grid, v)


def write_field_csv(path, field: ScalarField, name: str = "u") -> None:
    pos = field.grid.positions()
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"x,y,{name}\n")
        for (x, y), v in zip(pos, field.values):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")


def read_field_csv(path, grid: Grid) -> ScalarField:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        values = [float(row[2]) for row in reader]
    return ScalarField(grid, np.array(values))
