"""
Controlled problems: dynamics, diffusion rows, running/exit costs, control sets.

All callables are vectorised over states: ``x`` has shape ``(m, 2)`` and a
single control ``a`` has shape ``(2,)``.  Dynamics return ``(m, 2)``, diffusion
returns ``(m, d, 2)`` (one row per Wiener component), costs return ``(m,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid

Array = np.ndarray


@dataclass(frozen=True)
class ControlSet:
    controls: Array

    def __post_init__(self) -> None:
        a = np.asarray(self.controls, dtype=float).reshape(-1, 2)
        if a.shape[0] == 0:
            raise ValueError("control set is empty")
        if len(np.unique(np.round(a, 14), axis=0)) != len(a):
            raise ValueError("control set contains duplicates")
        a.setflags(write=False)
        object.__setattr__(self, "controls", a)

    def __len__(self) -> int:
        return len(self.controls)

    def __iter__(self):
        return iter(self.controls)


def discretize_controls(n_controls: int) -> ControlSet:
    """``n_controls`` equispaced unit vectors, counter-clockwise from (1, 0)."""
    if n_controls < 1:
        raise ValueError("need at least one control")
    theta = 2 * np.pi * np.arange(n_controls) / n_controls
    pts = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    # exact cardinal directions where the trig functions round off
    pts[np.abs(pts) < 1e-15] = 0.0
    return ControlSet(pts)


# ---------------------------------------------------------------- diffusion


@dataclass(frozen=True)
class Diffusion:
    """Diffusion rows ``sigma_k(x, a)``.

    ``kind`` is ``"none"`` (no rows), ``"iso"`` (``sqrt(2 eps) e_1``,
    ``sqrt(2 eps) e_2``) or ``"control"`` (single row ``sqrt(2 eps) a``).
    """

    kind: str
    eps_fn: Callable[[Array], Array] = field(default=lambda x: np.zeros(len(x)))
    label: str = ""

    @property
    def rank(self) -> int:
        return {"none": 0, "iso": 2, "control": 1}[self.kind]

    def eps(self, x: Array) -> Array:
        e = np.broadcast_to(np.asarray(self.eps_fn(x), dtype=float), (len(x),))
        if np.any(e < 0):
            raise ValueError("diffusion coefficient must be nonnegative")
        return e

    def rows(self, x: Array, a: Array) -> Array:
        x = np.atleast_2d(x)
        m = len(x)
        if self.kind == "none":
            return np.zeros((m, 0, 2))
        amp = np.sqrt(2.0 * self.eps(x))
        if self.kind == "iso":
            out = np.zeros((m, 2, 2))
            out[:, 0, 0] = amp
            out[:, 1, 1] = amp
            return out
        return amp[:, None, None] * np.asarray(a, dtype=float)[None, None, :]


def constant_eps(eps: float) -> Callable[[Array], Array]:
    if eps < 0:
        raise ValueError("diffusion coefficient must be nonnegative")
    return lambda x: np.full(len(x), float(eps))


def upper_half_eps(eps: float = 0.1) -> Callable[[Array], Array]:
    """``eps`` on the half plane ``x2 >= 0`` and zero below."""
    if eps < 0:
        raise ValueError("diffusion coefficient must be nonnegative")
    return lambda x: np.where(np.atleast_2d(x)[:, 1] >= 0, float(eps), 0.0)


DIFFUSION_KINDS = {"none": "none", "iso": "iso", "control": "control",
                   "sigma1": "none", "sigma2": "iso", "sigma3": "control"}


def make_diffusion(kind: str, eps_fn=None) -> Diffusion:
    try:
        k = DIFFUSION_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown diffusion kind {kind!r}") from None
    if eps_fn is None or k == "none":
        return Diffusion(k, label=k)
    if not callable(eps_fn):
        eps_fn = constant_eps(float(eps_fn))
    return Diffusion(k, eps_fn, label=k)


NO_DIFFUSION = Diffusion("none", label="none")


# ---------------------------------------------------------------- costs


def _l1(x: Array, a: Array) -> Array:
    return np.ones(len(x))


def _l2(x: Array, a: Array) -> Array:
    return 1.0 + np.abs(x[:, 0] * x[:, 1])


def _l3(x: Array, a: Array) -> Array:
    return 1.0 + np.abs(x[:, 0] * x[:, 1]) + abs(a[0] / (2.0 + a[1]))


RUNNING_COSTS = {"l1": _l1, "l2": _l2, "l3": _l3}


def make_running_cost(kind: str) -> Callable[[Array, Array], Array]:
    try:
        return RUNNING_COSTS[kind]
    except KeyError:
        raise ValueError(f"unknown running cost {kind!r}") from None


def zero_exit_cost(x: Array) -> Array:
    return np.zeros(len(x))


# ---------------------------------------------------------------- problems


@dataclass(frozen=True)
class Problem:
    """A stationary exit-time control problem on a square domain.

    ``speed_bounds`` optionally carries the exact ``(f_min, f_max)`` of
    ``|f|`` over the closed domain and the control set.
    """

    name: str
    dynamics: Callable[[Array, Array], Array]
    controls: ControlSet
    diffusion: Diffusion = NO_DIFFUSION
    running_cost: Callable[[Array, Array], Array] = _l1
    exit_cost: Callable[[Array], Array] = zero_exit_cost
    speed_bounds: tuple[float, float] | None = None

    def f(self, x: Array, a: Array) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(self.dynamics(x, np.asarray(a, dtype=float)), x.shape)

    def sigma(self, x: Array, a: Array) -> Array:
        return self.diffusion.rows(np.atleast_2d(np.asarray(x, dtype=float)), a)

    def l(self, x: Array, a: Array) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(self.running_cost(x, np.asarray(a, dtype=float)), (len(x),))

    def g(self, x: Array) -> Array:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(self.exit_cost(x), (len(x),))

    def with_diffusion(self, diffusion: Diffusion) -> Problem:
        return _replace(self, diffusion=diffusion)

    def without_diffusion(self) -> Problem:
        return _replace(self, diffusion=NO_DIFFUSION)

    def with_cost(self, running_cost) -> Problem:
        return _replace(self, running_cost=running_cost)


def _replace(p: Problem, **kw) -> Problem:
    from dataclasses import replace

    return replace(p, **kw)


def make_advection(b=(1.0, 0.0), controls: ControlSet | None = None, **kw) -> Problem:
    """Transport along ``b`` with unit source: ``b . grad u = l``.

    Information travels in the direction of ``b``, so the controlled state runs
    against it: the dynamics are ``f(x, a) = -b(x)`` for every control.
    """
    controls = controls or discretize_controls(16)
    if callable(b):
        field_fn = b
        bounds = None
    else:
        vec = np.asarray(b, dtype=float)
        field_fn = lambda x: np.broadcast_to(vec, np.shape(x))  # noqa: E731
        s = float(np.hypot(*vec))
        bounds = (s, s)

    def dynamics(x, a):
        return -np.asarray(field_fn(x), dtype=float)

    return Problem("advection", dynamics, controls, speed_bounds=bounds, **kw)


def make_eikonal(c=1.0, controls: ControlSet | None = None, name="eikonal",
                 speed_bounds=None, **kw) -> Problem:
    """Isotropic front propagation ``f(x, a) = c(x) a`` with ``c > 0``."""
    controls = controls or discretize_controls(16)
    if callable(c):
        speed = c
    else:
        cval = float(c)
        if cval <= 0:
            raise ValueError("speed must be positive")
        speed = lambda x: np.full(len(x), cval)  # noqa: E731
        if speed_bounds is None:
            radii = np.hypot(controls.controls[:, 0], controls.controls[:, 1])
            speed_bounds = (cval * radii.min(), cval * radii.max())

    def dynamics(x, a):
        return speed(x)[:, None] * np.asarray(a, dtype=float)[None, :]

    return Problem(name, dynamics, controls, speed_bounds=speed_bounds, **kw)


def split_speed(x: Array) -> Array:
    """``1 + indicator(x1 >= 0)``."""
    return 1.0 + (np.atleast_2d(x)[:, 0] >= 0)


def ramp_speed(x: Array) -> Array:
    """``1 + max(x2, max(x1, 0))``."""
    x = np.atleast_2d(x)
    return 1.0 + np.maximum(x[:, 1], np.maximum(x[:, 0], 0.0))


def make_zermelo(theta: float = math.pi / 4, eta: int = 1,
                 controls: ControlSet | None = None, **kw) -> Problem:
    """Rotating outward drift damped by ``1/(1+|x|^2)`` plus a control ``eta/2 a``.

    At the origin the drift direction is taken as ``R_theta (1, 0)``.
    """
    if not 0 <= theta < math.pi / 2:
        raise ValueError("theta must lie in [0, pi/2)")
    if eta not in (0, 1):
        raise ValueError("eta must be 0 or 1")
    controls = controls or discretize_controls(16)
    ct, st = math.cos(theta), math.sin(theta)

    def dynamics(x, a):
        x = np.atleast_2d(x)
        r = np.hypot(x[:, 0], x[:, 1])
        safe = np.where(r > 0, r, 1.0)
        ux = np.where(r > 0, x[:, 0] / safe, 1.0)
        uy = np.where(r > 0, x[:, 1] / safe, 0.0)
        drift = np.stack([ct * ux - st * uy, st * ux + ct * uy], axis=1)
        damp = 1.0 / (1.0 + r * r)
        return damp[:, None] * (drift + 0.5 * eta * np.asarray(a, dtype=float)[None, :])

    # exact on [-1, 1]^2 with controls on the unit circle
    bounds = (1.0 / 6.0, 1.5) if eta == 1 else (1.0 / 3.0, 1.0)
    return Problem("zermelo", dynamics, controls, speed_bounds=bounds, **kw)


PROBLEM_KEYS = ("advection", "eikonal", "eikonal-split", "eikonal-ramp", "zermelo")


def builtin_problem(key: str, *, diffusion: str = "iso", eps: float = 0.0,
                    upper_only: bool = False, cost: str = "l1",
                    theta: float = math.pi / 4, eta: int = 1,
                    n_controls: int = 16) -> Problem:
    """Problem lookup by CLI key.

    ``upper_only`` restricts the diffusion coefficient ``eps`` to ``x2 >= 0``.
    """
    controls = discretize_controls(n_controls)
    if key == "advection":
        p = make_advection((1.0, 0.0), controls)
    elif key == "eikonal":
        p = make_eikonal(1.0, controls)
    elif key == "eikonal-split":
        p = make_eikonal(split_speed, controls, name="eikonal-split", speed_bounds=(1.0, 2.0))
    elif key == "eikonal-ramp":
        p = make_eikonal(ramp_speed, controls, name="eikonal-ramp", speed_bounds=(1.0, 2.0))
    elif key == "zermelo":
        p = make_zermelo(theta, eta, controls)
    else:
        raise ValueError(f"unknown problem {key!r}; choose from {', '.join(PROBLEM_KEYS)}")
    kind = DIFFUSION_KINDS.get(diffusion)
    if kind is None:
        raise ValueError(f"unknown diffusion {diffusion!r}")
    eps_fn = upper_half_eps(eps) if upper_only else constant_eps(eps)
    if eps == 0:
        kind = "none"
    return p.with_diffusion(make_diffusion(kind, eps_fn)).with_cost(make_running_cost(cost))


# ---------------------------------------------------------------- bounds


@dataclass(frozen=True)
class ProblemBounds:
    f_min: float
    f_max: float
    sigma_inf: float

    @property
    def degenerate(self) -> bool:
        return not self.f_min > 0

    @property
    def anisotropy(self) -> float:
        return self.f_max / self.f_min if not self.degenerate else math.nan

    @property
    def omega(self) -> float:
        if self.degenerate:
            return math.nan
        if self.sigma_inf == 0:
            return math.inf
        return self.f_min / self.sigma_inf**2


def sample_speeds(problem: Problem, grid: Grid) -> tuple[float, float, float]:
    """Extremes of ``|f|`` and of the diffusion row lengths over nodes x controls."""
    x = grid.positions()
    fmin, fmax, smax = math.inf, 0.0, 0.0
    for a in problem.controls:
        speed = np.hypot(*problem.f(x, a).T)
        fmin = min(fmin, float(speed.min()))
        fmax = max(fmax, float(speed.max()))
        rows = problem.sigma(x, a)
        if rows.size:
            smax = max(smax, float(np.sqrt((rows**2).sum(axis=-1)).max()))
    return fmin, fmax, smax


def estimate_bounds(problem: Problem, grid: Grid, analytic: bool = True) -> ProblemBounds:
    fmin, fmax, smax = sample_speeds(problem, grid)
    if analytic and problem.speed_bounds is not None:
        fmin, fmax = problem.speed_bounds
    return ProblemBounds(float(fmin), float(fmax), float(smax))
