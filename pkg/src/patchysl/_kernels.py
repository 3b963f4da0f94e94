"""Compiled inner loops. Array layouts are documented on ``scheme.SLOperator``."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def gs_sweep(u, order, row_of, lam0, hl, nbr, w, modified, shared, stamp, rnd):
    """In-place Gauss-Seidel pass over ``order``; returns the sup-norm change.

    Nodes flagged in ``shared`` are written with a min-merge once another
    patch has already written them during round ``rnd``.
    """
    n_controls = lam0.shape[1]
    n_terms = nbr.shape[2]
    change = 0.0
    for t in range(order.shape[0]):
        node = order[t]
        r = row_of[node]
        old = u[node]
        best = np.inf
        for a in range(n_controls):
            s = hl[r, a]
            for k in range(n_terms):
                s += w[r, a, k] * u[nbr[r, a, k]]
            if modified:
                v = s / (1.0 - lam0[r, a])
            else:
                v = s + lam0[r, a] * old
            if v < best:
                best = v
        if shared[node]:
            if stamp[node] == rnd:
                best = min(best, old)
            stamp[node] = rnd
        d = abs(best - old)
        if d > change:
            change = d
        u[node] = best
    return change


@njit(nogil=True, cache=True)
def node_update(u, r, node, lam0, hl, nbr, w, modified):
    """Value and argmin control for one node (no write)."""
    n_controls = lam0.shape[1]
    best = np.inf
    arg = -1
    for a in range(n_controls):
        s = hl[r, a]
        for k in range(nbr.shape[2]):
            s += w[r, a, k] * u[nbr[r, a, k]]
        if modified:
            v = s / (1.0 - lam0[r, a])
        else:
            v = s + lam0[r, a] * u[node]
        if v < best:
            best = v
            arg = a
    return best, arg


@njit(nogil=True, cache=True)
def feedback_argmin(u, nodes, lam0, hl, nbr, w, rtol):
    """Per-node argmin of the one-step cost; near ties go to the lowest index."""
    m = nodes.shape[0]
    out = np.empty(m, dtype=np.int64)
    for r in range(m):
        node = nodes[r]
        best = 0.0
        arg = -1
        for a in range(lam0.shape[1]):
            v = hl[r, a] + lam0[r, a] * u[node]
            for k in range(nbr.shape[2]):
                v += w[r, a, k] * u[nbr[r, a, k]]
            if arg < 0 or v < best - rtol * max(1.0, abs(best)):
                best = v
                arg = a
        out[r] = arg
    return out


@njit(nogil=True, cache=True)
def linear_sweep(phi, order, row_of, lam0, nbr, w):
    """Gauss-Seidel pass of ``phi = sum_k w_k phi_k / (1 - lam0)`` (one control per row)."""
    change = 0.0
    for t in range(order.shape[0]):
        node = order[t]
        r = row_of[node]
        s = 0.0
        for k in range(nbr.shape[1]):
            s += w[r, k] * phi[nbr[r, k]]
        v = s / (1.0 - lam0[r])
        d = abs(v - phi[node])
        if d > change:
            change = d
        phi[node] = v
    return change
