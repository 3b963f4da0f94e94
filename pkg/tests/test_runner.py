from __future__ import annotations

import numpy as np
import pytest

from patchysl.grid import BIG, build_grid
from patchysl.problem import builtin_problem
from patchysl.runner import (
    RunConfig,
    make_static_decomposition,
    read_metrics,
    run_dd,
    run_pdd,
    transmission_merge,
    write_metrics,
)
from patchysl.scheme import solve_fixed_point

BOX = ((-1.0, -1.0), (1.0, 1.0))
TOL = 1e-6


def test_static_quadrants():
    g = build_grid(*BOX, 101)
    dec = make_static_decomposition(g, 4)
    sizes = sorted(dec.sizes().tolist())
    assert sizes == [49 * 49, 49 * 50, 49 * 50, 50 * 50]
    assert dec.sizes().sum() == 99 * 99
    # each block keeps lexicographic order
    for order in dec.orders:
        assert np.all(np.diff(order) > 0)
    assert make_static_decomposition(g, 9).n_patches == 9
    assert make_static_decomposition(g, 1).sizes().tolist() == [99 * 99]
    with pytest.raises(ValueError):
        make_static_decomposition(g, 3)


def test_transmission_merge():
    v = np.array([2.0, 1.0, BIG])
    assert transmission_merge(v, 0, 1.5) == 1.5
    assert transmission_merge(v, 1, 1.0) == 1.0
    assert transmission_merge(v, 2, 7.0) == 7.0


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(workers=0)
    with pytest.raises(ValueError):
        RunConfig(tol=0)
    with pytest.raises(ValueError):
        RunConfig(method="xx")
    with pytest.raises(ValueError):
        RunConfig(init="warm")
    assert RunConfig(method="dd").start() == "big"
    assert RunConfig(method="pdd").start() == "coarse"


def test_single_patch_dd_matches_direct_solve():
    g = build_grid(*BOX, 41)
    p = builtin_problem("eikonal", eps=1e-3)
    u, m = run_dd(p, g, 1, RunConfig(method="dd"))
    ref, stats = solve_fixed_point(p, g)
    assert np.array_equal(u.values, ref.values)
    assert m.iterations == stats.iterations


def test_single_patch_pdd_same_fixed_point():
    g = build_grid(*BOX, 41)
    p = builtin_problem("zermelo", eps=1e-3)
    u_dd, _ = run_dd(p, g, 1)
    u_pdd, m, _ = run_pdd(p, build_grid(*BOX, 21), g, 1)
    assert m.converged
    assert np.max(np.abs(u_dd.values - u_pdd.values)) <= 20 * TOL


@pytest.mark.parametrize("key", ["advection", "eikonal", "eikonal-split", "zermelo"])
@pytest.mark.parametrize("eps", [0.0, 1e-3, 1e-2])
def test_dd_pdd_agree(key, eps):
    g, c = build_grid(*BOX, 61), build_grid(*BOX, 30)
    p = builtin_problem(key, eps=eps)
    u_dd, m_dd = run_dd(p, g)
    u_pdd, m_pdd, _ = run_pdd(p, c, g)
    assert m_dd.converged and m_pdd.converged
    assert np.max(np.abs(u_dd.values - u_pdd.values)) <= 20 * TOL
    bnd = g.boundary_nodes()
    assert np.array_equal(u_pdd.values[bnd], p.g(g.position(bnd)))


def test_determinism():
    g, c = build_grid(*BOX, 51), build_grid(*BOX, 25)
    p = builtin_problem("eikonal", eps=1e-3)
    a, ma, _ = run_pdd(p, c, g)
    b, mb, _ = run_pdd(p, c, g)
    assert np.array_equal(a.values, b.values) and ma.iterations == mb.iterations


def test_big_start_for_pdd():
    g, c = build_grid(*BOX, 51), build_grid(*BOX, 25)
    p = builtin_problem("eikonal", eps=1e-3)
    hat, m_hat, _ = run_pdd(p, c, g)
    big, m_big, _ = run_pdd(p, c, g, config=RunConfig(init="big"))
    assert np.max(np.abs(hat.values - big.values)) <= 20 * TOL
    assert m_big.iterations >= m_hat.iterations
    with pytest.raises(ValueError):
        run_dd(p, g, 4, RunConfig(method="dd", init="coarse"))


def test_concurrent_rounds_converge():
    g, c = build_grid(*BOX, 51), build_grid(*BOX, 25)
    p = builtin_problem("eikonal", eps=1e-3)
    det, _, _ = run_pdd(p, c, g)
    conc, m, _ = run_pdd(p, c, g, config=RunConfig(workers=4, deterministic=False))
    assert m.converged and m.workers == 4
    assert np.max(np.abs(det.values - conc.values)) <= 20 * TOL


def test_round_cap_reports_non_convergence():
    g = build_grid(*BOX, 41)
    _, m = run_dd(builtin_problem("eikonal"), g, 4, RunConfig(method="dd", max_rounds=2))
    assert not m.converged and m.iterations == 2


def test_metrics_round_trip(tmp_path):
    g, c = build_grid(*BOX, 31), build_grid(*BOX, 16)
    _, m, _ = run_pdd(builtin_problem("eikonal", eps=1e-3), c, g)
    path = tmp_path / "m.json"
    write_metrics(path, m)
    d = read_metrics(path)
    assert list(d) == ["method", "grid_n", "dx", "eps", "patches", "workers", "iterations",
                       "precompute_seconds", "solve_seconds", "total_seconds", "converged"]
    assert d["iterations"] >= 1 and d["precompute_seconds"] > 0
    assert d["total_seconds"] == pytest.approx(d["precompute_seconds"] + d["solve_seconds"])
    assert d["eps"] == 1e-3
    assert len(m.history) == m.iterations and len(m.history[0]) == 4
