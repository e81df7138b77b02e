"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal
summary) or directly as ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import math
import time
from functools import lru_cache

import numpy as np
import pytest

from tfac.cli import make_grid, run_phase_field, scheme_config
from tfac.config import RunConfig
from tfac.frackernel import build_soe, direct_kernel_matrix, fast_kernel_matrix, omega
from tfac.mesh import TimeMesh, graded_mesh
from tfac.schemes import SchemeConfig, make_manufactured_source, march
from tfac.spatial import Grid2D
from tfac.verify import (
    convergence_mesh,
    energy_monitor,
    gronwall_suite,
    max_principle_monitor,
    run_manufactured,
    singularity_probe,
    soe_scan,
    theoretical_rate,
)

RESULTS: list[str] = []

# printed (error, order) columns, N = 64, 128, 256, 512
TABLE1 = {
    1.25: ([3.57e-3, 1.83e-3, 9.18e-4, 4.59e-4], [0.91, 1.04, 0.97]),
    1.5: ([2.65e-3, 1.24e-3, 5.68e-4, 2.59e-4], [1.15, 1.17, 1.17]),
    2.0: ([2.33e-3, 9.79e-4, 4.32e-4, 1.94e-4], [1.07, 1.18, 1.19]),
}
ORDER_TOL = 0.2
ERROR_FACTOR = 3.0
TABLE1_BUDGET = 300.0  # seconds
MP_SLACK = 1e-12
FAST_DIRECT_TOL = 1e5 * 1e-12
SOE_CASES = [(0.5, 1e-12, 1e-6, 1.0), (0.8, 1e-12, 1e-7, 100.0)]
EXACT_TOL = 1e-12
SLOPE_TOL = 0.1
ENERGY_TOL = 1e-10
BUBBLE_ALPHAS = (0.4, 0.7, 0.9)


def report(num: int, ok: bool, text: str) -> None:
    RESULTS.append(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {text}")


def _orders_text(table) -> str:
    return "; ".join(f"g={g:g}: " + ",".join(f"{o:.2f}" for o in orders) for g, (_, orders) in table.items())


@lru_cache(maxsize=None)
def convergence(experiment: str):
    """{gamma: (errors, orders)} and wall time for a preset table."""
    cfg = RunConfig.resolve("convergence", overrides={"experiment": experiment})
    sc = scheme_config(cfg)
    t0 = time.perf_counter()
    out = {}
    for g in cfg["gammas"]:
        errs, taus = [], []
        for N in cfg["Ns"]:
            mesh = convergence_mesh(N, g, cfg["T"], seed=(cfg["mesh.seed"], N))
            err, _ = run_manufactured(sc, cfg["sigma"], cfg["grid.M"], mesh)
            errs.append(err)
            taus.append(mesh.tau_max)
        orders = [math.log(errs[i - 1] / errs[i]) / math.log(taus[i - 1] / taus[i]) for i in range(1, len(errs))]
        out[g] = (errs, orders)
    return out, time.perf_counter() - t0, cfg


@lru_cache(maxsize=None)
def bubbles(experiment: str, alpha: float):
    cfg = RunConfig.resolve("bubbles", overrides={"experiment": experiment, "alpha": alpha})
    return run_phase_field(cfg, make_grid(cfg))


def bubble_runs():
    for exp in ("bubbles", "bubbles-stabilized"):
        for a in BUBBLE_ALPHAS:
            yield exp, a, bubbles(exp, a)


def test_criterion_1_table1():
    table, wall, cfg = convergence("table1")
    ok_orders = all(abs(o - p) <= ORDER_TOL for g, (_, orders) in table.items() for o, p in zip(orders, TABLE1[g][1]))
    ratios = [e / p for g, (errs, _) in table.items() for e, p in zip(errs, TABLE1[g][0])]
    ok_err = all(1 / ERROR_FACTOR <= r <= ERROR_FACTOR for r in ratios)
    ok_rate = all(
        abs(orders[-1] - theoretical_rate("backward-euler", cfg["alpha"], cfg["sigma"], g)) <= ORDER_TOL
        for g, (_, orders) in table.items()
    )
    ok_time = wall <= TABLE1_BUDGET
    ok = ok_orders and ok_err and ok_rate and ok_time
    report(1, ok, f"orders {_orders_text(table)}; error ratios in [{min(ratios):.2f}, {max(ratios):.2f}]; "
                  f"{wall:.0f} s")
    assert ok_orders and ok_err and ok_rate, table
    assert ok_time, wall


def test_criterion_2_table2():
    table, _, _ = convergence("table2")
    target = {2.0: 0.8, 3.0: 1.2, 4.0: 1.2}
    ok = all(abs(o - target[g]) <= ORDER_TOL for g, (_, orders) in table.items() for o in orders)
    report(2, ok, f"orders {_orders_text(table)}")
    assert ok, table


def test_criterion_3_tables34():
    ok = True
    texts = []
    for exp in ("table3", "table4"):
        table, _, cfg = convergence(exp)
        for g, (_, orders) in table.items():
            rate = theoretical_rate("stabilized", cfg["alpha"], cfg["sigma"], g)
            ok &= all(abs(o - rate) <= ORDER_TOL for o in orders)
        texts.append(f"{exp} {_orders_text(table)}")
    report(3, ok, "; ".join(texts))
    assert ok, texts


def test_criterion_4_max_principle():
    worst = {}
    ok = True
    for exp, a, res in bubble_runs():
        mp = max_principle_monitor([r.unorm for r in res.records], slack=MP_SLACK)
        worst[(exp, a)] = mp.worst
        ok &= mp.ok
    report(4, ok, f"max ||u||_inf over six runs = {max(worst.values()):.15f}")
    assert ok, worst


def _fast_direct_meshes(N: int = 128) -> dict[str, TimeMesh]:
    rng = np.random.default_rng(7)
    steps = rng.random(N) + 0.05
    return {
        "uniform": graded_mesh(1.0, N, 1.0),
        "graded3": graded_mesh(1.0, N, 3.0),
        "random": TimeMesh.from_steps(steps / steps.sum()),
    }


def _levels(sc: SchemeConfig, mesh: TimeMesh, operator: str, M: int = 16) -> np.ndarray:
    grid = Grid2D.square(M)
    out = []
    march(sc, grid, np.zeros(grid.shape), mesh=mesh, source=make_manufactured_source(sc.alpha, 0.8, grid),
          operator=operator, record_energy=False, callback=lambda n, t, u: out.append(u.copy()))
    return np.array(out)


def test_criterion_5_fast_vs_direct():
    sc = SchemeConfig(alpha=0.8, eps2=1.0 / (8 * math.pi**2), scheme="backward-euler", soe_eps=1e-12)
    diffs = {}
    for name, mesh in _fast_direct_meshes().items():
        diffs[name] = float(np.abs(_levels(sc, mesh, "fast") - _levels(sc, mesh, "direct")).max())
    ok = max(diffs.values()) <= FAST_DIRECT_TOL
    report(5, ok, "max |fast - direct| " + ", ".join(f"{k}={v:.2e}" for k, v in diffs.items()))
    assert ok, diffs


def test_criterion_6_gronwall():
    worst_pa, worst_ratio, ok = 0.0, 0.0, True
    for alpha in (0.3, 0.5, 0.8):
        meshes = _fast_direct_meshes()
        dt = min(m.tau_min for m in meshes.values())
        soe = build_soe(alpha, 1e-12, dt, 1.0)
        for mesh in meshes.values():
            for s in (soe, None):
                g = gronwall_suite(mesh, alpha, s, pi_a=1.5, tol=1e-12)
                ok &= g.ok
                worst_pa = max(worst_pa, g.pa_maxdev)
                worst_ratio = max(worst_ratio, g.bound_ratio_m0, g.bound_ratio_m1)
    report(6, ok, f"max |PA - 1| = {worst_pa:.2e}; max bound ratio = {worst_ratio:.3f} (<= 1)")
    assert ok


@pytest.mark.parametrize("alpha,eps,dt,T", SOE_CASES)
def test_criterion_7_soe(alpha, eps, dt, T):
    soe = build_soe(alpha, eps, dt, T)
    scan = soe_scan(soe, npts=10_000)
    ok = scan["maxdev"] <= eps
    case = f"(alpha={alpha}, eps={eps:g}, dt={dt:g}, T={T:g})"
    report(7, ok, f"{case} Nq={soe.nq} maxdev={scan['maxdev']:.2e}")
    assert ok, scan


def test_criterion_8_l1_exactness():
    worst = {"direct": 0.0, "fast": 0.0}
    meshes = dict(_fast_direct_meshes())
    meshes["graded2_N40"] = graded_mesh(1.0, 40, 2.0)
    for alpha in (0.3, 0.5, 0.8):
        for mesh in meshes.values():
            exact = omega(2.0 - alpha, mesh.nodes[1:])
            dv = np.diff(mesh.nodes)
            soe = build_soe(alpha, 1e-12, mesh.tau_min, mesh.T)
            for name, B in (("direct", direct_kernel_matrix(mesh, alpha)), ("fast", fast_kernel_matrix(mesh, soe))):
                worst[name] = max(worst[name], float(np.max(np.abs(B @ dv - exact) / exact)))
    ok = max(worst.values()) <= EXACT_TOL
    report(8, ok, f"max relative error direct={worst['direct']:.2e}, fast={worst['fast']:.2e}")
    assert ok, worst


def test_criterion_9_singularity():
    cfg = RunConfig.resolve("singularity")
    assert cfg["alpha"] == 0.7 and cfg["mesh.gamma"] == 3.0
    res = run_phase_field(cfg, make_grid(cfg))
    fit = singularity_probe(res.column("t"), res.column("dq"), t_lo=cfg["fit.t_lo"], decades=cfg["fit.decades"])
    ok = abs(fit.slope - (cfg["alpha"] - 1.0)) <= SLOPE_TOL
    report(9, ok, f"slope {fit.slope:.3f} over [{fit.t_lo:g}, {fit.t_hi:g}] ({fit.npts} levels), "
                  f"alpha - 1 = {cfg['alpha'] - 1:.1f}")
    assert ok, fit.slope


def test_criterion_10_energy():
    counts = {}
    for exp, a, res in bubble_runs():
        counts[(exp, a)] = energy_monitor([r.energy for r in res.records], threshold=ENERGY_TOL).count
    ok = sum(counts.values()) == 0
    report(10, ok, f"energy increases > {ENERGY_TOL:g}: {sum(counts.values())} over six runs")
    assert ok, counts


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
