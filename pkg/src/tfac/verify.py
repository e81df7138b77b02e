"""Verification harness: convergence tables, monitors, kernel identity suites."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .frackernel import (
    SoeApprox,
    complementary_kernels,
    direct_kernel_matrix,
    direct_l1_apply,
    fast_kernel_matrix,
    omega,
    soe_deviation,
)
from .mesh import TimeMesh, concat_mesh, graded_mesh, random_tail_mesh
from .schemes import MarchResult, SchemeConfig, make_manufactured_source, manufactured_exact, march
from .spatial import Grid2D

__all__ = [
    "ConvergenceRow",
    "ErrorTracker",
    "convergence_order",
    "convergence_mesh",
    "run_manufactured",
    "convergence_table",
    "theoretical_rate",
    "MonitorReport",
    "max_principle_monitor",
    "energy_monitor",
    "psd_probe",
    "gronwall_suite",
    "GronwallReport",
    "soe_scan",
    "fast_vs_direct_kernels",
    "singularity_probe",
    "SingularityFit",
]


# --- errors and orders --------------------------------------------------------

class ErrorTracker:
    """Callback for :func:`march` accumulating ``max_n ||U^n - u^n||_inf``."""

    def __init__(self, grid: Grid2D, exact: Callable[[np.ndarray, np.ndarray, float], np.ndarray]):
        self.X, self.Y = grid.mesh()
        self.exact = exact
        self.error = 0.0
        self.levels = 0

    def __call__(self, n: int, t: float, u: np.ndarray) -> None:
        if n == 0:
            return
        e = float(np.abs(u - self.exact(self.X, self.Y, t)).max())
        self.error = max(self.error, e)
        self.levels += 1


def error_vs_exact(result_levels: Sequence[tuple[float, np.ndarray]], grid: Grid2D, exact) -> float:
    """``max_n ||U(t_n) - u^n||_inf`` over stored levels ``(t_n, u^n)``, ``n >= 1``."""
    X, Y = grid.mesh()
    err = 0.0
    for t, u in result_levels:
        if t > 0.0:
            err = max(err, float(np.abs(np.asarray(u).reshape(grid.shape) - exact(X, Y, t)).max()))
    return err


@dataclass
class ConvergenceRow:
    N: int
    tau: float
    error: float
    order: float = math.nan  # defined from the second row on


def convergence_order(errors: Sequence[float], taus: Sequence[float]) -> list[float]:
    """``log(e(N)/e(2N)) / log(tau(N)/tau(2N))`` for consecutive rows (first is nan)."""
    if len(errors) != len(taus):
        raise ValueError("errors and taus differ in length")
    out = [math.nan]
    for k in range(1, len(errors)):
        if taus[k] == taus[k - 1]:
            raise ValueError("degenerate: equal max steps in consecutive rows")
        out.append(math.log(errors[k - 1] / errors[k]) / math.log(taus[k - 1] / taus[k]))
    return out


def theoretical_rate(scheme: str, alpha: float, sigma: float, gamma: float) -> float:
    top = 2.0 - alpha if scheme == "backward-euler" else 1.0
    return min(gamma * sigma, top)


def convergence_mesh(N: int, gamma: float, T: float = 1.0, seed=42, N0: int | None = None) -> TimeMesh:
    """Graded head on ``[0, T0]``, ``T0 = min(1/gamma, T)``, plus a random tail.

    Unless given, ``N0`` is proportional to the head's share of ``[0, T]``.
    """
    T0 = min(1.0 / gamma, T)
    if N0 is None:
        N0 = N if T0 >= T else min(N - 1, max(1, round(N * T0 / T)))
    head = graded_mesh(T0, N0, gamma)
    if N0 >= N or T0 >= T:
        return head
    tail = random_tail_mesh(T0, T, N - N0, seed)
    return concat_mesh(head, tail, end=T)


def run_manufactured(
    cfg: SchemeConfig, sigma: float, M: int, mesh: TimeMesh, operator: str = "fast"
) -> tuple[float, MarchResult]:
    """Max-over-time error against ``omega_{1+sigma}(t) sin(2 pi x) sin(2 pi y)``."""
    grid = Grid2D.square(M)
    tracker = ErrorTracker(grid, lambda X, Y, t: manufactured_exact(sigma, X, Y, t))
    res = march(
        cfg,
        grid,
        np.zeros(grid.shape),
        mesh=mesh,
        source=make_manufactured_source(cfg.alpha, sigma, grid),
        operator=operator,
        record_energy=False,
        callback=tracker,
    )
    return tracker.error, res


def convergence_table(
    cfg: SchemeConfig,
    sigma: float,
    gamma: float,
    Ns: Sequence[int] = (64, 128, 256, 512),
    M: int = 256,
    T: float = 1.0,
    seed: int = 42,
    N0_fraction: float | None = None,
) -> list[ConvergenceRow]:
    rows = []
    for N in Ns:
        N0 = None if N0_fraction is None else max(1, round(N0_fraction * N))
        mesh = convergence_mesh(N, gamma, T, seed=(seed, N), N0=N0)
        err, _ = run_manufactured(cfg, sigma, M, mesh)
        rows.append(ConvergenceRow(N, mesh.tau_max, err))
    orders = convergence_order([r.error for r in rows], [r.tau for r in rows])
    for r, o in zip(rows, orders):
        r.order = o
    return rows


# --- monitors ---------------------------------------------------------------------

@dataclass
class MonitorReport:
    ok: bool
    first_violation: int | None = None  # level index n
    count: int = 0
    worst: float = 0.0
    detail: dict = field(default_factory=dict)


def max_principle_monitor(unorms: Sequence[float], bound: float = 1.0, slack: float = 1e-12) -> MonitorReport:
    """Check ``||u^n||_inf <= bound + slack`` for every recorded level (index = position)."""
    u = np.asarray(unorms, dtype=float)
    bad = np.nonzero(u > bound + slack)[0]
    return MonitorReport(
        ok=bad.size == 0,
        first_violation=int(bad[0]) if bad.size else None,
        count=int(bad.size),
        worst=float(u.max()) if u.size else 0.0,
    )


def energy_monitor(energies: Sequence[float], threshold: float = 1e-10) -> MonitorReport:
    """Observational: count ``E^n > E^{n-1} + threshold``."""
    e = np.asarray(energies, dtype=float)
    inc = np.diff(e)
    bad = np.nonzero(inc > threshold)[0]
    return MonitorReport(
        ok=bad.size == 0,
        first_violation=int(bad[0]) + 1 if bad.size else None,
        count=int(bad.size),
        worst=float(inc.max()) if inc.size else 0.0,
    )


# --- kernel studies ---------------------------------------------------------------

def psd_probe(mesh: TimeMesh, alpha: float) -> dict:
    """Smallest eigenvalue of the symmetric part of the L1 kernel matrix.

    Exploratory: positivity on nonuniform meshes is not known, so nothing is
    asserted here.
    """
    if mesh.N > 512:
        raise ValueError("psd_probe uses a dense eigensolve; N <= 512")
    B = direct_kernel_matrix(mesh, alpha)
    lam = np.linalg.eigvalsh(0.5 * (B + B.T))
    return {"N": mesh.N, "rho": mesh.rho_max, "min_eig": float(lam[0]), "max_eig": float(lam[-1])}


@dataclass
class GronwallReport:
    ok: bool
    pa_maxdev: float
    bound_ratio_m0: float  # max_n lhs / (pi_a omega_1(t_n))
    bound_ratio_m1: float
    p_min: float


def gronwall_suite(mesh: TimeMesh, alpha: float, soe: SoeApprox | None = None, pi_a: float = 1.5,
                   tol: float = 1e-12) -> GronwallReport:
    """Complementary kernels of the fast (or, without ``soe``, direct) L1 rows.

    Checks ``sum_{j=k}^n p_{n-j}^{(n)} A_{j-k}^{(j)} = 1`` by direct summation and
    ``sum_j p_{n-j}^{(n)} omega_{1+m alpha-alpha}(t_j) <= pi_a omega_{1+m alpha}(t_n)``
    for ``m = 0, 1``.
    """
    A = fast_kernel_matrix(mesh, soe) if soe is not None else direct_kernel_matrix(mesh, alpha)
    P = complementary_kernels(A)
    # (P A)[n, k] = sum_j P[n, j] A[j, k], lower triangular ones
    PA = P @ A
    mask = np.tril(np.ones_like(PA, dtype=bool))
    pa_dev = float(np.abs(PA[mask] - 1.0).max())
    tj = mesh.nodes[1:]
    lhs0 = P @ omega(1.0 - alpha, tj)
    lhs1 = P @ omega(1.0, tj)
    r0 = float(np.max(lhs0 / (pi_a * omega(1.0, tj))))
    r1 = float(np.max(lhs1 / (pi_a * omega(1.0 + alpha, tj))))
    pmin = float(P[mask].min())
    ok = pa_dev <= tol and r0 <= 1.0 and r1 <= 1.0 and pmin >= 0.0
    return GronwallReport(ok, pa_dev, r0, r1, pmin)


def soe_scan(soe: SoeApprox, npts: int = 10_000) -> dict:
    t, dev, ref = soe_deviation(soe.alpha, soe.theta, soe.weight, soe.dt, soe.T, npts=npts)
    i = int(np.argmax(dev))
    return {"maxdev": float(dev[i]), "t_at_max": float(t[i]), "ok": bool(dev[i] <= soe.eps),
            "max_rel": float(np.max(dev / ref)), "nq": soe.nq}


def fast_vs_direct_kernels(mesh: TimeMesh, soe: SoeApprox, signal: Callable[[np.ndarray], np.ndarray]) -> float:
    """``max_n |fast - direct|`` of the L1 approximations of ``signal`` on ``mesh``."""
    v = signal(mesh.nodes)
    dv = np.diff(v)
    A = fast_kernel_matrix(mesh, soe)
    fast = A @ dv
    direct = np.array([direct_l1_apply(mesh, soe.alpha, dv[:n]) for n in range(1, mesh.N + 1)])
    return float(np.abs(fast - direct).max())


# --- singularity probe ------------------------------------------------------------

@dataclass
class SingularityFit:
    slope: float
    t_lo: float
    t_hi: float
    npts: int
    log_t: np.ndarray
    log_dq: np.ndarray


def singularity_probe(t: Sequence[float], dq: Sequence[float], t_lo: float | None = None,
                      decades: float = 1.0) -> SingularityFit:
    """Least-squares slope of ``log dq`` against ``log t`` over ``[t_lo, 10**decades t_lo]``.

    ``t`` are the levels ``t_k`` and ``dq`` the quotients ``|u^k - u^{k-1}| / tau_k``;
    the window defaults to the first decade above ``t_1``.
    """
    t = np.asarray(t, dtype=float)
    dq = np.asarray(dq, dtype=float)
    keep = (t > 0) & (dq > 0)
    t, dq = t[keep], dq[keep]
    lt, ld = np.log10(t), np.log10(dq)
    lo = t[0] if t_lo is None else t_lo
    hi = lo * 10.0**decades
    win = (t >= lo) & (t <= hi * (1 + 1e-12))
    if win.sum() < 2:
        raise ValueError("fewer than two levels in the fitting window")
    slope = float(np.polyfit(lt[win], ld[win], 1)[0])
    return SingularityFit(slope, float(lo), float(hi), int(win.sum()), lt, ld)
