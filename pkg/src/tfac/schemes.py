"""Backward Euler and stabilized semi-implicit fast-L1 schemes, and the driver."""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .frackernel import SoeApprox, HistoryState, build_soe, direct_kernel_row, omega
from .mesh import AdaptiveParams, TimeMesh, adaptive_next_step
from .spatial import Grid2D, HelmholtzSolver, discrete_energy, inf_norm, laplacian_apply

log = logging.getLogger(__name__)

__all__ = [
    "SchemeConfig",
    "RunRecord",
    "MarchResult",
    "PicardDiverged",
    "StepError",
    "GuaranteeWarning",
    "FastCaputo",
    "DirectCaputo",
    "be_step_bound",
    "backward_euler_step",
    "stabilized_step",
    "march",
    "manufactured_exact",
    "manufactured_source",
    "make_manufactured_source",
]

SCHEMES = ("backward-euler", "stabilized")


class PicardDiverged(RuntimeError):
    """Fixed-point iteration hit its iteration cap (step too large)."""


class StepError(RuntimeError):
    def __init__(self, level: int, cause: Exception):
        super().__init__(f"level {level}: {cause}")
        self.level = level
        self.cause = cause


class GuaranteeWarning(UserWarning):
    """Run parameters fall outside the maximum-principle hypotheses."""


@dataclass
class SchemeConfig:
    alpha: float
    eps2: float
    scheme: str = "backward-euler"
    S: float = 0.0
    picard_tol: float = 1e-12
    picard_max_iter: int = 200
    soe_eps: float = 1e-12
    solver: str = "fft"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.eps2 <= 0.0:
            raise ValueError("eps2 must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.S < 0.0:
            raise ValueError("S must be non-negative")


# a step is recomputed only when it overshoots the controller by more than this
REJECT_SLACK = 1.25


def be_step_bound(alpha: float) -> float:
    """Largest step for which backward Euler is guaranteed bounded by 1."""
    return math.gamma(2.0 - alpha) ** (-1.0 / alpha)


def f_bulk(u):
    return u * u * u - u


# --- Caputo operators -----------------------------------------------------------
#
# Both expose (d^alpha u)^n = a0 * (u^n - u^{n-1}) + hist, where hist collects the
# contributions of the already accepted differences.

class FastCaputo:
    """Fast L1 operator backed by the SOE history recursion."""

    def __init__(self, soe: SoeApprox, ndof: int):
        self.soe = soe
        self.alpha = soe.alpha
        self.state = HistoryState(soe, ndof)
        self._g = 1.0 / math.gamma(2.0 - soe.alpha)

    def prepare(self, tau: float) -> tuple[float, np.ndarray]:
        return tau ** (-self.alpha) * self._g, self.state.term(tau)

    def commit(self, du: np.ndarray, tau: float, tau_next: float | None = None) -> None:
        self.state.advance(du, tau, tau_next)


class DirectCaputo:
    """O(n) per level L1 operator that keeps every past difference."""

    def __init__(self, alpha: float, ndof: int):
        self.alpha = alpha
        self.nodes = [0.0]
        self.diffs: list[np.ndarray] = []
        self._g = 1.0 / math.gamma(2.0 - alpha)

    def prepare(self, tau: float) -> tuple[float, np.ndarray]:
        a0 = tau ** (-self.alpha) * self._g
        if not self.diffs:
            return a0, 0.0
        mesh = TimeMesh(np.array(self.nodes + [self.nodes[-1] + tau]))
        row = direct_kernel_row(mesh, self.alpha, mesh.N)  # a_0 .. a_{n-1}
        hist = row[:0:-1] @ np.asarray(self.diffs)  # pairs a_{n-k} with k = 1..n-1
        return a0, hist

    def commit(self, du: np.ndarray, tau: float, tau_next: float | None = None) -> None:
        self.nodes.append(self.nodes[-1] + tau)
        self.diffs.append(np.array(du, dtype=float).reshape(-1))


# --- single steps -------------------------------------------------------------

def backward_euler_step(
    u_prev: np.ndarray,
    hist,
    a0: float,
    cfg: SchemeConfig,
    solver: HelmholtzSolver,
    g: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Solve ``a0 u - eps2 D_h u + u^3 - u = a0 u_prev - hist + g`` by Picard iteration.

    Each iterate solves ``(a0 I - eps2 D_h) u_{s+1} = rhs - u_s^3 + u_s``
    starting from ``u_0 = u_prev``; stops when the max-norm increment is below
    ``cfg.picard_tol``.
    """
    shape = u_prev.shape
    rhs0 = a0 * u_prev - np.reshape(hist, shape) if np.ndim(hist) else a0 * u_prev - hist
    if g is not None:
        rhs0 = rhs0 + g
    u = u_prev
    for it in range(1, cfg.picard_max_iter + 1):
        u_new = solver.solve(a0, rhs0 - u * u * u + u)
        inc = inf_norm(u_new - u)
        u = u_new
        if not math.isfinite(inc):
            raise PicardDiverged("non-finite Picard iterate")
        if inc <= cfg.picard_tol:
            return u, it
    raise PicardDiverged(
        f"Picard iteration did not reach {cfg.picard_tol:g} in {cfg.picard_max_iter} iterations "
        f"(last increment {inc:.3g}); reduce the step"
    )


def stabilized_step(
    u_prev: np.ndarray,
    hist,
    a0: float,
    cfg: SchemeConfig,
    solver: HelmholtzSolver,
    g: np.ndarray | None = None,
) -> np.ndarray:
    """One linear solve: ``(a0+S) u - eps2 D_h u = (a0+S) u_prev - f(u_prev) - hist + g``."""
    shape = u_prev.shape
    c = a0 + cfg.S
    rhs = c * u_prev - f_bulk(u_prev) - (np.reshape(hist, shape) if np.ndim(hist) else hist)
    if g is not None:
        rhs = rhs + g
    return solver.solve(c, rhs)


def scheme_residual(u, u_prev, hist, a0, cfg: SchemeConfig, grid: Grid2D, g=None) -> float:
    """Max-norm residual of the discrete equation at an accepted level."""
    hist = np.reshape(hist, u.shape) if np.ndim(hist) else hist
    lhs = a0 * (u - u_prev) + hist - cfg.eps2 * laplacian_apply(u, grid)
    if cfg.scheme == "backward-euler":
        lhs = lhs + f_bulk(u)
    else:
        lhs = lhs + f_bulk(u_prev) + cfg.S * (u - u_prev)
    if g is not None:
        lhs = lhs - g
    return inf_norm(lhs)


# --- manufactured solution -------------------------------------------------------

def manufactured_exact(sigma: float, x, y, t):
    """``omega_{1+sigma}(t) sin(2 pi x) sin(2 pi y)``."""
    return omega(1.0 + sigma, t) * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def manufactured_source(alpha: float, sigma: float, x, y, t):
    """Source for the manufactured solution with ``eps2 = 1/(8 pi^2)``.

    ``d^alpha u = omega_{1+sigma-alpha}(t) phi`` and ``eps2 Lap u = -u``, which
    cancels the linear part of ``f``; what remains is
    ``omega_{1+sigma-alpha}(t) phi + u^3``.
    """
    phi = np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    return omega(1.0 + sigma - alpha, t) * phi + (omega(1.0 + sigma, t) * phi) ** 3


def make_manufactured_source(alpha: float, sigma: float, grid: Grid2D) -> Callable[[float], np.ndarray]:
    X, Y = grid.mesh()
    phi = np.sin(2 * np.pi * X) * np.sin(2 * np.pi * Y)
    phi3 = phi**3

    def g(t: float) -> np.ndarray:
        return omega(1.0 + sigma - alpha, t) * phi + omega(1.0 + sigma, t) ** 3 * phi3

    return g


# --- driver ---------------------------------------------------------------------

@dataclass
class RunRecord:
    n: int
    t: float
    tau: float
    unorm: float
    energy: float
    iters: int
    wall: float
    dq: float = math.nan  # ||u^n - u^{n-1}||_inf / tau_n


@dataclass
class MarchResult:
    u: np.ndarray
    records: list[RunRecord]
    snapshots: list[tuple[float, np.ndarray]]
    mesh: TimeMesh
    soe: SoeApprox | None
    max_residual: float = math.nan
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def _warn_guarantees(cfg: SchemeConfig, tau_max: float) -> None:
    if cfg.scheme == "backward-euler":
        bound = be_step_bound(cfg.alpha)
        if tau_max > bound:
            warnings.warn(
                f"max step {tau_max:.3g} exceeds {bound:.3g}; maximum principle not guaranteed",
                GuaranteeWarning,
                stacklevel=3,
            )
    elif cfg.S < 2.0:
        warnings.warn(f"S={cfg.S:g} < 2; maximum principle not guaranteed", GuaranteeWarning, stacklevel=3)


def march(
    cfg: SchemeConfig,
    grid: Grid2D,
    u0: np.ndarray,
    *,
    mesh: TimeMesh | None = None,
    head: TimeMesh | None = None,
    adapt: AdaptiveParams | None = None,
    T: float | None = None,
    source: Callable[[float], np.ndarray] | None = None,
    snapshot_times: Sequence[float] = (),
    operator: str = "fast",
    soe: SoeApprox | None = None,
    record_energy: bool = True,
    check_residual: bool = False,
    callback: Callable[[int, float, np.ndarray], None] | None = None,
    reject: bool = True,
    max_retries: int = 5,
) -> MarchResult:
    """Advance ``u0`` from ``t = 0`` to the final time.

    Either ``mesh`` (fixed levels) or ``head`` + ``adapt`` + ``T`` (graded
    start, then adaptive steps from the controller) must be given. In the
    adaptive phase the step for level ``k+1`` uses the change observed at
    level ``k``; with ``reject`` a step whose own change calls for a smaller
    step (per the same controller) is recomputed with that step, up to
    ``max_retries`` times. The SOE is built once, valid on ``[min step, T]``.

    ``callback(n, t_n, u^n)`` is invoked for ``n = 0`` and every accepted level.
    """
    u = np.array(u0, dtype=float).reshape(grid.shape)
    if not np.all(np.isfinite(u)):
        raise ValueError("initial data must be finite")
    adaptive = mesh is None
    if adaptive:
        if head is None or adapt is None or T is None:
            raise ValueError("adaptive marching needs head, adapt and T")
        if T < head.T:
            raise ValueError("T precedes the end of the head mesh")
        dt_min = min(head.tau_min, adapt.tau_min) if head.N else adapt.tau_min
        T_final = float(T)
        _warn_guarantees(cfg, max(head.tau_max, adapt.tau_max))
    else:
        dt_min = mesh.tau_min
        T_final = mesh.T
        _warn_guarantees(cfg, mesh.tau_max)

    snaps_pending = sorted(float(s) for s in snapshot_times)
    snapshots: list[tuple[float, np.ndarray]] = []
    while snaps_pending and snaps_pending[0] <= 0.0:
        snapshots.append((0.0, u.copy()))
        snaps_pending.pop(0)
    if callback is not None:
        callback(0, 0.0, u)

    records: list[RunRecord] = []
    if T_final <= 0.0 or (not adaptive and mesh.N == 0):
        return MarchResult(u, records, snapshots, TimeMesh(np.array([0.0])), None)

    if operator == "fast":
        if soe is None:
            soe = build_soe(cfg.alpha, cfg.soe_eps, min(dt_min, 0.5 * T_final), T_final)
        op = FastCaputo(soe, grid.size)
    elif operator == "direct":
        op = DirectCaputo(cfg.alpha, grid.size)
    else:
        raise ValueError(f"unknown operator {operator!r}")

    solver = HelmholtzSolver(grid, cfg.eps2, cfg.solver)
    nodes = [0.0]
    max_res = 0.0
    t = 0.0
    n = 0
    rejected = 0

    def next_tau(t_now: float, change: float) -> float | None:
        """Step after level ``t_now``; ``None`` once the run is complete."""
        if not adaptive:
            return float(steps[n]) if n < steps.size else None
        if n < head.N:
            return float(head_steps[n])
        if T_final - t_now <= 1e-12 * T_final:
            return None
        tau = adaptive_next_step(change, adapt)
        target = T_final
        if snaps_pending and snaps_pending[0] < T_final and snaps_pending[0] - t_now >= adapt.tau_min:
            target = snaps_pending[0]
        remaining = target - t_now
        # land on snapshot times and on T in at most two even steps, so no
        # short sliver follows a long step
        if tau >= remaining or remaining - tau < adapt.tau_min:
            tau = remaining
        elif remaining < 2.0 * tau:
            tau = 0.5 * remaining
        return tau

    steps = mesh.steps if not adaptive else None
    head_steps = head.steps if adaptive else None

    def attempt(tau: float):
        t_new = nodes[-1] + tau
        if adaptive and n > head.N and abs(t_new - T_final) <= 1e-12 * T_final:
            t_new = T_final
        elif snaps_pending and abs(t_new - snaps_pending[0]) <= 1e-12 * max(1.0, t_new):
            t_new = snaps_pending[0]
        a0, hist = op.prepare(tau)
        g = source(t_new) if source is not None else None
        if cfg.scheme == "backward-euler":
            u_new, iters = backward_euler_step(u, hist, a0, cfg, solver, g)
        else:
            u_new, iters = stabilized_step(u, hist, a0, cfg, solver, g), 1
        return t_new, u_new, iters, a0, hist, g

    tau = next_tau(0.0, 0.0)
    while tau is not None:
        wall0 = time.perf_counter()
        n += 1
        try:
            t_new, u_new, iters, a0, hist, g = attempt(tau)
            change = inf_norm(u_new - u)
            # the controller is implicit in tau_n; a causally proposed step is
            # retried when the change it produced asks for a smaller one
            retries = 0
            while adaptive and reject and n > head.N and retries < max_retries:
                tau_star = adaptive_next_step(change, adapt)
                if tau <= tau_star * REJECT_SLACK:
                    break
                tau = tau_star
                retries += 1
                t_new, u_new, more, a0, hist, g = attempt(tau)
                iters += more
                change = inf_norm(u_new - u)
            rejected += retries
            if check_residual:
                max_res = max(max_res, scheme_residual(u_new, u, hist, a0, cfg, grid, g))
        except Exception as exc:
            raise StepError(n, exc) from exc
        du = u_new - u
        u = u_new
        t = t_new
        nodes.append(t_new)
        # pop snapshots first so the controller does not target a reached time
        while snaps_pending and snaps_pending[0] <= t * (1 + 1e-12):
            snapshots.append((t, u.copy()))
            snaps_pending.pop(0)
        tau_next = next_tau(t, change)
        op.commit(du, tau, tau_next)
        if callback is not None:
            callback(n, t, u)
        energy = discrete_energy(u, grid, cfg.eps2) if record_energy else math.nan
        records.append(RunRecord(n, t, tau, inf_norm(u), energy, iters, time.perf_counter() - wall0, change / tau))
        tau = tau_next

    return MarchResult(
        u,
        records,
        snapshots,
        TimeMesh(np.array(nodes)),
        soe,
        max_residual=max_res if check_residual else math.nan,
        meta={"dt_min": dt_min, "operator": operator, "rejected": rejected},
    )
