"""Fractional-derivative machinery on nonuniform time meshes.

Contents: the weight function ``omega``, direct L1 kernels, the
sum-of-exponentials (SOE) compression of ``omega_{1-alpha}``, fast L1 kernels
and the exponential history recursion, complementary (Gronwall) kernels,
and the Mittag-Leffler function.

Kernel rows are returned indexed by the *history offset* ``j = n - k``, so
``row[0]`` is the local weight ``a_0^{(n)}`` and ``row[n-1]`` multiplies the
first difference ``v^1 - v^0``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy.special import roots_jacobi

from . import _accel
from .mesh import TimeMesh

log = logging.getLogger(__name__)

__all__ = [
    "AssumptionViolated",
    "ToleranceUnachievable",
    "SoeApprox",
    "HistoryState",
    "omega",
    "phi1",
    "direct_kernel_row",
    "direct_kernel_matrix",
    "direct_l1_apply",
    "build_soe",
    "soe_deviation",
    "fast_kernel_row",
    "fast_kernel_matrix",
    "history_advance",
    "fast_l1_apply",
    "complementary_kernels",
    "mittag_leffler",
    "lemma22_eps_bound",
]

SOE_MODE_CAP = 512


class ToleranceUnachievable(RuntimeError):
    """The SOE refinement hit the mode-count cap before meeting its bound."""


class AssumptionViolated(ValueError):
    """A kernel row is not positive and monotone."""


def omega(mu: float, t):
    """``t**(mu-1) / Gamma(mu)``; accepts scalars or arrays."""
    return np.power(t, mu - 1.0) / math.gamma(mu)


def phi1(x):
    """Stable ``(1 - exp(-x)) / x`` for ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-8
    xs = x[small]
    out[small] = 1.0 - 0.5 * xs
    xl = x[~small]
    out[~small] = -np.expm1(-xl) / xl
    return out


def _pow_diff(y, tau, beta):
    """``(y + tau)**beta - y**beta`` without cancellation (``y >= 0``)."""
    y = np.asarray(y, dtype=float)
    tau = np.asarray(tau, dtype=float)
    out = np.empty(np.broadcast(y, tau).shape)
    y, tau = np.broadcast_arrays(y, tau)
    zero = y == 0.0
    out[zero] = tau[zero] ** beta
    yz, tz = y[~zero], tau[~zero]
    out[~zero] = yz**beta * np.expm1(beta * np.log1p(tz / yz))
    return out


# --- direct L1 --------------------------------------------------------------

def direct_kernel_row(mesh: TimeMesh, alpha: float, n: int) -> np.ndarray:
    """L1 kernels ``a_j^{(n)}``, ``j = 0..n-1``.

    ``a_{n-k}^{(n)} = [w(t_n - t_{k-1}) - w(t_n - t_k)] / tau_k`` with
    ``w = omega_{2-alpha}``, evaluated in a cancellation-free form.
    """
    if not 1 <= n <= mesh.N:
        raise IndexError(f"level {n} outside 1..{mesh.N}")
    t = mesh.nodes
    k = np.arange(1, n + 1)
    tau = t[k] - t[k - 1]
    y = t[n] - t[k]
    y[-1] = 0.0
    vals = _pow_diff(y, tau, 1.0 - alpha) / (tau * math.gamma(2.0 - alpha))
    vals[-1] = tau[-1] ** (-alpha) / math.gamma(2.0 - alpha)  # a_0, same form as the fast row
    return vals[::-1].copy()


def direct_kernel_matrix(mesh: TimeMesh, alpha: float, N: int | None = None) -> np.ndarray:
    """Lower-triangular ``B[n-1, k-1] = a_{n-k}^{(n)}``."""
    N = mesh.N if N is None else N
    B = np.zeros((N, N))
    for n in range(1, N + 1):
        B[n - 1, :n] = direct_kernel_row(mesh, alpha, n)[::-1]
    return B


def direct_l1_apply(mesh: TimeMesh, alpha: float, diffs) -> np.ndarray | float:
    """``sum_k a_{n-k}^{(n)} (v^k - v^{k-1})`` with ``n = len(diffs)``.

    ``diffs`` has shape ``(n,)`` or ``(n, ndof)``. This is the O(n) per level
    (O(N^2) overall) reference for the fast evaluator.
    """
    diffs = np.asarray(diffs, dtype=float)
    n = diffs.shape[0]
    row = direct_kernel_row(mesh, alpha, n)[::-1]  # indexed by k-1
    return row @ diffs


# --- sum of exponentials ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class SoeApprox:
    """``omega_{1-alpha}(t) ~ sum_l weight[l] * exp(-theta[l] * t)`` on ``[dt, T]``."""

    alpha: float
    eps: float
    dt: float
    T: float
    theta: np.ndarray
    weight: np.ndarray
    maxdev: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def nq(self) -> int:
        return int(self.theta.size)

    @property
    def certified(self) -> bool:
        return bool(self.maxdev <= self.eps)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, self.theta)) @ self.weight


def lemma22_eps_bound(alpha: float, T: float) -> float:
    """Largest SOE tolerance for which the fast kernels stay monotone and >= 2/3 of L1."""
    return min(omega(1.0 - alpha, T) / 3.0, alpha * omega(2.0 - alpha, 1.0))


def _omega_ld(alpha: float, t: np.ndarray) -> np.ndarray:
    with mpmath.workdps(30):
        g = mpmath.gamma(1 - mpmath.mpf(alpha))
        inv_g = np.longdouble(mpmath.nstr(1 / g, 25))
    return np.power(t, -np.longdouble(alpha)) * inv_g


def soe_deviation(alpha, theta, weight, dt, T, npts: int = 10_000, chunk: int = 1000):
    """Scan ``|omega_{1-alpha}(t) - SOE(t)|`` on a log grid of ``[dt, T]``.

    The SOE is summed in extended precision so the result measures the
    approximation itself rather than float64 summation noise. Returns the
    grid, the absolute deviation and the reference values (as float64).
    """
    t = np.geomspace(dt, T, npts).astype(np.longdouble)
    th = np.asarray(theta, dtype=np.longdouble)
    w = np.asarray(weight, dtype=np.longdouble)
    ref = _omega_ld(alpha, t)
    approx = np.empty_like(t)
    for s in range(0, npts, chunk):
        tt = t[s : s + chunk]
        approx[s : s + chunk] = np.exp(-np.multiply.outer(tt, th)) @ w
    dev = np.abs(approx - ref)
    return t.astype(float), dev.astype(float), ref.astype(float)


def _soe_nodes(alpha, dt, T, eps, n_gj, n_gl):
    c = math.sin(math.pi * alpha) / math.pi  # 1 / (Gamma(alpha) Gamma(1-alpha))
    j0 = math.floor(math.log2(1.0 / T))
    s0 = 2.0**j0
    # Gauss-Jacobi on [0, s0] absorbs the s**(alpha-1) endpoint singularity
    x, w = roots_jacobi(n_gj, 0.0, alpha - 1.0)
    thetas = [0.5 * s0 * (x + 1.0)]
    weights = [c * w * (0.5 * s0) ** alpha]
    # beyond s_max the integrand is below both eps and the float64 floor
    w_dt = omega(1.0 - alpha, dt)
    y_max = min(45.0, max(5.0, math.log(100.0 * w_dt / eps)))
    s_max = y_max / dt
    xl, wl = np.polynomial.legendre.leggauss(n_gl)
    j = j0
    while 2.0**j < s_max:
        lo, hi = 2.0**j, 2.0 ** (j + 1)
        s = lo + 0.5 * (hi - lo) * (xl + 1.0)
        thetas.append(s)
        weights.append(c * wl * 0.5 * (hi - lo) * s ** (alpha - 1.0))
        j += 1
    return np.concatenate(thetas), np.concatenate(weights)


def build_soe(
    alpha: float,
    eps: float,
    dt: float,
    T: float,
    *,
    cap: int = SOE_MODE_CAP,
    fp_floor: float = 16.0,
    npts: int = 10_000,
) -> SoeApprox:
    """Sum-of-exponentials approximation of ``omega_{1-alpha}`` on ``[dt, T]``.

    Discretizes ``t**-alpha = Gamma(alpha)**-1 * int_0^inf exp(-s t) s**(alpha-1) ds``
    with Gauss-Jacobi on ``[0, 2**j0]`` (``2**j0 <= 1/T``) and composite
    Gauss-Legendre on the dyadic blocks above it. The per-block node count is
    raised until a dense log-grid scan meets ``max(eps, fp_floor * u * omega(t))``
    pointwise, ``u`` being the float64 unit roundoff: an absolute ``eps`` below
    the spacing of float64 numbers near ``omega(dt)`` is not representable.
    ``maxdev`` records the achieved absolute deviation; ``certified`` tells
    whether it meets ``eps`` itself.

    Raises
    ------
    ToleranceUnachievable
        If the mode count would exceed ``cap``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not (0.0 < dt < T):
        raise ValueError("need 0 < dt < T")
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    u = np.finfo(float).eps / 2
    n_gl = 4
    while True:
        n_gj = n_gl + 4
        theta, weight = _soe_nodes(alpha, dt, T, eps, n_gj, n_gl)
        if theta.size > cap:
            raise ToleranceUnachievable(
                f"SOE for alpha={alpha}, eps={eps:g}, dt={dt:g}, T={T:g} needs more than {cap} modes"
            )
        _, dev, ref = soe_deviation(alpha, theta, weight, dt, T, npts=npts)
        bound = np.maximum(eps, fp_floor * u * ref)
        if np.all(dev <= bound):
            break
        n_gl += 1
    order = np.argsort(theta)
    soe = SoeApprox(
        alpha=alpha,
        eps=eps,
        dt=dt,
        T=T,
        theta=theta[order],
        weight=weight[order],
        maxdev=float(dev.max()),
        meta={"n_gj": n_gj, "n_gl": n_gl, "max_rel": float(np.max(dev / ref))},
    )
    if not soe.certified:
        log.info(
            "SOE absolute deviation %.3g exceeds eps=%.3g (float64 floor near omega(dt)=%.3g)",
            soe.maxdev, eps, ref[0],
        )
    return soe


# --- fast L1 -----------------------------------------------------------------

def fast_kernel_row(mesh: TimeMesh, soe: SoeApprox, n: int) -> np.ndarray:
    """Fast L1 kernels ``A_j^{(n)}``, ``j = 0..n-1``; ``A_0^{(n)} = a_0^{(n)}``."""
    if not 1 <= n <= mesh.N:
        raise IndexError(f"level {n} outside 1..{mesh.N}")
    t = mesh.nodes
    row = np.empty(n)
    row[0] = mesh.steps[n - 1] ** (-soe.alpha) / math.gamma(2.0 - soe.alpha)
    if n > 1:
        k = np.arange(1, n)
        tau = t[k] - t[k - 1]
        lag = t[n] - t[k]
        # (1/tau) int_{t_{k-1}}^{t_k} w e^{-theta (t_n - s)} ds = w e^{-theta lag} phi1(theta tau)
        E = np.exp(-np.multiply.outer(lag, soe.theta)) * phi1(np.multiply.outer(tau, soe.theta))
        row[1:] = (E @ soe.weight)[::-1]
    return row


def fast_kernel_matrix(mesh: TimeMesh, soe: SoeApprox, N: int | None = None) -> np.ndarray:
    """Lower-triangular ``A[n-1, k-1] = A_{n-k}^{(n)}``."""
    N = mesh.N if N is None else N
    A = np.zeros((N, N))
    for n in range(1, N + 1):
        A[n - 1, :n] = fast_kernel_row(mesh, soe, n)[::-1]
    return A


class HistoryState:
    """Per-mode exponential history ``H^l`` for every spatial degree of freedom.

    ``H`` has shape ``(ndof, nq)``; ``H^l(t_0) = 0``.
    """

    def __init__(self, soe: SoeApprox, ndof: int):
        self.soe = soe
        self.H = np.zeros((ndof, soe.nq))
        self.level = 0
        self._term = np.zeros(ndof)
        self._term_tau = None

    @property
    def ndof(self) -> int:
        return self.H.shape[0]

    def term(self, tau: float) -> np.ndarray:
        """``sum_l w_l exp(-theta_l tau) H^l`` for the next step of size ``tau``."""
        if self._term_tau != tau:
            c = self.soe.weight * np.exp(-self.soe.theta * tau)
            _accel.history_term(self.H, c, self._term)
            self._term_tau = tau
        return self._term

    def advance(self, dv, tau: float, tau_next: float | None = None) -> "HistoryState":
        """``H^l <- exp(-theta_l tau) H^l + b_l (v^k - v^{k-1})`` in place.

        With ``tau_next`` the next history term is accumulated in the same pass.
        """
        th = self.soe.theta
        decay = np.exp(-th * tau)
        b = phi1(th * tau)
        dv = np.ascontiguousarray(dv, dtype=float).reshape(-1)
        if tau_next is None:
            c_next = np.zeros_like(th)
        else:
            c_next = self.soe.weight * np.exp(-th * tau_next)
        _accel.history_update(self.H, decay, b, dv, c_next, self._term)
        self._term_tau = tau_next
        self.level += 1
        return self


def history_advance(state: HistoryState, dv, tau: float) -> HistoryState:
    """Advance ``state`` by one level (in place) and return it."""
    return state.advance(dv, tau)


def fast_l1_apply(state: HistoryState, a0: float, dv, tau: float):
    """``a0 * dv + sum_l w_l exp(-theta_l tau) H^l(t_{n-1})``."""
    dv = np.asarray(dv, dtype=float)
    h = state.term(tau)
    out = a0 * dv.reshape(-1) + h
    return out.reshape(dv.shape) if dv.ndim else float(out[0])


# --- complementary kernels ---------------------------------------------------

def complementary_kernels(Amat: np.ndarray, check: bool = True) -> np.ndarray:
    """Complementary kernels ``P[n-1, j-1] = p_{n-j}^{(n)}``.

    ``Amat`` is the lower-triangular table of :func:`fast_kernel_matrix` (or
    :func:`direct_kernel_matrix`). Uses ``p_0^{(n)} = 1/A_0^{(n)}`` and

        p_{n-j}^{(n)} = (1/A_0^{(j)}) sum_{k=j+1}^{n} (A_{k-j-1}^{(k)} - A_{k-j}^{(k)}) p_{n-k}^{(n)}.
    """
    Amat = np.ascontiguousarray(Amat, dtype=float)
    N = Amat.shape[0]
    if check:
        for n in range(N):
            row = Amat[n, : n + 1][::-1]  # A_0 .. A_n
            if np.any(row <= 0.0):
                raise AssumptionViolated(f"non-positive kernel in row {n + 1}")
            if n and np.any(np.diff(row) > 0.0):
                raise AssumptionViolated(f"non-monotone kernel in row {n + 1}")
    P = np.zeros((N, N))
    _accel.complementary_kernel(Amat, P)
    return P


# --- Mittag-Leffler ----------------------------------------------------------

ML_GUARD = 700.0


def mittag_leffler(alpha: float, z: float, rtol: float = 1e-16, max_terms: int = 10_000) -> float:
    """``E_alpha(z) = sum_k z**k / Gamma(1 + k alpha)`` by truncated series.

    Intended for the moderate arguments of Gronwall-type bounds. Large
    negative ``z`` suffers cancellation and is rejected beyond ``|z| > 30``.
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    if z < -30.0:
        raise OverflowError("series cancellation for z < -30")
    if z == 0.0:
        return 1.0
    lz = math.log(abs(z))
    total = 0.0
    prev = math.inf
    for k in range(max_terms):
        lt = k * lz - math.lgamma(1.0 + k * alpha)
        if lt > ML_GUARD:
            raise OverflowError(f"E_{alpha}({z}) overflows")
        term = math.exp(lt)
        if z < 0.0 and k % 2:
            term = -term
        total += term
        if k > 0 and abs(term) <= rtol * abs(total) and abs(term) <= prev:
            return total
        prev = abs(term)
    raise RuntimeError("Mittag-Leffler series did not converge")
