"""Hot inner loops, compiled with numba when available.

Set ``TFAC_DISABLE_NUMBA=1`` to force the pure-numpy path; both paths are
kept numerically equivalent and are compared in ``benchmarks/``.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("TFAC_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by TFAC_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised with the env flag
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --- history recursion -------------------------------------------------------

def _history_update_np(H, decay, b, dv, c_next, out):
    H *= decay
    H += np.outer(dv, b)
    np.dot(H, c_next, out=out)


def _history_term_np(H, c, out):
    np.dot(H, c, out=out)


# --- 5-point periodic Laplacian ---------------------------------------------

def _laplacian_np(f, ih1, ih2, out):
    out[...] = (np.roll(f, 1, axis=1) - 2.0 * f + np.roll(f, -1, axis=1)) * ih1
    out += (np.roll(f, 1, axis=0) - 2.0 * f + np.roll(f, -1, axis=0)) * ih2


# --- complementary kernel recursion -------------------------------------------

def _complementary_np(Amat, P):
    # Amat[k, j] = A^{(k+1)}_{k-j}, lower triangular (0-based levels)
    N = Amat.shape[0]
    A0 = np.diag(Amat).copy()
    D = np.zeros_like(Amat)
    # D[k, j] = A^{(k)}_{k-j-1} - A^{(k)}_{k-j} for j < k
    D[:, :-1] = Amat[:, 1:] - Amat[:, :-1]
    D = np.tril(D, -1)
    for n in range(N):
        row = P[n]
        row[n] = 1.0 / A0[n]
        for j in range(n - 1, -1, -1):
            row[j] = np.dot(D[j + 1 : n + 1, j], row[j + 1 : n + 1]) / A0[j]


if HAVE_NUMBA:

    @njit(cache=True, fastmath=False)
    def _history_update_nb(H, decay, b, dv, c_next, out):
        nd, nq = H.shape
        for i in range(nd):
            d = dv[i]
            acc = 0.0
            for l in range(nq):
                h = decay[l] * H[i, l] + b[l] * d
                H[i, l] = h
                acc += c_next[l] * h
            out[i] = acc

    @njit(cache=True)
    def _history_term_nb(H, c, out):
        nd, nq = H.shape
        for i in range(nd):
            acc = 0.0
            for l in range(nq):
                acc += c[l] * H[i, l]
            out[i] = acc

    @njit(cache=True)
    def _laplacian_nb(f, ih1, ih2, out):
        m2, m1 = f.shape
        for j in range(m2):
            jm = j - 1 if j > 0 else m2 - 1
            jp = j + 1 if j < m2 - 1 else 0
            for i in range(m1):
                im = i - 1 if i > 0 else m1 - 1
                ip = i + 1 if i < m1 - 1 else 0
                c = f[j, i]
                out[j, i] = (f[j, im] - 2.0 * c + f[j, ip]) * ih1 + (f[jm, i] - 2.0 * c + f[jp, i]) * ih2

    @njit(cache=True)
    def _complementary_nb(Amat, P):
        N = Amat.shape[0]
        for n in range(N):
            P[n, n] = 1.0 / Amat[n, n]
            for j in range(n - 1, -1, -1):
                acc = 0.0
                for k in range(j + 1, n + 1):
                    acc += (Amat[k, j + 1] - Amat[k, j]) * P[n, k]
                P[n, j] = acc / Amat[j, j]

    history_update = _history_update_nb
    # a plain matvec: BLAS beats the compiled loop here
    history_term = _history_term_np
    laplacian_kernel = _laplacian_nb
    complementary_kernel = _complementary_nb
else:
    history_update = _history_update_np
    history_term = _history_term_np
    laplacian_kernel = _laplacian_np
    complementary_kernel = _complementary_np

# always-available reference implementations, used by tests and benchmarks
NUMPY_KERNELS = {
    "history_update": _history_update_np,
    "history_term": _history_term_np,
    "laplacian": _laplacian_np,
    "complementary": _complementary_np,
}

# compiled variants keyed like NUMPY_KERNELS; empty when numba is off
NUMBA_KERNELS = (
    {
        "history_update": _history_update_nb,
        "history_term": _history_term_nb,
        "laplacian": _laplacian_nb,
        "complementary": _complementary_nb,
    }
    if HAVE_NUMBA
    else {}
)
