"""2-D periodic finite differences: grid, Laplacian, shifted solves, energy.

Fields are arrays of shape ``(M2, M1)`` indexed ``[j, i]`` (``y`` outer, ``x``
inner), so ``field.ravel()`` follows the ``I (x) D1 + D2 (x) I`` ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, cg

from . import _accel

__all__ = [
    "Grid2D",
    "laplacian_apply",
    "laplacian_symbol",
    "HelmholtzSolver",
    "helmholtz_solve",
    "inf_norm",
    "discrete_energy",
    "write_snapshot",
    "read_snapshot",
    "NonPositiveShift",
]


class NonPositiveShift(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    M1: int
    M2: int
    a: float = 0.0
    b: float = 1.0
    c: float = 0.0
    d: float = 1.0

    def __post_init__(self):
        if self.M1 < 2 or self.M2 < 2:
            raise ValueError("need at least 2 cells per direction")
        if not (self.b > self.a and self.d > self.c):
            raise ValueError("empty domain")

    @classmethod
    def square(cls, M: int, lo: float = 0.0, hi: float = 1.0) -> "Grid2D":
        return cls(M, M, lo, hi, lo, hi)

    @property
    def h1(self) -> float:
        return (self.b - self.a) / self.M1

    @property
    def h2(self) -> float:
        return (self.d - self.c) / self.M2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M2, self.M1)

    @property
    def size(self) -> int:
        return self.M1 * self.M2

    @property
    def area(self) -> float:
        return (self.b - self.a) * (self.d - self.c)

    @cached_property
    def x(self) -> np.ndarray:
        return self.a + self.h1 * np.arange(self.M1)

    @cached_property
    def y(self) -> np.ndarray:
        return self.c + self.h2 * np.arange(self.M2)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``X, Y`` of shape ``(M2, M1)``."""
        return np.meshgrid(self.x, self.y, indexing="xy")


def laplacian_apply(f: np.ndarray, grid: Grid2D, out: np.ndarray | None = None) -> np.ndarray:
    """Periodic 5-point Laplacian ``D_h f`` (matrix-free)."""
    f = np.ascontiguousarray(f, dtype=float).reshape(grid.shape)
    if out is None:
        out = np.empty_like(f)
    _accel.laplacian_kernel(f, 1.0 / grid.h1**2, 1.0 / grid.h2**2, out)
    return out


def laplacian_symbol(grid: Grid2D, rfft: bool = True) -> np.ndarray:
    """``-eig(D_h) = (4/h1^2) sin^2(pi p/M1) + (4/h2^2) sin^2(pi q/M2) >= 0``.

    Laid out to match ``rfft2`` (or full ``fft2`` when ``rfft=False``) of a
    ``(M2, M1)`` field.
    """
    m1 = grid.M1 // 2 + 1 if rfft else grid.M1
    p = np.arange(m1)
    q = np.arange(grid.M2)
    s1 = 4.0 / grid.h1**2 * np.sin(np.pi * p / grid.M1) ** 2
    s2 = 4.0 / grid.h2**2 * np.sin(np.pi * q / grid.M2) ** 2
    return s2[:, None] + s1[None, :]


class HelmholtzSolver:
    """Solves ``(c I - eps2 D_h) u = b`` on a fixed grid.

    ``method="fft"`` diagonalizes the circulant operator; ``method="cg"`` is a
    matrix-free conjugate-gradient fallback with the same residual contract.
    """

    def __init__(self, grid: Grid2D, eps2: float, method: str = "fft", tol: float = 1e-13):
        if method not in ("fft", "cg"):
            raise ValueError(f"unknown method {method!r}")
        self.grid = grid
        self.eps2 = eps2
        self.method = method
        self.tol = tol
        self._sym = eps2 * laplacian_symbol(grid) if method == "fft" else None

    def apply(self, c: float, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(self.grid.shape)
        return c * u - self.eps2 * laplacian_apply(u, self.grid)

    def solve(self, c: float, b: np.ndarray) -> np.ndarray:
        if not c > 0.0:
            raise NonPositiveShift(f"shift must be positive, got {c!r}")
        b = np.asarray(b, dtype=float).reshape(self.grid.shape)
        if self.method == "fft":
            bh = sfft.rfft2(b)
            bh /= c + self._sym
            return sfft.irfft2(bh, s=self.grid.shape)
        return self._solve_cg(c, b)

    def _solve_cg(self, c, b):
        n = self.grid.size
        op = LinearOperator((n, n), matvec=lambda v: self.apply(c, v).ravel(), dtype=float)
        bnorm = np.abs(b).max()
        if bnorm == 0.0:
            return np.zeros_like(b)
        # the operator is SPD with spectrum in [c, c + 8 eps2/h^2]; the 2-norm rtol
        # is scaled towards the max-norm contract, and a few refinement sweeps on
        # the true residual absorb the drift of the recursive one
        x = b.ravel() / c
        r = b.ravel() - op.matvec(x)
        for _ in range(4):
            if np.abs(r).max() <= self.tol * bnorm:
                break
            dx, info = cg(op, r, rtol=self.tol / math.sqrt(n), atol=0.0, maxiter=10 * n)
            if info != 0:
                raise RuntimeError(f"CG failed to converge (info={info})")
            x = x + dx
            r = b.ravel() - op.matvec(x)
        return x.reshape(self.grid.shape)


def helmholtz_solve(c: float, eps2: float, b: np.ndarray, grid: Grid2D, method: str = "fft") -> np.ndarray:
    """One-shot ``(c I - eps2 D_h)^{-1} b``."""
    return HelmholtzSolver(grid, eps2, method).solve(c, b)


def inf_norm(f) -> float:
    f = np.asarray(f)
    return float(np.abs(f).max()) if f.size else 0.0


def discrete_energy(f: np.ndarray, grid: Grid2D, eps2: float) -> float:
    """``sum h1 h2 [eps2/2 (|D+x f|^2 + |D+y f|^2) + (1 - f^2)^2 / 4]`` (periodic)."""
    f = np.asarray(f, dtype=float).reshape(grid.shape)
    dx = (np.roll(f, -1, axis=1) - f) / grid.h1
    dy = (np.roll(f, -1, axis=0) - f) / grid.h2
    dens = 0.5 * eps2 * (dx * dx + dy * dy) + 0.25 * (1.0 - f * f) ** 2
    return float(dens.sum() * grid.h1 * grid.h2)


def snapshot_name(t: float) -> str:
    return f"snap_t{t:.6g}.csv"


def write_snapshot(path: Path, f: np.ndarray, grid: Grid2D, t: float, header: str = "") -> Path:
    """CSV snapshot: optional comment block, ``# t=.. M1=.. M2=..``, one row per ``j``."""
    path = Path(path)
    if path.is_dir():
        path = path / snapshot_name(t)
    f = np.asarray(f, dtype=float).reshape(grid.shape)
    with open(path, "w") as fh:
        if header:
            fh.write(header)
        fh.write(f"# t={t!r} M1={grid.M1} M2={grid.M2}\n")
        for row in f:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")
    return path


def read_snapshot(path: Path) -> tuple[float, np.ndarray]:
    t = math.nan
    with open(path) as fh:
        for line in fh:
            if line.startswith("# t="):
                t = float(line.split()[1].split("=")[1])
    return t, np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
