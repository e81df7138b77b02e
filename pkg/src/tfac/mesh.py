"""Nonuniform time meshes: graded heads, random tails, adaptive steps."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "TimeMesh",
    "AdaptiveParams",
    "AssgReport",
    "graded_mesh",
    "uniform_mesh",
    "random_tail_mesh",
    "concat_mesh",
    "adaptive_next_step",
    "check_assg",
    "make_rng",
]


@dataclass(frozen=True, eq=False)
class TimeMesh:
    """Time levels ``0 = t_0 < t_1 < ... < t_N = T``."""

    nodes: np.ndarray

    def __post_init__(self):
        t = np.array(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("nodes must be a non-empty 1-D sequence")
        if t[0] != 0.0:
            raise ValueError("mesh must start at t_0 = 0")
        if t.size > 1 and not np.all(np.diff(t) > 0.0):
            raise ValueError("mesh nodes must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @classmethod
    def from_steps(cls, steps: Sequence[float]) -> "TimeMesh":
        return cls(np.concatenate([[0.0], np.cumsum(steps)]))

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        """``tau_k = t_k - t_{k-1}`` for ``k = 1..N`` (index ``k-1``)."""
        return np.diff(self.nodes)

    @property
    def ratios(self) -> np.ndarray:
        """``rho_k = tau_k / tau_{k+1}`` for ``k = 1..N-1``."""
        s = self.steps
        return s[:-1] / s[1:]

    @property
    def tau_max(self) -> float:
        return float(self.steps.max()) if self.N else 0.0

    @property
    def tau_min(self) -> float:
        return float(self.steps.min()) if self.N else 0.0

    @property
    def rho_max(self) -> float:
        r = self.ratios
        return float(r.max()) if r.size else 1.0

    def __len__(self) -> int:
        return self.nodes.size


@dataclass(frozen=True)
class AdaptiveParams:
    tol: float
    beta: float
    tau_min: float
    tau_max: float

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.beta < 0.0:
            raise ValueError("beta must be non-negative")
        if not 0.0 < self.tau_min <= self.tau_max:
            raise ValueError("need 0 < tau_min <= tau_max")


def graded_mesh(T0: float, N0: int, gamma: float) -> TimeMesh:
    """``t_k = T0 * (k / N0)**gamma``, ``k = 0..N0``."""
    if N0 < 1:
        raise ValueError("N0 must be >= 1")
    if gamma < 1.0:
        raise ValueError("grading parameter gamma must be >= 1")
    if T0 <= 0.0:
        raise ValueError("T0 must be positive")
    k = np.arange(N0 + 1)
    t = T0 * (k / N0) ** gamma
    t[-1] = T0
    return TimeMesh(t)


def uniform_mesh(T: float, N: int) -> TimeMesh:
    return graded_mesh(T, N, 1.0)


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; ``seed`` may be an int or a sequence of ints."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def random_tail_mesh(T0: float, T: float, N1: int, seed) -> np.ndarray:
    """Random steps filling ``[T0, T]``: ``tau_k = (T - T0) e_k / sum e``.

    ``e_k`` are uniform on (0, 1). The last step absorbs rounding so that
    ``T0 + sum(steps)`` closes the interval.
    """
    if T <= T0:
        raise ValueError("need T > T0")
    if N1 < 1:
        raise ValueError("N1 must be >= 1")
    rng = make_rng(seed)
    e = rng.random(N1)
    while np.any(e == 0.0):  # open interval
        e[e == 0.0] = rng.random(int(np.sum(e == 0.0)))
    length = T - T0
    steps = length * e / e.sum()
    steps[-1] = length - math.fsum(steps[:-1])
    return steps


def concat_mesh(head: TimeMesh, tail_steps, end: float | None = None) -> TimeMesh:
    """Append ``tail_steps`` to ``head``; ``end`` pins the final node exactly."""
    tail = np.asarray(tail_steps, dtype=float)
    if tail.size == 0:
        return head
    if np.any(tail <= 0.0):
        raise ValueError("tail steps must be positive")
    t0 = head.nodes[-1]
    nodes = np.concatenate([head.nodes, t0 + np.cumsum(tail)])
    if end is not None:
        if not math.isclose(nodes[-1], end, rel_tol=1e-12, abs_tol=1e-14):
            raise ValueError(f"tail ends at {nodes[-1]!r}, expected {end!r}")
        nodes[-1] = end
    return TimeMesh(nodes)


def adaptive_next_step(change_inf: float, p: AdaptiveParams) -> float:
    """``min(max(tau_min, tol / (1 + beta * change)), tau_max)``."""
    if change_inf < 0.0:
        raise ValueError("change must be non-negative")
    return min(max(p.tau_min, p.tol / (1.0 + p.beta * change_inf)), p.tau_max)


@dataclass(frozen=True)
class AssgReport:
    holds: bool
    worst_k: int | None  # first violating level, 1-based


def check_assg(mesh: TimeMesh, gamma: float, C_gamma: float) -> AssgReport:
    """Check ``tau_k <= C tau min(1, t_k**(1-1/gamma))`` and ``t_k <= C t_{k-1}``."""
    if C_gamma <= 0.0:
        raise ValueError("C_gamma must be positive")
    t = mesh.nodes
    tau = mesh.steps
    tk = t[1:]
    bound = C_gamma * mesh.tau_max * np.minimum(1.0, tk ** (1.0 - 1.0 / gamma))
    bad1 = np.nonzero(tau > bound * (1 + 1e-14))[0]
    first = [int(bad1[0]) + 1] if bad1.size else []
    if mesh.N >= 2:
        bad2 = np.nonzero(t[2:] > C_gamma * t[1:-1] * (1 + 1e-14))[0]
        if bad2.size:
            first.append(int(bad2[0]) + 2)
    if first:
        return AssgReport(False, min(first))
    return AssgReport(True, None)
