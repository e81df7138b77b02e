"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Sizes mirror a bubbles run (128 x 128 grid, ~400 SOE nodes) and a
128-level complementary-kernel solve.  Both paths are checked for agreement
before timing; the first numba call (compilation) is excluded.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from tfac import _accel


def _cases(rng):
    nd, nq = 128 * 128, 400
    H = rng.standard_normal((nd, nq))
    decay = np.exp(-rng.random(nq))
    b = rng.random(nq)
    dv = rng.standard_normal(nd)
    c = rng.random(nq)
    f = rng.standard_normal((128, 128))
    N = 128
    A = np.tril(rng.random((N, N)) * 0.1) + np.diag(1.0 + rng.random(N))
    A = np.sort(A, axis=1)[:, ::-1].copy()  # decreasing along rows, like kernel rows
    A = np.tril(A)
    def hu(k):
        out = np.empty(nd)
        k(H.copy(), decay, b, dv, c, out)
        return out

    def ht(k):
        out = np.empty(nd)
        k(H, c, out)
        return out

    def lap(k):
        out = np.empty_like(f)
        k(f, 7.0, 7.0, out)
        return out

    def comp(k):
        P = np.zeros_like(A)
        k(A, P)
        return P

    return {"history_update": hu, "history_term": ht, "laplacian": lap, "complementary": comp}


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeat: int = 20, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    cases = _cases(rng)
    out = {}
    for name, call in cases.items():
        np_k = _accel.NUMPY_KERNELS[name]
        row = {"numpy_s": _time(lambda: call(np_k), repeat)}
        nb_k = _accel.NUMBA_KERNELS.get(name)
        if nb_k is not None:
            ref, got = call(np_k), call(nb_k)  # also compiles
            if not np.allclose(ref, got, rtol=1e-12, atol=1e-12 * np.abs(ref).max()):
                raise AssertionError(f"{name}: numba and numpy disagree")
            row["numba_s"] = _time(lambda: call(nb_k), repeat)
            row["speedup"] = row["numpy_s"] / row["numba_s"]
        out[name] = row
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--json", help="write results here as well")
    args = p.parse_args()
    res = run(args.repeat)
    print(f"backend: {_accel.BACKEND}")
    print(f"{'kernel':16s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, r in res.items():
        nb = f"{1e3 * r['numba_s']:11.3f}" if "numba_s" in r else f"{'-':>11s}"
        sp = f"{r['speedup']:8.1f}" if "speedup" in r else f"{'-':>8s}"
        print(f"{name:16s} {1e3 * r['numpy_s']:11.3f} {nb} {sp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
