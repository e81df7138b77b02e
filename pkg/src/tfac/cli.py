"""Command-line front end.

Subcommands: ``convergence``, ``bubbles``, ``kernel-check``, ``soe-table``,
``singularity``. Exit codes: 0 success, 1 usage, 2 assertion failure,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, parse_value
from .frackernel import ToleranceUnachievable, build_soe
from .mesh import AdaptiveParams, TimeMesh, concat_mesh, graded_mesh, random_tail_mesh
from .schemes import (
    GuaranteeWarning,
    MarchResult,
    PicardDiverged,
    SchemeConfig,
    StepError,
    march,
)
from .spatial import Grid2D, write_snapshot, snapshot_name
from .verify import (
    ConvergenceRow,
    convergence_mesh,
    convergence_order,
    energy_monitor,
    fast_vs_direct_kernels,
    gronwall_suite,
    max_principle_monitor,
    psd_probe,
    run_manufactured,
    singularity_probe,
    soe_scan,
    theoretical_rate,
)

log = logging.getLogger("tfac")

EXIT_OK, EXIT_USAGE, EXIT_ASSERT, EXIT_NUMERIC = 0, 1, 2, 3


class AssertionFailure(RuntimeError):
    pass


# --- helpers ---------------------------------------------------------------------

def scheme_config(cfg: RunConfig) -> SchemeConfig:
    return SchemeConfig(
        alpha=cfg["alpha"],
        eps2=cfg["epsilon2"],
        scheme=cfg["scheme"],
        S=cfg.get("S", 0.0),
        picard_tol=cfg.get("picard_tol", 1e-12),
        picard_max_iter=cfg.get("picard_max_iter", 200),
        soe_eps=cfg.get("soe_eps", 1e-12),
        solver=cfg.get("solver", "fft"),
    )


def make_grid(cfg: RunConfig) -> Grid2D:
    a, b, c, d = cfg.get("domain", [0.0, 1.0, 0.0, 1.0])
    M = cfg["grid.M"]
    return Grid2D(M, M, a, b, c, d)


def bubbles_initial(grid: Grid2D) -> np.ndarray:
    """0.5 inside the unit disks centred at (-1, 0) and (1, 0), -0.5 elsewhere."""
    X, Y = grid.mesh()
    inside = ((X + 1.0) ** 2 + Y**2 <= 1.0) | ((X - 1.0) ** 2 + Y**2 <= 1.0)
    return np.where(inside, 0.5, -0.5)


def initial_field(cfg: RunConfig, grid: Grid2D) -> np.ndarray:
    if cfg.get("initial", "zero") == "bubbles":
        return bubbles_initial(grid)
    return np.zeros(grid.shape)


def _write_csv(path: Path, header: str, columns: list[str], rows, footer: str = "") -> Path:
    with open(path, "w") as fh:
        fh.write(header)
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")
        if footer:
            fh.write(footer)
    return path


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else f"{v:.17g}"


def run_phase_field(cfg: RunConfig, grid: Grid2D | None = None) -> MarchResult:
    """March the configured (non-manufactured) problem."""
    grid = grid or make_grid(cfg)
    sc = scheme_config(cfg)
    u0 = initial_field(cfg, grid)
    kind = cfg["mesh.kind"]
    head = graded_mesh(cfg["mesh.T0"], cfg["mesh.N0"], cfg["mesh.gamma"])
    snaps = cfg.get("snapshot_times", [])
    T = cfg["T"]
    if kind == "graded+adaptive":
        adapt = AdaptiveParams(cfg["adapt.tol"], cfg["adapt.beta"], cfg["adapt.tau_min"], cfg["adapt.tau_max"])
        return march(sc, grid, u0, head=head, adapt=adapt, T=T, snapshot_times=snaps,
                     reject=cfg.get("adapt.reject", True))
    if kind == "graded+random" and T > head.T:
        tail = random_tail_mesh(head.T, T, cfg["mesh.N1"], cfg["mesh.seed"])
        mesh = concat_mesh(head, tail, end=T)
    else:
        mesh = head
    return march(sc, grid, u0, mesh=mesh, snapshot_times=snaps)


# --- subcommands -------------------------------------------------------------------

def cmd_convergence(cfg: RunConfig, out: Path, threads: int = 1) -> list[Path]:
    sc = scheme_config(cfg)
    sigma = cfg["sigma"]
    Ns = cfg["Ns"]
    seed = cfg["mesh.seed"]
    T = cfg["T"]
    cells = [(g, N) for g in cfg["gammas"] for N in Ns]

    def run_cell(cell):
        g, N = cell
        mesh = convergence_mesh(N, g, T, seed=(seed, N), N0=cfg.get("mesh.N0"))
        err, _ = run_manufactured(sc, sigma, cfg["grid.M"], mesh)
        log.info("gamma=%g N=%d tau=%.3e error=%.3e", g, N, mesh.tau_max, err)
        return ConvergenceRow(N, mesh.tau_max, err)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(c) for c in cells]

    paths = []
    header = cfg.header()
    for g in cfg["gammas"]:
        table = [r for (gg, _), r in zip(cells, rows) if gg == g]
        if len(table) > 1:
            for r, o in zip(table, convergence_order([r.error for r in table], [r.tau for r in table])):
                r.order = o
        rate = theoretical_rate(sc.scheme, sc.alpha, sigma, g)
        note = "min{gamma*sigma, 2-alpha}" if sc.scheme == "backward-euler" else "min{gamma*sigma, 1}"
        path = out / f"convergence_{cfg['experiment']}_gamma{g:g}.csv"
        _write_csv(
            path,
            header + f"# gamma = {g!r}\n",
            ["N", "tau", "error", "order"],
            [(r.N, r.tau, r.error, r.order) for r in table],
            footer=f"# theoretical rate {note} = {rate:.2f}\n",
        )
        print(f"gamma = {g:g}   (theoretical {note} = {rate:.2f})")
        for r in table:
            o = "-" if math.isnan(r.order) else f"{r.order:.2f}"
            print(f"  N={r.N:5d}  tau={r.tau:.2e}  e={r.error:.2e}  order={o}")
        paths.append(path)
    return paths


def write_run_outputs(cfg: RunConfig, res: MarchResult, grid: Grid2D, out: Path) -> dict:
    header = cfg.header()
    _write_csv(
        out / "records.csv",
        header,
        ["t", "tau", "unorm", "energy", "iters"],
        [(r.t, r.tau, r.unorm, r.energy, r.iters) for r in res.records],
    )
    for t, u in res.snapshots:
        write_snapshot(out / snapshot_name(t), u, grid, t, header=header)
    mp = max_principle_monitor([r.unorm for r in res.records])
    en = energy_monitor([r.energy for r in res.records])
    report = {
        "levels": len(res.records),
        "soe_nq": res.soe.nq if res.soe is not None else 0,
        "soe_maxdev": res.soe.maxdev if res.soe is not None else None,
        "max_principle": {"ok": mp.ok, "first_violation": mp.first_violation, "max_unorm": mp.worst},
        "energy": {"increases": en.count, "largest_increase": en.worst, "first": en.first_violation},
        "picard_iters_max": max((r.iters for r in res.records), default=0),
        "rejected_steps": res.meta.get("rejected", 0),
    }
    (out / "monitors.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def cmd_bubbles(cfg: RunConfig, out: Path) -> dict:
    grid = make_grid(cfg)
    res = run_phase_field(cfg, grid)
    report = write_run_outputs(cfg, res, grid, out)
    print(json.dumps(report, indent=2))
    if not report["max_principle"]["ok"]:
        raise AssertionFailure(f"maximum principle violated at level {report['max_principle']['first_violation']}")
    return report


def cmd_singularity(cfg: RunConfig, out: Path):
    grid = make_grid(cfg)
    res = run_phase_field(cfg, grid)
    t = res.column("t")
    dq = res.column("dq")
    fit = singularity_probe(t, dq, t_lo=cfg.get("fit.t_lo"), decades=cfg.get("fit.decades", 1.0))
    header = cfg.header() + (
        f"# fit window = [{fit.t_lo!r}, {fit.t_hi!r}] ({fit.npts} levels)\n"
        f"# fitted slope = {fit.slope!r}\n# expected alpha - 1 = {cfg['alpha'] - 1.0!r}\n"
    )
    keep = (t > 0) & (dq > 0)
    _write_csv(out / "singularity.csv", header, ["log10_t", "log10_dq"],
               zip(np.log10(t[keep]), np.log10(dq[keep])))
    print(f"slope = {fit.slope:.4f} over [{fit.t_lo:.3g}, {fit.t_hi:.3g}] ({fit.npts} levels); "
          f"alpha - 1 = {cfg['alpha'] - 1:.2f}")
    return fit


def _kernel_meshes(N: int, seed) -> dict[str, TimeMesh]:
    from .mesh import make_rng

    rng = make_rng(seed)
    steps = rng.random(N) + 0.05
    return {
        "uniform": graded_mesh(1.0, N, 1.0),
        "graded3": graded_mesh(1.0, N, 3.0),
        "random": TimeMesh.from_steps(steps / steps.sum()),
    }


def cmd_kernel_check(cfg: RunConfig, out: Path) -> dict:
    alpha = cfg["alpha"]
    eps = cfg["soe_eps"]
    check_eps = cfg.get("check.eps", eps)
    N = cfg["check.N"]
    meshes = _kernel_meshes(N, cfg["mesh.seed"])
    dt = min(m.tau_min for m in meshes.values())
    soe = build_soe(alpha, eps, dt, 1.0)
    scan = soe_scan(soe)
    scan["ok"] = scan["maxdev"] <= check_eps
    report: dict = {"soe": scan, "fast_vs_direct": {}, "gronwall": {}, "psd_probe": {}}
    failures = []
    if not scan["ok"]:
        failures.append(f"SOE scan deviation {scan['maxdev']:.3g} > {check_eps:.3g}")
    signals = {"t": lambda t: t, "sqrt": lambda t: np.sqrt(t), "sin": lambda t: np.sin(3 * t)}
    for name, m in meshes.items():
        worst = max(fast_vs_direct_kernels(m, soe, s) for s in signals.values())
        ok = worst <= 1e4 * eps
        report["fast_vs_direct"][name] = {"maxdiff": worst, "ok": ok}
        if not ok:
            failures.append(f"fast/direct mismatch on {name}: {worst:.3g}")
        g = gronwall_suite(m, alpha, soe)
        report["gronwall"][name] = g.__dict__
        if not g.ok:
            failures.append(f"Gronwall identities fail on {name}")
        report["psd_probe"][name] = psd_probe(m, alpha)  # observational only
    report["failures"] = failures
    text = json.dumps(report, indent=2, default=float)
    (out / "kernel_check.json").write_text(text + "\n")
    print(text)
    if failures:
        raise AssertionFailure("; ".join(failures))
    return report


def cmd_soe_table(cfg: RunConfig, out: Path) -> Path:
    soe = build_soe(cfg["alpha"], cfg["soe_eps"], cfg["soe.dt"], cfg["T"])
    path = out / "soe_table.csv"
    head = (
        cfg.header()
        + f"# alpha={soe.alpha!r}, eps={soe.eps!r}, dt={soe.dt!r}, T={soe.T!r}, Nq={soe.nq}, maxdev={soe.maxdev!r}\n"
    )
    _write_csv(path, head, ["theta", "weight"], zip(soe.theta, soe.weight))
    print(f"Nq={soe.nq} maxdev={soe.maxdev:.3e} certified={soe.certified} -> {path}")
    return path


COMMANDS = {
    "convergence": cmd_convergence,
    "bubbles": cmd_bubbles,
    "kernel-check": cmd_kernel_check,
    "soe-table": cmd_soe_table,
    "singularity": cmd_singularity,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit with 1
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value run-config file")
    common.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent table cells")
    common.add_argument("--seed", type=int, help="random seed (overrides mesh.seed)")
    common.add_argument("--experiment", help="preset name (table1..table4, bubbles, bubbles-stabilized, fig1)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="tfac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already printed
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_values = load_config(args.config) if args.config else {}
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = (s.strip() for s in item.split("=", 1))
            overrides[k] = parse_value(k, v)
        if args.experiment:
            overrides["experiment"] = args.experiment
        if args.seed is not None:
            overrides["mesh.seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = str(args.out)
        cfg = RunConfig.resolve(args.command, file_values, overrides)
    except (ConfigError, OSError) as exc:
        print(f"tfac: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg.get("out_dir", "tfac_out"))
    out.mkdir(parents=True, exist_ok=True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", GuaranteeWarning)
            if args.command == "convergence":
                cmd_convergence(cfg, out, threads=args.threads)
            else:
                COMMANDS[args.command](cfg, out)
    except AssertionFailure as exc:
        print(f"tfac: assertion failure: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except (PicardDiverged, ToleranceUnachievable, StepError, FloatingPointError) as exc:
        print(f"tfac: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
