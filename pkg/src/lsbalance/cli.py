"""Command-line driver: nested-iteration runs of the Burgers examples and the manufactured case.

    lsbalance run --example 1 --levels 6 --order-v 2 --out results/ex1_p2
    lsbalance --config ex3.cfg --eta 1

A config file holds ``key = value`` lines with the flag names (dashes or
underscores); flags given on the command line win.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import linalg, output
from .diagnostics import build_table, collision_point, error_norms, smooth_error_norms
from .exact import exact_solution
from .problems import example_spec, manufactured_solution, manufactured_spec
from .solver import GNOptions, StalledLineSearch, nested_iterate, write_iteration_log

log = logging.getLogger("lsbalance")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    example: str = "1"
    levels: int = 4
    order_u: int = 1
    order_v: int = 1
    eta: float | None = None
    tol: float = 1e-8
    max_iters: int = 50
    out: str = "lsbalance_out"
    grid: int = 128
    figures: bool = True
    vtk: bool = True

    def __post_init__(self):
        self.example = str(self.example).strip().lower()
        if self.example not in ("1", "2", "3", "manufactured"):
            raise ConfigError(f"example must be 1, 2, 3 or manufactured, got {self.example!r}")
        if int(self.levels) < 1:
            raise ConfigError("levels must be >= 1")
        if self.order_u not in (1, 2) or self.order_v not in (1, 2):
            raise ConfigError("orders must be 1 or 2")
        if not self.tol > 0 or self.max_iters < 0 or self.grid < 1:
            raise ConfigError("tol must be positive, max_iters and grid non-negative")

    @property
    def manufactured(self) -> bool:
        return self.example == "manufactured"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw):
    if raw is None or not isinstance(raw, str):
        return raw
    kind = _TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: not a boolean: {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind.startswith("float"):
            return None if raw.lower() in ("", "none") else float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.lstrip("-").replace("-", "_")
        if k not in _TYPES:
            raise ConfigError(f"{path}:{n}: unknown key {k!r}")
        out[k] = _coerce(k, v)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsbalance", description=__doc__.splitlines()[0])
    p.add_argument("command", nargs="?", choices=["run"], default="run")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--example", help="1, 2, 3 or manufactured")
    p.add_argument("--levels", type=int)
    p.add_argument("--order-u", type=int, choices=(1, 2))
    p.add_argument("--order-v", type=int, choices=(1, 2))
    p.add_argument("--eta", type=float, help="regularize with eps = h**eta")
    p.add_argument("--tol", type=float, help="relative functional change stopping tolerance")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid", type=int, help="samples per unit length for the CSV grids (default 128)")
    p.add_argument("--no-figures", dest="figures", action="store_const", const=False)
    p.add_argument("--no-vtk", dest="vtk", action="store_const", const=False)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(argv=None) -> tuple[RunConfig, bool]:
    ns = build_parser().parse_args(argv)
    vals = read_config(ns.config) if ns.config else {}
    for k in _TYPES:
        v = getattr(ns, k, None)
        if v is not None:
            vals[k] = v
    return RunConfig(**vals), ns.verbose


# --- running -----------------------------------------------------------------------------------

def _level_grid(cfg: RunConfig, rect):
    t0, t1, x0, x1 = rect
    return output.sample_grid(rect, max(1, round(cfg.grid * (t1 - t0))), max(1, round(cfg.grid * (x1 - x0))))


def _solve(cfg: RunConfig, prob, exact, smooth: bool):
    opts = GNOptions(rel_tol=cfg.tol, max_iters=cfg.max_iters, eta=cfg.eta)

    def measure(rep, disc):
        t = time.perf_counter()
        l2, l1, l1sq = (smooth_error_norms(rep.u, exact) if smooth else error_norms(rep.u, exact))
        rep.errors.update(l2sq=l2, l1=l1, l1sq=l1sq)
        log.info("level %d: %d GN iterations, M^h=%.6e, |e|^2_L2=%.4e (%.1fs solve, %.1fs errors)",
                 rep.level, rep.iterations, rep.M_h, l2, rep.seconds, time.perf_counter() - t)

    return nested_iterate(prob, cfg.levels, (cfg.order_u, cfg.order_v), opts, callback=measure)


def _write_level(cfg: RunConfig, out: Path, rep, exact):
    u = rep.u
    m = u.space.mesh
    T, X = _level_grid(cfg, m.rect)
    cols = {"u": u(T, X)}
    if exact is not None:
        cols["exact"] = exact(T, X)
    output.write_grid_csv(out / f"solution_level{rep.level}.csv", T, X, cols)
    if cfg.vtk:
        V = m.vertices
        pdata = {"u": u.coefficients[:m.n_vertices]}
        if exact is not None:
            pdata["exact"] = exact(V[:, 0], V[:, 1])
        pdata["q"] = rep.fields[1].coefficients[:m.n_vertices]
        pdata["psi"] = rep.fields[2].coefficients[:m.n_vertices]
        output.write_vtk(out / f"solution_level{rep.level}.vtk", m, pdata,
                         title=f"level {rep.level} h={m.h!r}")


def _finite(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    return x


def run(cfg: RunConfig) -> int:
    """Nested-iteration run with all artifacts written to ``cfg.out``."""
    if cfg.manufactured:
        return run_manufactured(cfg)
    out = output.ensure_dir(cfg.out)
    k = int(cfg.example)
    prob = example_spec(k)
    exact = exact_solution(k)
    t0 = time.perf_counter()
    reports = _solve(cfg, prob, exact, smooth=False)
    table = build_table(reports)
    _common_outputs(cfg, out, reports, table, exact)
    lines = exact.polylines()
    output.write_polylines_csv(out / "shocks.csv", lines)
    output.write_vtk_polylines(out / "shocks.vtk", lines)
    summary = _summary(cfg, reports, table, time.perf_counter() - t0)
    pts = exact.special_points()
    summary["oracle"] = {"collision": pts["collision"], "exits": pts["exits"]}
    if k == 3:
        cp = collision_point(reports[-1].u)
        summary["collision_from_solution"] = cp
        if cp is not None and pts["collision"] is not None:
            d = math.hypot(cp[0] - pts["collision"][0], cp[1] - pts["collision"][1])
            summary["collision_distance_over_h"] = d / reports[-1].h
    if cfg.figures:
        from . import plotting
        plotting.plot_solution(out / "solution.png", reports[-1].u, exact,
                               title=f"Example {k}, level {reports[-1].level}")
    _dump_summary(out, summary)
    return 0


def run_manufactured(cfg: RunConfig) -> int:
    """Smooth manufactured solution; reports squared-L2 contraction factors per level."""
    out = output.ensure_dir(cfg.out)
    prob = manufactured_spec()
    t0 = time.perf_counter()
    reports = _solve(cfg, prob, manufactured_solution, smooth=True)
    table = build_table(reports)
    _common_outputs(cfg, out, reports, table, manufactured_solution)
    summary = _summary(cfg, reports, table, time.perf_counter() - t0)
    e = table.column("l2sq")
    summary["contraction"] = [e[i] / e[i + 1] for i in range(len(e) - 1)]
    if cfg.figures:
        from . import plotting
        plotting.plot_solution(out / "solution.png", reports[-1].u, title="manufactured")
    _dump_summary(out, summary)
    return 0


def _common_outputs(cfg, out, reports, table, exact):
    table.write_csv(out / "convergence.csv")
    write_iteration_log(out / "iterations.csv", reports)
    for rep in reports:
        _write_level(cfg, out, rep, exact)
    if cfg.figures:
        from . import plotting
        plotting.plot_convergence(out / "convergence.png", table)
        plotting.plot_iterations(out / "iterations.png", reports)


def _summary(cfg, reports, table, seconds) -> dict:
    M = [r.M_h for r in reports]
    return {
        "config": asdict(cfg),
        "linear_backend": linalg.backend(),
        "levels": [dict(level=r.level, h=r.h, iterations=r.iterations, M_h=r.M_h, eps=r.eps,
                        converged=r.converged, seconds=round(r.seconds, 3), **r.errors) for r in reports],
        "iterations": [r.iterations for r in reports],
        "l2sq_rate_last2": _finite(table.rate("l2sq")),
        "l1sq_rate_last2": _finite(table.rate("l1sq")),
        "dMh_rate_last": _finite(table.rate("dMh", 1)),
        "functional_nonincreasing": all(a - b >= -1e-10 for a, b in zip(M, M[1:])),
        "seconds": round(seconds, 3),
    }


def _dump_summary(out: Path, summary: dict):
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")


def main(argv=None) -> int:
    try:
        cfg, verbose = config_from_args(argv)
    except ConfigError as exc:
        print(f"lsbalance: configuration error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    try:
        status = run(cfg)
    except StalledLineSearch as exc:
        print(f"lsbalance: {exc}", file=sys.stderr)
        return 3
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, OSError, MemoryError) as exc:
        print(f"lsbalance: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {Path(cfg.out).resolve()}")
    return status


if __name__ == "__main__":
    sys.exit(main())
