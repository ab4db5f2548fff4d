"""Damped Gauss-Newton minimization of the least-squares functional and nested iteration."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .forms import Discretization, pack
from .linalg import cg_solve, cholesky_solve
from .mesh import Mesh, build_structured, refine_uniform
from .problems import ProblemSpec
from .spaces import FEField, transfer

log = logging.getLogger(__name__)

FLOOR = 1e-300


class StalledLineSearch(RuntimeError):
    """No damping factor decreased the functional; ``report`` holds the state reached."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class GNOptions:
    rel_tol: float = 1e-8
    max_iters: int = 50
    max_backtracks: int = 30
    shrink: float = 0.5
    augment: bool = True
    eta: float | None = None
    step_tol: float = 1e-12
    linear_solver: str = "cholesky"
    cg_tol: float = 1e-12

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.max_iters < 0 or self.max_backtracks < 0:
            raise ValueError("iteration limits must be non-negative")
        if self.linear_solver not in ("cholesky", "cg"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class IterationRecord:
    iteration: int
    functional: float
    damping: float
    backtracks: int
    linear_residual: float


@dataclass
class SolveReport:
    level: int
    h: float
    fields: tuple[FEField, FEField, FEField]
    M_h: float
    iterations: int
    log: list[IterationRecord] = field(default_factory=list)
    F0: float = float("nan")
    converged: bool = False
    stalled: bool = False
    seconds: float = 0.0
    orders: tuple[int, int] = (1, 1)
    eps: float = 0.0
    errors: dict = field(default_factory=dict)

    @property
    def u(self) -> FEField:
        return self.fields[0]


def _matvec_upper(U, x):
    return U @ x + U.T @ x - U.diagonal() * x


def _linear_solve(system, opts: GNOptions):
    if opts.linear_solver == "cg":
        x = cg_solve(system.A, system.b, tol=opts.cg_tol)
    else:
        x = cholesky_solve(system.upper, system.b, upper=True)
    nb = np.linalg.norm(system.b)
    r = np.linalg.norm(_matvec_upper(system.upper, x) - system.b)
    return x, (r / nb if nb > 0 else r)


def inflow_mean(disc: Discretization) -> float:
    """Mean value of the inflow data over the inflow boundary."""
    from .forms import _inflow_edges
    E = _inflow_edges(disc.U, disc.prob)
    return float(np.sum(E["weights"] * E["g"]) / np.sum(E["weights"]))


def constant_guess(disc: Discretization, value: float | None = None):
    c = inflow_mean(disc) if value is None else value
    u = FEField(disc.U, np.full(disc.U.ndofs, c))
    return u, disc.VC.zero(), disc.VI.zero()


def solve_level(prob: ProblemSpec, disc: Discretization, opts: GNOptions, init) -> SolveReport:
    """Damped Gauss-Newton from ``init`` on one level.

    Every accepted step counts as an iteration, including the one whose
    functional change falls below ``rel_tol``.  A Newton direction that is
    negligible relative to the iterate ends the loop without a step.
    """
    del prob  # carried by ``disc``
    t_start = time.perf_counter()
    u, q, psi = (f.copy() for f in init)
    F = disc.Fhat(u, q, psi)
    F0 = F
    scale = max(abs(F0), FLOOR)
    report = SolveReport(disc.mesh.level, disc.h, (u, q, psi), F, 0, F0=F0,
                         orders=(disc.order_u, disc.order_v), eps=disc.eps)
    report.log.append(IterationRecord(0, F, 0.0, 0, 0.0))

    while report.iterations < opts.max_iters:
        system = disc.gn_system(u, q, psi)
        d, lin_res = _linear_solve(system, opts)
        x = pack(u, q, psi)
        if np.linalg.norm(d) <= opts.step_tol * max(np.linalg.norm(x), FLOOR):
            report.converged = True
            break
        du, dq, dpsi = system.unpack(d)
        del system
        s = 1.0
        accepted = False
        best = np.inf
        for nb in range(opts.max_backtracks + 1):
            un, qn, pn = u + s * du, q + s * dq, psi + s * dpsi
            Fn = disc.Fhat(un, qn, pn)
            best = min(best, Fn)
            if Fn < F:
                accepted = True
                break
            s *= opts.shrink
        if not accepted:
            # no decrease within roundoff of the current value: converged
            if best - F <= 64 * np.finfo(float).eps * max(abs(F), abs(F0), FLOOR):
                report.converged = True
                break
            report.stalled = True
            report.fields, report.M_h = (u, q, psi), F
            report.seconds = time.perf_counter() - t_start
            raise StalledLineSearch(f"line search failed after {opts.max_backtracks} halvings "
                                    f"at level {disc.mesh.level}", report)
        change = abs(F - Fn) / scale
        u, q, psi, F = un, qn, pn, Fn
        report.iterations += 1
        report.log.append(IterationRecord(report.iterations, F, s, nb, lin_res))
        log.info("level %d it %d F=%.12e s=%g", disc.mesh.level, report.iterations, F, s)
        if change <= opts.rel_tol:
            report.converged = True
            break

    report.fields = (u, q, psi)
    report.M_h = F
    report.seconds = time.perf_counter() - t_start
    return report


def coarse_mesh(prob: ProblemSpec) -> Mesh:
    nt, nx = prob.coarse
    return build_structured(nt, nx, prob.rect).with_tags(prob.split)


def nested_iterate(prob: ProblemSpec, levels: int, orders=(1, 1), opts: GNOptions | None = None,
                   callback=None, keep_discretizations: bool = False) -> list[SolveReport]:
    """Solve on ``levels`` uniformly refined meshes, each started from the previous solution."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    opts = opts or GNOptions()
    mesh = coarse_mesh(prob)
    reports = []
    prev = None
    for lev in range(levels):
        if lev:
            mesh = refine_uniform(mesh)
        disc = Discretization(prob, mesh, orders[0], orders[1], augment=opts.augment, eta=opts.eta)
        if prev is None:
            init = constant_guess(disc)
        else:
            init = tuple(transfer(f, S) for f, S in zip(prev, disc.spaces))
        try:
            rep = solve_level(prob, disc, opts, init)
        finally:
            disc.release()
        if keep_discretizations:
            rep.disc = disc
        if callback is not None:
            callback(rep, disc)
        reports.append(rep)
        prev = rep.fields
    return reports


def write_iteration_log(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "iter", "functional", "damping"])
        for rep in reports:
            for rec in rep.log:
                w.writerow([rep.level, rec.iteration, repr(float(rec.functional)), repr(float(rec.damping))])
