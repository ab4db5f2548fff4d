"""Balance-law problem definitions: Burgers flux, the three shock/rarefaction
examples with discontinuous sources, and a smooth manufactured problem."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import BoundarySplit

DOMAIN = (0.0, 1.0, -0.25, 1.75)
COARSE_GRID = (16, 32)
SOURCE_JUMP = 0.0


def burgers_flux(v):
    v = np.asarray(v, dtype=float)
    return v, 0.5 * v * v


def burgers_flux_deriv(v):
    v = np.asarray(v, dtype=float)
    return np.ones_like(v), v


@dataclass(frozen=True)
class ProblemSpec:
    """Data of ``div f(u) = r`` in the rectangle with ``u = g`` on the inflow boundary.

    ``source_jumps_x`` lists lines x = const across which ``source`` jumps;
    ``inflow_jumps`` lists boundary points where ``inflow`` jumps.
    """

    name: str
    flux: Callable
    flux_deriv: Callable
    source: Callable
    inflow: Callable
    rect: tuple[float, float, float, float] = DOMAIN
    split: BoundarySplit = field(default_factory=lambda: inflow_split(DOMAIN))
    source_jumps_x: tuple[float, ...] = ()
    inflow_jumps: tuple[tuple[float, float], ...] = ()
    coarse: tuple[int, int] = COARSE_GRID
    example: int | None = None
    # piecewise-constant initial states [(x_start, value), ...] and affine
    # left-boundary data (c0, c1): g = c0 + c1 * t; used by the exact solution
    initial_states: tuple[tuple[float, float], ...] = ()
    left_inflow: tuple[float, float] | None = None
    source_values: tuple[float, float] | None = None

    def flux_is_linear(self) -> bool:
        d = self.flux_deriv(np.array([-1.0, 0.0, 2.0]))
        return all(np.allclose(c, c[0]) for c in d)


def inflow_split(rect) -> BoundarySplit:
    t0, t1, x0, x1 = rect
    return BoundarySplit(inflow=(((t0, x0), (t0, x1)), ((t0, x0), (t1, x0))))


def _piecewise_source(t, x):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return np.broadcast_to(np.where(x <= SOURCE_JUMP, 1.0, 2.0), np.broadcast(t, x).shape).copy()


_EXAMPLES = {
    # initial states on t = 0 as (x_start, value), left inflow g = c0 + t
    1: ([(-np.inf, 3.0), (0.0, 1.0)], 3.0),
    2: ([(-np.inf, 1.0), (0.0, 2.0)], 1.0),
    3: ([(-np.inf, 3.0), (0.0, 1.0), (0.5, 0.5)], 3.0),
}
_NAMES = {1: "single shock", 2: "rarefaction wave", 3: "colliding shocks"}


def _make_inflow(states, c0, rect):
    t0, _, x0, _ = rect
    xs = np.array([s[0] for s in states[1:]])
    vals = np.array([s[1] for s in states])

    def g(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        t, x = np.broadcast_arrays(t, x)
        k = np.searchsorted(xs, x, side="left")
        init = vals[k]
        left = c0 + (t - t0)
        return np.where(np.abs(t - t0) <= 1e-14, init, left)

    return g


def example_spec(k: int) -> ProblemSpec:
    """The Burgers examples: 1 (single shock), 2 (rarefaction), 3 (colliding shocks)."""
    if k not in _EXAMPLES:
        raise ValueError(f"example must be 1, 2 or 3, got {k}")
    states, c0 = _EXAMPLES[k]
    g = _make_inflow(states, c0, DOMAIN)
    jumps = tuple((DOMAIN[0], s[0]) for s in states[1:])
    return ProblemSpec(
        name=f"example {k} ({_NAMES[k]})",
        flux=burgers_flux,
        flux_deriv=burgers_flux_deriv,
        source=_piecewise_source,
        inflow=g,
        source_jumps_x=(SOURCE_JUMP,),
        inflow_jumps=jumps,
        example=k,
        initial_states=tuple(states),
        left_inflow=(c0, 1.0),
        source_values=(1.0, 2.0),
    )


def manufactured_solution(t, x):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    return 2.5 + 0.25 * np.sin(np.pi * t) * np.cos(np.pi * x)


def _manufactured_source(t, x):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    u = manufactured_solution(t, x)
    ut = 0.25 * np.pi * np.cos(np.pi * t) * np.cos(np.pi * x)
    ux = -0.25 * np.pi * np.sin(np.pi * t) * np.sin(np.pi * x)
    return ut + u * ux


def manufactured_spec() -> ProblemSpec:
    """Smooth solution 2.5 + 0.25 sin(pi t) cos(pi x) with matching source and inflow data."""
    return ProblemSpec(
        name="manufactured",
        flux=burgers_flux,
        flux_deriv=burgers_flux_deriv,
        source=_manufactured_source,
        inflow=manufactured_solution,
    )


def linear_spec(a: float = 1.0, solution=None) -> ProblemSpec:
    """Linear advection ``div [v, a v] = r`` with data taken from a smooth ``solution``."""
    if solution is None:
        def solution(t, x):
            return 1.0 + 0.5 * np.sin(np.pi * (x - a * t))

    def flux(v):
        v = np.asarray(v, dtype=float)
        return v, a * v

    def dflux(v):
        v = np.asarray(v, dtype=float)
        return np.ones_like(v), np.full_like(v, a)

    def source(t, x):
        eps = 1e-6
        ut = (solution(t + eps, x) - solution(t - eps, x)) / (2 * eps)
        ux = (solution(t, x + eps) - solution(t, x - eps)) / (2 * eps)
        return ut + a * ux

    return ProblemSpec(name=f"linear advection a={a}", flux=flux, flux_deriv=dflux,
                       source=source, inflow=solution)


def zero_data(spec: ProblemSpec) -> ProblemSpec:
    """Same flux and geometry, with r = 0 and g = 0."""
    def zero(t, x):
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)

    return ProblemSpec(name=spec.name + " (zero data)", flux=spec.flux, flux_deriv=spec.flux_deriv,
                       source=zero, inflow=zero, rect=spec.rect, split=spec.split, coarse=spec.coarse)
