"""Entropy solutions of u_t + u u_x = r(x) for piecewise-constant initial data.

The source is r_L for x <= 0 and r_R for x > 0 and the left inflow data is
consistent with the uniform state u = alpha + r_L t on x <= 0.  Solution
states are closed-form characteristic families; shock paths are integrated
with an adaptive high-order Runge-Kutta method and merged when they meet.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .problems import ProblemSpec, example_spec


# --- characteristic families -------------------------------------------------------------------

@dataclass(frozen=True)
class _Left:
    """Uniform state on x <= 0."""
    alpha: float
    rl: float

    def __call__(self, t, x):
        return self.alpha + self.rl * t + 0.0 * x


@dataclass(frozen=True)
class _Crossing:
    """Characteristics from x <= 0 continued into x > 0.

    A characteristic crossing x = 0 at time t - tau satisfies
    (alpha + rl t) tau + (rr/2 - rl) tau^2 = x and carries u = alpha + rl t + (rr - rl) tau.
    """
    alpha: float
    rl: float
    rr: float

    def tau(self, t, x):
        b = self.alpha + self.rl * t
        a = 0.5 * self.rr - self.rl
        if a == 0.0:
            return x / b
        disc = np.maximum(b * b + 4.0 * a * x, 0.0)
        return 2.0 * x / (b + np.sqrt(disc))

    def __call__(self, t, x):
        return self.alpha + self.rl * t + (self.rr - self.rl) * self.tau(t, x)

    def front(self, t):
        """Leading characteristic, issued from the origin."""
        return (self.alpha + self.rl * t) * t + (0.5 * self.rr - self.rl) * t * t


@dataclass(frozen=True)
class _Family:
    """Characteristics from t = 0, x0 > 0 with initial value uk."""
    uk: float
    rr: float

    def __call__(self, t, x):
        return self.uk + self.rr * t + 0.0 * x

    def foot(self, t, x):
        return x - self.uk * t - 0.5 * self.rr * t * t


@dataclass(frozen=True)
class _Fan:
    """Rarefaction centred at (0, x0) in the region x > 0."""
    x0: float
    rr: float

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        ts = np.where(t > 0, t, 1.0)
        u0 = (x - self.x0 - 0.5 * self.rr * ts * ts) / ts
        return u0 + self.rr * t


def _char_path(x0, u0, rr):
    return lambda t: x0 + u0 * t + 0.5 * rr * np.asarray(t, dtype=float) ** 2


# --- waves -------------------------------------------------------------------------------------

@dataclass
class ShockPath:
    """Shock x = s(t) on [t0, t1] between the states ``left`` and ``right``."""
    label: str
    t0: float
    t1: float
    left: object
    right: object
    _sol: object = field(repr=False, default=None)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self._sol(np.clip(t, self.t0, self.t1))

    def speed(self, t):
        s = self(t)
        return 0.5 * (self.left(t, s) + self.right(t, s))


@dataclass
class ExactSolution:
    """Pointwise entropy solution with its shock paths and special points."""
    prob: ProblemSpec
    rtol: float
    atol: float
    left: _Left
    # time slabs: (t_start, t_end, [boundary position callables], [region states])
    slabs: list = field(default_factory=list)
    shocks: list = field(default_factory=list)
    fans: list = field(default_factory=list)    # (x0, left edge fn, right edge fn)
    collisions: list = field(default_factory=list)
    exits: list = field(default_factory=list)

    @property
    def rect(self):
        return self.prob.rect

    @property
    def collision(self):
        return self.collisions[0] if self.collisions else None

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        t, x = np.broadcast_arrays(t, x)
        t0, t1, x0, x1 = self.rect
        tol = 1e-12
        if np.any((t < t0 - tol) | (t > t1 + tol) | (x < x0 - tol) | (x > x1 + tol)):
            raise ValueError("query point outside the domain")
        out = np.empty(t.shape)
        lm = x <= 0.0
        out[lm] = self.left(t[lm], x[lm])
        rm = ~lm
        tr, xr = t[rm], x[rm]
        res = np.empty(tr.shape)
        for k, (ta, tb, bnds, states) in enumerate(self.slabs):
            last = k == len(self.slabs) - 1
            sel = (tr >= ta) & ((tr < tb) | last)
            if not np.any(sel):
                continue
            ts, xs = tr[sel], xr[sel]
            idx = np.zeros(ts.shape, dtype=np.int64)
            for b in bnds:
                idx += xs > b(ts)
            vals = np.empty(ts.shape)
            for j, st in enumerate(states):
                m = idx == j
                if np.any(m):
                    vals[m] = st(ts[m], xs[m])
            res[sel] = vals
        out[rm] = res
        return out

    def discontinuities(self, t):
        """Positions (list of arrays over ``t``) of all shocks active at ``t``; NaN if inactive."""
        t = np.asarray(t, dtype=float)
        out = []
        for sh in self.shocks:
            s = sh(t)
            out.append(np.where((t >= sh.t0) & (t <= sh.t1), s, np.nan))
        return out

    def kinks(self, t):
        """Positions of derivative jumps: x = 0 and rarefaction edges."""
        t = np.asarray(t, dtype=float)
        out = [np.zeros_like(t)]
        for _, lo, hi in self.fans:
            out += [lo(t), hi(t)]
        return out

    def polylines(self, n: int = 2001):
        """Shock paths sampled inside the domain as (label, t, x) triples."""
        x1 = self.rect[3]
        lines = []
        for sh in self.shocks:
            t = np.linspace(sh.t0, sh.t1, n)
            s = sh(t)
            keep = s <= x1
            lines.append((sh.label, t[keep], s[keep]))
        return lines

    def special_points(self) -> dict:
        return {"collision": self.collision, "exits": list(self.exits)}


def _shock_rhs(shocks):
    def rhs(t, y):
        return np.array([0.5 * (sh.left(t, y[i]) + sh.right(t, y[i])) for i, sh in enumerate(shocks)])
    return rhs


def exact_solution(k_or_prob, rtol: float = 1e-10, atol: float | None = None) -> ExactSolution:
    """Entropy solution of example ``k`` (or of a compatible ProblemSpec)."""
    prob = example_spec(k_or_prob) if isinstance(k_or_prob, (int, np.integer)) else k_or_prob
    if not prob.initial_states or prob.left_inflow is None or prob.source_values is None:
        raise ValueError("problem carries no piecewise-constant data for the exact solution")
    atol = rtol if atol is None else atol
    rl, rr = prob.source_values
    alpha = prob.initial_states[0][1]
    c0, c1 = prob.left_inflow
    if not (np.isclose(c0, alpha) and np.isclose(c1, rl)):
        raise ValueError("left inflow data must continue the uniform left state")
    t_end = prob.rect[1]
    x_out = prob.rect[3]

    left = _Left(alpha, rl)
    cross = _Crossing(alpha, rl, rr)
    # regions right of x = 0 at t = 0+, separated by initial jumps
    states = [cross] + [_Family(v, rr) for _, v in prob.initial_states[1:]]
    jump_x = [0.0] + [xs for xs, _ in prob.initial_states[2:]]
    vals = [alpha] + [v for _, v in prob.initial_states[1:]]
    sol = ExactSolution(prob, rtol, atol, left)

    # classify each initial jump: shock (left value larger) or rarefaction
    waves = []
    for j, xj in enumerate(jump_x):
        ul, ur = vals[j], vals[j + 1]
        if ul > ur:
            waves.append(("shock", xj, j))
        elif ul < ur:
            lo = _char_path(xj, ul, rr) if j else cross.front
            hi = _char_path(xj, ur, rr)
            sol.fans.append((xj, lo, hi))
            waves.append(("fan", xj, j, lo, hi))
        else:
            waves.append(("none", xj, j))

    n_fans = sum(w[0] == "fan" for w in waves)
    n_shocks = sum(w[0] == "shock" for w in waves)
    if n_fans and n_shocks:
        raise NotImplementedError("shock-rarefaction interaction is not supported")

    if n_fans or not n_shocks:
        bnds, regs = [], [states[0]]
        for w in waves:
            j = w[2]
            if w[0] == "fan":
                bnds += [w[3], w[4]]
                regs += [_Fan(w[1], rr), states[j + 1]]
            elif w[0] == "none":
                bnds.append(lambda t, xj=w[1], u=vals[j + 1]: _char_path(xj, u, rr)(t))
                regs.append(states[j + 1])
        sol.slabs.append((0.0, t_end, bnds, regs))
        return sol

    # shocks only: integrate all, merging on collision
    active = []   # list of (label, left state, right state, x at t_start)
    for w in waves:
        if w[0] == "none":
            raise NotImplementedError("contact lines between equal states are not supported")
        j = w[2]
        active.append((chr(ord("A") + len(active)), states[j], states[j + 1], w[1]))
    t_start = 0.0
    y0 = np.array([a[3] for a in active], dtype=float)
    while True:
        shocks = [ShockPath(lab, t_start, t_end, l, r) for lab, l, r, _ in active]
        rhs = _shock_rhs(shocks)
        events = []
        for i in range(len(shocks) - 1):
            def meet(t, y, i=i):
                return y[i + 1] - y[i]
            meet.terminal = True
            meet.direction = -1
            events.append(meet)
        exits = []
        for i in range(len(shocks)):
            def leave(t, y, i=i):
                return y[i] - x_out
            leave.terminal = False
            leave.direction = 1
            exits.append(leave)
        r = solve_ivp(rhs, (t_start, t_end), y0, method="DOP853", rtol=rtol, atol=atol,
                      dense_output=True, events=events + exits)
        if not r.success:
            raise RuntimeError(f"shock integration failed: {r.message}")
        t_stop = float(r.t[-1])
        for i, sh in enumerate(shocks):
            sh.t1 = t_stop
            sh._sol = (lambda dense, i: (lambda t: dense(t)[i]))(r.sol, i)
        sol.shocks.extend(shocks)
        for i in range(len(shocks)):
            te = r.t_events[len(events) + i]
            if len(te) and te[0] <= t_stop:
                sol.exits.append((float(te[0]), float(x_out)))
        regs = [active[0][1]] + [a[2] for a in active]
        sol.slabs.append((t_start, t_stop, list(shocks), regs))
        hit = [i for i in range(len(events)) if len(r.t_events[i])]
        if not hit or t_stop >= t_end:
            break
        i = hit[0]
        yc = r.y_events[i][0]
        xc = 0.5 * (yc[i] + yc[i + 1])
        sol.collisions.append((t_stop, float(xc)))
        lab = active[i][0] + active[i + 1][0]
        merged = (lab, active[i][1], active[i + 1][2], xc)
        y_new = [yc[m] for m in range(len(active)) if m not in (i, i + 1)]
        active = active[:i] + [merged] + active[i + 2:]
        y_new.insert(i, xc)
        y0 = np.array(y_new, dtype=float)
        t_start = t_stop
    sol.exits.sort()
    return sol


def self_check(sol: ExactSolution, nt: int = 2048, nx: int = 4096, delta: float = 1e-5) -> dict:
    """PDE residual away from discontinuities and kinks, and the jump condition on each shock."""
    t0, t1, x0, x1 = sol.rect
    t = np.linspace(t0, t1, nt + 1)[1:-1]
    x = np.linspace(x0, x1, nx + 1)[1:-1]
    T, X = np.meshgrid(t, x, indexing="ij")
    guard = 3 * delta
    bad = np.zeros(T.shape, dtype=bool)
    for s in sol.discontinuities(t) + sol.kinks(t):
        s = np.where(np.isnan(s), np.inf, s)
        bad |= np.abs(X - s[:, None]) <= guard
    for tc, _ in sol.collisions:
        bad |= np.abs(T - tc) <= guard
    for sh in sol.shocks:
        bad |= (np.abs(T - sh.t0) <= guard) | (np.abs(T - sh.t1) <= guard)
    bad |= (T <= guard + delta) | (T >= t1 - guard) | (X <= x0 + guard) | (X >= x1 - guard)
    Tg, Xg = T[~bad], X[~bad]
    u = sol(Tg, Xg)
    # shrink the step near t = 0 where a rarefaction fan is only O(t) wide
    d = delta * np.minimum(1.0, Tg)
    ut = (sol(Tg + d, Xg) - sol(Tg - d, Xg)) / (2 * d)
    ux = (sol(Tg, Xg + d) - sol(Tg, Xg - d)) / (2 * d)
    r = sol.prob.source(Tg, Xg)
    pde = float(np.max(np.abs(ut + u * ux - r))) if u.size else 0.0

    rh = 0.0
    for sh in sol.shocks:
        ts = np.linspace(sh.t0, sh.t1, 203)[1:-1]
        ts = ts[(ts - delta > sh.t0) & (ts + delta < sh.t1)]
        s = sh(ts)
        sdot = (sh(ts + delta) - sh(ts - delta)) / (2 * delta)
        want = 0.5 * (sh.left(ts, s) + sh.right(ts, s))
        rh = max(rh, float(np.max(np.abs(sdot - want), initial=0.0)))
    return {"pde_residual": pde, "rh_residual": rh, "n_points": int(u.size)}
