"""Helmholtz diagnostics, error norms against an exact solution and convergence tables."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .exact import ExactSolution
from .forms import Discretization, DataFunctional, stiffness
from .linalg import cholesky_solve
from .problems import ProblemSpec
from .quadrature import gauss_interval, quadrature_rule
from .spaces import FEField, FESpace, element_geometry, ref_basis

ERROR_DEGREE = 8
CUT_POINTS = 10


# --- Helmholtz decomposition -------------------------------------------------------------------

def _flux_samples(v, prob: ProblemSpec | None, rule):
    if isinstance(v, FEField):
        if prob is None:
            raise ValueError("a flux is needed to sample f(v)")
        return np.stack(prob.flux(v.at_quadrature(rule)), axis=-1)
    F = np.asarray(v, dtype=float)
    if F.ndim != 3 or F.shape[1:] != (len(rule.weights), 2):
        raise ValueError("vector field samples must have shape (n_triangles, n_points, 2)")
    return F


def _load(space: FESpace, F: np.ndarray, rule, perp: bool) -> np.ndarray:
    """(F, grad phi_i) or (F, curl phi_i) over free dofs."""
    det, invT, _, _ = element_geometry(space.mesh)
    _, dref = ref_basis(space.order, rule.xy)
    loc = np.zeros((space.mesh.n_triangles, space.nloc))
    for k, wk in enumerate(rule.weights):
        G = np.einsum("eab,lb->ela", invT, dref[k])
        if perp:
            dot = F[:, k, 0, None] * G[..., 1] - F[:, k, 1, None] * G[..., 0]
        else:
            dot = F[:, k, 0, None] * G[..., 0] + F[:, k, 1, None] * G[..., 1]
        loc += (wk * det)[:, None] * dot
    b = np.bincount(space.elem_dofs.ravel(), weights=loc.ravel(), minlength=space.ndofs)
    return b[space.free]


def _poisson(space: FESpace, rhs_free: np.ndarray) -> FEField:
    c = np.zeros(space.ndofs)
    if space.n_free:
        c[space.free] = cholesky_solve(stiffness(space), rhs_free)
    return FEField(space, c)


def discrete_helmholtz(v, space_C: FESpace, space_I: FESpace, prob: ProblemSpec | None = None,
                       degree: int | None = None) -> tuple[FEField, FEField]:
    """Potentials with (grad q, grad phi) = (F, grad phi) and (curl psi, curl nu) = (F, curl nu).

    ``v`` is either an FEField (then F = f(v)) or samples of F at the points
    of the rule of the given ``degree``.
    """
    rule = quadrature_rule(degree or max(6, 2 * space_C.order + 2))
    F = _flux_samples(v, prob, rule)
    q = _poisson(space_C, _load(space_C, F, rule, perp=False))
    psi = _poisson(space_I, _load(space_I, F, rule, perp=True))
    return q, psi


def data_potential(ell: DataFunctional) -> FEField:
    """q_* with (grad q_*, grad phi) = -l(phi): the Galerkin projection of the data potential."""
    S = ell.space
    key = ("q_star", id(ell))
    if key not in S._cache:
        S._cache[key] = _poisson(S, -ell.values[S.free])
    return S._cache[key]


def _grad_sq(a: FEField, b: FEField | None = None) -> float:
    """||grad (a - b)||^2 via the stiffness matrix."""
    c = a.coefficients if b is None else a.coefficients - b.coefficients
    cf = c[a.space.free]
    return float(cf @ (stiffness(a.space) @ cf))


def hminus1_residual(v: FEField, prob: ProblemSpec, space_C: FESpace, ell: DataFunctional | None = None,
                     space_I: FESpace | None = None) -> float:
    """||grad (q_v - q_*)||: discrete dual norm of div f(v) - l on the complement-constrained space."""
    from .forms import assemble_ld
    ell = ell or assemble_ld(space_C, prob)
    rule = quadrature_rule(max(6, 2 * space_C.order + 2))
    F = _flux_samples(v, prob, rule)
    qv = _poisson(space_C, _load(space_C, F, rule, perp=False))
    return math.sqrt(max(_grad_sq(qv, data_potential(ell)), 0.0))


def reduced_functional(v: FEField, prob: ProblemSpec, space_C: FESpace, space_I: FESpace,
                       ell: DataFunctional | None = None) -> float:
    """Minimum over discrete (p, mu) of |grad p - grad q_v|^2 + |curl mu - curl psi_v|^2 + |grad p - grad q_*|^2.

    The minimizer p = (q_v + q_*)/2, mu = psi_v is inserted and the three
    terms are integrated by quadrature.
    """
    from .forms import assemble_ld
    ell = ell or assemble_ld(space_C, prob)
    qv, psiv = discrete_helmholtz(v, space_C, space_I, prob)
    qs = data_potential(ell)
    p = FEField(space_C, 0.5 * (qv.coefficients + qs.coefficients))
    mu = psiv
    rule = quadrature_rule(max(2, 2 * (space_C.order - 1)))
    det, _, _, _ = element_geometry(space_C.mesh)
    w = det[:, None] * rule.weights[None, :]
    gp, gqv, gqs = (f.grad_at_quadrature(rule) for f in (p, qv, qs))
    gmu, gpsi = mu.grad_at_quadrature(rule), psiv.grad_at_quadrature(rule)
    dens = (np.sum((gp - gqv) ** 2, axis=-1) + np.sum((gmu - gpsi) ** 2, axis=-1)
            + np.sum((gp - gqs) ** 2, axis=-1))
    return float(np.sum(w * dens))


def eval_F(disc: Discretization, u: FEField, q: FEField, psi: FEField) -> float:
    """Functional with the data potential in place of the linear data term:
    |f(u) - grad q - curl psi|^2 + |grad q - grad q_*|^2 (+ inflow and regularization terms)."""
    qs = data_potential(disc.ell)
    rule = quadrature_rule(disc.degree)
    det, _, _, _ = element_geometry(disc.mesh)
    w = det[:, None] * rule.weights[None, :]
    f1, f2 = disc.prob.flux(u.at_quadrature(rule))
    gq = q.grad_at_quadrature(rule)
    gp = psi.grad_at_quadrature(rule)
    gs = qs.grad_at_quadrature(rule)
    dens = ((f1 - gq[..., 0] - gp[..., 1]) ** 2 + (f2 - gq[..., 1] + gp[..., 0]) ** 2
            + np.sum((gq - gs) ** 2, axis=-1) + disc.eps ** 2 * np.sum(gp ** 2, axis=-1))
    val = float(np.sum(w * dens))
    if disc.augment:
        from .forms import _inflow_edges
        E = _inflow_edges(u.space, disc.prob)
        ub = np.einsum("ek,esk->es", u.coefficients[E["dofs"]], E["basis"])
        val += disc.h * float(np.sum(E["weights"] * (ub - E["g"]) ** 2))
    return val


# --- error norms -------------------------------------------------------------------------------

def _cut_triangles(u: FEField, exact: ExactSolution) -> np.ndarray:
    m = u.space.mesh
    t0, t1, x0, x1 = m.rect
    hits = []
    for sh in exact.shocks:
        n = max(int(np.ceil((sh.t1 - sh.t0) / m.h * 200)), 2)
        ts = np.linspace(sh.t0, sh.t1, n + 1)
        s = sh(ts)
        keep = (s >= x0) & (s <= x1)
        for dx in (-1e-12, 0.0, 1e-12):
            xs = np.clip(s[keep] + dx, x0, x1)
            tri, _ = m.locate(ts[keep], xs)
            hits.append(tri)
    if not hits:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(hits))


def _eval_on_triangle(u: FEField, e: int, t, x):
    det, invT, p0, _ = element_geometry(u.space.mesh)
    d = np.stack([t - p0[e, 0], x - p0[e, 1]], axis=-1)
    xi = d @ invT[e]          # inv(J) d with invT = inv(J)^T
    vals, _ = ref_basis(u.space.order, xi.reshape(-1, 2))
    return (vals @ u.coefficients[u.space.elem_dofs[e]]).reshape(np.shape(t))


def _section(P, t):
    """x-range of triangle P (3, 2) at times t."""
    lo = np.full(t.shape, np.inf)
    hi = np.full(t.shape, -np.inf)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        ta, xa = P[a]
        tb, xb = P[b]
        if tb == ta:
            inr = np.isclose(t, ta, atol=1e-14)
            lo = np.where(inr, np.minimum(lo, min(xa, xb)), lo)
            hi = np.where(inr, np.maximum(hi, max(xa, xb)), hi)
            continue
        lam = (t - ta) / (tb - ta)
        inr = (lam >= -1e-14) & (lam <= 1 + 1e-14)
        xv = xa + np.clip(lam, 0, 1) * (xb - xa)
        lo = np.where(inr, np.minimum(lo, xv), lo)
        hi = np.where(inr, np.maximum(hi, xv), hi)
    return lo, hi


def _bisect(f, a, b, iters=60):
    fa = f(a)
    for _ in range(iters):
        c = 0.5 * (a + b)
        fc = f(c)
        left = np.sign(fc) == np.sign(fa)
        a = np.where(left, c, a)
        fa = np.where(left, fc, fa)
        b = np.where(left, b, c)
    return 0.5 * (a + b)


def _cut_integrals(u: FEField, exact: ExactSolution, e: int) -> tuple[float, float]:
    m = u.space.mesh
    P = m.vertices[m.triangles[e]]
    ta, tb = P[:, 0].min(), P[:, 0].max()
    brk = set(P[:, 0].tolist())
    samp = np.linspace(ta, tb, 33)
    for sh in exact.shocks:
        for tt in (sh.t0, sh.t1):
            if ta < tt < tb:
                brk.add(tt)
        sides = _section(P, samp)
        for side in (0, 1):
            g = sh(samp) - sides[side]
            ch = np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)
            if len(ch):
                def f(tt, sh=sh, side=side):
                    return sh(tt) - _section(P, np.atleast_1d(tt))[side]
                roots = _bisect(f, samp[ch], samp[ch + 1])
                brk.update(np.atleast_1d(roots).tolist())
    brk = np.array(sorted(brk))
    brk = brk[(brk >= ta) & (brk <= tb)]
    gt, gw = gauss_interval(CUT_POINTS)
    l2 = 0.0
    l1 = 0.0
    for a, b in zip(brk[:-1], brk[1:]):
        if b - a <= 0:
            continue
        tq = a + (b - a) * gt
        wt = (b - a) * gw
        lo, hi = _section(P, tq)
        cuts = [lo]
        for s in exact.discontinuities(tq):
            cuts.append(np.clip(np.where(np.isnan(s), lo, s), lo, hi))
        cuts.append(hi)
        cuts = np.sort(np.stack(cuts, axis=1), axis=1)
        for k in range(cuts.shape[1] - 1):
            xa, xb = cuts[:, k], cuts[:, k + 1]
            L = xb - xa
            if not np.any(L > 0):
                continue
            X = xa[:, None] + L[:, None] * gt[None, :]
            T = np.broadcast_to(tq[:, None], X.shape)
            W = wt[:, None] * L[:, None] * gw[None, :]
            err = _eval_on_triangle(u, e, T, X) - exact(T, X)
            l2 += float(np.sum(W * err ** 2))
            l1 += float(np.sum(W * np.abs(err)))
    return l2, l1


def error_norms(u: FEField, exact: ExactSolution, degree: int = ERROR_DEGREE, chunk: int = 100_000):
    """(||u - u_exact||^2_L2, ||u - u_exact||_L1, ||u - u_exact||_L1^2) with shock-aware quadrature."""
    m = u.space.mesh
    cut = _cut_triangles(u, exact)
    smooth = np.ones(m.n_triangles, dtype=bool)
    smooth[cut] = False
    idx = np.flatnonzero(smooth)
    rule = quadrature_rule(degree)
    det, _, p0, J = element_geometry(m)
    vals, _ = ref_basis(u.space.order, rule.xy)
    l2 = 0.0
    l1 = 0.0
    for start in range(0, len(idx), chunk):
        es = idx[start:start + chunk]
        X = p0[es, None, :] + np.einsum("eab,qb->eqa", J[es], rule.xy)
        uh = u.coefficients[u.space.elem_dofs[es]] @ vals.T
        err = uh - exact(X[..., 0], X[..., 1])
        w = det[es, None] * rule.weights[None, :]
        l2 += float(np.sum(w * err ** 2))
        l1 += float(np.sum(w * np.abs(err)))
    for e in cut:
        a, b = _cut_integrals(u, exact, int(e))
        l2 += a
        l1 += b
    return l2, l1, l1 * l1


def smooth_error_norms(u: FEField, w, degree: int = ERROR_DEGREE):
    """Error norms against a smooth pointwise function ``w(t, x)``."""
    m = u.space.mesh
    rule = quadrature_rule(degree)
    det, _, p0, J = element_geometry(m)
    X = p0[:, None, :] + np.einsum("eab,qb->eqa", J, rule.xy)
    err = u.at_quadrature(rule) - w(X[..., 0], X[..., 1])
    W = det[:, None] * rule.weights[None, :]
    l1 = float(np.sum(W * np.abs(err)))
    return float(np.sum(W * err ** 2)), l1, l1 * l1


# --- convergence table -------------------------------------------------------------------------

TABLE_COLUMNS = ("level", "h", "l2sq", "l2sq_rate", "l1sq", "l1sq_rate", "Mh", "dMh", "iters")


def _rate(a, b):
    if a is None or b is None or not (a > 0 and b > 0):
        return None
    return math.log2(a / b)


@dataclass
class ConvergenceTable:
    rows: list[dict] = field(default_factory=list)

    def column(self, name):
        return [r[name] for r in self.rows]

    def rate(self, name: str, intervals: int = 2):
        """Average log2 rate of column ``name`` over the last ``intervals`` halvings of h."""
        vals = [v for v in self.column(name) if v is not None]
        if len(vals) < intervals + 1:
            return None
        r = _rate(vals[-1 - intervals], vals[-1])
        return None if r is None else r / intervals

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_COLUMNS)
            for r in self.rows:
                w.writerow(["" if r[c] is None else (r[c] if isinstance(r[c], int) else repr(float(r[c])))
                            for c in TABLE_COLUMNS])


def build_table(reports, exact=None) -> ConvergenceTable:
    """One row per level; error columns are taken from ``report.errors`` or computed against ``exact``."""
    rows = []
    for rep in reports:
        if "l2sq" not in rep.errors and exact is not None:
            if isinstance(exact, ExactSolution):
                l2, _, l1sq = error_norms(rep.u, exact)
            else:
                l2, _, l1sq = smooth_error_norms(rep.u, exact)
            rep.errors.update(l2sq=l2, l1sq=l1sq)
        rows.append(dict(level=rep.level, h=rep.h, l2sq=rep.errors.get("l2sq"), l1sq=rep.errors.get("l1sq"),
                         Mh=rep.M_h, iters=rep.iterations))
    for i, r in enumerate(rows):
        prev = rows[i - 1] if i else None
        r["l2sq_rate"] = _rate(prev["l2sq"], r["l2sq"]) if prev else None
        r["l1sq_rate"] = _rate(prev["l1sq"], r["l1sq"]) if prev else None
        r["dMh"] = r["Mh"] - rows[i + 1]["Mh"] if i + 1 < len(rows) else None
    return ConvergenceTable(rows)


# --- shock collision from a computed field -----------------------------------------------------

@dataclass
class ShockTracks:
    t: np.ndarray
    positions: list          # per row: shock positions in x, increasing
    strengths: list          # per row: total drop across each shock
    isolated: list           # per row: True where the shock's window does not touch a neighbour's


def _row_shocks(xs, v, rel_prominence, frac, min_drop):
    """Equal-area positions of the smeared shocks in one row of nodal values ``v`` at ``xs``."""
    d = v[:-1] - v[1:]
    n = len(d)
    top = d.max(initial=0.0)
    if top <= min_drop:
        return [], [], []
    peaks, _ = find_peaks(np.concatenate([[0.0], d, [0.0]]), height=min_drop, prominence=rel_prominence * top)
    peaks = peaks - 1
    # saddles between neighbouring peaks bound each window
    bounds = [0] + [int(p + np.argmin(d[p:q + 1])) for p, q in zip(peaks[:-1], peaks[1:])] + [n - 1]
    wins = []
    for k, j in enumerate(peaks):
        a, b = j, j
        while a > bounds[k] and d[a - 1] > frac * d[j]:
            a -= 1
        while b < bounds[k + 1] and d[b + 1] > frac * d[j]:
            b += 1
        wins.append((a, b))
    pos, stren, iso = [], [], []
    for k, (a, b) in enumerate(wins):
        ua, ub = v[a], v[b + 1]
        seg = v[a:b + 2] - ub
        area = float(np.sum(0.5 * (seg[1:] + seg[:-1]) * np.diff(xs[a:b + 2])))
        pos.append(float(xs[a] + area / (ua - ub)))
        stren.append(float(ua - ub))
        left_ok = k == 0 or wins[k - 1][1] + 1 < a
        right_ok = k == len(wins) - 1 or b + 1 < wins[k + 1][0]
        iso.append(left_ok and right_ok)
    return pos, stren, iso


def track_shocks(u: FEField, rel_prominence: float = 0.1, frac: float = 0.05,
                 min_drop: float = 1e-3) -> ShockTracks:
    """Locate smeared shocks in each mesh row t = const.

    Shocks are peaks of the per-cell drop u_j - u_{j+1} with a prominence of
    at least ``rel_prominence`` times the row's largest drop.  Each is placed
    at the equal-area point of the step between the values at the ends of
    its window, which extends while the drop exceeds ``frac`` times the peak
    and stops at the saddle towards a neighbouring shock.
    """
    m = u.space.mesh
    xs = m.vertices[m.grid_ids[0], 1]
    out = ShockTracks(m.vertices[m.grid_ids[:, 0], 0].copy(), [], [], [])
    for i in range(m.nt + 1):
        p, s, k = _row_shocks(xs, u.coefficients[m.grid_ids[i]], rel_prominence, frac, min_drop)
        out.positions.append(np.array(p))
        out.strengths.append(np.array(s))
        out.isolated.append(np.array(k, dtype=bool))
    return out


def collision_point(u: FEField, window: float = 0.15, **kw) -> tuple[float, float] | None:
    """Meeting point of the two strongest shocks present at t = 0, from quadratic fits of their tracks.

    The tracks are followed from the first row while both shocks are present
    and their windows stay apart; the last ``window`` of that stretch in t is
    fitted and the fits are intersected.
    """
    tr = track_shocks(u, **kw)
    T, A, B = [], [], []
    for t, p, s, iso in zip(tr.t, tr.positions, tr.strengths, tr.isolated):
        if len(p) < 2:
            break
        two = np.sort(np.argsort(s)[-2:])
        if not iso[two].all():
            break
        T.append(t)
        A.append(p[two[0]])
        B.append(p[two[1]])
    if len(T) < 4:
        return None
    T, A, B = map(np.array, (T, A, B))
    sel = T >= T[-1] - window
    T, A, B = T[sel], A[sel], B[sel]
    deg = 2 if len(T) >= 6 else 1
    ca = np.polyfit(T, A, deg)
    cb = np.polyfit(T, B, deg)
    roots = np.roots(np.polysub(cb, ca))
    roots = roots[np.isreal(roots)].real
    roots = roots[roots >= T[-1] - 1e-12]
    if not len(roots):
        return None
    tc = float(roots.min())
    return tc, float(np.polyval(ca, tc))
