"""Data functional, the least-squares functional and its Gauss-Newton normal equations.

Unknowns are the triple (u, q, psi) with u in an unconstrained space, q
vanishing on the complement boundary and psi vanishing on the inflow
boundary.  The functional is

    F(u, q, psi) = |f(u) - grad q - curl psi|^2 + |grad q|^2 + 2 l(q)
                   + h |u - g|^2_inflow + eps^2 |curl psi|^2

with curl psi = [d_x psi, -d_t psi].  Since (grad q, curl psi) = 0 for the
chosen boundary conditions the q-psi block of the normal equations vanishes
and is not stored.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryTag, Mesh
from .problems import ProblemSpec
from .quadrature import gauss_interval, quadrature_rule
from .spaces import (Constraint, FEField, FESpace, assembly_degree, edge_index, element_geometry,
                     make_space, ref_basis)

EDGE_POINTS = 4


class MeshMismatch(ValueError):
    pass


@dataclass(eq=False)
class DataFunctional:
    """l(phi) = (r, phi) - <f(g).n, phi> on the inflow boundary, stored per dof."""

    space: FESpace
    values: np.ndarray

    def __call__(self, q: FEField) -> float:
        return float(self.values @ q.coefficients)


@dataclass(eq=False)
class GNSystem:
    """Normal equations over free dofs ordered [u, q, psi].

    ``upper`` holds the upper triangle (diagonal included) in CSR form.
    """

    upper: sp.csr_matrix
    b: np.ndarray
    offsets: tuple[int, int, int, int]
    spaces: tuple[FESpace, FESpace, FESpace]

    @property
    def A(self) -> sp.csr_matrix:
        U = self.upper
        full = (U + U.T - sp.diags(U.diagonal())).tocsr()
        full.sort_indices()
        return full

    def unpack(self, x: np.ndarray) -> tuple[FEField, FEField, FEField]:
        return unpack(self.spaces, x)


def pack(u: FEField, q: FEField, psi: FEField) -> np.ndarray:
    return np.concatenate([u.coefficients[u.space.free], q.coefficients[q.space.free],
                           psi.coefficients[psi.space.free]])


def unpack(spaces, x: np.ndarray) -> tuple[FEField, FEField, FEField]:
    out = []
    start = 0
    for S in spaces:
        c = np.zeros(S.ndofs)
        c[S.free] = x[start:start + S.n_free]
        start += S.n_free
        out.append(FEField(S, c))
    return tuple(out)


def _same_mesh(*spaces) -> Mesh:
    m = spaces[0].mesh
    for S in spaces[1:]:
        if S.mesh is not m:
            raise MeshMismatch("fields live on different meshes")
    return m


def _physical_points(m: Mesh, xy: np.ndarray) -> np.ndarray:
    """Quadrature points mapped to each triangle, shape (ne, nq, 2)."""
    _, _, p0, J = element_geometry(m)
    return p0[:, None, :] + np.einsum("eab,qb->eqa", J, xy)


def _inflow_edges(space: FESpace, prob: ProblemSpec):
    """Quadrature data on inflow boundary edges, cached per space and problem."""
    key = ("inflow_edges", id(prob))
    if key in space._cache:
        return space._cache[key]
    m = space.mesh
    sel = m.boundary_tags == BoundaryTag.INFLOW
    ends = m.boundary_edges[sel]
    a = m.vertices[ends[:, 0]]
    b = m.vertices[ends[:, 1]]
    d = b - a
    length = np.hypot(d[:, 0], d[:, 1])
    normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]
    t0, t1, x0, x1 = m.rect
    centre = np.array([0.5 * (t0 + t1), 0.5 * (x0 + x1)])
    flip = np.einsum("ea,ea->e", normal, 0.5 * (a + b) - centre) < 0
    normal[flip] *= -1.0

    s, ws = gauss_interval(EDGE_POINTS)
    ne = len(ends)
    S = np.broadcast_to(s, (ne, len(s))).copy()
    W = length[:, None] * ws[None, :]
    # jump points of g that fall strictly inside an edge: midpoint rule there
    for jp in prob.inflow_jumps:
        p = np.asarray(jp, dtype=float)
        lam = np.einsum("ea,ea->e", p - a, d) / length**2
        dist = np.abs(d[:, 0] * (p[1] - a[:, 1]) - d[:, 1] * (p[0] - a[:, 0])) / length
        inside = (dist <= 1e-12) & (lam > 1e-12) & (lam < 1 - 1e-12)
        if np.any(inside):
            warnings.warn(f"inflow jump point {tuple(p)} is not a mesh vertex; using the midpoint rule "
                          "on the edge containing it", stacklevel=3)
            S[inside] = 0.5
            W[inside] = length[inside, None] / len(s)
    pts = a[:, None, :] + S[..., None] * d[:, None, :]
    if space.order == 1:
        dofs = ends
        basis = np.stack([1 - S, S], axis=-1)
    else:
        dofs = np.concatenate([ends, (m.n_vertices + edge_index(m, ends))[:, None]], axis=1)
        basis = np.stack([(1 - S) * (1 - 2 * S), S * (2 * S - 1), 4 * S * (1 - S)], axis=-1)
    g = np.asarray(prob.inflow(pts[..., 0], pts[..., 1]), dtype=float)
    data = dict(dofs=dofs, basis=basis, weights=W, points=pts, normal=normal, g=g)
    space._cache[key] = data
    return data


def _check_source_jumps(m: Mesh, prob: ProblemSpec):
    x0 = m.rect[2]
    for c in prob.source_jumps_x:
        k = (c - x0) / m.h
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"source jump x={c} is not a grid line of the level-{m.level} mesh")


def assemble_ld(space_C: FESpace, prob: ProblemSpec, degree: int | None = None) -> DataFunctional:
    m = space_C.mesh
    if space_C.constraint is not Constraint.ON_GAMMA_C:
        raise ValueError("data functional requires a space constrained on the complement boundary")
    _check_source_jumps(m, prob)
    rule = quadrature_rule(degree or assembly_degree(1, space_C.order))
    det, _, _, _ = element_geometry(m)
    X = _physical_points(m, rule.xy)
    r = np.asarray(prob.source(X[..., 0], X[..., 1]), dtype=float)
    vals, _ = ref_basis(space_C.order, rule.xy)
    loc = np.einsum("eq,q,ql->el", r * det[:, None], rule.weights, vals)
    ell = np.bincount(space_C.elem_dofs.ravel(), weights=loc.ravel(), minlength=space_C.ndofs)

    E = _inflow_edges(space_C, prob)
    f1, f2 = prob.flux(E["g"])
    fn = f1 * E["normal"][:, 0, None] + f2 * E["normal"][:, 1, None]
    bl = np.einsum("es,es,esk->ek", fn, E["weights"], E["basis"])
    ell -= np.bincount(E["dofs"].ravel(), weights=bl.ravel(), minlength=space_C.ndofs)
    ell[space_C.constrained] = 0.0
    return DataFunctional(space_C, ell)


def eval_Fhat(u: FEField, q: FEField, psi: FEField, ell: DataFunctional, prob: ProblemSpec,
              h: float, augment: bool = True, eps: float = 0.0, degree: int | None = None) -> float:
    """Value of the data-only least-squares functional at (u, q, psi)."""
    m = _same_mesh(u.space, q.space, psi.space, ell.space)
    rule = quadrature_rule(degree or assembly_degree(u.space.order, q.space.order))
    det, _, _, _ = element_geometry(m)
    w = det[:, None] * rule.weights[None, :]
    uq = u.at_quadrature(rule)
    gq = q.grad_at_quadrature(rule)
    gp = psi.grad_at_quadrature(rule)
    f1, f2 = prob.flux(uq)
    R_t = f1 - gq[..., 0] - gp[..., 1]
    R_x = f2 - gq[..., 1] + gp[..., 0]
    dens = R_t**2 + R_x**2 + gq[..., 0]**2 + gq[..., 1]**2
    if eps:
        dens = dens + eps**2 * (gp[..., 0]**2 + gp[..., 1]**2)
    val = float(np.sum(w * dens)) + 2.0 * ell(q)
    if augment:
        E = _inflow_edges(u.space, prob)
        ub = np.einsum("ek,esk->es", u.coefficients[E["dofs"]], E["basis"])
        val += h * float(np.sum(E["weights"] * (ub - E["g"])**2))
    return val


class _Pattern:
    """Sparsity of the upper-triangular Gauss-Newton matrix and scatter maps into it.

    Local element matrices are reduced with boolean masks (upper part of the
    u-u block, free columns of the coupling blocks) and summed into the CSR
    value array through a fixed position map, so the summation order and
    hence the result are deterministic.
    """

    CHUNK = 4_000_000

    def __init__(self, U: FESpace, VC: FESpace, VI: FESpace):
        oq = U.n_free
        op = oq + VC.n_free
        N = op + VI.n_free
        self.offsets = (0, oq, op, N)
        self.N = N
        ud = U.free_index()[U.elem_dofs]
        cd = VC.free_index()[VC.elem_dofs]
        pd = VI.free_index()[VI.elem_dofs]
        ne, nu = ud.shape
        nv = cd.shape[1]
        self.mask_uu = ud[:, :, None] <= ud[:, None, :]
        self.mask_uq = np.broadcast_to((cd >= 0)[:, None, :], (ne, nu, nv)).copy()
        self.mask_up = np.broadcast_to((pd >= 0)[:, None, :], (ne, nu, nv)).copy()

        i32 = np.int32
        rows = [np.broadcast_to(ud[:, :, None], (ne, nu, nu))[self.mask_uu].astype(i32),
                np.broadcast_to(ud[:, :, None], (ne, nu, nv))[self.mask_uq].astype(i32),
                np.broadcast_to(ud[:, :, None], (ne, nu, nv))[self.mask_up].astype(i32)]
        cols = [np.broadcast_to(ud[:, None, :], (ne, nu, nu))[self.mask_uu].astype(i32),
                (oq + np.broadcast_to(cd[:, None, :], (ne, nu, nv))[self.mask_uq]).astype(i32),
                (op + np.broadcast_to(pd[:, None, :], (ne, nu, nv))[self.mask_up]).astype(i32)]
        self._n_var = sum(len(r) for r in rows)
        consts = []
        for K, off in ((stiffness(VC).tocoo(), oq), (stiffness(VI).tocoo(), op)):
            up = K.row <= K.col
            rows.append((off + K.row[up]).astype(i32))
            cols.append((off + K.col[up]).astype(i32))
            consts.append(K.data[up])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        S = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(N, N))
        S.sum_duplicates()
        S.sort_indices()
        self.indptr = S.indptr.astype(i32)
        self.indices = S.indices.astype(i32)
        self.nnz = S.nnz
        del S
        keys = np.repeat(np.arange(N, dtype=np.int64), np.diff(self.indptr)) * N + self.indices
        pos = np.empty(len(rows), dtype=i32)
        for a in range(0, len(rows), self.CHUNK):
            b = a + self.CHUNK
            pos[a:b] = np.searchsorted(keys, rows[a:b].astype(np.int64) * N + cols[a:b])
        del keys, rows, cols
        self.pos = pos[:self._n_var].copy()
        nc = len(consts[0])
        self._kc = (pos[self._n_var:self._n_var + nc].copy(), consts[0])
        self._ki = (pos[self._n_var + nc:].copy(), consts[1])

    def keys(self) -> np.ndarray:
        return np.repeat(np.arange(self.N, dtype=np.int64), np.diff(self.indptr)) * self.N + self.indices

    def constant(self, wq: float, wp: float) -> np.ndarray:
        """Scatter wq * K_C and wp * K_I into the value array."""
        (pc, dc), (pi, di) = self._kc, self._ki
        out = np.bincount(pc, weights=wq * dc, minlength=self.nnz)
        out += np.bincount(pi, weights=wp * di, minlength=self.nnz)
        return out

    def scatter(self, Muu, Muq, Mup) -> np.ndarray:
        vals = np.concatenate([Muu[self.mask_uu], Muq[self.mask_uq], Mup[self.mask_up]])
        return np.bincount(self.pos, weights=vals, minlength=self.nnz)

    def csr(self, data) -> sp.csr_matrix:
        A = sp.csr_matrix((data, self.indices, self.indptr), shape=(self.N, self.N))
        A.has_sorted_indices = True
        return A


def stiffness(space: FESpace, degree: int | None = None) -> sp.csr_matrix:
    """Gradient stiffness (grad phi_j, grad phi_i) over free dofs."""
    if "stiffness" in space._cache:
        return space._cache["stiffness"]
    rule = quadrature_rule(degree or max(1, 2 * (space.order - 1)))
    det, invT, _, _ = element_geometry(space.mesh)
    _, dref = ref_basis(space.order, rule.xy)
    n = space.nloc
    loc = np.zeros((space.mesh.n_triangles, n, n))
    for k, wk in enumerate(rule.weights):
        G = np.einsum("eab,lb->ela", invT, dref[k])
        loc += (wk * det)[:, None, None] * np.einsum("eia,eja->eij", G, G)
    fi = space.free_index()
    rows = np.broadcast_to(fi[space.elem_dofs][:, :, None], loc.shape).ravel()
    cols = np.broadcast_to(fi[space.elem_dofs][:, None, :], loc.shape).ravel()
    keep = (rows >= 0) & (cols >= 0)
    K = sp.csr_matrix((loc.ravel()[keep], (rows[keep], cols[keep])), shape=(space.n_free,) * 2)
    K.sum_duplicates()
    K.sort_indices()
    space._cache["stiffness"] = K
    return K


def _pattern(U: FESpace, VC: FESpace, VI: FESpace) -> _Pattern:
    key = ("gn_pattern", id(VC), id(VI))
    if key not in U._cache:
        U._cache[key] = _Pattern(U, VC, VI)
    return U._cache[key]


def _boundary_mass(U: FESpace, prob: ProblemSpec) -> sp.coo_matrix:
    E = _inflow_edges(U, prob)
    loc = np.einsum("es,esi,esj->eij", E["weights"], E["basis"], E["basis"])
    k = E["dofs"].shape[1]
    rows = np.repeat(E["dofs"], k, axis=1).ravel()
    cols = np.tile(E["dofs"], (1, k)).ravel()
    M = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(U.ndofs, U.ndofs)).tocsr()
    M.sum_duplicates()
    return M


def assemble_gn(u0: FEField, q0: FEField, psi0: FEField, ell: DataFunctional, prob: ProblemSpec,
                h: float, augment: bool = True, eps: float = 0.0, degree: int | None = None) -> GNSystem:
    """Normal equations for the Gauss-Newton update about (u0, q0, psi0).

    The gradient of ``eval_Fhat`` at the linearization point equals ``-2 b``.
    """
    U, VC, VI = u0.space, q0.space, psi0.space
    m = _same_mesh(U, VC, VI, ell.space)
    if VC.order != VI.order:
        raise ValueError("both potential spaces must have the same order")
    rule = quadrature_rule(degree or assembly_degree(U.order, VC.order))
    det, invT, _, _ = element_geometry(m)
    phi, _ = ref_basis(U.order, rule.xy)
    _, dref = ref_basis(VC.order, rule.xy)
    ne = m.n_triangles
    nu, nv = U.nloc, VC.nloc
    Muu = np.zeros((ne, nu, nu))
    Muq = np.zeros((ne, nu, nv))
    Mup = np.zeros((ne, nu, nv))
    bu = np.zeros((ne, nu))
    bq = np.zeros((ne, nv))
    bp = np.zeros((ne, nv))

    uq = u0.at_quadrature(rule)
    gq = q0.grad_at_quadrature(rule)
    gp = psi0.grad_at_quadrature(rule)
    for k, wk in enumerate(rule.weights):
        w = wk * det
        uk = uq[:, k]
        f1, f2 = prob.flux(uk)
        J1, J2 = prob.flux_deriv(uk)
        qt, qx = gq[:, k, 0], gq[:, k, 1]
        pt, px = gp[:, k, 0], gp[:, k, 1]
        Rt = f1 - qt - px
        Rx = f2 - qx + pt
        G = np.einsum("eab,lb->ela", invT, dref[k])      # (ne, nv, 2) in (t, x)
        Gt, Gx = G[..., 0], G[..., 1]
        ph = phi[k]
        Muu += (w * (J1 * J1 + J2 * J2))[:, None, None] * np.outer(ph, ph)[None]
        JG = J1[:, None] * Gt + J2[:, None] * Gx          # J . grad phi
        JC = J1[:, None] * Gx - J2[:, None] * Gt          # J . curl phi
        Muq -= w[:, None, None] * ph[None, :, None] * JG[:, None, :]
        Mup -= w[:, None, None] * ph[None, :, None] * JC[:, None, :]
        bu -= (w * (Rt * J1 + Rx * J2))[:, None] * ph[None, :]
        bq += w[:, None] * ((Rt - qt)[:, None] * Gt + (Rx - qx)[:, None] * Gx)
        cp = w[:, None] * (Rt[:, None] * Gx - Rx[:, None] * Gt)
        if eps:
            cp -= (eps**2 * w)[:, None] * (pt[:, None] * Gt + px[:, None] * Gx)
        bp += cp

    P = _pattern(U, VC, VI)
    cache_key = ("gn_const", id(VC), id(VI), id(prob), float(h), bool(augment), float(eps))
    if cache_key not in U._cache:
        const = P.constant(2.0, 1.0 + eps**2)
        if augment:
            Mb = _boundary_mass(U, prob).tocoo()
            fi = U.free_index()
            up = Mb.row <= Mb.col
            keys = fi[Mb.row[up]].astype(np.int64) * P.N + fi[Mb.col[up]]
            pos = np.searchsorted(P.keys(), keys)
            const += np.bincount(pos, weights=h * Mb.data[up], minlength=P.nnz)
        U._cache[cache_key] = const
    data = P.scatter(Muu, Muq, Mup) + U._cache[cache_key]

    b_u = np.bincount(U.elem_dofs.ravel(), weights=bu.ravel(), minlength=U.ndofs)
    b_q = np.bincount(VC.elem_dofs.ravel(), weights=bq.ravel(), minlength=VC.ndofs) - ell.values
    b_p = np.bincount(VI.elem_dofs.ravel(), weights=bp.ravel(), minlength=VI.ndofs)
    if augment:
        E = _inflow_edges(U, prob)
        ub = np.einsum("ek,esk->es", u0.coefficients[E["dofs"]], E["basis"])
        bl = np.einsum("es,esk->ek", E["weights"] * (ub - E["g"]), E["basis"])
        b_u -= h * np.bincount(E["dofs"].ravel(), weights=bl.ravel(), minlength=U.ndofs)
    b = np.concatenate([b_u[U.free], b_q[VC.free], b_p[VI.free]])
    return GNSystem(P.csr(data), b, P.offsets, (U, VC, VI))


@dataclass(eq=False)
class Discretization:
    """Spaces, data functional and parameters of one refinement level."""

    prob: ProblemSpec
    mesh: Mesh
    order_u: int = 1
    order_v: int = 1
    augment: bool = True
    eta: float | None = None
    U: FESpace = field(init=False)
    VC: FESpace = field(init=False)
    VI: FESpace = field(init=False)
    ell: DataFunctional = field(init=False)

    def __post_init__(self):
        if self.mesh.split is None:
            self.mesh = self.mesh.with_tags(self.prob.split)
        self.U = make_space(self.mesh, self.order_u, Constraint.NONE)
        self.VC = make_space(self.mesh, self.order_v, Constraint.ON_GAMMA_C)
        self.VI = make_space(self.mesh, self.order_v, Constraint.ON_GAMMA_I)
        self.ell = assemble_ld(self.VC, self.prob, self.degree)

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def eps(self) -> float:
        return 0.0 if self.eta is None else self.h ** self.eta

    @property
    def degree(self) -> int:
        return assembly_degree(self.order_u, self.order_v)

    @property
    def spaces(self) -> tuple[FESpace, FESpace, FESpace]:
        return self.U, self.VC, self.VI

    def release(self) -> None:
        """Drop cached Gauss-Newton assembly data (large on fine levels)."""
        for S in self.spaces:
            for k in [k for k in S._cache if isinstance(k, tuple) and k[0] in ("gn_pattern", "gn_const")]:
                del S._cache[k]

    def Fhat(self, u, q, psi) -> float:
        return eval_Fhat(u, q, psi, self.ell, self.prob, self.h, self.augment, self.eps, self.degree)

    def gn_system(self, u, q, psi) -> GNSystem:
        return assemble_gn(u, q, psi, self.ell, self.prob, self.h, self.augment, self.eps, self.degree)
