"""Continuous Lagrange P1/P2 spaces on triangular meshes."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .mesh import BoundaryTag, Mesh
from .quadrature import QuadratureRule


class Constraint(enum.Enum):
    NONE = "none"
    ON_GAMMA_C = "gamma_c"
    ON_GAMMA_I = "gamma_i"


def ref_basis(order: int, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Basis values (n, nloc) and reference gradients (n, nloc, 2) at points ``xy``.

    P2 local ordering: three vertices, then midpoints of local edges
    (0,1), (1,2), (2,0).
    """
    xy = np.atleast_2d(xy)
    r, s = xy[:, 0], xy[:, 1]
    l0, l1, l2 = 1.0 - r - s, r, s
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if order == 1:
        vals = np.stack([l0, l1, l2], axis=1)
        grads = np.broadcast_to(dl, (len(r), 3, 2)).copy()
        return vals, grads
    if order == 2:
        lam = [l0, l1, l2]
        vals = np.stack([
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
        ], axis=1)
        grads = np.empty((len(r), 6, 2))
        for k in range(3):
            grads[:, k] = (4 * lam[k] - 1)[:, None] * dl[k]
        for k, (a, b) in enumerate([(0, 1), (1, 2), (2, 0)]):
            grads[:, 3 + k] = 4 * (lam[a][:, None] * dl[b] + lam[b][:, None] * dl[a])
        return vals, grads
    raise ValueError(f"unsupported order {order}")


@dataclass(eq=False)
class FESpace:
    mesh: Mesh
    order: int
    dof_coords: np.ndarray
    elem_dofs: np.ndarray
    constrained: np.ndarray
    constraint: Constraint
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def ndofs(self) -> int:
        return len(self.dof_coords)

    @property
    def nloc(self) -> int:
        return self.elem_dofs.shape[1]

    @property
    def free(self) -> np.ndarray:
        if "free" not in self._cache:
            mask = np.ones(self.ndofs, dtype=bool)
            mask[self.constrained] = False
            self._cache["free"] = np.flatnonzero(mask)
        return self._cache["free"]

    @property
    def n_free(self) -> int:
        return self.ndofs - len(self.constrained)

    def free_index(self) -> np.ndarray:
        """Map global dof -> position among free dofs, -1 for constrained ones."""
        if "free_index" not in self._cache:
            idx = np.full(self.ndofs, -1, dtype=np.int64)
            idx[self.free] = np.arange(len(self.free))
            self._cache["free_index"] = idx
        return self._cache["free_index"]

    def geometry(self):
        """Per-triangle Jacobian determinant and inverse-transpose Jacobian."""
        return element_geometry(self.mesh)

    def zero(self) -> "FEField":
        return FEField(self, np.zeros(self.ndofs))


def element_geometry(m: Mesh):
    if "geometry" not in m._cache:
        p = m.vertices[m.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns = edge vectors
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        invT = np.transpose(inv, (0, 2, 1))
        m._cache["geometry"] = (det, invT, p[:, 0].copy(), J)
    return m._cache["geometry"]


def make_space(m: Mesh, order: int, constraint: Constraint = Constraint.NONE) -> FESpace:
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    if order == 1:
        coords = m.vertices
        elem = m.triangles.copy()
    else:
        edges, tri_edges = m.edges()
        mids = m.vertices[edges].mean(axis=1)
        coords = np.concatenate([m.vertices, mids], axis=0)
        elem = np.concatenate([m.triangles, m.n_vertices + tri_edges], axis=1)

    if constraint is Constraint.NONE:
        constrained = np.zeros(0, dtype=np.int64)
    else:
        if np.any(m.boundary_tags < 0):
            raise ValueError("mesh boundary is not tagged")
        tag = BoundaryTag.COMPLEMENT if constraint is Constraint.ON_GAMMA_C else BoundaryTag.INFLOW
        sel = m.boundary_edges[m.boundary_tags == tag]
        constrained = [np.unique(sel)]
        if order == 2:
            constrained.append(m.n_vertices + edge_index(m, sel))
        constrained = np.unique(np.concatenate(constrained))
    return FESpace(m, order, coords, elem, constrained, constraint)


@dataclass(eq=False)
class FEField:
    space: FESpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.ndofs,):
            raise ValueError("coefficient vector has the wrong length")

    def copy(self) -> "FEField":
        return FEField(self.space, self.coefficients.copy())

    def __add__(self, other: "FEField") -> "FEField":
        return FEField(self.space, self.coefficients + other.coefficients)

    def __sub__(self, other: "FEField") -> "FEField":
        return FEField(self.space, self.coefficients - other.coefficients)

    def __mul__(self, s: float) -> "FEField":
        return FEField(self.space, s * self.coefficients)

    __rmul__ = __mul__

    def at_quadrature(self, rule: QuadratureRule) -> np.ndarray:
        """Values (ne, nq)."""
        vals, _ = ref_basis(self.space.order, rule.xy)
        return self.coefficients[self.space.elem_dofs] @ vals.T

    def grad_at_quadrature(self, rule: QuadratureRule) -> np.ndarray:
        """Gradients (ne, nq, 2) in (t, x)."""
        _, dref = ref_basis(self.space.order, rule.xy)
        _, invT, _, _ = self.space.geometry()
        c = self.coefficients[self.space.elem_dofs]
        gref = np.einsum("el,qlb->eqb", c, dref)
        return np.einsum("eab,eqb->eqa", invT, gref)

    def __call__(self, t, x) -> np.ndarray:
        """Point evaluation (structured meshes only)."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        tri, lam = self.space.mesh.locate(t.ravel(), x.ravel())
        vals, _ = ref_basis(self.space.order, lam[:, 1:])
        c = self.coefficients[self.space.elem_dofs[tri]]
        return np.einsum("nl,nl->n", c, vals).reshape(t.shape)


def interpolate(space: FESpace, w) -> FEField:
    """Nodal interpolant of the pointwise function ``w(t, x)``; constrained dofs zeroed."""
    c = np.asarray(w(space.dof_coords[:, 0], space.dof_coords[:, 1]), dtype=float)
    c = np.broadcast_to(c, (space.ndofs,)).copy()
    if not np.all(np.isfinite(c)):
        raise ValueError("interpolated function is not finite at all dofs")
    c[space.constrained] = 0.0
    return FEField(space, c)


def transfer(field_: FEField, space: FESpace) -> FEField:
    """Evaluate ``field_`` at the dofs of ``space`` (exact for nested spaces)."""
    return interpolate(space, field_)


def eval_basis(space: FESpace, triangle: int, ref_point) -> tuple[np.ndarray, np.ndarray]:
    """Local basis values and (t, x) gradients of ``triangle`` at a reference point."""
    vals, dref = ref_basis(space.order, np.asarray(ref_point, dtype=float).reshape(1, 2))
    _, invT, _, _ = space.geometry()
    grads = dref[0] @ invT[triangle].T
    return vals[0], grads


def assembly_degree(order_u: int, order_v: int) -> int:
    """Quadrature degree making the Burgers functional and its Gauss-Newton system exact."""
    if order_u == 1 and order_v == 1:
        return 4
    return max(6, 4 * order_u)


def edge_index(m: Mesh, pairs: np.ndarray) -> np.ndarray:
    """Position of each vertex pair (any orientation) in ``m.edges()``."""
    edges, _ = m.edges()
    s = np.sort(np.asarray(pairs), axis=1)
    base = m.n_vertices + 1
    codes = edges[:, 0] * base + edges[:, 1]
    want = s[:, 0] * base + s[:, 1]
    pos = np.searchsorted(codes, want)
    if np.any(pos >= len(codes)) or np.any(codes[np.minimum(pos, len(codes) - 1)] != want):
        raise ValueError("vertex pair is not a mesh edge")
    return pos
