"""Structured triangulations of a space-time rectangle.

Coordinates are ordered ``(t, x)`` throughout. Each grid square is split
by its lower-left to upper-right diagonal ("right-crossed" squares).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised for invalid mesh geometry or boundary definitions."""


class BoundaryTag(enum.IntEnum):
    INFLOW = 0
    COMPLEMENT = 1


Segment = tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class BoundarySplit:
    """Axis-aligned boundary segments that make up the inflow boundary.

    Everything on the perimeter not covered by ``inflow`` is tagged
    COMPLEMENT.
    """

    inflow: tuple[Segment, ...]


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray            # (nv, 2) float, columns (t, x)
    triangles: np.ndarray           # (ne, 3) int, counterclockwise
    boundary_edges: np.ndarray      # (nb, 2) int
    boundary_tags: np.ndarray       # (nb,) BoundaryTag values, -1 if untagged
    level: int
    h: float
    nt: int
    nx: int
    rect: tuple[float, float, float, float]
    grid_ids: np.ndarray            # (nt+1, nx+1) vertex index of grid node (i, j)
    split: BoundarySplit | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges (sorted vertex pairs) and the (ne, 3) triangle-to-edge map.

        Local edge k of a triangle joins local vertices k and (k+1) % 3.
        """
        if "edges" not in self._cache:
            tri = self.triangles
            pairs = np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1)
            pairs = np.sort(pairs.reshape(-1, 2), axis=1)
            uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
            self._cache["edges"] = (uniq, inv.reshape(-1, 3))
        return self._cache["edges"]

    def tagged_vertices(self, tag: BoundaryTag) -> np.ndarray:
        """Sorted vertex indices lying on the closure of edges with ``tag``."""
        sel = self.boundary_edges[self.boundary_tags == tag]
        return np.unique(sel)

    def locate(self, t: np.ndarray, x: np.ndarray):
        """Triangle index and barycentric coordinates for points in the rectangle."""
        t0, t1, x0, x1 = self.rect
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        st = (t - t0) / self.h
        sx = (x - x0) / self.h
        i = np.clip(np.floor(st).astype(np.int64), 0, self.nt - 1)
        j = np.clip(np.floor(sx).astype(np.int64), 0, self.nx - 1)
        a = st - i
        b = sx - j
        upper = b > a
        tri = 2 * (i * self.nx + j) + upper
        # lower triangle (v00, v10, v11): lambda = (1 - a, a - b, b)
        # upper triangle (v00, v11, v01): lambda = (1 - b, a, b - a)
        lam = np.where(
            upper[..., None],
            np.stack([1 - b, a, b - a], axis=-1),
            np.stack([1 - a, a - b, b], axis=-1),
        )
        return tri, lam

    def with_tags(self, split: BoundarySplit) -> "Mesh":
        return tag_boundary(self, split)


def _structured(nt: int, nx: int, rect, level: int, order: np.ndarray | None = None) -> Mesh:
    t0, t1, x0, x1 = rect
    h = (t1 - t0) / nt
    ii, jj = np.meshgrid(np.arange(nt + 1), np.arange(nx + 1), indexing="ij")
    lex = ii * (nx + 1) + jj
    if order is None:
        grid_ids = lex
    else:
        # order[k] = lexicographic id of the vertex numbered k
        grid_ids = np.empty((nt + 1) * (nx + 1), dtype=np.int64)
        grid_ids[order] = np.arange(len(order))
        grid_ids = grid_ids.reshape(nt + 1, nx + 1)
    flat = grid_ids.ravel()
    coords = np.empty(((nt + 1) * (nx + 1), 2))
    coords[flat, 0] = t0 + h * ii.ravel()
    coords[flat, 1] = x0 + h * jj.ravel()
    # snap the far sides exactly onto the rectangle
    coords[grid_ids[-1, :], 0] = t1
    coords[grid_ids[:, -1], 1] = x1

    v00 = grid_ids[:-1, :-1].ravel()
    v10 = grid_ids[1:, :-1].ravel()
    v01 = grid_ids[:-1, 1:].ravel()
    v11 = grid_ids[1:, 1:].ravel()
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    sides = [
        np.stack([grid_ids[0, :-1], grid_ids[0, 1:]], axis=1),     # t = t0
        np.stack([grid_ids[-1, :-1], grid_ids[-1, 1:]], axis=1),   # t = t1
        np.stack([grid_ids[:-1, 0], grid_ids[1:, 0]], axis=1),     # x = x0
        np.stack([grid_ids[:-1, -1], grid_ids[1:, -1]], axis=1),   # x = x1
    ]
    bedges = np.concatenate(sides, axis=0)
    tags = np.full(len(bedges), -1, dtype=np.int64)
    return Mesh(coords, triangles, bedges, tags, level, h, nt, nx, tuple(rect), grid_ids)


def build_structured(nt: int, nx: int, rect=(0.0, 1.0, 0.0, 1.0)) -> Mesh:
    """Right-crossed triangulation with ``nt`` squares in t and ``nx`` in x."""
    if nt < 1 or nx < 1:
        raise GeometryError("nt and nx must be positive")
    t0, t1, x0, x1 = map(float, rect)
    if not (t1 > t0 and x1 > x0):
        raise GeometryError("degenerate rectangle")
    ht, hx = (t1 - t0) / nt, (x1 - x0) / nx
    if not np.isclose(ht, hx, rtol=1e-12, atol=0.0):
        raise GeometryError(f"cells are not square: dt={ht}, dx={hx}")
    return _structured(nt, nx, (t0, t1, x0, x1), level=0)


def refine_uniform(m: Mesh) -> Mesh:
    """Halve h; parent vertices keep their indices, new vertices follow in grid order."""
    nt, nx = 2 * m.nt, 2 * m.nx
    ii, jj = np.meshgrid(np.arange(nt + 1), np.arange(nx + 1), indexing="ij")
    lex = (ii * (nx + 1) + jj)
    parent_lex = lex[::2, ::2]
    # parent vertex k sits at fine grid position 2 * (its coarse position)
    order_parent = np.empty(m.n_vertices, dtype=np.int64)
    order_parent[m.grid_ids.ravel()] = parent_lex.ravel()
    is_new = np.ones(lex.size, dtype=bool)
    is_new[parent_lex.ravel()] = False
    order = np.concatenate([order_parent, lex.ravel()[is_new]])
    fine = _structured(nt, nx, m.rect, level=m.level + 1, order=order)
    if m.split is not None:
        fine = tag_boundary(fine, m.split)
    return fine


def _on_perimeter(p, rect, tol) -> bool:
    t0, t1, x0, x1 = rect
    t, x = p
    inside = (t0 - tol <= t <= t1 + tol) and (x0 - tol <= x <= x1 + tol)
    on_side = min(abs(t - t0), abs(t - t1), abs(x - x0), abs(x - x1)) <= tol
    return inside and on_side


def tag_boundary(m: Mesh, split: BoundarySplit) -> Mesh:
    """Tag every boundary edge INFLOW or COMPLEMENT according to ``split``."""
    if not split.inflow:
        raise GeometryError("inflow boundary must have nonzero measure")
    tol = 1e-12 * max(1.0, max(abs(c) for c in m.rect))
    for seg in split.inflow:
        for p in seg:
            if not _on_perimeter(p, m.rect, tol):
                raise GeometryError(f"segment endpoint {p} is not on the perimeter")
        (a_t, a_x), (b_t, b_x) = seg
        if abs(a_t - b_t) > tol and abs(a_x - b_x) > tol:
            raise GeometryError(f"segment {seg} is not axis-aligned")

    mid = m.vertices[m.boundary_edges].mean(axis=1)
    tags = np.full(len(mid), int(BoundaryTag.COMPLEMENT))
    for (a_t, a_x), (b_t, b_x) in split.inflow:
        lo_t, hi_t = sorted((a_t, b_t))
        lo_x, hi_x = sorted((a_x, b_x))
        hit = (
            (mid[:, 0] >= lo_t - tol) & (mid[:, 0] <= hi_t + tol)
            & (mid[:, 1] >= lo_x - tol) & (mid[:, 1] <= hi_x + tol)
        )
        tags[hit] = int(BoundaryTag.INFLOW)
    if np.all(tags == BoundaryTag.INFLOW):
        raise GeometryError("complement boundary is empty")
    if not np.any(tags == BoundaryTag.INFLOW):
        raise GeometryError("no boundary edge lies on the inflow segments")
    return Mesh(m.vertices, m.triangles, m.boundary_edges, tags, m.level, m.h,
                m.nt, m.nx, m.rect, m.grid_ids, split)
