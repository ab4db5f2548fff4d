"""Plain-text artifacts: legacy VTK (ASCII 3.0), CSV grid samples, shock polylines, mesh dumps."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import Mesh

VTK_TRIANGLE = 5
VTK_POLY_LINE = 4


def _fmt(a) -> list[str]:
    return [repr(float(v)) for v in np.ravel(a)]


def _rows(fh, arr, per_line: int):
    arr = np.asarray(arr)
    for i in range(0, len(arr), per_line):
        fh.write(" ".join(str(v) for v in arr[i:i + per_line]) + "\n")


def write_vtk(path, mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "lsbalance") -> None:
    """Unstructured triangle grid with scalar point/cell fields; the third coordinate is 0.

    Point fields must have one value per mesh vertex (for P2 fields pass the
    vertex coefficients, which come first in the dof numbering).
    """
    V = mesh.vertices
    T = mesh.triangles
    nv, ne = len(V), len(T)
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for t, x in V:
            fh.write(f"{float(t)!r} {float(x)!r} 0.0\n")
        fh.write(f"CELLS {ne} {4 * ne}\n")
        for a, b, c in T:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {ne}\n")
        _rows(fh, np.full(ne, VTK_TRIANGLE), 32)
        _scalars(fh, "POINT_DATA", nv, point_data)
        _scalars(fh, "CELL_DATA", ne, cell_data)


def _scalars(fh, kind: str, n: int, data: dict | None):
    if not data:
        return
    fh.write(f"{kind} {n}\n")
    for name, vals in data.items():
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (n,):
            raise ValueError(f"field {name!r} has {vals.size} values, expected {n}")
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        _rows(fh, _fmt(vals), 6)


def write_vtk_polylines(path, lines, title: str = "shock paths") -> None:
    """Polylines given as (label, t, x) triples; a cell field ``shock`` numbers them."""
    lines = [(lab, np.asarray(t), np.asarray(x)) for lab, t, x in lines if len(t) >= 2]
    npts = sum(len(t) for _, t, _ in lines)
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n" + title + "\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {npts} double\n")
        for _, t, x in lines:
            for a, b in zip(t, x):
                fh.write(f"{float(a)!r} {float(b)!r} 0.0\n")
        fh.write(f"LINES {len(lines)} {npts + len(lines)}\n")
        k = 0
        for _, t, _ in lines:
            fh.write(" ".join(map(str, [len(t), *range(k, k + len(t))])) + "\n")
            k += len(t)
        if lines:
            fh.write(f"CELL_DATA {len(lines)}\nSCALARS shock int 1\nLOOKUP_TABLE default\n")
            fh.write(" ".join(str(i) for i in range(len(lines))) + "\n")


def sample_grid(rect, nt: int, nx: int):
    """Vertex coordinates of a uniform (nt+1) x (nx+1) grid, as 2-d arrays T, X."""
    t0, t1, x0, x1 = rect
    return np.meshgrid(np.linspace(t0, t1, nt + 1), np.linspace(x0, x1, nx + 1), indexing="ij")


def write_grid_csv(path, T, X, fields: dict) -> None:
    """Columns t, x, then one column per named field, rows in t-major order."""
    cols = {k: np.asarray(v, dtype=float).ravel() for k, v in fields.items()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", *cols])
        for i, (t, x) in enumerate(zip(T.ravel(), X.ravel())):
            w.writerow([repr(float(t)), repr(float(x)), *(repr(float(c[i])) for c in cols.values())])


def write_polylines_csv(path, lines) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["shock", "label", "t", "x"])
        for k, (lab, t, x) in enumerate(lines):
            for a, b in zip(t, x):
                w.writerow([k, lab, repr(float(a)), repr(float(b))])


def triangle_neighbors(mesh: Mesh) -> np.ndarray:
    """(ne, 3) neighbor across the edge opposite each local vertex, -1 on the boundary."""
    T = mesh.triangles
    ne = len(T)
    loc = np.array([[1, 2], [2, 0], [0, 1]])
    e = np.sort(T[:, loc].reshape(-1, 2), axis=1)
    key = e[:, 0].astype(np.int64) * mesh.n_vertices + e[:, 1]
    order = np.argsort(key, kind="stable")
    ks = key[order]
    nb = np.full(3 * ne, -1, dtype=np.int64)
    same = np.flatnonzero(ks[1:] == ks[:-1])
    a, b = order[same], order[same + 1]
    nb[a] = b // 3
    nb[b] = a // 3
    return nb.reshape(ne, 3)


def write_mesh_dump(path, mesh: Mesh) -> None:
    """Human-readable mesh: vertices, triangles with neighbors, tagged boundary edges."""
    nbr = triangle_neighbors(mesh)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# level {mesh.level} h {mesh.h!r} grid {mesh.nt}x{mesh.nx}\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for i, (t, x) in enumerate(mesh.vertices):
            fh.write(f"{i} {float(t)!r} {float(x)!r}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for i, (tri, nb) in enumerate(zip(mesh.triangles, nbr)):
            fh.write(f"{i} {tri[0]} {tri[1]} {tri[2]} | {nb[0]} {nb[1]} {nb[2]}\n")
        fh.write(f"boundary_edges {len(mesh.boundary_edges)}\n")
        for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            fh.write(f"{a} {b} {int(tag)}\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
