import numpy as np
import pytest

from lsbalance.mesh import build_structured
from lsbalance.output import (sample_grid, triangle_neighbors, write_grid_csv, write_mesh_dump, write_polylines_csv,
                              write_vtk, write_vtk_polylines)


def test_vtk_unstructured(tmp_path):
    m = build_structured(2, 2)
    write_vtk(tmp_path / "m.vtk", m, {"u": np.arange(9.0)}, {"area": m.signed_areas()})
    lines = (tmp_path / "m.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2:5] == ["ASCII", "DATASET UNSTRUCTURED_GRID", "POINTS 9 double"]
    assert "CELLS 8 32" in lines and "CELL_TYPES 8" in lines
    assert "POINT_DATA 9" in lines and "CELL_DATA 8" in lines
    assert lines[lines.index("CELLS 8 32") + 1].split()[0] == "3"


def test_vtk_rejects_wrong_length(tmp_path):
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "m.vtk", build_structured(1, 1), {"u": np.zeros(3)})


def test_polylines(tmp_path):
    lines = [("A", np.linspace(0, 1, 5), np.linspace(0, 2, 5)), ("B", np.array([0.0, 1.0]), np.array([1.0, 1.0]))]
    write_vtk_polylines(tmp_path / "s.vtk", lines)
    txt = (tmp_path / "s.vtk").read_text().splitlines()
    assert "POINTS 7 double" in txt and "LINES 2 9" in txt
    write_polylines_csv(tmp_path / "s.csv", lines)
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 8


def test_grid_csv_deterministic(tmp_path):
    T, X = sample_grid((0, 1, 0, 2), 4, 8)
    assert T.shape == (5, 9) and X[0, -1] == 2
    write_grid_csv(tmp_path / "a.csv", T, X, {"u": T + X})
    write_grid_csv(tmp_path / "b.csv", T, X, {"u": T + X})
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    assert a.splitlines()[0] == b"t,x,u" and len(a.splitlines()) == 46


def test_neighbors_and_dump(tmp_path):
    m = build_structured(3, 3)
    nb = triangle_neighbors(m)
    assert (nb == -1).sum() == len(m.boundary_edges)
    for e, row in enumerate(nb):
        for k, n in enumerate(row):
            if n >= 0:
                assert e in nb[n]
                shared = set(m.triangles[e]) & set(m.triangles[n])
                assert len(shared) == 2 and m.triangles[e][k] not in shared
    write_mesh_dump(tmp_path / "m.txt", m)
    txt = (tmp_path / "m.txt").read_text()
    assert "vertices 16" in txt and "triangles 18" in txt and "boundary_edges 12" in txt
