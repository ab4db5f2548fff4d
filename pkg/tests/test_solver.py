import csv

import numpy as np
import pytest

from lsbalance.forms import Discretization
from lsbalance.problems import example_spec, linear_spec, zero_data
from lsbalance.solver import (GNOptions, coarse_mesh, constant_guess, inflow_mean, nested_iterate, solve_level,
                              write_iteration_log)


def test_options_validation():
    for bad in (dict(rel_tol=0), dict(shrink=1.0), dict(shrink=0), dict(max_iters=-1),
                dict(linear_solver="lu")):
        with pytest.raises(ValueError):
            GNOptions(**bad)


def test_inflow_mean_example1():
    p = example_spec(1)
    d = Discretization(p, coarse_mesh(p))
    # g: 3 on x in [-0.25, 0], 1 on (0, 1.75] at t = 0, and 3 + t on x = -0.25
    assert inflow_mean(d) == pytest.approx((3 * 0.25 + 1.75 + 3.5) / 3.0, rel=1e-12)


@pytest.mark.parametrize("solver", ["cholesky", "cg"])
def test_linear_flux_converges_in_one_step(solver):
    p = linear_spec(1.0)
    d = Discretization(p, coarse_mesh(p))
    rep = solve_level(p, d, GNOptions(linear_solver=solver), constant_guess(d))
    assert rep.iterations == 1 and rep.converged
    assert rep.log[1].damping == 1.0


def test_zero_data_no_iterations():
    p = zero_data(example_spec(1))
    d = Discretization(p, coarse_mesh(p))
    rep = solve_level(p, d, GNOptions(), tuple(S.zero() for S in d.spaces))
    assert rep.iterations == 0 and rep.converged and rep.M_h == 0


def test_example2_coarse_iteration_count():
    p = example_spec(2)
    d = Discretization(p, coarse_mesh(p))
    rep = solve_level(p, d, GNOptions(), constant_guess(d))
    assert abs(rep.iterations - 5) <= 3
    F = [r.functional for r in rep.log]
    assert all(b < a for a, b in zip(F, F[1:]))


def test_cg_and_cholesky_agree():
    p = example_spec(1)
    d = Discretization(p, coarse_mesh(p))
    a = solve_level(p, d, GNOptions(), constant_guess(d))
    b = solve_level(p, d, GNOptions(linear_solver="cg"), constant_guess(d))
    assert a.M_h == pytest.approx(b.M_h, rel=1e-9)
    assert np.allclose(a.u.coefficients, b.u.coefficients, atol=1e-5)


@pytest.fixture(scope="module")
def nested():
    return nested_iterate(example_spec(1), 3)


def test_nested_decrease(nested):
    M = [r.M_h for r in nested]
    assert all(a - b >= -1e-10 for a, b in zip(M, M[1:]))
    for r in nested:
        F = [x.functional for x in r.log]
        assert all(b < a for a, b in zip(F, F[1:]))
        assert r.converged and r.u.space.mesh.level == r.level


def test_single_level_matches_solve_level(nested):
    p = example_spec(1)
    one = nested_iterate(p, 1)[0]
    d = Discretization(p, coarse_mesh(p))
    ref = solve_level(p, d, GNOptions(), constant_guess(d))
    assert one.iterations == ref.iterations
    assert np.array_equal(one.u.coefficients, ref.u.coefficients)
    assert one.M_h == nested[0].M_h
    with pytest.raises(ValueError):
        nested_iterate(p, 0)


def test_iteration_log(nested, tmp_path):
    path = tmp_path / "it.csv"
    write_iteration_log(path, nested)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["level", "iter", "functional", "damping"]
    assert len(rows) - 1 == sum(len(r.log) for r in nested)
