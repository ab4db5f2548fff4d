import csv

import numpy as np
import pytest

from lsbalance.diagnostics import (ConvergenceTable, build_table, collision_point, discrete_helmholtz, error_norms,
                                   hminus1_residual, reduced_functional, smooth_error_norms, track_shocks)
from lsbalance.exact import exact_solution
from lsbalance.forms import Discretization
from lsbalance.mesh import refine_uniform
from lsbalance.problems import example_spec, manufactured_solution, zero_data
from lsbalance.quadrature import quadrature_rule
from lsbalance.solver import SolveReport, coarse_mesh
from lsbalance.spaces import FEField, element_geometry, interpolate, make_space


@pytest.fixture(scope="module", params=[1, 2])
def disc(request):
    p = example_spec(3)
    return Discretization(p, coarse_mesh(p), order_v=request.param)


def rand_field(S, rng, mean=0.0):
    return interpolate(S, lambda t, x: mean + rng.normal(size=np.shape(t)))


def test_helmholtz_recovers_gradient_and_curl(disc):
    rng = np.random.default_rng(0)
    rule = quadrature_rule(6)
    phi, nu = rand_field(disc.VC, rng), rand_field(disc.VI, rng)
    q, psi = discrete_helmholtz(phi.grad_at_quadrature(rule), disc.VC, disc.VI)
    assert np.allclose(q.coefficients, phi.coefficients, atol=1e-9)
    assert np.abs(psi.coefficients).max() <= 1e-9
    g = nu.grad_at_quadrature(rule)
    curl = np.stack([g[..., 1], -g[..., 0]], axis=-1)
    q, psi = discrete_helmholtz(curl, disc.VC, disc.VI)
    assert np.abs(q.coefficients).max() <= 1e-9
    assert np.allclose(psi.coefficients, nu.coefficients, atol=1e-9)


def test_helmholtz_pythagoras_and_determinism(disc):
    rng = np.random.default_rng(1)
    v = FEField(disc.U, 2 + rng.normal(size=disc.U.ndofs))
    q, psi = discrete_helmholtz(v, disc.VC, disc.VI, disc.prob)
    q2, psi2 = discrete_helmholtz(v, disc.VC, disc.VI, disc.prob)
    assert np.array_equal(q.coefficients, q2.coefficients) and np.array_equal(psi.coefficients, psi2.coefficients)
    rule = quadrature_rule(6)
    det, _, _, _ = element_geometry(disc.mesh)
    w = det[:, None] * rule.weights
    f1, f2 = disc.prob.flux(v.at_quadrature(rule))
    nf = np.sum(w * (f1 ** 2 + f2 ** 2))
    gq, gp = q.grad_at_quadrature(rule), psi.grad_at_quadrature(rule)
    nq, npsi = np.sum(w * (gq ** 2).sum(-1)), np.sum(w * (gp ** 2).sum(-1))
    cross = np.sum(w * (gq[..., 0] * gp[..., 1] - gq[..., 1] * gp[..., 0]))
    assert abs(cross) <= 1e-8 * nf
    assert nq + npsi <= nf * (1 + 1e-12)


def test_reduced_is_half_residual_squared(disc):
    rng = np.random.default_rng(2)
    for _ in range(3):
        v = FEField(disc.U, 2 + rng.normal(size=disc.U.ndofs))
        r = hminus1_residual(v, disc.prob, disc.VC, disc.ell)
        G = reduced_functional(v, disc.prob, disc.VC, disc.VI, disc.ell)
        assert G == pytest.approx(0.5 * r * r, rel=1e-10)


def test_zero_data_zero_residual():
    p = zero_data(example_spec(1))
    d = Discretization(p, coarse_mesh(p))
    v = d.U.zero()
    assert hminus1_residual(v, p, d.VC) == 0
    assert reduced_functional(v, p, d.VC, d.VI) == 0


def brute_force(u_const, sol, nt=4000, nx=8000):
    dt, dx = 1 / nt, 2 / nx
    x = -0.25 + dx * (np.arange(nx) + 0.5)
    l2 = l1 = 0.0
    for i in range(0, nt, 250):
        t = dt * (np.arange(i, i + 250) + 0.5)
        T, X = np.meshgrid(t, x, indexing="ij")
        e = u_const - sol(T, X)
        l2 += np.sum(e ** 2) * dt * dx
        l1 += np.sum(np.abs(e)) * dt * dx
    return l2, l1


def test_error_norms_constant_against_brute_force():
    p = example_spec(1)
    sol = exact_solution(1)
    m = refine_uniform(coarse_mesh(p))
    u = FEField(make_space(m, 1), np.full(m.n_vertices, 3.0))
    l2, l1, l1sq = error_norms(u, sol)
    b2, b1 = brute_force(3.0, sol)
    assert l2 == pytest.approx(b2, rel=1e-4)
    assert l1 == pytest.approx(b1, rel=1e-4)
    assert l1sq == pytest.approx(l1 * l1)


def test_error_norms_interpolated_oracle_decrease():
    p = example_spec(2)
    sol = exact_solution(2)
    m = coarse_mesh(p)
    errs = []
    for _ in range(3):
        errs.append(error_norms(interpolate(make_space(m, 1), sol), sol)[0])
        m = refine_uniform(m)
    assert errs[0] > errs[1] > errs[2] > 0


def test_smooth_norms_quadratic_decay():
    p = example_spec(1)
    m = coarse_mesh(p)
    e = []
    for _ in range(3):
        e.append(smooth_error_norms(interpolate(make_space(m, 1), manufactured_solution), manufactured_solution)[0])
        m = refine_uniform(m)
    assert e[0] / e[1] > 12 and e[1] / e[2] > 14


def fake_report(level, h, M, l2):
    r = SolveReport(level, h, (None, None, None), M, 3)
    r.errors.update(l2sq=l2, l1sq=l2 / 2)
    return r


def test_build_table(tmp_path):
    single = build_table([fake_report(0, 0.5, 1.0, 0.1)])
    assert single.rows[0]["l2sq_rate"] is None and single.rows[0]["dMh"] is None
    assert single.rate("l2sq") is None
    t = build_table([fake_report(i, 0.5 / 2 ** i, -float(i), 0.1 / 2 ** i) for i in range(3)])
    assert t.rows[1]["l2sq_rate"] == pytest.approx(1.0)
    assert t.rate("l2sq") == pytest.approx(1.0)
    assert t.column("dMh") == [1.0, 1.0, None]
    t.write_csv(tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["level", "h", "l2sq", "l2sq_rate", "l1sq", "l1sq_rate", "Mh", "dMh", "iters"]
    assert isinstance(ConvergenceTable().rows, list)


def test_collision_point_from_interpolated_oracle():
    p = example_spec(3)
    sol = exact_solution(3)
    m = refine_uniform(refine_uniform(refine_uniform(coarse_mesh(p))))
    u = interpolate(make_space(m, 1), sol)
    tr = track_shocks(u)
    assert max(len(x) for x in tr.positions) == 2
    tc, xc = collision_point(u)
    ot, ox = sol.collision
    assert np.hypot(tc - ot, xc - ox) <= 2 * m.h
