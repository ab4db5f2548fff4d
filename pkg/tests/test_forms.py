import numpy as np
import pytest
from scipy.integrate import quad

from lsbalance.diagnostics import data_potential, eval_F
from lsbalance.forms import Discretization, MeshMismatch, eval_Fhat, pack, stiffness
from lsbalance.linalg import cholesky_solve
from lsbalance.mesh import build_structured, refine_uniform
from lsbalance.problems import (ProblemSpec, burgers_flux, burgers_flux_deriv, example_spec, inflow_split,
                                linear_spec, zero_data)
from lsbalance.quadrature import quadrature_rule
from lsbalance.solver import coarse_mesh
from lsbalance.spaces import FEField, element_geometry, interpolate

UNIT = (0.0, 1.0, 0.0, 1.0)


def unit_problem(source, inflow):
    return ProblemSpec(name="unit", flux=burgers_flux, flux_deriv=burgers_flux_deriv, source=source,
                       inflow=inflow, rect=UNIT, split=inflow_split(UNIT), coarse=(4, 4))


def zeros(t, x):
    return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)


def ones(t, x):
    return np.ones(np.broadcast(np.asarray(t), np.asarray(x)).shape)


def random_triple(disc, rng, scale=1.0, mean=2.0):
    U, VC, VI = disc.spaces
    u = FEField(U, mean + scale * rng.normal(size=U.ndofs))
    q = interpolate(VC, lambda t, x: scale * rng.normal(size=np.shape(t)))
    psi = interpolate(VI, lambda t, x: scale * rng.normal(size=np.shape(t)))
    return u, q, psi


@pytest.fixture(scope="module")
def ex1():
    p = example_spec(1)
    return Discretization(p, coarse_mesh(p))


def test_ld_zero_data():
    d = Discretization(unit_problem(zeros, zeros), build_structured(4, 4, UNIT))
    assert np.all(d.ell.values == 0)


def test_ld_hat_functions():
    d = Discretization(unit_problem(ones, zeros), build_structured(8, 8, UNIT))
    V = d.VC.dof_coords
    interior = np.all((V > 1e-12) & (V < 1 - 1e-12), axis=1)
    assert np.allclose(d.ell.values[interior], (1 / 8) ** 2, rtol=1e-13)
    assert np.all(d.ell.values[d.VC.constrained] == 0)


def test_ld_example1_against_closed_form(ex1):
    """l applied to the P1 function that is 1 at every free dof.

    That function is 1 except on the one-cell strip next to t = 1 and
    x = 1.75 where it ramps linearly to 0, so the volume term and the
    inflow term can be written down piece by piece.
    """
    h = 1 / 16
    vol = 1 * 0.25 + 2 * 1.75                       # integral of r over the rectangle
    vol -= 1 * 0.25 * h / 2 + 2 * (1.75 - h) * h / 2  # strip along t = 1
    vol -= 2 * (1 - h) * h / 2                      # strip along x = 1.75
    vol -= 2 * (2 * h * h / 3)                      # corner cell
    bottom = 3 * 0.25 + 1 * (1.75 - h) + 1 * h / 2  # -<f(g).n> on t = 0, n = (-1, 0)
    left = ((3 + 1 - h) ** 3 - 27) / 6 + quad(lambda t: (3 + t) ** 2 / 2 * (1 - t) / h, 1 - h, 1)[0]
    assert ex1.ell.values.sum() == pytest.approx(vol + bottom + left, rel=1e-12)


def test_source_jump_must_be_grid_line():
    p = example_spec(1)
    with pytest.raises(ValueError):
        Discretization(p, build_structured(2, 4, p.rect))


def test_Fhat_zero():
    p = zero_data(example_spec(1))
    d = Discretization(p, coarse_mesh(p))
    assert d.Fhat(*(S.zero() for S in d.spaces)) == 0.0


def test_Fhat_mesh_mismatch(ex1):
    other = Discretization(ex1.prob, refine_uniform(ex1.mesh))
    u, q, psi = (S.zero() for S in ex1.spaces)
    with pytest.raises(MeshMismatch):
        eval_Fhat(u, other.VC.zero(), psi, ex1.ell, ex1.prob, ex1.h)


@pytest.mark.parametrize("eta", [None, 1.0])
def test_shifted_functional_identity(ex1, eta):
    d = Discretization(ex1.prob, ex1.mesh, eta=eta)
    rng = np.random.default_rng(5)
    for _ in range(3):
        u, q, psi = random_triple(d, rng)
        qs = data_potential(d.ell)
        gs = qs.coefficients[d.VC.free]
        shift = gs @ (stiffness(d.VC) @ gs)
        assert d.Fhat(u, q, psi) + shift == pytest.approx(eval_F(d, u, q, psi), rel=1e-10)


@pytest.mark.parametrize("order_v,eta", [(1, None), (2, None), (1, 1.0)])
def test_directional_derivative(order_v, eta):
    p = example_spec(3)
    d = Discretization(p, coarse_mesh(p), order_v=order_v, eta=eta)
    rng = np.random.default_rng(6)
    x0 = random_triple(d, rng)
    dirn = random_triple(d, rng, scale=1.0, mean=0.0)
    S = d.gn_system(*x0)
    A = S.A
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    tau = 1e-5
    Fp = d.Fhat(*(a + tau * b for a, b in zip(x0, dirn)))
    Fm = d.Fhat(*(a - tau * b for a, b in zip(x0, dirn)))
    fd = (Fp - Fm) / (2 * tau)
    exact = -2.0 * S.b @ pack(*dirn)
    assert fd == pytest.approx(exact, rel=1e-5)


def test_zero_data_gives_zero_rhs():
    p = zero_data(example_spec(1))
    d = Discretization(p, coarse_mesh(p))
    S = d.gn_system(*(X.zero() for X in d.spaces))
    assert np.all(S.b == 0)
    assert np.all(cholesky_solve(S.upper, S.b, upper=True) == 0)


def test_linear_flux_one_step():
    p = linear_spec(0.5)
    d = Discretization(p, coarse_mesh(p))
    x = tuple(X.zero() for X in d.spaces)
    S = d.gn_system(*x)
    x = tuple(a + b for a, b in zip(x, S.unpack(cholesky_solve(S.upper, S.b, upper=True))))
    S2 = d.gn_system(*x)
    step = cholesky_solve(S2.upper, S2.b, upper=True)
    assert np.linalg.norm(step) <= 1e-10 * max(1.0, np.linalg.norm(pack(*x)))


def _norms(d, u, q, psi):
    rule = quadrature_rule(d.degree)
    det, _, _, _ = element_geometry(d.mesh)
    w = det[:, None] * rule.weights
    f1, f2 = d.prob.flux(u.at_quadrature(rule))
    nf = np.sum(w * (f1 ** 2 + f2 ** 2))
    gq, gp = q.grad_at_quadrature(rule), psi.grad_at_quadrature(rule)
    return nf, np.sum(w * (gq ** 2).sum(-1)), np.sum(w * (gp ** 2).sum(-1))


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.01])
def test_regularized_coercivity_bounds(eps):
    p = zero_data(example_spec(1))
    d = Discretization(p, build_structured(4, 8, p.rect), augment=False)
    rng = np.random.default_rng(7)
    for _ in range(200):
        scale = 10.0 ** rng.uniform(-2, 1)
        u, q, psi = random_triple(d, rng, scale=scale, mean=rng.normal())
        F = eval_Fhat(u, q, psi, d.ell, p, d.h, augment=False, eps=eps)
        nf, nq, npsi = _norms(d, u, q, psi)
        lower = eps ** 2 * (nf / (2 + 3 * eps ** 2) + npsi / 2) + nq / 3
        upper = 3 * (nf + nq) + (2 + eps ** 2) * npsi
        assert lower <= F * (1 + 1e-12) and F <= upper * (1 + 1e-12)


def test_gn_matrix_positive_definite(ex1):
    x = random_triple(ex1, np.random.default_rng(8))
    S = ex1.gn_system(*x)
    assert np.all(S.upper.diagonal() > 0)
    cholesky_solve(S.upper, S.b, upper=True)
