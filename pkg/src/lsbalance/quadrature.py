"""Quadrature on the reference triangle (0,0), (1,0), (0,1) and on [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, 3) barycentric coordinates
    weights: np.ndarray  # (nq,), summing to 1/2
    degree: int

    @property
    def xy(self) -> np.ndarray:
        """Reference coordinates, i.e. barycentric components 1 and 2."""
        return self.points[:, 1:]


def _orbit_s21(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _orbit_s111(a: float, b: float) -> list[tuple[float, float, float]]:
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _symmetric(orbits) -> tuple[np.ndarray, np.ndarray]:
    pts, wts = [], []
    for w, pp in orbits:
        pts.extend(pp)
        wts.extend([w] * len(pp))
    return np.array(pts), 0.5 * np.array(wts)


# Strang-Fix / Dunavant rules, weights normalized to sum 1 before halving.
_TABLES = {
    1: lambda: _symmetric([(1.0, [(1 / 3, 1 / 3, 1 / 3)])]),
    2: lambda: _symmetric([(1 / 3, _orbit_s21(1 / 6))]),
    4: lambda: _symmetric([
        (0.223381589678011, _orbit_s21(0.445948490915965)),
        (0.109951743655322, _orbit_s21(0.091576213509771)),
    ]),
    5: lambda: _symmetric([
        (0.225, [(1 / 3, 1 / 3, 1 / 3)]),
        (0.132394152788506, _orbit_s21(0.470142064105115)),
        (0.125939180544827, _orbit_s21(0.101286507323456)),
    ]),
    6: lambda: _symmetric([
        (0.116786275726379, _orbit_s21(0.249286745170910)),
        (0.050844906370207, _orbit_s21(0.063089014491502)),
        (0.082851075618374, _orbit_s111(0.053145049844817, 0.310352451033784)),
    ]),
}


def _collapsed(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Conical product Gauss-Jacobi rule, exact to ``degree``."""
    n = degree // 2 + 1
    xa, wa = roots_jacobi(n, 1.0, 0.0)   # weight (1 - s)
    xb, wb = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (xa + 1.0)
    r = 0.5 * (xb + 1.0)
    S, R = np.meshgrid(s, r, indexing="ij")
    W = np.outer(wa, wb) / 8.0
    x = S.ravel()
    y = ((1.0 - S) * R).ravel()
    pts = np.stack([1.0 - x - y, x, y], axis=1)
    return pts, W.ravel()


@lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    """Positive-weight rule exact for polynomials of total degree ``degree``."""
    if degree < 1:
        raise ValueError("quadrature degree must be >= 1")
    if degree == 3:
        pts, w = _TABLES[4]()
        return QuadratureRule(pts, w, 4)
    if degree in _TABLES:
        pts, w = _TABLES[degree]()
        return QuadratureRule(pts, w, degree)
    if degree > 40:
        raise ValueError(f"no quadrature rule tabulated for degree {degree}")
    pts, w = _collapsed(degree)
    return QuadratureRule(pts, w, degree)


@lru_cache(maxsize=None)
def gauss_interval(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w
