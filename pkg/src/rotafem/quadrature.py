"""Quadrature on the reference triangle and on the unit interval.

The reference triangle has vertices (0,0), (1,0), (0,1) and area 1/2.
Orders 1, 2, 4 and 5 use classical symmetric rules; other orders fall back
to a collapsed Gauss-Jacobi product rule, which is exact for the requested
total degree and has positive weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_ORDER = 12


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates and weights summing to 1/2."""

    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)

    @property
    def ref_points(self) -> np.ndarray:
        """Cartesian reference coordinates (x, y) = (l1, l2)."""
        return self.points[:, 1:]

    def __len__(self):
        return len(self.weights)


def _orbit_3(a, w):
    b = 1.0 - 2.0 * a
    pts = [(a, a, b), (a, b, a), (b, a, a)]
    return pts, [w] * 3


def _symmetric(order):
    if order == 1:
        return [(1 / 3, 1 / 3, 1 / 3)], [0.5]
    if order == 2:
        return _orbit_3(1 / 6, 1 / 6)
    if order == 4:
        p1, w1 = _orbit_3(0.445948490915965, 0.223381589678011 / 2)
        p2, w2 = _orbit_3(0.091576213509771, 0.109951743655322 / 2)
        return p1 + p2, w1 + w2
    if order == 5:
        p1, w1 = _orbit_3(0.470142064105115, 0.132394152788506 / 2)
        p2, w2 = _orbit_3(0.101286507323456, 0.125939180544827 / 2)
        return [(1 / 3, 1 / 3, 1 / 3)] + p1 + p2, [0.225 / 2] + w1 + w2
    return None


def _collapsed(order):
    n = (order + 2) // 2
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (1.0 + xj)
    t = 0.5 * (1.0 + xl)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(wj / 4.0, wl / 2.0)
    x = S.ravel()
    y = (T * (1.0 - S)).ravel()
    pts = np.stack([1.0 - x - y, x, y], axis=1)
    return pts, W.ravel()


@lru_cache(maxsize=None)
def quadrature_rule(order: int) -> QuadratureRule:
    """Triangle rule exact for polynomials of total degree ``order``."""
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"quadrature order must lie in [1, {MAX_ORDER}], got {order}")
    sym = _symmetric(order)
    if sym is not None:
        pts, w = np.array(sym[0], dtype=float), np.array(sym[1], dtype=float)
    else:
        pts, w = _collapsed(order)
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w)


@lru_cache(maxsize=None)
def line_rule(order: int):
    """Gauss-Legendre rule on [0, 1]: (parameters, weights summing to 1)."""
    n = max(1, (order + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    t, w = 0.5 * (x + 1.0), 0.5 * w
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w
