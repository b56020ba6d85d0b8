import math

import numpy as np
import pytest

from rotafem.quadrature import MAX_ORDER, line_rule, quadrature_rule


def _exact_monomial(a, b):
    # integral of x^a y^b over the reference triangle
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("order", range(1, MAX_ORDER + 1))
def test_triangle_rule_exact(order):
    rule = quadrature_rule(order)
    x, y = rule.ref_points.T
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert np.all(rule.weights > 0)
    assert np.allclose(rule.points.sum(axis=1), 1.0)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            got = rule.weights @ (x ** a * y ** b)
            assert got == pytest.approx(_exact_monomial(a, b), rel=1e-12, abs=1e-15)


def test_triangle_rule_bounds():
    with pytest.raises(ValueError):
        quadrature_rule(0)
    with pytest.raises(ValueError):
        quadrature_rule(MAX_ORDER + 1)


def test_smooth_integrand():
    # int sin(pi x) sin(pi y) over the unit square split into two triangles is 4/pi^2
    rule = quadrature_rule(12)
    x, y = rule.ref_points.T
    lower = rule.weights @ (np.sin(np.pi * x) * np.sin(np.pi * y))
    assert 2 * lower == pytest.approx(4 / np.pi ** 2, rel=1e-8)


@pytest.mark.parametrize("order", range(1, 16))
def test_line_rule_exact(order):
    t, w = line_rule(order)
    for p in range(order + 1):
        assert w @ t ** p == pytest.approx(1 / (p + 1), rel=1e-13)
