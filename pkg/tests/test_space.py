import numpy as np
import pytest

from rotafem.mesh import build_l_shape, build_unit_square, refine_uniform
from rotafem.quadrature import quadrature_rule
from rotafem.space import (CONTINUOUS, DISCONTINUOUS, boundary_nodes, build_space,
                           evaluate, evaluate_at, interpolate, l2_norm_cellwise,
                           project_onto, reference_nodes, tabulate)


@pytest.mark.parametrize("degree", [0, 1, 2])
def test_partition_of_unity_and_kronecker(degree):
    pts = np.random.default_rng(0).random((20, 2)) * 0.5
    vals, grads = tabulate(degree, pts)
    assert np.allclose(vals.sum(axis=1), 1.0)
    assert np.allclose(grads.sum(axis=1), 0.0)
    nodal, _ = tabulate(degree, reference_nodes(degree))
    assert np.allclose(nodal, np.eye(len(nodal)))


def test_dof_counts():
    m = build_unit_square(4)
    nv, ne, nc = m.num_vertices, m.num_edges, m.num_cells
    assert build_space(m, CONTINUOUS, 1).dof_count == nv
    assert build_space(m, CONTINUOUS, 2, 2).dof_count == 2 * (nv + ne)
    assert build_space(m, DISCONTINUOUS, 0).dof_count == nc
    assert build_space(m, DISCONTINUOUS, 1).dof_count == 3 * nc


def test_restricted_space_counts():
    from rotafem.mesh import PORO
    m = build_unit_square(4, "horizontal")
    V = build_space(m, CONTINUOUS, 1, 1, PORO)
    # vertices with y <= 1/2
    assert V.dof_count == 15
    assert np.all(V.node_coords[:, 1] <= 0.5 + 1e-14)


@pytest.mark.parametrize("degree", [1, 2])
def test_polynomial_reproduction(degree):
    m = refine_uniform(build_l_shape(1), 2)
    V = build_space(m, CONTINUOUS, degree)
    f = (lambda x, y: 1 + 2 * x - y) if degree == 1 else (lambda x, y: x * y - y * y + x)
    c = interpolate(V, f)
    rule = quadrature_rule(4)
    assert l2_norm_cellwise(V, c, f).sum() < 1e-28
    out = evaluate(V, c, rule.ref_points)
    assert out["value"].shape == (m.num_cells, len(rule))


def test_curl_of_rotation_field():
    m = build_unit_square(3)
    V = build_space(m, CONTINUOUS, 2, 2)
    c = interpolate(V, lambda x, y: (-y, x))
    g = evaluate(V, c, quadrature_rule(2).ref_points)["grad"]
    curl = g[..., 1, 0] - g[..., 0, 1]
    div = g[..., 0, 0] + g[..., 1, 1]
    assert np.allclose(curl, 2.0)
    assert np.allclose(div, 0.0)


def test_dg_projection_is_exact_on_polynomials_and_orthogonal():
    m = build_unit_square(3)
    W = build_space(m, DISCONTINUOUS, 1)
    c = project_onto(W, lambda x, y: 3 * x - y)
    assert l2_norm_cellwise(W, c, lambda x, y: 3 * x - y).sum() < 1e-28
    P0 = build_space(m, DISCONTINUOUS, 0)
    c0 = project_onto(P0, lambda x, y: x * x)
    # cell mean of x^2 over a triangle is (sum x_i^2 + (sum x_i)^2) / 12
    vals = evaluate(P0, c0, quadrature_rule(1).ref_points, derivatives=0)["value"][:, 0]
    x = m.vertices[m.cells][..., 0]
    assert np.allclose(vals, ((x * x).sum(axis=1) + x.sum(axis=1) ** 2) / 12)


def test_boundary_nodes():
    m = build_unit_square(2)
    V = build_space(m, CONTINUOUS, 2)
    b = boundary_nodes(V)
    assert len(b) == 16
    xy = V.node_coords[b]
    on = np.isclose(xy, 0).any(axis=1) | np.isclose(xy, 1).any(axis=1)
    assert np.all(on)
    with pytest.raises(ValueError):
        boundary_nodes(build_space(m, DISCONTINUOUS, 1))


def test_evaluate_at_physical_points():
    m = build_unit_square(2)
    V = build_space(m, CONTINUOUS, 2)
    c = interpolate(V, lambda x, y: x * x + y)
    cells = np.arange(m.num_cells)
    pts = m.centroids()[:, None, :]
    val, grad = evaluate_at(V, c, cells, pts)
    x, y = pts[..., 0], pts[..., 1]
    assert np.allclose(val, x * x + y)
    assert np.allclose(grad[..., 0], 2 * x)
    assert np.allclose(grad[..., 1], 1.0)


def test_bad_space_arguments():
    m = build_unit_square(1)
    with pytest.raises(ValueError):
        build_space(m, CONTINUOUS, 0)
    with pytest.raises(ValueError):
        build_space(m, "RT", 1)
