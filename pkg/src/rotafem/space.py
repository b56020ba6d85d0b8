"""Lagrange finite-element spaces on triangles.

Continuous spaces of degree 1 or 2 (nodes at vertices and edge midpoints)
and discontinuous spaces of degree 0, 1 or 2, scalar or 2-vector valued,
optionally restricted to one subdomain.

Vector spaces use a component-blocked numbering: dof ``c * nscalar + i`` is
component ``c`` of scalar node ``i``; locally the first ``nloc`` basis
functions carry component 0.

2D differential operators:

* vector ``v``: ``curl v = d1 v2 - d2 v1`` (scalar), ``div v = d1 v1 + d2 v2``
* scalar ``t``: ``curl t = (d2 t, -d1 t)``
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import ELASTIC, PORO, WHOLE, Mesh
from .quadrature import quadrature_rule

CONTINUOUS = "CG"
DISCONTINUOUS = "DG"

_BARY_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_EDGE_PAIRS = [(1, 2), (2, 0), (0, 1)]


def num_local(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def reference_nodes(degree: int) -> np.ndarray:
    """Nodal points (x, y) of the reference Lagrange element."""
    if degree == 0:
        return np.array([[1 / 3, 1 / 3]])
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        return verts
    if degree == 2:
        mids = np.array([0.5 * (verts[a] + verts[b]) for a, b in _EDGE_PAIRS])
        return np.vstack([verts, mids])
    raise ValueError(f"unsupported degree {degree}")


def tabulate(degree: int, pts) -> tuple[np.ndarray, np.ndarray]:
    """Reference basis values (nq, nloc) and gradients (nq, nloc, 2)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - x - y, x, y], axis=1)
    nq = len(pts)
    if degree == 0:
        return np.ones((nq, 1)), np.zeros((nq, 1, 2))
    if degree == 1:
        return lam, np.broadcast_to(_BARY_GRAD, (nq, 3, 2)).copy()
    if degree == 2:
        vals = np.empty((nq, 6))
        grads = np.empty((nq, 6, 2))
        for i in range(3):
            vals[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
            grads[:, i] = (4 * lam[:, i] - 1)[:, None] * _BARY_GRAD[i]
        for k, (a, b) in enumerate(_EDGE_PAIRS):
            vals[:, 3 + k] = 4 * lam[:, a] * lam[:, b]
            grads[:, 3 + k] = 4 * (lam[:, a, None] * _BARY_GRAD[b] + lam[:, b, None] * _BARY_GRAD[a])
        return vals, grads
    raise ValueError(f"unsupported degree {degree}")


def reference_hessians(degree: int) -> np.ndarray:
    """Constant reference Hessians (nloc, 2, 2) of the basis (zero below degree 2)."""
    n = num_local(degree)
    hess = np.zeros((n, 2, 2))
    if degree == 2:
        G = _BARY_GRAD
        for i in range(3):
            hess[i] = 4 * np.outer(G[i], G[i])
        for k, (a, b) in enumerate(_EDGE_PAIRS):
            hess[3 + k] = 4 * (np.outer(G[a], G[b]) + np.outer(G[b], G[a]))
    return hess


class Geometry:
    """Affine cell maps ``x = x0 + J xi``, cached per mesh."""

    def __init__(self, mesh: Mesh):
        v = mesh.vertices[mesh.cells]
        self.x0 = v[:, 0]
        J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)  # (nc, 2, 2)
        self.J = J
        self.det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1]
        inv[:, 1, 1] = J[:, 0, 0]
        inv[:, 0, 1] = -J[:, 0, 1]
        inv[:, 1, 0] = -J[:, 1, 0]
        self.invJ = inv / self.det[:, None, None]
        self.area = 0.5 * np.abs(self.det)

    def physical(self, ref_pts) -> np.ndarray:
        """Physical coordinates (nc, nq, 2) of reference points."""
        ref_pts = np.asarray(ref_pts)
        return self.x0[:, None, :] + np.einsum("cxa,qa->cqx", self.J, ref_pts)

    def push_grad(self, ref_grads) -> np.ndarray:
        """Map reference gradients (nq, n, 2) to physical ones (nc, nq, n, 2)."""
        return np.einsum("qna,cax->cqnx", ref_grads, self.invJ)


_GEOMETRY_CACHE: dict[int, tuple[Mesh, Geometry]] = {}


def geometry(mesh: Mesh) -> Geometry:
    hit = _GEOMETRY_CACHE.get(id(mesh))
    if hit is not None and hit[0] is mesh:
        return hit[1]
    geo = Geometry(mesh)
    if len(_GEOMETRY_CACHE) > 16:
        _GEOMETRY_CACHE.clear()
    _GEOMETRY_CACHE[id(mesh)] = (mesh, geo)
    return geo


@dataclass(frozen=True, eq=False)
class Space:
    """Finite-element space with its degree-of-freedom map.

    ``cell_dofs`` has shape (nc, ncomp * nloc); rows of cells outside the
    restriction are -1.
    """

    mesh: Mesh
    family: str
    degree: int
    ncomp: int
    restriction: int
    cell_dofs: np.ndarray
    nscalar: int
    node_coords: np.ndarray  # (nscalar, 2), physical location of each scalar node

    @property
    def dof_count(self) -> int:
        return self.ncomp * self.nscalar

    @property
    def nloc(self) -> int:
        return num_local(self.degree)

    @cached_property
    def active_cells(self) -> np.ndarray:
        return np.flatnonzero(self.cell_dofs[:, 0] >= 0)

    @cached_property
    def active_mask(self) -> np.ndarray:
        return self.cell_dofs[:, 0] >= 0

    def __repr__(self):
        return (f"Space({self.family}{self.degree}, ncomp={self.ncomp}, "
                f"restriction={self.restriction}, dofs={self.dof_count})")


def _active(mesh: Mesh, restriction: int) -> np.ndarray:
    if restriction == WHOLE:
        return np.ones(mesh.num_cells, dtype=bool)
    if restriction not in (ELASTIC, PORO):
        raise ValueError(f"unknown restriction {restriction}")
    return mesh.cell_subdomain == restriction


def build_space(mesh: Mesh, family: str, degree: int, value_shape: int = 1,
                restriction: int = WHOLE) -> Space:
    """Build a Lagrange space and its dof map.

    Parameters
    ----------
    family : ``"CG"`` or ``"DG"``
    degree : 1 or 2 for CG, 0 to 2 for DG
    value_shape : 1 (scalar) or 2 (vector)
    restriction : subdomain tag, ``WHOLE`` for the full mesh
    """
    if family == CONTINUOUS and degree not in (1, 2):
        raise ValueError("continuous spaces need degree 1 or 2")
    if family == DISCONTINUOUS and degree not in (0, 1, 2):
        raise ValueError("discontinuous spaces need degree 0, 1 or 2")
    if family not in (CONTINUOUS, DISCONTINUOUS):
        raise ValueError(f"unknown family {family!r}")
    if value_shape not in (1, 2):
        raise ValueError("value_shape must be 1 or 2")
    active = _active(mesh, restriction)
    nloc = num_local(degree)
    geo = geometry(mesh)
    ref = reference_nodes(degree)

    if family == CONTINUOUS:
        nodes = mesh.cells.copy()
        if degree == 2:
            nodes = np.hstack([nodes, mesh.num_vertices + mesh.cell_edges])
        nnodes = mesh.num_vertices + (mesh.num_edges if degree == 2 else 0)
        used = np.zeros(nnodes, dtype=bool)
        used[nodes[active].ravel()] = True
        renum = np.full(nnodes, -1, dtype=np.int64)
        renum[used] = np.arange(used.sum())
        scalar = renum[nodes]
        nscalar = int(used.sum())
        coords = np.empty((nscalar, 2))
        phys = geo.physical(ref)
        coords[scalar[active].ravel()] = phys[active].reshape(-1, 2)
    else:
        nact = int(active.sum())
        scalar = np.full((mesh.num_cells, nloc), -1, dtype=np.int64)
        scalar[active] = np.arange(nact * nloc).reshape(nact, nloc)
        nscalar = nact * nloc
        coords = geo.physical(ref)[active].reshape(-1, 2)

    scalar[~active] = -1
    if value_shape == 2:
        dofs = np.hstack([scalar, np.where(scalar >= 0, scalar + nscalar, -1)])
    else:
        dofs = scalar
    return Space(mesh, family, degree, value_shape, restriction, dofs, nscalar, coords)


def boundary_nodes(space: Space) -> np.ndarray:
    """Scalar node indices of a continuous space located on the domain boundary."""
    from .mesh import BOUNDARY

    mesh = space.mesh
    if space.family != CONTINUOUS:
        raise ValueError("boundary nodes only exist for continuous spaces")
    bedges = np.flatnonzero(mesh.edge_class == BOUNDARY)
    cells = mesh.edge_cells[bedges, 0]
    local = np.argmax(mesh.cell_edges[cells] == bedges[:, None], axis=1)
    nodes = []
    scal = space.cell_dofs[:, :space.nloc]
    for k, (a, b) in enumerate(_EDGE_PAIRS):
        sel = local == k
        c = cells[sel]
        nodes.append(scal[c, a])
        nodes.append(scal[c, b])
        if space.degree == 2:
            nodes.append(scal[c, 3 + k])
    nodes = np.concatenate(nodes)
    return np.unique(nodes[nodes >= 0])


def eval_basis(space: Space, cell: int, reference_point):
    """Basis values and physical gradients of one cell at one reference point.

    Returns ``(values, grads)`` with shapes (ndof_local, ncomp) and
    (ndof_local, ncomp, 2).
    """
    vals, rgrads = tabulate(space.degree, np.atleast_2d(reference_point))
    geo = geometry(space.mesh)
    g = rgrads[0] @ geo.invJ[cell]  # (nloc, 2)
    n = space.nloc
    values = np.zeros((n * space.ncomp, space.ncomp))
    grads = np.zeros((n * space.ncomp, space.ncomp, 2))
    for c in range(space.ncomp):
        values[c * n:(c + 1) * n, c] = vals[0]
        grads[c * n:(c + 1) * n, c] = g
    return values, grads


def curl_vector(grads):
    """Scalar curl from vector gradients (..., 2, 2) indexed [comp, dir]."""
    return grads[..., 1, 0] - grads[..., 0, 1]


def div_vector(grads):
    return grads[..., 0, 0] + grads[..., 1, 1]


def curl_scalar(grad):
    """Vector curl (d2 t, -d1 t) of a scalar from its gradient (..., 2)."""
    return np.stack([grad[..., 1], -grad[..., 0]], axis=-1)


def local_coefficients(space: Space, coeffs) -> np.ndarray:
    """Per-cell coefficients (nc, ncomp, nloc); zero on inactive cells."""
    coeffs = np.asarray(coeffs, dtype=float)
    dofs = space.cell_dofs
    loc = np.where(dofs >= 0, coeffs[np.maximum(dofs, 0)], 0.0)
    return loc.reshape(len(dofs), space.ncomp, space.nloc)


def evaluate(space: Space, coeffs, ref_pts, derivatives: int = 1):
    """Values and physical derivatives of a discrete field at reference points.

    Returns a dict with ``"value"`` (nc, nq[, ncomp]), ``"grad"``
    (nc, nq[, ncomp], 2) and, when ``derivatives >= 2``, ``"hess"``
    (nc[, ncomp], 2, 2) which is constant per cell for degree <= 2.
    """
    ref_pts = np.atleast_2d(ref_pts)
    vals, rgrads = tabulate(space.degree, ref_pts)
    loc = local_coefficients(space, coeffs)
    geo = geometry(space.mesh)
    value = np.einsum("ckn,qn->cqk", loc, vals)
    out = {}
    if derivatives >= 1:
        rg = np.einsum("ckn,qna->cqka", loc, rgrads)
        out["grad"] = np.einsum("cqka,cax->cqkx", rg, geo.invJ)
    if derivatives >= 2:
        rh = np.einsum("ckn,nab->ckab", loc, reference_hessians(space.degree))
        out["hess"] = np.einsum("cya,ckab,cbx->ckyx", geo.invJ.transpose(0, 2, 1), rh, geo.invJ)
    if space.ncomp == 1:
        out["value"] = value[..., 0]
        if "grad" in out:
            out["grad"] = out["grad"][:, :, 0]
        if "hess" in out:
            out["hess"] = out["hess"][:, 0]
    else:
        out["value"] = value
    return out


def _call(func, x, ncomp):
    res = np.asarray(func(x[..., 0], x[..., 1]), dtype=float)
    if ncomp == 2:
        res = np.broadcast_to(res, (2,) + x.shape[:-1])
        return np.moveaxis(res, 0, -1)
    return np.broadcast_to(res, x.shape[:-1])


def interpolate(space: Space, func) -> np.ndarray:
    """Nodal interpolation (continuous) or local L2 fit (discontinuous).

    ``func(x, y)`` returns an array shaped like ``x`` for scalar spaces or a
    pair of such arrays for vector spaces.
    """
    if space.family == DISCONTINUOUS:
        return project_onto(space, func)
    vals = _call(func, space.node_coords, space.ncomp)
    if space.ncomp == 2:
        return np.concatenate([vals[:, 0], vals[:, 1]])
    return np.array(vals, dtype=float)


def project_onto(space: Space, func, order: int = 10) -> np.ndarray:
    """Cell-wise L2 projection onto the local polynomials of ``space``.

    For a continuous space the result is not globally continuous; it returns
    per-cell coefficients of shape (nc, ncomp * nloc) instead of a global
    vector.  For discontinuous spaces a global coefficient vector is returned.
    """
    rule = quadrature_rule(order)
    vals, _ = tabulate(space.degree, rule.ref_points)
    geo = geometry(space.mesh)
    x = geo.physical(rule.ref_points)
    fx = _call(func, x, space.ncomp)  # (nc, nq[, 2])
    if space.ncomp == 1:
        fx = fx[..., None]
    mass = np.einsum("q,qi,qj->ij", rule.weights, vals, vals)
    rhs = np.einsum("q,qi,cqk->cki", rule.weights, vals, fx)  # |det| cancels
    local = np.linalg.solve(mass, rhs.reshape(-1, space.nloc).T).T
    local = local.reshape(len(x), space.ncomp * space.nloc)
    if space.family == CONTINUOUS:
        return local
    out = np.zeros(space.dof_count)
    act = space.active_mask
    out[space.cell_dofs[act].ravel()] = local[act].ravel()
    return out


def l2_norm_cellwise(space: Space, coeffs, func=None, order: int = 10) -> np.ndarray:
    """Per-cell squared L2 norm of ``func - u_h`` (or of ``u_h`` if no func)."""
    rule = quadrature_rule(order)
    geo = geometry(space.mesh)
    uh = evaluate(space, coeffs, rule.ref_points, derivatives=0)["value"]
    diff = -uh
    if func is not None:
        fx = _call(func, geo.physical(rule.ref_points), space.ncomp)
        diff = fx - uh
    sq = diff ** 2 if space.ncomp == 1 else (diff ** 2).sum(axis=-1)
    return 2 * geo.area * (sq @ rule.weights)


def to_reference(mesh: Mesh, cells, points) -> np.ndarray:
    """Reference coordinates of physical ``points`` (n, nq, 2) in ``cells`` (n,)."""
    geo = geometry(mesh)
    d = np.asarray(points) - geo.x0[cells][:, None, :]
    return np.einsum("nax,nqx->nqa", geo.invJ[cells], d)


def basis_at(space: Space, cells, points):
    """Scalar basis values (n, nq, nloc) and physical gradients (n, nq, nloc, 2)
    of the given cells at physical points (n, nq, 2)."""
    ref = to_reference(space.mesh, cells, points)
    n, nq = ref.shape[:2]
    vals, rgrads = tabulate(space.degree, ref.reshape(-1, 2))
    vals = vals.reshape(n, nq, -1)
    rgrads = rgrads.reshape(n, nq, -1, 2)
    grads = np.einsum("nqja,nax->nqjx", rgrads, geometry(space.mesh).invJ[cells])
    return vals, grads


def evaluate_at(space: Space, coeffs, cells, points):
    """Values (n, nq[, ncomp]) and gradients (n, nq[, ncomp], 2) of a field
    restricted to ``cells`` at physical points (n, nq, 2)."""
    vals, grads = basis_at(space, cells, points)
    loc = local_coefficients(space, coeffs)[cells]  # (n, ncomp, nloc)
    value = np.einsum("nkj,nqj->nqk", loc, vals)
    grad = np.einsum("nkj,nqjx->nqkx", loc, grads)
    if space.ncomp == 1:
        return value[..., 0], grad[..., 0, :]
    return value, grad
