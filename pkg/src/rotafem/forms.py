"""Assembly of the stabilized mixed systems for the three problems.

All systems are assembled symmetric (the fluid-pressure rows of the Biot
equations are multiplied by -1), with the following row conventions.

Elasticity, unknowns (u, omega, p)::

    -sqrt(mu) (omega, curl v) + (p, div v)            = -(f, v)
    -sqrt(mu) (theta, curl u) + (omega, theta)         = 0
     (q, div u) + (p, q)/(2 mu + lam) + S(p, q)        = 0

Biot, unknowns (u, omega, phi, p)::

    -sqrt(mu) (omega, curl v) + (phi, div v)           = -(f, v)
    -sqrt(mu) (theta, curl u) + (omega, theta)         = 0
     (psi, div u) + (phi - alpha p, psi)/(2 mu + lam) + S(phi, psi) = 0
    -alpha (phi, q)/(2 mu + lam) + c (p, q) + (kappa/xi)(grad p, grad q)
        = (s, q) + (rho/xi)(kappa g, grad q) + <g_N, q>

with ``c = c0 + alpha^2/(2 mu + lam)`` and the jump penalty
``S(p, q) = sum_e (h_e/mu) <[p], [q]>_e`` over interior edges.

The interface problem couples an elastic block on the elastic cells with a
Biot block on the poroelastic cells through the shared displacement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp

from .mesh import BOUNDARY, ELASTIC, INTERFACE, INTERIOR, PORO, WHOLE, Mesh
from .quadrature import line_rule, quadrature_rule
from .space import (CONTINUOUS, DISCONTINUOUS, Space, basis_at, boundary_nodes, build_space,
                    geometry, interpolate, tabulate)

ELASTICITY = "elasticity"
BIOT = "biot"
TRANSMISSION = "interface"
PROBLEMS = (ELASTICITY, BIOT, TRANSMISSION)

DATA_ORDER = 10


class AssemblyError(ValueError):
    """Inconsistent mesh, spaces or parameters."""


def lame_from_young(E: float, nu: float) -> tuple[float, float]:
    """Lamé pair (mu, lam) from Young modulus and Poisson ratio."""
    if not -1 < nu < 0.5:
        raise AssemblyError(f"Poisson ratio {nu} outside (-1, 1/2)")
    return E / (2 * (1 + nu)), E * nu / ((1 + nu) * (1 - 2 * nu))


@dataclass(frozen=True)
class ProblemParams:
    """Physical and discretization parameters.

    ``E``/``nu`` describe the elastic material (and the single material of
    the elasticity and Biot problems unless ``E_poro``/``nu_poro`` are set).
    ``lame`` and ``lame_poro`` override the Young/Poisson pairs when given.
    """

    E: float = 1.0
    nu: float = 0.25
    E_poro: float | None = None
    nu_poro: float | None = None
    lame: tuple[float, float] | None = None
    lame_poro: tuple[float, float] | None = None
    alpha: float = 1.0
    c0: float = 1.0
    kappa: float = 1.0
    xi: float = 1.0
    rho: float = 1.0
    gravity: tuple[float, float] = (0.0, 0.0)
    stabilized: bool = True

    def __post_init__(self):
        vals = [self.E, self.nu, self.alpha, self.c0, self.kappa, self.xi, self.rho, *self.gravity]
        for extra in (self.E_poro, self.nu_poro):
            if extra is not None:
                vals.append(extra)
        for pair in (self.lame, self.lame_poro):
            if pair is not None:
                vals.extend(pair)
        if not all(math.isfinite(v) for v in vals):
            raise AssemblyError("parameters must be finite")
        for sub in (ELASTIC, PORO):
            mu, lam = self.lame_of(sub)
            if mu <= 0 or lam < 0:
                raise AssemblyError(f"invalid Lamé pair mu={mu}, lam={lam}")
        if self.kappa <= 0 or self.xi <= 0 or self.c0 < 0:
            raise AssemblyError("need kappa > 0, xi > 0, c0 >= 0")
        if not 0 < self.alpha <= 1:
            raise AssemblyError("alpha must lie in (0, 1]")

    def lame_of(self, subdomain: int) -> tuple[float, float]:
        if subdomain == PORO:
            if self.lame_poro is not None:
                return self.lame_poro
            if self.E_poro is not None or self.nu_poro is not None:
                E = self.E if self.E_poro is None else self.E_poro
                nu = self.nu if self.nu_poro is None else self.nu_poro
                return lame_from_young(E, nu)
        if self.lame is not None:
            return self.lame
        return lame_from_young(self.E, self.nu)

    def storage(self, subdomain: int = PORO) -> float:
        """Effective storage ``c0 + alpha^2/(2 mu + lam)``."""
        mu, lam = self.lame_of(subdomain)
        return self.c0 + self.alpha ** 2 / (2 * mu + lam)

    def with_updates(self, **kw) -> "ProblemParams":
        return replace(self, **kw)


Vector = Callable[[np.ndarray, np.ndarray], tuple]
Scalar = Callable[[np.ndarray, np.ndarray], np.ndarray]
EdgeDatum = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ProblemData:
    """Loads and boundary data.

    ``f_elastic``/``f_poro`` are body loads ``(x, y) -> (fx, fy)``; for the
    single-material problems only the one matching the problem is used
    (``f_elastic`` for elasticity, ``f_poro`` for Biot).  ``flux(x, y, nx, ny)``
    is the prescribed fluid flux ``(kappa/xi)(grad p - rho g).n`` on the
    fluid boundary (outer boundary of the poroelastic region and, for the
    interface problem, the interface with ``n`` pointing out of the porous
    side).  ``traction_jump(x, y, nx, ny) -> (tx, ty)`` is a prescribed jump
    of the normal stress across the interface.  ``displacement`` gives
    Dirichlet values on the boundary (zero when omitted).
    """

    f_elastic: Vector | None = None
    f_poro: Vector | None = None
    source: Scalar | None = None
    flux: EdgeDatum | None = None
    traction_jump: EdgeDatum | None = None
    displacement: Vector | None = None


@dataclass(frozen=True, eq=False)
class Layout:
    """Named fields of one problem with their spaces and global offsets."""

    kind: str
    k: int
    mesh: Mesh
    names: tuple[str, ...]
    spaces: dict = field(repr=False)

    @property
    def offsets(self) -> dict:
        out, pos = {}, 0
        for name in self.names:
            out[name] = pos
            pos += self.spaces[name].dof_count
        return out

    @property
    def ndofs(self) -> int:
        return sum(self.spaces[n].dof_count for n in self.names)

    def slice(self, name: str) -> slice:
        start = self.offsets[name]
        return slice(start, start + self.spaces[name].dof_count)

    def dofs(self, name: str) -> np.ndarray:
        """Global cell-dof table of a field (-1 outside its restriction)."""
        cd = self.spaces[name].cell_dofs
        return np.where(cd >= 0, cd + self.offsets[name], -1)

    def partition(self) -> dict:
        return {n: (self.slice(n).start, self.slice(n).stop) for n in self.names}


def build_layout(mesh: Mesh, kind: str, k: int) -> Layout:
    """Spaces of the mixed method of order ``k`` for one problem."""
    if kind not in PROBLEMS:
        raise AssemblyError(f"unknown problem {kind!r}")
    if k not in (0, 1):
        raise AssemblyError("k must be 0 or 1")
    V = build_space(mesh, CONTINUOUS, k + 1, 2)
    if kind == ELASTICITY:
        spaces = {"u": V, "omega": build_space(mesh, DISCONTINUOUS, k),
                  "p": build_space(mesh, DISCONTINUOUS, k)}
    elif kind == BIOT:
        spaces = {"u": V, "omega": build_space(mesh, DISCONTINUOUS, k),
                  "phi": build_space(mesh, DISCONTINUOUS, k),
                  "p": build_space(mesh, CONTINUOUS, k + 1)}
    else:
        if not mesh.partitioned or not np.any(mesh.edge_class == INTERFACE):
            raise AssemblyError("the interface problem needs a partitioned mesh")
        spaces = {"u": V,
                  "omega_E": build_space(mesh, DISCONTINUOUS, k, 1, ELASTIC),
                  "p_E": build_space(mesh, DISCONTINUOUS, k, 1, ELASTIC),
                  "omega_P": build_space(mesh, DISCONTINUOUS, k, 1, PORO),
                  "phi_P": build_space(mesh, DISCONTINUOUS, k, 1, PORO),
                  "p_P": build_space(mesh, CONTINUOUS, k + 1, 1, PORO)}
    return Layout(kind, k, mesh, tuple(spaces), spaces)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Sparse system ``A x = b`` with its field layout."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    layout: Layout
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def partition(self) -> dict:
        return self.layout.partition()


class _Triplets:
    def __init__(self, n):
        self.n = n
        self.rows, self.cols, self.vals = [], [], []
        self.rhs = np.zeros(n)

    def add(self, rows, cols, local):
        """Scatter local blocks (m, a, b) with row dofs (m, a) and col dofs (m, b)."""
        r = np.broadcast_to(rows[:, :, None], local.shape)
        c = np.broadcast_to(cols[:, None, :], local.shape)
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(local.ravel())

    def add_sym(self, rows, cols, local):
        """Add a block and its transpose (off-diagonal coupling)."""
        self.add(rows, cols, local)
        self.add(cols, rows, np.swapaxes(local, 1, 2))

    def add_rhs(self, rows, local):
        np.add.at(self.rhs, rows.ravel(), local.ravel())

    def matrix(self) -> sp.csr_matrix:
        if self.rows:
            r = np.concatenate(self.rows)
            c = np.concatenate(self.cols)
            v = np.concatenate(self.vals)
        else:
            r = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0)
        A = sp.coo_matrix((v, (r, c)), shape=(self.n, self.n)).tocsr()
        A.sum_duplicates()
        A.eliminate_zeros()
        A.sort_indices()
        return A


# -- reference tensors ---------------------------------------------------------

@lru_cache(maxsize=None)
def _ref_mass(da: int, db: int) -> np.ndarray:
    rule = quadrature_rule(max(1, da + db))
    va, _ = tabulate(da, rule.ref_points)
    vb, _ = tabulate(db, rule.ref_points)
    return np.einsum("q,qi,qj->ij", rule.weights, va, vb)


@lru_cache(maxsize=None)
def _ref_value_grad(da: int, db: int) -> np.ndarray:
    """``G[i, j, a] = int psi_i d_a phi_j`` on the reference cell."""
    rule = quadrature_rule(max(1, da + db - 1))
    va, _ = tabulate(da, rule.ref_points)
    _, gb = tabulate(db, rule.ref_points)
    return np.einsum("q,qi,qja->ija", rule.weights, va, gb)


@lru_cache(maxsize=None)
def _ref_stiffness(d: int) -> np.ndarray:
    rule = quadrature_rule(max(1, 2 * d - 2))
    _, g = tabulate(d, rule.ref_points)
    return np.einsum("q,qia,qjb->ijab", rule.weights, g, g)


def _absdet(mesh, cells):
    return np.abs(geometry(mesh).det[cells])


def mass_blocks(mesh, cells, da, db, coef=1.0):
    """Local mass matrices ``int coef psi_i phi_j`` (m, na, nb)."""
    coef = np.broadcast_to(np.asarray(coef, dtype=float), cells.shape)
    return (coef * _absdet(mesh, cells))[:, None, None] * _ref_mass(da, db)[None]


def curl_div_blocks(mesh, cells, dq, du):
    """Local ``int q curl v`` and ``int q div v`` blocks for vector ``v``.

    Columns are ordered (component 0 basis, component 1 basis).
    """
    geo = geometry(mesh)
    G = np.einsum("ija,cax->cijx", _ref_value_grad(dq, du), geo.invJ[cells])
    G *= _absdet(mesh, cells)[:, None, None, None]
    curl = np.concatenate([-G[..., 1], G[..., 0]], axis=2)
    div = np.concatenate([G[..., 0], G[..., 1]], axis=2)
    return curl, div


def stiffness_blocks(mesh, cells, d, coef=1.0):
    geo = geometry(mesh)
    inv = geo.invJ[cells]
    metric = np.einsum("cax,cbx->cab", inv, inv)
    coef = np.broadcast_to(np.asarray(coef, dtype=float), cells.shape)
    return np.einsum("ijab,cab->cij", _ref_stiffness(d), metric) * (coef * _absdet(mesh, cells))[:, None, None]


def grad_load(mesh, cells, d, vec):
    """``int vec . grad q`` for a constant vector (m, nloc)."""
    geo = geometry(mesh)
    rule = quadrature_rule(max(1, d))
    _, g = tabulate(d, rule.ref_points)
    ig = np.einsum("q,qja->ja", rule.weights, g)
    phys = np.einsum("ja,cax->cjx", ig, geo.invJ[cells])
    return (phys @ np.asarray(vec, dtype=float)) * _absdet(mesh, cells)[:, None]


def load_blocks(mesh, cells, d, func, ncomp, order=DATA_ORDER):
    """``int func . v`` per cell (m, ncomp * nloc)."""
    geo = geometry(mesh)
    rule = quadrature_rule(order)
    vals, _ = tabulate(d, rule.ref_points)
    x = geo.physical(rule.ref_points)[cells]
    fx = np.asarray(func(x[..., 0], x[..., 1]), dtype=float)
    if ncomp == 1:
        fx = np.broadcast_to(fx, x.shape[:-1])[None]
    else:
        fx = np.broadcast_to(fx, (2,) + x.shape[:-1])
    loc = np.einsum("q,qj,kcq->ckj", rule.weights, vals, fx)
    loc *= _absdet(mesh, cells)[:, None, None]
    return loc.reshape(len(cells), -1)


# -- edge helpers --------------------------------------------------------------

def edge_points(mesh: Mesh, edges, order: int):
    """Quadrature points (ne, nq, 2) and weights (ne, nq) including edge length.

    Edges are parametrized from the lower to the higher global vertex index,
    so both incident cells see the same points.
    """
    t, w = line_rule(order)
    ev = mesh.edges[edges]
    a = mesh.vertices[ev[:, 0]]
    b = mesh.vertices[ev[:, 1]]
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    length = np.linalg.norm(b - a, axis=1)
    return pts, length[:, None] * w[None, :]


def outward_normals(mesh: Mesh, edges, cells) -> np.ndarray:
    """Unit normals of ``edges`` pointing out of ``cells``."""
    ev = mesh.edges[edges]
    a = mesh.vertices[ev[:, 0]]
    b = mesh.vertices[ev[:, 1]]
    t = b - a
    n = np.stack([t[:, 1], -t[:, 0]], axis=1) / np.linalg.norm(t, axis=1)[:, None]
    centroid = mesh.vertices[mesh.cells[cells]].mean(axis=1)
    flip = np.einsum("ex,ex->e", centroid - a, n) > 0
    n[flip] *= -1
    return n


def jump_penalty(layout: Layout, name: str, edges, weight_of_edge, T: _Triplets):
    """Add ``sum_e w_e <[p], [q]>_e`` for a discontinuous field."""
    mesh = layout.mesh
    space = layout.spaces[name]
    if len(edges) == 0:
        return
    pts, wq = edge_points(mesh, edges, 2 * space.degree + 1)
    wq = wq * weight_of_edge[:, None]
    K0, K1 = mesh.edge_cells[edges, 0], mesh.edge_cells[edges, 1]
    v0, _ = basis_at(space, K0, pts)
    v1, _ = basis_at(space, K1, pts)
    dofs = layout.dofs(name)
    for Ka, va, sa in ((K0, v0, 1.0), (K1, v1, -1.0)):
        for Kb, vb, sb in ((K0, v0, 1.0), (K1, v1, -1.0)):
            loc = sa * sb * np.einsum("eq,eqi,eqj->eij", wq, va, vb)
            T.add(dofs[Ka], dofs[Kb], loc)


def interior_edges_of(mesh: Mesh, subdomain: int) -> np.ndarray:
    """Interior edges whose two cells both lie in ``subdomain`` (any for WHOLE)."""
    e = np.flatnonzero(mesh.edge_class == INTERIOR)
    if subdomain == WHOLE:
        return e
    return e[mesh.cell_subdomain[mesh.edge_cells[e, 0]] == subdomain]


def fluid_boundary_edges(mesh: Mesh, poro_only: bool):
    """Boundary edges of the fluid domain with the fluid-side cell.

    For the interface problem these are the outer boundary edges of
    poroelastic cells plus the interface edges.
    """
    e = np.flatnonzero(mesh.edge_class == BOUNDARY)
    cells = mesh.edge_cells[e, 0]
    if not poro_only:
        return e, cells
    keep = mesh.cell_subdomain[cells] == PORO
    e, cells = e[keep], cells[keep]
    s = np.flatnonzero(mesh.edge_class == INTERFACE)
    c0, c1 = mesh.edge_cells[s, 0], mesh.edge_cells[s, 1]
    sc = np.where(mesh.cell_subdomain[c0] == PORO, c0, c1)
    return np.concatenate([e, s]), np.concatenate([cells, sc])


def interface_edges(mesh: Mesh):
    """Interface edges with their (poro, elastic) cells."""
    s = np.flatnonzero(mesh.edge_class == INTERFACE)
    c0, c1 = mesh.edge_cells[s, 0], mesh.edge_cells[s, 1]
    p0 = mesh.cell_subdomain[c0] == PORO
    return s, np.where(p0, c0, c1), np.where(p0, c1, c0)


def _edge_load(layout, name, edges, cells, func, ncomp, T, order):
    """Add ``int_e func(x, y, n) . v`` for edges seen from ``cells``."""
    if func is None or len(edges) == 0:
        return
    mesh = layout.mesh
    space = layout.spaces[name]
    pts, wq = edge_points(mesh, edges, order)
    n = outward_normals(mesh, edges, cells)
    nx = np.broadcast_to(n[:, 0:1], wq.shape)
    ny = np.broadcast_to(n[:, 1:2], wq.shape)
    val = np.asarray(func(pts[..., 0], pts[..., 1], nx, ny), dtype=float)
    vals, _ = basis_at(space, cells, pts)
    if ncomp == 1:
        loc = np.einsum("eq,eq,eqj->ej", wq, np.broadcast_to(val, wq.shape), vals)
    else:
        val = np.broadcast_to(val, (2,) + wq.shape)
        loc = np.einsum("eq,keq,eqj->ekj", wq, val, vals).reshape(len(edges), -1)
    T.add_rhs(layout.dofs(name)[cells], loc)


# -- block builders ------------------------------------------------------------

def _elastic_block(layout, T, cells, mu, lam, omega, press, stabilized, sub):
    """Rotation/pressure rows of an elastic region and their couplings with u."""
    mesh, k = layout.mesh, layout.k
    du = k + 1
    U = layout.dofs("u")[cells]
    W = layout.dofs(omega)[cells]
    P = layout.dofs(press)[cells]
    curl, div = curl_div_blocks(mesh, cells, k, du)
    T.add_sym(W, U, -math.sqrt(mu) * curl)
    T.add_sym(P, U, div)
    T.add(W, W, mass_blocks(mesh, cells, k, k))
    T.add(P, P, mass_blocks(mesh, cells, k, k, 1.0 / (2 * mu + lam)))
    if stabilized:
        edges = interior_edges_of(mesh, sub)
        jump_penalty(layout, press, edges, mesh.edge_lengths()[edges] / mu, T)


def _fluid_block(layout, T, cells, params, phi, press):
    mesh, k = layout.mesh, layout.k
    mu, lam = params.lame_of(PORO)
    Z = layout.dofs(phi)[cells]
    Q = layout.dofs(press)[cells]
    coupling = mass_blocks(mesh, cells, k, k + 1, -params.alpha / (2 * mu + lam))
    T.add_sym(Z, Q, coupling)
    T.add(Q, Q, mass_blocks(mesh, cells, k + 1, k + 1, params.storage(PORO)))
    T.add(Q, Q, stiffness_blocks(mesh, cells, k + 1, params.kappa / params.xi))


def _momentum_load(layout, T, cells, f):
    if f is None or len(cells) == 0:
        return
    loc = load_blocks(layout.mesh, cells, layout.k + 1, f, 2)
    T.add_rhs(layout.dofs("u")[cells], -loc)


def _fluid_load(layout, T, cells, params, data, press, poro_only):
    mesh, d = layout.mesh, layout.k + 1
    Q = layout.dofs(press)[cells]
    if data.source is not None:
        T.add_rhs(Q, load_blocks(mesh, cells, d, data.source, 1))
    g = np.asarray(params.gravity, dtype=float)
    if np.any(g != 0):
        T.add_rhs(Q, params.rho * params.kappa / params.xi * grad_load(mesh, cells, d, g))
    if data.flux is not None:
        edges, ecells = fluid_boundary_edges(mesh, poro_only)
        _edge_load(layout, press, edges, ecells, data.flux, 1, T, 2 * d + 4)


def assemble_elasticity(mesh: Mesh, layout: Layout, params: ProblemParams,
                        data: ProblemData, dirichlet: bool = True) -> LinearSystem:
    """Stabilized rotation-based elasticity system with clamped boundary."""
    _check(mesh, layout, ELASTICITY)
    T = _Triplets(layout.ndofs)
    cells = np.arange(mesh.num_cells)
    mu, lam = params.lame_of(ELASTIC)
    _elastic_block(layout, T, cells, mu, lam, "omega", "p", params.stabilized, WHOLE)
    _momentum_load(layout, T, cells, data.f_elastic)
    return _finish(T, layout, data, dirichlet)


def assemble_biot(mesh: Mesh, layout: Layout, params: ProblemParams,
                  data: ProblemData, dirichlet: bool = True) -> LinearSystem:
    """Stabilized rotation-based Biot system (total-pressure formulation)."""
    _check(mesh, layout, BIOT)
    T = _Triplets(layout.ndofs)
    cells = np.arange(mesh.num_cells)
    mu, lam = params.lame_of(PORO)
    _elastic_block(layout, T, cells, mu, lam, "omega", "phi", params.stabilized, WHOLE)
    _fluid_block(layout, T, cells, params, "phi", "p")
    _momentum_load(layout, T, cells, data.f_poro)
    _fluid_load(layout, T, cells, params, data, "p", poro_only=False)
    return _finish(T, layout, data, dirichlet)


def assemble_interface(mesh: Mesh, layout: Layout, params: ProblemParams,
                       data: ProblemData, dirichlet: bool = True) -> LinearSystem:
    """Coupled elasticity/poroelasticity system on a partitioned mesh."""
    _check(mesh, layout, TRANSMISSION)
    T = _Triplets(layout.ndofs)
    ecells = np.flatnonzero(mesh.cell_subdomain == ELASTIC)
    pcells = np.flatnonzero(mesh.cell_subdomain == PORO)
    muE, lamE = params.lame_of(ELASTIC)
    muP, lamP = params.lame_of(PORO)
    _elastic_block(layout, T, ecells, muE, lamE, "omega_E", "p_E", params.stabilized, ELASTIC)
    _elastic_block(layout, T, pcells, muP, lamP, "omega_P", "phi_P", params.stabilized, PORO)
    _fluid_block(layout, T, pcells, params, "phi_P", "p_P")
    _momentum_load(layout, T, ecells, data.f_elastic)
    _momentum_load(layout, T, pcells, data.f_poro)
    _fluid_load(layout, T, pcells, params, data, "p_P", poro_only=True)
    if data.traction_jump is not None:
        s, pc, _ = interface_edges(mesh)
        _edge_load(layout, "u", s, pc, data.traction_jump, 2, T, 2 * layout.k + 8)
    return _finish(T, layout, data, dirichlet)


ASSEMBLERS = {ELASTICITY: assemble_elasticity, BIOT: assemble_biot,
              TRANSMISSION: assemble_interface}


def assemble(kind: str, mesh: Mesh, layout: Layout, params: ProblemParams,
             data: ProblemData, dirichlet: bool = True) -> LinearSystem:
    return ASSEMBLERS[kind](mesh, layout, params, data, dirichlet)


def _check(mesh, layout, kind):
    if layout.kind != kind:
        raise AssemblyError(f"layout is for {layout.kind!r}, not {kind!r}")
    if layout.mesh is not mesh:
        raise AssemblyError("layout was built on a different mesh")


def _finish(T, layout, data, dirichlet):
    system = LinearSystem(T.matrix(), T.rhs, layout)
    if not dirichlet:
        return system
    V = layout.spaces["u"]
    nodes = boundary_nodes(V)
    dofs = np.concatenate([nodes, nodes + V.nscalar]) + layout.offsets["u"]
    if data.displacement is None:
        values = np.zeros(len(dofs))
    else:
        full = interpolate(V, data.displacement)
        values = np.concatenate([full[nodes], full[nodes + V.nscalar]])
    return apply_dirichlet(system, dofs, values)


def apply_dirichlet(system: LinearSystem, dofs, values) -> LinearSystem:
    """Symmetric elimination of prescribed dofs.

    Constrained rows and columns are replaced by the identity and the moved
    column couplings are subtracted from the right-hand side.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    A = system.matrix
    n = A.shape[0]
    g = np.zeros(n)
    g[dofs] = values
    mask = np.zeros(n, dtype=bool)
    mask[dofs] = True
    b = system.rhs - A @ g
    b[dofs] = values
    A = A.tocoo()
    keep = ~(mask[A.row] | mask[A.col])
    rows = np.concatenate([A.row[keep], dofs])
    cols = np.concatenate([A.col[keep], dofs])
    vals = np.concatenate([A.data[keep], np.ones(len(dofs))])
    M = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    constrained = np.union1d(system.constrained, dofs)
    return LinearSystem(M, b, system.layout, constrained)


def write_matrix_market(system: LinearSystem, path) -> None:
    """Dump the matrix (and rhs as ``<path>.rhs.mtx``) in MatrixMarket format."""
    path = str(path)
    scipy.io.mmwrite(path, system.matrix, comment="rotafem system matrix")
    scipy.io.mmwrite(path.removesuffix(".mtx") + ".rhs.mtx", system.rhs[:, None])
