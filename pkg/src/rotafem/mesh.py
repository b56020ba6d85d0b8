"""Conforming triangulations of the unit square and the L-shaped domain.

A :class:`Mesh` is an immutable bundle of numpy arrays.  Refinement
(:func:`bisect`) and smoothing (:func:`smooth`) return new meshes.

Subdomain tags
    ``WHOLE`` for single-physics meshes, ``ELASTIC`` / ``PORO`` for the
    transmission problem.

Edge classes
    ``INTERIOR``, ``BOUNDARY`` (one incident cell) and ``INTERFACE`` (two
    incident cells carrying different subdomain tags).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WHOLE, ELASTIC, PORO = 0, 1, 2
INTERIOR, BOUNDARY, INTERFACE = 0, 1, 2

SUBDOMAIN_NAMES = {WHOLE: "whole", ELASTIC: "elastic", PORO: "poro"}

# local edge i is opposite local vertex i
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming 2D triangulation.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3) int array, counterclockwise
    cell_subdomain : (nc,) int array of subdomain tags
    refinement_edge : (nc,) int array, local index of the bisection edge
    domain_area : float
        Area of the meshed domain, kept for conservation checks.
    edges, cell_edges, edge_cells, edge_class
        Derived connectivity, filled in by :meth:`from_cells`.
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_subdomain: np.ndarray
    refinement_edge: np.ndarray
    domain_area: float
    edges: np.ndarray = field(repr=False)
    cell_edges: np.ndarray = field(repr=False)
    edge_cells: np.ndarray = field(repr=False)
    edge_class: np.ndarray = field(repr=False)

    @classmethod
    def from_cells(cls, vertices, cells, cell_subdomain=None, refinement_edge=None,
                   domain_area=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.ascontiguousarray(cells, dtype=np.int64)
        nc = len(cells)
        if cell_subdomain is None:
            cell_subdomain = np.full(nc, WHOLE, dtype=np.int64)
        if refinement_edge is None:
            refinement_edge = longest_edge(vertices, cells)
        edges, cell_edges, edge_cells = _connectivity(cells, len(vertices))
        if domain_area is None:
            domain_area = float(signed_areas(vertices, cells).sum())
        mesh = cls(vertices, cells, np.asarray(cell_subdomain, dtype=np.int64),
                   np.asarray(refinement_edge, dtype=np.int64), float(domain_area),
                   edges, cell_edges, edge_cells, np.zeros(len(edges), dtype=np.int64))
        return classify_edges(mesh)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def partitioned(self) -> bool:
        return bool(np.any(self.cell_subdomain != WHOLE))

    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.cells)

    def cell_diameters(self) -> np.ndarray:
        lengths = self.edge_lengths()
        return lengths[self.cell_edges].max(axis=1)

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def h_max(self) -> float:
        return float(self.cell_diameters().max())

    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.edge_class == BOUNDARY])

    def interface_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.edge_class == INTERFACE])

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(np.asarray(vertices, dtype=float), self.cells, self.cell_subdomain,
                    self.refinement_edge, self.domain_area, self.edges,
                    self.cell_edges, self.edge_cells, self.edge_class)


def signed_areas(vertices, cells):
    p0, p1, p2 = (vertices[cells[:, i]] for i in range(3))
    d1, d2 = p1 - p0, p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def longest_edge(vertices, cells):
    lengths = np.empty((len(cells), 3))
    for i, (a, b) in enumerate(LOCAL_EDGES):
        d = vertices[cells[:, b]] - vertices[cells[:, a]]
        lengths[:, i] = np.hypot(d[:, 0], d[:, 1])
    return np.argmax(lengths, axis=1)


def _connectivity(cells, nv):
    nc = len(cells)
    pairs = np.stack([cells[:, LOCAL_EDGES[i]] for i in range(3)], axis=1)  # (nc,3,2)
    lo, hi = pairs.min(axis=2), pairs.max(axis=2)
    keys = (lo.astype(np.int64) * nv + hi).ravel()
    ukeys, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("edge shared by more than two cells")
    edges = np.stack([ukeys // nv, ukeys % nv], axis=1)
    cell_edges = inverse.reshape(nc, 3)
    edge_cells = np.full((len(ukeys), 2), -1, dtype=np.int64)
    owner = np.repeat(np.arange(nc), 3)
    order = np.argsort(inverse, kind="stable")
    sorted_edges = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_edges[1:] != sorted_edges[:-1]
    edge_cells[sorted_edges[first], 0] = owner[order[first]]
    edge_cells[sorted_edges[~first], 1] = owner[order[~first]]
    return edges, cell_edges, edge_cells


def classify_edges(mesh: Mesh) -> Mesh:
    """Tag every edge as interior, boundary or interface.

    Raises
    ------
    MeshError
        If an edge has no incident cell.
    """
    ec = mesh.edge_cells
    if np.any(ec[:, 0] < 0):
        raise MeshError("edge without incident cell")
    cls = np.full(len(ec), INTERIOR, dtype=np.int64)
    boundary = ec[:, 1] < 0
    cls[boundary] = BOUNDARY
    inner = ~boundary
    tags = mesh.cell_subdomain
    differs = np.zeros(len(ec), dtype=bool)
    differs[inner] = tags[ec[inner, 0]] != tags[ec[inner, 1]]
    cls[differs] = INTERFACE
    object.__setattr__(mesh, "edge_class", cls)
    return mesh


def cell_diameter(mesh: Mesh, cell: int) -> float:
    return float(mesh.edge_lengths()[mesh.cell_edges[cell]].max())


def edge_length(mesh: Mesh, edge: int) -> float:
    a, b = mesh.vertices[mesh.edges[edge]]
    return float(np.hypot(*(b - a)))


def _grid_cells(index, nx, ny, keep):
    """Two triangles per grid square, split bottom-left to top-right."""
    cells = []
    for j in range(ny):
        for i in range(nx):
            if not keep(i, j):
                continue
            a, b = index[j, i], index[j, i + 1]
            c, d = index[j + 1, i + 1], index[j + 1, i]
            cells.append((a, b, c))
            cells.append((a, c, d))
    return np.array(cells, dtype=np.int64)


def build_unit_square(n: int, partition: str | None = None) -> Mesh:
    """Structured mesh of (0,1)^2 with ``2 n^2`` right triangles.

    ``partition="horizontal"`` tags cells below ``y = 1/2`` as poroelastic and
    those above as elastic; ``n`` must then be even.
    """
    if n < 1:
        raise MeshError("n must be positive")
    if partition is not None and partition != "horizontal":
        raise MeshError(f"unknown partition {partition!r}")
    if partition and n % 2:
        raise MeshError("interface y=1/2 requires an even n")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    index = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    cells = _grid_cells(index, n, n, lambda i, j: True)
    tags = None
    if partition:
        cy = vertices[cells].mean(axis=1)[:, 1]
        tags = np.where(cy < 0.5, PORO, ELASTIC)
    return Mesh.from_cells(vertices, cells, tags, domain_area=1.0)


def build_l_shape(n: int, partition: str | None = None) -> Mesh:
    """Mesh of (-1,1)^2 minus [0,1)^2 with ``n`` subdivisions per unit length.

    ``partition="diagonal"`` places the interface on the segment from the
    reentrant corner (0,0) to (-1,-1); cells above it are poroelastic.
    """
    if n < 1:
        raise MeshError("n must be positive")
    if partition is not None and partition != "diagonal":
        raise MeshError(f"unknown partition {partition!r}")
    m = 2 * n
    xs = np.linspace(-1.0, 1.0, m + 1)
    X, Y = np.meshgrid(xs, xs)
    inside = ~((X > 1e-12) & (Y > 1e-12))
    index = np.full((m + 1, m + 1), -1, dtype=np.int64)
    index[inside] = np.arange(inside.sum())
    vertices = np.stack([X[inside], Y[inside]], axis=1)
    cells = _grid_cells(index, m, m, lambda i, j: not (i >= n and j >= n))
    tags = None
    if partition:
        c = vertices[cells].mean(axis=1)
        tags = np.where(c[:, 1] > c[:, 0], PORO, ELASTIC)
    return Mesh.from_cells(vertices, cells, tags, domain_area=3.0)


def bisect(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of ``marked`` cells plus conformity closure.

    Each cell is split through the midpoint of its refinement edge; the new
    vertex becomes the newest vertex of both children.  Cells that share a
    marked edge are refined until no hanging vertex remains.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray)
                                  else marked, dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.num_cells:
        raise MeshError("marked cell index out of range")

    # cyclic rotation so that the refinement edge is local edge 0
    rot = mesh.refinement_edge
    idx = (np.arange(3)[None, :] + rot[:, None]) % 3
    cells = np.take_along_axis(mesh.cells, idx, axis=1)
    cell_edges = np.take_along_axis(mesh.cell_edges, idx, axis=1)

    edge_marked = np.zeros(mesh.num_edges, dtype=bool)
    edge_marked[cell_edges[marked, 0]] = True
    while True:
        need = edge_marked[cell_edges].any(axis=1) & ~edge_marked[cell_edges[:, 0]]
        if not need.any():
            break
        edge_marked[cell_edges[need, 0]] = True

    nv = mesh.num_vertices
    new_ids = np.cumsum(edge_marked) - 1 + nv
    mid_of_edge = np.where(edge_marked, new_ids, -1)
    e = mesh.edges[edge_marked]
    vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])])
    midpoint = {}
    for k, (a, b) in zip(mid_of_edge[edge_marked], e):
        midpoint[(a, b)] = k
        midpoint[(b, a)] = k

    tags = mesh.cell_subdomain
    done_cells, done_tags = [], []
    work_cells, work_tags = cells, tags
    while len(work_cells):
        a = work_cells[:, 1]
        b = work_cells[:, 2]
        split = np.array([(x, y) in midpoint for x, y in zip(a, b)], dtype=bool)
        done_cells.append(work_cells[~split])
        done_tags.append(work_tags[~split])
        sc = work_cells[split]
        if len(sc) == 0:
            break
        m = np.array([midpoint[(x, y)] for x, y in zip(sc[:, 1], sc[:, 2])], dtype=np.int64)
        child1 = np.stack([m, sc[:, 0], sc[:, 1]], axis=1)
        child2 = np.stack([m, sc[:, 2], sc[:, 0]], axis=1)
        work_cells = np.vstack([child1, child2])
        work_tags = np.concatenate([work_tags[split], work_tags[split]])
    new_cells = np.vstack(done_cells)
    new_tags = np.concatenate(done_tags)
    return Mesh.from_cells(vertices, new_cells, new_tags,
                           refinement_edge=np.zeros(len(new_cells), dtype=np.int64),
                           domain_area=mesh.domain_area)


def refine_uniform(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = bisect(mesh, np.arange(mesh.num_cells))
    return mesh


def cell_quality(mesh: Mesh) -> np.ndarray:
    """Shape quality ``2 * inradius / diameter``; 1/sqrt(3) for equilateral cells."""
    lengths = mesh.edge_lengths()[mesh.cell_edges]
    area = np.abs(mesh.areas())
    inradius = 2.0 * area / lengths.sum(axis=1)
    return 2.0 * inradius / lengths.max(axis=1)


def smooth(mesh: Mesh, min_area_ratio: float = 0.1) -> Mesh:
    """One pass of Laplacian smoothing with a per-vertex area guard.

    Boundary and interface vertices never move.  A proposed move is dropped
    when it would shrink any incident cell below ``min_area_ratio`` of its
    current area (or invert it).
    """
    nv = mesh.num_vertices
    e = mesh.edges
    deg = np.bincount(e.ravel(), minlength=nv).astype(float)
    acc = np.zeros((nv, 2))
    np.add.at(acc, e[:, 0], mesh.vertices[e[:, 1]])
    np.add.at(acc, e[:, 1], mesh.vertices[e[:, 0]])
    target = acc / np.maximum(deg, 1.0)[:, None]

    movable = np.ones(nv, dtype=bool)
    movable[mesh.boundary_vertices()] = False
    movable[mesh.interface_vertices()] = False
    old_area = mesh.areas()
    while True:
        trial = np.where(movable[:, None], target, mesh.vertices)
        new_area = signed_areas(trial, mesh.cells)
        bad = new_area < min_area_ratio * old_area
        if not bad.any():
            break
        culprits = mesh.cells[bad].ravel()
        culprits = culprits[movable[culprits]]
        if culprits.size == 0:
            break
        movable[culprits] = False
    return mesh.with_vertices(np.where(movable[:, None], target, mesh.vertices))


def is_conforming(mesh: Mesh) -> bool:
    """Exhaustive scan for hanging vertices.

    A vertex lying in the relative interior of any edge means the
    triangulation is not conforming.
    """
    v = mesh.vertices
    a = v[mesh.edges[:, 0]]
    b = v[mesh.edges[:, 1]]
    d = b - a
    L2 = (d ** 2).sum(axis=1)
    tol = 1e-12
    # edges are processed in chunks to bound the size of the distance table
    for start in range(0, len(a), 2048):
        sl = slice(start, start + 2048)
        rel = v[None, :, :] - a[sl, None, :]
        t = (rel * d[sl, None, :]).sum(axis=2) / L2[sl, None]
        cross = rel[:, :, 0] * d[sl, None, 1] - rel[:, :, 1] * d[sl, None, 0]
        on_line = np.abs(cross) <= tol * np.sqrt(L2[sl, None])
        inside = (t > tol) & (t < 1 - tol)
        if np.any(on_line & inside):
            return False
    # every non-boundary edge needs exactly two cells
    return bool(np.all((mesh.edge_cells[:, 1] >= 0) | (mesh.edge_class == BOUNDARY)))


def write_vtk(mesh: Mesh, path, cell_data: dict | None = None) -> None:
    """Legacy ASCII VTK unstructured grid with integer tags as cell data."""
    lines = ["# vtk DataFile Version 3.0", "rotafem mesh", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.num_vertices} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {mesh.num_cells} {4 * mesh.num_cells}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.num_cells}")
    lines += ["5"] * mesh.num_cells
    lines.append(f"CELL_DATA {mesh.num_cells}")
    lines += ["SCALARS subdomain int 1", "LOOKUP_TABLE default"]
    lines += [str(int(t)) for t in mesh.cell_subdomain]
    for name, values in (cell_data or {}).items():
        values = np.asarray(values)
        kind = "int" if np.issubdtype(values.dtype, np.integer) else "double"
        lines += [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"]
        lines += [f"{x:.10g}" if kind == "double" else str(int(x)) for x in values]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
