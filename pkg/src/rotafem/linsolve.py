"""Direct sparse solution of the assembled systems."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import umfpack
from .forms import Layout, LinearSystem
from .space import DISCONTINUOUS

try:
    import pymetis
except ImportError:  # pragma: no cover - optional accelerator
    pymetis = None

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-13
RESIDUAL_TOL = 1e-10
# exact pivot inspection copies U; above this factor size only the residual guards
PIVOT_CHECK_NNZ = 40_000_000
BACKENDS = ("auto", "umfpack", "superlu")


class SolverError(RuntimeError):
    """Base class for linear solver failures."""


class SingularMatrixError(SolverError):
    def __init__(self, index: int, pivot: float):
        super().__init__(f"singular pivot {pivot:.3e} at dof {index}")
        self.index = index
        self.pivot = pivot


class ResidualError(SolverError):
    def __init__(self, residual: float):
        super().__init__(f"backward residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """Solution vector split into named fields."""

    layout: Layout
    vector: np.ndarray
    residual: float = 0.0
    fields: dict = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.vector) != self.layout.ndofs:
            raise ValueError("solution length does not match the layout")
        parts = {n: self.vector[self.layout.slice(n)] for n in self.layout.names}
        object.__setattr__(self, "fields", parts)

    @property
    def kind(self) -> str:
        return self.layout.kind

    def __getitem__(self, name):
        return self.fields[name]

    def space(self, name):
        return self.layout.spaces[name]


def backward_residual(A, x, b) -> float:
    """``|Ax - b|_inf / (|A|_inf |x|_inf + |b|_inf)`` (0 for a zero system)."""
    r = np.abs(A @ x - b).max(initial=0.0)
    scale = spla.norm(A, np.inf) * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0)
    return float(r / scale) if scale > 0 else float(r)


def _superlu_factor(A):
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularMatrixError(-1, 0.0) from exc
    _check_pivots(lu.U.diagonal(), lu.perm_c)
    return lu


def _check_pivots(udiag, perm):
    """Raise on the first pivot below ``PIVOT_TOL`` relative to the largest one."""
    diag = np.abs(udiag)
    scale = max(diag.max(initial=0.0), 1.0)
    bad = np.flatnonzero(~(diag > PIVOT_TOL * scale))
    if len(bad):
        i = int(bad[0])
        raise SingularMatrixError(int(perm[i]), float(diag[i]))


def _refined_solve(A, b, apply_inverse, refine_steps):
    x = apply_inverse(b)
    res = backward_residual(A, x, b)
    for _ in range(refine_steps):
        if res <= RESIDUAL_TOL * 1e-3:
            break
        x_new = x + apply_inverse(b - A @ x)
        res_new = backward_residual(A, x_new, b)
        if res_new >= res:
            break
        x, res = x_new, res_new
    if not np.all(np.isfinite(x)) or res > RESIDUAL_TOL:
        raise ResidualError(res)
    return x, res


def default_backend() -> str:
    """``ROTAFEM_SOLVER`` when set, else UMFPACK if a working library is present."""
    choice = os.environ.get("ROTAFEM_SOLVER", "auto").lower()
    if choice not in BACKENDS:
        raise ValueError(f"ROTAFEM_SOLVER must be one of {BACKENDS}")
    if choice == "auto":
        return "umfpack" if umfpack.available() else "superlu"
    return choice


def solve_sparse(A, b, refine_steps: int = 2, backend: str = "auto") -> tuple[np.ndarray, float]:
    """Sparse LU with partial pivoting, singularity check and residual check.

    ``backend`` is ``"umfpack"`` (system library), ``"superlu"`` (scipy,
    COLAMD ordering) or ``"auto"``.  Iterative refinement against ``A`` is
    applied until the backward residual stops improving.
    """
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    A = sp.csc_matrix(A)
    A.sort_indices()
    b = np.asarray(b, dtype=float)
    if backend == "auto":
        backend = default_backend()
    if backend == "umfpack":
        try:
            lu = umfpack.Factor(A)
        except umfpack.UmfpackError as exc:
            raise SolverError(str(exc)) from exc
        _check_pivots(lu.udiag, lu.colperm)
    else:
        lu = _superlu_factor(A)
    return _refined_solve(A, b, lu.solve, refine_steps)


def _block_inverse(N, block):
    """Sparse inverse of the block-diagonal part of ``N`` (blocks given by id)."""
    n = N.shape[0]
    order = np.argsort(block, kind="stable")
    sizes = np.bincount(block)
    starts = np.r_[0, np.cumsum(sizes)[:-1]]
    local = np.empty(n, dtype=np.int64)
    local[order] = np.arange(n) - np.repeat(starts, sizes)
    C = N.tocoo()
    keep = block[C.row] == block[C.col]
    rows, cols, vals = [], [], []
    for size in np.unique(sizes[sizes > 0]):
        ids = np.flatnonzero(sizes == size)
        slot = np.full(len(sizes), -1)
        slot[ids] = np.arange(len(ids))
        sel = keep & (slot[block[C.row]] >= 0)
        dense = np.zeros((len(ids), size, size))
        np.add.at(dense, (slot[block[C.row[sel]]], local[C.row[sel]], local[C.col[sel]]),
                  C.data[sel])
        inv = np.linalg.inv(dense)
        members = order[(starts[ids][:, None] + np.arange(size)).ravel()].reshape(len(ids), size)
        rows.append(np.repeat(members, size, axis=1).ravel())
        cols.append(np.tile(members, (1, size)).ravel())
        vals.append(inv.ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def _nested_dissection(K, groups):
    """METIS nested-dissection order of the dofs, computed on supervariables."""
    n = K.shape[0]
    ids, groups = np.unique(groups, return_inverse=True)
    S = sp.csr_matrix((np.ones(n), (groups, np.arange(n))), shape=(len(ids), n))
    pattern = K.copy()
    pattern.data = np.ones_like(pattern.data)
    graph = (S @ (pattern + pattern.T) @ S.T).tocsr()
    graph.setdiag(0)
    graph.eliminate_zeros()
    weights = np.bincount(groups).astype(np.int64)
    rank = np.empty(len(ids), dtype=np.int64)
    perm = np.asarray(pymetis.nested_dissection(
        pymetis.CSRAdjacency(graph.indptr, graph.indices), vweights=weights)[0])
    rank[perm] = np.arange(len(ids))
    return np.argsort(rank[groups], kind="stable")


@dataclass
class _QuasiDefinite:
    """Scaled congruence ``S T A T^T S`` of a saddle system and its bookkeeping."""

    matrix: sp.csr_matrix
    neg: np.ndarray
    pos: np.ndarray
    W: sp.csr_matrix
    scale: np.ndarray

    @property
    def order(self):
        return np.r_[self.neg, self.pos]

    def forward(self, r):
        """Right-hand side of the transformed system."""
        m = len(self.neg)
        z = r[self.order]
        z[:m] -= self.W.T @ z[m:]
        return z * self.scale

    def backward(self, y):
        """Map a transformed solution back to the original unknowns."""
        m = len(self.neg)
        y = y * self.scale
        x = np.empty_like(y)
        x[self.neg] = y[:m]
        x[self.pos] = y[m:] - self.W @ y[:m]
        return x


def quasi_definite(A, block) -> _QuasiDefinite | None:
    """Transform ``[[H, G^T], [G, N]]`` into a symmetric quasi-definite matrix.

    ``block[i]`` groups the dofs of discontinuous fields into small local
    blocks (one per field and cell) and is -1 for all other dofs.  The
    congruence is ``T = [[I, -G^T L], [0, I]]`` with ``L`` a block-Jacobi
    inverse of ``N``: exact for blocks without neighbours (which then
    decouple) and scaled by a block Gershgorin bound otherwise, so that the
    spectrum of ``L N`` lies in (0, 1].  With H negative semidefinite, N
    positive definite and G^T of full rank on the kernel of H, the result is
    negative definite on the first block and positive definite on the second.
    Returns None when the partition is empty or a diagonal entry vanishes.
    """
    block = np.asarray(block)
    pos = np.flatnonzero(block >= 0)
    neg = np.flatnonzero(block < 0)
    if len(pos) == 0 or len(neg) == 0:
        return None
    A = sp.csr_matrix(A)
    G = A[pos][:, neg]
    N = A[pos][:, pos].tocsr()
    bid = np.unique(block[pos], return_inverse=True)[1]
    C = N.tocoo()
    cross = bid[C.row] != bid[C.col]
    coupled = np.zeros(bid.max() + 1, dtype=bool)
    coupled[bid[C.row[cross]]] = True
    pairs = np.unique(np.c_[bid[C.row[cross]], bid[C.col[cross]]], axis=0)
    neighbours = np.bincount(pairs[:, 0], minlength=len(coupled)).max() if len(pairs) else 0
    theta = np.where(coupled[bid], 1.0 / (1 + neighbours), 1.0)
    W = (sp.diags(theta) @ _block_inverse(N, bid) @ G).tocsr()
    NW = N @ W
    K = sp.bmat([[A[neg][:, neg] - G.T @ W - W.T @ G + W.T @ NW, (G - NW).T],
                 [G - NW, N]], format="csr")
    del NW, G, N
    d = np.abs(K.diagonal())
    if not np.all(d > 0):
        return None
    s = 1.0 / np.sqrt(d)
    K = (sp.diags(s) @ K @ sp.diags(s)).tocsr()
    K.eliminate_zeros()
    return _QuasiDefinite(K, neg, pos, W, s)


def solve_saddle(A, b, block, groups=None, refine_steps: int = 2) -> tuple[np.ndarray, float]:
    """Solve a symmetric saddle-point system through its quasi-definite form.

    See :func:`quasi_definite` for ``block``.  The transformed matrix is
    factored with diagonal pivots in a nested-dissection order, which keeps
    the fill close to that of a Cholesky factorization.  ``groups``
    (optional) maps dofs to supervariables, such as all components at one
    node, and keeps the ordering step cheap.  Falls back to
    SuperLU :func:`solve_sparse` when METIS is unavailable or the transform
    does not apply.
    """
    qd = quasi_definite(A, block) if pymetis is not None else None
    if qd is None:
        return solve_sparse(A, b, refine_steps, backend="superlu")
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    order = qd.order
    nd = _nested_dissection(qd.matrix, np.arange(len(order)) if groups is None
                            else np.asarray(groups)[order])
    K = sp.csc_matrix(qd.matrix[nd][:, nd])
    qd.matrix = None
    try:
        lu = spla.splu(K, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise SingularMatrixError(-1, 0.0) from exc
    del K
    if lu.nnz <= PIVOT_CHECK_NNZ:
        _check_pivots(lu.U.diagonal(), order[nd])

    def apply_inverse(r):
        z = qd.forward(r)
        y = np.empty_like(z)
        y[nd] = lu.solve(z[nd])
        return qd.backward(y)

    return _refined_solve(A, b, apply_inverse, refine_steps)


def discontinuous_blocks(layout: Layout) -> np.ndarray:
    """Block id (field, cell) of every dof of a discontinuous field, -1 elsewhere."""
    block = np.full(layout.ndofs, -1, dtype=np.int64)
    ncells = layout.mesh.num_cells
    for f, name in enumerate(layout.names):
        if layout.spaces[name].family != DISCONTINUOUS:
            continue
        dofs = layout.dofs(name)
        cells = np.broadcast_to(f * ncells + np.arange(dofs.shape[0])[:, None], dofs.shape)
        mask = dofs >= 0
        block[dofs[mask]] = cells[mask]
    return block


def dof_groups(layout: Layout) -> np.ndarray:
    """Supervariable of every dof: the node (continuous) or cell (discontinuous)."""
    groups = np.empty(layout.ndofs, dtype=np.int64)
    base = 0
    for name in layout.names:
        space = layout.spaces[name]
        scalar = np.arange(space.dof_count) % space.nscalar
        if space.family == DISCONTINUOUS:
            scalar //= space.nloc
        groups[layout.slice(name)] = base + scalar
        base += space.nscalar
    return groups


def solve(system: LinearSystem, backend: str = "auto") -> FieldSolution:
    """Solve an assembled system and split the result into fields.

    ``backend="auto"`` uses UMFPACK when available, otherwise the
    quasi-definite SuperLU path (:func:`solve_saddle`), which needs METIS.
    ``"umfpack"``, ``"superlu"`` and ``"saddle"`` force a path.
    """
    if backend == "auto":
        backend = default_backend()
        if backend == "superlu" and pymetis is not None:
            backend = "saddle"
    if backend == "saddle":
        x, res = solve_saddle(system.matrix, system.rhs,
                              discontinuous_blocks(system.layout), dof_groups(system.layout))
    else:
        x, res = solve_sparse(system.matrix, system.rhs, backend=backend)
    log.debug("solved %d dofs with %s, backward residual %.2e", len(x), backend, res)
    return FieldSolution(system.layout, x, res)
