"""Dörfler marking and the solve-estimate-mark-refine-smooth loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .estimate import EstimatorReport, effectivity, estimate, triple_norm_error
from .forms import assemble, build_layout
from .linsolve import FieldSolution, SolverError, solve
from .mesh import Mesh, bisect, smooth

log = logging.getLogger(__name__)

DEFAULT_ZETA = 0.001
DEFAULT_MAX_ITERATIONS = 7
DEFAULT_MAX_DOFS = 100_000


def dorfler_mark(indicators, zeta: float) -> np.ndarray:
    """Smallest greedy set of cells carrying a fraction ``zeta`` of the total.

    Cells are sorted by decreasing indicator (ties by increasing index) and
    the shortest prefix whose sum reaches ``zeta * total`` is returned, in
    ascending index order.  All-zero indicators give the empty set.
    """
    eta = np.asarray(indicators, dtype=float)
    if np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ValueError("indicators must be finite and nonnegative")
    if not 0 < zeta < 1:
        raise ValueError("zeta must lie in (0, 1)")
    total = eta.sum()
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(eta)), -eta))
    csum = np.cumsum(eta[order])
    # guard against the cumulative sum falling a rounding error short of the total
    target = min(zeta * total, csum[-1])
    count = int(np.searchsorted(csum, target, side="left")) + 1
    return np.sort(order[:count])


@dataclass
class Step:
    """Everything computed on one mesh."""

    mesh: Mesh
    solution: FieldSolution
    report: EstimatorReport
    errors: dict
    row: object  # verify.ConvergenceRow


def solve_step(case, mesh: Mesh, k: int, stabilized: bool | None = None) -> Step:
    """Assemble, solve, estimate and measure errors for one mesh."""
    from .verify import ERROR_COLUMNS, ConvergenceRow

    t0 = time.perf_counter()
    params = case.params if stabilized is None else replace(case.params, stabilized=stabilized)
    layout = build_layout(mesh, case.kind, k)
    system = assemble(case.kind, mesh, layout, params, case.data)
    sol = solve(system)
    report = estimate(layout, sol, params, case.data)
    errs = triple_norm_error(layout, sol, case, params, case.data)
    est = report.total
    row = ConvergenceRow(
        dofs=layout.ndofs, h=mesh.h_max(),
        errors={c: errs[c] for c in ERROR_COLUMNS[case.kind]}, rates={},
        total=errs["total"], estimator=est, effectivity=effectivity(errs["total"], est),
        oscillation=report.total_oscillation, seconds=time.perf_counter() - t0)
    log.info("%s k=%d dofs=%d e=%.3e est=%.3e eff=%.3f (%.1fs)", case.kind, k, row.dofs,
             row.total, est, row.effectivity, row.seconds)
    return Step(mesh, sol, report, errs, row)


@dataclass
class AmrHistory:
    """Per-iteration records of an adaptive run plus the final mesh."""

    rows: list = field(default_factory=list)
    marked: list = field(default_factory=list)
    final_mesh: Mesh | None = None
    error: Exception | None = None

    @property
    def dofs(self):
        return [r.dofs for r in self.rows]


class AmrAborted(RuntimeError):
    def __init__(self, history: AmrHistory, cause: Exception):
        super().__init__(f"adaptive loop aborted after {len(history.rows)} iterations: {cause}")
        self.history = history


def amr_loop(case, mesh: Mesh, k: int, zeta: float = DEFAULT_ZETA,
             max_iterations: int = DEFAULT_MAX_ITERATIONS, max_dofs: int = DEFAULT_MAX_DOFS,
             smoothing: bool = True, stabilized: bool | None = None,
             callback=None) -> AmrHistory:
    """Adaptive loop; ``max_iterations`` counts solves (at least one is done).

    The loop stops after ``max_iterations`` solves or once a solve exceeds
    ``max_dofs`` degrees of freedom.
    """
    from .verify import ERROR_COLUMNS, adaptive_rate

    history = AmrHistory()
    while True:
        try:
            step = solve_step(case, mesh, k, stabilized)
        except SolverError as exc:
            history.final_mesh = mesh
            history.error = exc
            raise AmrAborted(history, exc) from exc
        history.rows.append(step.row)
        if callback is not None:
            callback(step, len(history.rows) - 1)
        done = len(history.rows) >= max(1, max_iterations) or step.row.dofs >= max_dofs
        if done:
            break
        marked = dorfler_mark(step.report.marking_indicators(), zeta)
        history.marked.append(len(marked))
        if len(marked) == 0:
            break
        mesh = bisect(mesh, marked)
        if smoothing:
            mesh = smooth(mesh)
    history.final_mesh = mesh
    adaptive_rate(history.rows, ERROR_COLUMNS[case.kind])
    return history
