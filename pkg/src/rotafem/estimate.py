"""Residual a posteriori error estimators and energy-norm errors.

The elastic indicator of a cell K reads::

    Theta_K^2 = h_K^2/mu |R1|^2 + |R2|^2 + rho_d |R3|^2
                + sum_{e in dK} 1/2 h_e/mu |[t_h]|_e^2

with ``R1 = f_h - sqrt(mu) curl omega_h - grad p_h``,
``R2 = omega_h - sqrt(mu) curl u_h``, ``R3 = div u_h + p_h/(2 mu + lam)``,
``rho_d = (1/mu + 1/(2 mu + lam))^-1`` and the discrete normal stress
``t_h = p_h n - sqrt(mu) omega_h x n`` where ``omega x n = omega (-n2, n1)``.
The poroelastic indicator adds the fluid mass residual and flux jumps
(weights ``rho_1`` and ``rho_2``), and the interface problem adds one term per
interface edge measuring the stress and flux mismatch there.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .forms import (BIOT, ELASTICITY, TRANSMISSION, Layout, ProblemData, ProblemParams,
                    edge_points, fluid_boundary_edges, interface_edges, interior_edges_of,
                    outward_normals)
from .linsolve import FieldSolution
from .mesh import ELASTIC, INTERFACE, PORO, WHOLE
from .quadrature import quadrature_rule
from .space import (DISCONTINUOUS, build_space, evaluate, evaluate_at, geometry,
                    project_onto)

ERROR_ORDER = 10
# Fraction of an interior edge term ``w_e |[.]|_e^2`` credited to each of its
# two cells.  One half (the full edge term shared equally) reproduces the
# reference effectivity indices; a quarter would correspond to a literal
# ``|1/2 [.]|^2`` per cell.
EDGE_SHARE = 0.5


@dataclass
class EstimatorReport:
    """Per-cell and per-interface-edge indicators with their totals.

    ``cell`` holds the squared cell indicators (interface-edge terms not
    included); ``edge`` holds the squared interface-edge terms for the edges
    listed in ``edge_ids``.  ``breakdown`` maps term names to per-cell squares
    summing to ``cell``.
    """

    cell: np.ndarray
    oscillation: np.ndarray
    edge: np.ndarray = field(default_factory=lambda: np.zeros(0))
    edge_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    edge_cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    breakdown: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return math.sqrt(self.cell.sum() + self.edge.sum())

    @property
    def total_oscillation(self) -> float:
        return math.sqrt(self.oscillation.sum())

    def marking_indicators(self) -> np.ndarray:
        """Cell indicators with each interface-edge term split half/half."""
        out = self.cell.copy()
        if len(self.edge):
            np.add.at(out, self.edge_cells[:, 0], 0.5 * self.edge)
            np.add.at(out, self.edge_cells[:, 1], 0.5 * self.edge)
        return out

    def to_csv(self, path) -> None:
        """Write ``cell, indicator2, oscillation2`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "indicator2", "oscillation2"])
            for i, (a, b) in enumerate(zip(self.marking_indicators(), self.oscillation)):
                w.writerow([i, repr(float(a)), repr(float(b))])


def effectivity(total_error: float, estimator: float) -> float:
    """Ratio of the true error to the estimate (0 for 0/0, inf for e/0)."""
    if estimator > 0:
        return total_error / estimator
    if total_error == 0:
        return 0.0
    warnings.warn("zero estimator with nonzero error", RuntimeWarning, stacklevel=2)
    return math.inf


# -- regions -------------------------------------------------------------------

@dataclass(frozen=True)
class _Region:
    cells: np.ndarray
    sub: int  # material tag
    omega: str
    press: str
    fluid: str | None
    force: object  # callable body load


def _regions(layout: Layout, data: ProblemData):
    mesh = layout.mesh
    allc = np.arange(mesh.num_cells)
    if layout.kind == ELASTICITY:
        return [_Region(allc, ELASTIC, "omega", "p", None, data.f_elastic)]
    if layout.kind == BIOT:
        return [_Region(allc, PORO, "omega", "phi", "p", data.f_poro)]
    return [_Region(np.flatnonzero(mesh.cell_subdomain == ELASTIC), ELASTIC, "omega_E", "p_E",
                    None, data.f_elastic),
            _Region(np.flatnonzero(mesh.cell_subdomain == PORO), PORO, "omega_P", "phi_P",
                    "p_P", data.f_poro)]


def _cell_norm2(values, weights, absdet):
    """Squared L2 norms per cell from point values (m, nq[, c])."""
    sq = values ** 2
    if sq.ndim == 3:
        sq = sq.sum(axis=-1)
    return absdet * (sq @ weights)


def _projection(mesh, func, degree, ncomp, sub):
    restriction = WHOLE if not mesh.partitioned else sub
    space = build_space(mesh, DISCONTINUOUS, degree, ncomp, restriction)
    if func is None:
        return space, np.zeros(space.dof_count)
    return space, project_onto(space, func, order=ERROR_ORDER)


def _data_eval(func, x, ncomp):
    if func is None:
        return np.zeros(x.shape[:-1] + ((2,) if ncomp == 2 else ()))
    val = np.asarray(func(x[..., 0], x[..., 1]), dtype=float)
    if ncomp == 2:
        return np.moveaxis(np.broadcast_to(val, (2,) + x.shape[:-1]), 0, -1)
    return np.broadcast_to(val, x.shape[:-1])


def _oscillation(mesh, cells, func, proj_space, proj, ncomp):
    rule = quadrature_rule(ERROR_ORDER)
    geo = geometry(mesh)
    x = geo.physical(rule.ref_points)[cells]
    fh = evaluate(proj_space, proj, rule.ref_points, derivatives=0)["value"][cells]
    return _cell_norm2(_data_eval(func, x, ncomp) - fh, rule.weights, np.abs(geo.det[cells]))


def _stress_trace(layout, sol, region, cells, pts, n, mu):
    """Discrete normal stress ``p n - sqrt(mu) omega (-n2, n1)`` at edge points."""
    w, _ = evaluate_at(layout.spaces[region.omega], sol[region.omega], cells, pts)
    p, _ = evaluate_at(layout.spaces[region.press], sol[region.press], cells, pts)
    rm = math.sqrt(mu)
    nx, ny = n[:, None, 0], n[:, None, 1]
    return np.stack([p * nx + rm * w * ny, p * ny - rm * w * nx], axis=-1)


def _fluid_flux(layout, sol, name, cells, pts, n, params):
    _, g = evaluate_at(layout.spaces[name], sol[name], cells, pts)
    grav = params.rho * np.asarray(params.gravity, dtype=float)
    return params.kappa / params.xi * np.einsum("eqx,ex->eq", g - grav, n)


def _edge_datum(func, pts, n):
    nx = np.broadcast_to(n[:, None, 0], pts.shape[:-1])
    ny = np.broadcast_to(n[:, None, 1], pts.shape[:-1])
    return func(pts[..., 0], pts[..., 1], nx, ny)


def _edge_norm2(values, wq):
    sq = values ** 2
    if sq.ndim == 3:
        sq = sq.sum(axis=-1)
    return (sq * wq).sum(axis=1)


def estimate(layout: Layout, sol: FieldSolution, params: ProblemParams,
             data: ProblemData) -> EstimatorReport:
    """Residual estimator of the problem described by ``layout``."""
    mesh, k = layout.mesh, layout.k
    nc = mesh.num_cells
    geo = geometry(mesh)
    hK = mesh.cell_diameters()
    he = mesh.edge_lengths()
    rule = quadrature_rule(2 * k + 4)
    V = layout.spaces["u"]
    uev = evaluate(V, sol["u"], rule.ref_points)
    terms = {name: np.zeros(nc) for name in ("R1", "R2", "R3", "R4", "stress_jump", "flux_jump")}
    osc = np.zeros(nc)
    eorder = 2 * k + 3

    for reg in _regions(layout, data):
        cells = reg.cells
        if len(cells) == 0:
            continue
        mu, lam = params.lame_of(reg.sub)
        rm = math.sqrt(mu)
        stiff = 2 * mu + lam
        absdet = np.abs(geo.det[cells])
        fsp, fh = _projection(mesh, reg.force, k + 1, 2, reg.sub)
        f_at = evaluate(fsp, fh, rule.ref_points, derivatives=0)["value"][cells]
        wev = evaluate(layout.spaces[reg.omega], sol[reg.omega], rule.ref_points)
        pev = evaluate(layout.spaces[reg.press], sol[reg.press], rule.ref_points)
        w, gw = wev["value"][cells], wev["grad"][cells]
        p, gp = pev["value"][cells], pev["grad"][cells]
        gu = uev["grad"][cells]
        curl_w = np.stack([gw[..., 1], -gw[..., 0]], axis=-1)
        R1 = f_at - rm * curl_w - gp
        R2 = w - rm * (gu[..., 1, 0] - gu[..., 0, 1])
        R3 = gu[..., 0, 0] + gu[..., 1, 1] + p / stiff
        rho_d = 1.0 / (1.0 / mu + 1.0 / stiff)
        terms["R1"][cells] = hK[cells] ** 2 / mu * _cell_norm2(R1, rule.weights, absdet)
        terms["R2"][cells] = _cell_norm2(R2, rule.weights, absdet)
        osc[cells] += hK[cells] ** 2 / mu * _oscillation(mesh, cells, reg.force, fsp, fh, 2)

        if reg.fluid is not None:
            qev = evaluate(layout.spaces[reg.fluid], sol[reg.fluid], rule.ref_points, derivatives=2)
            q = qev["value"][cells]
            lap = np.trace(qev["hess"][cells], axis1=-2, axis2=-1)[:, None]
            R3 = R3 - params.alpha * q / stiff
            c = params.storage(reg.sub)
            ssp, sh = _projection(mesh, data.source, k + 1, 1, reg.sub)
            s_at = evaluate(ssp, sh, rule.ref_points, derivatives=0)["value"][cells]
            R4 = s_at - c * q + params.alpha / stiff * p + params.kappa / params.xi * lap
            rho1 = np.minimum(1.0 / c, hK[cells] ** 2 * params.xi / params.kappa)
            terms["R4"][cells] = rho1 * _cell_norm2(R4, rule.weights, absdet)
            osc[cells] += rho1 * _oscillation(mesh, cells, data.source, ssp, sh, 1)
        terms["R3"][cells] = rho_d * _cell_norm2(R3, rule.weights, absdet)

        # interior jumps inside the region
        sub = WHOLE if layout.kind != TRANSMISSION else reg.sub
        edges = interior_edges_of(mesh, sub)
        if len(edges):
            pts, wq = edge_points(mesh, edges, eorder)
            K0, K1 = mesh.edge_cells[edges, 0], mesh.edge_cells[edges, 1]
            n = outward_normals(mesh, edges, K0)
            jump = (_stress_trace(layout, sol, reg, K0, pts, n, mu)
                    - _stress_trace(layout, sol, reg, K1, pts, n, mu))
            share = EDGE_SHARE * he[edges] / mu * _edge_norm2(jump, wq)
            np.add.at(terms["stress_jump"], K0, share)
            np.add.at(terms["stress_jump"], K1, share)
            if reg.fluid is not None:
                fj = (_fluid_flux(layout, sol, reg.fluid, K0, pts, n, params)
                      - _fluid_flux(layout, sol, reg.fluid, K1, pts, n, params))
                share = EDGE_SHARE * params.xi * he[edges] / params.kappa * _edge_norm2(fj, wq)
                np.add.at(terms["flux_jump"], K0, share)
                np.add.at(terms["flux_jump"], K1, share)

        if reg.fluid is not None:
            bedges, bcells = fluid_boundary_edges(mesh, poro_only=layout.kind == TRANSMISSION)
            if layout.kind == TRANSMISSION:
                outer = mesh.edge_class[bedges] != INTERFACE
                bedges, bcells = bedges[outer], bcells[outer]
            if len(bedges):
                pts, wq = edge_points(mesh, bedges, eorder + 4)
                n = outward_normals(mesh, bedges, bcells)
                res = _fluid_flux(layout, sol, reg.fluid, bcells, pts, n, params)
                if data.flux is not None:
                    res = res - _edge_datum(data.flux, pts, n)
                np.add.at(terms["flux_jump"], bcells,
                          params.xi * he[bedges] / params.kappa * _edge_norm2(res, wq))

    report = EstimatorReport(cell=sum(terms.values()), oscillation=osc, breakdown=terms)
    if layout.kind == TRANSMISSION:
        _interface_terms(layout, sol, params, data, report, eorder)
    return report


def _interface_terms(layout, sol, params, data, report, eorder):
    mesh = layout.mesh
    s, pc, ec = interface_edges(mesh)
    if len(s) == 0:
        return
    muE, _ = params.lame_of(ELASTIC)
    muP, _ = params.lame_of(PORO)
    pts, wq = edge_points(mesh, s, eorder + 4)
    n = outward_normals(mesh, s, pc)  # from the porous side into the elastic side
    regs = _regions(layout, data)
    tP = _stress_trace(layout, sol, regs[1], pc, pts, n, muP)
    tE = _stress_trace(layout, sol, regs[0], ec, pts, n, muE)
    stress = tP - tE
    if data.traction_jump is not None:
        stress = stress - np.moveaxis(np.broadcast_to(_edge_datum(data.traction_jump, pts, n),
                                                      (2,) + wq.shape), 0, -1)
    flux = _fluid_flux(layout, sol, "p_P", pc, pts, n, params)
    if data.flux is not None:
        flux = flux - _edge_datum(data.flux, pts, n)
    he = mesh.edge_lengths()[s]
    report.edge = (he / (muE + muP) * _edge_norm2(stress, wq)
                   + he * params.xi / params.kappa * _edge_norm2(flux, wq))
    report.edge_ids = s
    report.edge_cells = np.stack([pc, ec], axis=1)


# -- true errors ---------------------------------------------------------------

def _mean_free_norm2(diff, weights, absdet):
    """``|q|^2`` and ``|q - mean(q)|^2`` over the given cells."""
    w = absdet[:, None] * weights[None, :]
    total = (diff ** 2 * w).sum()
    area = w.sum()
    mean = (diff * w).sum() / area
    return total, total - mean ** 2 * area


def triple_norm_error(layout: Layout, sol: FieldSolution, exact, params: ProblemParams,
                      data: ProblemData | None = None, include_mean_free: bool = True) -> dict:
    """Energy-norm errors of a discrete solution against closed-form fields.

    ``exact`` provides ``grad_u(x, y) -> (2, 2, ...)``,
    ``omega(sub, x, y)``, ``pressure(sub, x, y)`` (elastic pressure on
    elastic material, total pressure on poroelastic material),
    ``fluid_p(x, y)`` and ``grad_fluid_p(x, y) -> (2, ...)``.

    Returned keys depend on the problem: elasticity gives ``omega`` (rotation
    and pressure combined), ``u`` and ``total``; Biot gives ``omega``
    (rotation and total pressure combined), ``u``, ``p`` and ``total``; the
    interface problem gives ``omega_P``, ``phi_P``, ``p_P``, ``u``,
    ``omega_E``, ``p_E`` and ``total``.  Squares of the separate components
    are reported as ``sq_<name>``.
    """
    mesh = layout.mesh
    geo = geometry(mesh)
    rule = quadrature_rule(ERROR_ORDER)
    x = geo.physical(rule.ref_points)
    V = layout.spaces["u"]
    gu = evaluate(V, sol["u"], rule.ref_points)["grad"]
    regions = _regions(layout, data or ProblemData())
    sq = {}
    u2 = 0.0
    for reg in regions:
        cells = reg.cells
        if len(cells) == 0:
            continue
        xc = x[cells]
        X, Y = xc[..., 0], xc[..., 1]
        absdet = np.abs(geo.det[cells])
        mu, lam = params.lame_of(reg.sub)
        G = np.broadcast_to(np.asarray(exact.grad_u(X, Y), dtype=float), (2, 2) + X.shape)
        eg = np.moveaxis(G, (0, 1), (-2, -1)) - gu[cells]
        curl = eg[..., 1, 0] - eg[..., 0, 1]
        div = eg[..., 0, 0] + eg[..., 1, 1]
        u2 += mu * (_cell_norm2(curl, rule.weights, absdet).sum()
                    + _cell_norm2(div, rule.weights, absdet).sum())
        wh = evaluate(layout.spaces[reg.omega], sol[reg.omega], rule.ref_points, 0)["value"][cells]
        ph = evaluate(layout.spaces[reg.press], sol[reg.press], rule.ref_points, 0)["value"][cells]
        ew = np.broadcast_to(exact.omega(reg.sub, X, Y), X.shape) - wh
        ep = np.broadcast_to(exact.pressure(reg.sub, X, Y), X.shape) - ph
        full, free = _mean_free_norm2(ep, rule.weights, absdet)
        press2 = full / (2 * mu + lam) + (free / mu if include_mean_free else 0.0)
        tag = "E" if reg.sub == ELASTIC else "P"
        sq[f"omega_{tag}"] = _cell_norm2(ew, rule.weights, absdet).sum()
        sq[f"press_{tag}"] = press2
        if reg.fluid is not None:
            qev = evaluate(layout.spaces[reg.fluid], sol[reg.fluid], rule.ref_points)
            eq = np.broadcast_to(exact.fluid_p(X, Y), X.shape) - qev["value"][cells]
            gq = np.moveaxis(np.broadcast_to(exact.grad_fluid_p(X, Y), (2,) + X.shape), 0, -1)
            egq = gq - qev["grad"][cells]
            sq["fluid"] = (params.storage(reg.sub) * _cell_norm2(eq, rule.weights, absdet).sum()
                           + params.kappa / params.xi * _cell_norm2(egq, rule.weights, absdet).sum())
    sq["u"] = u2
    out = {f"sq_{name}": val for name, val in sq.items()}
    r = {name: math.sqrt(max(val, 0.0)) for name, val in sq.items()}
    if layout.kind == ELASTICITY:
        out.update(omega=math.sqrt(sq["omega_E"] + sq["press_E"]), u=r["u"])
    elif layout.kind == BIOT:
        out.update(omega=math.sqrt(sq["omega_P"] + sq["press_P"]), u=r["u"], p=r["fluid"])
    else:
        out.update(omega_P=r["omega_P"], phi_P=r["press_P"], p_P=r["fluid"], u=r["u"],
                   omega_E=r["omega_E"], p_E=r["press_E"])
    out["total"] = math.sqrt(sum(sq.values()))
    return out
