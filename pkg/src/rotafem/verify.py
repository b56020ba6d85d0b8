"""Manufactured solutions, convergence campaigns and table output."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sy

from .forms import BIOT, ELASTICITY, TRANSMISSION, ProblemData, ProblemParams
from .mesh import ELASTIC, PORO, build_l_shape, build_unit_square, refine_uniform

STREAM = "stream"      # u = curl of a stream function plus a pressure-driven part
PRINTED = "printed"    # second component with cos(pi y) in place of cos(pi x)
VARIANTS = (STREAM, PRINTED)

FD_STEP = 1e-6
FD_TOL = 1e-8

_x, _y, _nx, _ny = sy.symbols("x y nx ny", real=True)


class ManufacturedError(ValueError):
    """The closed-form fields failed their self-consistency check."""


def _lambdify_scalar(expr, args=(_x, _y)):
    fn = sy.lambdify(args, expr, "numpy")

    def call(*vals):
        out = np.asarray(fn(*vals), dtype=float)
        shape = np.broadcast(*vals).shape
        return out if out.shape == shape else np.broadcast_to(out, shape).copy()
    return call


def _lambdify_vector(exprs, args=(_x, _y)):
    fns = [_lambdify_scalar(e, args) for e in exprs]

    def call(*vals):
        return np.stack([f(*vals) for f in fns])
    return call


def _curl_vec(u):
    return sy.diff(u[1], _x) - sy.diff(u[0], _y)


def _curl_scalar(w):
    return (sy.diff(w, _y), -sy.diff(w, _x))


def _div(u):
    return sy.diff(u[0], _x) + sy.diff(u[1], _y)


def _grad(p):
    return (sy.diff(p, _x), sy.diff(p, _y))


@dataclass(eq=False)
class ManufacturedCase:
    """Closed-form solution of one problem together with its derived data.

    Fields per material (``ELASTIC`` or ``PORO``): rotation
    ``omega = sqrt(mu) curl u``, elastic pressure ``-(2 mu + lam) div u`` on
    elastic material and total pressure ``alpha p - (2 mu + lam) div u`` on
    poroelastic material.
    """

    kind: str
    params: ProblemParams
    domain: str
    variant: str
    a: float | None
    u_expr: tuple
    p_expr: object
    data: ProblemData = field(init=False)

    def __post_init__(self):
        prm = self.params
        u = self.u_expr
        p = self.p_expr
        self._omega, self._press, self._force = {}, {}, {}
        for sub in (ELASTIC, PORO):
            mu, lam = prm.lame_of(sub)
            w = sy.sqrt(sy.Float(mu)) * _curl_vec(u)
            stiff = sy.Float(2 * mu + lam)
            if sub == ELASTIC:
                press = -stiff * _div(u)
            else:
                press = sy.Float(prm.alpha) * p - stiff * _div(u)
            cw = _curl_scalar(w)
            gp = _grad(press)
            force = tuple(sy.sqrt(sy.Float(mu)) * cw[i] + gp[i] for i in range(2))
            self._omega[sub] = (w, _lambdify_scalar(w))
            self._press[sub] = (press, _lambdify_scalar(press))
            self._force[sub] = (force, _lambdify_vector(force))
        muP, lamP = prm.lame_of(PORO)
        stiffP = 2 * muP + lamP
        g = prm.gravity
        flux = tuple(sy.Float(prm.kappa / prm.xi) * (d - prm.rho * gi) for d, gi in zip(_grad(p), g))
        source = (sy.Float(prm.storage(PORO)) * p - sy.Float(prm.alpha / stiffP) * self._press[PORO][0]
                  - (sy.diff(flux[0], _x) + sy.diff(flux[1], _y)))
        self._flux_vec = flux
        self._u = _lambdify_vector(u)
        self._grad_u = [[_lambdify_scalar(sy.diff(ui, v)) for v in (_x, _y)] for ui in u]
        self._p = _lambdify_scalar(p)
        self._grad_p = _lambdify_vector(_grad(p))
        self._source = _lambdify_scalar(source)
        flux_n = flux[0] * _nx + flux[1] * _ny
        self._flux_n = _lambdify_scalar(flux_n, (_x, _y, _nx, _ny))
        # normal stress t = press n - sqrt(mu) omega (-n2, n1)
        t = {}
        for sub in (ELASTIC, PORO):
            mu, _ = prm.lame_of(sub)
            w, pr = self._omega[sub][0], self._press[sub][0]
            rm = sy.sqrt(sy.Float(mu))
            t[sub] = (pr * _nx + rm * w * _ny, pr * _ny - rm * w * _nx)
        jump = tuple(t[PORO][i] - t[ELASTIC][i] for i in range(2))
        self._traction_jump = _lambdify_vector(jump, (_x, _y, _nx, _ny))
        self.data = self._build_data()
        self.self_check()

    # -- closed-form accessors -------------------------------------------------
    def u(self, x, y):
        return self._u(x, y)

    def grad_u(self, x, y):
        """Displacement gradient indexed ``[component, direction]``."""
        return np.stack([np.stack([g(x, y) for g in row]) for row in self._grad_u])

    def omega(self, sub, x, y):
        return self._omega[self._material(sub)][1](x, y)

    def pressure(self, sub, x, y):
        return self._press[self._material(sub)][1](x, y)

    def force(self, sub, x, y):
        return self._force[self._material(sub)][1](x, y)

    def fluid_p(self, x, y):
        return self._p(x, y)

    def grad_fluid_p(self, x, y):
        return self._grad_p(x, y)

    def source(self, x, y):
        return self._source(x, y)

    def _material(self, sub):
        if self.kind == ELASTICITY:
            return ELASTIC
        if self.kind == BIOT:
            return PORO
        return sub

    def _build_data(self) -> ProblemData:
        fE = lambda x, y: self._force[ELASTIC][1](x, y)  # noqa: E731
        fP = lambda x, y: self._force[PORO][1](x, y)  # noqa: E731
        fluid = self.kind != ELASTICITY
        return ProblemData(
            f_elastic=fE if self.kind != BIOT else None,
            f_poro=fP if self.kind != ELASTICITY else None,
            source=self._source if fluid else None,
            flux=self._flux_n if fluid else None,
            traction_jump=self._traction_jump if self.kind == TRANSMISSION else None,
            displacement=self._u,
        )

    # -- self-consistency ------------------------------------------------------
    def sample_points(self, count=100, seed=0):
        rng = np.random.default_rng(seed)
        pts = []
        while len(pts) < count:
            if self.domain == "lshape":
                p = rng.uniform(-0.98, 0.98, 2)
                if p[0] > 0 and p[1] > 0:
                    continue
            else:
                p = rng.uniform(0.02, 0.98, 2)
            pts.append(p)
        pts = np.array(pts)
        return pts[:, 0], pts[:, 1]

    def self_check(self, count=100):
        """Cross-check derivatives and strong equations by central differences.

        Raises :class:`ManufacturedError` when a coded derivative or a derived
        datum disagrees with finite differences of the primary fields by more
        than ``FD_TOL`` relative to the field scale.
        """
        x, y = self.sample_points(count)
        h = FD_STEP

        def dx(f):
            return (f(x + h, y) - f(x - h, y)) / (2 * h)

        def dy(f):
            return (f(x, y + h) - f(x, y - h)) / (2 * h)

        def check(name, coded, fd):
            scale = max(1.0, float(np.abs(coded).max()))
            err = float(np.abs(coded - fd).max()) / scale
            if not err <= FD_TOL:
                raise ManufacturedError(f"{name}: finite-difference mismatch {err:.2e}")

        gu = self.grad_u(x, y)
        for c in range(2):
            comp = lambda X, Y, c=c: self.u(X, Y)[c]  # noqa: E731
            check(f"du{c}/dx", gu[c, 0], dx(comp))
            check(f"du{c}/dy", gu[c, 1], dy(comp))
        gp = self.grad_fluid_p(x, y)
        check("dp/dx", gp[0], dx(self.fluid_p))
        check("dp/dy", gp[1], dy(self.fluid_p))
        prm = self.params
        for sub in (ELASTIC, PORO):
            mu, lam = prm.lame_of(sub)
            w = lambda X, Y, s=sub: self._omega[s][1](X, Y)  # noqa: E731
            pr = lambda X, Y, s=sub: self._press[s][1](X, Y)  # noqa: E731
            rm = math.sqrt(mu)
            check("rotation", w(x, y), rm * (gu[1, 0] - gu[0, 1]))
            div = gu[0, 0] + gu[1, 1]
            expect = -(2 * mu + lam) * div + (prm.alpha * self.fluid_p(x, y) if sub == PORO else 0)
            check("pressure", pr(x, y), expect)
            f = self._force[sub][1](x, y)
            check("momentum x", f[0], rm * dy(w) + dx(pr))
            check("momentum y", f[1], -rm * dx(w) + dy(pr))
        flux_x = lambda X, Y: prm.kappa / prm.xi * (self.grad_fluid_p(X, Y)[0] - prm.rho * prm.gravity[0])  # noqa: E731
        flux_y = lambda X, Y: prm.kappa / prm.xi * (self.grad_fluid_p(X, Y)[1] - prm.rho * prm.gravity[1])  # noqa: E731
        muP, lamP = prm.lame_of(PORO)
        mass = (prm.storage(PORO) * self.fluid_p(x, y)
                - prm.alpha / (2 * muP + lamP) * self._press[PORO][1](x, y)
                - dx(flux_x) - dy(flux_y))
        check("mass balance", self.source(x, y), mass)


def case_square(kind: str, params: ProblemParams, a: float | None = None,
                variant: str = STREAM) -> ManufacturedCase:
    """Smooth manufactured solution on the unit square.

    The fluid pressure is ``p = x y (1 - x)(a - y)`` with ``a = 1`` by default
    and ``a = 0.5`` for the interface problem, where it then vanishes on the
    interface ``y = 1/2``.  The displacement is::

        u = (pi sin^2(pi x) sin(pi y) cos(pi y),
             -pi sin(pi x) c sin^2(pi y)) + p1/(2 lam) (1, 1)

    with ``p1 = x y (1 - x)(1 - y)`` so that ``u`` vanishes on the boundary,
    ``c = cos(pi x)`` for the stream-function variant (divergence-free first
    part) and ``c = cos(pi y)`` for the printed variant.  ``lam`` is the Lamé
    constant of the poroelastic material for the fluid problems and of the
    elastic material otherwise.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if a is None:
        a = 0.5 if kind == TRANSMISSION else 1.0
    pi = sy.pi
    p = _x * _y * (1 - _x) * (sy.Float(a) - _y)
    p1 = _x * _y * (1 - _x) * (1 - _y)
    _, lam = params.lame_of(ELASTIC if kind == ELASTICITY else PORO)
    second = sy.cos(pi * _x) if variant == STREAM else sy.cos(pi * _y)
    shift = p1 / (2 * sy.Float(lam)) if lam > 0 else 0
    u = (pi * sy.sin(pi * _x) ** 2 * sy.sin(pi * _y) * sy.cos(pi * _y) + shift,
         -pi * sy.sin(pi * _x) * second * sy.sin(pi * _y) ** 2 + shift)
    return ManufacturedCase(kind, params, "square", variant, a, u, p)


LSHAPE_PARAMS = ProblemParams(E=10.0, nu=0.25, E_poro=1.0, nu_poro=0.45, c0=0.0, alpha=1.0,
                              xi=1.0, kappa=1e-3)


def case_lshape(params: ProblemParams = LSHAPE_PARAMS, kind: str = TRANSMISSION) -> ManufacturedCase:
    """Solution with steep gradients at the reentrant corner of the L-shape."""
    r2 = _x ** 2 + _y ** 2
    u = (sy.exp(-50 * r2), sy.exp(-50 * r2))
    p = sy.exp(-25 * r2)
    return ManufacturedCase(kind, params, "lshape", "lshape", None, u, p)


def initial_mesh(case: ManufacturedCase, n: int):
    """Initial mesh of a case: unit square (split at y = 1/2 for the
    interface problem) or L-shape (split along the diagonal).

    The L-shape mesh is the structured one bisected once, which for ``n = 1``
    gives 12 cells (157 degrees of freedom for the interface problem, k = 1).
    """
    part = case.kind == TRANSMISSION
    if case.domain == "lshape":
        return refine_uniform(build_l_shape(n, "diagonal" if part else None), 1)
    return build_unit_square(n, "horizontal" if part else None)


# -- rates and tables ----------------------------------------------------------

ERROR_COLUMNS = {
    ELASTICITY: ("omega", "u"),
    BIOT: ("omega", "u", "p"),
    TRANSMISSION: ("omega_P", "phi_P", "p_P", "u", "omega_E", "p_E"),
}


def rate(e, e_prev, h, h_prev) -> float:
    """Observed order ``log(e/e~)/log(h/h~)`` between two levels."""
    if e <= 0 or e_prev <= 0 or h == h_prev:
        return 0.0
    return math.log(e / e_prev) / math.log(h / h_prev)


def dof_rate(e, e_prev, dofs, dofs_prev) -> float:
    """Observed order ``-2 log(e/e~)/log(N/N~)`` in terms of degrees of freedom."""
    if e <= 0 or e_prev <= 0 or dofs == dofs_prev:
        return 0.0
    return -2.0 * math.log(e / e_prev) / math.log(dofs / dofs_prev)


@dataclass
class ConvergenceRow:
    dofs: int
    h: float
    errors: dict
    rates: dict
    total: float
    estimator: float
    effectivity: float
    oscillation: float = 0.0
    seconds: float = 0.0

    def as_dict(self):
        """Record without the wall-clock time, so reruns serialize identically."""
        return {"dofs": self.dofs, "h": self.h, "errors": self.errors, "rates": self.rates,
                "total": self.total, "estimator": self.estimator,
                "effectivity": self.effectivity, "oscillation": self.oscillation}


def with_rates(rows, columns, by_dofs=False):
    """Fill ``rows[i].rates`` from consecutive errors."""
    for i, row in enumerate(rows):
        row.rates = {}
        if i == 0:
            continue
        prev = rows[i - 1]
        for c in columns + ("total",):
            e = row.total if c == "total" else row.errors[c]
            ep = prev.total if c == "total" else prev.errors[c]
            if by_dofs:
                row.rates[c] = dof_rate(e, ep, row.dofs, prev.dofs)
            else:
                row.rates[c] = rate(e, ep, row.h, prev.h)
    return rows


def uniform_convergence(case: ManufacturedCase, k: int, levels: int, n0: int = 4,
                        stabilized: bool | None = None, callback=None):
    """Solve on ``levels`` uniformly refined meshes starting from ``n0``.

    Level ``l`` is the structured mesh with ``n0 * 2**l`` subdivisions per
    unit length (square) or the initial L-shape mesh after ``2 l`` bisection
    sweeps, so that ``h`` halves from one level to the next in both cases.
    """
    from .adapt import solve_step

    if levels < 1:
        raise ValueError("levels must be positive")
    rows = []
    for level in range(levels):
        if case.domain == "lshape":
            mesh = refine_uniform(initial_mesh(case, n0), 2 * level)
        else:
            mesh = initial_mesh(case, n0 * 2 ** level)
        step = solve_step(case, mesh, k, stabilized=stabilized)
        rows.append(step.row)
        if callback is not None:
            callback(step)
    return with_rates(rows, ERROR_COLUMNS[case.kind])


def adaptive_rate(rows, columns=None):
    """DoF-based rates for an adaptive history (list of rows)."""
    if not rows:
        return rows
    columns = columns or tuple(rows[0].errors)
    return with_rates(rows, tuple(columns), by_dofs=True)


def _fmt(v):
    return f"{v:.2e}"


def table_header(kind: str):
    head = ["DoFs", "h"]
    for c in ERROR_COLUMNS[kind]:
        head += [f"e_{c}", f"r_{c}"]
    head += ["e", "eff"]
    return head


def table_rows(kind: str, rows):
    out = []
    for i, row in enumerate(rows):
        line = [str(row.dofs), f"{row.h:.4f}"]
        for c in ERROR_COLUMNS[kind]:
            line.append(_fmt(row.errors[c]))
            line.append("--" if i == 0 else f"{row.rates[c]:.2f}")
        line += [_fmt(row.total), f"{row.effectivity:.3f}"]
        out.append(line)
    return out


def write_table_csv(kind: str, rows, path_or_buffer) -> None:
    """Convergence table in CSV (one column per error, rate and effectivity)."""
    own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table_header(kind))
        w.writerows(table_rows(kind, rows))
    finally:
        if own:
            fh.close()


def format_table(kind: str, rows) -> str:
    """Fixed-width text rendering for the terminal."""
    head = table_header(kind)
    body = table_rows(kind, rows)
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    buf = io.StringIO()
    for r in [head] + body:
        buf.write("  ".join(s.rjust(w) for s, w in zip(r, widths)) + "\n")
    return buf.getvalue()


def summary_payload(config: dict, kind: str, rows, variant: str, version: str) -> str:
    payload = {"version": version, "config": config, "variant": variant, "problem": kind,
               "records": [r.as_dict() for r in rows]}
    return json.dumps(payload, indent=2, sort_keys=True)
