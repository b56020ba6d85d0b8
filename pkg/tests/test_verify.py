import io
import json
import math

import numpy as np
import pytest

from rotafem.adapt import solve_step
from rotafem.forms import ProblemParams
from rotafem.mesh import ELASTIC, PORO
from rotafem.verify import (ERROR_COLUMNS, PRINTED, STREAM, ConvergenceRow, ManufacturedError,
                            adaptive_rate, case_lshape, case_square, dof_rate, format_table,
                            initial_mesh, rate, summary_payload, table_header,
                            uniform_convergence, write_table_csv)


def test_rate_formula():
    assert rate(1.0, 2.0, 0.5, 1.0) == pytest.approx(1.0)
    assert rate(0.25, 1.0, 0.5, 1.0) == pytest.approx(2.0)
    assert rate(1.0, 1.0, 0.5, 1.0) == 0.0
    assert rate(1.0, 2.0, 1.0, 1.0) == 0.0


def test_dof_rate_formula():
    assert dof_rate(0.5, 1.0, 400, 100) == pytest.approx(1.0)
    assert dof_rate(0.3, 0.3, 400, 100) == 0.0
    assert dof_rate(0.1, 0.2, 100, 100) == 0.0


def _row(dofs, errors, h=1.0):
    return ConvergenceRow(dofs=dofs, h=h, errors=errors, rates={},
                          total=math.sqrt(sum(e * e for e in errors.values())),
                          estimator=1.0, effectivity=0.0)


def test_adaptive_rate_reproduces_reference_displacement_rates():
    dofs = [157, 551, 1020, 2307, 5779, 20209, 70299]
    e_u = [1.62, 7.07e-1, 3.91e-1, 1.11e-1, 2.74e-2, 6.94e-3, 1.74e-3]
    rows = adaptive_rate([_row(n, {"u": e}) for n, e in zip(dofs, e_u)])
    got = [r.rates["u"] for r in rows[3:]]
    assert got == pytest.approx([3.09, 3.04, 2.19, 2.22], abs=0.015)
    assert rows[0].rates == {}


def test_adaptive_rate_constant_error():
    rows = adaptive_rate([_row(100, {"u": 0.5}), _row(400, {"u": 0.5})])
    assert rows[1].rates["u"] == 0.0


@pytest.mark.parametrize("kind", ["elasticity", "biot", "interface"])
def test_square_cases_are_consistent(kind):
    case = case_square(kind, ProblemParams(E=7.0, nu=0.35, alpha=0.6, c0=0.3, kappa=0.1))
    case.self_check(count=50)
    x = np.linspace(0, 1, 11)
    a = case.a
    # fluid pressure vanishes on x=0, x=1, y=0 and y=a
    assert np.allclose(case.fluid_p(x, 0 * x), 0)
    assert np.allclose(case.fluid_p(0 * x, x), 0)
    assert np.allclose(case.fluid_p(1 + 0 * x, x), 0)
    assert np.allclose(case.fluid_p(x, a + 0 * x), 0)
    for bx, by in ((x, 0 * x), (x, 1 + 0 * x), (0 * x, x), (1 + 0 * x, x)):
        ux, uy = case.u(bx, by)
        assert np.allclose(ux, 0, atol=1e-15) and np.allclose(uy, 0, atol=1e-15)


def test_interface_case_defaults():
    case = case_square("interface", ProblemParams())
    assert case.a == 0.5
    assert case_square("biot", ProblemParams()).a == 1.0


def test_lshape_case():
    case = case_lshape()
    assert case.fluid_p(0.0, 0.0) == pytest.approx(1.0)
    assert case.params.kappa / case.params.xi == pytest.approx(1e-3)
    mu_e, _ = case.params.lame_of(ELASTIC)
    mu_p, _ = case.params.lame_of(PORO)
    assert mu_e == pytest.approx(10 / 2.5) and mu_p == pytest.approx(1 / 2.9)
    assert case.data.displacement is not None
    case.self_check(count=50)


def test_lshape_initial_mesh_dofs():
    from rotafem.forms import build_layout
    case = case_lshape()
    mesh = initial_mesh(case, 1)
    assert mesh.num_cells == 12
    assert build_layout(mesh, "interface", 1).ndofs == 157


def test_self_check_catches_wrong_derivative():
    case = case_square("elasticity", ProblemParams())
    good = case._grad_u
    case._grad_u = [[good[0][0], good[0][1]], [good[1][1], good[1][1]]]
    with pytest.raises(ManufacturedError):
        case.self_check(count=20)


def test_unknown_variant():
    with pytest.raises(ValueError):
        case_square("elasticity", ProblemParams(), variant="other")


def test_variant_calibration_against_first_row():
    # reference coarse row: e_omega 2.14, e_u 2.64 (k=0); 0.533, 0.765 (k=1)
    reference = {0: (2.14, 2.64), 1: (0.533, 0.765)}
    for k, (e_w, e_u) in reference.items():
        rows = {}
        for variant in (STREAM, PRINTED):
            case = case_square("elasticity", ProblemParams(), variant=variant)
            rows[variant] = solve_step(case, initial_mesh(case, 4), k).row
        assert rows[STREAM].errors["omega"] == pytest.approx(e_w, rel=0.02)
        assert rows[STREAM].errors["u"] == pytest.approx(e_u, rel=0.02)
        assert abs(rows[PRINTED].errors["u"] / e_u - 1) > 0.5


def test_uniform_convergence_small_run():
    case = case_square("elasticity", ProblemParams())
    rows = uniform_convergence(case, 0, 3, n0=2)
    assert rows[1].h == pytest.approx(rows[0].h / 2)
    assert rows[0].rates == {}
    assert set(rows[2].rates) == {"omega", "u", "total"}
    for r in rows:
        assert r.total ** 2 == pytest.approx(sum(e * e for e in r.errors.values()), rel=1e-12)
    with pytest.raises(ValueError):
        uniform_convergence(case, 0, 0)


def test_table_csv_layout():
    rows = [_row(114, {"omega": 2.1436, "u": 2.6453}, h=0.35355339),
            _row(418, {"omega": 1.11, "u": 1.40}, h=0.1767767)]
    rows[0].effectivity = 0.24909
    adaptive_rate(rows)
    buf = io.StringIO()
    write_table_csv("elasticity", rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "DoFs,h,e_omega,r_omega,e_u,r_u,e,eff"
    first = lines[1].split(",")
    assert first[:6] == ["114", "0.3536", "2.14e+00", "--", "2.65e+00", "--"]
    assert first[-1] == "0.249"
    assert len(lines[2].split(",")) == len(table_header("elasticity"))
    text = format_table("elasticity", rows)
    assert text.splitlines()[0].split() == table_header("elasticity")


def test_table_headers_per_problem():
    for kind, cols in ERROR_COLUMNS.items():
        head = table_header(kind)
        assert head[:2] == ["DoFs", "h"] and head[-2:] == ["e", "eff"]
        assert len(head) == 4 + 2 * len(cols)


def test_summary_payload_is_canonical():
    rows = [_row(114, {"omega": 1.0, "u": 2.0})]
    rows[0].seconds = 12.5
    a = summary_payload({"k": 0, "E": 1.0}, "elasticity", rows, STREAM, "0.1.0")
    rows[0].seconds = 99.0
    b = summary_payload({"E": 1.0, "k": 0}, "elasticity", rows, STREAM, "0.1.0")
    assert a == b
    doc = json.loads(a)
    assert doc["records"][0]["dofs"] == 114
    assert doc["variant"] == STREAM
