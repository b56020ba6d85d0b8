import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

import rotafem.adapt as adapt
from rotafem.adapt import AmrAborted, amr_loop, dorfler_mark, solve_step
from rotafem.forms import ProblemParams
from rotafem.linsolve import SolverError
from rotafem.mesh import refine_uniform
from rotafem.verify import case_square, initial_mesh


def test_single_dominant_cell():
    assert list(dorfler_mark([0.0, 5.0, 0.0, 0.0], 0.5)) == [1]


@pytest.mark.parametrize("n,zeta", [(10, 0.5), (7, 0.3), (20, 0.001), (16, 0.95)])
def test_equal_indicators_take_ceiling_prefix(n, zeta):
    marked = dorfler_mark(np.ones(n), zeta)
    assert list(marked) == list(range(math.ceil(zeta * n - 1e-12)))


def test_zeta_near_one_marks_all_nonzero():
    eta = np.array([0.3, 0.0, 1.2, 0.7, 1e-9, 0.0])
    assert list(dorfler_mark(eta, 1 - 1e-15)) == [0, 2, 3, 4]


def test_all_zero_and_bad_input():
    assert len(dorfler_mark(np.zeros(5), 0.5)) == 0
    with pytest.raises(ValueError):
        dorfler_mark([1.0, -1.0], 0.5)
    with pytest.raises(ValueError):
        dorfler_mark([1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        dorfler_mark([1.0, np.nan], 0.5)


def _check_minimal(eta, zeta):
    marked = dorfler_mark(eta, zeta)
    total = eta.sum()
    assert eta[marked].sum() >= zeta * total * (1 - 1e-14)
    if len(marked) > 1:
        drop = marked[np.argmin(eta[marked])]
        assert eta[np.setdiff1d(marked, [drop])].sum() < zeta * total
    return marked


def test_greedy_minimality_exhaustive():
    rng = np.random.default_rng(20240601)
    for n in range(1, 21):
        for _ in range(5):
            eta = rng.random(n) ** 3
            zeta = rng.uniform(0.001, 0.999)
            marked = _check_minimal(eta, zeta)
            if n <= 12:
                # no strictly smaller subset reaches the target
                target = zeta * eta.sum()
                m = len(marked)
                smaller = (eta[list(c)].sum() for c in itertools.combinations(range(n), m - 1))
                assert m == 1 or max(smaller) < target


@settings(max_examples=500, deadline=None)
@given(eta=st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=30),
       zeta=st.floats(0.01, 0.99), scale=st.floats(1e-6, 1e6))
def test_scale_invariance(eta, zeta, scale):
    eta = np.array(eta)
    # scaling must not underflow a nonzero indicator into the subnormal range
    assume(np.all((eta == 0) | (eta * scale >= np.finfo(float).tiny)))
    assert np.array_equal(dorfler_mark(eta, zeta), dorfler_mark(eta * scale, zeta))


def test_scale_invariance_exact_powers_of_two():
    rng = np.random.default_rng(1)
    for _ in range(50):
        eta = rng.random(25)
        zeta = rng.random()
        assert np.array_equal(dorfler_mark(eta, zeta), dorfler_mark(eta * 2.0 ** 40, zeta))


def test_ties_broken_by_index():
    assert list(dorfler_mark([1.0, 2.0, 2.0, 2.0], 0.5)) == [1, 2]


def _case():
    return case_square("elasticity", ProblemParams())


def test_single_iteration_history():
    case = _case()
    seen = []
    hist = amr_loop(case, initial_mesh(case, 2), 0, zeta=0.5, max_iterations=1,
                    callback=lambda step, i: seen.append(i))
    assert len(hist.rows) == 1 and seen == [0]
    assert hist.marked == []
    assert hist.final_mesh.num_cells == 8


def test_loop_grows_and_records():
    case = _case()
    hist = amr_loop(case, initial_mesh(case, 2), 1, zeta=0.3, max_iterations=4)
    assert len(hist.rows) == 4
    assert all(b > a for a, b in zip(hist.dofs, hist.dofs[1:]))
    assert hist.rows[0].rates == {}
    assert set(hist.rows[1].rates) == {"omega", "u", "total"}


def test_max_dofs_stops():
    case = _case()
    hist = amr_loop(case, initial_mesh(case, 2), 1, zeta=0.5, max_iterations=50, max_dofs=500)
    assert hist.dofs[-1] >= 500
    assert all(d < 500 for d in hist.dofs[:-1])


def test_all_marked_matches_uniform(monkeypatch):
    case = _case()
    mesh = initial_mesh(case, 2)
    monkeypatch.setattr(adapt, "dorfler_mark", lambda eta, zeta: np.arange(len(eta)))
    hist = amr_loop(case, mesh, 1, max_iterations=3, smoothing=False)
    for level, row in enumerate(hist.rows):
        ref = solve_step(case, refine_uniform(mesh, level), 1).row
        assert row.dofs == ref.dofs
        assert row.total == pytest.approx(ref.total, rel=1e-12)
        assert row.estimator == pytest.approx(ref.estimator, rel=1e-12)


def test_abort_keeps_partial_history(monkeypatch):
    case = _case()
    real = adapt.solve_step
    calls = []

    def flaky(*args, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise SolverError("boom")
        return real(*args, **kw)

    monkeypatch.setattr(adapt, "solve_step", flaky)
    with pytest.raises(AmrAborted) as info:
        amr_loop(case, initial_mesh(case, 2), 0, zeta=0.5, max_iterations=5)
    assert len(info.value.history.rows) == 1
    assert isinstance(info.value.history.error, SolverError)
