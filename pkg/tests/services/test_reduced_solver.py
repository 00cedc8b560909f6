import numpy as np
import pytest

from app.services.model_core import ParameterOutOfRange, StudentPrior
from app.services.reduced_solver import (
    COLD_START,
    bifurcation_scan,
    psb_state,
    solve_binary_nishimori,
    solve_binary_psb,
    solve_gaussian_psb,
    solve_spurious,
    solve_spurious_gaussian,
)


def test_paramagnetic_below_critical_load():
    solution = solve_binary_psb(1.2, 1.2, 0.45)

    assert solution.converged
    assert solution.m < 1e-4


def test_learning_above_critical_load():
    solution = solve_binary_psb(1.2, 1.2, 0.6)

    assert solution.converged
    assert solution.m > 0.1


@pytest.mark.parametrize("alpha", [0.6, 0.8, 1.0])
def test_nishimori_line_keeps_m_equal_q(alpha):
    full = solve_binary_psb(1.2, 1.2, alpha)
    reduced = solve_binary_nishimori(1.2, alpha)

    assert abs(full.m - full.q) < 1e-8
    assert full.m == pytest.approx(reduced.m, abs=1e-7)


def test_overlap_grows_with_load():
    overlaps = [solve_binary_psb(1.0, 1.0, alpha).m for alpha in (1.5, 2.0, 3.0)]

    assert overlaps[0] < overlaps[1] < overlaps[2] < 1.0


def test_spurious_units_vanish_below_threshold():
    binary = solve_spurious(1.0, 0.5)
    gaussian = solve_spurious_gaussian(1.0, 0.5)

    assert binary.g < 1e-4
    assert gaussian.g < 1e-4


def test_gaussian_students_learn_above_threshold():
    gaussian = solve_gaussian_psb(1.0, 1.0, 2.0)

    assert gaussian.converged
    assert gaussian.m > 0.05


def test_bifurcation_scan_reports_both_branches():
    frame = bifurcation_scan(1.0, 1.0, [0.5, 2.0])

    assert list(frame.columns) == ["alpha", "m_warm", "q_warm", "m_cold", "q_cold", "converged", "hysteresis"]
    assert frame.loc[0, "m_warm"] < 1e-4
    assert frame.loc[1, "m_warm"] > 0.1
    assert frame.loc[1, "m_cold"] == pytest.approx(frame.loc[1, "m_warm"], abs=1e-5)


def test_cold_start_constant_is_small():
    assert 0 < COLD_START < 0.01


def test_psb_state_embeds_scalars():
    spurious = solve_spurious(1.0, 2.0)
    state = psb_state(0.8, 0.7, 1.1, 0.9, 2, 3, spurious=spurious)

    np.testing.assert_allclose(state.m, [[0.8, 0.0, 0.0], [0.0, 0.8, 0.0]])
    np.testing.assert_allclose(np.diag(state.q), [0.7, 0.7, spurious.g])
    np.testing.assert_allclose(np.diag(state.s), 1.0)


def test_psb_state_gaussian_self_overlap():
    state = psb_state(0.5, 0.4, 1.0, 1.0, 1, 1, prior=StudentPrior.STANDARD_GAUSSIAN)

    assert state.s[0, 0] == pytest.approx(0.5 + 0.4)


def test_psb_state_needs_spurious_solution_for_extra_students():
    with pytest.raises(ParameterOutOfRange):
        psb_state(0.8, 0.7, 1.1, 0.9, 1, 2)


def test_negative_load_is_rejected():
    with pytest.raises(ParameterOutOfRange):
        solve_binary_psb(1.0, 1.0, -0.1)
