import numpy as np
import pytest

from app.services.model_core import OrderParameterState
from app.services.saddle_solver import SolverConfig
from app.services.spin_averages import Conjugates, GaussianNoise, pattern_moments_binary
from app.services.stability import uniform_lambda_max
from app.services.validation import (
    CheckResult,
    Level,
    ValidationReport,
    _run_check,
    check_free_entropy,
    check_free_entropy_ordering,
    check_gaussian_closed_form,
    check_reduced_thresholds,
    check_reduced_vs_full,
    check_sampling,
    check_simulator,
    check_spin_averages,
    check_stability,
    enumerated_pattern_moments,
    perturbed,
    run_validation_suite,
    stationarity_entries,
)


def _flipped_correlation(c, d, p_star):
    return uniform_lambda_max(c, -d, p_star)


def test_stability_checks_pass():
    results = check_stability()

    assert [r.name for r in results] == [
        "stability.identity_alpha_crit",
        "stability.uniform_closed_form",
        "stability.two_unit_tanh",
        "stability.power_iteration",
    ]
    assert all(r.passed for r in results)


def test_stability_checks_catch_a_sign_error():
    results = {r.name: r for r in check_stability(_flipped_correlation)}

    assert not results["stability.uniform_closed_form"].passed
    assert results["stability.identity_alpha_crit"].passed


def test_spin_average_checks_pass():
    results = check_spin_averages(0)

    assert {
        "spin_averages.whitened_fourth_moment",
        "spin_averages.curie_weiss_pair",
        "spin_averages.hidden_pair_tanh",
        "spin_averages.pattern_enumeration",
    } <= {r.name for r in results}
    assert all(r.passed for r in results), results


def test_explicit_enumeration_agrees_with_vectorized_moments():
    rng = np.random.default_rng(11)
    q_hat = np.array([[0.5, -0.2], [-0.2, 0.3]])
    s_hat = np.array([[0.0, 0.4], [0.4, 0.0]])
    conj = Conjugates(rng.normal(size=(1, 2)), s_hat, q_hat)
    noise = GaussianNoise(rng.standard_normal((3, 2, 2)))

    mean, second = pattern_moments_binary(conj, np.array([1.0]), noise)
    mean_ref, second_ref = enumerated_pattern_moments(conj, np.array([1.0]), noise)

    np.testing.assert_allclose(mean, mean_ref, atol=1e-12)
    np.testing.assert_allclose(second, second_ref, atol=1e-12)


def test_sampling_checks_pass():
    results = check_sampling(0)

    assert [r.name for r in results] == [
        "pattern_sampling.arcsine_covariance",
        "pattern_sampling.wishart_psd",
        "pattern_sampling.wishart_unit_diagonal",
        "mc_simulator.random_overlap_scale",
    ]
    assert all(r.passed for r in results), results


def test_stationarity_entries_skip_fixed_diagonals():
    entries = list(stationarity_entries(OrderParameterState.zeros(2, 2)))

    assert len(entries) == 16
    assert ("s", (0, 0)) not in entries
    assert ("s_hat", (0, 1)) in entries
    assert ("q", (1, 0)) not in entries
    assert ("m", (1, 0)) in entries


def test_perturbation_keeps_symmetric_matrices_symmetric():
    state = perturbed(OrderParameterState.zeros(2, 2), "q_hat", (0, 1), 0.1)

    np.testing.assert_array_equal(state.q_hat, [[0.0, 0.1], [0.1, 0.0]])
    assert perturbed(state, "m", (0, 1), 0.2).m[1, 0] == 0.0


@pytest.mark.slow
def test_free_entropy_is_stationary_in_every_entry():
    results = check_free_entropy(0)

    assert all(r.passed for r in results), results


def test_reduced_threshold_checks_pass():
    assert all(r.passed for r in check_reduced_thresholds())


def test_gaussian_closed_form_matches_sampling():
    results = check_gaussian_closed_form(0, draws=50_000, inputs=1)

    assert results[0].passed, results[0]


@pytest.mark.slow
def test_gaussian_closed_form_on_twenty_inputs():
    results = check_gaussian_closed_form(0, draws=1_000_000, inputs=20, threshold=3.0)

    assert len(results) == 20
    assert all(r.passed for r in results), [r for r in results if not r.passed]


@pytest.mark.slow
def test_full_solver_matches_reduced_and_spurious_solutions():
    results = check_reduced_vs_full(0, 2, 3, (1.0, 1.5, 2.0, 2.5), SolverConfig(max_iters=3000))

    assert len(results) == 8
    assert all(r.passed for r in results), [r for r in results if not r.passed]


@pytest.mark.slow
def test_psb_is_favored_over_partial_psb():
    results = check_free_entropy_ordering(0, SolverConfig(max_iters=3000))

    assert [r.name for r in results] == [
        "free_entropy.psb_favored[alpha=1.5]",
        "free_entropy.psb_favored[alpha=2.5]",
        "free_entropy.gap_grows_with_load",
    ]
    assert all(r.passed for r in results), results


@pytest.mark.slow
def test_simulator_matches_theory_at_desk_scale():
    results = check_simulator(0)

    assert all(r.passed for r in results), results


def test_raising_check_becomes_a_failed_entry(caplog):
    def broken():
        raise RuntimeError("boom")

    results = _run_check("broken", broken)

    assert len(results) == 1
    assert not results[0].passed
    assert "RuntimeError: boom" in results[0].detail


def test_report_text_and_frame():
    report = ValidationReport(
        level=Level.FAST,
        seed=3,
        checks=[CheckResult("a", True, 0.0, 1.0), CheckResult("b", False, 2.0, 1.0, "too big")],
    )

    text = report.to_text()

    assert not report.passed
    assert [c.name for c in report.failures()] == ["b"]
    assert "FAIL  b" in text
    assert text.endswith("1/2 checks passed")
    assert list(report.to_frame().columns) == ["name", "passed", "measured", "tolerance", "detail"]


@pytest.mark.slow
def test_fast_suite_passes():
    report = run_validation_suite("fast", seed=0)

    assert report.passed, report.to_text()


def test_mutated_suite_reports_failure_without_raising(monkeypatch):
    import app.services.validation as validation

    monkeypatch.setattr(validation, "check_gaussian_closed_form", lambda *args, **kwargs: [])
    monkeypatch.setattr(validation, "check_reduced_vs_full", lambda *args: [])
    monkeypatch.setattr(validation, "check_free_entropy", lambda seed: [])
    monkeypatch.setattr(validation, "check_sampling", lambda seed: [])

    report = run_validation_suite(Level.FAST, seed=0, uniform_lambda=_flipped_correlation)

    assert not report.passed
    assert [c.name for c in report.failures()] == ["stability.uniform_closed_form"]
