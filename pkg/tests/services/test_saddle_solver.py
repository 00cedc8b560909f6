import numpy as np
import pytest

from app.services.model_core import (
    Hyperparameters,
    OrderParameterState,
    ParameterOutOfRange,
    StudentPrior,
    TeacherPrior,
    uniform_covariance,
)
from app.services.reduced_solver import solve_binary_psb
from app.services.spin_averages import GaussianNoise
from app.services.saddle_solver import (
    InitialCondition,
    SaddleContext,
    SolverConfig,
    StopReason,
    initial_state,
    iterate_step,
    iteration_rng,
    orthant_weights,
    solve,
    whitened_gaussian_samples,
)


def test_whitened_samples_have_exact_moments():
    noise = whitened_gaussian_samples(1000, 2, np.random.default_rng(0))
    flat = noise.z.reshape(1000, 4)

    np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(flat.T @ flat / 1000, np.eye(4), atol=1e-10)


def test_whitening_falls_back_to_per_stream_scaling():
    noise = whitened_gaussian_samples(4, 2, np.random.default_rng(1))
    flat = noise.z.reshape(4, 4)

    np.testing.assert_allclose(np.diag(flat.T @ flat / 4), 1.0, atol=1e-12)


def test_whitening_needs_even_sample_count():
    with pytest.raises(ParameterOutOfRange):
        whitened_gaussian_samples(7, 2, np.random.default_rng(0))


def test_solver_config_validation():
    with pytest.raises(ParameterOutOfRange):
        SolverConfig(dt_order=0.0)
    with pytest.raises(ParameterOutOfRange):
        SolverConfig(n_gaussian_samples=101)


def test_initial_conditions():
    near = initial_state(InitialCondition.near_diagonal(0.5, 0.01), 2, 3)
    partial = initial_state(InitialCondition.partial_psb(2, 3), 2, 3)
    paramagnetic = initial_state(InitialCondition.paramagnetic(), 2, 3)

    np.testing.assert_allclose(near.m, [[0.5, 0.01, 0.01], [0.01, 0.5, 0.01]])
    np.testing.assert_allclose(near.q, near.m.T @ near.m)
    assert partial.m[0, 2] == 0.5
    assert np.all(paramagnetic.m == 0.0)
    np.testing.assert_array_equal(paramagnetic.s, np.eye(3))


def test_near_diagonal_needs_small_eps():
    with pytest.raises(ParameterOutOfRange):
        InitialCondition.near_diagonal(0.1, 0.2)


def test_off_diagonal_pair_must_fit():
    with pytest.raises(ParameterOutOfRange):
        initial_state(InitialCondition.off_diagonal(pair=(0, 5)), 2, 2)


def test_random_initial_condition_is_seeded():
    first = initial_state(InitialCondition.random(0.1, seed=4), 2, 2)
    second = initial_state(InitialCondition.random(0.1, seed=4), 2, 2)

    np.testing.assert_array_equal(first.m, second.m)
    assert np.max(np.abs(first.m)) <= 0.1


def test_initial_condition_from_dict():
    init = InitialCondition.from_dict({"kind": "off_diagonal", "pair": [1, 0], "m0": 0.4})

    assert init.pair == (1, 0)
    assert init.m0 == 0.4


def test_orthant_weights_exact_for_diagonal_covariance():
    np.testing.assert_array_equal(orthant_weights(np.eye(3)), np.full(8, 0.125))


def test_orthant_weights_for_correlated_pair():
    q_matrix = uniform_covariance(2, 0.5)

    weights = orthant_weights(q_matrix, n_samples=200_000)

    np.testing.assert_allclose(weights, weights[::-1])
    assert weights.sum() == pytest.approx(1.0)
    # Equal signs occur with probability (1 + c)/2.
    assert weights[0] == pytest.approx(0.375, abs=0.005)
    assert orthant_weights(q_matrix, n_samples=200_000) is weights


def test_zero_load_stays_paramagnetic():
    h = Hyperparameters(1.0, 1.0, 0.0, 2, 2)
    cfg = SolverConfig(n_gaussian_samples=200, max_iters=10)

    result = solve(h, np.eye(2), cfg)

    assert result.converged
    assert result.stop_reason is StopReason.TOLERANCE
    assert result.iterations == 1
    np.testing.assert_allclose(result.state.m, 0.0)
    np.testing.assert_allclose(result.state.s, np.eye(2))


def test_plateau_stop_is_settled_but_not_converged():
    h = Hyperparameters(1.2, 1.2, 2.0, 1, 1)
    cfg = SolverConfig(n_gaussian_samples=200, max_iters=400, average_window=20)

    result = solve(h, np.eye(1), cfg)

    assert result.stop_reason is StopReason.PLATEAU
    assert result.settled
    assert not result.converged
    assert result.residual_trace[-1] > cfg.tolerance
    assert result.plateau_drift <= cfg.plateau_tolerance


def test_gaussian_students_at_zero_load():
    h = Hyperparameters(1.0, 1.0, 0.0, 1, 2, student_prior=StudentPrior.STANDARD_GAUSSIAN)
    cfg = SolverConfig(n_gaussian_samples=200, max_iters=10)

    result = solve(h, np.eye(1), cfg)

    assert result.stop_reason is StopReason.TOLERANCE
    np.testing.assert_allclose(result.state.q, 0.0)


def test_overlap_decays_below_critical_load():
    h = Hyperparameters(1.0, 1.0, 0.5, 1, 1)
    cfg = SolverConfig(n_gaussian_samples=2000, max_iters=400, average_window=20)
    init = initial_state(InitialCondition.near_diagonal(), 1, 1)

    result = solve(h, np.eye(1), cfg, init)

    assert abs(result.state.m[0, 0]) < 0.05


def test_iterate_step_is_reproducible():
    h = Hyperparameters(1.0, 1.0, 1.5, 2, 2)
    context = SaddleContext.build(h, np.eye(2))
    init = initial_state(InitialCondition.near_diagonal(), 2, 2)
    cfg = SolverConfig(n_gaussian_samples=200)

    def step():
        rng = iteration_rng(3, 1)
        noise = whitened_gaussian_samples(cfg.n_gaussian_samples, 2, rng)
        return iterate_step(init, h, context, cfg, noise, rng, 1)

    assert step().max_abs_change(step()) == 0.0


def test_gaussian_teacher_branch_produces_finite_state():
    h = Hyperparameters(1.0, 1.0, 1.0, 2, 2, teacher_prior=TeacherPrior.GAUSSIAN)
    context = SaddleContext.build(h, uniform_covariance(2, 0.3))
    init = initial_state(InitialCondition.near_diagonal(), 2, 2)
    rng = iteration_rng(0, 1)
    noise = whitened_gaussian_samples(400, 2, rng)

    state = iterate_step(init, h, context, SolverConfig(n_gaussian_samples=400), noise, rng, 1)

    assert isinstance(state, OrderParameterState)
    assert state.is_finite()
    np.testing.assert_allclose(np.diag(state.s), 1.0)


def test_student_relabeling_commutes_with_iteration():
    h = Hyperparameters(1.2, 1.2, 1.5, 2, 2)
    context = SaddleContext.build(h, np.eye(2))
    cfg = SolverConfig(n_gaussian_samples=200)
    order = [1, 0]
    state = initial_state(InitialCondition.random(0.2, seed=4), 2, 2)
    swapped = state.permute_students(order)

    for iteration in range(1, 6):
        rng = iteration_rng(0, iteration)
        noise = whitened_gaussian_samples(cfg.n_gaussian_samples, 2, rng)
        relabeled = GaussianNoise(noise.z[:, order][:, :, order])
        state = iterate_step(state, h, context, cfg, noise, rng, iteration)
        swapped = iterate_step(swapped, h, context, cfg, relabeled, rng, iteration)

    expected = state.permute_students(order).matrices()
    for name, values in swapped.matrices().items():
        np.testing.assert_allclose(values, expected[name], atol=1e-10, err_msg=name)


@pytest.mark.slow
def test_full_solver_agrees_with_reduced_system():
    h = Hyperparameters(1.0, 1.0, 2.0, 1, 1)
    cfg = SolverConfig(max_iters=2000)
    init = initial_state(InitialCondition.near_diagonal(), 1, 1)

    result = solve(h, np.eye(1), cfg, init)
    reduced = solve_binary_psb(1.0, 1.0, 2.0)

    assert result.settled
    assert result.state.m[0, 0] == pytest.approx(reduced.m, abs=0.02)
    assert result.state.q[0, 0] == pytest.approx(reduced.q, abs=0.02)


@pytest.mark.slow
def test_full_solver_psb_solution_lies_on_the_nishimori_line():
    h = Hyperparameters(1.2, 1.2, 2.0, 1, 1)
    cfg = SolverConfig(max_iters=2000)

    result = solve(h, np.eye(1), cfg, initial_state(InitialCondition.near_diagonal(), 1, 1))

    # Standard error of a single update's estimate of m − q at the reached point.
    z = np.random.default_rng(0).standard_normal(cfg.n_gaussian_samples)
    magnetization = np.tanh(result.state.m_hat[0, 0] + np.sqrt(result.state.q_hat[0, 0]) * z)
    stderr = np.std(magnetization - magnetization**2, ddof=1) / np.sqrt(cfg.n_gaussian_samples)
    assert result.settled
    assert result.state.m[0, 0] > 0.3
    assert abs(result.state.m[0, 0] - result.state.q[0, 0]) <= 4 * stderr
