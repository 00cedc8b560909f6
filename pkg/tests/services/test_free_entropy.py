import numpy as np
import pytest

from app.services.free_entropy import coupling_term, free_entropy, free_entropy_difference
from app.services.model_core import Hyperparameters, OrderParameterState, StudentPrior, TeacherPrior
from app.services.saddle_solver import InitialCondition, initial_state


def test_zero_load_paramagnet_counts_student_patterns():
    h = Hyperparameters(1.0, 1.0, 0.0, 2, 3)

    estimate = free_entropy(OrderParameterState.zeros(2, 3), h, np.eye(2), n_gaussian_samples=200)

    assert estimate.value == pytest.approx(3 * np.log(2.0), abs=1e-12)
    assert estimate.stderr == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("alpha", [0.5, 2.0])
def test_paramagnet_is_independent_of_load(alpha):
    h = Hyperparameters(1.3, 0.9, alpha, 2, 2)

    estimate = free_entropy(OrderParameterState.zeros(2, 2), h, np.eye(2), n_gaussian_samples=200)

    assert estimate.value == pytest.approx(2 * np.log(2.0), abs=1e-10)
    assert estimate.terms["log_z_m"] == pytest.approx(0.81 + 2 * np.log(2.0))


def test_gaussian_students_at_zero_load_have_zero_free_entropy():
    h = Hyperparameters(1.0, 1.0, 0.0, 1, 2, student_prior=StudentPrior.STANDARD_GAUSSIAN)

    estimate = free_entropy(OrderParameterState.zeros(1, 2), h, np.eye(1), n_gaussian_samples=200)

    assert estimate.value == pytest.approx(0.0, abs=1e-12)


def test_coupling_term():
    state = OrderParameterState(
        m=np.array([[0.5]]),
        s=np.eye(1),
        q=np.array([[0.4]]),
        m_hat=np.array([[2.0]]),
        s_hat=np.zeros((1, 1)),
        q_hat=np.array([[1.0]]),
    )

    assert coupling_term(state) == pytest.approx(-1.0 + 0.2)


def test_difference_of_a_state_with_itself_vanishes():
    h = Hyperparameters(1.0, 1.0, 1.5, 1, 2)
    state = initial_state(InitialCondition.near_diagonal(), 1, 2).evolve(
        m_hat=np.array([[0.8, 0.1]]), q_hat=np.diag([0.6, 0.2])
    )

    estimate = free_entropy_difference(state, state, h, np.eye(1), n_gaussian_samples=400)

    assert estimate.value == 0.0
    assert estimate.stderr == 0.0
    assert estimate.terms["first"] == estimate.terms["second"]


def test_common_noise_makes_estimates_reproducible():
    h = Hyperparameters(1.0, 1.0, 1.0, 2, 2, teacher_prior=TeacherPrior.GAUSSIAN)
    state = initial_state(InitialCondition.near_diagonal(), 2, 2).evolve(q_hat=0.3 * np.eye(2))

    first = free_entropy(state, h, np.eye(2), n_gaussian_samples=400, rng=np.random.default_rng(5))
    second = free_entropy(state, h, np.eye(2), n_gaussian_samples=400, rng=np.random.default_rng(5))

    assert first.value == second.value
    assert np.isfinite(first.value)
    assert first.stderr > 0.0
