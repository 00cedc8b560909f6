import numpy as np
import pytest

from app.services.model_core import (
    ConfigParseError,
    CovarianceSpec,
    Dataset,
    DimensionMismatch,
    EnumerationCapExceeded,
    Hyperparameters,
    NonPSDCovariance,
    OrderParameterState,
    ParameterOutOfRange,
    PatternMatrix,
    PatternPrior,
    TeacherPrior,
    clamp_psd,
    spin_configurations,
    validate,
)


def test_spin_configurations_cover_every_sign_vector_once():
    table = spin_configurations(3)

    assert table.shape == (8, 3)
    assert len({tuple(row) for row in table}) == 8
    assert np.all(np.abs(table) == 1.0)
    assert not table.flags.writeable


def test_spin_configurations_respect_enumeration_cap():
    with pytest.raises(EnumerationCapExceeded):
        spin_configurations(21)


def test_validate_accepts_identity_configuration():
    h = Hyperparameters(beta_star=1.2, beta=1.2, alpha=1.0, p_star=2, p=3)

    checked = validate(h, CovarianceSpec.identity(2))

    np.testing.assert_array_equal(checked.q_matrix, np.eye(2))


def test_validate_collects_every_violation(caplog):
    h = Hyperparameters(beta_star=-1.0, beta=0.0, alpha=-0.5, p_star=2, p=2)

    with caplog.at_level("WARNING"):
        with pytest.raises(ParameterOutOfRange) as excinfo:
            validate(h, CovarianceSpec.uniform(2, 0.3))

    assert len(excinfo.value.violations) == 3
    assert "Configuration rejected" in caplog.text


def test_validate_rejects_out_of_range_correlation():
    h = Hyperparameters(1.0, 1.0, 1.0, 2, 2)

    with pytest.raises(ParameterOutOfRange):
        validate(h, CovarianceSpec.uniform(2, 1.5))


def test_validate_rejects_size_mismatch():
    h = Hyperparameters(1.0, 1.0, 1.0, 3, 2)

    with pytest.raises(DimensionMismatch):
        validate(h, CovarianceSpec.identity(2))


def test_validate_rejects_indefinite_explicit_covariance():
    h = Hyperparameters(1.0, 1.0, 1.0, 2, 2)

    with pytest.raises(NonPSDCovariance):
        validate(h, CovarianceSpec.explicit([[1.0, 2.0], [2.0, 1.0]]))


def test_validate_requires_unit_diagonal_for_binary_teacher():
    h = Hyperparameters(1.0, 1.0, 1.0, 2, 2, teacher_prior=TeacherPrior.BINARY_ARCSINE)

    with pytest.raises(ParameterOutOfRange):
        validate(h, CovarianceSpec.explicit([[2.0, 0.0], [0.0, 1.0]]))


def test_clamp_psd_zeroes_tiny_negative_eigenvalues():
    ones = np.ones((3, 3))
    perturbed = ones - 1e-13 * np.eye(3)

    clamped = clamp_psd(perturbed)

    assert np.linalg.eigvalsh(clamped)[0] > -1e-14


def test_order_parameter_state_symmetrizes_and_pins_diagonal():
    state = OrderParameterState(
        m=np.zeros((1, 2)),
        s=np.eye(2),
        q=np.array([[0.5, 0.2], [0.0, 0.5]]),
        m_hat=np.zeros((1, 2)),
        s_hat=np.array([[3.0, 0.1], [0.1, 3.0]]),
        q_hat=np.zeros((2, 2)),
    )

    assert state.q[0, 1] == pytest.approx(0.1)
    assert state.q[1, 0] == pytest.approx(0.1)
    np.testing.assert_array_equal(np.diag(state.s_hat), [0.0, 0.0])


def test_order_parameter_state_rejects_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        OrderParameterState(
            m=np.zeros((1, 2)),
            s=np.eye(3),
            q=np.zeros((2, 2)),
            m_hat=np.zeros((1, 2)),
            s_hat=np.zeros((2, 2)),
            q_hat=np.zeros((2, 2)),
        )


def test_permute_students_relabels_every_matrix():
    rng = np.random.default_rng(3)
    q = rng.normal(size=(3, 3))
    state = OrderParameterState(
        m=rng.normal(size=(2, 3)),
        s=np.eye(3),
        q=q + q.T,
        m_hat=rng.normal(size=(2, 3)),
        s_hat=np.zeros((3, 3)),
        q_hat=np.eye(3),
    )

    permuted = state.permute_students([2, 0, 1])

    np.testing.assert_array_equal(permuted.m[:, 0], state.m[:, 2])
    assert permuted.q[0, 1] == state.q[2, 0]
    np.testing.assert_array_equal(permuted.permute_students([1, 2, 0]).m, state.m)


def test_state_dict_round_trip_and_flat_columns():
    state = OrderParameterState.zeros(2, 3).evolve(m=np.arange(6.0).reshape(2, 3))

    restored = OrderParameterState.from_dict(state.to_dict())
    columns = state.flat()

    assert restored.max_abs_change(state) == 0.0
    assert columns["m_1_2"] == 5.0
    assert "s_2_2" in columns


def test_hyperparameters_round_trip():
    h = Hyperparameters(1.2, 0.8, 0.5, 2, 3)

    assert Hyperparameters.from_dict(h.to_dict()) == h
    assert h.with_alpha(2.0).alpha == 2.0


def test_pattern_matrix_rejects_non_binary_entries():
    with pytest.raises(ParameterOutOfRange):
        PatternMatrix(np.array([[1.0, 0.5]]), PatternPrior.BINARY)


def test_dataset_rejects_non_spin_entries():
    with pytest.raises(ParameterOutOfRange):
        Dataset(np.array([[1.0, 0.0]]))


def test_wishart_covariance_spec_is_deterministic():
    spec = CovarianceSpec.wishart(3, 0.4, seed=11)

    np.testing.assert_array_equal(spec.realize(), spec.realize())


def test_config_parse_error_is_reexported():
    assert issubclass(ConfigParseError, ValueError)
