import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reqflow.interpolants import (
    SchedulerConfig,
    TimeTooCloseToOneError,
    additive_velocity,
    angular_velocity,
    endpoint_velocities,
    kappa,
    lerp_translation,
    make_interpolant,
    matrix_geodesic,
    scheduled_angular_velocity,
    scheduled_slerp,
    slerp_additive,
    slerp_additive_normalized,
    slerp_exp,
)
from reqflow.quat import IDENTITY, exp_map, geodesic_distance, hamilton_product, matrix_to_quat, quat_to_matrix

from conftest import random_unit_quats

H = np.sqrt(2) / 2
AXIS = np.array([1.0, -2.0, 2.0]) / 3.0


def test_lerp_examples():
    x0, x1 = np.array([1.0, 2, 3]), np.array([-1.0, 0, 5])
    xt, v = lerp_translation(x0, x1, 0.0)
    np.testing.assert_array_equal(xt, x0)
    np.testing.assert_array_equal(v, x1 - x0)
    xt, _ = lerp_translation(x0, x1, 1.0)
    np.testing.assert_array_equal(xt, x1)
    xt, _ = lerp_translation(np.zeros(3), [2.0, 0, 0], 0.25)
    np.testing.assert_array_equal(xt, [0.5, 0, 0])


def test_lerp_per_row_times():
    x0, x1 = np.zeros((3, 3)), np.ones((3, 3))
    xt, _ = lerp_translation(x0, x1, np.array([0.0, 0.5, 1.0]))
    np.testing.assert_array_equal(xt[:, 0], [0, 0.5, 1])


def test_slerp_exp_endpoints(rng):
    q0, q1 = random_unit_quats(rng, 200), random_unit_quats(rng, 200)
    np.testing.assert_allclose(slerp_exp(q0, q1, 0.0), q0, atol=1e-15)
    assert np.max(geodesic_distance(slerp_exp(q0, q1, 1.0), q1)) < 1e-7


def test_slerp_exp_half_pi_rotation():
    np.testing.assert_allclose(slerp_exp(IDENTITY, [0, 1.0, 0, 0], 0.5), [H, H, 0, 0], atol=1e-15)


@given(st.floats(0, 1))
def test_slerp_exp_equal_inputs_stay_put(t):
    q = exp_map(0.7 * AXIS)
    out = slerp_exp(q, q, t)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, q, atol=1e-15)
    assert np.all(np.isfinite(slerp_exp(q, -q, t)))


def test_slerp_additive_examples():
    assert not np.all(np.isfinite(slerp_additive(IDENTITY, IDENTITY, 0.5)))
    q1 = exp_map(np.pi / 2 * AXIS)
    np.testing.assert_allclose(slerp_additive(IDENTITY, q1, 0.0), IDENTITY, atol=1e-12)


def test_additive_nonfinite_below_threshold():
    # float64 loses the angle entirely once cos(phi/2) rounds to 1
    for phi in (0.0, 1e-12, 1e-9):
        q1 = exp_map(phi * AXIS)
        assert not np.all(np.isfinite(slerp_additive(IDENTITY, q1, 0.5)))
        assert np.all(np.isfinite(slerp_exp(IDENTITY, q1, 0.5)))


def test_additive_normalized_wrapper_is_unit(rng):
    q0, q1 = random_unit_quats(rng, 50), random_unit_quats(rng, 50)
    np.testing.assert_allclose(np.linalg.norm(slerp_additive_normalized(q0, q1, 0.3), axis=1), 1, atol=1e-12)


def test_additive_velocity_matches_difference_quotient():
    q1 = exp_map(1.2 * AXIS)
    h = 1e-6
    for t in (0.1, 0.5, 0.9):
        fd = (slerp_additive(IDENTITY, q1, t + h) - slerp_additive(IDENTITY, q1, t - h)) / (2 * h)
        np.testing.assert_allclose(additive_velocity(IDENTITY, q1, t), fd, atol=1e-8)


def test_matrix_geodesic_endpoints(rng):
    r0 = quat_to_matrix(random_unit_quats(rng, 50))
    rel = quat_to_matrix(exp_map(rng.uniform(-1, 1, (50, 3))))
    r1 = r0 @ rel
    np.testing.assert_allclose(matrix_geodesic(r0, r1, 0.0), r0, atol=1e-12)
    np.testing.assert_allclose(matrix_geodesic(r0, r1, 1.0), r1, atol=1e-9)


@pytest.mark.parametrize("phi", [1e-3, 0.1, 1.0, 2.0, 3.0, np.pi - 1e-2])
def test_three_interpolants_share_the_path(phi, rng):
    q0 = random_unit_quats(rng, 10)
    q1 = hamilton_product(q0, exp_map(phi * AXIS))
    for t in np.linspace(0, 1, 11):
        ref = slerp_exp(q0, q1, t)
        add = slerp_additive_normalized(q0, q1, t)
        mat = matrix_to_quat(matrix_geodesic(quat_to_matrix(q0), quat_to_matrix(q1), t))
        assert np.max(geodesic_distance(ref, add)) < 1e-8
        assert np.max(geodesic_distance(ref, mat)) < 1e-8


def test_angular_velocity_examples(rng):
    q = random_unit_quats(rng, 20)
    np.testing.assert_array_equal(angular_velocity(q, q), np.zeros((20, 3)))
    np.testing.assert_allclose(angular_velocity(IDENTITY, [0, 1.0, 0, 0]), [np.pi, 0, 0])
    q1 = random_unit_quats(rng, 20)
    np.testing.assert_allclose(angular_velocity(q, q1), angular_velocity(q, -q1), atol=1e-15)
    assert np.all(np.linalg.norm(angular_velocity(q, q1), axis=1) <= np.pi + 1e-12)


def test_scheduled_slerp_start_and_residual():
    cfg = SchedulerConfig(gamma=10.0)
    q1 = np.array([0.0, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(scheduled_slerp(IDENTITY, q1, 0.0, cfg), IDENTITY)
    residual = geodesic_distance(scheduled_slerp(IDENTITY, q1, 1.0, cfg), q1)
    assert residual == pytest.approx(np.pi * np.exp(-10), rel=1e-9)
    assert residual == pytest.approx(1.42628e-4, abs=1e-9)


def test_kappa_strictly_increasing():
    t = np.linspace(0, 1, 1001)
    assert np.all(np.diff(kappa(t, SchedulerConfig())) > 0)


def test_scheduler_config_validation():
    for bad in (0.0, -1.0, np.inf, np.nan):
        with pytest.raises(ValueError):
            SchedulerConfig(gamma=bad)


def test_scheduled_velocity_examples():
    cfg = SchedulerConfig(gamma=10.0)
    omega = np.array([0.3, -0.2, 0.5])
    np.testing.assert_allclose(scheduled_angular_velocity(omega, 0.0, cfg), 10 * omega)
    np.testing.assert_array_equal(scheduled_angular_velocity(np.zeros(3), 0.4, cfg), np.zeros(3))


def test_scheduled_velocity_is_derivative_of_kappa():
    cfg = SchedulerConfig(gamma=10.0)
    phi, h = 2.5, 1e-6
    omega = phi * AXIS
    for t in np.linspace(0.05, 0.95, 19):
        fd = (kappa(t + h, cfg) - kappa(t - h, cfg)) * phi / (2 * h)
        assert abs(fd - np.linalg.norm(scheduled_angular_velocity(omega, t, cfg))) < 1e-5


def test_scheduled_velocity_integrates_to_kappa():
    from scipy.integrate import quad

    cfg = SchedulerConfig(gamma=10.0)
    omega = np.array([0.4, 0.1, -0.9])
    for t in (0.1, 0.5, 1.0):
        got = [quad(lambda s: scheduled_angular_velocity(omega, s, cfg)[i], 0, t)[0] for i in range(3)]
        np.testing.assert_allclose(got, kappa(t, cfg) * omega, atol=1e-6)


def test_endpoint_velocities_examples(rng):
    q0, q1 = random_unit_quats(rng, 5), random_unit_quats(rng, 5)
    x = rng.standard_normal((5, 3))
    _, omega = endpoint_velocities(x, q0, x, q1, 0.0)
    np.testing.assert_allclose(omega, angular_velocity(q0, q1))
    v, _ = endpoint_velocities(x, q0, x, q1, 0.7)
    np.testing.assert_array_equal(v, 0.0)
    x1 = x + 1.5
    v, _ = endpoint_velocities(x, q0, x1, q1, 0.5)
    np.testing.assert_allclose(v, 2 * (x1 - x))


def test_endpoint_velocities_floor():
    with pytest.raises(TimeTooCloseToOneError):
        endpoint_velocities(np.zeros(3), IDENTITY, np.ones(3), IDENTITY, 1.0)
    with pytest.raises(TimeTooCloseToOneError):
        endpoint_velocities(np.zeros(3), IDENTITY, np.ones(3), IDENTITY, 1 - 1e-4)


def test_make_interpolant_fields(rng):
    q0, q1 = random_unit_quats(rng, 2)
    s = make_interpolant(np.zeros(3), q0, np.ones(3), q1, 0.25)
    assert abs(np.linalg.norm(s.q_t) - 1) < 1e-14
    np.testing.assert_allclose(s.x_t, 0.25)
    assert np.linalg.norm(s.omega_target) <= np.pi
