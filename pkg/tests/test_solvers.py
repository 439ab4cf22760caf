import numpy as np
import pytest

from reqflow.frames import FrameTransform
from reqflow.interpolants import slerp_exp
from reqflow.quat import IDENTITY, exp_map, geodesic_distance, hamilton_product, matrix_to_quat, quat_to_matrix
from reqflow.solvers import (
    SolverConfig,
    SolverConfigError,
    euler_step_matrix,
    euler_step_quat_additive,
    euler_step_quat_exp,
    euler_step_translation,
    integrate_additive,
    integrate_batch,
    integrate_path,
    oracle_model,
)

from conftest import random_unit_quats

AXIS = np.array([2.0, 1.0, -2.0]) / 3.0


def oracle_problem(rng, n=64, phi=None):
    x0, x1 = rng.standard_normal((n, 3)), 3 * rng.standard_normal((n, 3))
    q0 = random_unit_quats(rng, n)
    if phi is None:
        q1 = random_unit_quats(rng, n)
    else:
        q1 = hamilton_product(q0, exp_map(phi * AXIS))
    return x0, q0, x1, q1


def test_translation_step_examples():
    np.testing.assert_array_equal(euler_step_translation([1.0, 2, 3], np.zeros(3), 0.1), [1, 2, 3])
    np.testing.assert_array_equal(euler_step_translation(np.zeros(3), [1.0, 0, 0], 0.1), [0.1, 0, 0])


def test_quat_exp_step_examples(rng):
    q = random_unit_quats(rng, 4)
    np.testing.assert_array_equal(euler_step_quat_exp(q, np.zeros((4, 3)), 0.01), q)
    np.testing.assert_allclose(euler_step_quat_exp(IDENTITY, [np.pi, 0, 0], 1.0), [0, 1, 0, 0], atol=1e-16)


def test_quat_exp_step_keeps_unit_norm(rng):
    q = random_unit_quats(rng, 100)
    for _ in range(200):
        q = euler_step_quat_exp(q, rng.uniform(-3, 3, (100, 3)), 0.05)
        assert np.max(np.abs(np.linalg.norm(q, axis=1) - 1)) < 1e-13


def test_quat_exp_norm_drift_over_long_chain(rng):
    q = random_unit_quats(rng, 8)
    for _ in range(10_000):
        q = euler_step_quat_exp(q, np.array([0.3, -1.0, 0.7]), 1e-2)
    assert np.max(np.abs(np.linalg.norm(q, axis=1) - 1)) < 1e-11


def test_additive_step_examples(rng):
    q = random_unit_quats(rng, 3)
    np.testing.assert_array_equal(euler_step_quat_additive(q, np.zeros((3, 4)), 0.1), q)
    eta = rng.standard_normal((3, 4))
    stepped = euler_step_quat_additive(q, eta, 0.1)
    assert np.all(np.abs(np.linalg.norm(stepped, axis=1) - 1) > 1e-6)
    renorm = euler_step_quat_additive(q, eta, 0.1, renormalize=True)
    np.testing.assert_allclose(np.linalg.norm(renorm, axis=1), 1, atol=1e-15)


def test_additive_solver_drifts_off_sphere():
    q1 = exp_map(np.pi / 2 * AXIS)
    path = integrate_additive(IDENTITY, q1, 10, renormalize=False)
    assert abs(np.linalg.norm(path[-1]) - 1) > 1e-6


def test_additive_solver_renormalized_tracks_geodesic():
    q1 = exp_map(np.pi / 2 * AXIS)
    path = integrate_additive(IDENTITY, q1, 1000, renormalize=True)
    ts = np.linspace(0, 1, 1001)
    assert np.max(geodesic_distance(path, slerp_exp(IDENTITY, q1, ts))) < 1e-3


def test_matrix_step_examples(rng):
    r = quat_to_matrix(random_unit_quats(rng, 1)[0])
    np.testing.assert_array_equal(euler_step_matrix(r, np.zeros(3), 0.1), r)


def test_matrix_solver_matches_quaternion_solver(rng):
    q = random_unit_quats(rng, 16)
    r = quat_to_matrix(q)
    omega = rng.uniform(-1.5, 1.5, (16, 3))
    for _ in range(100):
        q = euler_step_quat_exp(q, omega, 0.01)
        r = euler_step_matrix(r, omega, 0.01)
    assert np.max(geodesic_distance(q, matrix_to_quat(r))) < 1e-8


def test_matrix_orthogonality_drift_is_small(rng):
    # informational in spirit; the bound only guards against gross regressions
    r = quat_to_matrix(random_unit_quats(rng, 1)[0])
    for _ in range(10_000):
        r = euler_step_matrix(r, np.array([0.2, 0.9, -0.4]), 1e-2)
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-10


def test_oracle_one_step_is_exact(rng):
    x0, q0, x1, q1 = oracle_problem(rng)
    x, q = integrate_batch(oracle_model(x1, q1), x0, q0, SolverConfig(steps=1, scheduler_enabled=False))
    assert np.max(np.abs(x - x1)) < 1e-10
    assert np.max(geodesic_distance(q, q1)) < 1e-10


def test_oracle_many_steps_unscheduled(rng):
    x0, q0, x1, q1 = oracle_problem(rng)
    x, q = integrate_batch(oracle_model(x1, q1), x0, q0, SolverConfig(steps=500, scheduler_enabled=False))
    assert np.max(np.abs(x - x1)) < 1e-9
    assert np.max(geodesic_distance(q, q1)) < 1e-6


@pytest.mark.parametrize("phi", [0.5, 2.0, np.pi - 1e-3])
def test_oracle_scheduled_residual(phi, rng):
    x0, q0, x1, q1 = oracle_problem(rng, n=8, phi=phi)
    x, q = integrate_batch(oracle_model(x1, q1), x0, q0, SolverConfig(steps=500, gamma=10.0))
    assert np.max(geodesic_distance(q, q1)) < np.exp(-10) * phi + 1e-6
    assert np.max(np.abs(x - x1)) < 1e-9


def test_literal_mode_stalls(rng):
    x0, q0, x1, q1 = oracle_problem(rng, n=8, phi=2.0)
    cfg = SolverConfig(steps=500, gamma=10.0, rotation_mode="literal")
    _, q = integrate_batch(oracle_model(x1, q1), x0, q0, cfg)
    assert np.min(geodesic_distance(q, q1)) > 1e-2


def test_integrate_path_single_frame(rng):
    x1, q1 = np.array([1.0, -2.0, 0.5]), random_unit_quats(rng, 1)[0]
    out = integrate_path(oracle_model(x1, q1), FrameTransform(np.zeros(3), IDENTITY),
                         SolverConfig(steps=1, scheduler_enabled=False))
    np.testing.assert_allclose(out.trans, x1, atol=1e-12)
    assert geodesic_distance(out.rot, q1) < 1e-10


def test_integration_is_deterministic(rng):
    x0, q0, x1, q1 = oracle_problem(rng)
    cfg = SolverConfig(steps=50)
    a = integrate_batch(oracle_model(x1, q1), x0, q0, cfg)
    b = integrate_batch(oracle_model(x1, q1), x0, q0, cfg)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_return_path_and_partial_stop(rng):
    x0, q0, x1, q1 = oracle_problem(rng, n=4)
    cfg = SolverConfig(steps=10, scheduler_enabled=False)
    x, q, path = integrate_batch(oracle_model(x1, q1), x0, q0, cfg, return_path=True)
    assert len(path) == 11 and path[-1][0] == pytest.approx(1.0)
    xh, _ = integrate_batch(oracle_model(x1, q1), x0, q0, cfg, t_stop=0.5)
    np.testing.assert_allclose(xh, path[5][1])


@pytest.mark.parametrize("kwargs", [
    {"steps": 0},
    {"steps": 2000},
    {"steps": 2.5},
    {"gamma": 0.0},
    {"rotation_mode": "bogus"},
])
def test_config_validation(kwargs):
    with pytest.raises(SolverConfigError):
        SolverConfig(**kwargs)


def test_gamma_ignored_without_scheduler():
    assert SolverConfig(gamma=0.0, scheduler_enabled=False).dt == 1.0 / 500
