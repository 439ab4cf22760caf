import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reqflow.quat import (
    IDENTITY,
    InvalidRotationMatrixError,
    NonUnitQuaternionError,
    align_hemisphere,
    angle_of,
    canonical,
    conjugate,
    exp_map,
    geodesic_distance,
    hamilton_product,
    inverse,
    log_map,
    mat_exp,
    mat_log,
    matrix_to_quat,
    normalize,
    quat_to_matrix,
    relative_rotation,
    rotate_vector,
)

from conftest import random_unit_quats

finite = st.floats(-10, 10, allow_nan=False)
quat_raw = arrays(np.float64, 4, elements=finite).filter(lambda q: np.linalg.norm(q) > 1e-3)
vec3 = arrays(np.float64, 3, elements=finite)


def test_hamilton_identity_and_basis():
    q = normalize(np.array([0.3, -0.2, 0.9, 0.1]))
    np.testing.assert_array_equal(hamilton_product(IDENTITY, q), q)
    np.testing.assert_array_equal(hamilton_product([0, 1, 0, 0], [0, 0, 1, 0]), [0, 0, 0, 1])
    # i² = j² = k² = ijk = -1
    for e in np.eye(4)[1:]:
        np.testing.assert_array_equal(hamilton_product(e, e), [-1, 0, 0, 0])
    ijk = hamilton_product(hamilton_product([0, 1, 0, 0], [0, 0, 1, 0]), [0, 0, 0, 1])
    np.testing.assert_array_equal(ijk, [-1, 0, 0, 0])


def test_hamilton_broadcasts(rng):
    a = random_unit_quats(rng, 6).reshape(2, 3, 4)
    b = random_unit_quats(rng, 3)
    out = hamilton_product(a, b)
    assert out.shape == (2, 3, 4)
    np.testing.assert_allclose(out[1, 2], hamilton_product(a[1, 2], b[2]))


def test_product_with_inverse_is_identity(rng):
    q = random_unit_quats(rng, 1000)
    np.testing.assert_allclose(hamilton_product(q, inverse(q)), np.tile(IDENTITY, (1000, 1)), atol=1e-15)


def test_inverse_examples(rng):
    np.testing.assert_array_equal(inverse(IDENTITY), IDENTITY)
    np.testing.assert_array_equal(inverse([0.0, 1.0, 0.0, 0.0]), [0, -1, 0, 0])
    q = random_unit_quats(rng, 50)
    np.testing.assert_array_equal(inverse(inverse(q)), q)


def test_inverse_rejects_non_unit():
    with pytest.raises(NonUnitQuaternionError):
        inverse(np.array([2.0, 0.0, 0.0, 0.0]))


@given(quat_raw)
def test_normalize_gives_unit(q):
    assert abs(np.linalg.norm(normalize(q)) - 1.0) < 1e-12


def test_exp_map_examples():
    np.testing.assert_array_equal(exp_map(np.zeros(3)), IDENTITY)
    np.testing.assert_allclose(exp_map([np.pi, 0, 0]), [0, 1, 0, 0], atol=1e-16)
    h = np.sqrt(2) / 2
    np.testing.assert_allclose(exp_map([np.pi / 2, 0, 0]), [h, h, 0, 0], atol=1e-16)


def test_log_map_examples():
    np.testing.assert_array_equal(log_map(IDENTITY), np.zeros(3))
    np.testing.assert_allclose(log_map([0.0, 1.0, 0.0, 0.0]), [np.pi, 0, 0])
    # the two covers of one rotation give one rotation vector
    q = exp_map(np.array([0.4, -1.1, 0.3]))
    np.testing.assert_allclose(log_map(-q), log_map(q), atol=1e-15)


def test_exp_log_roundtrip_many(rng):
    q = random_unit_quats(rng, 10_000)
    back = exp_map(log_map(q))
    assert np.max(geodesic_distance(q, back)) <= 1e-10
    assert np.max(np.linalg.norm(log_map(q), axis=1)) <= np.pi + 1e-15


@pytest.mark.parametrize("phi", [0.0, 1e-300, 1e-12, 1e-9, 5e-9, 2e-8, 1e-4, 1.0, np.pi - 1e-9, np.pi])
def test_exp_log_across_branch_boundary(phi):
    omega = phi * np.array([2.0, -1.0, 2.0]) / 3.0
    np.testing.assert_allclose(log_map(exp_map(omega)), omega, rtol=1e-12, atol=1e-300)
    assert abs(np.linalg.norm(exp_map(omega)) - 1) < 1e-15


def test_exp_map_taylor_branch_is_continuous():
    # Taylor branch just below the cutoff and exact branch just above agree
    u = np.array([0.0, 0.6, 0.8])
    lo, hi = exp_map((1e-8 * (1 - 1e-9)) * u), exp_map((1e-8 * (1 + 1e-9)) * u)
    np.testing.assert_allclose(lo, hi, rtol=1e-8, atol=1e-20)


def test_rotate_vector_examples(rng):
    np.testing.assert_allclose(rotate_vector([0, 0, 0, 1.0], [1.0, 0, 0]), [-1, 0, 0], atol=1e-15)
    v = rng.standard_normal(3)
    np.testing.assert_array_equal(rotate_vector(IDENTITY, v), v)


@given(quat_raw, vec3)
def test_double_cover_rotation(q, v):
    q = normalize(q)
    np.testing.assert_allclose(rotate_vector(q, v), rotate_vector(-q, v), atol=1e-12)


def test_matrix_examples(rng):
    np.testing.assert_array_equal(quat_to_matrix(IDENTITY), np.eye(3))
    np.testing.assert_allclose(quat_to_matrix([0, 1.0, 0, 0]), np.diag([1.0, -1, -1]))
    np.testing.assert_array_equal(matrix_to_quat(np.eye(3)), IDENTITY)
    np.testing.assert_allclose(matrix_to_quat(np.diag([1.0, -1, -1])), [0, 1, 0, 0])
    q = random_unit_quats(rng, 200)
    v = rng.standard_normal((200, 3))
    np.testing.assert_allclose(np.einsum("nij,nj->ni", quat_to_matrix(q), v), rotate_vector(q, v), atol=1e-10)


def test_matrix_is_rotation(rng):
    r = quat_to_matrix(random_unit_quats(rng, 500))
    np.testing.assert_allclose(np.swapaxes(r, 1, 2) @ r, np.broadcast_to(np.eye(3), r.shape), atol=1e-9)
    np.testing.assert_allclose(np.linalg.det(r), 1.0, atol=1e-9)


def test_matrix_quat_roundtrip_many(rng):
    q = random_unit_quats(rng, 10_000)
    r = quat_to_matrix(q)
    back = quat_to_matrix(matrix_to_quat(r))
    assert np.max(np.abs(back - r)) <= 1e-9
    assert np.all(matrix_to_quat(r)[:, 0] >= 0)


def test_matrix_to_quat_rejects_non_rotation():
    with pytest.raises(InvalidRotationMatrixError):
        matrix_to_quat(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(InvalidRotationMatrixError):
        matrix_to_quat(2 * np.eye(3))


def test_mat_exp_examples():
    np.testing.assert_array_equal(mat_exp(np.zeros(3)), np.eye(3))
    np.testing.assert_allclose(mat_exp([np.pi / 2, 0, 0]) @ [0, 1.0, 0], [0, 0, 1], atol=1e-15)
    np.testing.assert_array_equal(mat_log(np.eye(3)), np.zeros(3))


def test_mat_exp_matches_quaternion(rng):
    omega = rng.uniform(-2, 2, (100, 3))
    np.testing.assert_allclose(mat_exp(omega), quat_to_matrix(exp_map(omega)), atol=1e-14)


def test_naive_mat_log_degrades_near_pi():
    omega = (np.pi - 1e-6) * np.array([1.0, 2.0, 2.0]) / 3.0
    quat_err = np.linalg.norm(omega - log_map(exp_map(omega)))
    mat_err = np.linalg.norm(omega - mat_log(mat_exp(omega)))
    assert mat_err > 1e3 * max(quat_err, 1e-16)


def test_align_hemisphere_examples(rng):
    q = random_unit_quats(rng, 1)[0]
    np.testing.assert_array_equal(align_hemisphere(q, q), q)
    np.testing.assert_array_equal(align_hemisphere(q, -q), q)
    a, b = random_unit_quats(rng, 500), random_unit_quats(rng, 500)
    aligned = align_hemisphere(a, b)
    assert np.all(np.sum(a * aligned, axis=1) >= 0)
    assert np.all(np.linalg.norm(a - aligned, axis=1) <= np.linalg.norm(a + aligned, axis=1) + 1e-15)


def test_relative_rotation_nonnegative_scalar(rng):
    a, b = random_unit_quats(rng, 500), random_unit_quats(rng, 500)
    assert np.all(relative_rotation(a, b)[:, 0] >= 0)


def test_geodesic_distance_examples(rng):
    q = random_unit_quats(rng, 300)
    np.testing.assert_array_equal(geodesic_distance(q, q), 0.0)
    assert geodesic_distance(IDENTITY, np.array([0, 1.0, 0, 0])) == pytest.approx(np.pi)
    p = random_unit_quats(rng, 300)
    np.testing.assert_allclose(geodesic_distance(q, p), geodesic_distance(p, q), atol=1e-12)
    np.testing.assert_allclose(geodesic_distance(q, p), geodesic_distance(q, -p), atol=0)


def test_angle_and_canonical(rng):
    q = random_unit_quats(rng, 100)
    np.testing.assert_allclose(angle_of(q), np.linalg.norm(log_map(q), axis=1), atol=1e-14)
    c = canonical(q)
    assert np.all(c[:, 0] >= 0)
    np.testing.assert_array_equal(np.abs(c), np.abs(q))
    np.testing.assert_array_equal(conjugate(conjugate(q)), q)
