"""Quaternion and rotation-representation algebra.

Conventions
-----------
- Quaternions are stored scalar-first, ``[s, x, y, z]``, as float arrays whose
  last axis has length 4. Every function broadcasts over leading axes.
- Axis-angle vectors ``omega = phi * u`` have length-3 last axis, with the
  angle ``phi`` in radians.
- ``exp_map(omega)`` returns ``[cos(phi/2), sin(phi/2) u]`` and ``log_map``
  is its inverse, returning the full rotation vector ``phi * u`` (i.e. twice
  the quaternion logarithm).
- The matrix routines ``mat_exp``/``mat_log`` are kept in the plain textbook
  form on purpose: ``mat_log`` recovers the angle from the trace with
  ``arccos``, which degrades near ``phi = pi``. The round-trip benchmark
  measures exactly that degradation.
"""

from __future__ import annotations

import numpy as np

# Below this angle exp/log switch to their Taylor expansions.
SMALL_ANGLE = 1e-8
UNIT_TOL = 1e-6
ORTHO_TOL = 1e-6

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


class NonUnitQuaternionError(ValueError):
    pass


class InvalidRotationMatrixError(ValueError):
    pass


def _check_unit(q: np.ndarray) -> None:
    norm = np.linalg.norm(q, axis=-1)
    if not np.all(np.abs(norm - 1.0) <= UNIT_TOL):
        worst = float(np.max(np.abs(norm - 1.0)))
        raise NonUnitQuaternionError(f"expected unit quaternion, |norm - 1| = {worst:.3e}")


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def hamilton_product(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Quaternion product ``q1 ⊗ q2`` for arbitrary (not necessarily unit) inputs."""
    q1 = np.asarray(q1)
    q2 = np.asarray(q2)
    s1, u1 = q1[..., :1], q1[..., 1:]
    s2, u2 = q2[..., :1], q2[..., 1:]
    s = s1 * s2 - np.sum(u1 * u2, axis=-1, keepdims=True)
    u = s1 * u2 + s2 * u1 + np.cross(u1, u2)
    return np.concatenate([s, u], axis=-1)


def conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q)
    return np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)


def inverse(q: np.ndarray) -> np.ndarray:
    """Inverse of a unit quaternion; raises on non-unit input."""
    q = np.asarray(q)
    _check_unit(q)
    return conjugate(q)


def exp_map(omega: np.ndarray) -> np.ndarray:
    """Rotation vector ``phi * u`` -> unit quaternion ``[cos(phi/2), sin(phi/2) u]``."""
    omega = np.asarray(omega)
    phi = np.linalg.norm(omega, axis=-1, keepdims=True)
    small = phi < SMALL_ANGLE
    safe_phi = np.where(small, 1.0, phi)
    # sin(phi/2)/phi, with its Taylor expansion near zero
    scale = np.where(small, 0.5 - phi * phi / 48.0, np.sin(phi / 2) / safe_phi)
    return np.concatenate([np.cos(phi / 2), scale * omega], axis=-1)


def log_map(q: np.ndarray) -> np.ndarray:
    """Unit quaternion -> rotation vector with angle in ``[0, pi]``.

    The angle is ``2 * atan2(|u|, s)`` after moving ``q`` to the ``s >= 0``
    hemisphere, which keeps full precision near both 0 and pi.
    """
    q = np.asarray(q)
    q = np.where(q[..., :1] < 0, -q, q)
    s, w = q[..., :1], q[..., 1:]
    n = np.linalg.norm(w, axis=-1, keepdims=True)
    phi = 2.0 * np.arctan2(n, s)
    small = phi < SMALL_ANGLE
    safe_n = np.where(small, 1.0, n)
    safe_s = np.where(small, s, 1.0)
    scale = np.where(small, 2.0 / safe_s * (1.0 - n * n / (3.0 * safe_s * safe_s)), phi / safe_n)
    return scale * w


def log_map_vjp(q: np.ndarray, grad_omega: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. ``log_map(q)`` back to ``q``.

    ``q`` must already be in the ``s >= 0`` hemisphere (the caller owns the
    sign flip). Uses the same small-angle branch as the forward map.
    """
    s, w = q[..., :1], q[..., 1:]
    n = np.linalg.norm(w, axis=-1, keepdims=True)
    phi = 2.0 * np.arctan2(n, s)
    r2 = n * n + s * s
    small = phi < SMALL_ANGLE
    safe_n = np.where(small, 1.0, n)
    safe_s = np.where(small, s, 1.0)

    # omega = g(s, n) * w
    g = np.where(small, 2.0 / safe_s * (1.0 - n * n / (3.0 * safe_s**2)), phi / safe_n)
    dg_ds = np.where(small, -2.0 / safe_s**2 + 2.0 * n * n / safe_s**4, -2.0 / r2)
    # (dg/dn) / n, which stays finite on both branches
    dg_dn_over_n = np.where(
        small,
        -4.0 / (3.0 * safe_s**3),
        (2.0 * s * n / r2 - phi) / (safe_n * safe_n * safe_n),
    )
    gw = np.sum(grad_omega * w, axis=-1, keepdims=True)
    grad_s = dg_ds * gw
    grad_w = g * grad_omega + dg_dn_over_n * gw * w
    return np.concatenate([grad_s, grad_w], axis=-1)


def rotate_vector(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``Im(q ⊗ [0, v] ⊗ q^-1)``."""
    q = np.asarray(q)
    v = np.asarray(v)
    pure = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
    return hamilton_product(hamilton_product(q, pure), conjugate(q))[..., 1:]


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q)
    s, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - s * z)
    r[..., 0, 2] = 2 * (x * z + s * y)
    r[..., 1, 0] = 2 * (x * y + s * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - s * x)
    r[..., 2, 0] = 2 * (x * z - s * y)
    r[..., 2, 1] = 2 * (y * z + s * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def check_rotation_matrix(r: np.ndarray, tol: float = ORTHO_TOL) -> None:
    r = np.asarray(r)
    eye = np.eye(3)
    ortho = np.max(np.abs(np.swapaxes(r, -1, -2) @ r - eye))
    det = np.max(np.abs(np.linalg.det(r) - 1.0))
    if ortho > tol or det > tol:
        raise InvalidRotationMatrixError(
            f"not a rotation matrix: max|RᵀR - I| = {ortho:.3e}, max|det - 1| = {det:.3e}"
        )


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion with ``s >= 0``.

    Shepperd's method: pick whichever of ``s, x, y, z`` has the largest
    magnitude and derive the rest from off-diagonal sums/differences.
    """
    r = np.asarray(r, dtype=float)
    check_rotation_matrix(r)
    flat = r.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, m in enumerate(flat):
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        k = int(np.argmax([tr, m[0, 0], m[1, 1], m[2, 2]]))
        if k == 0:
            t = np.sqrt(1.0 + tr) * 2
            q = [0.25 * t, (m[2, 1] - m[1, 2]) / t, (m[0, 2] - m[2, 0]) / t, (m[1, 0] - m[0, 1]) / t]
        elif k == 1:
            t = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = [(m[2, 1] - m[1, 2]) / t, 0.25 * t, (m[0, 1] + m[1, 0]) / t, (m[0, 2] + m[2, 0]) / t]
        elif k == 2:
            t = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q = [(m[0, 2] - m[2, 0]) / t, (m[0, 1] + m[1, 0]) / t, 0.25 * t, (m[1, 2] + m[2, 1]) / t]
        else:
            t = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q = [(m[1, 0] - m[0, 1]) / t, (m[0, 2] + m[2, 0]) / t, (m[1, 2] + m[2, 1]) / t, 0.25 * t]
        q = np.asarray(q)
        out[i] = normalize(-q if q[0] < 0 else q)
    return out.reshape(r.shape[:-2] + (4,))


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack(
        [np.stack([z, -w, y], -1), np.stack([w, z, -x], -1), np.stack([-y, x, z], -1)], -2
    )


def mat_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues' formula ``I + sin(phi) K + (1 - cos(phi)) K²`` with unit-axis ``K``."""
    omega = np.asarray(omega, dtype=float)
    phi = np.linalg.norm(omega, axis=-1)[..., None, None]
    safe = np.where(phi > 0, phi, 1.0)
    k = skew(omega) / safe
    return np.eye(3) + np.sin(phi) * k + (1.0 - np.cos(phi)) * (k @ k)


def mat_log(r: np.ndarray) -> np.ndarray:
    """Naive matrix logarithm: ``phi = arccos((tr - 1)/2)``, axis from ``(R - Rᵀ)/(2 sin phi)``.

    No special handling near pi; the loss of precision there is measured,
    not avoided. Returns the zero vector for ``phi == 0``.
    """
    r = np.asarray(r, dtype=float)
    tr = np.trace(r, axis1=-2, axis2=-1)
    phi = np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))
    vee = np.stack(
        [r[..., 2, 1] - r[..., 1, 2], r[..., 0, 2] - r[..., 2, 0], r[..., 1, 0] - r[..., 0, 1]],
        axis=-1,
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        omega = phi[..., None] * vee / (2.0 * np.sin(phi))[..., None]
    return np.where((phi == 0)[..., None], 0.0, omega)


def align_hemisphere(q0: np.ndarray, q1: np.ndarray) -> np.ndarray:
    """Return ``q1`` or ``-q1``, whichever has non-negative inner product with ``q0``."""
    q0 = np.asarray(q0)
    q1 = np.asarray(q1)
    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    return np.where(dot < 0, -q1, q1)


def relative_rotation(q0: np.ndarray, q1: np.ndarray) -> np.ndarray:
    """``q0^-1 ⊗ align(q0, q1)``; lies in the ``s >= 0`` hemisphere."""
    return hamilton_product(conjugate(q0), align_hemisphere(q0, q1))


def geodesic_distance(q0: np.ndarray, q1: np.ndarray) -> np.ndarray:
    """Rotation angle in ``[0, pi]`` taking ``q0`` to ``q1``."""
    rel = relative_rotation(q0, q1)
    n = np.linalg.norm(rel[..., 1:], axis=-1)
    return 2.0 * np.arctan2(n, np.abs(rel[..., 0]))


def angle_of(q: np.ndarray) -> np.ndarray:
    """Rotation angle of ``q`` measured from the identity."""
    q = np.asarray(q)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


def canonical(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q)
    return np.where(q[..., :1] < 0, -q, q)
