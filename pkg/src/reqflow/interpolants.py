"""Translation and rotation interpolants, their velocities, and the step scheduler.

Three rotation interpolants are provided so they can be compared:

- ``slerp_exp``: ``q0 ⊗ exp(t log(q0^-1 ⊗ q1))``, the quaternion route.
- ``slerp_additive``: sine-weighted blend of ``q0`` and ``q1``. It divides by
  ``sin(phi/2)`` with no guard and returns an unnormalized 4-vector, so both
  its small-angle failure and its norm drift stay observable.
- ``matrix_geodesic``: ``R0 mat_exp(t mat_log(R0ᵀ R1))`` with the naive matrix log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quat import (
    align_hemisphere,
    exp_map,
    hamilton_product,
    log_map,
    mat_exp,
    mat_log,
    relative_rotation,
)

T_MIN = 0.01
# Smallest 1 - t allowed in the endpoint-to-velocity conversion.
T_FLOOR = 1e-3


class TimeTooCloseToOneError(ValueError):
    pass


@dataclass(frozen=True)
class SchedulerConfig:
    gamma: float = 10.0

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be finite and > 0, got {self.gamma}")


@dataclass(frozen=True)
class InterpolantSample:
    x_t: np.ndarray
    q_t: np.ndarray
    t: float
    v_target: np.ndarray
    omega_target: np.ndarray


def lerp_translation(x0, x1, t):
    """Straight line ``(1-t) x0 + t x1`` and its constant velocity ``x1 - x0``."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    t = np.asarray(t, dtype=float)[..., None] if np.ndim(t) else t
    return (1 - t) * x0 + t * x1, x1 - x0


def angular_velocity(q0, q1) -> np.ndarray:
    """Constant angular velocity ``2 log(q0^-1 ⊗ align(q0, q1))`` of the geodesic."""
    return log_map(relative_rotation(q0, q1))


def slerp_exp(q0, q1, t) -> np.ndarray:
    q0 = np.asarray(q0)
    t = np.asarray(t, dtype=float)[..., None] if np.ndim(t) else t
    return hamilton_product(q0, exp_map(t * angular_velocity(q0, q1)))


def kappa(t, cfg: SchedulerConfig):
    """Scheduled interpolation fraction ``1 - exp(-gamma t)``."""
    return -np.expm1(-cfg.gamma * np.asarray(t, dtype=float))


def scheduled_slerp(q0, q1, t, cfg: SchedulerConfig) -> np.ndarray:
    """Exponentially accelerated SLERP; at ``t = 1`` it stops ``exp(-gamma) phi`` short of ``q1``."""
    k = kappa(t, cfg)
    k = k[..., None] if np.ndim(k) else k
    return hamilton_product(np.asarray(q0), exp_map(k * angular_velocity(q0, q1)))


def scheduled_angular_velocity(omega, t, cfg: SchedulerConfig) -> np.ndarray:
    """Instantaneous angular velocity ``gamma exp(-gamma t) omega`` along ``scheduled_slerp``."""
    rate = cfg.gamma * np.exp(-cfg.gamma * np.asarray(t, dtype=float))
    rate = rate[..., None] if np.ndim(rate) else rate
    return rate * np.asarray(omega)


def _additive_angle(q0, q1):
    # full rotation angle recovered the way the additive scheme does it
    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    return 2 * np.arccos(np.clip(dot, -1, 1))


def slerp_additive(q0, q1, t) -> np.ndarray:
    """``sin((1-t)phi/2)/sin(phi/2) q0 + sin(t phi/2)/sin(phi/2) q1``, unguarded and unnormalized.

    Non-finite output when ``q0`` and ``q1`` coincide to working precision.
    Computation happens in the dtype of ``q0``.
    """
    q0 = np.asarray(q0)
    q1 = align_hemisphere(q0, np.asarray(q1, dtype=q0.dtype))
    phi = _additive_angle(q0, q1)
    t = np.asarray(t, dtype=q0.dtype)
    t = t[..., None] if t.ndim else t
    half = np.sin(phi / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sin((1 - t) * phi / 2) / half * q0 + np.sin(t * phi / 2) / half * q1


def slerp_additive_normalized(q0, q1, t) -> np.ndarray:
    q = slerp_additive(q0, q1, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        return q / np.linalg.norm(q, axis=-1, keepdims=True)


def additive_velocity(q0, q1, t) -> np.ndarray:
    """Time derivative of ``slerp_additive``:
    ``phi (cos(t phi/2) q1 - cos((1-t) phi/2) q0) / (2 sin(phi/2))``."""
    q0 = np.asarray(q0)
    q1 = align_hemisphere(q0, np.asarray(q1, dtype=q0.dtype))
    phi = _additive_angle(q0, q1)
    t = np.asarray(t, dtype=q0.dtype)
    t = t[..., None] if t.ndim else t
    with np.errstate(divide="ignore", invalid="ignore"):
        return phi * (np.cos(t * phi / 2) * q1 - np.cos((1 - t) * phi / 2) * q0) / (2 * np.sin(phi / 2))


def matrix_geodesic(r0, r1, t) -> np.ndarray:
    r0 = np.asarray(r0, dtype=float)
    r1 = np.asarray(r1, dtype=float)
    t = np.asarray(t, dtype=float)[..., None] if np.ndim(t) else t
    rel = np.swapaxes(r0, -1, -2) @ r1
    return r0 @ mat_exp(t * mat_log(rel))


def endpoint_velocities(x_t, q_t, x1_pred, q1_pred, t, t_floor: float = T_FLOOR):
    """Velocities implied by predicted endpoints.

    ``v = (x1_pred - x_t)/(1-t)`` and
    ``omega = 2 log(q_t^-1 ⊗ align(q_t, q1_pred))/(1-t)``.
    Raises when ``1 - t < t_floor``.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(1.0 - t_arr < t_floor):
        raise TimeTooCloseToOneError(
            f"t = {float(np.max(t_arr))} is within {t_floor} of 1; velocity would divide by ~0"
        )
    denom = (1.0 - t_arr)[..., None] if t_arr.ndim else 1.0 - t_arr
    v = (np.asarray(x1_pred) - np.asarray(x_t)) / denom
    omega = angular_velocity(q_t, q1_pred) / denom
    return v, omega


def make_interpolant(x0, q0, x1, q1, t) -> InterpolantSample:
    x_t, v = lerp_translation(x0, x1, t)
    return InterpolantSample(
        x_t=x_t,
        q_t=slerp_exp(q0, q1, t),
        t=t,
        v_target=v,
        omega_target=angular_velocity(q0, q1),
    )

