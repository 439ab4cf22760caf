"""Euler integrators for the three rotation representations and full inference paths."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .frames import FrameTransform
from .interpolants import (
    T_FLOOR,
    additive_velocity,
    angular_velocity,
    endpoint_velocities,
)
from .quat import exp_map, hamilton_product, mat_exp

# model(x_t (n,3), q_t (n,4), t) -> (x1_pred (n,3), q1_pred (n,4))
EndpointModel = Callable[[np.ndarray, np.ndarray, float], tuple]

ROTATION_MODES = ("scheduled", "literal")


class SolverConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Inference settings.

    ``rotation_mode`` only matters with the scheduler on. ``"scheduled"``
    converts the predicted endpoint into the constant velocity of the
    scheduled path (dividing the residual by ``exp(-gamma t)``), so the
    adjusted step is ``gamma * 2 log(q_t^-1 ⊗ q1_pred)``. ``"literal"``
    multiplies ``gamma exp(-gamma t)`` onto the ``1/(1-t)`` velocity, which
    stalls well short of the predicted endpoint.
    """

    steps: int = 500
    gamma: float = 10.0
    scheduler_enabled: bool = True
    rotation_mode: str = "scheduled"
    t_floor: float = T_FLOOR

    def __post_init__(self):
        if not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise SolverConfigError(f"steps must be an integer >= 1, got {self.steps!r}")
        if 1.0 / self.steps < self.t_floor:
            raise SolverConfigError(
                f"steps = {self.steps} puts the last evaluation at t = 1 - {1.0 / self.steps:g}, "
                f"inside the velocity floor {self.t_floor:g}; use steps <= {int(round(1 / self.t_floor))}"
            )
        if self.scheduler_enabled and not (np.isfinite(self.gamma) and self.gamma > 0):
            raise SolverConfigError(f"gamma must be finite and > 0, got {self.gamma}")
        if self.rotation_mode not in ROTATION_MODES:
            raise SolverConfigError(f"rotation_mode must be one of {ROTATION_MODES}")

    @property
    def dt(self) -> float:
        return 1.0 / self.steps


def euler_step_translation(x_t, v, dt):
    return np.asarray(x_t) + np.asarray(v) * dt


def euler_step_quat_exp(q_t, omega_adj, dt):
    """``q_t ⊗ exp(dt/2 * omega_adj)``; stays on the unit sphere without renormalizing."""
    return hamilton_product(q_t, exp_map(dt * np.asarray(omega_adj)))


def euler_step_quat_additive(q_t, eta_t, dt, renormalize: bool = False):
    q = np.asarray(q_t) + dt * np.asarray(eta_t)
    if renormalize:
        q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return q


def euler_step_matrix(r_t, omega, dt):
    return np.asarray(r_t) @ mat_exp(dt * np.asarray(omega))


def integrate_additive(q0, q1, steps: int, renormalize: bool = True):
    """Euler-integrate the additive SLERP velocity from ``q0`` towards ``q1``.

    Returns the full trajectory, shape ``(steps + 1, ..., 4)``.
    """
    dt = 1.0 / steps
    q = np.asarray(q0, dtype=float)
    path = [q]
    for k in range(steps):
        q = euler_step_quat_additive(q, additive_velocity(q0, q1, k * dt), dt, renormalize)
        path.append(q)
    return np.stack(path)


def integrate_batch(
    model: EndpointModel,
    x0: np.ndarray,
    q0: np.ndarray,
    cfg: SolverConfig,
    t_stop: float = 1.0,
    return_path: bool = False,
):
    """Explicit Euler from ``t = 0`` on the grid ``k/L``, vectorized over frames.

    The model is evaluated at the left end of each step. Integration stops
    once ``t`` reaches ``t_stop`` (which must lie on the grid to be exact).
    """
    x = np.array(x0, dtype=float, copy=True)
    q = np.array(q0, dtype=float, copy=True)
    dt = cfg.dt
    n_steps = int(round(t_stop * cfg.steps))
    path = [(0.0, x.copy(), q.copy())] if return_path else None
    for k in range(n_steps):
        t = k * dt
        x1_pred, q1_pred = model(x, q, t)
        v, omega = endpoint_velocities(x, q, x1_pred, q1_pred, t, t_floor=cfg.t_floor)
        if cfg.scheduler_enabled:
            if cfg.rotation_mode == "scheduled":
                omega_adj = cfg.gamma * angular_velocity(q, q1_pred)
            else:
                omega_adj = cfg.gamma * np.exp(-cfg.gamma * t) * omega
        else:
            omega_adj = omega
        x = euler_step_translation(x, v, dt)
        q = euler_step_quat_exp(q, omega_adj, dt)
        if return_path:
            path.append(((k + 1) * dt, x.copy(), q.copy()))
    if return_path:
        return x, q, path
    return x, q


def integrate_path(model: EndpointModel, t0_frame: FrameTransform, cfg: SolverConfig) -> FrameTransform:
    """Run inference for one frame and return the ``t = 1`` estimate."""
    x, q = integrate_batch(model, t0_frame.trans[None], t0_frame.rot[None], cfg)
    return FrameTransform(x[0], q[0])


def oracle_model(x1, q1) -> EndpointModel:
    """Endpoint predictor that always returns the given ground-truth endpoints."""
    x1 = np.asarray(x1, dtype=float)
    q1 = np.asarray(q1, dtype=float)

    def predict(x_t, q_t, t):
        return np.broadcast_to(x1, np.shape(x_t)), np.broadcast_to(q1, np.shape(q_t))

    return predict
