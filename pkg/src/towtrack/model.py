"""Kinematic tractor-trailer model: chain dynamics, RK4 stepping, sensitivities.

Layout conventions used across the package:

    state   (6,)  xt, yt, theta, xi, yi, psi
    est     (11,) xt, yt, theta, xi, yi, psi, mu, kappa, eta, beta, v
    control (2,)  delta_t, delta_i
    slip    (3,)  mu, kappa, eta

Angles are radians, lengths meters, speeds m/s.  Yaw angles are kept
unwrapped; nothing in this module reduces them modulo 2*pi.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STATE_FIELDS = ("xt", "yt", "theta", "xi", "yi", "psi")
EST_FIELDS = STATE_FIELDS + ("mu", "kappa", "eta", "beta", "v")
NX = len(STATE_FIELDS)
NU = 2
NZ = len(EST_FIELDS)

DEG = math.pi / 180.0
DELTA_T_MAX = 35.0 * DEG  # tractor steering stop
DELTA_I_MAX = 25.0 * DEG  # trailer steering stop

_TAN_GUARD = 1e-6
FD_STEP = 1e-6


class DomainError(ValueError):
    """tan(kappa * delta_t) evaluated inside the guard band around a pole."""


@dataclass(frozen=True)
class VehicleGeometry:
    """Hitch-chain lengths: front-to-rear axle, joint-to-trailer axle, drawbar."""

    tractor_wheelbase: float = 1.4
    trailer_length: float = 1.3
    drawbar_length: float = 1.1

    def __post_init__(self) -> None:
        if min(self.tractor_wheelbase, self.trailer_length, self.drawbar_length) <= 0.0:
            raise ValueError("geometry lengths must be strictly positive")


def hitch_angle(theta, psi, delta_i):
    """Angle at the front joint closing the tractor/drawbar/trailer chain."""
    return theta - psi - delta_i


def trailer_yaw(theta, beta, delta_i):
    """Inverse of hitch_angle: trailer yaw from tractor yaw and the two joint angles."""
    return theta - beta - delta_i


def _checked_tan(arg):
    a = np.asarray(arg, dtype=float)
    r = np.remainder(a - 0.5 * math.pi, math.pi)
    if np.any(np.minimum(r, math.pi - r) < _TAN_GUARD):
        raise DomainError("steering angle within the guard band of a tan() pole")
    return np.tan(a)


def _chain_rates(theta, psi, beta, delta_t, delta_i, mu, kappa, eta, v, geom):
    """Pose rates of the kinematic chain; broadcasts over any common leading shape."""
    speed = mu * v
    tan_t = _checked_tan(kappa * delta_t)
    swing = eta * delta_i + beta
    theta_dot = speed * tan_t / geom.tractor_wheelbase
    psi_dot = (speed / geom.trailer_length) * (
        np.sin(swing) + (geom.drawbar_length / geom.tractor_wheelbase) * tan_t * np.cos(swing)
    )
    return (
        speed * np.cos(theta),
        speed * np.sin(theta),
        theta_dot,
        speed * np.cos(psi),
        speed * np.sin(psi),
        psi_dot,
    )


def dynamics(state, control, slip, speed, geom: VehicleGeometry) -> np.ndarray:
    """Time derivative of the 6-state control model.

    The hitch angle is closed internally from (theta, psi, delta_i), so the
    model is self-contained in the six pose states.
    """
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    slip = np.asarray(slip, dtype=float)
    theta = state[..., 2]
    psi = state[..., 5]
    delta_t = control[..., 0]
    delta_i = control[..., 1]
    beta = hitch_angle(theta, psi, delta_i)
    rows = _chain_rates(theta, psi, beta, delta_t, delta_i,
                        slip[..., 0], slip[..., 1], slip[..., 2], speed, geom)
    return np.stack(np.broadcast_arrays(*rows), axis=-1)


def est_dynamics(z, control, geom: VehicleGeometry) -> np.ndarray:
    """Time derivative of the 11-dim estimation state.

    Pose rows follow the control model but use this state's own slip, speed
    and hitch-angle entries; the five appended entries are random-walk states
    with zero drift.
    """
    z = np.asarray(z, dtype=float)
    control = np.asarray(control, dtype=float)
    rows = _chain_rates(z[..., 2], z[..., 5], z[..., 9],
                        control[..., 0], control[..., 1],
                        z[..., 6], z[..., 7], z[..., 8], z[..., 10], geom)
    pose = np.stack(np.broadcast_arrays(*rows), axis=-1)
    out = np.zeros(pose.shape[:-1] + (NZ,))
    out[..., :NX] = pose
    return out


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + (0.5 * dt) * k1)
    k3 = f(x + (0.5 * dt) * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(state, control, slip, speed, geom: VehicleGeometry, dt: float) -> np.ndarray:
    """One classical RK4 step of the control model, input held over the interval."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    state = np.asarray(state, dtype=float)
    return _rk4(lambda s: dynamics(s, control, slip, speed, geom), state, float(dt))


def est_rk4_step(z, control, geom: VehicleGeometry, dt: float) -> np.ndarray:
    """One classical RK4 step of the estimation model, input held over the interval."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    z = np.asarray(z, dtype=float)
    return _rk4(lambda s: est_dynamics(s, control, geom), z, float(dt))


def _fd_step_jacobians(step, states, controls, n, m, fd_step):
    """Forward-difference sensitivities of one integration step, batched over nodes.

    step maps ((K, n), (K, m)) -> (K, n).  Returns (A, B, base) with
    A[k] = d step / d state and B[k] = d step / d control at node k.
    """
    x = np.atleast_2d(np.asarray(states, dtype=float))
    u = np.atleast_2d(np.asarray(controls, dtype=float))
    k_nodes = x.shape[0]
    reps = 1 + n + m
    xb = np.repeat(x[:, None, :], reps, axis=1)
    ub = np.repeat(u[:, None, :], reps, axis=1)
    for i in range(n):
        xb[:, 1 + i, i] += fd_step
    for j in range(m):
        ub[:, 1 + n + j, j] += fd_step
    yb = step(xb.reshape(-1, n), ub.reshape(-1, m)).reshape(k_nodes, reps, n)
    base = yb[:, 0, :]
    a_cols = (yb[:, 1:1 + n, :] - base[:, None, :]) / fd_step
    b_cols = (yb[:, 1 + n:, :] - base[:, None, :]) / fd_step
    return np.swapaxes(a_cols, 1, 2), np.swapaxes(b_cols, 1, 2), base


def step_jacobians_batch(states, controls, slip, speed, geom: VehicleGeometry,
                         dt: float, fd_step: float = FD_STEP):
    """(A, B, next_state) of rk4_step for a batch of nodes, forward differences."""
    def step(xs, us):
        return rk4_step(xs, us, slip, speed, geom, dt)
    return _fd_step_jacobians(step, states, controls, NX, NU, fd_step)


def step_jacobians(state, control, slip, speed, geom: VehicleGeometry,
                   dt: float, fd_step: float = FD_STEP):
    """Sensitivities of one rk4_step w.r.t. state (6x6) and control (6x2)."""
    a, b, _ = step_jacobians_batch(np.asarray(state, float)[None, :],
                                   np.asarray(control, float)[None, :],
                                   slip, speed, geom, dt, fd_step)
    return a[0], b[0]


def est_step_jacobians_batch(zs, controls, geom: VehicleGeometry,
                             dt: float, fd_step: float = FD_STEP):
    """(A, B, next_state) of est_rk4_step for a batch of nodes, forward differences."""
    def step(xs, us):
        return est_rk4_step(xs, us, geom, dt)
    return _fd_step_jacobians(step, zs, controls, NZ, NU, fd_step)


def est_step_jacobians(z, control, geom: VehicleGeometry,
                       dt: float, fd_step: float = FD_STEP):
    """Sensitivities of one est_rk4_step w.r.t. state (11x11) and control (11x2)."""
    a, b, _ = est_step_jacobians_batch(np.asarray(z, float)[None, :],
                                       np.asarray(control, float)[None, :],
                                       geom, dt, fd_step)
    return a[0], b[0]
