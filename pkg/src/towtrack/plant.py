"""Closed-loop truth simulator: actuator lags, ground-truth kinematics, sensors.

The plant integrates the same kinematic chain the controller predicts, but
with true (possibly time-varying) slip coefficients, first-order steering
actuators with slew and travel limits, a first-order speed loop, and a noisy
quantized sensor suite with GPS dropout.

The hitch angle is carried as its own integrated state (a passive joint):
its rate follows the tractor/trailer yaw rates while the articulation
actuator is still, and the articulation motion is applied to the hitch side
as the actuator moves.  It is never reset from the yaw-angle closure the
controller assumes, and the closure the plant does satisfy involves the
actual (lagged, limited) articulation angle, not the commanded one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DEG, VehicleGeometry, _chain_rates, hitch_angle

GPS_CHANNELS = slice(0, 4)


def actuator_step(current: float, command: float, dt: float, *,
                  tau: float, rate: float, limit: float) -> float:
    """One step of a first-order steering actuator.

    Exact first-order lag toward the command, then slew-rate limiting of the
    step, then the mechanical travel stop.
    """
    target = current + (command - current) * (1.0 - np.exp(-dt / tau))
    move = np.clip(target - current, -rate * dt, rate * dt)
    return float(np.clip(current + move, -limit, limit))


@dataclass(frozen=True)
class PlantConfig:
    tau_steer_tractor: float = 0.15
    rate_tractor: float = 30.0 * DEG
    stop_tractor: float = 36.0 * DEG
    tau_steer_trailer: float = 0.4
    rate_trailer: float = 15.0 * DEG
    stop_trailer: float = 26.0 * DEG
    tau_speed: float = 0.5
    speed_ref: float = 1.0
    substeps: int = 10

    def __post_init__(self) -> None:
        if min(self.tau_steer_tractor, self.tau_steer_trailer, self.tau_speed) <= 0.0:
            raise ValueError("actuator time constants must be positive")
        if min(self.rate_tractor, self.rate_trailer) <= 0.0:
            raise ValueError("slew rates must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")


@dataclass(frozen=True)
class SensorConfig:
    sigma_pos: float = 0.03
    sigma_beta: float = 1.0 * DEG
    sigma_v: float = 0.1
    sigma_steer: float = 1.0 * DEG
    quant: float = 1.0 * DEG
    dropout_prob: float = 11.0 / 871.0

    def __post_init__(self) -> None:
        if min(self.sigma_pos, self.sigma_beta, self.sigma_v, self.sigma_steer) < 0.0:
            raise ValueError("noise std devs must be nonnegative")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout probability must be in [0, 1]")


@dataclass(frozen=True)
class SlipSchedule:
    """Piecewise-constant true slip profile (mu, kappa, eta) over time.

    times must be strictly increasing; the value at t is the last row whose
    time is <= t (the first row also covers any earlier t).
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.times.ndim != 1 or self.values.shape != (self.times.size, 3):
            raise ValueError("need matching times (n,) and values (n, 3)")
        if self.times.size == 0:
            raise ValueError("schedule needs at least one row")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("schedule times must be strictly increasing")

    @classmethod
    def constant(cls, mu: float, kappa: float, eta: float) -> "SlipSchedule":
        return cls(np.zeros(1), np.array([[mu, kappa, eta]]))

    @classmethod
    def from_csv(cls, path) -> "SlipSchedule":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if rows.shape[1] != 4:
            raise ValueError("slip schedule CSV needs columns t_start_s,mu,kappa,eta")
        return cls(rows[:, 0], rows[:, 1:])

    def value(self, t: float) -> np.ndarray:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(i, 0)].copy()


def _truth_rates(state, delta_t, delta_i, slip, speed_ref, tau_speed, geom):
    # state = (xt, yt, theta, xi, yi, psi, beta, v); actuators held constant
    theta = state[2]
    psi = state[5]
    beta = state[6]
    v = state[7]
    pose = _chain_rates(theta, psi, beta, delta_t, delta_i,
                        slip[0], slip[1], slip[2], v, geom)
    return np.concatenate([pose, [pose[2] - pose[5], (speed_ref - v) / tau_speed]])


@dataclass
class Plant:
    """Ground-truth vehicle with actuators, speed loop, and sensor suite."""

    cfg: PlantConfig
    sensors: SensorConfig
    slip: SlipSchedule
    geom: VehicleGeometry
    state: np.ndarray          # (xt, yt, theta, xi, yi, psi, beta, v)
    steering: np.ndarray       # actual (delta_t, delta_i) after actuator dynamics
    rng: np.random.Generator
    t: float = 0.0

    @classmethod
    def start(cls, cfg: PlantConfig, sensors: SensorConfig, slip: SlipSchedule,
              geom: VehicleGeometry, pose, *, speed: float = 0.0,
              steering=(0.0, 0.0), seed: int = 0, t0: float = 0.0) -> "Plant":
        pose = np.asarray(pose, dtype=float)
        if pose.shape != (6,):
            raise ValueError("pose must have 6 entries (xt, yt, theta, xi, yi, psi)")
        steer = np.asarray(steering, dtype=float).copy()
        beta0 = hitch_angle(pose[2], pose[5], steer[1])
        state = np.concatenate([pose, [beta0, float(speed)]])
        return cls(cfg, sensors, slip, geom, state, steer,
                   np.random.default_rng(seed), float(t0))

    def step(self, command, dt: float) -> None:
        """Advance the truth by one control period with the command held."""
        cmd = np.asarray(command, dtype=float)
        h = dt / self.cfg.substeps
        for _ in range(self.cfg.substeps):
            old_di = self.steering[1]
            self.steering[0] = actuator_step(
                self.steering[0], cmd[0], h, tau=self.cfg.tau_steer_tractor,
                rate=self.cfg.rate_tractor, limit=self.cfg.stop_tractor)
            self.steering[1] = actuator_step(
                self.steering[1], cmd[1], h, tau=self.cfg.tau_steer_trailer,
                rate=self.cfg.rate_trailer, limit=self.cfg.stop_trailer)
            # articulation moves the hitch side while the trailer body holds
            self.state[6] -= self.steering[1] - old_di
            slip_now = self.slip.value(self.t)
            args = (self.steering[0], self.steering[1], slip_now,
                    self.cfg.speed_ref, self.cfg.tau_speed, self.geom)
            s = self.state
            k1 = _truth_rates(s, *args)
            k2 = _truth_rates(s + 0.5 * h * k1, *args)
            k3 = _truth_rates(s + 0.5 * h * k2, *args)
            k4 = _truth_rates(s + h * k3, *args)
            self.state = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            self.t += h

    def truth(self) -> dict:
        xt, yt, theta, xi, yi, psi, beta, v = self.state
        slip_now = self.slip.value(self.t)
        return {"xt": xt, "yt": yt, "theta": theta, "xi": xi, "yi": yi,
                "psi": psi, "beta": beta, "v": v,
                "delta_t": self.steering[0], "delta_i": self.steering[1],
                "mu": slip_now[0], "kappa": slip_now[1], "eta": slip_now[2]}

    def sense(self):
        """One cycle of sensor readings: (y, u_meas, mask).

        y = (xt, yt, xi, yi, beta, v); all channels get additive Gaussian
        noise, angle channels are then quantized to the encoder resolution,
        and a GPS dropout blanks the four position channels.  The random
        draws happen in a fixed order so runs with the same seed reproduce
        exactly regardless of masking.
        """
        sn = self.sensors
        eps_pos = self.rng.normal(0.0, 1.0, size=4) * sn.sigma_pos
        eps_beta = self.rng.normal(0.0, 1.0) * sn.sigma_beta
        eps_v = self.rng.normal(0.0, 1.0) * sn.sigma_v
        eps_steer = self.rng.normal(0.0, 1.0, size=2) * sn.sigma_steer
        dropped = bool(self.rng.uniform() < sn.dropout_prob)

        xt, yt, _, xi, yi, _, beta, v = self.state
        q = sn.quant

        def quantize(x):
            return np.round(x / q) * q if q > 0.0 else x

        y = np.array([xt + eps_pos[0], yt + eps_pos[1],
                      xi + eps_pos[2], yi + eps_pos[3],
                      quantize(beta + eps_beta), v + eps_v])
        u = quantize(self.steering + eps_steer)
        mask = np.ones(6, dtype=bool)
        if dropped:
            mask[GPS_CHANNELS] = False
        return y, u, mask
