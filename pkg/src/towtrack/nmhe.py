"""Sliding-window state and slip estimator.

Gauss-Newton over a fixed-length measurement window with multiple shooting,
slip box constraints, and a square-root information arrival cost.  The
arrival cost is slid forward by a smoothed EKF-style QR factorization each
time the oldest sample leaves the window.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import (NU, NX, NZ, VehicleGeometry, est_rk4_step,
                    est_step_jacobians, est_step_jacobians_batch)
from .qp import DenseBoxQP, solve_box_qp

MEAS_SEL = np.array([0, 1, 3, 4, 9, 10])
Y_FIELDS = ("xt", "yt", "xi", "yi", "beta", "v")
NY = len(Y_FIELDS)
SLIP_SLICE = slice(6, 9)


class TimestampError(ValueError):
    """Window samples must arrive on the fixed dt grid with no gaps."""


@dataclass(frozen=True)
class MheConfig:
    window: int = 20
    dt: float = 0.2
    sigma_pos: float = 0.03
    sigma_beta: float = 0.0175
    sigma_v: float = 0.1
    sigma_steer: float = 0.0175
    arrival_sigma: tuple = (10.0, 10.0, 0.1, 10.0, 10.0, 0.1,
                            0.25, 0.25, 0.25, 0.1745, 0.1)
    process_sigma: tuple = (0.01, 0.01, 0.01, 0.01, 0.01, 0.01,
                            0.005, 0.005, 0.005, 0.01, 0.05)
    slip_min: float = 0.25
    slip_max: float = 1.0

    def __post_init__(self) -> None:
        if self.window < 2:
            raise ValueError("window must hold at least two samples")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if min(self.sigma_pos, self.sigma_beta, self.sigma_v, self.sigma_steer) <= 0.0:
            raise ValueError("measurement std devs must be positive")
        if len(self.arrival_sigma) != NZ or min(self.arrival_sigma) <= 0.0:
            raise ValueError("arrival_sigma needs 11 positive entries")
        if len(self.process_sigma) != NZ or min(self.process_sigma) < 0.0:
            raise ValueError("process_sigma needs 11 nonnegative entries")
        if not 0.0 < self.slip_min < self.slip_max:
            raise ValueError("slip bounds must satisfy 0 < min < max")

    def measurement_sigmas(self) -> np.ndarray:
        return np.array([self.sigma_pos] * 4 + [self.sigma_beta, self.sigma_v])

    def input_sigmas(self) -> np.ndarray:
        return np.array([self.sigma_steer, self.sigma_steer])


@dataclass(frozen=True)
class MeasSample:
    """One cycle of sensor data.

    y holds (xt, yt, xi, yi, beta, v); mask flags the channels that are
    actually available (False entries are excluded from the fit, not
    zero-filled).  u is the measured steering over the interval ending at t.
    """

    y: np.ndarray
    u: np.ndarray
    mask: np.ndarray
    t: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        if self.y.shape != (NY,) or self.mask.shape != (NY,) or self.u.shape != (NU,):
            raise ValueError("sample shapes must be y(6), u(2), mask(6)")


def measurement_model(z) -> np.ndarray:
    """Predicted measurement: direct selection of channels from the estimation state."""
    return np.asarray(z, dtype=float)[..., MEAS_SEL]


def measurement_jacobian() -> np.ndarray:
    """Constant 6x11 selection matrix of the measurement model."""
    h = np.zeros((NY, NZ))
    h[np.arange(NY), MEAS_SEL] = 1.0
    return h


@dataclass
class ArrivalCost:
    """Prior on the window-start state in square-root information form.

    sqrt_info is upper triangular with information matrix sqrt_info.T @ sqrt_info;
    the contribution to the fit is || sqrt_info @ (z0 - mean) ||^2.
    """

    mean: np.ndarray
    sqrt_info: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.sqrt_info = np.asarray(self.sqrt_info, dtype=float)
        if self.mean.shape != (NZ,) or self.sqrt_info.shape != (NZ, NZ):
            raise ValueError("arrival cost must be 11-dimensional")


def sqrt_info_update(sqrt_info, transition, meas_rows, process_sigma):
    """One smoothed slide of the square-root information factor.

    Applies a measurement update with the pre-scaled rows `meas_rows`
    (measurement matrix divided by per-channel sigma, may be empty) followed
    by a prediction through the linearized transition with process-noise
    inflation.  Marginalization of the old state is done in one QR of the
    stacked two-state system.  Returns (new_sqrt_info, rank_deficient).
    """
    ell = np.asarray(sqrt_info, dtype=float)
    phi = np.asarray(transition, dtype=float)
    meas = np.asarray(meas_rows, dtype=float).reshape(-1, NZ)
    proc = np.asarray(process_sigma, dtype=float)

    if np.all(proc == 0.0):
        stacked = np.vstack([ell, meas]) if meas.size else ell
        upd = np.linalg.qr(stacked, mode="r")
        new = np.linalg.qr(np.linalg.solve(phi.T, upd.T).T, mode="r")
    else:
        if np.any(proc == 0.0):
            raise ValueError("process noise must be all zero or all positive")
        w_proc = np.diag(1.0 / proc)
        m = meas.shape[0]
        stacked = np.zeros((NZ + m + NZ, 2 * NZ))
        stacked[:NZ, :NZ] = ell
        if m:
            stacked[NZ:NZ + m, :NZ] = meas
        stacked[NZ + m:, :NZ] = -w_proc @ phi
        stacked[NZ + m:, NZ:] = w_proc
        r_full = np.linalg.qr(stacked, mode="r")
        new = r_full[NZ:, NZ:]
    flip = np.diag(new) < 0.0
    new = new.copy()
    new[flip] *= -1.0
    scale = float(np.abs(np.diag(new)).max(initial=0.0))
    rank_deficient = bool(scale == 0.0 or np.abs(np.diag(new)).min() < 1e-12 * scale)
    return new, rank_deficient


@dataclass
class MheCycleStats:
    preparation_ms: float
    estimation_ms: float
    kkt_residual: float
    clamped: tuple  # (mu, kappa, eta) at a slip bound after the step
    degraded: bool
    qp_iterations: int = 0
    regularized: bool = False


class MheEstimator:
    """Fixed-rate sliding-window estimator run once per control cycle.

    Per cycle: add_sample appends the new measurement (the window transiently
    holds one extra sample), estimate performs a single warm-started
    Gauss-Newton iteration, and update_arrival_cost absorbs the departing
    sample into the arrival cost and slides the window.
    """

    def __init__(self, cfg: MheConfig, geom: VehicleGeometry, initial_state):
        z0 = np.asarray(initial_state, dtype=float).copy()
        if z0.shape != (NZ,):
            raise ValueError("initial state must have 11 entries")
        self.cfg = cfg
        self.geom = geom
        self.arrival = ArrivalCost(z0.copy(), np.diag(1.0 / np.asarray(cfg.arrival_sigma)))
        self.samples: list[MeasSample] = []
        self.nodes = z0[None, :].copy()          # (n, 11) solution values per sample time
        self.interval_controls = np.zeros((0, NU))
        self.rank_deficient = False
        self._warm_active = None

    @property
    def size(self) -> int:
        return len(self.samples)

    def add_sample(self, sample: MeasSample) -> None:
        """Append one cycle's measurement; gaps in the time grid are rejected."""
        if len(self.samples) > self.cfg.window:
            raise RuntimeError("arrival-cost update for the previous cycle is overdue")
        if self.samples:
            gap = sample.t - self.samples[-1].t
            if abs(gap - self.cfg.dt) > 1e-9:
                raise TimestampError(
                    f"sample at t={sample.t:.6f} does not extend the grid by dt="
                    f"{self.cfg.dt} (last t={self.samples[-1].t:.6f}); insert fully "
                    "masked samples for skipped cycles")
            guess = est_rk4_step(self.nodes[-1], sample.u, self.geom, self.cfg.dt)
            self.nodes = np.vstack([self.nodes, guess[None, :]])
            self.interval_controls = np.vstack(
                [self.interval_controls, sample.u[None, :]])
        else:
            self.nodes = self.arrival.mean[None, :].copy()
            self.interval_controls = np.zeros((0, NU))
        self.samples.append(sample)

    def _linearize(self):
        n = len(self.samples)
        cfg = self.cfg
        z = self.nodes
        u = self.interval_controls
        n_int = n - 1

        a, b, f_next = est_step_jacobians_batch(z[:-1], u, self.geom, cfg.dt)
        defects = f_next - z[1:]

        trans = np.empty((n, NZ, NZ))
        input_sens = np.zeros((n, NZ, NU * n_int))
        shooting_const = np.zeros((n, NZ))
        trans[0] = np.eye(NZ)
        for k in range(n_int):
            trans[k + 1] = a[k] @ trans[k]
            input_sens[k + 1] = a[k] @ input_sens[k]
            input_sens[k + 1][:, NU * k:NU * (k + 1)] += b[k]
            shooting_const[k + 1] = a[k] @ shooting_const[k] + defects[k]

        sig_y = cfg.measurement_sigmas()
        sig_u = cfg.input_sigmas()
        n_meas = sum(int(s.mask.sum()) for s in self.samples)
        n_res = NZ + n_meas + NU * n_int
        nv = NZ + NU * n_int
        jac = np.zeros((n_res, nv))
        res = np.empty(n_res)

        ell = self.arrival.sqrt_info
        jac[:NZ, :NZ] = ell
        res[:NZ] = ell @ (z[0] - self.arrival.mean)
        row = NZ
        for k, smp in enumerate(self.samples):
            idx = np.flatnonzero(smp.mask)
            if idx.size == 0:
                continue
            sel = MEAS_SEL[idx]
            wy = 1.0 / sig_y[idx]
            jac[row:row + idx.size, :NZ] = wy[:, None] * trans[k][sel]
            if n_int:
                jac[row:row + idx.size, NZ:] = wy[:, None] * input_sens[k][sel]
            res[row:row + idx.size] = wy * (z[k][sel] + shooting_const[k][sel] - smp.y[idx])
            row += idx.size
        wu = 1.0 / sig_u
        for i in range(n_int):
            c0 = NZ + NU * i
            jac[row, c0] = wu[0]
            jac[row + 1, c0 + 1] = wu[1]
            res[row:row + NU] = wu * (u[i] - self.samples[i + 1].u)
            row += NU

        lower = np.full(nv, -np.inf)
        upper = np.full(nv, np.inf)
        lower[SLIP_SLICE] = cfg.slip_min - z[0, SLIP_SLICE]
        upper[SLIP_SLICE] = cfg.slip_max - z[0, SLIP_SLICE]
        return jac, res, lower, upper, defects, trans, input_sens, shooting_const

    def estimate(self):
        """One Gauss-Newton iteration over the current window.

        Returns (z_hat, slip, stats) where z_hat is the solution at the newest
        sample time and slip its (mu, kappa, eta) entries clamped to the box.
        """
        n = len(self.samples)
        if n < 2:
            raise ValueError("estimation needs a window of at least two samples")
        cfg = self.cfg

        t0 = time.perf_counter()
        (jac, res, lower, upper, defects,
         trans, input_sens, shooting_const) = self._linearize()
        hessian = 2.0 * (jac.T @ jac)
        grad = 2.0 * (jac.T @ res)
        kkt = self._stationarity(grad, lower, upper, defects)
        prep_ms = (time.perf_counter() - t0) * 1e3

        t1 = time.perf_counter()
        warm = self._warm_active if (self._warm_active is not None
                                     and self._warm_active.size == grad.size) else None
        sol = solve_box_qp(DenseBoxQP(hessian, grad, lower, upper), active_set0=warm)
        degraded = sol.hit_iteration_limit
        if not degraded:
            dz0 = sol.x[:NZ]
            du = sol.x[NZ:]
            step = trans @ dz0 + shooting_const
            if du.size:
                step = step + input_sens @ du
                self.interval_controls = self.interval_controls + du.reshape(-1, NU)
            self.nodes = self.nodes + step
            self.nodes[:, SLIP_SLICE] = np.clip(self.nodes[:, SLIP_SLICE],
                                                cfg.slip_min, cfg.slip_max)
            self._warm_active = sol.active_set
        est_ms = (time.perf_counter() - t1) * 1e3

        z_hat = self.nodes[-1].copy()
        slip = z_hat[SLIP_SLICE].copy()
        edge = 1e-12
        clamped = (bool(slip[0] <= cfg.slip_min + edge or slip[0] >= cfg.slip_max - edge),
                   bool(slip[1] <= cfg.slip_min + edge or slip[1] >= cfg.slip_max - edge),
                   bool(slip[2] <= cfg.slip_min + edge or slip[2] >= cfg.slip_max - edge))
        stats = MheCycleStats(preparation_ms=prep_ms, estimation_ms=est_ms,
                              kkt_residual=kkt, clamped=clamped, degraded=degraded,
                              qp_iterations=sol.iterations, regularized=sol.regularized)
        return z_hat, slip, stats

    @staticmethod
    def _stationarity(grad, lower, upper, defects) -> float:
        act_tol = 1e-9
        res = np.abs(grad)
        at_lo = lower >= -act_tol
        at_hi = upper <= act_tol
        res[at_lo] = np.maximum(0.0, -grad[at_lo])
        res[at_hi] = np.maximum(0.0, grad[at_hi])
        return max(float(res.max(initial=0.0)),
                   float(np.abs(defects).max(initial=0.0)))

    def update_arrival_cost(self) -> bool:
        """Absorb the departing sample into the arrival cost and slide the window.

        No-op until the window holds more than its steady-state sample count.
        The measurement update uses the departing sample's unmasked channels
        linearized at its solved value; the prediction step advances the prior
        to the solver's value at the new window start with process-noise
        inflation of the covariance.
        """
        if len(self.samples) <= self.cfg.window:
            return False
        smp = self.samples[0]
        idx = np.flatnonzero(smp.mask)
        sig_y = self.cfg.measurement_sigmas()
        meas = np.zeros((idx.size, NZ))
        meas[np.arange(idx.size), MEAS_SEL[idx]] = 1.0 / sig_y[idx]
        phi, _ = est_step_jacobians(self.nodes[0], self.interval_controls[0],
                                    self.geom, self.cfg.dt)
        new_ell, rank_flag = sqrt_info_update(self.arrival.sqrt_info, phi, meas,
                                              self.cfg.process_sigma)
        self.rank_deficient = rank_flag
        self.arrival = ArrivalCost(self.nodes[1].copy(), new_ell)
        self.samples.pop(0)
        self.nodes = self.nodes[1:]
        self.interval_controls = self.interval_controls[1:]
        self._warm_active = None
        return True
