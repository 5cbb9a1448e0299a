"""Receding-horizon steering controller.

Multiple-shooting transcription with a Gauss-Newton quadratic model condensed
to a box QP in the control increments.  Each control cycle runs exactly one
iteration, split into a preparation phase (linearize and condense along the
predicted trajectory) and a feedback phase (inject the fresh state estimate,
solve the QP, roll the trajectory out nonlinearly).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import (DELTA_I_MAX, DELTA_T_MAX, NU, NX, VehicleGeometry,
                    rk4_step, step_jacobians_batch)
from .path import ReferenceHorizon
from .qp import DenseBoxQP, QPSolution, solve_box_qp

_BOUND_SNAP = 1e-9


@dataclass(frozen=True)
class OcpConfig:
    horizon: int = 15
    dt: float = 0.2
    state_weights: tuple = (0.5, 0.5, 0.0, 0.005, 0.005, 0.0)
    input_weights: tuple = (5.0, 0.05)
    terminal_weights: tuple = (5.0, 5.0, 0.0, 0.05, 0.05, 0.0)
    delta_t_max: float = DELTA_T_MAX
    delta_i_max: float = DELTA_I_MAX

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if len(self.state_weights) != NX or len(self.terminal_weights) != NX:
            raise ValueError("state weight vectors must have 6 entries")
        if len(self.input_weights) != NU:
            raise ValueError("input weight vector must have 2 entries")
        if min(min(self.state_weights), min(self.input_weights),
               min(self.terminal_weights)) < 0.0:
            raise ValueError("weights must be nonnegative")
        if min(self.delta_t_max, self.delta_i_max) <= 0.0:
            raise ValueError("steering bounds must be positive")

    def input_bounds(self) -> np.ndarray:
        return np.array([self.delta_t_max, self.delta_i_max])


@dataclass
class ShootingTrajectory:
    """Shooting nodes of one horizon: N+1 states and N interval controls."""

    states: np.ndarray    # (N+1, 6)
    controls: np.ndarray  # (N, 2)

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != NX:
            raise ValueError("states must have shape (N+1, 6)")
        if self.controls.shape != (self.states.shape[0] - 1, NU):
            raise ValueError("controls must have shape (N, 2)")

    def copy(self) -> "ShootingTrajectory":
        return ShootingTrajectory(self.states.copy(), self.controls.copy())


def rollout(x0, controls, slip, speed, geom: VehicleGeometry, dt: float) -> np.ndarray:
    """Nonlinear forward simulation of a control sequence from x0."""
    controls = np.asarray(controls, dtype=float)
    states = np.empty((controls.shape[0] + 1, NX))
    states[0] = np.asarray(x0, dtype=float)
    for k in range(controls.shape[0]):
        states[k + 1] = rk4_step(states[k], controls[k], slip, speed, geom, dt)
    return states


def initial_trajectory(x0, cfg: OcpConfig, slip, speed,
                       geom: VehicleGeometry) -> ShootingTrajectory:
    """Zero-steering rollout used to seed the very first cycle."""
    controls = np.zeros((cfg.horizon, NU))
    return ShootingTrajectory(rollout(x0, controls, slip, speed, geom, cfg.dt), controls)


@dataclass
class PreparedQP:
    """Condensed quadratic model of one cycle, waiting for the state estimate.

    The gradient of the condensed QP is g0 + G @ (x_hat - states[0]); only
    that injection is deferred to the feedback phase.
    """

    hessian: np.ndarray        # (2N, 2N)
    g0: np.ndarray             # (2N,)
    gain: np.ndarray           # (2N, 6) gradient sensitivity to the initial-state shift
    lower: np.ndarray
    upper: np.ndarray
    const0: float              # objective pieces, quadratic in the initial-state shift
    const_lin: np.ndarray      # (6,)
    const_quad: np.ndarray     # (6, 6)
    trajectory: ShootingTrajectory
    refs: ReferenceHorizon
    defects: np.ndarray        # (N, 6) shooting gaps of the linearization trajectory
    slip: np.ndarray
    speed: float
    cfg: OcpConfig
    geom: VehicleGeometry
    consumed: bool = field(default=False)

    def objective(self, du, ds0=None) -> float:
        """Condensed quadratic objective at increment du with initial shift ds0."""
        du = np.asarray(du, dtype=float).ravel()
        ds0 = np.zeros(NX) if ds0 is None else np.asarray(ds0, dtype=float)
        g = self.g0 + self.gain @ ds0
        return float(0.5 * du @ (self.hessian @ du) + g @ du
                     + self.const0 + self.const_lin @ ds0 + ds0 @ (self.const_quad @ ds0))


def prepare(traj: ShootingTrajectory, slip, speed, refs: ReferenceHorizon,
            cfg: OcpConfig, geom: VehicleGeometry) -> PreparedQP:
    """Linearize along the trajectory and condense to a control-increment box QP.

    The initial-state constraint is deferred: the feedback phase injects the
    fresh estimate into the condensed gradient without re-linearizing.
    """
    n = cfg.horizon
    if traj.controls.shape[0] != n:
        raise ValueError("trajectory horizon does not match the configuration")
    if refs.states.shape != (n + 1, NX) or refs.inputs.shape != (n, NU):
        raise ValueError("reference horizon does not match the configuration")
    s_bar = traj.states
    u_bar = traj.controls
    slip = np.asarray(slip, dtype=float)

    a, b, f_next = step_jacobians_batch(s_bar[:-1], u_bar, slip, speed, geom, cfg.dt)
    defects = f_next - s_bar[1:]

    nxr = NX * (n + 1)
    e_mat = np.zeros((nxr, NU * n))
    phi = np.zeros((nxr, NX))
    cvec = np.zeros(nxr)
    phi[:NX] = np.eye(NX)
    for k in range(n):
        r0, r1, r2 = k * NX, (k + 1) * NX, (k + 2) * NX
        e_mat[r1:r2] = a[k] @ e_mat[r0:r1]
        e_mat[r1:r2, NU * k:NU * (k + 1)] += b[k]
        phi[r1:r2] = a[k] @ phi[r0:r1]
        cvec[r1:r2] = a[k] @ cvec[r0:r1] + defects[k]

    qdiag = np.empty(nxr)
    qdiag[:NX * n] = np.tile(np.asarray(cfg.state_weights, dtype=float), n)
    qdiag[NX * n:] = np.asarray(cfg.terminal_weights, dtype=float)
    rdiag = np.tile(np.asarray(cfg.input_weights, dtype=float), n)

    err = (refs.states - s_bar).reshape(-1)
    err_u = (refs.inputs - u_bar).reshape(-1)
    w = cvec - err
    eq = e_mat * qdiag[:, None]

    hessian = 2.0 * (e_mat.T @ eq + np.diag(rdiag))
    g0 = 2.0 * (eq.T @ w - rdiag * err_u)
    gain = 2.0 * (eq.T @ phi)
    const0 = float(w @ (qdiag * w) + err_u @ (rdiag * err_u))
    const_lin = 2.0 * (phi.T @ (qdiag * w))
    const_quad = phi.T @ (qdiag[:, None] * phi)

    bounds = np.tile(cfg.input_bounds(), n)
    flat_u = u_bar.reshape(-1)
    return PreparedQP(
        hessian=hessian, g0=g0, gain=gain,
        lower=-bounds - flat_u, upper=bounds - flat_u,
        const0=const0, const_lin=const_lin, const_quad=const_quad,
        trajectory=traj.copy(), refs=refs, defects=defects,
        slip=slip.copy(), speed=float(speed), cfg=cfg, geom=geom,
    )


@dataclass
class FeedbackResult:
    control: np.ndarray            # first control of the updated plan
    trajectory: ShootingTrajectory  # updated plan, not shifted
    warm_start: ShootingTrajectory  # shifted plan for the next preparation
    qp: QPSolution
    degraded: bool


def feedback(prep: PreparedQP, x_hat, warm_active=None) -> FeedbackResult:
    """Inject the fresh estimate, solve the condensed QP, update the plan.

    The updated controls are hard-clamped to the steering bounds and the
    states re-rolled nonlinearly from x_hat; the returned warm start is the
    shifted plan for the next cycle.  A QP iteration-limit failure is
    reported via `degraded` (the caller keeps its previous control).
    """
    if prep.consumed:
        raise RuntimeError("prepared QP was already consumed by a feedback call")
    prep.consumed = True
    cfg = prep.cfg
    ds0 = np.asarray(x_hat, dtype=float) - prep.trajectory.states[0]
    g = prep.g0 + prep.gain @ ds0
    sol = solve_box_qp(DenseBoxQP(prep.hessian, g, prep.lower, prep.upper),
                       active_set0=warm_active)
    controls = prep.trajectory.controls + sol.x.reshape(cfg.horizon, NU)
    bounds = cfg.input_bounds()
    controls = np.clip(controls, -bounds, bounds)
    snap_hi = np.abs(controls - bounds) < _BOUND_SNAP
    snap_lo = np.abs(controls + bounds) < _BOUND_SNAP
    controls[snap_hi] = np.broadcast_to(bounds, controls.shape)[snap_hi]
    controls[snap_lo] = np.broadcast_to(-bounds, controls.shape)[snap_lo]
    states = rollout(x_hat, controls, prep.slip, prep.speed, prep.geom, cfg.dt)
    traj = ShootingTrajectory(states, controls)
    warm = shift(traj, prep.slip, prep.speed, prep.geom, cfg.dt)
    return FeedbackResult(control=controls[0].copy(), trajectory=traj,
                          warm_start=warm, qp=sol,
                          degraded=sol.hit_iteration_limit)


def shift(traj: ShootingTrajectory, slip, speed, geom: VehicleGeometry,
          dt: float) -> ShootingTrajectory:
    """Warm start for the next cycle: drop the first node, repeat the last control."""
    states = np.empty_like(traj.states)
    states[:-1] = traj.states[1:]
    controls = np.vstack([traj.controls[1:], traj.controls[-1:]])
    states[-1] = rk4_step(states[-2], controls[-1], slip, speed, geom, dt)
    return ShootingTrajectory(states, controls)


def stationarity_residual(prep: PreparedQP, x_hat) -> float:
    """Max-norm optimality measure of the underlying problem at the current plan.

    Combines the condensed-gradient projection on the steering box with the
    shooting defects; it vanishes at a converged solution for the given
    estimate and references.
    """
    g = prep.g0 + prep.gain @ (np.asarray(x_hat, dtype=float) - prep.trajectory.states[0])
    act_tol = 1e-9
    res = np.abs(g)
    at_lo = prep.lower >= -act_tol
    at_hi = prep.upper <= act_tol
    res[at_lo] = np.maximum(0.0, -g[at_lo])
    res[at_hi] = np.maximum(0.0, g[at_hi])
    grad_part = float(res.max(initial=0.0))
    defect_part = float(np.abs(prep.defects).max(initial=0.0))
    return max(grad_part, defect_part)


@dataclass
class NmpcCycleStats:
    preparation_ms: float
    feedback_ms: float
    kkt_residual: float
    qp_iterations: int
    regularized: bool
    degraded: bool


class NmpcController:
    """Owns the shooting trajectory, QP warm start and phase timing across cycles."""

    def __init__(self, cfg: OcpConfig, geom: VehicleGeometry, x0,
                 slip=(1.0, 1.0, 1.0), speed: float = 1.0):
        self.cfg = cfg
        self.geom = geom
        self.trajectory = initial_trajectory(x0, cfg, slip, speed, geom)
        self.preparation_ms = 0.0
        self._prep: PreparedQP | None = None
        self._warm_active = None
        self._last_control = np.zeros(NU)

    @property
    def prepared(self) -> bool:
        return self._prep is not None and not self._prep.consumed

    def prepare(self, refs: ReferenceHorizon, slip, speed) -> None:
        """Preparation phase for the coming cycle, linearized at the predicted state."""
        t0 = time.perf_counter()
        self._prep = prepare(self.trajectory, slip, speed, refs, self.cfg, self.geom)
        self.preparation_ms = (time.perf_counter() - t0) * 1e3

    def feedback(self, x_hat):
        """Feedback phase: returns (applied control, cycle stats)."""
        if self._prep is None:
            raise RuntimeError("feedback called before any preparation")
        t0 = time.perf_counter()
        res = feedback(self._prep, x_hat, warm_active=self._warm_active)
        feedback_ms = (time.perf_counter() - t0) * 1e3
        if res.degraded:
            control = self._last_control.copy()
        else:
            control = res.control
            self._last_control = control.copy()
        self.trajectory = res.warm_start
        self._warm_active = res.qp.active_set
        stats = NmpcCycleStats(
            preparation_ms=self.preparation_ms, feedback_ms=feedback_ms,
            kkt_residual=res.qp.kkt_residual, qp_iterations=res.qp.iterations,
            regularized=res.qp.regularized, degraded=res.degraded,
        )
        return control.copy(), stats
