import numpy as np
import pytest
from hypothesis import given, strategies as st

from towtrack.model import (
    DEG,
    DomainError,
    VehicleGeometry,
    dynamics,
    est_dynamics,
    est_rk4_step,
    est_step_jacobians,
    est_step_jacobians_batch,
    hitch_angle,
    rk4_step,
    step_jacobians,
    step_jacobians_batch,
    trailer_yaw,
)

GEOM = VehicleGeometry()

angles = st.floats(-np.pi, np.pi)
steer_t = st.floats(-35 * DEG, 35 * DEG)
steer_i = st.floats(-25 * DEG, 25 * DEG)
slips = st.floats(0.25, 1.0)


def random_est_state(rng):
    z = np.empty(11)
    z[:2] = rng.uniform(-5, 5, 2)
    z[2] = rng.uniform(-np.pi, np.pi)
    z[3:5] = rng.uniform(-5, 5, 2)
    z[5] = rng.uniform(-np.pi, np.pi)
    z[6:9] = rng.uniform(0.3, 1.0, 3)
    z[9] = rng.uniform(-0.5, 0.5)
    z[10] = rng.uniform(0.5, 1.5)
    return z


@given(angles, angles, steer_t, steer_i, slips, slips, slips,
       st.floats(0.2, 1.5))
def test_est_dynamics_matches_control_model_at_closure(theta, psi, dt_ang,
                                                       di_ang, mu, kappa, eta,
                                                       v):
    # The control model eliminates the hitch angle through the kinematic
    # closure; the estimation model carries it as a state.  With the hitch
    # angle placed exactly at the closure value both must produce the same
    # pose rates.
    beta = hitch_angle(theta, psi, di_ang)
    state = np.array([0.3, -0.2, theta, -1.1, 0.4, psi])
    control = np.array([dt_ang, di_ang])
    z = np.concatenate([state, [mu, kappa, eta, beta, v]])
    f6 = dynamics(state, control, (mu, kappa, eta), v, GEOM)
    f11 = est_dynamics(z, control, GEOM)
    np.testing.assert_allclose(f11[:6], f6, atol=1e-12)


def test_est_dynamics_parameter_rows_are_zero():
    rng = np.random.default_rng(3)
    for _ in range(20):
        z = random_est_state(rng)
        u = rng.uniform(-0.4, 0.4, 2)
        f = est_dynamics(z, u, GEOM)
        assert np.all(f[6:] == 0.0)


@given(angles, angles, steer_i)
def test_hitch_angle_trailer_yaw_roundtrip(theta, psi, di_ang):
    beta = hitch_angle(theta, psi, di_ang)
    assert trailer_yaw(theta, beta, di_ang) == pytest.approx(psi, abs=1e-12)


def test_rk4_step_matches_fine_substeps():
    rng = np.random.default_rng(11)
    state = np.array([0.5, -0.3, 0.4, -1.9, 0.1, 0.3])
    control = np.array([10 * DEG, -5 * DEG])
    slip = (0.9, 0.85, 0.8)
    coarse = rk4_step(state, control, slip, 1.0, GEOM, 0.2)
    fine = state.copy()
    for _ in range(64):
        fine = rk4_step(fine, control, slip, 1.0, GEOM, 0.2 / 64)
    np.testing.assert_allclose(coarse, fine, atol=1e-7)
    del rng


def test_est_rk4_step_matches_fine_substeps():
    z = np.array([0.5, -0.3, 0.4, -1.9, 0.1, 0.3, 0.9, 0.85, 0.8, 0.05, 1.1])
    control = np.array([10 * DEG, -5 * DEG])
    coarse = est_rk4_step(z, control, GEOM, 0.2)
    fine = z.copy()
    for _ in range(64):
        fine = est_rk4_step(fine, control, GEOM, 0.2 / 64)
    np.testing.assert_allclose(coarse, fine, atol=1e-8)
    # parameter states ride along unchanged
    np.testing.assert_array_equal(coarse[6:], z[6:])


def test_rk4_error_shrinks_fourth_order():
    state = np.array([0.0, 0.0, 0.2, -2.4, 0.0, 0.1])
    control = np.array([15 * DEG, 8 * DEG])
    slip = (0.9, 0.9, 0.9)

    def err(h, n):
        one = state.copy()
        for _ in range(n):
            one = rk4_step(one, control, slip, 1.0, GEOM, h)
        ref = state.copy()
        for _ in range(32 * n):
            ref = rk4_step(ref, control, slip, 1.0, GEOM, h / 32)
        return np.linalg.norm(one - ref)

    ratio = err(0.4, 1) / err(0.2, 2)
    # halved step, fixed 0.4 s span: global error drops ~2^4
    assert 8.0 < ratio < 32.0


def test_step_jacobians_match_central_differences():
    rng = np.random.default_rng(7)
    for _ in range(5):
        state = rng.uniform(-1, 1, 6)
        control = rng.uniform(-0.4, 0.4, 2)
        slip = tuple(rng.uniform(0.5, 1.0, 3))
        a, b = step_jacobians(state, control, slip, 1.0, GEOM, 0.2)
        eps = 1e-5
        for i in range(6):
            dx = np.zeros(6)
            dx[i] = eps
            col = (rk4_step(state + dx, control, slip, 1.0, GEOM, 0.2)
                   - rk4_step(state - dx, control, slip, 1.0, GEOM, 0.2)) / (2 * eps)
            np.testing.assert_allclose(a[:, i], col, atol=2e-4)
        for j in range(2):
            du = np.zeros(2)
            du[j] = eps
            col = (rk4_step(state, control + du, slip, 1.0, GEOM, 0.2)
                   - rk4_step(state, control - du, slip, 1.0, GEOM, 0.2)) / (2 * eps)
            np.testing.assert_allclose(b[:, j], col, atol=2e-4)


def test_est_step_jacobians_match_central_differences():
    rng = np.random.default_rng(13)
    z = random_est_state(rng)
    u = rng.uniform(-0.4, 0.4, 2)
    a, b = est_step_jacobians(z, u, GEOM, 0.2)
    eps = 1e-5
    for i in range(11):
        dz = np.zeros(11)
        dz[i] = eps
        col = (est_rk4_step(z + dz, u, GEOM, 0.2)
               - est_rk4_step(z - dz, u, GEOM, 0.2)) / (2 * eps)
        np.testing.assert_allclose(a[:, i], col, atol=2e-4)
    for j in range(2):
        du = np.zeros(2)
        du[j] = eps
        col = (est_rk4_step(z, u + du, GEOM, 0.2)
               - est_rk4_step(z, u - du, GEOM, 0.2)) / (2 * eps)
        np.testing.assert_allclose(b[:, j], col, atol=2e-4)


def test_batched_jacobians_equal_per_node_jacobians():
    rng = np.random.default_rng(17)
    states = rng.uniform(-1, 1, (6, 6))
    controls = rng.uniform(-0.4, 0.4, (6, 2))
    slip = (0.9, 0.8, 0.95)
    a, b, nxt = step_jacobians_batch(states, controls, slip, 1.0, GEOM, 0.2)
    for k in range(6):
        ak, bk = step_jacobians(states[k], controls[k], slip, 1.0, GEOM, 0.2)
        np.testing.assert_array_equal(a[k], ak)
        np.testing.assert_array_equal(b[k], bk)
        np.testing.assert_array_equal(
            nxt[k], rk4_step(states[k], controls[k], slip, 1.0, GEOM, 0.2))

    zs = np.vstack([random_est_state(rng) for _ in range(4)])
    us = rng.uniform(-0.4, 0.4, (4, 2))
    az, bz, nz = est_step_jacobians_batch(zs, us, GEOM, 0.2)
    for k in range(4):
        ak, bk = est_step_jacobians(zs[k], us[k], GEOM, 0.2)
        np.testing.assert_array_equal(az[k], ak)
        np.testing.assert_array_equal(bz[k], bk)
    del nz


def test_steering_near_quarter_turn_rejected():
    state = np.zeros(6)
    with pytest.raises(DomainError):
        dynamics(state, np.array([np.pi / 2, 0.0]), (1.0, 1.0, 1.0), 1.0, GEOM)


def test_geometry_validation():
    with pytest.raises(ValueError):
        VehicleGeometry(tractor_wheelbase=0.0)
    with pytest.raises(ValueError):
        VehicleGeometry(drawbar_length=-1.0)
