"""Batch experiment runner: estimator -> controller -> plant at 5 Hz.

Runs the closed loop, logs every cycle to CSV, and aggregates tracking and
timing metrics.  The per-cycle ordering is: sense, estimator sample +
estimate, controller feedback (consuming the QP prepared during the
previous cycle), plant step, controller preparation for the next cycle,
estimator arrival-cost update, log.
"""
from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .model import EST_FIELDS
from .nmhe import MeasSample, MheEstimator
from .nmpc import NmpcController
from .path import Path, PathCursor, lookahead_reference, project
from .plant import Plant

LOG_COLUMNS = (
    "t",
    "true_xt", "true_yt", "true_theta", "true_xi", "true_yi", "true_psi",
    "true_beta", "true_v", "true_mu", "true_kappa", "true_eta",
) + tuple(f"est_{name}" for name in EST_FIELDS) + (
    "cmd_delta_t", "cmd_delta_i", "act_delta_t", "act_delta_i",
    "gps_masked", "err_tractor", "err_trailer", "seg_tag",
    "t_nmpc_prep_ms", "t_nmpc_fb_ms", "t_mhe_prep_ms", "t_mhe_est_ms",
)
_TAG_COL = LOG_COLUMNS.index("seg_tag")
TIMING_COLUMNS = ("t_nmpc_prep_ms", "t_nmpc_fb_ms", "t_mhe_prep_ms", "t_mhe_est_ms")


@dataclass(frozen=True)
class PhaseTiming:
    min_ms: float
    avg_ms: float
    max_ms: float


@dataclass(frozen=True)
class MetricsReport:
    cycles: int
    straight_mean_tractor: float
    straight_max_tractor: float
    straight_mean_trailer: float
    straight_max_trailer: float
    curve_mean_tractor: float
    curve_max_tractor: float
    curve_mean_trailer: float
    curve_max_trailer: float
    dropout_count: int
    control_violations: int
    slip_violations: int
    timing: dict

    def text(self) -> str:
        lines = [
            f"cycles                 {self.cycles}",
            f"straight tractor  mean {self.straight_mean_tractor:.4f} m   "
            f"max {self.straight_max_tractor:.4f} m",
            f"straight trailer  mean {self.straight_mean_trailer:.4f} m   "
            f"max {self.straight_max_trailer:.4f} m",
            f"curve    tractor  mean {self.curve_mean_tractor:.4f} m   "
            f"max {self.curve_max_tractor:.4f} m",
            f"curve    trailer  mean {self.curve_mean_trailer:.4f} m   "
            f"max {self.curve_max_trailer:.4f} m",
            f"gps dropouts           {self.dropout_count}",
            f"control violations     {self.control_violations}",
            f"slip-bound violations  {self.slip_violations}",
            "phase timings (ms)          min      avg      max",
        ]
        for name in ("nmpc_preparation", "nmpc_feedback",
                     "mhe_preparation", "mhe_estimation", "overall"):
            ph = self.timing[name]
            lines.append(f"  {name:<22} {ph.min_ms:8.3f} {ph.avg_ms:8.3f} "
                         f"{ph.max_ms:8.3f}")
        return "\n".join(lines)


@dataclass
class ExperimentResult:
    log: dict
    metrics: MetricsReport
    track: Path


def load_dropout_schedule(path, dt: float) -> frozenset:
    """Cycle indices to force-mask, from a one-column CSV of times in seconds."""
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=1)
    return frozenset(int(round(float(t) / dt)) for t in np.atleast_1d(rows))


def write_log(rows, file) -> None:
    """Write log rows (tuples in LOG_COLUMNS order) as CSV with full precision."""
    def render(row):
        out = []
        for j, val in enumerate(row):
            if j == _TAG_COL:
                out.append(str(val))
            elif LOG_COLUMNS[j] == "gps_masked":
                out.append(str(int(val)))
            else:
                out.append(repr(float(val)))
        return out

    if hasattr(file, "write"):
        w = csv.writer(file, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow(render(row))
    else:
        with open(file, "w", encoding="utf-8", newline="") as fh:
            write_log(rows, fh)


def read_log(path) -> dict:
    """Read a log CSV back into a dict of column arrays."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != LOG_COLUMNS:
            raise ValueError("log header does not match the expected columns")
        rows = list(reader)
    out = {}
    for j, name in enumerate(LOG_COLUMNS):
        col = [row[j] for row in rows]
        if name == "seg_tag":
            out[name] = np.array(col, dtype=object)
        elif name == "gps_masked":
            out[name] = np.array([int(c) for c in col])
        else:
            out[name] = np.array([float(c) for c in col])
    return out


def rows_to_log(rows) -> dict:
    out = {}
    for j, name in enumerate(LOG_COLUMNS):
        col = [row[j] for row in rows]
        if name == "seg_tag":
            out[name] = np.array(col, dtype=object)
        elif name == "gps_masked":
            out[name] = np.array([int(v) for v in col])
        else:
            out[name] = np.array([float(v) for v in col])
    return out


def run_experiment(cfg: ExperimentConfig, *, log_file=None,
                   dropout_cycles=frozenset()) -> ExperimentResult:
    """Run the closed-loop experiment and return the log plus metrics.

    dropout_cycles force a full GPS mask on the listed cycle indices, on top
    of the random dropout model (whose draws still occur, keeping runs with
    and without a schedule aligned on the same seed).
    """
    track = cfg.track.build()
    geom = cfg.geometry
    dt = cfg.ocp.dt

    px, py, ph, _ = track.point_at(0.0)
    trail_s = -(geom.drawbar_length + geom.trailer_length)
    ix, iy, ih, _ = track.point_at(trail_s)
    pose0 = np.array([px, py, ph, ix, iy, ih])
    plant = Plant.start(cfg.plant, cfg.sensors, cfg.slip.schedule(), geom, pose0,
                        speed=cfg.plant.speed_ref, seed=cfg.run.seed)
    z0 = np.concatenate([pose0, [cfg.slip_init] * 3,
                         [ph - ih, cfg.plant.speed_ref]])
    mhe = MheEstimator(cfg.mhe, geom, z0)
    controller = NmpcController(cfg.ocp, geom, pose0,
                                slip=(cfg.slip_init,) * 3,
                                speed=cfg.plant.speed_ref)
    ref_cursor = PathCursor(track, s0=0.0)

    def make_refs(z, u_meas):
        return lookahead_reference(track, z[:2], u_meas, ref_cursor,
                                   lookahead=cfg.lookahead,
                                   horizon=cfg.ocp.horizon, dt=dt,
                                   speed=max(float(z[10]), 0.0), geom=geom)

    controller.prepare(make_refs(z0, np.zeros(2)), z0[6:9], float(z0[10]))

    n_cycles = int(round(cfg.run.duration / dt))
    rows = []
    z_hat = z0.copy()
    prep_thread = None

    for k in range(n_cycles):
        t_k = k * dt
        truth = plant.truth()
        y, u_meas, mask = plant.sense()
        if k in dropout_cycles:
            mask = mask.copy()
            mask[:4] = False
        mhe.add_sample(MeasSample(y, u_meas, mask, t_k))

        if mhe.size >= 2:
            z_hat, _, mstats = mhe.estimate()
            mhe_prep_ms = mstats.preparation_ms
            mhe_est_ms = mstats.estimation_ms
        else:
            z_hat = z0.copy()
            mhe_prep_ms = 0.0
            mhe_est_ms = 0.0

        if prep_thread is not None:
            prep_thread.join()
            prep_thread = None
        command, cstats = controller.feedback(z_hat[:6])

        plant.step(command, dt)

        refs = make_refs(z_hat, u_meas)
        if cfg.run.concurrent:
            prep_thread = threading.Thread(
                target=controller.prepare,
                args=(refs, z_hat[6:9].copy(), float(z_hat[10])))
            prep_thread.start()
        else:
            controller.prepare(refs, z_hat[6:9], float(z_hat[10]))

        t0 = time.perf_counter()
        mhe.update_arrival_cost()
        mhe_prep_ms += (time.perf_counter() - t0) * 1e3

        s_t, lat_t = project(track, (truth["xt"], truth["yt"]))
        _, lat_i = project(track, (truth["xi"], truth["yi"]))
        row = (
            t_k,
            truth["xt"], truth["yt"], truth["theta"],
            truth["xi"], truth["yi"], truth["psi"],
            truth["beta"], truth["v"],
            truth["mu"], truth["kappa"], truth["eta"],
            *z_hat,
            command[0], command[1], truth["delta_t"], truth["delta_i"],
            int(not bool(mask[0])),
            abs(lat_t), abs(lat_i), track.tag_at(s_t),
            cstats.preparation_ms, cstats.feedback_ms,
            mhe_prep_ms, mhe_est_ms,
        )
        rows.append(row)

    if prep_thread is not None:
        prep_thread.join()

    if log_file is not None:
        write_log(rows, log_file)
    log = rows_to_log(rows)
    metrics = compute_metrics(
        log, track,
        delta_t_max=cfg.ocp.delta_t_max, delta_i_max=cfg.ocp.delta_i_max,
        slip_min=cfg.mhe.slip_min, slip_max=cfg.mhe.slip_max)
    return ExperimentResult(log=log, metrics=metrics, track=track)


def compute_metrics(log: dict, track: Path, *, transient_s: float = 10.0,
                    delta_t_max: float = np.deg2rad(35.0),
                    delta_i_max: float = np.deg2rad(25.0),
                    slip_min: float = 0.25, slip_max: float = 1.0) -> MetricsReport:
    """Aggregate a log into tracking-error, dropout, violation, timing stats.

    Errors are re-derived from the true positions by projecting every cycle
    onto the track; segment attribution follows the tractor's projected
    station.  Segment stats exclude the initial transient; timing stats
    aggregate the per-row timing columns exactly.
    """
    n = log["t"].size
    if n == 0:
        raise ValueError("empty log")
    err_t = np.empty(n)
    err_i = np.empty(n)
    tags = np.empty(n, dtype=object)
    for k in range(n):
        s_t, lat_t = project(track, (log["true_xt"][k], log["true_yt"][k]))
        _, lat_i = project(track, (log["true_xi"][k], log["true_yi"][k]))
        err_t[k] = abs(lat_t)
        err_i[k] = abs(lat_i)
        tags[k] = track.tag_at(s_t)

    keep = log["t"] >= transient_s

    def seg_stats(err, tag):
        sel = keep & (tags == tag)
        if not np.any(sel):
            return float("nan"), float("nan")
        return float(err[sel].mean()), float(err[sel].max())

    sm_t, sx_t = seg_stats(err_t, "straight")
    sm_i, sx_i = seg_stats(err_i, "straight")
    cm_t, cx_t = seg_stats(err_t, "curve")
    cm_i, cx_i = seg_stats(err_i, "curve")

    tol = 1e-12
    ctrl_bad = (np.abs(log["cmd_delta_t"]) > delta_t_max + tol) | \
               (np.abs(log["cmd_delta_i"]) > delta_i_max + tol)
    slip_bad = np.zeros(n, dtype=bool)
    for name in ("est_mu", "est_kappa", "est_eta"):
        slip_bad |= (log[name] < slip_min - tol) | (log[name] > slip_max + tol)

    def phase(col):
        return PhaseTiming(float(col.min()), float(col.mean()), float(col.max()))

    overall = (log["t_nmpc_prep_ms"] + log["t_nmpc_fb_ms"]
               + log["t_mhe_prep_ms"] + log["t_mhe_est_ms"])
    timing = {
        "nmpc_preparation": phase(log["t_nmpc_prep_ms"]),
        "nmpc_feedback": phase(log["t_nmpc_fb_ms"]),
        "mhe_preparation": phase(log["t_mhe_prep_ms"]),
        "mhe_estimation": phase(log["t_mhe_est_ms"]),
        "overall": phase(overall),
    }
    return MetricsReport(
        cycles=n,
        straight_mean_tractor=sm_t, straight_max_tractor=sx_t,
        straight_mean_trailer=sm_i, straight_max_trailer=sx_i,
        curve_mean_tractor=cm_t, curve_max_tractor=cx_t,
        curve_mean_trailer=cm_i, curve_max_trailer=cx_i,
        dropout_count=int(log["gps_masked"].sum()),
        control_violations=int(ctrl_bad.sum()),
        slip_violations=int(slip_bad.sum()),
        timing=timing,
    )
