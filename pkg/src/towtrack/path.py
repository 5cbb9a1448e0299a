"""Track geometry: line/arc track construction, projection, lookahead references."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import VehicleGeometry


class ConfigError(ValueError):
    """Invalid track or experiment configuration."""


@dataclass(frozen=True)
class Straight:
    length: float


@dataclass(frozen=True)
class Arc:
    radius: float
    angle: float  # signed total turn, positive left


@dataclass(frozen=True)
class _Segment:
    kind: str  # "straight" | "curve"
    s0: float
    length: float
    x0: float
    y0: float
    heading0: float
    radius: float  # 0 for straights
    turn: float    # signed total turn, 0 for straights

    def point(self, ds):
        """Exact pose at within-segment arclength ds: (x, y, heading, curvature)."""
        ds = np.asarray(ds, dtype=float)
        if self.kind == "straight":
            x = self.x0 + math.cos(self.heading0) * ds
            y = self.y0 + math.sin(self.heading0) * ds
            h = np.broadcast_to(self.heading0, ds.shape).astype(float)
            k = np.zeros(ds.shape)
            return x, y, h, k
        sgn = 1.0 if self.turn >= 0.0 else -1.0
        cx = self.x0 - sgn * self.radius * math.sin(self.heading0)
        cy = self.y0 + sgn * self.radius * math.cos(self.heading0)
        phi = (self.heading0 - sgn * 0.5 * math.pi) + sgn * ds / self.radius
        x = cx + self.radius * np.cos(phi)
        y = cy + self.radius * np.sin(phi)
        h = self.heading0 + sgn * ds / self.radius
        k = np.full(ds.shape, sgn / self.radius)
        return x, y, h, k

    def end_pose(self):
        x, y, h, _ = self.point(np.asarray(self.length))
        return float(x), float(y), float(h)


@dataclass
class Path:
    """Arclength-sampled track with exact analytic evaluation per segment.

    Samples are spaced at most `spacing` apart; headings are continuous
    (unwrapped) along the whole track and `s` is strictly increasing.
    """

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    curvature: np.ndarray
    tag: np.ndarray
    total_length: float
    closed: bool
    segments: tuple

    def wrap(self, s):
        s = np.asarray(s, dtype=float)
        if self.closed:
            return np.remainder(s, self.total_length)
        return np.clip(s, 0.0, self.total_length)

    def _segment_index(self, s):
        bounds = np.array([seg.s0 for seg in self.segments])
        return np.clip(np.searchsorted(bounds, s, side="right") - 1, 0, len(self.segments) - 1)

    def point_at(self, s):
        """Exact pose on the track at station s: (x, y, heading, curvature).

        Stations wrap modulo total_length on closed tracks and clamp to the
        ends on open ones.  Accepts scalars or arrays.
        """
        scalar = np.isscalar(s) or np.ndim(s) == 0
        s = np.atleast_1d(self.wrap(s))
        idx = self._segment_index(s)
        out = np.empty((s.size, 4))
        for i, seg in enumerate(self.segments):
            m = idx == i
            if np.any(m):
                x, y, h, k = seg.point(s[m] - seg.s0)
                out[m, 0] = x
                out[m, 1] = y
                out[m, 2] = h
                out[m, 3] = k
        if scalar:
            return tuple(out[0])
        return out[:, 0], out[:, 1], out[:, 2], out[:, 3]

    def tag_at(self, s):
        """Segment tag ("straight" | "curve") at station s (scalar)."""
        s = float(np.atleast_1d(self.wrap(s))[0])
        return self.segments[int(self._segment_index(np.array([s]))[0])].kind

    def export_csv(self, file) -> None:
        """Write the sample table with columns s,x,y,heading,curvature,tag."""
        close = False
        if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
            file = open(file, "w", newline="")
            close = True
        try:
            w = csv.writer(file, lineterminator="\n")
            w.writerow(("s", "x", "y", "heading", "curvature", "tag"))
            for i in range(self.s.size):
                w.writerow((repr(float(self.s[i])), repr(float(self.x[i])),
                            repr(float(self.y[i])), repr(float(self.heading[i])),
                            repr(float(self.curvature[i])), str(self.tag[i])))
        finally:
            if close:
                file.close()


def build_path(pieces, start=(0.0, 0.0), heading: float = 0.0,
               spacing: float = 0.05, closed: bool = False) -> Path:
    """Assemble a track from Straight/Arc pieces laid end to end.

    Each piece is sampled uniformly at no more than `spacing` between
    samples; the sample table is exact (taken from the analytic segment
    evaluation, not dead reckoning).
    """
    if spacing <= 0.0:
        raise ConfigError("sample spacing must be positive")
    if not pieces:
        raise ConfigError("a track needs at least one piece")
    segments = []
    x, y, h = float(start[0]), float(start[1]), float(heading)
    s0 = 0.0
    for p in pieces:
        if isinstance(p, Straight):
            if p.length <= 0.0:
                raise ConfigError("straight length must be positive")
            seg = _Segment("straight", s0, p.length, x, y, h, 0.0, 0.0)
        elif isinstance(p, Arc):
            if p.radius <= 0.0 or p.angle == 0.0:
                raise ConfigError("arc needs positive radius and nonzero angle")
            seg = _Segment("curve", s0, abs(p.angle) * p.radius, x, y, h, p.radius, p.angle)
        else:
            raise ConfigError(f"unknown track piece {p!r}")
        segments.append(seg)
        x, y, h = seg.end_pose()
        s0 += seg.length
    total = s0

    ss, xs, ys, hs, ks, tags = [], [], [], [], [], []
    for seg in segments:
        n = max(1, math.ceil(seg.length / spacing - 1e-12))
        offs = np.arange(n) * (seg.length / n)
        px, py, ph, pk = seg.point(offs)
        ss.append(seg.s0 + offs)
        xs.append(px)
        ys.append(py)
        hs.append(ph)
        ks.append(pk)
        tags.extend([seg.kind] * n)
    if not closed:
        # keep the final endpoint as an explicit sample on open tracks
        seg = segments[-1]
        px, py, ph, pk = seg.point(np.asarray(seg.length))
        ss.append(np.array([total]))
        xs.append(np.array([float(px)]))
        ys.append(np.array([float(py)]))
        hs.append(np.array([float(ph)]))
        ks.append(np.array([float(pk)]))
        tags.append(seg.kind)
    return Path(
        s=np.concatenate(ss), x=np.concatenate(xs), y=np.concatenate(ys),
        heading=np.concatenate(hs), curvature=np.concatenate(ks),
        tag=np.array(tags), total_length=total, closed=closed,
        segments=tuple(segments),
    )


def build_eight_track(straight_len: float = 30.0, radius: float = 10.0,
                      spacing: float = 0.05) -> Path:
    """Closed figure-eight: two straights crossing at the center joined by two arcs.

    The straights are the inner tangents of two circles of the given radius;
    each lobe's arc turns through pi + 2*atan(2*radius/straight_len), one
    clockwise and one counter-clockwise.
    """
    if straight_len <= 0.0 or radius <= 0.0:
        raise ConfigError("straight_len and radius must be positive")
    if 2.0 * radius > straight_len:
        raise ConfigError("infeasible eight: need 2 * radius <= straight_len")
    alpha = math.atan2(2.0 * radius, straight_len)
    turn = math.pi + 2.0 * alpha
    half = 0.5 * straight_len
    start = (-half * math.cos(alpha), -half * math.sin(alpha))
    path = build_path(
        [Straight(straight_len), Arc(radius, -turn),
         Straight(straight_len), Arc(radius, turn)],
        start=start, heading=alpha, spacing=spacing, closed=True,
    )
    end = path.segments[-1].end_pose()
    gap = math.hypot(end[0] - start[0], end[1] - start[1])
    if gap > 1e-9 * max(1.0, path.total_length):
        raise ConfigError(f"eight track failed to close (gap {gap:.3e} m)")
    return path


def _chord_project(px, py, ax, ay, bx, by, sa, sb):
    dx, dy = bx - ax, by - ay
    dd = dx * dx + dy * dy
    if dd == 0.0:
        t = 0.0
    else:
        t = min(1.0, max(0.0, ((px - ax) * dx + (py - ay) * dy) / dd))
    fx, fy = ax + t * dx, ay + t * dy
    ex, ey = px - fx, py - fy
    dist2 = ex * ex + ey * ey
    norm = math.sqrt(dd)
    if norm == 0.0:
        lat = math.sqrt(dist2)
    else:
        lat = (dx * ey - dy * ex) / norm  # positive left of travel
    return dist2, sa + t * (sb - sa), lat


def project(path: Path, point, prev_s=None,
            window_back: float = 5.0, window_ahead: float = 15.0):
    """Station and signed lateral offset of the closest track point.

    Returns (s, lateral) with lateral positive to the left of the travel
    direction; |lateral| is the Euclidean distance to the track.  With
    prev_s given, only stations within [prev_s - window_back,
    prev_s + window_ahead] are searched, which keeps tracking monotone
    through the figure-eight crossing.
    """
    px, py = float(point[0]), float(point[1])
    n = path.s.size
    if prev_s is None:
        cand = np.arange(n)
    else:
        lo = prev_s - window_back
        hi = prev_s + window_ahead
        if path.closed:
            lo_w = float(np.remainder(lo, path.total_length))
            hi_w = float(np.remainder(hi, path.total_length))
            i0 = int(np.searchsorted(path.s, lo_w))
            i1 = int(np.searchsorted(path.s, hi_w))
            if hi - lo >= path.total_length:
                cand = np.arange(n)
            elif lo_w <= hi_w:
                cand = np.arange(i0, i1)
            else:
                cand = np.concatenate([np.arange(i0, n), np.arange(0, i1)])
        else:
            i0 = int(np.searchsorted(path.s, max(0.0, lo)))
            i1 = int(np.searchsorted(path.s, min(path.total_length, hi)))
            cand = np.arange(max(0, i0 - 1), min(n, i1 + 1))
        if cand.size == 0:
            cand = np.arange(n)
    dx = path.x[cand] - px
    dy = path.y[cand] - py
    i = int(cand[int(np.argmin(dx * dx + dy * dy))])

    best = None
    for a in (i - 1, i):
        b = a + 1
        if path.closed:
            aw, bw = a % n, b % n
        else:
            if a < 0 or b >= n:
                continue
            aw, bw = a, b
        sa = float(path.s[aw])
        sb = float(path.s[bw])
        if bw <= aw:
            sb = float(path.s[bw]) + path.total_length
        if aw == bw:
            continue
        res = _chord_project(px, py, float(path.x[aw]), float(path.y[aw]),
                             float(path.x[bw]), float(path.y[bw]), sa, sb)
        if best is None or res[0] < best[0]:
            best = res
    if best is None:  # single-sample path
        best = (dx[0] ** 2 + dy[0] ** 2, float(path.s[i]), math.hypot(px - path.x[i], py - path.y[i]))
    s_best = best[1]
    if path.closed:
        s_best = float(np.remainder(s_best, path.total_length))
    return s_best, best[2]


class PathCursor:
    """Monotone station tracker for repeated projections of a moving point."""

    def __init__(self, path: Path, s0=None):
        self.path = path
        self.s = s0

    def project(self, point):
        s, lat = project(self.path, point, prev_s=self.s)
        self.s = s
        return s, lat


@dataclass
class ReferenceHorizon:
    """Per-cycle tracking targets: N+1 reference states and N reference inputs."""

    states: np.ndarray    # (N+1, 6)
    inputs: np.ndarray    # (N, 2)
    stations: np.ndarray  # (N+1,) tractor reference stations


def lookahead_reference(path: Path, tractor_position, measured_controls,
                        cursor: PathCursor, *, lookahead: float = 1.6,
                        horizon: int = 15, dt: float = 0.2, speed: float = 1.0,
                        geom: VehicleGeometry = VehicleGeometry()) -> ReferenceHorizon:
    """Space-based tracking targets ahead of the vehicle.

    The tractor's rear-axle position is projected onto the track; reference
    k sits `lookahead` meters of arclength beyond the front-axle station,
    advanced by k*speed*dt.  Trailer references trail each tractor reference
    by the drawbar plus trailer length.  Reference inputs repeat the latest
    measured steering angles over the horizon.
    """
    s_rear, _ = cursor.project(tractor_position)
    base = s_rear + geom.tractor_wheelbase + lookahead
    st = base + speed * dt * np.arange(horizon + 1)
    tx, ty, th, _ = path.point_at(st)
    st_trail = st - (geom.drawbar_length + geom.trailer_length)
    ix, iy, ih, _ = path.point_at(st_trail)
    states = np.stack([tx, ty, th, ix, iy, ih], axis=1)
    inputs = np.tile(np.asarray(measured_controls, dtype=float), (horizon, 1))
    return ReferenceHorizon(states, inputs, path.wrap(st))
