"""Automatic segmentation of Frenet trajectories into LCL / LK / LCR intervals.

Marker crossings are found on the stitched (lane-continuous) lateral course.
Around each crossing the maneuver runs from the moment the vehicle has both
left its starting centreline and exceeded the lateral velocity threshold, up
to the moment the velocity falls back below it.  Velocities come from a
least-squares cubic B-spline fit of the position course.  Everything not
covered by a lane change is lane keeping.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_lsq_spline

from .errors import DegenerateManeuver, LaneProtoError, TrackTooShort
from .trajmodel import (
    LANE_WIDTH,
    Dataset,
    Kind,
    LateralTrack,
    ManeuverLabel,
    Trajectory,
    stitch_lateral,
)

log = logging.getLogger(__name__)

VELOCITY_THRESHOLD = 0.2
MIN_DURATION = 0.5
KNOT_SPACING = 0.5


@dataclass(frozen=True)
class LaneChangeEvent:
    t_cross: float
    kind: Kind
    index: int  # first sample beyond the crossed marker
    boundary: float  # stitched lateral position of the crossed marker


@dataclass
class LabelReport:
    discarded: list[tuple[int, float, str]] = field(default_factory=list)
    failed: list[tuple[int, str]] = field(default_factory=list)


def smooth_lateral(track: LateralTrack, knot_spacing: float = KNOT_SPACING,
                   degree: int = 3) -> LateralTrack:
    """Least-squares cubic B-spline approximation of ``d``; ``d_dot`` from its derivative."""
    n = len(track)
    if n < degree + 2:
        raise TrackTooShort(f"need at least {degree + 2} samples, got {n}")
    t = track.t - track.t0
    T = t[-1]
    n_inner = max(0, int(np.floor(T / knot_spacing + 1e-9)) - 1)
    # keep at least degree + 1 samples per knot interval
    n_inner = min(n_inner, max(0, n // (degree + 1) - 1))
    inner = np.linspace(0.0, T, n_inner + 2)[1:-1]
    knots = np.concatenate(([0.0] * (degree + 1), inner, [T] * (degree + 1)))
    spl = make_lsq_spline(t, track.d, knots, k=degree)
    return LateralTrack(track.t0, track.dt, spl(t), spl.derivative()(t))


def detect_lane_change_events(t, d, lane_width: float = LANE_WIDTH,
                              min_gap: float = MIN_DURATION) -> list[LaneChangeEvent]:
    """Marker crossings of a stitched lateral course.

    Lane boundaries sit at ``(k + 1/2) * lane_width``.  A crossing that is
    undone within ``min_gap`` seconds is treated as chatter and dropped
    together with its reversal.
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    if d.size < 2:
        return []
    lane = np.floor((d + 0.5 * lane_width) / lane_width).astype(int)
    events: list[LaneChangeEvent] = []
    for k in np.nonzero(np.diff(lane))[0] + 1:
        step = lane[k] - lane[k - 1]
        direction = 1 if step > 0 else -1
        # one event per boundary when a single sample skips several lanes
        for j in range(abs(step)):
            li = lane[k - 1] + direction * (j + 1)
            b = (li - 0.5) * lane_width if direction > 0 else (li + 0.5) * lane_width
            frac = (b - d[k - 1]) / (d[k] - d[k - 1])
            tc = t[k - 1] + frac * (t[k] - t[k - 1])
            kind = Kind.LCL if direction > 0 else Kind.LCR
            events.append(LaneChangeEvent(float(tc), kind, int(k), float(b)))
    # cancel back-and-forth chatter
    changed = True
    while changed:
        changed = False
        for i in range(len(events) - 1):
            a, b = events[i], events[i + 1]
            if a.kind is not b.kind and abs(a.boundary - b.boundary) < 1e-9 \
                    and b.t_cross - a.t_cross < min_gap:
                del events[i : i + 2]
                changed = True
                break
    return events


def _above_with_hysteresis(u: np.ndarray, threshold: float, hysteresis: int) -> np.ndarray:
    """Threshold mask with gaps of at most ``hysteresis`` samples filled."""
    above = u >= threshold
    if hysteresis <= 0 or above.size < 3:
        return above
    out = above.copy()
    k = 1
    while k < above.size:
        if above[k - 1] and not above[k]:
            j = k
            while j < above.size and not above[j]:
                j += 1
            if j < above.size and j - k <= hysteresis:
                out[k:j] = True
            k = j
        else:
            k += 1
    return out


def segment_maneuver(t, d, d_dot, event: LaneChangeEvent, threshold: float = VELOCITY_THRESHOLD,
                     lane_width: float = LANE_WIDTH, min_duration: float = MIN_DURATION,
                     hysteresis: int = 1) -> ManeuverLabel:
    """Maneuver bounds around one crossing.

    ``d`` is the stitched lateral course and ``d_dot`` its (smoothed) velocity.
    The velocity test is a closed one (``|d_dot| >= threshold`` is inside).
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    direction = event.kind.direction
    u = direction * np.asarray(d_dot, dtype=float)
    above = _above_with_hysteresis(u, threshold, hysteresis)
    c = event.index
    if not above[c]:
        if c > 0 and above[c - 1]:
            c -= 1
        else:
            raise DegenerateManeuver(f"velocity threshold not exceeded at crossing t={event.t_cross:.2f}")
    i_v = c
    while i_v > 0 and above[i_v - 1]:
        i_v -= 1
    i_e = c
    while i_e < u.size - 1 and above[i_e + 1]:
        i_e += 1
    centre = event.boundary - direction * 0.5 * lane_width
    beyond = direction * (d - centre) >= 0
    i_c = event.index
    while i_c > 0 and beyond[i_c - 1]:
        i_c -= 1
    start = max(i_v, i_c)
    if t[i_e] - t[start] < min_duration:
        raise DegenerateManeuver(
            f"maneuver at t={event.t_cross:.2f} lasts {t[i_e] - t[start]:.2f} s < {min_duration} s"
        )
    return ManeuverLabel(event.kind, float(t[start]), float(t[i_e]))


def _fill_lane_keeping(t0: float, t1: float, lc: list[ManeuverLabel]) -> list[ManeuverLabel]:
    out: list[ManeuverLabel] = []
    cursor = t0
    for lab in lc:
        if lab.t_start > cursor + 1e-9:
            out.append(ManeuverLabel(Kind.LK, cursor, lab.t_start))
        out.append(lab)
        cursor = lab.t_end
    if t1 > cursor + 1e-9:
        out.append(ManeuverLabel(Kind.LK, cursor, t1))
    return out


def label_trajectory(traj: Trajectory, lane_width: float = LANE_WIDTH,
                     threshold: float = VELOCITY_THRESHOLD, min_duration: float = MIN_DURATION,
                     knot_spacing: float = KNOT_SPACING,
                     report: LabelReport | None = None) -> list[ManeuverLabel]:
    """Partition one trajectory's time span into maneuver labels."""
    t = traj.t
    if t.size < 2:
        raise TrackTooShort("trajectory has fewer than two samples")
    dt = traj.dt
    stitched = stitch_lateral(traj.d, lane_width)
    smooth = smooth_lateral(LateralTrack(float(t[0]), dt, stitched, traj.d_dot), knot_spacing)
    events = detect_lane_change_events(t, smooth.d, lane_width, min_duration)
    lc: list[ManeuverLabel] = []
    for ev in events:
        try:
            lab = segment_maneuver(t, smooth.d, smooth.d_dot, ev, threshold, lane_width, min_duration)
        except DegenerateManeuver as exc:
            log.info("vehicle %s: %s", traj.vehicle_id, exc)
            if report is not None:
                report.discarded.append((traj.vehicle_id, ev.t_cross, str(exc)))
            continue
        if lc and lab.t_start < lc[-1].t_end:
            # consecutive changes sharing one velocity run: split at the later start
            prev = lc[-1]
            if lab.t_start <= prev.t_start + 1e-9:
                continue
            lc[-1] = ManeuverLabel(prev.kind, prev.t_start, lab.t_start)
        lc.append(lab)
    return _fill_lane_keeping(float(t[0]), float(t[-1]), lc)


def label_dataset(dataset: Dataset, threshold: float = VELOCITY_THRESHOLD,
                  min_duration: float = MIN_DURATION, knot_spacing: float = KNOT_SPACING,
                  report: LabelReport | None = None) -> Dataset:
    """Relabel every trajectory; failures skip the trajectory and are reported."""
    out = []
    for traj in dataset.trajectories:
        try:
            labels = label_trajectory(traj, dataset.lane_width, threshold, min_duration,
                                      knot_spacing, report)
        except LaneProtoError as exc:
            log.warning("vehicle %s skipped: %s", traj.vehicle_id, exc)
            if report is not None:
                report.failed.append((traj.vehicle_id, str(exc)))
            continue
        out.append(traj.with_labels(labels))
    return Dataset(out, dataset.sample_rate, dataset.lane_width)
