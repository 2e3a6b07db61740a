"""Conversion of locally sensed target states into lane-relative Frenet states.

Lane markings arrive as cubic polynomials ``y(x) = c3 x^3 + c2 x^2 + c1 x + c0``
in the sensing vehicle's local frame.  Each marking is linearised at the
target's longitudinal position and the signed perpendicular distance to that
tangent line is used as the distance to the marking.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import MarkingRangeExceeded
from .trajmodel import DT, LANE_WIDTH, Dataset, FrenetState, Trajectory


@dataclass(frozen=True)
class TargetState:
    x: float
    y: float
    theta: float
    v: float

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("absolute velocity must be non-negative")


@dataclass(frozen=True)
class LaneMarking:
    c3: float
    c2: float
    c1: float
    c0: float
    x_min: float = -math.inf
    x_max: float = math.inf

    def __call__(self, x):
        return ((self.c3 * x + self.c2) * x + self.c1) * x + self.c0

    def slope(self, x):
        return (3.0 * self.c3 * x + 2.0 * self.c2) * x + self.c1


@dataclass(frozen=True)
class LaneAssignment:
    left: LaneMarking
    right: LaneMarking
    lane_id: int = 0

    def width_at(self, x: float) -> float:
        return float(self.left(x) - self.right(x))


def signed_marking_distance(state: TargetState, marking: LaneMarking) -> float:
    """Distance from the target to the marking's tangent line at ``state.x``.

    Positive when the target lies left of the marking.
    """
    if not marking.x_min <= state.x <= marking.x_max:
        raise MarkingRangeExceeded(
            f"x={state.x} outside marking validity [{marking.x_min}, {marking.x_max}]"
        )
    m = marking.slope(state.x)
    return float((state.y - marking(state.x)) / math.sqrt(1.0 + m * m))


def lateral_offset(d_left: float, d_right: float) -> float:
    """Offset from the lane centreline given signed distances to both markings."""
    return 0.5 * (d_left + d_right)


def accumulate_s(prev: FrenetState, v: float, dt: float) -> float:
    """Arc length after one step, using the mean of previous and current speed."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return prev.s + 0.5 * (prev.s_dot + v) * dt


def to_frenet(state: TargetState, lanes: LaneAssignment, prev: FrenetState | None = None,
              dt: float = DT, alpha: float = 0.3) -> FrenetState:
    """Convert one target state.

    ``prev`` is the vehicle's previous Frenet state (caller-owned history).  The
    lateral velocity is one step of the low-pass filtered difference quotient
    also implemented by :func:`laneproto.trajmodel.lowpass_diff`; when the
    assigned lane changed between the two samples the jump of one lane width
    is removed from the quotient.
    """
    d_l = signed_marking_distance(state, lanes.left)
    d_r = signed_marking_distance(state, lanes.right)
    d = lateral_offset(d_l, d_r)
    if prev is None:
        return FrenetState(0.0, 0.0, state.v, d, 0.0)
    width = d_r - d_l
    step = d - prev.d
    if step > 0.5 * width:
        step -= width
    elif step < -0.5 * width:
        step += width
    q = step / dt
    d_dot = alpha * q + (1.0 - alpha) * prev.d_dot
    return FrenetState(prev.t + dt, accumulate_s(prev, state.v, dt), state.v, d, d_dot)


# --------------------------------------------------------------------------
# raw sensor CSV

RAW_HEADER = ["t", "vehicle_id", "x", "y", "theta", "v",
              "c3_l", "c2_l", "c1_l", "c0_l", "c3_r", "c2_r", "c1_r", "c0_r", "lane_id"]


def _lanes_from_row(rec) -> LaneAssignment:
    left = LaneMarking(*(float(rec[k]) for k in ("c3_l", "c2_l", "c1_l", "c0_l")))
    right = LaneMarking(*(float(rec[k]) for k in ("c3_r", "c2_r", "c1_r", "c0_r")))
    return LaneAssignment(left, right, int(float(rec["lane_id"])))


def convert_raw_csv(path, alpha: float = 0.3, lane_width: float = LANE_WIDTH) -> Dataset:
    """Read a raw sensor CSV and convert every vehicle into a Frenet trajectory."""
    per_vehicle: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            per_vehicle.setdefault(int(rec["vehicle_id"]), []).append(rec)
    trajs = []
    for vid in sorted(per_vehicle):
        recs = sorted(per_vehicle[vid], key=lambda r: float(r["t"]))
        states: list[FrenetState] = []
        for rec in recs:
            tgt = TargetState(float(rec["x"]), float(rec["y"]), float(rec["theta"]), float(rec["v"]))
            lanes = _lanes_from_row(rec)
            t = float(rec["t"])
            if states:
                st = to_frenet(tgt, lanes, states[-1], t - states[-1].t, alpha)
            else:
                st = to_frenet(tgt, lanes, None, DT, alpha)
                st = FrenetState(t, st.s, st.s_dot, st.d, st.d_dot)
            states.append(st)
        arr = np.array([[s.t, s.s, s.s_dot, s.d, s.d_dot] for s in states])
        trajs.append(Trajectory(vid, *arr.T))
    rate = 1.0 / float(np.median(np.diff(trajs[0].t))) if trajs and len(trajs[0]) > 1 else 1.0 / DT
    return Dataset(trajs, sample_rate=rate, lane_width=lane_width)
