"""Core trajectory representations, resampling, padding and differentiation.

Conventions used throughout the package:

* ``d`` is the signed lateral offset from the lane centreline, positive to
  the **left**.
* all series are sampled on a uniform grid, by default ``DT = 0.04`` s.
* a trajectory's raw ``d`` is relative to the lane the vehicle currently
  occupies and therefore jumps by one lane width at a marker crossing;
  :func:`lane_indices` / :func:`stitch_lateral` undo that.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import BadFilterCoefficient, EmptyTrajectory, NonMonotoneTime, SpanTooSmall

DT = 0.04
LANE_WIDTH = 3.6


class Kind(str, enum.Enum):
    LCL = "LCL"
    LK = "LK"
    LCR = "LCR"

    @property
    def direction(self) -> int:
        """+1 for a change to the left, -1 to the right, 0 for lane keeping."""
        return {"LCL": 1, "LK": 0, "LCR": -1}[self.value]


# class order used for argmax tie-breaks and array layouts
CLASSES: tuple[Kind, ...] = (Kind.LCL, Kind.LK, Kind.LCR)
CLASS_INDEX = {k: i for i, k in enumerate(CLASSES)}


@dataclass(frozen=True)
class FrenetState:
    t: float
    s: float
    s_dot: float
    d: float
    d_dot: float


@dataclass(frozen=True)
class LateralTrack:
    """Uniformly sampled lateral position/velocity series."""

    t0: float
    dt: float
    d: np.ndarray
    d_dot: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        d_dot = np.asarray(self.d_dot, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if d.ndim != 1 or d.size == 0:
            raise EmptyTrajectory("track must hold at least one sample")
        if d.shape != d_dot.shape:
            raise ValueError("d and d_dot must have equal length")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "d_dot", d_dot)

    def __len__(self) -> int:
        return self.d.size

    @property
    def duration(self) -> float:
        return (self.d.size - 1) * self.dt

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.d.size)


@dataclass(frozen=True)
class ManeuverLabel:
    kind: Kind
    t_start: float
    t_end: float

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.t_start < self.t_end:
            raise ValueError(f"label needs t_start < t_end, got {self.t_start}, {self.t_end}")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class Trajectory:
    """One vehicle's Frenet state history plus its maneuver labels."""

    vehicle_id: int
    t: np.ndarray
    s: np.ndarray
    s_dot: np.ndarray
    d: np.ndarray
    d_dot: np.ndarray
    labels: list[ManeuverLabel] = field(default_factory=list)

    def __post_init__(self):
        for name in ("t", "s", "s_dot", "d", "d_dot"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def __len__(self) -> int:
        return self.t.size

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t))) if self.t.size > 1 else DT

    def states(self) -> list[FrenetState]:
        return [FrenetState(*row) for row in zip(self.t, self.s, self.s_dot, self.d, self.d_dot)]

    def with_labels(self, labels: list[ManeuverLabel]) -> "Trajectory":
        return replace(self, labels=list(labels))

    def frame_labels(self) -> np.ndarray:
        """Class index per sample; lane-change labels are closed intervals."""
        out = np.full(self.t.size, CLASS_INDEX[Kind.LK], dtype=int)
        eps = 1e-9
        for lab in self.labels:
            if lab.kind is Kind.LK:
                continue
            mask = (self.t >= lab.t_start - eps) & (self.t <= lab.t_end + eps)
            out[mask] = CLASS_INDEX[lab.kind]
        return out

    def kind(self) -> Kind:
        """Kind of the first lane change, LK when there is none."""
        for lab in self.labels:
            if lab.kind is not Kind.LK:
                return lab.kind
        return Kind.LK


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    sample_rate: float = 1.0 / DT
    lane_width: float = LANE_WIDTH

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def by_id(self) -> dict[int, Trajectory]:
        return {tr.vehicle_id: tr for tr in self.trajectories}

    def labels(self) -> list[tuple[int, ManeuverLabel]]:
        return [(tr.vehicle_id, lab) for tr in self.trajectories for lab in tr.labels]

    def maneuver_counts(self) -> dict[Kind, int]:
        counts = {k: 0 for k in CLASSES}
        for _, lab in self.labels():
            counts[lab.kind] += 1
        return counts


# --------------------------------------------------------------------------
# operations


def _series_arrays(series) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(series, Trajectory):
        return series.t, series.d, series.d_dot
    if isinstance(series, LateralTrack):
        return series.t, series.d, series.d_dot
    states = list(series)
    if not states:
        return np.empty(0), np.empty(0), np.empty(0)
    t = np.array([st.t for st in states], dtype=float)
    d = np.array([st.d for st in states], dtype=float)
    d_dot = np.array([st.d_dot for st in states], dtype=float)
    return t, d, d_dot


def resample_uniform(series: Sequence[FrenetState] | Trajectory, dt: float = DT) -> LateralTrack:
    """Linearly interpolate ``d`` and ``d_dot`` onto ``t0, t0 + dt, ...``.

    The grid stops at the last point not beyond the final sample time.
    """
    t, d, d_dot = _series_arrays(series)
    if t.size < 2:
        raise EmptyTrajectory("resampling needs at least two samples")
    if np.any(np.diff(t) <= 0):
        raise NonMonotoneTime("sample times must be strictly increasing")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = int(np.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
    grid = t[0] + dt * np.arange(n)
    return LateralTrack(float(t[0]), dt, np.interp(grid, t, d), np.interp(grid, t, d_dot))


def extend_to_span(track: LateralTrack, t_min: float, t_max: float) -> LateralTrack:
    """Pad a track by holding its first/last value so it covers ``[t_min, t_max]``."""
    n_pre = int(round((track.t0 - t_min) / track.dt))
    n_post = int(round((t_max - track.t_end) / track.dt))
    if n_pre < 0 or n_post < 0:
        raise SpanTooSmall(
            f"span [{t_min}, {t_max}] does not contain track span [{track.t0}, {track.t_end}]"
        )
    if n_pre == 0 and n_post == 0:
        return track
    d = np.pad(track.d, (n_pre, n_post), mode="edge")
    d_dot = np.pad(track.d_dot, (n_pre, n_post), mode="edge")
    return LateralTrack(track.t0 - n_pre * track.dt, track.dt, d, d_dot)


def lowpass_diff(d, dt: float = DT, alpha: float = 1.0) -> np.ndarray:
    """Difference quotient smoothed by a first-order exponential filter.

    ``y[k] = alpha * q[k] + (1 - alpha) * y[k-1]`` with ``q[k] = (d[k] - d[k-1]) / dt``;
    the first quotient is duplicated so the output has the input's length.
    """
    if not 0.0 < alpha <= 1.0:
        raise BadFilterCoefficient(f"alpha must lie in (0, 1], got {alpha}")
    d = np.asarray(d, dtype=float)
    if d.size < 2:
        raise EmptyTrajectory("differentiation needs at least two samples")
    q = np.diff(d) / dt
    q = np.concatenate(([q[0]], q))
    if alpha == 1.0:
        return q
    y, _ = lfilter([alpha], [1.0, alpha - 1.0], q, zi=[(1.0 - alpha) * q[0]])
    return y


def lane_indices(d, lane_width: float = LANE_WIDTH) -> np.ndarray:
    """Relative lane index per sample (0 = initial lane, +1 per change to the left).

    Detects the jumps of a lane-relative ``d`` series at marker crossings.
    """
    d = np.asarray(d, dtype=float)
    if d.size == 0:
        return np.zeros(0, dtype=int)
    jumps = np.diff(d)
    step = np.zeros(d.size - 1, dtype=int)
    step[jumps < -0.5 * lane_width] = 1
    step[jumps > 0.5 * lane_width] = -1
    return np.concatenate(([0], np.cumsum(step)))


def stitch_lateral(d, lane_width: float = LANE_WIDTH) -> np.ndarray:
    """Continuous lateral course relative to the initial lane's centreline."""
    d = np.asarray(d, dtype=float)
    return d + lane_width * lane_indices(d, lane_width)


# --------------------------------------------------------------------------
# CSV formats

TRAJ_HEADER = ["vehicle_id", "t", "s", "s_dot", "d", "d_dot"]
LABEL_HEADER = ["vehicle_id", "kind", "t_start", "t_end"]


def write_trajectory_csv(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJ_HEADER)
        for tr in sorted(trajectories, key=lambda x: x.vehicle_id):
            for row in zip(tr.t, tr.s, tr.s_dot, tr.d, tr.d_dot):
                w.writerow([tr.vehicle_id, *(repr(float(v)) for v in row)])


def read_trajectory_csv(path) -> list[Trajectory]:
    rows: dict[int, list[list[float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRAJ_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            rows.setdefault(int(rec["vehicle_id"]), []).append(
                [float(rec[k]) for k in TRAJ_HEADER[1:]]
            )
    out = []
    for vid, data in rows.items():
        arr = np.array(sorted(data, key=lambda r: r[0]))
        out.append(Trajectory(vid, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4]))
    return out


def write_label_csv(path, labels: Iterable[tuple[int, ManeuverLabel]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LABEL_HEADER)
        for vid, lab in labels:
            w.writerow([vid, lab.kind.value, repr(float(lab.t_start)), repr(float(lab.t_end))])


def read_label_csv(path) -> dict[int, list[ManeuverLabel]]:
    out: dict[int, list[ManeuverLabel]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            lab = ManeuverLabel(Kind(rec["kind"]), float(rec["t_start"]), float(rec["t_end"]))
            out.setdefault(int(rec["vehicle_id"]), []).append(lab)
    for labs in out.values():
        labs.sort(key=lambda lab: lab.t_start)
    return out


def write_scenes(directory, dataset: Dataset) -> list[Path]:
    """One trajectory CSV per vehicle (scene) inside ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for tr in dataset.trajectories:
        p = directory / f"scene_{tr.vehicle_id:05d}.csv"
        write_trajectory_csv(p, [tr])
        paths.append(p)
    return paths


def read_scenes(directory, labels: dict[int, list[ManeuverLabel]] | None = None,
                sample_rate: float = 1.0 / DT, lane_width: float = LANE_WIDTH) -> Dataset:
    directory = Path(directory)
    trajs: list[Trajectory] = []
    for p in sorted(directory.glob("*.csv")):
        trajs.extend(read_trajectory_csv(p))
    trajs.sort(key=lambda tr: tr.vehicle_id)
    if labels is not None:
        trajs = [tr.with_labels(labels.get(tr.vehicle_id, [])) for tr in trajs]
    return Dataset(trajs, sample_rate=sample_rate, lane_width=lane_width)
