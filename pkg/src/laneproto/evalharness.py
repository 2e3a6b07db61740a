"""Evaluation protocol: stratified split, balanced frame metrics, prediction
time, and binned position / Mahalanobis errors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cluster import VAR_FLOOR
from .errors import StratificationError
from .trajmodel import CLASSES, LANE_WIDTH, Dataset, Kind, ManeuverLabel, Trajectory, lane_indices

BIN_WIDTH = 0.5
MAX_HORIZON = 4.0


# --------------------------------------------------------------------------
# split


def split_ids(kinds: dict, ratio: float = 0.7, seed: int = 42) -> tuple[list, list]:
    """Stratified split of vehicle ids given each vehicle's maneuver kind.

    Each kind contributes ``round(ratio * n)`` vehicles to the first part.
    Ids are visited in sorted order so the result does not depend on dict order.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    by_kind: dict[Kind, list] = {k: [] for k in CLASSES}
    for vid in sorted(kinds):
        by_kind[Kind(kinds[vid])].append(vid)
    first, second = [], []
    for kind in CLASSES:
        ids = by_kind[kind]
        if len(ids) == 1:
            raise StratificationError(f"only one {kind.value} maneuver; cannot stratify")
        perm = [ids[j] for j in rng.permutation(len(ids))]
        n_first = int(math.floor(ratio * len(ids) + 0.5))
        first += perm[:n_first]
        second += perm[n_first:]
    return sorted(first), sorted(second)


def split_dataset(dataset: Dataset, ratio: float = 0.7, seed: int = 42) -> tuple[Dataset, Dataset]:
    """Vehicle-level split, stratified by each vehicle's maneuver kind."""
    first, second = split_ids({tr.vehicle_id: tr.kind() for tr in dataset.trajectories}, ratio, seed)
    by_id = dataset.by_id()
    pick = lambda ids: Dataset([by_id[i] for i in ids], dataset.sample_rate, dataset.lane_width)
    return pick(first), pick(second)


# --------------------------------------------------------------------------
# classification metrics


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall (0 when both vanish)."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ClassMetrics:
    tp: int
    fn: int
    fp: int
    tn: int
    tpr: float | None
    fpr: float | None
    prc: float | None
    f1: float | None
    miss_rate: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def balanced_metrics(pred, labels) -> dict[Kind, ClassMetrics]:
    """One-vs-rest frame metrics with the class-balanced precision ``TPR / (TPR + FPR)``.

    Rates of a class without positive (or negative) frames are ``None``.
    """
    pred = np.asarray(pred, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if pred.shape != labels.shape:
        raise ValueError("prediction and label streams must align")
    out = {}
    for c, kind in enumerate(CLASSES):
        pos, hit = labels == c, pred == c
        tp, fn = int(np.sum(pos & hit)), int(np.sum(pos & ~hit))
        fp, tn = int(np.sum(~pos & hit)), int(np.sum(~pos & ~hit))
        tpr = tp / (tp + fn) if tp + fn else None
        fpr = fp / (fp + tn) if fp + tn else None
        prc = f1 = miss = None
        if tpr is not None and fpr is not None:
            prc = tpr / (tpr + fpr) if tpr + fpr > 0 else 0.0
            f1 = f1_score(prc, tpr)
        if tpr is not None:
            miss = 1.0 - tpr
        out[kind] = ClassMetrics(tp, fn, fp, tn, tpr, fpr, prc, f1, miss)
    return out


# --------------------------------------------------------------------------
# prediction time


@dataclass
class ManeuverStream:
    vehicle_id: int
    kind: Kind
    t_start: float
    t_cross: float
    t: np.ndarray  # frame times
    pred: np.ndarray  # predicted class index per frame


def detection_start(stream: ManeuverStream) -> float | None:
    """Start of the final run of correct outputs that lasts until the crossing.

    Only frames inside ``[t_start, t_cross]`` count; ``None`` if the last
    frame before the crossing is wrong.
    """
    target = CLASSES.index(Kind(stream.kind))
    sel = np.nonzero((stream.t >= stream.t_start - 1e-9) & (stream.t <= stream.t_cross + 1e-9))[0]
    if sel.size == 0 or stream.pred[sel[-1]] != target:
        return None
    k = sel.size - 1
    while k > 0 and stream.pred[sel[k - 1]] == target:
        k -= 1
    return float(stream.t[sel[k]])


def prediction_time(stream: ManeuverStream) -> float:
    start = detection_start(stream)
    return 0.0 if start is None else stream.t_cross - start


def avg_prediction_time(streams: list[ManeuverStream]) -> dict:
    """Mean over all maneuvers (undetected count as 0) and over detected ones only."""
    times = np.array([prediction_time(s) for s in streams])
    detected = np.array([detection_start(s) is not None for s in streams], dtype=bool)
    return {
        "mean": float(times.mean()) if times.size else None,
        "mean_detected": float(times[detected].mean()) if detected.any() else None,
        "n": int(times.size),
        "n_detected": int(detected.sum()),
    }


def crossing_time(traj: Trajectory, label: ManeuverLabel, lane_width: float = LANE_WIDTH) -> float:
    """First marker crossing inside a lane-change label, interpolated linearly."""
    lanes = lane_indices(traj.d, lane_width)
    stitched = traj.d + lane_width * lanes
    sel = np.nonzero((traj.t >= label.t_start - 1e-9) & (traj.t <= label.t_end + 1e-9))[0]
    if sel.size < 2:
        raise ValueError("label covers fewer than two samples")
    base = lane_width * lanes[sel[0]]
    boundary = base + label.kind.direction * 0.5 * lane_width
    u = label.kind.direction * (stitched[sel] - boundary)
    k = np.nonzero(u >= 0)[0]
    if k.size == 0 or k[0] == 0:
        return float(traj.t[sel[k[0]]]) if k.size else float(traj.t[sel[-1]])
    i = sel[k[0]]
    frac = -u[k[0] - 1] / (u[k[0]] - u[k[0] - 1])
    return float(traj.t[i - 1] + frac * (traj.t[i] - traj.t[i - 1]))


# --------------------------------------------------------------------------
# binned errors


@dataclass
class ErrorAccumulator:
    """Per-bin sums of absolute errors over look-ahead times ``[n dT, (n+1) dT)``."""

    bin_width: float = BIN_WIDTH
    max_horizon: float = MAX_HORIZON
    sums: dict = field(default_factory=dict)
    counts: np.ndarray | None = None
    floored: int = 0

    def __post_init__(self):
        self.n_bins = int(round(self.max_horizon / self.bin_width))
        if self.counts is None:
            self.counts = np.zeros(self.n_bins, dtype=int)

    def add(self, tau, **errors) -> None:
        tau = np.asarray(tau, dtype=float)
        b = np.floor(tau / self.bin_width + 1e-9).astype(int)
        ok = (tau >= 0) & (b < self.n_bins)
        self.counts += np.bincount(b[ok], minlength=self.n_bins)
        for name, err in errors.items():
            err = np.abs(np.asarray(err, dtype=float))
            acc = self.sums.setdefault(name, np.zeros(self.n_bins))
            acc += np.bincount(b[ok], weights=err[ok], minlength=self.n_bins)

    def means(self, name: str) -> list[float | None]:
        s = self.sums.get(name, np.zeros(self.n_bins))
        return [float(s[i] / self.counts[i]) if self.counts[i] else None for i in range(self.n_bins)]

    def centres(self) -> list[float]:
        return [(i + 0.5) * self.bin_width for i in range(self.n_bins)]


def position_error_bins(tau, err_lat, err_lon=None, bin_width: float = BIN_WIDTH,
                        max_horizon: float = MAX_HORIZON) -> dict:
    """Mean absolute lateral (and longitudinal) error per look-ahead bin; empty bins are ``None``."""
    acc = ErrorAccumulator(bin_width, max_horizon)
    errs = {"lateral": err_lat}
    if err_lon is not None:
        errs["longitudinal"] = err_lon
    acc.add(tau, **errs)
    out = {"bin_centre": acc.centres(), "count": acc.counts.tolist(), "lateral": acc.means("lateral")}
    if err_lon is not None:
        out["longitudinal"] = acc.means("longitudinal")
    return out


def normalised_errors(truth, mu, var, floor: float = VAR_FLOOR) -> tuple[np.ndarray, int]:
    """``|truth - mu| / sigma`` with non-positive variances floored; also the floor count."""
    var = np.asarray(var, dtype=float)
    bad = ~(var > 0)
    v = np.where(bad, floor, var)
    return np.abs(np.asarray(truth) - np.asarray(mu)) / np.sqrt(v), int(bad.sum())


def mahalanobis_error_bins(tau, truth, mu, var, bin_width: float = BIN_WIDTH,
                           max_horizon: float = MAX_HORIZON) -> dict:
    """Mean lateral Mahalanobis error per look-ahead bin plus a floor diagnostics count."""
    e, n_floor = normalised_errors(truth, mu, var)
    acc = ErrorAccumulator(bin_width, max_horizon)
    acc.add(tau, mahalanobis=e)
    return {"bin_centre": acc.centres(), "count": acc.counts.tolist(),
            "mahalanobis": acc.means("mahalanobis"), "variance_floored": n_floor}
