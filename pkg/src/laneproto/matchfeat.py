"""Matching of partial trajectories against prototypes, and classifier features.

A partial trajectory is the last ``T_buffer`` seconds of a vehicle's lateral
states.  Against a prototype it is compared with a variance-normalised L1
distance: the partial's newest sample is aligned to prototype time ``tau``
and ``|d - mu| / sigma`` is averaged over the overlapping part of the buffer.

Lateral positions of a partial are expressed relative to the centreline of
the lane the oldest buffered sample was in, which is also the frame of the
prototypes (they start in their own initial lane).  A vehicle that has
already crossed the marking is in the target lane for its whole buffer, so a
second candidate frame shifted by one lane width towards the starting lane is
tried as well and the better of the two is kept.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

from .cluster import ClusterPrototype, PrototypeLibrary
from .errors import NoMatch, NonMonotoneTime, ZeroOverlap
from .trajmodel import (CLASSES, DT, LANE_WIDTH, Dataset, FrenetState, Kind, LateralTrack,
                        Trajectory, lane_indices)

T_BUFFER = 2.0
ALIGN_WINDOW = 0.5
DELTA_SAT = 50.0

FEATURE_NAMES = {
    "base2": ("d", "d_dot"),
    "gda4": ("d", "d_dot", "f3", "f4"),
    "bdt6": ("d", "d_dot", "dp_lcr", "dp_lcl", "dv_lcr", "dv_lcl"),
}


class PartialTrajectory:
    """Ring buffer of the most recent Frenet states of one vehicle."""

    def __init__(self, t_buffer: float = T_BUFFER, dt: float = DT):
        self.dt = dt
        self.t_buffer = t_buffer
        self.capacity = int(round(t_buffer / dt)) + 1
        self._buf: deque[FrenetState] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._buf)

    def push(self, state: FrenetState) -> None:
        """Append a state; a gap in time restarts the buffer."""
        if self._buf:
            step = state.t - self._buf[-1].t
            if step <= 0:
                raise NonMonotoneTime(f"state at t={state.t} does not follow t={self._buf[-1].t}")
            if abs(step - self.dt) > 0.5 * self.dt:
                self._buf.clear()
        self._buf.append(state)

    def extend(self, states) -> "PartialTrajectory":
        for st in states:
            self.push(st)
        return self

    @classmethod
    def from_trajectory(cls, traj: Trajectory, index: int, t_buffer: float = T_BUFFER):
        """Buffer as it would be filled after observing ``traj`` up to sample ``index``."""
        out = cls(t_buffer, traj.dt)
        lo = max(0, index - out.capacity + 1)
        for k in range(lo, index + 1):
            out._buf.append(FrenetState(traj.t[k], traj.s[k], traj.s_dot[k], traj.d[k], traj.d_dot[k]))
        return out

    @property
    def filled(self) -> float:
        return max(0, len(self._buf) - 1) * self.dt

    @property
    def newest(self) -> FrenetState:
        return self._buf[-1]

    def arrays(self) -> dict[str, np.ndarray]:
        rows = np.array([[s.t, s.s, s.s_dot, s.d, s.d_dot] for s in self._buf]).reshape(-1, 5)
        return dict(zip(("t", "s", "s_dot", "d", "d_dot"), rows.T))

    def to_track(self, lane_width: float = LANE_WIDTH) -> LateralTrack:
        """Lateral track relative to the oldest sample's lane, newest at ``t = 0``."""
        a = self.arrays()
        if a["d"].size == 0:
            raise ZeroOverlap("empty buffer")
        d = a["d"] + lane_width * lane_indices(a["d"], lane_width)
        return LateralTrack(-(d.size - 1) * self.dt, self.dt, d, a["d_dot"])


@dataclass(frozen=True)
class MatchResult:
    prototype: int
    tau: float
    delta_p: float
    delta_v: float
    offset: float = 0.0  # lateral frame shift applied to the partial


@dataclass(frozen=True)
class FeatureVector:
    d: float
    d_dot: float
    dp_lcr: float
    dp_lcl: float
    dv_lcr: float
    dv_lcl: float

    def as_array(self, variant: str = "bdt6") -> np.ndarray:
        raw = np.array([self.d, self.d_dot, self.dp_lcr, self.dp_lcl, self.dv_lcr, self.dv_lcl])
        return feature_variant(raw[None, :], variant)[0]


def feature_variant(raw: np.ndarray, variant: str) -> np.ndarray:
    """Project six-column raw features onto a variant's columns."""
    raw = np.atleast_2d(raw)
    if variant == "bdt6":
        return raw.copy()
    if variant == "gda4":
        return np.column_stack((raw[:, 0], raw[:, 1], raw[:, 2] - raw[:, 3], raw[:, 4] - raw[:, 5]))
    if variant == "base2":
        return raw[:, :2].copy()
    raise ValueError(f"unknown feature variant {variant!r}")


# --------------------------------------------------------------------------
# single-partial matching


def _channel(track: LateralTrack, proto: ClusterPrototype, channel: str):
    if channel == "position":
        return track.d, proto.mu_d, proto.sigma_d
    if channel == "velocity":
        return track.d_dot, proto.mu_v, proto.sigma_v
    raise ValueError(f"unknown channel {channel!r}")


def mahalanobis_l1(partial: LateralTrack, proto: ClusterPrototype, tau: float,
                   channel: str = "position", window: float | None = None) -> float:
    """Average of ``|x - mu| / sigma`` with the newest sample at prototype time ``tau``.

    The evaluation period is ``min(buffer length, tau)``, further limited to
    ``window`` seconds if given; trapezoid rule on the common grid.
    """
    x, mu, sigma = _channel(partial, proto, channel)
    k = int(round(tau / proto.dt))
    if abs(k * proto.dt - tau) > 1e-6:
        raise ValueError("tau must lie on the prototype grid")
    if k <= 0:
        raise ZeroOverlap("tau = 0 leaves no overlap with the prototype")
    if k > mu.size - 1:
        raise ValueError(f"tau={tau} beyond prototype duration {proto.duration}")
    m = min(x.size - 1, k)
    if window is not None:
        m = min(m, int(round(window / proto.dt)))
    if m <= 0:
        raise ZeroOverlap("partial has a single sample")
    j = np.arange(m + 1)
    e = np.abs(x[x.size - 1 - j] - mu[k - j]) / sigma[k - j]
    return float((e.sum() - 0.5 * (e[0] + e[-1])) / m)


def _align_one(x: np.ndarray, v: np.ndarray, proto: ClusterPrototype,
               window: int) -> tuple[int, float, float]:
    """Best grid shift by the recent window, then full position/velocity distances."""
    L = proto.mu_d.size
    n = x.size
    if L < 2 or n < 2:
        raise ZeroOverlap("no overlap")
    ks = np.arange(1, L)
    m_full = np.minimum(n - 1, ks)
    m_rec = np.minimum(m_full, window)
    j = np.arange(n)
    q = ks[:, None] - j[None, :]
    valid = j[None, :] <= m_rec[:, None]
    qc = np.clip(q, 0, L - 1)
    xs = x[::-1]
    e = np.abs(xs[None, :] - proto.mu_d[qc]) / proto.sigma_d[qc]
    e = np.where(valid, e, 0.0)
    ends = e[:, 0] + e[np.arange(ks.size), m_rec]
    rec = (e.sum(axis=1) - 0.5 * ends) / m_rec
    c = int(np.argmin(rec))
    k = int(ks[c])
    m = int(m_full[c])
    jj = np.arange(m + 1)
    w = np.ones(m + 1)
    w[0] = w[-1] = 0.5
    dp = float(np.sum(w * np.abs(xs[jj] - proto.mu_d[k - jj]) / proto.sigma_d[k - jj]) / m)
    dv = float(np.sum(w * np.abs(v[::-1][jj] - proto.mu_v[k - jj]) / proto.sigma_v[k - jj]) / m)
    return k, dp, dv


def _as_partial(partial, kind: Kind, lane_width: float) -> tuple[LateralTrack, tuple[float, ...]]:
    if isinstance(partial, PartialTrajectory):
        return partial.to_track(lane_width), (0.0, Kind(kind).direction * lane_width)
    return partial, (0.0,)


def match_all(partial, protos: list[ClusterPrototype], kind: Kind | None = None,
              lane_width: float = LANE_WIDTH, align_window: float = ALIGN_WINDOW) -> list[MatchResult | None]:
    """Per-prototype match (``None`` where there is no overlap)."""
    kind = protos[0].kind if kind is None and protos else kind
    track, offsets = _as_partial(partial, kind, lane_width)
    out: list[MatchResult | None] = []
    for pid, proto in enumerate(protos):
        W = int(round(align_window / proto.dt))
        best = None
        for off in offsets:
            try:
                k, dp, dv = _align_one(track.d + off, track.d_dot, proto, W)
            except ZeroOverlap:
                continue
            if best is None or dp < best.delta_p:
                best = MatchResult(pid, k * proto.dt, dp, dv, off)
        out.append(best)
    return out


def best_match(partial, library: PrototypeLibrary | list[ClusterPrototype], kind: Kind,
               lane_width: float = LANE_WIDTH, align_window: float = ALIGN_WINDOW) -> MatchResult:
    """Winning prototype by full-period position distance (ties: lowest id)."""
    protos = library.for_kind(kind) if isinstance(library, PrototypeLibrary) else library
    results = [r for r in match_all(partial, protos, kind, lane_width, align_window) if r is not None]
    if not results:
        raise NoMatch(f"no {Kind(kind).value} prototype overlaps the partial trajectory")
    return min(results, key=lambda r: (r.delta_p, r.prototype))


def extract_features(partial: PartialTrajectory, library: PrototypeLibrary, variant: str = "bdt6",
                     lane_width: float = LANE_WIDTH, delta_sat: float = DELTA_SAT) -> np.ndarray:
    """Feature vector of one buffered vehicle."""
    if partial.filled < ALIGN_WINDOW - 1e-9:
        raise ValueError("partial trajectory shorter than the alignment window")
    newest = partial.newest
    deltas = {}
    for kind in (Kind.LCR, Kind.LCL):
        try:
            m = best_match(partial, library, kind, lane_width)
            deltas[kind] = (min(m.delta_p, delta_sat), min(m.delta_v, delta_sat))
        except NoMatch:
            deltas[kind] = (delta_sat, delta_sat)
    fv = FeatureVector(newest.d, newest.d_dot, deltas[Kind.LCR][0], deltas[Kind.LCL][0],
                       deltas[Kind.LCR][1], deltas[Kind.LCL][1])
    return fv.as_array(variant)


# --------------------------------------------------------------------------
# batch matching over whole trajectories
#
# For fixed prototype and lateral frame, the error |x_i - mu_q| / sigma_q of
# every (sample, prototype index) pair is laid out so that each diagonal
# i - q = const becomes a row; cumulative sums along the rows then give the
# window sum of any frame at any shift in O(1).


def _diag_cumsum(x: np.ndarray, mu: np.ndarray, inv_sigma: np.ndarray) -> np.ndarray:
    """``C[r, q+1] = sum_{q' <= q} |x[r - L + 1 + q'] - mu[q']| * inv_sigma[q']``.

    ``x`` is edge-padded; padded entries never fall inside a window that a
    valid frame uses, they only have to be finite.
    """
    L = mu.size
    xp = np.concatenate((np.full(L - 1, x[0]), x, np.full(L - 1, x[-1])))
    win = np.lib.stride_tricks.sliding_window_view(xp, L)[: x.size + L - 1]
    g = np.abs(win - mu[None, :]) * inv_sigma[None, :]
    out = np.zeros((g.shape[0], L + 1))
    np.cumsum(g, axis=1, out=out[:, 1:])
    return out


def _window_mean(C: np.ndarray, i0: np.ndarray, k: np.ndarray, m: np.ndarray, L: int) -> np.ndarray:
    r = i0 - k + L - 1
    total = C[r, k + 1] - C[r, k - m]
    ends = (C[r, k + 1] - C[r, k]) + (C[r, k - m + 1] - C[r, k - m])
    return (total - 0.5 * ends) / m


def _capped_means(C: np.ndarray, W: int) -> np.ndarray:
    """``T[r, q]``: trapezoid mean along row ``r`` over ``min(q, W)`` intervals ending at ``q``."""
    L = C.shape[1] - 1
    G = C[:, 1:] - C[:, :-1]
    out = np.full((C.shape[0], L), np.inf)
    w = min(W, L - 1)
    q = np.arange(1, w)
    # short windows anchored at q = 0
    out[:, 1:w] = (C[:, 2:w + 1] - C[:, :1] - 0.5 * (G[:, 1:w] + G[:, :1])) / q
    out[:, w:] = (C[:, w + 1:] - C[:, : L - w] - 0.5 * (G[:, w:] + G[:, : L - w])) / w
    return out


@dataclass
class MatchTable:
    """Per-frame, per-prototype matches of one trajectory against one kind."""

    frames: np.ndarray  # sample indices
    tau: np.ndarray  # (F, P) seconds, nan where no match
    delta_p: np.ndarray  # (F, P), inf where no match
    delta_v: np.ndarray
    offset: np.ndarray

    def best(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Winning prototype id, delta_p and delta_v per frame (ties: lowest id)."""
        pid = np.argmin(self.delta_p, axis=1)
        rows = np.arange(pid.size)
        return pid, self.delta_p[rows, pid], self.delta_v[rows, pid]


def match_trajectory(traj: Trajectory, protos: list[ClusterPrototype], frames=None,
                     lane_width: float = LANE_WIDTH, t_buffer: float = T_BUFFER,
                     align_window: float = ALIGN_WINDOW) -> MatchTable:
    """Batch equivalent of :func:`match_all` at every requested frame of a trajectory."""
    n_tot = len(traj)
    cap = int(round(t_buffer / traj.dt)) + 1
    frames = np.arange(1, n_tot) if frames is None else np.asarray(frames, dtype=int)
    frames = frames[frames >= 1]
    F, P = frames.size, len(protos)
    tau = np.full((F, P), np.nan)
    dp = np.full((F, P), np.inf)
    dv = np.full((F, P), np.inf)
    off = np.zeros((F, P))
    if F == 0 or P == 0:
        return MatchTable(frames, tau, dp, dv, off)
    kind = protos[0].kind
    lanes = lane_indices(traj.d, lane_width)
    stitched = traj.d + lane_width * lanes
    n = np.minimum(frames + 1, cap)
    oldest_lane = lanes[frames - n + 1]
    candidates = [-lane_width * oldest_lane, -lane_width * oldest_lane + kind.direction * lane_width]
    for pid, proto in enumerate(protos):
        L = proto.mu_d.size
        if L < 2:
            continue
        W = int(round(align_window / proto.dt))
        inv_sd, inv_sv = 1.0 / proto.sigma_d, 1.0 / proto.sigma_v
        ks = np.arange(1, L)
        m_full = np.minimum(n[:, None] - 1, ks[None, :])
        m_rec = np.minimum(m_full, W)
        i0 = np.broadcast_to(frames[:, None], m_full.shape)
        kk = np.broadcast_to(ks[None, :], m_full.shape)
        Cv = _diag_cumsum(traj.d_dot, proto.mu_v, inv_sv)
        for cand in candidates:
            for value in np.unique(cand):
                sel = np.nonzero(cand == value)[0]
                C = _diag_cumsum(stitched + value, proto.mu_d, inv_sd)
                if np.all(n[sel] - 1 >= W):
                    # every frame has a full alignment window: one gather
                    T = _capped_means(C, W)
                    rec = T[frames[sel, None] - ks[None, :] + L - 1, ks[None, :]]
                else:
                    rec = _window_mean(C, i0[sel], kk[sel], m_rec[sel], L)
                c = np.argmin(rec, axis=1)
                k = ks[c]
                m = m_full[sel, c]
                p_full = _window_mean(C, frames[sel], k, m, L)
                better = p_full < dp[sel, pid]
                rows = sel[better]
                dp[rows, pid] = p_full[better]
                tau[rows, pid] = k[better] * proto.dt
                off[rows, pid] = value + lane_width * oldest_lane[rows]
                dv[rows, pid] = _window_mean(Cv, frames[rows], k[better], m[better], L)
    return MatchTable(frames, tau, dp, dv, off)


# --------------------------------------------------------------------------
# feature tables


@dataclass
class FeatureTable:
    vehicle_id: np.ndarray
    t: np.ndarray
    label: np.ndarray  # class index, see CLASSES
    raw: np.ndarray  # (N, 6) bdt6 columns

    def __len__(self) -> int:
        return self.t.size

    def X(self, variant: str) -> np.ndarray:
        return feature_variant(self.raw, variant)

    def vehicle_kinds(self) -> dict[int, Kind]:
        """Per vehicle: its first lane-change frame label, else LK."""
        out: dict[int, Kind] = {}
        order = np.lexsort((self.t, self.vehicle_id))
        for vid, lab in zip(self.vehicle_id[order], self.label[order]):
            vid = int(vid)
            if out.get(vid, Kind.LK) is Kind.LK:
                out[vid] = CLASSES[lab]
        return out

    def subset(self, mask) -> "FeatureTable":
        return FeatureTable(self.vehicle_id[mask], self.t[mask], self.label[mask], self.raw[mask])

    @staticmethod
    def concat(tables: list["FeatureTable"]) -> "FeatureTable":
        if not tables:
            return FeatureTable(np.zeros(0, int), np.zeros(0), np.zeros(0, int), np.zeros((0, 6)))
        return FeatureTable(*(np.concatenate([getattr(t, f) for t in tables])
                              for f in ("vehicle_id", "t", "label", "raw")))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["vehicle_id", "t", "label", "d", "d_dot", "dp_lcr", "dp_lcl", "dv_lcr", "dv_lcl"])
            for vid, t, lab, row in zip(self.vehicle_id, self.t, self.label, self.raw):
                w.writerow([int(vid), repr(float(t)), CLASSES[lab].value, *(repr(float(v)) for v in row)])

    @classmethod
    def read_csv(cls, path) -> "FeatureTable":
        vids, ts, labs, rows = [], [], [], []
        index = {k.value: i for i, k in enumerate(CLASSES)}
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                vids.append(int(rec["vehicle_id"]))
                ts.append(float(rec["t"]))
                labs.append(index[rec["label"]])
                rows.append([float(rec[c]) for c in FEATURE_NAMES["bdt6"]])
        return cls(np.array(vids, dtype=int), np.array(ts), np.array(labs, dtype=int),
                   np.array(rows).reshape(-1, 6))


def trajectory_features(traj: Trajectory, library: PrototypeLibrary, frames=None,
                        lane_width: float = LANE_WIDTH, t_buffer: float = T_BUFFER,
                        delta_sat: float = DELTA_SAT) -> FeatureTable:
    """Six raw features at the given frames (default: every frame with a full alignment window)."""
    first = int(round(ALIGN_WINDOW / traj.dt))
    frames = np.arange(first, len(traj)) if frames is None else np.asarray(frames, dtype=int)
    frames = frames[frames >= first]
    raw = np.empty((frames.size, 6))
    raw[:, 0] = traj.d[frames]
    raw[:, 1] = traj.d_dot[frames]
    for col_p, col_v, kind in ((2, 4, Kind.LCR), (3, 5, Kind.LCL)):
        table = match_trajectory(traj, library.for_kind(kind), frames, lane_width, t_buffer)
        _, bp, bv = table.best()
        raw[:, col_p] = np.minimum(bp, delta_sat)
        raw[:, col_v] = np.minimum(bv, delta_sat)
    return FeatureTable(np.full(frames.size, traj.vehicle_id), traj.t[frames],
                        traj.frame_labels()[frames], raw)


def dataset_features(dataset: Dataset, library: PrototypeLibrary, stride: int = 1,
                     t_buffer: float = T_BUFFER, delta_sat: float = DELTA_SAT) -> FeatureTable:
    """Feature table over a dataset, keeping every ``stride``-th eligible frame."""
    tables = []
    first = int(round(ALIGN_WINDOW / dataset.dt))
    for traj in dataset.trajectories:
        frames = np.arange(first, len(traj), stride)
        tables.append(trajectory_features(traj, library, frames, dataset.lane_width, t_buffer, delta_sat))
    return FeatureTable.concat(tables)
