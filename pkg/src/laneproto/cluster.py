"""Prototype trajectories by agglomerative hierarchical clustering (AHC).

Every lane-change position track starts as its own cluster.  The two
clusters whose prototype means are closest under their optimal time
alignment are merged, provided the merged cluster stays cohesive: its peak
pointwise standard deviation must not exceed ``sigma_max``.  Clustering stops
when no admissible pair is left.

Prototype statistics are population moments of the aligned members, where
members shorter than the union span are extended by holding their first and
last values.
"""
from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyTrainingSet, GridMismatch
from .trajmodel import DT, Dataset, Kind, LateralTrack, lane_indices

VAR_FLOOR = 1e-4
SIGMA_MAX = 0.1
MAX_SHIFT = 1.0


@dataclass(frozen=True)
class ClusterPrototype:
    kind: Kind
    dt: float
    mu_d: np.ndarray
    var_d: np.ndarray
    mu_v: np.ndarray
    var_v: np.ndarray
    n_members: int
    member_ids: tuple[int, ...] = ()
    member_shifts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_accel: float = 0.0
    var_accel: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        for name in ("mu_d", "var_d", "mu_v", "var_v", "member_shifts"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.mu_d.size
        if not (self.var_d.size == self.mu_v.size == self.var_v.size == n) or n == 0:
            raise ValueError("prototype arrays must be non-empty and of equal length")
        if self.n_members < 1:
            raise ValueError("a prototype needs at least one member")

    @property
    def duration(self) -> float:
        return (self.mu_d.size - 1) * self.dt

    @property
    def sigma_d(self) -> np.ndarray:
        return np.sqrt(self.var_d)

    @property
    def sigma_v(self) -> np.ndarray:
        return np.sqrt(self.var_v)

    def as_track(self) -> LateralTrack:
        return LateralTrack(0.0, self.dt, self.mu_d, self.mu_v)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value, "dt": self.dt, "n_members": self.n_members,
            "duration": self.duration,
            "mu_d": self.mu_d.tolist(), "var_d": self.var_d.tolist(),
            "mu_v": self.mu_v.tolist(), "var_v": self.var_v.tolist(),
            "member_ids": list(self.member_ids), "member_shifts": self.member_shifts.tolist(),
            "mean_accel": self.mean_accel, "var_accel": self.var_accel,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ClusterPrototype":
        return cls(Kind(obj["kind"]), obj["dt"], obj["mu_d"], obj["var_d"], obj["mu_v"],
                   obj["var_v"], obj["n_members"], tuple(obj.get("member_ids", ())),
                   obj.get("member_shifts", []), obj.get("mean_accel", 0.0),
                   obj.get("var_accel", 0.0))


@dataclass
class PrototypeLibrary:
    lcl: list[ClusterPrototype]
    lcr: list[ClusterPrototype]
    dt: float = DT
    metadata: dict = field(default_factory=dict)

    def for_kind(self, kind: Kind) -> list[ClusterPrototype]:
        kind = Kind(kind)
        if kind is Kind.LCL:
            return self.lcl
        if kind is Kind.LCR:
            return self.lcr
        raise ValueError("the library only holds lane-change prototypes")

    def to_dict(self) -> dict:
        return {"schema": "laneproto.prototypes/1", "dt": self.dt, "metadata": self.metadata,
                "lcl": [p.to_dict() for p in self.lcl], "lcr": [p.to_dict() for p in self.lcr]}

    @classmethod
    def from_dict(cls, obj: dict) -> "PrototypeLibrary":
        return cls([ClusterPrototype.from_dict(p) for p in obj["lcl"]],
                   [ClusterPrototype.from_dict(p) for p in obj["lcr"]],
                   obj.get("dt", DT), obj.get("metadata", {}))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "PrototypeLibrary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# dissimilarity and alignment


def _grid_offset(a: LateralTrack, b: LateralTrack) -> int:
    if abs(a.dt - b.dt) > 1e-12:
        raise GridMismatch(f"sample periods differ: {a.dt} vs {b.dt}")
    r = (b.t0 - a.t0) / a.dt
    if abs(r - round(r)) > 1e-6:
        raise GridMismatch("track start times are not aligned to a common grid")
    return int(round(r))


def _placed(values: np.ndarray, start: int, lo: int, hi: int) -> np.ndarray:
    """``values`` starting at grid index ``start``, edge-held over ``[lo, hi]``."""
    idx = np.clip(np.arange(lo, hi + 1) - start, 0, values.size - 1)
    return values[idx]


def dissimilarity(a: LateralTrack, b: LateralTrack) -> float:
    """Root of the time-averaged squared distance over the union of both spans."""
    return float(np.sqrt(_direct_sq(a.d, b.d, _grid_offset(a, b))))


def _direct_sq(a: np.ndarray, b: np.ndarray, p: int) -> float:
    """Squared dissimilarity of ``b`` placed at grid index ``p`` against ``a``."""
    lo, hi = min(0, p), max(a.size - 1, p + b.size - 1)
    if hi == lo:
        return float((a[0] - b[0]) ** 2)
    diff2 = (_placed(a, 0, lo, hi) - _placed(b, p, lo, hi)) ** 2
    return float((np.sum(diff2) - 0.5 * (diff2[0] + diff2[-1])) / (hi - lo))


def _profiles_sq(a: np.ndarray, bs: list[np.ndarray], r: np.ndarray, K: int) -> np.ndarray:
    """Squared dissimilarity of every ``b_j`` placed at ``r_j + k`` for ``k in [-K, K]``.

    Closed form via prefix sums and one windowed inner product per shift, so
    all pairs against ``a`` are evaluated in a single batch.  Accurate to
    round-off of the squared magnitudes (not of the difference), which is why
    callers re-evaluate near-minimal shifts with :func:`_direct_sq`.
    """
    La = a.size
    Lb = np.array([b.size for b in bs])
    Lmax = int(Lb.max())
    Bz = np.zeros((len(bs), Lmax))
    for j, b in enumerate(bs):
        Bz[j, : b.size] = b
    b0 = Bz[:, 0]
    bend = np.array([b[-1] for b in bs])
    sumb2 = np.einsum("jm,jm->j", Bz, Bz)
    ks = np.arange(-K, K + 1)
    p = np.asarray(r, dtype=int)[:, None] + ks[None, :]
    P0 = min(0, int(p.min()))
    P1 = max(La - 1, int(p.max()) + Lmax - 1)
    ae = a[np.clip(np.arange(P0, P1 + 1), 0, La - 1)]
    cs = np.concatenate(([0.0], np.cumsum(ae)))

    def seg(u, v):
        return np.where(v >= u, cs[np.maximum(v, u - 1) + 1 - P0] - cs[u - P0], 0.0)

    windows = np.lib.stride_tricks.sliding_window_view(ae, Lmax)
    mid = np.empty(p.shape)
    for c in range(ks.size):
        mid[:, c] = np.einsum("jm,jm->j", windows[p[:, c] - P0], Bz)
    Lb2 = Lb[:, None]
    lo = np.minimum(0, p)
    hi = np.maximum(La - 1, p + Lb2 - 1)
    a0, aend = a[0], a[-1]
    sa2 = -lo * a0 ** 2 + np.dot(a, a) + (hi - La + 1) * aend ** 2
    sb2 = (p - lo) * b0[:, None] ** 2 + sumb2[:, None] + (hi - p - Lb2 + 1) * bend[:, None] ** 2
    cross = b0[:, None] * seg(lo, p - 1) + mid + bend[:, None] * seg(p + Lb2, hi)
    total = sa2 + sb2 - 2.0 * cross
    total -= 0.5 * ((a0 - b0[:, None]) ** 2 + (aend - bend[:, None]) ** 2)
    span = (hi - lo).astype(float)
    out = np.where(span > 0, total / np.where(span > 0, span, 1.0), (a0 - b0[:, None]) ** 2)
    return np.maximum(out, 0.0)


_SHIFT_ORDER_CACHE: dict[int, list[int]] = {}


def _shift_order(K: int) -> list[int]:
    if K not in _SHIFT_ORDER_CACHE:
        _SHIFT_ORDER_CACHE[K] = sorted(range(-K, K + 1), key=lambda k: (abs(k), k))
    return _SHIFT_ORDER_CACHE[K]


def _shift_candidates(a: np.ndarray, bs: list[np.ndarray], r, K: int) -> list[tuple[float, np.ndarray]]:
    """Approximate minimum and the near-minimal shifts of each ``b_j`` against ``a``."""
    fast = _profiles_sq(a, bs, np.asarray(r, dtype=int), K)
    amax = np.max(np.abs(a)) ** 2
    out = []
    for j, b in enumerate(bs):
        tol = 1e-9 * (1.0 + amax + np.max(np.abs(b)) ** 2)
        m = fast[j].min()
        out.append((float(np.sqrt(m)), np.nonzero(fast[j] <= m + tol)[0] - K))
    return out


def _resolve_shift(a: np.ndarray, b: np.ndarray, r: int, cands, K: int,
                   flip: bool = False) -> tuple[int, float]:
    """Exact choice among candidate shifts; ties to small |k| then negative k.

    With ``flip`` set, ties are broken as if ``a`` were the one shifted (by
    ``-k``) against ``b``.
    """
    exact = {int(k): _direct_sq(a, b, r + int(k)) for k in cands}
    best = min(exact.values())
    for k in _shift_order(K):
        k = -k if flip else k
        if k in exact and exact[k] <= best + 1e-15:
            return k, float(np.sqrt(exact[k]))
    raise AssertionError("unreachable")


def optimal_alignment(a: LateralTrack, b: LateralTrack,
                      max_shift: float = MAX_SHIFT) -> tuple[float, float]:
    """Grid shift of ``b`` within ``+-max_shift`` minimising the dissimilarity to ``a``.

    Returns ``(shift, delta)``; shifting means adding ``shift`` to ``b.t0``.
    Ties go to the smaller absolute shift, then to the negative one.
    """
    r = _grid_offset(a, b)
    K = int(round(max_shift / a.dt))
    _, cands = _shift_candidates(a.d, [b.d], [r], K)[0]
    k, delta = _resolve_shift(a.d, b.d, r, cands, K)
    return k * a.dt, delta


# --------------------------------------------------------------------------
# prototypes


def prototype_from_members(kind: Kind, tracks: list[LateralTrack], offsets, ids=None,
                           accels=None, var_floor: float = VAR_FLOOR) -> ClusterPrototype:
    """Population mean/variance of members placed at ``offsets`` (in seconds)."""
    if not tracks:
        raise EmptyTrainingSet("a prototype needs at least one member")
    dt = tracks[0].dt
    idx = np.rint(np.asarray(offsets, dtype=float) / dt).astype(int)
    idx -= idx.min()
    L = int(max(i + len(tr) for i, tr in zip(idx, tracks)))
    D = np.array([_placed(tr.d, i, 0, L - 1) for tr, i in zip(tracks, idx)])
    V = np.array([_placed(tr.d_dot, i, 0, L - 1) for tr, i in zip(tracks, idx)])
    mu_d = D.mean(axis=0)
    mu_v = V.mean(axis=0)
    var_d = np.maximum(((D - mu_d) ** 2).mean(axis=0), var_floor)
    var_v = np.maximum(((V - mu_v) ** 2).mean(axis=0), var_floor)
    acc = np.zeros(len(tracks)) if accels is None else np.asarray(accels, dtype=float)
    ids = tuple(range(len(tracks))) if ids is None else tuple(int(i) for i in ids)
    return ClusterPrototype(kind, dt, mu_d, var_d, mu_v, var_v, len(tracks), ids, idx * dt,
                            float(acc.mean()), float(acc.var()))


def merge(a: ClusterPrototype, b: ClusterPrototype, members: dict[int, LateralTrack] | list,
          shift: float, accels=None, var_floor: float = VAR_FLOOR) -> ClusterPrototype:
    """Common prototype of two clusters, with ``b`` shifted by ``shift`` against ``a``."""
    ids = list(a.member_ids) + list(b.member_ids)
    offsets = np.concatenate((a.member_shifts, b.member_shifts + shift))
    tracks = [members[i] for i in ids]
    acc = None if accels is None else [accels[i] for i in ids]
    return prototype_from_members(a.kind, tracks, offsets, ids, acc, var_floor)


@dataclass(frozen=True)
class MergeStep:
    first: int
    second: int
    delta: float
    shift: float
    new: int
    members: tuple[int, ...]


def _peak_sigma(p: ClusterPrototype) -> float:
    return float(np.sqrt(p.var_d.max()))


def ahc_trace(tracks: list[LateralTrack], kind: Kind, sigma_max: float = SIGMA_MAX,
              max_shift: float = MAX_SHIFT, accels=None,
              var_floor: float = VAR_FLOOR) -> tuple[list[ClusterPrototype], list[MergeStep]]:
    """AHC with the full merge history.

    Cluster ids are integers: inputs are ``0..N-1`` and each merge creates the
    next free id.  Among pairs at equal dissimilarity the lower id pair wins.
    """
    if not tracks:
        raise EmptyTrainingSet(f"no {Kind(kind).value} tracks to cluster")
    kind = Kind(kind)
    dt = tracks[0].dt
    K = int(round(max_shift / dt))
    members = {i: LateralTrack(0.0, tr.dt, tr.d, tr.d_dot) for i, tr in enumerate(tracks)}
    clusters: dict[int, ClusterPrototype] = {
        i: prototype_from_members(kind, [tr], [0.0], [i],
                                  None if accels is None else [accels[i]], var_floor)
        for i, tr in members.items()
    }
    # heap entries: (delta, lower id, higher id, exact?, tiebreak, payload).
    # Pairs enter with the fast batched estimate and are re-queued with the
    # exact dissimilarity when they first reach the top.  Pairs touching a
    # merged cluster are dropped lazily; an inadmissible pair stays so until
    # one side changes, which retires its id, so it is simply discarded.
    heap: list = []
    counter = 0

    def link(new: int, others: list[int]) -> None:
        nonlocal counter
        if not others:
            return
        cands = _shift_candidates(clusters[new].mu_d, [clusters[o].mu_d for o in others],
                                  np.zeros(len(others), dtype=int), K)
        for o, (approx, ks) in zip(others, cands):
            i, j = (o, new) if o < new else (new, o)
            heapq.heappush(heap, (approx, i, j, False, counter, (new, o, ks)))
            counter += 1

    ids = sorted(clusters)
    for x, i in enumerate(ids[:-1]):
        link(i, ids[x + 1:])
    next_id = len(tracks)
    history: list[MergeStep] = []
    while heap:
        delta, i, j, exact, _, payload = heapq.heappop(heap)
        if i not in clusters or j not in clusters:
            continue
        if not exact:
            ref, other, ks = payload
            k, delta = _resolve_shift(clusters[ref].mu_d, clusters[other].mu_d, 0, ks, K,
                                      flip=other < ref)
            # orientation: shift of the higher id against the lower one
            shift = (k if other == j else -k) * dt
            heapq.heappush(heap, (delta, i, j, True, counter, shift))
            counter += 1
            continue
        shift = payload
        cand = merge(clusters[i], clusters[j], members, shift, accels, var_floor)
        if _peak_sigma(cand) > sigma_max:
            continue
        del clusters[i], clusters[j]
        clusters[next_id] = cand
        history.append(MergeStep(i, j, delta, shift, next_id, cand.member_ids))
        link(next_id, sorted(c for c in clusters if c != next_id))
        next_id += 1
    protos = sorted(clusters.values(), key=lambda p: min(p.member_ids))
    return protos, history


def ahc(tracks: list[LateralTrack], kind: Kind, sigma_max: float = SIGMA_MAX,
        max_shift: float = MAX_SHIFT, accels=None,
        var_floor: float = VAR_FLOOR) -> list[ClusterPrototype]:
    """Cluster same-kind lane-change tracks into prototypes."""
    return ahc_trace(tracks, kind, sigma_max, max_shift, accels, var_floor)[0]


# --------------------------------------------------------------------------
# training data


def member_acceleration(t: np.ndarray, s_dot: np.ndarray) -> float:
    """Least-squares constant acceleration of a longitudinal velocity series."""
    if t.size < 2:
        return 0.0
    return float(np.polyfit(t - t[0], s_dot, 1)[0])


def maneuver_tracks(dataset: Dataset, kind: Kind) -> tuple[list[LateralTrack], list[float], list[tuple[int, float]]]:
    """Lateral tracks of every labeled maneuver of ``kind``.

    Positions are taken relative to the centreline of the lane in which the
    maneuver starts (continuous through the marker crossing); each track
    starts at ``t0 = 0``.  Also returns each member's mean longitudinal
    acceleration and its ``(vehicle_id, t_start)`` key.
    """
    kind = Kind(kind)
    tracks, accels, keys = [], [], []
    for tr in dataset.trajectories:
        if not any(lab.kind is kind for lab in tr.labels):
            continue
        lanes = lane_indices(tr.d, dataset.lane_width)
        stitched = tr.d + dataset.lane_width * lanes
        for lab in tr.labels:
            if lab.kind is not kind:
                continue
            sel = np.nonzero((tr.t >= lab.t_start - 1e-9) & (tr.t <= lab.t_end + 1e-9))[0]
            if sel.size < 2:
                continue
            d = stitched[sel] - dataset.lane_width * lanes[sel[0]]
            tracks.append(LateralTrack(0.0, dataset.dt, d, tr.d_dot[sel]))
            accels.append(member_acceleration(tr.t[sel], tr.s_dot[sel]))
            keys.append((tr.vehicle_id, lab.t_start))
    return tracks, accels, keys


def lane_keeping_stats(dataset: Dataset) -> dict:
    """Lateral offset and acceleration spread over lane-keeping segments."""
    ds, accs = [], []
    for tr in dataset.trajectories:
        for lab in tr.labels:
            if lab.kind is not Kind.LK:
                continue
            sel = (tr.t >= lab.t_start) & (tr.t <= lab.t_end)
            if sel.sum() < 2:
                continue
            ds.append(tr.d[sel])
            accs.append(member_acceleration(tr.t[sel], tr.s_dot[sel]))
    if not ds:
        return {"lk_var_d": 0.05, "lk_var_accel": 0.05}
    return {"lk_var_d": float(np.var(np.concatenate(ds))), "lk_var_accel": float(np.var(accs))}


def corpus_hash(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for tr in sorted(dataset.trajectories, key=lambda x: x.vehicle_id):
        h.update(str(tr.vehicle_id).encode())
        for arr in (tr.t, tr.s, tr.s_dot, tr.d, tr.d_dot):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for lab in tr.labels:
            h.update(f"{lab.kind.value}{lab.t_start!r}{lab.t_end!r}".encode())
    return h.hexdigest()


def build_library(dataset: Dataset, sigma_max: float = SIGMA_MAX, max_shift: float = MAX_SHIFT,
                  var_floor: float = VAR_FLOOR) -> PrototypeLibrary:
    """Cluster both lane-change kinds of a labeled dataset."""
    out = {}
    for kind in (Kind.LCL, Kind.LCR):
        tracks, accels, _ = maneuver_tracks(dataset, kind)
        out[kind] = ahc(tracks, kind, sigma_max, max_shift, accels, var_floor)
    meta = {"corpus_hash": corpus_hash(dataset), "sigma_max": sigma_max,
            "max_shift": max_shift, "var_floor": var_floor, **lane_keeping_stats(dataset)}
    return PrototypeLibrary(out[Kind.LCL], out[Kind.LCR], dataset.dt, meta)
