"""Labeled synthetic highway scenes.

Each scene holds one vehicle.  Lane-change scenes keep their lane for a few
seconds, perform one change of one lane width and keep the target lane
afterwards.  The lateral course of the change follows one of several shape
families (fast, slow, late, early, overshooting) so that clustering has real
structure to recover.  Longitudinal motion is constant acceleration.

Position noise is Gaussian and, by default, temporally correlated (AR(1) with
correlation time ``noise_tau``), which is closer to tracker output than white
noise; ``noise_tau = 0`` gives white noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BadSpec
from .trajmodel import DT, LANE_WIDTH, Dataset, Kind, ManeuverLabel, Trajectory, lowpass_diff

PROFILES = ("quintic", "sigmoid", "overshoot")
DEFAULT_COUNTS = {"lcl": 156, "lcr": 278, "lk": 300}


@dataclass(frozen=True)
class SceneSpec:
    kind: Kind = Kind.LCL
    duration: float = 14.0
    lane_width: float = LANE_WIDTH
    v0: float = 30.0
    accel: float = 0.0
    lateral_profile: str = "quintic"
    noise_sd: float = 0.03
    seed: int = 0
    maneuver_start: float = 4.0
    maneuver_duration: float = 5.0
    warp: float = 1.0  # time-warp exponent; > 1 starts slowly
    overshoot: float = 0.0  # overshoot amplitude in metres
    start_offset: float = 0.0
    end_offset: float = 0.0
    meander_amp: float = 0.03
    meander_period: float = 10.0
    noise_tau: float = 0.3
    filter_alpha: float = 0.3
    dt: float = DT
    vehicle_id: int = 0


@dataclass
class Scene:
    trajectory: Trajectory
    truth_d: np.ndarray  # noiseless stitched lateral course
    label: ManeuverLabel | None  # ground-truth lane-change label (None for LK)
    spec: SceneSpec
    t_cross: float | None = None
    family: str = ""


def _sigmoid_shape(u, k=10.0):
    lo, hi = 1.0 / (1.0 + np.exp(k / 2)), 1.0 / (1.0 + np.exp(-k / 2))
    return (1.0 / (1.0 + np.exp(-k * (u - 0.5))) - lo) / (hi - lo)


def _quintic_shape(u):
    return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)


def lateral_shape(u, profile: str, warp: float = 1.0, overshoot_rel: float = 0.0):
    """Normalised lateral course on ``u in [0, 1]``: 0 -> 1 (plus optional overshoot)."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    w = u**warp
    if profile == "quintic":
        return _quintic_shape(w)
    if profile == "sigmoid":
        return _sigmoid_shape(w)
    if profile == "overshoot":
        main = _quintic_shape(np.clip(w / 0.7, 0.0, 1.0))
        v = np.clip((w - 0.45) / 0.55, 0.0, 1.0)
        return main + overshoot_rel * np.sin(np.pi * v) ** 2
    raise BadSpec(f"unknown lateral profile {profile!r}")


def _true_lateral(spec: SceneSpec, t: np.ndarray) -> np.ndarray:
    base = spec.meander_amp * np.sin(2 * np.pi * t / spec.meander_period)
    if spec.kind is Kind.LK:
        return spec.start_offset + base
    direction = spec.kind.direction
    width = spec.lane_width + direction * (spec.end_offset - spec.start_offset)
    u = (t - spec.maneuver_start) / spec.maneuver_duration
    rel = spec.overshoot / width if width else 0.0
    course = lateral_shape(u, spec.lateral_profile, spec.warp, rel)
    return spec.start_offset + direction * width * course + base


def ground_truth_label(spec: SceneSpec, threshold: float = 0.2,
                       resolution: float = 1e-3) -> tuple[ManeuverLabel, float]:
    """Maneuver bounds of the noiseless course, found on a dense time grid.

    Start is the later of the last centreline departure and the velocity
    threshold crossing before the marker crossing; end is where the velocity
    falls back below the threshold.
    """
    t = np.arange(0.0, spec.duration + resolution / 2, resolution)
    d = _true_lateral(spec, t)
    direction = spec.kind.direction
    boundary = direction * 0.5 * spec.lane_width
    beyond_marker = direction * (d - boundary) >= 0
    c = int(np.argmax(beyond_marker))
    if not beyond_marker[c]:
        raise BadSpec("generated course never crosses the lane marking")
    t_cross = t[c - 1] + (boundary - d[c - 1]) / (d[c] - d[c - 1]) * resolution
    u = direction * np.gradient(d, t)
    above = u >= threshold
    i_v = c
    while i_v > 0 and above[i_v - 1]:
        i_v -= 1
    i_e = c
    while i_e < t.size - 1 and above[i_e + 1]:
        i_e += 1
    past_centre = direction * d >= 0
    i_c = c
    while i_c > 0 and past_centre[i_c - 1]:
        i_c -= 1
    start = max(i_v, i_c)
    return ManeuverLabel(spec.kind, float(t[start]), float(t[i_e])), float(t_cross)


def _noise(rng: np.random.Generator, n: int, sd: float, tau: float, dt: float) -> np.ndarray:
    if sd == 0:
        return np.zeros(n)
    if tau <= 0:
        return rng.normal(0.0, sd, n)
    rho = np.exp(-dt / tau)
    innov = rng.normal(0.0, sd * np.sqrt(1 - rho * rho), n)
    out = np.empty(n)
    out[0] = rng.normal(0.0, sd)
    for k in range(1, n):
        out[k] = rho * out[k - 1] + innov[k]
    return out


def generate_scene(spec: SceneSpec) -> Scene:
    """Render one scene: noisy Frenet trajectory plus its ground-truth label."""
    kind = Kind(spec.kind)
    spec = replace(spec, kind=kind)
    if spec.duration < 4.0:
        raise BadSpec("scene duration must be at least 4 s")
    if kind is not Kind.LK:
        if spec.lateral_profile not in PROFILES:
            raise BadSpec(f"unknown lateral profile {spec.lateral_profile!r}")
        if spec.maneuver_start + spec.maneuver_duration > spec.duration:
            raise BadSpec("maneuver does not fit into the scene")
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration / spec.dt)) + 1
    t = spec.dt * np.arange(n)
    truth = _true_lateral(spec, t)
    d = truth + _noise(rng, n, spec.noise_sd, spec.noise_tau, spec.dt)
    if kind is Kind.LK:
        d = np.clip(d, -0.3, 0.3)
    d_dot = lowpass_diff(d, spec.dt, spec.filter_alpha)
    lane = np.floor((d + 0.5 * spec.lane_width) / spec.lane_width)
    d_rel = d - spec.lane_width * lane
    s_dot = np.maximum(spec.v0 + spec.accel * t, 0.0)
    s = np.concatenate(([0.0], np.cumsum(0.5 * (s_dot[1:] + s_dot[:-1]) * spec.dt)))
    label, t_cross = (None, None) if kind is Kind.LK else ground_truth_label(spec)
    traj = Trajectory(spec.vehicle_id, t, s, s_dot, d_rel, d_dot)
    labels = [] if label is None else [label]
    traj = traj.with_labels(_partition(float(t[0]), float(t[-1]), labels))
    return Scene(traj, truth, label, spec, t_cross)


def _partition(t0: float, t1: float, lc: list[ManeuverLabel]) -> list[ManeuverLabel]:
    out, cursor = [], t0
    for lab in lc:
        if lab.t_start > cursor + 1e-9:
            out.append(ManeuverLabel(Kind.LK, cursor, lab.t_start))
        out.append(lab)
        cursor = lab.t_end
    if t1 > cursor + 1e-9:
        out.append(ManeuverLabel(Kind.LK, cursor, t1))
    return out


# --------------------------------------------------------------------------
# corpus


@dataclass(frozen=True)
class Family:
    name: str
    profile: str
    duration: tuple[float, float]
    warp: tuple[float, float] = (1.0, 1.0)
    overshoot: tuple[float, float] = (0.0, 0.0)


FAMILIES: tuple[Family, ...] = (
    Family("fast", "quintic", (3.0, 3.6)),
    Family("slow", "quintic", (6.2, 7.0)),
    Family("late", "sigmoid", (4.4, 5.0), warp=(1.7, 2.0)),
    Family("early", "quintic", (4.6, 5.2), warp=(0.55, 0.65)),
    Family("overshoot", "overshoot", (4.0, 4.6), overshoot=(0.45, 0.6)),
)


@dataclass(frozen=True)
class DiversityConfig:
    families: tuple[Family, ...] = FAMILIES
    v0: tuple[float, float] = (22.0, 38.0)
    accel_lcl: tuple[float, float] = (0.4, 0.5)  # mean, sd
    accel_lcr: tuple[float, float] = (-0.1, 0.25)
    accel_lk: tuple[float, float] = (0.0, 0.2)
    pre: tuple[float, float] = (3.0, 5.0)
    post: tuple[float, float] = (4.0, 5.0)
    lk_duration: tuple[float, float] = (10.0, 14.0)
    offset_sd: float = 0.08
    noise_sd: float = 0.03
    noise_tau: float = 0.3
    filter_alpha: float = 0.3
    lane_width: float = LANE_WIDTH
    dt: float = DT


@dataclass
class Corpus:
    dataset: Dataset
    scenes: list[Scene] = field(default_factory=list)

    @property
    def families(self) -> dict[int, str]:
        return {sc.spec.vehicle_id: sc.family for sc in self.scenes}


def _draw_spec(rng: np.random.Generator, kind: Kind, cfg: DiversityConfig, vid: int):
    seed = int(rng.integers(0, 2**31 - 1))
    v0 = rng.uniform(*cfg.v0)
    meander_amp = rng.uniform(0.0, 0.04)
    meander_period = rng.uniform(8.0, 16.0)
    common = dict(kind=kind, lane_width=cfg.lane_width, v0=v0, noise_sd=cfg.noise_sd,
                  noise_tau=cfg.noise_tau, filter_alpha=cfg.filter_alpha, dt=cfg.dt,
                  seed=seed, vehicle_id=vid, meander_period=meander_period)
    if kind is Kind.LK:
        duration = rng.uniform(*cfg.lk_duration)
        return SceneSpec(duration=duration, accel=rng.normal(*cfg.accel_lk),
                         start_offset=float(np.clip(rng.normal(0, cfg.offset_sd), -0.12, 0.12)),
                         meander_amp=rng.uniform(0.03, 0.12), **common), "lk"
    fam = cfg.families[int(rng.integers(len(cfg.families)))]
    tm = rng.uniform(*fam.duration)
    pre = rng.uniform(*cfg.pre)
    post = rng.uniform(*cfg.post)
    accel = rng.normal(*(cfg.accel_lcl if kind is Kind.LCL else cfg.accel_lcr))
    spec = SceneSpec(duration=pre + tm + post, accel=accel, lateral_profile=fam.profile,
                     maneuver_start=pre, maneuver_duration=tm, warp=rng.uniform(*fam.warp),
                     overshoot=rng.uniform(*fam.overshoot),
                     start_offset=float(np.clip(rng.normal(0, cfg.offset_sd), -0.2, 0.2)),
                     end_offset=float(np.clip(rng.normal(0, cfg.offset_sd), -0.2, 0.2)),
                     meander_amp=meander_amp, **common)
    return spec, fam.name


def generate_corpus(counts: dict | None = None, diversity: DiversityConfig | None = None,
                    seed: int = 42) -> Corpus:
    """Deterministic labeled corpus; ``counts`` keys are ``lcl``, ``lcr``, ``lk``."""
    counts = dict(DEFAULT_COUNTS if counts is None else counts)
    cfg = diversity or DiversityConfig()
    for k, v in counts.items():
        if k not in DEFAULT_COUNTS or v < 0:
            raise BadSpec(f"invalid count {k}={v}")
    rng = np.random.default_rng(seed)
    scenes: list[Scene] = []
    vid = 1
    for key, kind in (("lcl", Kind.LCL), ("lcr", Kind.LCR), ("lk", Kind.LK)):
        for _ in range(counts.get(key, 0)):
            spec, fam = _draw_spec(rng, kind, cfg, vid)
            scene = generate_scene(spec)
            scene.family = fam
            scenes.append(scene)
            vid += 1
    ds = Dataset([sc.trajectory for sc in scenes], 1.0 / cfg.dt, cfg.lane_width)
    return Corpus(ds, scenes)
