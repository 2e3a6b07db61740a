"""Maneuver-conditioned trajectory prediction.

Lateral motion of a lane change is forecast as a Gaussian mixture over the
prototypes of the detected kind, each read from its matched shift onwards and
held at its last value beyond its support.  Mixture weights are the
normalised inverse Mahalanobis distances.  Before mixing, every component's
first second is adapted with a degree-5 B-spline so that it starts at the
observed lateral position, velocity and acceleration.

Longitudinal motion uses the (nearly) constant acceleration model with the
mixed acceleration mean and variance.

All lateral outputs are in the frame of the vehicle's current lane (the lane
of the newest buffered sample).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .bspline import boundary_fit, evaluate, poly_to_bspline
from .cluster import VAR_FLOOR, ClusterPrototype, PrototypeLibrary
from .errors import NoMatch
from .matchfeat import MatchResult, PartialTrajectory, match_all
from .trajmodel import DT, LANE_WIDTH, Kind

log = logging.getLogger(__name__)

HORIZON = 4.0
ADAPT_WINDOW = 1.0
SPLINE_DEGREE = 5
MIN_FIT_SPAN = 2.0
FIT_WARN_RMS = 0.05
LK_TIME_CONSTANT = 2.0


@dataclass
class MixturePrediction:
    kind: Kind
    dt: float
    mu: np.ndarray
    var: np.ndarray
    weights: np.ndarray = field(default_factory=lambda: np.ones(1))
    shifts: np.ndarray = field(default_factory=lambda: np.zeros(1))
    prototypes: tuple[int, ...] = ()
    components_mu: np.ndarray | None = None
    components_var: np.ndarray | None = None

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.mu.size) * self.dt

    def to_dict(self) -> dict:
        return {"kind": Kind(self.kind).value, "dt": self.dt, "mu": self.mu.tolist(),
                "var": self.var.tolist(), "weights": np.asarray(self.weights).tolist(),
                "shifts": np.asarray(self.shifts).tolist(), "prototypes": list(self.prototypes)}


@dataclass
class LongitudinalPrediction:
    dt: float
    s0: float
    v0: float
    a_bar: float
    var_a: float
    s: np.ndarray
    v: np.ndarray
    cov: np.ndarray  # (n, 3, 3) over (s, v, a)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.s.size) * self.dt

    def to_dict(self) -> dict:
        return {"dt": self.dt, "a_bar": self.a_bar, "var_a": self.var_a, "s": self.s.tolist(),
                "v": self.v.tolist(), "cov": self.cov.tolist()}


@dataclass
class Prediction:
    lateral: MixturePrediction
    longitudinal: LongitudinalPrediction

    def to_dict(self) -> dict:
        return {"maneuver": Kind(self.lateral.kind).value, "lateral": self.lateral.to_dict(),
                "longitudinal": self.longitudinal.to_dict()}


# --------------------------------------------------------------------------
# mixture


def mixture_weights(matches) -> np.ndarray:
    """Normalised inverse distances; exact matches (distance 0) share all weight."""
    deltas = np.array([m.delta_p if isinstance(m, MatchResult) else m for m in matches], dtype=float)
    if deltas.size == 0:
        raise NoMatch("no matches to weight")
    if np.any(deltas < 0):
        raise ValueError("distances must be non-negative")
    zero = deltas == 0
    if zero.any():
        return zero / zero.sum()
    inv = 1.0 / deltas
    return inv / inv.sum()


def _held(values: np.ndarray, start: int, n: int) -> np.ndarray:
    return values[np.minimum(start + np.arange(n), values.size - 1)]


def mix_moments(mus: np.ndarray, variances: np.ndarray, weights) -> tuple[np.ndarray, np.ndarray]:
    """Mixture mean and variance of Gaussian components (rows)."""
    w = np.asarray(weights, dtype=float)
    mus = np.atleast_2d(mus)
    mu = w @ mus
    var = w @ (np.atleast_2d(variances) + (mus - mu) ** 2)
    return mu, np.maximum(var, 0.0)


def mixture_curve(protos: list[ClusterPrototype], weights, shifts, horizon: float = HORIZON,
                  offsets=None) -> MixturePrediction:
    """Weighted mixture of prototypes read from ``shifts`` on, held beyond their ends.

    ``offsets[m]`` is subtracted from component ``m``'s mean to move it into
    the output frame.
    """
    if not protos:
        raise NoMatch("empty prototype list")
    dt = protos[0].dt
    n = int(round(horizon / dt)) + 1
    offsets = np.zeros(len(protos)) if offsets is None else np.asarray(offsets, dtype=float)
    mus = np.array([_held(p.mu_d, int(round(s / dt)), n) - o for p, s, o in zip(protos, shifts, offsets)])
    vs = np.array([_held(p.var_d, int(round(s / dt)), n) for p, s in zip(protos, shifts)])
    mu, var = mix_moments(mus, vs, weights)
    return MixturePrediction(protos[0].kind, dt, mu, var, np.asarray(weights, dtype=float),
                             np.asarray(shifts, dtype=float), tuple(range(len(protos))), mus, vs)


# --------------------------------------------------------------------------
# longitudinal


def longitudinal_predict(s0: float, v0: float, a_bar: float, var_a: float,
                         horizon: float = HORIZON, dt: float = DT) -> LongitudinalPrediction:
    """Propagate ``[s, v, a]`` with step ``dt``; the acceleration of every step is ``a_bar + w``.

    ``w ~ N(0, var_a)`` enters through the gain ``[T^2/2, T, 1]``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n = int(round(horizon / dt))
    T = dt
    A = np.array([[1.0, T, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    g = np.array([0.5 * T * T, T, 1.0])
    Q = np.outer(g, g) * var_a
    s = np.empty(n + 1)
    v = np.empty(n + 1)
    cov = np.zeros((n + 1, 3, 3))
    s[0], v[0] = s0, v0
    for k in range(n):
        s[k + 1] = s[k] + v[k] * T + 0.5 * a_bar * T * T
        v[k + 1] = v[k] + a_bar * T
        cov[k + 1] = A @ cov[k] @ A.T + Q
    return LongitudinalPrediction(dt, s0, v0, a_bar, var_a, s, v, cov)


# --------------------------------------------------------------------------
# boundary adaptation


def lateral_jet(track_d: np.ndarray, dt: float, window: float = ADAPT_WINDOW) -> tuple[float, float, float]:
    """Observed position plus velocity and acceleration from a cubic fit to the last ``window`` s."""
    n = min(track_d.size, int(round(window / dt)) + 1)
    y = track_d[-n:]
    if n < 4:
        return float(track_d[-1]), 0.0, 0.0
    t = (np.arange(n) - (n - 1)) * dt
    c = npoly.polyfit(t, y, 3)
    return float(track_d[-1]), float(c[1]), float(2.0 * c[2])


def adapted_component(proto: ClusterPrototype, shift: float, x: float, x_dot: float, x_ddot: float,
                      n: int, adapt_window: float = ADAPT_WINDOW) -> tuple[np.ndarray, float]:
    """Prototype mean from ``shift`` on, approximated by a degree-5 spline whose
    first ``adapt_window`` seconds are refitted to start at ``(x, x_dot, x_ddot)``.

    Returns the ``n``-sample course (held after the fit window) and the RMS of
    the polynomial approximation.
    """
    dt = proto.dt
    k = int(round(shift / dt))
    n_fit = max(proto.mu_d.size - k, int(round(MIN_FIT_SPAN / dt)) + 1)
    y = _held(proto.mu_d, k, n_fit)
    span = (n_fit - 1) * dt
    u = np.arange(n_fit) / (n_fit - 1)
    coeffs = npoly.polyfit(u, y, SPLINE_DEGREE)
    rms = float(np.sqrt(np.mean((npoly.polyval(u, coeffs) - y) ** 2)))
    if rms > FIT_WARN_RMS:
        log.warning("degree-%d fit of prototype mean has RMS %.3f m", SPLINE_DEGREE, rms)
    curve = poly_to_bspline(coeffs, SPLINE_DEGREE)
    curve = boundary_fit(curve, x, x_dot * span, x_ddot * span * span, 0.0,
                         interval=(0.0, min(1.0, adapt_window / span)))
    uu = np.minimum(np.arange(n) * dt / span, 1.0)
    return evaluate(curve, uu), rms


# --------------------------------------------------------------------------
# prediction entry points


def _frame(partial: PartialTrajectory, lane_width: float) -> tuple[np.ndarray, float]:
    """Oldest-lane lateral course and its offset from the current lane's frame."""
    track = partial.to_track(lane_width)
    return track.d, float(track.d[-1] - partial.newest.d)


def _longitudinal_from(partial: PartialTrajectory, protos, weights, horizon: float) -> LongitudinalPrediction:
    a = np.array([p.mean_accel for p in protos])
    va = np.array([p.var_accel for p in protos])
    a_bar, var_a = mix_moments(a[:, None], va[:, None], weights)
    st = partial.newest
    return longitudinal_predict(st.s, st.s_dot, float(a_bar[0]), float(var_a[0]), horizon, partial.dt)


def recent_acceleration(partial: PartialTrajectory) -> float:
    arr = partial.arrays()
    if arr["t"].size < 2:
        return 0.0
    return float(np.polyfit(arr["t"] - arr["t"][0], arr["s_dot"], 1)[0])


def lane_keeping_prediction(partial: PartialTrajectory, library: PrototypeLibrary | None = None,
                            horizon: float = HORIZON, time_constant: float = LK_TIME_CONSTANT) -> Prediction:
    """Exponential return to the centreline; variance grows towards the LK corpus spread."""
    meta = library.metadata if library is not None else {}
    var_lk = float(meta.get("lk_var_d", 0.05))
    var_acc = float(meta.get("lk_var_accel", 0.05))
    dt = partial.dt
    t = np.arange(int(round(horizon / dt)) + 1) * dt
    d0 = partial.newest.d
    mu = d0 * np.exp(-t / time_constant)
    var = var_lk * (1.0 - np.exp(-2.0 * t / time_constant)) + VAR_FLOOR
    lat = MixturePrediction(Kind.LK, dt, mu, var)
    st = partial.newest
    lon = longitudinal_predict(st.s, st.s_dot, recent_acceleration(partial), var_acc, horizon, dt)
    return Prediction(lat, lon)


def predict_trajectory(partial: PartialTrajectory, library: PrototypeLibrary, maneuver: Kind,
                       horizon: float = HORIZON, adapt: bool = True,
                       lane_width: float = LANE_WIDTH) -> Prediction:
    """Lateral mixture (adapted over its first second) and longitudinal CA forecast."""
    maneuver = Kind(maneuver)
    if maneuver is Kind.LK:
        return lane_keeping_prediction(partial, library, horizon)
    protos_all = library.for_kind(maneuver)
    matches = match_all(partial, protos_all, maneuver, lane_width)
    used = [m for m in matches if m is not None]
    if not used:
        raise NoMatch(f"no {maneuver.value} prototype overlaps the partial trajectory")
    protos = [protos_all[m.prototype] for m in used]
    weights = mixture_weights(used)
    shifts = np.array([m.tau for m in used])
    d_old, c = _frame(partial, lane_width)
    offsets = np.array([m.offset for m in used]) + c
    lat = mixture_curve(protos, weights, shifts, horizon, offsets)
    lat.prototypes = tuple(m.prototype for m in used)
    if adapt:
        x, xd, xdd = lateral_jet(d_old, partial.dt)
        n = lat.mu.size
        comps = np.array([
            adapted_component(p, s, x + m.offset, xd, xdd, n)[0] - o
            for p, s, m, o in zip(protos, shifts, used, offsets)
        ])
        lat.components_mu = comps
        lat.mu, lat.var = mix_moments(comps, lat.components_var, weights)
    return Prediction(lat, _longitudinal_from(partial, protos, weights, horizon))


def best_prototype_prediction(partial: PartialTrajectory, library: PrototypeLibrary, maneuver: Kind,
                              horizon: float = HORIZON, lane_width: float = LANE_WIDTH) -> Prediction:
    """Baseline: the single best-matching prototype, unadapted."""
    maneuver = Kind(maneuver)
    if maneuver is Kind.LK:
        return lane_keeping_prediction(partial, library, horizon)
    protos_all = library.for_kind(maneuver)
    used = [m for m in match_all(partial, protos_all, maneuver, lane_width) if m is not None]
    if not used:
        raise NoMatch(f"no {maneuver.value} prototype overlaps the partial trajectory")
    best = min(used, key=lambda r: (r.delta_p, r.prototype))
    _, c = _frame(partial, lane_width)
    proto = protos_all[best.prototype]
    lat = mixture_curve([proto], [1.0], [best.tau], horizon, [best.offset + c])
    lat.prototypes = (best.prototype,)
    return Prediction(lat, _longitudinal_from(partial, [proto], [1.0], horizon))
