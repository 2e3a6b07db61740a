import numpy as np
import pytest
from hypothesis import given, strategies as st

from laneproto.cluster import ClusterPrototype, PrototypeLibrary
from laneproto.errors import NoMatch
from laneproto.matchfeat import PartialTrajectory
from laneproto.predict import (adapted_component, best_prototype_prediction, lane_keeping_prediction,
                               lateral_jet, longitudinal_predict, mix_moments, mixture_curve,
                               mixture_weights, predict_trajectory)
from laneproto.trajmodel import Kind, Trajectory

from oracles import ca_simulation, mixture_monte_carlo

DT = 0.04


def proto(mu, var=0.02, kind=Kind.LCL, accel=0.0, var_accel=0.0):
    mu = np.asarray(mu, float)
    return ClusterPrototype(kind, DT, mu, np.broadcast_to(var, mu.shape).copy(), np.gradient(mu, DT),
                            np.full(mu.shape, 0.01), 1, (0,), mean_accel=accel, var_accel=var_accel)


# --------------------------------------------------------------------------
# weights and mixture moments


def test_weight_examples():
    np.testing.assert_allclose(mixture_weights([1.0, 1.0]), [0.5, 0.5])
    np.testing.assert_allclose(mixture_weights([1.0, 3.0]), [0.75, 0.25])
    np.testing.assert_array_equal(mixture_weights([0.0, 5.0]), [1.0, 0.0])
    np.testing.assert_array_equal(mixture_weights([0.0, 2.0, 0.0]), [0.5, 0.0, 0.5])
    with pytest.raises(NoMatch):
        mixture_weights([])


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8))
def test_weights_normalised(deltas):
    w = mixture_weights(deltas)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.all(w > 0)
    # ordering is the reverse of the distances
    assert np.all(np.diff(w[np.argsort(deltas)]) <= 1e-15)


def test_single_component_mixture():
    p = proto(np.linspace(0, 3.6, 60), np.linspace(0.01, 0.05, 60))
    m = mixture_curve([p], [1.0], [0.4], horizon=1.0)
    np.testing.assert_array_equal(m.mu, p.mu_d[10:36])
    np.testing.assert_allclose(m.var, p.var_d[10:36], rtol=1e-12)


def test_two_component_variance_identity():
    rng = np.random.default_rng(0)
    m1, m2 = rng.normal(size=50), rng.normal(size=50)
    v1, v2 = rng.uniform(0.01, 0.1, 50), rng.uniform(0.01, 0.1, 50)
    mu, var = mix_moments(np.array([m1, m2]), np.array([v1, v2]), [0.5, 0.5])
    np.testing.assert_allclose(mu, 0.5 * (m1 + m2), atol=1e-12)
    np.testing.assert_allclose(var, 0.5 * (v1 + v2) + 0.25 * (m1 - m2) ** 2, atol=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_mixture_second_moment_identity(seed):
    rng = np.random.default_rng(seed)
    M = int(rng.integers(1, 6))
    mus, vs = rng.normal(0, 2, (M, 20)), rng.uniform(0, 0.5, (M, 20))
    w = rng.dirichlet(np.ones(M))
    mu, var = mix_moments(mus, vs, w)
    np.testing.assert_allclose(var, w @ (vs + mus ** 2) - mu ** 2, atol=1e-9)
    assert np.all(var >= 0)


def test_mixture_matches_monte_carlo():
    rng = np.random.default_rng(42)
    mus = np.array([[1.0, 2.0, 3.0, 3.5], [1.5, 2.8, 3.4, 3.6], [0.8, 1.2, 2.0, 3.0]])
    vs = np.array([[0.02, 0.05, 0.08, 0.1], [0.03, 0.04, 0.06, 0.02], [0.05, 0.1, 0.1, 0.1]])
    w = np.array([0.5, 0.3, 0.2])
    mu, var = mix_moments(mus, vs, w)
    mc_mu, mc_var = mixture_monte_carlo(mus, vs, w, 1_000_000, rng)
    np.testing.assert_allclose(mu, mc_mu, rtol=0.005)
    np.testing.assert_allclose(var, mc_var, rtol=0.005)


def test_endpoint_hold():
    protos = [proto(np.linspace(0, 3.6, 40)), proto(np.linspace(0, 3.4, 55), 0.05)]
    m = mixture_curve(protos, [0.6, 0.4], [0.2, 0.4], horizon=6.0)
    tail = m.t > 2.5
    assert np.all(m.mu[tail] == m.mu[tail][0])
    assert np.all(m.var[tail] == m.var[tail][0])


# --------------------------------------------------------------------------
# longitudinal model


def test_ca_examples():
    lon = longitudinal_predict(10.0, 30.0, 0.0, 0.0, horizon=4.0, dt=1.0)
    assert lon.s[-1] == pytest.approx(130.0)
    np.testing.assert_array_equal(lon.cov, 0.0)
    lon = longitudinal_predict(0.0, 0.0, 2.0, 0.0, horizon=4.0, dt=DT)
    assert lon.s[-1] == pytest.approx(16.0, abs=1e-9)
    assert lon.v[-1] == pytest.approx(8.0, abs=1e-9)


def test_ca_variance_matches_simulation():
    rng = np.random.default_rng(42)
    lon = longitudinal_predict(0.0, 25.0, 0.3, 0.5, horizon=4.0, dt=DT)
    sim = ca_simulation(0.0, 25.0, 0.3, 0.5, DT, lon.s.size - 1, 100_000, rng)
    np.testing.assert_allclose(lon.cov[1:, 0, 0], sim, rtol=0.01)
    for c in lon.cov:
        assert np.all(np.linalg.eigvalsh(c) >= -1e-12)


def test_ca_bad_horizon():
    with pytest.raises(ValueError):
        longitudinal_predict(0, 0, 0, 0, horizon=0.0)


# --------------------------------------------------------------------------
# boundary adaptation


QUINTIC = np.array([0.1, 0.2, 0.4, 0.3, -0.08, 0.005])  # d(t) on [0, 4] s, ascending powers


def _quintic_proto():
    t = np.arange(101) * DT
    return proto(np.polynomial.polynomial.polyval(t, QUINTIC))


def _jet(t):
    P = np.polynomial.polynomial
    return (P.polyval(t, QUINTIC), P.polyval(t, P.polyder(QUINTIC)), P.polyval(t, P.polyder(QUINTIC, 2)))


def test_adaptation_noop_on_mean():
    p = _quintic_proto()
    k = 20
    n = 101 - k
    out, rms = adapted_component(p, k * DT, *_jet(k * DT), n)
    assert rms < 1e-9
    np.testing.assert_allclose(out, p.mu_d[k:], atol=1e-6)


def test_adaptation_offset_is_local():
    p = _quintic_proto()
    k, n = 10, 91
    x, xd, xdd = _jet(k * DT)
    base, _ = adapted_component(p, k * DT, x, xd, xdd, n)
    moved, _ = adapted_component(p, k * DT, x + 0.3, xd, xdd, n)
    assert moved[0] == pytest.approx(x + 0.3, abs=1e-9)
    t = np.arange(n) * DT
    np.testing.assert_allclose(moved[t >= 1.0 - 1e-9], base[t >= 1.0 - 1e-9], atol=1e-6)
    assert np.max(np.abs(moved - base)) == pytest.approx(0.3, abs=1e-9)


def test_lateral_jet_on_cubic():
    t = np.arange(-25, 1) * DT
    d = 0.5 + 0.3 * t - 0.2 * t ** 2 + 0.05 * t ** 3
    x, xd, xdd = lateral_jet(d, DT)
    assert (x, xd, xdd) == pytest.approx((0.5, 0.3, -0.4), abs=1e-9)


# --------------------------------------------------------------------------
# entry points


def _partial_at(traj, frac):
    lab = next(lb for lb in traj.labels if lb.kind is not Kind.LK)
    idx = int(np.searchsorted(traj.t, lab.t_start + frac * (lab.t_end - lab.t_start)))
    return PartialTrajectory.from_trajectory(traj, idx)


def test_prediction_starts_at_observation(small_labeled, small_library):
    for traj in [tr for tr in small_labeled.trajectories if tr.kind() is not Kind.LK][:6]:
        for frac in (0.2, 0.5, 0.8):
            part = _partial_at(traj, frac)
            pred = predict_trajectory(part, small_library, traj.kind())
            lat = pred.lateral
            assert lat.mu[0] == pytest.approx(part.newest.d, abs=1e-9)
            assert abs(lat.weights.sum() - 1) <= 1e-12
            assert np.all(lat.var >= 0)
            assert lat.t[-1] == pytest.approx(4.0)
            assert pred.longitudinal.s[0] == part.newest.s
            base = best_prototype_prediction(part, small_library, traj.kind())
            assert len(base.lateral.prototypes) == 1


def test_lane_keeping_fallback():
    t = np.arange(100) * DT
    traj = Trajectory(5, t, 20 * t + 0.25 * t ** 2, 20 + 0.5 * t, np.full(100, 0.4), np.zeros(100))
    part = PartialTrajectory.from_trajectory(traj, 99)
    lib = PrototypeLibrary([], [], metadata={"lk_var_d": 0.01, "lk_var_accel": 0.1})
    pred = predict_trajectory(part, lib, Kind.LK)
    assert pred.lateral.kind is Kind.LK
    np.testing.assert_allclose(pred.lateral.mu, 0.4 * np.exp(-pred.lateral.t / 2.0))
    assert pred.longitudinal.a_bar == pytest.approx(0.5, abs=1e-9)
    assert pred.to_dict() == lane_keeping_prediction(part, lib).to_dict()


def test_no_prototypes_raise():
    t = np.arange(60) * DT
    traj = Trajectory(5, t, 20 * t, np.full(60, 20.0), np.zeros(60), np.zeros(60))
    with pytest.raises(NoMatch):
        predict_trajectory(PartialTrajectory.from_trajectory(traj, 59), PrototypeLibrary([], []), Kind.LCL)
