import numpy as np
import pytest
from hypothesis import given, strategies as st

from laneproto.errors import BadFilterCoefficient, EmptyTrajectory, NonMonotoneTime, SpanTooSmall
from laneproto.trajmodel import (FrenetState, Kind, LateralTrack, ManeuverLabel, Trajectory,
                                 extend_to_span, lane_indices, lowpass_diff, read_label_csv,
                                 read_trajectory_csv, resample_uniform, stitch_lateral,
                                 write_label_csv, write_trajectory_csv)


def states(t, d, d_dot=None):
    d_dot = np.zeros_like(d) if d_dot is None else d_dot
    return [FrenetState(float(a), 0.0, 0.0, float(b), float(c)) for a, b, c in zip(t, d, d_dot)]


def test_resample_linear_interpolation():
    tr = resample_uniform(states([0.0, 1.0], [0.0, 1.0]), 0.5)
    np.testing.assert_allclose(tr.d, [0.0, 0.5, 1.0])


def test_resample_constant():
    tr = resample_uniform(states(np.linspace(0, 2, 7), np.full(7, 0.3)), 0.13)
    np.testing.assert_array_equal(tr.d, 0.3)


def test_resample_sine_25hz():
    t = np.arange(0, 5, 0.01)
    tr = resample_uniform(states(t, np.sin(t)), 0.04)
    assert np.max(np.abs(tr.d - np.sin(tr.t))) < 1e-3


@given(st.integers(3, 60), st.floats(0.01, 0.2))
def test_resample_own_grid_is_exact(n, dt):
    t = dt * np.arange(n)
    d = np.random.default_rng(n).normal(size=n)
    tr = resample_uniform(states(t, d), dt)
    np.testing.assert_array_equal(tr.d, d)


def test_resample_errors():
    with pytest.raises(EmptyTrajectory):
        resample_uniform(states([0.0], [0.0]), 0.04)
    with pytest.raises(NonMonotoneTime):
        resample_uniform(states([0.0, 0.2, 0.1], [0.0, 0.0, 0.0]), 0.04)


def test_extend_endpoint_hold():
    tr = LateralTrack(0.0, 0.04, [1.0, 2.0], [0.0, 0.0])
    ext = extend_to_span(tr, -0.04, 0.08)
    np.testing.assert_array_equal(ext.d, [1, 1, 2, 2])
    assert ext.t0 == pytest.approx(-0.04)


def test_extend_identity_and_errors():
    tr = LateralTrack(0.0, 0.04, [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    assert extend_to_span(tr, 0.0, 0.08) is tr
    with pytest.raises(SpanTooSmall):
        extend_to_span(tr, 0.04, 0.08)


@given(st.integers(0, 10), st.integers(0, 10), st.floats(-2, 2))
def test_extend_idempotent_and_constant(pre, post, c):
    tr = LateralTrack(0.0, 0.04, np.full(5, c), np.zeros(5))
    lo, hi = -pre * 0.04, tr.t_end + post * 0.04
    once = extend_to_span(tr, lo, hi)
    twice = extend_to_span(once, lo, hi)
    np.testing.assert_array_equal(once.d, twice.d)
    np.testing.assert_array_equal(once.d, c)
    assert len(once) == 5 + pre + post


def test_lowpass_ramp_and_constant():
    np.testing.assert_allclose(lowpass_diff([0.0, 0.1, 0.2], 0.1, 1.0), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(lowpass_diff(np.full(9, 2.5), 0.04, 0.3), 0.0)
    with pytest.raises(BadFilterCoefficient):
        lowpass_diff([0.0, 1.0], 0.04, 0.0)


def test_lowpass_reduces_noise():
    # Monte-Carlo over 1000 noisy ramps: smoothing beats the raw quotient
    rng = np.random.default_rng(0)
    t = np.arange(100) * 0.04
    err_s, err_r = [], []
    for _ in range(1000):
        d = 0.5 * t + rng.normal(0, 0.01, t.size)
        err_s.append(np.sqrt(np.mean((lowpass_diff(d, 0.04, 0.3)[20:] - 0.5) ** 2)))
        err_r.append(np.sqrt(np.mean((lowpass_diff(d, 0.04, 1.0)[20:] - 0.5) ** 2)))
    assert np.mean(err_s) < np.mean(err_r)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 1.0))
def test_lowpass_linear(a, b, alpha):
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=30), rng.normal(size=30)
    lhs = lowpass_diff(a * x + b * y, 0.04, alpha)
    rhs = a * lowpass_diff(x, 0.04, alpha) + b * lowpass_diff(y, 0.04, alpha)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_lane_indices_and_stitch():
    # left change: d goes to +1.8 then jumps to -1.8 of the new lane
    d = np.array([0.0, 1.0, 1.7, -1.7, -1.0, 0.0])
    np.testing.assert_array_equal(lane_indices(d, 3.6), [0, 0, 0, 1, 1, 1])
    np.testing.assert_allclose(stitch_lateral(d, 3.6), [0, 1, 1.7, 1.9, 2.6, 3.6])


def test_trajectory_frame_labels_and_kind():
    t = np.arange(0, 2.0, 0.5)
    tr = Trajectory(1, t, t, t, t * 0, t * 0,
                    [ManeuverLabel(Kind.LK, 0.0, 0.5), ManeuverLabel(Kind.LCR, 0.5, 1.5)])
    assert tr.kind() is Kind.LCR
    assert tr.frame_labels().tolist() == [1, 2, 2, 2]


def test_csv_roundtrip(tmp_path):
    t = np.arange(5) * 0.04
    tr = Trajectory(3, t, 2 * t, np.full(5, 2.0), np.sin(t), np.cos(t))
    write_trajectory_csv(tmp_path / "a.csv", [tr])
    (back,) = read_trajectory_csv(tmp_path / "a.csv")
    for f in ("t", "s", "s_dot", "d", "d_dot"):
        np.testing.assert_array_equal(getattr(back, f), getattr(tr, f))
    labs = [(3, ManeuverLabel(Kind.LCL, 0.04, 0.12))]
    write_label_csv(tmp_path / "l.csv", labs)
    assert read_label_csv(tmp_path / "l.csv") == {3: [labs[0][1]]}
