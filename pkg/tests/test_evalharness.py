import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from laneproto.errors import StratificationError
from laneproto.evalharness import (ManeuverStream, avg_prediction_time, balanced_metrics, crossing_time,
                                   detection_start, f1_score, mahalanobis_error_bins, position_error_bins,
                                   prediction_time, split_dataset, split_ids)
from laneproto.trajmodel import CLASS_INDEX, Kind, ManeuverLabel, Trajectory, stitch_lateral

LCL, LK, LCR = (CLASS_INDEX[k] for k in (Kind.LCL, Kind.LK, Kind.LCR))


# --------------------------------------------------------------------------
# split


def _kinds(n_lcl=156, n_lcr=278, n_lk=300):
    kinds = {}
    for kind, n in ((Kind.LCL, n_lcl), (Kind.LCR, n_lcr), (Kind.LK, n_lk)):
        for _ in range(n):
            kinds[len(kinds) + 1] = kind
    return kinds


def test_split_counts_of_recorded_corpus():
    kinds = _kinds()
    train, test = split_ids(kinds, 0.7, 42)
    count = lambda ids, k: sum(kinds[i] is k for i in ids)
    assert (count(train, Kind.LCL), count(train, Kind.LCR)) == (109, 195)
    assert (count(test, Kind.LCL), count(test, Kind.LCR)) == (47, 83)
    assert set(train) | set(test) == set(kinds) and not set(train) & set(test)
    assert split_ids(kinds, 0.7, 42) == (train, test)
    assert split_ids(dict(reversed(list(kinds.items()))), 0.7, 42) == (train, test)


def test_split_ratio_one():
    train, test = split_ids(_kinds(10, 10, 10), 1.0)
    assert test == [] and len(train) == 30


@given(st.integers(2, 40), st.integers(2, 40), st.integers(2, 40), st.floats(0, 1), st.integers(0, 1000))
def test_split_partition_and_ratio(a, b, c, ratio, seed):
    kinds = _kinds(a, b, c)
    train, test = split_ids(kinds, ratio, seed)
    assert sorted(train + test) == sorted(kinds)
    for kind, n in ((Kind.LCL, a), (Kind.LCR, b), (Kind.LK, c)):
        got = sum(kinds[i] is kind for i in train)
        assert abs(got - ratio * n) <= 1


def test_split_single_member_class():
    with pytest.raises(StratificationError):
        split_ids(_kinds(1, 5, 5))


def test_split_dataset_keeps_trajectories(small_labeled):
    train, test = split_dataset(small_labeled, 0.7, 3)
    ids = sorted(tr.vehicle_id for tr in train.trajectories + test.trajectories)
    assert ids == sorted(tr.vehicle_id for tr in small_labeled.trajectories)
    assert train.lane_width == small_labeled.lane_width


# --------------------------------------------------------------------------
# metrics


def test_metric_arithmetic():
    tpr, fpr = 0.89, 0.04
    prc = tpr / (tpr + fpr)
    assert prc == pytest.approx(0.957, abs=5e-4)
    assert f1_score(0.96, 0.89) == pytest.approx(0.924, abs=5e-4)
    assert f1_score(0.0, 0.0) == 0.0


def test_perfect_classifier():
    y = np.array([LCL] * 5 + [LK] * 10 + [LCR] * 3)
    for m in balanced_metrics(y, y).values():
        assert (m.tpr, m.prc, m.f1, m.miss_rate, m.fpr) == (1.0, 1.0, 1.0, 0.0, 0.0)


def test_confusion_counts_against_loop():
    rng = np.random.default_rng(5)
    y, p = rng.integers(0, 3, 300), rng.integers(0, 3, 300)
    ms = balanced_metrics(p, y)
    for c, kind in enumerate((Kind.LCL, Kind.LK, Kind.LCR)):
        tp = sum(1 for a, b in zip(y, p) if a == c and b == c)
        fn = sum(1 for a, b in zip(y, p) if a == c and b != c)
        fp = sum(1 for a, b in zip(y, p) if a != c and b == c)
        tn = 300 - tp - fn - fp
        m = ms[kind]
        assert (m.tp, m.fn, m.fp, m.tn) == (tp, fn, fp, tn)
        tpr, fpr = tp / (tp + fn), fp / (fp + tn)
        assert m.prc == pytest.approx(tpr / (tpr + fpr))
        assert m.f1 == pytest.approx(2 * m.prc * tpr / (m.prc + tpr))


def test_absent_class_is_undefined():
    y = np.array([LK] * 5 + [LCR] * 5)
    m = balanced_metrics(y, y)[Kind.LCL]
    assert m.tpr is None and m.f1 is None and m.miss_rate is None


@given(st.integers(0, 2**31 - 1))
def test_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    y, p = rng.integers(0, 3, 80), rng.integers(0, 3, 80)
    perm = rng.permutation(80)
    assert balanced_metrics(p, y) == balanced_metrics(p[perm], y[perm])


# --------------------------------------------------------------------------
# prediction time


def _stream(pred, kind=Kind.LCL, t_cross=3.0, t_start=0.0, dt=0.1):
    t = np.round(np.arange(len(pred)) * dt, 10)
    return ManeuverStream(1, kind, t_start, t_cross, t, np.asarray(pred))


def test_prediction_time_examples():
    # 31 frames on [0, 3]; correct from 1.3 s = 1.7 s before the crossing
    s = _stream([LK] * 13 + [LCL] * 18)
    assert prediction_time(s) == pytest.approx(1.7)
    assert prediction_time(_stream([LK] * 31)) == 0.0
    # correct, wrong, then correct from 2.0 s: only the final run counts
    s = _stream([LK] * 5 + [LCL] * 10 + [LCR] * 5 + [LCL] * 11)
    assert detection_start(s) == pytest.approx(2.0)
    assert prediction_time(s) == pytest.approx(1.0)


def test_frames_after_crossing_ignored():
    s = _stream([LK] * 10 + [LCL] * 21 + [LK] * 10, t_cross=3.0)
    assert prediction_time(s) == pytest.approx(2.0)


def test_average_over_all_and_detected():
    streams = [_stream([LK] * 13 + [LCL] * 18), _stream([LK] * 31), _stream([LCL] * 31)]
    r = avg_prediction_time(streams)
    assert r["mean"] == pytest.approx((1.7 + 0 + 3.0) / 3)
    assert r["mean_detected"] == pytest.approx((1.7 + 3.0) / 2)
    assert (r["n"], r["n_detected"]) == (3, 2)


def test_crossing_time_interpolated():
    t = np.arange(0, 5, 0.04)
    d = 3.6 / (1 + np.exp(-3 * (t - 2.0))) - 0.2
    d = np.where(d > 1.8, d - 3.6, d)
    traj = Trajectory(1, t, 30 * t, np.full(t.size, 30.0), d, np.gradient(d, 0.04))
    tc = crossing_time(traj, ManeuverLabel(Kind.LCL, 0.5, 4.0))
    # 3.6 / (1 + exp(-3 (t - 2))) = 2.0  <=>  t = 2 + ln(1.25) / 3
    assert tc == pytest.approx(2 + math.log(1.25) / 3, abs=2e-3)


# --------------------------------------------------------------------------
# binned errors


def _reference_bins(tau, err, width=0.5, n_bins=8):
    sums, counts = [0.0] * n_bins, [0] * n_bins
    for t, e in zip(tau, err):
        b = int(math.floor(t / width + 1e-9))
        if 0 <= b < n_bins:
            sums[b] += abs(e)
            counts[b] += 1
    return [s / c if c else None for s, c in zip(sums, counts)], counts


def test_bins_trivial():
    tau = np.arange(0, 4.0, 0.04)
    r = position_error_bins(tau, np.zeros(tau.size), np.zeros(tau.size))
    assert r["lateral"] == [0.0] * 8 and r["longitudinal"] == [0.0] * 8
    r = position_error_bins(tau, np.full(tau.size, -0.3))
    np.testing.assert_allclose(r["lateral"], 0.3)
    assert r["bin_centre"] == [0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.25, 3.75]


def test_bins_empty_are_absent():
    r = position_error_bins(np.array([0.1, 0.2]), np.array([1.0, 2.0]))
    assert r["lateral"][0] == pytest.approx(1.5)
    assert r["lateral"][1:] == [None] * 7


@given(st.integers(0, 2**31 - 1))
def test_bins_match_reference(seed):
    rng = np.random.default_rng(seed)
    tau = np.round(rng.integers(0, 101, 500) * 0.04, 10)
    err = rng.normal(0, 1, 500)
    ref, counts = _reference_bins(tau, err)
    r = position_error_bins(tau, err)
    assert r["count"] == counts
    for a, b in zip(r["lateral"], ref):
        assert (a is None and b is None) or abs(a - b) <= 1e-12
    # relabeling and reordering samples changes nothing
    perm = rng.permutation(500)
    np.testing.assert_allclose(np.array(position_error_bins(tau[perm], err[perm])["lateral"], dtype=float),
                               np.array(r["lateral"], dtype=float), atol=1e-12)


def test_mahalanobis_bins():
    tau = np.arange(0, 4.0, 0.04)
    mu = np.sin(tau)
    var = 0.01 + 0.02 * tau
    assert mahalanobis_error_bins(tau, mu, mu, var)["mahalanobis"] == [0.0] * 8
    r = mahalanobis_error_bins(tau, mu + np.sqrt(var), mu, var)
    np.testing.assert_allclose(r["mahalanobis"], 1.0)
    var0 = var.copy()
    var0[:3] = 0.0
    assert mahalanobis_error_bins(tau, mu, mu, var0)["variance_floored"] == 3


def test_hold_predictor_error_grows(small_labeled):
    tau_all, err_all = [], []
    for tr in small_labeled.trajectories:
        x = stitch_lateral(tr.d)
        for lab in tr.labels:
            if lab.kind is Kind.LK:
                continue
            for i in np.nonzero((tr.t >= lab.t_start) & (tr.t <= lab.t_end))[0][::5]:
                j = np.arange(i, min(i + 101, tr.t.size))
                tau_all.append(tr.t[j] - tr.t[i])
                err_all.append(x[j] - x[i])
    r = position_error_bins(np.concatenate(tau_all), np.concatenate(err_all))
    assert np.all(np.diff(r["lateral"]) >= 0)
