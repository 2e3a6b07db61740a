import numpy as np
import pytest
from hypothesis import given, strategies as st

from laneproto.errors import DegenerateManeuver, TrackTooShort
from laneproto.labeling import (LabelReport, detect_lane_change_events, label_dataset, label_trajectory,
                                segment_maneuver, smooth_lateral)
from laneproto.synthgen import SceneSpec, generate_corpus, generate_scene
from laneproto.trajmodel import Dataset, Kind, LateralTrack, stitch_lateral

DT = 0.04


def test_smooth_reproduces_cubic():
    t = np.arange(0, 6, DT)
    d = 0.1 + 0.2 * t - 0.05 * t**2 + 0.004 * t**3
    out = smooth_lateral(LateralTrack(0.0, DT, d, np.zeros_like(d)))
    assert np.max(np.abs(out.d - d)) < 1e-6
    np.testing.assert_allclose(out.d_dot, 0.2 - 0.1 * t + 0.012 * t**2, atol=1e-6)


def test_smooth_constant_has_zero_velocity():
    out = smooth_lateral(LateralTrack(0.0, DT, np.full(80, 0.7), np.zeros(80)))
    np.testing.assert_allclose(out.d_dot, 0.0, atol=1e-10)
    with pytest.raises(TrackTooShort):
        smooth_lateral(LateralTrack(0.0, DT, np.zeros(3), np.zeros(3)))


def test_smooth_beats_raw_quotient():
    rng = np.random.default_rng(4)
    t = np.arange(0, 6, DT)
    err_s, err_r = [], []
    for _ in range(50):
        d = 0.4 * t + rng.normal(0, 0.02, t.size)
        err_s.append(np.sqrt(np.mean((smooth_lateral(LateralTrack(0.0, DT, d, 0 * d)).d_dot - 0.4) ** 2)))
        err_r.append(np.sqrt(np.mean((np.gradient(d, DT) - 0.4) ** 2)))
    assert np.mean(err_s) < np.mean(err_r)


def test_detect_single_and_none():
    t = np.arange(0, 5, DT)
    ev = detect_lane_change_events(t, np.linspace(0, 3.6, t.size))
    assert [e.kind for e in ev] == [Kind.LCL]
    assert detect_lane_change_events(t, 0.4 * np.sin(t)) == []


def test_detect_double_lane_change():
    t = np.arange(0, 20, DT)
    sig = lambda x: 1 / (1 + np.exp(-x))
    d = 3.6 * sig(2 * (t - 5)) - 3.6 * sig(2 * (t - 14))  # left then back right
    ev = detect_lane_change_events(t, d)
    # oracle: sign changes of (d - boundary) at the +1.8 m marker
    u = np.sign(d - 1.8)
    crossings = t[1:][np.diff(u) != 0]
    assert len(ev) == crossings.size == 2
    assert [e.kind for e in ev] == [Kind.LCL, Kind.LCR]
    assert ev[0].t_cross < ev[1].t_cross


def test_segment_sigmoid_threshold_oracle():
    t = np.arange(0, 12, DT)
    k, t0 = 1.6, 6.0
    e = np.exp(-k * (t - t0))
    d = 3.6 / (1 + e)
    d_dot = 3.6 * k * e / (1 + e) ** 2
    (ev,) = detect_lane_change_events(t, d)
    lab = segment_maneuver(t, d, d_dot, ev)
    # analytic crossings of d_dot = 0.2:  3.6 k x / (1 + x)^2 = 0.2 with x = exp(-k (t - t0))
    a = 3.6 * k / 0.2
    roots = np.roots([1, 2 - a, 1])
    t_hits = np.sort(t0 - np.log(roots) / k)
    assert t_hits[0] - DT <= lab.t_start <= t_hits[0] + DT
    assert t_hits[1] - DT <= lab.t_end <= t_hits[1] + DT
    # the centring tails (|d_dot| < 0.2) are excluded
    assert lab.t_start > 0.5 and lab.t_end < t[-1] - 0.5


def test_segment_closed_threshold():
    t = np.arange(0, 3, DT)
    d = np.linspace(0, 3.6, t.size)
    d_dot = np.zeros_like(t)
    d_dot[20:60] = 1.0
    d_dot[19] = 0.2  # exactly at the threshold: inside
    (ev,) = detect_lane_change_events(t, d)
    lab = segment_maneuver(t, d, d_dot, ev, hysteresis=0)
    assert lab.t_start == pytest.approx(t[19])


def test_segment_step_is_degenerate():
    t = np.arange(0, 3, DT)
    d = np.where(t < 1.5, 0.0, 3.6)
    (ev,) = detect_lane_change_events(t, d)
    with pytest.raises(DegenerateManeuver):
        segment_maneuver(t, d, np.zeros_like(t), ev)


def test_label_corpus_counts():
    corpus = generate_corpus({"lcl": 10, "lcr": 10, "lk": 10}, seed=3)
    labeled = label_dataset(corpus.dataset)
    counts = labeled.maneuver_counts()
    assert counts[Kind.LCL] == 10 and counts[Kind.LCR] == 10
    assert counts == corpus.dataset.maneuver_counts()


def test_label_empty():
    assert len(label_dataset(Dataset([]))) == 0


def test_single_lcl_partition():
    sc = generate_scene(SceneSpec(Kind.LCL, seed=2))
    labs = label_trajectory(sc.trajectory)
    assert sum(l.duration for l in labs) == pytest.approx(sc.trajectory.t[-1] - sc.trajectory.t[0])


scene_specs = st.builds(
    SceneSpec,
    kind=st.sampled_from([Kind.LCL, Kind.LCR, Kind.LK]),
    duration=st.floats(12.0, 14.0),
    v0=st.floats(20, 35),
    lateral_profile=st.sampled_from(["quintic", "sigmoid", "overshoot"]),
    maneuver_start=st.floats(3.0, 5.0),
    maneuver_duration=st.floats(4.0, 7.0),
    overshoot=st.floats(0.0, 0.5),
    seed=st.integers(0, 10_000),
)


@given(scene_specs)
def test_label_invariants(spec):
    sc = generate_scene(spec)
    tr = sc.trajectory
    labs = label_trajectory(tr)
    # partition without gaps or overlaps
    assert labs[0].t_start == tr.t[0] and labs[-1].t_end == tr.t[-1]
    for a, b in zip(labs, labs[1:]):
        assert a.t_end == b.t_start
    # one crossing per lane-change label, every crossing inside one label
    stitched = stitch_lateral(tr.d)
    events = detect_lane_change_events(tr.t, smooth_lateral(LateralTrack(0.0, DT, stitched, tr.d_dot)).d)
    lc = [l for l in labs if l.kind is not Kind.LK]
    for lab in lc:
        inside = [e for e in events if lab.t_start <= e.t_cross <= lab.t_end]
        assert len(inside) == 1
    assert len(lc) == len(events)
    # relabelling is idempotent
    assert label_trajectory(tr.with_labels(labs)) == labs


def test_boundaries_close_to_ground_truth(small_corpus):
    report = LabelReport()
    labeled = label_dataset(small_corpus.dataset, report=report)
    dev = []
    for sc, tr in zip(small_corpus.scenes, labeled.trajectories):
        if sc.label is None:
            continue
        (lab,) = [l for l in tr.labels if l.kind is not Kind.LK]
        dev += [abs(lab.t_start - sc.label.t_start), abs(lab.t_end - sc.label.t_end)]
    assert np.median(dev) <= 0.2
