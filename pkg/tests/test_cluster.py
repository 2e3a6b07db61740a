import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from laneproto.cluster import (PrototypeLibrary, ahc, ahc_trace, build_library, dissimilarity, merge,
                               optimal_alignment, prototype_from_members)
from laneproto.errors import EmptyTrainingSet, GridMismatch
from laneproto.trajmodel import Kind, LateralTrack

from oracles import (brute_ahc, brute_alignment, dissimilarity_oracle, package_merge_sequence,
                     random_ahc_instance)

DT = 0.04


def track(d, t0=0.0):
    d = np.asarray(d, dtype=float)
    return LateralTrack(t0, DT, d, np.gradient(d, DT) if d.size > 1 else np.zeros(1))


def test_dissimilarity_examples():
    a = track(np.sin(np.arange(30) * 0.2))
    assert dissimilarity(a, a) == 0.0
    assert dissimilarity(track(np.zeros(20)), track(np.ones(20))) == pytest.approx(1.0)


def test_dissimilarity_ramp_closed_form():
    # d(t) = t on [0, 1] vs 0: root mean square tends to sqrt(1/3)
    n = 2001
    t = np.linspace(0, 1, n)
    a = LateralTrack(0.0, 1 / (n - 1), t, np.ones(n))
    b = LateralTrack(0.0, 1 / (n - 1), np.zeros(n), np.zeros(n))
    assert dissimilarity(a, b) == pytest.approx(math.sqrt(1 / 3), abs=2e-4)


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        dissimilarity(track([0.0, 1.0]), track([0.0, 1.0], t0=0.01))


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=30), st.lists(st.floats(-3, 3), min_size=1, max_size=30),
       st.integers(-10, 10))
def test_dissimilarity_matches_oracle(a, b, off):
    a, b = np.array(a), np.array(b)
    got = dissimilarity(track(a), track(b, t0=off * DT))
    assert got == pytest.approx(dissimilarity_oracle(a, 0, b, off), abs=1e-9)
    assert got == pytest.approx(dissimilarity(track(b, t0=off * DT), track(a)), abs=1e-12)
    assert got >= 0


def test_alignment_recovers_shift():
    t = np.arange(60) * DT
    d = 3.6 / (1 + np.exp(-3 * (t - 1.2)))
    a, b = track(d), track(d, t0=0.2)
    shift, delta = optimal_alignment(a, b, 1.0)
    assert shift == pytest.approx(-0.2)
    assert delta < 1e-9
    assert optimal_alignment(a, a, 1.0) == (0.0, 0.0)


def test_alignment_sinusoid_phase():
    t = np.arange(100) * DT
    a = track(np.sin(2 * np.pi * t / 2.0))
    b = track(np.sin(2 * np.pi * (t - 0.3) / 2.0))
    k, _ = brute_alignment(a.d, 0, b.d, 0, 25)
    shift, _ = optimal_alignment(a, b, 1.0)
    assert shift == pytest.approx(k * DT)
    assert abs(shift + 0.3) <= DT


@given(st.integers(0, 2**31 - 1), st.integers(0, 12))
def test_alignment_matches_exhaustive(seed, K):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=int(rng.integers(5, 30)))
    b = rng.normal(size=int(rng.integers(5, 30)))
    shift, delta = optimal_alignment(track(a), track(b), K * DT)
    k, ref = brute_alignment(a, 0, b, 0, K)
    assert delta == pytest.approx(ref, abs=1e-9)
    assert shift == pytest.approx(k * DT)


def singleton(d, i=0):
    return prototype_from_members(Kind.LCL, [track(d)], [0.0], [i])


def test_merge_two_points():
    members = {0: track(np.zeros(10)), 1: track(np.ones(10))}
    m = merge(singleton(np.zeros(10), 0), singleton(np.ones(10), 1), members, 0.0)
    np.testing.assert_allclose(m.mu_d, 0.5)
    np.testing.assert_allclose(m.var_d, 0.25)


def test_merge_identical():
    d = np.sin(np.arange(15) * 0.3)
    members = {0: track(d), 1: track(d)}
    a = singleton(d, 0)
    m = merge(a, singleton(d, 1), members, 0.0)
    np.testing.assert_allclose(m.mu_d, a.mu_d)
    np.testing.assert_allclose(m.var_d, a.var_d)
    assert m.n_members == 2


def test_merge_three_plus_five_recompute():
    rng = np.random.default_rng(0)
    tracks = {i: track(rng.normal(size=int(rng.integers(10, 20)))) for i in range(8)}
    offs = rng.integers(-3, 4, 8) * DT
    a = prototype_from_members(Kind.LCR, [tracks[i] for i in range(3)], offs[:3], range(3))
    b = prototype_from_members(Kind.LCR, [tracks[i] for i in range(3, 8)], offs[3:], range(3, 8))
    shift = 2 * DT
    m = merge(a, b, tracks, shift)
    # direct population moments over all eight aligned members
    starts = np.rint(np.concatenate((a.member_shifts, b.member_shifts + shift)) / DT).astype(int)
    lo = starts.min()
    hi = max(s + len(tracks[i]) for s, i in zip(starts, range(8))) - 1
    from oracles import track_placed
    stack = np.array([track_placed(tracks[i].d, s, lo, hi) for i, s in zip(range(8), starts)])
    np.testing.assert_allclose(m.mu_d, stack.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(m.var_d, np.maximum(stack.var(axis=0), 1e-4), atol=1e-12)


def test_ahc_two_bundles():
    rng = np.random.default_rng(2)
    t = np.arange(40) * DT
    base = [3.6 / (1 + np.exp(-4 * (t - 0.8))), 3.6 / (1 + np.exp(-4 * (t - 0.8))) - 1.0]
    tracks = [track(base[i % 2] + rng.normal(0, 0.03, t.size)) for i in range(8)]
    protos = ahc(tracks, Kind.LCL, sigma_max=0.3, max_shift=0.0)
    assert len(protos) == 2
    assert {frozenset(p.member_ids) for p in protos} == {frozenset({0, 2, 4, 6}), frozenset({1, 3, 5, 7})}


def test_ahc_singleton_and_no_merge():
    d = np.linspace(0, 3.6, 30)
    (p,) = ahc([track(d)], Kind.LCL)
    np.testing.assert_array_equal(p.mu_d, d)
    np.testing.assert_array_equal(p.var_d, 1e-4)
    tracks = [track(d + 0.01 * i) for i in range(5)]
    assert len(ahc(tracks, Kind.LCL, sigma_max=0.0)) == 5
    with pytest.raises(EmptyTrainingSet):
        ahc([], Kind.LCL)


def test_ahc_matches_bruteforce_oracle():
    rng = np.random.default_rng(20240)
    for _ in range(25):
        tracks, sigma_max, K = random_ahc_instance(rng)
        _, hist = ahc_trace([track(d) for d in tracks], Kind.LCL, sigma_max, K * DT)
        expected = brute_ahc(tracks, sigma_max, K, 1e-4)
        got = package_merge_sequence(hist, len(tracks))
        assert [frozenset(p) for p in got] == [frozenset(p) for p in expected]


@given(st.integers(0, 2**31 - 1))
def test_ahc_invariants(seed):
    rng = np.random.default_rng(seed)
    tracks, sigma_max, K = random_ahc_instance(rng)
    tr = [track(d) for d in tracks]
    protos = ahc(tr, Kind.LCR, sigma_max, K * DT)
    assert sum(p.n_members for p in protos) == len(tracks)
    for p in protos:
        if p.n_members > 1:
            assert np.sqrt(p.var_d.max()) <= sigma_max + 1e-12
        # reconstructible from stored members and shifts
        r = prototype_from_members(Kind.LCR, [tr[i] for i in p.member_ids], p.member_shifts, p.member_ids)
        np.testing.assert_allclose(r.mu_d, p.mu_d, atol=1e-9)
        np.testing.assert_allclose(r.var_d, p.var_d, atol=1e-9)


def test_library_roundtrip(tmp_path, small_library):
    small_library.save(tmp_path / "lib.json")
    back = PrototypeLibrary.load(tmp_path / "lib.json")
    assert len(back.lcl) == len(small_library.lcl)
    for a, b in zip(back.lcr, small_library.lcr):
        np.testing.assert_array_equal(a.mu_d, b.mu_d)
        assert a.member_ids == b.member_ids
    assert back.metadata == small_library.metadata


def test_library_counts_default_corpus():
    from laneproto import evalharness
    from laneproto.labeling import label_dataset
    from laneproto.synthgen import generate_corpus

    ds = label_dataset(generate_corpus(seed=42).dataset)
    train, _ = evalharness.split_dataset(ds, 0.7, 42)
    lib = build_library(train)
    # measured on this corpus and frozen: six prototypes per kind
    assert (len(lib.lcl), len(lib.lcr)) == (6, 6)
    assert sum(p.n_members for p in lib.lcl) == train.maneuver_counts()[Kind.LCL]
