import numpy as np
import pytest
from scipy.stats import chi2_contingency

from laneproto.errors import BadSpec
from laneproto.labeling import label_dataset
from laneproto.synthgen import FAMILIES, DiversityConfig, SceneSpec, generate_corpus, generate_scene
from laneproto.trajmodel import Kind


def test_quintic_lcl_noiseless():
    spec = SceneSpec(Kind.LCL, noise_sd=0.0, meander_amp=0.0, maneuver_start=4.0, maneuver_duration=5.0)
    sc = generate_scene(spec)
    assert sc.truth_d[0] == pytest.approx(0.0, abs=1e-12)
    assert sc.truth_d[-1] == pytest.approx(3.6, abs=1e-12)
    v = np.gradient(sc.truth_d, spec.dt)
    assert sc.trajectory.t[np.argmax(np.abs(v))] == pytest.approx(6.5, abs=spec.dt)


def test_lk_bounded():
    for seed in range(20):
        sc = generate_scene(SceneSpec(Kind.LK, seed=seed, meander_amp=0.12))
        assert np.max(np.abs(sc.trajectory.d)) <= 0.3


def test_scene_determinism():
    a = generate_scene(SceneSpec(Kind.LCR, seed=9))
    b = generate_scene(SceneSpec(Kind.LCR, seed=9))
    for f in ("t", "s", "s_dot", "d", "d_dot"):
        assert getattr(a.trajectory, f).tobytes() == getattr(b.trajectory, f).tobytes()


def test_bad_specs():
    with pytest.raises(BadSpec):
        generate_scene(SceneSpec(Kind.LCL, duration=3.0))
    with pytest.raises(BadSpec):
        generate_scene(SceneSpec(Kind.LCL, lateral_profile="zigzag"))
    with pytest.raises(BadSpec):
        generate_corpus({"lcl": -1})


def test_default_counts():
    corpus = generate_corpus(seed=42)
    c = corpus.dataset.maneuver_counts()
    assert c[Kind.LCL] == 156 and c[Kind.LCR] == 278
    assert sum(1 for tr in corpus.dataset if tr.kind() is Kind.LK) == 300


def test_lk_only():
    corpus = generate_corpus({"lcl": 0, "lcr": 0, "lk": 5}, seed=1)
    assert len(corpus.dataset) == 5
    assert all(tr.kind() is Kind.LK for tr in corpus.dataset)


def test_seeds_share_family_structure():
    a = generate_corpus({"lcl": 100, "lcr": 100, "lk": 0}, seed=1)
    b = generate_corpus({"lcl": 100, "lcr": 100, "lk": 0}, seed=2)
    assert not np.array_equal(a.dataset.trajectories[0].d, b.dataset.trajectories[0].d)
    names = [f.name for f in FAMILIES]
    table = [[list(c.families.values()).count(n) for n in names] for c in (a, b)]
    assert min(min(r) for r in table) > 0
    assert chi2_contingency(table).pvalue > 0.01


def test_ground_truth_consistent(small_corpus):
    for sc in small_corpus.scenes:
        if sc.label is None:
            continue
        t = sc.trajectory.t
        inside = (t >= sc.label.t_start + 0.05) & (t <= sc.label.t_end - 0.05)
        v = sc.spec.kind.direction * np.gradient(sc.truth_d, sc.spec.dt)
        assert np.all(v[inside] > 0.2)
        assert sc.label.t_start <= sc.t_cross <= sc.label.t_end


def test_noiseless_corpus_recovered():
    corpus = generate_corpus({"lcl": 30, "lcr": 30, "lk": 10}, DiversityConfig(noise_sd=0.0), seed=5)
    labeled = label_dataset(corpus.dataset)
    found = 0
    for sc, tr in zip(corpus.scenes, labeled.trajectories):
        if sc.label is None:
            continue
        found += any(l.kind is sc.label.kind and l.t_start <= sc.t_cross <= l.t_end for l in tr.labels)
    assert found >= 0.95 * 60
