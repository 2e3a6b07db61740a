"""End-to-end experiment: generate, label, split, cluster, featurise, train,
calibrate, classify and predict on the held-out vehicles.

Every stage is a plain function so that the CLI subcommands and the tests can
run them one at a time.  :func:`run_pipeline` chains them and assembles a
JSON-serialisable report that is a pure function of the configuration.
"""
from __future__ import annotations

import dataclasses
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cluster, evalharness
from .classify import (AdaBoostEnsemble, GdaModel, bdt_trainer, calibrate_lk_missrate,
                       gda_trainer, lk_miss_rate)
from .cluster import PrototypeLibrary
from .errors import BadSpec, ConfigError
from .labeling import LabelReport, label_dataset
from .matchfeat import FeatureTable, PartialTrajectory, dataset_features
from .predict import best_prototype_prediction, predict_trajectory
from .synthgen import DiversityConfig, generate_corpus
from .trajmodel import CLASSES, Dataset, Kind, lane_indices

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

REPORT_SCHEMA = "laneproto.report/1"
DEFAULT_CONFIG = Path(__file__).with_name("default.toml")

MODEL_SPECS = (("gda2", "gda", "base2"), ("gda4", "gda", "gda4"),
               ("bdt2", "bdt", "base2"), ("bdt6", "bdt", "bdt6"))


@dataclass
class PipelineConfig:
    seed: int = 42
    lcl: int = 156
    lcr: int = 278
    lk: int = 300
    dt: float = 0.04
    lane_width: float = 3.6
    noise_sd: float = 0.03
    velocity_threshold: float = 0.2
    min_duration: float = 0.5
    t_buffer: float = 2.0
    sigma_max: float = cluster.SIGMA_MAX
    max_shift: float = cluster.MAX_SHIFT
    var_floor: float = cluster.VAR_FLOOR
    delta_sat: float = 50.0
    train_ratio: float = 0.7
    calibration_ratio: float = 0.8
    train_stride: int = 5
    test_stride: int = 1
    n_learners: int = 90
    max_branch: int = 15
    lk_missrate: float = 0.11
    lk_tolerance: float = 0.02
    horizon: float = 4.0
    prediction_stride: int = 5
    bin_width: float = 0.5

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        flat = {}
        for key, value in obj.items():
            if isinstance(value, dict):  # TOML sections are only for grouping
                flat.update(value)
            else:
                flat[key] = value
        unknown = sorted(set(flat) - set(names))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in flat.items():
            typ = int if names[key].type in ("int", int) else float
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config key {key} must be numeric")
            if typ is int and value != int(value):
                raise ConfigError(f"config key {key} must be an integer")
            kwargs[key] = typ(value)
        return cls(**kwargs)

    @classmethod
    def load(cls, path=None, **overrides) -> "PipelineConfig":
        path = DEFAULT_CONFIG if path is None else Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = cls.from_dict(data)
        return dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def counts(self) -> dict:
        return {"lcl": self.lcl, "lcr": self.lcr, "lk": self.lk}


# --------------------------------------------------------------------------
# stages


def stage_generate(cfg: PipelineConfig):
    div = DiversityConfig(noise_sd=cfg.noise_sd, lane_width=cfg.lane_width, dt=cfg.dt)
    return generate_corpus(cfg.counts, div, cfg.seed)


def stage_label(dataset: Dataset, cfg: PipelineConfig) -> tuple[Dataset, LabelReport]:
    report = LabelReport()
    return label_dataset(dataset, cfg.velocity_threshold, cfg.min_duration, report=report), report


def stage_cluster(dataset: Dataset, cfg: PipelineConfig) -> PrototypeLibrary:
    return cluster.build_library(dataset, cfg.sigma_max, cfg.max_shift, cfg.var_floor)


def _features_chunk(args):
    dataset, library, stride, t_buffer, delta_sat = args
    return dataset_features(dataset, library, stride, t_buffer, delta_sat)


def stage_features(dataset: Dataset, library: PrototypeLibrary, stride: int,
                   cfg: PipelineConfig, jobs: int = 1) -> FeatureTable:
    """Feature table of a dataset; ``jobs > 1`` spreads vehicles over worker processes."""
    if jobs <= 1 or len(dataset) < 2 * jobs:
        return dataset_features(dataset, library, stride, cfg.t_buffer, cfg.delta_sat)
    from concurrent.futures import ProcessPoolExecutor

    chunks = [Dataset(dataset.trajectories[i::jobs], dataset.sample_rate, dataset.lane_width)
              for i in range(jobs)]
    with ProcessPoolExecutor(jobs) as pool:
        tables = list(pool.map(_features_chunk, [(c, library, stride, cfg.t_buffer, cfg.delta_sat)
                                                 for c in chunks]))
    table = FeatureTable.concat(tables)
    return table.subset(np.lexsort((table.t, table.vehicle_id)))


def split_features(table: FeatureTable, ratio: float, seed: int) -> tuple[FeatureTable, FeatureTable]:
    """Vehicle-level stratified split of a feature table (fit / calibration parts)."""
    first, _ = evalharness.split_ids(table.vehicle_kinds(), ratio, seed)
    mask = np.isin(table.vehicle_id, first)
    return table.subset(mask), table.subset(~mask)


def train_model(kind: str, variant: str, F_fit: FeatureTable, F_val: FeatureTable | None,
                cfg: PipelineConfig):
    """Train one classifier; calibrate its LK miss rate when a validation table is given."""
    X, y = F_fit.X(variant), F_fit.label
    if kind == "gda":
        trainer = gda_trainer(X, y, variant)
    elif kind == "bdt":
        trainer = bdt_trainer(X, y, variant, cfg.n_learners, cfg.seed, cfg.max_branch)
    else:
        raise BadSpec(f"unknown model kind {kind!r}")
    if F_val is None or len(F_val) == 0:
        return trainer(1.0)
    res = calibrate_lk_missrate(trainer, F_val.X(variant), F_val.label, cfg.lk_missrate, cfg.lk_tolerance)
    return res.model


def _round(x, nd: int = 10):
    """Round floats for the report so that it is stable across platforms' last bits."""
    if isinstance(x, float):
        return round(x, nd)
    if isinstance(x, dict):
        return {k: _round(v, nd) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v, nd) for v in x]
    return x


def maneuver_streams(dataset: Dataset, table: FeatureTable, pred: np.ndarray) -> list[evalharness.ManeuverStream]:
    """Per lane-change maneuver of ``dataset``: classifier output stream over its vehicle's frames."""
    out = []
    order = np.lexsort((table.t, table.vehicle_id))
    vids = table.vehicle_id[order]
    bounds = np.searchsorted(vids, [tr.vehicle_id for tr in dataset.trajectories], side="left")
    ends = np.searchsorted(vids, [tr.vehicle_id for tr in dataset.trajectories], side="right")
    for tr, lo, hi in zip(dataset.trajectories, bounds, ends):
        rows = order[lo:hi]
        for lab in tr.labels:
            if lab.kind is Kind.LK:
                continue
            t_cross = evalharness.crossing_time(tr, lab, dataset.lane_width)
            out.append(evalharness.ManeuverStream(tr.vehicle_id, lab.kind, lab.t_start, t_cross,
                                                  table.t[rows], pred[rows]))
    return out


def classification_report(models: dict, test: Dataset, F_test: FeatureTable) -> tuple[dict, dict]:
    """Per model: balanced metrics, LK miss rate, prediction times; plus the prediction streams."""
    report, streams = {}, {}
    for name, model in models.items():
        variant = model.variant
        pred = model.predict(F_test.X(variant))
        metrics = evalharness.balanced_metrics(pred, F_test.label)
        st = maneuver_streams(test, F_test, pred)
        streams[name] = st
        per_kind = {}
        for kind in (Kind.LCL, Kind.LCR):
            per_kind[kind.value] = evalharness.avg_prediction_time([s for s in st if s.kind is kind])
        report[name] = {
            "variant": variant,
            "metrics": {k.value: m.to_dict() for k, m in metrics.items()},
            "lk_miss_rate": lk_miss_rate(pred, F_test.label),
            "prediction_time": per_kind,
            "prediction_time_all": evalharness.avg_prediction_time(st),
            "calibration": getattr(model, "calibration", {}),
        }
    return report, streams


def prediction_report(test: Dataset, library: PrototypeLibrary, streams: list[evalharness.ManeuverStream],
                      cfg: PipelineConfig) -> dict:
    """Binned lateral/longitudinal errors of the mixture predictor and the best-prototype baseline.

    Issue times run over each maneuver's continuous correct-detection window
    (from detection start to the marker crossing).
    """
    by_id = test.by_id()
    acc_mix = evalharness.ErrorAccumulator(cfg.bin_width, cfg.horizon)
    acc_best = evalharness.ErrorAccumulator(cfg.bin_width, cfg.horizon)
    floored = 0
    n_issue = 0
    w = test.lane_width
    for s in streams:
        start = evalharness.detection_start(s)
        if start is None:
            continue
        tr = by_id[s.vehicle_id]
        lanes = lane_indices(tr.d, w)
        stitched = tr.d + w * lanes
        first = int(round(0.5 / test.dt))
        idx = np.nonzero((tr.t >= start - 1e-9) & (tr.t <= s.t_cross + 1e-9))[0]
        idx = idx[idx >= first][:: cfg.prediction_stride]
        for i in idx:
            partial = PartialTrajectory.from_trajectory(tr, int(i), cfg.t_buffer)
            mix = predict_trajectory(partial, library, s.kind, cfg.horizon, lane_width=w)
            base = best_prototype_prediction(partial, library, s.kind, cfg.horizon, lane_width=w)
            n = min(mix.lateral.mu.size, tr.t.size - i)
            truth_d = stitched[i : i + n] - w * lanes[i]
            truth_s = tr.s[i : i + n]
            tau = np.arange(n) * test.dt
            e_norm, nf = evalharness.normalised_errors(truth_d, mix.lateral.mu[:n], mix.lateral.var[:n])
            floored += nf
            acc_mix.add(tau, lateral=truth_d - mix.lateral.mu[:n], longitudinal=truth_s - mix.longitudinal.s[:n],
                        mahalanobis=e_norm)
            acc_best.add(tau, lateral=truth_d - base.lateral.mu[:n],
                         longitudinal=truth_s - base.longitudinal.s[:n])
            n_issue += 1
    return {
        "bin_centre": acc_mix.centres(),
        "count": acc_mix.counts.tolist(),
        "n_issue_times": n_issue,
        "mixture": {"lateral": acc_mix.means("lateral"), "longitudinal": acc_mix.means("longitudinal"),
                    "mahalanobis": acc_mix.means("mahalanobis")},
        "best_prototype": {"lateral": acc_best.means("lateral"),
                           "longitudinal": acc_best.means("longitudinal")},
        "variance_floored": floored,
    }


def stage_train(F_train: FeatureTable, cfg: PipelineConfig, names=None) -> dict:
    """Fit and LK-calibrate the named models (all four by default)."""
    F_fit, F_val = split_features(F_train, cfg.calibration_ratio, cfg.seed + 1)
    models = {}
    for name, kind, variant in MODEL_SPECS:
        if names is None or name in names:
            log.info("training %s", name)
            models[name] = train_model(kind, variant, F_fit, F_val, cfg)
    return models


def stage_evaluate(test: Dataset, library: PrototypeLibrary, models: dict, F_test: FeatureTable,
                   cfg: PipelineConfig, with_prediction: bool = True) -> dict:
    """Classifier report for every model; trajectory prediction over the detections of
    ``bdt6`` (or of the last model given)."""
    cls_report, streams = classification_report(models, test, F_test)
    out = {"classifiers": cls_report}
    if with_prediction and streams:
        detector = "bdt6" if "bdt6" in streams else list(streams)[-1]
        out["prediction"] = prediction_report(test, library, streams[detector], cfg)
        out["prediction"]["detector"] = detector
    return out


@dataclass
class PipelineResult:
    config: PipelineConfig
    library: PrototypeLibrary
    models: dict
    report: dict
    datasets: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def run_pipeline(cfg: PipelineConfig, keep_data: bool = False, stages=None, jobs: int = 1) -> PipelineResult:
    """Run the whole experiment for one seed.

    ``stages`` may restrict the run to a prefix: ``"cluster"`` stops after
    the prototype library, ``"classify"`` after the classifier report.
    Wall-clock stage timings are kept on the result, never in the report.
    """
    timings = {}
    clock = time.perf_counter()

    def tick(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    corpus = stage_generate(cfg)
    labeled, lreport = stage_label(corpus.dataset, cfg)
    train, test = evalharness.split_dataset(labeled, cfg.train_ratio, cfg.seed)
    tick("label")
    library = stage_cluster(train, cfg)
    tick("cluster")
    report = {
        "schema": REPORT_SCHEMA,
        "config": cfg.to_dict(),
        "corpus_hash": cluster.corpus_hash(labeled),
        "labeling": {"maneuvers": {k.value: v for k, v in labeled.maneuver_counts().items()},
                     "discarded": len(lreport.discarded), "failed": len(lreport.failed)},
        "split": {"train": {k.value: v for k, v in train.maneuver_counts().items()},
                  "test": {k.value: v for k, v in test.maneuver_counts().items()}},
        "prototypes": {"LCL": len(library.lcl), "LCR": len(library.lcr),
                       "members_LCL": [p.n_members for p in library.lcl],
                       "members_LCR": [p.n_members for p in library.lcr]},
    }
    result = PipelineResult(cfg, library, {}, report, timings=timings)
    if keep_data:
        result.datasets = {"labeled": labeled, "train": train, "test": test}
    if stages == "cluster":
        result.report = _round(report)
        return result
    F_train = stage_features(train, library, cfg.train_stride, cfg, jobs)
    F_test = stage_features(test, library, cfg.test_stride, cfg, jobs)
    tick("features")
    result.models = stage_train(F_train, cfg)
    tick("train")
    report.update(stage_evaluate(test, library, result.models, F_test, cfg,
                                 with_prediction=stages != "classify"))
    tick("evaluate")
    if keep_data:
        result.features = {"train": F_train, "test": F_test}
    result.report = _round(report)
    return result
