"""Command-line driver: ``laneproto <subcommand> ...``.

Subcommands chain through files: ``gen`` writes scene CSVs, ``label`` a
label CSV, ``cluster`` a prototype JSON, ``train`` a model JSON (and
optionally the feature CSV), ``eval`` a report JSON, ``plot`` SVG+CSV
figures.  ``pipeline`` runs every stage in one process.

Exit codes: 0 success, 1 stage failure, 2 missing input, 3 bad config.
Failures print a one-line JSON error report on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import SCHEMAS, __version__, evalharness, svgplot
from .classify import load_model, model_to_json, save_model
from .cluster import PrototypeLibrary
from .errors import ConfigError, LaneProtoError
from .matchfeat import FeatureTable, PartialTrajectory, extract_features
from .pipeline import (MODEL_SPECS, PipelineConfig, _round, run_pipeline, split_features,
                       stage_cluster, stage_evaluate, stage_features, stage_generate, stage_label,
                       train_model)
from .predict import predict_trajectory
from .trajmodel import CLASSES, Dataset, Kind, read_label_csv, read_scenes, write_label_csv, write_scenes

log = logging.getLogger("laneproto")

EXIT_STAGE, EXIT_MISSING, EXIT_CONFIG = 1, 2, 3
MODEL_ALIASES = {"gda": "gda4", "bdt": "bdt6"}


class MissingInput(LaneProtoError):
    pass


# --------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _files(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.rglob("*") if p.is_file() and p.name != "manifest.json")
    return [path]


def _hashes(paths) -> dict:
    out = {}
    for p in paths:
        if p is None:
            continue
        for f in _files(Path(p)):
            out[str(f)] = _sha256(f)
    return out


def write_manifest(target: Path, command: str, cfg: PipelineConfig, inputs, outputs) -> Path:
    """``manifest.json`` inside a directory target, ``<name>.manifest.json`` beside a file."""
    target = Path(target)
    path = target / "manifest.json" if target.is_dir() else target.with_name(target.name + ".manifest.json")
    manifest = {
        "schema": SCHEMAS["manifest"],
        "command": command,
        "parameters": cfg.to_dict(),
        "inputs": _hashes(inputs),
        "outputs": _hashes(outputs),
        "versions": {"laneproto": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "schemas": SCHEMAS},
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise MissingInput(f"input not found: {p}")


def _write_json(path: Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load_config(args) -> PipelineConfig:
    _require(args.config)
    overrides = {k: getattr(args, k, None) for k in ("seed", "lcl", "lcr", "lk", "lk_missrate",
                                                     "sigma_max", "max_shift", "horizon", "t_buffer")}
    return PipelineConfig.load(args.config, **overrides)


def _read_dataset(scenes, labels, cfg: PipelineConfig) -> Dataset:
    _require(scenes, labels)
    labs = read_label_csv(labels) if labels is not None else None
    ds = read_scenes(scenes, labs, sample_rate=1.0 / cfg.dt, lane_width=cfg.lane_width)
    if not ds.trajectories:
        raise MissingInput(f"no trajectory CSVs in {scenes}")
    return ds


def _subset(ds: Dataset, which: str, cfg: PipelineConfig) -> Dataset:
    if which == "all":
        return ds
    train, test = evalharness.split_dataset(ds, cfg.train_ratio, cfg.seed)
    return train if which == "train" else test


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(args, cfg):
    out = Path(args.out)
    corpus = stage_generate(cfg)
    write_scenes(out / "scenes", corpus.dataset)
    write_label_csv(out / "truth_labels.csv", corpus.dataset.labels())
    with open(out / "families.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_id", "family"])
        for vid, fam in sorted(corpus.families.items()):
            w.writerow([vid, fam])
    write_manifest(out, "gen", cfg, [], [out])
    log.info("wrote %d scenes to %s", len(corpus.dataset), out)


def cmd_label(args, cfg):
    ds = _read_dataset(args.scenes, None, cfg)
    labeled, report = stage_label(ds, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_label_csv(out, labeled.labels())
    write_manifest(out, "label", cfg, [args.scenes], [out])
    log.info("labeled %s; %d discarded, %d failed", {k.value: v for k, v in labeled.maneuver_counts().items()},
             len(report.discarded), len(report.failed))


def cmd_cluster(args, cfg):
    ds = _subset(_read_dataset(args.scenes, args.labels, cfg), args.subset, cfg)
    lib = stage_cluster(ds, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lib.save(out)
    write_manifest(out, "cluster", cfg, [args.scenes, args.labels], [out])
    log.info("%d LCL and %d LCR prototypes", len(lib.lcl), len(lib.lcr))


def _model_name(name: str) -> tuple[str, str, str]:
    name = MODEL_ALIASES.get(name, name)
    for spec in MODEL_SPECS:
        if spec[0] == name:
            return spec
    raise ConfigError(f"unknown model {name!r}")


def cmd_train(args, cfg):
    name, kind, variant = _model_name(args.model)
    inputs = []
    if args.features is not None:
        _require(args.features)
        table = FeatureTable.read_csv(args.features)
        inputs.append(args.features)
    else:
        if args.scenes is None or args.labels is None or args.library is None:
            raise MissingInput("train needs --features or all of --scenes, --labels, --library")
        _require(args.library)
        ds = _subset(_read_dataset(args.scenes, args.labels, cfg), args.subset, cfg)
        table = stage_features(ds, PrototypeLibrary.load(args.library), cfg.train_stride, cfg, args.jobs)
        inputs += [args.scenes, args.labels, args.library]
        if args.features_out:
            Path(args.features_out).parent.mkdir(parents=True, exist_ok=True)
            table.write_csv(args.features_out)
    F_fit, F_val = split_features(table, cfg.calibration_ratio, cfg.seed + 1)
    model = train_model(kind, variant, F_fit, F_val if args.calibrate else None, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    write_manifest(out, "train", cfg, inputs, [out])
    log.info("trained %s; calibration %s", name, getattr(model, "calibration", {}))


def cmd_predict(args, cfg):
    _require(args.library)
    ds = _read_dataset(args.scenes, None, cfg)
    lib = PrototypeLibrary.load(args.library)
    tr = ds.by_id().get(args.vehicle)
    if tr is None:
        raise MissingInput(f"vehicle {args.vehicle} not in {args.scenes}")
    i = int(np.argmin(np.abs(tr.t - args.t)))
    partial = PartialTrajectory.from_trajectory(tr, i, cfg.t_buffer)
    maneuver = args.maneuver
    posterior = None
    if maneuver == "auto":
        if args.model is None:
            raise MissingInput("--maneuver auto needs --model")
        _require(args.model)
        model = load_model(args.model)
        x = extract_features(partial, lib, model.variant, ds.lane_width, cfg.delta_sat)[None, :]
        scores = model.predict_proba(x)[0]
        posterior = (scores / scores.sum()).tolist()
        maneuver = CLASSES[int(model.predict(x)[0])].value
    pred = predict_trajectory(partial, lib, Kind(maneuver), cfg.horizon, lane_width=ds.lane_width)
    obj = {"schema": SCHEMAS["prediction"], "vehicle_id": args.vehicle, "t": float(tr.t[i]),
           "maneuver": maneuver, "posterior": posterior, **pred.to_dict()}
    out = Path(args.out)
    _write_json(out, _round(obj))
    write_manifest(out, "predict", cfg, [args.scenes, args.library, args.model], [out])


def cmd_eval(args, cfg):
    _require(args.library, *args.model)
    ds = _subset(_read_dataset(args.scenes, args.labels, cfg), args.subset, cfg)
    lib = PrototypeLibrary.load(args.library)
    models = {}
    for path in args.model:
        m = load_model(path)
        models[Path(path).stem] = m
    table = stage_features(ds, lib, cfg.test_stride, cfg, args.jobs)
    report = {"schema": SCHEMAS["report"], "config": cfg.to_dict(),
              **stage_evaluate(ds, lib, models, table, cfg, with_prediction=not args.no_prediction)}
    out = Path(args.out)
    _write_json(out, _round(report))
    write_manifest(out, "eval", cfg, [args.scenes, args.labels, args.library, *args.model], [out])


def plot_report(report: dict, out: Path) -> list[Path]:
    """SVG figure plus the CSV of its plotted values for every report panel."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    pred = report.get("prediction")
    if pred:
        x = pred["bin_centre"]
        panels = {
            "lateral_error": ("Mean absolute lateral error", "|error| [m]",
                              {"mixture": pred["mixture"]["lateral"], "best_prototype": pred["best_prototype"]["lateral"]}),
            "longitudinal_error": ("Mean absolute longitudinal error", "|error| [m]",
                                   {"mixture": pred["mixture"]["longitudinal"],
                                    "best_prototype": pred["best_prototype"]["longitudinal"]}),
            "mahalanobis_error": ("Mean lateral Mahalanobis error", "|error| / sigma",
                                  {"mixture": pred["mixture"]["mahalanobis"]}),
        }
        for stem, (title, ylabel, series) in panels.items():
            svg = out / f"{stem}.svg"
            svg.write_text(svgplot.line_chart(title, x, series, "look-ahead time [s]", ylabel), encoding="utf-8")
            with open(out / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["bin_centre", "count", *series])
                for i, xc in enumerate(x):
                    w.writerow([xc, pred["count"][i], *("" if s[i] is None else s[i] for s in series.values())])
            written += [svg, out / f"{stem}.csv"]
    cls = report.get("classifiers")
    if cls:
        names = sorted(cls)
        series = {kind: [cls[n]["prediction_time"][kind]["mean"] for n in names] for kind in ("LCL", "LCR")}
        svg = out / "prediction_time.svg"
        svg.write_text(svgplot.bar_chart("Average prediction time", names, series, "time [s]"), encoding="utf-8")
        with open(out / "prediction_time.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "LCL", "LCR", "f1_LCL", "f1_LK", "f1_LCR", "lk_miss_rate"])
            for i, n in enumerate(names):
                met = cls[n]["metrics"]
                w.writerow([n, series["LCL"][i], series["LCR"][i], met["LCL"]["f1"], met["LK"]["f1"],
                            met["LCR"]["f1"], cls[n]["lk_miss_rate"]])
        written += [svg, out / "prediction_time.csv"]
    return written


def cmd_plot(args, cfg):
    src = Path(args.report)
    if src.is_dir():
        src = src / "report.json"
    _require(src)
    report = json.loads(src.read_text(encoding="utf-8"))
    out = Path(args.out)
    plot_report(report, out)
    write_manifest(out, "plot", cfg, [src], [out])


def cmd_pipeline(args, cfg):
    out = Path(args.out)
    res = run_pipeline(cfg, keep_data=args.write_data, jobs=args.jobs)
    (out / "models").mkdir(parents=True, exist_ok=True)
    res.library.save(out / "prototypes.json")
    for name, model in res.models.items():
        (out / "models" / f"{name}.json").write_text(model_to_json(model) + "\n", encoding="utf-8")
    _write_json(out / "report.json", res.report)
    plot_report(res.report, out / "figures")
    if args.write_data:
        write_scenes(out / "scenes", res.datasets["labeled"])
        write_label_csv(out / "labels.csv", res.datasets["labeled"].labels())
        res.features["train"].write_csv(out / "features_train.csv")
        res.features["test"].write_csv(out / "features_test.csv")
    write_manifest(out, "pipeline", cfg, [args.config], [out])
    log.info("pipeline finished: %s", {k: round(v, 1) for k, v in res.timings.items()})


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    schema_lines = "\n".join(f"{k}: {v}" for k, v in SCHEMAS.items())
    p = argparse.ArgumentParser(prog="laneproto", description=__doc__.splitlines()[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"laneproto {__version__}\n{schema_lines}")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, default=None, help="TOML config (default: packaged defaults)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for feature extraction")
        sp.add_argument("--log-level", default=argparse.SUPPRESS, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        return sp

    sp = common(sub.add_parser("gen", help="generate a synthetic scene corpus"))
    sp.add_argument("--out", required=True, type=Path)
    for k in ("lcl", "lcr", "lk"):
        sp.add_argument(f"--{k}", type=int, default=None, help=f"number of {k.upper()} vehicles")

    sp = common(sub.add_parser("label", help="label maneuvers of scene CSVs"))
    sp.add_argument("--scenes", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)

    sp = common(sub.add_parser("cluster", help="build the prototype library"))
    sp.add_argument("--scenes", required=True, type=Path)
    sp.add_argument("--labels", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--subset", choices=["train", "test", "all"], default="train")
    sp.add_argument("--sigma-max", dest="sigma_max", type=float, default=None)
    sp.add_argument("--max-shift", dest="max_shift", type=float, default=None)

    sp = common(sub.add_parser("train", help="train and calibrate one classifier"))
    sp.add_argument("--features", type=Path, default=None, help="feature CSV")
    sp.add_argument("--scenes", type=Path, default=None)
    sp.add_argument("--labels", type=Path, default=None)
    sp.add_argument("--library", type=Path, default=None)
    sp.add_argument("--features-out", dest="features_out", type=Path, default=None)
    sp.add_argument("--subset", choices=["train", "test", "all"], default="train")
    sp.add_argument("--model", default="bdt", help="gda | bdt | gda2 | gda4 | bdt2 | bdt6")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--lk-missrate", dest="lk_missrate", type=float, default=None)
    sp.add_argument("--no-calibrate", dest="calibrate", action="store_false")

    sp = common(sub.add_parser("predict", help="forecast one vehicle from one instant"))
    sp.add_argument("--scenes", required=True, type=Path)
    sp.add_argument("--library", required=True, type=Path)
    sp.add_argument("--vehicle", required=True, type=int)
    sp.add_argument("--t", required=True, type=float, help="issue time [s]")
    sp.add_argument("--maneuver", default="auto", choices=["auto", "LCL", "LK", "LCR"])
    sp.add_argument("--model", type=Path, default=None)
    sp.add_argument("--horizon", type=float, default=None)
    sp.add_argument("--t-buffer", dest="t_buffer", type=float, default=None)
    sp.add_argument("--out", required=True, type=Path)

    sp = common(sub.add_parser("eval", help="classification and prediction report"))
    sp.add_argument("--scenes", required=True, type=Path)
    sp.add_argument("--labels", required=True, type=Path)
    sp.add_argument("--library", required=True, type=Path)
    sp.add_argument("--model", required=True, type=Path, action="append")
    sp.add_argument("--subset", choices=["train", "test", "all"], default="test")
    sp.add_argument("--no-prediction", dest="no_prediction", action="store_true")
    sp.add_argument("--out", required=True, type=Path)

    sp = common(sub.add_parser("plot", help="SVG figures and CSVs from a report"))
    sp.add_argument("--report", required=True, type=Path, help="report JSON or directory holding report.json")
    sp.add_argument("--out", required=True, type=Path)

    sp = common(sub.add_parser("pipeline", help="run every stage for one seed"))
    sp.add_argument("--out", type=Path, default=Path("run"))
    sp.add_argument("--write-data", dest="write_data", action="store_true",
                    help="also write scenes, labels and feature tables")
    return p


COMMANDS = {"gen": cmd_gen, "label": cmd_label, "cluster": cmd_cluster, "train": cmd_train,
            "predict": cmd_predict, "eval": cmd_eval, "plot": cmd_plot, "pipeline": cmd_pipeline}


def _fail(stage: str, exc: Exception, code: int) -> int:
    report = {"status": "error", "stage": stage, "error": type(exc).__name__, "message": str(exc),
              "exit_code": code}
    print(json.dumps(report, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        cfg = _load_config(args)
    except MissingInput as exc:
        return _fail(stage, exc, EXIT_MISSING)
    except ConfigError as exc:
        return _fail(stage, exc, EXIT_CONFIG)
    try:
        COMMANDS[stage](args, cfg)
    except MissingInput as exc:
        return _fail(stage, exc, EXIT_MISSING)
    except ConfigError as exc:
        return _fail(stage, exc, EXIT_CONFIG)
    except (LaneProtoError, ValueError, OSError) as exc:
        log.debug("stage failure", exc_info=True)
        return _fail(stage, exc, EXIT_STAGE)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
