"""Command-line entry point.

Exit codes: 0 success, 1 I/O or parse failure, 2 validation / config
failure, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataset as dsmod
from .config import RunConfig, load_config
from .errors import (
    ConfigError, DivergedLoss, EmptyDenominator, NoPositives, ParseError, RecordError,
)
from .evaluation import auc, curve_to_csv, curve_to_svg, pr_sweep
from .synth import experiment as expmod
from .synth.model import ModelWeights, TrainingSet, predict, train
from .synth.scenes import gen_dataset, load_features, save_features, scenes_from

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(cfg: RunConfig, out: Path) -> None:
    dsmod.atomic_write_text(out / "config.yaml", cfg.to_yaml())


def _require(value, what: str) -> str:
    if not value:
        raise ConfigError(f"no {what} path given (flag or paths.{what} in the config)")
    return value


def _json_text(obj) -> str:
    return dsmod.dumps_canonical(obj)


# --- commands ---------------------------------------------------------------

def cmd_validate(args, cfg: RunConfig) -> int:
    raw = dsmod.read_json(args.dataset)
    problems = dsmod.find_problems(raw)
    if problems:
        for p in problems:
            print(f"INVALID {p}", file=sys.stderr)
        print(f"{len(problems)} problem(s) in {args.dataset}", file=sys.stderr)
        return EXIT_INVALID
    ds = dsmod.dataset_from_dict(raw)
    stats = dsmod.dataset_stats(ds)
    _say(args, f"{args.dataset}: {len(ds.images)} images, {stats.total} annotations "
               f"({stats.salient} salient, {stats.non_salient} non-salient)")
    _say(args, stats.format_table())
    return EXIT_OK


def cmd_gen(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    n = args.n_scenes if args.n_scenes is not None else cfg.gen.n_scenes
    ds, store = gen_dataset(cfg.scene_config(), n, cfg.anchor_grid(), start=cfg.gen.start)
    dsmod.save_dataset(ds, out / "dataset.json")
    save_features(store, out / "features.bin")
    _snapshot(cfg, out)
    stats = dsmod.dataset_stats(ds)
    _say(args, f"wrote {n} scenes ({stats.total} signs, {stats.salient} salient) to {out}")
    return EXIT_OK


def _load_scenes(args, cfg: RunConfig):
    ds_path = _require(args.dataset or cfg.paths.dataset, "dataset")
    feat_path = _require(args.features or cfg.paths.features, "features")
    ds = dsmod.load_dataset(ds_path)
    return ds, scenes_from(ds, load_features(feat_path))


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    _, scenes = _load_scenes(args, cfg)
    tc = cfg.train_config()
    grid = cfg.anchor_grid()
    result = train(TrainingSet.build(scenes, grid, tc.salience), grid, tc)
    dsmod.atomic_write_text(out / "weights.json", _json_text(
        {"loss_mode": tc.loss_mode.value, **result.model.to_dict()}))
    trace = "epoch,loss,grad_norm\n" + "".join(
        f"{i},{loss!r},{g!r}\n" for i, (loss, g) in enumerate(zip(result.loss_trace, result.grad_norms)))
    dsmod.atomic_write_text(out / "loss_trace.csv", trace)
    _snapshot(cfg, out)
    _say(args, f"trained {tc.loss_mode.value} for {tc.epochs} epochs: "
               f"loss {result.loss_trace[0]:.6f} -> {result.loss_trace[-1]:.6f}")
    return EXIT_OK


def cmd_detect(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    _, scenes = _load_scenes(args, cfg)
    weights_path = _require(args.weights or cfg.paths.weights, "weights")
    raw = dsmod.read_json(weights_path)
    try:
        model = ModelWeights.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{weights_path}: bad weights file ({exc})") from None
    grid = cfg.anchor_grid()
    dets = [d for s in scenes for d in predict(model, s, grid, cfg.eval.max_dets)]
    dsmod.save_detections(dets, out / "detections.json")
    _snapshot(cfg, out)
    _say(args, f"wrote {len(dets)} detections for {len(scenes)} images to {out / 'detections.json'}")
    return EXIT_OK


def _curve_files(curve, out: Path, stem: str) -> None:
    dsmod.atomic_write_text(out / f"{stem}.csv", curve_to_csv(curve))
    dsmod.atomic_write_text(out / f"{stem}.svg", curve_to_svg(curve))


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    ds = dsmod.load_dataset(_require(args.dataset or cfg.paths.dataset, "dataset"))
    dets = dsmod.load_detections(_require(args.detections or cfg.paths.detections, "detections"))
    known = {img.image_id for img in ds.images}
    stray = sorted({d.image_id for d in dets} - known)
    if stray:
        raise ConfigError(f"detections reference unknown image(s) {stray[:3]}")
    curve = pr_sweep(dsmod.group_detections(dets), dsmod.group_annotations(ds), cfg.eval.thresholds,
                     cfg.eval.iou_threshold, cfg.eval.max_dets)
    _curve_files(curve, out, "curve")
    summary = {"auc_all": auc(curve, "all"), "auc_salient": auc(curve, "salient"),
               "mean_margin": curve.mean_margin(), "n_points": len(curve)}
    dsmod.atomic_write_text(out / "metrics.json", _json_text(summary))
    _snapshot(cfg, out)
    _say(args, curve_to_csv(curve).rstrip())
    _say(args, f"salient-recall AUC {summary['auc_salient']:.6f}, all-recall AUC {summary['auc_all']:.6f}")
    return EXIT_OK


def cmd_experiment(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    ex = cfg.experiment
    report = expmod.run_experiment(
        cfg.scene_config(), cfg.anchor_grid(),
        cfg.train_config(ex.baseline_mode), cfg.train_config(ex.treatment_mode),
        ex.n_train, ex.n_test, cfg.eval.thresholds, cfg.eval.max_dets,
    )
    _curve_files(report.curve_fl, out, "curve_baseline")
    _curve_files(report.curve_ssfl, out, "curve_treatment")
    body = report.to_dict()
    body["arms"] = {"baseline": ex.baseline_mode, "treatment": ex.treatment_mode}
    dsmod.atomic_write_text(out / "report.json", _json_text(body))
    _snapshot(cfg, out)
    # always printed, even with --quiet
    print(f"salient-recall AUC delta ({ex.treatment_mode} - {ex.baseline_mode}): {report.auc_delta:.6f}")
    _say(args, f"salient-recall AUC {ex.baseline_mode} {report.auc_salient_fl:.6f}, "
               f"{ex.treatment_mode} {report.auc_salient_ssfl:.6f}; "
               f"mean margin {report.curve_fl.mean_margin():.6f} vs {report.curve_ssfl.mean_margin():.6f}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies default to SUPPRESS so they never clobber flags given
    # before the subcommand name
    def d(value):
        return argparse.SUPPRESS if suppress else value

    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--config", default=d(None), help="YAML run configuration")
    flags.add_argument("--out", default=d("out"), help="output directory (default: ./out)")
    flags.add_argument("--seed", type=int, default=d(None), help="overrides the config seed")
    flags.add_argument("--quiet", action="store_true", default=d(False), help="suppress progress output")
    flags.add_argument("--set", dest="overrides", action="append", default=d([]), metavar="KEY=VALUE",
                       help="override a config value, e.g. --set train.epochs=50 (repeatable)")
    return flags


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="salsign", parents=[_global_flags(False)],
                                     description="Salience-aware sign detection toolkit")
    common = _global_flags(True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="validate an annotation file and print stats")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-synth", parents=[common], help="generate a synthetic dataset + features")
    p.add_argument("--n-scenes", type=int)
    p.set_defaults(func=cmd_gen)

    for name, func, helptext in (("train", cmd_train, "train the linear anchor scorer"),
                                 ("detect", cmd_detect, "score anchors and write detections")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--dataset")
        p.add_argument("--features")
        if name == "detect":
            p.add_argument("--weights")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common], help="threshold-swept PR evaluation")
    p.add_argument("--dataset")
    p.add_argument("--detections")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", parents=[common], help="FL vs SSFL comparison on synthetic data")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        return args.func(args, cfg)
    except DivergedLoss as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (RecordError, ConfigError, EmptyDenominator, NoPositives) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ParseError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
