"""Command-line entry point: ``icsad simulate | train | detect | eval | grid``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime or training error. Diagnostics go to stderr; stdout carries a
short human-readable summary and every machine-readable result is a file.
"""
import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config import dump_config, load_config
from .data import load_attack_table, load_csv, write_attack_table, write_csv
from .detector import AnomalyInterval, DetectionReport, detect
from .errors import ConfigError, DataError, IcsadError
from .evaluate import (
    StageScores, attack_based_score, ensemble_union, grid_search, record_based_score, roc_auc, write_grid_csv,
)
from .nn import load_model, save_model
from .plant import standard_benchmark
from .workflow import fit_stage_model, score_recording

logger = logging.getLogger("icsad")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _sibling(path, suffix):
    root, _ = os.path.splitext(path)
    return root + suffix


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise DataError(f"output directory {parent} does not exist")


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------ commands

def cmd_simulate(args):
    cfg = _config(args)
    out = args.out
    os.makedirs(out, exist_ok=True)
    bench = standard_benchmark(cfg.seed, plant=cfg.plant)
    write_csv(bench.train, os.path.join(out, "train.csv"))
    write_csv(bench.test, os.path.join(out, "test.csv"))
    write_attack_table(bench.attacks, os.path.join(out, "attacks.txt"))
    dump_config(cfg, os.path.join(out, "resolved_config.json"))
    ineffective = sum(not a.expected_impact_achieved for a in bench.attacks)
    print(f"train.csv: {len(bench.train)} records, {len(bench.train.feature_names)} features")
    print(f"test.csv: {len(bench.test)} records, {int(bench.test.labels.sum())} attack records")
    print(f"attacks.txt: {len(bench.attacks)} attacks ({ineffective} expected to have no impact)")
    return 0


def cmd_train(args):
    cfg = _config(args)
    _ensure_parent(args.out)
    raw = load_csv(args.data, cfg.schema)
    features = cfg.stage_features(args.stage) if args.stage else list(raw.feature_names)
    n_model = len(features) * (2 if cfg.pipeline.augment else 1)
    model_cfg = cfg.model.model_config(cfg.pipeline.sequence_length, n_model, cfg.seed)
    model, history = fit_stage_model(raw, features, cfg.pipeline, model_cfg, cfg.train)
    model.metadata["stage"] = args.stage
    save_model(model, args.out)
    with open(_sibling(args.out, ".history.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_rmse"])
        for i, (tl, vl) in enumerate(zip(history.train_loss, history.val_loss), 1):
            w.writerow([i, repr(tl), repr(vl), repr(float(np.sqrt(vl)))])
    # wall-clock time changes run to run, so it lives apart from the history
    with open(_sibling(args.out, ".timing.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "seconds"])
        for i, sec in enumerate(history.seconds, 1):
            w.writerow([i, f"{sec:.3f}"])
    dump_config(cfg, _sibling(args.out, ".config.json"))
    rmse = model.metadata["val_rmse"]
    print(f"trained {args.stage or 'all features'}: {len(history)} epochs, best epoch {history.best_epoch}, "
          f"validation RMSE {rmse:.5f}" if rmse is not None else "trained for 0 epochs")
    return 0


def cmd_detect(args):
    cfg = _config(args)
    _ensure_parent(args.out)
    model = load_model(args.model)
    raw = load_csv(args.data, cfg.schema)
    scores = score_recording(model, raw)
    intervals = detect(scores.z, cfg.detector, scores.sample_to_record, scores.feature_names)
    report = DetectionReport(
        intervals, {"threshold": cfg.detector.threshold, "window": cfg.detector.window}, raw.timestamps,
        {"model": os.path.basename(args.model), "stage": model.metadata.get("stage"), "records": len(raw)},
    )
    _write_json(report.to_dict(), args.out)
    with open(_sibling(args.out, ".scores.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "timestamp", "max_zscore", "feature"])
        arg = scores.z.argmax(axis=1)
        for rec, z, j in zip(scores.sample_to_record, scores.max_z, arg):
            w.writerow([int(rec), int(raw.timestamps[rec]), repr(float(z)), scores.feature_names[j]])
    dump_config(cfg, _sibling(args.out, ".config.json"))
    print(f"{len(intervals)} anomaly interval(s) over {len(scores.z)} scored records")
    return 0


def _load_report(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
        return d, DetectionReport.from_dict(d)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a detection report ({exc})") from None


def _read_scores(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([int(r["record"]) for r in rows]), np.array([float(r["max_zscore"]) for r in rows])


def cmd_eval(args):
    cfg = _config(args)
    mode = args.mode or cfg.evaluation.mode
    extension = cfg.evaluation.extension if args.extension is None else args.extension
    if extension < 0:
        raise ConfigError(f"--extension must be >= 0, got {extension}")
    _ensure_parent(args.out)
    reports = [_load_report(p) for p in args.reports]
    out = {"mode": mode, "reports": [os.path.basename(p) for p in args.reports]}
    if mode == "attack":
        if not args.attacks:
            raise ConfigError("attack mode needs --attacks")
        attacks = load_attack_table(args.attacks)
        stage_ivs = []
        for d, _ in reports:
            rows = d["intervals"]
            if rows and "start_timestamp" not in rows[0]:
                raise DataError("report intervals lack timestamps")
            stage_ivs.append([AnomalyInterval(r["start_timestamp"], r["end_timestamp"], r.get("peak_zscore", 0.0),
                                              r.get("triggering_feature", "")) for r in rows])
        metrics = attack_based_score(ensemble_union(stage_ivs), attacks, extension,
                                     exclude_ineffective=cfg.evaluation.exclude_ineffective)
        out.update(extension_seconds=extension, exclude_ineffective=cfg.evaluation.exclude_ineffective)
    else:
        if not args.data:
            raise ConfigError("record mode needs --data with a label column")
        raw = load_csv(args.data, cfg.schema)
        if raw.labels is None:
            raise DataError(f"{args.data} has no label column")
        metrics = record_based_score(ensemble_union([r.intervals for _, r in reports]), raw.labels)
        score_paths = [_sibling(p, ".scores.csv") for p in args.reports]
        if all(os.path.exists(p) for p in score_paths):
            combined = np.full(len(raw), -np.inf)
            for p in score_paths:
                rec, z = _read_scores(p)
                combined[rec] = np.maximum(combined[rec], z)
            seen = np.isfinite(combined)
            if raw.labels[seen].any() and not raw.labels[seen].all():
                curve, auc = roc_auc(combined[seen], raw.labels[seen])
                out["auc"] = auc
                with open(_sibling(args.out, ".roc.csv"), "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["fpr", "tpr"])
                    w.writerows([[repr(float(a)), repr(float(b))] for a, b in curve])
    out["metrics"] = metrics.to_dict()
    _write_json(out, args.out)
    dump_config(cfg, _sibling(args.out, ".config.json"))
    print(f"{metrics.mode}: precision {metrics.precision:.4f} recall {metrics.recall:.4f} F1 {metrics.f1:.4f}"
          + (" (precision undefined, reported as 0)" if metrics.degenerate else ""))
    print(f"TP {metrics.true_positives} FP {metrics.false_positives} FN {metrics.false_negatives}")
    if "auc" in out:
        print(f"AUC {out['auc']:.4f}")
    for row in metrics.per_attack:
        lat = "-" if row["latency_seconds"] is None else f"{row['latency_seconds']} s"
        print(f"  attack {row['attack_id']:>3}: {'detected' if row['detected'] else 'missed':8} latency {lat}")
    return 0


def cmd_grid(args):
    cfg = _config(args)
    if not args.model:
        raise ConfigError("grid needs at least one --model")
    if not args.attacks:
        raise ConfigError("grid needs --attacks")
    os.makedirs(args.out, exist_ok=True)
    raw = load_csv(args.data, cfg.schema)
    attacks = load_attack_table(args.attacks)
    runs = []
    for group in args.model:
        run = []
        for path in group.split(","):
            s = score_recording(load_model(path), raw)
            run.append(StageScores(s.z, s.sample_to_record, s.feature_names))
        runs.append(run)
    result = grid_search(runs, attacks, cfg.grid.thresholds, cfg.grid.windows, cfg.evaluation.extension,
                         raw.timestamps, cfg.evaluation.exclude_ineffective, jobs=max(1, args.jobs))
    write_grid_csv(result, os.path.join(args.out, "grid.csv"))
    c = result.chosen
    _write_json({
        "threshold": c.threshold, "window": c.window, "precision": c.precision, "recall": c.recall, "f1": c.f1,
        "runs_averaged": result.runs_averaged, "extension_seconds": cfg.evaluation.extension,
        "tie_break": "highest mean F1, then highest threshold, then highest window",
    }, os.path.join(args.out, "chosen.json"))
    dump_config(replace(cfg, detector=replace(cfg.detector, threshold=c.threshold, window=c.window)),
                os.path.join(args.out, "resolved_config.json"))
    print(f"grid of {len(result.cells)} cells over {result.runs_averaged} run(s)")
    print(f"chosen T={c.threshold} W={c.window}: precision {c.precision:.4f} recall {c.recall:.4f} F1 {c.f1:.4f}")
    return 0


# --------------------------------------------------------------------- main

def build_parser():
    p = _Parser(prog="icsad", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"icsad {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="run config JSON (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("simulate", help="write the benchmark train/test CSVs and attack table")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="train a predictor on attack-free data")
    common(sp)
    sp.add_argument("--data", required=True, help="training CSV")
    sp.add_argument("--out", required=True, help="model file to write")
    sp.add_argument("--stage", help="train on one configured stage's features")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("detect", help="score a recording and report anomaly intervals")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="report JSON to write")
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("eval", help="score detection reports against ground truth")
    common(sp)
    sp.add_argument("reports", nargs="+", help="detection reports; several are unioned")
    sp.add_argument("--attacks", help="attack table (attack mode)")
    sp.add_argument("--data", help="labelled CSV (record mode)")
    sp.add_argument("--mode", choices=("attack", "record"))
    sp.add_argument("--extension", type=int, help="seconds added to each attack end")
    sp.add_argument("--out", required=True, help="evaluation JSON to write")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grid", help="grid-search threshold and window")
    common(sp)
    sp.add_argument("--model", action="append", help="comma-separated stage models of one run; repeat per run")
    sp.add_argument("--data", required=True, help="labelled test CSV")
    sp.add_argument("--attacks", help="attack table")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--jobs", type=int, default=1, help="worker threads")
    sp.set_defaults(func=cmd_grid)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IcsadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
