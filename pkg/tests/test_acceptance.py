"""Acceptance criteria, each at its stated tolerance.

Every test records one or more pass/fail parts; the session summary prints
one line per criterion (see conftest.py). Run just this file with
``pytest tests/test_acceptance.py -v``.
"""
import json
import time
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icsad.cli import main
from icsad.config import load_config
from icsad.data import AttackLabel, RawDataset, make_batches_with_extension, window_samples
from icsad.detector import DetectorConfig, detect
from icsad.evaluate import (
    DEFAULT_THRESHOLDS, DEFAULT_WINDOWS, GridCell, StageScores, attack_based_score, choose_cell, f1, grid_search,
    roc_auc,
)
from icsad.nn import TrainConfig, build_model, block_cnn, train
from icsad.ops import ConvSpec, conv1d_depthwise, dense, maxpool1d
from icsad.plant import PlantConfig, simulate, standard_benchmark
from icsad.workflow import PipelineConfig, fit_stage_model, prepare_training, score_recording

from conftest import record
from gradcheck import layer_grad_error, model_grad_error
from oracles import auc_pairwise, conv_depthwise_naive, detect_naive, matmul_naive, maxpool_naive

ROOT = Path(__file__).resolve().parent.parent
LAYER_KINDS = ["depthwise_conv", "relu", "maxpool", "dropout", "batchnorm", "dense", "flatten",
               "feature_enrich_dense"]


# ---------------------------------------------------------------- 1

def test_criterion_1_gradients():
    started = time.perf_counter()
    per_layer = {k: max(layer_grad_error(k, s) for s in range(100)) for k in LAYER_KINDS}
    model = max(model_grad_error(s) for s in range(100))
    elapsed = time.perf_counter() - started
    worst = max(per_layer.values())
    ok = worst < 1e-6 and model < 1e-5 and elapsed < 60
    record(1, ok, f"100 seeds x {len(LAYER_KINDS)} layer types max rel err {worst:.1e} (< 1e-6), "
                  f"tiny model {model:.1e} (< 1e-5), {elapsed:.1f} s (< 60 s)")
    assert ok


# ---------------------------------------------------------------- 2

def test_criterion_2_oracles():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    counts = dict.fromkeys(["conv1d_depthwise", "dense", "maxpool1d", "auc", "detect"], 0)
    bad = []
    for _ in range(1000):
        t, f, k, s = int(rng.integers(2, 12)), int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 4))
        if t < s:
            t = s
        stride = int(rng.integers(1, 3))
        x, kern, b = rng.normal(size=(t, f)), rng.normal(size=(f, k, s)), rng.normal(size=(f, k))
        if np.abs(conv1d_depthwise(x, ConvSpec(s, k, stride), kern, b) - conv_depthwise_naive(x, kern, b, stride)).max() > 1e-12:
            bad.append("conv1d_depthwise")
        counts["conv1d_depthwise"] += 1

        m, i, o = int(rng.integers(1, 6)), int(rng.integers(1, 8)), int(rng.integers(1, 6))
        x, w, b = rng.normal(size=(m, i)), rng.normal(size=(i, o)), rng.normal(size=o)
        if np.abs(dense(x, w, b) - matmul_naive(x, w, b)).max() > 1e-12:
            bad.append("dense")
        counts["dense"] += 1

        pool = int(rng.integers(1, 4))
        x = rng.integers(0, 5, size=(int(rng.integers(pool, 12)), 3)).astype(float)  # ties on purpose
        pst = int(rng.integers(1, 4))
        out, idx = maxpool1d(x, pool, pst)
        ref, ref_idx = maxpool_naive(x, pool, pst)
        if not (np.array_equal(out, ref) and np.array_equal(idx, ref_idx)):
            bad.append("maxpool1d")
        counts["maxpool1d"] += 1

        n = int(rng.integers(2, 60))
        scores = rng.integers(0, 10, n) / 3.0
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        if abs(roc_auc(scores, labels)[1] - auc_pairwise(scores, labels)) > 1e-12:
            bad.append("auc")
        counts["auc"] += 1

        z = rng.uniform(0, 4, size=int(rng.integers(1, 80)))
        win, thr = int(rng.integers(1, len(z) + 1)), float(rng.uniform(0.5, 3.5))
        got = [(iv.start_index, iv.end_index) for iv in detect(z, DetectorConfig(thr, win))]
        if got != detect_naive(z, thr, win):
            bad.append("detect")
        counts["detect"] += 1
    elapsed = time.perf_counter() - started
    ok = not bad and min(counts.values()) >= 1000 and elapsed < 120
    record(2, ok, f"{min(counts.values())} instances each for {', '.join(counts)}; "
                  f"{len(bad)} mismatches; {elapsed:.1f} s (< 120 s)")
    assert ok


# ---------------------------------------------------------------- 3

_coverage_failures = []


@settings(max_examples=300)
@given(st.integers(2, 3000), st.integers(1, 100), st.integers(1, 64))
def _check_coverage(records, batch_count, n):
    if n >= records or records // batch_count < n:
        return
    ws = window_samples(np.zeros((records, 1)), n, make_batches_with_extension(records, batch_count, n))
    if sorted(ws.target_index.tolist()) != list(range(n, records)):
        _coverage_failures.append((records, batch_count, n))


def test_criterion_3_no_loss():
    _coverage_failures.clear()
    _check_coverage()
    records, bc, n = 20000, 100, 200
    base = records // bc
    naive = [(k * base, records if k == bc - 1 else (k + 1) * base) for k in range(bc)]
    lost = (records - n) - len(set(window_samples(np.zeros((records, 1)), n, naive).target_index.tolist()))
    ext = window_samples(np.zeros((records, 1)), n, make_batches_with_extension(records, bc, n))
    ext_lost = (records - n) - len(set(ext.target_index.tolist()))
    ok = not _coverage_failures and ext_lost == 0 and len(ext) == records - n
    record(3, ok, f"300 random (records, batches, n) cover n..records-1 exactly once "
                  f"({len(_coverage_failures)} failures); 20000 records/100 batches/n=200: "
                  f"unextended loses {lost} targets, extended loses {ext_lost}")
    assert ok


# ---------------------------------------------------------------- 4

def test_criterion_4_convergence():
    bench = standard_benchmark(0)
    features = PlantConfig().stage_groups()["P1"]
    pcfg = PipelineConfig(sequence_length=32)
    train_set, val_set, _ = prepare_training(bench.train, features, pcfg, 100)
    model = build_model(block_cnn(4, 32, 2, sequence_length=32, feature_count=train_set.targets.shape[1], seed=0))
    started = time.perf_counter()
    _, hist = train(model, train_set, val_set, TrainConfig(max_epochs=100, target_val_rmse=0.05))
    elapsed = time.perf_counter() - started
    rmse = [float(np.sqrt(v)) for v in hist.val_loss]
    reached = next((i + 1 for i, r in enumerate(rmse) if r <= 0.05), None)
    ok = reached is not None and reached <= 100 and elapsed < 600
    record(4, ok, f"stage P1, 4-layer depthwise CNN (kernel 2, filters 32/64/128/256): validation RMSE "
                  f"{min(rmse):.4f} (<= 0.05) at epoch {reached} (<= 100) after {elapsed:.0f} s (< 600 s)")
    assert ok


# ---------------------------------------------------------------- 5

SEEDS = range(5)
C5_MODEL = dict(layers=3, base_filters=8, kernel=2)
C5_TRAIN = TrainConfig(max_epochs=25)
C5_PIPELINE = PipelineConfig(sequence_length=32)


def test_criterion_5_detection_quality():
    started = time.perf_counter()
    runs, attacks, timestamps = [], None, None
    for seed in SEEDS:
        bench = standard_benchmark(seed)
        attacks, timestamps = bench.attacks, bench.test.timestamps
        run = []
        for features in bench.config.stage_groups().values():
            mcfg = block_cnn(**C5_MODEL, sequence_length=32, feature_count=2 * len(features), seed=seed)
            model, _ = fit_stage_model(bench.train, features, C5_PIPELINE, mcfg, C5_TRAIN)
            s = score_recording(model, bench.test)
            run.append(StageScores(s.z, s.sample_to_record, s.feature_names))
        runs.append(run)
    result = grid_search(runs, attacks, DEFAULT_THRESHOLDS, DEFAULT_WINDOWS, 300, timestamps,
                         exclude_ineffective=True)
    elapsed = time.perf_counter() - started
    c = result.chosen
    effective = [a for a in attacks if a.expected_impact_achieved]
    ineffective = [a.attack_id for a in attacks if not a.expected_impact_achieved]
    scored_ids = {p["attack_id"] for m in c.per_run for p in m.per_attack}
    missed = sorted({p["attack_id"] for m in c.per_run for p in m.per_attack if not p["detected"]})
    ok = (c.recall >= 0.85 and c.precision >= 0.9 and len(effective) == 18 and len(ineffective) == 2
          and not scored_ids & set(ineffective) and elapsed < 1800)
    record(5, ok, f"{len(SEEDS)} seeds, chosen T={c.threshold} W={c.window}: mean recall {c.recall:.3f} "
                  f"over 18 effective attacks (>= 0.85), mean precision {c.precision:.3f} (>= 0.9); "
                  f"ineffective attacks {ineffective} not required; missed in some run: {missed or 'none'}; "
                  f"{elapsed / 60:.1f} min (< 30 min)")
    assert ok


# ---------------------------------------------------------------- 6

def test_criterion_6_f1_fixture():
    v = f1(1.0, 0.8529)
    ok = abs(v - 0.9206) <= 1e-4
    record(6, ok, f"f1(1, 0.8529) = {v:.4f}")
    assert ok


def test_criterion_6_tie_break():
    cells = [GridCell(2.0, 100, 0.9, 0.9, 0.9, []), GridCell(2.5, 100, 0.9, 0.9, 0.9, []),
             GridCell(3.0, 100, 0.8, 0.8, 0.8, [])]
    ok = choose_cell(cells).threshold == 2.5
    record(6, ok, "F1 tie between T=2.0 and T=2.5 resolves to T=2.5")
    assert ok


@pytest.mark.xfail(strict=True, reason="32 detected of 36 is recall 0.8889, not 0.8529; see the decisions ledger")
def test_criterion_6_thirty_six_attack_fixture():
    attacks = [AttackLabel(i, 1000 * i, 1000 * i + 300) for i in range(1, 37)]
    from icsad.detector import AnomalyInterval
    dets = [AnomalyInterval(a.start + 50, a.start + 200) for a in attacks if a.attack_id not in (4, 13, 14, 29)]
    m = attack_based_score(dets, attacks, 300)
    ok = (m.precision == 1.0 and abs(m.recall - 0.8529) <= 1e-4 and abs(m.f1 - 0.9206) <= 1e-4)
    record(6, ok, f"36 attacks/32 detected/0 FP gives precision {m.precision:.4f}, recall {m.recall:.4f}, "
                  f"F1 {m.f1:.4f} (target 1, 0.8529, 0.9206; 32/36 = 0.8889 so the target is unreachable)")
    assert ok


# ---------------------------------------------------------------- 7

def _swat_csv(data, path, start):
    names = [f" {n}" for n in data.feature_names]
    with open(path, "w") as fh:
        fh.write(" Timestamp," + ",".join(names) + ",Normal/Attack\n")
        for i in range(len(data)):
            ts = start + timedelta(seconds=int(data.timestamps[i]))
            stamp = f" {ts.day:02d}/{ts.month:02d}/{ts.year} {ts.strftime('%I:%M:%S %p').lstrip('0')}"
            label = "Attack" if data.labels is not None and data.labels[i] else "Normal"
            fh.write(stamp + "," + ",".join(repr(float(v)) for v in data.values[i]) + f",{label}\n")


def test_criterion_7_runbook(tmp_path):
    readme = (ROOT / "README.md").read_text()
    runbook_cfg = load_config(ROOT / "configs" / "swat_runbook.json")
    has_runbook = "SWaT" in readme and "swat_runbook.json" in readme
    six_stages = sorted(runbook_cfg.stages) == ["P1", "P2", "P3", "P4", "P5", "P6"]

    # the identical pipeline on SWaT-layout files (datetime stamps, padded headers, Normal/Attack)
    plant = PlantConfig(warmup_seconds=200)
    from icsad.plant import AttackScenario
    train, _ = simulate(plant, 4000)
    test, attacks = simulate(PlantConfig(warmup_seconds=200, seed=1), 3000,
                             [AttackScenario(1, 1500, 1900, "stuck_sensor", "LIT101", 50.0)])
    start = datetime(2015, 12, 28, 10, 0, 0)
    _swat_csv(train, tmp_path / "normal.csv", start)
    _swat_csv(test, tmp_path / "attack.csv", start + timedelta(days=4))
    cfg = {
        "schema": {"timestamp_column": "Timestamp", "label_column": "Normal/Attack"},
        "stages": {"P1": ["FIT101", "LIT101", "MV101", "P101"]},
        "pipeline": {"warmup": 200, "sequence_length": 16},
        "model": {"layers": 2, "base_filters": 4},
        "train": {"max_epochs": 3, "batch_count": 20},
        "detector": {"threshold": 3.0, "window": 50},
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    c = ["--config", str(tmp_path / "cfg.json")]
    codes = [
        main(["train", *c, "--data", str(tmp_path / "normal.csv"), "--stage", "P1", "--out", str(tmp_path / "p1.model")]),
        main(["detect", *c, "--model", str(tmp_path / "p1.model"), "--data", str(tmp_path / "attack.csv"),
              "--out", str(tmp_path / "p1.json")]),
        main(["eval", *c, str(tmp_path / "p1.json"), "--mode", "record", "--data", str(tmp_path / "attack.csv"),
              "--out", str(tmp_path / "eval.json")]),
    ]
    ev = json.loads((tmp_path / "eval.json").read_text())
    ok = has_runbook and six_stages and codes == [0, 0, 0] and "auc" in ev
    record(7, ok, "headline SWaT numbers not reproducible at desk scale; runbook documented in README "
                  f"with a six-stage config ({'present' if has_runbook and six_stages else 'missing'}); "
                  f"SWaT-layout CSVs through train/detect/eval exit codes {codes}, record F1 "
                  f"{ev['metrics']['f1']:.3f}, AUC {ev.get('auc', float('nan')):.3f}")
    assert ok


# ---------------------------------------------------------------- 8

def _run_all(d, cfg):
    c = ["--config", str(cfg), "--seed", "3"]
    sim = d / "sim"
    codes = [main(["simulate", *c, "--out", str(sim)])]
    for st in ("P1", "P2", "P3"):
        codes.append(main(["train", *c, "--data", str(sim / "train.csv"), "--stage", st, "--out", str(d / f"{st}.model")]))
        codes.append(main(["detect", *c, "--model", str(d / f"{st}.model"), "--data", str(sim / "test.csv"),
                           "--out", str(d / f"{st}.json")]))
    reports = [str(d / f"{st}.json") for st in ("P1", "P2", "P3")]
    codes.append(main(["eval", *c, *reports, "--attacks", str(sim / "attacks.txt"), "--out", str(d / "attack_eval.json")]))
    codes.append(main(["eval", *c, *reports, "--mode", "record", "--data", str(sim / "test.csv"),
                       "--out", str(d / "record_eval.json")]))
    models = ",".join(str(d / f"{st}.model") for st in ("P1", "P2", "P3"))
    codes.append(main(["grid", *c, "--model", models, "--model", models, "--data", str(sim / "test.csv"),
                       "--attacks", str(sim / "attacks.txt"), "--out", str(d / "grid"), "--jobs", "2"]))
    files = {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
             if p.is_file() and not p.name.endswith(".timing.csv")}
    return codes, files


def test_criterion_8_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"layers": 2, "base_filters": 2}, "train": {"max_epochs": 2, "batch_count": 20},
                               "pipeline": {"sequence_length": 16}}))
    codes_a, a = _run_all(tmp_path / "a", cfg)
    codes_b, b = _run_all(tmp_path / "b", cfg)
    # paths inside outputs differ only by the run directory
    b = {k: v.replace(str(tmp_path / "b").encode(), str(tmp_path / "a").encode()) for k, v in b.items()}
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = set(codes_a + codes_b) == {0} and a.keys() == b.keys() and not differing
    record(8, ok, f"simulate/train/detect/eval/grid run twice with seed 3: {len(a)} output files, "
                  f"{len(differing)} differ{' (' + ', '.join(differing) + ')' if differing else ''}; "
                  "wall-clock timing sidecars excluded")
    assert ok
