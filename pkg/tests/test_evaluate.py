import numpy as np
import pytest
from hypothesis import given, strategies as st

from icsad.data import AttackLabel
from icsad.detector import AnomalyInterval
from icsad.errors import ConfigError
from icsad.evaluate import (
    DEFAULT_THRESHOLDS, DEFAULT_WINDOWS, GridCell, StageScores, attack_based_score, choose_cell, ensemble_union,
    f1, grid_search, record_based_score, roc_auc,
)

from oracles import auc_pairwise


def iv(a, b):
    return AnomalyInterval(a, b)


def spaced_attacks(count, missed=()):
    attacks = [AttackLabel(i, 1000 * i, 1000 * i + 300) for i in range(1, count + 1)]
    dets = [iv(a.start + 50, a.start + 200) for a in attacks if a.attack_id not in missed]
    return attacks, dets


def test_f1_values():
    assert f1(1.0, 0.8529) == pytest.approx(0.9206, abs=1e-4)
    assert f1(0.4, 0.4) == pytest.approx(0.4)
    assert f1(0.0, 0.7) == 0.0 and f1(0.7, 0.0) == 0.0


@given(st.floats(0, 1), st.floats(0, 1))
def test_f1_symmetric_and_bounded(p, r):
    assert f1(p, r) == pytest.approx(f1(r, p))
    assert f1(p, r) <= 2 * min(p, r) + 1e-12


def test_thirty_six_attack_fixture():
    attacks, dets = spaced_attacks(36, missed=(4, 13, 14, 29))
    m = attack_based_score(dets, attacks, 300)
    assert (m.true_positives, m.false_negatives, m.false_positives) == (32, 4, 0)
    assert m.precision == 1.0
    # 32 of 36 is 0.8889; 0.8529 would need e.g. 29 of 34
    assert m.recall == 32 / 36
    assert m.f1 == pytest.approx(2 * (32 / 36) / (1 + 32 / 36))
    assert [p["attack_id"] for p in m.per_attack if not p["detected"]] == [4, 13, 14, 29]


def test_overlap_and_false_positive():
    attacks = [AttackLabel(1, 120, 200)]
    assert attack_based_score([iv(100, 150)], attacks, 60).true_positives == 1
    m = attack_based_score([iv(900, 950)], [AttackLabel(1, 600, 740)], 60)
    assert (m.true_positives, m.false_positives, m.precision) == (0, 1, 0.0)


def test_extension_catches_late_detection():
    attacks = [AttackLabel(1, 100, 200)]
    assert attack_based_score([iv(450, 500)], attacks, 300).true_positives == 1
    assert attack_based_score([iv(501, 550)], attacks, 300).true_positives == 0


def test_detection_before_attack_does_not_count():
    assert attack_based_score([iv(50, 100)], [AttackLabel(1, 100, 200)], 300).true_positives == 0


def test_latency():
    m = attack_based_score([iv(130, 400)], [AttackLabel(1, 100, 200)], 300)
    assert m.per_attack[0]["latency_seconds"] == 30


def test_exclude_ineffective_is_neutral():
    attacks = [AttackLabel(1, 100, 200), AttackLabel(2, 1000, 1100, expected_impact_achieved=False)]
    dets = [iv(120, 180), iv(1010, 1050)]
    incl = attack_based_score(dets, attacks, 0)
    excl = attack_based_score(dets, attacks, 0, exclude_ineffective=True)
    assert (incl.recall, incl.precision) == (1.0, 1.0)
    assert (excl.recall, excl.precision, excl.false_positives) == (1.0, 1.0, 0)
    assert len(excl.per_attack) == 1
    missed = attack_based_score([iv(120, 180)], attacks, 0, exclude_ineffective=True)
    assert missed.recall == 1.0


def test_attack_scoring_uses_timestamps():
    ts = np.arange(5000, 6000)
    m = attack_based_score([iv(100, 150)], [AttackLabel(1, 5120, 5200)], 0, timestamps=ts)
    assert m.true_positives == 1


def test_empty_attack_table():
    with pytest.raises(ConfigError):
        attack_based_score([], [])


@given(st.integers(0, 10_000))
def test_recall_monotone_in_extension(seed):
    rng = np.random.default_rng(seed)
    attacks = [AttackLabel(i, 500 * i, 500 * i + int(rng.integers(10, 100))) for i in range(1, 8)]
    starts = np.sort(rng.integers(0, 4000, 6))
    dets = [iv(int(s), int(s) + int(rng.integers(1, 80))) for s in starts]
    recalls = [attack_based_score(dets, attacks, e).recall for e in (0, 60, 300, 10**9)]
    assert recalls == sorted(recalls)


def test_record_based_examples():
    labels = np.array([0, 1, 1, 0, 1])
    m = record_based_score([iv(1, 3), iv(4, 5)], labels)
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)
    m = record_based_score([], labels)
    assert m.recall == 0.0 and m.precision == 0.0 and m.degenerate


@given(st.integers(0, 2**32 - 1))
def test_record_based_confusion_oracle(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, 60)
    flags = rng.integers(0, 2, 60)
    dets = [iv(i, i + 1) for i in np.flatnonzero(flags)]
    m = record_based_score(dets, labels)
    tp = sum(1 for f, y in zip(flags, labels) if f and y)
    fp = sum(1 for f, y in zip(flags, labels) if f and not y)
    fn = sum(1 for f, y in zip(flags, labels) if not f and y)
    assert (m.true_positives, m.false_positives, m.false_negatives) == (tp, fp, fn)
    assert m.true_positives + m.false_negatives == labels.sum()
    assert m.true_positives + m.false_positives == flags.sum()


def test_auc_examples():
    _, auc = roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])
    assert auc == 1.0
    rng = np.random.default_rng(0)
    _, auc = roc_auc(rng.normal(size=20000), rng.integers(0, 2, 20000))
    assert abs(auc - 0.5) < 0.05
    with pytest.raises(ConfigError):
        roc_auc([0.1, 0.2], [1, 1])


@given(st.integers(0, 2**32 - 1))
def test_auc_matches_pairwise(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 200))
    # coarse scores force plenty of ties
    scores = rng.integers(0, 8, n) / 4.0
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    curve, auc = roc_auc(scores, labels)
    assert abs(auc - auc_pairwise(scores, labels)) < 1e-12
    assert tuple(curve[0]) == (0.0, 0.0) and tuple(curve[-1]) == (1.0, 1.0)


def test_ensemble_union_examples():
    assert [(i.start_index, i.end_index) for i in ensemble_union([[iv(0, 10), iv(30, 40)]])] == [(0, 10), (30, 40)]
    assert [(i.start_index, i.end_index) for i in ensemble_union([[iv(0, 10)], [iv(5, 20)]])] == [(0, 20)]
    merged = ensemble_union([[iv(50, 60)], [iv(0, 10)], [iv(20, 30)]])
    assert [(i.start_index, i.end_index) for i in merged] == [(0, 10), (20, 30), (50, 60)]


@given(st.integers(0, 10_000))
def test_ensemble_recall_at_least_best_stage(seed):
    rng = np.random.default_rng(seed)
    attacks = [AttackLabel(i, 400 * i, 400 * i + 100) for i in range(1, 9)]
    stages = []
    for _ in range(3):
        starts = np.sort(rng.choice(np.arange(0, 3600, 40), 5, replace=False))
        stages.append([iv(int(s), int(s) + 30) for s in starts])
    best = max(attack_based_score(s, attacks, 50).recall for s in stages)
    assert attack_based_score(ensemble_union(stages), attacks, 50).recall >= best


# ------------------------------------------------------------- grid search

def cell(t, w, f):
    return GridCell(t, w, f, f, f, [])


def test_tie_break_prefers_higher_threshold_then_window():
    assert choose_cell([cell(2.0, 100, 0.8), cell(2.5, 100, 0.8)]).threshold == 2.5
    assert choose_cell([cell(2.5, 50, 0.8), cell(2.5, 300, 0.8), cell(3.0, 50, 0.7)]).window == 300
    only = cell(2.2, 150, 0.1)
    assert choose_cell([only]) is only


def test_default_ranges():
    assert DEFAULT_THRESHOLDS == (1.8, 2.0, 2.2, 2.4, 2.6, 2.8, 3.0)
    assert DEFAULT_WINDOWS == (50, 100, 150, 200, 250, 300)


def _run(seed, attacks, length=4000):
    rng = np.random.default_rng(seed)
    z = rng.uniform(0, 1.5, size=(length, 2))
    for a in attacks:
        z[a.start : a.start + int(rng.integers(40, 250)), 0] = rng.uniform(2.1, 3.5)
    return [StageScores(z, np.arange(length), ["a", "b"])]


def test_grid_search_means_over_runs():
    attacks = [AttackLabel(i, 600 * i, 600 * i + 300) for i in range(1, 6)]
    runs = [_run(s, attacks) for s in range(3)]
    res = grid_search(runs, attacks, [2.0, 3.0], [50, 200])
    assert res.runs_averaged == 3 and len(res.cells) == 4
    for c in res.cells:
        assert len(c.per_run) == 3
        assert c.f1 == pytest.approx(np.mean([m.f1 for m in c.per_run]))
    best = max(c.f1 for c in res.cells)
    assert res.chosen.f1 == best


def test_grid_single_cell_and_jobs_agree():
    attacks = [AttackLabel(1, 600, 900)]
    runs = [_run(0, attacks)]
    one = grid_search(runs, attacks, [2.0], [50])
    assert one.chosen is one.cells[0]
    a = grid_search(runs, attacks, jobs=1)
    b = grid_search(runs, attacks, jobs=4)
    assert [(c.threshold, c.window, c.f1) for c in a.cells] == [(c.threshold, c.window, c.f1) for c in b.cells]


def test_grid_needs_runs():
    with pytest.raises(ConfigError):
        grid_search([], [AttackLabel(1, 0, 1)])
