import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pupilwatch.evaluation import (REFERENCE_CELLS, TASK_ORDER, VARIANTS, ConfusionCounts, accuracy, auc,
                                   confusion, cross_task_eval, f1, guess_baselines, mcc, metrics_suite,
                                   tnr, tpr)

counts = st.builds(ConfusionCounts, *(st.integers(0, 10_000) for _ in range(4)))


def pairwise_auc(y, s):
    """O(n^2) oracle: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos = [v for v, lab in zip(s, y) if lab == 1]
    neg = [v for v, lab in zip(s, y) if lab == 0]
    wins = sum(Fraction(1) if p > q else Fraction(1, 2) if p == q else Fraction(0) for p in pos for q in neg)
    return float(wins / (len(pos) * len(neg)))


def test_confusion_examples():
    assert confusion([1, 0], [0.9, 0.1]) == ConfusionCounts(1, 1, 0, 0)
    assert confusion([1, 0], [0.1, 0.9]) == ConfusionCounts(0, 0, 1, 1)
    assert confusion([0], [0.5]) == ConfusionCounts(0, 0, 1, 0)  # tie predicts the positive class


def test_confusion_rejects_mismatch():
    with pytest.raises(ValueError):
        confusion([1, 0], [0.5])
    with pytest.raises(ValueError):
        confusion([], [])


def test_mcc_examples():
    assert mcc(ConfusionCounts(tp=2, tn=3, fp=1, fn=1)) == pytest.approx(5 / 12, abs=1e-15)
    assert mcc(ConfusionCounts(5, 7, 0, 0)) == 1.0
    assert mcc(ConfusionCounts(0, 0, 6, 6)) == -1.0
    assert mcc(ConfusionCounts(0, 8, 0, 4)) == 0.0
    assert mcc(ConfusionCounts(4, 0, 8, 0)) == 0.0


def test_f1_example():
    assert f1(ConfusionCounts(tp=2, tn=0, fp=1, fn=1)) == pytest.approx(2 / 3, abs=1e-15)


def test_suite_examples():
    r = metrics_suite([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1])
    assert r.auc == 1.0 and r.f1 == 1.0 and r.mcc == 1.0
    assert metrics_suite([1, 0], [0.5, 0.5]).auc == 0.5


def test_single_class_auc_flagged():
    r = metrics_suite([1, 1, 1], [0.2, 0.7, 0.9])
    assert math.isnan(r.auc) and "auc_undefined" in r.flags
    assert r.tpr == pytest.approx(2 / 3) and "tnr_undefined" in r.flags


@given(counts)
def test_mcc_bounded_and_symmetric(c):
    m = mcc(c)
    assert -1.0 - 1e-12 <= m <= 1.0 + 1e-12
    assert mcc(c.swapped()) == pytest.approx(m, abs=1e-12)


def test_metric_formulas_against_exact_rationals():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 500, 4))
        c = ConfusionCounts(tp, tn, fp, fn)
        n = tp + tn + fp + fn
        if n == 0:
            continue
        assert accuracy(c) == pytest.approx(float(Fraction(tp + tn, n)), abs=1e-12)
        if tp + fn:
            assert tpr(c) == pytest.approx(float(Fraction(tp, tp + fn)), abs=1e-12)
        if tn + fp:
            assert tnr(c) == pytest.approx(float(Fraction(tn, tn + fp)), abs=1e-12)
        if 2 * tp + fp + fn:
            assert f1(c) == pytest.approx(float(Fraction(2 * tp, 2 * tp + fp + fn)), abs=1e-12)
        den_sq = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        if den_sq:
            num = tp * tn - fp * fn
            expected = math.copysign(math.sqrt(float(Fraction(num * num, den_sq))), num)
            assert mcc(c) == pytest.approx(expected, abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 6)), min_size=2, max_size=40))
def test_auc_matches_pairwise_oracle(pairs):
    y = [p[0] for p in pairs]
    s = [p[1] / 6 for p in pairs]  # coarse scores force ties
    if len(set(y)) < 2:
        assert math.isnan(auc(y, s))
    else:
        assert auc(y, s) == pytest.approx(pairwise_auc(y, s), abs=1e-12)


def _task_sets(n=1200, seed=0):
    rng = np.random.default_rng(seed)
    out = {}
    for t in TASK_ORDER:
        y = np.tile([0, 1, 0], n // 3)
        out[t] = (rng.standard_normal((len(y), 3, 250)), y)
    return out


def test_constant_zero_model_cells():
    models = {v: (lambda x: np.zeros(len(x))) for v in VARIANTS}
    m = cross_task_eval(models, _task_sets(300))
    for v in VARIANTS:
        for t in TASK_ORDER:
            assert m.rates(v, t) == (1.0, 0.0)


def test_fair_coin_model_near_half():
    rng = np.random.default_rng(1)
    models = {v: (lambda x: rng.random(len(x))) for v in VARIANTS}
    m = cross_task_eval(models, _task_sets(1500))
    for v in VARIANTS:
        for t in TASK_ORDER:
            a, b = m.rates(v, t)
            assert abs(a - 0.5) <= 0.05 and abs(b - 0.5) <= 0.05


def test_matrix_shape_and_pooled_count():
    models = {v: (lambda x: np.full(len(x), 0.5)) for v in VARIANTS}
    sets = _task_sets(300)
    m = cross_task_eval(models, sets)
    task_cells = [k for k in m.cells if k[1] != "POOLED"]
    assert len(task_cells) == 20
    assert m.cells[("ALL", "POOLED")].counts.total == sum(len(y) for _, y in sets.values())
    assert m.rates("DPT", "MA") == (0.0, 1.0)
    assert len(m.to_csv().strip().splitlines()) == 1 + 21
    text = m.to_text()
    assert "*(0.00,1.00)" in text and "(0.94,0.73)" in text


def test_missing_model_or_task():
    sets = _task_sets(30)
    models = {v: (lambda x: np.zeros(len(x))) for v in VARIANTS}
    with pytest.raises(KeyError):
        cross_task_eval({k: v for k, v in models.items() if k != "MA"}, sets)
    with pytest.raises(KeyError):
        cross_task_eval(models, {k: v for k, v in sets.items() if k != "VWM"})


def test_guess_baselines_on_two_to_one():
    g = guess_baselines([0, 1, 0] * 10)
    assert g["uniform"] == (0.5, 0.5)
    assert g["prior"] == pytest.approx((2 / 3, 1 / 3))


def test_reference_grid_is_complete():
    for mode in ("all3", "pd_only"):
        assert set(REFERENCE_CELLS[mode]) == set(VARIANTS)
        assert all(set(row) == set(TASK_ORDER) for row in REFERENCE_CELLS[mode].values())
    assert REFERENCE_CELLS["all3"]["ALL"]["DPT"] == (0.94, 0.73)
    assert REFERENCE_CELLS["all3"]["PVT"]["DPT"] == (0.87, 0.04)
