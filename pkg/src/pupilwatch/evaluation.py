"""Binary detection metrics and the same-task / cross-task evaluation grid.

MCC is the headline score because the windowed datasets are 2:1 imbalanced
toward the negative class; an all-negative classifier scores accuracy 2/3 but
MCC 0.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .signal_model import TaskKind

THRESHOLD = 0.5
VARIANTS = ("ALL", "DPT", "MA", "PVT", "VWM")
TASK_ORDER = tuple(t.value for t in TaskKind)

# Published (TNR, TPR) grids on the original 57-participant cohort, kept for
# side-by-side printing only. Rows are model variants, columns tested tasks.
REFERENCE_CELLS = {
    "all3": {
        "ALL": {"DPT": (0.94, 0.73), "MA": (0.90, 0.53), "PVT": (0.90, 0.55), "VWM": (0.89, 0.37)},
        "DPT": {"DPT": (0.95, 0.84), "MA": (0.87, 0.47), "PVT": (0.83, 0.03), "VWM": (0.83, 0.33)},
        "MA": {"DPT": (0.94, 0.17), "MA": (0.86, 0.62), "PVT": (0.84, 0.04), "VWM": (0.91, 0.12)},
        "PVT": {"DPT": (0.87, 0.04), "MA": (0.94, 0.03), "PVT": (0.95, 0.63), "VWM": (0.93, 0.09)},
        "VWM": {"DPT": (0.75, 0.50), "MA": (0.73, 0.38), "PVT": (0.69, 0.37), "VWM": (0.80, 0.67)},
    },
    "pd_only": {
        "ALL": {"DPT": (0.94, 0.65), "MA": (0.88, 0.41), "PVT": (0.87, 0.30), "VWM": (0.86, 0.36)},
        "DPT": {"DPT": (0.93, 0.72), "MA": (0.86, 0.44), "PVT": (0.82, 0.10), "VWM": (0.79, 0.37)},
        "MA": {"DPT": (0.95, 0.44), "MA": (0.88, 0.55), "PVT": (0.82, 0.07), "VWM": (0.85, 0.33)},
        "PVT": {"DPT": (0.90, 0.09), "MA": (0.84, 0.12), "PVT": (0.89, 0.51), "VWM": (0.89, 0.14)},
        "VWM": {"DPT": (0.90, 0.26), "MA": (0.80, 0.41), "PVT": (0.87, 0.17), "VWM": (0.88, 0.46)},
    },
}
REFERENCE_ONLINE_MCC = {"ALL": 0.50, "DPT": 0.75, "MA": 0.44, "PVT": 0.58, "VWM": 0.41}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self):
        """Counts after relabelling 0 <-> 1 in both truth and prediction."""
        return ConfusionCounts(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)


def confusion(labels, probabilities, threshold=THRESHOLD):
    """Confusion counts, predicting 1 iff ``p >= threshold`` (ties go to the positive class)."""
    y = np.asarray(labels).astype(int).reshape(-1)
    p = np.asarray(probabilities, dtype=float).reshape(-1)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.size} labels vs {p.size} probabilities")
    if y.size == 0:
        raise ValueError("need at least one sample")
    pred = p >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def mcc_is_degenerate(c):
    return 0 in (c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn)


def mcc(c):
    """Matthews correlation coefficient; 0 when any marginal is empty."""
    if mcc_is_degenerate(c):
        return 0.0
    num = c.tp * c.tn - c.fp * c.fn
    # integer product is exact; one rounding in the square root
    den = math.sqrt((c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn))
    return num / den


def tnr(c):
    d = c.tn + c.fp
    return c.tn / d if d else 0.0


def tpr(c):
    d = c.tp + c.fn
    return c.tp / d if d else 0.0


def accuracy(c):
    return (c.tp + c.tn) / c.total


def f1(c):
    d = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / d if d else 0.0


def auc(labels, scores):
    """Area under the ROC curve via the Mann-Whitney U statistic, ties averaged.

    Returns NaN when only one class is present.
    """
    y = np.asarray(labels).astype(int).reshape(-1)
    s = np.asarray(scores, dtype=float).reshape(-1)
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts
    accuracy: float
    f1: float
    auc: float
    mcc: float
    tnr: float
    tpr: float
    flags: tuple = ()

    def as_row(self):
        c = self.counts
        return {
            "n": c.total, "tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn,
            "accuracy": self.accuracy, "f1": self.f1, "auc": self.auc, "mcc": self.mcc,
            "tnr": self.tnr, "tpr": self.tpr, "flags": ";".join(self.flags),
        }


def report_from_counts(c, auc_value=float("nan")):
    flags = []
    if mcc_is_degenerate(c):
        flags.append("mcc_degenerate")
    if c.tn + c.fp == 0:
        flags.append("tnr_undefined")
    if c.tp + c.fn == 0:
        flags.append("tpr_undefined")
    if math.isnan(auc_value):
        flags.append("auc_undefined")
    return MetricsReport(c, accuracy(c), f1(c), auc_value, mcc(c), tnr(c), tpr(c), tuple(flags))


def metrics_suite(labels, probabilities, threshold=THRESHOLD):
    c = confusion(labels, probabilities, threshold)
    return report_from_counts(c, auc(labels, probabilities))


def guess_baselines(labels):
    """TNR/TPR of two chance classifiers on `labels`.

    ``uniform`` flips a fair coin (0.5 / 0.5 in expectation). ``prior``
    guesses each class at its base rate; on a 2:1 set that is TNR 2/3 and TPR
    1/3 in expectation, the figures usually quoted as the guessing baseline.
    """
    y = np.asarray(labels).astype(int)
    frac_pos = float(np.mean(y == 1)) if y.size else 0.0
    return {"uniform": (0.5, 0.5), "prior": (1.0 - frac_pos, frac_pos)}


def _as_predictor(model):
    if callable(model):
        return model
    from .nn.model import predict_proba

    return lambda x: predict_proba(model, x)


@dataclass
class CrossTaskMatrix:
    """Grid of metric reports, keyed by (model variant, tested dataset).

    Tested datasets are the four tasks plus ``"POOLED"`` for the All-task
    model on the union of all task test sets.
    """

    cells: dict = field(default_factory=dict)
    channel_mode: str = "all3"

    def same_task(self, variant, task):
        return variant == "ALL" or variant == task

    def rates(self, variant, task):
        r = self.cells[(variant, task)]
        return r.tnr, r.tpr

    def to_csv(self):
        buf = io.StringIO()
        cols = ["model", "dataset", "same_task", "n", "tp", "tn", "fp", "fn",
                "accuracy", "f1", "auc", "mcc", "tnr", "tpr", "flags"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for (variant, task), rep in self.cells.items():
            row = {"model": variant, "dataset": task,
                   "same_task": int(task != "POOLED" and self.same_task(variant, task))}
            row.update(rep.as_row())
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_text(self, reference=True):
        """Aligned (TNR, TPR) table; same-task cells are starred."""
        variants = [v for v in VARIANTS if any(k[0] == v for k in self.cells)]
        lines = [f"{'model':<8}" + "".join(f"{t:>16}" for t in TASK_ORDER)]
        for v in variants:
            row = f"{v:<8}"
            for t in TASK_ORDER:
                if (v, t) not in self.cells:
                    row += f"{'-':>16}"
                    continue
                a, b = self.rates(v, t)
                mark = "*" if self.same_task(v, t) else " "
                row += f"{mark}({a:.2f},{b:.2f})".rjust(16)
            lines.append(row)
        if ("ALL", "POOLED") in self.cells:
            r = self.cells[("ALL", "POOLED")]
            lines.append(f"ALL on pooled test set: n={r.counts.total} mcc={r.mcc:.3f}")
        ref = REFERENCE_CELLS.get(self.channel_mode)
        if reference and ref:
            lines.append("")
            lines.append("published reference (real cohort, not reproduced here):")
            for v in variants:
                lines.append(f"{v:<8}" + "".join(
                    f"{'(%.2f,%.2f)' % ref[v][t]:>16}" for t in TASK_ORDER))
        return "\n".join(lines)


def cross_task_eval(models, test_sets, channel_mode="all3"):
    """Score every model on every task's held-out windows.

    Parameters
    ----------
    models : dict
        Variant name -> ModelParameters or a callable mapping windows to probabilities.
        Must contain all five variants.
    test_sets : dict
        Task name -> ``(windows, labels)``.

    Returns
    -------
    CrossTaskMatrix
    """
    missing = [v for v in VARIANTS if v not in models]
    if missing:
        raise KeyError(f"missing models: {missing}")
    tasks = [t for t in TASK_ORDER if t in test_sets]
    if len(tasks) != len(TASK_ORDER):
        raise KeyError(f"missing task test sets: {sorted(set(TASK_ORDER) - set(tasks))}")
    out = CrossTaskMatrix(channel_mode=channel_mode)
    pooled_p, pooled_y = [], []
    for v in VARIANTS:
        predict = _as_predictor(models[v])
        for t in tasks:
            x, y = test_sets[t]
            p = predict(x)
            out.cells[(v, t)] = metrics_suite(y, p)
            if v == "ALL":
                pooled_p.append(p)
                pooled_y.append(np.asarray(y))
    out.cells[("ALL", "POOLED")] = metrics_suite(np.concatenate(pooled_y), np.concatenate(pooled_p))
    return out
