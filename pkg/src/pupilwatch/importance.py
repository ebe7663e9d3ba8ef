"""Permutation feature importance measured as the drop in MCC.

Each repetition replaces every value of one channel, across all evaluation
windows, with i.i.d. draws from that channel's pooled empirical distribution.
The marginal distribution survives; the temporal structure and the pairing
with the other channels do not.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .evaluation import confusion, mcc, mcc_is_degenerate
from .nn.model import predict_proba
from .signal_model import CHANNELS


@dataclass(frozen=True)
class ImportanceReport:
    channels: tuple
    importance: np.ndarray  # mean of s_base - s_ij over repetitions, per channel
    std: np.ndarray  # population std over repetitions
    n_repeats: int
    s_base: float
    drops: np.ndarray  # (channels, n_repeats)
    flags: tuple = ()

    def rows(self):
        return [{"channel": c, "mean_importance": float(m), "std": float(s), "n": self.n_repeats,
                 "s_base": self.s_base}
                for c, m, s in zip(self.channels, self.importance, self.std)]


def distort_channel(windows, channel, rng, method="empirical"):
    """Copy of `windows` (n, channels, L) with one channel resampled.

    ``method="empirical"`` draws with replacement from the pooled values of
    that channel; ``"gaussian"`` draws from a normal with the same mean and std.
    """
    x = np.asarray(windows, dtype=float)
    out = x.copy()
    pool = x[:, channel, :].reshape(-1)
    shape = x[:, channel, :].shape
    if method == "empirical":
        out[:, channel, :] = pool[rng.integers(0, pool.size, size=shape)]
    elif method == "gaussian":
        out[:, channel, :] = rng.normal(pool.mean(), pool.std(), size=shape)
    else:
        raise ValueError(f"unknown distortion method {method!r}")
    return out


def _predictor(model):
    if callable(model):
        return model
    return lambda x: predict_proba(model, x)


def repetition_rng(seed, channel, repetition):
    return np.random.default_rng([seed, channel, repetition])


def repetition_score(model, windows, labels, channel, repetition, seed=0, method="empirical"):
    """MCC after one distortion of `channel`, using the stream for (seed, channel, repetition)."""
    rng = repetition_rng(seed, channel, repetition)
    p = _predictor(model)(distort_channel(windows, channel, rng, method))
    return mcc(confusion(labels, p))


def importance_scores(model, windows, labels, n_repeats=100, seed=0, method="empirical"):
    """Mean and spread of the MCC drop per channel over `n_repeats` distortions."""
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    x = np.asarray(windows, dtype=float)
    n_ch = x.shape[1]
    if not callable(model) and model.arch.in_channels != n_ch:
        raise ValueError(f"channel-mode mismatch: model takes {model.arch.in_channels} channel(s), "
                         f"windows have {n_ch}")
    predict = _predictor(model)
    base_counts = confusion(labels, predict(x))
    s_base = mcc(base_counts)
    flags = ("s_base_degenerate",) if mcc_is_degenerate(base_counts) else ()
    drops = np.empty((n_ch, n_repeats))
    for j in range(n_ch):
        for i in range(n_repeats):
            drops[j, i] = s_base - repetition_score(predict, x, labels, j, i, seed, method)
    names = CHANNELS[:n_ch] if n_ch in (1, 3) else tuple(f"ch{j}" for j in range(n_ch))
    return ImportanceReport(names, drops.mean(axis=1), drops.std(axis=1), n_repeats, s_base, drops, flags)


def write_importance_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["channel", "mean_importance", "std", "n", "s_base"],
                           lineterminator="\n")
        w.writeheader()
        for row in report.rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
