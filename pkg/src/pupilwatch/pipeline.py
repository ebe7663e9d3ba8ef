"""Glue for the five model variants: splits, window sets, training and evaluation."""

import logging
from dataclasses import dataclass

import numpy as np

from .evaluation import TASK_ORDER, VARIANTS, cross_task_eval
from .nn import Architecture, Hyperparams, train
from .preprocessing import build_windows, split_by_participant

log = logging.getLogger(__name__)

VARIANT_TASKS = {"ALL": None, "DPT": ("DPT",), "MA": ("MA",), "PVT": ("PVT",), "VWM": ("VWM",)}
CHANNEL_MODES = {"all3": 3, "pd_only": 1}


@dataclass(frozen=True)
class ExperimentSplit:
    train: tuple
    val: tuple
    test: tuple


def experiment_split(dataset, n_test=10, n_val=5, seed=0):
    """Test participants held out first, then validation participants carved from the rest."""
    outer = split_by_participant(dataset, n_test, seed)
    inner = split_by_participant(sorted(outer.train_participants), n_val, seed + 1)
    return ExperimentSplit(tuple(sorted(inner.train_participants)),
                           tuple(sorted(inner.test_participants)),
                           tuple(sorted(outer.test_participants)))


def select_channels(wset, channel_mode):
    if channel_mode not in CHANNEL_MODES:
        raise ValueError(f"unknown channel mode {channel_mode!r}")
    return wset.pd_only() if channel_mode == "pd_only" else wset


def variant_windows(dataset, participants, variant, channel_mode="all3", stimulus_fraction=1.0, seed=0):
    if variant not in VARIANT_TASKS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    idx = dataset.select(participants, VARIANT_TASKS[variant])
    return select_channels(build_windows(dataset, idx, stimulus_fraction, seed), channel_mode)


def cap_windows(wset, n, seed=0):
    """Seeded subset of at most `n` windows, original order preserved."""
    if n is None or len(wset) <= n:
        return wset
    keep = np.sort(np.random.default_rng(seed).permutation(len(wset))[:n])
    return wset.subset(keep)


def train_variant(dataset, split, variant, channel_mode="all3", hyper=None, seed=0,
                  stimulus_fraction=1.0, max_val_windows=None, arch=None, progress=None):
    """Train one variant on the split's training participants; returns (model, report)."""
    tr = variant_windows(dataset, split.train, variant, channel_mode, stimulus_fraction, seed)
    if len(tr) == 0:
        raise ValueError(f"variant {variant} has no training windows")
    va = cap_windows(variant_windows(dataset, split.val, variant, channel_mode, stimulus_fraction, seed),
                     max_val_windows, seed)
    arch = arch or Architecture(in_channels=CHANNEL_MODES[channel_mode])
    log.info("training %s/%s on %d windows (%d validation)", variant, channel_mode, len(tr), len(va))
    return train(tr, va, arch=arch, hyper=hyper or Hyperparams(), seed=seed, progress=progress)


def task_test_sets(dataset, participants, channel_mode="all3"):
    """Held-out windows per task, as ``{task: WindowSet}``."""
    return {t: variant_windows(dataset, participants, t, channel_mode) for t in TASK_ORDER}


def evaluate_variants(models, test_sets, channel_mode="all3"):
    return cross_task_eval(models, {t: (w.x, w.y) for t, w in test_sets.items()}, channel_mode)
