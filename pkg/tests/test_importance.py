import csv

import numpy as np
import pytest

from pupilwatch.importance import distort_channel, importance_scores, repetition_score, write_importance_csv
from pupilwatch.nn import Architecture, Hyperparams, init_params, train

from test_nn import toy_windows

SMALL = Architecture(filters=(8, 8), kernels=(5, 3), dropout=(0.0, 0.0), hidden=8)


@pytest.fixture(scope="module")
def pd_model():
    model, _ = train(toy_windows(400, 0), toy_windows(200, 1), arch=SMALL,
                     hyper=Hyperparams(epochs=6, patience=6, batch_size=32), seed=0)
    return model


@pytest.mark.parametrize("method", ["empirical", "gaussian"])
def test_distortion_preserves_marginals_and_isolation(method):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 3, 250)) * [[[1.0], [3.0], [0.5]]] + [[[2.0], [-1.0], [0.0]]]
    out = distort_channel(x, 1, np.random.default_rng(1), method)
    assert out[:, 0].tobytes() == x[:, 0].tobytes()
    assert out[:, 2].tobytes() == x[:, 2].tobytes()
    n = x[:, 1].size
    se_mean = x[:, 1].std() / np.sqrt(n)
    se_std = x[:, 1].std() / np.sqrt(2 * n)
    assert abs(out[:, 1].mean() - x[:, 1].mean()) < 3 * se_mean
    assert abs(out[:, 1].std() - x[:, 1].std()) < 3 * se_std
    assert not np.array_equal(out[:, 1], x[:, 1])


def test_constant_channel_unchanged():
    x = np.random.default_rng(0).standard_normal((10, 3, 250))
    x[:, 2] = 1.5
    assert np.array_equal(distort_channel(x, 2, np.random.default_rng(0)), x)


def test_unknown_method():
    with pytest.raises(ValueError):
        distort_channel(np.zeros((1, 3, 250)), 0, np.random.default_rng(0), "shuffle")


def test_pd_carries_the_signal(pd_model):
    x, y = toy_windows(300, 2)
    rep = importance_scores(pd_model, x, y, n_repeats=20, seed=0)
    assert rep.channels == ("PD", "GazeX", "GazeY")
    assert rep.importance[0] > rep.importance[1] + rep.importance[2]
    assert rep.drops.shape == (3, 20)


def test_structurally_ignored_channel_has_zero_importance(pd_model):
    model = pd_model.copy()
    model.params["conv1.W"][:, 2, :] = 0.0
    x, y = toy_windows(200, 3)
    rep = importance_scores(model, x, y, n_repeats=100, seed=1)
    assert abs(rep.importance[2]) <= 0.02
    assert rep.importance[2] == 0.0 and rep.std[2] == 0.0


def test_mean_over_repetitions(pd_model):
    x, y = toy_windows(120, 4)
    rep = importance_scores(pd_model, x, y, n_repeats=100, seed=9)
    singles = [[rep.s_base - repetition_score(pd_model, x, y, j, i, seed=9) for i in range(100)] for j in range(3)]
    np.testing.assert_allclose(rep.importance, np.mean(singles, axis=1), atol=1e-15)
    one = importance_scores(pd_model, x, y, n_repeats=1, seed=9)
    np.testing.assert_array_equal(one.drops[:, 0], rep.drops[:, 0])


def test_channel_mode_mismatch(pd_model):
    x, y = toy_windows(10, 0)
    with pytest.raises(ValueError, match="channel-mode mismatch"):
        importance_scores(pd_model, x[:, :1], y, n_repeats=1)


def test_degenerate_baseline_flagged():
    x, y = toy_windows(30, 0)
    rep = importance_scores(init_params(SMALL, zero=True), x, y, n_repeats=2)
    assert rep.flags == ("s_base_degenerate",)
    assert rep.s_base == 0.0


def test_pd_only_report_and_csv(tmp_path):
    arch = Architecture(in_channels=1, filters=(4,), kernels=(3,), dropout=(0.0,), hidden=4)
    x, y = toy_windows(40, 0)
    rep = importance_scores(init_params(arch, seed=1), x[:, :1], y, n_repeats=3)
    write_importance_csv(rep, tmp_path / "imp.csv")
    rows = list(csv.DictReader(open(tmp_path / "imp.csv")))
    assert [r["channel"] for r in rows] == ["PD"]
    assert rows[0]["n"] == "3"
