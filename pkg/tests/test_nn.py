import math
import struct

import numpy as np
import pytest
from scipy.signal import correlate

from pupilwatch.errors import FormatError
from pupilwatch.evaluation import confusion, mcc
from pupilwatch.nn import (Architecture, Hyperparams, PredictionPair, backward_gradients, composite_loss,
                           forward, forward_batch, init_params, load_weights, predict_proba, save_weights,
                           train)
from pupilwatch.nn import layers
from pupilwatch.preprocessing import WindowSet, WindowSource

from gradcheck import check_all


def toy_windows(n, seed, shuffle_labels=False):
    """PD mean sign decides the label; gaze is noise."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.standard_normal((n, 3, 250))
    x[:, 0, :] += np.where(y == 1, 0.8, -0.8)[:, None]
    if shuffle_labels:
        y = rng.permutation(y)
    return x, y


def test_conv_matches_direct_correlation():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 40, 3))
    w = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal(4)
    out, _ = layers.conv1d_forward(x, w, b)
    for n in range(2):
        for o in range(4):
            ref = sum(correlate(x[n, :, c], w[o, c], mode="same") for c in range(3)) + b[o]
            np.testing.assert_allclose(out[n, :, o], ref, atol=1e-12)


def test_conv_backward_is_adjoint():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 31, 3))
    w = rng.standard_normal((4, 3, 7))
    out, cols = layers.conv1d_forward(x, w, np.zeros(4))
    g = rng.standard_normal(out.shape)
    dx, dw, db = layers.conv1d_backward(g, cols, x.shape, w)
    # <conv(x), g> is linear in x and in w
    assert np.sum(dx * x) == pytest.approx(np.sum(out * g), rel=1e-12)
    assert np.sum(dw * w) == pytest.approx(np.sum(out * g), rel=1e-12)
    np.testing.assert_allclose(db, g.sum(axis=(0, 1)))


def test_maxpool_floor_and_ties():
    x = np.array([1.0, 3.0, 2.0, 2.0, 5.0])[None, :, None]
    out, idx = layers.maxpool_forward(x, 2)
    np.testing.assert_array_equal(out[0, :, 0], [3.0, 2.0])
    np.testing.assert_array_equal(idx[0, :, 0], [1, 0])
    dx = layers.maxpool_backward(np.ones_like(out), idx, x.shape, 2)
    np.testing.assert_array_equal(dx[0, :, 0], [0, 1, 1, 0, 0])


def test_sigmoid_stable_at_extremes():
    z = np.array([-800.0, 0.0, 800.0])
    np.testing.assert_array_equal(layers.sigmoid(z), [0.0, 0.5, 1.0])


def test_dropout_mask_scaling():
    m = layers.dropout_mask((200_000,), 0.2, np.random.default_rng(0))
    assert set(np.unique(m)) == {0.0, 1.25}
    assert m.mean() == pytest.approx(1.0, abs=0.01)
    assert layers.dropout_mask((3,), 0.0, None) is None


def test_feature_length_trace_and_size():
    arch = Architecture()
    n, trace = 250, []
    for _ in arch.filters:
        n //= 2
        trace.append(n)
    assert trace == [125, 62, 31, 15] and arch.feature_length() == 15
    model = init_params(arch)
    assert model.n_params() < 300_000
    assert init_params(Architecture(in_channels=1)).params["conv1.W"].shape == (16, 1, 7)


def test_zero_network_predicts_half():
    model = init_params(zero=True)
    out = forward(model, np.zeros((3, 250)))
    assert out.p_clf == 0.5
    np.testing.assert_array_equal(out.pd_recon, 0.0)


def test_infer_is_deterministic_and_train_uses_dropout():
    model = init_params(seed=3)
    w = np.random.default_rng(0).standard_normal((3, 250))
    a, b = forward(model, w), forward(model, w)
    assert a.p_clf == b.p_clf and np.array_equal(a.pd_recon, b.pd_recon)
    t1 = forward(model, w, "train", np.random.default_rng(1))
    t2 = forward(model, w, "train", np.random.default_rng(1))
    t3 = forward(model, w, "train", np.random.default_rng(2))
    assert t1.p_clf == t2.p_clf and t1.p_clf != t3.p_clf
    with pytest.raises(ValueError):
        forward(model, w, "train")


def test_forward_rejects_bad_shape():
    model = init_params()
    with pytest.raises(ValueError):
        forward(model, np.zeros((3, 249)))
    with pytest.raises(ValueError):
        forward(model, np.zeros((1, 250)))


def test_composite_loss_values():
    pd_in = np.zeros(250)
    pred = PredictionPair(0.5, np.full(250, 0.5))
    assert composite_loss(pred, 1, pd_in, 0.004) == pytest.approx(math.log(2) + 0.002, abs=1e-15)
    assert composite_loss(pred, 1, pd_in, 0.004) == pytest.approx(0.695147, abs=1e-6)
    assert composite_loss(PredictionPair(1.0, pd_in), 1, pd_in, 0.004) == pytest.approx(0.0, abs=1e-11)
    p = PredictionPair(0.3, np.full(250, 7.0))
    assert composite_loss(p, 0, pd_in, 0.0) == pytest.approx(-math.log(0.7), abs=1e-15)


def test_zero_net_balanced_batch_has_zero_logit_bias_gradient():
    model = init_params(hyper=Hyperparams(alpha=0.0), zero=True)
    x = np.tile(np.random.default_rng(0).standard_normal((1, 3, 250)), (4, 1, 1))
    g = backward_gradients(model, x, [0, 1, 0, 1])
    assert g["clf2.b"][0] == 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_names_sample():
    model = init_params(seed=0)
    x = np.zeros((3, 3, 250))
    x[1, 0, 5] = np.inf
    with pytest.raises(FloatingPointError, match="sample 42"):
        backward_gradients(model, x, [0, 1, 0], sample_ids=[7, 42, 9])


def test_gradients_with_strong_reconstruction_term():
    # alpha = 1 exercises the reconstruction path; a smaller step avoids MAE kinks
    errs = check_all(seed=1, alpha=1.0, h=1e-6, max_elements=150)
    assert max(errs.values()) < 1e-4, errs


def test_predict_proba_batching_and_equal_windows():
    model = init_params(seed=5)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((7, 3, 250))
    x[3] = x[2]
    full = predict_proba(model, x, batch_size=3)
    single = np.array([predict_proba(model, x[i:i + 1])[0] for i in range(7)])
    np.testing.assert_allclose(full, single, atol=1e-12, rtol=0)
    # BLAS may block rows differently, so equal rows agree to rounding, not bitwise
    assert full[2] == pytest.approx(full[3], abs=1e-12)
    p, _, _ = forward_batch(model, x)
    np.testing.assert_allclose(full, p, atol=1e-12, rtol=0)


FAST = Hyperparams(epochs=10, patience=10, batch_size=32)


@pytest.fixture(scope="module")
def toy_model():
    tr, va = toy_windows(600, 0), toy_windows(300, 1)
    return train(tr, va, hyper=FAST, seed=7), tr, va


def test_separable_toy_reaches_perfect_mcc(toy_model):
    (model, report), tr, va = toy_model
    assert report.best_val_mcc == 1.0
    assert 1 <= report.chosen_epoch <= 10
    assert len(report.train_loss) == len(report.val_mcc)
    p = predict_proba(model, va[0])
    assert np.all((p >= 0.5) == (va[1] == 1))


def test_training_is_deterministic_and_order_free(toy_model):
    (model, _), tr, va = toy_model
    again, _ = train(tr, va, hyper=FAST, seed=7)
    perm = np.random.default_rng(0).permutation(len(tr[1]))
    shuffled, _ = train((tr[0][perm], tr[1][perm]), va, hyper=FAST, seed=7)
    for k in model.params:
        assert model.params[k].tobytes() == again.params[k].tobytes()
        assert model.params[k].tobytes() == shuffled.params[k].tobytes()


def test_shuffled_labels_stay_near_zero_mcc():
    tr = toy_windows(600, 2, shuffle_labels=True)
    va = toy_windows(2000, 3, shuffle_labels=True)
    _, report = train(tr, va, hyper=Hyperparams(epochs=4, patience=4, batch_size=32), seed=1)
    assert all(abs(m) <= 0.1 for m in report.val_mcc)


def test_early_stopping_respects_patience():
    tr = toy_windows(200, 4, shuffle_labels=True)
    va = toy_windows(200, 5, shuffle_labels=True)
    _, report = train(tr, va, hyper=Hyperparams(epochs=30, patience=2, batch_size=64), seed=0)
    best = int(np.argmax(report.val_mcc)) + 1
    assert report.chosen_epoch == best
    assert len(report.val_mcc) <= best + 2


def test_train_rejects_empty_and_leaky_sets():
    x, y = toy_windows(10, 0)
    with pytest.raises(ValueError, match="empty"):
        train((x[:0], y[:0]), (x, y))
    src = [WindowSource("P01", "S1", "DPT", i, "pre") for i in range(10)]
    with pytest.raises(ValueError, match="P01"):
        train(WindowSet(x, y, src), WindowSet(x, y, src))


def test_weights_round_trip(tmp_path):
    arch = Architecture(in_channels=1, filters=(4, 4), kernels=(3, 3), dropout=(0.1, 0.2), hidden=8)
    model = init_params(arch, Hyperparams(alpha=0.01, max_windows_per_epoch=512), seed=2)
    save_weights(model, tmp_path / "m.pwnn")
    back = load_weights(tmp_path / "m.pwnn")
    assert back.arch == model.arch and back.hyper == model.hyper
    for k in model.params:
        assert back.params[k].tobytes() == model.params[k].tobytes()
    save_weights(back, tmp_path / "m2.pwnn")
    assert (tmp_path / "m.pwnn").read_bytes() == (tmp_path / "m2.pwnn").read_bytes()


def test_weights_rejections(tmp_path):
    save_weights(init_params(Architecture(in_channels=1)), tmp_path / "pd.pwnn")
    raw = (tmp_path / "pd.pwnn").read_bytes()
    with pytest.raises(FormatError, match="channel-mode mismatch"):
        load_weights(tmp_path / "pd.pwnn", expect_channels=3)
    (tmp_path / "bad.pwnn").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="bad magic"):
        load_weights(tmp_path / "bad.pwnn")
    for cut in (6, 40, len(raw) - 8):
        (tmp_path / "cut.pwnn").write_bytes(raw[:cut])
        with pytest.raises(FormatError, match="truncated"):
            load_weights(tmp_path / "cut.pwnn")
    (tmp_path / "v.pwnn").write_bytes(raw[:4] + struct.pack("<H", 99) + raw[6:])
    with pytest.raises(FormatError, match="version"):
        load_weights(tmp_path / "v.pwnn")


def test_mcc_of_trained_toy_on_fresh_data(toy_model):
    (model, _), _, _ = toy_model
    x, y = toy_windows(300, 11)
    assert mcc(confusion(y, predict_proba(model, x))) > 0.95
