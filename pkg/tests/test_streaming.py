import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pupilwatch.nn import Architecture, init_params, predict_proba
from pupilwatch.preprocessing import fit_zscore, generate_labeled_samples, normalize
from pupilwatch.streaming import (RunningStats, StreamDetector, canonical_windows, extract_events, replay,
                                  running_stats_at, snap_to_stride, streaming_eval, trace_times)
from pupilwatch.synth import generate_cohort

from conftest import make_recording

SMALL = Architecture(filters=(4, 4), kernels=(5, 3), dropout=(0.0, 0.0), hidden=8)


@pytest.fixture(scope="module")
def model():
    return init_params(SMALL, seed=4)


def feed(det, rec):
    data = rec.channels()
    out = []
    for i in range(rec.n_samples):
        r = det.push_sample(i / 250.0, *data[:, i])
        if r is not None:
            out.append(r)
    return out


@given(arrays(np.float64, st.integers(1, 300), elements=st.floats(-1e4, 1e4)), st.integers(1, 40))
def test_running_stats_match_batch(values, block):
    values = values.copy()
    values[::7] = np.nan
    rs = RunningStats(1)
    for v in values:
        rs.push([v])
    valid = values[~np.isnan(values)]
    if valid.size == 0:
        assert rs.count == [0] and rs.std == [0.0]
        return
    scale = max(1.0, np.abs(valid).max())
    assert rs.mean[0] == pytest.approx(valid.mean(), abs=1e-9 * scale)
    assert rs.std[0] == pytest.approx(valid.std(), abs=1e-9 * scale)
    merged = RunningStats(1)
    for s in range(0, values.size, block):
        merged.merge_block(values[None, s:s + block])
    assert merged.count == rs.count
    assert merged.mean[0] == pytest.approx(rs.mean[0], abs=1e-9 * scale)
    assert merged.std[0] == pytest.approx(rs.std[0], abs=1e-9 * scale)


def test_running_stats_at_prefixes():
    data = np.random.default_rng(0).standard_normal((3, 1000)) * 5 + 2
    data[1, 100:130] = np.nan
    ends = np.arange(250, 1001, 25)
    means, stds = running_stats_at(data, ends)
    for k, e in enumerate(ends):
        np.testing.assert_allclose(means[k], np.nanmean(data[:, :e], axis=1), atol=1e-12)
        np.testing.assert_allclose(stds[k], np.nanstd(data[:, :e], axis=1), atol=1e-12)


def test_warmup_cadence_and_first_timestamp(model):
    rec = make_recording(n=250 * 70)
    det = StreamDetector(model)
    out = feed(det, rec)
    times = np.array([t for t, _ in out])
    assert times[0] == pytest.approx(61.0, abs=1e-9)
    np.testing.assert_allclose(np.diff(times), 0.1, atol=1e-9)
    assert len(out) == (250 * 70 - 250 * 61) // 25 + 1
    assert det.state.trace == out


def test_nothing_during_baseline(model):
    det = StreamDetector(model)
    assert feed(det, make_recording(n=250 * 61 - 1)) == []


def test_missing_sample_suppresses_overlapping_strides(model):
    n = 250 * 8
    pd = 4.0 + 0.1 * np.random.default_rng(0).standard_normal(n)
    pd[1100] = np.nan
    det = StreamDetector(model, baseline_s=2.0)
    times = [round(t, 3) for t, _ in feed(det, make_recording(n=n, pd=pd))]
    # windows [s, s + 250) that contain sample 1100 are skipped: starts 875 ... 1100
    skipped = [round(s / 250 + 1.0, 3) for s in range(875, 1101, 25)]
    assert not set(skipped) & set(times)
    assert round(1125 / 250 + 1.0, 3) in times
    assert round(850 / 250 + 1.0, 3) in times


def test_time_regression_rejected(model):
    det = StreamDetector(model)
    det.push_sample(0.0, 4.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="time regression"):
        det.push_sample(0.0, 4.0, 0.0, 0.0)


def test_push_and_replay_agree(model):
    pd = 4.0 + 0.2 * np.sin(np.arange(3000) / 40.0)
    pd[700:720] = np.nan
    rec = make_recording(n=3000, pd=pd, seed=3)
    det = StreamDetector(model, baseline_s=2.0)
    online = feed(det, rec)
    starts, probs = replay(model, rec, baseline_s=2.0)
    np.testing.assert_allclose(trace_times(rec, starts), [t for t, _ in online], atol=1e-9)
    np.testing.assert_allclose(probs, [p for _, p in online], atol=1e-9, rtol=0)


def test_frozen_stats_reproduce_offline_predictions(model):
    # stimuli on the 0.1 s grid make the canonical windows the offline ones exactly
    rec = make_recording(n=250 * 90, stim_times=[62.0, 66.3, 71.7, 80.0, 85.5], seed=5)
    zs = fit_zscore(rec)
    starts, labels = canonical_windows(rec, baseline_s=60.0)
    offline = generate_labeled_samples(normalize(rec))
    assert list(starts) == [w.source.start for w in offline]
    assert list(labels) == [w.label for w in offline]
    got, p_online = replay(model, rec, starts, 60.0, ([z.mean for z in zs], [z.std for z in zs]))
    p_offline = predict_proba(model, np.stack([w.values for w in offline]))
    np.testing.assert_allclose(p_online, p_offline, atol=1e-9, rtol=0)


def test_snap_to_stride():
    assert snap_to_stride(15000 + 130, 15000) == 15125
    assert snap_to_stride(15000 + 112, 15000) == 15100
    assert snap_to_stride(15000 + 113, 15000) == 15125


def test_canonical_windows_labels():
    rec = make_recording(n=250 * 80, stim_times=[30.0, 65.0, 70.0, 79.5])
    starts, labels = canonical_windows(rec)
    # 30 s lies inside the baseline; only the pre window of 79.5 s fits
    assert list(labels) == [0, 1, 0, 0, 1, 0, 0]
    assert all((s - 15000) % 25 == 0 for s in starts)


def test_constant_trace_has_no_events():
    assert extract_events([(60 + k / 10, 0.1) for k in range(100)]) == []


def test_single_pulse_event():
    t = np.round(np.arange(77.0, 80.0, 0.1), 1)
    p = np.where((t >= 78.6) & (t < 79.0), 0.9, 0.2)
    ev = extract_events(list(zip(t, p)))
    assert len(ev) == 1
    assert ev[0].crossing_time_s == pytest.approx(78.6)
    assert ev[0].onset_estimate_s == pytest.approx(78.1)
    assert ev[0].peak_probability == 0.9


def test_close_pulses_merge_and_distant_ones_do_not():
    t = np.round(np.arange(0.0, 10.0, 0.1), 1)
    p = np.where(((t >= 2.0) & (t < 2.3)) | ((t >= 2.7) & (t < 3.0)), 0.8, 0.1)
    assert len(extract_events(list(zip(t, p)))) == 1
    p = np.where(((t >= 2.0) & (t < 2.3)) | ((t >= 5.0) & (t < 5.3)), 0.8, 0.1)
    assert len(extract_events(list(zip(t, p)))) == 2


def test_streaming_eval_deterministic(model):
    c = generate_cohort(1, 1, master_seed=1)
    recs = [c[i] for i in c.select(tasks=["MA", "VWM"])]
    a = streaming_eval({"m": model}, recs)
    b = streaming_eval({"m": model}, recs)
    assert a["m"].online_mcc == b["m"].online_mcc
    assert a["m"].n_online > 0 and a["m"].n_offline > 0
    assert a["m"].delta == a["m"].online_mcc - a["m"].offline_mcc
