"""Online detection on a live 250 Hz stream.

The first 60 s seed per-channel running statistics; afterwards every 25
samples (0.1 s) the most recent 1-s window is standardized with the
statistics as of its last sample and scored by the model. Statistics keep
updating for the whole stream and earlier windows are never re-normalized.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import confusion, mcc
from .nn.model import predict_proba
from .preprocessing import ROLE_OFFSETS, build_windows, fit_zscore
from .signal_model import SAMPLE_RATE_HZ

WINDOW = SAMPLE_RATE_HZ
STRIDE = 25
BASELINE_S = 60.0
LABEL_LAG_S = 0.5


class RunningStats:
    """Per-channel count/mean/M2 (Welford), skipping NaN samples.

    ``std`` is the population standard deviation.
    """

    def __init__(self, n_channels=3):
        self.count = [0] * n_channels
        self.mean = [0.0] * n_channels
        self.m2 = [0.0] * n_channels

    def push(self, values):
        for c, x in enumerate(values):
            if x != x:  # NaN
                continue
            n = self.count[c] + 1
            d = x - self.mean[c]
            self.mean[c] += d / n
            self.m2[c] += d * (x - self.mean[c])
            self.count[c] = n

    def merge_block(self, block):
        """Fold a (channels, k) block in with Chan's pairwise update."""
        block = np.asarray(block, dtype=float)
        for c in range(block.shape[0]):
            v = block[c][~np.isnan(block[c])]
            nb = v.size
            if nb == 0:
                continue
            mb = float(v.mean())
            m2b = float(((v - mb) ** 2).sum())
            na = self.count[c]
            n = na + nb
            d = mb - self.mean[c]
            self.mean[c] += d * nb / n
            self.m2[c] += m2b + d * d * na * nb / n
            self.count[c] = n

    @property
    def std(self):
        return [math.sqrt(m2 / n) if n else 0.0 for m2, n in zip(self.m2, self.count)]

    def snapshot(self):
        return np.array(self.mean), np.array(self.std)


@dataclass(frozen=True)
class DetectedEvent:
    onset_estimate_s: float
    peak_probability: float
    crossing_time_s: float


def _standardize(window, mean, std):
    out = np.empty_like(window)
    for c in range(window.shape[0]):
        out[c] = 0.0 if std[c] == 0 else (window[c] - mean[c]) / std[c]
    return out


@dataclass
class StreamState:
    stats: RunningStats
    ring: np.ndarray  # (3, WINDOW) raw samples, circular
    write_pos: int = 0
    samples_seen: int = 0
    missing_in_ring: int = 0
    t0: float | None = None
    last_t: float | None = None
    trace: list = field(default_factory=list)


class StreamDetector:
    """Feeds samples one at a time and emits ``(time_s, probability)`` every stride.

    Parameters
    ----------
    model : ModelParameters
    baseline_s : float
        Warm-up before the first window may start.
    frozen_stats : (mean, std), optional
        Normalize with these fixed statistics instead of the running ones.
    keep_trace : bool
        Append every emitted prediction to ``state.trace``.
    """

    def __init__(self, model, baseline_s=BASELINE_S, stride=STRIDE, frozen_stats=None, keep_trace=True,
                 fs=SAMPLE_RATE_HZ):
        self.model = model
        self.fs = fs
        self.stride = stride
        self.baseline_samples = int(round(baseline_s * fs))
        self.warmup = self.baseline_samples + WINDOW
        self.frozen = None if frozen_stats is None else (np.asarray(frozen_stats[0], float),
                                                         np.asarray(frozen_stats[1], float))
        self.keep_trace = keep_trace
        self.state = StreamState(RunningStats(3), np.zeros((3, WINDOW)))

    def push_sample(self, t, pd, gx, gy):
        st = self.state
        if st.last_t is not None and t <= st.last_t:
            raise ValueError(f"time regression: {t} after {st.last_t}")
        if st.t0 is None:
            st.t0 = t
        st.last_t = t
        vals = (float(pd), float(gx), float(gy))
        missing = any(v != v for v in vals)
        st.stats.push(vals)
        if st.samples_seen >= WINDOW:
            old = st.ring[:, st.write_pos]
            st.missing_in_ring -= bool(np.isnan(old).any())
        st.ring[:, st.write_pos] = vals
        st.missing_in_ring += missing
        st.write_pos = (st.write_pos + 1) % WINDOW
        st.samples_seen += 1

        if st.samples_seen < self.warmup or (st.samples_seen - self.warmup) % self.stride:
            return None
        if st.missing_in_ring:
            return None
        window = np.roll(st.ring, -st.write_pos, axis=1)
        mean, std = self.frozen if self.frozen is not None else st.stats.snapshot()
        z = _standardize(window, mean, std)[: self.model.arch.in_channels]
        p = float(predict_proba(self.model, z[None])[0])
        t_pred = st.t0 + (st.samples_seen - WINDOW) / self.fs + 1.0
        if self.keep_trace:
            st.trace.append((t_pred, p))
        return t_pred, p


def push_sample(detector, t, pd, gx, gy):
    return detector.push_sample(t, pd, gx, gy)


def stride_starts(n_samples, baseline_samples, stride=STRIDE):
    """Start indices of every window the online detector scores in a recording of n samples."""
    return np.arange(baseline_samples, n_samples - WINDOW + 1, stride)


def running_stats_at(data, ends, stride=STRIDE):
    """Population mean/std of all non-missing samples in ``data[:, :e]`` for each e in `ends`.

    `ends` must be increasing multiples of `stride`. Returns arrays of shape (len(ends), channels).
    """
    rs = RunningStats(data.shape[0])
    means = np.empty((len(ends), data.shape[0]))
    stds = np.empty_like(means)
    pos = 0
    for k, e in enumerate(ends):
        for s in range(pos, e, stride):
            rs.merge_block(data[:, s:min(s + stride, e)])
        pos = e
        means[k], stds[k] = rs.snapshot()
    return means, stds


def replay(model, recording, starts=None, baseline_s=BASELINE_S, frozen_stats=None, stride=STRIDE):
    """Vectorized equivalent of pushing `recording` through a :class:`StreamDetector`.

    Parameters
    ----------
    starts : array_like of int, optional
        Window starts to score (must lie on the stride grid); default every stride.

    Returns
    -------
    starts : ndarray of int
        Scored window starts (incomplete windows dropped).
    probs : ndarray
    """
    data = recording.channels()
    n = data.shape[1]
    bs = int(round(baseline_s * recording.sample_rate_hz))
    grid = stride_starts(n, bs, stride)
    starts = grid if starts is None else np.asarray(starts, dtype=int)
    if np.any((starts - bs) % stride) or np.any(starts < bs) or np.any(starts + WINDOW > n):
        raise ValueError("window starts must be on the stride grid inside the recording")
    isnan = np.isnan(data).any(axis=0)
    bad = np.concatenate([[0], np.cumsum(isnan)])
    complete = (bad[starts + WINDOW] - bad[starts]) == 0
    starts = starts[complete]
    if frozen_stats is not None:
        means = np.broadcast_to(np.asarray(frozen_stats[0], float), (len(starts), 3))
        stds = np.broadcast_to(np.asarray(frozen_stats[1], float), (len(starts), 3))
    else:
        means, stds = running_stats_at(data, starts + WINDOW, stride)
    idx = starts[:, None] + np.arange(WINDOW)[None, :]
    win = data[:, idx].transpose(1, 0, 2)  # (k, 3, WINDOW)
    safe = np.where(stds == 0, 1.0, stds)
    z = (win - means[:, :, None]) / safe[:, :, None]
    z = np.where((stds == 0)[:, :, None], 0.0, z)
    z = z[:, : model.arch.in_channels]
    probs = predict_proba(model, z) if len(starts) else np.empty(0)
    return starts, probs


def trace_times(recording, starts):
    return starts / recording.sample_rate_hz + 1.0


def snap_to_stride(start, baseline_samples, stride=STRIDE):
    k = math.floor((start - baseline_samples) / stride + 0.5)
    return baseline_samples + k * stride


def canonical_windows(recording, baseline_s=BASELINE_S, stride=STRIDE):
    """Stride-grid window starts nearest each stimulus's pre/onset/post windows, with labels.

    Windows that would start before the baseline ends or run past the recording are skipped.
    """
    bs = int(round(baseline_s * recording.sample_rate_hz))
    n = recording.n_samples
    starts, labels = [], []
    for i in recording.stimulus_indices():
        for role, off in ROLE_OFFSETS.items():
            s = snap_to_stride(int(i) + off, bs, stride)
            if s < bs or s + WINDOW > n:
                continue
            starts.append(s)
            labels.append(int(role == "onset"))
    return np.array(starts, dtype=int), np.array(labels, dtype=int)


def extract_events(trace, threshold=0.5, refractory_s=1.0):
    """Group threshold crossings of a probability trace into detected events.

    An event starts at a rising edge (previous value below `threshold`, current
    at or above). A new rising edge less than `refractory_s` after the trace
    last fell below threshold is folded into the ongoing event.
    """
    events = []
    cur = None  # [crossing_time, peak, fell_time]
    prev_above = False
    for t, p in trace:
        above = p >= threshold
        if above and not prev_above:
            if cur is not None and cur[2] is not None and t - cur[2] < refractory_s:
                cur[2] = None
            else:
                if cur is not None:
                    events.append(cur)
                cur = [t, p, None]
        if above and cur is not None:
            cur[1] = max(cur[1], p)
        if not above and prev_above and cur is not None:
            cur[2] = t
        prev_above = above
    if cur is not None:
        events.append(cur)
    return [DetectedEvent(c - LABEL_LAG_S, pk, c) for c, pk, _ in events]


@dataclass
class StreamingResult:
    model: str
    online_mcc: float
    offline_mcc: float
    n_online: int
    n_offline: int

    @property
    def delta(self):
        return self.online_mcc - self.offline_mcc


def streaming_eval(models, recordings, baseline_s=BASELINE_S, frozen=False):
    """Online MCC per model on canonical-offset strides, and the offline MCC on the same recordings.

    Parameters
    ----------
    models : dict
        Name -> ModelParameters.
    recordings : sequence of Recording
        Test recordings with ground-truth stimulus times.
    frozen : bool
        Normalize online windows with full-recording statistics instead of running ones.
    """
    recordings = list(recordings)
    offline = build_windows(recordings)
    out = {}
    for name, model in models.items():
        if model.arch.in_channels not in (1, 3):
            raise ValueError(f"model {name} has unsupported channel count {model.arch.in_channels}")
        ys, ps = [], []
        for r in recordings:
            starts, labels = canonical_windows(r, baseline_s)
            if not len(starts):
                continue
            stats = None
            if frozen:
                zs = fit_zscore(r)
                stats = ([p.mean for p in zs], [p.std for p in zs])
            got, probs = replay(model, r, np.unique(starts), baseline_s, stats)
            prob_at = dict(zip(got.tolist(), probs.tolist()))
            for s, y in zip(starts.tolist(), labels.tolist()):
                if s in prob_at:
                    ys.append(y)
                    ps.append(prob_at[s])
        x_off = offline.x[:, : model.arch.in_channels]
        off = mcc(confusion(offline.y, predict_proba(model, x_off)))
        on = mcc(confusion(ys, ps)) if ys else float("nan")
        out[name] = StreamingResult(name, on, off, len(ys), len(offline))
    return out


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "probability"])
        for t, p in trace:
            w.writerow([f"{t:.3f}", repr(float(p))])


def write_events_csv(events, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["onset_estimate_s", "crossing_time_s", "peak_probability"])
        for e in events:
            w.writerow([f"{e.onset_estimate_s:.3f}", f"{e.crossing_time_s:.3f}", repr(float(e.peak_probability))])
