"""Per-recording z-scoring, labeled window extraction and participant splits."""

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .signal_model import CHANNELS, SAMPLE_RATE_HZ, Recording

WINDOW = SAMPLE_RATE_HZ  # 1 s
ROLES = ("pre", "onset", "post")
# window start relative to the stimulus sample, in samples
ROLE_OFFSETS = {"pre": -125, "onset": 125, "post": 375}


@dataclass(frozen=True)
class ZScoreParams:
    key: tuple  # (participant_id, session_id, task, channel)
    mean: float
    std: float


@dataclass(frozen=True, eq=False)
class NormalizedRecording(Recording):
    degenerate_channels: tuple = ()


def fit_zscore(recording):
    """Mean and population std of each channel over its non-missing samples."""
    out = []
    for name, series in zip(CHANNELS, (recording.pd_mm, recording.gaze_x, recording.gaze_y)):
        valid = series[~np.isnan(series)]
        if valid.size == 0:
            raise ValueError(f"channel {name} of {recording.key} is entirely missing")
        if valid.min() == valid.max():  # exact, so constant channels are always flagged
            out.append(ZScoreParams((*recording.key, name), float(valid[0]), 0.0))
        else:
            out.append(ZScoreParams((*recording.key, name), float(valid.mean()), float(valid.std())))
    return out


def apply_zscore(recording, params):
    """Standardize each channel with its fitted params.

    A channel with zero spread maps to all zeros and is listed in
    ``degenerate_channels``. Missing samples stay missing.
    """
    by_channel = {}
    for p in params:
        if tuple(p.key[:3]) != recording.key:
            raise KeyError(f"z-score params {p.key} do not belong to recording {recording.key}")
        by_channel[p.key[3]] = p
    if set(by_channel) != set(CHANNELS):
        raise KeyError(f"need params for channels {CHANNELS}, got {sorted(by_channel)}")
    data = []
    degenerate = []
    for name, series in zip(CHANNELS, (recording.pd_mm, recording.gaze_x, recording.gaze_y)):
        p = by_channel[name]
        if p.std == 0:
            z = np.where(np.isnan(series), np.nan, 0.0)
            degenerate.append(name)
        else:
            z = (series - p.mean) / p.std
        data.append(z)
    return NormalizedRecording(recording.participant_id, recording.session_id, recording.task,
                               data[0], data[1], data[2], recording.stimulus_times_s,
                               recording.sample_rate_hz, tuple(degenerate))


def normalize(recording):
    return apply_zscore(recording, fit_zscore(recording))


@dataclass(frozen=True)
class WindowSource:
    participant_id: str
    session_id: str
    task: str
    stimulus_index: int
    role: str
    start: int = -1  # sample index of the window start in its recording


@dataclass(frozen=True, eq=False)
class LabeledWindow:
    values: np.ndarray  # (3, 250)
    label: int
    source: WindowSource


def window_starts(stimulus_sample):
    return {role: stimulus_sample + off for role, off in ROLE_OFFSETS.items()}


def generate_labeled_samples(recording):
    """Three 1-s windows per stimulus: before (0), onset 0.5-1.5 s after (1), after (0).

    Windows that run off either end of the recording or contain a missing
    sample are dropped.
    """
    data = recording.channels()
    n = recording.n_samples
    out = []
    for k, i in enumerate(recording.stimulus_indices()):
        for role, start in window_starts(int(i)).items():
            if start < 0 or start + WINDOW > n:
                continue
            seg = data[:, start:start + WINDOW]
            if np.isnan(seg).any():
                continue
            out.append(LabeledWindow(
                seg.copy(), int(role == "onset"),
                WindowSource(recording.participant_id, recording.session_id, recording.task.value,
                             k, role, start)))
    return out


@dataclass
class WindowSet:
    """Stacked windows: ``x`` (n, channels, 250), ``y`` (n,), plus per-window provenance."""

    x: np.ndarray
    y: np.ndarray
    sources: list = field(default_factory=list)

    def __len__(self):
        return self.y.shape[0]

    @classmethod
    def from_windows(cls, windows):
        if not windows:
            return cls(np.empty((0, len(CHANNELS), WINDOW)), np.empty(0, dtype=int), [])
        return cls(np.stack([w.values for w in windows]),
                   np.array([w.label for w in windows], dtype=int),
                   [w.source for w in windows])

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.from_windows([])
        return cls(np.concatenate([s.x for s in sets]), np.concatenate([s.y for s in sets]),
                   [src for s in sets for src in s.sources])

    def pd_only(self):
        return WindowSet(self.x[:, :1, :], self.y, self.sources)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return WindowSet(self.x[idx], self.y[idx], [self.sources[i] for i in idx])

    def where(self, predicate):
        return self.subset([i for i, s in enumerate(self.sources) if predicate(s)])

    def to_windows(self):
        return [LabeledWindow(self.x[i], int(self.y[i]), self.sources[i]) for i in range(len(self))]


def build_windows(dataset, indices=None, stimulus_fraction=1.0, seed=0):
    """Normalize each selected recording of `dataset` on its own and window it.

    ``stimulus_fraction < 1`` keeps a seeded random subset of stimuli per
    recording (all three windows of a kept stimulus stay together).
    """
    indices = range(len(dataset)) if indices is None else indices
    parts = []
    for i in indices:
        wins = generate_labeled_samples(normalize(dataset[i]))
        if stimulus_fraction < 1.0 and wins:
            stims = sorted({w.source.stimulus_index for w in wins})
            rng = np.random.default_rng([seed, i])
            k = max(1, int(round(stimulus_fraction * len(stims))))
            keep = set(rng.choice(stims, size=k, replace=False).tolist())
            wins = [w for w in wins if w.source.stimulus_index in keep]
        parts.append(WindowSet.from_windows(wins))
    return WindowSet.concat(parts)


def window_overlap_fraction(windows):
    """Fraction of windows whose span overlaps a window of another stimulus in the same recording."""
    by_rec = {}
    for w in windows:
        s = w.source
        by_rec.setdefault((s.participant_id, s.session_id, s.task), []).append((s.start, s.stimulus_index))
    n_overlap = 0
    for spans in by_rec.values():
        spans.sort()
        for k, (start, stim) in enumerate(spans):
            hit = False
            for j in (k - 1, k + 1):
                if 0 <= j < len(spans) and spans[j][1] != stim and abs(spans[j][0] - start) < WINDOW:
                    hit = True
            n_overlap += hit
    return n_overlap / len(windows) if windows else 0.0


@dataclass(frozen=True)
class SplitSpec:
    train_participants: frozenset
    test_participants: frozenset


def split_by_participant(participants, n_test=10, seed=0):
    """Seeded participant-level train/test split; sessions and tasks travel with their participant."""
    if hasattr(participants, "participants"):
        participants = participants.participants()
    ids = sorted(set(participants))
    if not 0 <= n_test < len(ids):
        raise ValueError(f"n_test={n_test} must be below the cohort size {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    test = frozenset(ids[k] for k in order[:n_test])
    return SplitSpec(frozenset(ids) - test, test)


# --- window archive --------------------------------------------------------

ARCHIVE_MAGIC = b"PWIN"
ARCHIVE_VERSION = 1


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def write_window_archive(windows, path):
    """Binary archive: magic, u16 version, u64 count, then per window
    u8 label, u8 role, three u16-length-prefixed id strings, u32 stimulus
    index, i64 window start sample and 750 little-endian float64 values
    (channel-major)."""
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC + struct.pack("<HQ", ARCHIVE_VERSION, len(windows)))
        for w in windows:
            v = np.asarray(w.values, dtype="<f8")
            if v.shape != (len(CHANNELS), WINDOW):
                raise ValueError(f"window has shape {v.shape}, expected (3, {WINDOW})")
            s = w.source
            fh.write(struct.pack("<BB", w.label, ROLES.index(s.role)))
            fh.write(_pack_str(s.participant_id) + _pack_str(s.session_id) + _pack_str(s.task))
            fh.write(struct.pack("<Iq", s.stimulus_index, s.start))
            fh.write(v.tobytes())


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("truncated window archive")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def read_window_archive(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != ARCHIVE_MAGIC:
        raise FormatError("bad magic")
    rd = _Reader(buf)
    rd.take(4)
    version, count = rd.unpack("<HQ")
    if version != ARCHIVE_VERSION:
        raise FormatError(f"unsupported window archive version {version}")
    out = []
    nvals = len(CHANNELS) * WINDOW
    for _ in range(count):
        label, role = rd.unpack("<BB")
        if role >= len(ROLES):
            raise FormatError(f"bad window role code {role}")
        pid, sid, task = rd.string(), rd.string(), rd.string()
        stim, start = rd.unpack("<Iq")
        vals = np.frombuffer(rd.take(8 * nvals), dtype="<f8").astype(np.float64).reshape(len(CHANNELS), WINDOW)
        out.append(LabeledWindow(vals, label, WindowSource(pid, sid, task, stim, ROLES[role], start)))
    if rd.pos != len(buf):
        raise FormatError("trailing bytes after window archive")
    return out


def write_windows_csv(windows, path):
    """Flat CSV for eyeballing: ids, label, then pd_0..pd_249, gx_0.., gy_0.."""
    names = [f"{c}_{k}" for c in ("pd", "gx", "gy") for k in range(WINDOW)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", "session_id", "task", "stimulus_index", "role", "label", *names])
        for win in windows:
            s = win.source
            w.writerow([s.participant_id, s.session_id, s.task, s.stimulus_index, s.role, win.label,
                        *(repr(float(v)) for v in np.asarray(win.values).reshape(-1))])
