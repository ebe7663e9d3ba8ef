"""Recordings, task kinds and event-locked exploratory statistics.

Missing samples (blinks, dropped frames) are stored as NaN in memory and as an
empty field on disk.
"""

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

SAMPLE_RATE_HZ = 250
MISSING = np.nan
CHANNELS = ("PD", "GazeX", "GazeY")


class TaskKind(str, enum.Enum):
    DPT = "DPT"  # dot probe
    MA = "MA"  # mental arithmetic
    PVT = "PVT"  # psychomotor vigilance
    VWM = "VWM"  # visual working memory


def is_missing(x):
    return np.isnan(x)


def time_to_index(t_s, fs=SAMPLE_RATE_HZ):
    """Nearest sample index for a time in seconds (halves round up)."""
    return int(math.floor(t_s * fs + 0.5))


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Recording:
    """One participant/session/task recording of PD and gaze at 250 Hz."""

    participant_id: str
    session_id: str
    task: TaskKind
    pd_mm: np.ndarray
    gaze_x: np.ndarray
    gaze_y: np.ndarray
    stimulus_times_s: np.ndarray
    sample_rate_hz: float = SAMPLE_RATE_HZ

    def __post_init__(self):
        for name in ("pd_mm", "gaze_x", "gaze_y", "stimulus_times_s"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if not isinstance(self.task, TaskKind):
            object.__setattr__(self, "task", TaskKind(self.task))

    @property
    def key(self):
        return (self.participant_id, self.session_id, self.task.value)

    @property
    def n_samples(self):
        return self.pd_mm.shape[0]

    @property
    def duration_s(self):
        return self.n_samples / self.sample_rate_hz

    def channels(self):
        """Array of shape (3, n) in PD, GazeX, GazeY order."""
        return np.stack([self.pd_mm, self.gaze_x, self.gaze_y])

    def stimulus_indices(self):
        return np.array([time_to_index(t, self.sample_rate_hz) for t in self.stimulus_times_s], dtype=int)

    def with_channels(self, data):
        """Copy of this recording with the three channels replaced by rows of `data`."""
        return Recording(self.participant_id, self.session_id, self.task, data[0], data[1], data[2],
                         self.stimulus_times_s, self.sample_rate_hz)


def validate_recording(r):
    """List of invariant violations; empty when the recording is well formed."""
    problems = []
    n = len(r.pd_mm)
    if not (len(r.gaze_x) == len(r.gaze_y) == n):
        problems.append("channel length mismatch")
    if n < 1:
        problems.append("empty recording")
    if r.sample_rate_hz != SAMPLE_RATE_HZ:
        problems.append(f"sample rate must be {SAMPLE_RATE_HZ} Hz")
    st = np.asarray(r.stimulus_times_s, dtype=float)
    if st.size > 1 and np.any(np.diff(st) <= 0):
        problems.append("events not increasing")
    duration = n / r.sample_rate_hz if r.sample_rate_hz > 0 else 0.0
    if st.size and (np.any(st < 0) or np.any(st >= duration)):
        problems.append("event outside recording")
    if not isinstance(r.task, TaskKind):
        problems.append("unknown task")
    return problems


@dataclass(frozen=True)
class ChangeCurve:
    t_s: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_events: int


def event_locked_pd(recordings, window_s=(-0.5, 3.5)):
    """Stack of per-event PD change curves (PD minus PD at the stimulus sample).

    Events whose window leaves the recording or touches a missing sample are skipped.
    """
    t_lo, t_hi = window_s
    if not t_lo < t_hi:
        raise ValueError("window start must precede window end")
    rates = {r.sample_rate_hz for r in recordings}
    if len(rates) > 1:
        raise ValueError("recordings differ in sample rate")
    fs = rates.pop() if rates else SAMPLE_RATE_HZ
    off_lo = time_to_index(t_lo, fs)
    n = int(round((t_hi - t_lo) * fs)) + 1
    rows = []
    for r in recordings:
        for i in r.stimulus_indices():
            a = i + off_lo
            if a < 0 or a + n > r.n_samples or not 0 <= i < r.n_samples:
                continue
            seg = r.pd_mm[a:a + n]
            ref = r.pd_mm[i]
            if np.isnan(ref) or np.isnan(seg).any():
                continue
            rows.append(seg - ref)
    t = off_lo / fs + np.arange(n) / fs
    return t, np.array(rows).reshape(len(rows), n)


def pd_change_curve(recordings, window_s=(-0.5, 3.5)):
    """Mean and population standard deviation of event-locked PD change.

    Raises
    ------
    ValueError
        If no event survives the edge and missing-data checks.
    """
    t, rows = event_locked_pd(recordings, window_s)
    if rows.shape[0] == 0:
        raise ValueError("no events")
    return ChangeCurve(t, rows.mean(axis=0), rows.std(axis=0), rows.shape[0])


def median_pd(recordings):
    """Median PD per participant over all non-missing samples of all their recordings."""
    by_participant = {}
    for r in recordings:
        by_participant.setdefault(r.participant_id, []).append(r.pd_mm)
    out = {}
    for pid, parts in by_participant.items():
        pd_all = np.concatenate(parts)
        pd_all = pd_all[~np.isnan(pd_all)]
        if pd_all.size == 0:
            raise ValueError(f"participant {pid} has no valid PD samples")
        out[pid] = float(np.median(pd_all))
    return out


# --- on-disk formats -------------------------------------------------------

def write_recording_csv(r, path):
    t = np.arange(r.n_samples) / r.sample_rate_hz
    df = pd.DataFrame({"t_s": t, "pd_mm": r.pd_mm, "gaze_x": r.gaze_x, "gaze_y": r.gaze_y})
    df.to_csv(path, index=False, na_rep="", float_format="%.9g", lineterminator="\n")


def write_events_csv(times_s, path):
    with open(path, "w") as fh:
        fh.write("stimulus_time_s\n")
        for t in times_s:
            fh.write(f"{t:.3f}\n")


def read_events_csv(path):
    df = pd.read_csv(path)
    if list(df.columns) != ["stimulus_time_s"]:
        raise ValueError(f"{path}: expected header 'stimulus_time_s'")
    return df["stimulus_time_s"].to_numpy(dtype=float)


def read_recording_csv(path, events_path, participant_id, session_id, task):
    df = pd.read_csv(path)
    if list(df.columns) != ["t_s", "pd_mm", "gaze_x", "gaze_y"]:
        raise ValueError(f"{path}: expected header t_s,pd_mm,gaze_x,gaze_y")
    return Recording(
        participant_id=str(participant_id),
        session_id=str(session_id),
        task=TaskKind(task),
        pd_mm=df["pd_mm"].to_numpy(dtype=float),
        gaze_x=df["gaze_x"].to_numpy(dtype=float),
        gaze_y=df["gaze_y"].to_numpy(dtype=float),
        stimulus_times_s=read_events_csv(events_path),
    )


def recording_filenames(participant_id, session_id, task):
    stem = f"{participant_id}_{session_id}_{TaskKind(task).value}"
    return f"{stem}.csv", f"{stem}_events.csv"


def write_manifest(entries, path):
    """Manifest: JSON list of {participant_id, session_id, task, recording, events}."""
    with open(path, "w") as fh:
        json.dump({"format": "pupilwatch-manifest", "version": 1, "recordings": entries},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "pupilwatch-manifest":
        raise ValueError(f"{path} is not a recording manifest")
    return doc["recordings"]


class ManifestDataset:
    """Lazily loaded recordings listed in a manifest, in manifest order."""

    def __init__(self, manifest_path):
        self.path = Path(manifest_path)
        self.root = self.path.parent
        self.entries = read_manifest(self.path)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        e = self.entries[i]
        return read_recording_csv(self.root / e["recording"], self.root / e["events"],
                                  e["participant_id"], e["session_id"], e["task"])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def participants(self):
        return sorted({e["participant_id"] for e in self.entries})

    def select(self, participants=None, tasks=None):
        """Indices of entries matching the participant and task filters."""
        ps = None if participants is None else set(participants)
        ts = None if tasks is None else {TaskKind(t).value for t in tasks}
        return [i for i, e in enumerate(self.entries)
                if (ps is None or e["participant_id"] in ps) and (ts is None or e["task"] in ts)]
