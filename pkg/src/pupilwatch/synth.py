"""Synthetic pupillometry cohorts with known stimulus times.

Each recording is baseline PD + slow drift + white noise + one event-locked
response per trial, with blink-like gaps of missing samples. Gaze channels get
a task-specific displacement pattern after every stimulus. Everything is a
pure function of the cohort parameters and the master seed, so a cohort is
described by its parameters and generated on demand.
"""

import enum
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.signal import lfilter

from .signal_model import (SAMPLE_RATE_HZ, Recording, TaskKind, recording_filenames,
                           write_events_csv, write_manifest, write_recording_csv)

PD_LIMITS = (1.05, 8.95)


class GazePattern(str, enum.Enum):
    SACCADE_THEN_DRIFT = "saccade_then_drift"
    FIXATE_THEN_SACCADE = "fixate_then_saccade"
    SLOW_OPPOSED = "slow_opposed"
    HIGH_VARIANCE = "high_variance"


@dataclass(frozen=True)
class ParticipantProfile:
    baseline_pd_mm: float
    constriction_gain: float
    dilation_gain: float
    plr_sensitivity: float
    noise_sd_mm: float
    gaze_noise_sd: float
    seed: int
    gaze_center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not 2.0 <= self.baseline_pd_mm <= 7.0:
            raise ValueError(f"baseline_pd_mm {self.baseline_pd_mm} outside [2, 7]")
        for name in ("constriction_gain", "dilation_gain", "plr_sensitivity", "noise_sd_mm", "gaze_noise_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class TaskResponseTemplate:
    task: TaskKind
    constriction_depth_mm: float
    trough_time_s: float
    redilation_end_s: float
    overshoot_mm: float
    overshoot_peak_s: float
    gaze_pattern: GazePattern
    trials_per_session: int
    iti_range_s: tuple = (4.0, 8.0)
    # share of the constriction driven by a light reflex (scaled by plr_sensitivity)
    plr_fraction: float = 0.0
    decay_end_s: float = 3.5
    gaze_amplitude: float = 60.0

    def __post_init__(self):
        if not self.trough_time_s < self.redilation_end_s < self.overshoot_peak_s < self.decay_end_s:
            raise ValueError("need trough_time_s < redilation_end_s < overshoot_peak_s < decay_end_s")
        if self.iti_range_s[0] < 3.0 or self.iti_range_s[1] < self.iti_range_s[0]:
            raise ValueError("iti_range_s must satisfy 3.0 <= min <= max")
        if self.trials_per_session < 1:
            raise ValueError("trials_per_session must be positive")


def default_templates():
    common = dict(overshoot_mm=0.12, overshoot_peak_s=2.5)
    return {
        TaskKind.DPT: TaskResponseTemplate(
            TaskKind.DPT, 0.4, 0.65, 1.6, gaze_pattern=GazePattern.SLOW_OPPOSED,
            trials_per_session=160, plr_fraction=0.8, **common),
        TaskKind.MA: TaskResponseTemplate(
            TaskKind.MA, 0.08, 0.65, 1.0, gaze_pattern=GazePattern.SACCADE_THEN_DRIFT,
            trials_per_session=40, **common),
        TaskKind.PVT: TaskResponseTemplate(
            TaskKind.PVT, 0.0, 0.5, 0.7, gaze_pattern=GazePattern.FIXATE_THEN_SACCADE,
            trials_per_session=77, gaze_amplitude=150.0, **common),
        TaskKind.VWM: TaskResponseTemplate(
            TaskKind.VWM, 0.08, 0.65, 1.0, gaze_pattern=GazePattern.HIGH_VARIANCE,
            trials_per_session=48, **common),
    }


# Student-t (3 dof) scaled so 80% of baselines fall in 4.0 +/- 0.5 mm
_BASELINE_CENTER = 4.0
_BASELINE_SCALE = 0.5 / 1.6377443536962102  # t_3 90th percentile


def sample_profile(rng_seed):
    rng = np.random.default_rng(rng_seed)
    baseline = _BASELINE_CENTER + _BASELINE_SCALE * rng.standard_t(3)
    gains = 2.0 * rng.beta(2.0, 2.0, size=3)
    return ParticipantProfile(
        baseline_pd_mm=float(np.clip(baseline, 2.0, 7.0)),
        constriction_gain=float(gains[0]),
        dilation_gain=float(gains[1]),
        plr_sensitivity=float(gains[2]),
        noise_sd_mm=float(rng.uniform(0.01, 0.03)),
        gaze_noise_sd=float(rng.uniform(3.0, 8.0)),
        seed=int(rng_seed),
        gaze_center=(float(rng.normal(-1.5, 20.0)), float(rng.normal(4.0, 20.0))),
    )


def _hermite_slopes(x, y):
    """Fritsch-Butland slopes: zero at the ends and at local extrema, no overshoot."""
    h = np.diff(x)
    d = np.diff(y) / h
    m = np.zeros_like(y)
    for k in range(1, len(y) - 1):
        if d[k - 1] * d[k] > 0:
            w1 = 2 * h[k] + h[k - 1]
            w2 = h[k] + 2 * h[k - 1]
            m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k])
    return m


def _smoothstep(t, start, dur):
    u = np.clip((t - start) / dur, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def pd_response(profile, template, t):
    """Noise-free PD change (mm) after a stimulus at t = 0; zero outside [0, decay_end_s]."""
    tp = template
    depth = tp.constriction_depth_mm * ((1.0 - tp.plr_fraction) * profile.constriction_gain
                                        + tp.plr_fraction * profile.plr_sensitivity)
    xs = np.array([0.0, tp.trough_time_s, tp.redilation_end_s, tp.overshoot_peak_s, tp.decay_end_s])
    ys = np.array([0.0, -depth, 0.0, tp.overshoot_mm * profile.dilation_gain, 0.0])
    spline = CubicHermiteSpline(xs, ys, _hermite_slopes(xs, ys))
    t = np.asarray(t, dtype=float)
    inside = (t >= 0.0) & (t <= tp.decay_end_s)
    out = np.zeros_like(t)
    out[inside] = spline(t[inside])
    return out


def gaze_response(template, t, rng=None):
    """Noise-free gaze displacement (x, y) after a stimulus at t = 0."""
    a = template.gaze_amplitude
    t = np.asarray(t, dtype=float)
    p = template.gaze_pattern
    if p == GazePattern.SACCADE_THEN_DRIFT:
        # fast saccade, then slow drift back past the start in the opposite direction
        x = a * (_smoothstep(t, 0.05, 0.08) - 1.3 * _smoothstep(t, 0.6, 1.2) + 0.3 * _smoothstep(t, 1.8, 0.7))
        y = 0.3 * x
    elif p == GazePattern.FIXATE_THEN_SACCADE:
        y = a * (_smoothstep(t, 0.4, 0.08) - _smoothstep(t, 1.6, 0.8))
        x = 0.15 * y
    elif p == GazePattern.SLOW_OPPOSED:
        x = a * (-0.5 * _smoothstep(t, 0.0, 0.5) + _smoothstep(t, 0.5, 1.0) - 0.5 * _smoothstep(t, 1.5, 1.0))
        y = np.zeros_like(t)
    elif p == GazePattern.HIGH_VARIANCE:
        rng = rng if rng is not None else np.random.default_rng(0)
        x = np.zeros_like(t)
        y = np.zeros_like(t)
        k = int(rng.integers(1, 7))
        onsets = np.sort(rng.uniform(0.2, 2.0, size=k))
        tx = np.concatenate([[0.0], rng.normal(0.0, a, size=k)])
        ty = np.concatenate([[0.0], rng.normal(0.0, a, size=k)])
        for j, on in enumerate(onsets, start=1):
            s = _smoothstep(t, on, 0.06)
            x += (tx[j] - tx[j - 1]) * s
            y += (ty[j] - ty[j - 1]) * s
        back = _smoothstep(t, 2.2, 0.3)
        x -= tx[-1] * back
        y -= ty[-1] * back
    else:
        raise ValueError(f"unknown gaze pattern {p!r}")
    outside = t < 0
    x = np.where(outside, 0.0, x)
    y = np.where(outside, 0.0, y)
    return x, y


@dataclass(frozen=True)
class TrialResponse:
    t_s: np.ndarray
    pd_mm: np.ndarray
    gaze_x: np.ndarray
    gaze_y: np.ndarray


def generate_trial_response(profile, template, duration_s=4.0, rng=None, add_noise=False,
                            fs=SAMPLE_RATE_HZ):
    """Event-locked PD change and gaze displacement for one trial.

    ``rng`` drives per-trial pattern randomness (and noise when ``add_noise``).
    """
    if duration_s < 3.5:
        raise ValueError("duration_s must be >= 3.5")
    t = np.arange(int(round(duration_s * fs)) + 1) / fs
    pd_curve = pd_response(profile, template, t)
    gx, gy = gaze_response(template, t, rng)
    if add_noise:
        rng = rng if rng is not None else np.random.default_rng(profile.seed)
        pd_curve = pd_curve + rng.normal(0.0, profile.noise_sd_mm, t.size)
        gx = gx + rng.normal(0.0, profile.gaze_noise_sd, t.size)
        gy = gy + rng.normal(0.0, profile.gaze_noise_sd, t.size)
    return TrialResponse(t, pd_curve, gx, gy)


@dataclass(frozen=True)
class CohortConfig:
    """Generator knobs beyond the participant profiles and task templates."""

    noise: bool = True  # white noise and slow drift
    drift_sd_mm: float = 0.05
    drift_tau_s: float = 5.0
    gaze_drift_sd: float = 25.0
    gaze_drift_tau_s: float = 3.0
    gap_rate: float = 0.02
    gap_ms: tuple = (40.0, 120.0)
    lead_in_s: float = 2.0
    tail_s: float = 4.5
    unit_gains: bool = False
    gaze_signal: bool = True  # False: gaze channels carry noise only
    ma_second_peak: bool = False
    second_peak_mm: float = 0.06
    second_peak_window_s: tuple = (4.0, 5.0)


def _ar1(rng, n, sd, tau_s, fs):
    if sd == 0 or n == 0:
        return np.zeros(n)
    a = np.exp(-1.0 / (tau_s * fs))
    e = rng.normal(0.0, sd * np.sqrt(1.0 - a * a), n)
    x0 = rng.normal(0.0, sd)
    return lfilter([1.0], [1.0, -a], e, zi=[a * x0])[0]


def _gap_mask(rng, n, rate, gap_ms, fs):
    mask = np.zeros(n, dtype=bool)
    if rate <= 0 or n == 0:
        return mask
    lo, hi = (int(round(g * fs / 1000.0)) for g in gap_ms)
    n_gaps = int(round(rate * n / ((lo + hi) / 2.0)))
    starts = rng.integers(0, n, size=n_gaps)
    lengths = rng.integers(lo, hi + 1, size=n_gaps)
    for s, ln in zip(starts, lengths):
        mask[s:s + ln] = True
    return mask


def _second_peak(t, center, amp, width=0.35):
    return amp * np.exp(-0.5 * ((t - center) / width) ** 2)


class Cohort:
    """Lazily generated sequence of recordings ordered by participant, session, task.

    Indexing regenerates the recording from its private seed stream, so two
    lookups of the same index return identical data.
    """

    def __init__(self, n_participants, sessions_per_participant=6, templates=None,
                 master_seed=0, config=None):
        if n_participants < 1:
            raise ValueError("n_participants must be >= 1")
        if sessions_per_participant < 1:
            raise ValueError("sessions_per_participant must be >= 1")
        templates = default_templates() if templates is None else dict(templates)
        missing = [t.value for t in TaskKind if t not in templates]
        if missing:
            raise ValueError(f"template map missing tasks: {missing}")
        self.n_participants = n_participants
        self.sessions = sessions_per_participant
        self.templates = templates
        self.master_seed = int(master_seed)
        self.config = config or CohortConfig()
        width = max(2, len(str(n_participants)))
        self.participant_ids = [f"P{k + 1:0{width}d}" for k in range(n_participants)]
        self.profiles = {}
        for k, pid in enumerate(self.participant_ids):
            seed = int(np.random.SeedSequence([self.master_seed, k]).generate_state(1)[0])
            prof = sample_profile(seed)
            if self.config.unit_gains:
                prof = replace(prof, constriction_gain=1.0, dilation_gain=1.0, plr_sensitivity=1.0)
            self.profiles[pid] = prof
        self.entries = []
        self._keys = []
        tasks = list(TaskKind)
        for k, pid in enumerate(self.participant_ids):
            for s in range(sessions_per_participant):
                for ti, task in enumerate(tasks):
                    self.entries.append({"participant_id": pid, "session_id": f"S{s + 1}", "task": task.value})
                    self._keys.append((k, s, ti))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def participants(self):
        return list(self.participant_ids)

    def select(self, participants=None, tasks=None):
        ps = None if participants is None else set(participants)
        ts = None if tasks is None else {TaskKind(t).value for t in tasks}
        return [i for i, e in enumerate(self.entries)
                if (ps is None or e["participant_id"] in ps) and (ts is None or e["task"] in ts)]

    def _stream(self, i, purpose):
        return np.random.default_rng(np.random.SeedSequence([self.master_seed, *self._keys[i], purpose]))

    def stimulus_indices(self, i):
        """Sample indices of the stimuli of recording `i` (cheap; no signal generation)."""
        tpl = self.templates[TaskKind(self.entries[i]["task"])]
        rng = self._stream(i, 0)
        fs = SAMPLE_RATE_HZ
        lo, hi = tpl.iti_range_s
        itis = np.round(rng.uniform(lo, hi, tpl.trials_per_session - 1) * fs).astype(int)
        start = int(round(self.config.lead_in_s * fs))
        return start + np.concatenate([[0], np.cumsum(itis)])

    def stimulus_times(self, i):
        return self.stimulus_indices(i) / SAMPLE_RATE_HZ

    def __getitem__(self, i):
        if i < 0:
            i += len(self)
        entry = self.entries[i]
        task = TaskKind(entry["task"])
        tpl = self.templates[task]
        prof = self.profiles[entry["participant_id"]]
        cfg = self.config
        fs = SAMPLE_RATE_HZ
        st_idx = self.stimulus_indices(i)
        n = int(st_idx[-1] + round(cfg.tail_s * fs))
        rng = self._stream(i, 1)

        resp_len = int(round(tpl.decay_end_s * fs)) + 1
        extra = 0
        if cfg.ma_second_peak and task == TaskKind.MA:
            extra = int(round((cfg.second_peak_window_s[1] + 1.5) * fs))
        t_resp = np.arange(max(resp_len, extra)) / fs
        pd_curve = pd_response(prof, tpl, t_resp)

        pd = np.full(n, prof.baseline_pd_mm)
        gx = np.full(n, prof.gaze_center[0])
        gy = np.full(n, prof.gaze_center[1])
        for s in st_idx:
            e = min(n, s + t_resp.size)
            seg = t_resp[:e - s]
            pd[s:e] += pd_curve[:e - s]
            if cfg.ma_second_peak and task == TaskKind.MA:
                center = rng.uniform(*cfg.second_peak_window_s)
                pd[s:e] += _second_peak(seg, center, cfg.second_peak_mm * prof.dilation_gain)
            if cfg.gaze_signal:
                dx, dy = gaze_response(tpl, seg, rng)
                gx[s:e] += dx
                gy[s:e] += dy

        if cfg.noise:
            pd += _ar1(rng, n, cfg.drift_sd_mm, cfg.drift_tau_s, fs)
            pd += rng.normal(0.0, prof.noise_sd_mm, n)
            gx += _ar1(rng, n, cfg.gaze_drift_sd, cfg.gaze_drift_tau_s, fs)
            gy += _ar1(rng, n, cfg.gaze_drift_sd, cfg.gaze_drift_tau_s, fs)
            gx += rng.normal(0.0, prof.gaze_noise_sd, n)
            gy += rng.normal(0.0, prof.gaze_noise_sd, n)
        np.clip(pd, *PD_LIMITS, out=pd)

        gaps = _gap_mask(rng, n, cfg.gap_rate, cfg.gap_ms, fs)
        pd[gaps] = np.nan
        gx[gaps] = np.nan
        gy[gaps] = np.nan
        return Recording(entry["participant_id"], entry["session_id"], task, pd, gx, gy, st_idx / fs)

    def params(self):
        """Every generator parameter and seed, JSON-serializable."""
        def tpl_dict(t):
            d = asdict(t)
            d["task"] = t.task.value
            d["gaze_pattern"] = t.gaze_pattern.value
            d["iti_range_s"] = list(t.iti_range_s)
            return d

        return {
            "n_participants": self.n_participants,
            "sessions_per_participant": self.sessions,
            "master_seed": self.master_seed,
            "sample_rate_hz": SAMPLE_RATE_HZ,
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.config).items()},
            "templates": {t.value: tpl_dict(self.templates[t]) for t in TaskKind},
            "profiles": {pid: {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(p).items()}
                         for pid, p in self.profiles.items()},
        }

    def write(self, out_dir):
        """Write recording/events CSVs, ``manifest.json`` and ``cohort.params``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, e in enumerate(self.entries):
            rec_name, ev_name = recording_filenames(e["participant_id"], e["session_id"], e["task"])
            r = self[i]
            write_recording_csv(r, out / rec_name)
            write_events_csv(r.stimulus_times_s, out / ev_name)
            entries.append({**e, "recording": rec_name, "events": ev_name})
        write_manifest(entries, out / "manifest.json")
        with open(out / "cohort.params", "w") as fh:
            json.dump(self.params(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return entries


def generate_cohort(n_participants, sessions_per_participant=6, templates=None, master_seed=0,
                    config=None):
    return Cohort(n_participants, sessions_per_participant, templates, master_seed, config)


def templates_from_params(doc):
    out = {}
    for name, d in doc.items():
        d = dict(d)
        d["task"] = TaskKind(d["task"])
        d["gaze_pattern"] = GazePattern(d["gaze_pattern"])
        d["iti_range_s"] = tuple(d["iti_range_s"])
        out[TaskKind(name)] = TaskResponseTemplate(**d)
    return out


def cohort_from_params(doc):
    """Rebuild a :class:`Cohort` from the dict written to ``cohort.params``."""
    cfg = {k: (tuple(v) if isinstance(v, list) else v) for k, v in doc["config"].items()}
    return Cohort(doc["n_participants"], doc["sessions_per_participant"],
                  templates_from_params(doc["templates"]), doc["master_seed"], CohortConfig(**cfg))
