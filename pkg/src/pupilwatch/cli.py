"""Command-line front end: ``pupilwatch {synth,train,eval,importance,stream,eda}``.

Every run gets its own directory ``<out>/<timestamp>_<command>/`` holding the
effective configuration (``config.json``), a log and the command's products.
Settings come from built-in defaults, then ``--config FILE`` (JSON), then flags.

Exit status: 0 success, 1 validation failure, 2 I/O failure.
"""

import argparse
import copy
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import pipeline
from .errors import FormatError
from .evaluation import TASK_ORDER, VARIANTS
from .importance import importance_scores, write_importance_csv
from .nn import Hyperparams, load_weights, save_weights
from .preprocessing import fit_zscore
from .signal_model import ManifestDataset, TaskKind, median_pd, pd_change_curve, read_recording_csv
from .streaming import StreamDetector, extract_events, replay, trace_times, write_events_csv, \
    write_trace_csv
from .synth import CohortConfig, default_templates, generate_cohort

log = logging.getLogger("pupilwatch")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2

DEFAULTS = {
    "seed": 0,
    "paths": {"data_dir": "data", "out_dir": "runs", "weights_dir": "weights"},
    "cohort": {"participants": 57, "sessions": 6, "trials": None, "gaze_noise": False, "unit_gains": False},
    "model": {"epochs": 30, "batch_size": 64, "learning_rate": 1e-3, "patience": 5, "alpha": 0.004,
              "max_windows_per_epoch": None},
    "channel_mode": "all3",
    "variant": "ALL",
    "split": {"seed": 0, "n_test": 10, "n_val": 5},
    "data": {"stimulus_fraction": 1.0, "max_val_windows": None},
    "importance": {"n_repeats": 100, "method": "empirical", "max_windows": 1500},
    "stream": {"input": None, "events": None, "baseline_s": 60.0, "frozen": False, "threshold": 0.5},
}

# flag dest -> config path
FLAG_PATHS = {
    "seed": ("seed",),
    "out": ("paths", "out_dir"),
    "data_dir": ("paths", "data_dir"),
    "weights_dir": ("paths", "weights_dir"),
    "participants": ("cohort", "participants"),
    "sessions": ("cohort", "sessions"),
    "trials": ("cohort", "trials"),
    "gaze_noise": ("cohort", "gaze_noise"),
    "unit_gains": ("cohort", "unit_gains"),
    "epochs": ("model", "epochs"),
    "batch_size": ("model", "batch_size"),
    "lr": ("model", "learning_rate"),
    "patience": ("model", "patience"),
    "max_windows_per_epoch": ("model", "max_windows_per_epoch"),
    "channels": ("channel_mode",),
    "variant": ("variant",),
    "split_seed": ("split", "seed"),
    "n_test": ("split", "n_test"),
    "n_val": ("split", "n_val"),
    "stimulus_fraction": ("data", "stimulus_fraction"),
    "max_val_windows": ("data", "max_val_windows"),
    "n": ("importance", "n_repeats"),
    "method": ("importance", "method"),
    "max_windows": ("importance", "max_windows"),
    "input": ("stream", "input"),
    "events": ("stream", "events"),
    "baseline_s": ("stream", "baseline_s"),
    "frozen": ("stream", "frozen"),
    "threshold": ("stream", "threshold"),
}


class ValidationError(Exception):
    pass


def _merge(base, over):
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def build_config(args):
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValidationError("config file must hold a JSON object")
        _merge(cfg, doc)
    for dest, path in FLAG_PATHS.items():
        val = getattr(args, dest, None)
        if val is None:
            continue
        node = cfg
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = val
    # "ALL_pd_only" style variants carry their channel mode
    for mode in pipeline.CHANNEL_MODES:
        suffix = "_" + mode
        if str(cfg["variant"]).endswith(suffix):
            cfg["variant"] = cfg["variant"][: -len(suffix)]
            cfg["channel_mode"] = mode
    if cfg["variant"] not in VARIANTS:
        raise ValidationError(f"unknown variant {cfg['variant']!r}; expected one of {', '.join(VARIANTS)}")
    if cfg["channel_mode"] not in pipeline.CHANNEL_MODES:
        raise ValidationError(f"unknown channel mode {cfg['channel_mode']!r}")
    cfg["command"] = args.command
    return cfg


def make_run_dir(cfg):
    root = Path(cfg["paths"]["out_dir"])
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run = root / f"{stamp}_{cfg['command']}"
    k = 1
    while run.exists():
        k += 1
        run = root / f"{stamp}_{cfg['command']}-{k}"
    run.mkdir(parents=True)
    with open(run / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return run


def _setup_logging(run_dir, verbose):
    log.handlers.clear()
    log.setLevel(logging.INFO)
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    fh = logging.FileHandler(run_dir / "run.log")
    fh.setFormatter(fmt)
    log.addHandler(fh)
    if verbose:
        sh = logging.StreamHandler(sys.stderr)
        sh.setFormatter(fmt)
        log.addHandler(sh)


def hyperparams(cfg):
    m = cfg["model"]
    return Hyperparams(learning_rate=float(m["learning_rate"]), batch_size=int(m["batch_size"]),
                       epochs=int(m["epochs"]), patience=int(m["patience"]), alpha=float(m["alpha"]),
                       max_windows_per_epoch=m["max_windows_per_epoch"])


def open_dataset(cfg):
    manifest = Path(cfg["paths"]["data_dir"]) / "manifest.json"
    if not manifest.is_file():
        raise FileNotFoundError(f"no manifest at {manifest}; run `synth` first")
    return ManifestDataset(manifest)


def dataset_split(cfg, ds):
    s = cfg["split"]
    return pipeline.experiment_split(ds, int(s["n_test"]), int(s["n_val"]), int(s["seed"]))


def weights_path(cfg, variant=None, channel_mode=None):
    return Path(cfg["paths"]["weights_dir"]) / (
        f"{variant or cfg['variant']}_{channel_mode or cfg['channel_mode']}.pwnn")


def load_model(cfg, variant=None):
    path = weights_path(cfg, variant)
    if not path.is_file():
        raise FileNotFoundError(f"missing weights {path}; run `train --variant {variant or cfg['variant']} "
                                f"--channels {cfg['channel_mode']}`")
    model = load_weights(path)
    want = pipeline.CHANNEL_MODES[cfg["channel_mode"]]
    if model.arch.in_channels != want:
        raise ValidationError(f"channel-mode mismatch: {path} takes {model.arch.in_channels} channel(s), "
                              f"request is {cfg['channel_mode']}")
    return model


# --- commands --------------------------------------------------------------

def cmd_synth(cfg, run_dir):
    c = cfg["cohort"]
    conf = CohortConfig(gaze_signal=not c["gaze_noise"], unit_gains=bool(c["unit_gains"]))
    templates = default_templates()
    if c["trials"]:
        templates = {k: replace(t, trials_per_session=min(int(c["trials"]), t.trials_per_session))
                     for k, t in templates.items()}
    cohort = generate_cohort(int(c["participants"]), int(c["sessions"]), templates, int(cfg["seed"]), conf)
    out = Path(cfg["paths"]["data_dir"])
    entries = cohort.write(out)
    per_task = {t.value: 0 for t in TaskKind}
    for i, e in enumerate(cohort.entries):
        per_task[e["task"]] += len(cohort.stimulus_indices(i))
    print(f"participants: {cohort.n_participants}")
    print(f"recordings: {len(entries)} in {out}")
    for t, n in per_task.items():
        print(f"events {t}: {n}")
    with open(run_dir / "summary.json", "w") as fh:
        json.dump({"participants": cohort.n_participants, "recordings": len(entries),
                   "events_per_task": per_task, "data_dir": str(out)}, fh, indent=1, sort_keys=True)
    return EXIT_OK


def cmd_train(cfg, run_dir):
    ds = open_dataset(cfg)
    split = dataset_split(cfg, ds)
    variant, mode = cfg["variant"], cfg["channel_mode"]
    model, report = pipeline.train_variant(
        ds, split, variant, mode, hyperparams(cfg), seed=int(cfg["seed"]),
        stimulus_fraction=float(cfg["data"]["stimulus_fraction"]),
        max_val_windows=cfg["data"]["max_val_windows"],
        progress=lambda msg: print(msg, flush=True))
    path = weights_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(model, path)
    save_weights(model, run_dir / path.name)
    doc = asdict(report)
    doc.update(variant=variant, channel_mode=mode, best_val_mcc=report.best_val_mcc,
               train_participants=list(split.train), val_participants=list(split.val))
    with open(run_dir / "train_report.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    print(f"chose epoch {report.chosen_epoch} (val MCC {report.best_val_mcc:.4f}); weights -> {path}")
    return EXIT_OK


def cmd_eval(cfg, run_dir):
    models = {v: load_model(cfg, v) for v in VARIANTS}
    ds = open_dataset(cfg)
    split = dataset_split(cfg, ds)
    tests = pipeline.task_test_sets(ds, split.test, cfg["channel_mode"])
    matrix = pipeline.evaluate_variants(models, tests, cfg["channel_mode"])
    (run_dir / "matrix.csv").write_text(matrix.to_csv())
    text = matrix.to_text()
    (run_dir / "matrix.txt").write_text(text + "\n")
    print(text)
    print("windows per test set: " + ", ".join(f"{t}={len(tests[t])}" for t in TASK_ORDER)
          + f", pooled={sum(len(w) for w in tests.values())}")
    print("same-task MCC: " + ", ".join(
        f"{v}={matrix.cells[(v, 'POOLED' if v == 'ALL' else v)].mcc:.3f}" for v in VARIANTS))
    return EXIT_OK


def cmd_importance(cfg, run_dir):
    model = load_model(cfg)
    ds = open_dataset(cfg)
    split = dataset_split(cfg, ds)
    imp = cfg["importance"]
    wins = pipeline.variant_windows(ds, split.test, cfg["variant"], cfg["channel_mode"])
    wins = pipeline.cap_windows(wins, imp["max_windows"], int(cfg["seed"]))
    rep = importance_scores(model, wins.x, wins.y, int(imp["n_repeats"]), int(cfg["seed"]), imp["method"])
    write_importance_csv(rep, run_dir / "importance.csv")
    print(f"s_base={rep.s_base:.4f} over {len(wins)} windows, N={rep.n_repeats}")
    for row in rep.rows():
        print(f"{row['channel']}: {row['mean_importance']:.4f} +/- {row['std']:.4f}")
    return EXIT_OK


def _parse_line(line):
    parts = line.strip().split(",")
    if len(parts) != 4:
        raise ValidationError(f"expected 't,pd,gx,gy', got {line.strip()!r}")
    return tuple(float(p) if p.strip() else float("nan") for p in parts)


def cmd_stream(cfg, run_dir):
    model = load_model(cfg)
    st = cfg["stream"]
    src = st["input"]
    if src is None:
        raise ValidationError("stream needs --input (a recording CSV or 'live')")
    if src == "live":
        det = StreamDetector(model, baseline_s=float(st["baseline_s"]))
        for line in sys.stdin:
            if not line.strip() or line[0].isalpha():
                continue
            out = det.push_sample(*_parse_line(line))
            if out is not None:
                print(f"{out[0]:.3f},{out[1]:.6f}", flush=True)
        trace = det.state.trace
    else:
        events_path = Path(st["events"] or str(src).replace(".csv", "_events.csv"))
        if not events_path.is_file():
            raise FileNotFoundError(f"no events file {events_path}")
        stem = Path(src).stem.split("_")
        task = stem[-1] if stem[-1] in TASK_ORDER else TaskKind.DPT
        rec = read_recording_csv(src, events_path, stem[0], "S", task)
        stats = None
        if st["frozen"]:
            zs = fit_zscore(rec)
            stats = ([p.mean for p in zs], [p.std for p in zs])
        starts, probs = replay(model, rec, baseline_s=float(st["baseline_s"]), frozen_stats=stats)
        trace = list(zip(trace_times(rec, starts).tolist(), probs.tolist()))
        for t, p in trace:
            print(f"{t:.3f},{p:.6f}")
    events = extract_events(trace, float(st["threshold"]))
    write_trace_csv(trace, run_dir / "trace.csv")
    write_events_csv(events, run_dir / "events.csv")
    if trace:
        print(f"first prediction at t={trace[0][0]:.3f} s; {len(trace)} predictions; {len(events)} events")
    return EXIT_OK


def cmd_eda(cfg, run_dir):
    ds = open_dataset(cfg)
    rows = []
    for task in TASK_ORDER:
        recs = [ds[i] for i in ds.select(tasks=[task])]
        if not recs:
            continue
        curve = pd_change_curve(recs)
        for t, m, s in zip(curve.t_s, curve.mean, curve.std):
            rows.append(f"{task},{t:.3f},{m:.6f},{s:.6f},{curve.n_events}")
        k = int(np.argmin(curve.mean))
        print(f"{task}: {curve.n_events} events, min change {curve.mean[k]:.3f} mm at {curve.t_s[k]:.2f} s")
    (run_dir / "change_curves.csv").write_text("task,t_s,mean_mm,std_mm,n_events\n" + "\n".join(rows) + "\n")
    med = median_pd(ds)
    (run_dir / "median_pd.csv").write_text(
        "participant_id,median_pd_mm\n" + "".join(f"{p},{v:.6f}\n" for p, v in sorted(med.items())))
    inside = np.mean([3.5 <= v <= 4.5 for v in med.values()])
    print(f"median PD in [3.5, 4.5] mm for {inside:.1%} of {len(med)} participants")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "importance": cmd_importance,
            "stream": cmd_stream, "eda": cmd_eda}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with settings (flags take precedence)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="parent directory for run folders (default runs)")
    common.add_argument("--data-dir", help="cohort directory holding manifest.json")
    common.add_argument("--weights-dir", help="directory of <variant>_<channels>.pwnn files")
    common.add_argument("-v", "--verbose", action="store_true", help="log to stderr as well")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--variant", help="ALL, DPT, MA, PVT or VWM (suffix _pd_only allowed)")
    model.add_argument("--channels", choices=sorted(pipeline.CHANNEL_MODES))
    model.add_argument("--split-seed", type=int)
    model.add_argument("--n-test", type=int, help="held-out participants")
    model.add_argument("--n-val", type=int, help="validation participants")

    p = argparse.ArgumentParser(prog="pupilwatch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    s.add_argument("--participants", type=int)
    s.add_argument("--sessions", type=int)
    s.add_argument("--trials", type=int, help="cap on trials per session (quick runs)")
    s.add_argument("--gaze-noise", action="store_const", const=True, help="gaze channels carry noise only")
    s.add_argument("--unit-gains", action="store_const", const=True, help="all participant gains set to 1")

    s = sub.add_parser("train", parents=[common, model], help="train one model variant")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--patience", type=int)
    s.add_argument("--max-windows-per-epoch", type=int)
    s.add_argument("--stimulus-fraction", type=float, help="fraction of stimuli kept per recording")
    s.add_argument("--max-val-windows", type=int)

    sub.add_parser("eval", parents=[common, model], help="cross-task matrix for all five variants")

    s = sub.add_parser("importance", parents=[common, model], help="channel importance by MCC drop")
    s.add_argument("--n", type=int, help="repetitions per channel")
    s.add_argument("--method", choices=["empirical", "gaussian"])
    s.add_argument("--max-windows", type=int, help="cap on evaluation windows")

    s = sub.add_parser("stream", parents=[common, model], help="online detection on a recording or stdin")
    s.add_argument("--input", help="recording CSV, or 'live' to read 't,pd,gx,gy' lines from stdin")
    s.add_argument("--events", help="events CSV for a recording input")
    s.add_argument("--baseline-s", type=float)
    s.add_argument("--frozen", action="store_const", const=True,
                   help="normalize with whole-recording statistics")
    s.add_argument("--threshold", type=float)

    sub.add_parser("eda", parents=[common], help="event-locked PD curves and per-participant medians")
    return p


def _apply_threads():
    n = os.environ.get("PUPILWATCH_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except (ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    limiter = _apply_threads()
    try:
        run_dir = make_run_dir(cfg)
        _setup_logging(run_dir, args.verbose)
        log.info("run %s started", run_dir)
        return COMMANDS[args.command](cfg, run_dir)
    except BrokenPipeError:
        # downstream reader closed early (e.g. `| head`)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (OSError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
