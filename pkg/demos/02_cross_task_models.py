"""Five detectors, four tasks.

Trains the All-task model and the four task-specific models on a small
synthetic cohort, then scores every model on every task's held-out
participants. Same-task cells are starred; the published grid is printed
underneath for orientation only (it comes from a real cohort).
"""

import argparse
import time

from pupilwatch.evaluation import TASK_ORDER, VARIANTS
from pupilwatch.nn import Hyperparams
from pupilwatch.pipeline import evaluate_variants, experiment_split, task_test_sets, train_variant
from pupilwatch.synth import generate_cohort


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--participants", type=int, default=20)
    ap.add_argument("--sessions", type=int, default=2)
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--windows-per-epoch", type=int, default=2048)
    ap.add_argument("--channels", choices=["all3", "pd_only"], default="all3")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cohort = generate_cohort(args.participants, args.sessions, master_seed=args.seed)
    split = experiment_split(cohort, n_test=4, n_val=2, seed=args.seed)
    print(f"train {len(split.train)} / validation {len(split.val)} / test {len(split.test)} participants")

    hyper = Hyperparams(epochs=args.epochs, patience=2, max_windows_per_epoch=args.windows_per_epoch)
    models = {}
    for v in VARIANTS:
        t0 = time.perf_counter()
        models[v], rep = train_variant(cohort, split, v, args.channels, hyper, seed=args.seed,
                                       stimulus_fraction=0.5 if v == "ALL" else 1.0, max_val_windows=2000)
        print(f"  {v:<4} trained in {time.perf_counter() - t0:5.1f} s, best validation MCC {rep.best_val_mcc:.3f}")

    tests = task_test_sets(cohort, split.test, args.channels)
    print("\ntest windows: " + ", ".join(f"{t} {len(tests[t])}" for t in TASK_ORDER))
    matrix = evaluate_variants(models, tests, args.channels)
    print("\n(TNR, TPR) per model and tested task\n")
    print(matrix.to_text())


if __name__ == "__main__":
    main()
