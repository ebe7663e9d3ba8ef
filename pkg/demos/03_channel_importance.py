"""Which channel does the detector rely on?

Trains a DPT detector twice: once on the default cohort, where gaze moves
with each trial, and once on a cohort whose gaze channels are pure noise.
Permutation importance (MCC drop after resampling one channel) should put
everything on pupil diameter in the second case.
"""

import argparse

from pupilwatch.importance import importance_scores
from pupilwatch.nn import Hyperparams
from pupilwatch.pipeline import cap_windows, experiment_split, train_variant, variant_windows
from pupilwatch.synth import CohortConfig, generate_cohort


def run(label, config, args):
    cohort = generate_cohort(args.participants, 1, master_seed=args.seed, config=config)
    split = experiment_split(cohort, n_test=4, n_val=2, seed=args.seed)
    hyper = Hyperparams(epochs=args.epochs, patience=2, max_windows_per_epoch=2048)
    model, _ = train_variant(cohort, split, "DPT", "all3", hyper, seed=args.seed, max_val_windows=1500)
    ev = cap_windows(variant_windows(cohort, split.test, "DPT"), args.windows, args.seed)
    rep = importance_scores(model, ev.x, ev.y, n_repeats=args.n, seed=args.seed)
    print(f"\n{label}: baseline MCC {rep.s_base:.3f} on {len(ev)} windows, N = {rep.n_repeats}")
    for row in rep.rows():
        print(f"  {row['channel']:<6} {row['mean_importance']:+.3f} +/- {row['std']:.3f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--participants", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--n", type=int, default=20, help="repetitions per channel")
    ap.add_argument("--windows", type=int, default=600)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    run("gaze follows the task", CohortConfig(), args)
    run("gaze is pure noise", CohortConfig(gaze_signal=False), args)


if __name__ == "__main__":
    main()
