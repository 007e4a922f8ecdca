"""Train (or reuse) the six configurations over three seeds and print the ordering checks.

    python3 scripts/run_acceptance_experiment.py [--cache DIR] [--iters N] [--lr LR]

Checkpoints, curves and per-seed reports are cached under ``--cache``
(default ``artifacts/acceptance``); rerunning only re-evaluates.
"""

import argparse
import logging
import time
from pathlib import Path

from robustfusion import experiment as X
from robustfusion.dataset import SceneDataset

DEFAULT_CACHE = Path(__file__).resolve().parents[1] / "artifacts" / "acceptance"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cache", type=Path, default=DEFAULT_CACHE)
    p.add_argument("--iters", type=int, default=X.ITERS)
    p.add_argument("--lr", type=float, default=X.LR)
    p.add_argument("--runs", default=",".join(X.RUNS), help="comma list of run names")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    settings = X.Settings(cache=args.cache, iters=args.iters, lr=args.lr)
    names = [n.strip() for n in args.runs.split(",") if n.strip()]
    start = time.perf_counter()
    per_seed = X.run_all(settings, names)
    print(f"\nseed-averaged mIoU ({len(settings.seeds)} seeds, {settings.iters} iters, lr {settings.lr})")
    print(X.summary_table(per_seed))
    if set(X.RUNS) <= set(per_seed):
        print()
        for r in X.check_orderings(per_seed):
            print(f"[{'PASS' if r.ok else 'FAIL'}] criterion {r.label}: {r.detail}")
        val = SceneDataset(settings.data_dir, "val")
        r = X.check_clean_floor(per_seed, val)
        print(f"[{'PASS' if r.ok else 'FAIL'}] criterion {r.label}: {r.detail}")
    print(f"\nelapsed {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
