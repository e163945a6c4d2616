"""Six-variant ablation on synthetic rooms: Baseline, +SPFA, +PL, +PLO, +EP,
and the full pipeline, all under identical seeds.

    python scripts/run_ablation.py --scenes 20 --labeled 2 --eval 5 --seed 7
"""

import argparse
import time

from spseg import ModelConfig, TrainConfig, ablation_suite, make_scene_set
from spseg.trainer import precompute_scenes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--labeled", type=int, default=2)
    ap.add_argument("--eval", type=int, default=5)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--density", type=float, default=450.0)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--phase1", type=int, default=20)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()

    config = TrainConfig(
        epochs_total=args.epochs,
        epochs_labeled_only=args.phase1,
        seed=args.seed,
        chunk_size=16384,
        model=ModelConfig(width1=16, c_hidden=32, num_classes=5),
    )
    scenes = make_scene_set(args.scenes, args.labeled, args.eval, seed=args.seed, density=args.density)
    t0 = time.time()
    caches = precompute_scenes(scenes.all_scenes(), config, threads=args.threads)
    print(f"precompute {time.time() - t0:.0f}s")
    rows = ablation_suite(config, scenes, caches)
    width = max(len(r.name) for r in rows)
    print(f"{'variant'.ljust(width)}  {'mIoU':>7} {'mAcc':>7} {'OA':>7}")
    for r in rows:
        print(f"{r.name.ljust(width)}  {r.metrics.miou:7.2f} {r.metrics.macc:7.2f} {r.metrics.oa:7.2f}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("name,mIoU,mAcc,OA\n")
            for r in rows:
                fh.write(f"{r.name},{r.metrics.csv_row()}\n")


if __name__ == "__main__":
    main()
