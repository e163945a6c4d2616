"""End-to-end synthetic experiment: labeled-only baseline vs raw pseudo-label
self-training vs the full pipeline, evaluated on held-out rooms.

Example:
    python scripts/run_end_to_end.py --scenes 20 --labeled 2 --eval 5 --seed 7
"""

import argparse
import dataclasses
import time

from spseg import ModelConfig, TrainConfig, evaluate, make_scene_set, train
from spseg.trainer import ABLATION_VARIANTS, precompute_scenes

COMPARED = ("Baseline", "Baseline+SPFA+PL", "Ours")


def build_config(args) -> TrainConfig:
    # chunk_size above the largest room keeps whole scenes per step, so the
    # cached neighbor tables are reused every epoch.
    return TrainConfig(
        epochs_total=args.epochs,
        epochs_labeled_only=args.phase1,
        learning_rate=args.lr,
        seed=args.seed,
        chunk_size=16384,
        model=ModelConfig(width1=16, c_hidden=32, num_classes=5),
    )


def run(args):
    config = build_config(args)
    t0 = time.time()
    scenes = make_scene_set(args.scenes, args.labeled, args.eval, seed=args.seed, density=args.density)
    print(f"scenes: {args.scenes} train ({args.labeled} labeled) + {args.eval} eval "
          f"[{time.time() - t0:.1f}s]")
    t0 = time.time()
    caches = precompute_scenes(scenes.all_scenes(), config, threads=args.threads)
    print(f"precompute: {time.time() - t0:.1f}s")
    results = {}
    for name, flags in ABLATION_VARIANTS:
        if name not in COMPARED:
            continue
        variant = dataclasses.replace(config, **flags)
        t0 = time.time()
        out = train(variant, scenes, caches)
        metrics = evaluate(out.params, scenes.eval, caches, variant)
        results[name] = metrics
        print(f"{name:22s} mIoU={metrics.miou:6.2f} mAcc={metrics.macc:6.2f} "
              f"OA={metrics.oa:6.2f}  [{time.time() - t0:.1f}s]")
    full = results["Ours"]
    print(f"\nmargins: vs Baseline {full.miou - results['Baseline'].miou:+.2f} mIoU, "
          f"vs raw pseudo labels {full.miou - results['Baseline+SPFA+PL'].miou:+.2f} mIoU")
    return results


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--labeled", type=int, default=2)
    ap.add_argument("--eval", type=int, default=5)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--density", type=float, default=450.0)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--phase1", type=int, default=20)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--threads", type=int, default=1)
    return ap.parse_args(argv)


if __name__ == "__main__":
    run(parse_args())
