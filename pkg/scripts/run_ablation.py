"""Full model vs. the plain shared-encoder baseline on held-out occluded pairs.

    python3 scripts/run_ablation.py --seeds 0 1 2 --steps 1000
"""
import argparse

from vlunitrack.experiments import ablation_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--train-pairs", type=int, default=16)
    ap.add_argument("--test-pairs", type=int, default=20)
    args = ap.parse_args()
    res = ablation_run(seeds=tuple(args.seeds), steps=args.steps, train_pairs=args.train_pairs,
                       test_pairs=args.test_pairs, log=print)
    print(f"mean SR: full {res.full_mean:.4f}  baseline {res.base_mean:.4f}  ({res.seconds:.0f}s)")


if __name__ == "__main__":
    main()
