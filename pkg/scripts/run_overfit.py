"""Overfit a toy model on 4 synthetic pairs per seed and report training-set PR/SR.

    python3 scripts/run_overfit.py --seeds 0 1 2 3 --steps 1000
"""
import argparse
import json

from vlunitrack.experiments import overfit_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--pairs", type=int, default=4)
    args = ap.parse_args()
    wins = 0
    for seed in args.seeds:
        r = overfit_run(seed, steps=args.steps, num_pairs=args.pairs)
        wins += r.success
        print(json.dumps({"seed": seed, "success": r.success, "seconds": round(r.seconds, 1),
                          "first_loss": r.first_loss, "final_loss": r.final_loss,
                          "views": {v: {"pr": m.pr, "sr": m.sr} for v, m in r.report.views.items()}}))
    print(f"{wins}/{len(args.seeds)} seeds reach PR and SR >= 0.9 on both views")


if __name__ == "__main__":
    main()
