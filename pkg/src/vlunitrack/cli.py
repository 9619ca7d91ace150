"""Command-line entry point.

    vlunitrack gen-data --spec scene.txt --out data/ --num-seqs 8
    vlunitrack train --config cfg.txt --data data/ --out model.ckpt [--log steps.jsonl] [--steps N]
    vlunitrack eval --ckpt model.ckpt --data data/ --report report.json
    vlunitrack track --ckpt model.ckpt --seq data/seq_0000 --out preds/

Exit codes: 0 success, 1 usage/validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from vlunitrack.config import VIEWS, Box, ConfigError, load_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vlunitrack", description="Dual-view UAV/ground tracker toolkit.")
    sub = p.add_subparsers(dest="command", metavar="{gen-data,train,eval,track}",
                           parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="generate a synthetic paired-view dataset")
    g.add_argument("--spec", required=True, help="scene spec file (key=value)")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--num-seqs", type=int, required=True, help="number of sequence pairs")

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--config", required=True, help="tracker config file (key=value)")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="checkpoint path to write")
    t.add_argument("--log", help="write per-step JSON records here instead of stdout")
    t.add_argument("--steps", type=int, help="override the number of optimizer steps")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="JSON report path; curve CSVs go next to it")

    k = sub.add_parser("track", help="run a checkpoint over one sequence pair")
    k.add_argument("--ckpt", required=True)
    k.add_argument("--seq", required=True, help="sequence directory (<seq>/<view>/frame_*.png)")
    k.add_argument("--out", required=True, help="output directory")
    return p


def cmd_gen_data(args) -> None:
    from vlunitrack.synthdata import generate_dataset, load_spec, save_dataset
    if args.num_seqs < 1:
        raise ConfigError("--num-seqs must be >= 1")
    spec = load_spec(args.spec)
    save_dataset(generate_dataset(spec, args.num_seqs), args.out)


def cmd_train(args) -> None:
    from vlunitrack.checkpoint import save_checkpoint
    from vlunitrack.synthdata import load_dataset
    from vlunitrack.trainer import jsonl_logger, train
    cfg = load_config(args.config)
    if args.steps is not None and args.steps < 1:
        raise ConfigError("--steps must be >= 1")
    pairs = load_dataset(args.data)
    if args.log:
        Path(args.log).parent.mkdir(parents=True, exist_ok=True)
        with open(args.log, "w", encoding="utf-8") as fh:
            ckpt, _, _ = train(cfg, pairs, steps=args.steps, log=jsonl_logger(fh))
    else:
        ckpt, _, _ = train(cfg, pairs, steps=args.steps, log=jsonl_logger(sys.stdout))
    save_checkpoint(ckpt, args.out)


def cmd_eval(args) -> None:
    from vlunitrack.checkpoint import load_checkpoint
    from vlunitrack.synthdata import load_dataset
    from vlunitrack.trainer import evaluate_checkpoint
    ckpt = load_checkpoint(args.ckpt)
    report = evaluate_checkpoint(ckpt, load_dataset(args.data))
    report.save(args.report)
    avg = report.average
    print(f"PR={avg['pr']:.4f} SR={avg['sr']:.4f} "
          + " ".join(f"{v}: PR={m.pr:.4f} SR={m.sr:.4f}" for v, m in report.views.items()))


def cmd_track(args) -> None:
    import numpy as np

    from vlunitrack.checkpoint import load_checkpoint
    from vlunitrack.metrics import cle, iou
    from vlunitrack.synthdata import load_sequence
    from vlunitrack.trainer import ModelTracker, model_from_checkpoint
    pair = load_sequence(args.seq, with_gt=False)
    has_gt = all(np.isfinite(pair.boxes[v]).all() for v in VIEWS)
    init_path = {v: Path(args.seq) / v.value / "init.txt" for v in VIEWS}
    if has_gt:
        init = {v: pair.box(v, 0) for v in VIEWS}
    elif all(p.is_file() for p in init_path.values()):
        W, H = pair.image_size
        init = {v: Box.from_pixels(*map(float, init_path[v].read_text().strip().split(",")[-4:]), W, H)
                for v in VIEWS}
    else:
        raise ConfigError(f"{args.seq}: need groundtruth.txt or init.txt per view for the first box")
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    preds = ModelTracker(model)([pair], [init])[0]
    out = Path(args.out)
    W, H = pair.image_size
    for v in VIEWS:
        vdir = out / v.value
        vdir.mkdir(parents=True, exist_ok=True)
        with open(vdir / "predictions.txt", "w", encoding="utf-8", newline="\n") as fh:
            for t, b in enumerate(preds[v]):
                x, y, w, h = Box(*b).to_pixels(W, H)
                fh.write(f"{t},{x!r},{y!r},{w!r},{h!r}\n")
        if has_gt:
            with open(vdir / "errors.csv", "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(["frame", "cle_px", "iou"])
                for t, b in enumerate(preds[v]):
                    pb, gb = Box(*b), pair.box(v, t)
                    wr.writerow([t, repr(cle(pb, gb, W, H)), repr(iou(pb, gb))])


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "track": cmd_track}


def main(argv=None) -> int:
    from vlunitrack.checkpoint import CheckpointError
    from vlunitrack.synthdata import DatasetError
    from vlunitrack.trainer import TrainingError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        COMMANDS[args.command](args)
    except ConfigError as e:
        sys.stderr.write(f"vlunitrack {args.command}: invalid input: {e}\n")
        return EXIT_USAGE
    except (DatasetError, CheckpointError, TrainingError, OSError) as e:
        sys.stderr.write(f"vlunitrack {args.command}: {e}\n")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
