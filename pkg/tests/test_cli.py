import csv

import pytest

from vlunitrack.cli import main
from vlunitrack.config import TrackerConfig, config_to_text
from vlunitrack.synthdata import SceneSpec, spec_to_text

SMALL_CFG = TrackerConfig(patch_size=8, template_size=32, search_size=64, embed_dim=16, encoder_depth=1,
                          attn_heads=2, frozen_embed_dim=16).replace(batch_size=2, samples_per_epoch=4, epochs=1)


@pytest.fixture
def files(tmp_path):
    spec = tmp_path / "scene.txt"
    spec.write_text(spec_to_text(SceneSpec(num_frames=4, image_size=64, seed=1)))
    cfg = tmp_path / "cfg.txt"
    cfg.write_text(config_to_text(SMALL_CFG))
    return tmp_path, spec, cfg


def test_help_lists_subcommands(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for cmd in ("gen-data", "train", "eval", "track"):
        assert cmd in out


def test_missing_flag_is_usage_error(capsys):
    assert main(["eval", "--data", "d", "--report", "r.json"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_unknown_subcommand_and_flag(capsys):
    assert main(["fly"]) == 1
    assert main(["gen-data", "--spec", "s", "--out", "o", "--num-seqs", "1", "--bogus"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_invalid_config_is_validation_error(files):
    tmp, spec, cfg = files
    assert main(["gen-data", "--spec", str(spec), "--out", str(tmp / "d"), "--num-seqs", "1"]) == 0
    bad = tmp / "bad.txt"
    bad.write_text("search_size = 100\n")
    assert main(["train", "--config", str(bad), "--data", str(tmp / "d"), "--out", str(tmp / "m")]) == 1
    bad.write_text("no_such_key = 1\n")
    assert main(["train", "--config", str(bad), "--data", str(tmp / "d"), "--out", str(tmp / "m")]) == 1
    assert main(["gen-data", "--spec", str(spec), "--out", str(tmp / "e"), "--num-seqs", "0"]) == 1


def test_runtime_failures_exit_2(files, capsys):
    tmp, _, cfg = files
    (tmp / "empty").mkdir()
    assert main(["train", "--config", str(cfg), "--data", str(tmp / "empty"), "--out", str(tmp / "m")]) == 2
    assert "no sequences found" in capsys.readouterr().err
    assert main(["eval", "--ckpt", str(tmp / "none.ckpt"), "--data", str(tmp), "--report", str(tmp / "r")]) == 2
    assert main(["gen-data", "--spec", str(tmp / "nope.txt"), "--out", str(tmp / "d"), "--num-seqs", "1"]) == 2


def test_pipeline_and_track_outputs(files):
    tmp, spec, cfg = files
    data, ckpt = tmp / "data", tmp / "m.ckpt"
    assert main(["gen-data", "--spec", str(spec), "--out", str(data), "--num-seqs", "2"]) == 0
    log = tmp / "log.jsonl"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(ckpt),
                 "--steps", "2", "--log", str(log)]) == 0
    assert len(log.read_text().splitlines()) == 2
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(tmp / "r.json")]) == 0
    assert (tmp / "r_precision_uav.csv").exists()
    outs = []
    for k in range(2):
        out = tmp / f"track{k}"
        assert main(["track", "--ckpt", str(ckpt), "--seq", str(data / "seq_0000"), "--out", str(out)]) == 0
        outs.append(out)
    for view in ("uav", "ground"):
        preds = (outs[0] / view / "predictions.txt").read_text()
        assert len(preds.splitlines()) == 4
        assert preds == (outs[1] / view / "predictions.txt").read_text()
        with open(outs[0] / view / "errors.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["frame", "cle_px", "iou"] and len(rows) == 5
        assert float(rows[1][1]) == 0.0  # frame 0 is initialized from gt
        assert (outs[0] / view / "errors.csv").read_bytes() == (outs[1] / view / "errors.csv").read_bytes()


def test_track_without_gt_needs_init(files):
    tmp, spec, cfg = files
    data, ckpt = tmp / "data", tmp / "m.ckpt"
    main(["gen-data", "--spec", str(spec), "--out", str(data), "--num-seqs", "1"])
    main(["train", "--config", str(cfg), "--data", str(data), "--out", str(ckpt), "--steps", "1",
          "--log", str(tmp / "log")])
    seq = data / "seq_0000"
    first = {}
    for view in ("uav", "ground"):
        gt = seq / view / "groundtruth.txt"
        first[view] = gt.read_text().splitlines()[0]
        gt.unlink()
    assert main(["track", "--ckpt", str(ckpt), "--seq", str(seq), "--out", str(tmp / "t")]) == 1
    for view in ("uav", "ground"):
        (seq / view / "init.txt").write_text(first[view] + "\n")
    assert main(["track", "--ckpt", str(ckpt), "--seq", str(seq), "--out", str(tmp / "t")]) == 0
    assert not (tmp / "t" / "uav" / "errors.csv").exists()
    assert len((tmp / "t" / "uav" / "predictions.txt").read_text().splitlines()) == 4
    assert main(["track", "--ckpt", str(ckpt), "--seq", str(tmp / "missing"), "--out", str(tmp / "t")]) == 2
