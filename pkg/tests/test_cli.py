import filecmp
import logging

import numpy as np
import pytest

from vssanet.cli import main
from vssanet.config import ConfigError, TrainConfig, dump_config, load_config, parse_config_text
from vssanet.dataset import POLE_COLOR, read_annotations, read_ppm
from vssanet.trainer import load_checkpoint


def gen(out, *extra):
    return main(["gen-data", "--out", str(out), "--train", "8", "--test", "4", "--seed", "3", "--size", "128",
                 *extra])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert gen(root / "data") == 0
    ckpt = root / "m.ckpt"
    rc = main(["train", "--data", str(root / "data"), "--out", str(ckpt), "--iterations", "2", "--width", "0.125",
               "--base-size", "128", "--scales", "1.0", "--batch-size", "2", "--seed", "1"])
    assert rc == 0
    return root, ckpt


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_config_roundtrip():
    cfg = TrainConfig(learning_rate=0.01, scales=(0.5, 1.0), orientation="none", width=0.125)
    train, extra = parse_config_text(dump_config(cfg, {"data": "d"}), {"data": ""})
    assert TrainConfig(**train) == cfg and extra == {"data": "d"}


def test_unknown_key_is_rejected_with_line():
    with pytest.raises(ConfigError, match=r"<config>:2: unknown config key 'learnin_rate'"):
        parse_config_text("# comment\nlearnin_rate = 0.1\n")


@pytest.mark.parametrize("text", ["width = wide", "learning_rate 0.1", "scales = ", "orientation = diagonal",
                                  "batch_size = 0"])
def test_bad_values(tmp_path, text):
    (tmp_path / "c.cfg").write_text(text + "\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.cfg")


def test_overrides_win(tmp_path):
    (tmp_path / "c.cfg").write_text("learning_rate = 0.1\niterations = 7\n")
    cfg, _ = load_config(tmp_path / "c.cfg", {"iterations": 9, "seed": None})
    assert cfg.learning_rate == 0.1 and cfg.iterations == 9 and cfg.seed == 0


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def test_gen_data_counts(workspace):
    root, _ = workspace
    assert len(list((root / "data" / "images").glob("*.ppm"))) == 12
    lines = [l for l in (root / "data" / "train.txt").read_text().splitlines() if l and not l.startswith("#")]
    assert len({l.split()[0] for l in lines}) == 8
    assert (root / "data" / "gen-data.cfg").exists() and (root / "data" / "manifest.txt").exists()


def test_gen_data_is_deterministic(tmp_path):
    assert gen(tmp_path / "a") == 0 and gen(tmp_path / "b") == 0
    assert not filecmp.dircmp(tmp_path / "a" / "images", tmp_path / "b" / "images").diff_files
    assert (tmp_path / "a" / "train.txt").read_bytes() == (tmp_path / "b" / "train.txt").read_bytes()


def test_gen_data_reproducible_from_resolved_config(tmp_path):
    assert gen(tmp_path / "a", "--distractors", "2-3") == 0
    assert main(["gen-data", "--config", str(tmp_path / "a" / "gen-data.cfg"), "--out", str(tmp_path / "b")]) == 0
    assert not filecmp.dircmp(tmp_path / "a" / "images", tmp_path / "b" / "images").diff_files


def test_every_labelled_sign_has_a_pole(tmp_path):
    assert gen(tmp_path / "d", "--pole-rate", "1.0", "--distractors", "2") == 0
    ann = read_annotations(tmp_path / "d" / "train.txt")
    for rel, objects in ann.items():
        img = read_ppm(tmp_path / "d" / rel)
        for _, b in objects:
            below = img[int(b.ymax), int(b.xmin):int(b.xmax)] if int(b.ymax) < img.shape[0] else None
            assert below is None or (below == POLE_COLOR).all(-1).any()


def test_non_empty_output_needs_force(tmp_path):
    assert gen(tmp_path / "d") == 0
    assert gen(tmp_path / "d") == 1
    assert gen(tmp_path / "d", "--force") == 0


@pytest.mark.parametrize("argv", [["gen-data", "--train", "x"], ["gen-data", "--distractors", "3-1"],
                                  ["gen-data", "--pole-rate", "2"], ["frobnicate"], []])
def test_usage_errors_exit_one(tmp_path, argv):
    if argv and argv[0] == "gen-data":
        argv = argv + ["--out", str(tmp_path / "o")]
    with pytest.raises(SystemExit) as exc:
        raise SystemExit(main(argv))
    assert exc.value.code == 1


# ---------------------------------------------------------------------------
# train / eval / detect
# ---------------------------------------------------------------------------

def test_train_writes_checkpoint_history_and_config(workspace):
    root, ckpt = workspace
    ck = load_checkpoint(ckpt)
    assert ck.iteration == 2 and ck.config.width == 0.125
    hist = [l for l in (root / "m.ckpt.loss.txt").read_text().splitlines() if not l.startswith("#")]
    assert len(hist) == 2
    assert "learning_rate = 0.0003" in (root / "m.ckpt.cfg").read_text()


def test_missing_learning_rate_defaults_and_logs(workspace, tmp_path, caplog):
    root, _ = workspace
    (tmp_path / "c.cfg").write_text("width = 0.125\nbase_size = 128\nscales = 1.0\niterations = 1\nbatch_size = 1\n")
    caplog.set_level(logging.INFO, logger="vssanet")
    rc = main(["train", "--config", str(tmp_path / "c.cfg"), "--data", str(root / "data"), "--out",
               str(tmp_path / "x.ckpt")])
    assert rc == 0 and "defaults applied" in caplog.text and "learning_rate" in caplog.text
    assert load_checkpoint(tmp_path / "x.ckpt").config.learning_rate == 0.0003


def test_orientation_none_checkpoint_has_no_sequence_tensors(workspace, tmp_path):
    root, _ = workspace
    rc = main(["train", "--data", str(root / "data"), "--out", str(tmp_path / "n.ckpt"), "--iterations", "1",
               "--width", "0.125", "--base-size", "128", "--scales", "1.0", "--orientation", "none"])
    assert rc == 0
    names = load_checkpoint(tmp_path / "n.ckpt").tensors
    assert names and not any(n.startswith("vssa") for n in names)


def test_bad_dataset_path_exits_two(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "m.ckpt")]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_class_count_mismatch_is_an_error(workspace, tmp_path):
    root, _ = workspace
    rc = main(["train", "--data", str(root / "data"), "--out", str(tmp_path / "m.ckpt"), "--num-classes", "5",
               "--iterations", "1", "--width", "0.125", "--base-size", "128"])
    assert rc == 2


def test_eval_writes_reports(workspace, tmp_path):
    root, ckpt = workspace
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(root / "data"), "--out", str(tmp_path / "e")]) == 0
    for name in ("report.txt", "report.csv", "matches.txt", "eval.cfg"):
        assert (tmp_path / "e" / name).exists()
    assert (tmp_path / "e" / "report.csv").read_text().splitlines()[-1].startswith("mAP,")


def test_eval_width_mismatch_names_tensor(workspace, tmp_path, capsys):
    root, ckpt = workspace
    (tmp_path / "wide.cfg").write_text("width = 1.0\nbase_size = 128\n")
    rc = main(["eval", "--ckpt", str(ckpt), "--model-config", str(tmp_path / "wide.cfg"), "--data", str(root / "data"),
               "--out", str(tmp_path / "e")])
    assert rc == 2 and "tensor features." in capsys.readouterr().err


def test_corrupt_checkpoint_exits_two(workspace, tmp_path):
    root, ckpt = workspace
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(ckpt.read_bytes()[:50])
    (tmp_path / "bad.ckpt.cfg").write_text((root / "m.ckpt.cfg").read_text())
    assert main(["eval", "--ckpt", str(bad), "--data", str(root / "data"), "--out", str(tmp_path / "e")]) == 2


def test_detect_without_detections_copies_image(workspace, tmp_path):
    root, ckpt = workspace
    image = sorted((root / "data" / "images").glob("test_*.ppm"))[0]
    out = tmp_path / "o.ppm"
    assert main(["detect", "--ckpt", str(ckpt), "--image", str(image), "--out", str(out),
                 "--score-thresh", "0.99"]) == 0
    assert out.read_bytes() == image.read_bytes()
    assert out.with_suffix(".txt").read_text() == ""


def test_detect_draws_outlines(workspace, tmp_path):
    root, ckpt = workspace
    image = sorted((root / "data" / "images").glob("test_*.ppm"))[0]
    out = tmp_path / "o.ppm"
    assert main(["detect", "--ckpt", str(ckpt), "--image", str(image), "--out", str(out),
                 "--score-thresh", "0.0"]) == 0
    lines = out.with_suffix(".txt").read_text().splitlines()
    assert lines and not np.array_equal(read_ppm(out), read_ppm(image))


def test_detect_bad_image_exits_two(workspace, tmp_path):
    _, ckpt = workspace
    (tmp_path / "x.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    assert main(["detect", "--ckpt", str(ckpt), "--image", str(tmp_path / "x.ppm"), "--out",
                 str(tmp_path / "o.ppm")]) == 2


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def test_gradcheck_single_op(capsys):
    assert main(["gradcheck", "--op", "lstm_cell"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_gradcheck_unknown_op_is_usage_error():
    assert main(["gradcheck", "--op", "nope"]) == 1
