import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from scenecrnn.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, main
from scenecrnn.data import CACHE_ENV, load_manifest
from scenecrnn.model import load_model
from scenecrnn.train import read_history

TINY = ["--hidden", "4", "--att-size", "4", "--conv-filters", "2,2,2", "--batch-size", "4"]


def _digest(folder):
    h = hashlib.sha256()
    for p in sorted(folder.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(folder).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--classes", "2", "--per-class", "3", "--test-per-class", "1", "--duration", "4",
                 "--seed", "7", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    code = main(["train", "--manifest", str(corpus / "manifest.csv"), "--epochs", "2", "--seed", "3",
                 "--out", str(run), "--lr", "1e-3"] + TINY)
    assert code == EXIT_OK
    return run


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_manifest_and_audio(tmp_path, capsys):
    assert main(["synth", "--classes", "4", "--per-class", "10", "--seed", "7", "--duration", "2",
                 "--out", str(tmp_path)]) == EXIT_OK
    ds = load_manifest(tmp_path / "manifest.csv")
    assert len(ds.items) == 40
    assert len(list((tmp_path / "audio").glob("*.wav"))) == 40
    assert "wrote 40 recordings" in capsys.readouterr().out


def test_synth_repeat_is_hash_equal(tmp_path):
    args = ["synth", "--classes", "3", "--per-class", "2", "--seed", "7", "--duration", "2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_synth_needs_two_classes(tmp_path, capsys):
    assert main(["synth", "--classes", "1", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "minimum classes" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# parser behaviour


def test_help_lists_flags():
    text = build_parser()._subparsers._group_actions[0].choices["train"].format_help()
    for flag in ("--manifest", "--features", "--model", "--epochs", "--batch-size", "--lr", "--seed",
                 "--checkpoint", "--out"):
        assert flag in text
    eval_help = build_parser()._subparsers._group_actions[0].choices["eval"].format_help()
    for flag in ("--svm", "--fuse-with", "--out"):
        assert flag in eval_help


def test_help_exits_zero():
    proc = subprocess.run([sys.executable, "-m", "scenecrnn", "train", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "--features {loggam,logmel}" in proc.stdout


@pytest.mark.parametrize("argv", [["synth", "--out", "x", "--bogus"], ["train", "--manifest", "m", "--model", "rnn"],
                                  ["frobnicate"], []])
def test_usage_errors_exit_one(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == EXIT_USAGE


def test_print_config_defaults(capsys):
    assert main(["train", "--manifest", "unused.csv", "--print-config"]) == EXIT_OK
    lines = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert lines["epochs"] == "500" and lines["batch_size"] == "100" and lines["lr"] == "0.0001"
    assert lines["H"] == "128" and lines["att_size"] == "64" and lines["C_svm"] == "0.1"
    assert lines["model"] == "att_crnn" and lines["features"] == "logmel"
    assert lines["conv_filters"] == "[64, 128, 256]"


def test_invalid_config_is_usage_error(corpus):
    assert main(["train", "--manifest", str(corpus / "manifest.csv"), "--conv-dropout", "1.5"]) == EXIT_USAGE


def test_missing_manifest_is_runtime_error(tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "none.csv"), "--epochs", "1"]) == EXIT_RUNTIME


# ---------------------------------------------------------------------------
# train / calibrate / eval


def test_train_writes_artifacts(trained):
    assert (trained / "model.crnn").exists() and (trained / "model.crnn.cfg").exists()
    assert (trained / "history.png").stat().st_size > 0
    hist = read_history(trained / "history.csv")
    assert [h.epoch for h in hist] == [1, 2]
    model, extra = load_model(trained / "model.crnn")
    assert model.kind == "att_crnn" and model.config.hidden == 4
    assert extra["class_names"] == ["scene00", "scene01"] and extra["seed"] == 3


def test_train_cnn_baseline(corpus, tmp_path):
    assert main(["train", "--manifest", str(corpus / "manifest.csv"), "--model", "cnn_baseline", "--epochs", "1",
                 "--features", "loggam", "--out", str(tmp_path)] + TINY) == EXIT_OK
    model, extra = load_model(tmp_path / "model.crnn")
    assert model.kind == "cnn_baseline" and extra["features"] == "loggam"


def test_train_same_seed_same_history(corpus, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--manifest", str(corpus / "manifest.csv"), "--epochs", "2", "--seed", "7",
                     "--out", str(tmp_path / name)] + TINY) == EXIT_OK
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()


def test_calibrate_and_eval(corpus, trained, capsys):
    manifest = str(corpus / "manifest.csv")
    ckpt = str(trained / "model.crnn")
    assert main(["calibrate", "--manifest", manifest, "--checkpoint", ckpt]) == EXIT_OK
    assert (trained / "model.crnn.svm").exists()
    capsys.readouterr()
    out = trained / "eval"
    assert main(["eval", "--manifest", manifest, "--checkpoint", ckpt, "--svm", ckpt + ".svm",
                 "--out", str(out)]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "metric,value"
    metrics = dict((k, float(v)) for k, v in (line.split(",") for line in lines[1:]))
    assert set(metrics) >= {"segment_accuracy", "recording_accuracy", "macro_f1", "macro_precision"}
    assert all(0 <= v <= 1 for v in metrics.values())
    rows = (out / "predictions.csv").read_text().splitlines()
    assert rows[0] == "recording_id,predicted_class,p_scene00,p_scene01"
    assert len(rows) == 3
    assert (out / "confusion.png").exists() and (out / "metrics.csv").exists()


def test_eval_fuse_with(corpus, trained, tmp_path, capsys):
    manifest = str(corpus / "manifest.csv")
    assert main(["train", "--manifest", manifest, "--epochs", "1", "--features", "logmel", "--seed", "1",
                 "--out", str(tmp_path)] + TINY) == EXIT_OK
    capsys.readouterr()
    assert main(["eval", "--manifest", manifest, "--checkpoint", str(trained / "model.crnn"),
                 "--fuse-with", str(tmp_path / "model.crnn")]) == EXIT_OK
    assert "recording_accuracy" in capsys.readouterr().out


def test_eval_rejects_class_mismatch(corpus, trained, tmp_path):
    other = tmp_path / "three"
    assert main(["synth", "--classes", "3", "--per-class", "2", "--duration", "2", "--out", str(other)]) == EXIT_OK
    assert main(["train", "--manifest", str(other / "manifest.csv"), "--epochs", "1", "--out", str(other / "run")]
                + TINY) == EXIT_OK
    code = main(["eval", "--manifest", str(corpus / "manifest.csv"), "--checkpoint", str(trained / "model.crnn"),
                 "--fuse-with", str(other / "run" / "model.crnn")])
    assert code == EXIT_USAGE


def test_missing_checkpoint(corpus, tmp_path, capsys):
    code = main(["calibrate", "--manifest", str(corpus / "manifest.csv"), "--checkpoint", str(tmp_path / "no.crnn")])
    assert code != EXIT_OK
    assert "no.crnn" in capsys.readouterr().err


def test_dump_attention(corpus, trained, tmp_path, capsys):
    assert main(["dump-attention", "--manifest", str(corpus / "manifest.csv"), "--checkpoint",
                 str(trained / "model.crnn"), "--segment", "1", "--out", str(tmp_path)]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    stem = f"{info['recording']}_seg01"
    mask = np.loadtxt(tmp_path / f"{stem}_mask.csv", delimiter=",", skiprows=1)[:, 1:]
    assert mask.shape == (8, 80)
    assert abs(mask.sum() - 1) < 1e-5
    assert (tmp_path / f"{stem}_attention.png").exists()
    assert abs(sum(info["posterior"]) - 1) < 1e-5


# ---------------------------------------------------------------------------
# feature cache location


def test_cache_env_and_flag_precedence(corpus, trained, tmp_path, monkeypatch):
    manifest = str(corpus / "manifest.csv")
    ckpt = str(trained / "model.crnn")
    monkeypatch.setenv(CACHE_ENV, str(tmp_path / "env"))
    assert main(["eval", "--manifest", manifest, "--checkpoint", ckpt]) == EXIT_OK
    assert any((tmp_path / "env").iterdir())
    assert main(["eval", "--manifest", manifest, "--checkpoint", ckpt, "--cache-dir", str(tmp_path / "flag")]) == 0
    assert any((tmp_path / "flag").iterdir())
