"""CLI tests: command plumbing, manifests, file formats, idempotency."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from avse import audio, cli, video
from avse.cli import main, quantize_logmel


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run(["synth", "--seed", "11", "--count", "3", "--duration", "0.6",
                "--snr-db", "0", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("run")
    config = tmp_path_factory.mktemp("cfg") / "cfg.json"
    config.write_text(json.dumps({
        "model": {"num_layers": 2, "audio_channels": [2, 4],
                  "video_channels": [2, 4], "lstm_hidden": 8},
        "train": {"max_epochs": 2, "batch_size": 2},
    }))
    assert run(["train", "--data", str(dataset), "--out", str(out),
                "--config", str(config), "--seed", "7"]) == 0
    return out


def test_synth_outputs_and_index(dataset):
    index = json.loads((dataset / "index.json").read_text())
    assert len(index["utterances"]) == 3
    for entry in index["utterances"]:
        for key in ("clean", "noisy", "video"):
            assert (dataset / entry[key]).exists()
    wav = audio.read_wav(dataset / index["utterances"][0]["clean"])
    assert len(wav) == int(0.6 * audio.SAMPLE_RATE)
    segs = video.load_segments(dataset / index["utterances"][0]["video"])
    assert len(segs) == 3


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["synth", "--seed", "3", "--count", "2", "--duration",
                    "0.4", "--out", str(out)]) == 0
    for name in ("utt0000.clean.wav", "utt0000.noisy.wav", "utt0000.video.avsg",
                 "index.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    # manifests differ at most in wall clock
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    ma.pop("wall_clock_s"), mb.pop("wall_clock_s")
    ma["config"].pop("out"), mb["config"].pop("out")
    ma_out = {Path(k).name: v for k, v in ma.pop("outputs").items()}
    mb_out = {Path(k).name: v for k, v in mb.pop("outputs").items()}
    assert ma == mb and ma_out == mb_out


def test_train_outputs(trained):
    assert (trained / "best.ckpt").exists()
    csv = (trained / "loss_history.csv").read_text().strip().split("\n")
    assert csv[0] == "epoch,step,train_loss,val_loss"
    assert len(csv) > 1
    assert (trained / "loss_curve.png").exists()
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["config"]["train"]["max_epochs"] == 2


def test_train_rejects_unknown_config_field(tmp_path, dataset):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"model": {"bogus_field": 1}}))
    code = run(["train", "--data", str(dataset), "--out",
                str(tmp_path / "o"), "--config", str(config)])
    assert code == cli.EXIT_USAGE


def test_train_resume_continues_epochs(tmp_path, dataset, trained):
    out = tmp_path / "resumed"
    assert run(["train", "--data", str(dataset), "--out", str(out),
                "--resume", str(trained / "best.ckpt"), "--epochs", "1",
                "--seed", "7"]) == 0
    from avse.model import load_checkpoint
    first = load_checkpoint(trained / "best.ckpt")
    second = load_checkpoint(out / "best.ckpt")
    assert second.epoch > first.epoch


def test_enhance_roundtrip_and_video_guard(tmp_path, dataset, trained):
    out = tmp_path / "enh"
    wav = str(dataset / "utt0000.noisy.wav")
    vid = str(dataset / "utt0000.video.avsg")
    ckpt = str(trained / "best.ckpt")
    assert run(["enhance", "--ckpt", ckpt, "--wav", wav, "--video", vid,
                "--out", str(out), "--save-mel"]) == 0
    enhanced = audio.read_wav(out / "enhanced.wav")
    original = audio.read_wav(wav)
    assert abs(len(enhanced) - len(original)) <= audio.HOP
    assert (out / "predicted_logmel.csv").exists()
    # no video and no --zero-video: usage error
    code = run(["enhance", "--ckpt", ckpt, "--wav", wav,
                "--out", str(tmp_path / "enh2")])
    assert code == cli.EXIT_USAGE
    assert run(["enhance", "--ckpt", ckpt, "--wav", wav, "--zero-video",
                "--out", str(tmp_path / "enh3")]) == 0


def test_enhance_deterministic(tmp_path, dataset, trained):
    args = ["enhance", "--ckpt", str(trained / "best.ckpt"),
            "--wav", str(dataset / "utt0001.noisy.wav"),
            "--video", str(dataset / "utt0001.video.avsg")]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(args + ["--out", str(a)]) == 0
    assert run(args + ["--out", str(b)]) == 0
    assert (a / "enhanced.wav").read_bytes() == (b / "enhanced.wav").read_bytes()


def test_evaluate_report(tmp_path, dataset, trained):
    out = tmp_path / "eval"
    assert run(["evaluate", "--ckpt", str(trained / "best.ckpt") + ":tiny",
                "--data", str(dataset), "--out", str(out),
                "--snr", "0", "--noise", "white"]) == 0
    from avse.metrics import EvalReport
    report = EvalReport.from_csv_text((out / "report.csv").read_text())
    variants = {r.variant for r in report.rows}
    assert variants == {"unprocessed", "tiny"}
    assert len(report.rows) == 2  # variants x snrs x noises
    assert (out / "report.png").exists()
    assert (out / "report.txt").exists()
    for row in report.rows:
        if row.variant == "unprocessed":
            assert row.delta_stoi == 0.0


def test_spectrogram_outputs(tmp_path, dataset):
    out = tmp_path / "spec"
    wav = dataset / "utt0000.clean.wav"
    assert run(["spectrogram", "--wav", str(wav), "--out", str(out)]) == 0
    pgm = (out / "logmel.pgm").read_bytes()
    assert pgm.startswith(b"P5\n")
    header, payload = pgm.split(b"\n255\n", 1)
    width, height = header.split(b"\n")[1].split()
    t = audio.frame_count(len(audio.read_wav(wav)))
    assert (int(width), int(height)) == (t, 80)
    assert len(payload) == 80 * t
    # CSV and PGM derive from the same matrix
    rows = [[float(v) for v in line.split(",")]
            for line in (out / "logmel.csv").read_text().strip().split("\n")]
    matrix = np.array(rows)
    assert hashlib.sha256(quantize_logmel(matrix).tobytes()).hexdigest() == \
        hashlib.sha256(payload).hexdigest()
    assert (out / "logmel.png").exists()


def test_spectrogram_silent_input_uniform_image(tmp_path):
    wav_path = tmp_path / "silence.wav"
    audio.write_wav(wav_path, np.zeros(16000))
    out = tmp_path / "spec"
    assert run(["spectrogram", "--wav", str(wav_path), "--out", str(out)]) == 0
    payload = (out / "logmel.pgm").read_bytes().split(b"\n255\n", 1)[1]
    assert set(payload) == {0}


def test_bad_inputs_exit_codes(tmp_path):
    bad = tmp_path / "nope.wav"
    bad.write_bytes(b"garbage")
    assert run(["spectrogram", "--wav", str(bad),
                "--out", str(tmp_path / "s")]) == cli.EXIT_DATA
    with pytest.raises(SystemExit) as exc:
        run(["synth"])   # missing --out
    assert exc.value.code == cli.EXIT_USAGE


def test_train_seed_reproducibility(tmp_path, dataset):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({
        "model": {"num_layers": 2, "audio_channels": [2, 4],
                  "video_channels": [2, 4], "lstm_hidden": 8},
        "train": {"max_epochs": 2, "batch_size": 2},
    }))
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["train", "--data", str(dataset), "--out", str(out),
                    "--config", str(config), "--seed", "13"]) == 0
    assert (a / "loss_history.csv").read_bytes() == \
        (b / "loss_history.csv").read_bytes()
    assert (a / "best.ckpt").read_bytes() == (b / "best.ckpt").read_bytes()


def test_ablate_report_rows(tmp_path, dataset):
    out = tmp_path / "abl"
    assert run(["ablate", "--data", str(dataset), "--out", str(out),
                "--steps", "2", "--seed", "3", "--snr", "0",
                "--noise", "white"]) == 0
    from avse.metrics import EvalReport
    report = EvalReport.from_csv_text((out / "report.csv").read_text())
    variants = [r.variant for r in report.rows]
    assert sorted(variants) == sorted(
        ["unprocessed", "full", "no_filtering", "no_balancing", "no_attention"])
    counts = json.loads((out / "parameter_counts.json").read_text())
    assert counts["full"] > counts["no_filtering"] > counts["no_balancing"] \
        > counts["no_attention"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3
    for row in report.rows:
        if row.variant == "unprocessed":
            assert row.delta_stoi == 0.0


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("AVSE_SEED", "21")
    out = tmp_path / "env"
    assert run(["synth", "--count", "1", "--duration", "0.2",
                "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 21
