"""Operator entry point: data synthesis, training, enhancement, evaluation,
ablation sweeps, spectrogram export.

Every command writes a manifest.json next to its outputs (command, resolved
configuration, seed, input/output checksums, wall clock). Exit codes:
0 success, 2 usage/config error, 3 data or file-format error, 4 numeric
failure. AVSE_SEED serves as the seed fallback when --seed is absent.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import audio, metrics, video
from .errors import AvseError, ConfigError, DataError, FormatError, NumericError
from .model import (ModelConfig, build_model, enhance_waveform,
                    fit_feature_stats, load_checkpoint, save_checkpoint)
from .training import TrainConfig, train

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

ABLATION_VARIANTS = (
    ("full", {}),
    ("no_filtering", {"disable_filtering": True}),
    ("no_balancing", {"disable_balancing": True}),
    ("no_attention", {"disable_attention": True}),
)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items() if k != "func"}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return repr(value)


def _write_manifest(out_dir: Path, command: str, config: dict, seed,
                    inputs, outputs, wall_clock: float):
    manifest = {
        "command": command,
        "config": _jsonable(config),
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "wall_clock_s": wall_clock,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _resolve_seed(value):
    if value is not None:
        return value
    env = os.environ.get("AVSE_SEED")
    return int(env) if env else 0


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- dataset on disk ------------------------------------------------------------


@dataclass
class LoadedUtterance:
    utterance_id: str
    clean: np.ndarray
    mixture: np.ndarray
    segments: list
    snr_db: float
    seed: int


def load_dataset(data_dir) -> list:
    data_dir = Path(data_dir)
    index_path = data_dir / "index.json"
    if not index_path.exists():
        raise FormatError(f"{index_path}: dataset index not found")
    index = json.loads(index_path.read_text())
    out = []
    for entry in index["utterances"]:
        clean = audio.read_wav(data_dir / entry["clean"])
        mixture = audio.read_wav(data_dir / entry["noisy"])
        segments = video.load_segments(data_dir / entry["video"])
        out.append(LoadedUtterance(entry["id"], clean, mixture, segments,
                                   entry["snr_db"], entry["seed"]))
    return out


def utterances_to_examples(utts) -> list:
    return [video.utterance_examples(u.utterance_id, u.clean, u.mixture,
                                     u.segments, u.snr_db)
            for u in utts]


# -- synth ------------------------------------------------------------------


def cmd_synth(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args)
    seed = _resolve_seed(args.seed)
    entries = []
    outputs = []
    for i in range(args.count):
        utt_seed = seed + i
        utt = video.synth_utterance(utt_seed, args.duration, args.snr_db,
                                    args.noise)
        base = f"utt{i:04d}"
        clean_path = out / f"{base}.clean.wav"
        noisy_path = out / f"{base}.noisy.wav"
        video_path = out / f"{base}.video.avsg"
        audio.write_wav(clean_path, utt.clean)
        audio.write_wav(noisy_path, utt.mixture)
        video.save_segments(video_path, utt.segments)
        outputs += [clean_path, noisy_path, video_path]
        entries.append({
            "id": utt.utterance_id, "clean": clean_path.name,
            "noisy": noisy_path.name, "video": video_path.name,
            "snr_db": utt.snr_db, "seed": utt_seed,
            "duration_s": utt.duration_s, "noise": args.noise,
        })
    index_path = out / "index.json"
    index_path.write_text(json.dumps(
        {"sample_rate": audio.SAMPLE_RATE, "utterances": entries},
        sort_keys=True, indent=2) + "\n")
    outputs.append(index_path)
    _write_manifest(out, "synth", vars(args) | {"seed": seed}, seed, [],
                    outputs, time.monotonic() - t0)
    print(f"wrote {args.count} utterances to {out}")
    return 0


# -- train ------------------------------------------------------------------


def _load_config_file(path):
    raw = json.loads(Path(path).read_text())
    extra = set(raw) - {"model", "train"}
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    return raw.get("model", {}), raw.get("train", {})


def _train_config_from(train_dict: dict, args, seed) -> TrainConfig:
    known = set(TrainConfig.__dataclass_fields__)
    bad = set(train_dict) - known
    if bad:
        raise ConfigError(f"unknown train config fields: {sorted(bad)}")
    cfg = TrainConfig(**train_dict)
    if args.epochs is not None:
        cfg = replace(cfg, max_epochs=args.epochs)
    if args.batch_size is not None:
        cfg = replace(cfg, batch_size=args.batch_size)
    if args.lr is not None:
        cfg = replace(cfg, learning_rate=args.lr)
    if args.steps is not None:
        cfg = replace(cfg, max_steps=args.steps)
    return replace(cfg, seed=seed)


def _split_train_val(utts, seed, val_fraction=0.25):
    order = np.random.default_rng(seed).permutation(len(utts))
    n_val = max(1, int(round(val_fraction * len(utts))))
    if len(utts) < 2:
        return [utts[i] for i in order], [utts[i] for i in order]
    val_idx = set(order[:n_val].tolist())
    train_set = [utts[i] for i in order if i not in val_idx]
    val_set = [utts[i] for i in sorted(val_idx)]
    return train_set, val_set


def cmd_train(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args)
    seed = _resolve_seed(args.seed)
    model_dict, train_dict = ({}, {}) if args.config is None \
        else _load_config_file(args.config)
    train_cfg = _train_config_from(train_dict, args, seed)

    utts = load_dataset(args.data)
    examples = utterances_to_examples(utts)
    train_set, val_set = _split_train_val(examples, seed)

    start_epoch = 0
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        model = ckpt.build()
        start_epoch = ckpt.epoch + 1
        optimizer_state = (ckpt.adam_m, ckpt.adam_v, ckpt.adam_step)
    else:
        mean, std = fit_feature_stats([e for seq in train_set for e in seq])
        model_cfg = ModelConfig.from_dict(
            model_dict | {"feature_mean": mean, "feature_std": std})
        model = build_model(model_cfg, seed=seed)
        optimizer_state = None

    result = train(model, train_set, val_set, train_cfg,
                   optimizer_state=optimizer_state)

    best = build_model(model.config, seed=seed)
    best.load_state(result.best_params, result.best_buffers)
    ckpt_path = out / "best.ckpt"
    m_state, v_state, t_state = result.best_adam
    save_checkpoint(ckpt_path, best, epoch=start_epoch + result.best_epoch,
                    val_loss=result.best_val_loss, adam_m=m_state,
                    adam_v=v_state, adam_step=t_state)

    for row in result.history:
        row.epoch += start_epoch
    csv_path = out / "loss_history.csv"
    csv_path.write_text(result.history_csv())
    from . import figures
    curve_path = out / "loss_curve.png"
    figures.save_loss_curve(result.history, curve_path)

    inputs = [Path(args.data) / "index.json"]
    if args.config:
        inputs.append(Path(args.config))
    _write_manifest(out, "train",
                    {"train": asdict(train_cfg), "model": asdict(model.config),
                     "resume": args.resume, "data": str(args.data)},
                    seed, inputs, [ckpt_path, csv_path, curve_path],
                    time.monotonic() - t0)
    print(f"best validation loss {result.best_val_loss:.6g} "
          f"(epoch {start_epoch + result.best_epoch}); checkpoint at {ckpt_path}")
    return 0


# -- enhance ------------------------------------------------------------------


def cmd_enhance(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args)
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build()
    mixture = audio.read_wav(args.wav)
    if args.video is not None:
        segments = video.load_segments(args.video)
    elif model.config.disable_video or args.zero_video:
        segments = None
    else:
        raise ConfigError(
            "checkpoint was trained with video input; pass --video or "
            "--zero-video to proceed without it")
    wave, logmel = enhance_waveform(model, mixture, segments)
    wav_path = out / "enhanced.wav"
    audio.write_wav(wav_path, wave)
    outputs = [wav_path]
    if args.save_mel:
        mel_path = out / "predicted_logmel.csv"
        mel_path.write_text(_matrix_csv(logmel))
        outputs.append(mel_path)
    inputs = [Path(args.ckpt), Path(args.wav)]
    if args.video:
        inputs.append(Path(args.video))
    _write_manifest(out, "enhance", vars(args), None, inputs, outputs,
                    time.monotonic() - t0)
    print(f"enhanced waveform at {wav_path}")
    return 0


# -- evaluate / ablate -----------------------------------------------------------


def _condition_noise(kind, n, utt_seed, snr):
    rng = np.random.default_rng((utt_seed * 1000003 + int(snr * 10)) & 0x7FFFFFFF)
    return video.synth_noise(kind, n, rng)


def _measure(model, utts, snrs, noises, variant):
    """Mean metrics per (snr, noise) condition for one system variant."""
    rows = []
    for snr in snrs:
        for kind in noises:
            stoi_acc, sdr_acc, lsd_acc = [], [], []
            for utt in utts:
                noise = _condition_noise(kind, len(utt.clean), utt.seed, snr)
                mixture = audio.mix_at_snr(utt.clean, noise, snr)
                clean_lm = audio.log_mel(audio.stft(utt.clean))
                if model is None:
                    est, est_lm = mixture, audio.log_mel(audio.stft(mixture))
                else:
                    est, est_lm = enhance_waveform(model, mixture, utt.segments)
                stoi_acc.append(metrics.stoi(utt.clean, est))
                sdr_acc.append(metrics.si_sdr(utt.clean, est))
                lsd_acc.append(metrics.log_spectral_distance(clean_lm, est_lm))
            rows.append((variant, snr, kind, float(np.mean(stoi_acc)),
                         float(np.mean(sdr_acc)), float(np.mean(lsd_acc))))
    return rows


def _emit_report(out, rows, t0, command, config, seed, inputs, extra_outputs=()):
    report = metrics.build_report(rows)
    csv_path = out / "report.csv"
    csv_path.write_text(report.to_csv_text())
    txt_path = out / "report.txt"
    txt_path.write_text(report.to_table_text())
    from . import figures
    png_path = out / "report.png"
    figures.save_report_png(report, png_path)
    outputs = [csv_path, txt_path, png_path] + list(extra_outputs)
    _write_manifest(out, command, config, seed, inputs, outputs,
                    time.monotonic() - t0)
    print(report.to_table_text())
    print(f"report written to {csv_path}")
    return 0


def cmd_evaluate(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args)
    utts = load_dataset(args.data)
    rows = _measure(None, utts, args.snr, args.noise, metrics.UNPROCESSED)
    inputs = [Path(args.data) / "index.json"]
    for spec_str in args.ckpt:
        path, _, label = spec_str.partition(":")
        label = label or Path(path).stem
        model = load_checkpoint(path).build()
        rows += _measure(model, utts, args.snr, args.noise, label)
        inputs.append(Path(path))
    return _emit_report(out, rows, t0, "evaluate", vars(args), None, inputs)


def cmd_ablate(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args)
    seed = _resolve_seed(args.seed)
    utts = load_dataset(args.data)
    examples = utterances_to_examples(utts)
    train_set, val_set = _split_train_val(examples, seed)
    mean, std = fit_feature_stats([e for seq in train_set for e in seq])
    train_cfg = TrainConfig(seed=seed, max_steps=args.steps,
                            max_epochs=max(1, args.steps),
                            batch_size=args.batch_size)

    rows = _measure(None, utts, args.snr, args.noise, metrics.UNPROCESSED)
    ckpt_paths = []
    counts = {}
    for label, overrides in ABLATION_VARIANTS:
        cfg = ModelConfig.from_dict(
            {"feature_mean": mean, "feature_std": std} | overrides)
        model = build_model(cfg, seed=seed)
        counts[label] = model.parameter_count()
        result = train(model, train_set, val_set, train_cfg)
        model.load_state(result.best_params, result.best_buffers)
        ckpt_path = out / f"{label}.ckpt"
        save_checkpoint(ckpt_path, model, epoch=result.best_epoch,
                        val_loss=result.best_val_loss)
        ckpt_paths.append(ckpt_path)
        rows += _measure(model, utts, args.snr, args.noise, label)
    counts_path = out / "parameter_counts.json"
    counts_path.write_text(json.dumps(counts, sort_keys=True, indent=2) + "\n")
    return _emit_report(out, rows, t0, "ablate",
                        vars(args) | {"seed": seed}, seed,
                        [Path(args.data) / "index.json"],
                        ckpt_paths + [counts_path])


# -- spectrogram -----------------------------------------------------------------


def _matrix_csv(matrix) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row)
                     for row in matrix) + "\n"


def quantize_logmel(matrix) -> np.ndarray:
    lo, hi = float(matrix.min()), float(matrix.max())
    if hi <= lo:
        return np.zeros(matrix.shape, dtype=np.uint8)
    return np.round((matrix - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(matrix, path):
    """Binary PGM: rows are Mel bins, columns frames, min-max intensity."""
    q = quantize_logmel(matrix)
    header = f"P5\n{q.shape[1]} {q.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + q.tobytes())


def cmd_spectrogram(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args)
    wave = audio.read_wav(args.wav)
    logmel = audio.log_mel(audio.stft(wave))
    csv_path = out / "logmel.csv"
    csv_path.write_text(_matrix_csv(logmel))
    pgm_path = out / "logmel.pgm"
    write_pgm(logmel, pgm_path)
    from . import figures
    png_path = out / "logmel.png"
    figures.save_logmel_png(logmel, png_path, title=Path(args.wav).name)
    _write_manifest(out, "spectrogram", vars(args), None, [Path(args.wav)],
                    [csv_path, pgm_path, png_path], time.monotonic() - t0)
    print(f"spectrogram exports in {out}")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avse",
        description="Desk-scale audio-visual speech enhancement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic AV dataset")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--snr-db", type=float, default=0.0, dest="snr_db")
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--noise", choices=("white", "babble"), default="white")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None,
                   help='JSON file: {"model": {...}, "train": {...}}')
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a noisy WAV file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--video", default=None)
    p.add_argument("--zero-video", action="store_true", dest="zero_video")
    p.add_argument("--save-mel", action="store_true", dest="save_mel")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score checkpoints on a dataset")
    p.add_argument("--ckpt", action="append", required=True,
                   help="checkpoint path, optionally path:label; repeatable")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--snr", type=float, nargs="+", default=[-5.0, 0.0])
    p.add_argument("--noise", nargs="+", default=["white", "babble"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score the four gate variants")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--snr", type=float, nargs="+", default=[-5.0, 0.0])
    p.add_argument("--noise", nargs="+", default=["white"])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("spectrogram", help="export log-Mel CSV/PGM/PNG")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectrogram)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DataError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except AvseError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
