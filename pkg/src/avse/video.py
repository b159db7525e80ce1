"""Mouth-region video segments and the synthetic audio-video generator.

Upstream face/landmark processing is out of scope: pre-cropped 5-frame
80x80 grayscale segments are ingested from a simple binary container, and a
deterministic generator synthesizes correlated audio-video pairs for
desk-scale experiments. One segment spans 200 ms (5 frames at 25 fps),
exactly one log-Mel chunk.

Segment file format "AVSG1": 5-byte magic, u32 little-endian segment count,
then per segment 5*80*80 bytes (u8, frame-major, row-major).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import audio
from .errors import DataError, DimensionError, FormatError

SEG_FRAMES = 5
SEG_SIZE = 80
FPS = 25
SAMPLES_PER_VIDEO_FRAME = audio.SAMPLE_RATE // FPS       # 640
UNIT_SECONDS = 0.2
UNIT_SAMPLES = int(audio.SAMPLE_RATE * UNIT_SECONDS)     # 3200

_MAGIC = b"AVSG1"
_SEG_BYTES = SEG_FRAMES * SEG_SIZE * SEG_SIZE


@dataclass
class AVExample:
    """One aligned 200 ms training unit."""

    mixture_chunk: audio.LogMelChunk
    clean_chunk: audio.LogMelChunk
    video: np.ndarray            # (5, 80, 80) grayscale in [0, 1]
    utterance_id: str
    chunk_index: int
    snr_db: float

    def __post_init__(self):
        if self.video.shape != (SEG_FRAMES, SEG_SIZE, SEG_SIZE):
            raise DimensionError(
                f"video segment must be ({SEG_FRAMES}, {SEG_SIZE}, {SEG_SIZE}), "
                f"got {self.video.shape}")


def save_segments(path, segments):
    """Write segments as AVSG1; float frames in [0,1] quantize to u8."""
    blob = bytearray(_MAGIC)
    blob += struct.pack("<I", len(segments))
    for seg in segments:
        if seg.shape != (SEG_FRAMES, SEG_SIZE, SEG_SIZE):
            raise DimensionError(f"segment shape {seg.shape} invalid")
        q = np.clip(np.round(seg * 255.0), 0, 255).astype(np.uint8)
        blob += q.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_segments(path):
    """Read AVSG1 segments; u8 payload scales back to [0, 1] floats."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 4 or blob[:len(_MAGIC)] != _MAGIC:
        raise FormatError(f"{path}: missing AVSG1 magic")
    count = struct.unpack("<I", blob[5:9])[0]
    expected = len(_MAGIC) + 4 + count * _SEG_BYTES
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload is {len(blob)} bytes, expected {expected} "
            f"for {count} segments")
    out = []
    pos = len(_MAGIC) + 4
    for _ in range(count):
        raw = np.frombuffer(blob[pos:pos + _SEG_BYTES], dtype=np.uint8)
        out.append(raw.reshape(SEG_FRAMES, SEG_SIZE, SEG_SIZE)
                   .astype(np.float64) / 255.0)
        pos += _SEG_BYTES
    return out


# -- synthetic data ----------------------------------------------------------


@dataclass
class SynthUtterance:
    utterance_id: str
    clean: np.ndarray
    mixture: np.ndarray
    segments: list
    snr_db: float
    seed: int
    duration_s: float
    noise_kind: str


def _harmonic_voice(rng, n_units):
    """Per-200ms-unit pitch with 2-4 harmonics, unit carrier power.

    Pitches sit on the 25 Hz analysis grid and all partials are zero-phase
    sines, so every tone lands exactly on an FFT bin (the periodic Hann
    window then leaks only to the two adjacent bins) and is value-continuous
    across unit boundaries. Free-running pitches would scatter leakage tails
    that periodically cancel the broadband floor, making near-clean mixtures
    look very different from clean in faded log-Mel cells.
    """
    n = n_units * UNIT_SAMPLES
    t = np.arange(n) / audio.SAMPLE_RATE
    x = np.zeros(n)
    for u in range(n_units):
        f0 = 25.0 * float(rng.integers(5, 13))   # 125..300 Hz
        n_harm = int(rng.integers(2, 5))
        amps = rng.uniform(0.5, 1.0, n_harm)
        amps /= np.sqrt(np.sum(amps ** 2) / 2.0)   # unit mean-square carrier
        sl = slice(u * UNIT_SAMPLES, (u + 1) * UNIT_SAMPLES)
        for h in range(n_harm):
            x[sl] += amps[h] * np.sin(2 * np.pi * f0 * (h + 1) * t[sl])
    return x


def _babble_noise(rng, n_units):
    acc = np.zeros(n_units * UNIT_SAMPLES)
    for _ in range(3):
        env = _smooth_apertures(rng, n_units * SEG_FRAMES)
        acc += _harmonic_voice(rng, n_units) * _interp_envelope(env, len(acc))
    return acc


def _smooth_apertures(rng, n_frames):
    """Slowly varying values in [0.4, 1]: moving-averaged uniform noise."""
    raw = rng.uniform(0.0, 1.0, n_frames + 4)
    smooth = np.convolve(raw, np.ones(5) / 5.0, mode="valid")
    return 0.4 + 0.6 * smooth


def _comb_floor(rng, n_units):
    """Hiss-like broadband floor: random-phase tones on every odd FFT bin.

    The signal is 640-periodic, so under the 640/160 analysis every odd bin
    has a frame-invariant magnitude (the periodic Hann window leaks only to
    the adjacent bins, which carry no tone). A Gaussian floor cannot do
    this: its per-bin chi-square dips would let added noise swing near-empty
    log-Mel bins arbitrarily even at +30 dB SNR.
    """
    phases = rng.uniform(0.0, 2.0 * np.pi, 160)
    spec = np.zeros(321, dtype=complex)
    spec[1::2] = np.exp(1j * phases)
    spec[1:9] *= 2.5   # strengthen the narrow low Mel filters
    template = np.fft.irfft(spec, n=640)
    template /= np.sqrt(np.mean(template ** 2))
    return np.tile(template, n_units * UNIT_SAMPLES // 640)


def _interp_envelope(apertures, n_samples):
    centers = (np.arange(len(apertures)) + 0.5) * SAMPLES_PER_VIDEO_FRAME
    return np.interp(np.arange(n_samples), centers, apertures)


def _mouth_frame(aperture, rng):
    """Bright ellipse on a dark background; vertical half-axis tracks the
    aperture. Low-level pixel noise keeps the frames non-degenerate."""
    yy, xx = np.mgrid[0:SEG_SIZE, 0:SEG_SIZE]
    b = 4.0 + 26.0 * aperture
    a = 22.0
    inside = ((yy - 40.0) / b) ** 2 + ((xx - 40.0) / a) ** 2 <= 1.0
    frame = np.where(inside, 0.85, 0.08)
    frame = frame + rng.uniform(0.0, 0.04, (SEG_SIZE, SEG_SIZE))
    return np.clip(frame, 0.0, 1.0)


def synth_noise(kind: str, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Noise for mixing: white Gaussian or a babble-like sum of voices."""
    if kind == "white":
        return rng.standard_normal(n_samples)
    if kind == "babble":
        n_units = max(1, -(-n_samples // UNIT_SAMPLES))
        return _babble_noise(rng, n_units)[:n_samples]
    raise DataError(f"unknown noise kind: {kind!r}")


def synth_utterance(seed: int, duration_s: float = 1.0, snr_db: float = 0.0,
                    noise_kind: str = "white") -> SynthUtterance:
    """Deterministic synthetic utterance of pitch-varying harmonics whose
    amplitude envelope drives the mouth aperture in the video stream.

    duration_s rounds to the nearest 200 ms so that chunks, video segments,
    and waveform units stay aligned.
    """
    if duration_s < UNIT_SECONDS:
        raise DataError(f"duration must be >= {UNIT_SECONDS} s")
    n_units = max(1, round(duration_s / UNIT_SECONDS))
    rng = np.random.default_rng(seed)

    apertures = _smooth_apertures(rng, n_units * SEG_FRAMES)
    env = _interp_envelope(apertures, n_units * UNIT_SAMPLES)
    carrier = _harmonic_voice(rng, n_units)
    clean = env * (carrier + 0.7 * _comb_floor(rng, n_units))
    clean *= 0.5 / np.max(np.abs(clean))

    if noise_kind == "white":
        noise = rng.standard_normal(len(clean))
    elif noise_kind == "babble":
        noise = _babble_noise(rng, n_units)
    else:
        raise DataError(f"unknown noise kind: {noise_kind!r}")
    mixture = audio.mix_at_snr(clean, noise, snr_db, rng=rng)

    frames = np.stack([_mouth_frame(a, rng) for a in apertures])
    segments = [frames[i * SEG_FRAMES:(i + 1) * SEG_FRAMES] for i in range(n_units)]
    return SynthUtterance(f"synth{seed:08d}", clean, mixture, segments,
                          snr_db, seed, n_units * UNIT_SECONDS, noise_kind)


def utterance_examples(utt_id: str, clean: np.ndarray, mixture: np.ndarray,
                       segments, snr_db: float) -> list:
    """Chunk aligned clean/mixture waveforms and pair with video segments."""
    clean_chunks = audio.chunk_matrix(audio.log_mel(audio.stft(clean)))
    mix_chunks = audio.chunk_matrix(audio.log_mel(audio.stft(mixture)))
    if len(clean_chunks) != len(mix_chunks):
        raise DataError("clean/mixture chunk counts disagree")
    if len(segments) != len(clean_chunks):
        raise DataError(
            f"utterance {utt_id}: {len(segments)} video segments vs "
            f"{len(clean_chunks)} audio chunks")
    out = []
    for i, (mc, cc, seg) in enumerate(zip(mix_chunks, clean_chunks, segments)):
        out.append(AVExample(mc, cc, seg, utt_id, i, snr_db))
    return out


def synth_av_pair(seed: int, duration_s: float = 1.0, snr_db: float = 0.0,
                  noise_kind: str = "white") -> list:
    """Aligned AVExample list for one synthetic utterance; pure in (seed,
    duration, snr)."""
    utt = synth_utterance(seed, duration_s, snr_db, noise_kind)
    return utterance_examples(utt.utterance_id, utt.clean, utt.mixture,
                              utt.segments, snr_db)
