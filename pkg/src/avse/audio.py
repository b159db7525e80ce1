"""Waveform <-> log-Mel front-end: STFT, filterbank, chunking, SNR mixing,
and Mel-domain inversion for listening/metric evaluation.

Fixed format throughout: 16 kHz mono, 640-sample (40 ms) periodic-Hann
frames with a 160-sample (10 ms) hop, 321 one-sided bins, 80 Mel bands on
0..8 kHz, and 20-frame (200 ms) chunks that line up with 5 video frames at
25 fps. Waveforms are plain float64 arrays with nominal amplitude in
[-1, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, DimensionError, FormatError

SAMPLE_RATE = 16000
N_FFT = 640
HOP = 160
N_BINS = N_FFT // 2 + 1  # 321
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
CHUNK_FRAMES = 20
LOG_EPS = 1e-10
SAMPLES_PER_CHUNK = HOP * CHUNK_FRAMES  # 3200 = 200 ms


def hann_window(n: int = N_FFT) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def frame_count(num_samples: int) -> int:
    if num_samples < N_FFT:
        raise DataError(
            f"signal too short for STFT: {num_samples} samples, need >= {N_FFT}")
    return 1 + (num_samples - N_FFT) // HOP


def stft(x: np.ndarray) -> np.ndarray:
    """(321, T) one-sided spectrogram; frame t covers samples [160t, 160t+640)."""
    x = np.asarray(x, dtype=np.float64)
    t = frame_count(len(x))
    frames = sliding_window_view(x, N_FFT)[::HOP][:t] * hann_window()
    return np.fft.rfft(frames, axis=1).T


def istft(spec: np.ndarray, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse with window-squared normalization.

    Reconstructs stft input exactly on samples fully covered by frames; the
    first/last window of samples are only partially covered and taper.
    """
    if spec.ndim != 2 or spec.shape[0] != N_BINS:
        raise DimensionError(
            f"spectrogram must be ({N_BINS}, T), got {spec.shape}")
    t = spec.shape[1]
    if length is None:
        length = N_FFT + HOP * (t - 1)
    win = hann_window()
    frames = np.fft.irfft(spec.T, n=N_FFT, axis=1)
    num = np.zeros(length)
    den = np.zeros(length)
    for i in range(t):
        lo = i * HOP
        hi = min(lo + N_FFT, length)
        num[lo:hi] += frames[i, :hi - lo] * win[:hi - lo]
        den[lo:hi] += win[:hi - lo] ** 2
    # Skip normalization where window energy is negligible (outermost edge
    # samples); dividing by a vanishing weight would amplify noise there.
    den[den < 1e-3] = 1.0
    return num / den


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


_FILTERBANK = None
_FILTERBANK_PINV = None


def mel_filterbank() -> np.ndarray:
    """80 triangular filters, centers uniform on the Mel scale over 0..8 kHz.

    Filter i rises from edge i-1 to its center and falls to edge i+1; every
    FFT bin strictly inside (0, 8000) Hz gets positive weight from at least
    one filter because adjacent supports overlap.
    """
    global _FILTERBANK
    if _FILTERBANK is None:
        edges_hz = mel_to_hz(np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), N_MELS + 2))
        bin_hz = np.arange(N_BINS) * (SAMPLE_RATE / N_FFT)
        fb = np.zeros((N_MELS, N_BINS))
        for i in range(N_MELS):
            lo, mid, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
            rising = (bin_hz - lo) / (mid - lo)
            falling = (hi - bin_hz) / (hi - mid)
            fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        _FILTERBANK = fb
    return _FILTERBANK


def _filterbank_pinv() -> np.ndarray:
    global _FILTERBANK_PINV
    if _FILTERBANK_PINV is None:
        _FILTERBANK_PINV = np.linalg.pinv(mel_filterbank())
    return _FILTERBANK_PINV


def log_mel(spec: np.ndarray, filterbank: np.ndarray | None = None,
            use_power: bool = True) -> np.ndarray:
    """ln(filterbank @ |spec|^2 + eps); use_power=False switches to |spec|."""
    fb = mel_filterbank() if filterbank is None else filterbank
    mag = np.abs(spec)
    energy = mag * mag if use_power else mag
    return np.log(fb @ energy + LOG_EPS)


@dataclass
class LogMelChunk:
    """One 200 ms network unit: 80 x 20, zero-padded past valid_frames."""

    matrix: np.ndarray
    valid_frames: int

    def __post_init__(self):
        if self.matrix.shape != (N_MELS, CHUNK_FRAMES):
            raise DimensionError(
                f"chunk must be ({N_MELS}, {CHUNK_FRAMES}), got {self.matrix.shape}")
        if not 1 <= self.valid_frames <= CHUNK_FRAMES:
            raise DataError(f"valid_frames {self.valid_frames} out of range")


def chunk_matrix(m: np.ndarray) -> list[LogMelChunk]:
    """Split (80, T) into consecutive 20-frame chunks, zero-padding the tail."""
    if m.ndim != 2 or m.shape[0] != N_MELS:
        raise DimensionError(f"expected ({N_MELS}, T) matrix, got {m.shape}")
    t = m.shape[1]
    if t < 1:
        raise DataError("cannot chunk an empty spectrogram")
    chunks = []
    for start in range(0, t, CHUNK_FRAMES):
        piece = m[:, start:start + CHUNK_FRAMES]
        valid = piece.shape[1]
        if valid < CHUNK_FRAMES:
            piece = np.pad(piece, ((0, 0), (0, CHUNK_FRAMES - valid)))
        chunks.append(LogMelChunk(piece.copy(), valid))
    return chunks


def assemble_chunks(chunks: list[LogMelChunk]) -> np.ndarray:
    """Inverse of chunk_matrix: concatenate the valid columns."""
    if not chunks:
        raise DataError("no chunks to assemble")
    return np.concatenate([c.matrix[:, :c.valid_frames] for c in chunks], axis=1)


def signal_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(np.asarray(x, dtype=np.float64))))


def fit_noise_length(noise: np.ndarray, length: int,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Tile short noise; crop long noise (random offset when rng given)."""
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) == 0:
        raise DataError("empty noise signal")
    if len(noise) < length:
        reps = -(-length // len(noise))
        noise = np.tile(noise, reps)
    if len(noise) > length:
        offset = int(rng.integers(0, len(noise) - length + 1)) if rng is not None else 0
        noise = noise[offset:offset + length]
    return noise


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """clean + g*noise with g chosen so the mixture SNR equals snr_db exactly."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = fit_noise_length(noise, len(clean), rng)
    p_clean = signal_power(clean)
    p_noise = signal_power(noise)
    if p_clean == 0.0:
        raise DataError("clean signal is silent; SNR undefined")
    if p_noise == 0.0:
        raise DataError("noise signal is silent; SNR undefined")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return clean + gain * noise


def mel_invert(predicted_logmel: np.ndarray, noisy_spec: np.ndarray,
               length: int | None = None) -> np.ndarray:
    """Log-Mel -> waveform via clamped pseudo-inverse plus the noisy phase.

    Linear-frequency power is the filterbank pseudo-inverse applied to the
    exponentiated prediction, clamped at zero; magnitudes combine with the
    phase of noisy_spec and go through the inverse STFT. Deterministic, no
    iterative phase retrieval.
    """
    if predicted_logmel.ndim != 2 or predicted_logmel.shape[0] != N_MELS:
        raise DimensionError(
            f"predicted log-mel must be ({N_MELS}, T), got {predicted_logmel.shape}")
    if noisy_spec.shape != (N_BINS, predicted_logmel.shape[1]):
        raise DimensionError(
            f"phase spectrogram shape {noisy_spec.shape} does not match "
            f"({N_BINS}, {predicted_logmel.shape[1]})")
    mel_power = np.exp(predicted_logmel)
    lin_power = np.clip(_filterbank_pinv() @ mel_power, 0.0, None)
    magnitude = np.sqrt(lin_power)
    unit_phase = np.exp(1j * np.angle(noisy_spec))
    return istft(magnitude * unit_phase, length=length)


# -- WAV files (16-bit PCM mono, 16 kHz, RIFF little-endian) -------------------


def write_wav(path, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    byte_rate = SAMPLE_RATE * 2
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, SAMPLE_RATE, byte_rate, 2, 16)
    header += b"data" + struct.pack("<I", len(data))
    with open(path, "wb") as fh:
        fh.write(header + data)


def read_wav(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 44 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos:pos + 4]
        size = struct.unpack("<I", blob[pos + 4:pos + 8])[0]
        body = blob[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise FormatError(f"{path}: missing fmt/data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != 1 or bits != 16:
        raise FormatError(
            f"{path}: only 16-bit linear PCM supported "
            f"(format {audio_format}, {bits} bits)")
    if channels != 1:
        raise FormatError(f"{path}: expected mono, got {channels} channels")
    if rate != SAMPLE_RATE:
        raise FormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
    pcm = np.frombuffer(data, dtype="<i2")
    return pcm.astype(np.float64) / 32768.0
