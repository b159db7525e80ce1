"""Objective evaluation: STOI, scale-invariant SDR, log-spectral distance,
and the grouped report the evaluation commands emit.

STOI follows the published short-time objective intelligibility procedure:
internal resample to 10 kHz, 40 dB energy VAD, 15 one-third-octave bands
from 150 Hz, 384 ms (30-frame) segments, per-band normalization with
clipping at -15 dB SDR, and an averaged correlation. Scores are stored in
[0, 1]; display scaling (x100) is a formatting concern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, DimensionError

SI_SDR_CAP_DB = 100.0

# STOI internals (10 kHz analysis rate).
_STOI_SR = 10000
_FRAME = 256
_HOP = 128
_NFFT = 512
_NBANDS = 15
_LOW_CF_HZ = 150.0
_SEG_FRAMES = 30          # 384 ms at 12.8 ms hop
_CLIP_FACTOR = 1.0 + 10.0 ** (15.0 / 20.0)   # -15 dB SDR lower bound
_VAD_RANGE_DB = 40.0
_EPS = 1e-12

# Polyphase 16 kHz -> 10 kHz resampler: up 5 / down 8, Kaiser-windowed FIR
# with 60 dB stopband; passband 4 kHz, stopband 5 kHz at the 80 kHz upsampled
# rate. Tap count from the Kaiser estimate, forced odd for an integer delay.
_UP = 5
_DOWN = 8
_ATTEN_DB = 60.0
_PASS_HZ = 4000.0
_STOP_HZ = 5000.0
_UP_RATE = 16000 * _UP


def _kaiser_taps() -> np.ndarray:
    beta = 0.1102 * (_ATTEN_DB - 8.7)
    delta_w = 2.0 * math.pi * (_STOP_HZ - _PASS_HZ) / _UP_RATE
    n_taps = int(math.ceil((_ATTEN_DB - 7.95) / (2.285 * delta_w)))
    if n_taps % 2 == 0:
        n_taps += 1
    cutoff = 0.5 * (_PASS_HZ + _STOP_HZ) / _UP_RATE  # cycles per sample
    mid = (n_taps - 1) / 2.0
    k = np.arange(n_taps) - mid
    ideal = 2.0 * cutoff * np.sinc(2.0 * cutoff * k)
    return ideal * np.kaiser(n_taps, beta)


_TAPS = None


def resample_16k_to_10k(x: np.ndarray) -> np.ndarray:
    """Rate 5/8 polyphase resampling with delay compensation."""
    global _TAPS
    if _TAPS is None:
        _TAPS = _kaiser_taps()
    x = np.asarray(x, dtype=np.float64)
    up = np.zeros(len(x) * _UP)
    up[::_UP] = x
    y = np.convolve(up, _TAPS * _UP)
    delay = (len(_TAPS) - 1) // 2
    y = y[delay:delay + len(up)]
    return y[::_DOWN]


def _frame_signal(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    if len(x) < _FRAME:
        raise DataError(
            f"signal too short for STOI analysis: {len(x)} samples at 10 kHz")
    return sliding_window_view(x, _FRAME)[::_HOP] * window


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    """Drop frames of x more than 40 dB below its loudest frame; the same
    frames are dropped from y. Both are rebuilt by 50%-overlap-add."""
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(_FRAME) / _FRAME))
    xf = _frame_signal(x, window)
    yf = _frame_signal(y, window)
    energy_db = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    peak = energy_db.max()
    if peak <= 20.0 * math.log10(_EPS) + 1.0:
        raise DataError("clean signal is silent; STOI undefined")
    keep = energy_db > peak - _VAD_RANGE_DB
    if not np.any(keep):
        raise DataError("no frames above the VAD threshold; STOI undefined")
    xk, yk = xf[keep], yf[keep]
    n_out = _FRAME + _HOP * (len(xk) - 1)
    xr = np.zeros(n_out)
    yr = np.zeros(n_out)
    for i in range(len(xk)):
        xr[i * _HOP:i * _HOP + _FRAME] += xk[i]
        yr[i * _HOP:i * _HOP + _FRAME] += yk[i]
    return xr, yr


def _third_octave_matrix() -> np.ndarray:
    centers = _LOW_CF_HZ * 2.0 ** (np.arange(_NBANDS) / 3.0)
    bin_hz = np.arange(_NFFT // 2 + 1) * (_STOI_SR / _NFFT)
    mat = np.zeros((_NBANDS, _NFFT // 2 + 1))
    for b, cf in enumerate(centers):
        lo, hi = cf / 2.0 ** (1.0 / 6.0), cf * 2.0 ** (1.0 / 6.0)
        mat[b, (bin_hz >= lo) & (bin_hz < hi)] = 1.0
    return mat


_BANDS = None


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    global _BANDS
    if _BANDS is None:
        _BANDS = _third_octave_matrix()
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(_FRAME) / _FRAME))
    frames = _frame_signal(x, window)
    spec = np.fft.rfft(frames, n=_NFFT, axis=1)
    return np.sqrt(_BANDS @ (np.abs(spec.T) ** 2))


def stoi(clean: np.ndarray, processed: np.ndarray) -> float:
    """Short-time objective intelligibility of processed against clean.

    Both signals are 16 kHz and equal length; the result lies in [0, 1].
    """
    clean = np.asarray(clean, dtype=np.float64)
    processed = np.asarray(processed, dtype=np.float64)
    if clean.shape != processed.shape:
        raise DimensionError(
            f"length mismatch: clean {clean.shape} vs processed {processed.shape}")
    x = resample_16k_to_10k(clean)
    y = resample_16k_to_10k(processed)
    x, y = _remove_silent_frames(x, y)
    ex = _band_envelopes(x)   # (15, T)
    ey = _band_envelopes(y)
    t = ex.shape[1]
    if t < _SEG_FRAMES:
        raise DataError(
            f"too little speech after VAD: {t} frames, need >= {_SEG_FRAMES}")
    xs = sliding_window_view(ex, _SEG_FRAMES, axis=1)   # (15, M, 30)
    ys = sliding_window_view(ey, _SEG_FRAMES, axis=1)
    alpha = np.linalg.norm(xs, axis=2, keepdims=True) / \
        (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    yn = np.minimum(ys * alpha, xs * _CLIP_FACTOR)
    xc = xs - xs.mean(axis=2, keepdims=True)
    yc = yn - yn.mean(axis=2, keepdims=True)
    denom = np.linalg.norm(xc, axis=2) * np.linalg.norm(yc, axis=2) + _EPS
    d = (xc * yc).sum(axis=2) / denom
    return float(d.mean())


def si_sdr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Scale-invariant SDR in dB, capped at +100 (exact-scaling guard)."""
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.shape != estimate.shape:
        raise DimensionError(
            f"length mismatch: {reference.shape} vs {estimate.shape}")
    ref_energy = float(np.dot(reference, reference))
    if ref_energy == 0.0:
        raise DataError("reference signal is silent; SI-SDR undefined")
    scale = float(np.dot(estimate, reference)) / ref_energy
    target = scale * reference
    residual = estimate - target
    num = float(np.sum(target ** 2))
    den = float(np.sum(residual ** 2))
    if den <= num * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    return min(10.0 * math.log10(num / den), SI_SDR_CAP_DB)


def log_spectral_distance(clean_logmel: np.ndarray,
                          enhanced_logmel: np.ndarray) -> float:
    """RMS difference of ln-domain spectrograms, scaled to dB (x10/ln 10)."""
    a = np.asarray(clean_logmel, dtype=np.float64)
    b = np.asarray(enhanced_logmel, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float((10.0 / math.log(10.0)) * np.sqrt(np.mean((a - b) ** 2)))


# -- reports ------------------------------------------------------------------

UNPROCESSED = "unprocessed"

CSV_HEADER = ("variant,snr_db,noise,stoi,si_sdr_db,lsd_db,"
              "delta_stoi,delta_si_sdr_db,delta_lsd_db")


@dataclass
class ReportRow:
    variant: str
    snr_db: float
    noise: str
    stoi: float
    si_sdr_db: float
    lsd_db: float
    delta_stoi: float = 0.0
    delta_si_sdr_db: float = 0.0
    delta_lsd_db: float = 0.0


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def to_csv_text(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(",".join([
                r.variant, repr(r.snr_db), r.noise, repr(r.stoi),
                repr(r.si_sdr_db), repr(r.lsd_db), repr(r.delta_stoi),
                repr(r.delta_si_sdr_db), repr(r.delta_lsd_db)]))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_csv_text(text: str) -> "EvalReport":
        lines = [ln for ln in text.strip().split("\n") if ln]
        if not lines or lines[0] != CSV_HEADER:
            raise DataError("unrecognized report CSV header")
        rows = []
        for ln in lines[1:]:
            parts = ln.split(",")
            rows.append(ReportRow(
                parts[0], float(parts[1]), parts[2], float(parts[3]),
                float(parts[4]), float(parts[5]), float(parts[6]),
                float(parts[7]), float(parts[8])))
        return EvalReport(rows)

    def to_table_text(self) -> str:
        """Aligned text table grouped by (SNR, noise) condition."""
        conditions = sorted({(r.snr_db, r.noise) for r in self.rows})
        variants = []
        for r in self.rows:
            if r.variant not in variants:
                variants.append(r.variant)
        header = ["variant".ljust(24)]
        for snr, noise in conditions:
            header.append(f"{noise}@{snr:+.0f}dB  STOI  SI-SDR   LSD".ljust(38))
        lines = ["".join(header)]
        by_key = {(r.variant, r.snr_db, r.noise): r for r in self.rows}
        for v in variants:
            cells = [v.ljust(24)]
            for snr, noise in conditions:
                r = by_key.get((v, snr, noise))
                if r is None:
                    cells.append("-".ljust(38))
                else:
                    cells.append(
                        f"{100 * r.stoi:13.2f} {r.si_sdr_db:7.2f} {r.lsd_db:6.2f}"
                        .ljust(38))
            lines.append("".join(cells))
        return "\n".join(lines) + "\n"


def build_report(measurements) -> EvalReport:
    """Attach deltas against the unprocessed row of each (snr, noise) pair.

    measurements: iterable of (variant, snr_db, noise, stoi, si_sdr_db,
    lsd_db). Every condition must include an 'unprocessed' entry.
    """
    rows = [ReportRow(*m) for m in measurements]
    baseline = {}
    for r in rows:
        if r.variant == UNPROCESSED:
            baseline[(r.snr_db, r.noise)] = r
    for r in rows:
        base = baseline.get((r.snr_db, r.noise))
        if base is None:
            raise DataError(
                f"no unprocessed baseline for condition "
                f"(snr={r.snr_db}, noise={r.noise})")
        r.delta_stoi = r.stoi - base.stoi
        r.delta_si_sdr_db = r.si_sdr_db - base.si_sdr_db
        r.delta_lsd_db = r.lsd_db - base.lsd_db
    rows.sort(key=lambda r: (r.variant != UNPROCESSED, r.variant,
                             r.snr_db, r.noise))
    return EvalReport(rows)
