"""Acoustic front end: WAV decoding, frame-level descriptors and utterance functionals.

The feature vector is a fixed 30-dimensional reduction of the eGeMAPS layout:
mean and coefficient of variation for 12 low-level descriptors, followed by
6 temporal statistics. ``FEATURE_NAMES`` is the frozen index.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct, rfft
from scipy.special import expit

F0_MIN_HZ = 60.0
F0_MAX_HZ = 500.0
VOICING_THRESHOLD = 0.45
# a shorter lag wins if its peak reaches this fraction of the best one (octave guard)
SUBHARMONIC_RATIO = 0.9
HNR_CLAMP_DB = 60.0
N_MEL_BANDS = 26
N_MFCC = 4
ROLLOFF_FRACTION = 0.85
CV_EPS = 1e-12
MIN_SAMPLE_RATE = 8000

LLD_NAMES = (
    "f0",
    "rms_energy",
    "zero_crossing_rate",
    "spectral_centroid",
    "spectral_flux",
    "spectral_slope",
    "spectral_rolloff85",
    "hnr_proxy",
    "mfcc1",
    "mfcc2",
    "mfcc3",
    "mfcc4",
)
# statistics for these are taken over voiced frames only
VOICED_ONLY = frozenset({"f0", "hnr_proxy"})
TEMPORAL_NAMES = (
    "voiced_ratio",
    "voiced_seg_mean",
    "voiced_seg_std",
    "unvoiced_seg_mean",
    "unvoiced_seg_std",
    "duration_s",
)
FEATURE_NAMES = tuple(
    f"{name}_{stat}" for name in LLD_NAMES for stat in ("mean", "cv")
) + TEMPORAL_NAMES
FEAT_DIM = len(FEATURE_NAMES)
assert FEAT_DIM == 30


class WavError(ValueError):
    """Base class for WAV decoding failures."""


class MalformedWavError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class StereoWavError(WavError):
    pass


class SignalTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D array")
        if self.sample_rate < MIN_SAMPLE_RATE:
            raise ValueError(f"sample_rate must be >= {MIN_SAMPLE_RATE}, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class LldSeries:
    """Per-frame descriptor tracks; every array has one entry per frame."""

    f0: np.ndarray
    rms_energy: np.ndarray
    zero_crossing_rate: np.ndarray
    spectral_centroid: np.ndarray
    spectral_flux: np.ndarray
    spectral_slope: np.ndarray
    spectral_rolloff85: np.ndarray
    hnr_proxy: np.ndarray
    mfcc: np.ndarray  # (n_frames, 4), coefficients 1..4
    frame_len_ms: float
    hop_ms: float

    @property
    def n_frames(self) -> int:
        return self.f0.size

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0

    def track(self, name: str) -> np.ndarray:
        if name.startswith("mfcc"):
            return self.mfcc[:, int(name[4:]) - 1]
        return getattr(self, name)


def load_wav(path) -> AudioSignal:
    """Decode a mono 16-bit PCM RIFF/WAVE file into samples in [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedEncodingError(f"{path}: {msg}") from exc
        raise MalformedWavError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise MalformedWavError(f"{path}: truncated header") from exc

    if n_channels != 1:
        raise StereoWavError(f"{path}: expected mono, found {n_channels} channels")
    if width != 2:
        raise UnsupportedEncodingError(f"{path}: expected 16-bit PCM, found {8 * width}-bit")
    if len(raw) != 2 * n_frames or n_frames == 0:
        raise MalformedWavError(f"{path}: data chunk holds {len(raw)} bytes, header declares {n_frames} frames")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioSignal(samples, rate)


def write_wav(path, signal: AudioSignal) -> None:
    """Write ``signal`` as mono PCM16; values are clipped to the int16 range."""
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(signal.sample_rate)
        wf.writeframes(pcm.tobytes())


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n_frames = (x.size - frame_len) // hop + 1
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the mel scale, shape (n_bands, n_fft // 2 + 1)."""
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), n_bands + 2))
    bank = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        bank[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def _pitch_track(frames: np.ndarray, sample_rate: int):
    """Normalized-autocorrelation pitch per frame.

    Returns (f0, r_peak) where f0 is 0 on unvoiced frames and r_peak is the
    normalized correlation at the selected lag (0 when nothing qualifies).
    """
    n_frames, frame_len = frames.shape
    lag_min = max(1, int(np.floor(sample_rate / F0_MAX_HZ)))
    lag_max = min(frame_len - 2, int(np.ceil(sample_rate / F0_MIN_HZ)))
    f0 = np.zeros(n_frames)
    r_peak = np.zeros(n_frames)
    if lag_max <= lag_min:
        return f0, r_peak

    x = frames - frames.mean(axis=1, keepdims=True)
    n_fft = 1 << int(np.ceil(np.log2(2 * frame_len)))
    spec = np.fft.rfft(x, n_fft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), n_fft, axis=1)[:, :frame_len]

    # energy of x[0:L-tau] and x[tau:L] for each lag
    sq = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(x * x, axis=1)], axis=1)
    lags = np.arange(lag_min - 1, lag_max + 2)
    head = sq[:, frame_len - lags]
    tail = sq[:, -1:] - sq[:, lags]
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 1e-20, acf[:, lags] / np.where(denom > 0, denom, 1.0), 0.0)

    inner = r[:, 1:-1]  # lags lag_min..lag_max
    for i in range(n_frames):
        row = inner[i]
        best = row.max()
        if best < VOICING_THRESHOLD:
            continue
        full = r[i]
        peaks = np.flatnonzero(
            (full[1:-1] >= full[:-2]) & (full[1:-1] >= full[2:]) & (row >= SUBHARMONIC_RATIO * best)
        )
        k = peaks[0] if peaks.size else int(np.argmax(row))
        y0, y1, y2 = full[k], full[k + 1], full[k + 2]
        curvature = y0 - 2.0 * y1 + y2
        offset = 0.5 * (y0 - y2) / curvature if curvature < 0 else 0.0
        lag = lag_min + k + float(np.clip(offset, -0.5, 0.5))
        f0[i] = sample_rate / lag
        r_peak[i] = y1
    return f0, r_peak


def compute_llds(signal: AudioSignal, frame_len_ms: float = 25.0, hop_ms: float = 10.0) -> LldSeries:
    sr = signal.sample_rate
    frame_len = int(round(frame_len_ms * sr / 1000.0))
    hop = int(round(hop_ms * sr / 1000.0))
    if frame_len < 2 or hop < 1:
        raise ValueError("frame length and hop must cover at least two and one samples")
    if signal.samples.size < frame_len:
        raise SignalTooShortError(
            f"signal has {signal.samples.size} samples, one frame needs {frame_len}"
        )

    frames = frame_signal(signal.samples, frame_len, hop)
    n_frames = frames.shape[0]

    rms = np.sqrt(np.mean(frames * frames, axis=1))
    signs = np.signbit(frames)
    zcr = np.mean(signs[:, 1:] != signs[:, :-1], axis=1)

    f0, r_peak = _pitch_track(frames, sr)
    r_clip = np.clip(r_peak, 1e-12, 1.0 - 1e-12)
    hnr = np.clip(10.0 * np.log10(r_clip / (1.0 - r_clip)), -HNR_CLAMP_DB, HNR_CLAMP_DB)

    n_fft = 1 << int(np.ceil(np.log2(frame_len)))
    mag = np.abs(rfft(frames * np.hanning(frame_len), n_fft, axis=1))
    freqs = np.arange(mag.shape[1]) * sr / n_fft
    power = mag * mag

    mag_sum = mag.sum(axis=1)
    silent = mag_sum <= 1e-12
    safe_sum = np.where(silent, 1.0, mag_sum)
    centroid = np.where(silent, 0.0, mag @ freqs / safe_sum)

    flux = np.zeros(n_frames)
    flux[1:] = np.mean(np.diff(mag, axis=0) ** 2, axis=1)

    # least-squares slope of the dB spectrum against frequency in kHz
    db = 20.0 * np.log10(mag + 1e-10)
    fk = freqs / 1000.0
    fc = fk - fk.mean()
    slope = (db - db.mean(axis=1, keepdims=True)) @ fc / (fc @ fc)

    cum = np.cumsum(power, axis=1)
    total = cum[:, -1]
    rolloff_idx = np.argmax(cum >= ROLLOFF_FRACTION * total[:, None], axis=1)
    rolloff = np.where(total <= 1e-24, 0.0, freqs[rolloff_idx])

    bank = mel_filterbank(N_MEL_BANDS, n_fft, sr)
    log_mel = np.log(power @ bank.T + 1e-10)
    mfcc = dct(log_mel, type=2, norm="ortho", axis=1)[:, 1 : 1 + N_MFCC]

    return LldSeries(
        f0=f0,
        rms_energy=rms,
        zero_crossing_rate=zcr,
        spectral_centroid=centroid,
        spectral_flux=flux,
        spectral_slope=slope,
        spectral_rolloff85=rolloff,
        hnr_proxy=hnr,
        mfcc=mfcc,
        frame_len_ms=frame_len_ms,
        hop_ms=hop_ms,
    )


def _mean_cv(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return 0.0, 0.0
    mean = float(values.mean())
    if abs(mean) < CV_EPS:
        return mean, 0.0
    return mean, float(values.std() / abs(mean))


def _run_lengths(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lengths of consecutive True runs and consecutive False runs."""
    if mask.size == 0:
        return np.zeros(0), np.zeros(0)
    change = np.flatnonzero(mask[1:] != mask[:-1]) + 1
    bounds = np.concatenate([[0], change, [mask.size]])
    lengths = np.diff(bounds)
    starts_voiced = mask[bounds[:-1]]
    return lengths[starts_voiced].astype(float), lengths[~starts_voiced].astype(float)


def _mean_std(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return 0.0, 0.0
    return float(x.mean()), float(x.std())


def functionals(llds: LldSeries, duration_s: float) -> np.ndarray:
    voiced = llds.voiced
    out = []
    for name in LLD_NAMES:
        track = llds.track(name)
        if name in VOICED_ONLY:
            track = track[voiced]
        out.extend(_mean_cv(track))
    v_runs, u_runs = _run_lengths(voiced)
    out.append(float(voiced.mean()))
    out.extend(_mean_std(v_runs))
    out.extend(_mean_std(u_runs))
    out.append(float(duration_s))
    return np.asarray(out, dtype=np.float64)


def extract_features(signal: AudioSignal, frame_len_ms: float = 25.0, hop_ms: float = 10.0) -> np.ndarray:
    """Map an utterance to its FEAT_DIM-dimensional functional vector."""
    llds = compute_llds(signal, frame_len_ms, hop_ms)
    return functionals(llds, signal.duration)


class EmptyTrainingSetError(ValueError):
    pass


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x) -> np.ndarray:
        """z-score with the fitted statistics, then squash into (0, 1)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.size:
            raise ValueError(f"expected {self.mean.size} features, got {x.shape[-1]}")
        return expit((x - self.mean) / self.std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_standardizer(train) -> Standardizer:
    x = np.asarray(train, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyTrainingSetError("cannot fit a standardizer on an empty training set")
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return Standardizer(x.mean(axis=0), std)


def apply(std: Standardizer, fv) -> np.ndarray:
    return std.apply(fv)
