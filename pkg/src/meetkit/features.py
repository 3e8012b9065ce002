"""Log-mel filterbank, NCCF pitch features, SpecAugment masking and the binary feature file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d

from .audio import AudioBuffer, AudioError

LOG_FLOOR = 1e-10
FEATURE_MAGIC = b"MKFT"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FbankConfig:
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    fft_size: int = 512
    num_mel_bins: int = 80
    low_freq: float = 20.0
    high_freq: float = 7600.0
    preemphasis: float = 0.97
    dither: float = 0.0

    def frame_length(self, fs: int) -> int:
        return int(round(self.frame_length_ms * fs / 1000))

    def frame_shift(self, fs: int) -> int:
        return int(round(self.frame_shift_ms * fs / 1000))

    def mel_range(self, fs: int) -> tuple[float, float]:
        # the 16 kHz defaults scale with the sample rate
        scale = fs / 16000
        return self.low_freq * scale, self.high_freq * scale

    def validate(self, fs: int) -> None:
        if self.frame_length(fs) > self.fft_size:
            raise FeatureError("frame length exceeds fft size")
        if self.frame_shift(fs) <= 0 or self.num_mel_bins <= 0:
            raise FeatureError("frame shift and mel bin count must be positive")
        lo, hi = self.mel_range(fs)
        if not 0 <= lo < hi <= fs / 2:
            raise FeatureError(f"mel range {lo}-{hi} Hz invalid for fs={fs}")


@dataclass(frozen=True)
class PitchConfig:
    min_f0: float = 60.0
    max_f0: float = 400.0
    octave_ratio: float = 0.9
    pov_slope: float = 12.0
    pov_centre: float = 0.5
    voiced_threshold: float = 0.5
    mean_window: int = 151
    delta_window: int = 2
    default_f0: float = 150.0


@dataclass
class FeatureMatrix:
    values: np.ndarray
    frame_shift_ms: float = 10.0
    frame_length_ms: float = 25.0
    layout: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise FeatureError("feature values must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise FeatureError("non-finite feature values")
        if not self.layout:
            self.layout = (("features", self.values.shape[1]),)
        if sum(d for _, d in self.layout) != self.values.shape[1]:
            raise FeatureError("layout does not match column count")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centres(cfg: FbankConfig = FbankConfig(), fs: int = 16000) -> np.ndarray:
    lo, hi = cfg.mel_range(fs)
    pts = np.linspace(hz_to_mel(lo), hz_to_mel(hi), cfg.num_mel_bins + 2)
    return mel_to_hz(pts[1:-1])


def mel_filterbank(cfg: FbankConfig = FbankConfig(), fs: int = 16000) -> np.ndarray:
    """Triangular filters, linear in mel, shape ``(num_mel_bins, fft_size//2 + 1)``."""
    lo, hi = cfg.mel_range(fs)
    pts = np.linspace(hz_to_mel(lo), hz_to_mel(hi), cfg.num_mel_bins + 2)
    bin_mel = hz_to_mel(np.fft.rfftfreq(cfg.fft_size, 1.0 / fs))
    left, centre, right = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (bin_mel - left) / (centre - left)
    down = (right - bin_mel) / (right - centre)
    return np.maximum(0.0, np.minimum(up, down))


def num_frames(n_samples: int, frame_length: int, frame_shift: int) -> int:
    if n_samples < frame_length:
        return 0
    return (n_samples - frame_length) // frame_shift + 1


def _mono(x) -> tuple[np.ndarray, int]:
    if isinstance(x, AudioBuffer):
        if x.channels != 1:
            raise AudioError("features need a mono signal")
        return x.samples[0].astype(np.float64), x.sample_rate
    return np.asarray(x, dtype=np.float64).ravel(), 16000


def _frames(x: np.ndarray, length: int, shift: int) -> np.ndarray:
    n = num_frames(len(x), length, shift)
    if n == 0:
        raise FeatureError(f"signal of {len(x)} samples is shorter than one {length}-sample frame")
    return np.lib.stride_tricks.sliding_window_view(x, length)[::shift][:n]


def fbank(x, cfg: FbankConfig = FbankConfig(), seed: int | None = None) -> FeatureMatrix:
    sig, fs = _mono(x)
    cfg.validate(fs)
    if cfg.dither > 0:
        sig = sig + cfg.dither * np.random.default_rng(seed).standard_normal(len(sig))
    frames = _frames(sig, cfg.frame_length(fs), cfg.frame_shift(fs)).copy()
    # per-frame pre-emphasis, first sample against itself
    frames[:, 1:] -= cfg.preemphasis * frames[:, :-1].copy()
    frames[:, 0] *= 1.0 - cfg.preemphasis
    frames *= np.hamming(frames.shape[1])
    pspec = np.abs(np.fft.rfft(frames, cfg.fft_size)) ** 2
    mel = pspec @ mel_filterbank(cfg, fs).T
    return FeatureMatrix(
        np.log(np.maximum(mel, LOG_FLOOR)),
        cfg.frame_shift_ms,
        cfg.frame_length_ms,
        (("fbank", cfg.num_mel_bins),),
    )


def _nccf(sig: np.ndarray, starts: np.ndarray, length: int, min_lag: int, max_lag: int) -> np.ndarray:
    """Normalized cross-correlation between each frame and its lagged copy, shape ``(frames, lags)``."""
    padded = np.concatenate([sig, np.zeros(max_lag + length)])
    csum = np.concatenate([[0.0], np.cumsum(padded**2)])
    lags = np.arange(min_lag, max_lag + 1)
    out = np.zeros((len(starts), len(lags)))
    for i, s in enumerate(starts):
        a = padded[s : s + length]
        seg = padded[s + min_lag : s + max_lag + length]
        num = np.correlate(seg, a, mode="valid")
        e_a = csum[s + length] - csum[s]
        e_b = csum[s + lags + length] - csum[s + lags]
        den = np.sqrt(np.maximum(e_a * e_b, 0.0))
        out[i] = np.where(den > 1e-20, num / np.maximum(den, 1e-300), 0.0)
    return out


def estimate_pitch(x, cfg: PitchConfig = PitchConfig(), fbank_cfg: FbankConfig = FbankConfig()):
    """Raw per-frame ``(f0_hz, nccf_peak)`` on the fbank frame grid.

    The chosen lag is the shortest local NCCF maximum within ``octave_ratio``
    of the global maximum, which suppresses period-doubling errors.
    """
    sig, fs = _mono(x)
    length, shift = fbank_cfg.frame_length(fs), fbank_cfg.frame_shift(fs)
    n = num_frames(len(sig), length, shift)
    if n == 0:
        raise FeatureError(f"signal of {len(sig)} samples is shorter than one {length}-sample frame")
    min_lag = int(np.floor(fs / cfg.max_f0))
    max_lag = int(np.ceil(fs / cfg.min_f0))
    r = _nccf(sig, np.arange(n) * shift, length, min_lag, max_lag)
    f0 = np.zeros(n)
    peak = np.zeros(n)
    for i, row in enumerate(r):
        interior = np.flatnonzero((row[1:-1] >= row[:-2]) & (row[1:-1] > row[2:])) + 1
        if len(interior) == 0:
            k = int(np.argmax(row))
        else:
            best = row[interior].max()
            k = int(interior[np.argmax(row[interior] >= cfg.octave_ratio * best)])
        peak[i] = max(row[k], 0.0)
        lag = min_lag + k
        # parabolic refinement of the lag
        if 0 < k < len(row) - 1:
            a, b, c = row[k - 1], row[k], row[k + 1]
            den = a - 2 * b + c
            if den < 0:
                lag += 0.5 * (a - c) / den
        f0[i] = fs / lag
    return f0, peak


def _delta(x: np.ndarray, window: int) -> np.ndarray:
    n = len(x)
    padded = np.concatenate([np.full(window, x[0]), x, np.full(window, x[-1])])
    num = sum(k * (padded[window + k : window + k + n] - padded[window - k : window - k + n]) for k in range(1, window + 1))
    return num / (2 * sum(k * k for k in range(1, window + 1)))


def pitch_features(x, cfg: PitchConfig = PitchConfig(), fbank_cfg: FbankConfig = FbankConfig()) -> FeatureMatrix:
    """Columns: probability of voicing, windowed-mean-normalized log pitch, delta log pitch."""
    f0, peak = estimate_pitch(x, cfg, fbank_cfg)
    pov = 1.0 / (1.0 + np.exp(-cfg.pov_slope * (peak - cfg.pov_centre)))
    voiced = peak >= cfg.voiced_threshold
    # unvoiced frames carry the last voiced pitch forward (the first voiced one backward)
    if voiced.any():
        idx = np.where(voiced, np.arange(len(f0)), -1)
        idx = np.maximum.accumulate(idx)
        idx[idx < 0] = np.flatnonzero(voiced)[0]
        track = f0[idx]
    else:
        track = np.full(len(f0), cfg.default_f0)
    logp = np.log(track)
    norm = logp - uniform_filter1d(logp, size=cfg.mean_window, mode="nearest")
    vals = np.stack([pov, norm, _delta(logp, cfg.delta_window)], axis=1)
    return FeatureMatrix(vals, fbank_cfg.frame_shift_ms, fbank_cfg.frame_length_ms, (("pov", 1), ("log_pitch", 1), ("delta_pitch", 1)))


def compute_features(x, fbank_cfg: FbankConfig = FbankConfig(), pitch_cfg: PitchConfig = PitchConfig(), seed: int | None = None) -> FeatureMatrix:
    """Fbank plus pitch (83 dims with defaults)."""
    fb = fbank(x, fbank_cfg, seed=seed)
    pt = pitch_features(x, pitch_cfg, fbank_cfg)
    return FeatureMatrix(np.hstack([fb.values, pt.values]), fb.frame_shift_ms, fb.frame_length_ms, fb.layout + pt.layout)


@dataclass(frozen=True)
class SpecAugmentConfig:
    num_freq_masks: int = 2
    max_freq_width: int = 10
    num_time_masks: int = 2
    max_time_width: int = 50

    def validate(self, frames: int, dims: int) -> None:
        if min(self.num_freq_masks, self.num_time_masks, self.max_freq_width, self.max_time_width) < 0:
            raise FeatureError("SpecAugment counts and widths must be non-negative")
        if self.num_freq_masks and self.max_freq_width >= dims:
            raise FeatureError(f"max_freq_width {self.max_freq_width} must be below {dims} dims")
        if self.num_time_masks and self.max_time_width >= frames:
            raise FeatureError(f"max_time_width {self.max_time_width} must be below {frames} frames")


def spec_augment_masks(frames: int, dims: int, cfg: SpecAugmentConfig, rng: np.random.Generator):
    """Boolean masks ``(time_mask (frames,), freq_mask (dims,))``; True means zeroed."""
    cfg.validate(frames, dims)
    fmask = np.zeros(dims, dtype=bool)
    tmask = np.zeros(frames, dtype=bool)
    for _ in range(cfg.num_freq_masks):
        w = int(rng.integers(0, cfg.max_freq_width + 1))
        s = int(rng.integers(0, dims - w + 1))
        fmask[s : s + w] = True
    for _ in range(cfg.num_time_masks):
        w = int(rng.integers(0, cfg.max_time_width + 1))
        s = int(rng.integers(0, frames - w + 1))
        tmask[s : s + w] = True
    return tmask, fmask


def spec_augment(f: FeatureMatrix, cfg: SpecAugmentConfig = SpecAugmentConfig(), seed=None) -> FeatureMatrix:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tmask, fmask = spec_augment_masks(f.frames, f.dims, cfg, rng)
    out = f.values.copy()
    out[tmask, :] = 0.0
    out[:, fmask] = 0.0
    return FeatureMatrix(out, f.frame_shift_ms, f.frame_length_ms, f.layout)


def write_features(path: str | Path, f) -> None:
    """Binary matrix: magic, uint32 rows, uint32 cols, float32 little-endian row-major."""
    values = f.values if isinstance(f, FeatureMatrix) else np.asarray(f)
    rows, cols = values.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_features(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != FEATURE_MAGIC:
        raise FeatureError(f"{path}: not a feature file")
    rows, cols = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * rows * cols:
        raise FeatureError(f"{path}: truncated feature file")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float32)
