"""Signal containers, WAV I/O, resampling, STFT/iSTFT, FIR filtering and SI-SDR."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 16000
SI_SDR_CAP_DB = 100.0

# resampler design
KAISER_BETA = 8.0
RESAMPLE_HALF_WIDTH = 32


class AudioError(ValueError):
    """Raised for malformed audio data or invalid processing parameters."""


@dataclass
class AudioBuffer:
    """Multi-channel PCM samples, shape ``(channels, length)``.

    Float32 is the storage format for anything read from disk; float64 arrays
    passed in by callers are kept as float64 so that numerical checks do not
    lose precision.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise AudioError(f"samples must be 1-D or 2-D, got shape {x.shape}")
        if not np.issubdtype(x.dtype, np.floating):
            x = x.astype(np.float32)
        if x.dtype not in (np.float32, np.float64):
            x = x.astype(np.float64)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise AudioError("samples contain non-finite values")
        self.samples = x
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate

    def channel(self, index: int) -> "AudioBuffer":
        return AudioBuffer(self.samples[index : index + 1].copy(), self.sample_rate)

    def mono(self) -> np.ndarray:
        """First channel as a 1-D array (the buffer must be single-channel)."""
        if self.channels != 1:
            raise AudioError(f"expected a mono buffer, got {self.channels} channels")
        return self.samples[0]

    def copy(self) -> "AudioBuffer":
        return AudioBuffer(self.samples.copy(), self.sample_rate)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a PCM16 or IEEE-float32 RIFF/WAVE file."""
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises ValueError/struct.error on bad headers
        raise AudioError(f"{path}: malformed or unsupported WAV file ({exc})") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        x = data
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    x = x.T if x.ndim == 2 else x[None, :]
    return AudioBuffer(np.ascontiguousarray(x, dtype=np.float32), rate)


def write_wav(path: str | Path, audio: AudioBuffer, encoding: str = "float32") -> None:
    """Write ``audio`` as ``float32`` (lossless) or ``pcm16``."""
    x = audio.samples
    if encoding == "float32":
        data = x.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise AudioError(f"unsupported encoding {encoding!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), audio.sample_rate, data.T if data.shape[0] > 1 else data[0])


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _polyphase_filter(up: int, down: int) -> np.ndarray:
    factor = max(up, down)
    taps = 2 * RESAMPLE_HALF_WIDTH * factor + 1
    return sps.firwin(taps, 1.0 / factor, window=("kaiser", KAISER_BETA)) * up


def resample_array(x: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    """Resample the last axis of ``x``; output length is ``round(n * target / source)``."""
    if source_rate <= 0 or target_rate <= 0:
        raise AudioError("sample rates must be positive")
    if source_rate == target_rate:
        return np.array(x, copy=True)
    ratio = Fraction(int(target_rate), int(source_rate))
    return _rational_resample(x, ratio, round(x.shape[-1] * target_rate / source_rate))


def _rational_resample(x: np.ndarray, ratio: Fraction, out_len: int) -> np.ndarray:
    up, down = ratio.numerator, ratio.denominator
    y = sps.resample_poly(x, up, down, axis=-1, window=_polyphase_filter(up, down))
    n = y.shape[-1]
    if n >= out_len:
        return y[..., :out_len]
    pad = [(0, 0)] * (y.ndim - 1) + [(0, out_len - n)]
    return np.pad(y, pad)


def resample(x: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling to ``target_rate``."""
    if target_rate <= 0 or int(target_rate) != target_rate:
        raise AudioError(f"target_rate must be a positive integer, got {target_rate}")
    if target_rate == x.sample_rate:
        return x.copy()
    y = resample_array(x.samples.astype(np.float64), x.sample_rate, int(target_rate))
    return AudioBuffer(y.astype(x.samples.dtype), int(target_rate))


def change_rate(x: np.ndarray, factor: float, max_denominator: int = 1000) -> np.ndarray:
    """Time-scale ``x`` by ``1/factor`` via resampling (``len -> round(len / factor)``)."""
    ratio = Fraction(factor).limit_denominator(max_denominator)
    if ratio == 1:
        return np.array(x, copy=True)
    return _rational_resample(x, 1 / ratio, round(x.shape[-1] / factor))


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    hop: int = 128
    window: str = "hann"
    center: bool = True

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size & (self.fft_size - 1):
            raise AudioError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0 < self.hop <= self.fft_size:
            raise AudioError(f"hop must be in (0, fft_size], got {self.hop}")
        if self.window != "hann":
            raise AudioError(f"unsupported window {self.window!r}")
        if not sps.check_COLA(self.window_array(), self.fft_size, self.fft_size - self.hop):
            raise AudioError(f"hann window with fft {self.fft_size} / hop {self.hop} is not COLA")

    def window_array(self) -> np.ndarray:
        return sps.get_window(self.window, self.fft_size, fftbins=True)

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1


STFT_PRESETS = {
    "wpe": StftConfig(512, 128),
    "half": StftConfig(512, 256),
    "short": StftConfig(256, 64),
    "long": StftConfig(1024, 256),
}


@dataclass
class Spectrogram:
    """Complex STFT bins, shape ``(channels, frames, fft_size // 2 + 1)``."""

    bins: np.ndarray
    config: StftConfig
    sample_rate: int
    length: int = field(default=0)

    @property
    def channels(self) -> int:
        return self.bins.shape[0]

    @property
    def frames(self) -> int:
        return self.bins.shape[1]

    def with_bins(self, bins: np.ndarray) -> "Spectrogram":
        return Spectrogram(bins, self.config, self.sample_rate, self.length)


def frame_count(length: int, cfg: StftConfig) -> int:
    if cfg.center:
        return 1 + length // cfg.hop
    if length < cfg.fft_size:
        return 0
    return 1 + (length - cfg.fft_size) // cfg.hop


def stft(x: AudioBuffer, cfg: StftConfig = STFT_PRESETS["wpe"]) -> Spectrogram:
    """Hann-windowed STFT; with ``center`` the signal is zero-padded by ``fft_size // 2``."""
    data = x.samples.astype(np.float64)
    n_frames = frame_count(x.length, cfg)
    if cfg.center:
        pad = cfg.fft_size // 2
        total = (n_frames - 1) * cfg.hop + cfg.fft_size
        data = np.pad(data, ((0, 0), (pad, max(0, total - pad - x.length))))
    if n_frames == 0:
        return Spectrogram(np.zeros((x.channels, 0, cfg.bins), complex), cfg, x.sample_rate, x.length)
    frames = np.lib.stride_tricks.sliding_window_view(data, cfg.fft_size, axis=-1)[:, :: cfg.hop][:, :n_frames]
    bins = np.fft.rfft(frames * cfg.window_array(), axis=-1)
    return Spectrogram(bins, cfg, x.sample_rate, x.length)


def istft(spec: Spectrogram, dtype=np.float64) -> AudioBuffer:
    """Weighted overlap-add inverse of :func:`stft`."""
    cfg = spec.config
    win = cfg.window_array()
    n_ch, n_frames, _ = spec.bins.shape
    total = (n_frames - 1) * cfg.hop + cfg.fft_size if n_frames else 0
    frames = np.fft.irfft(spec.bins, n=cfg.fft_size, axis=-1) * win
    out = np.zeros((n_ch, total))
    norm = np.zeros(total)
    for t in range(n_frames):
        s = t * cfg.hop
        out[:, s : s + cfg.fft_size] += frames[:, t]
        norm[s : s + cfg.fft_size] += win**2
    valid = norm > 1e-8
    out[:, valid] /= norm[valid]
    out[:, ~valid] = 0.0
    if cfg.center:
        out = out[:, cfg.fft_size // 2 :]
    length = spec.length or out.shape[1]
    if out.shape[1] < length:
        out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    return AudioBuffer(out[:, :length].astype(dtype), spec.sample_rate)


# ---------------------------------------------------------------------------
# Filtering and metrics
# ---------------------------------------------------------------------------


def fir_filter(x: AudioBuffer, taps, mode: str = "full") -> AudioBuffer:
    """Linear convolution of every channel with ``taps``.

    ``mode="full"`` returns ``length + len(taps) - 1`` samples; ``"same"`` keeps the
    first ``length`` samples (causal, no delay compensation).
    """
    h = np.asarray(taps, dtype=np.float64)
    if h.ndim != 1 or h.size == 0:
        raise AudioError("taps must be a non-empty 1-D vector")
    if not np.all(np.isfinite(h)):
        raise AudioError("taps must be finite")
    if mode not in ("full", "same"):
        raise AudioError(f"unknown mode {mode!r}")
    y = sps.oaconvolve(x.samples.astype(np.float64), h[None, :], axes=-1) if x.length else np.zeros((x.channels, h.size - 1))
    if mode == "same":
        y = y[:, : x.length]
    return AudioBuffer(y.astype(x.samples.dtype), x.sample_rate)


def convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution along the last axis (float64)."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape[-1] == 0 or h.shape[-1] == 0:
        return np.zeros(x.shape[:-1] + (max(0, x.shape[-1] + h.shape[-1] - 1),))
    return sps.oaconvolve(x, h, axes=-1)


def _as_mono(x) -> np.ndarray:
    if isinstance(x, AudioBuffer):
        return x.mono().astype(np.float64)
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 1:
        raise AudioError("si_sdr expects mono signals")
    return a


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB, capped at +100 dB for a perfect estimate."""
    ref = _as_mono(reference)
    est = _as_mono(estimate)
    if ref.shape != est.shape:
        raise AudioError(f"length mismatch: {ref.size} vs {est.size}")
    ref_power = float(np.dot(ref, ref))
    if ref_power <= 0.0:
        raise AudioError("reference has zero power")
    target = (np.dot(est, ref) / ref_power) * ref
    residual = est - target
    t_pow = float(np.dot(target, target))
    r_pow = float(np.dot(residual, residual))
    if r_pow <= t_pow * 10 ** (-SI_SDR_CAP_DB / 10):
        return SI_SDR_CAP_DB
    if t_pow == 0.0:
        return -SI_SDR_CAP_DB
    return max(-SI_SDR_CAP_DB, 10 * math.log10(t_pow / r_pow))


def power(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x)) if x.size else 0.0
