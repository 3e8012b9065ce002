"""Synthetic test signals: tones, sawtooths and a speech-like babble of voiced/unvoiced syllables."""

from __future__ import annotations

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer


def tone(freq: float, duration: float, fs: int = 16000, amplitude: float = 0.5) -> AudioBuffer:
    t = np.arange(int(round(duration * fs))) / fs
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq * t), fs)


def sawtooth(freq: float, duration: float, fs: int = 16000, amplitude: float = 0.5) -> AudioBuffer:
    t = np.arange(int(round(duration * fs))) / fs
    return AudioBuffer(amplitude * sps.sawtooth(2 * np.pi * freq * t), fs)


def _resonator(x: np.ndarray, freq: float, bandwidth: float, fs: int) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2 * np.pi * freq / fs
    return sps.lfilter([1 - r], [1, -2 * r * np.cos(theta), r * r], x)


def speech_like(duration: float, fs: int = 16000, seed: int | None = None, level: float = 0.1) -> AudioBuffer:
    """Syllable-rate modulated harmonic and noise segments with short pauses.

    Voiced syllables have a gliding f0 in 90-260 Hz, harmonics up to Nyquist
    with a -6 dB/octave tilt and two formant resonances; unvoiced ones are
    high-passed noise. About 15% of the time is silence.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    out = np.zeros(n)
    pos = int(rng.integers(0, fs // 20))
    while pos < n:
        if rng.random() < 0.15:
            pos += int(rng.uniform(0.05, 0.2) * fs)
            continue
        seg = int(rng.uniform(0.08, 0.25) * fs)
        t = np.arange(seg) / fs
        env = np.sin(np.pi * np.arange(seg) / seg) ** 2
        if rng.random() < 0.75:
            f0 = rng.uniform(90, 260) * (1 + rng.uniform(-0.15, 0.15) * t / t[-1])
            phase = 2 * np.pi * np.cumsum(f0) / fs
            src = sum(np.sin(k * phase) / k for k in range(1, int(0.95 * fs / 2 / f0.max())))
            src = src + 4 * _resonator(src, rng.uniform(300, 900), 120, fs) + 2 * _resonator(src, rng.uniform(1000, 2600), 200, fs)
        else:
            src = sps.lfilter([1, -0.9], [1], rng.standard_normal(seg)) * 0.3
        src = src / (np.std(src) + 1e-12)
        end = min(n, pos + seg)
        out[pos:end] += (env * src)[: end - pos]
        pos += int(seg * rng.uniform(0.9, 1.1))
    out *= level / (np.std(out) + 1e-12)
    return AudioBuffer(out, fs)


def white_noise(duration: float, fs: int = 16000, seed: int | None = None, level: float = 0.1) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    return AudioBuffer(level * rng.standard_normal(int(round(duration * fs))), fs)


def pink_noise(duration: float, fs: int = 16000, seed: int | None = None, level: float = 0.1) -> AudioBuffer:
    """1/f-power noise shaped in the frequency domain."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / fs)
    spec[1:] /= np.sqrt(f[1:] / f[1])
    spec[0] = 0
    x = np.fft.irfft(spec, n)
    return AudioBuffer(level * x / (np.std(x) + 1e-12), fs)
