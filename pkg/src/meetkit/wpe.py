"""Multi-channel weighted prediction error (WPE) dereverberation, offline/batch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer, AudioError, Spectrogram, StftConfig, istft, stft

VARIANCE_FLOOR = 1e-10


@dataclass(frozen=True)
class WpeConfig:
    taps: int = 10
    delay: int = 3
    iterations: int = 3
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.taps < 1 or self.delay < 1 or self.iterations < 1:
            raise AudioError("taps, delay and iterations must all be >= 1")
        if not self.epsilon > 0:
            raise AudioError("epsilon must be positive")


def _delayed_stack(y: np.ndarray, taps: int, delay: int) -> np.ndarray:
    """Stack delayed frames: ``(F, M, T) -> (F, K*M, T)`` holding y(t - delay - k)."""
    F, M, T = y.shape
    out = np.zeros((F, taps * M, T), dtype=y.dtype)
    for k in range(taps):
        d = delay + k
        if d >= T:
            break
        out[:, k * M : (k + 1) * M, d:] = y[:, :, : T - d]
    return out


def wpe_bins(y: np.ndarray, cfg: WpeConfig = WpeConfig()) -> np.ndarray:
    """Dereverberate a ``(channels, frames, bins)`` complex array."""
    if y.ndim != 3:
        raise AudioError(f"expected (channels, frames, bins), got shape {y.shape}")
    M, T, F = y.shape
    if M < 1 or T < cfg.taps + cfg.delay:
        raise AudioError(f"need at least taps + delay = {cfg.taps + cfg.delay} frames, got {T}")
    if not np.all(np.isfinite(y)):
        raise AudioError("input spectrogram contains non-finite values")

    Y = np.ascontiguousarray(np.transpose(y, (2, 0, 1)).astype(np.complex128))  # F x M x T
    Ytil = _delayed_stack(Y, cfg.taps, cfg.delay)  # F x KM x T
    start = cfg.delay + cfg.taps - 1
    global_power = float(np.mean(np.abs(Y) ** 2))
    floor = max(VARIANCE_FLOOR * global_power, np.finfo(float).tiny)
    KM = Ytil.shape[1]
    eye = np.eye(KM)

    X = Y
    for _ in range(cfg.iterations):
        lam = np.maximum(np.mean(np.abs(X) ** 2, axis=1), floor)  # F x T
        weighted = Ytil / lam[:, None, :]
        R = weighted @ Ytil.conj().transpose(0, 2, 1)  # F x KM x KM
        P = weighted @ Y.conj().transpose(0, 2, 1)  # F x KM x M
        load = cfg.epsilon * np.real(np.trace(R, axis1=1, axis2=2)) / KM
        load = np.maximum(load, 1e-12)  # R is scale-free; keeps the all-zero case solvable
        R = R + load[:, None, None] * eye
        G = np.linalg.solve(R, P)
        X = Y - G.conj().transpose(0, 2, 1) @ Ytil
        X[:, :, :start] = Y[:, :, :start]
    return np.transpose(X, (1, 2, 0))


def wpe(spec: Spectrogram, cfg: WpeConfig = WpeConfig()) -> Spectrogram:
    """Estimate the late reverberation tail per frequency and subtract it.

    Frames earlier than ``delay + taps - 1`` have no full prediction context and
    pass through unchanged.
    """
    return spec.with_bins(wpe_bins(spec.bins, cfg))


def wpe_audio(x: AudioBuffer, cfg: WpeConfig = WpeConfig(), stft_cfg: StftConfig = StftConfig()) -> AudioBuffer:
    """Time-domain convenience wrapper: STFT -> WPE -> iSTFT."""
    out = istft(wpe(stft(x, stft_cfg), cfg))
    return AudioBuffer(out.samples.astype(x.samples.dtype), x.sample_rate)
