"""Augmentation battery: noise at SNR, reverberation, speed, pitch, EQ and overlapped-speech mixtures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer, AudioError, change_rate, convolve, power
from .room import Rir
from .sot import SotTranscript, sot_serialize

DEEMPHASIS_COEF = 0.97
SPEAKER_COUNT_PROBS = {2: 0.5, 3: 0.3, 4: 0.2}


@dataclass
class Utterance:
    id: str
    speaker_id: str
    audio: AudioBuffer
    transcript: str = ""
    start: float = 0.0

    @property
    def duration(self) -> float:
        return self.audio.length / self.audio.sample_rate


# ---------------------------------------------------------------------------
# Noise and reverberation
# ---------------------------------------------------------------------------


def _fit_noise(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Random crop when the noise is long enough, otherwise tile from a random offset."""
    if noise.shape[-1] >= n:
        off = int(rng.integers(0, noise.shape[-1] - n + 1))
        return noise[..., off : off + n]
    off = int(rng.integers(0, noise.shape[-1]))
    reps = math.ceil((n + off) / noise.shape[-1])
    return np.tile(noise, reps)[..., off : off + n]


def mix_noise(x: AudioBuffer, noise: AudioBuffer, snr_db: float, seed: int | None = None) -> AudioBuffer:
    """``x + g * noise`` with ``g`` chosen so that ``10 log10(P_x / P_gn) == snr_db``.

    Powers are taken over all channels. Mono noise is broadcast to every channel.
    """
    if noise.sample_rate != x.sample_rate:
        raise AudioError("noise sample rate does not match the signal")
    if noise.channels not in (1, x.channels):
        raise AudioError("noise must be mono or match the signal's channel count")
    rng = np.random.default_rng(seed)
    xs = x.samples.astype(np.float64)
    n = _fit_noise(noise.samples.astype(np.float64), x.length, rng)
    n = np.broadcast_to(n, xs.shape)
    p_x, p_n = power(xs), power(n)
    if p_x <= 0:
        raise AudioError("signal has zero power")
    if p_n <= 0:
        raise AudioError("noise has zero power")
    g = math.sqrt(p_x / (p_n * 10 ** (snr_db / 10)))
    return AudioBuffer((xs + g * n).astype(x.samples.dtype), x.sample_rate)


def add_reverb(x: AudioBuffer, rir: Rir | np.ndarray, fs: int | None = None) -> AudioBuffer:
    """Convolve with a RIR, keeping the input length and aligning to the direct path.

    The direct path is taken as the RIR's absolute-maximum tap. A multi-mic RIR
    applied to a mono signal yields one output channel per microphone.
    """
    if isinstance(rir, Rir):
        taps, rate = rir.taps, rir.sample_rate
    else:
        taps, rate = np.atleast_2d(np.asarray(rir, dtype=float)), fs or x.sample_rate
    if rate != x.sample_rate:
        raise AudioError(f"sample-rate mismatch: signal {x.sample_rate}, RIR {rate}")
    if taps.shape[1] == 0:
        raise AudioError("empty RIR")
    if x.channels not in (1, taps.shape[0]) and taps.shape[0] != 1:
        raise AudioError("RIR channel count does not match the signal")
    lead = int(np.argmax(np.abs(taps).max(axis=0)))
    y = convolve(x.samples, taps)[:, lead : lead + x.length]
    return AudioBuffer(y.astype(x.samples.dtype), x.sample_rate)


# ---------------------------------------------------------------------------
# Speed and pitch
# ---------------------------------------------------------------------------


def speed_perturb(x: AudioBuffer, factor: float) -> AudioBuffer:
    """Resample-based speed change: length becomes ``round(n / factor)``, pitch scales by ``factor``."""
    if not 0.5 <= factor <= 2.0:
        raise AudioError(f"speed factor must lie in [0.5, 2.0], got {factor}")
    if factor == 1.0:
        return x.copy()
    y = change_rate(x.samples.astype(np.float64), factor)
    return AudioBuffer(y.astype(x.samples.dtype), x.sample_rate)


def time_stretch(x: np.ndarray, rate: float, fs: int = 16000, frame_ms: float = 40.0, search_ms: float = 10.0) -> np.ndarray:
    """WSOLA time stretch of a 1-D signal; output length ``round(len(x) * rate)``.

    Each synthesis frame is taken from near its nominal input position, shifted
    within ``search_ms`` to best continue the previously copied frame, and
    overlap-added with a Hann window at 50% overlap.
    """
    n_out = int(round(x.size * rate))
    L = int(round(frame_ms * fs / 1000)) // 2 * 2
    hop = L // 2
    tol = int(round(search_ms * fs / 1000))
    win = np.hanning(L + 2)[1:-1]
    padded = np.pad(x, (L + tol, 2 * L + tol + int(x.size / rate)))
    out = np.zeros(n_out + 2 * L)
    norm = np.zeros_like(out)
    prev = None
    for k in range(0, n_out + L, hop):
        nominal = int(round(k / rate)) + L + tol
        if prev is None:
            pos = nominal
        else:
            target = padded[prev + hop : prev + hop + L]
            region = padded[nominal - tol : nominal + tol + L]
            corr = np.correlate(region, target, mode="valid")
            pos = nominal - tol + int(np.argmax(corr))
        out[k : k + L] += win * padded[pos : pos + L]
        norm[k : k + L] += win
        prev = pos
    valid = norm > 1e-8
    out[valid] /= norm[valid]
    return out[:n_out]


def pitch_shift(x: AudioBuffer, semitones: float, seed: int | None = None) -> AudioBuffer:
    """Shift pitch by ``semitones`` keeping the duration: resample, then WSOLA-stretch back."""
    del seed  # deterministic; accepted for a uniform augmentation signature
    if abs(semitones) > 4:
        raise AudioError(f"pitch shift limited to +-4 semitones, got {semitones}")
    if semitones == 0:
        return x.copy()
    ratio = 2 ** (semitones / 12)
    out = []
    for ch in x.samples.astype(np.float64):
        fast = change_rate(ch, ratio)
        out.append(time_stretch(fast, x.length / fast.size, x.sample_rate)[: x.length])
    y = np.stack(out)
    if y.shape[1] < x.length:
        y = np.pad(y, ((0, 0), (0, x.length - y.shape[1])))
    return AudioBuffer(y.astype(x.samples.dtype), x.sample_rate)


# ---------------------------------------------------------------------------
# EQ
# ---------------------------------------------------------------------------


@dataclass
class EqSpec:
    """``kind`` is one of low_pass, high_pass, de_emphasis, response_curve.

    ``curve`` is a list of ``(frequency_hz, gain_db)`` points interpolated
    linearly over log frequency.
    """

    kind: str
    cutoff: float | None = None
    weight: float = 1.0
    coefficient: float = DEEMPHASIS_COEF
    curve: list[tuple[float, float]] = field(default_factory=list)
    taps: int = 129

    def validate(self, fs: int) -> None:
        if self.kind in ("low_pass", "high_pass"):
            if self.cutoff is None or not 0 < self.cutoff < fs / 2:
                raise AudioError(f"cutoff must lie in (0, {fs / 2}) Hz, got {self.cutoff}")
            if not 0 <= self.weight <= 1:
                raise AudioError("weight must lie in [0, 1]")
        elif self.kind == "de_emphasis":
            if not 0 <= self.coefficient < 1:
                raise AudioError("de-emphasis coefficient must lie in [0, 1)")
        elif self.kind == "response_curve":
            if not self.curve:
                raise AudioError("response curve needs at least one point")
            for f, g in self.curve:
                if not 0 < f < fs / 2:
                    raise AudioError(f"curve frequency {f} outside (0, {fs / 2})")
                if abs(g) > 12:
                    raise AudioError(f"curve gain {g} dB outside +-12 dB")
        else:
            raise AudioError(f"unknown EQ kind {self.kind!r}")


def pre_emphasis(x: np.ndarray, a: float = DEEMPHASIS_COEF) -> np.ndarray:
    return sps.lfilter([1.0, -a], [1.0], x, axis=-1)


def de_emphasis(x: np.ndarray, a: float = DEEMPHASIS_COEF) -> np.ndarray:
    return sps.lfilter([1.0], [1.0, -a], x, axis=-1)


def _centred_fir(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    delay = (h.size - 1) // 2
    return convolve(x, h[None, :] if x.ndim == 2 else h)[..., delay : delay + x.shape[-1]]


def eq_filter(x: AudioBuffer, spec: EqSpec) -> AudioBuffer:
    """Apply a simulated EQ: weighted (wet/dry) FIR low/high-pass, de-emphasis, or a dB response curve."""
    fs = x.sample_rate
    spec.validate(fs)
    data = x.samples.astype(np.float64)
    if spec.kind in ("low_pass", "high_pass"):
        taps = spec.taps | 1
        h = sps.firwin(taps, spec.cutoff, fs=fs, pass_zero=spec.kind == "low_pass", window="hamming")
        y = spec.weight * _centred_fir(data, h) + (1 - spec.weight) * data
    elif spec.kind == "de_emphasis":
        y = de_emphasis(data, spec.coefficient)
    else:
        n = data.shape[1]
        freqs = np.fft.rfftfreq(n, 1 / fs)
        pts = sorted(spec.curve)
        f_pts = np.log([p[0] for p in pts])
        g_pts = np.array([p[1] for p in pts])
        logf = np.log(np.maximum(freqs, 1e-3))
        gain_db = np.interp(logf, f_pts, g_pts)
        y = np.fft.irfft(np.fft.rfft(data, axis=1) * 10 ** (gain_db / 20), n, axis=1)
    return AudioBuffer(y.astype(x.samples.dtype), fs)


def random_eq(rng: np.random.Generator, fs: int) -> EqSpec:
    """Draw one EQ setting for dataset augmentation."""
    kind = rng.choice(["low_pass", "high_pass", "de_emphasis", "response_curve"])
    if kind == "low_pass":
        return EqSpec("low_pass", cutoff=float(rng.uniform(0.2, 0.45) * fs), weight=float(rng.uniform(0.3, 1.0)))
    if kind == "high_pass":
        return EqSpec("high_pass", cutoff=float(rng.uniform(50, 300)), weight=float(rng.uniform(0.3, 1.0)))
    if kind == "de_emphasis":
        return EqSpec("de_emphasis")
    freqs = np.geomspace(100, 0.45 * fs, 6)
    return EqSpec("response_curve", curve=[(float(f), float(rng.uniform(-6, 6))) for f in freqs])


# ---------------------------------------------------------------------------
# Overlapped speech
# ---------------------------------------------------------------------------


@dataclass
class OverlapPolicy:
    speaker_probs: dict[int, float] = field(default_factory=lambda: dict(SPEAKER_COUNT_PROBS))
    overlap_range: tuple[float, float] = (0.25, 0.50)
    gain_db_range: tuple[float, float] = (-3.0, 3.0)
    utterances_per_speaker: int = 1
    jitter: float = 0.2

    def validate(self) -> None:
        if not self.speaker_probs or any(k not in (2, 3, 4) for k in self.speaker_probs):
            raise AudioError("speaker counts must be drawn from {2, 3, 4}")
        if abs(sum(self.speaker_probs.values()) - 1) > 1e-9 or min(self.speaker_probs.values()) < 0:
            raise AudioError("speaker-count probabilities must sum to one")
        lo, hi = self.overlap_range
        if not 0 <= lo <= hi <= 1:
            raise AudioError("overlap range must satisfy 0 <= lo <= hi <= 1")
        if self.utterances_per_speaker < 1:
            raise AudioError("utterances_per_speaker must be >= 1")


@dataclass
class PlacedUtterance:
    utterance: Utterance
    onset: int  # samples
    gain: float

    @property
    def start(self) -> float:
        return self.onset / self.utterance.audio.sample_rate

    @property
    def end_sample(self) -> int:
        return self.onset + self.utterance.audio.length


@dataclass
class MeetingMixture:
    audio: AudioBuffer
    timeline: list[PlacedUtterance]
    n_speakers: int
    overlap_ratio: float
    target_overlap: float
    sot: SotTranscript


def overlap_ratio(intervals, total: int | None = None) -> float:
    """Fraction of ``[0, total)`` covered by two or more of the ``(start, end)`` intervals."""
    events = []
    for s, e in intervals:
        if e > s:
            events.append((s, 1))
            events.append((e, -1))
    if not events:
        return 0.0
    events.sort()
    total = max(e for _, e in intervals) if total is None else total
    if total <= 0:
        return 0.0
    active, last, covered = 0, events[0][0], 0
    for t, delta in events:
        if active >= 2:
            covered += t - last
        active += delta
        last = t
    return covered / total


def simulate_overlap(
    pools: dict[str, list[Utterance]],
    policy: OverlapPolicy | None = None,
    seed: int | None = None,
) -> MeetingMixture:
    """Build one overlapped multi-speaker mixture.

    Utterances are placed left to right. Each onset is chosen so that the
    overlapped time moves toward ``target * total`` for a target drawn from
    ``policy.overlap_range``. Utterances are never truncated.
    """
    policy = policy or OverlapPolicy()
    policy.validate()
    speakers = sorted(k for k, v in pools.items() if v)
    if not speakers:
        raise AudioError("empty utterance pools")
    rng = np.random.default_rng(seed)
    counts = sorted(policy.speaker_probs)
    probs = np.array([policy.speaker_probs[c] for c in counts])
    n_spk = int(rng.choice(counts, p=probs))
    if len(speakers) < n_spk:
        raise AudioError(f"need {n_spk} distinct speakers, pools have {len(speakers)}")
    chosen = [speakers[i] for i in rng.choice(len(speakers), n_spk, replace=False)]

    utts = []
    for spk in chosen:
        pool = pools[spk]
        for j in rng.choice(len(pool), min(policy.utterances_per_speaker, len(pool)), replace=False):
            utts.append(pool[int(j)])
    order = rng.permutation(len(utts))
    utts = [utts[i] for i in order]
    # consecutive utterances must come from different speakers
    for i in range(1, len(utts)):
        if utts[i].speaker_id == utts[i - 1].speaker_id:
            for j in range(i + 1, len(utts)):
                if utts[j].speaker_id != utts[i - 1].speaker_id:
                    utts[i], utts[j] = utts[j], utts[i]
                    break

    fs = utts[0].audio.sample_rate
    if any(u.audio.sample_rate != fs or u.audio.channels != utts[0].audio.channels for u in utts):
        raise AudioError("all utterances must share sample rate and channel count")
    target = float(rng.uniform(*policy.overlap_range))

    placed: list[PlacedUtterance] = []
    for u in utts:
        gain = 10 ** (rng.uniform(*policy.gain_db_range) / 20)
        d = u.audio.length
        if not placed:
            placed.append(PlacedUtterance(u, 0, gain))
            continue
        end = max(p.end_sample for p in placed)
        prev_onset = placed[-1].onset
        overlapped = overlap_ratio([(p.onset, p.end_sample) for p in placed], end) * end
        want = (target * (end + d) - overlapped) / (1 + target)
        want *= 1 + rng.uniform(-policy.jitter, policy.jitter)
        x = int(np.clip(round(want), 0, min(d, end - prev_onset)))
        placed.append(PlacedUtterance(u, end - x, gain))

    total = max(p.end_sample for p in placed)
    mix = np.zeros((utts[0].audio.channels, total))
    for p in placed:
        mix[:, p.onset : p.end_sample] += p.gain * p.utterance.audio.samples.astype(np.float64)
    ratio = overlap_ratio([(p.onset, p.end_sample) for p in placed], total)
    scored = [(p.utterance.transcript, p.start, p.utterance.speaker_id) for p in placed if p.utterance.transcript]
    sot = sot_serialize(scored) if scored else SotTranscript([])
    return MeetingMixture(AudioBuffer(mix, fs), placed, n_spk, ratio, target, sot)
