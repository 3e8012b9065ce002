"""Weighted delay-and-sum beamforming with GCC-PHAT TDOAs and Viterbi smoothing."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer, AudioError


@dataclass(frozen=True)
class BeamformConfig:
    segment_ms: float = 500.0
    step_ms: float = 250.0
    max_lag_ms: float = 30.0
    n_peaks: int = 4
    transition_weight: float = 25.0
    reference_window_s: float = 60.0
    smoothing: float = 0.9

    def __post_init__(self):
        if self.segment_ms <= 0 or self.step_ms <= 0 or self.step_ms > self.segment_ms:
            raise AudioError("need 0 < step_ms <= segment_ms")
        if self.max_lag_ms <= 0 or self.n_peaks < 1 or self.transition_weight < 0:
            raise AudioError("invalid max_lag_ms / n_peaks / transition_weight")
        if not 0 <= self.smoothing < 1:
            raise AudioError("smoothing must lie in [0, 1)")

    def samples(self, fs: int) -> tuple[int, int, int]:
        """(segment_length, segment_step, max_lag) in samples."""
        seg = int(round(self.segment_ms * fs / 1000))
        step = int(round(self.step_ms * fs / 1000))
        lag = int(round(self.max_lag_ms * fs / 1000))
        return seg, step, lag


@dataclass
class TdoaTrack:
    """Per-channel, per-segment delays relative to the reference channel."""

    segment_length: int
    segment_step: int
    max_lag: int
    reference: int
    delays: np.ndarray  # (channels, segments), int
    scores: np.ndarray  # (channels, segments)

    @property
    def n_segments(self) -> int:
        return self.delays.shape[1]


@dataclass
class ChannelWeights:
    weights: np.ndarray  # (channels, segments), columns sum to one


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


# ---------------------------------------------------------------------------
# GCC-PHAT
# ---------------------------------------------------------------------------


def gcc_phat_curve(a: np.ndarray, b: np.ndarray, max_lag: int) -> np.ndarray:
    """PHAT-weighted cross-correlation over lags ``-max_lag..max_lag``.

    Index ``max_lag + k`` holds lag ``k``; a peak at positive ``k`` means ``b``
    lags ``a`` by ``k`` samples.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise AudioError("gcc_phat expects two mono signals of equal length")
    if a.size < 2 * max_lag:
        raise AudioError(f"signals shorter than 2 * max_lag ({2 * max_lag})")
    if not np.any(a) or not np.any(b):
        raise AudioError("zero-energy input to gcc_phat")
    n = _next_pow2(a.size + b.size)
    cross = np.fft.rfft(b, n) * np.conj(np.fft.rfft(a, n))
    mag = np.abs(cross)
    cross = np.divide(cross, mag, out=np.zeros_like(cross), where=mag > 1e-12 * mag.max())
    cc = np.fft.irfft(cross, n)
    return np.concatenate([cc[-max_lag:], cc[: max_lag + 1]]) if max_lag else cc[:1]


def gcc_phat(a, b, max_lag: int, n_peaks: int = 1) -> list[tuple[int, float]]:
    """The ``n_peaks`` highest local maxima of the GCC-PHAT curve as ``(lag, score)``."""
    if n_peaks < 1:
        raise AudioError("n_peaks must be >= 1")
    cc = gcc_phat_curve(a, b, max_lag)
    left = np.concatenate([[-np.inf], cc[:-1]])
    right = np.concatenate([cc[1:], [-np.inf]])
    peaks = np.nonzero((cc > left) & (cc >= right))[0]
    if peaks.size == 0:
        peaks = np.array([int(np.argmax(cc))])
    order = peaks[np.argsort(-cc[peaks], kind="stable")][:n_peaks]
    return [(int(i) - max_lag, float(cc[i])) for i in order]


# ---------------------------------------------------------------------------
# Viterbi TDOA selection
# ---------------------------------------------------------------------------


def _check_candidates(candidates) -> None:
    if len(candidates) == 0:
        raise AudioError("no segments to decode")
    for s, cands in enumerate(candidates):
        if len(cands) == 0:
            raise AudioError(f"segment {s} has no TDOA candidates")


def viterbi_path(candidates, transition_weight: float, max_lag: int) -> list[int]:
    """Exact single-channel decode; returns the chosen candidate index per segment.

    Maximises ``sum(score) - transition_weight * sum(|lag_t - lag_{t-1}|) / max_lag``.
    Ties resolve towards the lower candidate index.
    """
    _check_candidates(candidates)
    scale = transition_weight / max(max_lag, 1)
    lags = [np.array([c[0] for c in seg], dtype=float) for seg in candidates]
    scores = [np.array([c[1] for c in seg], dtype=float) for seg in candidates]
    acc = scores[0].copy()
    back = []
    for t in range(1, len(candidates)):
        trans = acc[:, None] - scale * np.abs(lags[t - 1][:, None] - lags[t][None, :])
        prev = np.argmax(trans, axis=0)
        back.append(prev)
        acc = trans[prev, np.arange(lags[t].size)] + scores[t]
    path = [int(np.argmax(acc))]
    for prev in reversed(back):
        path.append(int(prev[path[-1]]))
    return path[::-1]


def _max_marginals(lags, scores, scale) -> list[np.ndarray]:
    """Best total path score through each candidate (forward + backward max-product)."""
    S = len(lags)
    fwd = [scores[0]]
    for t in range(1, S):
        trans = fwd[-1][:, None] - scale * np.abs(lags[t - 1][:, None] - lags[t][None, :])
        fwd.append(trans.max(axis=0) + scores[t])
    bwd = [np.zeros_like(scores[-1])]
    for t in range(S - 2, -1, -1):
        trans = (bwd[0] + scores[t + 1])[None, :] - scale * np.abs(lags[t][:, None] - lags[t + 1][None, :])
        bwd.insert(0, trans.max(axis=1))
    return [f + b for f, b in zip(fwd, bwd)]


def _top2(candidates, transition_weight, max_lag):
    """Per segment, the two candidates with the best max-marginal path scores."""
    scale = transition_weight / max(max_lag, 1)
    lags = [np.array([c[0] for c in seg], dtype=float) for seg in candidates]
    scores = [np.array([c[1] for c in seg], dtype=float) for seg in candidates]
    path = viterbi_path(candidates, transition_weight, max_lag)
    marg = _max_marginals(lags, scores, scale)
    out = []
    for t, m in enumerate(marg):
        best = path[t]
        rest = [i for i in np.argsort(-m, kind="stable") if i != best]
        keep = [best] + rest[:1]
        out.append([candidates[t][i] for i in keep])
    return out


def _joint_pass(per_channel, transition_weight, max_lag):
    """Joint decode over the top-2 candidates of a group of channels.

    State = one binary choice per channel. Besides the per-channel transition
    cost, a jump in which two channels move in opposite directions costs
    ``transition_weight * min(|d_m|, |d_n|) / max_lag`` per such pair, averaged
    over the other channels in the group.
    """
    C = len(per_channel)
    S = len(per_channel[0])
    scale = transition_weight / max(max_lag, 1)
    states = list(itertools.product([0, 1], repeat=C))

    def choice(t, state):
        lags, scores = [], 0.0
        for ch, k in enumerate(state):
            cands = per_channel[ch][t]
            lag, sc = cands[min(k, len(cands) - 1)]
            lags.append(lag)
            scores += sc
        return np.array(lags, dtype=float), scores

    lag_tab = np.zeros((S, len(states), C))
    score_tab = np.zeros((S, len(states)))
    valid = np.ones((S, len(states)), dtype=bool)
    for t in range(S):
        for j, st in enumerate(states):
            # single-candidate channels make choice 1 a duplicate of choice 0
            if any(k >= len(per_channel[ch][t]) for ch, k in enumerate(st)):
                valid[t, j] = False
            lag_tab[t, j], score_tab[t, j] = choice(t, st)

    pair_norm = max(C - 1, 1)
    acc = np.where(valid[0], score_tab[0], -np.inf)
    back = []
    for t in range(1, S):
        jump = lag_tab[t][None, :, :] - lag_tab[t - 1][:, None, :]  # prev x cur x C
        cost = scale * np.abs(jump).sum(axis=2)
        if C > 1:
            opposite = np.zeros(cost.shape)
            for m, n in itertools.combinations(range(C), 2):
                dm, dn = jump[:, :, m], jump[:, :, n]
                opposite += np.where(dm * dn < 0, np.minimum(np.abs(dm), np.abs(dn)), 0.0)
            cost = cost + scale * opposite / pair_norm
        trans = acc[:, None] - cost
        prev = np.argmax(trans, axis=0)
        back.append(prev)
        acc = trans[prev, np.arange(len(states))] + np.where(valid[t], score_tab[t], -np.inf)
    path = [int(np.argmax(acc))]
    for prev in reversed(back):
        path.append(int(prev[path[-1]]))
    path = path[::-1]
    return [[tuple(per_channel[ch][t][states[path[t]][ch]]) for t in range(S)] for ch in range(C)]


JOINT_GROUP = 7


def viterbi_tdoa(candidates, transition_weight: float = 25.0, max_lag: int = 480) -> list[list[tuple[int, float]]]:
    """Two-step TDOA decode.

    ``candidates`` is either one channel's per-segment n-best list or a list of
    such lists (one per non-reference channel). Step 1 runs an exact Viterbi
    per channel and keeps, per segment, its chosen candidate plus the runner-up
    by max-marginal score. Step 2 decodes all channels jointly over those two
    survivors (channels are grouped seven at a time to bound the state space).
    Returns, per channel, the chosen ``(lag, score)`` per segment.
    """
    single = len(candidates) > 0 and len(candidates[0]) > 0 and np.isscalar(candidates[0][0][0])
    channels = [candidates] if single else list(candidates)
    if not channels:
        raise AudioError("no channels to decode")
    for ch in channels:
        _check_candidates(ch)
    n_seg = len(channels[0])
    if any(len(ch) != n_seg for ch in channels):
        raise AudioError("all channels need the same number of segments")

    if transition_weight == 0:
        chosen = [[tuple(seg[int(np.argmax([c[1] for c in seg]))]) for seg in ch] for ch in channels]
    else:
        survivors = [_top2(ch, transition_weight, max_lag) for ch in channels]
        chosen = []
        for g in range(0, len(survivors), JOINT_GROUP):
            chosen.extend(_joint_pass(survivors[g : g + JOINT_GROUP], transition_weight, max_lag))
    return chosen[0] if single else chosen


# ---------------------------------------------------------------------------
# Reference selection, weights, summation
# ---------------------------------------------------------------------------


def _max_ncc(a: np.ndarray, b: np.ndarray, max_lag: int) -> float:
    ea, eb = float(np.dot(a, a)), float(np.dot(b, b))
    if ea <= 0 or eb <= 0:
        return 0.0
    n = _next_pow2(a.size + b.size)
    cc = np.fft.irfft(np.fft.rfft(b, n) * np.conj(np.fft.rfft(a, n)), n)
    window = np.concatenate([cc[-max_lag:], cc[: max_lag + 1]]) if max_lag else cc[:1]
    return float(window.max() / np.sqrt(ea * eb))


def select_reference(x: AudioBuffer, max_lag: int | None = None, window_s: float = 60.0, n_blocks: int = 10) -> int:
    """Channel with the highest average peak normalised cross-correlation to the others."""
    M = x.channels
    if M <= 1:
        return 0
    fs = x.sample_rate
    max_lag = int(round(0.03 * fs)) if max_lag is None else max_lag
    data = x.samples[:, : int(window_s * fs)].astype(np.float64)
    block = max(data.shape[1] // n_blocks, 1)
    starts = range(0, max(data.shape[1] - block + 1, 1), block)
    pair = np.zeros((M, M))
    for s in starts:
        seg = data[:, s : s + block]
        lag = min(max_lag, max(seg.shape[1] - 1, 0))
        for i in range(M):
            for j in range(i + 1, M):
                v = _max_ncc(seg[i], seg[j], lag)
                pair[i, j] += v
                pair[j, i] += v
    avg = pair.sum(axis=1) / (M - 1)
    return int(np.nonzero(avg >= avg.max() - 1e-12 * max(1.0, abs(avg.max())))[0][0])


def segment_starts(length: int, seg_len: int, step: int) -> list[int]:
    """Segment start offsets covering ``[0, length)``; the last one may run past the end."""
    if length <= seg_len:
        return [0]
    n = 1 + int(np.ceil((length - seg_len) / step))
    return [i * step for i in range(n)]


def shift_signal(x: np.ndarray, lag: int) -> np.ndarray:
    """``y[n] = x[n + lag]`` with zeros outside the signal."""
    y = np.zeros_like(x)
    if lag >= 0:
        y[: x.size - lag] = x[lag:]
    else:
        y[-lag:] = x[: x.size + lag]
    return y


def _shifted_segment(x: np.ndarray, start: int, lag: int, seg_len: int) -> np.ndarray:
    """``x[start + lag : start + lag + seg_len]`` with zeros outside the signal."""
    lo, hi = start + lag, start + lag + seg_len
    out = np.zeros(seg_len)
    a, b = max(lo, 0), min(hi, x.size)
    if b > a:
        out[a - lo : b - lo] = x[a:b]
    return out


def _segment(x: np.ndarray, start: int, seg_len: int) -> np.ndarray:
    seg = x[..., start : start + seg_len]
    if seg.shape[-1] < seg_len:
        pad = [(0, 0)] * (seg.ndim - 1) + [(0, seg_len - seg.shape[-1])]
        seg = np.pad(seg, pad)
    return seg


def compute_weights(aligned_segments: np.ndarray, reference: int, smoothing: float = 0.9) -> ChannelWeights:
    """Adaptive channel weights from per-segment correlation with the reference.

    ``aligned_segments`` has shape ``(channels, segments, samples)``. Raw weight is
    the clipped normalised correlation with the reference channel; weights are
    smoothed across segments (``w = smoothing * w_prev + (1 - smoothing) * raw``)
    and renormalised to sum to one.
    """
    M, S, _ = aligned_segments.shape
    if M == 1:
        return ChannelWeights(np.ones((1, S)))
    w_prev = np.full(M, 1.0 / M)
    out = np.zeros((M, S))
    for s in range(S):
        seg = aligned_segments[:, s, :].astype(np.float64)
        ref = seg[reference]
        energy = np.sqrt(np.sum(seg * seg, axis=1) * np.dot(ref, ref))
        raw = np.divide(seg @ ref, energy, out=np.zeros(M), where=energy > 0)
        raw = np.maximum(raw, 0.0)
        if raw.sum() <= 0:
            raw = np.full(M, 1.0 / M)
        raw = raw / raw.sum()
        w = smoothing * w_prev + (1 - smoothing) * raw
        w = w / w.sum()
        out[:, s] = w
        w_prev = w
    return ChannelWeights(out)


def _crossfade_window(seg_len: int) -> np.ndarray:
    k = np.arange(seg_len)
    return 1.0 - np.abs(2 * (k + 0.5) / seg_len - 1.0)


def delay_and_sum(x: AudioBuffer, track: TdoaTrack, weights: ChannelWeights) -> AudioBuffer:
    """Shift each channel by its segment lag, weight, sum, and cross-fade segments.

    Segments are blended with triangular windows (50% overlap at the default
    step) normalised by their running sum, so constant lags and weights give
    exactly the plain weighted sum.
    """
    data = x.samples.astype(np.float64)
    M, N = data.shape
    if track.delays.shape != weights.weights.shape or track.delays.shape[0] != M:
        raise AudioError("track / weights shape does not match the input")
    if np.any(np.abs(track.delays) > track.max_lag):
        raise AudioError("lag exceeds max_lag")
    seg_len, step = track.segment_length, track.segment_step
    starts = segment_starts(N, seg_len, step)
    if len(starts) != track.n_segments:
        raise AudioError(f"track has {track.n_segments} segments, signal needs {len(starts)}")
    win = _crossfade_window(seg_len)
    total = starts[-1] + seg_len
    out = np.zeros(total)
    norm = np.zeros(total)
    for s, start in enumerate(starts):
        acc = np.zeros(seg_len)
        for m in range(M):
            acc += weights.weights[m, s] * _shifted_segment(data[m], start, int(track.delays[m, s]), seg_len)
        out[start : start + seg_len] += win * acc
        norm[start : start + seg_len] += win
    y = out[:N] / norm[:N]
    return AudioBuffer(y[None, :].astype(x.samples.dtype), x.sample_rate)


def estimate_tdoa(x: AudioBuffer, cfg: BeamformConfig = BeamformConfig(), reference: int | None = None):
    """Reference selection, per-segment GCC-PHAT n-best lists and the two-step decode."""
    fs = x.sample_rate
    seg_len, step, max_lag = cfg.samples(fs)
    max_lag = min(max_lag, seg_len // 2)
    data = x.samples.astype(np.float64)
    M, N = data.shape
    ref = select_reference(x, max_lag, cfg.reference_window_s) if reference is None else reference
    starts = segment_starts(N, seg_len, step)
    others = [m for m in range(M) if m != ref]
    cands = []
    for m in others:
        per_seg = []
        for start in starts:
            a = _segment(data[ref], start, seg_len)
            b = _segment(data[m], start, seg_len)
            try:
                per_seg.append(gcc_phat(a, b, max_lag, cfg.n_peaks))
            except AudioError:
                per_seg.append([(0, 0.0)])
        cands.append(per_seg)
    delays = np.zeros((M, len(starts)), dtype=np.int64)
    scores = np.ones((M, len(starts)))
    if others:
        chosen = viterbi_tdoa(cands, cfg.transition_weight, max_lag)
        for m, path in zip(others, chosen):
            delays[m] = [lag for lag, _ in path]
            scores[m] = [sc for _, sc in path]
    return TdoaTrack(seg_len, step, max_lag, ref, delays, scores)


def aligned_segments(x: AudioBuffer, track: TdoaTrack) -> np.ndarray:
    data = x.samples.astype(np.float64)
    starts = segment_starts(x.length, track.segment_length, track.segment_step)
    out = np.zeros((x.channels, len(starts), track.segment_length))
    for m in range(x.channels):
        for s, start in enumerate(starts):
            out[m, s] = _shifted_segment(data[m], start, int(track.delays[m, s]), track.segment_length)
    return out


def beamform(x: AudioBuffer, cfg: BeamformConfig = BeamformConfig(), return_details: bool = False):
    """Full weighted delay-and-sum chain; output has the input's length."""
    if x.channels < 2:
        raise AudioError("beamforming needs at least two channels")
    track = estimate_tdoa(x, cfg)
    weights = compute_weights(aligned_segments(x, track), track.reference, cfg.smoothing)
    y = delay_and_sum(x, track, weights)
    if return_details:
        return y, track, weights
    return y


def tdoa_table(track: TdoaTrack, weights: ChannelWeights) -> list[tuple[int, int, int, float, float]]:
    """Rows of (segment, channel, lag, score, weight) for TSV dumps."""
    rows = []
    for s in range(track.n_segments):
        for m in range(track.delays.shape[0]):
            rows.append((s, m, int(track.delays[m, s]), float(track.scores[m, s]), float(weights.weights[m, s])))
    return rows
