"""Image-method room impulse responses and far-field array simulation."""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np

from scipy import signal as sps

from .audio import AudioBuffer, AudioError, convolve, power

SPEED_OF_SOUND = 343.0
SINC_HALF_WIDTH = 32
MAX_ORDER = 40
MIN_RELATIVE_AMPLITUDE = 1e-6
WALL_MARGIN = 0.5
HIGHPASS_HZ = 100.0
FRACTION_BINS = 256


@dataclass
class RoomSpec:
    """Shoebox room. Give either per-surface ``beta`` or a target ``t60``.

    ``beta`` is ordered ``(x0, xL, y0, yW, z0, zH)``; a scalar applies to all walls.
    """

    dimensions: tuple[float, float, float]
    beta: float | tuple[float, ...] | None = None
    t60: float | None = None
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise AudioError(f"room dimensions must be three positive lengths, got {self.dimensions}")
        self.dimensions = tuple(float(d) for d in dims)
        if self.beta is None and self.t60 is None:
            raise AudioError("RoomSpec needs beta or t60")
        if self.t60 is not None and not self.t60 > 0:
            raise AudioError("t60 must be positive")
        if self.beta is not None:
            b = np.broadcast_to(np.asarray(self.beta, dtype=float), (6,))
            if np.any(b < 0) or np.any(b > 1):
                raise AudioError("reflection coefficients must lie in [0, 1]")
        if self.c <= 0:
            raise AudioError("speed of sound must be positive")

    @property
    def volume(self) -> float:
        L, W, H = self.dimensions
        return L * W * H

    @property
    def surface(self) -> float:
        L, W, H = self.dimensions
        return 2 * (L * W + L * H + W * H)

    def reflection_coefficients(self) -> np.ndarray:
        """Per-wall beta as a ``(3, 2)`` array (axis, lower/upper wall)."""
        if self.beta is not None:
            return np.broadcast_to(np.asarray(self.beta, dtype=float), (6,)).reshape(3, 2).copy()
        return np.full((3, 2), image_method_beta(self.dimensions, self.t60, self.c))

    def contains(self, points, margin: float = 0.0) -> bool:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        dims = np.asarray(self.dimensions)
        return bool(np.all(p > margin) and np.all(p < dims - margin))


def eyring_beta(dimensions, t60: float, c: float = SPEED_OF_SOUND) -> float:
    """Uniform wall reflection coefficient giving ``t60`` under Eyring's formula.

    ``T60 = 24 ln(10) V / (-c S ln(1 - alpha))`` with ``beta = sqrt(1 - alpha)``.
    """
    L, W, H = dimensions
    V = L * W * H
    S = 2 * (L * W + L * H + W * H)
    log_one_minus_alpha = -24 * math.log(10) * V / (c * S * t60)
    return math.exp(0.5 * log_one_minus_alpha)


def _sphere_directions(n: int = 4000) -> np.ndarray:
    i = np.arange(n) + 0.5
    polar = np.arccos(1 - 2 * i / n)
    azimuth = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)], axis=1)


_DIRECTIONS = _sphere_directions()


@lru_cache(maxsize=4096)
def _lattice_decay_constant(dimensions: tuple[float, float, float]) -> float:
    """T20-fitted decay time of the image lattice, in units of 1 / (reflection loss per metre).

    Image sources seen along direction ``u`` undergo ``sum_i |u_i| / L_i``
    reflections per metre of path. Eyring replaces this by its directional mean
    ``S / 4V``; here the energy decay is averaged over directions instead, and
    the resulting Schroeder curve is fitted over -5..-25 dB like a measurement.
    """
    rate = (np.abs(_DIRECTIONS) / np.asarray(dimensions)).sum(axis=1)

    def edc_db(tau):
        e = np.mean(np.exp(-np.outer(tau, rate)) / rate, axis=1)
        return 10 * np.log10(e / np.mean(1 / rate))

    end = 1.0 / rate.mean()
    while edc_db(np.array([end]))[0] > -26.0:
        end *= 1.5
    tau = np.linspace(0.0, end, 3000)
    db = edc_db(tau)
    sel = (db <= -5.0) & (db >= -25.0)
    slope, _ = np.polyfit(tau[sel], db[sel], 1)
    return -60.0 / slope


def image_method_beta(dimensions, t60: float, c: float = SPEED_OF_SOUND) -> float:
    """Uniform reflection coefficient whose image-method RIR decays with ``t60``.

    Eyring's energy-loss-per-reflection model, with the reflection rate resolved
    per direction of arrival. For a cube this is within ~1% of :func:`eyring_beta`;
    for flat rooms Eyring overestimates the decay rate of the image lattice.
    """
    key = tuple(float(d) for d in dimensions)
    return math.exp(-_lattice_decay_constant(key) / (2 * c * t60))


@dataclass
class ArraySpec:
    mics: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        self.mics = np.atleast_2d(np.asarray(self.mics, dtype=float))
        self.source = np.asarray(self.source, dtype=float).reshape(3)
        if self.mics.shape[1] != 3 or self.mics.shape[0] < 1:
            raise AudioError("mics must be an (M, 3) array with M >= 1")

    @property
    def n_mics(self) -> int:
        return self.mics.shape[0]


def circular_array(center, n_mics: int = 8, radius: float = 0.05) -> np.ndarray:
    """Uniform circular array in the horizontal plane."""
    phi = 2 * np.pi * np.arange(n_mics) / n_mics
    c = np.asarray(center, dtype=float)
    return c + radius * np.stack([np.cos(phi), np.sin(phi), np.zeros(n_mics)], axis=1)


@dataclass
class Rir:
    """Impulse responses, shape ``(mics, taps)``."""

    taps: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.taps = np.atleast_2d(np.asarray(self.taps, dtype=np.float64))
        if not np.all(np.isfinite(self.taps)):
            raise AudioError("RIR taps must be finite")

    @property
    def n_mics(self) -> int:
        return self.taps.shape[0]


def _image_sources(room: RoomSpec, source: np.ndarray, orders: list[int]):
    """All image positions and their reflection gains, for each axis separately."""
    beta = room.reflection_coefficients()
    coords, gains = [], []
    for axis in range(3):
        n = orders[axis]
        m = np.arange(-n, n + 1)
        q = np.array([0, 1])
        mm, qq = np.meshgrid(m, q, indexing="ij")
        mm, qq = mm.ravel(), qq.ravel()
        pos = (1 - 2 * qq) * source[axis] + 2 * mm * room.dimensions[axis]
        g = np.power(beta[axis, 0], np.abs(mm - qq)) * np.power(beta[axis, 1], np.abs(mm))
        coords.append(pos)
        gains.append(g)
    return coords, gains


def generate_rir(
    room: RoomSpec,
    array: ArraySpec,
    fs: int = 16000,
    duration: float = 0.5,
    max_order: int = MAX_ORDER,
    seed: int | None = None,
    highpass_hz: float | None = HIGHPASS_HZ,
) -> Rir:
    """Allen-Berkley image-method RIRs with windowed-sinc fractional delays.

    Reflections are high-passed at ``highpass_hz`` (as Allen and Berkley do) to
    remove the low-frequency build-up of the all-positive image sum; the direct
    path is left untouched. ``seed`` is accepted for interface symmetry; the
    image method is deterministic.
    """
    del seed
    if not room.contains(array.mics) or not room.contains(array.source):
        raise AudioError("source and microphones must be strictly inside the room")
    n_taps = int(round(duration * fs))
    direct = np.linalg.norm(array.mics - array.source, axis=1)
    if np.any(direct / room.c * fs >= n_taps):
        raise AudioError("duration is shorter than the direct-path delay")

    dims = np.asarray(room.dimensions)
    reach = room.c * duration
    orders = [min(max_order, int(math.ceil(reach / (2 * d))) + 1) for d in dims]
    coords, gains = _image_sources(room, array.source, orders)
    gx, gy, gz = np.meshgrid(gains[0], gains[1], gains[2], indexing="ij")
    gain = (gx * gy * gz).ravel()
    px, py, pz = np.meshgrid(coords[0], coords[1], coords[2], indexing="ij")
    images = np.stack([px.ravel(), py.ravel(), pz.ravel()], axis=1)
    keep = gain > 0
    images, gain = images[keep], gain[keep]

    is_direct = np.all(images == array.source, axis=1)
    reflected_images, reflected_gain = images[~is_direct], gain[~is_direct]
    sos = sps.butter(2, highpass_hz, "highpass", fs=fs, output="sos") if highpass_hz else None

    out = np.zeros((array.n_mics, n_taps))
    for i, mic in enumerate(array.mics):
        d = np.linalg.norm(reflected_images - mic, axis=1)
        amp = reflected_gain / (4 * np.pi * d)
        sel = (d / room.c * fs < n_taps + SINC_HALF_WIDTH) & (amp >= MIN_RELATIVE_AMPLITUDE / (4 * np.pi * direct[i]))
        h = _place_pulses_binned(d[sel] / room.c * fs, amp[sel], n_taps)
        if sos is not None:
            h = sps.sosfilt(sos, h)
        out[i] = h + _place_pulses(np.array([direct[i] / room.c * fs]), np.array([1 / (4 * np.pi * direct[i])]), n_taps)
    return Rir(out, fs)


def _sinc_kernel(frac: np.ndarray) -> np.ndarray:
    """Hann-windowed sinc taps at offsets ``-W..W`` for each fractional position."""
    W = SINC_HALF_WIDTH
    x = np.arange(-W, W + 1)[None, :] - np.asarray(frac, dtype=float)[:, None]
    win = np.where(np.abs(x) < W, 0.5 * (1 + np.cos(np.pi * x / W)), 0.0)
    return win * np.sinc(x)


def _place_pulses(delay: np.ndarray, amp: np.ndarray, n_taps: int) -> np.ndarray:
    """Sum of windowed-sinc pulses at fractional sample positions ``delay`` (exact)."""
    W = SINC_HALF_WIDTH
    idx = np.floor(delay).astype(np.int64)[:, None] + np.arange(-W, W + 1)[None, :]
    vals = amp[:, None] * _sinc_kernel(delay - np.floor(delay))
    ok = (idx >= 0) & (idx < n_taps)
    return np.bincount(idx[ok], weights=vals[ok], minlength=n_taps)[:n_taps]


def _place_pulses_binned(delay: np.ndarray, amp: np.ndarray, n_taps: int) -> np.ndarray:
    """Like :func:`_place_pulses` with the fractional delay rounded to 1/FRACTION_BINS sample.

    Pulses sharing a fractional bin are summed as an impulse train and convolved
    with that bin's kernel once, which is much cheaper for large image counts.
    """
    W = SINC_HALF_WIDTH
    base = np.floor(delay)
    q = np.rint((delay - base) * FRACTION_BINS).astype(np.int64)
    base = base.astype(np.int64) + (q == FRACTION_BINS)
    q[q == FRACTION_BINS] = 0
    width = n_taps + 2 * W
    ok = (base >= -W) & (base < n_taps + W)
    trains = np.bincount(q[ok] * width + base[ok] + W, weights=amp[ok], minlength=FRACTION_BINS * width)
    trains = trains.reshape(FRACTION_BINS, width)
    used = np.nonzero(trains.any(axis=1))[0]
    if used.size == 0:
        return np.zeros(n_taps)
    kernels = _sinc_kernel(used / FRACTION_BINS)
    full = sps.oaconvolve(trains[used], kernels, axes=-1).sum(axis=0)
    # train index j holds integer position j - W; kernel tap k sits at offset k - W
    return full[2 * W : 2 * W + n_taps]


def direct_path_delays(room: RoomSpec, array: ArraySpec, fs: int) -> np.ndarray:
    """Direct-path delays in (fractional) samples for every microphone."""
    return np.linalg.norm(array.mics - array.source, axis=1) / room.c * fs


def schroeder_t60(h: np.ndarray, fs: int, start_db: float = -5.0, stop_db: float = -25.0) -> float:
    """Reverberation time from Schroeder backward integration (T20 extrapolated to 60 dB)."""
    e = np.asarray(h, dtype=float) ** 2
    edc = np.cumsum(e[::-1])[::-1]
    if edc[0] <= 0:
        raise AudioError("RIR has no energy")
    edc_db = 10 * np.log10(np.maximum(edc / edc[0], 1e-300))
    idx = np.nonzero((edc_db <= start_db) & (edc_db >= stop_db))[0]
    if idx.size < 2:
        raise AudioError("decay range not covered by the RIR")
    t = idx / fs
    slope, _ = np.polyfit(t, edc_db[idx], 1)
    return -60.0 / slope


# ---------------------------------------------------------------------------
# Array simulation
# ---------------------------------------------------------------------------


@dataclass
class NoiseSpec:
    """Directional noise: each signal is placed at a random point and convolved with its own RIR."""

    signals: list[AudioBuffer]
    snr_db: float
    room: RoomSpec
    mics: np.ndarray
    rir_duration: float = 0.4
    max_order: int = MAX_ORDER
    min_distance: float = WALL_MARGIN
    ref_channel: int = 0
    positions: list[np.ndarray] = field(default_factory=list)


def _noise_position(rng: np.random.Generator, room: RoomSpec, mics: np.ndarray, min_distance: float) -> np.ndarray:
    dims = np.asarray(room.dimensions)
    centre = mics.mean(axis=0)
    for _ in range(10000):
        p = rng.uniform(WALL_MARGIN, dims - WALL_MARGIN)
        if np.linalg.norm(p - centre) >= min_distance and np.all(np.linalg.norm(mics - p, axis=1) >= min_distance):
            return p
    raise AudioError("could not place a noise source; room too small for the requested spacing")


def _fit_length(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if x.size >= n:
        off = int(rng.integers(0, x.size - n + 1))
        return x[off : off + n]
    reps = int(math.ceil(n / x.size))
    return np.tile(x, reps)[:n]


def simulate_array(
    src: AudioBuffer,
    rir: Rir,
    noise: NoiseSpec | None = None,
    seed: int | None = None,
    self_noise_db: float | None = None,
) -> AudioBuffer:
    """Convolve a mono source with every microphone's RIR, optionally adding directional noise.

    The output keeps the source length (causal truncation of the reverberant tail).
    Noise is scaled so that ``snr_db`` holds on ``noise.ref_channel``.
    ``self_noise_db`` adds independent white sensor noise to every microphone at
    that level relative to the clean power of the reference channel.
    """
    if src.sample_rate != rir.sample_rate:
        raise AudioError(f"sample-rate mismatch: source {src.sample_rate}, RIR {rir.sample_rate}")
    if rir.taps.shape[1] == 0:
        raise AudioError("empty RIR")
    x = src.mono().astype(np.float64)
    n = x.size
    clean = convolve(x[None, :], rir.taps)[:, :n]
    out = clean.copy()
    if noise is not None and noise.signals:
        rng = np.random.default_rng(seed)
        mics = np.atleast_2d(noise.mics)
        if mics.shape[0] != rir.n_mics:
            raise AudioError("noise spec microphone count does not match the RIR")
        total = np.zeros_like(out)
        noise.positions.clear()
        for sig in noise.signals:
            if sig.sample_rate != src.sample_rate:
                raise AudioError("noise sample rate does not match the source")
            pos = _noise_position(rng, noise.room, mics, noise.min_distance)
            noise.positions.append(pos)
            h = generate_rir(noise.room, ArraySpec(mics, pos), src.sample_rate, noise.rir_duration, noise.max_order)
            seg = _fit_length(sig.mono().astype(np.float64), n, rng)
            total += convolve(seg[None, :], h.taps)[:, :n]
        p_clean = power(clean[noise.ref_channel])
        p_noise = power(total[noise.ref_channel])
        if p_clean <= 0 or p_noise <= 0:
            raise AudioError("zero-power source or noise on the reference channel")
        gain = math.sqrt(p_clean / (p_noise * 10 ** (noise.snr_db / 10)))
        out = out + gain * total
    if self_noise_db is not None:
        rng_self = np.random.default_rng(None if seed is None else [seed, 1])
        ref = noise.ref_channel if noise is not None else 0
        level = math.sqrt(power(clean[ref]) * 10 ** (self_noise_db / 10))
        out = out + level * rng_self.standard_normal(out.shape)
    return AudioBuffer(out.astype(src.samples.dtype), src.sample_rate)


# ---------------------------------------------------------------------------
# Random room configurations
# ---------------------------------------------------------------------------


@dataclass
class RoomRanges:
    length: tuple[float, float] = (3.0, 10.0)
    width: tuple[float, float] = (3.0, 10.0)
    height: tuple[float, float] = (2.5, 3.5)
    t60: tuple[float, float] = (0.2, 0.6)
    n_mics: int = 8
    array_radius: float = 0.05
    array_height: tuple[float, float] = (0.8, 1.2)
    array_jitter: float = 0.5
    min_source_distance: float = WALL_MARGIN

    def validate(self) -> None:
        for name in ("length", "width", "height", "t60", "array_height"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise AudioError(f"invalid {name} range {lo}..{hi}")
        min_span = 2 * WALL_MARGIN + 2 * self.array_radius
        if min(self.length[0], self.width[0]) <= min_span + self.min_source_distance:
            raise AudioError("room ranges too small to place the array and a source")
        if self.array_height[1] >= self.height[0] - WALL_MARGIN:
            raise AudioError("array height range does not fit below the lowest ceiling")
        if self.n_mics < 1 or self.array_radius < 0:
            raise AudioError("invalid array settings")


def sample_room_config(ranges: RoomRanges | None = None, seed: int | None = None) -> tuple[RoomSpec, ArraySpec]:
    """Uniform room size and T60, jittered array centre, source at least 0.5 m from walls and array."""
    ranges = ranges or RoomRanges()
    ranges.validate()
    rng = np.random.default_rng(seed)
    dims = np.array([rng.uniform(*ranges.length), rng.uniform(*ranges.width), rng.uniform(*ranges.height)])
    t60 = rng.uniform(*ranges.t60)
    room = RoomSpec(tuple(dims), t60=t60)

    margin = WALL_MARGIN + ranges.array_radius
    centre_xy = dims[:2] / 2 + rng.uniform(-ranges.array_jitter, ranges.array_jitter, 2)
    centre_xy = np.clip(centre_xy, margin, dims[:2] - margin)
    centre = np.array([*centre_xy, rng.uniform(*ranges.array_height)])
    mics = circular_array(centre, ranges.n_mics, ranges.array_radius)

    for _ in range(10000):
        src = rng.uniform(WALL_MARGIN, dims - WALL_MARGIN)
        if np.all(np.linalg.norm(mics - src, axis=1) >= ranges.min_source_distance):
            return room, ArraySpec(mics, src)
    raise AudioError("infeasible ranges: could not place the source")
