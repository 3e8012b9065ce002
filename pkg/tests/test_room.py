import numpy as np
import pytest

from meetkit.audio import AudioBuffer, AudioError, convolve, power
from meetkit.beamformer import gcc_phat
from meetkit.room import (
    SPEED_OF_SOUND,
    ArraySpec,
    NoiseSpec,
    Rir,
    RoomRanges,
    RoomSpec,
    circular_array,
    direct_path_delays,
    eyring_beta,
    generate_rir,
    image_method_beta,
    sample_room_config,
    schroeder_t60,
    simulate_array,
)
from meetkit.synth import pink_noise, speech_like

from oracles import FS


class TestRoomSpec:
    def test_needs_beta_or_t60(self):
        with pytest.raises(AudioError):
            RoomSpec((5, 4, 3))

    def test_beta_range(self):
        with pytest.raises(AudioError):
            RoomSpec((5, 4, 3), beta=1.2)

    def test_eyring_formula(self):
        # classic Eyring: T60 = 0.161 V / (-S ln(1 - alpha)), alpha = 1 - beta^2
        dims, t60 = (6.0, 5.0, 3.0), 0.4
        beta = eyring_beta(dims, t60)
        V, S = 90.0, 2 * (30 + 18 + 15)
        alpha = 1 - beta**2
        assert 0.161 * V / (-S * np.log(1 - alpha)) == pytest.approx(t60, rel=1e-3)

    def test_image_beta_monotone_in_t60(self):
        b = [image_method_beta((6, 5, 3), t) for t in (0.2, 0.4, 0.6)]
        assert b[0] < b[1] < b[2] < 1


class TestGenerateRir:
    def test_anechoic_single_pulse_integer_delay(self):
        # distance 343/16000 * 150 m puts the pulse exactly on sample 150
        d = SPEED_OF_SOUND / FS * 150
        room = RoomSpec((5, 4, 3), beta=0.0)
        arr = ArraySpec(np.array([[1.0, 1.3, 1.2]]), np.array([1.0 + d, 1.3, 1.2]))
        h = generate_rir(room, arr, FS, 0.1).taps[0]
        assert int(np.argmax(h)) == 150
        assert h[150] == pytest.approx(1 / (4 * np.pi * d), rel=0.01)
        assert np.count_nonzero(np.abs(h) > 1e-12) == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_anechoic_single_pulse_fractional(self, seed):
        rng = np.random.default_rng(seed)
        room = RoomSpec((5, 4, 3), beta=0.0)
        arr = ArraySpec(rng.uniform(0.5, 2.0, (1, 3)), rng.uniform([2.5, 2.0, 1.5], [4.5, 3.5, 2.5]))
        h = generate_rir(room, arr, FS, 0.1).taps[0]
        d = np.linalg.norm(arr.mics[0] - arr.source)
        n = np.arange(h.size)
        # a windowed-sinc pulse has unit area and is symmetric about its fractional centre
        assert h.sum() == pytest.approx(1 / (4 * np.pi * d), rel=0.01)
        assert np.dot(n, h) / h.sum() == pytest.approx(d / SPEED_OF_SOUND * FS, abs=0.05)
        centre = int(round(d / SPEED_OF_SOUND * FS))
        assert np.all(h[centre + 34 :] == 0) and np.all(h[: max(centre - 34, 0)] == 0)

    def test_t60_schroeder(self):
        room = RoomSpec((5, 4, 3), t60=0.3)
        arr = ArraySpec(np.array([[2.0, 1.5, 1.2]]), np.array([3.5, 2.8, 1.6]))
        h = generate_rir(room, arr, FS, 0.4).taps[0]
        assert schroeder_t60(h, FS) == pytest.approx(0.3, rel=0.2)

    def test_direct_path_arrival(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            dims = rng.uniform([3, 3, 2.5], [10, 10, 3.5])
            room = RoomSpec(tuple(dims), beta=0.0)
            mic = rng.uniform(0.3, dims - 0.3)
            src = rng.uniform(0.3, dims - 0.3)
            arr = ArraySpec(mic[None, :], src)
            delay = direct_path_delays(room, arr, FS)[0]
            h = generate_rir(room, arr, FS, delay / FS + 0.01).taps[0]
            assert abs(int(np.argmax(np.abs(h))) - round(delay)) <= 1

    def test_deterministic(self):
        room, arr = sample_room_config(seed=3)
        a = generate_rir(room, arr, FS, 0.2).taps
        b = generate_rir(room, arr, FS, 0.2).taps
        assert np.array_equal(a, b)

    def test_energy_non_increasing_in_absorption(self):
        arr = ArraySpec(np.array([[2.0, 1.5, 1.2]]), np.array([3.5, 2.8, 1.6]))
        energies = [np.sum(generate_rir(RoomSpec((5, 4, 3), beta=b), arr, FS, 0.3).taps ** 2) for b in (0.9, 0.7, 0.5, 0.2, 0.0)]
        assert all(e1 >= e2 for e1, e2 in zip(energies, energies[1:]))

    def test_outside_room(self):
        room = RoomSpec((5, 4, 3), beta=0.5)
        with pytest.raises(AudioError):
            generate_rir(room, ArraySpec(np.array([[6.0, 1.0, 1.0]]), np.array([1.0, 1.0, 1.0])), FS, 0.2)

    def test_duration_too_short(self):
        room = RoomSpec((10, 10, 3), beta=0.5)
        arr = ArraySpec(np.array([[1.0, 1.0, 1.0]]), np.array([9.0, 9.0, 2.0]))
        with pytest.raises(AudioError):
            generate_rir(room, arr, FS, 0.01)

    def test_length(self):
        room, arr = sample_room_config(seed=1)
        assert generate_rir(room, arr, FS, 0.25).taps.shape == (8, 4000)


class TestSchroeder:
    def test_exponential_decay(self):
        # energy decays by 60 dB in exactly 0.5 s
        t = np.arange(int(0.8 * FS)) / FS
        h = np.random.default_rng(0).standard_normal(t.size) * 10 ** (-3 * t / 0.5)
        assert schroeder_t60(h, FS) == pytest.approx(0.5, rel=0.05)

    def test_no_energy(self):
        with pytest.raises(AudioError):
            schroeder_t60(np.zeros(100), FS)


class TestSimulateArray:
    def test_unit_impulse_identity(self):
        src = speech_like(0.5, FS, seed=1)
        rir = Rir(np.eye(1, 10).repeat(3, axis=0), FS)
        y = simulate_array(src, rir)
        assert y.channels == 3
        assert np.allclose(y.samples, src.samples)

    @pytest.mark.parametrize("orientation", ["broadside", "endfire"])
    def test_two_mic_geometry(self, orientation):
        room = RoomSpec((6, 5, 3), beta=0.0)
        centre = np.array([3.0, 2.5, 1.2])
        offset = np.array([0.05, 0, 0])
        mics = np.stack([centre - offset, centre + offset])
        direction = np.array([0, 1.0, 0]) if orientation == "broadside" else np.array([1.0, 0, 0])
        arr = ArraySpec(mics, centre + 2.0 * direction)
        y = simulate_array(speech_like(1.0, FS, seed=4), generate_rir(room, arr, FS, 0.1))
        d = direct_path_delays(room, arr, FS)
        lag = gcc_phat(y.samples[0], y.samples[1], 20)[0][0]
        assert abs(lag - (d[1] - d[0])) <= 1
        if orientation == "endfire":
            assert abs(d[1] - d[0]) == pytest.approx(0.1 / SPEED_OF_SOUND * FS, abs=0.05)

    def test_noise_snr(self):
        room, arr = sample_room_config(seed=5)
        src = speech_like(2.0, FS, seed=5)
        rir = generate_rir(room, arr, FS, 0.3)
        noise = NoiseSpec([pink_noise(3.0, FS, seed=6)], 10.0, room, arr.mics)
        y = simulate_array(src, rir, noise, seed=1)
        clean = simulate_array(src, rir)
        snr = 10 * np.log10(power(clean.samples[0]) / power(y.samples[0] - clean.samples[0]))
        assert snr == pytest.approx(10.0, abs=0.3)
        assert len(noise.positions) == 1
        assert np.linalg.norm(noise.positions[0] - arr.mics.mean(axis=0)) >= 0.5

    def test_linear_in_source(self):
        room, arr = sample_room_config(seed=2)
        rir = generate_rir(room, arr, FS, 0.2)
        a, b = speech_like(0.5, FS, seed=1), speech_like(0.5, FS, seed=2)
        lhs = simulate_array(AudioBuffer(2 * a.samples - b.samples, FS), rir).samples
        rhs = 2 * simulate_array(a, rir).samples - simulate_array(b, rir).samples
        assert np.max(np.abs(lhs - rhs)) <= 1e-9

    def test_rate_mismatch(self):
        with pytest.raises(AudioError):
            simulate_array(AudioBuffer(np.ones(10), 8000), Rir(np.ones((1, 3)), FS))

    def test_empty_rir(self):
        with pytest.raises(AudioError):
            simulate_array(AudioBuffer(np.ones(10), FS), Rir(np.zeros((1, 0)), FS))

    def test_convolution_matches_direct(self):
        room, arr = sample_room_config(seed=8)
        rir = generate_rir(room, arr, FS, 0.1)
        src = speech_like(0.3, FS, seed=3)
        y = simulate_array(src, rir)
        assert np.allclose(y.samples[2], convolve(src.samples[0], rir.taps[2])[: src.length])


class TestSampleRoomConfig:
    def test_default_ranges(self):
        for seed in range(50):
            room, arr = sample_room_config(seed=seed)
            dims = np.array(room.dimensions)
            assert np.all(dims >= [3, 3, 2.5]) and np.all(dims <= [10, 10, 3.5])
            assert room.contains(arr.mics) and room.contains(arr.source)
            assert np.all(arr.source >= 0.5) and np.all(arr.source <= dims - 0.5)
            assert np.min(np.linalg.norm(arr.mics - arr.source, axis=1)) >= 0.5
            assert arr.mics.shape == (8, 3)

    def test_deterministic(self):
        a, b = sample_room_config(seed=9), sample_room_config(seed=9)
        assert a[0].dimensions == b[0].dimensions and np.array_equal(a[1].mics, b[1].mics)

    def test_dimension_means(self):
        dims = np.array([sample_room_config(seed=s)[0].dimensions for s in range(1000)])
        assert np.allclose(dims.mean(axis=0), [6.5, 6.5, 3.0], rtol=0.05)

    def test_infeasible(self):
        with pytest.raises(AudioError):
            sample_room_config(RoomRanges(length=(0.8, 1.0), width=(0.8, 1.0)), seed=0)

    def test_circular_array_radius(self):
        mics = circular_array(np.array([1.0, 2.0, 1.0]), 8, 0.05)
        assert np.allclose(np.linalg.norm(mics - [1.0, 2.0, 1.0], axis=1), 0.05)
