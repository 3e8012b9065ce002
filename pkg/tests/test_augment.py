import numpy as np
import pytest

from meetkit.audio import AudioBuffer, AudioError
from meetkit.augment import (
    EqSpec,
    OverlapPolicy,
    Utterance,
    add_reverb,
    de_emphasis,
    eq_filter,
    mix_noise,
    overlap_ratio,
    pitch_shift,
    pre_emphasis,
    random_eq,
    simulate_overlap,
    speed_perturb,
    time_stretch,
)
from meetkit.room import Rir
from meetkit.synth import speech_like
from meetkit.sot import SotTranscript

from oracles import FS


def tone(freq, seconds=1.0, fs=FS):
    t = np.arange(int(seconds * fs)) / fs
    return AudioBuffer(np.sin(2 * np.pi * freq * t), fs)


def peak_hz(x, fs=FS):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return np.fft.rfftfreq(len(x), 1 / fs)[np.argmax(spec)]


def band_energy(x, lo, hi, fs=FS):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)))) ** 2
    f = np.fft.rfftfreq(len(x), 1 / fs)
    return spec[(f >= lo) & (f <= hi)].sum()


class TestMixNoise:
    def test_equal_power_zero_db(self):
        x = AudioBuffer(np.random.default_rng(0).standard_normal(1000))
        y = mix_noise(x, x, 0.0, seed=0)
        assert np.allclose(y.samples, 2 * x.samples)

    @pytest.mark.parametrize("snr", [-5.0, 0.0, 10.0, 20.0])
    def test_measured_snr(self, snr):
        rng = np.random.default_rng(1)
        x = AudioBuffer(rng.standard_normal(8000))
        n = AudioBuffer(rng.standard_normal(3000) * 7)  # shorter: tiled
        y = mix_noise(x, n, snr, seed=4)
        added = y.samples - x.samples
        assert 10 * np.log10(np.mean(x.samples**2) / np.mean(added**2)) == pytest.approx(snr, abs=0.01)

    def test_random_crop_is_seeded(self):
        rng = np.random.default_rng(2)
        x, n = AudioBuffer(rng.standard_normal(1000)), AudioBuffer(rng.standard_normal(50000))
        assert np.array_equal(mix_noise(x, n, 5, seed=3).samples, mix_noise(x, n, 5, seed=3).samples)
        assert not np.array_equal(mix_noise(x, n, 5, seed=3).samples, mix_noise(x, n, 5, seed=4).samples)

    def test_zero_noise(self):
        with pytest.raises(AudioError):
            mix_noise(AudioBuffer(np.ones(10)), AudioBuffer(np.zeros(10)), 10)

    def test_zero_signal(self):
        with pytest.raises(AudioError):
            mix_noise(AudioBuffer(np.zeros(10)), AudioBuffer(np.ones(10)), 10)

    def test_rate_mismatch(self):
        with pytest.raises(AudioError):
            mix_noise(AudioBuffer(np.ones(10), 16000), AudioBuffer(np.ones(10), 8000), 10)


class TestAddReverb:
    def test_unit_impulse(self):
        x = AudioBuffer(np.random.default_rng(0).standard_normal(500))
        assert np.allclose(add_reverb(x, Rir(np.array([[1.0, 0, 0]]), FS)).samples, x.samples)

    def test_delayed_impulse_compensated(self):
        x = AudioBuffer(np.random.default_rng(0).standard_normal(500))
        h = np.zeros((1, 40))
        h[0, 25] = 0.5
        assert np.allclose(add_reverb(x, Rir(h, FS)).samples, 0.5 * x.samples)

    def test_naive_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(600)
        h = rng.standard_normal(80) * 0.1
        h[10] = 2.0
        y = add_reverb(AudioBuffer(x), Rir(h[None, :], FS)).samples[0]
        full = np.zeros(len(x) + len(h) - 1)
        for n in range(len(full)):
            for k in range(len(h)):
                if 0 <= n - k < len(x):
                    full[n] += h[k] * x[n - k]
        assert np.max(np.abs(y - full[10 : 10 + len(x)])) <= 1e-9

    def test_rate_mismatch(self):
        with pytest.raises(AudioError):
            add_reverb(AudioBuffer(np.ones(10), 8000), Rir(np.ones((1, 3)), FS))


class TestSpeed:
    def test_identity(self):
        x = AudioBuffer(np.random.default_rng(0).standard_normal(1000))
        assert np.array_equal(speed_perturb(x, 1.0).samples, x.samples)

    def test_length_09(self):
        assert abs(speed_perturb(AudioBuffer(np.random.default_rng(0).standard_normal(16000)), 0.9).length - 17778) <= 2

    @pytest.mark.parametrize("n", [1000, 4567, 16000, 33333])
    @pytest.mark.parametrize("factor", [0.5, 0.9, 1.1, 1.37, 2.0])
    def test_length_formula(self, n, factor):
        y = speed_perturb(AudioBuffer(np.ones(n)), factor)
        assert abs(y.length - round(n / factor)) <= 2

    def test_tone_peak(self):
        y = speed_perturb(tone(1000), 1.1).samples[0]
        bin_hz = FS / len(y)
        assert abs(peak_hz(y) - 1100) <= bin_hz

    @pytest.mark.parametrize("factor", [0.4, 2.5])
    def test_out_of_range(self, factor):
        with pytest.raises(AudioError):
            speed_perturb(AudioBuffer(np.ones(100)), factor)


class TestPitch:
    def test_zero_identity(self):
        x = speech_like(1.0, FS, seed=0)
        y = pitch_shift(x, 0)
        assert np.linalg.norm(y.samples - x.samples) / np.linalg.norm(x.samples) <= 1e-3

    def test_two_semitones(self):
        y = pitch_shift(tone(440, 2.0), 2).samples[0]
        assert peak_hz(y) == pytest.approx(440 * 2 ** (2 / 12), abs=2.0)

    @pytest.mark.parametrize("st", [-4, -2.5, -1, 1, 3, 4])
    def test_duration_preserved(self, st):
        x = speech_like(1.3, FS, seed=1)
        assert abs(pitch_shift(x, st).length - x.length) <= 0.01 * x.length

    def test_out_of_range(self):
        with pytest.raises(AudioError):
            pitch_shift(AudioBuffer(np.ones(1000)), 4.5)

    def test_time_stretch_keeps_pitch(self):
        x = tone(300, 1.0).samples[0]
        y = time_stretch(x, 1.25, FS)
        assert len(y) == round(len(x) * 1.25)
        assert peak_hz(y) == pytest.approx(300, abs=2.0)


class TestEq:
    def test_flat_curve_identity(self):
        x = speech_like(0.5, FS, seed=2)
        y = eq_filter(x, EqSpec("response_curve", curve=[(100, 0.0), (4000, 0.0)]))
        assert np.max(np.abs(y.samples - x.samples)) <= 1e-6

    def test_low_pass_attenuates(self):
        x = tone(4000).samples[0]
        y = eq_filter(AudioBuffer(x), EqSpec("low_pass", cutoff=2000, weight=1.0)).samples[0]
        att = 10 * np.log10(band_energy(x, 3900, 4100) / band_energy(y, 3900, 4100))
        assert att >= 30

    def test_high_pass_attenuates(self):
        x = tone(100).samples[0]
        y = eq_filter(AudioBuffer(x), EqSpec("high_pass", cutoff=1000, weight=1.0)).samples[0]
        assert 10 * np.log10(band_energy(x, 50, 150) / band_energy(y, 50, 150)) >= 30

    def test_weight_blends(self):
        x = tone(4000).samples[0]
        wet = eq_filter(AudioBuffer(x), EqSpec("low_pass", cutoff=2000, weight=1.0)).samples[0]
        half = eq_filter(AudioBuffer(x), EqSpec("low_pass", cutoff=2000, weight=0.5)).samples[0]
        assert np.allclose(half, 0.5 * wet + 0.5 * x)
        assert np.allclose(eq_filter(AudioBuffer(x), EqSpec("low_pass", cutoff=2000, weight=0.0)).samples[0], x)

    def test_de_emphasis_inverts_pre_emphasis(self):
        x = np.random.default_rng(3).standard_normal(4000)
        assert np.max(np.abs(de_emphasis(pre_emphasis(x)) - x)[100:]) <= 1e-6
        y = eq_filter(AudioBuffer(pre_emphasis(x)), EqSpec("de_emphasis")).samples[0]
        assert np.max(np.abs(y - x)[100:]) <= 1e-6

    def test_response_curve_gain(self):
        y = eq_filter(tone(1000), EqSpec("response_curve", curve=[(1000, -6.0)])).samples[0]
        x = tone(1000).samples[0]
        assert 20 * np.log10(np.std(y) / np.std(x)) == pytest.approx(-6.0, abs=0.05)

    @pytest.mark.parametrize(
        "spec",
        [EqSpec("low_pass", cutoff=9000), EqSpec("high_pass", cutoff=0), EqSpec("low_pass", cutoff=1000, weight=1.5),
         EqSpec("response_curve", curve=[(1000, 13.0)]), EqSpec("response_curve"), EqSpec("band_stop", cutoff=100)],
    )
    def test_invalid(self, spec):
        with pytest.raises(AudioError):
            eq_filter(AudioBuffer(np.ones(100)), spec)

    def test_random_eq_valid(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            random_eq(rng, FS).validate(FS)


def make_pools(n_speakers=6, per_speaker=3, seed=0):
    rng = np.random.default_rng(seed)
    pools = {}
    for s in range(n_speakers):
        spk = f"spk{s}"
        pools[spk] = [
            Utterance(f"{spk}-u{k}", spk, AudioBuffer(rng.standard_normal(int(rng.integers(800, 3000)))), f"t{s}{k}")
            for k in range(per_speaker)
        ]
    return pools


def sweep_overlap(timeline):
    """Interval-sweep oracle: count samples where >= 2 utterances are active."""
    total = max(p.end_sample for p in timeline)
    active = np.zeros(total, dtype=int)
    for p in timeline:
        active[p.onset : p.end_sample] += 1
    return np.count_nonzero(active >= 2) / total


class TestOverlapRatio:
    def test_cases(self):
        assert overlap_ratio([(0, 10), (5, 15)]) == pytest.approx(5 / 15)
        assert overlap_ratio([(0, 10), (10, 20)]) == 0.0
        assert overlap_ratio([(0, 10), (0, 10), (0, 10)]) == 1.0
        assert overlap_ratio([]) == 0.0


@pytest.fixture(scope="module")
def pools():
    return make_pools()


class TestSimulateOverlap:
    def test_invariants_and_sum(self, pools):
        for seed in range(40):
            m = simulate_overlap(pools, seed=seed)
            assert m.n_speakers in (2, 3, 4)
            assert len({p.utterance.speaker_id for p in m.timeline}) == m.n_speakers
            assert all(p.onset >= 0 for p in m.timeline)
            expected = np.zeros(m.audio.length)
            for p in m.timeline:
                expected[p.onset : p.end_sample] += p.gain * p.utterance.audio.samples[0]
            assert np.array_equal(m.audio.samples[0], expected)
            assert m.audio.length == max(p.end_sample for p in m.timeline)
            assert 0 <= m.overlap_ratio <= 1
            assert m.overlap_ratio == sweep_overlap(m.timeline)
            gains_db = [20 * np.log10(p.gain) for p in m.timeline]
            assert all(-3 - 1e-9 <= g <= 3 + 1e-9 for g in gains_db)

    def test_reproducible(self, pools):
        a, b = simulate_overlap(pools, seed=11), simulate_overlap(pools, seed=11)
        assert np.array_equal(a.audio.samples, b.audio.samples)
        assert [(p.utterance.id, p.onset, p.gain) for p in a.timeline] == [(p.utterance.id, p.onset, p.gain) for p in b.timeline]
        assert str(a.sot) == str(b.sot)

    def test_speaker_histogram(self, pools):
        counts = np.bincount([simulate_overlap(pools, seed=s).n_speakers for s in range(1000)], minlength=5)[2:] / 1000
        assert np.allclose(counts, [0.5, 0.3, 0.2], atol=0.03)

    @pytest.mark.parametrize("per_speaker", [1, 2])
    def test_mean_overlap_in_policy_range(self, pools, per_speaker):
        pol = OverlapPolicy(utterances_per_speaker=per_speaker)
        ratios = [simulate_overlap(pools, pol, seed=s).overlap_ratio for s in range(300)]
        assert 0.25 <= np.mean(ratios) <= 0.50

    def test_sot_reference(self, pools):
        m = simulate_overlap(pools, seed=3)
        assert isinstance(m.sot, SotTranscript)
        order = sorted(m.timeline, key=lambda p: (p.start, p.utterance.speaker_id))
        assert str(m.sot) == " <sc> ".join(p.utterance.transcript for p in order)

    def test_too_few_speakers(self):
        pools = make_pools(n_speakers=2)
        with pytest.raises(AudioError):
            simulate_overlap(pools, OverlapPolicy(speaker_probs={4: 1.0}), seed=0)

    def test_empty_pools(self):
        with pytest.raises(AudioError):
            simulate_overlap({"a": [], "b": []}, seed=0)

    @pytest.mark.parametrize("policy", [OverlapPolicy(speaker_probs={5: 1.0}), OverlapPolicy(overlap_range=(0.6, 0.3)), OverlapPolicy(speaker_probs={2: 0.5, 3: 0.4})])
    def test_bad_policy(self, policy):
        with pytest.raises(AudioError):
            simulate_overlap(make_pools(), policy, seed=0)
