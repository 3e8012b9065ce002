import numpy as np
import pytest

from meetkit.audio import AudioBuffer, AudioError, Spectrogram, StftConfig, convolve, stft
from meetkit.synth import speech_like
from meetkit.wpe import WpeConfig, wpe, wpe_audio, wpe_bins

from oracles import FS, decaying_rir, tail_ratio


@pytest.fixture(scope="module")
def reverberant():
    s = speech_like(3.0, FS, seed=7).samples[0]
    x = np.stack([convolve(s, decaying_rir(20 + m))[: len(s)] for m in range(2)])
    return s, x


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(taps=0), dict(delay=0), dict(iterations=0), dict(epsilon=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(AudioError):
            WpeConfig(**kw)


class TestWpe:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_anechoic_passthrough(self, seed):
        # the residual change is filter-estimation noise, so it needs a long enough signal
        s = speech_like(10.0, FS, seed=seed).samples
        y = wpe_audio(AudioBuffer(s)).samples
        assert np.linalg.norm(y - s) / np.linalg.norm(s) <= 1e-3

    def test_short_input_changes_more(self):
        s = speech_like(3.0, FS, seed=1).samples
        short = np.linalg.norm(wpe_audio(AudioBuffer(s)).samples - s) / np.linalg.norm(s)
        s10 = speech_like(10.0, FS, seed=1).samples
        long = np.linalg.norm(wpe_audio(AudioBuffer(s10)).samples - s10) / np.linalg.norm(s10)
        assert long < short

    def test_zero_input(self):
        spec = stft(AudioBuffer(np.zeros((2, 8000))))
        out = wpe(spec)
        assert np.all(np.isfinite(out.bins)) and np.all(out.bins == 0)

    @pytest.mark.parametrize("channels", [1, 2, 5, 8])
    def test_shape_preserved(self, channels):
        rng = np.random.default_rng(channels)
        y = rng.standard_normal((channels, 40, 9)) + 1j * rng.standard_normal((channels, 40, 9))
        assert wpe_bins(y).shape == y.shape

    def test_early_frames_pass_through(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal((2, 50, 5)) + 1j * rng.standard_normal((2, 50, 5))
        cfg = WpeConfig()
        out = wpe_bins(y, cfg)
        start = cfg.delay + cfg.taps - 1
        assert np.array_equal(out[:, :start], y[:, :start])
        assert not np.allclose(out[:, start:], y[:, start:])

    def test_scale_equivariance(self, reverberant):
        _, x = reverberant
        spec = stft(AudioBuffer(x))
        a = wpe(spec).bins
        b = wpe(spec.with_bins(spec.bins * 37.0)).bins
        assert np.linalg.norm(b - 37.0 * a) / np.linalg.norm(37.0 * a) <= 1e-6

    def test_deterministic(self, reverberant):
        _, x = reverberant
        a = wpe_audio(AudioBuffer(x)).samples
        b = wpe_audio(AudioBuffer(x)).samples
        assert np.array_equal(a, b)

    def test_too_few_frames(self):
        with pytest.raises(AudioError):
            wpe_bins(np.ones((1, 5, 3), complex))

    def test_non_finite(self):
        y = np.ones((1, 40, 3), complex)
        y[0, 3, 1] = np.nan
        with pytest.raises(AudioError):
            wpe_bins(y)

    def test_tail_suppressed_and_monotone(self, reverberant):
        s, x = reverberant
        ratios = [tail_ratio(x[0], s)]
        for it in (1, 2, 3):
            y = wpe_audio(AudioBuffer(x), WpeConfig(iterations=it)).samples[0]
            ratios.append(tail_ratio(y, s))
        assert ratios[1] < ratios[0]
        assert ratios[2] <= ratios[1] and ratios[3] <= ratios[2]

    def test_oracle_sanity(self, reverberant):
        # the deconvolution oracle recovers the known late/early ratio of the input
        s, x = reverberant
        h = decaying_rir(20)
        truth = np.sum(h[800:] ** 2) / np.sum(h[:800] ** 2)
        assert 10 * np.log10(tail_ratio(x[0], s) / truth) == pytest.approx(0.0, abs=1.0)

    def test_other_stft_config(self, reverberant):
        s, x = reverberant
        y = wpe_audio(AudioBuffer(x), stft_cfg=StftConfig(1024, 256)).samples[0]
        assert tail_ratio(y, s) < tail_ratio(x[0], s)
