import numpy as np
import pytest
from scipy import signal

from 异常定义 import ConfigInvalid, DegenerateFrame, InputTooShort, NonColaConfig
from 信号处理核心 import (
    ComplexSpectrogram,
    StftConfig,
    autocorrelation,
    band_envelope,
    critical_band_filterbank,
    istft,
    levinson_durbin,
    lpc_coefficients,
    stft,
    third_octave_filterbank,
)
from 音频读写模块 import Waveform

FS = 16000


def _随机信号(seconds=1.0, seed=0):
    rng = np.random.default_rng(seed)
    return Waveform(0.1 * rng.standard_normal(int(seconds * FS)), FS)


def test_default_config_has_257_bins():
    s = stft(_随机信号())
    assert s.shape[0] == 257


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        StftConfig(fft_size=256, hop=128, win_length=512)
    with pytest.raises(ConfigInvalid):
        StftConfig(hop=0)


def test_zero_input_gives_zero_spectrogram():
    s = stft(Waveform(np.zeros(4000), FS))
    assert not np.any(s.bins)
    assert not np.any(istft(s).samples)


def test_input_shorter_than_window():
    with pytest.raises(InputTooShort):
        stft(Waveform(np.zeros(100), FS))


def test_bin_centered_tone_energy_concentration():
    k = 32
    freq = k * FS / 512
    t = np.arange(FS) / FS
    s = stft(Waveform(np.sin(2 * np.pi * freq * t), FS))
    power = np.abs(s.bins[:, 2:-2]) ** 2
    near = power[k - 1:k + 2].sum(axis=0)
    assert np.all(near / power.sum(axis=0) >= 0.9)


def test_istft_roundtrip():
    w = _随机信号()
    back = istft(stft(w))
    assert len(back) == len(w)
    assert np.linalg.norm(back.samples - w.samples) / np.linalg.norm(w.samples) <= 1e-6


def test_istft_rejects_non_cola():
    cfg = StftConfig(fft_size=512, hop=512, win_length=512, window='hann')
    s = stft(_随机信号(), cfg)
    with pytest.raises(NonColaConfig):
        istft(s)


def test_stft_linearity():
    x, y = _随机信号(seed=1), _随机信号(seed=2)
    combo = Waveform(0.7 * x.samples - 1.3 * y.samples, FS)
    lhs = stft(combo).bins
    rhs = 0.7 * stft(x).bins - 1.3 * stft(y).bins
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * np.linalg.norm(rhs)


def test_parseval_for_cola_config():
    cfg = StftConfig(fft_size=512, hop=128, win_length=512, window='hann')
    x = _随机信号().samples.copy()
    x[:1024] = 0.0
    x[-1024:] = 0.0
    s = stft(Waveform(x, FS), cfg)
    window = cfg.window_array()
    # 'spectrum' 缩放下 |X|² 需乘以 (Σw)²，再除以重叠相加的 Σw²/hop
    spectral = np.sum(np.abs(s.bins[0]) ** 2) + np.sum(np.abs(s.bins[-1]) ** 2) + 2 * np.sum(np.abs(s.bins[1:-1]) ** 2)
    spectral *= window.sum() ** 2 / cfg.fft_size
    spectral /= np.sum(window ** 2) / cfg.hop
    assert spectral == pytest.approx(np.sum(x ** 2), rel=1e-6)


def test_lpc_recovers_ar2():
    rng = np.random.default_rng(11)
    e = rng.standard_normal(4096)
    x = signal.lfilter([1.0], [1.0, -1.5, 0.7], e)
    a, err = lpc_coefficients(x, 2)
    np.testing.assert_allclose(a, [1.0, -1.5, 0.7], atol=0.05)
    assert err > 0


def test_lpc_degenerate_frame():
    with pytest.raises(DegenerateFrame):
        lpc_coefficients(np.zeros(400), 10)


def test_lpc_white_noise_has_little_prediction_gain():
    x = np.random.default_rng(5).standard_normal(8192)
    _, err = lpc_coefficients(x, 10)
    r0 = np.mean(x ** 2) * len(x)
    assert 10 * np.log10(r0 / err) <= 1.0


def test_levinson_matches_normal_equations():
    rng = np.random.default_rng(9)
    x = signal.lfilter([1.0], [1.0, -0.9, 0.4, -0.1], rng.standard_normal(2048))
    for order in (2, 6, 12):
        r = autocorrelation(x, order)
        a, _ = levinson_durbin(r, order)
        R = np.array([[r[abs(i - j)] for j in range(order)] for i in range(order)])
        direct = np.linalg.solve(R, -r[1:order + 1])
        np.testing.assert_allclose(a[1:], direct, atol=1e-8)


def test_third_octave_centers_and_partition():
    fb = third_octave_filterbank(10000, 512)
    assert fb.num_bands == 15
    assert fb.center_freqs_hz[0] == pytest.approx(150.0)
    assert fb.center_freqs_hz[14] == pytest.approx(150 * 2 ** (14 / 3), rel=1e-9)
    coverage = fb.weights.sum(axis=0)
    assert coverage.max() == 1.0
    assert np.all(fb.weights.sum(axis=1) > 0)


def test_critical_band_bank_shape():
    fb = critical_band_filterbank(FS, 512)
    assert fb.num_bands == 20
    assert np.all(np.diff(fb.center_freqs_hz) > 0)
    assert fb.low_edges_hz[0] == pytest.approx(150.0)
    assert fb.high_edges_hz[-1] == pytest.approx(7000.0)
    assert np.all(fb.weights.sum(axis=1) > 0)
    assert fb.weights.sum(axis=0).max() == 1.0


def test_critical_band_bank_too_coarse_for_48khz():
    with pytest.raises(ConfigInvalid):
        critical_band_filterbank(48000, 512)
    assert critical_band_filterbank(48000, 2048).num_bands == 20


def test_envelope_of_steady_tone_is_flat():
    fb = critical_band_filterbank(FS, 512)
    band = 8
    freq = float(fb.center_freqs_hz[band])
    t = np.arange(2 * FS) / FS
    env = band_envelope(Waveform(0.5 * np.sin(2 * np.pi * freq * t), FS), fb)[band]
    steady = env[20:-20]
    assert np.max(np.abs(steady - steady.mean())) <= 0.05 * steady.mean()


def test_envelope_tracks_4hz_modulation():
    fb = critical_band_filterbank(FS, 512)
    band = 10
    freq = float(fb.center_freqs_hz[band])
    t = np.arange(4 * FS) / FS
    x = (1 + 0.8 * np.sin(2 * np.pi * 4.0 * t)) * np.sin(2 * np.pi * freq * t)
    env = band_envelope(Waveform(0.3 * x, FS), fb)[band]
    env = env - env.mean()
    spectrum = np.abs(np.fft.rfft(env, n=4096))
    freqs = np.fft.rfftfreq(4096, d=0.01)
    assert freqs[np.argmax(spectrum)] == pytest.approx(4.0, abs=0.5)


def test_envelope_of_silence_is_zero():
    fb = critical_band_filterbank(FS, 512)
    assert not np.any(band_envelope(Waveform(np.zeros(FS), FS), fb))


def test_spectrogram_shape_validation():
    with pytest.raises(ValueError):
        ComplexSpectrogram(np.zeros((10, 4)), StftConfig(), FS)
