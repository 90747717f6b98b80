import numpy as np
import pytest

import 配置
from 声学参数模块 import TapMatrix
from 信号处理核心 import StftConfig, stft
from 异常定义 import (
    AlreadyCompressed,
    CompressedMask,
    ConfigInvalid,
    DimensionMismatch,
    InputTooShort,
    LengthMismatch,
    NoValidFrames,
    OutOfDomain,
    UncompressedInput,
)
from 损失函数模块 import (
    CirmMask,
    LossWeights,
    apply_cirm,
    cirm_from_specs,
    cirm_loss,
    compress_cirm,
    decompress_cirm,
    demucs_loss,
    fullsubnet_loss,
    l1_loss,
    log_magnitude_loss,
    loss_ablation_sweep,
    mrstft_loss,
    spectral_convergence,
    stft_magnitude,
    tap_loss,
    tap_loss_masked,
)
from 音频读写模块 import Waveform

FS = 16000


def _信号对(seed=0, seconds=0.5):
    rng = np.random.default_rng(seed)
    n = int(seconds * FS)
    return Waveform(0.1 * rng.standard_normal(n), FS), Waveform(0.1 * rng.standard_normal(n), FS)


def _随机掩码(shape=(5, 7), seed=0, compressed=True):
    rng = np.random.default_rng(seed)
    values = rng.uniform(-5, 5, shape) + 1j * rng.uniform(-5, 5, shape)
    return CirmMask(values, compressed=compressed)


def test_l1_identity_and_offset(speech):
    assert l1_loss(speech, speech) == 0.0
    shifted = speech.with_samples(speech.samples + 0.1)
    assert l1_loss(speech, shifted) == pytest.approx(0.1, abs=1e-12)


def test_l1_brute_force():
    y, y_hat = _信号对()
    expected = sum(abs(a - b) for a, b in zip(y.samples, y_hat.samples)) / len(y)
    assert l1_loss(y, y_hat) == pytest.approx(expected, abs=1e-12)


def test_l1_length_mismatch():
    y, _ = _信号对()
    with pytest.raises(LengthMismatch):
        l1_loss(y, y.with_samples(y.samples[:-1]))


def test_mrstft_identity_and_sign_invariance(speech):
    assert mrstft_loss(speech, speech) == 0.0
    negated = speech.with_samples(-speech.samples)
    assert mrstft_loss(speech, negated) == pytest.approx(0.0, abs=1e-12)
    assert l1_loss(speech, negated) > 0


def test_mrstft_matches_per_resolution_sum(speech):
    half = speech.with_samples(0.5 * speech.samples)
    expected = 0.0
    for fft, hop, win in 配置.LOSS_CONFIG['mrstft_resolutions']:
        cfg = StftConfig(fft_size=fft, hop=hop, win_length=win, window='hann', center_padding=True)
        mag, mag_hat = stft_magnitude(speech, cfg), stft_magnitude(half, cfg)
        sc = np.linalg.norm(mag - mag_hat) / np.linalg.norm(mag)
        expected += sc + np.mean(np.abs(np.log(mag) - np.log(mag_hat)))
    assert mrstft_loss(speech, half) == pytest.approx(expected, rel=1e-9)


def test_mrstft_too_short():
    w = Waveform(np.ones(1000), FS)
    with pytest.raises(InputTooShort):
        mrstft_loss(w, w)


def test_spectral_terms_zero_on_identity():
    mag = np.abs(np.random.default_rng(1).standard_normal((9, 4))) + 0.1
    assert spectral_convergence(mag, mag) == 0.0
    assert log_magnitude_loss(mag, mag) == 0.0


def test_demucs_loss_degenerate_weights():
    y, y_hat = _信号对(seconds=0.3)
    b = demucs_loss(y, y_hat, LossWeights(lambda1=0.0, lambda2=0.0))
    assert b.total == l1_loss(y, y_hat)
    assert b.formula == "demucs"


def test_demucs_loss_affine_in_weights():
    y, y_hat = _信号对(seconds=0.3)
    one = demucs_loss(y, y_hat, LossWeights(lambda1=0.0, lambda2=1.0))
    zero = demucs_loss(y, y_hat, LossWeights(lambda1=0.0, lambda2=0.0))
    assert one.total - zero.total == pytest.approx(mrstft_loss(y, y_hat), abs=1e-9)
    tap_one = demucs_loss(y, y_hat, LossWeights(lambda1=1.0, lambda2=0.0))
    assert tap_one.total - zero.total == pytest.approx(tap_one.tap, abs=1e-9)


def test_demucs_loss_zero_on_identity(speech):
    short = speech.with_samples(speech.samples[:FS // 2])
    assert demucs_loss(short, short).total == 0.0


def test_loss_weights_validation():
    with pytest.raises(ConfigInvalid):
        LossWeights(lambda1=-0.1)
    with pytest.raises(ConfigInvalid):
        LossWeights(gamma=float('inf'))


def test_identity_mask(speech):
    spec = stft(speech)
    m = cirm_from_specs(spec, spec)
    above = np.abs(spec.bins) ** 2 >= 1e-10
    np.testing.assert_allclose(m.values[above], 1.0 + 0j, atol=1e-12)
    assert not m.compressed


def test_null_mask(speech):
    spec = stft(speech)
    zero = spec.with_bins(np.zeros_like(spec.bins))
    assert not np.any(cirm_from_specs(spec, zero).values)


def test_mask_reconstructs_clean_above_floor(speech, noise):
    noisy = stft(speech.with_samples(speech.samples + noise.samples))
    clean = stft(speech)
    m = cirm_from_specs(noisy, clean)
    out = apply_cirm(noisy, m).bins
    above = np.abs(noisy.bins) ** 2 >= 1e-10
    np.testing.assert_allclose(out[above], clean.bins[above], rtol=1e-9, atol=1e-12)


def test_apply_cirm_contracts(speech):
    spec = stft(speech)
    ones = CirmMask(np.ones(spec.shape))
    np.testing.assert_array_equal(apply_cirm(spec, ones).bins, spec.bins)
    assert not np.any(apply_cirm(spec, CirmMask(np.zeros(spec.shape))).bins)
    with pytest.raises(CompressedMask):
        apply_cirm(spec, compress_cirm(ones))
    with pytest.raises(DimensionMismatch):
        apply_cirm(spec, CirmMask(np.ones((3, 3))))


def test_compress_values():
    m = CirmMask(np.array([0.0, 1000.0, -1000.0]))
    c = compress_cirm(m)
    assert c.values[0] == 0
    assert c.values[1].real >= 9.99
    assert c.values[1].real < 10.0
    assert c.values[2].real == -c.values[1].real
    with pytest.raises(AlreadyCompressed):
        compress_cirm(c)


def test_compress_matches_exponential_form():
    x = np.linspace(-50, 50, 101)
    c = compress_cirm(CirmMask(x)).values.real
    expected = 10 * (1 - np.exp(-0.1 * x)) / (1 + np.exp(-0.1 * x))
    np.testing.assert_allclose(c, expected, atol=1e-12)
    assert np.all(np.diff(c) > 0)


def test_compress_decompress_identity():
    rng = np.random.default_rng(4)
    values = rng.uniform(-50, 50, (6, 8)) + 1j * rng.uniform(-50, 50, (6, 8))
    back = decompress_cirm(compress_cirm(CirmMask(values)))
    np.testing.assert_allclose(back.values, values, atol=1e-9)


def test_decompress_domain():
    assert decompress_cirm(CirmMask(np.zeros(3), compressed=True)).values[0] == 0
    with pytest.raises(OutOfDomain):
        decompress_cirm(CirmMask(np.array([10.0]), compressed=True))
    with pytest.raises(UncompressedInput):
        decompress_cirm(CirmMask(np.zeros(3)))


def test_cirm_loss_values():
    target = _随机掩码()
    assert cirm_loss(target, target) == 0.0
    offset = CirmMask(target.values + 0.5, compressed=True)
    assert cirm_loss(offset, target) == pytest.approx(0.125, abs=1e-12)


def test_cirm_loss_brute_force():
    a, b = _随机掩码(seed=1), _随机掩码(seed=2)
    total = 0.0
    rows, cols = a.shape
    for i in range(rows):
        for j in range(cols):
            d = a.values[i, j] - b.values[i, j]
            total += d.real ** 2 + d.imag ** 2
    assert cirm_loss(a, b) == pytest.approx(total / (2 * rows * cols), abs=1e-12)


def test_cirm_loss_requires_compressed():
    with pytest.raises(UncompressedInput):
        cirm_loss(_随机掩码(compressed=False), _随机掩码())
    with pytest.raises(DimensionMismatch):
        cirm_loss(_随机掩码((3, 3)), _随机掩码((3, 4)))


def test_tap_loss_values():
    rng = np.random.default_rng(8)
    a = TapMatrix(rng.standard_normal((7, 25)))
    assert tap_loss(a, a) == 0.0
    assert tap_loss(a, TapMatrix(a.values + 1.0)) == pytest.approx(1.0, abs=1e-12)
    b = TapMatrix(rng.standard_normal((7, 25)))
    brute = sum(abs(a.values[t, p] - b.values[t, p]) for t in range(7) for p in range(25)) / (7 * 25)
    assert tap_loss(a, b) == pytest.approx(brute, abs=1e-12)
    with pytest.raises(DimensionMismatch):
        tap_loss(a, TapMatrix(np.zeros((6, 25))))


def test_tap_loss_masked():
    values = np.ones((4, 25))
    valid = np.zeros((4, 25), dtype=bool)
    valid[0, 0] = True
    a = TapMatrix(values, valid)
    b = TapMatrix(values * 3.0, valid)
    assert tap_loss_masked(a, b) == pytest.approx(2.0)
    with pytest.raises(NoValidFrames):
        tap_loss_masked(a, TapMatrix(values, np.zeros_like(valid)))


def test_fullsubnet_gamma_zero():
    pred, target = _随机掩码(seed=3), _随机掩码(seed=4)
    a = TapMatrix(np.zeros((5, 25)))
    a_hat = TapMatrix(np.ones((5, 25)))
    b = fullsubnet_loss(pred, target, a, a_hat, LossWeights(gamma=0.0))
    assert b.total == cirm_loss(pred, target)
    b2 = fullsubnet_loss(pred, target, a, a_hat, LossWeights(gamma=0.5))
    assert b2.total - b.total == pytest.approx(0.5 * b2.tap, abs=1e-12)


def test_ablation_sweep_grids():
    y, y_hat = _信号对(seconds=0.3)
    base = demucs_loss(y, y_hat)
    rows = loss_ablation_sweep(base)
    assert [(r.weights.lambda1, r.weights.lambda2) for r in rows] == [tuple(g) for g in 配置.DEMUCS_ABLATION_GRID]
    for r in rows:
        assert r.total == pytest.approx(r.l1 + r.weights.lambda1 * r.tap + r.weights.lambda2 * r.stft, abs=1e-12)

    pred, target = _随机掩码(seed=5), _随机掩码(seed=6)
    fs_base = fullsubnet_loss(pred, target, TapMatrix(np.zeros((3, 25))), TapMatrix(np.ones((3, 25))))
    fs_rows = loss_ablation_sweep(fs_base)
    assert [r.weights.gamma for r in fs_rows] == list(配置.FULLSUBNET_ABLATION_GRID)
    assert fs_rows[-1].total == fs_base.cirm
