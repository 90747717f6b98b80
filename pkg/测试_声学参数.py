import numpy as np
import pytest
from scipy import signal

from 声学参数模块 import (
    FUNCTIONAL_LENGTH,
    FUNCTIONAL_NAMES,
    NUM_TAP_PARAMS,
    TAP_PARAM_NAMES,
    TapMatrix,
    TapParamId,
    compute_functionals,
    extract_tap,
    formant_estimate,
    pitch_track,
)
from 异常定义 import DimensionMismatch, InputTooShort
from 音频读写模块 import Waveform, resample

FS = 16000


def _锯齿波(f0=100.0, seconds=1.0, amplitude=0.5):
    t = np.arange(int(seconds * FS)) / FS
    return Waveform(amplitude * signal.sawtooth(2 * np.pi * f0 * t), FS)


def _双共振峰元音(seconds=1.0, f0=100.0, formants=((700.0, 60.0), (1200.0, 80.0))):
    n = int(seconds * FS)
    source = np.zeros(n)
    source[::int(FS / f0)] = 1.0
    source += 1e-4 * np.random.default_rng(2).standard_normal(n)
    x = source
    for freq, bw in formants:
        r = np.exp(-np.pi * bw / FS)
        theta = 2 * np.pi * freq / FS
        x = signal.lfilter([1.0 - r], [1.0, -2 * r * np.cos(theta), r * r], x)
    return Waveform(0.3 * x / np.max(np.abs(x)), FS)


def test_exactly_25_parameters():
    assert NUM_TAP_PARAMS == 25
    assert len(set(TAP_PARAM_NAMES)) == 25
    assert TAP_PARAM_NAMES[0] == "pitch"
    assert TAP_PARAM_NAMES[-1] == "continuous_voiced_per_sec"


def test_pitch_of_220hz_sine():
    t = np.arange(FS) / FS
    track = pitch_track(Waveform(0.5 * np.sin(2 * np.pi * 220 * t), FS))
    interior = slice(2, len(track.f0_hz) - 30)
    assert np.all(track.voiced[interior])
    np.testing.assert_allclose(track.f0_hz[interior], 220.0, atol=1.0)


def test_white_noise_is_mostly_unvoiced(noise):
    assert pitch_track(noise).voiced.mean() <= 0.05


def test_silence_is_unvoiced():
    track = pitch_track(Waveform(np.zeros(FS), FS))
    assert not track.voiced.any()
    assert not track.f0_hz.any()


def test_formants_of_two_resonator_vowel():
    vowel = _双共振峰元音()
    formants = formant_estimate(vowel)
    use = formants.valid[:, 1]
    assert use.sum() > 50
    assert np.median(formants.freqs_hz[use, 0]) == pytest.approx(700.0, abs=50.0)
    assert np.median(formants.freqs_hz[use, 1]) == pytest.approx(1200.0, abs=50.0)


def test_formant_confidence_follows_bandwidth(noise):
    formants = formant_estimate(noise)
    found = formants.found
    assert np.array_equal(formants.confident[found], formants.bandwidths_hz[found] <= 400.0)


def test_formants_of_silence_invalid():
    formants = formant_estimate(Waveform(np.zeros(FS), FS))
    assert not formants.valid.any()


def test_extract_tap_dimensions(speech):
    m = extract_tap(speech)
    assert m.values.shape[1] == 25
    assert m.frame_rate_hz == pytest.approx(100.0)
    assert m.num_frames == 1 + (len(speech) - 400) // 160
    assert np.all(np.isfinite(m.values))
    assert not m.values[~m.valid].any()


def test_sawtooth_vowel_periodic_source():
    m = extract_tap(_锯齿波())
    voiced = m.valid[:, 0]
    interior = np.zeros_like(voiced)
    interior[2:-30] = True
    sel = voiced & interior
    assert sel.sum() > 50
    assert np.median(m.column(TapParamId.PITCH)[sel]) == pytest.approx(100.0, abs=2.0)
    jitter_ok = m.valid[:, 1] & interior
    assert np.median(m.column(TapParamId.JITTER)[jitter_ok]) <= 0.005
    assert np.median(m.column(TapParamId.HNR)[sel]) >= 20.0


def test_silence_gives_zero_frame_block():
    w = Waveform(np.zeros(FS), FS)
    m = extract_tap(w)
    assert not m.values[:, :20].any()
    assert not m.valid[:, :20].any()
    np.testing.assert_allclose(m.column(TapParamId.MEAN_UNVOICED_LEN), w.duration_s)
    assert not m.column(TapParamId.CONTINUOUS_VOICED_PER_SEC).any()


def test_too_short_input():
    with pytest.raises(InputTooShort):
        extract_tap(Waveform(np.zeros(500), FS))


def test_time_shift_by_one_hop(speech):
    shifted = Waveform(np.concatenate([np.zeros(160), speech.samples]), FS)
    a = extract_tap(speech)
    b = extract_tap(shifted)
    assert b.num_frames == a.num_frames + 1
    spectral = [TAP_PARAM_NAMES.index(p.value) for p in (
        TapParamId.LOUDNESS, TapParamId.ALPHA_RATIO, TapParamId.HAMMARBERG_INDEX,
        TapParamId.SPECTRAL_SLOPE_0_500, TapParamId.SPECTRAL_SLOPE_500_1500)]
    np.testing.assert_allclose(a.values[5:-40, spectral], b.values[6:a.num_frames - 39, spectral], atol=1e-6)
    pa, pb = a.valid[5:-40, 0], b.valid[6:a.num_frames - 39, 0]
    both = pa & pb
    assert both.mean() >= 0.9
    np.testing.assert_allclose(a.values[5:-40, 0][both], b.values[6:a.num_frames - 39, 0][both], atol=1.0)


def test_48khz_input_matches_16khz_rows(speech):
    a = extract_tap(speech)
    b = extract_tap(resample(speech, 48000))
    assert b.num_frames == a.num_frames
    assert b.frame_rate_hz == pytest.approx(100.0)
    loud = TAP_PARAM_NAMES.index(TapParamId.LOUDNESS.value)
    active = a.valid[:, loud] & b.valid[:, loud]
    active[:3] = active[-3:] = False
    np.testing.assert_allclose(b.values[active, loud], a.values[active, loud], rtol=0.02)
    alpha = TAP_PARAM_NAMES.index(TapParamId.ALPHA_RATIO.value)
    assert np.median(b.values[:, alpha]) == pytest.approx(np.median(a.values[:, alpha]), abs=0.5)
    both = a.valid[:, 0] & b.valid[:, 0]
    assert both.sum() > 0.8 * a.valid[:, 0].sum()
    assert np.median(b.values[both, 0]) == pytest.approx(np.median(a.values[both, 0]), abs=1.0)


@pytest.mark.parametrize("gain", [0.1, 0.5])
def test_frequency_parameters_amplitude_invariant(gain):
    vowel = _双共振峰元音()
    quiet = vowel.with_samples(gain * vowel.samples)
    ref, scaled = extract_tap(vowel), extract_tap(quiet)
    for param in (TapParamId.PITCH, TapParamId.F1_FREQ, TapParamId.F2_FREQ, TapParamId.F3_FREQ):
        idx = TAP_PARAM_NAMES.index(param.value)
        both = ref.valid[:, idx] & scaled.valid[:, idx]
        assert both.sum() > 0
        np.testing.assert_allclose(ref.values[both, idx], scaled.values[both, idx], atol=1.0)


def test_loudness_decreases_with_gain(speech):
    ref = extract_tap(speech).column(TapParamId.LOUDNESS)
    quiet = extract_tap(speech.with_samples(0.5 * speech.samples)).column(TapParamId.LOUDNESS)
    active = ref > 0
    assert np.all(quiet[active] < ref[active])


def test_voicing_segments_of_silence_tone_silence():
    tone = _锯齿波(seconds=1.0).samples
    gap = np.zeros(FS // 2)
    w = Waveform(np.concatenate([gap, tone, gap]), FS)
    m = extract_tap(w)
    voiced = m.valid[:, 0]
    idx = np.flatnonzero(voiced)
    assert np.all(np.diff(idx) == 1)
    voiced_len = (idx[-1] + 1 - idx[0]) * 160 / FS
    assert voiced_len == pytest.approx(1.0, abs=0.05)
    assert m.column(TapParamId.MEAN_VOICED_LEN)[0] == pytest.approx(voiced_len, abs=1e-12)
    assert m.column(TapParamId.STD_VOICED_LEN)[0] == 0.0
    assert m.column(TapParamId.MEAN_UNVOICED_LEN)[0] == pytest.approx((2.0 - voiced_len) / 2, abs=1e-12)
    assert m.column(TapParamId.CONTINUOUS_VOICED_PER_SEC)[0] == pytest.approx(0.5)


def test_functionals_of_constant_matrix():
    m = TapMatrix(np.full((40, 25), 3.0))
    fv = compute_functionals(m)
    assert len(fv.values) == FUNCTIONAL_LENGTH == 129
    d = fv.to_dict()
    assert d["pitch_mean"] == 3.0
    assert d["pitch_stddev"] == 0.0
    assert d["hnr_p20"] == d["hnr_p50"] == d["hnr_p80"] == 3.0
    assert list(d)[-4:] == ["mean_voiced_len", "std_voiced_len", "mean_unvoiced_len", "continuous_voiced_per_sec"]


def test_functionals_ramp_median():
    T = 101
    values = np.tile(np.linspace(0.0, 1.0, T)[:, None], (1, 25))
    fv = compute_functionals(TapMatrix(values, np.ones_like(values, dtype=bool)))
    p50 = fv.values[FUNCTIONAL_NAMES.index("loudness_p50")]
    assert p50 == pytest.approx(0.5, abs=1.0 / T)


def test_functionals_without_valid_frames_are_invalid():
    values = np.ones((10, 25))
    valid = np.ones_like(values, dtype=bool)
    valid[:, 0] = False
    fv = compute_functionals(TapMatrix(values, valid))
    assert fv.to_dict()["pitch_mean"] is None
    assert fv.to_dict()["jitter_mean"] == 1.0


def test_tap_matrix_nan_becomes_invalid():
    values = np.ones((3, 25))
    values[1, 4] = np.nan
    m = TapMatrix(values)
    assert m.values[1, 4] == 0.0
    assert not m.valid[1, 4]


def test_tap_matrix_wrong_width():
    with pytest.raises(DimensionMismatch):
        TapMatrix(np.zeros((4, 24)))


def test_tap_matrix_csv_and_npz(tmp_path, speech):
    m = extract_tap(speech)
    m.to_csv(tmp_path / "m.csv")
    header = (tmp_path / "m.csv").read_text(encoding="utf-8").splitlines()[0].split(",")
    assert tuple(header) == TAP_PARAM_NAMES
    m.to_npz(tmp_path / "m.npz")
    back = TapMatrix.from_npz(tmp_path / "m.npz")
    np.testing.assert_array_equal(back.values, m.values)
    np.testing.assert_array_equal(back.valid, m.valid)
    assert back.frame_rate_hz == m.frame_rate_hz
