import re

import numpy as np
import pystoi
import pytest
from scipy import signal

from 异常定义 import EmptyRegion, LengthMismatch, NoActiveSpeech, TooShort
from 客观指标模块 import (
    METRIC_ROWS,
    aggregate_frames,
    config_digest,
    csii,
    csii_regions,
    evaluate_pair,
    llr,
    ncm,
    pesq_via_command,
    stoi,
)
from 音频读写模块 import Waveform, resample

FS = 16000


def _按信噪比混合(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    ps = np.mean(clean.samples ** 2)
    pn = np.mean(noise.samples ** 2)
    g = np.sqrt(ps / (pn * 10 ** (snr_db / 10)))
    return clean.with_samples(clean.samples + g * noise.samples)


def test_identical_pair_fixpoints(speech):
    assert stoi(speech, speech) == pytest.approx(1.0, abs=1e-6)
    assert llr(speech, speech) == pytest.approx(0.0, abs=1e-9)
    assert ncm(speech, speech) == pytest.approx(1.0, abs=1e-9)
    result = csii(speech, speech)
    assert result.high == pytest.approx(1.0, abs=1e-9)
    assert result.mid == pytest.approx(1.0, abs=1e-9)
    for value in result.as_tuple():
        assert value is None or value == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("seed, f0", [(3, 100.0), (4, 180.0), (5, 240.0)])
def test_fixpoints_on_varied_fixtures(speech_factory, seed, f0):
    x = speech_factory(seconds=1.5, seed=seed, f0=f0)
    assert stoi(x, x) == pytest.approx(1.0, abs=1e-6)
    assert llr(x, x) <= 1e-6
    assert ncm(x, x) == pytest.approx(1.0, abs=1e-6)
    assert all(v is None or v == pytest.approx(1.0, abs=1e-6) for v in csii(x, x).as_tuple())


@pytest.mark.parametrize("gain", [0.5, 2.0])
def test_gain_invariance(speech, gain):
    scaled = speech.with_samples(gain * speech.samples)
    assert stoi(speech, scaled) == pytest.approx(stoi(speech, speech), abs=1e-6)
    assert llr(speech, scaled) == pytest.approx(0.0, abs=1e-6)
    assert ncm(speech, scaled) == pytest.approx(1.0, abs=1e-6)
    assert csii(speech, scaled).high == pytest.approx(1.0, abs=1e-6)


def test_stoi_decreases_with_snr(speech, noise):
    scores = [stoi(speech, _按信噪比混合(speech, noise, snr)) for snr in (20, 10, 0, -10)]
    assert all(a > b for a, b in zip(scores, scores[1:]))
    assert scores[0] <= 1.0


def test_stoi_matches_reference_package(speech, noise):
    degraded = _按信噪比混合(speech, noise, 0)
    expected = pystoi.stoi(speech.samples, degraded.samples, FS, extended=False)
    assert stoi(speech, degraded) == pytest.approx(expected, abs=1e-12)


def test_stoi_of_silent_clean():
    silent = Waveform(np.zeros(FS), FS)
    with pytest.raises(NoActiveSpeech):
        stoi(silent, silent)


def test_stoi_too_short(speech):
    short = speech.with_samples(speech.samples[:3000])
    with pytest.raises(TooShort):
        stoi(short, short)


def test_pair_must_match(speech):
    with pytest.raises(LengthMismatch):
        stoi(speech, speech.with_samples(speech.samples[:-10]))
    with pytest.raises(LengthMismatch):
        ncm(speech, Waveform(speech.samples, 8000))


def test_llr_of_lowpassed_speech(speech):
    sos = signal.butter(8, 2000, btype='low', fs=FS, output='sos')
    filtered = speech.with_samples(signal.sosfiltfilt(sos, speech.samples))
    assert llr(speech, filtered) > 0.2
    assert llr(speech, filtered) <= 2.0


def test_llr_silent_enhanced_is_bounded(speech):
    silent = speech.with_samples(np.zeros(len(speech)))
    assert 0.0 <= llr(speech, silent) <= 2.0


def test_aggregate_frames_modes():
    same = np.full(40, 0.7)
    for mode in ("trimmed", "mean", "median"):
        assert aggregate_frames(same, mode) == pytest.approx(0.7)
    ramp = np.arange(1.0, 21.0)
    assert aggregate_frames(ramp, "trimmed") == pytest.approx(10.0)
    assert aggregate_frames(ramp, "median") == pytest.approx(10.5)
    with pytest.raises(ValueError):
        aggregate_frames(ramp, "max")


def test_csii_of_independent_noise(speech, noise):
    result = csii(speech, noise)
    regions = csii_regions(speech, 512, 128)
    for name, value in zip(("high", "mid", "low"), result.as_tuple()):
        if value is None:
            assert len(regions[name]) < 3
        else:
            assert 0.0 <= value <= 0.1


def test_csii_stationary_clean_has_no_low_region(noise_factory):
    clean = noise_factory(seed=4)
    degraded = noise_factory(seed=5)
    result = csii(clean, clean.with_samples(clean.samples + 0.1 * degraded.samples))
    assert result.low is None
    assert result.status["low"] == EmptyRegion.code
    assert result.high is not None and 0.0 <= result.high <= 1.0
    assert result.mid is not None and 0.0 <= result.mid <= 1.0


def test_ncm_of_independent_noise(speech, noise):
    assert ncm(speech, noise) <= 0.15


def test_ncm_decreases_with_snr(speech, noise):
    scores = [ncm(speech, _按信噪比混合(speech, noise, snr)) for snr in (20, 10, 0, -10)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_ncm_of_silent_clean():
    silent = Waveform(np.zeros(FS), FS)
    with pytest.raises(NoActiveSpeech):
        ncm(silent, silent)


def test_evaluate_pair_identical(speech):
    report = evaluate_pair(speech, speech)
    assert not report.failed
    assert list(report.rows()) == list(METRIC_ROWS)
    assert report.pesq is None
    assert report.status["PESQ"] == "n/a"
    assert report.stoi == pytest.approx(1.0, abs=1e-6)
    assert report.ncm == pytest.approx(1.0, abs=1e-9)
    assert report.to_dict()["config_digest"] == config_digest()


def test_evaluate_pair_failing_pesq_keeps_other_metrics(speech):
    report = evaluate_pair(speech, speech, pesq_command="false {clean} {degraded}")
    assert report.status["PESQ"] == "failed"
    assert report.pesq is None
    assert "PESQ" in report.errors
    assert report.stoi == pytest.approx(1.0, abs=1e-6)
    assert not report.failed


def test_pesq_adapter_parses_last_real_token(speech):
    assert pesq_via_command(speech, speech, "echo {clean} 3.25") == pytest.approx(3.25)
    report = evaluate_pair(speech, speech, pesq_command="echo MOS-LQO: 2.5e0 {degraded}")
    assert report.pesq == pytest.approx(2.5)
    assert report.status["PESQ"] == "ok"


def test_short_pair_marks_failed_metric(speech):
    short = speech.with_samples(speech.samples[:3200])
    report = evaluate_pair(short, short)
    assert report.status["STOI"] == TooShort.code
    assert report.stoi is None
    assert report.failed
    assert report.ncm is not None


def test_config_digest_shape():
    digest = config_digest()
    assert re.fullmatch(r"[0-9a-f]{12}", digest)
    assert digest == config_digest()


def test_evaluate_pair_at_48khz(speech):
    w48 = resample(speech, 48000)
    report = evaluate_pair(w48, w48)
    assert not report.failed
    assert report.ncm == pytest.approx(1.0, abs=1e-6)
    assert report.stoi == pytest.approx(1.0, abs=1e-6)
    for key in ("CSII_high", "CSII_mid", "CSII_low"):
        assert report.status[key] in ("ok", EmptyRegion.code)
    assert report.csii_high == pytest.approx(1.0, abs=1e-6)
    assert report.csii_mid == pytest.approx(1.0, abs=1e-6)


def test_48khz_metrics_track_16khz(speech, noise):
    degraded = _按信噪比混合(speech, noise, 5)
    a = ncm(speech, degraded)
    b = ncm(resample(speech, 48000), resample(degraded, 48000))
    assert b == pytest.approx(a, abs=0.02)
    assert csii(resample(speech, 48000), resample(degraded, 48000)).high == \
        pytest.approx(csii(speech, degraded).high, abs=0.02)


def test_csii_failure_recorded_for_every_region(speech):
    short = speech.with_samples(speech.samples[:400])
    report = evaluate_pair(short, short)
    for key in ("CSII_high", "CSII_mid", "CSII_low"):
        assert report.status[key] == TooShort.code
        assert key in report.errors
    assert "CSII" not in report.errors
