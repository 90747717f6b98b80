import numpy as np
import pytest

from 客观指标模块 import stoi
from 异常定义 import ConfigInvalid, SilentInput
from 信道模拟模块 import (
    STAGE_LOSS,
    ChannelConfig,
    Codec,
    LossModel,
    TransmissionRecord,
    loss_pattern,
    make_rng,
    mix_at_snr,
    mu_law_decode,
    mu_law_encode,
    packet_loss,
    replay_transmission,
    simulate_transmission,
    telephone_channel,
)
from 音频读写模块 import Waveform, rms_dbfs

FS = 16000
OFF = dict(snr_db=None, bandpass_enabled=False, codec="none", loss_model="none")


def _正弦(freq, seconds=1.0, rms_db=-20.0):
    t = np.arange(int(seconds * FS)) / FS
    x = np.sin(2 * np.pi * freq * t)
    return Waveform(x * 10 ** (rms_db / 20) / np.sqrt(np.mean(x ** 2)), FS)


@pytest.mark.parametrize("snr_db", [0.0, 5.0, -5.0])
def test_mix_hits_target_snr(speech, noise_factory, snr_db):
    noisy, achieved = mix_at_snr(speech, noise_factory(seconds=5.0), snr_db, seed=3)
    assert len(noisy) == len(speech)
    assert achieved == pytest.approx(snr_db, abs=0.01)
    residual = noisy.samples - speech.samples
    measured = 10 * np.log10(np.mean(speech.samples ** 2) / np.mean(residual ** 2))
    assert measured == pytest.approx(snr_db, abs=0.01)


def test_mix_loops_short_noise(speech, noise_factory):
    noisy, achieved = mix_at_snr(speech, noise_factory(seconds=0.3), 10.0, seed=1)
    assert len(noisy) == len(speech)
    assert achieved == pytest.approx(10.0, abs=0.01)


def test_mix_is_deterministic(speech, noise_factory):
    pool = noise_factory(seconds=5.0)
    a, _ = mix_at_snr(speech, pool, 5.0, seed=7, file_index=2)
    b, _ = mix_at_snr(speech, pool, 5.0, seed=7, file_index=2)
    c, _ = mix_at_snr(speech, pool, 5.0, seed=7, file_index=3)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_mix_rejects_silence(speech, noise):
    silent = Waveform(np.zeros(len(speech)), FS)
    with pytest.raises(SilentInput):
        mix_at_snr(silent, noise, 5.0, seed=0)
    with pytest.raises(SilentInput):
        mix_at_snr(speech, silent, 5.0, seed=0)


def test_bandpass_rejects_out_of_band_tone():
    cfg = ChannelConfig(**{**OFF, "bandpass_enabled": True})
    interior = slice(4000, -4000)
    low = _正弦(100.0)
    out = telephone_channel(low, cfg)
    assert rms_dbfs(out.samples[interior]) <= rms_dbfs(low.samples[interior]) - 40.0
    mid = _正弦(1000.0)
    out = telephone_channel(mid, cfg)
    assert rms_dbfs(out.samples[interior]) == pytest.approx(rms_dbfs(mid.samples[interior]), abs=1.0)


def test_bandpass_above_nyquist_is_invalid():
    cfg = ChannelConfig(**{**OFF, "bandpass_enabled": True, "high_hz": 4000.0})
    with pytest.raises(ConfigInvalid):
        telephone_channel(Waveform(np.zeros(8000), 8000), cfg)


def test_mu_law_codec_quality():
    tone = _正弦(1000.0, rms_db=-25.0)
    cfg = ChannelConfig(**{**OFF, "codec": "mu_law"})
    out = telephone_channel(tone, cfg)
    err = out.samples - tone.samples
    assert 10 * np.log10(np.mean(tone.samples ** 2) / np.mean(err ** 2)) >= 30.0


def test_mu_law_code_range():
    q = mu_law_encode(np.array([-2.0, -1.0, 0.0, 1.0, 2.0]))
    assert q.dtype == np.int16
    assert list(q) == [-127, -127, 0, 127, 127]
    np.testing.assert_allclose(mu_law_decode(q)[[0, 2, 4]], [-1.0, 0.0, 1.0], atol=1e-12)


def test_zero_loss_is_identity(speech):
    cfg = ChannelConfig(**{**OFF, "loss_model": "bernoulli", "p_loss": 0.0})
    out, dropped = packet_loss(speech, cfg)
    assert dropped == 0
    np.testing.assert_array_equal(out.samples, speech.samples)


def test_full_loss_silences_everything(speech):
    cfg = ChannelConfig(**{**OFF, "loss_model": "bernoulli", "p_loss": 1.0})
    out, dropped = packet_loss(speech, cfg)
    assert dropped == -(-len(speech) // 320)
    assert not out.samples.any()


def test_bernoulli_loss_rate():
    cfg = ChannelConfig(**{**OFF, "loss_model": "bernoulli", "p_loss": 0.1, "seed": 5})
    lost = loss_pattern(50000, cfg, make_rng(cfg.seed, 0, STAGE_LOSS))
    assert lost.mean() == pytest.approx(0.1, abs=0.01)


def test_gilbert_elliott_stationary_rate():
    cfg = ChannelConfig(**{**OFF, "loss_model": "gilbert_elliott", "p_good_to_bad": 0.05,
                           "p_bad_to_good": 0.3, "seed": 9})
    lost = loss_pattern(50000, cfg, make_rng(cfg.seed, 0, STAGE_LOSS))
    assert not lost[0]
    assert lost.mean() == pytest.approx(0.05 / 0.35, abs=0.02)
    runs = np.diff(np.flatnonzero(np.diff(np.concatenate([[0], lost.astype(int), [0]]))))[::2]
    assert runs.mean() == pytest.approx(1 / 0.3, rel=0.15)


def test_packet_loss_ramps_and_energy(speech):
    cfg = ChannelConfig(**{**OFF, "loss_model": "bernoulli", "p_loss": 0.3, "seed": 2})
    ones = Waveform(np.ones(len(speech)), FS)
    out, dropped = packet_loss(ones, cfg, file_index=4)
    assert dropped > 0
    lost = loss_pattern(-(-len(ones) // 320), cfg, make_rng(cfg.seed, 4, STAGE_LOSS))
    gain = out.samples
    for i in np.flatnonzero(lost):
        assert not gain[i * 320:(i + 1) * 320].any()
    kept_before_loss = [i for i in range(len(lost) - 1) if not lost[i] and lost[i + 1]]
    assert kept_before_loss
    i = kept_before_loss[0]
    boundary = (i + 1) * 320
    assert 0.0 < gain[boundary - 1] < 0.1
    assert np.all(np.diff(gain[boundary - 32:boundary]) <= 0)

    degraded, _ = packet_loss(speech, cfg)
    assert np.sum(degraded.samples ** 2) <= np.sum(speech.samples ** 2)


def test_all_impairments_off_is_identity(speech, noise):
    out, record = simulate_transmission(speech, noise, ChannelConfig(**OFF))
    np.testing.assert_array_equal(out.samples, speech.samples)
    assert record.frames_dropped == 0
    assert record.achieved_snr_db is None
    assert ChannelConfig(**OFF).impairments_off


def _全开配置(seed=11):
    return ChannelConfig(snr_db=5.0, bandpass_enabled=True, codec="mu_law", loss_model="gilbert_elliott",
                         p_good_to_bad=0.1, p_bad_to_good=0.5, seed=seed, condition="high")


def test_replay_is_bit_exact(speech, noise_factory):
    pool = noise_factory(seconds=4.0)
    out, record = simulate_transmission(speech, pool, _全开配置(), file_index=6)
    restored = TransmissionRecord.from_dict(record.to_dict())
    assert restored == record
    np.testing.assert_array_equal(replay_transmission(speech, pool, restored).samples, out.samples)
    assert record.condition == "high"
    assert record.to_dict()["config"]["codec"] == "mu_law"


def test_channel_degrades_intelligibility(speech, noise_factory):
    out, _ = simulate_transmission(speech, noise_factory(seconds=4.0), _全开配置())
    assert len(out) == len(speech)
    assert stoi(speech, out) < stoi(speech, speech) - 0.05


def test_snr_without_noise_is_invalid(speech):
    with pytest.raises(ConfigInvalid):
        simulate_transmission(speech, None, ChannelConfig(**{**OFF, "snr_db": 5.0}))


@pytest.mark.parametrize("overrides", [
    {"p_loss": 1.5},
    {"codec": "gsm"},
    {"loss_model": "burst"},
    {"low_hz": 3000.0, "high_hz": 300.0},
    {"ramp_ms": 15.0},
    {"seed": -1},
    {"snr_db": float("nan")},
])
def test_config_validation(overrides):
    with pytest.raises(ConfigInvalid):
        ChannelConfig(**{**OFF, **overrides})


def test_config_dict_roundtrip_and_unknown_key():
    cfg = _全开配置()
    back = ChannelConfig.from_dict(cfg.to_dict())
    assert back == cfg
    assert back.codec is Codec.MU_LAW
    assert back.loss_model is LossModel.GILBERT_ELLIOTT
    with pytest.raises(ConfigInvalid):
        ChannelConfig.from_dict({**cfg.to_dict(), "jitter_ms": 3})


def test_rng_streams_are_pcg64_and_keyed_by_file_and_stage():
    a = make_rng(7, 0, STAGE_LOSS)
    assert isinstance(a.bit_generator, np.random.PCG64)
    np.testing.assert_array_equal(a.integers(0, 2 ** 32, 16), make_rng(7, 0, STAGE_LOSS).integers(0, 2 ** 32, 16))
    first = make_rng(7, 0, STAGE_LOSS).integers(0, 2 ** 32, 16)
    assert not np.array_equal(first, make_rng(7, 1, STAGE_LOSS).integers(0, 2 ** 32, 16))
    assert not np.array_equal(first, make_rng(8, 0, STAGE_LOSS).integers(0, 2 ** 32, 16))
