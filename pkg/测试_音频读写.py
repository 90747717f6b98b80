import struct
import warnings

import numpy as np
import pytest
import soundfile as sf

from 异常定义 import ClippingDetected, EmptyAudio, IoError, MalformedFile, SilentInput, UnsupportedEncoding
from 音频读写模块 import Encoding, Waveform, gain_normalize, load_wav, resample, rms_dbfs, save_wav


def _峰值频率(w: Waveform) -> float:
    spectrum = np.abs(np.fft.rfft(w.samples * np.hanning(len(w))))
    freqs = np.fft.rfftfreq(len(w), d=1.0 / w.sample_rate_hz)
    k = int(np.argmax(spectrum))
    a, b, c = np.log(spectrum[k - 1:k + 2] + 1e-30)
    delta = 0.5 * (a - c) / (a - 2 * b + c)
    return float(freqs[k] + delta * (freqs[1] - freqs[0]))


def test_load_pcm16_mono(tmp_path):
    path = tmp_path / "tone.wav"
    t = np.arange(160000) / 16000
    sf.write(str(path), 0.3 * np.sin(2 * np.pi * 440 * t), 16000, subtype='PCM_16')
    w, meta = load_wav(path)
    assert len(w) == 160000
    assert w.sample_rate_hz == 16000
    assert meta.encoding is Encoding.PCM16
    assert meta.channels == 1
    assert meta.duration_s == pytest.approx(10.0)


def test_load_float32_stereo_downmix(tmp_path):
    path = tmp_path / "stereo.wav"
    rng = np.random.default_rng(3)
    data = rng.uniform(-0.9, 0.9, size=(8000, 2)).astype(np.float32)
    sf.write(str(path), data, 16000, subtype='FLOAT')
    w, meta = load_wav(path)
    assert meta.channels == 2
    assert meta.encoding is Encoding.FLOAT32
    np.testing.assert_allclose(w.samples, data.astype(np.float64).mean(axis=1), atol=1e-7)
    assert np.max(np.abs(w.samples)) <= 1.0


def test_truncated_data_chunk_is_malformed(tmp_path):
    path = tmp_path / "cut.wav"
    sf.write(str(path), np.zeros(1000), 16000, subtype='PCM_16')
    raw = path.read_bytes()
    path.write_bytes(raw[:-500])
    with pytest.raises(MalformedFile):
        load_wav(path)


def test_not_riff_is_malformed(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"this is not audio at all")
    with pytest.raises(MalformedFile):
        load_wav(path)


def test_unsupported_encoding(tmp_path):
    path = tmp_path / "u8.wav"
    sf.write(str(path), np.zeros(100), 8000, subtype='PCM_U8')
    with pytest.raises(UnsupportedEncoding):
        load_wav(path)


def test_empty_data_chunk(tmp_path):
    path = tmp_path / "empty.wav"
    fmt = struct.pack('<HHIIHH', 1, 1, 16000, 32000, 2, 16)
    body = b'WAVE' + b'fmt ' + struct.pack('<I', len(fmt)) + fmt + b'data' + struct.pack('<I', 0)
    path.write_bytes(b'RIFF' + struct.pack('<I', len(body)) + body)
    with pytest.raises(EmptyAudio):
        load_wav(path)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        load_wav(tmp_path / "nope.wav")


@pytest.mark.parametrize("encoding", list(Encoding))
def test_roundtrip_within_quantization_step(tmp_path, speech, encoding):
    path = tmp_path / f"rt_{encoding.value}.wav"
    save_wav(speech, path, encoding)
    back, meta = load_wav(path)
    assert meta.encoding is encoding
    bound = 1e-7 if encoding is Encoding.FLOAT32 else encoding.quantization_step
    assert np.max(np.abs(back.samples - speech.samples)) <= bound


def test_save_to_missing_directory_raises(tmp_path, speech):
    with pytest.raises(IoError):
        save_wav(speech, tmp_path / "no" / "such" / "dir.wav")


def test_save_warns_on_clipping(tmp_path):
    w = Waveform(np.array([0.0, 1.5, -0.2, 0.1]), 16000)
    with pytest.warns(ClippingDetected):
        save_wav(w, tmp_path / "clip.wav", Encoding.PCM16)


def test_waveform_is_read_only():
    w = Waveform([0.1, 0.2, 0.3], 8000)
    with pytest.raises(ValueError):
        w.samples[0] = 1.0
    assert w.duration_s == pytest.approx(3 / 8000)


def test_resample_same_rate_is_identity(speech):
    assert resample(speech, speech.sample_rate_hz).samples is speech.samples


def test_resample_preserves_tone_frequency():
    t = np.arange(48000) / 48000
    w = Waveform(0.5 * np.sin(2 * np.pi * 440 * t), 48000)
    out = resample(w, 16000)
    assert len(out) == 16000
    assert _峰值频率(out) == pytest.approx(440.0, abs=1.0)


def test_resample_roundtrip_band_limited():
    rng = np.random.default_rng(7)
    t = np.arange(16000) / 16000
    x = sum(rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * f * t + rng.uniform(0, 6.28))
            for f in (200.0, 730.0, 1900.0, 3100.0))
    x = x * np.hanning(len(x))
    w = Waveform(x, 16000)
    back = resample(resample(w, 48000), 16000)
    interior = slice(800, -800)
    err = np.linalg.norm(back.samples[interior] - x[interior]) / np.linalg.norm(x[interior])
    assert err <= 1e-3


def test_gain_normalize_hits_target():
    t = np.arange(16000) / 16000
    x = np.sin(2 * np.pi * 300 * t)
    x *= 10 ** (-15 / 20) / np.sqrt(np.mean(x ** 2))
    out = gain_normalize(Waveform(x, 16000))
    assert rms_dbfs(out.samples) == pytest.approx(-25.0, abs=0.01)


def test_gain_normalize_scale_invariant_and_idempotent(speech):
    once = gain_normalize(speech)
    np.testing.assert_allclose(gain_normalize(speech.with_samples(2 * speech.samples)).samples, once.samples, atol=1e-9)
    np.testing.assert_allclose(gain_normalize(once).samples, once.samples, atol=1e-9)


def test_gain_normalize_silence():
    with pytest.raises(SilentInput):
        gain_normalize(Waveform(np.zeros(1000), 16000))


def test_gain_normalize_no_warning_for_speech_level(speech):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gain_normalize(speech)
