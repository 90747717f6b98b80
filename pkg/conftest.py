'''
测试公共夹具：类语音合成信号 (谐波复合音 × 音节包络)、白噪声以及临时 WAV 目录。
'''

import numpy as np
import pytest

from 音频读写模块 import Waveform, save_wav

SAMPLE_RATE = 16000


def 合成类语音(seconds: float = 2.0, f0: float = 140.0, seed: int = 0, sample_rate: int = SAMPLE_RATE,
             syllable_hz: float = 4.0, level: float = 0.1) -> Waveform:
    """带轻微基频抖动和共振峰塑形的谐波复合音，乘以 4 Hz 左右的音节包络。"""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    vibrato = 1.0 + 0.02 * np.sin(2 * np.pi * 5.0 * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / sample_rate
    x = np.zeros(n)
    for k in range(1, int(3800 // f0) + 1):
        freq = k * f0
        # 500/1500/2500 Hz 附近的共振峰
        gain = sum(np.exp(-0.5 * ((freq - fc) / 180.0) ** 2) for fc in (500.0, 1500.0, 2500.0)) + 0.05
        x += gain / k ** 0.5 * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    envelope = np.clip(np.sin(np.pi * syllable_hz * t + rng.uniform(0, np.pi)), 0.0, None) ** 1.5
    x = x * (0.02 + envelope)
    x += 1e-4 * rng.standard_normal(n)
    return Waveform(level * x / np.max(np.abs(x)), sample_rate)


def 白噪声(seconds: float = 2.0, seed: int = 1, sample_rate: int = SAMPLE_RATE, level: float = 0.05) -> Waveform:
    rng = np.random.default_rng(seed)
    return Waveform(level * rng.standard_normal(int(round(seconds * sample_rate))), sample_rate)


@pytest.fixture
def speech():
    return 合成类语音()


@pytest.fixture
def speech_factory():
    return 合成类语音


@pytest.fixture
def noise():
    return 白噪声()


@pytest.fixture
def noise_factory():
    return 白噪声


@pytest.fixture
def wav_dir(tmp_path):
    """返回一个写 WAV 的小工具: write(子目录, stem, 波形) -> 路径。"""
    def write(subdir: str, stem: str, w: Waveform):
        target = tmp_path / subdir
        target.mkdir(parents=True, exist_ok=True)
        path = target / f"{stem}.wav"
        save_wav(w, path)
        return path
    write.root = tmp_path
    return write
