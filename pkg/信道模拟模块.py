'''
信道模拟模块

确定性的传输信道：按 SNR 混入噪声 → 电话带通 → μ-law 编解码 → 20 ms 帧丢包。
所有随机性来自 PCG64 流，种子由 (seed, 文件序号, 阶段) 派生，TransmissionRecord 可逐位复现输出。
随机源为 numpy PCG64，承担 xoshiro 类小状态可移植生成器的角色；给定 SeedSequence 时各平台输出逐位一致。
'''

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import signal

import 配置
from 日志设置 import 获取日志记录器
from 异常定义 import ConfigInvalid, LengthMismatch, SilentInput
from 音频读写模块 import Waveform, rms_dbfs

logger = 获取日志记录器(__name__)

_CHANNEL = getattr(配置, 'CHANNEL_CONFIG', {})

# PRNG 流的阶段编号
STAGE_MIX = 0
STAGE_LOSS = 1


class Codec(str, Enum):
    NONE = "none"
    MU_LAW = "mu_law"


class LossModel(str, Enum):
    NONE = "none"
    BERNOULLI = "bernoulli"
    GILBERT_ELLIOTT = "gilbert_elliott"


@dataclass(frozen=True)
class ChannelConfig:
    """信道参数。snr_db 为 None 时不混噪。"""
    snr_db: Optional[float] = _CHANNEL.get('snr_db')
    bandpass_enabled: bool = _CHANNEL.get('bandpass_enabled', True)
    low_hz: float = _CHANNEL.get('low_hz', 300.0)
    high_hz: float = _CHANNEL.get('high_hz', 3400.0)
    filter_order: int = _CHANNEL.get('filter_order', 4)
    codec: Codec = Codec(_CHANNEL.get('codec', 'mu_law'))
    mu: int = _CHANNEL.get('mu', 255)
    loss_model: LossModel = LossModel(_CHANNEL.get('loss_model', 'none'))
    frame_ms: float = _CHANNEL.get('frame_ms', 20.0)
    ramp_ms: float = _CHANNEL.get('ramp_ms', 2.0)
    p_loss: float = _CHANNEL.get('p_loss', 0.0)
    p_good_to_bad: float = _CHANNEL.get('p_good_to_bad', 0.0)
    p_bad_to_good: float = _CHANNEL.get('p_bad_to_good', 1.0)
    seed: int = _CHANNEL.get('seed', 0)
    condition: str = _CHANNEL.get('condition', 'low')

    def __post_init__(self):
        try:
            object.__setattr__(self, 'codec', Codec(self.codec))
            object.__setattr__(self, 'loss_model', LossModel(self.loss_model))
        except ValueError as e:
            raise ConfigInvalid(str(e)) from e
        for name in ('p_loss', 'p_good_to_bad', 'p_bad_to_good'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigInvalid(f"{name} 必须在 [0, 1] 内，收到 {value}")
        if not 0 < self.low_hz < self.high_hz:
            raise ConfigInvalid(f"带通边界无效: {self.low_hz}–{self.high_hz} Hz")
        if self.filter_order < 1:
            raise ConfigInvalid(f"滤波器阶数必须为正，收到 {self.filter_order}")
        if self.frame_ms <= 0 or self.ramp_ms < 0 or self.ramp_ms * 2 > self.frame_ms:
            raise ConfigInvalid(f"帧长 {self.frame_ms} ms / 斜坡 {self.ramp_ms} ms 组合无效")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigInvalid(f"种子必须是 64 位无符号整数，收到 {self.seed}")
        if self.snr_db is not None and not np.isfinite(self.snr_db):
            raise ConfigInvalid(f"snr_db 必须为有限值，收到 {self.snr_db}")

    @property
    def impairments_off(self) -> bool:
        return (self.snr_db is None and not self.bandpass_enabled
                and self.codec is Codec.NONE and self.loss_model is LossModel.NONE)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d['codec'] = self.codec.value
        d['loss_model'] = self.loss_model.value
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ChannelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"未知的信道配置项: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TransmissionRecord:
    config: ChannelConfig
    frames_dropped: int
    achieved_snr_db: Optional[float]
    seed_used: int
    file_index: int = 0
    condition: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config': self.config.to_dict(),
            'frames_dropped': self.frames_dropped,
            'achieved_snr_db': self.achieved_snr_db,
            'seed_used': self.seed_used,
            'file_index': self.file_index,
            'condition': self.condition,
            'toolkit_version': getattr(配置, 'TOOLKIT_VERSION', 'unknown'),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TransmissionRecord":
        return cls(
            config=ChannelConfig.from_dict(d['config']),
            frames_dropped=int(d['frames_dropped']),
            achieved_snr_db=d.get('achieved_snr_db'),
            seed_used=int(d['seed_used']),
            file_index=int(d.get('file_index', 0)),
            condition=d.get('condition', ''),
        )


def make_rng(seed: int, file_index: int, stage: int) -> np.random.Generator:
    """每个 (文件, 阶段) 一条独立的 PCG64 流。"""
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(file_index), int(stage)))
    return np.random.Generator(np.random.PCG64(seq))


def _均匀数(rng: np.random.Generator, n: int) -> np.ndarray:
    raw = rng.bit_generator.random_raw(n)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, seed: int,
               file_index: int = 0) -> Tuple[Waveform, float]:
    """
    随机裁剪或循环噪声到纯净长度，按全段功率缩放到目标 SNR 后相加。

    Returns:
        (带噪波形, 实测 SNR dB)

    Raises:
        SilentInput: 纯净信号或所选噪声段为静音。
    """
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise LengthMismatch(f"采样率不一致: {clean.sample_rate_hz} vs {noise.sample_rate_hz}")
    floor = getattr(配置, 'AUDIO_CONFIG', {}).get('silence_floor_dbfs', -100.0)
    if len(noise) == 0 or rms_dbfs(noise.samples) < floor:
        raise SilentInput("噪声信号为静音")
    if rms_dbfs(clean.samples) < floor:
        raise SilentInput("纯净信号为静音")

    n, span = len(clean), len(noise)
    choices = span - n + 1 if span >= n else span
    raw = int(make_rng(seed, file_index, STAGE_MIX).bit_generator.random_raw())
    offset = raw % choices
    segment = np.take(noise.samples, (offset + np.arange(n)) % span)

    p_clean = float(np.mean(np.square(clean.samples)))
    p_noise = float(np.mean(np.square(segment)))
    if p_noise <= 0.0:
        raise SilentInput(f"偏移 {offset} 处的噪声段为静音")
    scaled = segment * np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    achieved = 10.0 * np.log10(p_clean / float(np.mean(np.square(scaled))))
    return clean.with_samples(clean.samples + scaled), float(achieved)


def mu_law_encode(x: np.ndarray, mu: int = 255) -> np.ndarray:
    """8 位 μ-law 码字，范围 [-127, 127]。"""
    x = np.clip(x, -1.0, 1.0)
    y = np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)
    return np.round(y * 127.0).astype(np.int16)


def mu_law_decode(q: np.ndarray, mu: int = 255) -> np.ndarray:
    y = np.asarray(q, dtype=np.float64) / 127.0
    return np.sign(y) * np.expm1(np.abs(y) * np.log1p(mu)) / mu


def telephone_channel(w: Waveform, cfg: ChannelConfig) -> Waveform:
    """零相位 Butterworth 带通，随后可选 μ-law 编解码。"""
    out = w.samples
    if cfg.bandpass_enabled:
        nyquist = w.sample_rate_hz / 2.0
        if cfg.high_hz >= nyquist:
            raise ConfigInvalid(f"带通上限 {cfg.high_hz} Hz 不低于奈奎斯特频率 {nyquist} Hz")
        sos = signal.butter(cfg.filter_order, [cfg.low_hz, cfg.high_hz], btype='bandpass',
                            fs=w.sample_rate_hz, output='sos')
        out = signal.sosfiltfilt(sos, out)
    if cfg.codec is Codec.MU_LAW:
        out = mu_law_decode(mu_law_encode(out, cfg.mu), cfg.mu)
    return w.with_samples(out)


def loss_pattern(n_frames: int, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """
    逐帧丢失标记 (True 表示丢失)。

    bernoulli: 每帧独立，u < p_loss 即丢失。
    gilbert_elliott: 从好状态出发，只在坏状态丢帧，每帧结束后按转移概率换状态。
    """
    if cfg.loss_model is LossModel.NONE or n_frames <= 0:
        return np.zeros(max(n_frames, 0), dtype=bool)
    u = _均匀数(rng, n_frames)
    if cfg.loss_model is LossModel.BERNOULLI:
        return u < cfg.p_loss

    lost = np.zeros(n_frames, dtype=bool)
    bad = False
    for i in range(n_frames):
        lost[i] = bad
        if bad:
            bad = not (u[i] < cfg.p_bad_to_good)
        else:
            bad = u[i] < cfg.p_good_to_bad
    return lost


def _丢包增益(lost: np.ndarray, frame_len: int, ramp_len: int, n: int) -> np.ndarray:
    gain = np.repeat((~lost).astype(np.float64), frame_len)[:n]
    if ramp_len == 0:
        return gain
    fade_in = 0.5 * (1.0 - np.cos(np.pi * np.arange(1, ramp_len + 1) / (ramp_len + 1)))
    fade_out = fade_in[::-1]
    for i in range(len(lost) - 1):
        boundary = (i + 1) * frame_len
        if boundary >= n:
            break
        if not lost[i] and lost[i + 1]:
            start = max(boundary - ramp_len, i * frame_len)
            gain[start:boundary] *= fade_out[ramp_len - (boundary - start):]
        elif lost[i] and not lost[i + 1]:
            stop = min(boundary + ramp_len, n)
            gain[boundary:stop] *= fade_in[:stop - boundary]
    return gain


def packet_loss(w: Waveform, cfg: ChannelConfig, file_index: int = 0) -> Tuple[Waveform, int]:
    """
    丢失的帧置零，与丢失帧相邻的保留帧在边界处做 2 ms 升余弦淡入淡出。

    Returns:
        (波形, 丢失帧数)
    """
    fs = w.sample_rate_hz
    frame_len = max(1, int(round(cfg.frame_ms * fs / 1000.0)))
    ramp_len = int(round(cfg.ramp_ms * fs / 1000.0))
    n = len(w)
    n_frames = -(-n // frame_len)
    lost = loss_pattern(n_frames, cfg, make_rng(cfg.seed, file_index, STAGE_LOSS))
    dropped = int(lost.sum())
    if dropped == 0:
        return w, 0
    gain = _丢包增益(lost, frame_len, ramp_len, n)
    return w.with_samples(w.samples * gain), dropped


def simulate_transmission(clean: Waveform, noise: Optional[Waveform], cfg: ChannelConfig,
                          file_index: int = 0) -> Tuple[Waveform, TransmissionRecord]:
    """
    完整流程：混噪 → 带通 → 编解码 → 丢包，输出长度等于纯净信号长度。

    Args:
        clean (Waveform): 纯净语音。
        noise (Waveform): 噪声，cfg.snr_db 为 None 时可为空。
        cfg (ChannelConfig): 信道参数。
        file_index (int): 文件序号，参与派生 PRNG 流。

    Returns:
        (退化波形, TransmissionRecord)
    """
    out = clean
    achieved = None
    if cfg.snr_db is not None:
        if noise is None:
            raise ConfigInvalid("配置了 snr_db 但没有提供噪声")
        out, achieved = mix_at_snr(clean, noise, cfg.snr_db, cfg.seed, file_index)
    if cfg.bandpass_enabled or cfg.codec is not Codec.NONE:
        out = telephone_channel(out, cfg)
    out, dropped = packet_loss(out, cfg, file_index)

    record = TransmissionRecord(
        config=cfg,
        frames_dropped=dropped,
        achieved_snr_db=achieved,
        seed_used=int(cfg.seed),
        file_index=int(file_index),
        condition=cfg.condition,
    )
    logger.debug(f"文件 #{file_index} 传输模拟完成: SNR={achieved}, 丢帧 {dropped}, 条件 {cfg.condition}")
    return out, record


def replay_transmission(clean: Waveform, noise: Optional[Waveform], record: TransmissionRecord) -> Waveform:
    """按记录重放一次传输，结果与原输出逐位一致。"""
    out, _ = simulate_transmission(clean, noise, record.config, record.file_index)
    return out
