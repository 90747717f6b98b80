'''
音频读写模块

负责 WAV 文件的读取、保存、重采样和增益归一化，保证下游模块拿到统一的单声道浮点波形。
RIFF 块结构先由本模块校验 (libsndfile 对截断的 data 块过于宽容)，编解码交给 soundfile。
'''

import struct
import warnings
from dataclasses import dataclass
from enum import Enum
from math import gcd
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import soundfile as sf
from scipy import signal

import 配置
from 日志设置 import 获取日志记录器
from 异常定义 import (
    ClippingDetected,
    EmptyAudio,
    IoError,
    MalformedFile,
    SilentInput,
    UnsupportedEncoding,
)

logger = 获取日志记录器(__name__)

PathLike = Union[str, Path]

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class Encoding(str, Enum):
    """支持的 WAV 采样编码。"""
    PCM16 = "pcm16"
    PCM24 = "pcm24"
    PCM32 = "pcm32"
    FLOAT32 = "float32"

    @property
    def subtype(self) -> str:
        return _SUBTYPES[self]

    @property
    def quantization_step(self) -> float:
        """该编码下一个量化台阶对应的幅度。"""
        return _QUANT_STEPS[self]


_SUBTYPES = {
    Encoding.PCM16: 'PCM_16',
    Encoding.PCM24: 'PCM_24',
    Encoding.PCM32: 'PCM_32',
    Encoding.FLOAT32: 'FLOAT',
}
_PCM_BITS = {Encoding.PCM16: 16, Encoding.PCM24: 24, Encoding.PCM32: 32}
_QUANT_STEPS = {
    Encoding.PCM16: 2.0 ** -15,
    Encoding.PCM24: 2.0 ** -23,
    Encoding.PCM32: 2.0 ** -31,
    Encoding.FLOAT32: 2.0 ** -24,
}


@dataclass(frozen=True, eq=False)
class Waveform:
    """
    单声道波形：float64 采样序列加采样率。构造后数组只读，可在线程间共享。
    """
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"采样率必须为正整数，收到 {self.sample_rate_hz}")
        arr = np.array(self.samples, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise ValueError(f"波形必须是一维序列，收到形状 {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, 'samples', arr)
        object.__setattr__(self, 'sample_rate_hz', int(self.sample_rate_hz))

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        """返回相同采样率的新波形。"""
        return Waveform(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class AudioMetadata:
    channels: int
    encoding: Encoding
    duration_s: float
    sample_rate_hz: int


def rms_dbfs(samples: np.ndarray) -> float:
    """波形的 RMS 电平 (dBFS)，全零返回 -inf。"""
    rms = float(np.sqrt(np.mean(np.square(samples)))) if len(samples) else 0.0
    return 20.0 * np.log10(rms) if rms > 0 else float('-inf')


def _检查RIFF结构(path: Path) -> Tuple[Encoding, int]:
    """
    逐块扫描 RIFF/WAVE 结构，返回 (编码, 声道数)。

    Raises:
        MalformedFile: 头部缺失、块越界或缺少 fmt/data 块。
        UnsupportedEncoding: 格式标签或位深不在支持范围内。
    """
    data = path.read_bytes()
    if len(data) < 12 or data[0:4] != b'RIFF' or data[8:12] != b'WAVE':
        raise MalformedFile(f"{path} 不是 RIFF/WAVE 文件")

    fmt_chunk = None
    data_found = False
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (chunk_size,) = struct.unpack('<I', data[pos + 4:pos + 8])
        body_start = pos + 8
        body_end = body_start + chunk_size
        if body_end > len(data):
            raise MalformedFile(f"{path} 中 {chunk_id!r} 块被截断 (声明 {chunk_size} 字节，剩余 {len(data) - body_start} 字节)")
        if chunk_id == b'fmt ':
            fmt_chunk = data[body_start:body_end]
        elif chunk_id == b'data':
            data_found = True
        pos = body_end + (chunk_size & 1)

    if fmt_chunk is None or len(fmt_chunk) < 16:
        raise MalformedFile(f"{path} 缺少有效的 fmt 块")
    if not data_found:
        raise MalformedFile(f"{path} 缺少 data 块")

    format_tag, channels, _rate, _byte_rate, _align, bits = struct.unpack('<HHIIHH', fmt_chunk[:16])
    if format_tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt_chunk) < 26:
            raise MalformedFile(f"{path} 的 WAVE_FORMAT_EXTENSIBLE 头不完整")
        (format_tag,) = struct.unpack('<H', fmt_chunk[24:26])

    if channels < 1:
        raise MalformedFile(f"{path} 声道数为 0")
    if format_tag == _WAVE_FORMAT_PCM and bits in (16, 24, 32):
        encoding = {16: Encoding.PCM16, 24: Encoding.PCM24, 32: Encoding.PCM32}[bits]
    elif format_tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        encoding = Encoding.FLOAT32
    else:
        raise UnsupportedEncoding(f"{path}: 不支持的格式标签 0x{format_tag:04x} / {bits} 位")
    return encoding, channels


def load_wav(path: PathLike) -> Tuple[Waveform, AudioMetadata]:
    """
    读取 WAV 文件，多声道取平均降为单声道，采样缩放到 [-1, 1]。

    Args:
        path: WAV 文件路径。

    Returns:
        (Waveform, AudioMetadata)

    Raises:
        IoError: 文件不存在或无法读取。
        MalformedFile / UnsupportedEncoding / EmptyAudio
    """
    path = Path(path)
    try:
        encoding, channels = _检查RIFF结构(path)
    except OSError as e:
        raise IoError(f"无法读取 {path}: {e}") from e

    # PCM 统一读成左对齐 int32 再除以 2^31，读写缩放保持对称
    read_dtype = 'float64' if encoding is Encoding.FLOAT32 else 'int32'
    try:
        data, sample_rate = sf.read(str(path), dtype=read_dtype, always_2d=True)
    except (sf.LibsndfileError, RuntimeError) as e:
        raise MalformedFile(f"解码 {path} 失败: {e}") from e

    if data.shape[0] == 0:
        raise EmptyAudio(f"{path} 不含任何采样")

    if encoding is Encoding.FLOAT32:
        samples = data.astype(np.float64)
    else:
        samples = data.astype(np.float64) / 2.0 ** 31
    mono = samples.mean(axis=1) if samples.shape[1] > 1 else samples[:, 0]

    peak = float(np.max(np.abs(mono)))
    if peak > 1.0:
        logger.warning(f"{path} 浮点采样超出 [-1, 1] (峰值 {peak:.4f})，已截断。")
        mono = np.clip(mono, -1.0, 1.0)

    w = Waveform(mono, sample_rate)
    meta = AudioMetadata(
        channels=int(samples.shape[1]),
        encoding=encoding,
        duration_s=w.duration_s,
        sample_rate_hz=w.sample_rate_hz,
    )
    logger.debug(f"已读取 {path}: {len(w)} 采样, {w.sample_rate_hz} Hz, {meta.channels} 声道, {encoding.value}")
    return w, meta


def _量化(samples: np.ndarray, encoding: Encoding) -> np.ndarray:
    """把 [-1, 1] 浮点采样量化为 soundfile 直写的整型数组 (左对齐 int32 或 int16)。"""
    bits = _PCM_BITS[encoding]
    full_scale = 2.0 ** (bits - 1)
    q = np.clip(np.round(samples * full_scale), -full_scale, full_scale - 1)
    if encoding is Encoding.PCM16:
        return q.astype(np.int16)
    return (q.astype(np.int64) << (32 - bits)).astype(np.int32)


def save_wav(w: Waveform, path: PathLike, encoding: Union[Encoding, str] = Encoding.FLOAT32) -> None:
    """
    保存单声道 WAV。

    Args:
        w (Waveform): 待保存波形。
        path: 目标路径，父目录必须存在且可写。
        encoding: 编码，默认 float32。

    Raises:
        IoError: 路径不可写。
    """
    encoding = Encoding(encoding)
    path = Path(path)
    samples = w.samples

    peak = float(np.max(np.abs(samples))) if len(samples) else 0.0
    if peak > 1.0:
        message = f"保存 {path} 时检测到削波 (峰值 {peak:.4f})"
        logger.warning(message)
        warnings.warn(ClippingDetected(message), stacklevel=2)

    if encoding is Encoding.FLOAT32:
        payload = samples.astype(np.float32)
    else:
        payload = _量化(samples, encoding)

    if not path.parent.is_dir():
        raise IoError(f"目标目录不存在: {path.parent}")
    try:
        sf.write(str(path), payload, w.sample_rate_hz, subtype=encoding.subtype, format='WAV')
    except (sf.LibsndfileError, RuntimeError, OSError) as e:
        raise IoError(f"写入 {path} 失败: {e}") from e
    logger.debug(f"已保存 {path} ({encoding.value}, {len(w)} 采样)")


def resample(w: Waveform, target_hz: int) -> Waveform:
    """
    多相加窗 sinc 重采样，输出长度为 round(len * target / source)。

    Args:
        w (Waveform): 输入波形。
        target_hz (int): 目标采样率。

    Returns:
        Waveform: 重采样后的波形；采样率相同时原样返回。
    """
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise ValueError(f"目标采样率必须为正，收到 {target_hz}")
    source_hz = w.sample_rate_hz
    if target_hz == source_hz:
        return w

    divisor = gcd(target_hz, source_hz)
    up, down = target_hz // divisor, source_hz // divisor
    window = getattr(配置, 'AUDIO_CONFIG', {}).get('resample_window', ('kaiser', 10.0))
    out = signal.resample_poly(w.samples, up, down, window=window)

    expected = int(round(len(w) * target_hz / source_hz))
    if len(out) > expected:
        out = out[:expected]
    elif len(out) < expected:
        out = np.pad(out, (0, expected - len(out)))
    return Waveform(out, target_hz)


def gain_normalize(w: Waveform, target_dbfs_rms: float = None) -> Waveform:
    """
    纯标量增益，把 RMS 调整到目标 dBFS。

    Raises:
        SilentInput: 输入 RMS 低于静音门限 (默认 -100 dBFS)。
    """
    audio_cfg = getattr(配置, 'AUDIO_CONFIG', {})
    if target_dbfs_rms is None:
        target_dbfs_rms = audio_cfg.get('target_dbfs_rms', -25.0)
    floor = audio_cfg.get('silence_floor_dbfs', -100.0)

    level = rms_dbfs(w.samples)
    if not np.isfinite(level) or level < floor:
        raise SilentInput(f"输入 RMS {level:.1f} dBFS 低于静音门限 {floor} dBFS")

    gain = 10.0 ** ((target_dbfs_rms - level) / 20.0)
    out = w.samples * gain
    peak = float(np.max(np.abs(out)))
    if peak > 1.0:
        logger.warning(f"增益归一化后峰值 {peak:.3f} 超过满幅，保存为 PCM 时将削波。")
    return w.with_samples(out)
