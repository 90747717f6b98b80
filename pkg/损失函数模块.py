'''
损失函数模块

训练准则的全部数学部分：L1、多分辨率 STFT 损失、cIRM 构造与压缩、TAP 平均绝对误差，
以及 Demucs (L1 + λ1·TAP + λ2·STFT) 和 FullSubNet (cIRM + γ·TAP) 两种组合损失。
所有函数都是纯函数，不涉及梯度。
'''

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

import 配置
from 日志设置 import 获取日志记录器
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
from 信号处理核心 import ComplexSpectrogram, StftConfig, stft
from 声学参数模块 import TapMatrix, extract_tap
from 音频读写模块 import Waveform

logger = 获取日志记录器(__name__)

_LOSS = getattr(配置, 'LOSS_CONFIG', {})
CIRM_K = _LOSS.get('cirm_k', 10.0)
CIRM_C = _LOSS.get('cirm_c', 0.1)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = _LOSS.get('default_lambda1', 0.75)
    lambda2: float = _LOSS.get('default_lambda2', 0.5)
    gamma: float = _LOSS.get('default_gamma', 0.03)

    def __post_init__(self):
        for name in ('lambda1', 'lambda2', 'gamma'):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise ConfigInvalid(f"损失权重 {name} 必须是有限非负实数，收到 {value!r}")

    def to_dict(self) -> Dict[str, float]:
        return {'lambda1': float(self.lambda1), 'lambda2': float(self.lambda2), 'gamma': float(self.gamma)}


@dataclass(frozen=True)
class LossBreakdown:
    """各分量与加权总损失。formula 为 'demucs' 或 'fullsubnet'。"""
    l1: float
    stft: float
    tap: float
    cirm: float
    total: float
    formula: str = "demucs"
    weights: LossWeights = field(default_factory=LossWeights)

    def to_dict(self) -> dict:
        return {
            'formula': self.formula,
            'weights': self.weights.to_dict(),
            'l1': self.l1,
            'stft': self.stft,
            'tap': self.tap,
            'cirm': self.cirm,
            'total': self.total,
        }


@dataclass(frozen=True, eq=False)
class CirmMask:
    values: np.ndarray
    compressed: bool = False
    k: float = CIRM_K
    c: float = CIRM_C

    def __post_init__(self):
        object.__setattr__(self, 'values', np.asarray(self.values, dtype=np.complex128))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape


def _检查波形对(y: Waveform, y_hat: Waveform) -> None:
    if len(y) != len(y_hat):
        raise LengthMismatch(f"长度不一致: {len(y)} vs {len(y_hat)}")
    if y.sample_rate_hz != y_hat.sample_rate_hz:
        raise LengthMismatch(f"采样率不一致: {y.sample_rate_hz} vs {y_hat.sample_rate_hz}")


def l1_loss(y: Waveform, y_hat: Waveform) -> float:
    """(1/T)·Σ|y − ŷ|"""
    _检查波形对(y, y_hat)
    return float(np.mean(np.abs(y.samples - y_hat.samples)))


def _mrstft分辨率() -> List[StftConfig]:
    window = _LOSS.get('mrstft_window', 'hann')
    return [StftConfig(fft_size=f, hop=h, win_length=wl, window=window, center_padding=True)
            for f, h, wl in _LOSS.get('mrstft_resolutions', [(512, 50, 240), (1024, 120, 600), (2048, 240, 1200)])]


def stft_magnitude(w: Waveform, cfg: StftConfig, floor: float = None) -> np.ndarray:
    """幅度谱 sqrt(max(|X|², floor))。"""
    floor = _LOSS.get('mrstft_magnitude_floor', 1e-7) if floor is None else floor
    bins = stft(w, cfg).bins
    return np.sqrt(np.maximum(bins.real ** 2 + bins.imag ** 2, floor))


def spectral_convergence(mag: np.ndarray, mag_hat: np.ndarray) -> float:
    """‖|Y| − |Ŷ|‖_F / ‖|Y|‖_F"""
    numerator = float(np.linalg.norm(mag - mag_hat))
    if numerator == 0.0:
        return 0.0
    return numerator / max(float(np.linalg.norm(mag)), np.finfo(np.float64).tiny)


def log_magnitude_loss(mag: np.ndarray, mag_hat: np.ndarray) -> float:
    """mean |log|Y| − log|Ŷ||"""
    return float(np.mean(np.abs(np.log(mag) - np.log(mag_hat))))


def mrstft_loss(y: Waveform, y_hat: Waveform, resolutions: Optional[Sequence[StftConfig]] = None) -> float:
    """
    多分辨率 STFT 损失：各分辨率上谱收敛项与对数幅度 L1 项之和。

    Args:
        y (Waveform): 参考信号。
        y_hat (Waveform): 估计信号。
        resolutions: STFT 配置列表，默认 fft {512, 1024, 2048} / hop {50, 120, 240} / win {240, 600, 1200}。

    Raises:
        LengthMismatch, InputTooShort
    """
    _检查波形对(y, y_hat)
    resolutions = list(resolutions) if resolutions is not None else _mrstft分辨率()
    longest = max(cfg.win_length for cfg in resolutions)
    if len(y) < longest:
        raise InputTooShort(f"多分辨率 STFT 损失需要至少 {longest} 个采样，收到 {len(y)}")
    total = 0.0
    for cfg in resolutions:
        mag = stft_magnitude(y, cfg)
        mag_hat = stft_magnitude(y_hat, cfg)
        total += spectral_convergence(mag, mag_hat) + log_magnitude_loss(mag, mag_hat)
    return total


def tap_loss(a: TapMatrix, a_hat: TapMatrix) -> float:
    """(1/(T·P))·ΣΣ|A − Â|，无效项两侧均为 0。"""
    if a.values.shape != a_hat.values.shape:
        raise DimensionMismatch(f"TapMatrix 形状不一致: {a.values.shape} vs {a_hat.values.shape}")
    return float(np.mean(np.abs(a.values - a_hat.values)))


def tap_loss_masked(a: TapMatrix, a_hat: TapMatrix) -> float:
    """只在两侧都有效的单元上求平均绝对误差。"""
    if a.values.shape != a_hat.values.shape:
        raise DimensionMismatch(f"TapMatrix 形状不一致: {a.values.shape} vs {a_hat.values.shape}")
    both = a.valid & a_hat.valid
    if not both.any():
        raise NoValidFrames("两个 TapMatrix 没有共同的有效单元")
    return float(np.mean(np.abs(a.values[both] - a_hat.values[both])))


def demucs_loss(y: Waveform, y_hat: Waveform, w: Optional[LossWeights] = None,
                tap_extractor: Callable[[Waveform], TapMatrix] = extract_tap) -> LossBreakdown:
    """
    total = L1 + λ1·L_TAP + λ2·L_STFT，各分量单独报告。
    """
    w = w or LossWeights()
    l1 = l1_loss(y, y_hat)
    tap = tap_loss(tap_extractor(y), tap_extractor(y_hat))
    spec = mrstft_loss(y, y_hat)
    total = l1 + w.lambda1 * tap + w.lambda2 * spec
    return LossBreakdown(l1=l1, stft=spec, tap=tap, cirm=0.0, total=total, formula="demucs", weights=w)


def _检查同形(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"维度不一致: {a.shape} vs {b.shape}")


def cirm_from_specs(noisy: ComplexSpectrogram, clean: ComplexSpectrogram, floor: float = None) -> CirmMask:
    """
    复数理想比值掩码 M = S / Y，|Y|² 低于能量下限的频点置 0。

    Args:
        noisy (ComplexSpectrogram): 带噪谱 Y。
        clean (ComplexSpectrogram): 纯净谱 S。
        floor (float): 能量下限，默认 1e-10。

    Returns:
        CirmMask: 未压缩掩码。
    """
    floor = _LOSS.get('cirm_energy_floor', 1e-10) if floor is None else floor
    y, s = noisy.bins, clean.bins
    _检查同形(y, s)
    power = y.real ** 2 + y.imag ** 2
    ok = power >= floor
    safe = np.where(ok, power, 1.0)
    real = np.where(ok, (y.real * s.real + y.imag * s.imag) / safe, 0.0)
    imag = np.where(ok, (y.real * s.imag - y.imag * s.real) / safe, 0.0)
    return CirmMask(real + 1j * imag, compressed=False)


def apply_cirm(noisy: ComplexSpectrogram, m: CirmMask) -> ComplexSpectrogram:
    """逐点复数乘法。"""
    if m.compressed:
        raise CompressedMask("apply_cirm 需要未压缩的掩码，请先调用 decompress_cirm")
    _检查同形(noisy.bins, m.values)
    return noisy.with_bins(noisy.bins * m.values)


def _压缩分量(x: np.ndarray, k: float, c: float) -> np.ndarray:
    # K(1 - e^{-Cx}) / (1 + e^{-Cx}) = K·tanh(Cx/2)；饱和时收回到开区间内
    bound = np.nextafter(k, 0.0)
    return np.clip(k * np.tanh(c * x / 2.0), -bound, bound)


def compress_cirm(m: CirmMask) -> CirmMask:
    if m.compressed:
        raise AlreadyCompressed("掩码已经压缩")
    values = _压缩分量(m.values.real, m.k, m.c) + 1j * _压缩分量(m.values.imag, m.k, m.c)
    return CirmMask(values, compressed=True, k=m.k, c=m.c)


def decompress_cirm(m: CirmMask) -> CirmMask:
    """x ↦ −(1/C)·ln((K − x)/(K + x))"""
    if not m.compressed:
        raise UncompressedInput("掩码未压缩")
    real, imag = m.values.real, m.values.imag
    if np.any(np.abs(real) >= m.k) or np.any(np.abs(imag) >= m.k):
        raise OutOfDomain(f"压缩掩码分量必须严格位于 (−{m.k}, {m.k}) 内")
    values = (2.0 / m.c) * np.arctanh(real / m.k) + 1j * (2.0 / m.c) * np.arctanh(imag / m.k)
    return CirmMask(values, compressed=False, k=m.k, c=m.c)


def cirm_loss(predicted: CirmMask, target: CirmMask) -> float:
    """压缩掩码实部、虚部合并后的均方误差。"""
    if not (predicted.compressed and target.compressed):
        raise UncompressedInput("cirm_loss 只接受压缩后的掩码")
    _检查同形(predicted.values, target.values)
    diff = predicted.values - target.values
    return float(np.mean(np.concatenate([diff.real.ravel(), diff.imag.ravel()]) ** 2))


def fullsubnet_loss(pred_mask: CirmMask, target_mask: CirmMask, a: TapMatrix, a_hat: TapMatrix,
                    w: Optional[LossWeights] = None) -> LossBreakdown:
    """total = L_cIRM + γ·L_TAP"""
    w = w or LossWeights()
    cirm = cirm_loss(pred_mask, target_mask)
    tap = tap_loss(a, a_hat)
    return LossBreakdown(l1=0.0, stft=0.0, tap=tap, cirm=cirm, total=cirm + w.gamma * tap,
                         formula="fullsubnet", weights=w)


def loss_ablation_sweep(base: LossBreakdown, grid: Optional[Iterable] = None) -> List[LossBreakdown]:
    """
    在权重网格上重算总损失。分量只算一次，总损失对权重是仿射的。

    Args:
        base (LossBreakdown): 任意权重下得到的分量。
        grid: demucs 为 (λ1, λ2) 序列，fullsubnet 为 γ 序列；缺省使用 配置 中的消融网格。

    Returns:
        list[LossBreakdown]: 与网格顺序一致。
    """
    results = []
    if base.formula == "demucs":
        grid = grid if grid is not None else getattr(配置, 'DEMUCS_ABLATION_GRID', [])
        for lambda1, lambda2 in grid:
            weights = LossWeights(lambda1=lambda1, lambda2=lambda2, gamma=base.weights.gamma)
            total = base.l1 + lambda1 * base.tap + lambda2 * base.stft
            results.append(LossBreakdown(base.l1, base.stft, base.tap, base.cirm, total, "demucs", weights))
    else:
        grid = grid if grid is not None else getattr(配置, 'FULLSUBNET_ABLATION_GRID', [])
        for gamma in grid:
            weights = LossWeights(lambda1=base.weights.lambda1, lambda2=base.weights.lambda2, gamma=gamma)
            total = base.cirm + gamma * base.tap
            results.append(LossBreakdown(base.l1, base.stft, base.tap, base.cirm, total, "fullsubnet", weights))
    logger.debug(f"{base.formula} 消融网格共 {len(results)} 组权重")
    return results
