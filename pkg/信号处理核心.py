'''
信号处理核心模块

各指标、损失和声学参数提取共用的数值原语：STFT/ISTFT、LPC (Levinson-Durbin)、
三分之一倍频程与临界频带滤波器组、频带包络。
'''

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import signal

import 配置
from 日志设置 import 获取日志记录器
from 异常定义 import ConfigInvalid, DegenerateFrame, InputTooShort, NonColaConfig
from 音频读写模块 import Waveform

logger = 获取日志记录器(__name__)

_STFT_DEFAULTS = getattr(配置, 'STFT_CONFIG', {})
_FB_DEFAULTS = getattr(配置, 'FILTERBANK_CONFIG', {})


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = _STFT_DEFAULTS.get('fft_size', 512)
    hop: int = _STFT_DEFAULTS.get('hop', 256)
    win_length: int = _STFT_DEFAULTS.get('win_length', 512)
    window: str = _STFT_DEFAULTS.get('window', 'hann')
    center_padding: bool = _STFT_DEFAULTS.get('center_padding', True)

    def __post_init__(self):
        if not (0 < self.hop <= self.win_length <= self.fft_size):
            raise ConfigInvalid(
                f"STFT 参数需满足 0 < hop ≤ win_length ≤ fft_size，收到 hop={self.hop}, "
                f"win_length={self.win_length}, fft_size={self.fft_size}")
        if self.window not in ('hann', 'hamming'):
            raise ConfigInvalid(f"不支持的窗函数: {self.window}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_array(self) -> np.ndarray:
        """周期窗 (DFT-even)，与 scipy.signal.get_window 默认一致。"""
        return signal.get_window(self.window, self.win_length, fftbins=True)

    def satisfies_overlap_add(self) -> bool:
        return bool(signal.check_NOLA(self.window_array(), self.win_length, self.win_length - self.hop))

    def to_dict(self) -> dict:
        return {
            'fft_size': self.fft_size,
            'hop': self.hop,
            'win_length': self.win_length,
            'window': self.window,
            'center_padding': self.center_padding,
        }


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    """F×T 复数时频网格。num_samples 记录原始信号长度，供 istft 截齐。"""
    bins: np.ndarray
    config: StftConfig
    sample_rate_hz: int
    num_samples: Optional[int] = None

    def __post_init__(self):
        grid = np.asarray(self.bins, dtype=np.complex128)
        if grid.ndim != 2 or grid.shape[0] != self.config.num_bins:
            raise ValueError(f"频谱形状 {grid.shape} 与 fft_size={self.config.fft_size} 不符 (需要 F={self.config.num_bins})")
        object.__setattr__(self, 'bins', grid)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bins.shape

    @property
    def num_frames(self) -> int:
        return self.bins.shape[1]

    def with_bins(self, bins: np.ndarray) -> "ComplexSpectrogram":
        return ComplexSpectrogram(bins, self.config, self.sample_rate_hz, self.num_samples)


def stft(w: Waveform, cfg: Optional[StftConfig] = None) -> ComplexSpectrogram:
    """
    短时傅里叶变换 (scipy.signal.stft, 'spectrum' 缩放)。

    Args:
        w (Waveform): 输入波形，长度不小于 win_length。
        cfg (StftConfig): STFT 参数，默认 fft 512 / hop 256 / win 512 / hann。

    Returns:
        ComplexSpectrogram: F = fft_size/2 + 1 的复数谱。

    Raises:
        InputTooShort: 输入短于窗长。
    """
    cfg = cfg or StftConfig()
    if len(w) < cfg.win_length:
        raise InputTooShort(f"输入长度 {len(w)} 小于窗长 {cfg.win_length}")
    _, _, bins = signal.stft(
        w.samples,
        fs=w.sample_rate_hz,
        window=cfg.window_array(),
        nperseg=cfg.win_length,
        noverlap=cfg.win_length - cfg.hop,
        nfft=cfg.fft_size,
        detrend=False,
        return_onesided=True,
        boundary='zeros' if cfg.center_padding else None,
        padded=cfg.center_padding,
        scaling='spectrum',
    )
    return ComplexSpectrogram(bins, cfg, w.sample_rate_hz, len(w))


def istft(s: ComplexSpectrogram) -> Waveform:
    """
    加权重叠相加逆变换。

    Raises:
        NonColaConfig: 窗函数与帧移不满足重叠相加可逆条件。
    """
    cfg = s.config
    if not cfg.satisfies_overlap_add():
        raise NonColaConfig(f"{cfg.window} 窗在 hop={cfg.hop}, win_length={cfg.win_length} 下无法重叠相加重建")
    _, x = signal.istft(
        s.bins,
        fs=s.sample_rate_hz,
        window=cfg.window_array(),
        nperseg=cfg.win_length,
        noverlap=cfg.win_length - cfg.hop,
        nfft=cfg.fft_size,
        input_onesided=True,
        boundary=cfg.center_padding,
        scaling='spectrum',
    )
    x = np.real(x)
    if s.num_samples is not None:
        if len(x) >= s.num_samples:
            x = x[:s.num_samples]
        else:
            x = np.pad(x, (0, s.num_samples - len(x)))
    return Waveform(x, s.sample_rate_hz)


def frame_signal(x: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    """按 [t*hop, t*hop+frame_length) 切帧，返回 (帧数, frame_length) 只读视图。"""
    if len(x) < frame_length:
        return np.empty((0, frame_length))
    return np.lib.stride_tricks.sliding_window_view(x, frame_length)[::hop]


def autocorrelation(frame: np.ndarray, max_lag: int) -> np.ndarray:
    """有偏自相关 r[0..max_lag]。"""
    frame = np.asarray(frame, dtype=np.float64)
    n = len(frame)
    full = np.correlate(frame, frame, mode='full')
    return full[n - 1:n + max_lag]


def levinson_durbin(r: np.ndarray, order: int) -> Tuple[np.ndarray, float]:
    """由自相关序列求 A(z) = 1 + a1 z^-1 + ... + ap z^-p 与前向预测误差功率。"""
    if r[0] <= 0.0:
        raise DegenerateFrame("零延迟自相关为 0，无法求解 LPC")
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = float(r[0])
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
        k = -acc / err
        a[1:i] = a[1:i] + k * a[i - 1:0:-1]
        a[i] = k
        err *= (1.0 - k * k)
        if err <= 0.0:
            # 完全可预测，高阶系数保持 0
            err = 0.0
            break
    return a, max(err, 0.0)


def lpc_coefficients(frame, order: int) -> Tuple[np.ndarray, float]:
    """
    自相关法 LPC。

    Args:
        frame: 实数帧，长度需大于 order。
        order (int): 预测阶数。

    Returns:
        (coefficients, prediction_error_power): 长度 order+1、首项为 1 的系数与误差功率 (≥ 0)。

    Raises:
        DegenerateFrame: 全零帧。
    """
    frame = np.asarray(frame, dtype=np.float64)
    if order < 1:
        raise ValueError(f"LPC 阶数必须为正，收到 {order}")
    if len(frame) <= order:
        raise ValueError(f"帧长 {len(frame)} 必须大于阶数 {order}")
    r = autocorrelation(frame, order)
    return levinson_durbin(r, order)


class FilterBankKind(str, Enum):
    THIRD_OCTAVE = "third_octave"
    CRITICAL_BAND = "critical_band"


@dataclass(frozen=True, eq=False)
class FilterBank:
    """
    频带权重矩阵 (bands × F)，以及每个频带的名义中心和上下边界 (Hz)。
    """
    kind: FilterBankKind
    weights: np.ndarray
    center_freqs_hz: np.ndarray
    low_edges_hz: np.ndarray
    high_edges_hz: np.ndarray
    sample_rate_hz: int
    fft_size: int
    metadata: dict = field(default_factory=dict)

    @property
    def num_bands(self) -> int:
        return int(self.weights.shape[0])


def third_octave_filterbank(sample_rate_hz: int, fft_size: int,
                            num_bands: int = None, min_freq_hz: float = None) -> FilterBank:
    """
    三分之一倍频程矩形分组：中心频率 150·2^(j/3) Hz，每个 FFT 频点最多归入一个频带。
    """
    num_bands = num_bands or _FB_DEFAULTS.get('third_octave_bands', 15)
    min_freq_hz = min_freq_hz or _FB_DEFAULTS.get('third_octave_min_hz', 150.0)

    freqs = np.linspace(0, sample_rate_hz, fft_size + 1)[:fft_size // 2 + 1]
    k = np.arange(num_bands, dtype=np.float64)
    centers = min_freq_hz * 2.0 ** (k / 3.0)
    lows = min_freq_hz * 2.0 ** ((2 * k - 1) / 6.0)
    highs = min_freq_hz * 2.0 ** ((2 * k + 1) / 6.0)

    weights = np.zeros((num_bands, len(freqs)))
    for band in range(num_bands):
        lo_bin = int(np.argmin(np.square(freqs - lows[band])))
        hi_bin = int(np.argmin(np.square(freqs - highs[band])))
        if hi_bin <= lo_bin:
            raise ConfigInvalid(f"fft_size={fft_size} 在 {sample_rate_hz} Hz 下过小，第 {band} 个三分之一倍频程频带为空")
        weights[band, lo_bin:hi_bin] = 1.0

    return FilterBank(FilterBankKind.THIRD_OCTAVE, weights, centers, lows, highs, int(sample_rate_hz), int(fft_size))


def hz_to_erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def critical_band_filterbank(sample_rate_hz: int, fft_size: int, num_bands: int = None,
                             low_hz: float = None, high_hz: float = None) -> FilterBank:
    """
    临界频带组：在 ERB-rate 刻度上等间隔划分 [low_hz, high_hz]，矩形分组。上限超过奈奎斯特频率时截到奈奎斯特。
    """
    num_bands = num_bands or _FB_DEFAULTS.get('critical_bands', 20)
    low_hz = low_hz or _FB_DEFAULTS.get('critical_low_hz', 150.0)
    high_hz = min(high_hz or _FB_DEFAULTS.get('critical_high_hz', 7000.0), sample_rate_hz / 2.0)
    if not 0 < low_hz < high_hz:
        raise ConfigInvalid(f"临界频带范围无效: [{low_hz}, {high_hz}] Hz")

    erb_edges = np.linspace(hz_to_erb_rate(low_hz), hz_to_erb_rate(high_hz), num_bands + 1)
    edges = erb_rate_to_hz(erb_edges)
    centers = erb_rate_to_hz(0.5 * (erb_edges[:-1] + erb_edges[1:]))

    freqs = np.arange(fft_size // 2 + 1) * sample_rate_hz / fft_size
    weights = np.zeros((num_bands, len(freqs)))
    for band in range(num_bands):
        in_band = (freqs >= edges[band]) & (freqs < edges[band + 1])
        if not in_band.any():
            raise ConfigInvalid(f"fft_size={fft_size} 在 {sample_rate_hz} Hz 下过小，第 {band} 个临界频带为空")
        weights[band, in_band] = 1.0

    return FilterBank(FilterBankKind.CRITICAL_BAND, weights, centers, edges[:-1], edges[1:],
                      int(sample_rate_hz), int(fft_size))


def band_envelope(w: Waveform, fb: FilterBank, cutoff_hz: float = None,
                  envelope_rate_hz: int = None) -> np.ndarray:
    """
    频带包络：整段 FFT 砖墙带通 → 半波整流 → 零相位 4 阶巴特沃斯低通 → 抽取到包络采样率。

    Args:
        w (Waveform): 输入波形。
        fb (FilterBank): 提供频带上下边界。
        cutoff_hz (float): 低通截止频率，默认 25 Hz。
        envelope_rate_hz (int): 包络帧率，默认 100 Hz。

    Returns:
        np.ndarray: (bands × frames) 非负包络矩阵。
    """
    cutoff_hz = cutoff_hz or _FB_DEFAULTS.get('envelope_cutoff_hz', 25.0)
    envelope_rate_hz = envelope_rate_hz or _FB_DEFAULTS.get('envelope_rate_hz', 100)
    fs = w.sample_rate_hz
    n = len(w)
    step = max(1, int(round(fs / envelope_rate_hz)))

    sos = signal.butter(4, cutoff_hz, btype='lowpass', fs=fs, output='sos')
    min_len = 3 * (2 * len(sos) + 1)
    if n <= min_len:
        raise InputTooShort(f"包络提取至少需要 {min_len + 1} 个采样，收到 {n}")

    spectrum = np.fft.rfft(w.samples)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    envelopes = np.empty((fb.num_bands, len(range(0, n, step))))
    for band in range(fb.num_bands):
        mask = (freqs >= fb.low_edges_hz[band]) & (freqs < fb.high_edges_hz[band])
        band_signal = np.fft.irfft(spectrum * mask, n)
        rectified = np.maximum(band_signal, 0.0)
        smoothed = signal.sosfiltfilt(sos, rectified)
        envelopes[band] = np.maximum(smoothed[::step], 0.0)
    return envelopes
