'''
声学参数模块

确定性提取 25 个时域声学参数 (TAP)，得到 T×25 的 A_y(t, p) 矩阵，并在其上计算统计泛函向量。
帧率 100 帧/秒 (10 ms 帧移, 25 ms 分析窗)。无定义的值 (如清音帧的基频) 记为 0，并由有效性掩码标出。

各参数定义:
  pitch                   librosa.pyin 基频 (Hz)，仅浊音帧有效
  jitter                  |T0(t) - T0(t-1)| / T0(t)，相邻两帧均为浊音时有效
  shimmer                 |A(t) - A(t-1)| / ((A(t) + A(t-1)) / 2)，A 为帧内峰值幅度
  loudness                临界频带能量的 0.3 次幂之和
  hnr                     10·log10(r / (1 - r))，r 为估计周期处的归一化互相关峰值 (dB)
  alpha_ratio             E(1-5 kHz) / E(50 Hz-1 kHz) (dB)
  hammarberg_index        max dB(0-2 kHz) - max dB(2-5 kHz)
  spectral_slope_*        dB 功率谱对频率 (kHz) 的线性回归斜率 (dB/kHz)
  f{1,2,3}_freq/bandwidth 12 阶 LPC 根的角度 / 半径换算 (Hz)
  f{1,2,3}_rel_energy     共振峰附近 ±max(B/2, 50 Hz) 能量相对帧总能量 (dB)
  h1_h2_harmonic_diff     一次与二次谐波峰值之差 (dB)
  h1_a3_harmonic_diff     一次谐波与最接近 F3 的谐波峰值之差 (dB)
  其余 5 个为整段标量 (按帧复制)：响度峰值率、浊音段平均/标准差时长、清音段平均时长、每秒浊音段数
'''

from dataclasses import dataclass
from enum import Enum
from itertools import groupby
from typing import List, Optional, Tuple, Union

import librosa
import numpy as np
import pandas as pd
from scipy import signal

import 配置
from 日志设置 import 获取日志记录器
from 异常定义 import DegenerateFrame, DimensionMismatch, InputTooShort, NoValidFrames
from 信号处理核心 import critical_band_filterbank, lpc_coefficients
from 音频读写模块 import Waveform, resample

logger = 获取日志记录器(__name__)

_TAP = getattr(配置, 'TAP_CONFIG', {})


class TapParamId(str, Enum):
    PITCH = "pitch"
    JITTER = "jitter"
    SHIMMER = "shimmer"
    LOUDNESS = "loudness"
    HNR = "hnr"
    ALPHA_RATIO = "alpha_ratio"
    HAMMARBERG_INDEX = "hammarberg_index"
    SPECTRAL_SLOPE_0_500 = "spectral_slope_0_500"
    SPECTRAL_SLOPE_500_1500 = "spectral_slope_500_1500"
    F1_FREQ = "f1_freq"
    F1_BANDWIDTH = "f1_bandwidth"
    F1_REL_ENERGY = "f1_rel_energy"
    F2_FREQ = "f2_freq"
    F2_BANDWIDTH = "f2_bandwidth"
    F2_REL_ENERGY = "f2_rel_energy"
    F3_FREQ = "f3_freq"
    F3_BANDWIDTH = "f3_bandwidth"
    F3_REL_ENERGY = "f3_rel_energy"
    H1_H2_HARMONIC_DIFF = "h1_h2_harmonic_diff"
    H1_A3_HARMONIC_DIFF = "h1_a3_harmonic_diff"
    RATE_LOUDNESS_PEAKS = "rate_loudness_peaks"
    MEAN_VOICED_LEN = "mean_voiced_len"
    STD_VOICED_LEN = "std_voiced_len"
    MEAN_UNVOICED_LEN = "mean_unvoiced_len"
    CONTINUOUS_VOICED_PER_SEC = "continuous_voiced_per_sec"


TAP_PARAMS: Tuple[TapParamId, ...] = tuple(TapParamId)
TAP_PARAM_NAMES: Tuple[str, ...] = tuple(p.value for p in TAP_PARAMS)
NUM_TAP_PARAMS = len(TAP_PARAMS)
_IDX = {p: i for i, p in enumerate(TAP_PARAMS)}

# 逐帧参数 (前 20 列) 与整段标量 (后 5 列)
FRAME_LEVEL_PARAMS = TAP_PARAMS[:20]
CLIP_LEVEL_PARAMS = TAP_PARAMS[20:]

FUNCTIONAL_STATS = ("mean", "stddev", "p20", "p50", "p80")
PASS_THROUGH_PARAMS = (
    TapParamId.MEAN_VOICED_LEN,
    TapParamId.STD_VOICED_LEN,
    TapParamId.MEAN_UNVOICED_LEN,
    TapParamId.CONTINUOUS_VOICED_PER_SEC,
)
FUNCTIONAL_NAMES: Tuple[str, ...] = tuple(
    [f"{p.value}_{s}" for p in TAP_PARAMS for s in FUNCTIONAL_STATS]
    + [p.value for p in PASS_THROUGH_PARAMS]
)
FUNCTIONAL_LENGTH = len(FUNCTIONAL_NAMES)


@dataclass(frozen=True, eq=False)
class TapMatrix:
    """T×25 声学参数矩阵及其有效性掩码。"""
    values: np.ndarray
    valid: Optional[np.ndarray] = None
    frame_rate_hz: float = _TAP.get('frame_rate_hz', 100)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != NUM_TAP_PARAMS:
            raise DimensionMismatch(f"TapMatrix 需要 T×{NUM_TAP_PARAMS}，收到形状 {values.shape}")
        valid = np.ones(values.shape, dtype=bool) if self.valid is None else np.array(self.valid, dtype=bool)
        if valid.shape != values.shape:
            raise DimensionMismatch(f"有效性掩码形状 {valid.shape} 与数值 {values.shape} 不一致")
        bad = ~np.isfinite(values)
        if bad.any():
            values[bad] = 0.0
            valid = valid & ~bad
        values[~valid] = 0.0
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'valid', valid)

    @property
    def num_frames(self) -> int:
        return int(self.values.shape[0])

    @property
    def param_order(self) -> Tuple[str, ...]:
        return TAP_PARAM_NAMES

    def column(self, param: Union[TapParamId, str]) -> np.ndarray:
        return self.values[:, _IDX[TapParamId(param)]]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=list(TAP_PARAM_NAMES))

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format='%.9g')

    @classmethod
    def from_csv(cls, path, frame_rate_hz: float = None) -> "TapMatrix":
        """从 CSV 读回数值；CSV 不含掩码，零值视为无效。"""
        df = pd.read_csv(path)
        missing = [n for n in TAP_PARAM_NAMES if n not in df.columns]
        if missing:
            raise DimensionMismatch(f"CSV 缺少参数列: {missing}")
        values = df[list(TAP_PARAM_NAMES)].to_numpy(dtype=np.float64)
        return cls(values, values != 0.0, frame_rate_hz or _TAP.get('frame_rate_hz', 100))

    def to_npz(self, path) -> None:
        np.savez(path, values=self.values, valid=self.valid,
                 shape=np.array(self.values.shape), frame_rate_hz=np.array(self.frame_rate_hz),
                 param_order=np.array(TAP_PARAM_NAMES))

    @classmethod
    def from_npz(cls, path) -> "TapMatrix":
        with np.load(path) as data:
            shape = tuple(int(v) for v in data['shape'])
            order = tuple(str(v) for v in data['param_order'])
            if order != TAP_PARAM_NAMES:
                raise DimensionMismatch("npz 中的参数顺序与当前版本不一致")
            values = data['values'].reshape(shape)
            return cls(values, data['valid'].reshape(shape), float(data['frame_rate_hz']))


@dataclass(frozen=True, eq=False)
class FunctionalVector:
    """固定长度 (129) 的泛函描述向量，顺序见 FUNCTIONAL_NAMES。"""
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.shape != (FUNCTIONAL_LENGTH,) or valid.shape != values.shape:
            raise DimensionMismatch(f"FunctionalVector 长度必须为 {FUNCTIONAL_LENGTH}，收到 {values.shape}")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'valid', valid)

    @staticmethod
    def names() -> Tuple[str, ...]:
        return FUNCTIONAL_NAMES

    def to_dict(self) -> dict:
        return {name: (float(v) if ok else None) for name, v, ok in zip(FUNCTIONAL_NAMES, self.values, self.valid)}


@dataclass(frozen=True, eq=False)
class PitchTrack:
    f0_hz: np.ndarray
    voiced: np.ndarray
    periodicity: np.ndarray   # NCCF 峰值，清音帧为 0


@dataclass(frozen=True, eq=False)
class FormantTrack:
    freqs_hz: np.ndarray        # T×3
    bandwidths_hz: np.ndarray   # T×3
    rel_energy_db: np.ndarray   # T×3
    found: np.ndarray           # T×3, 该帧找到第 k 个共振峰候选
    confident: np.ndarray       # T×3, 带宽不超过门限
    voiced: np.ndarray          # T

    @property
    def valid(self) -> np.ndarray:
        return self.found & self.voiced[:, None]


def _帧参数(sample_rate_hz: int) -> Tuple[int, int]:
    hop = int(round(sample_rate_hz / _TAP.get('frame_rate_hz', 100)))
    win = int(round(sample_rate_hz * _TAP.get('window_s', 0.025)))
    return win, hop


def _帧数(num_samples: int, win: int, hop: int) -> int:
    return 0 if num_samples < win else 1 + (num_samples - win) // hop


def _分帧(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    """(帧数, win) 的分帧视图，帧数 = 1 + (N - win) // hop。"""
    if len(x) < win:
        return np.zeros((0, win))
    return librosa.util.frame(np.ascontiguousarray(x, dtype=np.float64), frame_length=win, hop_length=hop, axis=0)


def _归一化互相关(x: np.ndarray, start: int, win: int, period: float) -> float:
    """参考段 x[start:start+win] 与平移约一个周期的同长段之间的 NCCF 峰值，抛物线插值。"""
    ref = x[start:start + win]
    e_ref = float(np.dot(ref, ref))
    center = int(round(period))
    values = []
    for lag in (center - 1, center, center + 1):
        seg = x[start + lag:start + lag + win]
        denom = np.sqrt(e_ref * float(np.dot(seg, seg)))
        values.append(float(np.dot(ref, seg)) / denom if denom > 0 else 0.0)
    a, b, c = values
    curvature = a - 2.0 * b + c
    delta = 0.5 * (a - c) / curvature if curvature < 0 else 0.0
    peak = b - 0.25 * (a - c) * delta if abs(delta) <= 1.0 else max(values)
    return float(np.clip(peak, 0.0, 1.0))


def pitch_track(w: Waveform) -> PitchTrack:
    """
    逐帧基频估计。

    基频与浊音判决来自 librosa.pyin；帧 t 的分析段为 [t*hop, t*hop+win)，pyin 帧中心与之对齐。
    pyin 判为浊音的帧再在估计周期附近求归一化互相关 (NCCF) 峰值作为 periodicity，
    低于浊音门限或帧 RMS 过低的帧改判为清音。

    Args:
        w (Waveform): 输入波形。

    Returns:
        PitchTrack: f0_hz (清音帧为 0)、voiced 标志、periodicity。
    """
    fs = w.sample_rate_hz
    win, hop = _帧参数(fs)
    f0_min = _TAP.get('f0_min_hz', 60.0)
    f0_max = _TAP.get('f0_max_hz', 500.0)
    threshold = _TAP.get('voicing_threshold', 0.5)
    silence_rms = _TAP.get('silence_rms', 1e-4)
    num_frames = _帧数(len(w), win, hop)

    f0 = np.zeros(num_frames)
    voiced = np.zeros(num_frames, dtype=bool)
    periodicity = np.zeros(num_frames)
    if num_frames == 0:
        return PitchTrack(f0, voiced, periodicity)

    frame_length = 1 << int(np.ceil(np.log2(4.0 * fs / f0_min)))
    candidate, flag, _ = librosa.pyin(w.samples[win // 2:], fmin=f0_min, fmax=f0_max, sr=fs,
                                      frame_length=frame_length, hop_length=hop, center=True)
    candidate = np.nan_to_num(candidate[:num_frames])
    flag = np.asarray(flag[:num_frames], dtype=bool) & (candidate > 0)

    rms = np.sqrt(np.mean(np.square(_分帧(w.samples, win, hop)), axis=1))
    padded = np.concatenate([w.samples, np.zeros(int(np.ceil(fs / f0_min)) + 3)])
    for t in np.flatnonzero(flag & (rms >= silence_rms)):
        periodicity[t] = _归一化互相关(padded, t * hop, win, fs / candidate[t])
    voiced = periodicity >= threshold
    f0[voiced] = candidate[voiced]
    periodicity[~voiced] = 0.0
    return PitchTrack(f0, voiced, periodicity)


def _谱长度(win: int) -> int:
    """配置的 FFT 点数，不足一个分析窗时取不小于窗长的 2 的幂。"""
    return max(_TAP.get('spectrum_fft_size', 1024), 1 << int(np.ceil(np.log2(win))))


def _帧功率谱(x: np.ndarray, win: int, hop: int, nfft: int) -> np.ndarray:
    frames = _分帧(x, win, hop)
    window = signal.get_window('hann', win, fftbins=True)
    return np.square(np.abs(np.fft.rfft(frames * window, n=nfft, axis=1)))


def _lpc共振峰(frame: np.ndarray, order: int, fs: int, min_hz: float, max_bw: float):
    """单帧 LPC 根 → 按频率排序的 (频率, 带宽, 置信) 列表，最多 3 个。"""
    a, _ = lpc_coefficients(frame, order)
    roots = np.roots(a)
    roots = roots[np.imag(roots) > 0]
    freqs = np.angle(roots) * fs / (2.0 * np.pi)
    bws = -fs / np.pi * np.log(np.maximum(np.abs(roots), 1e-12))
    keep = (freqs > min_hz) & (freqs < fs / 2.0 - min_hz)
    freqs, bws = freqs[keep], bws[keep]
    order_idx = np.argsort(freqs)
    freqs, bws = freqs[order_idx], bws[order_idx]

    confident = bws <= max_bw
    picks = list(np.flatnonzero(confident)[:3])
    if len(picks) < 3:
        extra = [i for i in np.flatnonzero(~confident) if i not in picks]
        picks.extend(extra[:3 - len(picks)])
    picks.sort(key=lambda i: freqs[i])
    return [(float(freqs[i]), float(bws[i]), bool(confident[i])) for i in picks]


def formant_estimate(w: Waveform, voiced: Optional[np.ndarray] = None) -> FormantTrack:
    """
    LPC 求根估计 F1-F3 的频率、带宽和相对能量。

    Args:
        w (Waveform): 输入波形。
        voiced: 可选的逐帧浊音标志，缺省时调用 pitch_track。

    Returns:
        FormantTrack: 清音帧在 valid 中被屏蔽；带宽超过 400 Hz 的候选 confident=False。
    """
    fs = w.sample_rate_hz
    win, hop = _帧参数(fs)
    num_frames = _帧数(len(w), win, hop)
    if voiced is None:
        voiced = pitch_track(w).voiced
    voiced = np.asarray(voiced, dtype=bool)

    order = _TAP.get('lpc_order', 12)
    pre = _TAP.get('pre_emphasis', 0.97)
    min_hz = _TAP.get('formant_min_hz', 90.0)
    max_bw = _TAP.get('formant_max_bandwidth_hz', 400.0)
    nfft = _谱长度(win)

    emphasized = signal.lfilter([1.0, -pre], [1.0], w.samples)
    frames = _分帧(emphasized, win, hop)
    window = signal.get_window('hamming', win, fftbins=True)
    power = _帧功率谱(w.samples, win, hop, nfft)
    bin_hz = np.fft.rfftfreq(nfft, d=1.0 / fs)

    freqs = np.zeros((num_frames, 3))
    bws = np.zeros((num_frames, 3))
    rel = np.zeros((num_frames, 3))
    found = np.zeros((num_frames, 3), dtype=bool)
    confident = np.zeros((num_frames, 3), dtype=bool)

    for t in range(num_frames):
        try:
            picks = _lpc共振峰(frames[t] * window, order, fs, min_hz, max_bw)
        except DegenerateFrame:
            continue
        total = float(np.sum(power[t]))
        for k, (freq, bw, ok) in enumerate(picks):
            freqs[t, k] = freq
            bws[t, k] = bw
            found[t, k] = True
            confident[t, k] = ok
            if total > 0:
                half = max(bw / 2.0, 50.0)
                band = float(np.sum(power[t][np.abs(bin_hz - freq) <= half]))
                rel[t, k] = 10.0 * np.log10(max(band, 1e-30) / total)

    return FormantTrack(freqs, bws, rel, found, confident, voiced[:num_frames])


def _回归斜率(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """逐行最小二乘斜率。"""
    xc = x - x.mean()
    yc = y - y.mean(axis=1, keepdims=True)
    return (yc @ xc) / float(np.dot(xc, xc))


def _谐波幅度db(power_db: np.ndarray, bin_hz: np.ndarray, f0: float, k: int) -> float:
    target = k * f0
    band = np.abs(bin_hz - target) <= 0.1 * f0
    if not band.any():
        return float(power_db[np.argmin(np.abs(bin_hz - target))])
    return float(np.max(power_db[band]))


def _段时长(flags: np.ndarray, hop: int, fs: int, num_samples: int) -> Tuple[List[float], List[float]]:
    """
    把逐帧浊音标志切成连续段，返回 (浊音段时长列表, 清音段时长列表)，单位秒。
    段边界位于帧起点 k*hop；首段从 0 开始，末段延伸到整段结尾，因此所有段时长之和等于整段时长。
    """
    voiced_runs, unvoiced_runs = [], []
    start = 0
    last = len(flags) - 1
    for is_voiced, group in groupby(flags):
        length = len(list(group))
        end = start + length - 1
        begin_s = 0.0 if start == 0 else start * hop / fs
        end_s = num_samples / fs if end == last else (end + 1) * hop / fs
        (voiced_runs if is_voiced else unvoiced_runs).append(end_s - begin_s)
        start = end + 1
    return voiced_runs, unvoiced_runs


def extract_tap(w: Waveform) -> TapMatrix:
    """
    提取 T×25 声学参数矩阵。

    Args:
        w (Waveform): 输入波形，至少 3 帧长；非 16 kHz 输入先重采样到 16 kHz。

    Returns:
        TapMatrix: 帧率 100 Hz 的参数矩阵与有效性掩码。

    Raises:
        InputTooShort: 不足 3 帧。
    """
    w = resample(w, getattr(配置, 'AUDIO_CONFIG', {}).get('canonical_sample_rate_hz', 16000))
    fs = w.sample_rate_hz
    win, hop = _帧参数(fs)
    num_frames = _帧数(len(w), win, hop)
    if num_frames < 3:
        raise InputTooShort(f"TAP 提取至少需要 3 帧 ({win + 2 * hop} 个采样)，收到 {len(w)} 个采样")

    nfft = _谱长度(win)
    values = np.zeros((num_frames, NUM_TAP_PARAMS))
    valid = np.zeros((num_frames, NUM_TAP_PARAMS), dtype=bool)

    # 基频、抖动、HNR
    pitch = pitch_track(w)
    voiced = pitch.voiced
    values[:, _IDX[TapParamId.PITCH]] = pitch.f0_hz
    valid[:, _IDX[TapParamId.PITCH]] = voiced

    r = np.clip(pitch.periodicity, 1e-6, 1.0 - 1e-6)
    values[:, _IDX[TapParamId.HNR]] = np.where(voiced, 10.0 * np.log10(r / (1.0 - r)), 0.0)
    valid[:, _IDX[TapParamId.HNR]] = voiced

    pair = np.zeros(num_frames, dtype=bool)
    pair[1:] = voiced[1:] & voiced[:-1]
    periods = np.divide(1.0, pitch.f0_hz, out=np.zeros(num_frames), where=voiced)
    jitter = np.zeros(num_frames)
    jitter[1:] = np.abs(periods[1:] - periods[:-1])
    values[:, _IDX[TapParamId.JITTER]] = np.divide(jitter, periods, out=np.zeros(num_frames), where=pair)
    valid[:, _IDX[TapParamId.JITTER]] = pair

    frames = _分帧(w.samples, win, hop)
    peaks = np.max(np.abs(frames), axis=1)
    shimmer = np.zeros(num_frames)
    shimmer[1:] = np.abs(peaks[1:] - peaks[:-1])
    mean_amp = np.zeros(num_frames)
    mean_amp[1:] = 0.5 * (peaks[1:] + peaks[:-1])
    values[:, _IDX[TapParamId.SHIMMER]] = np.divide(shimmer, mean_amp, out=np.zeros(num_frames), where=pair & (mean_amp > 0))
    valid[:, _IDX[TapParamId.SHIMMER]] = pair & (mean_amp > 0)

    # 频谱类参数
    power = _帧功率谱(w.samples, win, hop, nfft)
    bin_hz = np.fft.rfftfreq(nfft, d=1.0 / fs)
    energy = power.sum(axis=1)
    active = energy > 0
    power_db = 10.0 * np.log10(np.maximum(power, 1e-20))

    bank = critical_band_filterbank(fs, nfft)
    band_energy = power @ bank.weights.T
    loudness = np.sum(np.power(band_energy, _TAP.get('loudness_exponent', 0.3)), axis=1)
    values[:, _IDX[TapParamId.LOUDNESS]] = loudness
    valid[:, _IDX[TapParamId.LOUDNESS]] = active

    low = power[:, (bin_hz >= 50) & (bin_hz < 1000)].sum(axis=1)
    high = power[:, (bin_hz >= 1000) & (bin_hz < 5000)].sum(axis=1)
    alpha_ok = (low > 0) & (high > 0)
    values[:, _IDX[TapParamId.ALPHA_RATIO]] = np.where(
        alpha_ok, 10.0 * np.log10(np.maximum(high, 1e-30) / np.maximum(low, 1e-30)), 0.0)
    valid[:, _IDX[TapParamId.ALPHA_RATIO]] = alpha_ok

    values[:, _IDX[TapParamId.HAMMARBERG_INDEX]] = (
        power_db[:, bin_hz < 2000].max(axis=1) - power_db[:, (bin_hz >= 2000) & (bin_hz < 5000)].max(axis=1))
    valid[:, _IDX[TapParamId.HAMMARBERG_INDEX]] = active

    for param, (lo, hi) in ((TapParamId.SPECTRAL_SLOPE_0_500, (0, 500)),
                            (TapParamId.SPECTRAL_SLOPE_500_1500, (500, 1500))):
        sel = (bin_hz >= lo) & (bin_hz <= hi)
        values[:, _IDX[param]] = _回归斜率(power_db[:, sel], bin_hz[sel] / 1000.0)
        valid[:, _IDX[param]] = active

    # 共振峰
    formants = formant_estimate(w, voiced)
    formant_valid = formants.valid
    for k in range(3):
        base = _IDX[TapParamId.F1_FREQ] + 3 * k
        values[:, base] = formants.freqs_hz[:, k]
        values[:, base + 1] = formants.bandwidths_hz[:, k]
        values[:, base + 2] = formants.rel_energy_db[:, k]
        valid[:, base:base + 3] = formant_valid[:, k:k + 1]

    # 谐波差
    for t in np.flatnonzero(voiced & active):
        f0 = pitch.f0_hz[t]
        h1 = _谐波幅度db(power_db[t], bin_hz, f0, 1)
        h2 = _谐波幅度db(power_db[t], bin_hz, f0, 2)
        values[t, _IDX[TapParamId.H1_H2_HARMONIC_DIFF]] = h1 - h2
        valid[t, _IDX[TapParamId.H1_H2_HARMONIC_DIFF]] = True
        if formant_valid[t, 2]:
            k3 = max(1, int(round(formants.freqs_hz[t, 2] / f0)))
            a3 = _谐波幅度db(power_db[t], bin_hz, f0, k3)
            values[t, _IDX[TapParamId.H1_A3_HARMONIC_DIFF]] = h1 - a3
            valid[t, _IDX[TapParamId.H1_A3_HARMONIC_DIFF]] = True

    # 整段时间统计
    duration = len(w) / fs
    peak_level = float(loudness.max())
    if peak_level > 0:
        peak_idx, _ = signal.find_peaks(loudness, prominence=_TAP.get('loudness_peak_prominence', 0.05) * peak_level)
        rate_peaks = len(peak_idx) / duration
    else:
        rate_peaks = 0.0
    voiced_runs, unvoiced_runs = _段时长(voiced, hop, fs, len(w))
    clip_values = {
        TapParamId.RATE_LOUDNESS_PEAKS: rate_peaks,
        TapParamId.MEAN_VOICED_LEN: float(np.mean(voiced_runs)) if voiced_runs else 0.0,
        TapParamId.STD_VOICED_LEN: float(np.std(voiced_runs)) if voiced_runs else 0.0,
        TapParamId.MEAN_UNVOICED_LEN: float(np.mean(unvoiced_runs)) if unvoiced_runs else 0.0,
        TapParamId.CONTINUOUS_VOICED_PER_SEC: len(voiced_runs) / duration,
    }
    for param, value in clip_values.items():
        values[:, _IDX[param]] = value
        valid[:, _IDX[param]] = True

    logger.debug(f"TAP 提取完成: {num_frames} 帧, 浊音帧 {int(voiced.sum())}")
    return TapMatrix(values, valid, fs / hop)


def compute_functionals(m: TapMatrix) -> FunctionalVector:
    """
    在有效帧上计算每个参数的 mean / stddev / p20 / p50 / p80，再追加 4 个浊音分段标量。

    某参数没有任何有效帧时 (NoValidFrames)，其 5 个统计量记为无效。
    """
    if m.num_frames < 1:
        raise NoValidFrames("TapMatrix 没有任何帧")
    values = np.zeros(FUNCTIONAL_LENGTH)
    valid = np.zeros(FUNCTIONAL_LENGTH, dtype=bool)
    pos = 0
    for p in range(NUM_TAP_PARAMS):
        column = m.values[m.valid[:, p], p]
        if column.size:
            p20, p50, p80 = np.percentile(column, [20, 50, 80])
            values[pos:pos + 5] = (column.mean(), column.std(), p20, p50, p80)
            valid[pos:pos + 5] = True
        pos += 5
    for param in PASS_THROUGH_PARAMS:
        column = m.values[m.valid[:, _IDX[param]], _IDX[param]]
        if column.size:
            values[pos] = column[0]
            valid[pos] = True
        pos += 1
    return FunctionalVector(values, valid)
