'''
客观指标模块

实现 STOI、LLR、三区间 CSII 与 NCM 四个内部指标；PESQ 仅通过外部命令适配器获取。
evaluate_pair 用线程池并行计算各指标，单个指标失败只记录在逐项状态里，不影响其余指标。
'''

import hashlib
import json
import re
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from pystoi import stoi as pystoi_stoi
from pystoi.utils import remove_silent_frames
from scipy.linalg import toeplitz

import 配置
from 日志设置 import 获取日志记录器
from 异常定义 import (
    DegenerateFrame,
    EmptyRegion,
    InputTooShort,
    LengthMismatch,
    NoActiveSpeech,
    PesqAdapterError,
    TooShort,
    ToolkitError,
)
from 信号处理核心 import (
    StftConfig,
    band_envelope,
    critical_band_filterbank,
    frame_signal,
    levinson_durbin,
    stft,
)
from 音频读写模块 import Encoding, Waveform, resample, save_wav

logger = 获取日志记录器(__name__)

_METRICS = getattr(配置, 'METRIC_CONFIG', {})

# 结果表中的行顺序
METRIC_ROWS = ("PESQ", "LLR", "STOI", "CSII_high", "CSII_mid", "CSII_low", "NCM")
_TINY = 1e-30


def config_digest() -> str:
    """冻结的指标、STFT、滤波器组、损失与 TAP 设置的 12 位摘要。"""
    frozen = {
        'stft': getattr(配置, 'STFT_CONFIG', {}),
        'filterbank': getattr(配置, 'FILTERBANK_CONFIG', {}),
        'metrics': _METRICS,
        'band_importance': getattr(配置, 'BAND_IMPORTANCE_TABLE', []),
        'loss': getattr(配置, 'LOSS_CONFIG', {}),
        'tap': getattr(配置, 'TAP_CONFIG', {}),
    }
    canonical = json.dumps(frozen, sort_keys=True, default=str, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]


def _检查输入对(clean: Waveform, degraded: Waveform) -> None:
    if clean.sample_rate_hz != degraded.sample_rate_hz:
        raise LengthMismatch(f"采样率不一致: {clean.sample_rate_hz} vs {degraded.sample_rate_hz}")
    if len(clean) != len(degraded):
        raise LengthMismatch(f"长度不一致: {len(clean)} vs {len(degraded)}")


def _转到分析采样率(clean: Waveform, degraded: Waveform):
    """临界频带组按 16 kHz 设计，其他采样率的输入先重采样。"""
    fs = getattr(配置, 'AUDIO_CONFIG', {}).get('canonical_sample_rate_hz', 16000)
    if clean.sample_rate_hz == fs:
        return clean, degraded
    logger.debug(f"重采样 {clean.sample_rate_hz} Hz -> {fs} Hz 后计算")
    return resample(clean, fs), resample(degraded, fs)


def band_importance(center_freqs_hz: np.ndarray) -> np.ndarray:
    """按频带中心频率插值 SII 式重要度表，并归一化为和 1。"""
    table = np.asarray(getattr(配置, 'BAND_IMPORTANCE_TABLE', [(150, 1.0), (8500, 1.0)]), dtype=np.float64)
    weights = np.interp(np.log(center_freqs_hz), np.log(table[:, 0]), table[:, 1])
    return weights / weights.sum()


# --- STOI ---

def _有效帧数(clean: Waveform, degraded: Waveform, cfg: dict) -> int:
    """按 pystoi 的方式去除静音帧后剩余的分析帧数。"""
    fs = cfg.get('sample_rate_hz', 10000)
    frame_len = cfg.get('frame_length', 256)
    x = resample(clean, fs).samples
    y = resample(degraded, fs).samples
    if len(x) < frame_len:
        raise TooShort(f"信号短于一个 STOI 帧 ({frame_len} 采样 @ {fs} Hz)")
    x_sil, _ = remove_silent_frames(x, y, cfg.get('dynamic_range_db', 40.0), frame_len, frame_len // 2)
    return len(range(0, len(x_sil) - frame_len, frame_len // 2))


def stoi(clean: Waveform, degraded: Waveform) -> float:
    """
    短时客观可懂度，由 pystoi 计算 (extended=False)。

    pystoi 在帧数不足时只给出警告并返回一个极小值，这里先做门限检查：
    纯净信号全零记为 NoActiveSpeech，去静音后不足 30 帧 (384 ms) 记为 TooShort。

    Raises:
        LengthMismatch: 长度或采样率不一致。
        NoActiveSpeech: 纯净信号为静音。
        TooShort: 去静音后不足 30 帧。
    """
    _检查输入对(clean, degraded)
    cfg = _METRICS.get('stoi', {})
    seg = cfg.get('segment_frames', 30)
    if not np.any(clean.samples):
        raise NoActiveSpeech("纯净信号全为零")
    num_frames = _有效帧数(clean, degraded, cfg)
    if num_frames < seg:
        raise TooShort(f"去除静音后只剩 {num_frames} 帧，少于 {seg} 帧 (384 ms)")

    score = pystoi_stoi(clean.samples, degraded.samples, clean.sample_rate_hz, extended=False)
    if not np.isfinite(score):
        raise NoActiveSpeech("STOI 结果无定义 (纯净包络恒定)")
    return float(score)


# --- LLR ---

def _帧自相关(frames: np.ndarray, order: int) -> np.ndarray:
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    return np.fft.irfft(np.square(np.abs(spec)), n=nfft, axis=1)[:, :order + 1]


def aggregate_frames(values: np.ndarray, mode: str = None, keep: float = None) -> float:
    """帧值聚合：trimmed (最小的 95% 取平均)、mean 或 median。"""
    cfg = _METRICS.get('llr', {})
    mode = mode or cfg.get('aggregation', 'trimmed')
    values = np.sort(np.asarray(values, dtype=np.float64))
    if values.size == 0:
        raise TooShort("没有可聚合的帧")
    if mode == 'mean':
        return float(values.mean())
    if mode == 'median':
        return float(np.median(values))
    if mode == 'trimmed':
        keep = cfg.get('trim_keep', 0.95) if keep is None else keep
        count = max(1, int(round(values.size * keep)))
        return float(values[:count].mean())
    raise ValueError(f"未知的聚合方式: {mode}")


def llr_frames(clean: Waveform, enhanced: Waveform) -> np.ndarray:
    """逐帧 LLR = ln(a_e R_c a_eᵀ / a_c R_c a_cᵀ)，截断到 [0, 2]；纯净帧退化时跳过。"""
    _检查输入对(clean, enhanced)
    cfg = _METRICS.get('llr', {})
    order = cfg.get('order', 10)
    fs = clean.sample_rate_hz
    frame_len = int(round(cfg.get('frame_s', 0.025) * fs))
    hop = max(1, int(round(frame_len * cfg.get('hop_fraction', 0.25))))
    upper = cfg.get('frame_clip', 2.0)
    if len(clean) < frame_len:
        raise TooShort(f"LLR 至少需要一帧 ({frame_len} 采样)")

    window = np.hanning(frame_len)
    r_clean = _帧自相关(frame_signal(clean.samples, frame_len, hop) * window, order)
    r_enh = _帧自相关(frame_signal(enhanced.samples, frame_len, hop) * window, order)

    identity = np.zeros(order + 1)
    identity[0] = 1.0
    values = []
    for rc, re_ in zip(r_clean, r_enh):
        try:
            a_c, _ = levinson_durbin(rc, order)
        except DegenerateFrame:
            continue
        try:
            a_e, _ = levinson_durbin(re_, order)
        except DegenerateFrame:
            a_e = identity
        R = toeplitz(rc)
        denominator = float(a_c @ R @ a_c)
        if denominator <= 0.0:
            continue
        ratio = float(a_e @ R @ a_e) / denominator
        values.append(min(max(np.log(ratio), 0.0), upper))
    return np.asarray(values)


def llr(clean: Waveform, enhanced: Waveform, aggregation: str = None) -> float:
    """
    对数似然比 (LPC 10 阶, 25 ms 帧)，默认取最小 95% 帧值的平均。

    Raises:
        TooShort: 没有可用帧。
    """
    values = llr_frames(clean, enhanced)
    if values.size == 0:
        raise TooShort("没有非零能量的纯净帧")
    return aggregate_frames(values, aggregation)


# --- CSII ---

@dataclass(frozen=True)
class CsiiResult:
    high: Optional[float]
    mid: Optional[float]
    low: Optional[float]
    status: Dict[str, str] = field(default_factory=dict)

    def as_tuple(self):
        return self.high, self.mid, self.low


def csii_regions(clean: Waveform, frame_len: int, hop: int) -> Dict[str, np.ndarray]:
    """按帧 RMS 相对整段 RMS 的 dB 差划分 high [0, ∞)、mid (−10, 0)、low (−30, −10]。"""
    edges = _METRICS.get('csii', {}).get('region_edges_db', (0.0, -10.0, -30.0))
    frames = frame_signal(clean.samples, frame_len, hop)
    overall = float(np.mean(np.square(clean.samples)))
    if overall <= 0:
        raise NoActiveSpeech("纯净信号全为零")
    frame_power = np.mean(np.square(frames), axis=1)
    rel_db = np.full(len(frame_power), -np.inf)
    nonzero = frame_power > 0
    rel_db[nonzero] = 10.0 * np.log10(frame_power[nonzero] / overall)
    top, middle, bottom = edges
    return {
        'high': np.flatnonzero(rel_db >= top),
        'mid': np.flatnonzero((rel_db > middle) & (rel_db < top)),
        'low': np.flatnonzero((rel_db > bottom) & (rel_db <= middle)),
    }


def csii(clean: Waveform, degraded: Waveform) -> CsiiResult:
    """
    三区间相干性可懂度指数。

    每个区间内按频点计算幅度平方相干 (MSC)，逐帧在临界频带内求
    SDR = 10·log10(Σ W·MSC·|Y|² / Σ W·(1−MSC)·|Y|²)，截断到 ±15 dB 后映射到 [0, 1]，
    再按频带重要度加权、对区间内帧平均。帧数不足的区间记为 EmptyRegion。
    """
    _检查输入对(clean, degraded)
    clean, degraded = _转到分析采样率(clean, degraded)
    cfg = _METRICS.get('csii', {})
    st = StftConfig(fft_size=cfg.get('fft_size', 512), hop=cfg.get('hop', 128),
                    win_length=cfg.get('win_length', 512), window=cfg.get('window', 'hann'),
                    center_padding=False)
    if len(clean) < st.win_length:
        raise TooShort(f"CSII 至少需要一帧 ({st.win_length} 采样)")
    clip_db = cfg.get('sdr_clip_db', 15.0)
    min_frames = cfg.get('min_region_frames', 3)

    X = stft(clean, st).bins
    Y = stft(degraded, st).bins
    bank = critical_band_filterbank(clean.sample_rate_hz, st.fft_size)
    W = bank.weights
    importance = band_importance(bank.center_freqs_hz)

    regions = csii_regions(clean, st.win_length, st.hop)
    scores: Dict[str, Optional[float]] = {}
    status: Dict[str, str] = {}
    for name in ('high', 'mid', 'low'):
        idx = regions[name]
        idx = idx[idx < X.shape[1]]
        if len(idx) < min_frames:
            scores[name] = None
            status[name] = EmptyRegion.code
            continue
        Xr, Yr = X[:, idx], Y[:, idx]
        cross = np.sum(Xr * np.conj(Yr), axis=1)
        px = np.sum(np.square(np.abs(Xr)), axis=1)
        py = np.sum(np.square(np.abs(Yr)), axis=1)
        denom = px * py
        msc = np.divide(np.square(np.abs(cross)), denom, out=np.zeros_like(px), where=denom > 0)
        msc = np.clip(msc, 0.0, 1.0)

        power = np.square(np.abs(Yr))
        signal_part = W @ (msc[:, None] * power)
        noise_part = W @ ((1.0 - msc)[:, None] * power)
        defined = (signal_part > _TINY) | (noise_part > _TINY)
        sdr = 10.0 * np.log10(np.maximum(signal_part, _TINY) / np.maximum(noise_part, _TINY))
        mapped = (np.clip(sdr, -clip_db, clip_db) + clip_db) / (2.0 * clip_db)

        weights = importance[:, None] * defined
        weight_sum = weights.sum(axis=0)
        usable = weight_sum > 0
        if not usable.any():
            scores[name] = None
            status[name] = EmptyRegion.code
            continue
        per_frame = np.sum(weights * mapped, axis=0)[usable] / weight_sum[usable]
        scores[name] = float(np.mean(per_frame))
        status[name] = 'ok'

    return CsiiResult(scores['high'], scores['mid'], scores['low'], status)


# --- NCM ---

def ncm(clean: Waveform, degraded: Waveform) -> float:
    """
    归一化协方差度量：临界频带包络的相关系数 r → 10·log10(r²/(1−r²)) 截断到 ±15 dB →
    映射到 [0, 1] 后按频带重要度加权平均。纯净包络恒定的频带不参与加权。
    """
    _检查输入对(clean, degraded)
    clean, degraded = _转到分析采样率(clean, degraded)
    clip_db = _METRICS.get('ncm', {}).get('sdr_clip_db', 15.0)
    bank = critical_band_filterbank(clean.sample_rate_hz, getattr(配置, 'STFT_CONFIG', {}).get('fft_size', 512))
    try:
        env_x = band_envelope(clean, bank)
        env_y = band_envelope(degraded, bank)
    except InputTooShort as e:
        raise TooShort(str(e)) from e
    if env_x.shape[1] < 2:
        raise TooShort("包络帧数不足")
    importance = band_importance(bank.center_freqs_hz)

    xc = env_x - env_x.mean(axis=1, keepdims=True)
    yc = env_y - env_y.mean(axis=1, keepdims=True)
    vx = np.sum(xc * xc, axis=1)
    vy = np.sum(yc * yc, axis=1)
    scale_x = np.sum(env_x * env_x, axis=1)
    defined = vx > 1e-20 * np.maximum(scale_x, _TINY)
    if not defined.any():
        raise NoActiveSpeech("所有临界频带的纯净包络都恒定")

    denom = np.sqrt(vx * vy)
    r = np.divide(np.sum(xc * yc, axis=1), denom, out=np.zeros_like(vx), where=denom > 0)
    r2 = np.clip(np.square(r), 0.0, 1.0)
    one_minus = 1.0 - r2
    snr = np.where(
        one_minus <= 1e-12, clip_db,
        np.where(r2 <= _TINY, -clip_db, 10.0 * np.log10(np.maximum(r2, _TINY) / np.maximum(one_minus, 1e-12))))
    ti = (np.clip(snr, -clip_db, clip_db) + clip_db) / (2.0 * clip_db)
    return float(np.sum(importance[defined] * ti[defined]) / np.sum(importance[defined]))


# --- PESQ 外部适配器 ---

_REAL_TOKEN = re.compile(r'^[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?$')


def pesq_via_command(clean: Waveform, degraded: Waveform, template: str, timeout_s: float = None) -> float:
    """
    调用外部 PESQ 命令。模板中的 {clean} / {degraded} 被替换为临时 pcm16 WAV 路径，
    不经过 shell 执行；取标准输出中最后一个完整的实数词作为分数。

    Raises:
        PesqAdapterError: 命令不存在、超时、退出码非零或输出中没有实数。
    """
    timeout_s = timeout_s or _METRICS.get('pesq_timeout_s', 30.0)
    with tempfile.TemporaryDirectory(prefix='se_eval_pesq_') as tmp:
        clean_path = Path(tmp) / 'clean.wav'
        degraded_path = Path(tmp) / 'degraded.wav'
        save_wav(clean, clean_path, Encoding.PCM16)
        save_wav(degraded, degraded_path, Encoding.PCM16)
        args = [part.replace('{clean}', str(clean_path)).replace('{degraded}', str(degraded_path))
                for part in shlex.split(template)]
        try:
            proc = subprocess.run(args, capture_output=True, text=True, timeout=timeout_s, check=False)
        except subprocess.TimeoutExpired as e:
            raise PesqAdapterError(f"PESQ 命令超时 ({timeout_s} s)") from e
        except OSError as e:
            raise PesqAdapterError(f"无法启动 PESQ 命令: {e}") from e

    if proc.returncode != 0:
        raise PesqAdapterError(f"PESQ 命令退出码 {proc.returncode}: {proc.stderr.strip()[:200]}")
    tokens = [tok for tok in proc.stdout.split() if _REAL_TOKEN.match(tok)]
    if not tokens:
        raise PesqAdapterError(f"无法从 PESQ 输出中解析分数: {proc.stdout.strip()[:200]}")
    return float(tokens[-1])


# --- 组合评估 ---

@dataclass(frozen=True)
class MetricReport:
    stoi: Optional[float]
    llr: Optional[float]
    csii_high: Optional[float]
    csii_mid: Optional[float]
    csii_low: Optional[float]
    ncm: Optional[float]
    pesq: Optional[float] = None
    status: Dict[str, str] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)
    config_digest: str = ""

    def rows(self) -> Dict[str, Optional[float]]:
        return {
            "PESQ": self.pesq,
            "LLR": self.llr,
            "STOI": self.stoi,
            "CSII_high": self.csii_high,
            "CSII_mid": self.csii_mid,
            "CSII_low": self.csii_low,
            "NCM": self.ncm,
        }

    @property
    def failed(self) -> bool:
        """内部指标出错即视为该文件对失败；PESQ 失败与空区间不算。"""
        tolerated = {'ok', 'n/a', EmptyRegion.code}
        return any(self.status.get(row, 'ok') not in tolerated for row in METRIC_ROWS if row != "PESQ")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config_digest': self.config_digest,
            'toolkit_version': getattr(配置, 'TOOLKIT_VERSION', 'unknown'),
            'metrics': self.rows(),
            'status': {row: self.status.get(row, 'ok') for row in METRIC_ROWS},
            'errors': {k: self.errors[k] for k in sorted(self.errors)},
        }


def evaluate_pair(clean: Waveform, degraded: Waveform, pesq_command: Optional[str] = None) -> MetricReport:
    """
    对一对对齐的信号计算全部内部指标，配置了适配器时再计算 PESQ。

    Args:
        clean (Waveform): 纯净参考。
        degraded (Waveform): 待评估信号，长度与采样率必须一致。
        pesq_command (str): 可选的外部 PESQ 命令模板。

    Returns:
        MetricReport: 各指标数值与逐项状态。
    """
    _检查输入对(clean, degraded)
    tasks = {'STOI': stoi, 'LLR': llr, 'CSII': csii, 'NCM': ncm}
    results: Dict[str, Any] = {}
    status: Dict[str, str] = {}
    errors: Dict[str, str] = {}

    with ThreadPoolExecutor(max_workers=len(tasks)) as executor:
        futures = {executor.submit(fn, clean, degraded): name for name, fn in tasks.items()}
        for future in as_completed(futures):
            name = futures[future]
            try:
                results[name] = future.result()
                status[name] = 'ok'
            except ToolkitError as e:
                logger.warning(f"指标 '{name}' 计算失败: {e}")
                status[name] = e.code
                errors[name] = str(e)
            except Exception as e:
                logger.error(f"指标 '{name}' 计算时发生未预期错误: {e}", exc_info=True)
                status[name] = 'error'
                errors[name] = str(e)

    csii_result = results.get('CSII')
    for region in ('high', 'mid', 'low'):
        key = f"CSII_{region}"
        if csii_result is None:
            status[key] = status.get('CSII', 'error')
        else:
            status[key] = csii_result.status.get(region, 'ok')
    if 'CSII' in errors:
        message = errors.pop('CSII')
        for region in ('high', 'mid', 'low'):
            errors[f"CSII_{region}"] = message
    status.pop('CSII', None)

    pesq_value = None
    if pesq_command:
        try:
            pesq_value = pesq_via_command(clean, degraded, pesq_command)
            status['PESQ'] = 'ok'
        except PesqAdapterError as e:
            logger.warning(f"PESQ 适配器失败: {e}")
            status['PESQ'] = 'failed'
            errors['PESQ'] = str(e)
    else:
        status['PESQ'] = 'n/a'

    return MetricReport(
        stoi=results.get('STOI'),
        llr=results.get('LLR'),
        csii_high=csii_result.high if csii_result else None,
        csii_mid=csii_result.mid if csii_result else None,
        csii_low=csii_result.low if csii_result else None,
        ncm=results.get('NCM'),
        pesq=pesq_value,
        status=status,
        errors=errors,
        config_digest=config_digest(),
    )
