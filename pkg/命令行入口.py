'''
命令行入口

批处理前端：合成带噪语料 (synth)、计算客观指标表 (eval)、声学改进报告 (improve)、
导出声学参数矩阵 (tap)、计算损失分解 (loss) 以及写出默认运行配置 (config init)。

运行配置为 JSON 文件，路径由 --config 或环境变量 SE_EVAL_CONFIG 指定；命令行参数覆盖配置文件。
文件按同名 stem 在各目录间配对，逐文件并行处理，结果排序后单线程写出，报告内容与工作线程数无关。
'''

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import 配置
from 日志设置 import 获取日志记录器
from 异常定义 import (
    ConfigInvalid,
    DimensionMismatch,
    EmptyPool,
    IoError,
    LengthMismatch,
    MissingPair,
    ToolkitError,
)
from 音频读写模块 import Encoding, Waveform, gain_normalize, load_wav, resample, save_wav
from 信号处理核心 import stft
from 声学参数模块 import compute_functionals, extract_tap
from 损失函数模块 import (
    LossWeights,
    cirm_from_specs,
    compress_cirm,
    demucs_loss,
    fullsubnet_loss,
    loss_ablation_sweep,
)
from 客观指标模块 import METRIC_ROWS, config_digest, evaluate_pair
from 改进评估模块 import ImprovementMode, ImprovementReport, improvement_report, pooled_improvement_report
from 信道模拟模块 import ChannelConfig, make_rng, simulate_transmission

logger = 获取日志记录器(__name__)

_RUN = getattr(配置, 'RUN_CONFIG', {})
_SYNTH = getattr(配置, 'SYNTH_CONFIG', {})
VALID_FORMATS = ('csv', 'json', 'markdown')

# synth 阶段额外使用的 PRNG 流 (0/1 由信道模拟占用)
STAGE_SNR = 2
STAGE_NOISE_PICK = 3


@dataclass
class RunConfig:
    """一次批处理运行的全部设置。"""
    clean_dir: Optional[str] = None
    noise_dir: Optional[str] = None
    noisy_dir: Optional[str] = None
    baseline_dir: Optional[str] = None
    finetuned_dir: Optional[str] = None
    systems: Dict[str, str] = field(default_factory=dict)
    manifest: Optional[str] = None
    output_dir: str = getattr(配置, 'REPORT_PATH', '评估报告/')
    workers: int = _RUN.get('workers', 4)
    seed: int = _RUN.get('seed', 42)
    formats: List[str] = field(default_factory=lambda: list(_RUN.get('formats', VALID_FORMATS)))
    truncate_to_shorter: bool = _RUN.get('truncate_to_shorter', False)
    pesq_command: Optional[str] = _RUN.get('pesq_command')
    improve_mode: str = _RUN.get('improve_mode', 'lld_timeseries')
    num_pairs: int = _SYNTH.get('num_pairs', 10)
    clip_seconds: float = _SYNTH.get('clip_seconds', 10.0)
    snr_choices_db: List[float] = field(default_factory=lambda: list(_SYNTH.get('snr_choices_db', [0.0])))
    normalize_outputs: bool = _SYNTH.get('normalize_outputs', True)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)

    _SECTIONS = {
        'io': ('clean_dir', 'noise_dir', 'noisy_dir', 'baseline_dir', 'finetuned_dir', 'systems', 'manifest',
               'output_dir'),
        'run': ('workers', 'seed', 'formats', 'truncate_to_shorter', 'pesq_command', 'improve_mode'),
        'synth': ('num_pairs', 'clip_seconds', 'snr_choices_db', 'normalize_outputs'),
    }

    def check(self) -> None:
        """
        校验与目录无关的设置。

        Raises:
            ConfigInvalid
        """
        if int(self.workers) < 1:
            raise ConfigInvalid(f"workers 必须 ≥ 1，收到 {self.workers}")
        bad = [f for f in self.formats if f not in VALID_FORMATS]
        if bad or not self.formats:
            raise ConfigInvalid(f"输出格式必须是 {VALID_FORMATS} 的非空子集，收到 {self.formats}")
        try:
            ImprovementMode(self.improve_mode)
        except ValueError as e:
            raise ConfigInvalid(f"未知的改进评估模式: {self.improve_mode}") from e
        if self.num_pairs < 1 or self.clip_seconds <= 0:
            raise ConfigInvalid(f"语料规模无效: {self.num_pairs} 段 × {self.clip_seconds} s")
        if not self.snr_choices_db and self.channel.snr_db is None:
            raise ConfigInvalid("snr_choices_db 为空且未指定固定 snr_db")

    def require_dirs(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if not value:
                raise ConfigInvalid(f"缺少必需的目录设置: {name}")
            if not Path(value).is_dir():
                raise ConfigInvalid(f"{name} 指向的目录不存在: {value}")

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {}
        for section, names in self._SECTIONS.items():
            d[section] = {name: getattr(self, name) for name in names}
        d['channel'] = self.channel.to_dict()
        d['loss_weights'] = self.loss_weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        unknown = set(d) - set(cls._SECTIONS) - {'channel', 'loss_weights'}
        if unknown:
            raise ConfigInvalid(f"未知的配置段: {sorted(unknown)}")
        kwargs: Dict[str, Any] = {}
        for section, names in cls._SECTIONS.items():
            values = d.get(section, {}) or {}
            extra = set(values) - set(names)
            if extra:
                raise ConfigInvalid(f"配置段 '{section}' 含未知键: {sorted(extra)}")
            kwargs.update(values)
        try:
            if 'channel' in d:
                kwargs['channel'] = ChannelConfig.from_dict(d['channel'])
            if 'loss_weights' in d:
                kwargs['loss_weights'] = LossWeights(**d['loss_weights'])
        except TypeError as e:
            raise ConfigInvalid(f"配置项无效: {e}") from e
        return cls(**kwargs)


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """
    读取运行配置。未给出路径时使用环境变量 SE_EVAL_CONFIG，两者都没有则返回默认值。

    Raises:
        ConfigInvalid: 文件不存在、不是合法 JSON 或含未知键。
    """
    path = path or os.getenv(getattr(配置, 'CONFIG_ENV_VAR', 'SE_EVAL_CONFIG'))
    if not path:
        return RunConfig()
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigInvalid(f"配置文件不存在: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"配置文件不是合法 JSON: {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigInvalid(f"配置文件顶层必须是对象: {path}")
    logger.info(f"已加载运行配置: {path}")
    return RunConfig.from_dict(data)


# --- 文件配对与输出 ---

def _收集WAV(directory: Optional[str]) -> Dict[str, Path]:
    if not directory:
        return {}
    return {p.stem: p for p in sorted(Path(directory).glob('*.wav'))}


def _读取清单(path: str) -> Dict[str, Dict[str, Path]]:
    """清单格式: {stem: {"clean": 路径, "<角色>": 路径}}，相对路径以清单所在目录为基准。"""
    base = Path(path).parent
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigInvalid(f"无法读取配对清单 {path}: {e}") from e
    return {stem: {role: base / p for role, p in roles.items()} for stem, roles in data.items()}


def 配对文件(cfg: RunConfig, roles: Dict[str, Optional[str]]) -> Dict[str, Dict[str, Optional[Path]]]:
    """
    按 stem 把纯净目录与各角色目录配对；缺失的一侧记为 None。

    Args:
        cfg (RunConfig): 运行配置，若设置了 manifest 则以清单为准。
        roles (dict): 角色名 → 目录。

    Returns:
        dict: stem → {'clean': 路径或 None, 角色: 路径或 None}，stem 按字典序排列。
    """
    if cfg.manifest:
        listed = _读取清单(cfg.manifest)
        return {stem: {role: listed[stem].get(role) for role in ['clean', *roles]} for stem in sorted(listed)}

    clean = _收集WAV(cfg.clean_dir)
    others = {role: _收集WAV(directory) for role, directory in roles.items()}
    stems = set(clean)
    for files in others.values():
        stems |= set(files)
    return {
        stem: {'clean': clean.get(stem), **{role: files.get(stem) for role, files in others.items()}}
        for stem in sorted(stems)
    }


def _格式化(value: Any, float_format: str) -> Any:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return 'n/a'
    if isinstance(value, (float, np.floating)):
        return float_format % value
    return value


def 写出表格(df: pd.DataFrame, out_dir: Path, name: str, formats: Sequence[str], payload: Dict[str, Any] = None) -> List[Path]:
    """
    按配置的格式写出一张表。JSON 写出 payload (若提供) 而不是表格本身。
    CSV 以 '#' 注释行、Markdown 以引用行开头，记录工具版本与配置摘要。

    Returns:
        list[Path]: 写出的文件。
    """
    float_format = _RUN.get('float_format', '%.6f')
    out_dir.mkdir(parents=True, exist_ok=True)
    text_df = df.map(lambda v: _格式化(v, float_format))
    header = _报告头()
    written = []
    if 'csv' in formats:
        path = out_dir / f"{name}.csv"
        with open(path, 'w', encoding='utf-8', newline='') as f:
            for key, value in header.items():
                f.write(f"# {key}: {value}\n")
            text_df.to_csv(f)
        written.append(path)
    if 'markdown' in formats:
        path = out_dir / f"{name}.md"
        preamble = ' '.join(f"{key}=`{value}`" for key, value in header.items())
        path.write_text(f"> {preamble}\n\n{text_df.to_markdown()}\n", encoding='utf-8')
        written.append(path)
    if 'json' in formats:
        path = out_dir / f"{name}.json"
        body = payload if payload is not None else df.to_dict(orient='index')
        with open(path, 'w', encoding='utf-8') as f:
            json.dump({**header, **body}, f, ensure_ascii=False, indent=4)
        written.append(path)
    return written


def _报告头() -> Dict[str, Any]:
    return {
        'toolkit': getattr(配置, 'TOOLKIT_NAME', 'se-eval-toolkit'),
        'toolkit_version': getattr(配置, 'TOOLKIT_VERSION', 'unknown'),
        'config_digest': config_digest(),
    }


def _并行执行(tasks: Dict[Any, Callable[[], Dict[str, Any]]], workers: int) -> Dict[Any, Dict[str, Any]]:
    """逐任务并行执行，单个任务出错只记录在其结果里。"""
    results: Dict[Any, Dict[str, Any]] = {}
    with ThreadPoolExecutor(max_workers=workers) as executor:
        future_to_key = {executor.submit(fn): key for key, fn in tasks.items()}
        for future in as_completed(future_to_key):
            key = future_to_key[future]
            try:
                results[key] = future.result()
            except ToolkitError as e:
                logger.warning(f"任务 {key} 失败: {e}")
                results[key] = e.to_status()
            except Exception as e:
                logger.error(f"任务 {key} 发生未预期错误: {e}", exc_info=True)
                results[key] = {'status': 'error', 'error': str(e)}
    return results


def _对齐长度(clean: Waveform, other: Waveform, truncate: bool) -> Tuple[Waveform, Waveform]:
    if other.sample_rate_hz != clean.sample_rate_hz:
        other = resample(other, clean.sample_rate_hz)
    if len(clean) != len(other):
        if not truncate:
            raise LengthMismatch(f"长度不一致 ({len(clean)} vs {len(other)})，可使用 --truncate-to-shorter")
        n = min(len(clean), len(other))
        logger.info(f"按较短一侧截断到 {n} 采样")
        clean, other = clean.with_samples(clean.samples[:n]), other.with_samples(other.samples[:n])
    return clean, other


# --- eval ---

def _评估单对(clean_path: Path, degraded_path: Path, cfg: RunConfig) -> Dict[str, Any]:
    clean, _ = load_wav(clean_path)
    degraded, _ = load_wav(degraded_path)
    clean, degraded = _对齐长度(clean, degraded, cfg.truncate_to_shorter)
    report = evaluate_pair(clean, degraded, cfg.pesq_command)
    status = 'failed' if report.failed else 'ok'
    return {'status': status, 'metrics': report.rows(), 'metric_status': report.to_dict()['status'],
            'error': '; '.join(f"{k}: {v}" for k, v in sorted(report.errors.items()))}


def run_eval(cfg: RunConfig) -> int:
    """
    对每个系统目录计算逐文件指标与系统均值表 (行: 指标，列: 系统)。

    Returns:
        int: 没有任何文件对失败时为 0，否则为 1。
    """
    cfg.check()
    if not cfg.manifest:
        cfg.require_dirs('clean_dir')
        for name, directory in cfg.systems.items():
            if not Path(directory).is_dir():
                raise ConfigInvalid(f"系统 '{name}' 的目录不存在: {directory}")
    if not cfg.systems:
        raise ConfigInvalid("至少需要一个待评估系统目录")

    pairs = 配对文件(cfg, dict(cfg.systems))
    tasks: Dict[Tuple[str, str], Callable[[], Dict[str, Any]]] = {}
    rows: Dict[Tuple[str, str], Dict[str, Any]] = {}
    for stem, files in pairs.items():
        for system in sorted(cfg.systems):
            clean_path, degraded_path = files['clean'], files.get(system)
            if clean_path is None or degraded_path is None:
                missing = 'clean' if clean_path is None else system
                rows[(stem, system)] = MissingPair(f"{stem} 缺少 {missing} 文件").to_status()
                continue
            tasks[(stem, system)] = (lambda c=clean_path, d=degraded_path: _评估单对(c, d, cfg))

    logger.info(f"开始评估 {len(tasks)} 个文件对 ({len(cfg.systems)} 个系统, {cfg.workers} 个工作线程)")
    rows.update(_并行执行(tasks, cfg.workers))

    per_file = []
    for stem, system in sorted(rows):
        row = rows[(stem, system)]
        record = {'stem': stem, 'system': system, 'status': row.get('status', 'error')}
        record.update(row.get('metrics') or {m: None for m in METRIC_ROWS})
        record['error'] = row.get('error', '')
        per_file.append(record)
    per_file_df = pd.DataFrame(per_file, columns=['stem', 'system', 'status', *METRIC_ROWS, 'error']).set_index(['stem', 'system'])

    summary: Dict[str, Dict[str, Optional[float]]] = {}
    for system in sorted(cfg.systems):
        subset = [r for r in per_file if r['system'] == system and r['status'] in ('ok', 'failed')]
        summary[system] = {}
        for metric in METRIC_ROWS:
            values = [r[metric] for r in subset if r[metric] is not None]
            summary[system][metric] = float(np.mean(values)) if values else None
    summary_df = pd.DataFrame(summary, index=list(METRIC_ROWS), columns=sorted(cfg.systems))

    failures = sum(1 for r in per_file if r['status'] != 'ok')
    header = _报告头()
    out_dir = Path(cfg.output_dir)
    写出表格(summary_df, out_dir, 'eval_summary', cfg.formats,
             {**header, 'systems': sorted(cfg.systems), 'summary': summary, 'failures': failures})
    写出表格(per_file_df, out_dir, 'eval_per_file', cfg.formats,
             {**header, 'rows': [{**r, 'metric_status': rows[(r['stem'], r['system'])].get('metric_status')}
                                 for r in per_file]})
    logger.info(f"评估完成: {len(per_file)} 行, 失败 {failures} 行, 报告写入 {out_dir}")
    return 0 if failures == 0 else 1


# --- synth ---

def _合成单对(index: int, clean_path: Path, noise_path: Path, cfg: RunConfig) -> Dict[str, Any]:
    sample_rate = getattr(配置, 'AUDIO_CONFIG', {}).get('canonical_sample_rate_hz', 16000)
    num_samples = int(round(cfg.clip_seconds * sample_rate))

    clean, _ = load_wav(clean_path)
    clean = resample(clean, sample_rate)
    clean = gain_normalize(clean.with_samples(np.resize(clean.samples, num_samples)))
    noise, _ = load_wav(noise_path)
    noise = resample(noise, sample_rate)

    snr_db = cfg.channel.snr_db
    if snr_db is None:
        raw = int(make_rng(cfg.seed, index, STAGE_SNR).bit_generator.random_raw())
        snr_db = float(cfg.snr_choices_db[raw % len(cfg.snr_choices_db)])
    channel = replace(cfg.channel, snr_db=snr_db, seed=cfg.seed)
    degraded, record = simulate_transmission(clean, noise, channel, file_index=index)
    if cfg.normalize_outputs:
        degraded = gain_normalize(degraded)

    stem = f"pair_{index:05d}"
    out_dir = Path(cfg.output_dir)
    encoding = Encoding(getattr(配置, 'AUDIO_CONFIG', {}).get('default_encoding', 'float32'))
    save_wav(clean, out_dir / 'clean' / f"{stem}.wav", encoding)
    save_wav(degraded, out_dir / 'degraded' / f"{stem}.wav", encoding)
    sidecar = {**record.to_dict(), 'clean_source': clean_path.name, 'noise_source': noise_path.name,
               'normalized': cfg.normalize_outputs}
    try:
        with open(out_dir / 'degraded' / f"{stem}.json", 'w', encoding='utf-8') as f:
            json.dump(sidecar, f, ensure_ascii=False, indent=4)
    except OSError as e:
        raise IoError(f"写入 {stem} 的传输记录失败: {e}") from e
    return {'status': 'ok', 'stem': stem, 'snr_db': snr_db, 'frames_dropped': record.frames_dropped}


def run_synth(cfg: RunConfig) -> int:
    """
    合成 (纯净, 退化) 语料对，每个退化文件旁写一个 TransmissionRecord JSON。

    Raises:
        EmptyPool: 纯净或噪声池为空，此时不写出任何文件。
    """
    cfg.check()
    cfg.require_dirs('clean_dir', 'noise_dir')
    clean_pool = sorted(_收集WAV(cfg.clean_dir).values())
    noise_pool = sorted(_收集WAV(cfg.noise_dir).values())
    if not clean_pool:
        raise EmptyPool(f"纯净语音池为空: {cfg.clean_dir}")
    if not noise_pool:
        raise EmptyPool(f"噪声池为空: {cfg.noise_dir}")

    out_dir = Path(cfg.output_dir)
    (out_dir / 'clean').mkdir(parents=True, exist_ok=True)
    (out_dir / 'degraded').mkdir(parents=True, exist_ok=True)

    tasks = {}
    for i in range(cfg.num_pairs):
        raw = int(make_rng(cfg.seed, i, STAGE_NOISE_PICK).bit_generator.random_raw())
        noise_path = noise_pool[raw % len(noise_pool)]
        tasks[i] = (lambda i=i, c=clean_pool[i % len(clean_pool)], n=noise_path: _合成单对(i, c, n, cfg))

    logger.info(f"开始合成 {cfg.num_pairs} 对语料 ({cfg.clip_seconds} s, 条件 '{cfg.channel.condition}', 种子 {cfg.seed})")
    results = _并行执行(tasks, cfg.workers)
    manifest = [{'index': i, **results[i]} for i in sorted(results)]
    with open(out_dir / 'synth_manifest.json', 'w', encoding='utf-8') as f:
        json.dump({**_报告头(), 'seed': cfg.seed, 'condition': cfg.channel.condition, 'pairs': manifest},
                  f, ensure_ascii=False, indent=4)
    failures = sum(1 for r in manifest if r.get('status') != 'ok')
    logger.info(f"合成完成: 成功 {len(manifest) - failures} 对, 失败 {failures} 对")
    return 0 if failures == 0 else 1


# --- improve ---

_IMPROVE_ROLES = ('noisy', 'baseline', 'finetuned')


def _提取描述符(w: Waveform, mode: ImprovementMode):
    matrix = extract_tap(w)
    return matrix if mode is ImprovementMode.LLD_TIMESERIES else compute_functionals(matrix)


def _改进单组(files: Dict[str, Path], cfg: RunConfig) -> Dict[str, Any]:
    mode = ImprovementMode(cfg.improve_mode)
    roles = ('clean', *_IMPROVE_ROLES)
    waves = {role: load_wav(files[role])[0] for role in roles}
    rate = waves['clean'].sample_rate_hz
    waves = {role: resample(w, rate) for role, w in waves.items()}
    lengths = {role: len(w) for role, w in waves.items()}
    if len(set(lengths.values())) > 1:
        if not cfg.truncate_to_shorter:
            raise DimensionMismatch(f"各版本长度不一致: {lengths}")
        n = min(lengths.values())
        waves = {role: w.with_samples(w.samples[:n]) for role, w in waves.items()}
    group = tuple(_提取描述符(waves[role], mode) for role in roles)
    report = improvement_report(*group, mode=mode)
    return {'status': 'ok', 'group': group, 'report': report}


def run_improve(cfg: RunConfig) -> int:
    """
    逐 stem 提取声学参数并计算改进报告，再把全部成功的组合并成一份汇总报告。

    Returns:
        int: 没有失败的 stem 时为 0。
    """
    cfg.check()
    if not cfg.manifest:
        cfg.require_dirs('clean_dir', 'noisy_dir', 'baseline_dir', 'finetuned_dir')
    pairs = 配对文件(cfg, {'noisy': cfg.noisy_dir, 'baseline': cfg.baseline_dir, 'finetuned': cfg.finetuned_dir})

    results: Dict[str, Dict[str, Any]] = {}
    tasks = {}
    for stem, files in pairs.items():
        missing = [role for role in ('clean', *_IMPROVE_ROLES) if files.get(role) is None]
        if missing:
            results[stem] = MissingPair(f"{stem} 缺少 {', '.join(missing)}").to_status()
            continue
        tasks[stem] = (lambda f=files: _改进单组(f, cfg))
    logger.info(f"开始改进评估: {len(tasks)} 组 (模式 {cfg.improve_mode})")
    results.update(_并行执行(tasks, cfg.workers))

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {**_报告头(), 'mode': cfg.improve_mode}
    per_stem = []
    groups = []
    for stem in sorted(results):
        row = results[stem]
        entry = {'stem': stem, 'status': row.get('status', 'error')}
        if 'report' in row:
            entry['report'] = row['report'].to_dict()
            groups.append(row['group'])
        else:
            entry['error'] = row.get('error', '')
        per_stem.append(entry)
    with open(out_dir / 'improve_per_stem.json', 'w', encoding='utf-8') as f:
        json.dump({**header, 'stems': per_stem}, f, ensure_ascii=False, indent=4)

    failures = sum(1 for e in per_stem if e['status'] != 'ok')
    try:
        pooled: ImprovementReport = pooled_improvement_report(groups, cfg.improve_mode)
    except EmptyPool as e:
        logger.error(f"没有可合并的组，跳过汇总报告: {e}")
        return 1
    写出表格(pooled.to_frame(), out_dir, 'improve_pooled', cfg.formats, {**header, **pooled.to_dict()})
    logger.info(f"改进评估完成: 微调优于基线的参数 {pooled.params_finetuned_beats_baseline} 个, 失败 {failures} 组")
    return 0 if failures == 0 else 1


# --- tap / loss / config init ---

def run_tap(paths: Sequence[str], out_dir: str, npz: bool = False, functionals: bool = False) -> int:
    """逐文件导出 TapMatrix CSV (可选 npz 与泛函向量 JSON)。"""
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    failures = 0
    for path in sorted(paths):
        stem = Path(path).stem
        try:
            matrix = extract_tap(load_wav(path)[0])
            matrix.to_csv(target / f"{stem}_tap.csv")
            if npz:
                matrix.to_npz(target / f"{stem}_tap.npz")
            if functionals:
                with open(target / f"{stem}_functionals.json", 'w', encoding='utf-8') as f:
                    json.dump(compute_functionals(matrix).to_dict(), f, ensure_ascii=False, indent=4)
            logger.info(f"{stem}: {matrix.num_frames} 帧已导出")
        except ToolkitError as e:
            logger.error(f"{stem} 参数提取失败: {e}")
            failures += 1
    return 0 if failures == 0 else 1


def run_loss(clean_path: str, enhanced_path: str, weights: LossWeights, noisy_path: Optional[str] = None,
             sweep: bool = False) -> pd.DataFrame:
    """
    计算一对信号的损失分解；提供带噪信号时同时给出 cIRM 形式的 FullSubNet 损失。

    Returns:
        pd.DataFrame: 每行一种 (公式, 权重) 组合。
    """
    clean, _ = load_wav(clean_path)
    enhanced, _ = load_wav(enhanced_path)
    clean, enhanced = _对齐长度(clean, enhanced, truncate=False)
    breakdowns = [demucs_loss(clean, enhanced, weights)]
    if noisy_path:
        noisy, _ = load_wav(noisy_path)
        clean, noisy = _对齐长度(clean, noisy, truncate=False)
        noisy_spec = stft(noisy)
        target = compress_cirm(cirm_from_specs(noisy_spec, stft(clean)))
        predicted = compress_cirm(cirm_from_specs(noisy_spec, stft(enhanced)))
        breakdowns.append(fullsubnet_loss(predicted, target, extract_tap(clean), extract_tap(enhanced), weights))
    if sweep:
        breakdowns = [row for base in breakdowns for row in loss_ablation_sweep(base)]
    records = []
    for b in breakdowns:
        d = b.to_dict()
        records.append({'formula': d['formula'], **d.pop('weights'),
                        **{k: d[k] for k in ('l1', 'stft', 'tap', 'cirm', 'total')}})
    return pd.DataFrame(records)


def 写出默认配置(path: Optional[str], force: bool = False) -> int:
    payload = RunConfig().to_dict()
    text = json.dumps(payload, ensure_ascii=False, indent=4)
    if not path:
        print(text)
        return 0
    target = Path(path)
    if target.exists() and not force:
        logger.error(f"{target} 已存在，使用 --force 覆盖")
        return 1
    target.write_text(text + '\n', encoding='utf-8')
    logger.info(f"默认配置已写入 {target}")
    return 0


# --- 参数解析 ---

def _公共参数() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None,
                        help=f"运行配置 JSON 路径 (默认读取环境变量 {getattr(配置, 'CONFIG_ENV_VAR', 'SE_EVAL_CONFIG')})")
    common.add_argument('--seed', type=int, default=None, help=f"随机种子 (默认 {_RUN.get('seed', 42)})")
    common.add_argument('--workers', type=int, default=None, help=f"工作线程数 (默认 {_RUN.get('workers', 4)})")
    common.add_argument('--format', dest='formats', action='append', choices=VALID_FORMATS, default=None,
                        help="输出格式，可重复指定 (默认 csv/json/markdown 全部)")
    common.add_argument('--truncate-to-shorter', action='store_true', default=None,
                        help="长度不一致时截断到较短一侧 (默认报错)")
    common.add_argument('--pesq-cmd', type=str, default=None,
                        help="外部 PESQ 命令模板，使用 {clean} 与 {degraded} 占位")
    common.add_argument('--out-dir', type=str, default=None, help="输出目录")
    common.add_argument('--manifest', type=str, default=None, help="可选的配对清单 JSON，覆盖按 stem 配对")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _公共参数()
    parser = argparse.ArgumentParser(prog='se-eval', description='语音增强评估与损失工具包。')
    sub = parser.add_subparsers(dest='command', required=True)

    p_synth = sub.add_parser('synth', parents=[common], help='合成带噪传输语料')
    p_synth.add_argument('--clean', type=str, help='纯净语音目录')
    p_synth.add_argument('--noise', type=str, help='噪声目录')
    p_synth.add_argument('--preset', choices=sorted(getattr(配置, 'SYNTH_PRESETS', {})), help='语料规模预设')
    p_synth.add_argument('--num-pairs', type=int, help='生成的语料对数')
    p_synth.add_argument('--clip-seconds', type=float, help='每段时长 (秒)')
    p_synth.add_argument('--snr', type=float, help='固定 SNR (dB)，缺省时从 snr_choices_db 中抽取')
    p_synth.add_argument('--condition', type=str, help='写入传输记录的条件标签，如 auto 或 low')

    p_eval = sub.add_parser('eval', parents=[common], help='计算客观指标表')
    p_eval.add_argument('--clean', type=str, help='纯净参考目录')
    p_eval.add_argument('--system', action='append', default=None, metavar='NAME=DIR',
                        help='待评估系统目录，可重复指定')

    p_improve = sub.add_parser('improve', parents=[common], help='计算声学改进报告')
    p_improve.add_argument('--clean', type=str)
    p_improve.add_argument('--noisy', type=str)
    p_improve.add_argument('--baseline', type=str)
    p_improve.add_argument('--finetuned', type=str)
    p_improve.add_argument('--mode', choices=[m.value for m in ImprovementMode])

    p_tap = sub.add_parser('tap', parents=[common], help='导出声学参数矩阵 CSV')
    p_tap.add_argument('paths', nargs='+', help='WAV 文件')
    p_tap.add_argument('--npz', action='store_true', help='同时写出 npz 二进制容器')
    p_tap.add_argument('--functionals', action='store_true', help='同时写出泛函向量 JSON')

    p_loss = sub.add_parser('loss', parents=[common], help='计算一对信号的损失分解')
    p_loss.add_argument('clean', type=str)
    p_loss.add_argument('enhanced', type=str)
    p_loss.add_argument('--noisy', type=str, help='带噪输入，提供时额外计算 FullSubNet 损失')
    p_loss.add_argument('--lambda1', type=float)
    p_loss.add_argument('--lambda2', type=float)
    p_loss.add_argument('--gamma', type=float)
    p_loss.add_argument('--sweep', action='store_true', help='在消融权重网格上展开')

    p_config = sub.add_parser('config', help='配置文件工具')
    config_sub = p_config.add_subparsers(dest='config_command', required=True)
    p_init = config_sub.add_parser('init', help='写出全部默认值')
    p_init.add_argument('--out', type=str, default=None, help='目标路径，缺省打印到标准输出')
    p_init.add_argument('--force', action='store_true', help='覆盖已存在的文件')
    return parser


def _解析系统(specs: Optional[List[str]]) -> Dict[str, str]:
    systems = {}
    for spec in specs or []:
        name, sep, directory = spec.partition('=')
        if not sep or not name or not directory:
            raise ConfigInvalid(f"--system 需要 NAME=DIR 形式，收到 '{spec}'")
        systems[name] = directory
    return systems


def 合并参数(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """命令行中显式给出的参数覆盖配置文件。"""
    overrides = {
        'seed': args.seed,
        'workers': args.workers,
        'formats': args.formats,
        'truncate_to_shorter': args.truncate_to_shorter,
        'pesq_command': args.pesq_cmd,
        'output_dir': args.out_dir,
        'manifest': args.manifest,
        'clean_dir': getattr(args, 'clean', None) if args.command != 'loss' else None,
    }
    if args.command == 'synth':
        preset = getattr(配置, 'SYNTH_PRESETS', {}).get(args.preset, {}) if args.preset else {}
        overrides.update({
            'noise_dir': args.noise,
            'num_pairs': args.num_pairs if args.num_pairs is not None else preset.get('num_pairs'),
            'clip_seconds': args.clip_seconds if args.clip_seconds is not None else preset.get('clip_seconds'),
        })
        channel_changes = {k: v for k, v in (('snr_db', args.snr), ('condition', args.condition)) if v is not None}
        if channel_changes:
            cfg = replace(cfg, channel=replace(cfg.channel, **channel_changes))
    elif args.command == 'eval':
        systems = _解析系统(args.system)
        if systems:
            overrides['systems'] = systems
    elif args.command == 'improve':
        overrides.update({'noisy_dir': args.noisy, 'baseline_dir': args.baseline,
                          'finetuned_dir': args.finetuned, 'improve_mode': args.mode})
    elif args.command == 'loss':
        changes = {k: v for k, v in (('lambda1', args.lambda1), ('lambda2', args.lambda2), ('gamma', args.gamma))
                   if v is not None}
        if changes:
            cfg = replace(cfg, loss_weights=replace(cfg.loss_weights, **changes))
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == 'config':
        return 写出默认配置(args.out, args.force)

    try:
        cfg = 合并参数(load_run_config(args.config), args)
        cfg.check()
        if args.command == 'synth':
            return run_synth(cfg)
        if args.command == 'eval':
            return run_eval(cfg)
        if args.command == 'improve':
            return run_improve(cfg)
        if args.command == 'tap':
            return run_tap(args.paths, cfg.output_dir, npz=args.npz, functionals=args.functionals)
        if args.command == 'loss':
            df = run_loss(args.clean, args.enhanced, cfg.loss_weights, args.noisy, args.sweep)
            if args.out_dir:
                写出表格(df, Path(cfg.output_dir), 'loss_breakdown', cfg.formats,
                         {**_报告头(), 'rows': df.to_dict(orient='records')})
            else:
                print(df.to_markdown(index=False, floatfmt='.6f'))
            return 0
    except ConfigInvalid as e:
        logger.error(f"配置无效: {e}")
        return 2
    except EmptyPool as e:
        logger.error(f"输入池为空: {e}")
        return 1
    except ToolkitError as e:
        logger.error(f"{e.code}: {e}")
        return 1
    parser.error(f"未知命令: {args.command}")
    return 2


if __name__ == '__main__':
    sys.exit(main())
