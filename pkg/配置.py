'''
配置管理模块

存储和管理工具包的配置信息：采样率、STFT 参数、声学参数提取、损失权重、客观指标、信道模拟和批处理运行参数。
运行时可通过环境变量或 .env 文件覆盖部分设置，批处理运行配置则由 JSON 配置文件提供 (见 命令行入口.py)。
'''

import os

from dotenv import load_dotenv

# 当前目录下存在 .env 时加载，其余情况依赖系统环境变量
_dotenv_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), '.env')
if os.path.exists(_dotenv_path):
    load_dotenv(dotenv_path=_dotenv_path)

TOOLKIT_NAME = "se-eval-toolkit"
TOOLKIT_VERSION = "0.3.0"

# --- 日志配置 ---
LOG_LEVEL = os.getenv("SE_EVAL_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("SE_EVAL_LOG_FILE", "logs/se_eval.log")

# 默认运行配置文件路径由此环境变量提供
CONFIG_ENV_VAR = "SE_EVAL_CONFIG"

# 报告输出路径
REPORT_PATH = os.getenv("SE_EVAL_REPORT_PATH", "评估报告/")

# --- 音频读写 ---
AUDIO_CONFIG = {
    'canonical_sample_rate_hz': 16000,
    'target_dbfs_rms': -25.0,       # 增益归一化目标 (RMS, dBFS)
    'silence_floor_dbfs': -100.0,   # 低于此 RMS 视为静音输入
    'resample_window': ('kaiser', 10.0),  # 多相重采样所用的 FIR 窗
    'default_encoding': 'float32',
}

# --- STFT 默认参数 (16 kHz 下 F = 257) ---
STFT_CONFIG = {
    'fft_size': 512,
    'hop': 256,
    'win_length': 512,
    'window': 'hann',
    'center_padding': True,
}

# --- 滤波器组 ---
FILTERBANK_CONFIG = {
    'third_octave_bands': 15,
    'third_octave_min_hz': 150.0,
    'critical_bands': 20,
    'critical_low_hz': 150.0,
    'critical_high_hz': 7000.0,
    'envelope_cutoff_hz': 25.0,
    'envelope_rate_hz': 100,
}

# --- 时域声学参数 (TAP) ---
TAP_CONFIG = {
    'frame_rate_hz': 100,           # 10 ms 帧移
    'window_s': 0.025,              # 25 ms 分析窗
    'f0_min_hz': 60.0,
    'f0_max_hz': 500.0,
    'voicing_threshold': 0.5,       # 归一化互相关峰值门限
    'silence_rms': 1e-4,            # 帧 RMS 低于此值直接判为清音/静音
    'lpc_order': 12,
    'pre_emphasis': 0.97,
    'formant_min_hz': 90.0,
    'formant_max_bandwidth_hz': 400.0,
    'spectrum_fft_size': 1024,
    'loudness_exponent': 0.3,
    'loudness_peak_prominence': 0.05,  # 相对整段最大响度
}

# --- 损失函数 ---
LOSS_CONFIG = {
    'mrstft_resolutions': [
        # (fft_size, hop, win_length)
        (512, 50, 240),
        (1024, 120, 600),
        (2048, 240, 1200),
    ],
    'mrstft_window': 'hann',
    'mrstft_magnitude_floor': 1e-7,
    'cirm_k': 10.0,
    'cirm_c': 0.1,
    'cirm_energy_floor': 1e-10,
    'default_lambda1': 0.75,
    'default_lambda2': 0.5,
    'default_gamma': 0.03,
}

# 损失权重消融网格
DEMUCS_ABLATION_GRID = [
    (1.0, 0.8),
    (1.0, 0.5),
    (1.0, 0.0),
    (0.8, 0.5),
    (0.75, 0.5),
    (0.5, 0.5),
]
FULLSUBNET_ABLATION_GRID = [1.0, 0.3, 0.1, 0.03, 0.01, 0.0]

# --- 客观指标 ---
METRIC_CONFIG = {
    'stoi': {
        'sample_rate_hz': 10000,
        'frame_length': 256,
        'fft_size': 512,
        'num_bands': 15,
        'min_freq_hz': 150.0,
        'segment_frames': 30,
        'clip_db': -15.0,
        'dynamic_range_db': 40.0,
    },
    'llr': {
        'order': 10,
        'frame_s': 0.025,
        'hop_fraction': 0.25,
        'aggregation': 'trimmed',   # trimmed | mean | median
        'trim_keep': 0.95,
        'frame_clip': 2.0,
    },
    'csii': {
        'fft_size': 512,
        'win_length': 512,
        'hop': 128,
        'window': 'hann',
        'region_edges_db': (0.0, -10.0, -30.0),
        'min_region_frames': 3,
        'sdr_clip_db': 15.0,
    },
    'ncm': {
        'sdr_clip_db': 15.0,
    },
    'pesq_timeout_s': 30.0,
}

# SII 式频带重要度表 (中心频率 Hz, 相对重要度)，按频带中心插值后归一化
BAND_IMPORTANCE_TABLE = [
    (150, 0.0103), (250, 0.0261), (350, 0.0419), (450, 0.0577),
    (570, 0.0577), (700, 0.0577), (840, 0.0577), (1000, 0.0577),
    (1170, 0.0577), (1370, 0.0577), (1600, 0.0577), (1850, 0.0577),
    (2150, 0.0577), (2500, 0.0577), (2900, 0.0577), (3400, 0.0460),
    (4000, 0.0343), (4800, 0.0226), (5800, 0.0110), (7000, 0.0062),
    (8500, 0.0020),
]

# --- 信道模拟 ---
CHANNEL_CONFIG = {
    'snr_db': None,
    'bandpass_enabled': True,
    'low_hz': 300.0,
    'high_hz': 3400.0,
    'filter_order': 4,
    'codec': 'mu_law',      # none | mu_law
    'mu': 255,
    'loss_model': 'none',   # none | bernoulli | gilbert_elliott
    'frame_ms': 20.0,
    'ramp_ms': 2.0,
    'p_loss': 0.0,
    'p_good_to_bad': 0.0,
    'p_bad_to_good': 1.0,
    'seed': 0,
    'condition': 'low',
}

# --- 语料合成 ---
SYNTH_CONFIG = {
    'num_pairs': 10,
    'clip_seconds': 10.0,
    'snr_choices_db': [-5.0, 0.0, 5.0, 10.0, 15.0],
    'normalize_outputs': True,
}

# 语料规模预设：训练 400 段 30 s，测试 150 段 10 s
SYNTH_PRESETS = {
    'train': {'num_pairs': 400, 'clip_seconds': 30.0},
    'test': {'num_pairs': 150, 'clip_seconds': 10.0},
}

# --- 批处理运行 ---
RUN_CONFIG = {
    'workers': 4,
    'seed': 42,
    'formats': ['csv', 'json', 'markdown'],
    'truncate_to_shorter': False,
    'pesq_command': None,
    'improve_mode': 'lld_timeseries',  # lld_timeseries | functional_vector
    'float_format': '%.6f',
}
