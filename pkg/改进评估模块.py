'''
改进评估模块

按参数计算相对纯净参考的 MAE，再用 I = 1 − MAE_增强 / MAE_带噪 给出基线与微调模型的声学改进分数。
同时支持逐帧参数矩阵 (lld_timeseries) 与泛函向量 (functional_vector) 两种输入。
'''

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import 配置
from 日志设置 import 获取日志记录器
from 异常定义 import DimensionMismatch, EmptyPool, KindMismatch, UndefinedBaseline
from 声学参数模块 import FUNCTIONAL_NAMES, TAP_PARAM_NAMES, FunctionalVector, TapMatrix

logger = 获取日志记录器(__name__)

Descriptor = Union[TapMatrix, FunctionalVector]


class ImprovementMode(str, Enum):
    LLD_TIMESERIES = "lld_timeseries"
    FUNCTIONAL_VECTOR = "functional_vector"


def mae_over_time(a: TapMatrix, b: TapMatrix) -> np.ndarray:
    """逐参数的时间轴平均绝对误差，长度为参数个数。"""
    if a.values.shape != b.values.shape:
        raise DimensionMismatch(f"矩阵形状不一致: {a.values.shape} vs {b.values.shape}")
    if a.num_frames == 0:
        raise DimensionMismatch("矩阵不含任何帧")
    return np.mean(np.abs(a.values - b.values), axis=0)


def improvement_scores(mae_n: float, mae_b: float, mae_f: float) -> Tuple[float, float]:
    """
    Returns:
        (i_b, i_f): 基线与微调模型的改进分数，最大为 1，劣化时为负。

    Raises:
        UndefinedBaseline: mae_n 为 0，带噪信号在该参数上已与纯净一致。
    """
    if min(mae_n, mae_b, mae_f) < 0:
        raise ValueError(f"MAE 不能为负: n={mae_n}, b={mae_b}, f={mae_f}")
    if mae_n == 0:
        raise UndefinedBaseline("带噪 MAE 为 0，改进分数无定义")
    return 1.0 - mae_b / mae_n, 1.0 - mae_f / mae_n


@dataclass(frozen=True)
class ParameterImprovement:
    param: str
    mae_n: float
    mae_b: float
    mae_f: float
    i_b: Optional[float]
    i_f: Optional[float]

    @property
    def defined(self) -> bool:
        return self.i_b is not None

    @property
    def i_f_minus_i_b(self) -> Optional[float]:
        return None if not self.defined else self.i_f - self.i_b

    @property
    def relative_mae_reduction(self) -> Optional[float]:
        """(mae_b − mae_f) / mae_b；基线 MAE 为 0 时无定义。"""
        return None if self.mae_b == 0 else (self.mae_b - self.mae_f) / self.mae_b

    def to_dict(self) -> dict:
        return {
            'param': self.param,
            'mae_n': self.mae_n,
            'mae_b': self.mae_b,
            'mae_f': self.mae_f,
            'i_b': self.i_b,
            'i_f': self.i_f,
            'i_f_minus_i_b': self.i_f_minus_i_b,
            'relative_mae_reduction': self.relative_mae_reduction,
            'status': 'ok' if self.defined else UndefinedBaseline.code,
        }


@dataclass(frozen=True)
class ImprovementReport:
    mode: ImprovementMode
    records: List[ParameterImprovement] = field(default_factory=list)
    num_items: int = 1

    @property
    def params_finetuned_beats_baseline(self) -> int:
        return sum(1 for r in self.records if r.defined and r.i_f > r.i_b)

    @property
    def undefined_params(self) -> List[str]:
        return [r.param for r in self.records if not r.defined]

    def record(self, param: str) -> ParameterImprovement:
        for r in self.records:
            if r.param == param:
                return r
        raise KeyError(param)

    def to_dict(self) -> dict:
        return {
            'mode': self.mode.value,
            'num_items': self.num_items,
            'params_finetuned_beats_baseline': self.params_finetuned_beats_baseline,
            'undefined_params': self.undefined_params,
            'records': [r.to_dict() for r in self.records],
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.records]).set_index('param')

    def to_csv(self, path: Union[str, Path]) -> None:
        float_format = getattr(配置, 'RUN_CONFIG', {}).get('float_format', '%.6f')
        self.to_frame().to_csv(path, float_format=float_format)

    def to_markdown(self) -> str:
        """左右两栏 (基线改进 / 微调改进) 加两种相对差值。"""
        columns = ['i_b', 'i_f', 'i_f_minus_i_b', 'relative_mae_reduction']
        return self.to_frame()[columns].to_markdown(floatfmt='.6f')


def _描述符矩阵(item: Descriptor) -> Tuple[np.ndarray, ImprovementMode]:
    if isinstance(item, TapMatrix):
        return item.values, ImprovementMode.LLD_TIMESERIES
    if isinstance(item, FunctionalVector):
        return item.values[np.newaxis, :], ImprovementMode.FUNCTIONAL_VECTOR
    raise KindMismatch(f"不支持的输入类型: {type(item).__name__}")


def _逐参数MAE(clean: np.ndarray, other: np.ndarray) -> np.ndarray:
    if clean.shape != other.shape:
        raise DimensionMismatch(f"维度不一致: {clean.shape} vs {other.shape}")
    return np.mean(np.abs(clean - other), axis=0)


def _构建报告(mode: ImprovementMode, mae_n: np.ndarray, mae_b: np.ndarray, mae_f: np.ndarray,
             num_items: int) -> ImprovementReport:
    names = TAP_PARAM_NAMES if mode is ImprovementMode.LLD_TIMESERIES else FUNCTIONAL_NAMES
    records = []
    for name, n, b, f in zip(names, mae_n, mae_b, mae_f):
        try:
            i_b, i_f = improvement_scores(float(n), float(b), float(f))
        except UndefinedBaseline:
            i_b = i_f = None
        records.append(ParameterImprovement(name, float(n), float(b), float(f), i_b, i_f))
    report = ImprovementReport(mode, records, num_items)
    if report.undefined_params:
        logger.info(f"{len(report.undefined_params)} 个参数的带噪 MAE 为 0，改进分数标记为无定义")
    return report


def improvement_report(clean: Descriptor, noisy: Descriptor, baseline: Descriptor, finetuned: Descriptor,
                       mode: Optional[Union[ImprovementMode, str]] = None) -> ImprovementReport:
    """
    对一个文件组 (纯净 / 带噪 / 基线增强 / 微调增强) 计算逐参数改进报告。

    Args:
        clean, noisy, baseline, finetuned: 同类型、同维度的 TapMatrix 或 FunctionalVector。
        mode: 可选，显式声明的模式；与输入类型不符时报 KindMismatch。

    Returns:
        ImprovementReport

    Raises:
        KindMismatch: 四个输入类型不一致，或与 mode 不符。
        DimensionMismatch: 维度不一致。
    """
    return pooled_improvement_report([(clean, noisy, baseline, finetuned)], mode)


def pooled_improvement_report(groups: Sequence[Tuple[Descriptor, Descriptor, Descriptor, Descriptor]],
                              mode: Optional[Union[ImprovementMode, str]] = None) -> ImprovementReport:
    """
    多个文件组合并成一份报告：时间轴 (或泛函向量) 首尾拼接后计算 MAE，即按帧加权。

    Raises:
        EmptyPool: 没有任何文件组。
    """
    if not groups:
        raise EmptyPool("没有可合并的文件组")
    expected = ImprovementMode(mode) if mode is not None else None
    stacks: Dict[str, List[np.ndarray]] = {'clean': [], 'noisy': [], 'baseline': [], 'finetuned': []}
    for group in groups:
        if len(group) != 4:
            raise ValueError("每个文件组必须包含 clean/noisy/baseline/finetuned 四项")
        converted = [_描述符矩阵(item) for item in group]
        kinds = {m for _, m in converted}
        if len(kinds) != 1:
            raise KindMismatch("同一文件组内的输入类型不一致")
        kind = kinds.pop()
        if expected is None:
            expected = kind
        elif kind is not expected:
            raise KindMismatch(f"输入类型 {kind.value} 与模式 {expected.value} 不符")
        clean_values = converted[0][0]
        for key, (values, _) in zip(stacks, converted):
            if values.shape != clean_values.shape:
                raise DimensionMismatch(f"{key} 维度 {values.shape} 与纯净参考 {clean_values.shape} 不一致")
            stacks[key].append(values)

    pooled = {key: np.vstack(parts) for key, parts in stacks.items()}
    mae_n = _逐参数MAE(pooled['clean'], pooled['noisy'])
    mae_b = _逐参数MAE(pooled['clean'], pooled['baseline'])
    mae_f = _逐参数MAE(pooled['clean'], pooled['finetuned'])
    return _构建报告(expected, mae_n, mae_b, mae_f, len(groups))
