import numpy as np
import pandas as pd
import pytest

from 声学参数模块 import FUNCTIONAL_LENGTH, FUNCTIONAL_NAMES, TAP_PARAM_NAMES, FunctionalVector, TapMatrix
from 异常定义 import DimensionMismatch, EmptyPool, KindMismatch, UndefinedBaseline
from 改进评估模块 import (
    ImprovementMode,
    improvement_report,
    improvement_scores,
    mae_over_time,
    pooled_improvement_report,
)

T = 12


def _常数矩阵(value, frames=T):
    return TapMatrix(np.full((frames, 25), float(value)))


def _随机矩阵(seed, frames=T):
    return TapMatrix(np.random.default_rng(seed).standard_normal((frames, 25)))


def _泛函(value):
    return FunctionalVector(np.full(FUNCTIONAL_LENGTH, float(value)), np.ones(FUNCTIONAL_LENGTH, dtype=bool))


def test_mae_over_time_values():
    a = _常数矩阵(0.0)
    values = np.zeros((T, 25))
    values[:, 3] = 2.0
    values[: T // 2, 7] = 1.0
    mae = mae_over_time(a, TapMatrix(values))
    assert mae.shape == (25,)
    assert mae[3] == pytest.approx(2.0)
    assert mae[7] == pytest.approx(0.5)
    assert mae[0] == 0.0


def test_mae_is_symmetric():
    a, b = _随机矩阵(1), _随机矩阵(2)
    np.testing.assert_array_equal(mae_over_time(a, b), mae_over_time(b, a))


def test_mae_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        mae_over_time(_常数矩阵(0, frames=5), _常数矩阵(0, frames=6))


def test_improvement_score_arithmetic():
    i_b, i_f = improvement_scores(2.0, 1.0, 0.5)
    assert i_b == pytest.approx(0.5)
    assert i_f == pytest.approx(0.75)
    i_b, _ = improvement_scores(1.0, 3.0, 0.0)
    assert i_b == pytest.approx(-2.0)


def test_improvement_score_undefined_and_negative():
    with pytest.raises(UndefinedBaseline):
        improvement_scores(0.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        improvement_scores(1.0, -0.1, 0.0)


def test_finetuned_equal_to_clean_scores_one():
    clean, noisy = _随机矩阵(3), _随机矩阵(4)
    report = improvement_report(clean, noisy, noisy, clean)
    for r in report.records:
        assert r.i_f == pytest.approx(1.0)
        assert r.i_b == pytest.approx(0.0)
    assert report.params_finetuned_beats_baseline == 25


def test_count_of_parameters_where_finetuned_wins():
    finetuned = np.full((T, 25), 0.5)
    finetuned[:, :14] = 0.3
    report = improvement_report(_常数矩阵(0), _常数矩阵(1), _常数矩阵(0.5), TapMatrix(finetuned))
    assert report.params_finetuned_beats_baseline == 14
    assert report.record("pitch").i_f == pytest.approx(0.7)
    assert report.record("pitch").i_b == pytest.approx(0.5)


def test_identical_systems_never_win():
    clean, noisy, enhanced = _随机矩阵(5), _随机矩阵(6), _随机矩阵(7)
    report = improvement_report(clean, noisy, enhanced, enhanced)
    assert report.params_finetuned_beats_baseline == 0
    assert all(r.i_f_minus_i_b == 0.0 for r in report.records)


def test_undefined_parameter_is_reported_not_dropped():
    clean = _随机矩阵(8)
    noisy_values = clean.values.copy()
    noisy_values[:, 1:] += 1.0
    report = improvement_report(clean, TapMatrix(noisy_values), _随机矩阵(9), _随机矩阵(10))
    assert report.undefined_params == ["pitch"]
    record = report.record("pitch")
    assert record.i_b is None and record.i_f is None
    assert record.to_dict()["status"] == UndefinedBaseline.code
    assert len(report.records) == 25


def test_translation_invariance():
    mats = [_随机矩阵(s) for s in (11, 12, 13, 14)]
    shifted = [TapMatrix(m.values + 3.0) for m in mats]
    a = improvement_report(*mats).to_frame()
    b = improvement_report(*shifted).to_frame()
    pd.testing.assert_frame_equal(a, b, atol=1e-12)


def test_records_follow_parameter_order():
    report = improvement_report(*[_随机矩阵(s) for s in (1, 2, 3, 4)])
    assert tuple(r.param for r in report.records) == TAP_PARAM_NAMES
    assert report.mode is ImprovementMode.LLD_TIMESERIES


def test_kind_mismatch():
    with pytest.raises(KindMismatch):
        improvement_report(_常数矩阵(0), _泛函(1), _常数矩阵(0), _常数矩阵(0))
    with pytest.raises(KindMismatch):
        improvement_report(_常数矩阵(0), _常数矩阵(1), _常数矩阵(0), _常数矩阵(0),
                           mode=ImprovementMode.FUNCTIONAL_VECTOR)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        improvement_report(_常数矩阵(0), _常数矩阵(1, frames=T + 1), _常数矩阵(0), _常数矩阵(0))


def test_functional_vector_mode():
    report = improvement_report(_泛函(0), _泛函(2), _泛函(1), _泛函(0.5), mode="functional_vector")
    assert report.mode is ImprovementMode.FUNCTIONAL_VECTOR
    assert len(report.records) == FUNCTIONAL_LENGTH
    assert report.records[0].param == FUNCTIONAL_NAMES[0]
    assert report.records[0].i_b == pytest.approx(0.5)
    assert report.records[0].i_f == pytest.approx(0.75)


def test_pooled_report_weights_by_frames():
    group_a = (_常数矩阵(0, 10), _常数矩阵(1, 10), _常数矩阵(1, 10), _常数矩阵(0, 10))
    group_b = (_常数矩阵(0, 30), _常数矩阵(1, 30), _常数矩阵(0, 30), _常数矩阵(1, 30))
    report = pooled_improvement_report([group_a, group_b])
    r = report.record("loudness")
    assert r.mae_b == pytest.approx(0.25)
    assert r.mae_f == pytest.approx(0.75)
    assert report.num_items == 2
    with pytest.raises(EmptyPool):
        pooled_improvement_report([])


def test_both_relative_columns_and_exports(tmp_path):
    report = improvement_report(_常数矩阵(0), _常数矩阵(2), _常数矩阵(1), _常数矩阵(0.5))
    r = report.record("hnr")
    assert r.i_f_minus_i_b == pytest.approx(0.25)
    assert r.relative_mae_reduction == pytest.approx(0.5)
    md = report.to_markdown()
    assert "i_f_minus_i_b" in md and "relative_mae_reduction" in md
    report.to_csv(tmp_path / "improve.csv")
    back = pd.read_csv(tmp_path / "improve.csv", index_col="param")
    assert list(back.index) == list(TAP_PARAM_NAMES)
    assert back.loc["hnr", "i_f"] == pytest.approx(0.75)
    d = report.to_dict()
    assert d["mode"] == "lld_timeseries"
    assert d["params_finetuned_beats_baseline"] == 25


def test_ordering_matches_mae_ordering():
    rng = np.random.default_rng(21)
    for mae_n, mae_b, mae_f in rng.uniform(0.01, 2.0, size=(1000, 3)):
        i_b, i_f = improvement_scores(mae_n, mae_b, mae_f)
        assert (mae_f < mae_b) == (i_f > i_b)
    assert improvement_scores(2.0, 1.0, 2.0)[1] == 0.0
    assert improvement_scores(2.0, 1.0, 0.0)[1] == 1.0
