import json

import numpy as np
import pandas as pd
import pytest

from 命令行入口 import RunConfig, build_parser, load_run_config, main, 合并参数
from 客观指标模块 import config_digest
from 异常定义 import ConfigInvalid
from 音频读写模块 import load_wav


@pytest.fixture(autouse=True)
def _清除配置环境变量(monkeypatch):
    monkeypatch.delenv("SE_EVAL_CONFIG", raising=False)


def _读取JSON(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _语料(wav_dir, speech_factory, stems=("a", "b"), seconds=2.0):
    for i, stem in enumerate(stems):
        w = speech_factory(seconds=seconds, seed=i, f0=120.0 + 20 * i)
        wav_dir("clean", stem, w)
    return wav_dir.root


def test_eval_of_identical_copy(wav_dir, speech_factory):
    root = _语料(wav_dir, speech_factory)
    for stem in ("a", "b"):
        wav_dir("copy", stem, load_wav(root / "clean" / f"{stem}.wav")[0])
    out = root / "out"
    code = main(["eval", "--clean", str(root / "clean"), "--system", f"copy={root / 'copy'}",
                 "--out-dir", str(out), "--workers", "2"])
    assert code == 0
    rows = _读取JSON(out / "eval_per_file.json")["rows"]
    assert [(r["stem"], r["system"]) for r in rows] == [("a", "copy"), ("b", "copy")]
    for r in rows:
        assert r["status"] == "ok"
        assert r["STOI"] == pytest.approx(1.0, abs=1e-6)
        assert r["NCM"] == pytest.approx(1.0, abs=1e-6)
        assert r["PESQ"] is None
    summary = _读取JSON(out / "eval_summary.json")
    assert summary["failures"] == 0
    assert summary["summary"]["copy"]["STOI"] == pytest.approx(1.0, abs=1e-6)
    assert len(summary["config_digest"]) == 12
    assert (out / "eval_summary.csv").exists()
    assert (out / "eval_summary.md").read_text(encoding="utf-8").count("|") > 0


def test_eval_reports_missing_pair(wav_dir, speech_factory):
    root = _语料(wav_dir, speech_factory)
    wav_dir("sys", "a", load_wav(root / "clean" / "a.wav")[0])
    out = root / "out"
    code = main(["eval", "--clean", str(root / "clean"), "--system", f"sys={root / 'sys'}",
                 "--out-dir", str(out), "--format", "json"])
    assert code == 1
    rows = {r["stem"]: r for r in _读取JSON(out / "eval_per_file.json")["rows"]}
    assert rows["a"]["status"] == "ok"
    assert rows["b"]["status"] == "MissingPair"
    assert rows["b"]["STOI"] is None
    assert not (out / "eval_per_file.csv").exists()


def test_eval_rejects_bad_system_spec(wav_dir, speech_factory):
    root = _语料(wav_dir, speech_factory)
    assert main(["eval", "--clean", str(root / "clean"), "--system", "nodir"]) == 2


def _合成参数(root, out, seed=5):
    return ["synth", "--clean", str(root / "clean"), "--noise", str(root / "noise"), "--num-pairs", "2",
            "--clip-seconds", "1.5", "--seed", str(seed), "--out-dir", str(out), "--workers", "2"]


def test_synth_is_deterministic(wav_dir, speech_factory, noise_factory):
    root = _语料(wav_dir, speech_factory)
    wav_dir("noise", "n0", noise_factory(seconds=4.0, seed=3))
    wav_dir("noise", "n1", noise_factory(seconds=3.0, seed=4))
    assert main(_合成参数(root, root / "run1")) == 0
    assert main(_合成参数(root, root / "run2")) == 0
    for name in ("pair_00000.wav", "pair_00001.wav", "pair_00000.json", "pair_00001.json"):
        assert (root / "run1" / "degraded" / name).read_bytes() == (root / "run2" / "degraded" / name).read_bytes()

    degraded, meta = load_wav(root / "run1" / "degraded" / "pair_00000.wav")
    clean, _ = load_wav(root / "run1" / "clean" / "pair_00000.wav")
    assert len(degraded) == len(clean) == 24000
    assert meta.sample_rate_hz == 16000
    sidecar = _读取JSON(root / "run1" / "degraded" / "pair_00000.json")
    assert sidecar["seed_used"] == 5
    assert sidecar["file_index"] == 0
    assert any(abs(sidecar["achieved_snr_db"] - s) <= 0.01 for s in (-5.0, 0.0, 5.0, 10.0, 15.0))
    manifest = _读取JSON(root / "run1" / "synth_manifest.json")
    assert [p["stem"] for p in manifest["pairs"]] == ["pair_00000", "pair_00001"]

    assert main(_合成参数(root, root / "run3", seed=6)) == 0
    assert (root / "run3" / "degraded" / "pair_00000.wav").read_bytes() != \
        (root / "run1" / "degraded" / "pair_00000.wav").read_bytes()


def test_synth_with_empty_noise_pool_writes_nothing(wav_dir, speech_factory):
    root = _语料(wav_dir, speech_factory)
    (root / "noise").mkdir()
    out = root / "out"
    assert main(_合成参数(root, out)) == 1
    assert not out.exists()


def _改进语料(wav_dir, speech_factory, noise_factory, baseline_is_finetuned=False):
    clean = speech_factory(seconds=1.0, seed=2)
    noise = noise_factory(seconds=1.0, seed=8, level=0.02)
    noisy = clean.with_samples(clean.samples + noise.samples)
    baseline = clean.with_samples(clean.samples + 0.3 * noise.samples)
    wav_dir("clean", "s", clean)
    wav_dir("noisy", "s", noisy)
    wav_dir("baseline", "s", baseline)
    wav_dir("finetuned", "s", baseline if baseline_is_finetuned else clean)
    return wav_dir.root


def _改进参数(root):
    return ["improve", *[x for role in ("clean", "noisy", "baseline", "finetuned")
                         for x in (f"--{role}", str(root / role))], "--out-dir", str(root / "out")]


def test_improve_with_perfect_finetuned(wav_dir, speech_factory, noise_factory):
    root = _改进语料(wav_dir, speech_factory, noise_factory)
    assert main(_改进参数(root)) == 0
    pooled = _读取JSON(root / "out" / "improve_pooled.json")
    assert pooled["mode"] == "lld_timeseries"
    assert pooled["num_items"] == 1
    defined = [r for r in pooled["records"] if r["status"] == "ok"]
    assert defined
    for r in defined:
        assert r["i_f"] == pytest.approx(1.0)
        assert "relative_mae_reduction" in r and "i_f_minus_i_b" in r
    md = (root / "out" / "improve_pooled.md").read_text(encoding="utf-8")
    assert "i_f_minus_i_b" in md and "relative_mae_reduction" in md
    per_stem = _读取JSON(root / "out" / "improve_per_stem.json")
    assert per_stem["stems"][0]["stem"] == "s"


def test_improve_identical_systems_count_zero(wav_dir, speech_factory, noise_factory):
    root = _改进语料(wav_dir, speech_factory, noise_factory, baseline_is_finetuned=True)
    assert main(_改进参数(root)) == 0
    pooled = _读取JSON(root / "out" / "improve_pooled.json")
    assert pooled["params_finetuned_beats_baseline"] == 0


def test_improve_functional_mode(wav_dir, speech_factory, noise_factory):
    root = _改进语料(wav_dir, speech_factory, noise_factory)
    assert main([*_改进参数(root), "--mode", "functional_vector", "--format", "json"]) == 0
    pooled = _读取JSON(root / "out" / "improve_pooled.json")
    assert pooled["mode"] == "functional_vector"
    assert len(pooled["records"]) == 129


def test_config_init_and_reload(tmp_path, capsys):
    target = tmp_path / "run.json"
    assert main(["config", "init", "--out", str(target)]) == 0
    assert main(["config", "init", "--out", str(target)]) == 1
    assert main(["config", "init", "--out", str(target), "--force"]) == 0
    assert load_run_config(str(target)) == RunConfig()
    capsys.readouterr()
    assert main(["config", "init"]) == 0
    assert json.loads(capsys.readouterr().out)["run"]["seed"] == RunConfig().seed


def test_config_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "env.json"
    target.write_text(json.dumps({"run": {"workers": 3}, "channel": {"condition": "auto"}}), encoding="utf-8")
    monkeypatch.setenv("SE_EVAL_CONFIG", str(target))
    cfg = load_run_config()
    assert cfg.workers == 3
    assert cfg.channel.condition == "auto"


def test_unknown_config_key_exits_2(tmp_path, wav_dir, speech_factory):
    root = _语料(wav_dir, speech_factory)
    target = tmp_path / "bad.json"
    target.write_text(json.dumps({"run": {"bogus": 1}}), encoding="utf-8")
    assert main(["eval", "--config", str(target), "--clean", str(root / "clean"),
                 "--system", f"x={root / 'clean'}"]) == 2
    with pytest.raises(ConfigInvalid):
        RunConfig.from_dict({"telemetry": {}})
    with pytest.raises(ConfigInvalid):
        load_run_config(str(tmp_path / "missing.json"))


def test_command_line_overrides_config(tmp_path):
    args = build_parser().parse_args(["synth", "--preset", "test", "--seed", "9", "--snr", "3", "--condition", "auto"])
    cfg = 合并参数(RunConfig(), args)
    assert cfg.seed == 9
    assert cfg.num_pairs == 150
    assert cfg.clip_seconds == 10.0
    assert cfg.channel.snr_db == 3.0
    assert cfg.channel.condition == "auto"


def test_tap_export(wav_dir, speech_factory):
    root = _语料(wav_dir, speech_factory, stems=("t",), seconds=1.0)
    out = root / "tap"
    assert main(["tap", str(root / "clean" / "t.wav"), "--out-dir", str(out), "--npz", "--functionals"]) == 0
    header = (out / "t_tap.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("pitch,jitter,shimmer,loudness")
    assert (out / "t_tap.npz").exists()
    assert len(_读取JSON(out / "t_functionals.json")) == 129


def test_loss_subcommand(wav_dir, speech_factory, noise_factory):
    clean = speech_factory(seconds=1.0)
    noise = noise_factory(seconds=1.0, level=0.01)
    c = wav_dir("loss", "clean", clean)
    e = wav_dir("loss", "enhanced", clean.with_samples(clean.samples + noise.samples))
    n = wav_dir("loss", "noisy", clean.with_samples(clean.samples + 3 * noise.samples))
    out = wav_dir.root / "loss_out"
    assert main(["loss", str(c), str(e), "--noisy", str(n), "--lambda1", "0", "--lambda2", "0",
                 "--out-dir", str(out), "--format", "json"]) == 0
    rows = _读取JSON(out / "loss_breakdown.json")["rows"]
    assert [r["formula"] for r in rows] == ["demucs", "fullsubnet"]
    assert rows[0]["total"] == pytest.approx(rows[0]["l1"])
    assert rows[0]["l1"] == pytest.approx(float(np.mean(np.abs(noise.samples))), rel=1e-3)
    assert rows[1]["total"] == pytest.approx(rows[1]["cirm"] + rows[1]["gamma"] * rows[1]["tap"])


def test_reports_do_not_depend_on_worker_count(wav_dir, speech_factory, noise_factory):
    root = _语料(wav_dir, speech_factory, stems=("a", "b", "c"), seconds=1.5)
    wav_dir("noise", "n0", noise_factory(seconds=3.0, seed=3))
    for workers in ("1", "3"):
        args = _合成参数(root, root / f"synth_{workers}")
        args[args.index("--workers") + 1] = workers
        assert main(args) == 0
        assert main(["eval", "--clean", str(root / f"synth_{workers}" / "clean"),
                     "--system", f"degraded={root / f'synth_{workers}' / 'degraded'}",
                     "--out-dir", str(root / f"eval_{workers}"), "--workers", workers]) in (0, 1)
    for name in ("eval_summary.json", "eval_summary.csv", "eval_per_file.json", "eval_per_file.md"):
        assert (root / "eval_1" / name).read_bytes() == (root / "eval_3" / name).read_bytes()
    assert (root / "synth_1" / "synth_manifest.json").read_bytes() == \
        (root / "synth_3" / "synth_manifest.json").read_bytes()


def test_every_report_format_records_config_digest(wav_dir, speech_factory):
    root = _语料(wav_dir, speech_factory, stems=("a",))
    out = root / "out"
    assert main(["eval", "--clean", str(root / "clean"), "--system", f"same={root / 'clean'}",
                 "--out-dir", str(out)]) == 0
    digest = config_digest()
    assert _读取JSON(out / "eval_summary.json")["config_digest"] == digest

    csv_lines = (out / "eval_summary.csv").read_text(encoding="utf-8").splitlines()
    assert f"# config_digest: {digest}" in csv_lines
    assert any(line.startswith("# toolkit_version: ") for line in csv_lines)
    table = pd.read_csv(out / "eval_summary.csv", comment="#", index_col=0)
    assert float(table.loc["STOI", "same"]) == pytest.approx(1.0, abs=1e-6)

    md = (out / "eval_per_file.md").read_text(encoding="utf-8")
    assert md.startswith("> ")
    assert f"config_digest=`{digest}`" in md.splitlines()[0]
    assert "toolkit_version=" in md.splitlines()[0]
