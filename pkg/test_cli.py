"""
Tests for the prunekit command line and the run-config file format
"""

import json

import pandas as pd
import pytest
from loguru import logger

import app
from config.settings import RunConfig
from services.report_service import dumps_record
from utils.errors import ConfigError

from conftest import make_tiny_run_config


def write_config(path, **training) -> str:
    config = make_tiny_run_config(seed=1)
    config.model.n_speakers = 2
    config.training.pretrain_steps = 5
    config.pipeline.n_probe = 2
    for key, value in training.items():
        setattr(config.training, key, value)
    path.write_text(config.to_text(), encoding="utf-8")
    return str(path)


def run(*argv) -> int:
    return app.main(["--log-level", "ERROR", *argv])


@pytest.fixture
def pretrained(tmp_path):
    config = write_config(tmp_path / "run.env")
    out = tmp_path / "base"
    assert run("pretrain", "--config", config, "--out", str(out)) == 0
    return config, out / "base.ckpt"


# ============================================================================
# configuration
# ============================================================================

def test_run_config_text_round_trip():
    config = make_tiny_run_config(seed=7)
    config.training.reg_multiplier = 0.5
    config.gates.prune_model_d = True
    parsed = RunConfig.from_text(config.to_text())
    assert parsed.to_text() == config.to_text()
    assert parsed.seed == 7 and parsed.training.reg_multiplier == 0.5 and parsed.gates.prune_model_d


@pytest.mark.parametrize(
    "text", ["MODEL_WIDTH=3\n", "TRAINING_BATCH_SIZE=many\n", "MODEL_D=0\n", "PIPELINE_KIND=x\n", "SEED=-1\n"]
)
def test_bad_config_text(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_missing_config_file(tmp_path, capsys):
    missing = tmp_path / "absent.env"
    assert run("pretrain", "--config", str(missing), "--out", str(tmp_path)) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_arguments_are_usage_errors():
    assert run("pretrain", "--steps", "many") == 5
    assert run("shrink") == 5


def test_config_warnings_are_logged():
    messages = []
    sink = logger.add(messages.append, level="WARNING", format="{message}")
    try:
        RunConfig.from_text("TRAINING_STAGE_MIN_STEPS=3000\n", "run.env")
    finally:
        logger.remove(sink)
    assert any("run.env: stage_min_steps exceeds stage_max_steps" in m for m in messages)


def test_negative_seed_is_a_usage_error(pretrained, tmp_path):
    config, checkpoint = pretrained
    assert run("pretrain", "--config", config, "--seed", "-1", "--out", str(tmp_path / "neg")) == 5
    assert not (tmp_path / "neg").exists()
    assert run("clone", str(checkpoint), "--seed", "3", "-2", "--config", config, "--out", str(tmp_path / "neg")) == 5


# ============================================================================
# pretrain / clone / compact
# ============================================================================

def test_pretrain_outputs(pretrained):
    _, checkpoint = pretrained
    out = checkpoint.parent
    assert checkpoint.is_file()
    assert (out / "config.env").is_file()
    records = [json.loads(line) for line in (out / "pretrain.jsonl").read_text().splitlines()]
    assert [r["type"] for r in records].count("stage") == 1
    assert records[-1]["type"] == "pretrain"


def test_pretrain_is_reproducible(tmp_path, pretrained):
    config, checkpoint = pretrained
    again = tmp_path / "again"
    assert run("pretrain", "--config", config, "--out", str(again)) == 0
    assert (again / "base.ckpt").read_bytes() == checkpoint.read_bytes()


def test_unknown_pipeline_exit_code(pretrained, tmp_path):
    config, checkpoint = pretrained
    assert run("clone", str(checkpoint), "--pipeline", "prune_twice", "--config", config,
               "--out", str(tmp_path / "clone")) == 5


@pytest.mark.parametrize("kind, stages", [("joint", ["joint"]), ("ft_then_prune", ["1st", "2nd"])])
def test_clone_writes_records_and_checkpoint(pretrained, tmp_path, capsys, kind, stages):
    config, checkpoint = pretrained
    out = tmp_path / "clone"
    assert run("clone", str(checkpoint), "--pipeline", kind, "--seed", "3", "--config", config,
               "--steps", "4", "--out", str(out)) == 0
    records = [json.loads(line) for line in (out / f"{kind}-seed3.jsonl").read_text().splitlines()]
    assert [r["stage"] for r in records if r["type"] == "stage"] == stages
    compaction = [r for r in records if r["type"] == "compaction"]
    assert len(compaction) == 1 and compaction[0]["pipeline"] == kind
    assert (out / f"{kind}-seed3.ckpt").is_file()
    assert f"{kind} seed 3" in capsys.readouterr().out


def test_compact_command(pretrained, capsys):
    _, checkpoint = pretrained
    assert run("compact", str(checkpoint)) == 0
    target = checkpoint.with_name("base.compact.ckpt")
    assert target.is_file()
    report = json.loads(target.with_suffix(".json").read_text())
    assert report["type"] == "compaction" and report["ratio"] == 1.0
    assert "compact:" in capsys.readouterr().out


def test_compact_missing_checkpoint(tmp_path):
    assert run("compact", str(tmp_path / "nothing.ckpt")) == 3


def test_clone_is_reproducible(pretrained, tmp_path):
    config, checkpoint = pretrained
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert run("clone", str(checkpoint), "--pipeline", "prune_then_ft", "--seed", "3", "--config", config,
                   "--steps", "4", "--out", str(out)) == 0
        outputs.append((out / "prune_then_ft-seed3.ckpt").read_bytes())
    assert outputs[0] == outputs[1]


def test_compacting_twice_reports_the_same(pretrained, tmp_path, capsys):
    _, checkpoint = pretrained
    config = write_config(tmp_path / "pruning.env", lr_gates=1.0, reg_multiplier=20.0)
    out = tmp_path / "clone"
    assert run("clone", str(checkpoint), "--pipeline", "joint", "--seed", "3", "--config", config,
               "--steps", "4", "--out", str(out)) == 0
    cloned = out / "joint-seed3.ckpt"
    records = [json.loads(line) for line in (out / "joint-seed3.jsonl").read_text().splitlines()]
    clone_record = next(r for r in records if r["type"] == "compaction")

    once, twice = tmp_path / "once.ckpt", tmp_path / "twice.ckpt"
    assert run("compact", str(cloned), "--out", str(once)) == 0
    assert run("compact", str(once), "--out", str(twice)) == 0
    first = json.loads(once.with_suffix(".json").read_text())
    second = json.loads(twice.with_suffix(".json").read_text())

    def without_residual(record):
        return {key: value for key, value in record.items() if key not in ("max_residual", "pipeline", "seed")}

    assert without_residual(first) == without_residual(second) == without_residual(clone_record)
    assert first["max_residual"] < 1e-5 and second["max_residual"] < 1e-5
    assert "max residual" in capsys.readouterr().out


def test_report_over_every_pipeline(pretrained, tmp_path, capsys):
    config, checkpoint = pretrained
    out = tmp_path / "runs"
    kinds = ["joint", "ft_then_prune", "prune_then_ft", "prune_pretrain_then_ft"]
    for kind in kinds:
        assert run("clone", str(checkpoint), "--pipeline", kind, "--seed", "3", "--config", config,
                   "--steps", "4", "--out", str(out)) == 0
    capsys.readouterr()
    assert run("report", str(out)) == 0
    table = pd.read_csv(out / "report.csv")
    assert list(zip(table["pipeline"], table["stage"])) == [
        ("joint", "joint"),
        ("ft_then_prune", "1st"), ("ft_then_prune", "2nd"),
        ("prune_then_ft", "1st"), ("prune_then_ft", "2nd"),
        ("prune_pretrain_then_ft", "1st"), ("prune_pretrain_then_ft", "2nd"),
    ]
    assert {"sparsity_pct", "ratio", "eval_loss", "polarization"} <= set(table.columns)
    assert all(kind in capsys.readouterr().out for kind in kinds)


# ============================================================================
# report
# ============================================================================

def stage_record(**fields):
    record = dict(
        type="stage", pipeline="joint", seed=0, stage="joint", steps=10, converged=True, l_tts=0.5,
        l_reg=10.0, l_total=0.6, density=0.1, eval_loss=0.4, sparsity_pct=50.0, ratio=99.0,
        polarization=0.01, params_before=100, params_after=50, maskable=80,
    )
    record["lambda"] = 100.0
    record.update(fields)
    return record


def test_report_of_empty_directory(tmp_path, capsys):
    assert run("report", str(tmp_path)) == 3
    assert "no stage records found" in capsys.readouterr().err


def test_report_recomputes_ratio(tmp_path, capsys):
    lines = [stage_record(seed=0), stage_record(seed=1, params_after=25, sparsity_pct=75.0)]
    (tmp_path / "joint.jsonl").write_text("\n".join(dumps_record(r) for r in lines) + "\n")
    assert run("report", str(tmp_path)) == 0
    table = pd.read_csv(tmp_path / "report.csv")
    row = table.iloc[0]
    assert row["seeds"] == 2
    assert row["ratio"] == pytest.approx(3.0)
    assert row["sparsity_pct"] == pytest.approx(62.5)
    assert "joint" in capsys.readouterr().out


def test_report_rejects_malformed_lines(tmp_path):
    (tmp_path / "bad.jsonl").write_text("{not json\n")
    assert run("report", str(tmp_path)) == 3
