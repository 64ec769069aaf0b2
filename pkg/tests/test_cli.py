import os

import numpy as np
import pytest
from click.testing import CliRunner

from trajlab.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def write_mini_config(path, duration=3.0, reps=1):
    path.write_text(
        f"""
path:
  kind: circle
  radius: 5.0
  direction: ccw
  spacing: 0.05
controller:
  type: mpc
run:
  duration_s: {duration}
  repetitions: {reps}
  seed: 3
initial_offset:
  lateral: 0.3
"""
    )


def test_cli_run_writes_trace(tmp_path, runner):
    cfg = tmp_path / "cfg.yaml"
    write_mini_config(cfg)
    out = tmp_path / "out"
    result = runner.invoke(main, ["run", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "trace.csv").exists()
    assert (out / "path.csv").exists()
    assert "30 records" in result.output


def test_cli_run_same_seed_bit_identical(tmp_path, runner):
    cfg = tmp_path / "cfg.yaml"
    write_mini_config(cfg)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    for out in (out1, out2):
        result = runner.invoke(main, ["run", "--config", str(cfg), "--out", str(out)])
        assert result.exit_code == 0, result.output
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()


def test_cli_eval_writes_summary(tmp_path, runner):
    cfg = tmp_path / "cfg.yaml"
    write_mini_config(cfg, duration=2.0, reps=2)
    out = tmp_path / "out"
    result = runner.invoke(main, ["eval", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "trace_00.csv").exists()
    assert (out / "trace_01.csv").exists()
    assert (out / "error_curve.csv").exists()
    assert "mean cross-track" in result.output


def test_cli_collect_train_run_pipeline(tmp_path, runner):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        """
collect:
  run_seconds: 5.0
  episode_seconds: 5.0
  spacing: 0.1
"""
    )
    data = tmp_path / "data.csv"
    result = runner.invoke(
        main, ["collect", "--config", str(cfg), "--out", str(data), "--seed", "1"]
    )
    assert result.exit_code == 0, result.output
    assert "350 samples" in result.output  # 7 trajectories x 5 s x 10 Hz

    model = tmp_path / "model.txt"
    result = runner.invoke(
        main,
        ["train", "--data", str(data), "--out", str(model), "--epochs", "5"],
    )
    assert result.exit_code == 0, result.output
    assert model.exists()

    run_cfg = tmp_path / "run.yaml"
    write_mini_config(run_cfg, duration=2.0)
    out = tmp_path / "nn_run"
    result = runner.invoke(
        main,
        ["run", "--config", str(run_cfg), "--out", str(out),
         "--controller", "nn", "--model", str(model)],
    )
    assert result.exit_code == 0, result.output


def test_cli_export_kinds(tmp_path, runner):
    cfg = tmp_path / "cfg.yaml"
    write_mini_config(cfg)
    out = tmp_path / "out"
    runner.invoke(main, ["run", "--config", str(cfg), "--out", str(out)])
    trace = out / "trace.csv"
    path_csv = out / "path.csv"

    overlay = tmp_path / "overlay.csv"
    result = runner.invoke(
        main,
        ["export", "--trace", str(trace), "--kind", "overlay",
         "--out", str(overlay), "--path", str(path_csv)],
    )
    assert result.exit_code == 0, result.output
    assert overlay.read_text().startswith("t,ref_x,ref_y")

    profile = tmp_path / "profile.csv"
    result = runner.invoke(
        main,
        ["export", "--trace", str(trace), "--kind", "control_profile",
         "--out", str(profile)],
    )
    assert result.exit_code == 0
    assert profile.read_text().startswith("t,steering,throttle")

    curve = tmp_path / "curve.csv"
    result = runner.invoke(
        main,
        ["export", "--trace", str(trace), "--kind", "error_curve",
         "--out", str(curve), "--path", str(path_csv)],
    )
    assert result.exit_code == 0
    assert curve.read_text().startswith("ref_idx,s,mean_ct_err")


def test_cli_export_render_svg(tmp_path, runner):
    pytest.importorskip("matplotlib")
    cfg = tmp_path / "cfg.yaml"
    write_mini_config(cfg, duration=2.0)
    out = tmp_path / "out"
    runner.invoke(main, ["run", "--config", str(cfg), "--out", str(out)])
    heat = tmp_path / "heat.csv"
    result = runner.invoke(
        main,
        ["export", "--trace", str(out / "trace.csv"), "--kind", "speed_heatmap",
         "--out", str(heat), "--render"],
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "heat.svg").exists()


def test_shipped_configs_load(runner, tmp_path):
    from trajlab.harness import load_scenario_yaml

    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in ("circle_mpc.yaml", "course_constant.yaml"):
        cfg = load_scenario_yaml(os.path.join(root, name))
        assert cfg.path is not None
