"""Command-line entry points for the experiment pipeline."""

from __future__ import annotations

import os
import sys

import click
import numpy as np

from .control import MpcConfig
from .dynamics import VehicleParams
from .harness import (
    ScenarioConfig,
    evaluate,
    export_plots,
    load_scenario_yaml,
    load_trace_csv,
    run_scenario,
    save_trace_csv,
)
from .paths import SpeedProfile, multispeed_profile, save_path_csv, training_set


def _load_config(config_path: str | None) -> dict:
    if not config_path:
        return {}
    import yaml

    with open(config_path) as fh:
        return yaml.safe_load(fh) or {}


@click.group()
def main():
    """Trajectory-tracking control lab."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None)
@click.option(
    "--variant",
    type=click.Choice(["constant", "multispeed"]),
    default="constant",
    help="speed profile of the seven training trajectories",
)
@click.option("--run-seconds", type=float, default=None)
def collect(config_path, out_path, seed, variant, run_seconds):
    """Collect an MPC-driven training dataset on the seven trajectories."""
    from .imitation import PerturbationSpec, collect_mpc_dataset
    from .harness import mpc_from_dict, vehicle_from_dict

    cfg = _load_config(config_path)
    coll = cfg.get("collect", {})
    if variant == "multispeed":
        profile = SpeedProfile.two_speed(
            float(coll.get("slow", 1.0)),
            float(coll.get("fast", 2.0)),
            ramp=float(coll.get("ramp", 8.0)),
        )
    else:
        profile = SpeedProfile.constant(float(coll.get("speed", 1.0)))
    trajs = training_set(profile, spacing=float(coll.get("spacing", 0.05)))
    pert = coll.get("perturbation", {})
    ds = collect_mpc_dataset(
        trajs,
        vehicle_from_dict(cfg.get("vehicle")),
        mpc_from_dict(cfg.get("mpc")),
        run_seconds=run_seconds or float(coll.get("run_seconds", 60.0)),
        perturbation=PerturbationSpec(
            lateral=float(pert.get("lateral", 1.0)),
            heading=float(pert.get("heading", 0.3)),
            speed=float(pert.get("speed", 0.5)),
        ),
        seed=seed if seed is not None else int(coll.get("seed", 0)),
        episode_seconds=float(coll.get("episode_seconds", 10.0)),
    )
    ds.save_csv(out_path)
    click.echo(f"wrote {len(ds)} samples to {out_path}")


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--epochs", type=int, default=None)
def train(data_path, out_path, seed, epochs):
    """Train the feed-forward controller on a dataset CSV."""
    from .imitation import TrainConfig, ingest_hil_recording, save_model
    from .imitation import train as train_network

    ds = ingest_hil_recording(data_path)
    kwargs = {"seed": seed}
    if epochs:
        kwargs["epochs"] = epochs
    params, norm, history = train_network(ds, TrainConfig(**kwargs))
    save_model(params, norm, out_path)
    click.echo(
        f"trained on {len(ds)} samples: final train loss {history.train[-1]:.5f}, "
        f"val loss {history.val[-1]:.5f}; model saved to {out_path}"
    )


def _scenario_from_options(config_path, controller, model, seed) -> ScenarioConfig:
    if not config_path:
        raise click.UsageError("--config is required")
    sc = load_scenario_yaml(config_path)
    if controller:
        sc.controller = controller
    if model:
        sc.model_file = model
    if seed is not None:
        sc.seed = seed
    return sc


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--controller", type=click.Choice(["mpc", "nn", "playback", "smooth"]), default=None)
@click.option("--model", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
def run(config_path, out_dir, controller, model, seed):
    """Run a single closed-loop scenario and write its trace CSV."""
    sc = _scenario_from_options(config_path, controller, model, seed)
    trace = run_scenario(sc)
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "trace.csv")
    save_trace_csv(trace, out)
    save_path_csv(sc.path, os.path.join(out_dir, "path.csv"))
    status = "aborted: " + trace.abort_reason if trace.aborted else "completed"
    click.echo(f"{status}; {len(trace)} records -> {out}")
    if trace.aborted:
        sys.exit(2)


@main.command(name="eval")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--controller", type=click.Choice(["mpc", "nn", "playback", "smooth"]), default=None)
@click.option("--model", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
def eval_cmd(config_path, out_dir, controller, model, seed):
    """Run the configured repetitions and write traces plus a summary."""
    sc = _scenario_from_options(config_path, controller, model, seed)
    os.makedirs(out_dir, exist_ok=True)
    traces = []
    for rep in range(sc.repetitions):
        trace = run_scenario(sc, rep)
        traces.append(trace)
        save_trace_csv(trace, os.path.join(out_dir, f"trace_{rep:02d}.csv"))
    summary = evaluate(traces, sc.path)
    export_plots(summary, "error_curve", os.path.join(out_dir, "error_curve.csv"), path=sc.path)
    save_path_csv(sc.path, os.path.join(out_dir, "path.csv"))
    click.echo(
        f"{sc.repetitions} repetitions: mean cross-track {summary.mean_ct:.4f} m, "
        f"max {summary.max_ct:.4f} m; aborted "
        f"{sum(t.aborted for t in traces)}/{len(traces)}"
    )


@main.command()
@click.option("--trace", "trace_path", type=click.Path(exists=True), required=True)
@click.option(
    "--kind",
    type=click.Choice(["overlay", "control_profile", "error_curve", "speed_heatmap"]),
    required=True,
)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--path", "path_csv", type=click.Path(exists=True), default=None)
@click.option("--render/--no-render", default=False, help="also write an SVG")
def export(trace_path, kind, out_path, path_csv, render):
    """Export plot-ready CSV (and optionally SVG) from a trace."""
    from .paths import load_path_csv

    path = load_path_csv(path_csv) if path_csv else None
    if kind == "error_curve":
        if path is None:
            raise click.UsageError("error_curve needs --path")
        trace = load_trace_csv(trace_path)
        summary = evaluate([trace], path)
        export_plots(summary, kind, out_path, path=path, render=render)
    else:
        trace = load_trace_csv(trace_path)
        export_plots(trace, kind, out_path, path=path, render=render)
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--bind", default="127.0.0.1:8700", help="host:port to serve on")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--variant", type=click.Choice(["constant", "multispeed"]), default="constant")
@click.option("--out", "out_dir", type=click.Path(), default="hil_sessions")
@click.option("--time-scale", type=float, default=1.0)
def hil(bind, config_path, variant, out_dir, time_scale):
    """Start the human-in-the-loop driving bridge."""
    from .hilbridge import serve

    cfg = _load_config(config_path)
    profile = (
        multispeed_profile()
        if variant == "multispeed"
        else SpeedProfile.constant(float(cfg.get("hil", {}).get("speed", 1.0)))
    )
    trajs = training_set(profile, spacing=0.05)
    host, _, port = bind.partition(":")
    from .harness import vehicle_from_dict

    serve(
        host=host or "127.0.0.1",
        port=int(port or 8700),
        trajectories=trajs,
        params=vehicle_from_dict(cfg.get("vehicle")),
        out_dir=out_dir,
        time_scale=time_scale,
    )


if __name__ == "__main__":
    main()
