"""Scenario runner and experiment evaluation.

A scenario wires a plant, a sensor/estimator chain, and a controller into
a fixed-step closed loop, produces per-control-step trace records, and
aggregates closest-point tracking errors across seeded repetitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .control import ErrorState, MpcConfig, MpcController
from .dynamics import Command, VehicleParams, VehicleState, clamp, step, wrap_angle
from .estimator import EkfState, NoiseConfig, ekf_predict, ekf_update_heading, ekf_update_position
from .paths import (
    ReferencePath,
    SpeedProfile,
    closest_point,
    cross_track_distance,
    evaluation_course,
    load_path_csv,
    make_circle,
    make_course,
    make_line,
    multispeed_profile,
)

TRACE_CSV_HEADER = (
    "t,x,y,theta,v,xe,ye,thetae,ve_est,e1,e2,e3,e4,steering,throttle,ct_err,ref_idx"
)


class ScenarioAborted(RuntimeError):
    def __init__(self, step_index: int, reason: str):
        super().__init__(f"scenario aborted at control step {step_index}: {reason}")
        self.step_index = step_index


@dataclass(frozen=True)
class InitialOffset:
    """Start-state offset from the path's first sample.

    With randomize=False the values are applied as-is; otherwise each
    repetition draws uniformly from +-value per component.
    """

    lateral: float = 0.0  # m
    heading: float = 0.0  # rad
    speed: float = 0.0  # m/s
    randomize: bool = False


@dataclass(frozen=True)
class PlantPerturbation:
    """Optional plant-model mismatch knobs for robustness studies."""

    wheelbase_scale: float = 1.0
    torque_scale: float = 1.0
    steer_bias: float = 0.0

    def apply(self, p: VehicleParams) -> VehicleParams:
        return VehicleParams(
            beta=p.beta,
            wheelbase_l=p.wheelbase_l * self.wheelbase_scale,
            gear_ratio_gamma=p.gear_ratio_gamma,
            wheel_radius_Rw=p.wheel_radius_Rw,
            wheel_inertia_Iw=p.wheel_inertia_Iw,
            torque_stall=p.torque_stall * self.torque_scale,
            speed_noload=p.speed_noload,
        )


@dataclass
class ScenarioConfig:
    path: ReferencePath
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    controller: str = "mpc"  # mpc | nn | smooth | playback
    mpc: MpcConfig = field(default_factory=MpcConfig)
    model_file: str | None = None  # for controller == "nn"
    playback_file: str | None = None  # for controller == "playback"
    sensor_mode: str = "truth"  # truth | noisy
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    control_hz: float = 10.0
    plant_hz: float = 100.0
    duration_s: float = 30.0
    repetitions: int = 1
    seed: int = 0
    initial_offset: InitialOffset = field(default_factory=InitialOffset)
    plant_perturbation: PlantPerturbation = field(default_factory=PlantPerturbation)
    bail_out_m: float = 10.0
    initial_v_error: float = 0.0  # estimator starts with this relative v error

    def __post_init__(self):
        substeps = self.plant_hz / self.control_hz
        if abs(substeps - round(substeps)) > 1e-9 or substeps < 1:
            raise ValueError("plant_hz must be an integer multiple of control_hz")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.sensor_mode not in ("truth", "noisy"):
            raise ValueError("sensor_mode must be 'truth' or 'noisy'")


@dataclass
class TraceRecord:
    t: float
    x: float
    y: float
    theta: float
    v: float
    xe: float
    ye: float
    thetae: float
    ve_est: float
    e1: float
    e2: float
    e3: float
    e4: float
    steering: float
    throttle: float
    ct_err: float
    ref_idx: int


@dataclass
class RunTrace:
    records: list[TraceRecord]
    aborted: bool = False
    abort_reason: str | None = None

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def save_trace_csv(trace: RunTrace, file) -> None:
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w") if own else file
    try:
        fh.write(TRACE_CSV_HEADER + "\n")
        for r in trace.records:
            fh.write(
                f"{r.t!r},{r.x!r},{r.y!r},{r.theta!r},{r.v!r},"
                f"{r.xe!r},{r.ye!r},{r.thetae!r},{r.ve_est!r},"
                f"{r.e1!r},{r.e2!r},{r.e3!r},{r.e4!r},"
                f"{r.steering!r},{r.throttle!r},{r.ct_err!r},{r.ref_idx}\n"
            )
    finally:
        if own:
            fh.close()


def load_trace_csv(file) -> RunTrace:
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "r") if own else file
    try:
        header = fh.readline().strip()
        if header != TRACE_CSV_HEADER:
            raise ValueError(f"unexpected trace header: {header!r}")
        records = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            records.append(
                TraceRecord(*[float(v) for v in parts[:16]], int(parts[16]))
            )
    finally:
        if own:
            fh.close()
    return RunTrace(records=records)


def _build_controller(cfg: ScenarioConfig):
    if cfg.controller == "mpc":
        return MpcController(cfg.path, cfg.mpc, cfg.vehicle)
    if cfg.controller == "nn":
        from .imitation import NnController, load_model

        if not cfg.model_file:
            raise ValueError("nn controller needs model_file")
        params, norm = load_model(cfg.model_file)
        return NnController(cfg.path, params, norm)
    if cfg.controller == "smooth":
        from .drivers import SmoothDriver

        return SmoothDriver(cfg.path, cfg.vehicle, dt=1.0 / cfg.control_hz)
    if cfg.controller == "playback":
        if not cfg.playback_file:
            raise ValueError("playback controller needs playback_file")
        return PlaybackController(cfg.path, cfg.playback_file)
    raise ValueError(f"unknown controller {cfg.controller!r}")


class PlaybackController:
    """Replays the command sequence of a recorded trace by timestamp."""

    def __init__(self, path: ReferencePath, trace_file: str):
        self.path = path
        trace = load_trace_csv(trace_file)
        self._times = trace.column("t")
        self._steer = trace.column("steering")
        self._throttle = trace.column("throttle")
        self._k = 0
        self._hint: int | None = None

    def reset(self) -> None:
        self._k = 0
        self._hint = None

    def command(self, q: VehicleState, t: float | None = None) -> tuple[Command, dict]:
        if t is None:
            k = min(self._k, len(self._times) - 1)
            self._k += 1
        else:
            k = int(np.searchsorted(self._times, t, side="right")) - 1
            k = max(0, min(k, len(self._times) - 1))
        idx, ref, dist = closest_point(self.path, (q.x, q.y), hint_index=self._hint)
        self._hint = idx
        from .control import error_state

        e0 = error_state(q, ref)
        u = Command(float(self._steer[k]), float(self._throttle[k]))
        return u, {"e0": e0, "ref_index": idx, "closest_distance": dist}


def run_scenario(cfg: ScenarioConfig, repetition: int = 0) -> RunTrace:
    """One closed-loop run: plant at plant_hz, control/estimation at
    control_hz with zero-order hold, deterministic per (seed, repetition).

    Divergence beyond bail_out_m aborts with a valid partial trace.
    """
    rng = np.random.default_rng(cfg.seed + repetition)
    substeps = int(round(cfg.plant_hz / cfg.control_hz))
    plant_dt = 1.0 / cfg.plant_hz
    n_steps = int(round(cfg.duration_s * cfg.control_hz))

    off = cfg.initial_offset
    if off.randomize:
        lat = rng.uniform(-off.lateral, off.lateral)
        head = rng.uniform(-off.heading, off.heading)
        dv = rng.uniform(-off.speed, off.speed)
    else:
        lat, head, dv = off.lateral, off.heading, off.speed
    r0 = cfg.path.sample(0)
    q = VehicleState(
        x=r0.x - lat * math.sin(r0.theta),
        y=r0.y + lat * math.cos(r0.theta),
        theta=wrap_angle(r0.theta + head),
        v=max(0.0, r0.v + dv),
    )

    plant_params = cfg.plant_perturbation.apply(cfg.vehicle)
    controller = _build_controller(cfg)
    controller.reset()

    v0_est = q.v * (1.0 + cfg.initial_v_error)
    est = EkfState(
        mean=VehicleState(q.x, q.y, q.theta, v0_est),
        covariance=np.diag([1e-4, 1e-4, 1e-4, max(0.25, (q.v - v0_est) ** 2 + 1e-3)]),
    )

    noisy = cfg.sensor_mode == "noisy"
    sig_pos = math.sqrt(max(0.0, float(cfg.noise.position[0, 0])))
    sig_th = math.sqrt(max(0.0, cfg.noise.heading_var))

    records: list[TraceRecord] = []
    trace = RunTrace(records=records)
    t = 0.0
    u = Command(0.0, 0.0)
    for k in range(n_steps):
        if k > 0:
            for _ in range(substeps):
                q = step(q, u, plant_dt, plant_params)
                est = ekf_predict(est, u, plant_dt, cfg.vehicle, cfg.noise)
            t = k / cfg.control_hz

        meas_x = q.x + (rng.normal(0.0, sig_pos) if noisy else 0.0)
        meas_y = q.y + (rng.normal(0.0, sig_pos) if noisy else 0.0)
        meas_th = wrap_angle(q.theta + (rng.normal(0.0, sig_th) if noisy else 0.0))
        est = ekf_update_position(est, (meas_x, meas_y), cfg.noise)
        est = ekf_update_heading(est, meas_th, cfg.noise)

        if noisy:
            q_ctrl = est.mean
        else:
            q_ctrl = VehicleState(q.x, q.y, q.theta, est.mean.v)

        try:
            if isinstance(controller, PlaybackController):
                u, diag = controller.command(q_ctrl, t)
            else:
                u, diag = controller.command(q_ctrl)
        except Exception as exc:
            raise ScenarioAborted(k, f"controller failure: {exc}") from exc

        if diag["e0"] is not None:
            e0: ErrorState = diag["e0"]
        else:  # pragma: no cover - all controllers report e0
            e0 = ErrorState()

        ref_idx, _, ct = closest_point(cfg.path, (q.x, q.y))
        records.append(
            TraceRecord(
                t=t, x=q.x, y=q.y, theta=q.theta, v=q.v,
                xe=est.mean.x, ye=est.mean.y, thetae=est.mean.theta,
                ve_est=est.mean.v,
                e1=e0.e1, e2=e0.e2, e3=e0.e3, e4=e0.e4,
                steering=u.steering, throttle=u.throttle,
                ct_err=ct, ref_idx=ref_idx,
            )
        )
        if ct > cfg.bail_out_m:
            trace.aborted = True
            trace.abort_reason = (
                f"cross-track {ct:.2f} m exceeded bail-out {cfg.bail_out_m} m "
                f"at step {k}"
            )
            return trace

        biased = Command(
            clamp(u.steering + cfg.plant_perturbation.steer_bias, -1.0, 1.0),
            u.throttle,
        )
        u = biased
    return trace


def run_repetitions(cfg: ScenarioConfig) -> list[RunTrace]:
    return [run_scenario(cfg, rep) for rep in range(cfg.repetitions)]


@dataclass
class ErrorSummary:
    """Closest-point error statistics binned by reference index."""

    per_index_mean_ct: np.ndarray  # NaN where never visited
    per_index_mean_speed: np.ndarray
    per_index_count: np.ndarray
    mean_ct: float
    max_ct: float
    n_traces: int


def evaluate(traces: list[RunTrace], path: ReferencePath) -> ErrorSummary:
    """Bin each record's precomputed closest-point distance by reference
    index and average across all repetitions."""
    if not traces:
        raise ValueError("no traces to evaluate")
    n = len(path)
    ct_sum = np.zeros(n)
    v_sum = np.zeros(n)
    count = np.zeros(n, dtype=int)
    all_ct: list[float] = []
    for trace in traces:
        for r in trace.records:
            ct_sum[r.ref_idx] += abs(r.ct_err)
            v_sum[r.ref_idx] += r.v
            count[r.ref_idx] += 1
            all_ct.append(abs(r.ct_err))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_ct = np.where(count > 0, ct_sum / np.maximum(count, 1), np.nan)
        mean_v = np.where(count > 0, v_sum / np.maximum(count, 1), np.nan)
    return ErrorSummary(
        per_index_mean_ct=mean_ct,
        per_index_mean_speed=mean_v,
        per_index_count=count,
        mean_ct=float(np.mean(all_ct)),
        max_ct=float(np.max(all_ct)),
        n_traces=len(traces),
    )


def export_plots(
    data,
    kind: str,
    out,
    path: ReferencePath | None = None,
    render: bool = False,
):
    """Emit plot-ready CSV for a trace or summary; optionally render an
    SVG next to it (requires matplotlib)."""
    if kind == "overlay":
        trace: RunTrace = data
        if path is None:
            raise ValueError("overlay export needs the reference path")
        rows = ["t,ref_x,ref_y,act_x,act_y"]
        for r in trace.records:
            rows.append(
                f"{r.t!r},{float(path.xs[r.ref_idx])!r},"
                f"{float(path.ys[r.ref_idx])!r},{r.x!r},{r.y!r}"
            )
        series = [("reference", 1, 2), ("actual", 3, 4)]
    elif kind == "control_profile":
        trace = data
        rows = ["t,steering,throttle"]
        for r in trace.records:
            rows.append(f"{r.t!r},{r.steering!r},{r.throttle!r}")
        series = [("steering", 0, 1), ("throttle", 0, 2)]
    elif kind == "error_curve":
        summary: ErrorSummary = data
        if path is None:
            raise ValueError("error_curve export needs the reference path")
        rows = ["ref_idx,s,mean_ct_err"]
        for i in range(len(path)):
            m = float(summary.per_index_mean_ct[i])
            rows.append(f"{i},{float(path.ss[i])!r},{m!r}")
        series = [("mean_ct_err", 1, 2)]
    elif kind == "speed_heatmap":
        trace = data
        rows = ["x,y,v"]
        for r in trace.records:
            rows.append(f"{r.x!r},{r.y!r},{r.v!r}")
        series = None
    else:
        raise ValueError(f"unknown export kind {kind!r}")

    own = isinstance(out, (str, bytes)) or hasattr(out, "__fspath__")
    fh = open(out, "w") if own else out
    try:
        fh.write("\n".join(rows) + "\n")
    finally:
        if own:
            fh.close()

    if render and own:
        _render_svg(rows, kind, series, str(out))
    return out


def _render_svg(rows: list[str], kind: str, series, out_csv: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = np.array(
        [[float(v) if v != "nan" else np.nan for v in row.split(",")] for row in rows[1:]]
    )
    fig, ax = plt.subplots(figsize=(7, 5))
    if kind == "overlay":
        ax.plot(data[:, 1], data[:, 2], "r--", label="reference")
        ax.plot(data[:, 3], data[:, 4], "b-", label="actual")
        ax.set_aspect("equal")
        ax.legend()
    elif kind == "speed_heatmap":
        sc = ax.scatter(data[:, 0], data[:, 1], c=data[:, 2], s=6, cmap="viridis")
        fig.colorbar(sc, ax=ax, label="v (m/s)")
        ax.set_aspect("equal")
    else:
        for label, xi, yi in series:
            ax.plot(data[:, xi], data[:, yi], label=label)
        ax.legend()
    ax.set_title(kind)
    fig.tight_layout()
    fig.savefig(out_csv.rsplit(".", 1)[0] + ".svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# config file loading


def profile_from_dict(d: dict | None) -> SpeedProfile:
    if not d:
        return SpeedProfile.constant(1.0)
    return SpeedProfile(
        base=float(d.get("base", 1.0)),
        splits=tuple((float(f), float(v)) for f, v in d.get("splits", [])),
        by_tag=tuple(sorted((str(k), float(v)) for k, v in (d.get("by_tag") or {}).items())),
        ramp=float(d.get("ramp", 2.0)),
    )


def path_from_dict(d: dict) -> ReferencePath:
    kind = d.get("kind", "circle")
    profile = profile_from_dict(d.get("profile"))
    spacing = float(d.get("spacing", 0.1))
    if kind == "circle":
        return make_circle(
            float(d.get("radius", 5.0)), d.get("direction", "ccw"), profile, spacing
        )
    if kind == "line":
        return make_line(float(d.get("length", 30.0)), profile, spacing)
    if kind == "course":
        return make_course(
            [tuple(map(float, w)) for w in d["waypoints"]],
            d.get("features"),
            profile,
            spacing,
            corner_radius=float(d.get("corner_radius", 3.0)),
            sinusoid_amplitude=float(d.get("sinusoid_amplitude", 2.0)),
            sinusoid_periods=float(d.get("sinusoid_periods", 1.0)),
            arc_bulge=float(d.get("arc_bulge", 4.0)),
        )
    if kind == "evaluation_course":
        if d.get("multispeed"):
            profile = multispeed_profile(
                slow=float(d.get("slow", 1.0)),
                fast=float(d.get("fast", 2.0)),
                ramp=float(d.get("ramp", 8.0)),
            )
        return evaluation_course(
            profile, spacing, corner_radius=float(d.get("corner_radius", 3.0))
        )
    if kind == "csv":
        return load_path_csv(d["file"], closed=d.get("closed"))
    raise ValueError(f"unknown path kind {kind!r}")


def vehicle_from_dict(d: dict | None) -> VehicleParams:
    if not d:
        return VehicleParams()
    base = VehicleParams()
    kwargs = {k: float(v) for k, v in d.items()}
    return replace(base, **kwargs)


def mpc_from_dict(d: dict | None) -> MpcConfig:
    if not d:
        return MpcConfig()
    cfg = MpcConfig(
        horizon_N=int(d.get("horizon_N", 20)),
        dt=float(d.get("dt", 0.1)),
    )
    if "Q" in d:
        cfg.Q = np.diag([float(v) for v in d["Q"]]) if np.ndim(d["Q"]) == 1 else np.asarray(d["Q"], float)
    if "R" in d:
        cfg.R = np.diag([float(v) for v in d["R"]]) if np.ndim(d["R"]) == 1 else np.asarray(d["R"], float)
    return MpcConfig(cfg.horizon_N, cfg.dt, cfg.Q, cfg.R)


def noise_from_dict(d: dict | None) -> NoiseConfig:
    if not d:
        return NoiseConfig()
    kwargs = {}
    if "process_diag" in d:
        kwargs["process"] = np.diag([float(v) for v in d["process_diag"]])
    if "sigma_pos" in d:
        s = float(d["sigma_pos"]) ** 2
        kwargs["position"] = np.diag([s, s])
    if "sigma_heading" in d:
        kwargs["heading_var"] = float(d["sigma_heading"]) ** 2
    return NoiseConfig(**kwargs)


def scenario_from_dict(d: dict) -> ScenarioConfig:
    run = d.get("run", {})
    off = d.get("initial_offset", {})
    pert = d.get("plant_perturbation", {})
    return ScenarioConfig(
        path=path_from_dict(d["path"]),
        vehicle=vehicle_from_dict(d.get("vehicle")),
        controller=d.get("controller", {}).get("type", "mpc")
        if isinstance(d.get("controller"), dict)
        else d.get("controller", "mpc"),
        mpc=mpc_from_dict(
            d.get("controller", {}).get("mpc") if isinstance(d.get("controller"), dict) else d.get("mpc")
        ),
        model_file=(d.get("controller") or {}).get("model")
        if isinstance(d.get("controller"), dict)
        else d.get("model"),
        playback_file=(d.get("controller") or {}).get("playback")
        if isinstance(d.get("controller"), dict)
        else d.get("playback"),
        sensor_mode=d.get("sensors", {}).get("mode", "truth"),
        noise=noise_from_dict(d.get("sensors", {}).get("noise")),
        control_hz=float(d.get("rates", {}).get("control_hz", 10.0)),
        plant_hz=float(d.get("rates", {}).get("plant_hz", 100.0)),
        duration_s=float(run.get("duration_s", 30.0)),
        repetitions=int(run.get("repetitions", 1)),
        seed=int(run.get("seed", 0)),
        initial_offset=InitialOffset(
            lateral=float(off.get("lateral", 0.0)),
            heading=float(off.get("heading", 0.0)),
            speed=float(off.get("speed", 0.0)),
            randomize=bool(off.get("randomize", False)),
        ),
        plant_perturbation=PlantPerturbation(
            wheelbase_scale=float(pert.get("wheelbase_scale", 1.0)),
            torque_scale=float(pert.get("torque_scale", 1.0)),
            steer_bias=float(pert.get("steer_bias", 0.0)),
        ),
        bail_out_m=float(run.get("bail_out_m", 10.0)),
        initial_v_error=float(run.get("initial_v_error", 0.0)),
    )


def load_scenario_yaml(file) -> ScenarioConfig:
    import yaml

    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "r") if own else file
    try:
        data = yaml.safe_load(fh)
    finally:
        if own:
            fh.close()
    return scenario_from_dict(data)
