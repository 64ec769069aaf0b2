"""Human-in-the-loop bridge: real-time simulation server for manual
driving and training-data recording.

The simulation core is a plain tick function (100 Hz plant substeps,
50 Hz command refresh, 20 Hz state broadcast, 10 Hz sample recording) so
it stays deterministic and directly testable; the asyncio layer only
paces it against the wall clock and moves messages.
"""

from __future__ import annotations

import asyncio
import contextlib
import math
import os
import time
from dataclasses import dataclass, field

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .control import ErrorState, error_state
from .dynamics import Command, VehicleParams, VehicleState, clamp, step
from .imitation import Dataset, Sample
from .paths import ReferencePath, closest_point

PROTOCOL_VERSION = 1
TICK_HZ = 100  # plant substep rate
COMMAND_EVERY = 2  # 50 Hz zero-order-hold refresh
BROADCAST_EVERY = 5  # 20 Hz state stream
RECORD_EVERY = 10  # 10 Hz sample recording
STALE_COMMAND_S = 0.5  # dead-man window


@dataclass
class HilSession:
    session_id: int
    samples: list[Sample] = field(default_factory=list)
    # true states at the recording ticks: (t, x, y, theta, v, traj_id)
    state_log: list[tuple[float, float, float, float, float, str]] = field(
        default_factory=list
    )


@dataclass
class StateBroadcast:
    session_id: int
    t: float
    state: VehicleState
    error: ErrorState
    ref: list[tuple[float, float]]
    recording: bool
    progress: float
    samples: int

    def to_message(self) -> dict:
        return {
            "v": PROTOCOL_VERSION,
            "type": "state",
            "session": self.session_id,
            "t": round(self.t, 6),
            "x": self.state.x,
            "y": self.state.y,
            "theta": self.state.theta,
            "vel": self.state.v,
            "e": [self.error.e1, self.error.e2, self.error.e3, self.error.e4],
            "ref": [[x, y] for x, y in self.ref],
            "recording": self.recording,
            "progress": self.progress,
            "samples": self.samples,
        }


class HilBridge:
    """Single-vehicle simulation owned by the ticker; the network side
    only calls handle_message() and reads broadcasts."""

    def __init__(
        self,
        trajectories: dict[str, ReferencePath],
        params: VehicleParams | None = None,
        plant_substeps_hz: float = TICK_HZ,
    ):
        if not trajectories:
            raise ValueError("need at least one trajectory")
        self.trajectories = dict(trajectories)
        self.params = params or VehicleParams()
        self.tick_dt = 1.0 / plant_substeps_hz
        self.traj_id = next(iter(sorted(self.trajectories)))
        self.path = self.trajectories[self.traj_id]
        self.sim_t = 0.0
        self.tick_count = 0
        self.connected_clients = 0
        self.recording = False
        self.session = HilSession(session_id=1)
        self._next_session_id = 2
        self.command = Command(0.0, 0.0)
        self._pending = Command(0.0, 0.0)
        self._last_cmd_sim_t: float | None = None
        self._reset_vehicle()

    # -- network-facing -----------------------------------------------------

    def client_connected(self) -> None:
        self.connected_clients += 1

    def client_disconnected(self) -> None:
        self.connected_clients = max(0, self.connected_clients - 1)
        if self.connected_clients == 0:
            # hold zero throttle while paused; steering is irrelevant at rest
            self._pending = Command(self._pending.steering, 0.0)
            self.command = Command(self.command.steering, 0.0)

    def handle_message(self, msg: dict) -> None:
        """Apply one client message; unknown fields are ignored and
        out-of-range values clamped, never rejected mid-drive."""
        mtype = msg.get("type")
        if mtype == "cmd":
            steering = msg.get("steering", 0.0)
            throttle = msg.get("throttle", 0.0)
            if not (
                isinstance(steering, (int, float))
                and isinstance(throttle, (int, float))
                and math.isfinite(steering)
                and math.isfinite(throttle)
            ):
                return
            self._pending = Command(float(steering), float(throttle))  # clamps
            self._last_cmd_sim_t = self.sim_t
        elif mtype == "ctl":
            self._handle_control(msg)

    def _handle_control(self, msg: dict) -> None:
        action = msg.get("action")
        if action == "start_recording":
            self.recording = True
        elif action == "stop_recording":
            self.recording = False
        elif action == "reset":
            self._reset_vehicle()
        elif action == "select_trajectory":
            traj_id = msg.get("id")
            if traj_id in self.trajectories:
                self.traj_id = traj_id
                self.path = self.trajectories[traj_id]
                self._reset_vehicle()

    def trajectory_listing(self) -> list[dict]:
        out = []
        for traj_id, path in sorted(self.trajectories.items()):
            out.append(
                {
                    "id": traj_id,
                    "name": traj_id.replace("_", " "),
                    "closed": path.closed,
                    "length": round(path.total_length, 3),
                    "speeds": [
                        round(float(path.vs.min()), 3),
                        round(float(path.vs.max()), 3),
                    ],
                }
            )
        return out

    # -- simulation core ----------------------------------------------------

    def _reset_vehicle(self) -> None:
        r = self.path.sample(0)
        self.vehicle = VehicleState(r.x, r.y, r.theta, 0.0)

    def start_new_session(self) -> HilSession:
        finished = self.session
        self.session = HilSession(session_id=self._next_session_id)
        self._next_session_id += 1
        self.recording = False
        return finished

    def tick(self) -> StateBroadcast | None:
        """Advance one base tick; returns a broadcast when one is due.

        With no client connected the vehicle and clock freeze but
        broadcasts keep flowing (idle contract).
        """
        paused = self.connected_clients == 0
        if not paused:
            if self.tick_count % COMMAND_EVERY == 0:
                cmd = self._pending
                if (
                    self._last_cmd_sim_t is None
                    or self.sim_t - self._last_cmd_sim_t > STALE_COMMAND_S
                ):
                    cmd = Command(cmd.steering, 0.0)  # dead-man: cut throttle
                self.command = cmd
            self.vehicle = step(self.vehicle, self.command, self.tick_dt, self.params)
            self.sim_t += self.tick_dt

            if self.recording and self.tick_count % RECORD_EVERY == 0:
                e = self._current_error()
                self.session.samples.append(
                    Sample(
                        e=e,
                        u=self.command,
                        source="hil",
                        traj_id=self.traj_id,
                        t=self.sim_t,
                    )
                )
                self.session.state_log.append(
                    (
                        self.sim_t,
                        self.vehicle.x,
                        self.vehicle.y,
                        self.vehicle.theta,
                        self.vehicle.v,
                        self.traj_id,
                    )
                )

        broadcast = None
        if self.tick_count % BROADCAST_EVERY == 0:
            broadcast = self._make_broadcast()
        self.tick_count += 1
        return broadcast

    def _current_error(self) -> ErrorState:
        _, ref, _ = closest_point(self.path, (self.vehicle.x, self.vehicle.y))
        return error_state(self.vehicle, ref)

    def _make_broadcast(self) -> StateBroadcast:
        idx, ref_sample, _ = closest_point(
            self.path, (self.vehicle.x, self.vehicle.y)
        )
        e = error_state(self.vehicle, ref_sample)
        n = len(self.path)
        stride = max(1, int(round(0.3 / self.path.spacing)))
        ref_pts = []
        for k in range(50):
            j = idx + k * stride
            if self.path.closed:
                j %= n
            elif j >= n:
                break
            ref_pts.append((float(self.path.xs[j]), float(self.path.ys[j])))
        progress = float(self.path.ss[idx]) / max(self.path.total_length, 1e-9)
        return StateBroadcast(
            session_id=self.session.session_id,
            t=self.sim_t,
            state=self.vehicle,
            error=e,
            ref=ref_pts,
            recording=self.recording,
            progress=progress,
            samples=len(self.session.samples),
        )


STATE_LOG_HEADER = "t,x,y,theta,v,traj_id"


def finalize_session(session: HilSession, out_path) -> str:
    """Write the session's dataset CSV (plus a sidecar with the true
    states at each recorded tick) and return the dataset path."""
    if not session.samples:
        raise ValueError(f"session {session.session_id} has no samples")
    ds = Dataset(session.samples)
    try:
        ds.save_csv(out_path)
        side = str(out_path).rsplit(".", 1)[0] + "_states.csv"
        with open(side, "w") as fh:
            fh.write(STATE_LOG_HEADER + "\n")
            for t, x, y, theta, v, traj_id in session.state_log:
                fh.write(f"{t!r},{x!r},{y!r},{theta!r},{v!r},{traj_id}\n")
    except OSError as exc:
        raise OSError(f"failed to write session file {out_path}: {exc}") from exc
    return str(out_path)


# ---------------------------------------------------------------------------
# asyncio / websocket layer


def create_app(bridge: HilBridge, time_scale: float = 1.0, out_dir: str | None = None):
    """FastAPI app exposing /drive (websocket) and /trajectories."""
    clients: set = set()

    async def ticker() -> None:
        tick_wall = bridge.tick_dt / time_scale
        next_t = time.perf_counter()
        while True:
            broadcast = bridge.tick()
            if broadcast is not None and clients:
                msg = broadcast.to_message()
                dead = []
                for ws in clients:
                    try:
                        await ws.send_json(msg)
                    except Exception:
                        dead.append(ws)
                for ws in dead:
                    clients.discard(ws)
            next_t += tick_wall
            delay = next_t - time.perf_counter()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                # fell behind wall clock; resync rather than burst
                next_t = time.perf_counter()
                await asyncio.sleep(0)

    @contextlib.asynccontextmanager
    async def lifespan(app: "FastAPI"):
        task = asyncio.create_task(ticker())
        yield
        task.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await task
        if out_dir and bridge.session.samples:
            os.makedirs(out_dir, exist_ok=True)
            finalize_session(
                bridge.start_new_session(),
                os.path.join(out_dir, f"hil_session_{int(time.time())}.csv"),
            )

    app = FastAPI(title="trajlab HIL bridge", lifespan=lifespan)

    @app.get("/trajectories")
    async def trajectories():
        return bridge.trajectory_listing()

    @app.websocket("/drive")
    async def drive(ws: WebSocket):
        await ws.accept()
        clients.add(ws)
        bridge.client_connected()
        try:
            while True:
                msg = await ws.receive_json()
                if isinstance(msg, dict):
                    bridge.handle_message(msg)
        except WebSocketDisconnect:
            pass
        finally:
            clients.discard(ws)
            bridge.client_disconnected()

    app.state.bridge = bridge
    return app


def serve(
    host: str,
    port: int,
    trajectories: dict[str, ReferencePath],
    params: VehicleParams | None = None,
    out_dir: str = "hil_sessions",
    time_scale: float = 1.0,
) -> None:
    """Run the bridge until interrupted."""
    import uvicorn

    bridge = HilBridge(trajectories, params)
    app = create_app(bridge, time_scale=time_scale, out_dir=out_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
