"""Behavioral cloning of a tracking controller.

Datasets pair body-frame error states with issued commands, collected
either from closed-loop MPC rollouts or ingested from human-in-the-loop
recordings. A small two-hidden-layer regressor maps error state to
command; it is trained here from scratch (plain numpy, Adam, MSE) so the
whole pipeline stays dependency-light and bit-deterministic.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .control import ErrorState, MpcConfig, MpcController, MpcSolveError, error_state
from .dynamics import Command, VehicleParams, VehicleState, step, wrap_angle
from .paths import ReferencePath, closest_point

DATASET_CSV_HEADER = "e1,e2,e3,e4,steering,throttle,source,traj_id,t"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class Sample:
    e: ErrorState
    u: Command
    source: str  # "mpc" | "hil"
    traj_id: str
    t: float


@dataclass(frozen=True)
class Normalization:
    """Per-input mean and standard deviation (zero-variance columns get
    sigma = 1 so normalization stays invertible)."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, e: np.ndarray) -> np.ndarray:
        return (e - self.mean) / self.std


class Dataset:
    """Ordered sample collection with lazily maintained input statistics."""

    def __init__(self, samples: list[Sample] | None = None):
        self._samples: list[Sample] = list(samples) if samples else []
        self._norm: Normalization | None = None
        self.clamped_rows = 0  # set by ingest when wire values were out of range

    def __len__(self) -> int:
        return len(self._samples)

    def __iter__(self):
        return iter(self._samples)

    def __getitem__(self, i: int) -> Sample:
        return self._samples[i]

    @property
    def samples(self) -> list[Sample]:
        return list(self._samples)

    def add(self, sample: Sample) -> None:
        self._samples.append(sample)
        self._norm = None

    def extend(self, samples) -> None:
        self._samples.extend(samples)
        self._norm = None

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        e = np.array([s.e.as_array() for s in self._samples])
        u = np.array([[s.u.steering, s.u.throttle] for s in self._samples])
        return e, u

    @property
    def normalization(self) -> Normalization:
        if self._norm is None:
            e, _ = self.arrays()
            mean = e.mean(axis=0)
            std = e.std(axis=0)
            std[std <= 0.0] = 1.0
            self._norm = Normalization(mean=mean, std=std)
        return self._norm

    def save_csv(self, file) -> None:
        own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
        fh = open(file, "w") if own else file
        try:
            fh.write(DATASET_CSV_HEADER + "\n")
            for s in self._samples:
                fh.write(
                    f"{s.e.e1!r},{s.e.e2!r},{s.e.e3!r},{s.e.e4!r},"
                    f"{s.u.steering!r},{s.u.throttle!r},{s.source},{s.traj_id},{s.t!r}\n"
                )
        finally:
            if own:
                fh.close()


def ingest_hil_recording(file) -> Dataset:
    """Parse a recording CSV into a Dataset tagged source=hil.

    Malformed rows raise with their line number; out-of-range commands
    are clamped with a counted warning.
    """
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "r") if own else file
    try:
        header = fh.readline().strip()
        if not header:
            raise ValueError("empty recording file")
        if header != DATASET_CSV_HEADER:
            raise ValueError(f"unexpected recording header: {header!r}")
        ds = Dataset()
        clamped = 0
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 9:
                raise ValueError(f"line {lineno}: expected 9 fields, got {len(parts)}")
            try:
                e1, e2, e3, e4 = (float(p) for p in parts[:4])
                steering, throttle = float(parts[4]), float(parts[5])
                t = float(parts[8])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            if not all(
                math.isfinite(v) for v in (e1, e2, e3, e4, steering, throttle, t)
            ):
                raise ValueError(f"line {lineno}: non-finite value")
            if not (-1.0 <= steering <= 1.0 and 0.0 <= throttle <= 1.0):
                clamped += 1
            ds.add(
                Sample(
                    e=ErrorState(e1, e2, e3, e4),
                    u=Command(steering, throttle),  # clamps
                    source="hil",
                    traj_id=parts[7],
                    t=t,
                )
            )
    finally:
        if own:
            fh.close()
    if len(ds) == 0:
        raise ValueError("recording contains no samples")
    if clamped:
        warnings.warn(f"clamped {clamped} out-of-range command values", stacklevel=2)
    ds.clamped_rows = clamped
    return ds


# ---------------------------------------------------------------------------
# dataset collection from closed-loop MPC rollouts


@dataclass(frozen=True)
class PerturbationSpec:
    """Uniform ranges for per-episode initial offsets from the path start."""

    lateral: float = 1.0  # m
    heading: float = 0.3  # rad
    speed: float = 0.5  # m/s


def perturbed_start(
    path: ReferencePath, lateral: float, heading: float, speed: float
) -> VehicleState:
    r = path.sample(0)
    sin_t, cos_t = math.sin(r.theta), math.cos(r.theta)
    return VehicleState(
        x=r.x - lateral * sin_t,
        y=r.y + lateral * cos_t,
        theta=wrap_angle(r.theta + heading),
        v=max(0.0, r.v + speed),
    )


def collect_closed_loop(
    trajectories: dict[str, ReferencePath],
    controller_factory,
    p: VehicleParams,
    run_seconds: float,
    perturbation: PerturbationSpec,
    seed: int,
    source: str,
    control_hz: float = 10.0,
    plant_hz: float = 100.0,
    episode_seconds: float = 10.0,
) -> Dataset:
    """Roll a controller along each trajectory, recording (error state,
    command) at the control rate.

    Each trajectory's duration is split into episodes; every episode
    restarts from a freshly perturbed initial state so the recorded error
    states cover more than the near-converged regime.
    """
    if not trajectories:
        raise ValueError("no trajectories given")
    substeps = int(round(plant_hz / control_hz))
    if substeps < 1 or abs(substeps * control_hz - plant_hz) > 1e-9:
        raise ValueError("plant_hz must be an integer multiple of control_hz")
    plant_dt = 1.0 / plant_hz
    control_dt = 1.0 / control_hz
    episodes = max(1, int(round(run_seconds / episode_seconds)))
    steps_per_episode = int(round(run_seconds * control_hz)) // episodes

    rng = np.random.default_rng(seed)
    ds = Dataset()
    for traj_id, path in sorted(trajectories.items()):
        controller = controller_factory(path)
        for _ in range(episodes):
            lat = rng.uniform(-perturbation.lateral, perturbation.lateral)
            head = rng.uniform(-perturbation.heading, perturbation.heading)
            dv = rng.uniform(-perturbation.speed, perturbation.speed)
            q = perturbed_start(path, lat, head, dv)
            controller.reset()
            t = 0.0
            for _ in range(steps_per_episode):
                try:
                    u, diag = controller.command(q)
                except MpcSolveError as exc:
                    raise MpcSolveError(
                        exc.step, f"{exc} (trajectory {traj_id})"
                    ) from exc
                ds.add(Sample(e=diag["e0"], u=u, source=source, traj_id=traj_id, t=t))
                for _ in range(substeps):
                    q = step(q, u, plant_dt, p)
                t += control_dt
    return ds


def collect_mpc_dataset(
    trajectories: dict[str, ReferencePath],
    p: VehicleParams,
    mpc: MpcConfig,
    run_seconds: float = 60.0,
    perturbation: PerturbationSpec | None = None,
    seed: int = 0,
    control_hz: float = 10.0,
    plant_hz: float = 100.0,
    episode_seconds: float = 10.0,
) -> Dataset:
    """Record the commands an MPC issues while tracking each trajectory."""
    perturbation = perturbation or PerturbationSpec()
    return collect_closed_loop(
        trajectories,
        lambda path: MpcController(path, mpc, p),
        p,
        run_seconds,
        perturbation,
        seed,
        source="mpc",
        control_hz=control_hz,
        plant_hz=plant_hz,
        episode_seconds=episode_seconds,
    )


# ---------------------------------------------------------------------------
# the regressor


@dataclass
class NetworkParams:
    """Two-hidden-layer feed-forward regressor, 4 -> H1 -> H2 -> 2.

    Hidden layers use tanh; the output steering channel is squashed by
    tanh and the throttle channel by a sigmoid, so emitted commands are
    in range by construction.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "tanh"
    output_activations: tuple[str, str] = ("tanh", "sigmoid")

    def __post_init__(self):
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ValueError("expected 3 affine layers")
        sizes = self.layer_sizes
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} has inconsistent shapes")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")
        if self.hidden_activation != "tanh":
            raise ValueError("only tanh hidden activation is supported")
        if tuple(self.output_activations) != ("tanh", "sigmoid"):
            raise ValueError("output activations must be (tanh, sigmoid)")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            tuple(self.output_activations),
        )


def init_network(
    hidden1: int = 32, hidden2: int = 32, seed: int = 0
) -> NetworkParams:
    """Glorot-uniform initialized 4 -> h1 -> h2 -> 2 network."""
    rng = np.random.default_rng(seed)
    sizes = [4, hidden1, hidden2, 2]
    weights, biases = [], []
    for nin, nout in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (nin + nout))
        weights.append(rng.uniform(-limit, limit, size=(nin, nout)))
        biases.append(np.zeros(nout))
    return NetworkParams(weights, biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def forward_batch(params: NetworkParams, e_norm: np.ndarray) -> np.ndarray:
    """Network outputs for a batch of normalized error states, (n, 4) -> (n, 2)."""
    h1 = np.tanh(e_norm @ params.weights[0] + params.biases[0])
    h2 = np.tanh(h1 @ params.weights[1] + params.biases[1])
    z = h2 @ params.weights[2] + params.biases[2]
    return np.column_stack([np.tanh(z[:, 0]), _sigmoid(z[:, 1])])


def forward(
    params: NetworkParams, e: ErrorState, normalization: Normalization
) -> Command:
    """Command for one error state."""
    out = forward_batch(params, normalization.apply(e.as_array())[None, :])[0]
    return Command(steering=float(out[0]), throttle=float(out[1]))


def loss_and_gradients(
    params: NetworkParams, e_norm: np.ndarray, u: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean squared error over both outputs plus its parameter gradients."""
    n = e_norm.shape[0]
    w1, w2, w3 = params.weights
    b1, b2, b3 = params.biases
    h1 = np.tanh(e_norm @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    z = h2 @ w3 + b3
    y = np.column_stack([np.tanh(z[:, 0]), _sigmoid(z[:, 1])])

    diff = y - u
    loss = float(np.mean(diff**2))
    dy = 2.0 * diff / diff.size
    dz = np.column_stack(
        [dy[:, 0] * (1.0 - y[:, 0] ** 2), dy[:, 1] * y[:, 1] * (1.0 - y[:, 1])]
    )
    gw3 = h2.T @ dz
    gb3 = dz.sum(axis=0)
    dh2 = (dz @ w3.T) * (1.0 - h2**2)
    gw2 = h1.T @ dh2
    gb2 = dh2.sum(axis=0)
    dh1 = (dh2 @ w2.T) * (1.0 - h1**2)
    gw1 = e_norm.T @ dh1
    gb1 = dh1.sum(axis=0)
    return loss, [gw1, gw2, gw3], [gb1, gb2, gb3]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 600
    batch_size: int = 48
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    val_split: float = 0.1
    hidden1: int = 32
    hidden2: int = 32
    decay_at: float = 0.7  # fraction of epochs after which lr is scaled
    decay_factor: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.val_split < 1.0):
            raise ValueError("val_split must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0.0:
            raise ValueError("epochs, batch size, and learning rate must be positive")


@dataclass
class TrainHistory:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)


def train(
    data: Dataset, cfg: TrainConfig | None = None
) -> tuple[NetworkParams, Normalization, TrainHistory]:
    """Fit the regressor by seeded mini-batch Adam on the MSE objective."""
    cfg = cfg or TrainConfig()
    if len(data) < 10:
        raise ValueError(f"need at least 10 samples to train, got {len(data)}")
    e_raw, u = data.arrays()
    norm = data.normalization
    e = norm.apply(e_raw)

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(data))
    n_val = max(1, int(round(cfg.val_split * len(data))))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    e_tr, u_tr = e[train_idx], u[train_idx]
    e_va, u_va = e[val_idx], u[val_idx]

    params = init_network(cfg.hidden1, cfg.hidden2, seed=cfg.seed)
    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]

    history = TrainHistory()
    step_count = 0
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate
        if epoch >= cfg.decay_at * cfg.epochs:
            lr *= cfg.decay_factor
        order = rng.permutation(len(e_tr))
        epoch_loss = 0.0
        seen = 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss, gw, gb = loss_and_gradients(params, e_tr[idx], u_tr[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            epoch_loss += loss * len(idx)
            seen += len(idx)
            step_count += 1
            corr1 = 1.0 - cfg.beta1**step_count
            corr2 = 1.0 - cfg.beta2**step_count
            for arrs, grads, ms, vs in (
                (params.weights, gw, m_w, v_w),
                (params.biases, gb, m_b, v_b),
            ):
                for i, g in enumerate(grads):
                    ms[i] = cfg.beta1 * ms[i] + (1.0 - cfg.beta1) * g
                    vs[i] = cfg.beta2 * vs[i] + (1.0 - cfg.beta2) * g * g
                    arrs[i] -= (
                        lr * (ms[i] / corr1) / (np.sqrt(vs[i] / corr2) + cfg.adam_eps)
                    )
        history.train.append(epoch_loss / max(1, seen))
        val_pred = forward_batch(params, e_va)
        val_loss = float(np.mean((val_pred - u_va) ** 2))
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch)
        history.val.append(val_loss)
    return params, norm, history


# ---------------------------------------------------------------------------
# model file io

MODEL_MAGIC = "trajlab-model v1"


def save_model(params: NetworkParams, normalization: Normalization, file) -> None:
    """Self-describing text dump: header lines, then row-major weights and
    biases per layer at full decimal precision."""
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w") if own else file
    try:
        fh.write(MODEL_MAGIC + "\n")
        fh.write("layers " + " ".join(str(n) for n in params.layer_sizes) + "\n")
        fh.write(f"hidden {params.hidden_activation}\n")
        fh.write("output " + " ".join(params.output_activations) + "\n")
        fh.write("norm_mean " + " ".join(repr(float(v)) for v in normalization.mean) + "\n")
        fh.write("norm_std " + " ".join(repr(float(v)) for v in normalization.std) + "\n")
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            fh.write(f"W{i} {w.shape[0]} {w.shape[1]}\n")
            for row in w:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
            fh.write(f"b{i} {b.shape[0]}\n")
            fh.write(" ".join(repr(float(v)) for v in b) + "\n")
    finally:
        if own:
            fh.close()


def load_model(file) -> tuple[NetworkParams, Normalization]:
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "r") if own else file
    try:
        lines = [line.rstrip("\n") for line in fh]
    finally:
        if own:
            fh.close()
    pos = 0

    def next_line() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise ValueError("model file truncated")
        line = lines[pos]
        pos += 1
        return line

    if next_line() != MODEL_MAGIC:
        raise ValueError("not a trajlab model file (bad magic line)")
    head = next_line().split()
    if head[0] != "layers" or len(head) != 5:
        raise ValueError("malformed layer-size line")
    sizes = [int(v) for v in head[1:]]
    if sizes[0] != 4 or sizes[-1] != 2:
        raise ValueError(f"unsupported layer sizes {sizes}")
    hidden = next_line().split()
    if hidden[:1] != ["hidden"]:
        raise ValueError("malformed hidden-activation line")
    out_line = next_line().split()
    if out_line[:1] != ["output"] or len(out_line) != 3:
        raise ValueError("malformed output-activation line")
    mean_line = next_line().split()
    std_line = next_line().split()
    if mean_line[:1] != ["norm_mean"] or std_line[:1] != ["norm_std"]:
        raise ValueError("malformed normalization lines")
    mean = np.array([float(v) for v in mean_line[1:]])
    std = np.array([float(v) for v in std_line[1:]])
    if mean.shape != (4,) or std.shape != (4,):
        raise ValueError("normalization stats must have 4 entries")

    weights, biases = [], []
    for i in range(3):
        header = next_line().split()
        if header[0] != f"W{i}" or len(header) != 3:
            raise ValueError(f"malformed weight header for layer {i}")
        rows, cols = int(header[1]), int(header[2])
        if rows != sizes[i] or cols != sizes[i + 1]:
            raise ValueError(f"layer {i} weight shape mismatch")
        w = np.array(
            [[float(v) for v in next_line().split()] for _ in range(rows)]
        )
        if w.shape != (rows, cols):
            raise ValueError(f"layer {i} weight data mismatch")
        bh = next_line().split()
        if bh[0] != f"b{i}" or int(bh[1]) != cols:
            raise ValueError(f"malformed bias header for layer {i}")
        b = np.array([float(v) for v in next_line().split()])
        if b.shape != (cols,):
            raise ValueError(f"layer {i} bias data mismatch")
        weights.append(w)
        biases.append(b)
    params = NetworkParams(
        weights, biases, hidden[1], (out_line[1], out_line[2])
    )
    return params, Normalization(mean=mean, std=std)


class NnController:
    """Closed-loop tracking controller backed by a trained network."""

    def __init__(
        self,
        path: ReferencePath,
        params: NetworkParams,
        normalization: Normalization,
    ):
        self.path = path
        self.params = params
        self.normalization = normalization
        self._hint: int | None = None

    def reset(self) -> None:
        self._hint = None

    def command(self, q: VehicleState) -> tuple[Command, dict]:
        idx, ref, dist = closest_point(self.path, (q.x, q.y), hint_index=self._hint)
        self._hint = idx
        e0 = error_state(q, ref)
        u = forward(self.params, e0, self.normalization)
        return u, {"e0": e0, "ref_index": idx, "closest_distance": dist}
