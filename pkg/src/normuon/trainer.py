"""Desk-scale MLP training harness with exact analytic gradients.

Everything is deterministic from one config seed: data, labels, noise,
model init, validation split, and batch shuffling each come from named
substreams of the counter-based generator, so any run can be reproduced
bit-for-bit from its manifest. Timing (wall_micros) is the only
non-reproducible column.
"""

from dataclasses import dataclass, field, replace
import csv
import hashlib
import math
import time

import numpy as np

from .diagnostics import trajectory_probe
from .errors import ConfigError, DivergenceError
from .matrix_core import matrix_to_bytes
from .optimizers import (
    OPTIMIZER_NAMES,
    OptimizerConfig,
    init_state,
    route_param,
    step_param_traced,
)
from .rng import SplitMix64, derive_seed

TASK_KINDS = ("teacher_regression", "gaussian_classification")
ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class SyntheticTask:
    kind: str
    input_dim: int
    output_dim: int
    sample_count: int
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        for name in ("input_dim", "output_dim", "sample_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")

    @property
    def loss_kind(self) -> str:
        return "mse" if self.kind == "teacher_regression" else "cross_entropy"


class MlpModel:
    """Fully connected net; weight rows are output neurons, output is linear."""

    def __init__(self, weights, biases, activation: str):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        self.weights = list(weights)
        self.biases = list(biases)  # each (1, fan_out)
        self.activation = activation

    @classmethod
    def build(cls, layer_dims, activation: str, seed: int) -> "MlpModel":
        """Gaussian init with std 1/sqrt(fan_in), zero biases.

        Entries are drawn layer by layer in row-major order from a single
        stream, so the init is a pure function of (layer_dims, seed).
        """
        if len(layer_dims) < 2:
            raise ConfigError("need at least an input and an output dimension")
        rng = SplitMix64(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            scale = 1.0 / math.sqrt(fan_in)
            weights.append(rng.gauss_matrix(fan_out, fan_in, scale))
            biases.append(np.zeros((1, fan_out)))
        return cls(weights, biases, activation)

    @property
    def layer_dims(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def param_items(self):
        """(name, kind, array) triples in a fixed order."""
        items = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            items.append((f"layer{i}.weight", "hidden_2d", w))
            items.append((f"layer{i}.bias", "bias", b))
        return items

    def set_param(self, name: str, value: np.ndarray) -> None:
        idx = int(name.split(".")[0].removeprefix("layer"))
        if name.endswith(".weight"):
            self.weights[idx] = value
        else:
            self.biases[idx] = value

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = self._act(h @ w.T + b)
        return h @ self.weights[-1].T + self.biases[-1]


def teacher_model(task: SyntheticTask) -> MlpModel:
    """The fixed network whose outputs label a teacher_regression task."""
    dims = [task.input_dim, 2 * task.input_dim, task.output_dim]
    return MlpModel.build(dims, "tanh", derive_seed(task.seed, "teacher"))


def gen_synthetic(task: SyntheticTask, split: str = "train"):
    """Deterministic (inputs, targets) arrays for a named split."""
    data_rng = SplitMix64(derive_seed(task.seed, f"data:{split}"))
    x = data_rng.gauss_matrix(task.sample_count, task.input_dim)
    if task.kind == "teacher_regression":
        y = teacher_model(task).forward(x)
        if task.noise_std > 0:
            noise_rng = SplitMix64(derive_seed(task.seed, f"noise:{split}"))
            y = y + noise_rng.gauss_matrix(*y.shape, scale=task.noise_std)
        return x, y
    # Class-conditional Gaussians: shared means, split-specific samples.
    means_rng = SplitMix64(derive_seed(task.seed, "classes"))
    means = means_rng.gauss_matrix(task.output_dim, task.input_dim, scale=2.0)
    label_rng = SplitMix64(derive_seed(task.seed, f"labels:{split}"))
    labels = [label_rng.next_u64() % task.output_dim for _ in range(task.sample_count)]
    y = np.zeros((task.sample_count, task.output_dim))
    for i, c in enumerate(labels):
        x[i] += means[c]
        y[i, c] = 1.0
    return x, y


def _loss_and_output_grad(pred: np.ndarray, y: np.ndarray, loss_kind: str):
    n = pred.shape[0]
    if loss_kind == "mse":
        diff = pred - y
        loss = float(np.mean(diff * diff))
        return loss, (2.0 / diff.size) * diff
    if loss_kind == "cross_entropy":
        shifted = pred - pred.max(axis=1, keepdims=True)
        logz = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
        logp = shifted - logz
        loss = float(-np.sum(y * logp) / n)
        return loss, (np.exp(logp) - y) / n
    raise ConfigError(f"unknown loss {loss_kind!r}")


def evaluate(model: MlpModel, x: np.ndarray, y: np.ndarray, loss_kind: str) -> float:
    loss, _ = _loss_and_output_grad(model.forward(x), y, loss_kind)
    return loss


def forward_backward(model: MlpModel, x: np.ndarray, y: np.ndarray, loss_kind: str):
    """Loss and exact gradients for every parameter, as a name-keyed dict."""
    acts = [x]
    zs = []
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = h @ w.T + b
        zs.append(z)
        h = model._act(z)
        acts.append(h)
    pred = h @ model.weights[-1].T + model.biases[-1]
    loss, dz = _loss_and_output_grad(pred, y, loss_kind)

    grads = {}
    for i in range(len(model.weights) - 1, -1, -1):
        grads[f"layer{i}.weight"] = dz.T @ acts[i]
        grads[f"layer{i}.bias"] = dz.sum(axis=0, keepdims=True)
        if i > 0:
            dh = dz @ model.weights[i]
            if model.activation == "tanh":
                dz = dh * (1.0 - acts[i] * acts[i])
            else:
                dz = dh * (zs[i - 1] > 0.0)
    return loss, grads


def finite_diff_check(model: MlpModel, x, y, loss_kind: str,
                      h_scale: float = 1e-6) -> float:
    """Max relative error of analytic gradients vs central differences.

    The denominator is floored at 1e-3 so near-zero entries are compared
    absolutely instead of amplifying finite-difference noise.
    """
    _, grads = forward_backward(model, x, y, loss_kind)
    worst = 0.0
    for name, _kind, arr in model.param_items():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            h = h_scale * max(1.0, abs(orig))
            arr[idx] = orig + h
            up = evaluate(model, x, y, loss_kind)
            arr[idx] = orig - h
            down = evaluate(model, x, y, loss_kind)
            arr[idx] = orig
            fd = (up - down) / (2.0 * h)
            an = float(grads[name][idx])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-3)
            worst = max(worst, rel)
    return worst


SCHEDULE_KINDS = ("constant", "warmup_linear_decay", "wsd")


def lr_schedule(step: int, total_steps: int, kind: str, warmup_steps: int = 0,
                decay_start_frac: float = 0.8) -> float:
    """Learning-rate multiplier in [0, 1] at an integer step."""
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {kind!r}")
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step must be in [0, {total_steps}], got {step}")
    if warmup_steps < 0:
        raise ConfigError(f"warmup_steps must be >= 0, got {warmup_steps}")
    if not 0.0 <= decay_start_frac <= 1.0:
        raise ConfigError(f"decay_start_frac must be in [0, 1], got {decay_start_frac}")
    if kind == "constant":
        return 1.0
    if warmup_steps >= total_steps:
        raise ConfigError(f"warmup_steps must be < total_steps for {kind}")
    if step < warmup_steps:
        return step / warmup_steps
    if kind == "warmup_linear_decay":
        return (total_steps - step) / (total_steps - warmup_steps)
    decay_start = max(float(warmup_steps), decay_start_frac * total_steps)
    if step < decay_start:
        return 1.0
    if decay_start >= total_steps:
        return 0.0 if step == total_steps else 1.0
    return (total_steps - step) / (total_steps - decay_start)


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "constant"
    warmup_steps: int = 0
    decay_start_frac: float = 0.8

    def multiplier(self, step: int, total_steps: int) -> float:
        return lr_schedule(step, total_steps, self.kind, self.warmup_steps,
                           self.decay_start_frac)


@dataclass
class RunRow:
    step: int
    train_loss: float
    val_loss: float
    effective_lr: float
    wall_micros: int


@dataclass
class RunRecord:
    rows: list
    checksum: str
    final_params: dict
    probe_rows: list = field(default_factory=list)       # (step, param, GeometryReport)
    step_reports: list = field(default_factory=list)     # (step, param, StepReport)


def weights_checksum(model: MlpModel) -> str:
    digest = hashlib.sha256()
    for name, _kind, arr in model.param_items():
        digest.update(name.encode())
        digest.update(matrix_to_bytes(arr))
    return digest.hexdigest()


# The stable betas used for the non-orthogonalized (adamw) side of a run.
AUX_ADAM_BETAS = (0.9, 0.95)


def param_step_config(cfg: OptimizerConfig, optimizer: str, algo: str, name: str,
                      eff_lr: float, aux_lr_scale: float = 1.0,
                      decay_hidden_only: bool = True) -> OptimizerConfig:
    """Per-parameter config for one step at the scheduled learning rate.

    Parameters routed away from an orthogonalized run fall back to Adam
    betas and skip weight decay; decay otherwise applies to weight
    matrices only unless decay_hidden_only is off.
    """
    if algo == "adamw" and optimizer != "adamw":
        return replace(cfg, lr=eff_lr * aux_lr_scale,
                       beta1=AUX_ADAM_BETAS[0], beta2=AUX_ADAM_BETAS[1],
                       bias_correction=True, weight_decay=0.0)
    wd = cfg.weight_decay
    if decay_hidden_only and not name.endswith(".weight"):
        wd = 0.0
    return replace(cfg, lr=eff_lr, weight_decay=wd)


class BatchStream:
    """Deterministic epoch-shuffled mini-batches over a fixed training set.

    A zero `batch_size` (or one covering the whole set) yields the full
    arrays every call. Every consumer of the same (seed, batch_size)
    sees the identical batch sequence, which is what lets the sharded
    engine reproduce a single-device run.
    """

    def __init__(self, x: np.ndarray, y: np.ndarray, batch_size: int, seed: int):
        self.x = x
        self.y = y
        self.batch_size = batch_size
        self.seed = seed
        self.count = x.shape[0]
        self._epoch = 0
        self._cursor = 0
        self._order = np.arange(self.count)

    def next(self):
        if not self.batch_size or self.batch_size >= self.count:
            return self.x, self.y
        if self._cursor + self.batch_size > self.count:
            self._epoch += 1
            self._cursor = 0
        if self._cursor == 0:
            shuffle_rng = SplitMix64(derive_seed(self.seed, f"shuffle:{self._epoch}"))
            order = np.arange(self.count)
            for i in range(len(order) - 1, 0, -1):
                j = shuffle_rng.next_u64() % (i + 1)
                order[i], order[j] = order[j], order[i]
            self._order = order
        sel = self._order[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return self.x[sel], self.y[sel]


class TrainingRun:
    """Mutable handle over one training run; diagnostics can drive it."""

    def __init__(self, model: MlpModel, task: SyntheticTask, optimizer: str,
                 cfg: OptimizerConfig, total_steps: int,
                 schedule: ScheduleSpec = ScheduleSpec(), batch_size: int = 0,
                 aux_lr_scale: float = 1.0, decay_hidden_only: bool = True):
        if optimizer not in OPTIMIZER_NAMES:
            raise ConfigError(f"unknown optimizer {optimizer!r}")
        if total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
        self.model = model
        self.task = task
        self.optimizer = optimizer
        self.cfg = cfg
        self.total_steps = total_steps
        self.schedule = schedule
        self.batch_size = batch_size
        self.aux_lr_scale = aux_lr_scale
        self.decay_hidden_only = decay_hidden_only
        self.x_train, self.y_train = gen_synthetic(task, "train")
        self.x_val, self.y_val = gen_synthetic(task, "val")
        self.states = {}
        self.algos = {}
        self.param_order = []
        for name, kind, arr in model.param_items():
            routed = route_param(arr.shape, kind)
            algo = optimizer if routed == "orthogonalized" else "adamw"
            self.states[name] = init_state(arr, algo)
            self.algos[name] = algo
            self.param_order.append(name)
        self.param_ids = set(self.param_order)
        self.current_step = 0
        self.rows = []
        self.step_reports = []
        self._batches = BatchStream(self.x_train, self.y_train, batch_size, task.seed)

    def _param_cfg(self, name: str, eff_lr: float) -> OptimizerConfig:
        return param_step_config(self.cfg, self.optimizer, self.algos[name], name,
                                 eff_lr, self.aux_lr_scale, self.decay_hidden_only)

    def _next_batch(self):
        return self._batches.next()

    def advance(self) -> dict:
        """One optimizer step; returns the per-parameter stage traces."""
        t0 = time.perf_counter_ns()
        step = self.current_step + 1
        x, y = self._next_batch()
        loss, grads = forward_backward(self.model, x, y, self.task.loss_kind)
        if not math.isfinite(loss):
            raise DivergenceError(step)
        eff_lr = self.cfg.lr * self.schedule.multiplier(self.current_step, self.total_steps)
        traces = {}
        for name in self.param_order:
            state, report, trace = step_param_traced(
                self.algos[name], self.states[name], grads[name],
                self._param_cfg(name, eff_lr))
            self.states[name] = state
            self.model.set_param(name, state.w)
            traces[name] = trace
            self.step_reports.append((step, name, report))
        val_loss = evaluate(self.model, self.x_val, self.y_val, self.task.loss_kind)
        if not math.isfinite(val_loss):
            raise DivergenceError(step)
        self.current_step = step
        wall = (time.perf_counter_ns() - t0) // 1000
        self.rows.append(RunRow(step, loss, val_loss, eff_lr, int(wall)))
        return traces

    def run(self, probe_param: str = "", probe_stride: int = 0) -> RunRecord:
        probe_rows = []
        if probe_param and probe_stride:
            for step, rep in trajectory_probe(self, probe_param, probe_stride):
                probe_rows.append((step, probe_param, rep))
        while self.current_step < self.total_steps:
            self.advance()
        finals = {name: arr.copy() for name, _k, arr in self.model.param_items()}
        return RunRecord(rows=self.rows, checksum=weights_checksum(self.model),
                         final_params=finals, probe_rows=probe_rows,
                         step_reports=self.step_reports)


def train_loop(model: MlpModel, task: SyntheticTask, optimizer: str,
               cfg: OptimizerConfig, total_steps: int,
               schedule: ScheduleSpec = ScheduleSpec(), probe_param: str = "",
               probe_stride: int = 0, batch_size: int = 0,
               aux_lr_scale: float = 1.0, decay_hidden_only: bool = True) -> RunRecord:
    """Build a TrainingRun, drive it to completion, and return its record."""
    run = TrainingRun(model, task, optimizer, cfg, total_steps, schedule,
                      batch_size, aux_lr_scale, decay_hidden_only)
    return run.run(probe_param, probe_stride)


RUN_HEADER = ["step", "train_loss", "val_loss", "effective_lr", "wall_micros"]


def write_run_csv(record: RunRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUN_HEADER)
        for r in record.rows:
            writer.writerow([r.step, repr(r.train_loss), repr(r.val_loss),
                             repr(r.effective_lr), r.wall_micros])


STEP_REPORT_HEADER = ["step", "param", "update_fro_norm", "effective_lr",
                      "per_neuron_norm_cv"]


def write_step_reports_csv(record: RunRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STEP_REPORT_HEADER)
        for step, param, rep in record.step_reports:
            writer.writerow([step, param, repr(rep.update_fro_norm),
                             repr(rep.effective_lr), repr(rep.per_neuron_norm_cv)])
