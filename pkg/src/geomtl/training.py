"""Optimizers, the multi-task training loop, evaluation, and metric logging.

One training step: forward all frames, compute each task's loss, floor the
losses, collapse them through the configured combiner, backprop, and step
the optimizer (which also owns the uncertainty combiner's log-variance
scalars). Once per epoch the model is evaluated on the validation split
and the DWA loss history advances. Everything is seeded, single threaded,
and bit-reproducible: two runs with the same config produce identical
parameter trajectories and metrics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .combiners import (
    COMBINER_NAMES,
    CombinerState,
    dwa_weights,
    make_combiner,
    update_state,
)
from .data import load_dataset, split
from .losses import (
    HuberParams,
    cross_entropy,
    huber,
    pixel_accuracy,
    regression_accuracy,
)
from .model import TASKS, EncoderConfig, build_model
from .tensor import NonFiniteError, ShapeError, Tensor, backward, no_grad

_EPOCH_STREAM_TAG = 0x5E0C  # keeps epoch shuffles off the data generator's streams


class NumericAbort(RuntimeError):
    """A task loss went non-finite; carries the offending task's name."""

    def __init__(self, task: str, detail: str):
        super().__init__(f"non-finite loss for task '{task}' {detail}")
        self.task = task


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one training run needs. Tasks are listed in priority
    order; the fls combiner focuses on the first fls_m of them."""

    tasks: tuple = ("segmentation", "depth", "motion")
    num_frames: int = 1
    aggregation: str = "concat"
    combiner: str = "gls"
    fls_m: int | None = None
    weights: tuple | None = None
    dwa_temperature: float = 2.0
    loss_floor: float = 1e-12
    init_s: float = 0.0
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 8
    seed: int = 42
    dataset: str | None = None
    out: str | None = None
    huber_delta: float = 250.0
    depth_tol: float = 0.1
    base_channels: int = 8
    decoder_channels: int | None = None
    num_classes: int = 4
    train_fraction: float = 0.8
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(self.weights))
        if not self.tasks:
            raise ValueError("need at least one task")
        unknown = [t for t in self.tasks if t not in TASKS]
        if unknown:
            raise ValueError(
                f"unknown tasks {unknown}; valid tasks: {', '.join(TASKS)}")
        if len(set(self.tasks)) != len(self.tasks):
            raise ValueError(f"duplicate task names in {list(self.tasks)}")
        if self.combiner not in COMBINER_NAMES:
            raise ValueError(
                f"unknown combiner '{self.combiner}'; valid names: "
                f"{', '.join(COMBINER_NAMES)}")
        if self.combiner == "fls":
            if self.fls_m is None or not (1 <= self.fls_m <= len(self.tasks)):
                raise ValueError(
                    f"fls needs fls_m in [1, {len(self.tasks)}], got {self.fls_m}")
        if self.combiner == "weighted":
            if self.weights is None or len(self.weights) != len(self.tasks):
                raise ValueError(
                    f"weighted needs one weight per task ({len(self.tasks)})")
            if any(not (w > 0) for w in self.weights):
                raise ValueError(f"weights must be positive, got {self.weights}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(
                f"optimizer must be adam or sgd, got '{self.optimizer}'")
        for name in ("dwa_temperature", "lr", "adam_eps", "huber_delta",
                     "depth_tol"):
            v = getattr(self, name)
            if not (v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if self.loss_floor < 0:
            raise ValueError(f"loss_floor must be >= 0, got {self.loss_floor}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not (0 < v < 1):
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("epochs", "batch_size", "base_channels", "num_frames"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.num_frames not in (1, 2):
            raise ValueError(f"num_frames must be 1 or 2, got {self.num_frames}")
        if not (0 < self.train_fraction < 1):
            raise ValueError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if not (2 <= self.num_classes <= 20):
            raise ValueError(
                f"num_classes must lie in [2, 20], got {self.num_classes}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(
                f"dtype must be float32 or float64, got '{self.dtype}'")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        valid = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - valid)
        if unknown:
            raise ValueError(
                f"unknown config keys {unknown}; valid keys: {sorted(valid)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


@dataclass
class MetricsRecord:
    """One epoch of bookkeeping: per-task mean losses on both splits,
    validation accuracies, combined losses, and the combiner's effective
    per-task weights for that epoch."""

    epoch: int
    train_loss: dict
    val_loss: dict
    accuracy: dict
    combined_train_loss: float
    combined_val_loss: float
    weights: dict
    wall_clock: float = field(default=0.0, compare=False)


# ---- optimizers -----------------------------------------------------------


def _check_aligned(params: Sequence, grads: Sequence) -> None:
    if len(params) != len(grads):
        raise ShapeError(
            f"got {len(params)} params but {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ShapeError(
                f"param {i} has shape {np.shape(p)}, grad {np.shape(g)}")


def sgd_step(params: Sequence, grads: Sequence, lr: float) -> list:
    """Plain gradient descent on aligned lists of arrays: p - lr*g."""
    _check_aligned(params, grads)
    return [p - lr * g for p, g in zip(params, grads)]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], t=0)


def adam_step(params: Sequence, grads: Sequence, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple:
    """Bias-corrected Adam update; returns (new params, new state)."""
    _check_aligned(params, grads)
    _check_aligned(params, state.m)
    t = state.t + 1
    new_m, new_v, new_p = [], [], []
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - step)
    return new_p, AdamState(m=new_m, v=new_v, t=t)


# ---- data plumbing -----------------------------------------------------------


class _Arrays:
    """Samples flattened to contiguous arrays for cheap batch slicing."""

    def __init__(self, samples, dtype):
        self.n = len(samples)
        self.prev = np.stack([s.frame_prev for s in samples]).astype(dtype)
        self.curr = np.stack([s.frame_curr for s in samples]).astype(dtype)
        self.seg = np.stack([s.seg for s in samples]).astype(np.int64)
        self.depth = np.stack([s.depth for s in samples])
        self.motion = np.stack([s.motion for s in samples]).astype(np.int64)


def _frames_for(arrays: _Arrays, idx: np.ndarray, num_frames: int) -> list:
    if num_frames == 2:
        return [Tensor(arrays.prev[idx]), Tensor(arrays.curr[idx])]
    return [Tensor(arrays.curr[idx])]


def _task_losses(outputs: dict, arrays: _Arrays, idx: np.ndarray,
                 tasks, delta: float) -> dict:
    losses = {}
    for task in tasks:
        if task == "segmentation":
            losses[task] = cross_entropy(outputs[task], arrays.seg[idx])
        elif task == "depth":
            losses[task] = huber(outputs[task], arrays.depth[idx],
                                 HuberParams(delta))
        else:
            losses[task] = cross_entropy(outputs[task], arrays.motion[idx])
    return losses


def _effective_weights(config: ExperimentConfig, state: CombinerState) -> dict:
    """Per-task weight snapshot for the metrics row. DWA reports its ratio
    softmax, uncertainty reports 0.5*exp(-s); the scale-free combiners
    report 1 and `weighted` its fixed weights."""
    if config.combiner == "dwa":
        return dwa_weights(state)
    if config.combiner == "uncertainty":
        return {t: 0.5 * float(np.exp(-state.uncertainty_params[t].data))
                for t in config.tasks}
    if config.combiner == "weighted":
        return dict(zip(config.tasks, (float(w) for w in config.weights)))
    return {t: 1.0 for t in config.tasks}


# ---- evaluation -----------------------------------------------------------------


def evaluate(model, samples, config: ExperimentConfig,
             state: CombinerState | None = None,
             combiner=None) -> dict:
    """Mean per-task loss and accuracy over a split, walked in order in
    batches of config.batch_size; no parameters change. Returns
    {"loss": {...}, "accuracy": {...}, "combined_loss": float}."""
    missing = [t for t in config.tasks if t not in model.tasks]
    if missing:
        raise ValueError(
            f"model lacks heads for tasks {missing}; it has {list(model.tasks)}")
    if isinstance(samples, _Arrays):
        arrays = samples
    else:
        if len(samples) == 0:
            raise ValueError("cannot evaluate on an empty split")
        arrays = _Arrays(samples, np.dtype(config.dtype))
    if arrays.n == 0:
        raise ValueError("cannot evaluate on an empty split")
    loss_sums = {t: 0.0 for t in config.tasks}
    acc_sums = {t: 0.0 for t in config.tasks}
    with no_grad():
        for start in range(0, arrays.n, config.batch_size):
            idx = np.arange(start, min(start + config.batch_size, arrays.n))
            outputs = model.forward(_frames_for(arrays, idx, config.num_frames),
                                    logits=True)
            losses = _task_losses(outputs, arrays, idx, config.tasks,
                                  config.huber_delta)
            for task in config.tasks:
                loss_sums[task] += losses[task].item() * len(idx)
                if task == "segmentation":
                    acc = pixel_accuracy(outputs[task], arrays.seg[idx])
                elif task == "motion":
                    acc = pixel_accuracy(outputs[task], arrays.motion[idx])
                else:
                    acc = regression_accuracy(outputs[task], arrays.depth[idx],
                                              rel_tol=config.depth_tol)
                acc_sums[task] += acc * len(idx)
    loss = {t: loss_sums[t] / arrays.n for t in config.tasks}
    accuracy = {t: acc_sums[t] / arrays.n for t in config.tasks}
    if combiner is None:
        combiner = make_combiner(
            config.combiner, m=config.fls_m, weights=config.weights,
            floor=config.loss_floor)
    if state is None:
        state = CombinerState.for_tasks(config.tasks, config.dwa_temperature,
                                        config.init_s,
                                        dtype=np.dtype(config.dtype))
    with no_grad():
        combined = combiner(
            [(t, Tensor(np.asarray(loss[t], dtype=np.dtype(config.dtype))))
             for t in config.tasks],
            state).item()
    return {"loss": loss, "accuracy": accuracy, "combined_loss": combined}


# ---- training loop -----------------------------------------------------------------


def train(config: ExperimentConfig, samples=None, on_epoch=None) -> tuple:
    """Run the full loop; returns (model, [MetricsRecord per epoch]).

    When `samples` is None the dataset at config.dataset is loaded and its
    class count checked against the config. The split, parameter init,
    batch order, and every update are functions of config alone.
    `on_epoch`, if given, is called with each completed MetricsRecord.
    """
    if samples is None:
        if config.dataset is None:
            raise ValueError("config.dataset is unset and no samples were given")
        samples, index = load_dataset(config.dataset)
        if index["num_classes"] != config.num_classes:
            raise ValueError(
                f"dataset declares {index['num_classes']} classes, config "
                f"expects {config.num_classes}")
    dtype = np.dtype(config.dtype)
    train_samples, val_samples = split(samples, config.train_fraction,
                                       config.seed)
    train_arrays = _Arrays(train_samples, dtype)
    val_arrays = _Arrays(val_samples, dtype)

    model = build_model(
        EncoderConfig(base_channels=config.base_channels),
        tasks=config.tasks, num_frames=config.num_frames,
        aggregation=config.aggregation, num_classes=config.num_classes,
        seed=config.seed, decoder_channels=config.decoder_channels,
        dtype=dtype)
    state = CombinerState.for_tasks(config.tasks, config.dwa_temperature,
                                    config.init_s, dtype=dtype)
    combiner = make_combiner(config.combiner, m=config.fls_m,
                             weights=config.weights, floor=config.loss_floor)

    opt_tensors = model.parameters()
    if config.combiner == "uncertainty":
        opt_tensors += [state.uncertainty_params[t] for t in config.tasks]
    adam = AdamState.for_params([p.data for p in opt_tensors])

    records = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng(
            (config.seed, _EPOCH_STREAM_TAG, epoch)).permutation(train_arrays.n)
        loss_sums = {t: 0.0 for t in config.tasks}
        combined_sum = 0.0
        seen = 0
        for start in range(0, train_arrays.n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                outputs = model.forward(
                    _frames_for(train_arrays, idx, config.num_frames),
                    logits=True)
                losses = _task_losses(outputs, train_arrays, idx, config.tasks,
                                      config.huber_delta)
            except NonFiniteError as err:
                # diverged weights surface as non-finite activations before
                # any loss is computed; report as a training abort
                raise NumericAbort(
                    "combined", f"at epoch {epoch}, step "
                                f"{start // config.batch_size}: {err}") from err
            floored = []
            for task in config.tasks:
                raw = losses[task]
                if not np.isfinite(raw.data):
                    raise NumericAbort(task, f"at epoch {epoch}, step "
                                             f"{start // config.batch_size}")
                loss_sums[task] += raw.data.item() * len(idx)
                floored.append((task, raw.clamp_min(config.loss_floor)))
            total = combiner(floored, state)
            if not np.isfinite(total.data):
                raise NumericAbort("combined", f"at epoch {epoch}, step "
                                               f"{start // config.batch_size}")
            combined_sum += total.data.item() * len(idx)
            seen += len(idx)
            backward(total)

            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for p in opt_tensors]
            values = [p.data for p in opt_tensors]
            if config.optimizer == "adam":
                values, adam = adam_step(values, grads, adam, config.lr,
                                         config.beta1, config.beta2,
                                         config.adam_eps)
            else:
                values = sgd_step(values, grads, config.lr)
            for p, v in zip(opt_tensors, values):
                p.data = v
                p.grad = None

        epoch_train_loss = {t: loss_sums[t] / seen for t in config.tasks}
        ev = evaluate(model, val_arrays, config, state=state, combiner=combiner)
        weights = _effective_weights(config, state)
        update_state(state, epoch_train_loss)
        records.append(MetricsRecord(
            epoch=epoch,
            train_loss=epoch_train_loss,
            val_loss=ev["loss"],
            accuracy=ev["accuracy"],
            combined_train_loss=combined_sum / seen,
            combined_val_loss=ev["combined_loss"],
            weights=weights,
            wall_clock=time.perf_counter() - t0))
        if on_epoch is not None:
            on_epoch(records[-1])
    return model, records


# ---- metrics CSV ----------------------------------------------------------------------


def metrics_columns(tasks) -> list:
    cols = ["epoch"]
    cols += [f"train_loss_{t}" for t in tasks]
    cols += [f"val_loss_{t}" for t in tasks]
    cols += [f"acc_{t}" for t in tasks]
    cols += ["combined_train_loss", "combined_val_loss"]
    cols += [f"weight_{t}" for t in tasks]
    return cols


def metrics_row(record: MetricsRecord, tasks) -> list:
    row = [str(record.epoch)]
    row += [repr(record.train_loss[t]) for t in tasks]
    row += [repr(record.val_loss[t]) for t in tasks]
    row += [repr(record.accuracy[t]) for t in tasks]
    row += [repr(record.combined_train_loss), repr(record.combined_val_loss)]
    row += [repr(record.weights[t]) for t in tasks]
    return row


def write_metrics_csv(records, tasks, path) -> None:
    """One row per epoch, full-precision floats (repr), LF line endings.
    Byte-identical for identical runs; wall-clock is deliberately not a
    column."""
    lines = [",".join(metrics_columns(tasks))]
    for rec in records:
        lines.append(",".join(metrics_row(rec, tasks)))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
