"""Strategies that collapse per-task losses into one training scalar.

Six strategies: geometric mean (gls), focused geometric mean (fls), plain
sum (equal), fixed weighted sum (weighted), homoscedastic uncertainty
weighting (uncertainty), and dynamic weight averaging (dwa). The geometric
mean runs in the log domain so products of many small losses cannot
underflow, and each loss is floored at a small epsilon first.

Task order matters: fls focuses on the first m entries, so callers pass
losses in priority order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tensor

COMBINER_NAMES = ("gls", "fls", "equal", "weighted", "uncertainty", "dwa")

TaskLossVector = "Sequence[tuple[str, Tensor]] | Mapping[str, Tensor]"


def _pairs(losses) -> list:
    if isinstance(losses, Mapping):
        pairs = list(losses.items())
    else:
        pairs = list(losses)
    if not pairs:
        raise ValueError("need at least one task loss")
    for name, loss in pairs:
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ValueError(f"loss for task '{name}' must be a scalar tensor")
    return pairs


def _floored(name: str, loss: Tensor, floor: float) -> Tensor:
    fl = loss.clamp_min(floor)
    if fl.data.item() <= 0:
        raise ValueError(f"loss for task '{name}' must be strictly positive")
    return fl


@dataclass
class CombinerState:
    """Cross-step bookkeeping shared by the stateful strategies.

    dwa_history holds the last two epochs of per-task mean losses;
    uncertainty_params holds one learnable log-variance scalar per task,
    which the training loop passes to the optimizer alongside the model.
    """

    task_names: tuple
    dwa_temperature: float = 2.0
    dwa_history: deque = field(default_factory=lambda: deque(maxlen=2))
    uncertainty_params: dict = field(default_factory=dict)
    epoch_counter: int = 0

    def __post_init__(self):
        self.task_names = tuple(self.task_names)
        if not self.task_names:
            raise ValueError("need at least one task")
        if len(set(self.task_names)) != len(self.task_names):
            raise ValueError("task names must be unique")
        if not (self.dwa_temperature > 0):
            raise ValueError(
                f"dwa temperature must be positive, got {self.dwa_temperature}")

    @classmethod
    def for_tasks(cls, task_names, temperature: float = 2.0,
                  init_s: float = 0.0, dtype=np.float64) -> "CombinerState":
        state = cls(task_names=tuple(task_names), dwa_temperature=temperature)
        for name in state.task_names:
            state.uncertainty_params[name] = Tensor(
                np.asarray(init_s, dtype=dtype), requires_grad=True)
        return state


def combine_gls(losses, floor: float = 1e-12) -> Tensor:
    """Geometric mean (prod L_i)^(1/n), evaluated as exp(mean(log L_i)).
    Gradient w.r.t. each loss is out / (n * L_i)."""
    pairs = _pairs(losses)
    n = len(pairs)
    total = None
    for name, loss in pairs:
        lg = _floored(name, loss, floor).log()
        total = lg if total is None else total + lg
    return (total * (1.0 / n)).exp()


def combine_fls(losses, m: int, floor: float = 1e-12) -> Tensor:
    """Focused variant: geometric mean of all n losses times the geometric
    mean of the first m. With m = n this is exactly the square of
    combine_gls."""
    pairs = _pairs(losses)
    if not isinstance(m, int) or not (1 <= m <= len(pairs)):
        raise ValueError(f"focus count m must lie in [1, {len(pairs)}], got {m}")
    return combine_gls(pairs, floor) * combine_gls(pairs[:m], floor)


def combine_equal(losses) -> Tensor:
    """Plain sum of the task losses."""
    pairs = _pairs(losses)
    total = pairs[0][1]
    for _, loss in pairs[1:]:
        total = total + loss
    return total


def combine_weighted(losses, weights) -> Tensor:
    """Fixed weighted sum. Weights may be a mapping by task name or a
    sequence aligned with the loss order; all must be positive."""
    pairs = _pairs(losses)
    if isinstance(weights, Mapping):
        missing = [name for name, _ in pairs if name not in weights]
        if missing or len(weights) != len(pairs):
            raise ValueError(
                f"weights must cover exactly the tasks {[n for n, _ in pairs]}")
        ws = [float(weights[name]) for name, _ in pairs]
    else:
        ws = [float(w) for w in weights]
        if len(ws) != len(pairs):
            raise ValueError(
                f"got {len(ws)} weights for {len(pairs)} tasks")
    for (name, _), w in zip(pairs, ws):
        if not (w > 0):
            raise ValueError(f"weight for task '{name}' must be positive, got {w}")
    total = None
    for (_, loss), w in zip(pairs, ws):
        term = loss * w
        total = term if total is None else total + term
    return total


def combine_uncertainty(losses, state: CombinerState) -> Tensor:
    """Sum over tasks of 0.5*exp(-s_i)*L_i + 0.5*s_i with learnable s_i
    (log variance). The s gradient is 0.5*(1 - exp(-s_i)*L_i), so each s_i
    is pulled toward log L_i."""
    pairs = _pairs(losses)
    names = [name for name, _ in pairs]
    if set(names) != set(state.uncertainty_params):
        raise ValueError(
            f"state tracks tasks {sorted(state.uncertainty_params)}, "
            f"got losses for {names}")
    total = None
    for name, loss in pairs:
        s = state.uncertainty_params[name]
        term = (-s).exp() * loss * 0.5 + s * 0.5
        total = term if total is None else total + term
    return total


def dwa_weights(state: CombinerState) -> dict:
    """Per-task weights n*softmax(r/T) from the loss-ratio history
    r_i = hist[t-1]_i / hist[t-2]_i. All ones until two epochs of history
    exist. Always sums to the number of tasks."""
    names = state.task_names
    n = len(names)
    if len(state.dwa_history) < 2:
        return {name: 1.0 for name in names}
    prev, last = state.dwa_history[0], state.dwa_history[1]
    r = np.array([last[name] / prev[name] for name in names], dtype=np.float64)
    e = np.exp(r / state.dwa_temperature - np.max(r / state.dwa_temperature))
    w = n * e / e.sum()
    return dict(zip(names, w.tolist()))


def combine_dwa(losses, state: CombinerState) -> Tensor:
    """Weighted sum with weights recomputed once per epoch from the
    history in `state` (see dwa_weights)."""
    pairs = _pairs(losses)
    names = [name for name, _ in pairs]
    if set(names) != set(state.task_names):
        raise ValueError(
            f"state tracks tasks {sorted(state.task_names)}, got {names}")
    w = dwa_weights(state)
    total = None
    for name, loss in pairs:
        term = loss * w[name]
        total = term if total is None else total + term
    return total


def update_state(state: CombinerState, epoch_mean_losses: Mapping) -> CombinerState:
    """Push one epoch of per-task mean losses onto the history (two most
    recent epochs are kept) and advance the epoch counter. Mutates and
    returns `state`."""
    missing = set(state.task_names) - set(epoch_mean_losses)
    if missing or len(epoch_mean_losses) != len(state.task_names):
        raise ValueError(
            f"epoch means must cover exactly the tasks {list(state.task_names)}")
    state.dwa_history.append(
        {name: float(epoch_mean_losses[name]) for name in state.task_names})
    state.epoch_counter += 1
    return state


def make_combiner(name: str, *, m: int | None = None, weights=None,
                  floor: float = 1e-12) -> Callable:
    """Build a `(losses, state) -> scalar Tensor` callable for a strategy
    name. Stateless strategies ignore the state argument."""
    if name == "gls":
        return lambda losses, state=None: combine_gls(losses, floor)
    if name == "fls":
        if m is None:
            raise ValueError("fls requires the focus count m")
        return lambda losses, state=None: combine_fls(losses, m, floor)
    if name == "equal":
        return lambda losses, state=None: combine_equal(losses)
    if name == "weighted":
        if weights is None:
            raise ValueError("weighted requires per-task weights")
        return lambda losses, state=None: combine_weighted(losses, weights)
    if name == "uncertainty":
        return lambda losses, state: combine_uncertainty(losses, state)
    if name == "dwa":
        return lambda losses, state: combine_dwa(losses, state)
    raise ValueError(
        f"unknown combiner '{name}'; valid names: {', '.join(COMBINER_NAMES)}")
