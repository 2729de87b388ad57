"""Losses, truncated BPTT, the Adadelta + Nesterov optimizer, and the
training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import clm
from .clm import ModelParams, ModelState
from .numkernel import log_softmax

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
ORDERS = ("adadelta_then_nesterov", "nesterov_then_adadelta")


class NumericalError(FloatingPointError):
    """A non-finite loss or gradient aborted an update."""


@dataclass
class TrainConfig:
    bptt_window: int = 64
    batch_streams: int = 32
    lr: float = 1.0
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    momentum: float = 0.9
    max_updates: int = 1000
    eval_every: int = 100
    seed: int = 0
    clip_norm: float = 5.0
    order: str = "adadelta_then_nesterov"
    patience: int = 0  # evaluations without improvement before stopping; 0 disables
    eval_streams: int = 16

    def __post_init__(self):
        if self.bptt_window < 2:
            raise ValueError("bptt_window must be >= 2")
        if self.batch_streams < 1:
            raise ValueError("batch_streams must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not 0 < self.adadelta_rho < 1:
            raise ValueError("adadelta_rho must be in (0, 1)")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    """Per-parameter accumulators stored as flat vectors."""

    sq_grad: np.ndarray
    sq_delta: np.ndarray
    velocity: np.ndarray
    steps: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            self.sq_grad.copy(), self.sq_delta.copy(), self.velocity.copy(), self.steps
        )

    def restart(self) -> "OptimizerState":
        """Copy for continuing on a new objective: the Adadelta accumulators
        are kept, the momentum is dropped. Carrying the old velocity into
        new data keeps pushing the weights along the previous task's
        direction for the first few dozen updates."""
        return OptimizerState(self.sq_grad.copy(), self.sq_delta.copy(), np.zeros_like(self.velocity), self.steps)


def loss_hard(pred: np.ndarray, target: int, stats: dict | None = None):
    """NLL of ``target`` under ``pred``; gradient w.r.t. the logits."""
    pred = np.asarray(pred, dtype=np.float64)
    if not 0 <= int(target) < pred.shape[-1]:
        raise ValueError(f"target {target} outside [0, {pred.shape[-1]})")
    p = pred[int(target)]
    if p < LOG_FLOOR and stats is not None:
        stats["clamped"] = stats.get("clamped", 0) + 1
    grad = pred.copy()
    grad[int(target)] -= 1.0
    return -math.log(max(p, LOG_FLOOR)), grad


def loss_soft(pred: np.ndarray, target: np.ndarray, stats: dict | None = None):
    """Cross-entropy ``H(target, pred)`` in nats; gradient w.r.t. the logits."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ValueError(f"target shape {target.shape} != prediction shape {pred.shape}")
    if np.any(target < 0) or abs(target.sum() - 1.0) > 1e-6:
        raise ValueError("target is not a probability distribution")
    low = (pred < LOG_FLOOR) & (target > 0)
    if low.any() and stats is not None:
        stats["clamped"] = stats.get("clamped", 0) + int(low.sum())
    loss = -float(np.dot(target, np.log(np.maximum(pred, LOG_FLOOR))))
    return loss, pred - target


def entropy(q: np.ndarray) -> float:
    q = np.asarray(q, dtype=np.float64)
    nz = q > 0
    return -float(np.dot(q[nz], np.log(q[nz])))


def window_loss(logits: np.ndarray, targets: np.ndarray):
    """Mean loss (nats) over a ``(T, B)`` window and its logit gradient.

    ``targets`` is ``(T, B)`` of ids for hard targets or ``(T, B, 30)`` of
    distributions for soft targets."""
    T, B, V = logits.shape
    ls = log_softmax(logits, axis=-1)
    grad = np.exp(ls)
    if targets.ndim == 2:
        idx = targets.astype(np.intp)[..., None]
        loss = -float(np.take_along_axis(ls, idx, axis=-1).sum())
        np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=-1) - 1.0, axis=-1)
    else:
        loss = -float(np.sum(targets * ls))
        grad -= targets
    scale = 1.0 / (T * B)
    return loss * scale, grad * scale


def adadelta_nesterov_step(grads: np.ndarray, opt: OptimizerState, config: TrainConfig):
    """Return ``(delta, new_opt)``; the caller adds ``delta`` to the parameters.

    Default order: Adadelta conditions the gradient, ``lr`` scales the
    result, and Nesterov momentum runs on top of it in the reparametrised
    form ``v <- mu*v + step; delta = mu*v + step``."""
    rho, eps, mu, lr = config.adadelta_rho, config.adadelta_eps, config.momentum, config.lr
    g = np.asarray(grads, dtype=np.float64)
    new = opt.copy()
    new.steps += 1
    if config.order == "nesterov_then_adadelta":
        new.velocity = mu * opt.velocity + g
        g = g + mu * new.velocity
    new.sq_grad = rho * opt.sq_grad + (1.0 - rho) * g * g
    ada = -np.sqrt(opt.sq_delta + eps) / np.sqrt(new.sq_grad + eps) * g
    new.sq_delta = rho * opt.sq_delta + (1.0 - rho) * ada * ada
    step = lr * ada
    if config.order == "nesterov_then_adadelta":
        return step, new
    new.velocity = mu * opt.velocity + step
    return mu * new.velocity + step, new


def window_gradient(params: ModelParams, inputs, targets, state: ModelState | None):
    """Loss and flat gradient for one window; also the state to carry on."""
    logits, new_state, tape = clm.forward(params, inputs, state)
    loss, dlogits = window_loss(logits, targets)
    grad = clm.backward(params, tape, dlogits)
    return loss, grad.flat, new_state


def bptt_update(
    params: ModelParams,
    opt: OptimizerState,
    inputs: np.ndarray,
    targets: np.ndarray,
    state: ModelState | None,
    config: TrainConfig,
    offset: int = 0,
    stats: dict | None = None,
):
    """One truncated-BPTT update over a ``(T, B)`` window.

    Returns ``(new_params, new_opt, carried_state, loss)``. The carried state
    is a value only; no gradient crosses the window boundary."""
    loss, g, new_state = window_gradient(params, inputs, targets, state)
    if not (math.isfinite(loss) and np.all(np.isfinite(g))):
        raise NumericalError(f"non-finite loss or gradient in window at offset {offset}")
    norm = float(np.sqrt(np.dot(g, g)))
    if config.clip_norm and norm > config.clip_norm:
        g = g * (config.clip_norm / norm)
        if stats is not None:
            stats["clipped"] = stats.get("clipped", 0) + 1
    delta, new_opt = adadelta_nesterov_step(g, opt, config)
    return ModelParams(params.spec, params.flat + delta), new_opt, new_state, loss


def as_streams(inputs, targets, n_streams: int):
    """Arrange data as ``n_streams`` parallel contiguous slices.

    1-D input of length L becomes ``(n_streams, L // n_streams)`` (the tail
    remainder is dropped); 2-D input is taken as already arranged."""
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if inputs.ndim == 2:
        if targets.shape[:2] != inputs.shape:
            raise ValueError(f"targets {targets.shape} not aligned with inputs {inputs.shape}")
        return inputs, targets
    if targets.shape[0] != inputs.shape[0]:
        raise ValueError(f"targets length {targets.shape[0]} != inputs length {inputs.shape[0]}")
    per = inputs.shape[0] // n_streams
    if per < 2:
        raise ValueError(f"{inputs.shape[0]} symbols are too few for {n_streams} streams")
    n = per * n_streams
    return (
        inputs[:n].reshape(n_streams, per),
        targets[:n].reshape((n_streams, per) + targets.shape[1:]),
    )


def hard_targets(s) -> tuple[np.ndarray, np.ndarray]:
    """Inputs and next-symbol targets for a plain corpus sequence."""
    s = np.asarray(s)
    return s[:-1], s[1:]


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict] = field(default_factory=list)
    opt: OptimizerState | None = None
    frames: int = 0
    updates: int = 0
    stats: dict = field(default_factory=dict)


LOG_COLUMNS = ("updates", "frames", "train_loss_nats", "valid_bpc", "wallclock_s")


def train(
    params: ModelParams,
    inputs,
    targets,
    config: TrainConfig,
    valid=None,
    opt: OptimizerState | None = None,
    frames0: int = 0,
    updates0: int = 0,
    max_epochs: float | None = None,
    on_eval: Callable[[ModelParams], dict] | None = None,
) -> TrainResult:
    """Train with truncated BPTT over parallel streams.

    Windows advance without overlap and state is carried across windows
    within a stream; when the streams run out the pass restarts from zero
    state. The snapshot with the best validation BPC is returned (the last
    one when no validation set is given). ``max_epochs`` optionally bounds
    the number of passes over the data. ``on_eval`` is called with the
    current parameters at every evaluation point and its dict is merged into
    the log row.
    """
    X, Y = as_streams(inputs, targets, config.batch_streams)
    S, L = X.shape
    if config.max_updates == 0:
        return TrainResult(params, [], opt, frames0, updates0)
    if L < 2:
        raise ValueError("need at least 2 positions per stream")
    opt = opt if opt is not None else OptimizerState.zeros(params.spec.n_params)
    t0 = time.perf_counter()
    best_params, best_bpc = params, math.inf
    rows: list[dict] = []
    stats: dict = {}
    frames, updates = frames0, updates0
    losses: list[float] = []
    bad_evals = 0
    offsets = list(range(0, L, config.bptt_window))
    max_updates = config.max_updates
    if max_epochs is not None:
        max_updates = min(max_updates, int(math.ceil(max_epochs * len(offsets))))
    done = 0
    stop = False
    while not stop:
        state = None
        for a in offsets:
            xw = X[:, a : a + config.bptt_window].T
            yw = np.swapaxes(Y[:, a : a + config.bptt_window], 0, 1)
            params, opt, state, loss = bptt_update(params, opt, xw, yw, state, config, a, stats)
            losses.append(loss)
            frames += xw.size
            updates += 1
            done += 1
            last = done >= max_updates
            if done % config.eval_every == 0 or last:
                row = {
                    "updates": updates,
                    "frames": frames,
                    "train_loss_nats": float(np.mean(losses)),
                    "valid_bpc": math.nan,
                    "wallclock_s": time.perf_counter() - t0,
                }
                losses = []
                if valid is not None:
                    v = clm.bpc_streams(params, valid, config.eval_streams)
                    row["valid_bpc"] = v
                    if v < best_bpc:
                        best_bpc, best_params, bad_evals = v, params, 0
                    else:
                        bad_evals += 1
                    log.debug("update %d frames %d valid bpc %.4f", updates, frames, v)
                if on_eval is not None:
                    row.update(on_eval(params))
                rows.append(row)
                if config.patience and bad_evals >= config.patience:
                    stop = True
            if last or stop:
                stop = True
                break
    if valid is None:
        best_params = params
    return TrainResult(best_params, rows, opt, frames, updates, stats)


def write_log_csv(path, rows: list[dict]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in LOG_COLUMNS})
