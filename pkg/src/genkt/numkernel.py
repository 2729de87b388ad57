"""Dense numerical primitives: matmul, softmax, the LSTM cell and layer, and a
finite-difference gradient oracle.

Everything runs in float64. Arrays are plain numpy ndarrays; a "matrix" is a
2-D array and a "vector" a 1-D array. Cell functions accept either a single
vector ``(dim,)`` or a batch ``(batch, dim)``.

Gate order inside the stacked weight blocks is ``(input, forget, output,
candidate)`` so the three sigmoid gates occupy one contiguous slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

GATES = ("input", "forget", "output", "candidate")
DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when a computation produced NaN or Inf."""


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=DTYPE)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=DTYPE)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


sigmoid = expit


@dataclass
class LstmCellParams:
    """Weights of one LSTM layer.

    ``w_in`` is ``(4*cells, input_dim)``, ``w_rec`` is ``(4*cells, cells)`` and
    ``bias`` is ``(4*cells,)``, each stacked in :data:`GATES` order.
    """

    w_in: np.ndarray
    w_rec: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        four_n = self.w_rec.shape[0]
        if four_n % 4 or self.w_rec.shape != (four_n, four_n // 4):
            raise DimensionError(f"recurrent weights must be (4N, N), got {self.w_rec.shape}")
        if self.w_in.ndim != 2 or self.w_in.shape[0] != four_n:
            raise DimensionError(
                f"input weights {self.w_in.shape} inconsistent with recurrent {self.w_rec.shape}"
            )
        if self.bias.shape != (four_n,):
            raise DimensionError(f"bias {self.bias.shape} inconsistent with {four_n // 4} cells")

    @property
    def cells(self) -> int:
        return self.w_rec.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(w_in, w_rec, bias)`` views for one gate."""
        k = GATES.index(name)
        rows = slice(k * self.cells, (k + 1) * self.cells)
        return self.w_in[rows], self.w_rec[rows], self.bias[rows]

    @classmethod
    def zeros(cls, cells: int, input_dim: int) -> "LstmCellParams":
        return cls(
            np.zeros((4 * cells, input_dim)),
            np.zeros((4 * cells, cells)),
            np.zeros(4 * cells),
        )


@dataclass
class LstmCellState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, cells: int, batch: int | None = None) -> "LstmCellState":
        shape = (cells,) if batch is None else (batch, cells)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class CellTape:
    x: np.ndarray
    c_prev: np.ndarray
    h_prev: np.ndarray
    acts: np.ndarray  # activated gates, GATES order
    tanh_c: np.ndarray


@dataclass
class CellGrads:
    w_in: np.ndarray
    w_rec: np.ndarray
    bias: np.ndarray


def _check_cell_inputs(p: LstmCellParams, x: np.ndarray, s: LstmCellState) -> None:
    if x.shape[-1] != p.input_dim:
        raise DimensionError(f"input length {x.shape[-1]} != input_dim {p.input_dim}")
    if s.h.shape[-1] != p.cells or s.c.shape != s.h.shape:
        raise DimensionError(
            f"state shapes c={s.c.shape} h={s.h.shape} do not match {p.cells} cells"
        )


def _activate(z: np.ndarray, n: int) -> np.ndarray:
    acts = np.empty_like(z)
    acts[..., : 3 * n] = expit(z[..., : 3 * n])
    acts[..., 3 * n :] = np.tanh(z[..., 3 * n :])
    return acts


def lstm_cell_forward(
    p: LstmCellParams, x: np.ndarray, s: LstmCellState, return_tape: bool = False
):
    """One LSTM step. Returns ``(y, new_state)`` and, optionally, the tape."""
    x = np.asarray(x, dtype=DTYPE)
    _check_cell_inputs(p, x, s)
    n = p.cells
    z = x @ p.w_in.T + s.h @ p.w_rec.T + p.bias
    acts = _activate(z, n)
    i, f, o, g = (acts[..., k * n : (k + 1) * n] for k in range(4))
    c = f * s.c + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    new = LstmCellState(c, h)
    if return_tape:
        return h, new, CellTape(x, s.c, s.h, acts, tanh_c)
    return h, new


def _gate_grads(acts, tanh_c, c_prev, dh, dc, n):
    i, f, o, g = (acts[..., k * n : (k + 1) * n] for k in range(4))
    do = dh * tanh_c
    dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(acts)
    dz[..., :n] = dc * g * i * (1.0 - i)
    dz[..., n : 2 * n] = dc * c_prev * f * (1.0 - f)
    dz[..., 2 * n : 3 * n] = do * o * (1.0 - o)
    dz[..., 3 * n :] = dc * i * (1.0 - g * g)
    return dz, dc * f


def lstm_cell_backward(p: LstmCellParams, tape: CellTape, dh: np.ndarray, dc: np.ndarray):
    """Backward through one step.

    ``dh`` and ``dc`` are the loss gradients w.r.t. the step's output ``h`` and
    cell ``c``. Returns ``(CellGrads, dx, LstmCellState(dc_prev, dh_prev))``.
    """
    n = p.cells
    if dh.shape != tape.tanh_c.shape or dc.shape != tape.tanh_c.shape:
        raise DimensionError(
            f"upstream grads {dh.shape}/{dc.shape} do not match tape {tape.tanh_c.shape}"
        )
    dz, dc_prev = _gate_grads(tape.acts, tape.tanh_c, tape.c_prev, dh, dc, n)
    dz2 = np.atleast_2d(dz)
    grads = CellGrads(
        dz2.T @ np.atleast_2d(tape.x),
        dz2.T @ np.atleast_2d(tape.h_prev),
        dz2.sum(axis=0),
    )
    dx = dz @ p.w_in
    dh_prev = dz @ p.w_rec
    return grads, dx, LstmCellState(dc_prev, dh_prev)


@dataclass
class LayerTape:
    xs: np.ndarray  # (T, B, input_dim)
    acts: np.ndarray  # (T, B, 4N)
    cs: np.ndarray  # (T+1, B, N), cs[0] is the incoming cell state
    hs: np.ndarray  # (T+1, B, N)
    tanh_c: np.ndarray  # (T, B, N)
    extras: dict = field(default_factory=dict)


def lstm_layer_forward(
    p: LstmCellParams, xs: np.ndarray, s: LstmCellState, input_proj: np.ndarray | None = None
):
    """Run a layer over ``xs`` of shape ``(T, B, input_dim)``.

    The input projection for all steps is one matmul; only the recurrent part
    loops. ``input_proj`` may be supplied precomputed (e.g. a column gather
    for one-hot inputs). Returns ``(hs (T,B,N), final_state, tape)``.
    """
    T, B = xs.shape[0], xs.shape[1]
    n = p.cells
    if s.h.shape != (B, n):
        raise DimensionError(f"state {s.h.shape} does not match batch {B} x {n} cells")
    if input_proj is None:
        if xs.shape[2] != p.input_dim:
            raise DimensionError(f"input length {xs.shape[2]} != input_dim {p.input_dim}")
        input_proj = (xs.reshape(T * B, -1) @ p.w_in.T).reshape(T, B, 4 * n)
    acts = np.empty((T, B, 4 * n))
    cs = np.empty((T + 1, B, n))
    hs = np.empty((T + 1, B, n))
    tanh_c = np.empty((T, B, n))
    cs[0], hs[0] = s.c, s.h
    w_rec_t = p.w_rec.T
    for t in range(T):
        z = input_proj[t] + hs[t] @ w_rec_t + p.bias
        a = acts[t]
        a[:, : 3 * n] = expit(z[:, : 3 * n])
        a[:, 3 * n :] = np.tanh(z[:, 3 * n :])
        cs[t + 1] = a[:, n : 2 * n] * cs[t] + a[:, :n] * a[:, 3 * n :]
        np.tanh(cs[t + 1], out=tanh_c[t])
        hs[t + 1] = a[:, 2 * n : 3 * n] * tanh_c[t]
    tape = LayerTape(xs, acts, cs, hs, tanh_c)
    return hs[1:], LstmCellState(cs[T].copy(), hs[T].copy()), tape


def lstm_layer_backward(
    p: LstmCellParams,
    tape: LayerTape,
    dhs: np.ndarray,
    need_dx: bool = True,
    dstate: LstmCellState | None = None,
):
    """Backward through a layer run.

    ``dhs`` holds the loss gradient w.r.t. every emitted ``h`` (T, B, N).
    ``dstate`` is the gradient arriving at the final state (None for zero).
    Returns ``(CellGrads, dxs or None, LstmCellState of grads at the incoming state)``.
    """
    T, B, n = tape.tanh_c.shape
    if dhs.shape != (T, B, n):
        raise DimensionError(f"upstream grads {dhs.shape} do not match tape {(T, B, n)}")
    dz = np.empty((T, B, 4 * n))
    if dstate is None:
        dh_next = np.zeros((B, n))
        dc_next = np.zeros((B, n))
    else:
        dh_next, dc_next = dstate.h, dstate.c
    w_rec = p.w_rec
    acts, tanh_c, cs = tape.acts, tape.tanh_c, tape.cs
    for t in range(T - 1, -1, -1):
        dh = dhs[t] + dh_next
        a = acts[t]
        i, f, o, g = a[:, :n], a[:, n : 2 * n], a[:, 2 * n : 3 * n], a[:, 3 * n :]
        tc = tanh_c[t]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        d = dz[t]
        d[:, :n] = dc * g * i * (1.0 - i)
        d[:, n : 2 * n] = dc * cs[t] * f * (1.0 - f)
        d[:, 2 * n : 3 * n] = dh * tc * o * (1.0 - o)
        d[:, 3 * n :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = d @ w_rec
    flat = dz.reshape(T * B, 4 * n)
    grads = CellGrads(
        flat.T @ tape.xs.reshape(T * B, -1),
        flat.T @ tape.hs[:-1].reshape(T * B, n),
        flat.sum(axis=0),
    )
    dxs = (flat @ p.w_in).reshape(T, B, -1) if need_dx else None
    return grads, dxs, LstmCellState(dc_next, dh_next)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], theta: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``theta``."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    theta = np.array(theta, dtype=DTYPE)
    grad = np.empty_like(theta)
    flat = theta.reshape(-1)
    out = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f(theta)
        flat[k] = orig - step
        fm = f(theta)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite evaluation at coordinate {k}")
        out[k] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Entry-wise ``|a-b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
