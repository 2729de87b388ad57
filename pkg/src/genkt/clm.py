"""Character-level LSTM language model: parameters, forward/backward over
windows, next-symbol distributions, scoring, bits per character and sampling.

Parameters live in one flat float64 vector; per-layer weights are views into
it. The flat order (also the checkpoint order) is, for each layer bottom-up,
``w_in`` (4N x input_dim), ``w_rec`` (4N x N), ``bias`` (4N), followed by the
output projection ``out_w`` (30 x N) and ``out_b`` (30), all row-major.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .corpus import EOS, VOCAB_SIZE, check_symbols
from .numkernel import (
    DimensionError,
    LstmCellParams,
    LstmCellState,
    log_softmax,
    lstm_cell_forward,
    lstm_layer_backward,
    lstm_layer_forward,
    softmax,
)

log = logging.getLogger(__name__)

MAX_SENTENCE = 500
_EYE = np.eye(VOCAB_SIZE)


@dataclass(frozen=True)
class ModelSpec:
    cells: int
    layers: int
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self):
        if self.cells < 1 or self.layers < 1:
            raise ValueError(f"need cells >= 1 and layers >= 1, got {self.cells}x{self.layers}")
        if self.vocab_size != VOCAB_SIZE:
            raise ValueError(f"vocab_size must be {VOCAB_SIZE}, got {self.vocab_size}")

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        """Parse the ``NxM`` notation (N cells per layer, M layers)."""
        n, _, m = text.lower().partition("x")
        return cls(int(n), int(m))

    def __str__(self) -> str:
        return f"{self.cells}x{self.layers}"

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        n, v = self.cells, self.vocab_size
        out = []
        for layer in range(self.layers):
            d_in = v if layer == 0 else n
            out += [
                (f"layer{layer}.w_in", (4 * n, d_in)),
                (f"layer{layer}.w_rec", (4 * n, n)),
                (f"layer{layer}.bias", (4 * n,)),
            ]
        out += [("out_w", (v, n)), ("out_b", (v,))]
        return out

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for _, s in self.shapes())


class ModelParams:
    """All trainable weights of an NxM model, backed by one flat vector."""

    def __init__(self, spec: ModelSpec, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise DimensionError(f"{spec} model needs {spec.n_params} params, got {flat.shape}")
        self.spec = spec
        self.flat = flat
        views = {}
        off = 0
        for name, shape in spec.shapes():
            size = math.prod(shape)
            views[name] = flat[off : off + size].reshape(shape)
            off += size
        self.layers = [
            LstmCellParams(views[f"layer{k}.w_in"], views[f"layer{k}.w_rec"], views[f"layer{k}.bias"])
            for k in range(spec.layers)
        ]
        self.out_w = views["out_w"]
        self.out_b = views["out_b"]
        self._views = views

    @classmethod
    def initialize(cls, spec: ModelSpec, seed=0, scale: float = 0.08, forget_bias: float = 1.0):
        rng = np.random.default_rng(seed)
        p = cls(spec, rng.uniform(-scale, scale, spec.n_params))
        n = spec.cells
        for layer in p.layers:
            layer.bias[:] = 0.0
            layer.bias[n : 2 * n] = forget_bias
        p.out_b[:] = 0.0
        return p

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ModelParams":
        return cls(spec, np.zeros(spec.n_params))

    def named(self) -> dict[str, np.ndarray]:
        return dict(self._views)

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, self.flat.copy())

    def frozen(self) -> "ModelParams":
        """Read-only snapshot safe to share between readers."""
        flat = self.flat.copy()
        flat.flags.writeable = False
        return ModelParams(self.spec, flat)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ModelParams)
            and self.spec == other.spec
            and np.array_equal(self.flat, other.flat)
        )

    def __repr__(self) -> str:
        return f"ModelParams({self.spec}, n_params={self.spec.n_params})"


class ModelState:
    """Per-layer recurrent state; arrays are ``(N,)`` or ``(batch, N)``."""

    def __init__(self, layers: list[LstmCellState]):
        self.layers = layers

    @classmethod
    def zeros(cls, spec: ModelSpec, batch: int | None = None) -> "ModelState":
        return cls([LstmCellState.zeros(spec.cells, batch) for _ in range(spec.layers)])

    def check(self, spec: ModelSpec, batch: int | None) -> None:
        want = (spec.cells,) if batch is None else (batch, spec.cells)
        if len(self.layers) != spec.layers or any(
            s.h.shape != want or s.c.shape != want for s in self.layers
        ):
            raise DimensionError(f"state does not match {spec} with batch {batch}")

    def copy(self) -> "ModelState":
        return ModelState([LstmCellState(s.c.copy(), s.h.copy()) for s in self.layers])


@dataclass
class ForwardTape:
    inputs: np.ndarray
    layer_tapes: list
    top: np.ndarray  # (T, B, N)


def forward(params: ModelParams, inputs: np.ndarray, state: ModelState | None = None, keep_tape=True):
    """Run the model over a ``(T, B)`` block of ids from ``state``.

    Returns ``(logits (T,B,30), final_state, tape)``; ``tape`` is None when
    ``keep_tape`` is false.
    """
    inputs = np.asarray(inputs)
    T, B = inputs.shape
    spec = params.spec
    if state is None:
        state = ModelState.zeros(spec, B)
    state.check(spec, B)
    xs = _EYE[inputs]
    tapes = []
    finals = []
    h = xs
    for k, p in enumerate(params.layers):
        proj = p.w_in.T[inputs] if k == 0 else None
        h, final, tape = lstm_layer_forward(p, h, state.layers[k], input_proj=proj)
        finals.append(final)
        if keep_tape:
            tapes.append(tape)
    logits = h @ params.out_w.T + params.out_b
    return logits, ModelState(finals), (ForwardTape(inputs, tapes, h) if keep_tape else None)


def backward(params: ModelParams, tape: ForwardTape, dlogits: np.ndarray) -> ModelParams:
    """Gradient of the loss w.r.t. every parameter given ``dL/dlogits``.

    No gradient flows into the incoming state (truncated BPTT)."""
    T, B, V = dlogits.shape
    n = params.spec.cells
    grad = ModelParams.zeros(params.spec)
    flat_d = dlogits.reshape(T * B, V)
    grad.out_w[:] = flat_d.T @ tape.top.reshape(T * B, n)
    grad.out_b[:] = flat_d.sum(axis=0)
    dh = dlogits @ params.out_w
    for k in range(params.spec.layers - 1, -1, -1):
        g, dh, _ = lstm_layer_backward(params.layers[k], tape.layer_tapes[k], dh, need_dx=k > 0)
        gl = grad.layers[k]
        gl.w_in[:] = g.w_in
        gl.w_rec[:] = g.w_rec
        gl.bias[:] = g.bias
    return grad


def next_distribution(params: ModelParams, state: ModelState, x_t: int):
    """P(next symbol | history) after consuming ``x_t``; returns ``(p, new_state)``."""
    if not 0 <= int(x_t) < VOCAB_SIZE:
        raise ValueError(f"symbol id {x_t} outside [0, {VOCAB_SIZE})")
    state.check(params.spec, None)
    h = _EYE[int(x_t)]
    new = []
    for p, s in zip(params.layers, state.layers):
        h, s2 = lstm_cell_forward(p, h, s)
        new.append(s2)
    return softmax(params.out_w @ h + params.out_b), ModelState(new)


def _step_batch(params: ModelParams, ids: np.ndarray, state: ModelState):
    h = _EYE[ids]
    new = []
    for p, s in zip(params.layers, state.layers):
        h, s2 = lstm_cell_forward(p, h, s)
        new.append(s2)
    return h @ params.out_w.T + params.out_b, ModelState(new)


def score_block(params: ModelParams, inputs: np.ndarray, chunk: int = 256):
    """Distributions after each position of a ``(B, L)`` block, each row from
    zero state. Returns ``(B, L, 30)``."""
    inputs = np.asarray(inputs)
    B, L = inputs.shape
    out = np.empty((B, L, VOCAB_SIZE))
    state = ModelState.zeros(params.spec, B)
    for a in range(0, L, chunk):
        logits, state, _ = forward(params, inputs[:, a : a + chunk].T, state, keep_tape=False)
        out[:, a : a + chunk] = softmax(logits, axis=-1).transpose(1, 0, 2)
    return out


def score_sequence(params: ModelParams, s, state: ModelState | None = None, chunk: int = 256):
    """Soft labels and log2-probabilities along a sequence.

    ``labels[t]`` is the distribution after consuming ``s[0..t]``; the
    log-probability stream is aligned with ``s[1:]``.
    """
    s = check_symbols(s)
    if s.size < 2:
        raise ValueError("score_sequence needs at least 2 symbols")
    if state is not None:
        state.check(params.spec, None)
        state = ModelState([LstmCellState(x.c[None], x.h[None]) for x in state.layers])
    else:
        state = ModelState.zeros(params.spec, 1)
    inputs = s[:-1]
    labels = np.empty((inputs.size, VOCAB_SIZE))
    logp = np.empty(inputs.size)
    for a in range(0, inputs.size, chunk):
        logits, state, _ = forward(params, inputs[a : a + chunk, None], state, keep_tape=False)
        lg = logits[:, 0]
        labels[a : a + chunk] = softmax(lg)
        ls = log_softmax(lg)
        logp[a : a + chunk] = ls[np.arange(lg.shape[0]), s[a + 1 : a + 1 + chunk]]
    return labels, logp / math.log(2)


def bpc(params: ModelParams, s) -> float:
    """Bits per character over ``s`` from zero state."""
    s = check_symbols(s)
    if s.size < 2:
        raise ValueError("bpc needs at least 2 symbols")
    _, log2p = score_sequence(params, s)
    return float(-log2p.mean())


def _chunks_at_eos(s: np.ndarray, n: int) -> list[np.ndarray]:
    ends = np.flatnonzero(s == EOS) + 1
    cuts = [0]
    for k in range(1, n):
        target = k * s.size / n
        if ends.size:
            j = int(ends[np.argmin(np.abs(ends - target))])
            if cuts[-1] < j < s.size:
                cuts.append(j)
    cuts.append(s.size)
    return [s[a:b] for a, b in zip(cuts[:-1], cuts[1:]) if b - a >= 2]


def bpc_streams(params: ModelParams, s, n_streams: int = 16, chunk: int = 256) -> float:
    """Fast bits-per-character estimate.

    ``s`` is cut at the EOS boundaries nearest ``n_streams`` equal parts and
    the parts are evaluated in parallel, each from zero state. With
    ``n_streams=1`` this equals :func:`bpc`.
    """
    s = check_symbols(s)
    parts = _chunks_at_eos(s, max(1, n_streams))
    if not parts:
        raise ValueError("bpc needs at least 2 symbols")
    L = max(p.size for p in parts)
    block = np.full((len(parts), L), EOS, dtype=np.uint8)
    mask = np.zeros((len(parts), L - 1), dtype=bool)
    for k, p in enumerate(parts):
        block[k, : p.size] = p
        mask[k, : p.size - 1] = True
    inputs = block[:, :-1]
    targets = block[:, 1:]
    state = ModelState.zeros(params.spec, len(parts))
    total = 0.0
    count = int(mask.sum())
    for a in range(0, L - 1, chunk):
        logits, state, _ = forward(params, inputs[:, a : a + chunk].T, state, keep_tape=False)
        ls = log_softmax(logits, axis=-1)  # (T, B, V)
        tgt = targets[:, a : a + chunk].T
        picked = np.take_along_axis(ls, tgt[..., None].astype(np.intp), axis=-1)[..., 0]
        total += float(picked[mask[:, a : a + chunk].T].sum())
    return -total / count / math.log(2)


def _draw(rng: np.random.Generator, p: np.ndarray) -> np.ndarray:
    u = rng.random(p.shape[0])
    idx = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(idx, VOCAB_SIZE - 1)


def sample_streams(
    params: ModelParams,
    n_streams: int,
    length: int,
    seed=0,
    temperature: float = 1.0,
    start: int = EOS,
    max_sentence: int = MAX_SENTENCE,
):
    """Sample ``n_streams`` independent sequences of ``length`` symbols.

    Each stream starts from zero state primed with ``start``. Returns
    ``(ids (S, L), labels (S, L, 30))`` where ``labels[:, t]`` is exactly the
    distribution ``ids[:, t]`` was drawn from. A stream that runs
    ``max_sentence`` symbols without EOS is forced to emit EOS; the label at
    that position is then the one-hot EOS distribution.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(seed)
    ids = np.empty((n_streams, length), dtype=np.uint8)
    labels = np.empty((n_streams, length, VOCAB_SIZE))
    state = ModelState.zeros(params.spec, n_streams)
    x = np.full(n_streams, start, dtype=np.intp)
    run = np.zeros(n_streams, dtype=int)
    forced = 0
    for t in range(length):
        logits, state = _step_batch(params, x, state)
        p = softmax(logits / temperature, axis=-1)
        over = run >= max_sentence
        if over.any():
            p[over] = _EYE[EOS]
            forced += int(over.sum())
        x = _draw(rng, p)
        run = np.where(x == EOS, 0, run + 1)
        ids[:, t] = x
        labels[:, t] = p
    if forced:
        log.info("forced EOS %d times after %d symbols without one", forced, max_sentence)
    return ids, labels


def sample_sequence(params: ModelParams, length: int, seed=0, temperature: float = 1.0):
    """Autoregressive sample of one sequence; returns ``(ids, labels)``."""
    ids, labels = sample_streams(params, 1, length, seed, temperature)
    return ids[0], labels[0]


def training_pair(ids: np.ndarray, start: int = EOS) -> np.ndarray:
    """Input block for training on generated streams: ``start`` then ``ids[:, :-1]``.

    Together with the stream's labels (or ``ids`` as hard targets) this gives
    equal-length input/target pairs."""
    ids = np.asarray(ids)
    head = np.full(ids.shape[:-1] + (1,), start, dtype=np.uint8)
    return np.concatenate([head, ids[..., :-1]], axis=-1)
