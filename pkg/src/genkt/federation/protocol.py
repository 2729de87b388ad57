"""Privacy-conscious adaptation of a server model from many device teachers.

1. The server model is trained on public data.
2. Device models start from it (or from scratch) and are fine-tuned on
   their own private shard.
3. Each round a lot of text is generated (by the server for SDGKT, by a
   randomly chosen device for TDGKT) and broadcast to the devices. Each
   device scores it and sends its soft labels to the aggregator only.
4. The aggregator averages the labels and sends the result to the server,
   which trains one pass on (lot text, averaged labels).

The server never sees an individual device's labels and the aggregator never
sees any text.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import clm, trainer
from ..clm import ModelParams, ModelSpec
from ..corpus import EOS, VOCAB_SIZE
from ..gkt import (
    CycleState,
    Evaluator,
    GktConfig,
    TransferReport,
    generate_lot,
    run_cycles,
    student_generator,
    transfer_cycle,
)
from ..trainer import OptimizerState, TrainConfig
from .network import AGGREGATOR, SERVER, SimulatedNetwork, device
from .wire import AggregatedLabelMsg, SERVER_ID, SoftLabelLotMsg, TextLotMsg

log = logging.getLogger(__name__)

T_FULL, T_TRANSFER, T_PRIVATE = "full", "transfer", "private"
SDGKT, TDGKT = "sdgkt", "tdgkt"


class AggregationError(ValueError):
    pass


@dataclass
class FederationConfig:
    n_devices: int = 10
    device_init: str = T_TRANSFER
    rounds: int = 10
    lot_chars: int = 50_000
    mode: str = SDGKT
    seed: int = 0
    server_train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.1))
    temperature: float = 1.0
    passes: int = 1
    wire_precision: str = "f64"
    unresponsive: frozenset = frozenset()

    def __post_init__(self):
        if self.n_devices < 1:
            raise ValueError("n_devices must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.device_init not in (T_FULL, T_TRANSFER, T_PRIVATE):
            raise ValueError(f"unknown device_init {self.device_init!r}")
        if self.mode not in (SDGKT, TDGKT):
            raise ValueError(f"unknown mode {self.mode!r}")

    def gkt_config(self) -> GktConfig:
        """The equivalent single-teacher transfer configuration."""
        return GktConfig(
            mode="student_driven" if self.mode == SDGKT else "teacher_driven",
            lot_chars=self.lot_chars,
            cycles=self.rounds,
            budget_chars=self.lot_chars * self.rounds,
            temperature=self.temperature,
            train=self.server_train,
            seed=self.seed,
            passes=self.passes,
        )


def bootstrap(public, spec: ModelSpec, cfg: TrainConfig, seed=0, valid=None):
    """Train the initial server model on public data.

    Returns ``(server, opt)``: the model and its optimizer state, which
    device fine-tuning and the server's transfer rounds continue from."""
    if public is None or len(public) < 2:
        raise ValueError("public corpus is empty")
    X, Y = trainer.hard_targets(public)
    res = trainer.train(ModelParams.initialize(spec, seed), X, Y, cfg, valid=valid)
    return res.params, res.opt


def init_devices(template: ModelParams, n: int, regime: str, seed=0) -> list[ModelParams]:
    if regime == T_TRANSFER:
        return [template.copy() for _ in range(n)]
    if regime in (T_PRIVATE, T_FULL):
        return [ModelParams.initialize(template.spec, [seed, 1000 + i]) for i in range(n)]
    raise ValueError(f"unknown device_init {regime!r}")


def fine_tune_devices(
    devices: list[ModelParams],
    shards: list[np.ndarray],
    cfg: TrainConfig,
    regime: str = T_TRANSFER,
    public=None,
    valid=None,
    opt: OptimizerState | None = None,
) -> dict[int, ModelParams]:
    """Train device ``i`` on shard ``i`` only (public data too for ``full``).

    Under ``transfer`` each device continues from ``opt`` (the server's
    pretraining optimizer state) when it is given. Devices with an empty
    shard are left out. Returns ``{device_id: params}``."""
    if len(devices) != len(shards):
        raise ValueError(f"{len(devices)} devices but {len(shards)} shards")
    out = {}
    for i, (p, s) in enumerate(zip(devices, shards)):
        if s is None or len(s) < 2 * cfg.batch_streams + 1:
            log.warning("device %d has no usable private data and is excluded", i)
            continue
        data = np.concatenate([public, s]) if regime == T_FULL and public is not None else s
        X, Y = trainer.hard_targets(data)
        start = opt.restart() if opt is not None and regime == T_TRANSFER else None
        res = trainer.train(p, X, Y, cfg, valid=valid, opt=start)
        out[i] = res.params
        if valid is not None:
            log.info("device %d valid bpc %.4f", i, clm.bpc_streams(res.params, valid))
    return out


def aggregate(labels: list[np.ndarray]) -> np.ndarray:
    """Element-wise mean of equally shaped label arrays.

    Computed as ``x0 + sum(x_i - x0) / n`` so that identical inputs come
    back bit-for-bit; callers pass contributions in device-id order."""
    if not labels:
        raise AggregationError("no labels to aggregate")
    ref = np.asarray(labels[0], dtype=np.float64)
    acc = np.zeros_like(ref)
    for x in labels[1:]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != ref.shape:
            raise AggregationError(f"label lot shapes differ: {x.shape} vs {ref.shape}")
        acc += x - ref
    return ref + acc / len(labels)


def ensemble_eval(devices: list[ModelParams], seq, n_streams: int = 16) -> tuple[float, float]:
    """``(A, E)``: mean of member BPCs and BPC of the averaged distributions."""
    if not devices:
        raise ValueError("need at least one device")
    seq = np.asarray(seq)
    parts = clm._chunks_at_eos(seq, n_streams)
    L = max(p.size for p in parts)
    block = np.full((len(parts), L), EOS, dtype=np.uint8)
    mask = np.zeros((len(parts), L - 1), dtype=bool)
    for k, p in enumerate(parts):
        block[k, : p.size] = p
        mask[k, : p.size - 1] = True
    targets = block[:, 1:].astype(np.intp)
    picked = []
    for d in devices:
        probs = clm.score_block(d, block[:, :-1])
        picked.append(np.take_along_axis(probs, targets[..., None], axis=-1)[..., 0][mask])
    picked = np.array(picked)  # (devices, positions)
    member = -np.log2(picked).mean(axis=1)
    mean_p = aggregate(list(picked))
    return float(member.mean()), float(-np.log2(mean_p).mean())


@dataclass
class FederationResult:
    server: ModelParams
    report: TransferReport
    transcript_hash: str
    responders: list[int]
    network: SimulatedNetwork


class Federation:
    """Runs rounds between one server, device teachers and the aggregator."""

    def __init__(
        self,
        server: ModelParams,
        devices: dict[int, ModelParams],
        cfg: FederationConfig,
        network: SimulatedNetwork | None = None,
        server_opt: OptimizerState | None = None,
    ):
        self.server = server
        self.devices = {i: p.frozen() for i, p in devices.items()}
        self.cfg = cfg
        self.net = network or SimulatedNetwork(cfg.n_devices, cfg.wire_precision)
        self.net.down |= {device(i) for i in cfg.unresponsive}
        self.responders: list[int] = []
        self.state = CycleState(server, server_opt.restart() if server_opt is not None else None)
        self._own_lot = None
        self.gkt_cfg = cfg.gkt_config()

    @property
    def _streams(self) -> int:
        return self.cfg.server_train.batch_streams

    def _device_ids(self) -> list[int]:
        return sorted(self.devices)

    def select_device(self, rnd: int) -> int:
        ids = self._device_ids()
        rng = np.random.default_rng([self.cfg.seed, rnd, 0x7D])
        return ids[int(rng.integers(len(ids)))]

    # generation ----------------------------------------------------------
    def _server_generate(self, params: ModelParams, rnd: int) -> np.ndarray:
        inputs = student_generator(self.gkt_cfg)(params, rnd)
        msg = TextLotMsg(rnd, rnd, SERVER_ID, inputs.reshape(-1))
        self.net.broadcast(SERVER, [device(i) for i in self._device_ids()], msg)
        return inputs

    def _device_generate(self, params: ModelParams, rnd: int) -> np.ndarray:
        k = self.select_device(rnd)
        inputs, _, _ = generate_lot(
            self.devices[k], self.cfg.lot_chars, self._streams, [self.cfg.seed, rnd],
            self.cfg.temperature,
        )
        msg = TextLotMsg(rnd, rnd, k, inputs.reshape(-1))
        others = [device(i) for i in self._device_ids() if i != k]
        self.net.broadcast(device(k), others + [SERVER], msg)
        self._own_lot = (k, msg)
        (got,) = [m for m in self.net.drain(SERVER) if isinstance(m, TextLotMsg)]
        return np.asarray(got.ids).reshape(inputs.shape)

    # labelling -----------------------------------------------------------
    def _device_step(self, i: int, msg: TextLotMsg) -> None:
        block = np.asarray(msg.ids).reshape(self._streams, -1)
        labels = clm.score_block(self.devices[i], block).reshape(-1, VOCAB_SIZE)
        self.net.send(device(i), AGGREGATOR, SoftLabelLotMsg(msg.round, msg.lot, i, labels))

    def _aggregator_step(self, rnd: int) -> None:
        msgs = [m for m in self.net.drain(AGGREGATOR) if m.round == rnd]
        if not msgs:
            raise AggregationError(f"no device answered in round {rnd}")
        msgs.sort(key=lambda m: m.sender)
        agg = aggregate([m.labels for m in msgs])
        self.responders.append(len(msgs))
        self.net.send(AGGREGATOR, SERVER, AggregatedLabelMsg(rnd, msgs[0].lot, agg, len(msgs)))

    def _label(self, inputs: np.ndarray, rnd: int) -> np.ndarray:
        own = self._own_lot
        for i in self._device_ids():
            inbox = self.net.drain(device(i))
            if own is not None and own[0] == i:
                inbox.append(own[1])
            for m in inbox:
                if isinstance(m, TextLotMsg) and m.round == rnd:
                    self._device_step(i, m)
        self._own_lot = None
        self._aggregator_step(rnd)
        (msg,) = [m for m in self.net.drain(SERVER) if isinstance(m, AggregatedLabelMsg)]
        return msg.labels.reshape(inputs.shape + (VOCAB_SIZE,))

    def generate(self, rnd: int) -> np.ndarray:
        if self.cfg.mode == SDGKT:
            return self._server_generate(self.state.params, rnd)
        return self._device_generate(self.state.params, rnd)

    def step(self, rnd: int, evaluator: Evaluator | None = None) -> ModelParams:
        """One full round: generate, label, aggregate, train the server."""
        inputs = self.generate(rnd)
        labels = self._label(inputs, rnd)
        self.state, _ = transfer_cycle(self.state, self.gkt_cfg, rnd, inputs, labels, evaluator)
        self.server = self.state.params
        return self.server

    def run(self, evaluator: Evaluator | None = None) -> FederationResult:
        """All configured rounds, with a report row per evaluation point."""
        def gen(params, rnd):
            self.state.params = params
            return self.generate(rnd)

        server, report = run_cycles(self.state.params, self.gkt_cfg, gen, self._label, evaluator,
                                    opt=self.state.opt)
        self.server = server
        return FederationResult(server, report, self.net.transcript_hash(), self.responders, self.net)


def run_round_sdgkt(fed: Federation, rnd: int) -> ModelParams:
    if fed.cfg.mode != SDGKT:
        raise ValueError("federation is configured for TDGKT")
    return fed.step(rnd)


def run_round_tdgkt(fed: Federation, rnd: int) -> ModelParams:
    if fed.cfg.mode != TDGKT:
        raise ValueError("federation is configured for SDGKT")
    return fed.step(rnd)
