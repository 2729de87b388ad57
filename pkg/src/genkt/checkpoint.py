"""Binary model checkpoints.

Layout (all little-endian)::

    b"GKTLM"            magic, 5 bytes
    u16                 format version
    u32                 header length in bytes
    header              UTF-8 JSON, sorted keys, no whitespace
    f64 * n_params      parameters in ModelParams flat order
    f64 * 3 * n_params  optional optimizer accumulators: sq_grad, sq_delta, velocity

The header records the model spec, the vocabulary order and its hash, the
seed lineage and training counters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clm import ModelParams, ModelSpec
from .corpus import VOCAB
from .trainer import OptimizerState

MAGIC = b"GKTLM"
VERSION = 1
_PRELUDE = struct.Struct("<5sHI")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    opt: OptimizerState | None = None
    seeds: list = field(default_factory=list)
    frames: int = 0
    updates: int = 0
    extra: dict = field(default_factory=dict)
    vocab_hash: str = VOCAB.hash


def _header(ck: Checkpoint) -> bytes:
    spec = ck.params.spec
    h = {
        "format_version": VERSION,
        "spec": {"cells": spec.cells, "layers": spec.layers, "vocab_size": spec.vocab_size},
        "n_params": spec.n_params,
        "vocab_hash": ck.vocab_hash,
        "vocab_order": list(VOCAB.names),
        "param_order": [name for name, _ in spec.shapes()],
        "gate_order": ["input", "forget", "output", "candidate"],
        "seed_lineage": list(ck.seeds),
        "has_optimizer": ck.opt is not None,
        "optimizer_steps": ck.opt.steps if ck.opt is not None else 0,
        "frames": int(ck.frames),
        "updates": int(ck.updates),
        "extra": ck.extra,
    }
    return json.dumps(h, sort_keys=True, separators=(",", ":")).encode()


def dumps(ck: Checkpoint) -> bytes:
    header = _header(ck)
    parts = [_PRELUDE.pack(MAGIC, VERSION, len(header)), header, ck.params.flat.astype("<f8").tobytes()]
    if ck.opt is not None:
        for arr in (ck.opt.sq_grad, ck.opt.sq_delta, ck.opt.velocity):
            parts.append(np.asarray(arr).astype("<f8").tobytes())
    return b"".join(parts)


def loads(data: bytes, expect_spec: ModelSpec | None = None) -> Checkpoint:
    if len(data) < _PRELUDE.size:
        raise CheckpointError("file too short to be a checkpoint")
    magic, version, hlen = _PRELUDE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        h = json.loads(data[_PRELUDE.size : _PRELUDE.size + hlen])
    except ValueError as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    if h.get("vocab_hash") != VOCAB.hash:
        raise CheckpointError(
            f"vocabulary order mismatch: checkpoint {h.get('vocab_hash')} vs {VOCAB.hash}"
        )
    spec = ModelSpec(h["spec"]["cells"], h["spec"]["layers"], h["spec"]["vocab_size"])
    if expect_spec is not None and spec != expect_spec:
        raise CheckpointError(f"checkpoint holds a {spec} model but {expect_spec} was expected")
    n = spec.n_params
    if h["n_params"] != n:
        raise CheckpointError(f"header says {h['n_params']} params but {spec} needs {n}")
    off = _PRELUDE.size + hlen
    want = off + 8 * n * (4 if h["has_optimizer"] else 1)
    if len(data) != want:
        raise CheckpointError(f"checkpoint body is {len(data)} bytes, expected {want}")
    arrays = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
    opt = None
    if h["has_optimizer"]:
        opt = OptimizerState(
            arrays[n : 2 * n].copy(), arrays[2 * n : 3 * n].copy(), arrays[3 * n :].copy(),
            h["optimizer_steps"],
        )
    return Checkpoint(
        ModelParams(spec, arrays[:n].copy()), opt, h["seed_lineage"], h["frames"], h["updates"],
        h["extra"], h["vocab_hash"],
    )


def save_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ck))


def load_checkpoint(path: str | Path, expect_spec: ModelSpec | None = None) -> Checkpoint:
    return loads(Path(path).read_bytes(), expect_spec)
