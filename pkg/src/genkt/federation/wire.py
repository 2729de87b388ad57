"""Bit-exact framing for federation messages and soft-label dumps.

Every record is::

    b"GKTW"   magic, 4 bytes
    u16       version
    u8        message type (1 text lot, 2 device soft labels, 3 aggregated labels)
    u32       round id
    u32       lot id
    u32       sender id
    u64       payload length in bytes
    payload

All integers are little-endian. Payloads:

* text lot: one byte per symbol id. A lot holding several parallel streams
  is their row-major concatenation; the stream count is protocol config.
* device soft labels: little-endian float32, 30 per position.
* aggregated labels: u32 contributing-device count, then float32 labels.

Labels are promoted back to float64 on decode.
"""

from __future__ import annotations

import io
import json
import queue
import socket
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator, Union

import numpy as np

from ..corpus import VOCAB_SIZE, check_symbols

MAGIC = b"GKTW"
VERSION = 1
HEADER = struct.Struct("<4sHBIIIQ")
TEXT_LOT, SOFT_LABELS, AGGREGATED = 1, 2, 3
SERVER_ID = 0xFFFFFFFE
AGGREGATOR_ID = 0xFFFFFFFF


class WireError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TextLotMsg:
    round: int
    lot: int
    sender: int
    ids: np.ndarray


@dataclass(frozen=True, eq=False)
class SoftLabelLotMsg:
    round: int
    lot: int
    sender: int  # device id
    labels: np.ndarray  # (positions, 30)


@dataclass(frozen=True, eq=False)
class AggregatedLabelMsg:
    round: int
    lot: int
    labels: np.ndarray
    n_devices: int
    sender: int = AGGREGATOR_ID


Message = Union[TextLotMsg, SoftLabelLotMsg, AggregatedLabelMsg]


def _labels_payload(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[1] != VOCAB_SIZE:
        raise WireError(f"labels must be (positions, {VOCAB_SIZE}), got {labels.shape}")
    return labels.astype("<f4").tobytes()


def _decode_labels(payload: bytes) -> np.ndarray:
    if len(payload) % (4 * VOCAB_SIZE):
        raise WireError(f"label payload of {len(payload)} bytes is not a whole number of positions")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(-1, VOCAB_SIZE)


def encode(msg: Message) -> bytes:
    if isinstance(msg, TextLotMsg):
        kind, payload = TEXT_LOT, check_symbols(msg.ids).tobytes()
    elif isinstance(msg, SoftLabelLotMsg):
        kind, payload = SOFT_LABELS, _labels_payload(msg.labels)
    elif isinstance(msg, AggregatedLabelMsg):
        kind, payload = AGGREGATED, struct.pack("<I", msg.n_devices) + _labels_payload(msg.labels)
    else:
        raise WireError(f"cannot encode {type(msg).__name__}")
    return HEADER.pack(MAGIC, VERSION, kind, msg.round, msg.lot, msg.sender, len(payload)) + payload


def _build(kind: int, rnd: int, lot: int, sender: int, payload: bytes) -> Message:
    if kind == TEXT_LOT:
        return TextLotMsg(rnd, lot, sender, check_symbols(np.frombuffer(payload, dtype=np.uint8).copy()))
    if kind == SOFT_LABELS:
        return SoftLabelLotMsg(rnd, lot, sender, _decode_labels(payload))
    if kind == AGGREGATED:
        if len(payload) < 4:
            raise WireError("aggregated payload too short")
        (count,) = struct.unpack_from("<I", payload)
        return AggregatedLabelMsg(rnd, lot, _decode_labels(payload[4:]), count, sender)
    raise WireError(f"unknown message type {kind}")


def _parse_header(head: bytes):
    magic, version, kind, rnd, lot, sender, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise WireError(f"bad frame magic {magic!r}")
    if version != VERSION:
        raise WireError(f"unsupported wire version {version}")
    return kind, rnd, lot, sender, length


def decode(frame: bytes) -> tuple[Message, int]:
    """Decode one frame from the start of ``frame``; returns ``(msg, bytes_used)``."""
    if len(frame) < HEADER.size:
        raise WireError("truncated frame header")
    kind, rnd, lot, sender, length = _parse_header(frame[: HEADER.size])
    end = HEADER.size + length
    if len(frame) < end:
        raise WireError(f"truncated payload: need {length} bytes, have {len(frame) - HEADER.size}")
    return _build(kind, rnd, lot, sender, frame[HEADER.size : end]), end


def read_frames(stream: BinaryIO) -> Iterator[Message]:
    while True:
        head = stream.read(HEADER.size)
        if not head:
            return
        if len(head) < HEADER.size:
            raise WireError("truncated frame header")
        kind, rnd, lot, sender, length = _parse_header(head)
        payload = stream.read(length)
        if len(payload) != length:
            raise WireError("truncated payload")
        yield _build(kind, rnd, lot, sender, payload)


def decode_all(data: bytes) -> list[Message]:
    return list(read_frames(io.BytesIO(data)))


def write_file(path: str | Path, msgs) -> None:
    with open(path, "wb") as fh:
        for m in msgs:
            fh.write(encode(m))


def read_file(path: str | Path) -> list[Message]:
    with open(path, "rb") as fh:
        return list(read_frames(fh))


def roundtrip(msg: Message) -> Message:
    """What the receiving side sees after the message crosses the wire."""
    return decode(encode(msg))[0]


def to_json(msg: Message) -> str:
    """One-line JSON mirror of a message, for debugging."""
    d = {"type": type(msg).__name__, "round": msg.round, "lot": msg.lot, "sender": msg.sender}
    if isinstance(msg, TextLotMsg):
        d["ids"] = np.asarray(msg.ids).tolist()
    else:
        d["labels"] = np.asarray(msg.labels).tolist()
        if isinstance(msg, AggregatedLabelMsg):
            d["n_devices"] = msg.n_devices
    return json.dumps(d, separators=(",", ":"))


class LoopbackTransport:
    """Carries frames over a connected local socket pair.

    A writer thread drains the outgoing queue so large frames cannot
    deadlock against a full socket buffer."""

    def __init__(self):
        self._a, self._b = socket.socketpair()
        self._reader = self._b.makefile("rb")
        self._queue: queue.Queue = queue.Queue()
        self._writer = threading.Thread(target=self._drain, daemon=True)
        self._writer.start()

    def _drain(self) -> None:
        while (data := self._queue.get()) is not None:
            self._a.sendall(data)

    def send(self, msg: Message) -> None:
        self._queue.put(encode(msg))

    def recv(self) -> Message:
        return next(read_frames(self._reader))

    def close(self) -> None:
        self._queue.put(None)
        self._writer.join()
        self._reader.close()
        self._a.close()
        self._b.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
