"""In-process simulated network with per-role mailboxes and a routing table.

Roles are ``"server"``, ``"aggregator"`` and ``"device:<id>"``. The routing
table is the privacy surface: per-device soft labels may only reach the
aggregator, text lots never reach the aggregator, and only the aggregator
talks to the server about labels. Any other delivery raises
:class:`RoutingError` before it happens.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass

from . import wire
from .wire import AggregatedLabelMsg, Message, SoftLabelLotMsg, TextLotMsg

SERVER = "server"
AGGREGATOR = "aggregator"


def device(i: int) -> str:
    return f"device:{i}"


def role_kind(role: str) -> str:
    return "device" if role.startswith("device:") else role


ROUTES = {
    TextLotMsg: {("server", "device"), ("device", "device"), ("device", "server")},
    SoftLabelLotMsg: {("device", "aggregator")},
    AggregatedLabelMsg: {("aggregator", "server")},
}


class RoutingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Delivery:
    sender: str
    receiver: str
    kind: str
    round: int
    lot: int
    digest: str


class SimulatedNetwork:
    """Routes messages between role mailboxes and keeps an audit log.

    With ``wire_precision="f32"`` every delivered message is a decoded copy
    of its wire frame (labels quantised to float32); with ``"f64"`` the
    receiver gets the sender's object unchanged. The transcript digest is
    always computed over wire frames.
    """

    def __init__(self, n_devices: int, wire_precision: str = "f64", jsonl_path=None):
        if wire_precision not in ("f32", "f64"):
            raise ValueError("wire_precision must be 'f32' or 'f64'")
        self.roles = [SERVER, AGGREGATOR] + [device(i) for i in range(n_devices)]
        self.mailboxes: dict[str, deque] = {r: deque() for r in self.roles}
        self.audit: list[Delivery] = []
        self.wire_precision = wire_precision
        self._jsonl = open(jsonl_path, "w") if jsonl_path else None
        self.down: set[str] = set()

    def close(self) -> None:
        if self._jsonl:
            self._jsonl.close()
            self._jsonl = None

    def send(self, sender: str, receiver: str, msg: Message) -> None:
        if sender not in self.mailboxes or receiver not in self.mailboxes:
            raise RoutingError(f"unknown role in {sender} -> {receiver}")
        allowed = ROUTES.get(type(msg), set())
        if (role_kind(sender), role_kind(receiver)) not in allowed:
            raise RoutingError(f"{type(msg).__name__} may not travel {sender} -> {receiver}")
        frame = wire.encode(msg)
        self.audit.append(
            Delivery(sender, receiver, type(msg).__name__, msg.round, msg.lot,
                     hashlib.sha256(frame).hexdigest())
        )
        if self._jsonl:
            self._jsonl.write(wire.to_json(msg) + "\n")
        if receiver in self.down:
            return
        self.mailboxes[receiver].append(wire.decode(frame)[0] if self.wire_precision == "f32" else msg)

    def broadcast(self, sender: str, receivers, msg: Message) -> None:
        for r in receivers:
            self.send(sender, r, msg)

    def drain(self, role: str) -> list[Message]:
        box = self.mailboxes[role]
        out = list(box)
        box.clear()
        return out

    def violations(self) -> list[Delivery]:
        """Audit deliveries that break the routing table (always empty unless
        the table itself was bypassed)."""
        bad = []
        for d in self.audit:
            kinds = (role_kind(d.sender), role_kind(d.receiver))
            if d.kind == "SoftLabelLotMsg" and kinds[1] != "aggregator":
                bad.append(d)
            elif d.kind == "TextLotMsg" and kinds[1] == "aggregator":
                bad.append(d)
            elif d.kind == "AggregatedLabelMsg" and kinds != ("aggregator", "server"):
                bad.append(d)
        return bad

    def transcript_hash(self) -> str:
        """Digest of the transcript, insensitive to delivery order within a round."""
        h = hashlib.sha256()
        for d in sorted(self.audit, key=lambda d: (d.round, d.lot, d.receiver, d.sender, d.digest)):
            h.update(f"{d.round}|{d.lot}|{d.sender}|{d.receiver}|{d.digest}\n".encode())
        return h.hexdigest()
