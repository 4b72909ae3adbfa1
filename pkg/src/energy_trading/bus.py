"""In-process off-chain message bus between prosumers and the DSO.

Messages sent during timestep ``t`` become visible after the next call to
``tick()``, i.e. at the start of ``t + 1``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any

from .core_types import TradingError, canonical

WITHDRAW_ASSETS = "WithdrawAssets"
FAILED_WITHDRAWAL = "FailedWithdrawal"
PRICE_ANNOUNCEMENT = "PriceAnnouncement"
MESSAGE_KINDS = (WITHDRAW_ASSETS, FAILED_WITHDRAWAL, PRICE_ANNOUNCEMENT)


class UnknownRecipient(TradingError):
    pass


@dataclass(frozen=True)
class BusMessage:
    kind: str
    sender: str
    recipient: str
    payload: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "sender": self.sender,
            "recipient": self.recipient,
            "payload": self.payload,
        }

    def to_text(self) -> str:
        return canonical(self)

    @classmethod
    def from_text(cls, text: str) -> BusMessage:
        d = json.loads(text)
        return cls(d["kind"], d["sender"], d["recipient"], d["payload"])


class Bus:
    def __init__(self) -> None:
        self._in_flight: deque[BusMessage] = deque()
        self._inboxes: dict[str, deque[BusMessage]] = {}

    def register(self, endpoint: str) -> None:
        self._inboxes.setdefault(endpoint, deque())

    @property
    def endpoints(self) -> list[str]:
        return list(self._inboxes)

    def send(self, msg: BusMessage) -> None:
        if msg.recipient not in self._inboxes:
            raise UnknownRecipient(msg.recipient)
        self._in_flight.append(msg)

    def tick(self) -> None:
        """Timestep boundary: deliver everything sent so far."""
        while self._in_flight:
            msg = self._in_flight.popleft()
            self._inboxes[msg.recipient].append(msg)

    def poll(self, endpoint: str) -> list[BusMessage]:
        if endpoint not in self._inboxes:
            raise UnknownRecipient(endpoint)
        inbox = self._inboxes[endpoint]
        out = list(inbox)
        inbox.clear()
        return out
