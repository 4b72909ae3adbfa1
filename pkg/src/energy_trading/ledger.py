"""Simulated blockchain: a nonce-checked mempool, FIFO blocks, broadcast events.

Mining is deterministic: a block drains the whole queue in arrival order and
applies each transaction to the contract. A failing transaction is recorded
with its reason and contributes no events.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol, Union

from .core_types import (
    AnonAddress,
    Authorization,
    EnergyAsset,
    TradingError,
    U64_MAX,
    canonical,
)

log = logging.getLogger(__name__)

GENESIS_PARENT = "0" * 64

EVENT_KINDS = (
    "AssetAdded",
    "FinancialAdded",
    "OfferPosted",
    "OfferRescinded",
    "OfferAccepted",
    "AssetDeposited",
    "FinancialDeposited",
)


class LedgerError(TradingError):
    pass


class ReplayMismatch(LedgerError):
    pass


def _is_uint(v: Any, bound: int = U64_MAX) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and 0 <= v <= bound


# --- contract calls -------------------------------------------------------


@dataclass(frozen=True)
class AddEnergyAsset:
    anon: AnonAddress
    asset: EnergyAsset

    def well_formed(self) -> bool:
        return isinstance(self.anon, AnonAddress) and isinstance(self.asset, EnergyAsset)


@dataclass(frozen=True)
class AddFinancialBalance:
    anon: AnonAddress
    amount: int

    def well_formed(self) -> bool:
        return isinstance(self.anon, AnonAddress) and _is_uint(self.amount)


@dataclass(frozen=True)
class PostOffer:
    asset_id: int
    unit_price: int

    def well_formed(self) -> bool:
        return _is_uint(self.asset_id) and _is_uint(self.unit_price)


@dataclass(frozen=True)
class RescindOffer:
    offer_id: int

    def well_formed(self) -> bool:
        return _is_uint(self.offer_id)


@dataclass(frozen=True)
class AcceptOffer:
    offer_id: int
    asset_id: int

    def well_formed(self) -> bool:
        return _is_uint(self.offer_id) and _is_uint(self.asset_id)


@dataclass(frozen=True)
class DepositEnergyAsset:
    asset_id: int

    def well_formed(self) -> bool:
        return _is_uint(self.asset_id)


@dataclass(frozen=True)
class DepositFinancial:
    amount: int

    def well_formed(self) -> bool:
        return _is_uint(self.amount)


Call = Union[
    AddEnergyAsset,
    AddFinancialBalance,
    PostOffer,
    RescindOffer,
    AcceptOffer,
    DepositEnergyAsset,
    DepositFinancial,
]

CALL_TYPES: dict[str, type] = {
    cls.__name__: cls
    for cls in (
        AddEnergyAsset,
        AddFinancialBalance,
        PostOffer,
        RescindOffer,
        AcceptOffer,
        DepositEnergyAsset,
        DepositFinancial,
    )
}

# field name -> parser for the non-integer payload fields
_FIELD_PARSERS: dict[str, Callable[[Any], Any]] = {
    "anon": AnonAddress.parse,
    "asset": EnergyAsset.from_dict,
}


def call_to_dict(call: Call) -> dict[str, Any]:
    d: dict[str, Any] = {"call": type(call).__name__}
    for name in call.__dataclass_fields__:
        d[name] = getattr(call, name)
    return d


def call_from_dict(d: dict[str, Any]) -> Call:
    kind = d.get("call")
    if kind not in CALL_TYPES:
        raise LedgerError(f"unknown call kind {kind!r}")
    cls = CALL_TYPES[kind]
    kwargs = {}
    for name in cls.__dataclass_fields__:
        raw = d[name]
        kwargs[name] = _FIELD_PARSERS.get(name, lambda x: x)(raw)
    return cls(**kwargs)


@dataclass(frozen=True)
class LedgerTransaction:
    auth: Authorization
    call: Call
    nonce: int

    @property
    def signer(self) -> AnonAddress:
        return self.auth.signer

    def to_dict(self) -> dict[str, Any]:
        return {"auth": self.auth, "call": call_to_dict(self.call), "nonce": self.nonce}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LedgerTransaction:
        return cls(
            auth=Authorization.from_dict(d["auth"]),
            call=call_from_dict(d["call"]),
            nonce=d["nonce"],
        )


@dataclass(frozen=True)
class LedgerEvent:
    """Broadcast result of a successful call.

    ``payload`` holds plain JSON data: addresses as hex strings, assets as
    ``{"power", "start", "end"}`` dicts, ids and amounts as ints.
    """

    kind: str
    payload: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.payload[key]

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LedgerEvent:
        if d["kind"] not in EVENT_KINDS:
            raise LedgerError(f"unknown event kind {d['kind']!r}")
        return cls(d["kind"], d["payload"])


# --- blocks ---------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    height: int
    txs: tuple[LedgerTransaction, ...]
    # None for an applied transaction, otherwise the failure reason
    results: tuple[str | None, ...]
    events: tuple[LedgerEvent, ...]
    parent_hash: str
    hash: str = ""

    def body(self) -> dict[str, Any]:
        return {
            "height": self.height,
            "txs": list(self.txs),
            "results": list(self.results),
            "events": list(self.events),
            "parent_hash": self.parent_hash,
        }

    def compute_hash(self) -> str:
        return hashlib.sha256(canonical(self.body()).encode()).hexdigest()

    def sealed(self) -> Block:
        return Block(
            self.height, self.txs, self.results, self.events, self.parent_hash,
            self.compute_hash(),
        )

    def to_dict(self) -> dict[str, Any]:
        return {**self.body(), "hash": self.hash}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Block:
        return cls(
            height=d["height"],
            txs=tuple(LedgerTransaction.from_dict(t) for t in d["txs"]),
            results=tuple(d["results"]),
            events=tuple(LedgerEvent.from_dict(e) for e in d["events"]),
            parent_hash=d["parent_hash"],
            hash=d["hash"],
        )


class ContractLike(Protocol):
    def apply(self, auth: Authorization, call: Call) -> list[LedgerEvent]: ...


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


@dataclass
class Ledger:
    """Single-writer chain of blocks over one contract instance.

    Block 0 is an empty genesis block, so ``events_since(0)`` returns every
    event ever emitted.
    """

    contract: ContractLike
    blocks: list[Block] = field(default_factory=list)
    _queue: list[LedgerTransaction] = field(default_factory=list)
    _last_nonce: dict[AnonAddress, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.blocks:
            self.blocks.append(Block(0, (), (), (), GENESIS_PARENT).sealed())

    @property
    def tip(self) -> int:
        return self.blocks[-1].height

    @property
    def pending(self) -> tuple[LedgerTransaction, ...]:
        return tuple(self._queue)

    def next_nonce(self, signer: AnonAddress) -> int:
        return self._last_nonce.get(signer, -1) + 1

    def submit(self, tx: LedgerTransaction) -> SubmitResult:
        if not isinstance(tx.auth, Authorization) or not isinstance(
            tx.auth.signer, AnonAddress
        ):
            return SubmitResult(False, "malformed_auth")
        if type(tx.call).__name__ not in CALL_TYPES or not isinstance(
            tx.call, tuple(CALL_TYPES.values())
        ):
            return SubmitResult(False, "unknown_call")
        if not tx.call.well_formed():
            return SubmitResult(False, "malformed_payload")
        if not _is_uint(tx.nonce) or tx.nonce <= self._last_nonce.get(tx.signer, -1):
            return SubmitResult(False, "stale_nonce")
        self._last_nonce[tx.signer] = tx.nonce
        self._queue.append(tx)
        return SubmitResult(True)

    def mine_block(self) -> Block:
        txs, self._queue = self._queue, []
        results: list[str | None] = []
        events: list[LedgerEvent] = []
        for tx in txs:
            try:
                emitted = self.contract.apply(tx.auth, tx.call)
            except TradingError as exc:
                reason = getattr(exc, "reason", type(exc).__name__)
                log.debug("tx %s from %s failed: %s", type(tx.call).__name__, tx.signer, exc)
                results.append(reason)
                continue
            results.append(None)
            events.extend(emitted)
        block = Block(
            self.tip + 1, tuple(txs), tuple(results), tuple(events), self.blocks[-1].hash
        ).sealed()
        self.blocks.append(block)
        return block

    def events_since(self, height: int) -> list[LedgerEvent]:
        if not 0 <= height <= self.tip:
            raise LedgerError(f"height {height} outside [0, {self.tip}]")
        return [ev for block in self.blocks[height + 1 :] for ev in block.events]

    def dump(self) -> str:
        return "".join(canonical(b) + "\n" for b in self.blocks)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dump())


def parse_dump(text: str) -> list[Block]:
    return [Block.from_dict(json.loads(line)) for line in text.splitlines() if line]


def load_dump(path: str | Path) -> list[Block]:
    return parse_dump(Path(path).read_text())


def verify_chain(blocks: Iterable[Block]) -> None:
    parent = GENESIS_PARENT
    for expected_height, block in enumerate(blocks):
        if block.height != expected_height:
            raise ReplayMismatch(f"height {block.height}, expected {expected_height}")
        if block.parent_hash != parent:
            raise ReplayMismatch(f"block {block.height} does not chain to its parent")
        if block.compute_hash() != block.hash:
            raise ReplayMismatch(f"block {block.height} hash mismatch")
        parent = block.hash


def replay(blocks: list[Block], contract: ContractLike | None = None) -> ContractLike:
    """Re-apply every block to a fresh contract, checking results and events."""
    if contract is None:
        from .contract import Contract

        contract = Contract()
    verify_chain(blocks)
    for block in blocks:
        events: list[LedgerEvent] = []
        for tx, recorded in zip(block.txs, block.results):
            try:
                emitted = contract.apply(tx.auth, tx.call)
            except TradingError as exc:
                outcome = getattr(exc, "reason", type(exc).__name__)
            else:
                outcome = None
                events.extend(emitted)
            if outcome != recorded:
                raise ReplayMismatch(
                    f"block {block.height}: tx outcome {outcome!r} != recorded {recorded!r}"
                )
        if canonical(events) != canonical(list(block.events)):
            raise ReplayMismatch(f"block {block.height}: replayed events differ")
    return contract
