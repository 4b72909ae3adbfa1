"""Ledger audits: chain replay, privacy scan, and book-assisted reconstruction."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .core_types import PROSUMER_TOKEN_PATTERN, AnonAddress, ProsumerId
from .ledger import Block, parse_dump, replay
from .sim import ProsumerTotals, trade_totals


def privacy_scan(text: str, prosumers: Iterable[ProsumerId] = ()) -> list[str]:
    """Every prosumer identifier token found in ``text``."""
    hits = re.findall(PROSUMER_TOKEN_PATTERN, text)
    for p in prosumers:
        hits.extend(re.findall(rf"\b{re.escape(p.token)}\b", text))
    return hits


def load_address_book(path: str | Path) -> dict[AnonAddress, ProsumerId]:
    raw = json.loads(Path(path).read_text())
    book = {}
    for token, addresses in raw.items():
        prosumer = ProsumerId.parse(token)
        for text in addresses:
            addr = AnonAddress.parse(text)
            if addr in book:
                raise ValueError(f"address {addr} listed for two prosumers")
            book[addr] = prosumer
    return book


def reconstruct_totals(
    blocks: list[Block], book: Mapping[AnonAddress, ProsumerId]
) -> dict[ProsumerId, ProsumerTotals]:
    """Per-prosumer fiat flows rebuilt from the ledger alone plus the book.

    ``final_fiat - initial_fiat`` is filled in as fiat deposited minus fiat
    withdrawn, with ``initial_fiat`` left at zero.
    """
    events = [ev for b in blocks for ev in b.events]
    _, _, totals = trade_totals(events, book)
    for ev in events:
        if ev.kind in ("FinancialAdded", "FinancialDeposited"):
            prosumer = book[AnonAddress.parse(ev["anon"])]
            sign = 1 if ev.kind == "FinancialDeposited" else -1
            totals.setdefault(prosumer, ProsumerTotals()).final_fiat += sign * ev["amount"]
    return totals


@dataclass
class AuditResult:
    blocks: int
    state_hash: str
    privacy_hits: list[str]
    problems: list[str] = field(default_factory=list)
    totals: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.privacy_hits and not self.problems


def audit_ledger(
    ledger_text: str,
    book: Mapping[AnonAddress, ProsumerId] | None = None,
    report: Mapping | None = None,
) -> AuditResult:
    """Replay a dumped ledger, scan it for identities, and cross-check totals.

    Raises ``ReplayMismatch`` if the chain does not replay.
    """
    blocks = parse_dump(ledger_text)
    contract = replay(blocks)
    result = AuditResult(len(blocks), contract.state_hash(), privacy_scan(ledger_text))
    if report is not None and report.get("final_state_hash") != result.state_hash:
        result.problems.append("replayed state hash differs from report")
    if book is None:
        return result
    totals = reconstruct_totals(blocks, book)
    result.totals = {p.token: t.to_dict() for p, t in sorted(totals.items())}
    if report is None:
        return result
    for token, entry in report.get("prosumers", {}).items():
        rebuilt = totals.get(ProsumerId.parse(token), ProsumerTotals())
        for key, value in (
            ("fiat_delta", rebuilt.fiat_delta),
            ("sales", rebuilt.sales),
            ("purchases", rebuilt.purchases),
            ("energy_sold", rebuilt.energy_sold),
            ("energy_bought", rebuilt.energy_bought),
        ):
            if entry[key] != value:
                result.problems.append(f"{token}: {key} {entry[key]} in report, {value} from ledger")
    return result
