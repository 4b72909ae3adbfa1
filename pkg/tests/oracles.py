"""Brute-force reference computations, independent of the package's algebra.

Everything here works timestep by timestep on plain ints and dicts; none of
it calls into ``energy_trading.exchange``.
"""

from __future__ import annotations

from collections import defaultdict

from energy_trading.core_types import AnonAddress, EnergyAsset, ProsumerId


def energy_by_summation(power: int, start: int, end: int) -> int:
    total = 0
    for _ in range(start, end + 1):
        total += abs(power)
    return total


def profile(assets) -> dict[int, int]:
    """Signed power per timestep for a collection of assets (zeros dropped)."""
    out: dict[int, int] = defaultdict(int)
    for a in assets:
        for t in range(a.start, a.end + 1):
            out[t] += a.power
    return {t: p for t, p in out.items() if p}


def settle_oracle(offered: tuple[int, int, int], provided: tuple[int, int, int], price: int):
    """Per-timestep exchange of two (power, start, end) triples.

    Returns (matched per timestep, payment, poster residue profile,
    acceptor residue profile), or None when nothing overlaps.
    """
    op, os_, oe = offered
    pp, ps, pe = provided
    matched: dict[int, int] = {}
    poster_rest: dict[int, int] = {}
    acceptor_rest: dict[int, int] = {}
    payment = 0
    for t in range(min(os_, ps), max(oe, pe) + 1):
        a = op if os_ <= t <= oe else 0
        b = pp if ps <= t <= pe else 0
        m = min(abs(a), abs(b)) if a and b else 0
        if m:
            matched[t] = m
            payment += price * m
        ra = a - (m if a > 0 else -m) if a else 0
        rb = b - (m if b > 0 else -m) if b else 0
        if ra:
            poster_rest[t] = ra
        if rb:
            acceptor_rest[t] = rb
    if not matched:
        return None
    return matched, payment, poster_rest, acceptor_rest


def run_lengths(watts: list[int], chunking: int) -> list[tuple[int, int, int]]:
    """(power, start, end) runs of equal non-zero values, cut every ``chunking`` steps."""
    runs = []
    for t, w in enumerate(watts):
        if runs and runs[-1][0] == w and runs[-1][2] == t - 1 and t - runs[-1][1] < chunking:
            runs[-1] = (w, runs[-1][1], t)
        else:
            runs.append((w, t, t))
    return [r for r in runs if r[0] != 0]


def withdrawn_on_chain_peaks(blocks, book: dict[AnonAddress, ProsumerId]):
    """Largest per-timestep withdrawn power each prosumer ever had on-chain.

    Walks the ledger block by block. An asset counts against the prosumer who
    withdrew it from the moment it is added until that prosumer deposits an
    unsold piece of it back; pieces handed to a counterparty in a trade stay
    counted (the seller is committed to them) and never count for the buyer.
    Returns {(prosumer, is_production): max watts over all t and blocks}.
    """
    origin: dict[int, ProsumerId | None] = {}
    live: dict[tuple[ProsumerId, bool, int], int] = defaultdict(int)
    peaks: dict[tuple[ProsumerId, bool], int] = defaultdict(int)
    for block in blocks:
        for ev in block.events:
            p = ev.payload
            if ev.kind == "AssetAdded":
                who = book[AnonAddress.parse(p["anon"])]
                origin[p["asset_id"]] = who
                a = p["asset"]
                for t in range(a["start"], a["end"] + 1):
                    live[(who, a["power"] > 0, t)] += abs(a["power"])
            elif ev.kind == "OfferAccepted":
                for piece in p["pieces"]:
                    origin[piece["asset_id"]] = (
                        origin.get(piece["parent"]) if piece["role"] == "remainder" else None
                    )
            elif ev.kind == "AssetDeposited":
                who = origin.get(p["asset_id"])
                if who is not None:
                    a = p["asset"]
                    for t in range(a["start"], a["end"] + 1):
                        live[(who, a["power"] > 0, t)] -= abs(a["power"])
        for (who, prod, _t), watts in live.items():
            assert watts >= 0
            peaks[(who, prod)] = max(peaks[(who, prod)], watts)
    return dict(peaks)


def make_asset(triple) -> EnergyAsset:
    return EnergyAsset(*triple)
