"""Settlement algebra for two opposite-sign energy assets.

The traded quantity is the overlap rectangle of the two assets: the shared
timestep window times the smaller absolute power. Whatever lies outside the
rectangle goes back to its owner as up to three smaller assets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .core_types import EnergyAsset, TradingError, check_u64, mul_u64, sub_u64


class SettlementError(TradingError):
    pass


class SameSignError(SettlementError):
    pass


class DisjointAssetsError(SettlementError):
    pass


class EscrowShortfall(SettlementError):
    pass


class Overlap(NamedTuple):
    start: int
    end: int
    power: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    @property
    def energy(self) -> int:
        return mul_u64(self.power, self.length)


def intersect(a: EnergyAsset, b: EnergyAsset) -> Overlap | None:
    if (a.power > 0) == (b.power > 0):
        raise SameSignError(f"cannot match {a} with {b}: same sign")
    start, end = max(a.start, b.start), min(a.end, b.end)
    if start > end:
        return None
    return Overlap(start, end, min(abs(a.power), abs(b.power)))


def split(
    asset: EnergyAsset, start: int, end: int, matched_power: int
) -> tuple[EnergyAsset, list[EnergyAsset]]:
    """Cut the rectangle ``[start, end] x matched_power`` out of ``asset``.

    Remainders come back in timestep order: the slice before the window, the
    in-window power residue, then the slice after the window.
    """
    if not (asset.start <= start <= end <= asset.end):
        raise SettlementError(f"window [{start},{end}] not inside {asset}")
    if not 0 < matched_power <= abs(asset.power):
        raise SettlementError(f"matched power {matched_power} invalid for {asset}")
    sign = 1 if asset.power > 0 else -1
    matched = EnergyAsset(sign * matched_power, start, end)
    remainders = []
    if asset.start < start:
        remainders.append(EnergyAsset(asset.power, asset.start, start - 1))
    residue = abs(asset.power) - matched_power
    if residue:
        remainders.append(EnergyAsset(sign * residue, start, end))
    if end < asset.end:
        remainders.append(EnergyAsset(asset.power, end + 1, asset.end))
    return matched, remainders


@dataclass(frozen=True)
class Settlement:
    """Outcome of exchanging an offered asset against a provided one.

    ``matched_to_acceptor`` is the poster's piece handed to the acceptor;
    ``matched_to_poster`` is the acceptor's piece handed to the poster.
    """

    matched_to_acceptor: EnergyAsset
    matched_to_poster: EnergyAsset
    remainders_to_poster: list[EnergyAsset] = field(default_factory=list)
    remainders_to_acceptor: list[EnergyAsset] = field(default_factory=list)
    payment_to_seller: int = 0
    refund_to_buyer: int = 0

    @property
    def window(self) -> tuple[int, int]:
        return self.matched_to_acceptor.start, self.matched_to_acceptor.end

    @property
    def matched_energy(self) -> int:
        return self.matched_to_acceptor.energy

    @property
    def poster_is_seller(self) -> bool:
        return self.matched_to_acceptor.is_production


def settle(
    offered: EnergyAsset, provided: EnergyAsset, unit_price: int, escrow: int
) -> Settlement:
    """Exchange the overlapping parts of ``offered`` and ``provided``.

    ``escrow`` is the buyer's money put up for the trade; the seller gets
    ``unit_price`` per matched watt-interval and the buyer gets the rest.
    """
    check_u64(unit_price, "unit_price")
    check_u64(escrow, "escrow")
    overlap = intersect(offered, provided)
    if overlap is None:
        raise DisjointAssetsError(f"{offered} and {provided} do not overlap in time")
    payment = mul_u64(unit_price, overlap.power, overlap.length)
    if payment > escrow:
        raise EscrowShortfall(f"escrow {escrow} below payment {payment}")
    to_acceptor, poster_rest = split(offered, overlap.start, overlap.end, overlap.power)
    to_poster, acceptor_rest = split(provided, overlap.start, overlap.end, overlap.power)
    return Settlement(
        matched_to_acceptor=to_acceptor,
        matched_to_poster=to_poster,
        remainders_to_poster=poster_rest,
        remainders_to_acceptor=acceptor_rest,
        payment_to_seller=payment,
        refund_to_buyer=sub_u64(escrow, payment),
    )
