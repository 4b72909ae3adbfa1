"""Market contract: per-address custody, offer lifecycle, settlement.

Every operation validates completely before it touches state, so a rejected
call (``ContractError``) leaves the contract exactly as it was.
"""

from __future__ import annotations

import enum
import hashlib
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Any

from .core_types import (
    DSO_ADDRESS,
    AnonAddress,
    ArithmeticOverflow,
    Authorization,
    EnergyAsset,
    TradingError,
    add_u64,
    canonical,
    check_u64,
    energy_of,
    mul_u64,
    sub_u64,
    to_jsonable,
)
from .exchange import intersect, settle
from .ledger import Call, LedgerEvent


class ContractError(TradingError):
    """A rejected call. ``reason`` is the short code recorded on-chain."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class OfferKind(str, enum.Enum):
    ASK = "ask"
    BID = "bid"


class OfferStatus(str, enum.Enum):
    OPEN = "open"
    ACCEPTED = "accepted"
    RESCINDED = "rescinded"


@dataclass(frozen=True)
class AssetRecord:
    asset: EnergyAsset
    owner: AnonAddress
    locked: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"asset": self.asset, "owner": self.owner, "locked": self.locked}


@dataclass(frozen=True)
class Offer:
    offer_id: int
    asset_id: int
    asset: EnergyAsset
    unit_price: int
    poster: AnonAddress
    kind: OfferKind
    escrow: int = 0
    status: OfferStatus = OfferStatus.OPEN

    @property
    def is_open(self) -> bool:
        return self.status is OfferStatus.OPEN

    def to_dict(self) -> dict[str, Any]:
        return {
            "offer_id": self.offer_id,
            "asset_id": self.asset_id,
            "asset": self.asset,
            "unit_price": self.unit_price,
            "poster": self.poster,
            "kind": self.kind.value,
            "escrow": self.escrow,
            "status": self.status.value,
        }


def _event(event_kind: str, **payload: Any) -> LedgerEvent:
    return LedgerEvent(event_kind, to_jsonable(payload))


class Contract:
    def __init__(self, dso_address: AnonAddress = DSO_ADDRESS):
        self.dso_address = dso_address
        self.assets: dict[int, AssetRecord] = {}
        self.balances: dict[AnonAddress, int] = {}
        self.offers: dict[int, Offer] = {}
        self.next_asset_id = 0
        self.next_offer_id = 0

    # --- dispatch ---------------------------------------------------------

    def apply(self, auth: Authorization, call: Call) -> list[LedgerEvent]:
        handler = getattr(self, "_call_" + type(call).__name__, None)
        if handler is None:
            raise ContractError("unknown_call", type(call).__name__)
        try:
            return handler(auth, call)
        except ArithmeticOverflow as exc:
            raise ContractError("overflow", str(exc)) from exc

    def _call_AddEnergyAsset(self, auth, call):
        return [self.add_energy_asset(auth, call.anon, call.asset)[1]]

    def _call_AddFinancialBalance(self, auth, call):
        return [self.add_financial_balance(auth, call.anon, call.amount)]

    def _call_PostOffer(self, auth, call):
        return [self.post_offer(auth, call.asset_id, call.unit_price)[1]]

    def _call_RescindOffer(self, auth, call):
        return [self.rescind_offer(auth, call.offer_id)]

    def _call_AcceptOffer(self, auth, call):
        return [self.accept_offer(auth, call.offer_id, call.asset_id)]

    def _call_DepositEnergyAsset(self, auth, call):
        return [self.deposit_energy_asset(auth, call.asset_id)]

    def _call_DepositFinancial(self, auth, call):
        return [self.deposit_financial(auth, call.amount)]

    # --- guards -----------------------------------------------------------

    def _require_dso(self, auth: Authorization) -> None:
        if auth.signer != self.dso_address:
            raise ContractError("unauthorized", f"{auth.signer} is not the DSO")

    def _owned_unlocked(self, auth: Authorization, asset_id: int) -> AssetRecord:
        record = self.assets.get(asset_id)
        if record is None:
            raise ContractError("unknown_asset", str(asset_id))
        if record.owner != auth.signer:
            raise ContractError("not_owner", str(asset_id))
        if record.locked:
            raise ContractError("asset_locked", str(asset_id))
        return record

    def _open_offer(self, offer_id: int) -> Offer:
        offer = self.offers.get(offer_id)
        if offer is None:
            raise ContractError("unknown_offer", str(offer_id))
        if not offer.is_open:
            raise ContractError("offer_not_open", str(offer_id))
        return offer

    def _mint(self, asset: EnergyAsset, owner: AnonAddress) -> int:
        asset_id = self.next_asset_id
        self.assets[asset_id] = AssetRecord(asset, owner)
        self.next_asset_id += 1
        return asset_id

    # --- operations -------------------------------------------------------

    def add_energy_asset(
        self, auth: Authorization, anon: AnonAddress, asset: EnergyAsset
    ) -> tuple[int, LedgerEvent]:
        self._require_dso(auth)
        asset_id = self._mint(asset, anon)
        return asset_id, _event("AssetAdded", anon=anon, asset_id=asset_id, asset=asset)

    def add_financial_balance(
        self, auth: Authorization, anon: AnonAddress, amount: int
    ) -> LedgerEvent:
        self._require_dso(auth)
        new = add_u64(self.balances.get(anon, 0), check_u64(amount, "amount"))
        self.balances[anon] = new
        return _event("FinancialAdded", anon=anon, amount=amount)

    def post_offer(
        self, auth: Authorization, asset_id: int, unit_price: int
    ) -> tuple[int, LedgerEvent]:
        record = self._owned_unlocked(auth, asset_id)
        check_u64(unit_price, "unit_price")
        kind = OfferKind.ASK if record.asset.is_production else OfferKind.BID
        escrow = 0
        if kind is OfferKind.BID:
            escrow = mul_u64(unit_price, energy_of(record.asset))
            balance = self.balances.get(auth.signer, 0)
            if balance < escrow:
                raise ContractError("insufficient_funds", f"escrow {escrow} > {balance}")
            self.balances[auth.signer] = balance - escrow
        offer_id = self.next_offer_id
        self.next_offer_id += 1
        self.assets[asset_id] = replace(record, locked=True)
        self.offers[offer_id] = Offer(
            offer_id, asset_id, record.asset, unit_price, auth.signer, kind, escrow
        )
        return offer_id, _event(
            "OfferPosted",
            offer_id=offer_id,
            asset_id=asset_id,
            price=unit_price,
            kind=kind.value,
            poster=auth.signer,
            asset=record.asset,
            escrow=escrow,
        )

    def rescind_offer(self, auth: Authorization, offer_id: int) -> LedgerEvent:
        offer = self._open_offer(offer_id)
        if auth.signer != offer.poster:
            raise ContractError("not_poster", str(offer_id))
        refunded = add_u64(self.balances.get(offer.poster, 0), offer.escrow)
        if offer.escrow:
            self.balances[offer.poster] = refunded
        self.assets[offer.asset_id] = replace(self.assets[offer.asset_id], locked=False)
        self.offers[offer_id] = replace(offer, status=OfferStatus.RESCINDED)
        return _event("OfferRescinded", offer_id=offer_id, refund=offer.escrow)

    def accept_offer(
        self, auth: Authorization, offer_id: int, asset_id: int
    ) -> LedgerEvent:
        offer = self._open_offer(offer_id)
        provided = self._owned_unlocked(auth, asset_id)
        acceptor = auth.signer
        if provided.asset.is_production == offer.asset.is_production:
            raise ContractError("same_sign", f"offer {offer_id} vs asset {asset_id}")
        overlap = intersect(offer.asset, provided.asset)
        if overlap is None:
            raise ContractError("disjoint", f"offer {offer_id} vs asset {asset_id}")

        deltas: dict[AnonAddress, int] = defaultdict(int)
        if offer.kind is OfferKind.ASK:
            seller, buyer = offer.poster, acceptor
            escrow = mul_u64(offer.unit_price, overlap.power, overlap.length)
            if self.balances.get(acceptor, 0) < escrow:
                raise ContractError(
                    "insufficient_funds", f"{acceptor} cannot pay {escrow}"
                )
            deltas[acceptor] -= escrow
        else:
            seller, buyer = acceptor, offer.poster
            escrow = offer.escrow
        s = settle(offer.asset, provided.asset, offer.unit_price, escrow)
        deltas[seller] += s.payment_to_seller
        deltas[buyer] += s.refund_to_buyer
        new_balances = {
            addr: check_u64(self.balances.get(addr, 0) + d, "balance")
            for addr, d in deltas.items()
        }

        # all checks passed; commit
        self.balances.update(new_balances)
        del self.assets[offer.asset_id]
        del self.assets[asset_id]
        self.offers[offer_id] = replace(offer, status=OfferStatus.ACCEPTED)
        pieces = []
        for piece, owner, parent, role in (
            [(s.matched_to_acceptor, acceptor, offer.asset_id, "matched")]
            + [(s.matched_to_poster, offer.poster, asset_id, "matched")]
            + [(a, offer.poster, offer.asset_id, "remainder") for a in s.remainders_to_poster]
            + [(a, acceptor, asset_id, "remainder") for a in s.remainders_to_acceptor]
        ):
            new_id = self._mint(piece, owner)
            pieces.append(
                {"asset_id": new_id, "owner": owner, "asset": piece,
                 "parent": parent, "role": role}
            )
        return _event(
            "OfferAccepted",
            offer_id=offer_id,
            asset_id=asset_id,
            acceptor=acceptor,
            poster=offer.poster,
            seller=seller,
            buyer=buyer,
            payment=s.payment_to_seller,
            refund=s.refund_to_buyer,
            pieces=pieces,
        )

    def deposit_energy_asset(self, auth: Authorization, asset_id: int) -> LedgerEvent:
        record = self._owned_unlocked(auth, asset_id)
        del self.assets[asset_id]
        return _event(
            "AssetDeposited", anon=record.owner, asset_id=asset_id, asset=record.asset
        )

    def deposit_financial(self, auth: Authorization, amount: int) -> LedgerEvent:
        check_u64(amount, "amount")
        balance = self.balances.get(auth.signer, 0)
        if balance < amount:
            raise ContractError("insufficient_funds", f"{amount} > {balance}")
        if amount:
            self.balances[auth.signer] = sub_u64(balance, amount)
        return _event("FinancialDeposited", anon=auth.signer, amount=amount)

    # --- queries ----------------------------------------------------------

    def owned_by(self, anon: AnonAddress) -> dict[int, AssetRecord]:
        return {i: r for i, r in self.assets.items() if r.owner == anon}

    def open_offers(self) -> list[Offer]:
        return [o for o in self.offers.values() if o.is_open]

    def total_fiat(self) -> int:
        """Balances plus escrow held in open bids."""
        return sum(self.balances.values()) + sum(o.escrow for o in self.open_offers())

    def custody_profile(self) -> dict[int, int]:
        """Signed power summed over all custodial assets, per timestep."""
        profile: dict[int, int] = defaultdict(int)
        for record in self.assets.values():
            a = record.asset
            for t in range(a.start, a.end + 1):
                profile[t] += a.power
        return {t: p for t, p in profile.items() if p}

    def to_dict(self) -> dict[str, Any]:
        return {
            "dso_address": self.dso_address,
            "assets": {str(i): r for i, r in sorted(self.assets.items())},
            "balances": {str(a): b for a, b in sorted(self.balances.items())},
            "offers": {str(i): o for i, o in sorted(self.offers.items())},
            "next_asset_id": self.next_asset_id,
            "next_offer_id": self.next_offer_id,
        }

    def state_hash(self) -> str:
        return hashlib.sha256(canonical(self).encode()).hexdigest()
