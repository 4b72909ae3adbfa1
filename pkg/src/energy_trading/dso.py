"""Off-chain distribution system operator.

The DSO owns prosumer accounts, gates withdrawals with a per-timestep safety
policy, and is the only party that knows which anonymous address belongs to
which prosumer. It never takes part in posting, accepting or rescinding.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .bus import FAILED_WITHDRAWAL, PRICE_ANNOUNCEMENT, WITHDRAW_ASSETS, Bus, BusMessage
from .core_types import (
    DSO_ADDRESS,
    AnonAddress,
    Authorization,
    EnergyAsset,
    ProsumerId,
    TimeConfig,
    TradingError,
    add_u64,
    check_u64,
)
from .ledger import (
    AddEnergyAsset,
    AddFinancialBalance,
    Block,
    Ledger,
    LedgerEvent,
    LedgerTransaction,
)

log = logging.getLogger(__name__)

DSO_ENDPOINT = "dso"
WATT_SECONDS_PER_KWH = 3_600_000


class UnknownAddress(TradingError):
    """A deposit came from an address no prosumer was ever issued."""


@dataclass(frozen=True)
class SafetyPolicy:
    max_withdraw_power: int
    max_outstanding_fiat: int
    horizon_limit: int

    def __post_init__(self) -> None:
        for name in ("max_withdraw_power", "max_outstanding_fiat", "horizon_limit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"SafetyPolicy.{name} must be positive")


@dataclass
class ProsumerAccount:
    prosumer: ProsumerId
    fiat: int = 0
    # watts withdrawn and still on-chain, per timestep, by direction
    outstanding_production: dict[int, int] = field(default_factory=dict)
    outstanding_consumption: dict[int, int] = field(default_factory=dict)
    outstanding_fiat: int = 0
    address_book: set[AnonAddress] = field(default_factory=set)
    # signed power per timestep of energy bought or sold locally
    schedule: dict[int, int] = field(default_factory=dict)

    def counters_for(self, asset: EnergyAsset) -> dict[int, int]:
        return self.outstanding_production if asset.is_production else self.outstanding_consumption


class FailedWithdrawal(NamedTuple):
    anon: AnonAddress
    msg: str


def kwh_price_to_unit_price(price_per_kwh: int, time: TimeConfig) -> int:
    """Fiat per watt-interval from fiat per kWh, rounded half-up."""
    if price_per_kwh < 0:
        raise ValueError("price must be >= 0")
    numerator = 2 * price_per_kwh * time.interval_seconds + WATT_SECONDS_PER_KWH
    return check_u64(numerator // (2 * WATT_SECONDS_PER_KWH), "unit_price")


class DSO:
    def __init__(
        self,
        ledger: Ledger,
        bus: Bus,
        policy: SafetyPolicy,
        time: TimeConfig,
        address: AnonAddress = DSO_ADDRESS,
    ):
        self.ledger = ledger
        self.bus = bus
        self.policy = policy
        self.time = time
        self.address = address
        self.accounts: dict[ProsumerId, ProsumerAccount] = {}
        self.owner_of: dict[AnonAddress, ProsumerId] = {}
        # on-chain asset id -> prosumer who withdrew it, None once traded away
        self.lineage: dict[int, ProsumerId | None] = {}
        self.unit_price: int | None = None
        self._in_flight: dict[int, tuple[ProsumerId, AddEnergyAsset | AddFinancialBalance]] = {}
        bus.register(DSO_ENDPOINT)

    def open_account(self, prosumer: ProsumerId, fiat: int = 0) -> ProsumerAccount:
        if prosumer in self.accounts:
            raise ValueError(f"{prosumer} already has an account")
        account = ProsumerAccount(prosumer, fiat=check_u64(fiat, "fiat"))
        self.accounts[prosumer] = account
        self.bus.register(prosumer.token)
        return account

    def set_price(self, price_per_kwh: int) -> int:
        self.unit_price = kwh_price_to_unit_price(price_per_kwh, self.time)
        for prosumer in self.accounts:
            self.bus.send(
                BusMessage(
                    PRICE_ANNOUNCEMENT, DSO_ENDPOINT, prosumer.token,
                    {"unit_price": self.unit_price},
                )
            )
        return self.unit_price

    # --- withdrawals ------------------------------------------------------

    def check_withdraw(
        self, prosumer: ProsumerId, anon: AnonAddress, energy: list[EnergyAsset], fiat: int
    ) -> str | None:
        account = self.accounts[prosumer]
        owner = self.owner_of.get(anon)
        if anon == self.address or (owner is not None and owner != prosumer):
            return "address already issued to someone else"
        if fiat > account.fiat:
            return f"insufficient funds: {fiat} requested, {account.fiat} available"
        if account.outstanding_fiat + fiat > self.policy.max_outstanding_fiat:
            return "outstanding fiat limit exceeded"
        requested: dict[tuple[bool, int], int] = defaultdict(int)
        for asset in energy:
            if asset.end > self.policy.horizon_limit:
                return f"asset ends at {asset.end}, beyond horizon limit {self.policy.horizon_limit}"
            counters = account.counters_for(asset)
            for t in range(asset.start, asset.end + 1):
                key = (asset.is_production, t)
                requested[key] += abs(asset.power)
                if counters.get(t, 0) + requested[key] > self.policy.max_withdraw_power:
                    return f"power limit exceeded at timestep {t}"
        return None

    def handle_withdraw(
        self, prosumer: ProsumerId, anon: AnonAddress, energy: list[EnergyAsset], fiat: int
    ) -> FailedWithdrawal | None:
        reason = self.check_withdraw(prosumer, anon, energy, fiat)
        if reason is not None:
            log.info("withdrawal to %s refused: %s", anon, reason)
            return FailedWithdrawal(anon, reason)
        account = self.accounts[prosumer]
        account.address_book.add(anon)
        self.owner_of[anon] = prosumer
        for asset in energy:
            self._reserve(account, asset, +1)
            self._submit(prosumer, AddEnergyAsset(anon, asset))
        if fiat:
            account.fiat -= fiat
            account.outstanding_fiat += fiat
            self._submit(prosumer, AddFinancialBalance(anon, fiat))
        return None

    def _reserve(self, account: ProsumerAccount, asset: EnergyAsset, sign: int) -> None:
        counters = account.counters_for(asset)
        for t in range(asset.start, asset.end + 1):
            left = counters.get(t, 0) + sign * abs(asset.power)
            if left < 0:
                raise AssertionError(f"withdrawal counter for {account.prosumer} went negative")
            if left:
                counters[t] = left
            else:
                counters.pop(t, None)

    def _submit(self, prosumer: ProsumerId, call: AddEnergyAsset | AddFinancialBalance) -> None:
        nonce = self.ledger.next_nonce(self.address)
        result = self.ledger.submit(LedgerTransaction(Authorization(self.address), call, nonce))
        if not result:
            raise AssertionError(f"ledger refused a DSO transaction: {result.reason}")
        self._in_flight[nonce] = (prosumer, call)

    def in_flight_fiat(self) -> int:
        return sum(
            c.amount for _, c in self._in_flight.values() if isinstance(c, AddFinancialBalance)
        )

    def reconcile(self, block: Block) -> None:
        """Settle the DSO's own transactions once mined; undo any that failed."""
        for tx, result in zip(block.txs, block.results):
            if tx.signer != self.address or tx.nonce not in self._in_flight:
                continue
            prosumer, call = self._in_flight.pop(tx.nonce)
            if result is None:
                continue
            log.warning("DSO transaction %s failed: %s", type(call).__name__, result)
            account = self.accounts[prosumer]
            if isinstance(call, AddFinancialBalance):
                account.fiat += call.amount
                account.outstanding_fiat -= call.amount
            else:
                self._reserve(account, call.asset, -1)

    # --- deposits ---------------------------------------------------------

    def prosumer_of(self, anon: AnonAddress) -> ProsumerId:
        try:
            return self.owner_of[anon]
        except KeyError:
            raise UnknownAddress(f"deposit from unissued address {anon}") from None

    def handle_deposit_event(self, event: LedgerEvent) -> None:
        prosumer = self.prosumer_of(AnonAddress.parse(event["anon"]))
        account = self.accounts[prosumer]
        if event.kind == "FinancialDeposited":
            account.fiat = add_u64(account.fiat, event["amount"])
            account.outstanding_fiat = max(0, account.outstanding_fiat - event["amount"])
            return
        if event.kind != "AssetDeposited":
            raise ValueError(f"not a deposit event: {event.kind}")
        asset = EnergyAsset.from_dict(event["asset"])
        origin = self.lineage.pop(event["asset_id"], None)
        if origin is not None:
            # unsold energy coming home frees its withdrawal allowance
            self._reserve(self.accounts[origin], asset, -1)
        else:
            for t in range(asset.start, asset.end + 1):
                account.schedule[t] = account.schedule.get(t, 0) + asset.power

    def observe(self, events: Iterable[LedgerEvent]) -> None:
        for ev in events:
            if ev.kind == "AssetAdded":
                self.lineage[ev["asset_id"]] = self.owner_of.get(AnonAddress.parse(ev["anon"]))
            elif ev.kind == "OfferAccepted":
                parents = {ev["asset_id"]}
                for piece in ev["pieces"]:
                    parents.add(piece["parent"])
                    if piece["role"] == "remainder":
                        self.lineage[piece["asset_id"]] = self.lineage.get(piece["parent"])
                for parent in parents:
                    self.lineage.pop(parent, None)
            elif ev.kind in ("AssetDeposited", "FinancialDeposited"):
                self.handle_deposit_event(ev)

    # --- bus --------------------------------------------------------------

    def step(self, now: int) -> None:
        for msg in self.bus.poll(DSO_ENDPOINT):
            if msg.kind != WITHDRAW_ASSETS:
                log.warning("DSO ignoring %s from %s", msg.kind, msg.sender)
                continue
            prosumer = ProsumerId.parse(msg.sender)
            anon = AnonAddress.parse(msg.payload["anon"])
            energy = [EnergyAsset.from_dict(a) for a in msg.payload["assets"]]
            failed = self.handle_withdraw(prosumer, anon, energy, msg.payload["fiat"])
            if failed is not None:
                self.bus.send(
                    BusMessage(
                        FAILED_WITHDRAWAL, DSO_ENDPOINT, msg.sender,
                        {"anon": str(failed.anon), "msg": failed.msg},
                    )
                )

    def total_account_fiat(self) -> int:
        return sum(a.fiat for a in self.accounts.values())
