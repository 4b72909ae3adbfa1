"""Prosumer trading agent.

An agent turns its net-load forecast into energy assets, withdraws each one
to a fresh anonymous address, then trades: it first looks for an open
counter-offer (oldest first) and accepts it, otherwise it posts its own
offer. Everything it knows about the chain comes from broadcast events.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .bus import FAILED_WITHDRAWAL, PRICE_ANNOUNCEMENT, WITHDRAW_ASSETS, BusMessage
from .core_types import (
    AddressGenerator,
    AnonAddress,
    Authorization,
    EnergyAsset,
    ProsumerId,
    energy_of,
)
from .dso import DSO_ENDPOINT
from .exchange import intersect
from .ledger import (
    AcceptOffer,
    Call,
    DepositEnergyAsset,
    DepositFinancial,
    LedgerEvent,
    LedgerTransaction,
    PostOffer,
    RescindOffer,
)

log = logging.getLogger(__name__)

Action = Union[BusMessage, LedgerTransaction]


@dataclass(frozen=True)
class NetLoadForecast:
    """Signed watts per timestep; positive means surplus production."""

    watts: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.watts:
            raise ValueError("forecast must cover at least one timestep")
        if any(not isinstance(w, int) for w in self.watts):
            raise TypeError("forecast values must be ints")

    def __len__(self) -> int:
        return len(self.watts)

    def __iter__(self):
        return iter(self.watts)

    @property
    def deficit_energy(self) -> int:
        return sum(-w for w in self.watts if w < 0)

    @property
    def surplus_energy(self) -> int:
        return sum(w for w in self.watts if w > 0)


@dataclass(frozen=True)
class AgentStrategy:
    """Trading knobs. A ``None`` price follows the DSO's announced price."""

    ask_price: int | None = None
    bid_price: int | None = None
    chunking: int = 24
    lead_time: int = 4
    # timesteps a buyer waits for asks before posting its own bid
    patience: int = 2

    def __post_init__(self) -> None:
        for price in (self.ask_price, self.bid_price):
            if price is not None and price < 0:
                raise ValueError("prices must be >= 0")
        if self.chunking < 1:
            raise ValueError("chunking must be >= 1")
        if self.lead_time < 0 or self.patience < 0:
            raise ValueError("lead_time and patience must be >= 0")


def plan_assets(forecast: Sequence[int] | NetLoadForecast, chunking: int = 24) -> list[EnergyAsset]:
    """Cut the forecast into constant-power runs of at most ``chunking`` steps."""
    if chunking < 1:
        raise ValueError("chunking must be >= 1")
    watts = list(forecast)
    assets = []
    t = 0
    while t < len(watts):
        power, start = watts[t], t
        while t < len(watts) and watts[t] == power and t - start < chunking:
            t += 1
        if power:
            assets.append(EnergyAsset(power, start, t - 1))
    return assets


@dataclass
class Holding:
    asset_id: int
    addr: AnonAddress
    asset: EnergyAsset
    own: bool  # withdrawn by this agent (or a remainder of such), not acquired by trade
    since: int
    offer_id: int | None = None


@dataclass(frozen=True)
class OfferView:
    offer_id: int
    asset_id: int
    asset: EnergyAsset
    price: int
    kind: str
    poster: AnonAddress


@dataclass
class _Planned:
    asset: EnergyAsset
    withdraw_at: int
    requested: bool = False


@dataclass
class Agent:
    prosumer: ProsumerId
    forecast: NetLoadForecast
    strategy: AgentStrategy
    addresses: AddressGenerator
    market_price: int | None = None
    address_book: list[AnonAddress] = field(default_factory=list)
    holdings: dict[int, Holding] = field(default_factory=dict)
    balances: dict[AnonAddress, int] = field(default_factory=dict)
    open_offers: dict[int, OfferView] = field(default_factory=dict)
    failed_withdrawals: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._planned = [
            _Planned(a, max(0, a.start - self.strategy.lead_time))
            for a in plan_assets(self.forecast, self.strategy.chunking)
        ]
        self._mine: set[AnonAddress] = set(self.address_book)
        self._my_offers: dict[int, int] = {}
        self._escrow: dict[int, int] = {}
        self._nonces: dict[AnonAddress, int] = {}
        self._pending_assets: set[int] = set()
        self._pending_addrs: set[AnonAddress] = set()

    @property
    def endpoint(self) -> str:
        return self.prosumer.token

    @property
    def ask_price(self) -> int | None:
        return self.strategy.ask_price if self.strategy.ask_price is not None else self.market_price

    @property
    def bid_price(self) -> int | None:
        return self.strategy.bid_price if self.strategy.bid_price is not None else self.market_price

    @property
    def planned(self) -> list[EnergyAsset]:
        return [p.asset for p in self._planned]

    # --- observation --------------------------------------------------------

    def _is_mine(self, text: str) -> AnonAddress | None:
        addr = AnonAddress.parse(text)
        return addr if addr in self._mine else None

    def _credit(self, addr: AnonAddress, amount: int) -> None:
        self.balances[addr] = self.balances.get(addr, 0) + amount

    def on_message(self, msg: BusMessage) -> None:
        if msg.kind == PRICE_ANNOUNCEMENT:
            self.market_price = msg.payload["unit_price"]
        elif msg.kind == FAILED_WITHDRAWAL:
            log.info("%s: withdrawal refused: %s", self.prosumer, msg.payload["msg"])
            self.failed_withdrawals.append(msg.payload["msg"])

    def on_event(self, ev: LedgerEvent, now: int) -> None:
        kind = ev.kind
        if kind == "AssetAdded":
            addr = self._is_mine(ev["anon"])
            if addr:
                asset = EnergyAsset.from_dict(ev["asset"])
                self.holdings[ev["asset_id"]] = Holding(ev["asset_id"], addr, asset, True, now)
        elif kind == "FinancialAdded":
            addr = self._is_mine(ev["anon"])
            if addr:
                self._credit(addr, ev["amount"])
        elif kind == "OfferPosted":
            poster = AnonAddress.parse(ev["poster"])
            self.open_offers[ev["offer_id"]] = OfferView(
                ev["offer_id"], ev["asset_id"], EnergyAsset.from_dict(ev["asset"]),
                ev["price"], ev["kind"], poster,
            )
            if poster in self._mine:
                self.holdings[ev["asset_id"]].offer_id = ev["offer_id"]
                self._my_offers[ev["offer_id"]] = ev["asset_id"]
                self._escrow[ev["offer_id"]] = ev["escrow"]
                self._credit(poster, -ev["escrow"])
        elif kind == "OfferRescinded":
            self.open_offers.pop(ev["offer_id"], None)
            asset_id = self._my_offers.pop(ev["offer_id"], None)
            if asset_id is not None:
                holding = self.holdings[asset_id]
                holding.offer_id = None
                self._credit(holding.addr, self._escrow.pop(ev["offer_id"]))
        elif kind == "OfferAccepted":
            self._on_accepted(ev, now)
        elif kind == "AssetDeposited":
            if self._is_mine(ev["anon"]):
                self.holdings.pop(ev["asset_id"], None)
        elif kind == "FinancialDeposited":
            addr = self._is_mine(ev["anon"])
            if addr:
                self._credit(addr, -ev["amount"])

    def _on_accepted(self, ev: LedgerEvent, now: int) -> None:
        self.open_offers.pop(ev["offer_id"], None)
        offered = self._my_offers.pop(ev["offer_id"], None)
        if offered is not None:
            self.holdings.pop(offered)
            self._escrow.pop(ev["offer_id"], None)
        acceptor = self._is_mine(ev["acceptor"])
        if acceptor:
            self.holdings.pop(ev["asset_id"])
            if ev["acceptor"] == ev["buyer"]:
                self._credit(acceptor, -(ev["payment"] + ev["refund"]))
        seller, buyer = self._is_mine(ev["seller"]), self._is_mine(ev["buyer"])
        if seller:
            self._credit(seller, ev["payment"])
        if buyer:
            self._credit(buyer, ev["refund"])
        for piece in ev["pieces"]:
            owner = self._is_mine(piece["owner"])
            if owner:
                self.holdings[piece["asset_id"]] = Holding(
                    piece["asset_id"], owner, EnergyAsset.from_dict(piece["asset"]),
                    piece["role"] == "remainder", now,
                )

    # --- acting -------------------------------------------------------------

    def _sign(self, addr: AnonAddress, call: Call) -> LedgerTransaction:
        if addr not in self._mine:
            raise AssertionError(f"{self.prosumer} asked to sign for a foreign address")
        nonce = self._nonces.get(addr, 0)
        self._nonces[addr] = nonce + 1
        self._pending_addrs.add(addr)
        return LedgerTransaction(Authorization(addr), call, nonce)

    def _withdraw(self, now: int) -> list[Action]:
        out: list[Action] = []
        for plan in self._planned:
            if plan.requested or now < plan.withdraw_at:
                continue
            fiat = 0
            if not plan.asset.is_production:
                if self.bid_price is None:
                    continue
                fiat = self.bid_price * energy_of(plan.asset)
            addr = self.addresses.fresh_address()
            self.address_book.append(addr)
            self._mine.add(addr)
            plan.requested = True
            out.append(
                BusMessage(
                    WITHDRAW_ASSETS, self.endpoint, DSO_ENDPOINT,
                    {"anon": str(addr), "assets": [plan.asset.to_dict()], "fiat": fiat},
                )
            )
        return out

    def _acceptable(self, holding: Holding, offer: OfferView) -> int | None:
        """Cost to the buyer if ``holding`` can take ``offer``, else None."""
        if offer.poster in self._mine:
            return None
        if offer.asset.is_production == holding.asset.is_production:
            return None
        overlap = intersect(offer.asset, holding.asset)
        if overlap is None:
            return None
        if offer.kind == "ask":
            if self.bid_price is None or offer.price > self.bid_price:
                return None
            return offer.price * overlap.energy
        if self.ask_price is None or offer.price < self.ask_price:
            return None
        return 0

    def _trade(self, now: int) -> list[Action]:
        out: list[Action] = []
        taken: set[int] = set()
        spent: dict[AnonAddress, int] = {}
        for h in sorted(self.holdings.values(), key=lambda h: h.asset_id):
            if not h.own or h.asset_id in self._pending_assets:
                continue
            available = self.balances.get(h.addr, 0) - spent.get(h.addr, 0)
            if h.offer_id is not None:
                out.extend(self._yield_to_older(h, available, taken, spent))
                continue
            for offer in self.open_offers.values():
                if offer.offer_id in taken:
                    continue
                cost = self._acceptable(h, offer)
                if cost is not None and cost <= available:
                    taken.add(offer.offer_id)
                    spent[h.addr] = spent.get(h.addr, 0) + cost
                    self._pending_assets.add(h.asset_id)
                    out.append(self._sign(h.addr, AcceptOffer(offer.offer_id, h.asset_id)))
                    break
            else:
                if h.asset.is_production:
                    price = self.ask_price
                    if price is None:
                        continue
                else:
                    price = self.bid_price
                    if (
                        price is None
                        or now - h.since < self.strategy.patience
                        or price * h.asset.energy > available
                    ):
                        continue
                    spent[h.addr] = spent.get(h.addr, 0) + price * h.asset.energy
                self._pending_assets.add(h.asset_id)
                out.append(self._sign(h.addr, PostOffer(h.asset_id, price)))
        return out

    def _yield_to_older(
        self, h: Holding, available: int, taken: set[int], spent: dict[AnonAddress, int]
    ) -> list[Action]:
        """Pull our offer and take an older compatible one instead.

        Two counterparties that post in the same block would otherwise sit
        locked forever. Only the younger offer's poster moves, so exactly one
        side acts and the older offer keeps its first-come priority.
        """
        refund = self._escrow.get(h.offer_id, 0)
        for offer in self.open_offers.values():  # ascending offer ids
            if offer.offer_id >= h.offer_id:
                break
            if offer.offer_id in taken:
                continue
            cost = self._acceptable(h, offer)
            if cost is not None and cost <= available + refund:
                taken.add(offer.offer_id)
                spent[h.addr] = spent.get(h.addr, 0) + cost - refund
                self._pending_assets.add(h.asset_id)
                return [
                    self._sign(h.addr, RescindOffer(h.offer_id)),
                    self._sign(h.addr, AcceptOffer(offer.offer_id, h.asset_id)),
                ]
        return []

    def _deposit(self) -> list[Action]:
        out: list[Action] = []
        for h in sorted(self.holdings.values(), key=lambda h: h.asset_id):
            if not h.own and h.asset_id not in self._pending_assets:
                self._pending_assets.add(h.asset_id)
                out.append(self._sign(h.addr, DepositEnergyAsset(h.asset_id)))
        busy = {h.addr for h in self.holdings.values() if h.own} | self._pending_addrs
        for addr in self.address_book:
            amount = self.balances.get(addr, 0)
            if amount > 0 and addr not in busy:
                out.append(self._sign(addr, DepositFinancial(amount)))
        return out

    def step(
        self, now: int, events: Iterable[LedgerEvent], inbox: Iterable[BusMessage] = ()
    ) -> list[Action]:
        for msg in inbox:
            self.on_message(msg)
        for ev in events:
            self.on_event(ev, now)
        # everything submitted last step has been mined by now
        self._pending_assets.clear()
        self._pending_addrs.clear()
        return self._withdraw(now) + self._trade(now) + self._deposit()

    def sweep(self, events: Iterable[LedgerEvent], now: int) -> list[Action]:
        """End of trading: rescind open offers and deposit everything held."""
        for ev in events:
            self.on_event(ev, now)
        self._pending_assets.clear()
        self._pending_addrs.clear()
        out: list[Action] = []
        refunds: dict[AnonAddress, int] = {}
        for offer_id, asset_id in sorted(self._my_offers.items()):
            addr = self.holdings[asset_id].addr
            refunds[addr] = refunds.get(addr, 0) + self._escrow[offer_id]
            out.append(self._sign(addr, RescindOffer(offer_id)))
        for h in sorted(self.holdings.values(), key=lambda h: h.asset_id):
            out.append(self._sign(h.addr, DepositEnergyAsset(h.asset_id)))
        for addr in self.address_book:
            amount = self.balances.get(addr, 0) + refunds.get(addr, 0)
            if amount > 0:
                out.append(self._sign(addr, DepositFinancial(amount)))
        return out
