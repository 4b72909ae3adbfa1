"""Randomised adversarial transaction streams against a live contract."""

from __future__ import annotations

import random

from energy_trading.contract import Contract
from energy_trading.core_types import DSO_ADDRESS, AnonAddress, Authorization, EnergyAsset
from energy_trading.ledger import (
    AcceptOffer,
    AddEnergyAsset,
    AddFinancialBalance,
    DepositEnergyAsset,
    DepositFinancial,
    Ledger,
    LedgerTransaction,
    PostOffer,
    RescindOffer,
)

USERS = [AnonAddress(0x1000 + i) for i in range(6)]


class AdversarialStream:
    """Draws transactions that mix honest calls with deliberate violations:
    double posts, foreign rescinds, deposits of locked assets, unauthorized
    adds, overdrafts, and replayed nonces."""

    def __init__(self, seed: int, ledger: Ledger):
        self.rng = random.Random(seed)
        self.ledger = ledger
        self.contract: Contract = ledger.contract

    def _signer(self, owner: AnonAddress | None = None) -> AnonAddress:
        if owner is not None and self.rng.random() < 0.75:
            return owner
        return self.rng.choice(USERS + [DSO_ADDRESS])

    def _asset(self) -> EnergyAsset:
        start = self.rng.randint(0, 40)
        power = self.rng.choice([-1, 1]) * self.rng.randint(1, 600)
        return EnergyAsset(power, start, start + self.rng.randint(0, 15))

    def _any_asset_id(self) -> tuple[int, AnonAddress | None]:
        if self.contract.assets and self.rng.random() < 0.9:
            asset_id = self.rng.choice(sorted(self.contract.assets))
            return asset_id, self.contract.assets[asset_id].owner
        return self.rng.randint(0, self.contract.next_asset_id + 3), None

    def _any_offer(self):
        offers = sorted(self.contract.offers)
        if offers and self.rng.random() < 0.9:
            open_ones = [o for o in offers if self.contract.offers[o].is_open]
            pool = open_ones if open_ones and self.rng.random() < 0.8 else offers
            offer_id = self.rng.choice(pool)
            return offer_id, self.contract.offers[offer_id].poster
        return self.rng.randint(0, 50), None

    def draw_call(self):
        r = self.rng.random()
        if r < 0.15:
            signer = DSO_ADDRESS if self.rng.random() < 0.85 else self.rng.choice(USERS)
            return signer, AddEnergyAsset(self.rng.choice(USERS), self._asset())
        if r < 0.25:
            signer = DSO_ADDRESS if self.rng.random() < 0.85 else self.rng.choice(USERS)
            amount = self.rng.choice([0, 1, 1000, 50_000, 2**64 - 1])
            return signer, AddFinancialBalance(self.rng.choice(USERS), amount)
        if r < 0.45:
            asset_id, owner = self._any_asset_id()
            return self._signer(owner), PostOffer(asset_id, self.rng.randint(0, 5))
        if r < 0.55:
            offer_id, poster = self._any_offer()
            return self._signer(poster), RescindOffer(offer_id)
        if r < 0.8:
            offer_id, _ = self._any_offer()
            asset_id, owner = self._any_asset_id()
            return self._signer(owner), AcceptOffer(offer_id, asset_id)
        if r < 0.92:
            asset_id, owner = self._any_asset_id()
            return self._signer(owner), DepositEnergyAsset(asset_id)
        signer = self._signer(self.rng.choice(USERS))
        balance = self.contract.balances.get(signer, 0)
        return signer, DepositFinancial(self.rng.choice([0, balance, balance + 1, balance // 2]))

    def draw(self) -> LedgerTransaction:
        signer, call = self.draw_call()
        nonce = self.ledger.next_nonce(signer)
        if nonce and self.rng.random() < 0.1:
            nonce = self.rng.randint(0, nonce - 1)  # replayed / stale
        return LedgerTransaction(Authorization(signer), call, nonce)
