"""Blockchain-style transactive energy trading: assets, contract, DSO, agents."""

from .core_types import (
    DSO_ADDRESS,
    AddressGenerator,
    AnonAddress,
    Authorization,
    EnergyAsset,
    ProsumerId,
    TimeConfig,
    TradingError,
    energy_of,
)
from .exchange import Settlement, intersect, settle, split
from .contract import Contract, ContractError
from .ledger import Ledger, LedgerEvent, LedgerTransaction
from .sim import ScenarioConfig, Simulation, run

__all__ = [
    "DSO_ADDRESS",
    "AddressGenerator",
    "AnonAddress",
    "Authorization",
    "Contract",
    "ContractError",
    "EnergyAsset",
    "Ledger",
    "LedgerEvent",
    "LedgerTransaction",
    "ProsumerId",
    "ScenarioConfig",
    "Settlement",
    "Simulation",
    "TimeConfig",
    "TradingError",
    "energy_of",
    "intersect",
    "run",
    "settle",
    "split",
]
