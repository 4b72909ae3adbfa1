"""Shared vocabulary: time discretization, assets, identities, signers.

Energy is counted in watt-intervals (1 W held for one timestep). Money is
an unsigned 64-bit count of fiat minor units. Every type here is an
immutable value with a canonical, sorted-key text form.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Any

U64_MAX = 2**64 - 1
ADDRESS_BITS = 160


class TradingError(Exception):
    """Base class for every error raised by this package."""


class ArithmeticOverflow(TradingError):
    pass


class AddressCollision(TradingError):
    pass


def check_u64(value: int, what: str = "value") -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise TypeError(f"{what} must be an int, got {type(value).__name__}")
    if value < 0 or value > U64_MAX:
        raise ArithmeticOverflow(f"{what}={value} outside the unsigned 64-bit range")
    return value


def add_u64(a: int, b: int) -> int:
    return check_u64(a + b, "sum")


def sub_u64(a: int, b: int) -> int:
    if b > a:
        raise ArithmeticOverflow(f"{a} - {b} would go negative")
    return a - b


def mul_u64(*factors: int) -> int:
    result = 1
    for f in factors:
        result *= f
    return check_u64(result, "product")


@dataclass(frozen=True)
class TimeConfig:
    interval_seconds: int = 4
    horizon: int = 96

    def __post_init__(self) -> None:
        if self.interval_seconds < 1:
            raise ValueError("interval_seconds must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def intervals_per_kwh_watt(self) -> float:
        """Watt-intervals in one kWh."""
        return 3_600_000 / self.interval_seconds

    def to_dict(self) -> dict[str, Any]:
        return {"interval_seconds": self.interval_seconds, "horizon": self.horizon}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TimeConfig:
        return cls(interval_seconds=d["interval_seconds"], horizon=d["horizon"])


@dataclass(frozen=True, order=True)
class EnergyAsset:
    """Constant signed power over the closed timestep range [start, end].

    Positive power is production, negative power is consumption.
    """

    power: int
    start: int
    end: int

    def __post_init__(self) -> None:
        for name in ("power", "start", "end"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise TypeError(f"EnergyAsset.{name} must be an int")
        if self.power == 0:
            raise ValueError("EnergyAsset.power must be non-zero")
        if self.start < 0:
            raise ValueError("EnergyAsset.start must be >= 0")
        if self.start > self.end:
            raise ValueError(f"EnergyAsset start {self.start} > end {self.end}")
        energy_of(self)

    @property
    def is_production(self) -> bool:
        return self.power > 0

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    @property
    def energy(self) -> int:
        return energy_of(self)

    def power_at(self, t: int) -> int:
        return self.power if self.start <= t <= self.end else 0

    def to_dict(self) -> dict[str, int]:
        return {"power": self.power, "start": self.start, "end": self.end}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EnergyAsset:
        return cls(power=d["power"], start=d["start"], end=d["end"])


def energy_of(asset: EnergyAsset) -> int:
    """Watt-intervals carried by ``asset``: ``|power| * (end - start + 1)``."""
    return mul_u64(abs(asset.power), asset.end - asset.start + 1)


@dataclass(frozen=True, order=True)
class AnonAddress:
    """Opaque 160-bit on-chain identity."""

    value: int

    def __post_init__(self) -> None:
        if not 0 <= self.value < 2**ADDRESS_BITS:
            raise ValueError("address must fit in 160 bits")

    def __str__(self) -> str:
        return f"0x{self.value:040x}"

    def to_dict(self) -> str:
        return str(self)

    @classmethod
    def parse(cls, text: str) -> AnonAddress:
        if not (isinstance(text, str) and text.startswith("0x") and len(text) == 42):
            raise ValueError(f"malformed address {text!r}")
        return cls(int(text[2:], 16))

    from_dict = parse


# Reserved signer for DSO-only calls; never handed out by AddressGenerator.
DSO_ADDRESS = AnonAddress(0)


@dataclass(frozen=True, order=True)
class ProsumerId:
    """Off-chain household identifier. Must never reach the ledger."""

    value: int

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("ProsumerId must be >= 0")

    @property
    def token(self) -> str:
        return f"prosumer-{self.value}"

    def __str__(self) -> str:
        return self.token

    def to_dict(self) -> str:
        return self.token

    @classmethod
    def parse(cls, text: str) -> ProsumerId:
        prefix, _, num = text.partition("-")
        if prefix != "prosumer" or not num.isdigit():
            raise ValueError(f"malformed prosumer token {text!r}")
        return cls(int(num))

    from_dict = parse


PROSUMER_TOKEN_PATTERN = r"prosumer-\d+"


@dataclass(frozen=True)
class Authorization:
    """Simulated signature: only the identity of the signer is checked."""

    signer: AnonAddress

    def to_dict(self) -> dict[str, str]:
        return {"signer": str(self.signer)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Authorization:
        return cls(AnonAddress.parse(d["signer"]))


class AddressGenerator:
    """Seeded source of fresh anonymous addresses for one run."""

    def __init__(self, seed: int, reserved: tuple[AnonAddress, ...] = (DSO_ADDRESS,)):
        self._rng = random.Random(seed)
        self._used: set[AnonAddress] = set(reserved)
        self.draws = 0

    def fresh_address(self) -> AnonAddress:
        addr = AnonAddress(self._rng.getrandbits(ADDRESS_BITS))
        self.draws += 1
        if addr in self._used:
            raise AddressCollision(f"address {addr} drawn twice")
        self._used.add(addr)
        return addr

    def __contains__(self, addr: AnonAddress) -> bool:
        return addr in self._used


def fresh_address(rng: AddressGenerator) -> AnonAddress:
    return rng.fresh_address()


def to_jsonable(obj: Any) -> Any:
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    raise TypeError(f"no canonical form for {type(obj).__name__}")


def canonical(obj: Any) -> str:
    """Deterministic single-line text form (sorted keys, no spaces)."""
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))
