"""Scenario configuration, load profiles, the per-timestep loop and metrics."""

from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping

from .agent import Agent, AgentStrategy, NetLoadForecast
from .bus import Bus, BusMessage
from .contract import Contract
from .core_types import AddressGenerator, AnonAddress, ProsumerId, TimeConfig, TradingError
from .dso import DSO, SafetyPolicy
from .ledger import Block, Ledger, LedgerEvent, LedgerTransaction

log = logging.getLogger(__name__)

PROFILE_HEADER = ["timestep", "prosumer_id", "net_watts"]


class ConfigError(TradingError):
    pass


class ProfileError(TradingError):
    pass


# --- load profiles ----------------------------------------------------------


def _parse_int(text: str, what: str, lineno: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ProfileError(f"line {lineno}: {what} {text!r} is not an integer") from None


def load_profiles(path: str | Path, horizon: int | None = None) -> dict[int, NetLoadForecast]:
    """Read ``timestep,prosumer_id,net_watts`` rows into dense forecasts.

    Missing timesteps are zero. Without ``horizon`` the forecasts run up to
    the largest timestep present.
    """
    rows: dict[tuple[int, int], int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != PROFILE_HEADER:
            raise ProfileError(f"line 1: expected header {','.join(PROFILE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ProfileError(f"line {lineno}: expected 3 fields, got {len(row)}")
            t = _parse_int(row[0], "timestep", lineno)
            pid = _parse_int(row[1], "prosumer_id", lineno)
            watts = _parse_int(row[2], "net_watts", lineno)
            if t < 0 or pid < 0:
                raise ProfileError(f"line {lineno}: negative timestep or prosumer id")
            if horizon is not None and t >= horizon:
                raise ProfileError(f"line {lineno}: timestep {t} beyond horizon {horizon}")
            if (t, pid) in rows:
                raise ProfileError(f"line {lineno}: duplicate row for timestep {t}, prosumer {pid}")
            rows[(t, pid)] = watts
    if horizon is None:
        horizon = max((t for t, _ in rows), default=-1) + 1
    if horizon < 1:
        raise ProfileError(f"{path}: no data rows")
    dense: dict[int, list[int]] = {}
    for (t, pid), watts in rows.items():
        dense.setdefault(pid, [0] * horizon)[t] = watts
    return {pid: NetLoadForecast(tuple(w)) for pid, w in sorted(dense.items())}


# --- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    time: TimeConfig
    seed: int
    policy: SafetyPolicy
    forecasts: Mapping[int, NetLoadForecast]
    price_per_kwh: int
    strategies: Mapping[int, AgentStrategy] = field(default_factory=dict)
    initial_fiat: Mapping[int, int] = field(default_factory=dict)
    default_strategy: AgentStrategy = AgentStrategy()
    default_initial_fiat: int = 10**9
    # extra blocks after the horizon so late trades can settle
    drain_steps: int = 8

    def __post_init__(self) -> None:
        if not self.forecasts:
            raise ConfigError("scenario has no prosumers")
        for pid, forecast in self.forecasts.items():
            if len(forecast) != self.time.horizon:
                raise ConfigError(
                    f"forecast for prosumer {pid} has {len(forecast)} steps, horizon is {self.time.horizon}"
                )
        unknown = (set(self.strategies) | set(self.initial_fiat)) - set(self.forecasts)
        if unknown:
            raise ConfigError(f"settings for prosumers without a profile: {sorted(unknown)}")
        if self.price_per_kwh < 0:
            raise ConfigError("price_per_kwh must be >= 0")
        if self.drain_steps < 0:
            raise ConfigError("drain_steps must be >= 0")

    def strategy_for(self, pid: int) -> AgentStrategy:
        return self.strategies.get(pid, self.default_strategy)

    def fiat_for(self, pid: int) -> int:
        return self.initial_fiat.get(pid, self.default_initial_fiat)


_STRATEGY_KEYS = {"ask_price", "bid_price", "chunking", "lead_time", "patience"}


def parse_config_text(text: str, base_dir: Path = Path(".")) -> ScenarioConfig:
    """Parse the flat ``key = value`` scenario format.

    Recognised keys: ``seed``, ``horizon``, ``interval_seconds``,
    ``price_per_kwh``, ``profiles`` (CSV path, relative to ``base_dir``),
    ``drain_steps``, ``policy.<field>``, ``agent.<id|default>.<field>`` and
    ``account.<id|default>.initial_fiat``.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = key.strip(), value.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value

    def take_int(key: str, default: int | None = None) -> int:
        if key not in values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        try:
            return int(values.pop(key))
        except ValueError:
            raise ConfigError(f"{key} must be an integer") from None

    try:
        time = TimeConfig(take_int("interval_seconds", 4), take_int("horizon"))
        seed = take_int("seed")
        price = take_int("price_per_kwh")
        drain = take_int("drain_steps", 8)
        if "profiles" not in values:
            raise ConfigError("missing required key 'profiles'")
        profile_path = base_dir / values.pop("profiles")
        forecasts = load_profiles(profile_path, time.horizon)
        policy = SafetyPolicy(
            max_withdraw_power=take_int("policy.max_withdraw_power"),
            max_outstanding_fiat=take_int("policy.max_outstanding_fiat"),
            horizon_limit=take_int("policy.horizon_limit", time.horizon - 1),
        )
        default_fiat = take_int("account.default.initial_fiat", 10**9)
        initial_fiat: dict[int, int] = {}
        strategy_fields: dict[str, dict[str, int]] = {}
        for key in sorted(values):
            parts = key.split(".")
            if len(parts) == 3 and parts[0] == "account" and parts[2] == "initial_fiat":
                initial_fiat[_prosumer_key(parts[1], key)] = take_int(key)
            elif len(parts) == 3 and parts[0] == "agent" and parts[2] in _STRATEGY_KEYS:
                if parts[1] != "default":
                    _prosumer_key(parts[1], key)
                strategy_fields.setdefault(parts[1], {})[parts[2]] = take_int(key)
        if values:
            raise ConfigError(f"unknown keys: {', '.join(sorted(values))}")
        default_strategy = AgentStrategy(**strategy_fields.pop("default", {}))
        strategies = {
            int(pid): replace(default_strategy, **fields)
            for pid, fields in strategy_fields.items()
        }
        return ScenarioConfig(
            time=time,
            seed=seed,
            policy=policy,
            forecasts=forecasts,
            price_per_kwh=price,
            strategies=strategies,
            initial_fiat=initial_fiat,
            default_strategy=default_strategy,
            default_initial_fiat=default_fiat,
            drain_steps=drain,
        )
    except (ValueError, TypeError, OSError, ProfileError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _prosumer_key(text: str, key: str) -> int:
    if not text.isdigit():
        raise ConfigError(f"{key}: {text!r} is not a prosumer id")
    return int(text)


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), path.parent)


# --- metrics ----------------------------------------------------------------


@dataclass
class ProsumerTotals:
    initial_fiat: int = 0
    final_fiat: int = 0
    sales: int = 0
    purchases: int = 0
    energy_sold: int = 0
    energy_bought: int = 0

    @property
    def fiat_delta(self) -> int:
        return self.final_fiat - self.initial_fiat

    def to_dict(self) -> dict[str, int]:
        return {
            "initial_fiat": self.initial_fiat,
            "final_fiat": self.final_fiat,
            "fiat_delta": self.fiat_delta,
            "sales": self.sales,
            "purchases": self.purchases,
            "energy_sold": self.energy_sold,
            "energy_bought": self.energy_bought,
        }


@dataclass
class MetricsReport:
    local_trade_count: int
    locally_matched_energy: int
    total_demand: int
    residual_energy_from_dso: int
    prosumers: dict[str, ProsumerTotals]
    unit_price: int
    final_state_hash: str
    blocks: int
    failed_transactions: int
    failed_withdrawals: int

    @property
    def market_efficiency(self) -> float:
        denominator = self.locally_matched_energy + self.residual_energy_from_dso
        if denominator == 0:
            return 0.0
        return self.locally_matched_energy / denominator

    def to_dict(self) -> dict[str, Any]:
        return {
            "local_trade_count": self.local_trade_count,
            "locally_matched_energy": self.locally_matched_energy,
            "total_demand": self.total_demand,
            "residual_energy_from_dso": self.residual_energy_from_dso,
            "market_efficiency": self.market_efficiency,
            "prosumers": {k: v.to_dict() for k, v in sorted(self.prosumers.items())},
            "unit_price": self.unit_price,
            "final_state_hash": self.final_state_hash,
            "blocks": self.blocks,
            "failed_transactions": self.failed_transactions,
            "failed_withdrawals": self.failed_withdrawals,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def trade_totals(
    events: list[LedgerEvent], owner_of: Mapping[AnonAddress, ProsumerId]
) -> tuple[int, int, dict[ProsumerId, ProsumerTotals]]:
    """Trade count, matched energy and per-prosumer sales/purchases."""
    count = matched = 0
    totals: dict[ProsumerId, ProsumerTotals] = {}
    for ev in events:
        if ev.kind != "OfferAccepted":
            continue
        count += 1
        piece = ev["pieces"][0]
        energy = abs(piece["asset"]["power"]) * (piece["asset"]["end"] - piece["asset"]["start"] + 1)
        matched += energy
        seller = owner_of[AnonAddress.parse(ev["seller"])]
        buyer = owner_of[AnonAddress.parse(ev["buyer"])]
        totals.setdefault(seller, ProsumerTotals()).sales += ev["payment"]
        totals[seller].energy_sold += energy
        totals.setdefault(buyer, ProsumerTotals()).purchases += ev["payment"]
        totals[buyer].energy_bought += energy
    return count, matched, totals


# --- simulation -------------------------------------------------------------


@dataclass
class RunResult:
    report: MetricsReport
    ledger: Ledger
    dso: DSO
    agents: dict[int, Agent]

    @property
    def contract(self) -> Contract:
        return self.ledger.contract

    @property
    def ledger_dump(self) -> str:
        return self.ledger.dump()

    def address_book(self) -> dict[str, list[str]]:
        return {
            account.prosumer.token: sorted(str(a) for a in account.address_book)
            for account in sorted(self.dso.accounts.values(), key=lambda a: a.prosumer)
        }

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "report": out / "report.json",
            "ledger": out / "ledger.txt",
            "address_book": out / "address_book.json",
        }
        paths["report"].write_text(self.report.to_json())
        paths["ledger"].write_text(self.ledger_dump)
        paths["address_book"].write_text(json.dumps(self.address_book(), indent=2, sort_keys=True) + "\n")
        return paths


BlockHook = Callable[["Simulation", Block], None]


class Simulation:
    """Wires ledger, contract, bus, DSO and agents for one scenario.

    Each timestep: deliver bus messages, hand the previous block's events to
    the agents (the DSO books them as soon as the block is mined), step the DSO, step every agent in a seeded
    shuffled order, then mine exactly one block.
    """

    max_sweep_rounds = 4

    def __init__(self, config: ScenarioConfig, on_block: BlockHook | None = None):
        self.config = config
        self.on_block = on_block
        self.contract = Contract()
        self.ledger = Ledger(self.contract)
        self.bus = Bus()
        self.dso = DSO(self.ledger, self.bus, config.policy, config.time)
        self.addresses = AddressGenerator(config.seed)
        self._order_rng = random.Random(config.seed)
        self.agents: dict[int, Agent] = {}
        for pid in sorted(config.forecasts):
            prosumer = ProsumerId(pid)
            self.dso.open_account(prosumer, config.fiat_for(pid))
            self.agents[pid] = Agent(
                prosumer, config.forecasts[pid], config.strategy_for(pid), self.addresses
            )
        self.unit_price = self.dso.set_price(config.price_per_kwh)
        self._seen = 0
        self.now = 0

    def _deliver(self) -> list[LedgerEvent]:
        events = self.ledger.events_since(self._seen)
        self._seen = self.ledger.tip
        return events

    def _execute(self, actions: list[BusMessage | LedgerTransaction]) -> None:
        for action in actions:
            if isinstance(action, BusMessage):
                self.bus.send(action)
            else:
                result = self.ledger.submit(action)
                if not result:
                    log.warning("ledger refused tx from %s: %s", action.signer, result.reason)

    def _mine(self) -> Block:
        block = self.ledger.mine_block()
        # the DSO books its own outcomes and deposits at block time, so
        # account fiat and on-chain fiat never count the same money twice
        self.dso.reconcile(block)
        self.dso.observe(block.events)
        if self.on_block is not None:
            self.on_block(self, block)
        return block

    def _agent_order(self) -> list[Agent]:
        order = sorted(self.agents)
        self._order_rng.shuffle(order)
        return [self.agents[pid] for pid in order]

    def step(self) -> Block:
        self.bus.tick()
        events = self._deliver()
        self.dso.step(self.now)
        for agent in self._agent_order():
            self._execute(agent.step(self.now, events, self.bus.poll(agent.endpoint)))
        block = self._mine()
        self.now += 1
        return block

    def sweep(self) -> None:
        for _ in range(self.max_sweep_rounds):
            self.bus.tick()
            events = self._deliver()
            actions = []
            for agent in self._agent_order():
                self.bus.poll(agent.endpoint)
                actions.extend(agent.sweep(events, self.now))
            if not actions:
                return
            self._execute(actions)
            self._mine()
            self.now += 1
        log.warning("deposit sweep did not settle after %d rounds", self.max_sweep_rounds)

    def total_fiat(self) -> int:
        return self.dso.total_account_fiat() + self.dso.in_flight_fiat() + self.contract.total_fiat()

    def run(self) -> RunResult:
        for _ in range(self.config.time.horizon + self.config.drain_steps):
            self.step()
        self.sweep()
        return RunResult(self.report(), self.ledger, self.dso, self.agents)

    def report(self) -> MetricsReport:
        all_events = self.ledger.events_since(0)
        count, matched, totals = trade_totals(all_events, self.dso.owner_of)
        demand = sum(f.deficit_energy for f in self.config.forecasts.values())
        if demand == 0:
            log.warning("scenario has no energy demand; reporting market efficiency 0.0")
        prosumers = {}
        for pid in sorted(self.config.forecasts):
            prosumer = ProsumerId(pid)
            t = totals.get(prosumer, ProsumerTotals())
            t.initial_fiat = self.config.fiat_for(pid)
            t.final_fiat = self.dso.accounts[prosumer].fiat
            prosumers[prosumer.token] = t
        return MetricsReport(
            local_trade_count=count,
            locally_matched_energy=matched,
            total_demand=demand,
            residual_energy_from_dso=demand - matched,
            prosumers=prosumers,
            unit_price=self.unit_price,
            final_state_hash=self.contract.state_hash(),
            blocks=len(self.ledger.blocks),
            failed_transactions=sum(
                r is not None for b in self.ledger.blocks for r in b.results
            ),
            failed_withdrawals=sum(len(a.failed_withdrawals) for a in self.agents.values()),
        )


def run(config: ScenarioConfig, on_block: BlockHook | None = None) -> RunResult:
    return Simulation(config, on_block).run()


# --- canned scenarios ---------------------------------------------------------


def mirror_scenario(
    power: int = 300, length: int = 10, price_per_kwh: int = 900_000, seed: int = 1
) -> ScenarioConfig:
    """One producer and one consumer with exactly opposite profiles."""
    time = TimeConfig(interval_seconds=4, horizon=length)
    return ScenarioConfig(
        time=time,
        seed=seed,
        policy=SafetyPolicy(max_withdraw_power=10 * power, max_outstanding_fiat=10**12, horizon_limit=length - 1),
        forecasts={
            0: NetLoadForecast((power,) * length),
            1: NetLoadForecast((-power,) * length),
        },
        price_per_kwh=price_per_kwh,
        default_strategy=AgentStrategy(chunking=length),
    )


def random_scenario(
    seed: int, max_prosumers: int = 10, max_horizon: int = 200
) -> ScenarioConfig:
    """A reproducible random market, sized up to the given bounds."""
    rng = random.Random(seed)
    horizon = rng.randint(8, max_horizon)
    n = rng.randint(2, max_prosumers)
    forecasts = {}
    for pid in range(n):
        watts: list[int] = []
        while len(watts) < horizon:
            level = rng.choice([0, 0] + [rng.randrange(-900, 901, 50)] * 3)
            watts.extend([level] * rng.randint(1, 12))
        forecasts[pid] = NetLoadForecast(tuple(watts[:horizon]))
    unit_scale = rng.randint(1, 5)
    strategies = {
        pid: AgentStrategy(
            ask_price=rng.choice([None, unit_scale - 1, unit_scale + 1]),
            bid_price=rng.choice([None, unit_scale + 1, unit_scale - 1]),
            chunking=rng.randint(2, 24),
            lead_time=rng.randint(0, 8),
            patience=rng.randint(0, 3),
        )
        for pid in range(n)
        if rng.random() < 0.7
    }
    initial_fiat = {pid: rng.choice([0, 10_000, 10**6, 10**9]) for pid in range(n) if rng.random() < 0.5}
    return ScenarioConfig(
        time=TimeConfig(interval_seconds=4, horizon=horizon),
        seed=seed,
        policy=SafetyPolicy(
            max_withdraw_power=rng.choice([400, 700, 1000, 2000]),
            max_outstanding_fiat=rng.choice([10**5, 10**7, 10**12]),
            horizon_limit=rng.randint(max(1, horizon // 2), horizon - 1) if horizon > 1 else 1,
        ),
        forecasts=forecasts,
        price_per_kwh=unit_scale * 900_000,
        strategies=strategies,
        initial_fiat=initial_fiat,
        drain_steps=rng.randint(4, 10),
    )
