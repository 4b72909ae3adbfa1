import pytest
from hypothesis import given, strategies as st

from energy_trading.agent import Agent, AgentStrategy, Holding, NetLoadForecast, plan_assets
from energy_trading.bus import WITHDRAW_ASSETS, BusMessage
from energy_trading.core_types import AddressGenerator, AnonAddress, EnergyAsset, ProsumerId, TimeConfig
from energy_trading.dso import SafetyPolicy
from energy_trading.ledger import AcceptOffer, LedgerEvent, LedgerTransaction, PostOffer
from energy_trading.sim import ScenarioConfig, Simulation, mirror_scenario, random_scenario, run

from oracles import profile, run_lengths


@pytest.mark.parametrize(
    "watts,chunking,expected",
    [
        ([500, 500, 500, -200, -200], 24, [(500, 0, 2), (-200, 3, 4)]),
        ([0] * 6, 24, []),
        ([100] * 10, 4, [(100, 0, 3), (100, 4, 7), (100, 8, 9)]),
        ([0, 7, 0, 7, 7], 24, [(7, 1, 1), (7, 3, 4)]),
    ],
)
def test_plan_assets(watts, chunking, expected):
    assert run_lengths(watts, chunking) == expected
    assert plan_assets(watts, chunking) == [EnergyAsset(*e) for e in expected]


@given(st.lists(st.sampled_from([-300, -50, 0, 0, 120, 400]), min_size=1, max_size=80), st.integers(1, 12))
def test_plan_assets_reproduces_forecast(watts, chunking):
    planned = plan_assets(watts, chunking)
    assert [(a.power, a.start, a.end) for a in planned] == run_lengths(watts, chunking)
    assert profile(planned) == {t: w for t, w in enumerate(watts) if w}
    assert all(a.length <= chunking for a in planned)


def test_strategy_validation():
    with pytest.raises(ValueError):
        AgentStrategy(chunking=0)
    with pytest.raises(ValueError):
        AgentStrategy(ask_price=-1)


def one_prosumer(watts, **strategy):
    horizon = len(watts)
    return ScenarioConfig(
        time=TimeConfig(4, horizon),
        seed=5,
        policy=SafetyPolicy(10_000, 10**12, horizon - 1),
        forecasts={0: NetLoadForecast(tuple(watts))},
        price_per_kwh=900_000,
        default_strategy=AgentStrategy(**strategy),
    )


def kinds(result):
    return [e.kind for e in result.ledger.events_since(0)]


def test_surplus_agent_alone():
    watts = [500] * 3 + [0] + [200] * 4
    result = run(one_prosumer(watts))
    agent = result.agents[0]
    assert len(agent.planned) == 2
    assert len(agent.address_book) == 2  # one withdrawal per planned asset
    k = kinds(result)
    assert k.count("AssetAdded") == 2
    assert k.count("OfferPosted") == 2
    assert "OfferAccepted" not in k
    assert result.report.local_trade_count == 0


def test_mirror_pair_trades_once():
    result = run(mirror_scenario(power=300, length=10))
    k = kinds(result)
    assert k.count("OfferAccepted") == 1
    assert k.count("AssetDeposited") == 2
    [accepted] = [e for e in result.ledger.events_since(0) if e.kind == "OfferAccepted"]
    assert [p["role"] for p in accepted["pieces"]] == ["matched", "matched"]
    assert result.report.locally_matched_energy == min(300 * 10, 300 * 10)


def test_overpriced_ask_never_accepted():
    cfg = mirror_scenario()
    cfg = ScenarioConfig(
        **{**cfg.__dict__, "strategies": {0: AgentStrategy(ask_price=5, chunking=10),
                                          1: AgentStrategy(bid_price=3, chunking=10, patience=100)}}
    )
    result = run(cfg)
    txs = [tx for b in result.ledger.blocks for tx in b.txs]
    assert not any(isinstance(tx.call, AcceptOffer) for tx in txs)
    assert result.report.local_trade_count == 0


def test_no_self_trading():
    gen = AddressGenerator(9)
    agent = Agent(ProsumerId(0), NetLoadForecast((100, 100, -100, -100)),
                  AgentStrategy(ask_price=1, bid_price=1, lead_time=10), gen)
    agent.market_price = 1
    out = agent.step(0, [])
    assert [m.kind for m in out if isinstance(m, BusMessage)] == [WITHDRAW_ASSETS] * 2
    prod_addr, cons_addr = agent.address_book
    events = [
        LedgerEvent("AssetAdded", {"anon": str(prod_addr), "asset_id": 0,
                                   "asset": {"power": 100, "start": 0, "end": 3}}),
        LedgerEvent("OfferPosted", {"offer_id": 0, "asset_id": 9, "price": 1, "kind": "bid",
                                    "poster": str(cons_addr), "escrow": 0,
                                    "asset": {"power": -100, "start": 0, "end": 3}}),
    ]
    # the bid comes from the agent's own address: it must post, not accept
    agent.holdings[9] = Holding(9, cons_addr, EnergyAsset(-100, 0, 3), True, 0)
    out = agent.step(1, events)
    calls = [a.call for a in out if isinstance(a, LedgerTransaction)]
    assert not any(isinstance(c, AcceptOffer) for c in calls)
    assert PostOffer(0, 1) in calls


def test_agents_sign_only_with_their_own_addresses():
    sim = Simulation(random_scenario(21, max_prosumers=6, max_horizon=60))
    seen_by: dict[AnonAddress, int] = {}
    for pid, agent in sim.agents.items():
        original = agent.step

        def checked(now, events, inbox=(), _agent=agent, _orig=original, _pid=pid):
            actions = _orig(now, events, inbox)
            for a in actions:
                if isinstance(a, LedgerTransaction):
                    assert a.signer in _agent.address_book
                    assert seen_by.setdefault(a.signer, _pid) == _pid
            return actions

        agent.step = checked
    sim.run()
    assert seen_by


def test_agent_behaviour_is_deterministic():
    a = run(random_scenario(4, max_prosumers=5, max_horizon=50))
    b = run(random_scenario(4, max_prosumers=5, max_horizon=50))
    assert a.ledger_dump == b.ledger_dump
    assert {p: ag.address_book for p, ag in a.agents.items()} == {
        p: ag.address_book for p, ag in b.agents.items()
    }


def test_same_block_posts_do_not_deadlock():
    # after the first trade the producer's remainder and the second buyer's
    # bid land in the same block; the younger poster must yield
    config = ScenarioConfig(
        time=TimeConfig(4, 6),
        seed=7,
        policy=SafetyPolicy(1000, 10**9, 5),
        forecasts={0: NetLoadForecast((300,) * 6), 1: NetLoadForecast((-200,) * 6),
                   2: NetLoadForecast((-100,) * 6)},
        price_per_kwh=900_000,
        default_strategy=AgentStrategy(chunking=6),
    )
    result = run(config)
    assert result.report.local_trade_count == 2
    assert result.report.market_efficiency == 1.0
    rescinds = [e for e in result.ledger.events_since(0) if e.kind == "OfferRescinded"]
    assert len(rescinds) == 1
