import pytest

from energy_trading.agent import AgentStrategy, NetLoadForecast
from energy_trading.core_types import TimeConfig
from energy_trading.dso import SafetyPolicy
from energy_trading.sim import (
    ConfigError,
    ProfileError,
    ScenarioConfig,
    Simulation,
    load_config,
    load_profiles,
    mirror_scenario,
    parse_config_text,
    random_scenario,
    run,
)

from oracles import profile


def write_csv(tmp_path, body, name="profiles.csv"):
    path = tmp_path / name
    path.write_text("timestep,prosumer_id,net_watts\n" + body)
    return path


def test_full_profile(tmp_path):
    path = write_csv(tmp_path, "0,0,5\n1,0,6\n2,0,7\n0,1,-1\n1,1,-2\n2,1,-3\n")
    assert load_profiles(path) == {
        0: NetLoadForecast((5, 6, 7)),
        1: NetLoadForecast((-1, -2, -3)),
    }


def test_missing_timestep_zero_filled(tmp_path):
    path = write_csv(tmp_path, "0,0,5\n2,0,7\n")
    assert load_profiles(path, horizon=4) == {0: NetLoadForecast((5, 0, 7, 0))}


@pytest.mark.parametrize(
    "body,needle",
    [
        ("0,0,5\n1,0,6\n0,0,9\n", "line 4"),
        ("0,0,5.5\n", "net_watts"),
        ("0,0\n", "3 fields"),
        ("7,0,1\n", "beyond horizon"),
    ],
)
def test_bad_profile_rows(tmp_path, body, needle):
    with pytest.raises(ProfileError, match=needle):
        load_profiles(write_csv(tmp_path, body), horizon=4)


def test_bad_header(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("t,id,w\n0,0,1\n")
    with pytest.raises(ProfileError, match="header"):
        load_profiles(path)


CONFIG = """
# mirror pair
seed = 3
horizon = 4
interval_seconds = 4
price_per_kwh = 900000
profiles = profiles.csv
policy.max_withdraw_power = 1000
policy.max_outstanding_fiat = 1000000000
agent.default.chunking = 4
agent.1.bid_price = 7
account.0.initial_fiat = 50
"""


def mirror_files(tmp_path):
    rows = "".join(f"{t},0,300\n{t},1,-300\n" for t in range(4))
    write_csv(tmp_path, rows)
    cfg = tmp_path / "scenario.cfg"
    cfg.write_text(CONFIG)
    return cfg


def test_config_parsing(tmp_path):
    config = load_config(mirror_files(tmp_path))
    assert config.seed == 3
    assert config.time == TimeConfig(4, 4)
    assert config.policy == SafetyPolicy(1000, 10**9, 3)
    assert config.strategy_for(0) == AgentStrategy(chunking=4)
    assert config.strategy_for(1) == AgentStrategy(bid_price=7, chunking=4)
    assert config.fiat_for(0) == 50 and config.fiat_for(1) == 10**9


@pytest.mark.parametrize(
    "edit,needle",
    [
        (lambda t: t.replace("seed = 3\n", ""), "seed"),
        (lambda t: t + "seed = 4\n", "duplicate"),
        (lambda t: t + "colour = blue\n", "unknown keys"),
        (lambda t: t.replace("horizon = 4", "horizon = four"), "integer"),
        (lambda t: t + "agent.x.patience = 1\n", "prosumer id"),
        (lambda t: t + "agent.5.patience = 1\n", "without a profile"),
        (lambda t: t.replace("profiles.csv", "missing.csv"), "missing.csv"),
        (lambda t: t + "just some words\n", "key = value"),
    ],
)
def test_config_errors(tmp_path, edit, needle):
    cfg = mirror_files(tmp_path)
    with pytest.raises(ConfigError, match=needle):
        parse_config_text(edit(cfg.read_text()), tmp_path)


def test_mirror_run():
    result = run(mirror_scenario(power=300, length=10))
    r = result.report
    assert r.local_trade_count == 1
    assert r.locally_matched_energy == 3000
    assert r.residual_energy_from_dso == 0
    assert r.market_efficiency == 1.0


def test_producers_only_report_zero_efficiency(caplog):
    config = ScenarioConfig(
        time=TimeConfig(4, 5),
        seed=0,
        policy=SafetyPolicy(1000, 10**9, 4),
        forecasts={0: NetLoadForecast((100,) * 5), 1: NetLoadForecast((0, 50, 50, 0, 0))},
        price_per_kwh=900_000,
    )
    r = run(config).report
    assert r.local_trade_count == 0
    assert r.total_demand == 0 and r.residual_energy_from_dso == 0
    assert r.market_efficiency == 0.0
    assert "no energy demand" in caplog.text


def test_same_config_is_byte_identical(tmp_path):
    config = random_scenario(8, max_prosumers=6, max_horizon=80)
    a, b = run(config), run(config)
    assert a.ledger_dump == b.ledger_dump
    assert a.report.to_json() == b.report.to_json()
    pa, pb = a.write(tmp_path / "a"), b.write(tmp_path / "b")
    for key in pa:
        assert pa[key].read_bytes() == pb[key].read_bytes()


@pytest.mark.parametrize("seed", range(6))
def test_end_of_run_audit(seed):
    config = random_scenario(seed, max_prosumers=6, max_horizon=80)
    result = run(config)
    r = result.report
    for totals in r.prosumers.values():
        assert totals.initial_fiat + totals.sales - totals.purchases == totals.final_fiat
    # every matched watt-interval lands once as production and once as consumption
    produced = sum(sum(w for w in a.schedule.values() if w > 0) for a in result.dso.accounts.values())
    consumed = sum(-sum(w for w in a.schedule.values() if w < 0) for a in result.dso.accounts.values())
    assert produced == consumed == r.locally_matched_energy
    assert r.residual_energy_from_dso == r.total_demand - r.locally_matched_energy
    assert 0.0 <= r.market_efficiency <= 1.0
    # nothing stays on-chain after the sweep
    assert not result.contract.assets and not any(result.contract.balances.values())


def test_total_fiat_constant_every_block():
    totals = []
    sim = Simulation(random_scenario(2, max_prosumers=5, max_horizon=60),
                     on_block=lambda s, _b: totals.append(s.total_fiat()))
    start = sim.total_fiat()
    sim.run()
    assert set(totals) == {start}


def test_schedule_matches_bought_profile():
    result = run(mirror_scenario(power=250, length=6))
    schedule = {p.token: a.schedule for p, a in result.dso.accounts.items()}
    assert schedule["prosumer-0"] == profile([]) | {t: -250 for t in range(6)}
    assert schedule["prosumer-1"] == {t: 250 for t in range(6)}
