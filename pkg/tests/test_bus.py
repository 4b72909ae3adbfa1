import random

import pytest
from hypothesis import given, strategies as st

from energy_trading.bus import (
    FAILED_WITHDRAWAL,
    WITHDRAW_ASSETS,
    Bus,
    BusMessage,
    UnknownRecipient,
)


def msg(sender, recipient, n):
    return BusMessage(WITHDRAW_ASSETS, sender, recipient, {"n": n})


def test_delivered_after_tick():
    bus = Bus()
    bus.register("dso")
    bus.send(msg("p", "dso", 0))
    assert bus.poll("dso") == []
    bus.tick()
    assert bus.poll("dso") == [msg("p", "dso", 0)]
    assert bus.poll("dso") == []


def test_same_pair_in_order():
    bus = Bus()
    bus.register("dso")
    bus.send(msg("p", "dso", 0))
    bus.send(msg("p", "dso", 1))
    bus.tick()
    assert [m.payload["n"] for m in bus.poll("dso")] == [0, 1]


def test_unknown_recipient():
    bus = Bus()
    with pytest.raises(UnknownRecipient):
        bus.send(msg("p", "nobody", 0))


def test_text_round_trip():
    m = BusMessage(FAILED_WITHDRAWAL, "dso", "prosumer-1", {"anon": "0x" + "0" * 40, "msg": "x"})
    assert BusMessage.from_text(m.to_text()) == m
    with pytest.raises(ValueError):
        BusMessage("Gossip", "a", "b")


@given(st.integers(0, 2**32), st.integers(1, 200))
def test_fifo_no_loss_no_duplication(seed, n):
    rng = random.Random(seed)
    names = ["a", "b", "c", "d"]
    bus = Bus()
    for name in names:
        bus.register(name)
    sent: dict[tuple[str, str], list[int]] = {}
    got: dict[tuple[str, str], list[int]] = {}
    for i in range(n):
        s, r = rng.choice(names), rng.choice(names)
        bus.send(msg(s, r, i))
        sent.setdefault((s, r), []).append(i)
        if rng.random() < 0.3:
            bus.tick()
        if rng.random() < 0.3:
            for name in names:
                for m in bus.poll(name):
                    got.setdefault((m.sender, m.recipient), []).append(m.payload["n"])
    bus.tick()
    for name in names:
        for m in bus.poll(name):
            got.setdefault((m.sender, m.recipient), []).append(m.payload["n"])
    assert got == sent
