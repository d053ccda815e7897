import pytest

from emrshare.errors import ConfigurationError, RoutingError
from emrshare.netsim import NetConfig, Network, parse_fault_script


def echo_net(config):
    net = Network(config)
    got = {"a": [], "b": [], "c": []}
    for nid in got:
        net.register(nid, lambda ev, nid=nid: got[nid].append((ev.deliver_at, ev.source, ev.payload)))
    return net, got


def scripted(seed):
    net, got = echo_net(NetConfig(seed=seed, base_delay=50, jitter=40, drop_rate=0.2))
    for k in range(50):
        net.advance_to(k * 10)
        net.broadcast("a", f"m{k}")
    net.run_until(10_000)
    return net.trace, got


def test_same_seed_same_trace():
    assert scripted(4) == scripted(4)
    assert scripted(4) != scripted(5)


def test_delays_within_jitter_bounds():
    _, got = scripted(1)
    for node in ("b", "c"):
        for at, _, payload in got[node]:
            sent = int(payload[1:]) * 10
            assert 10 <= at - sent <= 90


def test_drop_everything_but_control():
    net, got = echo_net(NetConfig(drop_rate=1.0))
    net.send("a", "b", "lost")
    net.control("a", "b", "kept")
    net.run_until(1000)
    assert [p for _, _, p in got["b"]] == ["kept"]
    assert any(" drop a->b" in line for line in net.trace)


def test_events_fire_in_time_then_sequence_order():
    net, got = echo_net(NetConfig(base_delay=0))
    net.timer("b", 5, "t5")
    net.control("a", "b", "c0", at=5)
    net.timer("b", 1, "t1")
    net.run_until(10)
    assert [p for _, _, p in got["b"]] == ["t1", "t5", "c0"]


def test_crashed_node_misses_messages_until_recovery():
    net, got = echo_net(NetConfig(base_delay=10))
    recovered = []
    net.register("b", lambda ev: got["b"].append(ev.payload), on_recover=lambda: recovered.append(net.now))
    net.apply_faults(parse_fault_script("crash b 100\nrecover b 200\n"))
    for t in (50, 150, 250):
        net.advance_to(t)
        net.send("a", "b", t)
    net.run_until(300)
    assert got["b"] == [50, 250] and recovered == [200]
    assert any(line.endswith("lost-node-down") for line in net.trace)


def test_advance_to_stops_before_time():
    net, got = echo_net(NetConfig())
    net.timer("a", 100, "x")
    net.advance_to(100)
    assert net.now == 100 and got["a"] == []
    net.run_until(100)
    assert got["a"] == [(100, "a", "x")]


def test_errors():
    net, _ = echo_net(NetConfig())
    with pytest.raises(RoutingError):
        net.send("a", "zzz", 1)
    net.run_until(50)
    with pytest.raises(ValueError):
        net.timer("a", 10, "late")
    with pytest.raises(ConfigurationError):
        NetConfig(drop_rate=1.5)
    with pytest.raises(ConfigurationError):
        NetConfig(base_delay=-1)


def test_fault_script_parsing():
    ds = parse_fault_script("# comment\ncrash n01 10000\nbyzantine-audit n40 0 9999  # trailing\n")
    assert [(d.action, d.node, d.t, d.until) for d in ds] == [
        ("crash", "n01", 10000, None), ("byzantine-audit", "n40", 0, 9999)]
    for bad in ("explode n1 5", "crash n1", "crash n1 soon", "byzantine-audit n1 5"):
        with pytest.raises(ConfigurationError):
            parse_fault_script(bad)
