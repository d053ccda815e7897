import random

import pytest
from hypothesis import given, settings, strategies as st

from emrshare import ces
from emrshare.ces import Ceas, CesTag, TEST_PARAMS
from emrshare.cloud import AttributeKey, CloudStore, DENIED, GRANTED, STORE, parse_dump_line
from emrshare.errors import AccessDenied, DecryptionError, NotFoundError, ParameterError
from emrshare.netsim import Clock
from emrshare.policy import And, Attr, Or, Threshold, parse_policy, policy_satisfies

from oracles import all_subsets, eval_policy_tree, random_tree, render_policy_tree


def test_parser_precedence_and_thresholds():
    p = parse_policy("a OR b AND c")
    assert policy_satisfies({"a"}, p) and policy_satisfies({"b", "c"}, p)
    assert not policy_satisfies({"b"}, p)
    t = parse_policy("2 of (x, y, z)")
    assert isinstance(t, Threshold) and t.k == 2
    assert policy_satisfies({"x", "z"}, t) and not policy_satisfies({"y"}, t)
    assert str(parse_policy("(a AND b) OR c")) == "((a AND b) OR c)"


@pytest.mark.parametrize("bad", ["", "a AND", "(a", "a b", "0 of (a)", "3 of (a, b)", "a $ b"])
def test_parser_rejects_malformed(bad):
    with pytest.raises(ParameterError):
        parse_policy(bad)


def test_canonical_text_reparses_to_equal_policy():
    rng = random.Random(0)
    universe = [f"u{i}" for i in range(5)]
    for _ in range(200):
        p = parse_policy(render_policy_tree(random_tree(rng, universe)))
        assert parse_policy(str(p)) == p


def test_factories():
    p = And(Attr("a"), Or(Attr("b"), Attr("c")))
    assert p.kind == "AND" and p.children[1].kind == "OR"
    assert policy_satisfies({"a", "c"}, p)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32), size=st.integers(1, 6))
def test_gate_matches_truth_table_property(seed, size):
    rng = random.Random(seed)
    universe = [f"attr{i}" for i in range(size)]
    tree = random_tree(rng, universe)
    policy = parse_policy(render_policy_tree(tree))
    for attrs in all_subsets(universe):
        assert policy_satisfies(attrs, policy) == eval_policy_tree(tree, attrs)


@pytest.fixture
def stored():
    rng = random.Random(7)
    clock = Clock(100)
    cloud = CloudStore(random.Random(8), clock)
    key = ces.keygen(TEST_PARAMS, rng)
    m = [bytes([65 + i]) * 5 for i in range(7)]
    sig = ces.sign(key, m, Ceas.of({2, 3}), CesTag.random(rng), rng)
    _, esig = ces.extract(key.public, m, sig, {2, 3})
    h2 = ces.hash_submessage(m[1], sig.ceas, sig.tag, 2, TEST_PARAMS)
    policy = parse_policy("cardiology AND researcher")
    url = cloud.store("owner", 2, m[1], h2, sig.tag, policy, esig)
    return cloud, clock, url, m, h2, sig, esig


def test_store_retrieve_roundtrip(stored):
    cloud, clock, url, m, h2, sig, esig = stored
    clock.now = 500
    m_i, h_i, tag, esig2 = cloud.retrieve(url, AttributeKey("u1", {"cardiology", "researcher", "x"}))
    assert (m_i, h_i, tag, esig2) == (m[1], h2, sig.tag, esig)
    assert url.startswith("cloud://owner/2/")


def test_denied_retrieval_is_logged_and_reveals_nothing(stored):
    cloud, clock, url, *_ = stored
    with pytest.raises(AccessDenied) as exc:
        cloud.retrieve(url, AttributeKey("u2", {"cardiology"}))
    assert "BBBBB" not in str(exc.value)
    with pytest.raises(NotFoundError):
        cloud.retrieve("cloud://owner/2/none", AttributeKey("u2", {"x"}))
    actions = [e.action for e in cloud.audit_log()]
    assert actions == [STORE, DENIED]
    assert [e.actor for e in cloud.audit_log(actor="u2")] == ["u2"]


def test_audit_log_filters(stored):
    cloud, clock, url, *_ = stored
    key = AttributeKey("u1", {"cardiology", "researcher"})
    for t in (200, 300, 400):
        clock.now = t
        cloud.retrieve(url, key)
    assert [e.t for e in cloud.audit_log(actor="u1", since=250, until=400)] == [300, 400]
    assert all(e.action == GRANTED for e in cloud.audit_log(actor="u1"))
    log = cloud.audit_log()
    assert all((a.t, a.seq) < (b.t, b.seq) for a, b in zip(log, log[1:]))


def test_tampered_ciphertext_detected(stored):
    cloud, _, url, *_ = stored
    triple = cloud.stored_triple(url)
    cloud.replace_ciphertext(url, triple.data_ct[:-1] + bytes([triple.data_ct[-1] ^ 1]))
    with pytest.raises(DecryptionError):
        cloud.retrieve(url, AttributeKey("u1", {"cardiology", "researcher"}))


def test_dump_roundtrip(stored):
    cloud, _, url, *_ = stored
    line, = cloud.dump_lines()
    url2, triple = parse_dump_line(line)
    assert url2 == url and triple == cloud.stored_triple(url)


def test_attribute_key_needs_attributes():
    with pytest.raises(ParameterError):
        AttributeKey("u", set())
