import random
from itertools import combinations

import pytest
from hypothesis import HealthCheck, assume, given, settings, strategies as st

from emrshare import ces
from emrshare.ces import Ceas, CesTag, ExtractedSignature, FullSignature, GroupParams, TEST_PARAMS
from emrshare.errors import (ArityError, DecodeError, ExtractionPolicyError, IndexRangeError,
                             ParameterError)

from oracles import egcd_inverse, square_multiply

TINY = GroupParams(23, 5)
P = TEST_PARAMS


def _record(rng, n=7):
    return [rng.randbytes(rng.randint(1, 40)) for _ in range(n)]


@pytest.fixture(scope="module")
def signed():
    rng = random.Random(1)
    key = ces.keygen(P, rng)
    m = _record(rng)
    ceas = Ceas.of({2, 3, 5})
    tag = CesTag.random(rng)
    return key, m, ceas, tag, ces.sign(key, m, ceas, tag, rng)


# -- worked example on p=23 --------------------------------------------------

def test_small_group_arithmetic_matches_oracle():
    key = ces.keygen(TINY, random.Random(0), a=6)
    assert key.v == square_multiply(5, 6, 23) == 8
    r = ces.modexp(5, 3, 23)
    assert r == square_multiply(5, 3, 23) == 10
    assert egcd_inverse(3, 22) == 15
    delta = ces.delta_for(key, 3, r, 7)
    assert delta == 19
    lhs = square_multiply(8, 10, 23) * square_multiply(10, 19, 23) % 23
    assert lhs == square_multiply(5, 7, 23) == 17
    assert ces.check_congruence(key.public, r, delta, 7)


def test_modexp_agrees_with_oracle_on_test_group():
    rng = random.Random(5)
    for _ in range(200):
        b, e = rng.randrange(P.p), rng.randrange(P.p)
        assert ces.modexp(b, e, P.p) == square_multiply(b, e, P.p)


def test_params_validate():
    TEST_PARAMS.validate()
    TINY.validate()
    with pytest.raises(ParameterError):
        GroupParams(24, 5).validate()
    with pytest.raises(ParameterError):
        GroupParams(23, 2).validate()  # 2 has order 11 mod 23


def test_keygen_rejects_out_of_range_exponent():
    with pytest.raises(ParameterError):
        ces.keygen(TINY, random.Random(0), a=22)
    with pytest.raises(ParameterError):
        ces.keygen(TINY, random.Random(0), a=0)


def test_forced_non_invertible_nonce_is_redrawn():
    k = ces.draw_nonce(P, random.Random(0), forced=2)
    assert k != 2 and egcd_inverse(k, P.order) is not None


# -- signing and extraction ---------------------------------------------------

def test_full_signature_verifies(signed):
    key, m, _, _, sig = signed
    assert ces.verify_full(key.public, m, sig)


def test_arity_checked(signed):
    key, m, ceas, tag, _ = signed
    with pytest.raises(ArityError):
        ces.sign(key, m[:6], ceas, tag, random.Random(0))


def test_extraction_count_for_mandatory_235(signed):
    key, m, _, _, sig = signed
    # the empty set is counted among the rejections: 128 - 16 = 112
    accepted = rejected = 0
    for n in range(0, 8):
        for chosen in combinations(range(1, 8), n):
            if {2, 3, 5} <= set(chosen):
                m2, esig = ces.extract(key.public, m, sig, chosen)
                assert ces.verify_extracted(key.public, m2, esig)
                accepted += 1
            else:
                with pytest.raises(ExtractionPolicyError):
                    ces.extract(key.public, m, sig, chosen)
                rejected += 1
    assert (accepted, rejected) == (16, 112)


def test_extract_rejects_out_of_range_index(signed):
    key, m, _, _, sig = signed
    with pytest.raises(IndexRangeError):
        ces.extract(key.public, m, sig, {2, 3, 5, 8})


def test_extract_refuses_invalid_full_signature(signed):
    key, m, _, _, sig = signed
    bad = list(m)
    bad[0] = bad[0] + b"!"
    with pytest.raises(ParameterError):
        ces.extract(key.public, bad, sig, {2, 3, 5})


def test_verify_rejects_dropped_mandatory_part(signed):
    key, m, _, _, sig = signed
    m2, esig = ces.extract(key.public, m, sig, {2, 3, 5, 6})
    del m2[3]
    assert not ces.verify_extracted(key.public, m2, esig)
    forged = ExtractedSignature(esig.ceas, (2, 5, 6), esig.tag, esig.r,
                                {i: esig.deltas[i] for i in (2, 5, 6)})
    assert not ces.verify_extracted(key.public, m2, forged)


def test_signature_from_other_key_fails(signed):
    key, m, _, _, sig = signed
    other = ces.keygen(P, random.Random(99))
    assert not ces.verify_full(other.public, m, sig)


ceas_sets = st.sets(st.integers(1, 7), min_size=1, max_size=7)


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 2**32), mandatory=ceas_sets, extra=st.sets(st.integers(1, 7)))
def test_roundtrip_property(seed, mandatory, extra):
    rng = random.Random(seed)
    key = ces.keygen(P, rng)
    m = _record(rng)
    ceas = Ceas.of(mandatory)
    sig = ces.sign(key, m, ceas, CesTag.random(rng), rng)
    m2, esig = ces.extract(key.public, m, sig, mandatory | extra)
    assert ces.verify_extracted(key.public, m2, esig)
    again = ExtractedSignature.from_bytes(esig.to_bytes())
    assert again == esig and ces.verify_extracted(key.public, m2, again)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32), victim=st.integers(1, 7), junk=st.binary(min_size=1, max_size=8))
def test_modified_part_fails_property(seed, victim, junk):
    rng = random.Random(seed)
    key = ces.keygen(P, rng)
    m = _record(rng)
    sig = ces.sign(key, m, Ceas.of({1}), CesTag.random(rng), rng)
    m2, esig = ces.extract(key.public, m, sig, range(1, 8))
    m2[victim] = m2[victim] + junk
    assert not ces.verify_extracted(key.public, m2, esig)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), other_tag=st.binary(min_size=10, max_size=10))
def test_tag_is_bound_property(seed, other_tag):
    rng = random.Random(seed)
    key = ces.keygen(P, rng)
    m = _record(rng)
    tag = CesTag.random(rng)
    assume(other_tag != tag.value)
    sig = ces.sign(key, m, Ceas.of({2}), tag, rng)
    moved = FullSignature(sig.ceas, CesTag(other_tag), sig.r, sig.deltas)
    assert not ces.verify_full(key.public, m, moved)


# -- serialization ------------------------------------------------------------

def test_full_signature_roundtrip_and_hex(signed):
    sig = signed[4]
    assert FullSignature.from_bytes(sig.to_bytes()) == sig
    assert bytes.fromhex(sig.hex()) == sig.to_bytes()


def test_decoder_rejects_trailing_and_truncated(signed):
    data = signed[4].to_bytes()
    with pytest.raises(DecodeError):
        FullSignature.from_bytes(data + b"\0")
    with pytest.raises(DecodeError):
        FullSignature.from_bytes(data[:-1])


def test_decoder_rejects_missing_delta(signed):
    sig = signed[4]
    six = FullSignature(sig.ceas, sig.tag, sig.r, {i: sig.deltas[i] for i in range(1, 7)})
    with pytest.raises(DecodeError):
        FullSignature.from_bytes(six.to_bytes())


# -- shared nonce ------------------------------------------------------------

def test_private_key_recovered_from_one_signature(signed):
    key, m, _, _, sig = signed
    a = ces.recover_private_key(key.public, m, sig)
    assert a is not None and square_multiply(P.g, a, P.p) == key.v


def test_recovery_on_small_group_brute_force():
    rng = random.Random(3)
    hits = 0
    for _ in range(50):
        key = ces.keygen(TINY, rng)
        m = _record(rng)
        sig = ces.sign(key, m, Ceas.of({1}), CesTag.random(rng), rng)
        a = ces.recover_private_key(key.public, m, sig)
        if a is not None:
            assert pow(5, a, 23) == key.v
            hits += 1
    assert hits > 0
