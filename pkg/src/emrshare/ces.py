"""Content extraction signatures over a prime-order multiplicative group.

A doctor signs a seven-part record once. The holder can later drop any
parts outside the mandatory set and present the remaining parts with a
signature that still verifies, without contacting the signer.

Each part ``i`` is hashed together with the mandatory set and a random
80-bit tag, then signed ElGamal-style with one nonce shared by all parts::

    r     = g^k mod p
    d_i   = (h_i - a*r) * k^-1 mod (p-1)
    check:  v^r * r^d_i == g^h_i (mod p)

The shared nonce is faithful to the construction and is exploitable:
:func:`recover_private_key` recovers ``a`` from any single full signature.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .encoding import Reader, Writer
from .errors import (
    ArityError,
    DecodeError,
    ExtractionPolicyError,
    IndexRangeError,
    ParameterError,
)

NUM_PARTS = 7
TAG_BYTES = 10
PART_RANGE = range(1, NUM_PARTS + 1)

# above this size the generator is only checked for range, not full order
_FULL_ORDER_CHECK_BITS = 128

try:
    from gmpy2 import powmod as _powmod
except ImportError:  # pragma: no cover
    _powmod = None


def modexp(base: int, exp: int, mod: int) -> int:
    """``base**exp % mod`` for non-negative ``exp``; GMP-backed when available."""
    if _powmod is None:
        return pow(base, exp, mod)
    return int(_powmod(base, exp, mod))


_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_probable_prime(n: int, rounds: int = 24, rng: random.Random | None = None) -> bool:
    """Miller-Rabin. Deterministic below 3.3e24, probabilistic above."""
    if n < 2:
        return False
    for b in _MR_BASES:
        if n % b == 0:
            return n == b
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    bases = list(_MR_BASES)
    if n.bit_length() > 80:
        rng = rng or random.Random(n)
        bases += [rng.randrange(2, n - 1) for _ in range(rounds)]
    for b in bases:
        x = modexp(b, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _prime_factors_small(n: int, limit: int = 1 << 16):
    """Factor ``n`` by trial division, allowing one large prime cofactor."""
    factors = set()
    d = 2
    while d * d <= n and d < limit:
        while n % d == 0:
            factors.add(d)
            n //= d
        d += 1 if d == 2 else 2
    if n > 1:
        if not is_probable_prime(n):
            return None
        factors.add(n)
    return factors


@dataclass(frozen=True)
class GroupParams:
    p: int
    g: int

    def validate(self) -> "GroupParams":
        p, g = self.p, self.g
        if not is_probable_prime(p):
            raise ParameterError("p is not prime")
        if not 1 < g < p:
            raise ParameterError("g out of range")
        if p.bit_length() <= _FULL_ORDER_CHECK_BITS:
            factors = _prime_factors_small(p - 1)
            if factors is None:
                raise ParameterError("cannot factor p-1 to check the generator")
            for q in factors:
                if modexp(g, (p - 1) // q, p) == 1:
                    raise ParameterError(f"g does not generate Z_p^* (order divides (p-1)/{q})")
        return self

    @property
    def order(self) -> int:
        return self.p - 1

    @property
    def byte_len(self) -> int:
        return (self.p.bit_length() + 7) // 8


# 64-bit safe prime p = 2q + 1; 5 generates the full group.
TEST_PARAMS = GroupParams(p=9990341303051090783, g=5)

# 2048-bit MODP group (RFC 3526, group 14) with its published generator.
PRODUCTION_PARAMS = GroupParams(
    p=int(
        "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1"
        "29024E088A67CC74020BBEA63B139B22514A08798E3404DD"
        "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245"
        "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
        "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D"
        "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F"
        "83655D23DCA3AD961C62F356208552BB9ED529077096966D"
        "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
        "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9"
        "DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
        "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
        16,
    ),
    g=2,
)

PROFILES = {"test": TEST_PARAMS, "production": PRODUCTION_PARAMS}


def group_profile(name: str) -> GroupParams:
    try:
        return PROFILES[name]
    except KeyError:
        raise ParameterError(f"unknown group profile {name!r}") from None


@dataclass(frozen=True)
class CesTag:
    value: bytes

    def __post_init__(self):
        if len(self.value) != TAG_BYTES:
            raise ParameterError(f"tag must be exactly {TAG_BYTES} bytes")

    @classmethod
    def random(cls, rng: random.Random) -> "CesTag":
        return cls(rng.randbytes(TAG_BYTES))


def _check_index_set(indices, what: str) -> tuple:
    out = tuple(indices)
    if not out:
        raise ParameterError(f"{what} must be non-empty")
    for i in out:
        if not isinstance(i, int) or i not in PART_RANGE:
            raise IndexRangeError(f"{what} index {i!r} outside [1, {NUM_PARTS}]")
    if any(a >= b for a, b in zip(out, out[1:])):
        raise ParameterError(f"{what} must be strictly ascending")
    return out


@dataclass(frozen=True)
class Ceas:
    """Indices every extraction must keep."""

    mandatory: tuple

    def __post_init__(self):
        object.__setattr__(self, "mandatory", _check_index_set(self.mandatory, "CEAS"))

    @classmethod
    def of(cls, indices) -> "Ceas":
        return cls(tuple(sorted(set(indices))))

    def encode(self) -> bytes:
        return ",".join(str(i) for i in self.mandatory).encode("ascii")

    def satisfied_by(self, chosen) -> bool:
        return set(self.mandatory) <= set(chosen)


@dataclass(frozen=True)
class CesPublicKey:
    params: GroupParams
    v: int


@dataclass(frozen=True)
class CesKeyPair:
    params: GroupParams
    a: int
    v: int

    @property
    def public(self) -> CesPublicKey:
        return CesPublicKey(self.params, self.v)


@dataclass(frozen=True)
class FullSignature:
    ceas: Ceas
    tag: CesTag
    r: int
    deltas: Mapping[int, int] = field(hash=False)

    def to_bytes(self) -> bytes:
        w = Writer()
        _write_indices(w, self.ceas.mandatory)
        w.raw(self.tag.value).bigint(self.r)
        _write_deltas(w, self.deltas)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FullSignature":
        rd = Reader(data)
        try:
            ceas = Ceas(_read_indices(rd))
            tag = CesTag(rd.raw(TAG_BYTES))
            r = rd.bigint()
            deltas = _read_deltas(rd)
        except (ParameterError, IndexRangeError) as exc:
            raise DecodeError(str(exc)) from exc
        rd.done()
        if tuple(deltas) != tuple(PART_RANGE):
            raise DecodeError("full signature needs all seven deltas")
        return cls(ceas, tag, r, deltas)

    def hex(self) -> str:
        return self.to_bytes().hex()


@dataclass(frozen=True)
class ExtractedSignature:
    ceas: Ceas
    ci: tuple
    tag: CesTag
    r: int
    deltas: Mapping[int, int] = field(hash=False)

    def to_bytes(self) -> bytes:
        w = Writer()
        _write_indices(w, self.ceas.mandatory)
        _write_indices(w, self.ci)
        w.raw(self.tag.value).bigint(self.r)
        _write_deltas(w, self.deltas)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ExtractedSignature":
        rd = Reader(data)
        try:
            ceas = Ceas(_read_indices(rd))
            ci = _check_index_set(_read_indices(rd), "CI")
            tag = CesTag(rd.raw(TAG_BYTES))
            r = rd.bigint()
            deltas = _read_deltas(rd)
        except (ParameterError, IndexRangeError) as exc:
            raise DecodeError(str(exc)) from exc
        rd.done()
        return cls(ceas, ci, tag, r, deltas)

    def hex(self) -> str:
        return self.to_bytes().hex()


def _write_indices(w: Writer, indices) -> None:
    w.u8(len(indices))
    for i in indices:
        w.u8(i)


def _read_indices(rd: Reader) -> tuple:
    return tuple(rd.u8() for _ in range(rd.u8()))


def _write_deltas(w: Writer, deltas: Mapping[int, int]) -> None:
    w.u8(len(deltas))
    for i in sorted(deltas):
        w.u8(i).bigint(deltas[i])


def _read_deltas(rd: Reader) -> dict:
    out = {}
    for _ in range(rd.u8()):
        i = rd.u8()
        if out and i <= max(out):
            raise DecodeError("delta indices must ascend")
        out[i] = rd.bigint()
    return out


def keygen(params: GroupParams, rng: random.Random, a: int | None = None) -> CesKeyPair:
    """Draw a private exponent in [1, p-2] and publish v = g^a mod p.

    ``a`` may be forced for worked examples; it is still range checked.
    """
    params.validate()
    p = params.p
    if a is None:
        a = rng.randrange(1, p - 1)
    elif not 1 <= a <= p - 2:
        raise ParameterError("private exponent must lie in [1, p-2]")
    return CesKeyPair(params, a, modexp(params.g, a, p))


def hash_submessage(m_i: bytes, ceas: Ceas, tag: CesTag, i: int, params: GroupParams) -> int:
    if i not in PART_RANGE:
        raise IndexRangeError(f"part index {i} outside [1, {NUM_PARTS}]")
    encoded = len(m_i).to_bytes(4, "big") + bytes(m_i) + ceas.encode() + tag.value + bytes([i])
    return int.from_bytes(hashlib.sha256(encoded).digest(), "big") % params.p


def draw_nonce(params: GroupParams, rng: random.Random, forced: int | None = None) -> int:
    """Return k in [1, p-2] with gcd(k, p-1) = 1; a non-invertible forced k is discarded."""
    n = params.order
    if forced is not None and 1 <= forced < n and math.gcd(forced, n) == 1:
        return forced
    while True:
        k = rng.randrange(1, n)
        if math.gcd(k, n) == 1:
            return k


def delta_for(key: CesKeyPair, k: int, r: int, h: int) -> int:
    n = key.params.order
    # (h - a*r) can be negative; reduce before multiplying
    return ((h - key.a * r) % n) * pow(k, -1, n) % n


def check_congruence(pk: CesPublicKey, r: int, delta: int, h: int) -> bool:
    p = pk.params.p
    if not (0 < r < p and 0 <= delta < p - 1):
        return False
    return modexp(pk.v, r, p) * modexp(r, delta, p) % p == modexp(pk.params.g, h, p)


def _check_parts(m: Sequence[bytes]) -> None:
    if len(m) != NUM_PARTS:
        raise ArityError(f"expected {NUM_PARTS} submessages, got {len(m)}")


def sign(
    key: CesKeyPair,
    m: Sequence[bytes],
    ceas: Ceas,
    tag: CesTag,
    rng: random.Random,
    nonce: int | None = None,
) -> FullSignature:
    _check_parts(m)
    params = key.params
    k = draw_nonce(params, rng, nonce)
    r = modexp(params.g, k, params.p)
    deltas = {}
    for i in PART_RANGE:
        h = hash_submessage(m[i - 1], ceas, tag, i, params)
        deltas[i] = delta_for(key, k, r, h)
    return FullSignature(ceas, tag, r, deltas)


def digests(m: Sequence[bytes], ceas: Ceas, tag: CesTag, params: GroupParams) -> tuple:
    _check_parts(m)
    return tuple(hash_submessage(m[i - 1], ceas, tag, i, params) for i in PART_RANGE)


def verify_full(pk: CesPublicKey, m: Sequence[bytes], sig: FullSignature) -> bool:
    if len(m) != NUM_PARTS or set(sig.deltas) != set(PART_RANGE):
        return False
    for i in PART_RANGE:
        h = hash_submessage(m[i - 1], sig.ceas, sig.tag, i, pk.params)
        if not check_congruence(pk, sig.r, sig.deltas[i], h):
            return False
    return True


def extract(pk: CesPublicKey, m: Sequence[bytes], sig: FullSignature, chosen) -> tuple:
    """Keep the parts in ``chosen``; returns ``(m_prime, extracted_signature)``.

    ``m_prime`` maps part index to bytes.
    """
    chosen = set(chosen)
    for i in chosen:
        if i not in PART_RANGE:
            raise IndexRangeError(f"part index {i} outside [1, {NUM_PARTS}]")
    if not sig.ceas.satisfied_by(chosen):
        missing = sorted(set(sig.ceas.mandatory) - chosen)
        raise ExtractionPolicyError(f"extraction omits mandatory parts {missing}")
    if not verify_full(pk, m, sig):
        raise ParameterError("full signature does not verify")
    ci = tuple(sorted(chosen))
    m_prime = {i: m[i - 1] for i in ci}
    esig = ExtractedSignature(sig.ceas, ci, sig.tag, sig.r, {i: sig.deltas[i] for i in ci})
    return m_prime, esig


def verify_extracted(pk: CesPublicKey, m_prime: Mapping[int, bytes], esig: ExtractedSignature) -> bool:
    ci = tuple(esig.ci)
    if not esig.ceas.satisfied_by(ci):
        return False
    if set(m_prime) != set(ci) or set(esig.deltas) != set(ci):
        return False
    for i in ci:
        if i not in PART_RANGE:
            return False
        h = hash_submessage(m_prime[i], esig.ceas, esig.tag, i, pk.params)
        if not check_congruence(pk, esig.r, esig.deltas[i], h):
            return False
    return True


def _solve_linear(coef: int, rhs: int, n: int) -> list:
    """All x in [0, n) with coef*x == rhs (mod n)."""
    d = math.gcd(coef, n)
    if rhs % d:
        return []
    n_d = n // d
    x0 = (rhs // d) * pow(coef // d, -1, n_d) % n_d
    return [x0 + t * n_d for t in range(d)]


def recover_private_key(pk: CesPublicKey, m: Sequence[bytes], sig: FullSignature) -> int | None:
    """Recover the signer's private exponent from one full signature.

    Any two parts share the nonce k, so ``k*(d_i - d_j) == h_i - h_j``
    and then ``a*r == h_i - k*d_i`` (mod p-1). Returns ``None`` if no pair
    of deltas has an invertible difference.
    """
    params = pk.params
    n = params.order
    hs = {i: hash_submessage(m[i - 1], sig.ceas, sig.tag, i, params) for i in PART_RANGE}
    for i in PART_RANGE:
        for j in range(i + 1, NUM_PARTS + 1):
            diff = (sig.deltas[i] - sig.deltas[j]) % n
            if math.gcd(diff, n) != 1:
                continue
            k = (hs[i] - hs[j]) * pow(diff, -1, n) % n
            for a in _solve_linear(sig.r % n, (hs[i] - k * sig.deltas[i]) % n, n):
                if modexp(params.g, a, params.p) == pk.v:
                    return a
    return None
