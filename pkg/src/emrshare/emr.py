"""Medical record types and the account-key cryptography used around them.

Account keys live in the same group as the content extraction signatures:
ElGamal-style key agreement wraps AES-256-GCM for encryption, and a
Schnorr-style signature authenticates transactions.
"""

from __future__ import annotations

import functools
import hashlib
import random
from dataclasses import dataclass
from typing import Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import ces
from .ces import Ceas, CesPublicKey, CesTag, FullSignature, GroupParams, modexp
from .encoding import Reader, Writer
from .errors import ArityError, DecodeError, DecryptionError, ParameterError

PART_NAMES = (
    "name",
    "gender",
    "age",
    "id_number",
    "medical_history",
    "examination",
    "prescription",
)
ROLES = ("patient", "doctor", "user", "node")

SYM_KEY_BYTES = 32
NONCE_BYTES = 12


# -- symmetric layer --------------------------------------------------------

def new_sym_key(rng: random.Random) -> bytes:
    return rng.randbytes(SYM_KEY_BYTES)


def sym_encrypt(key: bytes, plaintext: bytes, rng: random.Random, aad: bytes = b"") -> bytes:
    nonce = rng.randbytes(NONCE_BYTES)
    return nonce + AESGCM(key).encrypt(nonce, plaintext, aad)


def sym_decrypt(key: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    if len(ciphertext) < NONCE_BYTES + 16:
        raise DecryptionError("ciphertext too short")
    try:
        return AESGCM(key).decrypt(ciphertext[:NONCE_BYTES], ciphertext[NONCE_BYTES:], aad)
    except (InvalidTag, ValueError) as exc:
        raise DecryptionError("authenticated decryption failed") from exc


# -- account keys -----------------------------------------------------------

@dataclass(frozen=True)
class AccountPublicKey:
    params: GroupParams
    y: int

    def to_bytes(self) -> bytes:
        return self.y.to_bytes(self.params.byte_len, "big")

    @property
    def account_id(self) -> str:
        """Pseudonymous identifier; a function of the public key only."""
        return "acct-" + hashlib.sha256(self.to_bytes()).hexdigest()[:16]


@dataclass(frozen=True)
class AccountKeyPair:
    params: GroupParams
    sk: int
    pk: AccountPublicKey
    role: str

    @classmethod
    def generate(cls, params: GroupParams, rng: random.Random, role: str) -> "AccountKeyPair":
        if role not in ROLES:
            raise ParameterError(f"unknown role {role!r}")
        sk = rng.randrange(1, params.p - 1)
        return cls(params, sk, AccountPublicKey(params, modexp(params.g, sk, params.p)), role)

    @property
    def account_id(self) -> str:
        return self.pk.account_id


def _kdf(shared: int, eph: int, params: GroupParams) -> bytes:
    n = params.byte_len
    material = shared.to_bytes(n, "big") + eph.to_bytes(n, "big")
    return HKDF(algorithm=hashes.SHA256(), length=SYM_KEY_BYTES, salt=None,
                info=b"emrshare/asym").derive(material)


def asym_encrypt(pk: AccountPublicKey, plaintext: bytes, rng: random.Random) -> bytes:
    params = pk.params
    e = rng.randrange(1, params.p - 1)
    eph = modexp(params.g, e, params.p)
    key = _kdf(modexp(pk.y, e, params.p), eph, params)
    eph_bytes = eph.to_bytes(params.byte_len, "big")
    return Writer().bigint(eph).blob(sym_encrypt(key, plaintext, rng, aad=eph_bytes)).getvalue()


def asym_decrypt(keys: AccountKeyPair, ciphertext: bytes) -> bytes:
    params = keys.params
    try:
        rd = Reader(ciphertext)
        eph = rd.bigint()
        body = rd.blob()
        rd.done()
    except DecodeError as exc:
        raise DecryptionError("malformed ciphertext") from exc
    if not 1 < eph < params.p:
        raise DecryptionError("ephemeral value out of range")
    key = _kdf(modexp(eph, keys.sk, params.p), eph, params)
    return sym_decrypt(key, body, aad=eph.to_bytes(params.byte_len, "big"))


def _challenge(R: int, pk: AccountPublicKey, message: bytes) -> int:
    n = pk.params.byte_len
    h = hashlib.sha256(R.to_bytes(n, "big") + pk.to_bytes() + message).digest()
    return int.from_bytes(h, "big") % pk.params.order


def acct_sign(keys: AccountKeyPair, message: bytes, rng: random.Random) -> bytes:
    params = keys.params
    k = rng.randrange(1, params.order)
    R = modexp(params.g, k, params.p)
    s = (k + _challenge(R, keys.pk, message) * keys.sk) % params.order
    return Writer().bigint(R).bigint(s).getvalue()


def acct_verify(pk: AccountPublicKey, message: bytes, signature: bytes) -> bool:
    return _verify_cached(pk, bytes(message), bytes(signature))


# replicas re-verify the same endorsements; verification is pure
@functools.lru_cache(maxsize=1 << 16)
def _verify_cached(pk: AccountPublicKey, message: bytes, signature: bytes) -> bool:
    params = pk.params
    try:
        rd = Reader(signature)
        R, s = rd.bigint(), rd.bigint()
        rd.done()
    except DecodeError:
        return False
    if not (0 < R < params.p and 0 <= s < params.order):
        return False
    e = _challenge(R, pk, message)
    return modexp(params.g, s, params.p) == R * modexp(pk.y, e, params.p) % params.p


# -- records ----------------------------------------------------------------

@dataclass(frozen=True)
class EmrDocument:
    parts: tuple

    def __post_init__(self):
        parts = tuple(bytes(p) for p in self.parts)
        if len(parts) != ces.NUM_PARTS:
            raise ArityError(f"an EMR has {ces.NUM_PARTS} parts, got {len(parts)}")
        if not all(parts):
            raise ParameterError("EMR parts must be non-empty")
        object.__setattr__(self, "parts", parts)

    @classmethod
    def from_fields(cls, **fields) -> "EmrDocument":
        return cls(tuple(str(fields[name]).encode("utf-8") for name in PART_NAMES))

    def part(self, i: int) -> bytes:
        return self.parts[i - 1]


@dataclass(frozen=True)
class InfoEnvelope:
    payload_ct: bytes
    key_ct: bytes

    def to_bytes(self) -> bytes:
        return Writer().blob(self.payload_ct).blob(self.key_ct).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "InfoEnvelope":
        rd = Reader(data)
        out = cls(rd.blob(), rd.blob())
        rd.done()
        return out


def _pack_info(emr: EmrDocument, digests: Sequence[int], sig: FullSignature, ceas: Ceas, tag: CesTag) -> bytes:
    w = Writer()
    for part in emr.parts:
        w.blob(part)
    for h in digests:
        w.bigint(h)
    w.blob(sig.to_bytes()).blob(ceas.encode()).raw(tag.value)
    return w.getvalue()


def _unpack_info(data: bytes) -> tuple:
    rd = Reader(data)
    emr = EmrDocument(tuple(rd.blob() for _ in range(ces.NUM_PARTS)))
    digests = tuple(rd.bigint() for _ in range(ces.NUM_PARTS))
    sig = FullSignature.from_bytes(rd.blob())
    ceas_text = rd.blob().decode("ascii")
    ceas = Ceas(tuple(int(x) for x in ceas_text.split(",")))
    tag = CesTag(rd.raw(ces.TAG_BYTES))
    rd.done()
    return emr, digests, sig, ceas, tag


def package_info(
    doctor_sym_key: bytes,
    patient_pk: AccountPublicKey,
    emr: EmrDocument,
    digests: Sequence[int],
    full_sig: FullSignature,
    ceas: Ceas,
    tag: CesTag,
    rng: random.Random,
    signer: CesPublicKey | None = None,
) -> InfoEnvelope:
    if len(emr.parts) != ces.NUM_PARTS or len(digests) != ces.NUM_PARTS:
        raise ArityError("EMR and digests must both have seven entries")
    if signer is not None and not ces.verify_full(signer, emr.parts, full_sig):
        raise ParameterError("full signature does not verify against the EMR")
    payload = _pack_info(emr, digests, full_sig, ceas, tag)
    return InfoEnvelope(
        payload_ct=sym_encrypt(doctor_sym_key, payload, rng),
        key_ct=asym_encrypt(patient_pk, doctor_sym_key, rng),
    )


def open_info(patient: AccountKeyPair, envelope: InfoEnvelope) -> tuple:
    """Returns ``(emr, digests, full_sig, ceas, tag)``."""
    k_doc = asym_decrypt(patient, envelope.key_ct)
    payload = sym_decrypt(k_doc, envelope.payload_ct)
    try:
        return _unpack_info(payload)
    except (DecodeError, ValueError) as exc:
        raise DecryptionError("decrypted payload is malformed") from exc


@dataclass(frozen=True)
class EmrIndex:
    url: str
    h: int
    t: int

    def to_bytes(self) -> bytes:
        return Writer().text(self.url).bigint(self.h).i64(self.t).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "EmrIndex":
        rd = Reader(data)
        out = cls(rd.text(), rd.bigint(), rd.i64())
        rd.done()
        return out

    def hash(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()


def build_index(url: str, h_i: int, clock) -> EmrIndex:
    """``clock`` is anything with an integer ``now`` (simulated ms)."""
    if not url:
        raise ParameterError("url must be non-empty")
    return EmrIndex(url, h_i, int(clock.now))
