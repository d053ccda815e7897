"""Emulated cloud storage with policy-gated key release.

Each extracted part is encrypted under a fresh document key. The store acts
as a trusted reference monitor for that key: it is sealed together with its
access policy and released only to an attribute set that satisfies it. No
pairing-based ABE is performed; the access semantics are what matter here.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from . import emr
from .ces import CesTag, ExtractedSignature, TAG_BYTES
from .encoding import Reader, Writer
from .errors import AccessDenied, NotFoundError, ParameterError
from .policy import Policy, parse_policy, policy_satisfies

log = logging.getLogger(__name__)

STORE = "store"
GRANTED = "retrieve-granted"
DENIED = "retrieve-denied"


@dataclass(frozen=True)
class AttributeKey:
    holder: str
    attributes: frozenset

    def __post_init__(self):
        object.__setattr__(self, "attributes", frozenset(self.attributes))
        if not self.attributes:
            raise ParameterError("attribute set must be non-empty")


@dataclass(frozen=True)
class StoredTriple:
    data_ct: bytes
    wrapped_key: bytes
    esig: ExtractedSignature
    policy: Policy


@dataclass(frozen=True)
class AccessLogEntry:
    t: int
    seq: int
    actor: str
    url: str
    action: str

    def line(self) -> str:
        return f"{self.t} {self.seq} {self.actor} {self.url} {self.action}"


def _pack_object(m_i: bytes, h_i: int, tag: CesTag) -> bytes:
    return Writer().blob(m_i).bigint(h_i).raw(tag.value).getvalue()


def _unpack_object(data: bytes) -> tuple:
    rd = Reader(data)
    out = (rd.blob(), rd.bigint(), CesTag(rd.raw(TAG_BYTES)))
    rd.done()
    return out


class CloudStore:
    """Single logical storage service; operations are serialized by the caller's event loop."""

    def __init__(self, rng: random.Random, clock):
        self._rng = rng
        self._clock = clock
        self._sealing_key = emr.new_sym_key(rng)
        self._objects: dict[str, StoredTriple] = {}
        self._log: list[AccessLogEntry] = []

    def __contains__(self, url) -> bool:
        return url in self._objects

    def __len__(self):
        return len(self._objects)

    def _append(self, actor, url, action):
        self._log.append(AccessLogEntry(int(self._clock.now), len(self._log), actor, url, action))

    def _seal(self, key: bytes, policy: Policy) -> bytes:
        return emr.sym_encrypt(self._sealing_key, key, self._rng, aad=str(policy).encode())

    def _unseal(self, wrapped: bytes, policy: Policy) -> bytes:
        return emr.sym_decrypt(self._sealing_key, wrapped, aad=str(policy).encode())

    def store(
        self,
        owner: str,
        part_index: int,
        m_i: bytes,
        h_i: int,
        tag: CesTag,
        policy: Policy,
        esig: ExtractedSignature,
        public_params=None,
    ) -> str:
        """Encrypt ``(m_i, h_i, tag)`` under a fresh key, seal the key to ``policy``.

        ``public_params`` is accepted for interface parity with real ABE and ignored.
        """
        k_i = emr.new_sym_key(self._rng)
        triple = StoredTriple(
            data_ct=emr.sym_encrypt(k_i, _pack_object(m_i, h_i, tag), self._rng),
            wrapped_key=self._seal(k_i, policy),
            esig=esig,
            policy=policy,
        )
        while True:
            url = f"cloud://{owner}/{part_index}/{self._rng.randbytes(8).hex()}"
            if url not in self._objects:
                break
        self._objects[url] = triple
        self._append(owner, url, STORE)
        return url

    def retrieve(self, url: str, key: AttributeKey) -> tuple:
        """Returns ``(m_i, h_i, tag, esig)`` or raises.

        Every call that reaches an existing object is logged, granted or not.
        """
        triple = self._objects.get(url)
        if triple is None:
            raise NotFoundError(url)
        if not policy_satisfies(key.attributes, triple.policy):
            self._append(key.holder, url, DENIED)
            raise AccessDenied(f"{key.holder} does not satisfy the policy on {url}")
        self._append(key.holder, url, GRANTED)
        k_i = self._unseal(triple.wrapped_key, triple.policy)
        m_i, h_i, tag = _unpack_object(emr.sym_decrypt(k_i, triple.data_ct))
        return m_i, h_i, tag, triple.esig

    def stored_triple(self, url: str) -> StoredTriple:
        try:
            return self._objects[url]
        except KeyError:
            raise NotFoundError(url) from None

    def replace_ciphertext(self, url: str, data_ct: bytes) -> None:
        """Overwrite an object's ciphertext in place (fault injection)."""
        t = self.stored_triple(url)
        self._objects[url] = StoredTriple(data_ct, t.wrapped_key, t.esig, t.policy)

    def audit_log(self, actor=None, url=None, since=None, until=None) -> list:
        out = []
        for e in self._log:
            if actor is not None and e.actor != actor:
                continue
            if url is not None and e.url != url:
                continue
            if since is not None and e.t < since:
                continue
            if until is not None and e.t > until:
                continue
            out.append(e)
        return out

    def dump_lines(self) -> list:
        lines = []
        for url in sorted(self._objects):
            t = self._objects[url]
            lines.append(" ".join([
                url, t.data_ct.hex(), t.wrapped_key.hex(), t.esig.hex(),
                str(t.policy).encode().hex(),
            ]))
        return lines

    def log_lines(self) -> list:
        return [e.line() for e in self._log]


def parse_dump_line(line: str) -> tuple:
    url, data_ct, wrapped, esig, policy = line.split()
    return url, StoredTriple(
        bytes.fromhex(data_ct),
        bytes.fromhex(wrapped),
        ExtractedSignature.from_bytes(bytes.fromhex(esig)),
        parse_policy(bytes.fromhex(policy).decode()),
    )
