"""Consortium chain records and validation rules.

Blocks are chained by the hash of their full encoding and carry a strictly
increasing timestamp. A block commits only with approving endorsements from
at least ``ceil(0.51 * |ATN|)`` audit nodes; each endorsement signs the
audit result bound to the block's ``d_hash``.
"""

from __future__ import annotations

import functools
import hashlib
import math
import random
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable

from . import ces
from .emr import AccountKeyPair, AccountPublicKey, EmrIndex, acct_sign, acct_verify, asym_encrypt
from .ces import GroupParams
from .encoding import Reader, Writer
from .errors import DecodeError, QuorumNotMet, TxRejected, ValidationFailed

ZERO_HASH = bytes(32)
QUORUM_FRACTION_PERCENT = 51
MAX_TX_AGE = 300_000
ACTIONS = ("read", "write", "copy")

APPROVE = 1
REJECT = 0


def quorum_size(n_atn: int) -> int:
    """Smallest approval count that is at least 51% of ``n_atn``."""
    return math.ceil(QUORUM_FRACTION_PERCENT * n_atn / 100)


def _pk_bytes(pk: AccountPublicKey) -> bytes:
    return pk.to_bytes()


def _read_pk(rd: Reader, params: GroupParams) -> AccountPublicKey:
    y = int.from_bytes(rd.raw(params.byte_len), "big")
    if not 1 < y < params.p:
        raise DecodeError("public key out of range")
    return AccountPublicKey(params, y)


# -- transactions -----------------------------------------------------------

TX_RELEASE = 1
TX_ACCESS = 2


@dataclass(frozen=True)
class ReleaseTx:
    """A patient publishes one encrypted index.

    The signature covers ``H(Index_i) || t``, which is how the index itself is
    signed under hash-then-sign; nodes cannot decrypt ``index_ct``.
    """

    patient_pk: AccountPublicKey
    index_ct: bytes
    index_hash: bytes
    sig: bytes
    t: int

    @staticmethod
    def signed_message(index_hash: bytes, t: int) -> bytes:
        return Writer().raw(b"release").blob(index_hash).i64(t).getvalue()

    def encode(self) -> bytes:
        return (Writer().u8(TX_RELEASE).raw(_pk_bytes(self.patient_pk)).blob(self.index_ct)
                .blob(self.index_hash).blob(self.sig).i64(self.t).getvalue())

    @property
    def sender(self) -> str:
        return self.patient_pk.account_id


@dataclass(frozen=True)
class AccessTx:
    """A data user's request for part ``i`` of object ``obj``."""

    requester_pk: AccountPublicKey
    obj: str
    i: int
    action: str
    t: int
    sig: bytes = b""

    @property
    def requester(self) -> str:
        return self.requester_pk.account_id

    sender = requester

    def signed_message(self) -> bytes:
        return (Writer().raw(b"access").text(self.obj).u8(self.i).text(self.action)
                .i64(self.t).getvalue())

    def encode(self) -> bytes:
        return (Writer().u8(TX_ACCESS).raw(_pk_bytes(self.requester_pk)).text(self.obj)
                .u8(self.i).text(self.action).i64(self.t).blob(self.sig).getvalue())


def make_release_tx(patient: AccountKeyPair, index: EmrIndex, t: int, rng: random.Random) -> ReleaseTx:
    index_hash = index.hash()
    return ReleaseTx(
        patient_pk=patient.pk,
        index_ct=asym_encrypt(patient.pk, index.to_bytes(), rng),
        index_hash=index_hash,
        sig=acct_sign(patient, ReleaseTx.signed_message(index_hash, t), rng),
        t=t,
    )


def make_access_tx(user: AccountKeyPair, obj: str, i: int, action: str, t: int,
                   rng: random.Random) -> AccessTx:
    unsigned = AccessTx(user.pk, obj, i, action, t)
    return replace(unsigned, sig=acct_sign(user, unsigned.signed_message(), rng))


def decode_tx(data: bytes, params: GroupParams):
    rd = Reader(data)
    kind = rd.u8()
    if kind == TX_RELEASE:
        tx = ReleaseTx(_read_pk(rd, params), rd.blob(), rd.blob(), rd.blob(), rd.i64())
    elif kind == TX_ACCESS:
        tx = AccessTx(_read_pk(rd, params), rd.text(), rd.u8(), rd.text(), rd.i64(), rd.blob())
    else:
        raise DecodeError(f"unknown transaction type {kind}")
    rd.done()
    return tx


def tx_id(tx) -> bytes:
    return hashlib.sha256(tx.encode()).digest()


def check_tx(tx, now: int | None = None) -> None:
    """Raise :class:`TxRejected` unless ``tx`` is well formed and authentic."""
    if isinstance(tx, ReleaseTx):
        if len(tx.index_hash) != 32:
            raise TxRejected("hash-mismatch", "index hash must be 32 bytes")
        if not acct_verify(tx.patient_pk, ReleaseTx.signed_message(tx.index_hash, tx.t), tx.sig):
            raise TxRejected("signature-invalid")
    elif isinstance(tx, AccessTx):
        if tx.i not in ces.PART_RANGE:
            raise TxRejected("index-out-of-range", f"part {tx.i}")
        if tx.action not in ACTIONS:
            raise TxRejected("bad-action", tx.action)
        if not acct_verify(tx.requester_pk, tx.signed_message(), tx.sig):
            raise TxRejected("signature-invalid")
    else:
        raise TxRejected("unknown-type")
    if now is not None and not 0 <= now - tx.t <= MAX_TX_AGE:
        raise TxRejected("timestamp-stale", f"t={tx.t} now={now}")


def check_release_contents(tx: ReleaseTx, index: EmrIndex) -> None:
    """Holder-side check that ``tx`` commits to ``index``."""
    if index.hash() != tx.index_hash:
        raise TxRejected("hash-mismatch")
    check_tx(tx)


class Mempool:
    def __init__(self):
        self._pending: dict[bytes, tuple] = {}

    def __len__(self):
        return len(self._pending)

    def __contains__(self, tid):
        return tid in self._pending

    def entries(self) -> list:
        """``(tx, admitted_at)`` in admission order."""
        return list(self._pending.values())

    def discard(self, tids: Iterable[bytes]) -> None:
        for tid in tids:
            self._pending.pop(tid, None)


def submit_tx(tx, mempool: Mempool, now: int) -> bytes:
    """Admit ``tx`` into ``mempool`` at time ``now``; returns its id."""
    check_tx(tx, now)
    tid = tx_id(tx)
    if tid in mempool:
        raise TxRejected("duplicate")
    mempool._pending[tid] = (tx, now)
    return tid


# -- blocks -----------------------------------------------------------------

@dataclass(frozen=True)
class Endorsement:
    atn_pk: AccountPublicKey
    verdict: int
    reason: int
    t: int
    sig: bytes

    def encode(self) -> bytes:
        return (Writer().raw(_pk_bytes(self.atn_pk)).u8(self.verdict).u8(self.reason)
                .i64(self.t).blob(self.sig).getvalue())


def audit_result_message(verdict: int, reason: int, d_hash: bytes, t: int) -> bytes:
    """``Res || t``; the result is bound to the audited block's digest."""
    return Writer().raw(b"res").u8(verdict).u8(reason).blob(d_hash).i64(t).getvalue()


def encode_d_set(d_set) -> bytes:
    w = Writer().u32(len(d_set))
    for tx, admitted_at in d_set:
        w.blob(tx.encode()).i64(admitted_at)
    return w.getvalue()


def compute_d_hash(d_set, t: int) -> bytes:
    return hashlib.sha256(encode_d_set(d_set) + Writer().i64(t).getvalue()).digest()


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    t: int
    producer: str
    d_set: tuple
    d_hash: bytes
    producer_sig: bytes = b""
    endorsements: tuple = field(default=())

    def header_message(self) -> bytes:
        """What the producer signs: ``D_set || D_hash`` plus the linkage fields."""
        return (Writer().raw(b"block").i64(self.height).blob(self.prev_hash).i64(self.t)
                .text(self.producer).blob(encode_d_set(self.d_set)).blob(self.d_hash)
                .getvalue())

    def encode(self) -> bytes:
        return self._encoded

    @cached_property
    def _encoded(self) -> bytes:
        w = (Writer().i64(self.height).blob(self.prev_hash).i64(self.t).text(self.producer)
             .blob(encode_d_set(self.d_set)).blob(self.d_hash).blob(self.producer_sig))
        w.u32(len(self.endorsements))
        for e in self.endorsements:
            w.blob(e.encode())
        return w.getvalue()

    @cached_property
    def hash(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()

    def tx_ids(self) -> list:
        return [tx_id(tx) for tx, _ in self.d_set]


# decoding is pure; unchanged sub-records are shared across re-decodes of similar blocks
@functools.lru_cache(maxsize=1 << 14)
def _decode_d_set(data: bytes, params: GroupParams) -> tuple:
    rd = Reader(data)
    n = rd.u32()
    if n > len(data):
        raise DecodeError("implausible transaction count")
    out = tuple((decode_tx(rd.blob(), params), rd.i64()) for _ in range(n))
    rd.done()
    return out


@functools.lru_cache(maxsize=1 << 14)
def _decode_endorsement(data: bytes, params: GroupParams) -> Endorsement:
    er = Reader(data)
    out = Endorsement(_read_pk(er, params), er.u8(), er.u8(), er.i64(), er.blob())
    er.done()
    return out


def decode_block(data: bytes, params: GroupParams) -> Block:
    data = bytes(data)
    rd = Reader(data)
    height, prev_hash, t, producer = rd.i64(), rd.blob(), rd.i64(), rd.text()
    d_set = _decode_d_set(rd.blob(), params)
    d_hash, producer_sig = rd.blob(), rd.blob()
    n = rd.u32()
    if n > len(data):
        raise DecodeError("implausible endorsement count")
    endorsements = tuple(_decode_endorsement(rd.blob(), params) for _ in range(n))
    rd.done()
    block = Block(height, prev_hash, t, producer, d_set, d_hash, producer_sig, endorsements)
    # the reader is strict, so the canonical encoding is exactly the input
    block.__dict__["_encoded"] = data
    return block


def genesis_block(t: int = 0) -> Block:
    return Block(0, ZERO_HASH, t, "genesis", (), compute_d_hash((), t))


# -- membership -------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    cycle_start: int
    rpns: tuple
    atns: tuple
    slot_ms: int = 10_000

    def __post_init__(self):
        if set(self.rpns) & set(self.atns):
            raise ValueError("RPN and ATN sets must be disjoint")

    @property
    def cycle_ms(self) -> int:
        return self.slot_ms * len(self.rpns)

    def slot_time(self, s: int) -> int:
        return self.cycle_start + s * self.slot_ms

    def producer_at(self, t: int) -> str | None:
        offset = t - self.cycle_start
        if offset < 0 or offset % self.slot_ms:
            return None
        s = offset // self.slot_ms
        return self.rpns[s] if s < len(self.rpns) else None

    def line(self) -> str:
        return f"{self.cycle_start} {self.slot_ms} {','.join(self.rpns)} {','.join(self.atns)}"

    @classmethod
    def from_line(cls, line: str) -> "Schedule":
        start, slot, rpns, atns = line.split()
        return cls(int(start), tuple(rpns.split(",")), tuple(atns.split(",")), int(slot))


class Membership:
    """Node public keys plus the schedule history, as seen by one replica."""

    def __init__(self, pks: dict, schedules: Iterable[Schedule] = ()):
        self.pks = dict(pks)
        self._by_pk = {pk.y: nid for nid, pk in self.pks.items()}
        self.schedules: list[Schedule] = []
        for s in schedules:
            self.add_schedule(s)

    def copy(self) -> "Membership":
        return Membership(self.pks, self.schedules)

    def add_schedule(self, schedule: Schedule) -> None:
        if any(s.cycle_start == schedule.cycle_start for s in self.schedules):
            return
        self.schedules.append(schedule)
        self.schedules.sort(key=lambda s: s.cycle_start)

    def schedule_at(self, t: int) -> Schedule | None:
        current = None
        for s in self.schedules:
            if s.cycle_start <= t:
                current = s
            else:
                break
        return current

    def node_of(self, pk: AccountPublicKey) -> str | None:
        return self._by_pk.get(pk.y)


# -- validation -------------------------------------------------------------

def sign_block(block: Block, producer: AccountKeyPair, rng: random.Random) -> Block:
    return replace(block, producer_sig=acct_sign(producer, block.header_message(), rng))


def build_block(producer_id: str, producer: AccountKeyPair, mempool: Mempool, prev: Block,
                now: int, rng: random.Random, committed: set | None = None) -> Block:
    """Candidate block (the broadcast ``Rec``) from every still-valid queued tx."""
    committed = committed or set()
    d_set = []
    for tx, admitted_at in mempool.entries():
        if tx_id(tx) in committed:
            continue
        try:
            check_tx(tx, admitted_at)
        except TxRejected:
            continue
        if admitted_at > now:
            continue
        d_set.append((tx, admitted_at))
    d_set = tuple(d_set)
    block = Block(prev.height + 1, prev.hash, now, producer_id, d_set, compute_d_hash(d_set, now))
    return sign_block(block, producer, rng)


def validate_block(block: Block, prev: Block, membership: Membership,
                   committed: set | None = None) -> tuple:
    """Check linkage, digest, schedule, producer signature and every tx.

    Returns ``(ok, reason)``; endorsements are checked separately by
    :func:`check_endorsements`.
    """
    if block.height != prev.height + 1:
        return False, "bad-height"
    if block.prev_hash != prev.hash:
        return False, "prev-hash-mismatch"
    # the genesis block shares its timestamp with the first slot
    if block.t < prev.t or (block.t == prev.t and prev.height > 0):
        return False, "timestamp-not-increasing"
    if compute_d_hash(block.d_set, block.t) != block.d_hash:
        return False, "d-hash-mismatch"
    schedule = membership.schedule_at(block.t)
    if schedule is None or schedule.producer_at(block.t) != block.producer:
        return False, "producer-not-scheduled"
    pk = membership.pks.get(block.producer)
    if pk is None or not acct_verify(pk, block.header_message(), block.producer_sig):
        return False, "producer-signature-invalid"
    seen = set()
    for tx, admitted_at in block.d_set:
        tid = tx_id(tx)
        if tid in seen or (committed and tid in committed):
            return False, "duplicate-tx"
        seen.add(tid)
        if admitted_at > block.t:
            return False, "tx-admitted-after-block"
        try:
            check_tx(tx, admitted_at)
        except TxRejected as exc:
            return False, f"tx-{exc.reason}"
    return True, "ok"


def check_endorsements(block: Block, membership: Membership) -> tuple:
    """``(ok, reason, approvals)``: every endorsement must verify and quorum must hold."""
    schedule = membership.schedule_at(block.t)
    if schedule is None:
        return False, "no-schedule", 0
    atns = set(schedule.atns)
    signers = set()
    for e in block.endorsements:
        nid = membership.node_of(e.atn_pk)
        if nid is None or nid not in atns:
            return False, "endorser-not-atn", 0
        if nid in signers:
            return False, "duplicate-endorsement", 0
        if e.verdict != APPROVE:
            return False, "endorsement-not-approval", 0
        if not acct_verify(e.atn_pk, audit_result_message(e.verdict, e.reason, block.d_hash, e.t), e.sig):
            return False, "endorsement-signature-invalid", 0
        signers.add(nid)
    if len(signers) < quorum_size(len(atns)):
        return False, "quorum-not-met", len(signers)
    return True, "ok", len(signers)


class Chain:
    """Append-only replica of the committed chain."""

    def __init__(self, genesis: Block | None = None):
        self.blocks: list[Block] = [genesis or genesis_block()]
        self.committed: set = set()

    def __len__(self):
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    def hashes(self) -> list:
        return [b.hash for b in self.blocks]


def append_block(chain: Chain, block: Block, membership: Membership) -> None:
    ok, reason = validate_block(block, chain.tip, membership, chain.committed)
    if not ok:
        raise ValidationFailed(reason)
    ok, reason, _ = check_endorsements(block, membership)
    if not ok:
        if reason == "quorum-not-met":
            raise QuorumNotMet(reason)
        raise ValidationFailed(reason)
    chain.blocks.append(block)
    chain.committed.update(block.tx_ids())


def first_invalid_height(blocks: list, membership: Membership, cache: dict | None = None) -> int | None:
    """Height of the first block that fails validation, or ``None``.

    ``cache`` memoizes verdicts per ``(prev encoding, block encoding)`` so
    repeated verification of mostly unchanged chains stays cheap.
    """
    if not blocks:
        return None
    genesis = blocks[0]
    if genesis.height != 0 or genesis.prev_hash != ZERO_HASH or genesis.d_set or genesis.endorsements \
            or compute_d_hash((), genesis.t) != genesis.d_hash or genesis != genesis_block(genesis.t):
        return 0
    committed = set()
    for prev, block in zip(blocks, blocks[1:]):
        verdict = None
        if cache is not None:
            key = (prev.encode(), block.encode())
            verdict = cache.get(key)
        if verdict is None:
            ok, _ = validate_block(block, prev, membership)
            verdict = ok and check_endorsements(block, membership)[0]
            if cache is not None:
                cache[key] = verdict
        ids = block.tx_ids()
        if not verdict or committed.intersection(ids):
            return block.height
        committed.update(ids)
    return None


def chain_verify(chain, membership: Membership, cache: dict | None = None) -> bool:
    blocks = chain.blocks if isinstance(chain, Chain) else list(chain)
    return first_invalid_height(blocks, membership, cache) is None


def chain_dump_line(block: Block) -> str:
    return " ".join([
        str(block.height), block.prev_hash.hex(), block.d_hash.hex(), block.producer,
        str(len(block.endorsements)), str(len(block.d_set)), str(block.t),
    ])
