"""Credit-ranked delegated consensus.

The 30 highest-credit institutions produce blocks round-robin in 10 s
slots; the next 20 audit each candidate and the producer commits once
``ceil(0.51 * 20) = 11`` audit nodes approve. A registry node keeps the
credit table, applies rewards and penalties, and re-runs the election at
every 300 s cycle boundary, excluding nodes whose credit fell below the
threshold.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from . import ledger
from .emr import AccountKeyPair, AccountPublicKey, acct_sign, acct_verify, asym_decrypt, asym_encrypt
from .encoding import Reader, Writer
from .errors import ConfigurationError, DecryptionError, EmrShareError, SchedulingError, TxRejected
from .ledger import APPROVE, REJECT, Block, Chain, Endorsement, Membership, Schedule
from .netsim import Network

log = logging.getLogger(__name__)

N_RPN = 30
N_ATN = 20
SLOT_MS = 10_000
CYCLE_MS = N_RPN * SLOT_MS
TALLY_OFFSET = 5_000
CHECK_OFFSET = 9_000
REGISTRY = "registry"

REASONS = {
    "ok": 0, "bad-height": 1, "prev-hash-mismatch": 2, "timestamp-not-increasing": 3,
    "d-hash-mismatch": 4, "producer-not-scheduled": 5, "producer-signature-invalid": 6,
    "duplicate-tx": 7, "tx-admitted-after-block": 8, "unknown-parent": 9, "tx-invalid": 10,
    "byzantine": 11,
}


@dataclass(frozen=True)
class CreditConfig:
    initial: int = 100
    reward: int = 1
    miss_penalty: int = 5
    bad_audit_penalty: int = 10
    threshold: int = 50


@dataclass(frozen=True)
class CreditTable:
    scores: Mapping[str, int] = field(hash=False)
    threshold: int = 50

    def ranking(self) -> list:
        """Node ids by credit descending, id ascending on ties."""
        return sorted(self.scores, key=lambda nid: (-self.scores[nid], nid))

    def below_threshold(self) -> list:
        return sorted(nid for nid, s in self.scores.items() if s < self.threshold)

    def lines(self) -> list:
        return [f"{nid} {self.scores[nid]}" for nid in self.ranking()]


MISS = "slot-missed"
PRODUCED = "block-committed"
AUDIT_OK = "audit-correct"
AUDIT_BAD = "audit-incorrect"


@dataclass(frozen=True)
class CreditEvent:
    node: str
    kind: str


def update_credits(table: CreditTable, events: Iterable[CreditEvent],
                   config: CreditConfig = CreditConfig()) -> CreditTable:
    delta = {PRODUCED: config.reward, AUDIT_OK: config.reward,
             MISS: -config.miss_penalty, AUDIT_BAD: -config.bad_audit_penalty}
    scores = dict(table.scores)
    for ev in events:
        scores[ev.node] = max(0, scores[ev.node] + delta[ev.kind])
    return CreditTable(scores, table.threshold)


def elect(table: CreditTable, cycle_start: int = 0, exclude_below_threshold: bool = False,
          n_rpn: int = N_RPN, n_atn: int = N_ATN, slot_ms: int = SLOT_MS) -> Schedule:
    ranked = table.ranking()
    if exclude_below_threshold:
        ranked = [nid for nid in ranked if table.scores[nid] >= table.threshold]
    if len(ranked) < n_rpn + n_atn:
        raise ConfigurationError(f"need {n_rpn + n_atn} eligible nodes, have {len(ranked)}")
    return Schedule(cycle_start, tuple(ranked[:n_rpn]), tuple(ranked[n_rpn:n_rpn + n_atn]), slot_ms)


def cycle_readjust(table: CreditTable, schedule: Schedule, now: int) -> Schedule:
    """Fresh election for the cycle starting at ``now``, which must be a cycle boundary."""
    if now <= schedule.cycle_start or (now - schedule.cycle_start) % schedule.cycle_ms:
        raise SchedulingError(f"t={now} is not a cycle boundary")
    return elect(table, now, exclude_below_threshold=True, n_rpn=len(schedule.rpns),
                 n_atn=len(schedule.atns), slot_ms=schedule.slot_ms)


# -- audit replies ----------------------------------------------------------

@dataclass(frozen=True)
class AuditReply:
    ct: bytes


@dataclass(frozen=True)
class Vote:
    atn_pk: AccountPublicKey
    verdict: int
    reason: int
    t: int
    sig: bytes

    def endorsement(self) -> Endorsement:
        return Endorsement(self.atn_pk, self.verdict, self.reason, self.t, self.sig)


def audit(atn: AccountKeyPair, rec: Block, prev: Block | None, membership: Membership,
          rpn_pk: AccountPublicKey, now: int, rng: random.Random, committed=None,
          flip: bool = False) -> AuditReply:
    """Validate a candidate block and reply, encrypted to the producer.

    ``flip`` models a Byzantine auditor that inverts its honest verdict.
    """
    if prev is None:
        ok, reason = False, "unknown-parent"
    else:
        ok, reason = ledger.validate_block(rec, prev, membership, committed)
    if reason.startswith("tx-") and reason not in REASONS:
        reason = "tx-invalid"
    verdict = APPROVE if ok else REJECT
    code = REASONS[reason]
    if flip:
        verdict, code = 1 - verdict, REASONS["byzantine"]
    sig = acct_sign(atn, ledger.audit_result_message(verdict, code, rec.d_hash, now), rng)
    body = (Writer().raw(atn.pk.to_bytes()).u8(verdict).u8(code).i64(now).blob(sig)
            .i64(now).getvalue())
    return AuditReply(asym_encrypt(rpn_pk, body, rng))


def open_reply(rpn: AccountKeyPair, reply: AuditReply) -> Vote:
    params = rpn.params
    rd = Reader(asym_decrypt(rpn, reply.ct))
    pk = AccountPublicKey(params, int.from_bytes(rd.raw(params.byte_len), "big"))
    verdict, reason, t, sig, t_outer = rd.u8(), rd.u8(), rd.i64(), rd.blob(), rd.i64()
    rd.done()
    if t != t_outer:
        raise DecryptionError("reply timestamps disagree")
    return Vote(pk, verdict, reason, t, sig)


@dataclass(frozen=True)
class TallyResult:
    commit: bool
    endorsements: tuple
    votes: tuple
    approvals: int


def tally(replies: Iterable[AuditReply], rpn: AccountKeyPair, block: Block,
          membership: Membership) -> TallyResult:
    """Count verified approvals from distinct scheduled audit nodes."""
    schedule = membership.schedule_at(block.t)
    atns = set(schedule.atns) if schedule else set()
    votes = {}
    for reply in replies:
        try:
            vote = open_reply(rpn, reply)
        except (DecryptionError, EmrShareError, ValueError):
            continue
        nid = membership.node_of(vote.atn_pk)
        if nid not in atns or nid in votes:
            continue
        msg = ledger.audit_result_message(vote.verdict, vote.reason, block.d_hash, vote.t)
        if not acct_verify(vote.atn_pk, msg, vote.sig):
            continue
        votes[nid] = vote
    ordered = tuple(votes[nid] for nid in sorted(votes))
    endorsements = tuple(v.endorsement() for v in ordered if v.verdict == APPROVE)
    approvals = len(endorsements)
    return TallyResult(approvals >= ledger.quorum_size(len(atns)), endorsements, ordered, approvals)


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class TxSubmit:
    tx: object


@dataclass(frozen=True)
class SlotTick:
    t: int


@dataclass(frozen=True)
class TallyTick:
    d_hash: bytes


@dataclass(frozen=True)
class RecMsg:
    block: Block


@dataclass(frozen=True)
class ReplyMsg:
    d_hash: bytes
    reply: AuditReply


@dataclass(frozen=True)
class BlockMsg:
    block: Block


@dataclass(frozen=True)
class TallyReport:
    block: Block
    votes: tuple
    committed: bool


@dataclass(frozen=True)
class ScheduleMsg:
    schedule: Schedule


@dataclass(frozen=True)
class SlotCheck:
    t: int


@dataclass(frozen=True)
class CycleTick:
    t: int


@dataclass(frozen=True)
class SyncRequest:
    height: int


@dataclass(frozen=True)
class SyncResponse:
    blocks: tuple
    schedules: tuple


class Replica:
    """Chain replica with buffering for blocks that arrive ahead of their parent."""

    def __init__(self, node_id: str, membership: Membership, genesis: Block):
        self.id = node_id
        self.membership = membership
        self.chain = Chain(genesis)
        self._ahead: dict[int, Block] = {}
        self.on_commit = []

    def receive_block(self, block: Block) -> None:
        if block.height <= self.chain.height:
            return
        self._ahead[block.height] = block
        while self.chain.height + 1 in self._ahead:
            nxt = self._ahead.pop(self.chain.height + 1)
            try:
                ledger.append_block(self.chain, nxt, self.membership)
            except EmrShareError as exc:
                log.debug("%s rejected block %d: %s", self.id, nxt.height, exc)
                continue
            for cb in self.on_commit:
                cb(nxt)


class ConsensusNode(Replica):
    def __init__(self, node_id: str, keys: AccountKeyPair, net: Network, membership: Membership,
                 genesis: Block, rng: random.Random, byzantine_windows=()):
        super().__init__(node_id, membership, genesis)
        self.keys = keys
        self.net = net
        self.rng = rng
        self.mempool = ledger.Mempool()
        self.byzantine_windows = list(byzantine_windows)
        self._armed: set = set()
        self._pending: dict[bytes, Block] = {}
        self._replies: dict[bytes, list] = {}
        self.on_commit.append(self._prune_mempool)
        net.register(node_id, self.handle, on_recover=self.recover)

    def _prune_mempool(self, block: Block) -> None:
        self.mempool.discard(block.tx_ids())

    def arm(self, schedule: Schedule) -> None:
        for s, rpn in enumerate(schedule.rpns):
            t = schedule.slot_time(s)
            if rpn == self.id and t >= self.net.now and t not in self._armed:
                self._armed.add(t)
                self.net.timer(self.id, t, SlotTick(t))

    def start(self) -> None:
        for s in self.membership.schedules:
            self.arm(s)

    def recover(self) -> None:
        self.net.send(self.id, REGISTRY, SyncRequest(self.chain.height))

    def is_byzantine(self, t: int) -> bool:
        return any(lo <= t <= hi for lo, hi in self.byzantine_windows)

    def handle(self, ev) -> None:
        msg, now = ev.payload, ev.deliver_at
        if isinstance(msg, TxSubmit):
            try:
                ledger.submit_tx(msg.tx, self.mempool, now)
            except TxRejected:
                pass
        elif isinstance(msg, SlotTick):
            self._produce(msg.t)
        elif isinstance(msg, RecMsg):
            self._audit(msg.block, ev.source, now)
        elif isinstance(msg, ReplyMsg):
            if msg.d_hash in self._pending:
                self._replies[msg.d_hash].append(msg.reply)
        elif isinstance(msg, TallyTick):
            self._tally(msg.d_hash)
        elif isinstance(msg, BlockMsg):
            self.receive_block(msg.block)
        elif isinstance(msg, ScheduleMsg):
            self.membership.add_schedule(msg.schedule)
            self.arm(msg.schedule)
        elif isinstance(msg, SyncResponse):
            for s in msg.schedules:
                self.membership.add_schedule(s)
                self.arm(s)
            for b in msg.blocks:
                self.receive_block(b)

    def _produce(self, t: int) -> None:
        schedule = self.membership.schedule_at(t)
        if schedule is None or schedule.producer_at(t) != self.id:
            return
        block = ledger.build_block(self.id, self.keys, self.mempool, self.chain.tip, t, self.rng,
                                   self.chain.committed)
        self._pending[block.d_hash] = block
        self._replies[block.d_hash] = []
        self.net.broadcast(self.id, RecMsg(block), targets=schedule.atns)
        self.net.timer(self.id, t + TALLY_OFFSET, TallyTick(block.d_hash))

    def _audit(self, block: Block, src: str, now: int) -> None:
        schedule = self.membership.schedule_at(block.t)
        if schedule is None or self.id not in schedule.atns:
            return
        producer_pk = self.membership.pks.get(block.producer)
        if producer_pk is None or src != block.producer:
            return
        prev = self.chain.tip if self.chain.height == block.height - 1 else None
        reply = audit(self.keys, block, prev, self.membership, producer_pk, now, self.rng,
                      self.chain.committed, flip=self.is_byzantine(now))
        self.net.send(self.id, block.producer, ReplyMsg(block.d_hash, reply))

    def _tally(self, d_hash: bytes) -> None:
        block = self._pending.pop(d_hash)
        result = tally(self._replies.pop(d_hash), self.keys, block, self.membership)
        if result.commit:
            block = replace(block, endorsements=result.endorsements)
            self.receive_block(block)
            self.net.broadcast(self.id, BlockMsg(block))
        self.net.send(self.id, REGISTRY, TallyReport(block, result.votes, result.commit))


class Registry(Replica):
    """Consortium registrar: credit accounting, elections, and replica sync service."""

    def __init__(self, net: Network, membership: Membership, genesis: Block, table: CreditTable,
                 config: CreditConfig = CreditConfig()):
        super().__init__(REGISTRY, membership, genesis)
        self.net = net
        self.table = table
        self.config = config
        self.reports: dict[int, TallyReport] = {}
        self.trace: list[str] = []
        self.credit_history: list[tuple] = []
        net.register(REGISTRY, self.handle)
        self.on_commit.append(lambda b: self.trace.append(
            f"{self.net.now} commit height={b.height} t={b.t} producer={b.producer} "
            f"txs={len(b.d_set)} approvals={len(b.endorsements)}"))

    def start(self) -> None:
        for s in self.membership.schedules:
            self._arm(s)

    def _arm(self, schedule: Schedule) -> None:
        for s in range(len(schedule.rpns)):
            self.net.timer(REGISTRY, schedule.slot_time(s) + CHECK_OFFSET, SlotCheck(schedule.slot_time(s)))
        self.net.timer(REGISTRY, schedule.cycle_start + schedule.cycle_ms,
                       CycleTick(schedule.cycle_start + schedule.cycle_ms))

    def _apply(self, events: list) -> None:
        if not events:
            return
        self.table = update_credits(self.table, events, self.config)
        for ev in events:
            self.trace.append(f"{self.net.now} credit {ev.node} {ev.kind} -> {self.table.scores[ev.node]}")
            self.credit_history.append((self.net.now, ev.node, ev.kind, self.table.scores[ev.node]))

    def handle(self, ev) -> None:
        msg = ev.payload
        if isinstance(msg, BlockMsg):
            self.receive_block(msg.block)
        elif isinstance(msg, TallyReport):
            self._report(msg, ev.source)
        elif isinstance(msg, SlotCheck):
            self._check_slot(msg.t)
        elif isinstance(msg, CycleTick):
            self._readjust(msg.t)
        elif isinstance(msg, SyncRequest):
            blocks = tuple(self.chain.blocks[msg.height + 1:])
            self.net.send(REGISTRY, ev.source, SyncResponse(blocks, tuple(self.membership.schedules)))
        # TxSubmit and timers for other roles are ignored

    def _objective_validity(self, block: Block) -> bool:
        if not 0 < block.height <= len(self.chain):
            return False
        prev = self.chain.blocks[block.height - 1]
        committed = {tid for b in self.chain.blocks[1:block.height] for tid in b.tx_ids()}
        return ledger.validate_block(block, prev, self.membership, committed)[0]

    def _report(self, report: TallyReport, src: str) -> None:
        block = report.block
        schedule = self.membership.schedule_at(block.t)
        if schedule is None or schedule.producer_at(block.t) != src or src != block.producer:
            return
        if block.t in self.reports:
            return
        self.reports[block.t] = report
        valid = self._objective_validity(block)
        events = []
        for vote in report.votes:
            nid = self.membership.node_of(vote.atn_pk)
            msg = ledger.audit_result_message(vote.verdict, vote.reason, block.d_hash, vote.t)
            if nid not in schedule.atns or not acct_verify(vote.atn_pk, msg, vote.sig):
                continue
            correct = (vote.verdict == APPROVE) == valid
            events.append(CreditEvent(nid, AUDIT_OK if correct else AUDIT_BAD))
        self._apply(events)

    def _check_slot(self, t: int) -> None:
        schedule = self.membership.schedule_at(t)
        producer = schedule.producer_at(t)
        committed = any(b.t == t and b.producer == producer for b in self.chain.blocks[1:][-N_RPN:])
        report = self.reports.get(t)
        if committed:
            self._apply([CreditEvent(producer, PRODUCED)])
        elif report is not None and self._objective_validity(report.block):
            # valid block that failed quorum: not the producer's fault
            self.trace.append(f"{self.net.now} no-quorum slot={t} producer={producer}")
        else:
            self.trace.append(f"{self.net.now} miss slot={t} producer={producer}")
            self._apply([CreditEvent(producer, MISS)])

    def _readjust(self, t: int) -> None:
        current = self.membership.schedule_at(t - 1)
        try:
            nxt = cycle_readjust(self.table, current, t)
        except ConfigurationError:
            # too few nodes above threshold to fill every seat: rank everyone
            nxt = elect(self.table, t, n_rpn=len(current.rpns), n_atn=len(current.atns), slot_ms=current.slot_ms)
            self.trace.append(f"{t} readjust-short below_threshold={','.join(self.table.below_threshold())}")
        self.membership.add_schedule(nxt)
        self.trace.append(f"{t} readjust cycle_start={t} rpns={','.join(nxt.rpns)} atns={','.join(nxt.atns)}")
        for nid in sorted(self.membership.pks):
            self.net.control(REGISTRY, nid, ScheduleMsg(nxt))
        self._arm(nxt)


class Consortium:
    """Registry plus consensus nodes wired onto one simulated network."""

    def __init__(self, net: Network, node_keys: Mapping[str, AccountKeyPair],
                 credits: Mapping[str, int] | None = None, config: CreditConfig = CreditConfig(),
                 byzantine: Mapping[str, list] | None = None, genesis_t: int = 0):
        self.net = net
        if len(node_keys) < N_RPN + N_ATN:
            raise ConfigurationError(f"need at least {N_RPN + N_ATN} nodes, got {len(node_keys)}")
        scores = {nid: (credits or {}).get(nid, config.initial) for nid in node_keys}
        table = CreditTable(scores, config.threshold)
        schedule = elect(table, genesis_t)
        pks = {nid: k.pk for nid, k in node_keys.items()}
        genesis = ledger.genesis_block(genesis_t)
        self.registry = Registry(net, Membership(pks, [schedule]), genesis, table, config)
        self.nodes: dict[str, ConsensusNode] = {}
        for nid in sorted(node_keys):
            rng = random.Random(f"{net.config.seed}/{nid}")
            self.nodes[nid] = ConsensusNode(nid, node_keys[nid], net, Membership(pks, [schedule]),
                                            genesis, rng, (byzantine or {}).get(nid, ()))

    def start(self) -> None:
        self.registry.start()
        for node in self.nodes.values():
            node.start()

    def submit(self, tx, at: int) -> None:
        for nid in self.nodes:
            self.net.control("client", nid, TxSubmit(tx), at=at)

    @property
    def chain(self) -> Chain:
        return self.registry.chain

    def replicas(self) -> list:
        return [self.registry, *self.nodes.values()]

    def prefix_consistent(self) -> bool:
        """True iff every replica's chain is a prefix of the longest one."""
        longest = max(self.replicas(), key=lambda r: r.chain.height).chain
        for r in self.replicas():
            tip = r.chain.tip
            if longest.blocks[tip.height].hash != tip.hash:
                return False
        return True
