"""End-to-end record sharing driven by a :class:`~emrshare.scenario.Scenario`.

Phases run in timeline order on one simulated clock: setup, acquisition
(doctor signs, patient opens and extracts), storing in the cloud, release
to the chain, and sharing through the patients' contracts. Contracts run
inside the registry's commit path, so a request is evaluated only once its
transaction is on chain.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

from . import ces, ledger
from .cloud import AttributeKey, CloudStore
from .consensus import Consortium, CreditConfig
from .contract import (Denial, PermissionGrant, deposit_index, handle_request,
                       new_contract, on_release_committed, open_message, revoke, set_permissions)
from .emr import (AccountKeyPair, EmrDocument, build_index, new_sym_key, open_info, package_info)
from .errors import AccessDenied, NotReleasedError
from .netsim import Network, NetConfig
from .scenario import Scenario

log = logging.getLogger(__name__)

# same-time timeline events run in this order
_PHASES = ("visit", "release", "grant", "revoke", "request")


@dataclass
class Actor:
    name: str
    role: str
    keys: AccountKeyPair
    ces_keys: ces.CesKeyPair | None = None
    attr_key: AttributeKey | None = None


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'ok' if self.ok else 'FAIL'} {self.name} {self.detail}".rstrip()


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    params: ces.GroupParams
    actors: dict
    node_keys: dict
    net: Network
    consortium: Consortium
    cloud: CloudStore
    contracts: dict
    outcomes: list = field(default_factory=list)
    verifications: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def chain(self) -> ledger.Chain:
        return self.consortium.chain


class _Holding:
    """Parts a user has retrieved under one extracted signature."""

    def __init__(self, esig, signer):
        self.esig = esig
        self.signer = signer
        self.parts: dict[int, bytes] = {}
        self.done = False


class Runner:
    def __init__(self, scenario: Scenario, seed: int | None = None, profile: str | None = None):
        self.sc = scenario
        self.seed = scenario.seed if seed is None else seed
        self.params = ces.group_profile(profile or scenario.profile)
        rng = random.Random(f"{self.seed}/actors")
        self.rng = random.Random(f"{self.seed}/workflow")

        self.actors: dict[str, Actor] = {}
        for name in scenario.doctors:
            self.actors[name] = Actor(name, "doctor", AccountKeyPair.generate(self.params, rng, "doctor"),
                                      ces_keys=ces.keygen(self.params, rng))
        for name in scenario.patients:
            self.actors[name] = Actor(name, "patient", AccountKeyPair.generate(self.params, rng, "patient"))
        for name, attrs in scenario.users.items():
            keys = AccountKeyPair.generate(self.params, rng, "user")
            self.actors[name] = Actor(name, "user", keys, attr_key=AttributeKey(keys.account_id, frozenset(attrs)))
        self._by_account = {a.keys.account_id: a for a in self.actors.values()}

        node_rng = random.Random(f"{self.seed}/nodes")
        self.node_keys = {f"n{i:02d}": AccountKeyPair.generate(self.params, node_rng, "node")
                          for i in range(scenario.node_count)}

        net_cfg = scenario.net
        self.net = Network(NetConfig(self.seed, net_cfg.base_delay, net_cfg.jitter, net_cfg.drop_rate))
        byzantine: dict[str, list] = {}
        for d in scenario.faults:
            if d.action == "byzantine-audit":
                byzantine.setdefault(d.node, []).append((d.t, d.until))
        config = CreditConfig(initial=scenario.initial_credit, **scenario.credit_config)
        self.consortium = Consortium(self.net, self.node_keys, scenario.node_credits, config, byzantine)
        self.net.apply_faults([d for d in scenario.faults if d.action != "byzantine-audit"])

        self.cloud = CloudStore(random.Random(f"{self.seed}/cloud"), self.net.clock)
        self.contracts = {}
        for name in scenario.patients:
            patient = self.actors[name]
            self.contracts[patient.keys.account_id] = new_contract(patient.keys, self.rng)

        # patient name -> part -> (index, release-ready data)
        self.indexes: dict[str, dict] = {name: {} for name in scenario.patients}
        self.holdings: dict[tuple, _Holding] = {}
        self.result = RunResult(scenario, self.seed, self.params, self.actors, self.node_keys, self.net,
                                self.consortium, self.cloud, self.contracts)
        self.consortium.registry.on_commit.append(self._on_commit)

    # -- outcome recording ---------------------------------------------------

    def _outcome(self, *fields) -> None:
        self.result.outcomes.append(" ".join(str(f) for f in (self.net.now, *fields)))

    # -- phases ----------------------------------------------------------------

    def _visit(self, v) -> None:
        doctor, patient = self.actors[v.doctor], self.actors[v.patient]
        emr = EmrDocument.from_fields(**v.record)
        tag = ces.CesTag.random(self.rng)
        sig = ces.sign(doctor.ces_keys, emr.parts, self.sc.ceas, tag, self.rng)
        hs = ces.digests(emr.parts, self.sc.ceas, tag, self.params)
        envelope = package_info(new_sym_key(self.rng), patient.keys.pk, emr, hs, sig, self.sc.ceas, tag,
                                self.rng, signer=doctor.ces_keys.public)

        emr2, hs2, sig2, _, tag2 = open_info(patient.keys, envelope)
        signer = doctor.ces_keys.public
        if not ces.verify_full(signer, emr2.parts, sig2):
            self._outcome("visit", v.patient, "signature-invalid")
            return
        _, esig = ces.extract(signer, emr2.parts, sig2, v.extract)
        owner = patient.keys.account_id
        for i in esig.ci:
            url = self.cloud.store(owner, i, emr2.part(i), hs2[i - 1], tag2, v.policy, esig)
            index = build_index(url, hs2[i - 1], self.net.clock)
            self.indexes[v.patient][i] = (index, signer)
        self._outcome("visit", v.doctor, v.patient, "stored=" + ",".join(map(str, esig.ci)))

    def _release(self, r) -> None:
        patient = self.actors[r.patient]
        contract = self.contracts[patient.keys.account_id]
        for i in r.parts:
            entry = self.indexes[r.patient].get(i)
            if entry is None:
                self._outcome("release", r.patient, i, "not-stored")
                continue
            tx = ledger.make_release_tx(patient.keys, entry[0], self.net.now, self.rng)
            deposit_index(contract, i, entry[0], tx, self.rng)
            self.consortium.submit(tx, self.net.now)
            self._outcome("release", r.patient, i, "submitted", ledger.tx_id(tx).hex()[:16])

    def _grant(self, g) -> None:
        patient, user = self.actors[g.patient], self.actors[g.grantee]
        grant = PermissionGrant(user.keys.account_id, g.parts, g.actions, g.valid_from, g.valid_until)
        set_permissions(patient.keys, self.contracts[patient.keys.account_id], [grant], self.net.now, self.rng)

    def _revoke(self, r) -> None:
        patient, user = self.actors[r.patient], self.actors[r.grantee]
        revoke(patient.keys, self.contracts[patient.keys.account_id], user.keys.account_id, self.net.now, self.rng)

    def _request(self, q) -> None:
        user, patient = self.actors[q.user], self.actors[q.patient]
        for i in q.parts:
            tx = ledger.make_access_tx(user.keys, patient.keys.account_id, i, q.action, self.net.now, self.rng)
            self.consortium.submit(tx, self.net.now)
            self._outcome("request", q.user, q.patient, i, q.action, "submitted", ledger.tx_id(tx).hex()[:16])

    # -- commit path -----------------------------------------------------------

    def _on_commit(self, block: ledger.Block) -> None:
        for tx, _ in block.d_set:
            if isinstance(tx, ledger.ReleaseTx):
                contract = self.contracts.get(tx.sender)
                if contract is not None and on_release_committed(contract, tx):
                    self._outcome("released", tx.sender, f"height={block.height}")
            elif isinstance(tx, ledger.AccessTx):
                self._run_contract(tx, block)

    def _run_contract(self, tx: ledger.AccessTx, block: ledger.Block) -> None:
        user = self._by_account.get(tx.requester)
        contract = self.contracts.get(tx.obj)
        if user is None or contract is None:
            return
        try:
            out = handle_request(contract, tx, tx.requester_pk, self.net.now, self.rng,
                                 recorded=self.consortium.chain.committed)
        except NotReleasedError:
            self._outcome("contract", user.name, tx.obj, tx.i, "not-released")
            return
        if isinstance(out, Denial):
            self._outcome("contract", user.name, tx.obj, tx.i, "denied", out.reason)
            return
        self._outcome("contract", user.name, tx.obj, tx.i, "granted")
        index, _ = open_message(user.keys, out)
        try:
            m_i, h_i, tag, esig = self.cloud.retrieve(index.url, user.attr_key)
        except AccessDenied:
            self._outcome("cloud", user.name, index.url, "denied")
            return
        if h_i != index.h:
            self._outcome("cloud", user.name, index.url, "digest-mismatch")
            return
        self._outcome("cloud", user.name, index.url, "retrieved")
        signer = self._signer_for(tx.obj, tx.i)
        key = (user.name, tx.obj, esig.to_bytes())
        holding = self.holdings.setdefault(key, _Holding(esig, signer))
        holding.parts[tx.i] = m_i
        if not holding.done and set(holding.parts) >= set(esig.ci):
            holding.done = True
            m_prime = {i: holding.parts[i] for i in esig.ci}
            ok = ces.verify_extracted(signer, m_prime, esig)
            parts = ",".join(map(str, esig.ci))
            self.result.verifications.append((user.name, tx.obj, esig.ci, ok))
            self._outcome("verify-extracted", user.name, tx.obj, f"parts={parts}", "true" if ok else "false")

    def _signer_for(self, account: str, i: int):
        patient = self._by_account[account].name
        return self.indexes[patient][i][1]

    # -- driver ----------------------------------------------------------------

    def timeline(self) -> list:
        sc = self.sc
        groups = [sc.visits, sc.releases, sc.grants, sc.revocations, sc.requests]
        events = []
        for rank, (phase, items) in enumerate(zip(_PHASES, groups)):
            for k, item in enumerate(items):
                events.append((item.t, rank, k, phase, item))
        events.sort(key=lambda e: e[:3])
        return events

    def run(self) -> RunResult:
        handlers = {"visit": self._visit, "release": self._release, "grant": self._grant,
                    "revoke": self._revoke, "request": self._request}
        self.consortium.start()
        for t, _, _, phase, item in self.timeline():
            if t > self.sc.duration:
                break
            self.net.advance_to(t)
            handlers[phase](item)
        self.net.run_until(self.sc.duration)
        self.result.checks = run_checks(self.result)
        return self.result


def run_checks(result: RunResult) -> list:
    """Internal invariants evaluated after a run; each is named in the output."""
    checks = []
    chain = result.chain
    registry = result.consortium.registry
    bad = ledger.first_invalid_height(chain.blocks, registry.membership)
    checks.append(CheckResult("chain-verify", bad is None, "" if bad is None else f"height={bad}"))
    checks.append(CheckResult("replica-prefix-consistency", result.consortium.prefix_consistent()))

    times = [b.t for b in chain.blocks[1:]]
    aligned = all(t % registry.membership.schedule_at(t).slot_ms == 0 for t in times)
    checks.append(CheckResult("block-times-on-slots", aligned))

    log_entries = result.cloud.audit_log()
    ordered = all((a.t, a.seq) < (b.t, b.seq) for a, b in zip(log_entries, log_entries[1:]))
    checks.append(CheckResult("access-log-ordered", ordered))

    committed = chain.committed
    unrecorded = []
    for contract in result.contracts.values():
        for e in contract.execution_log:
            if e.op == "request" and e.outcome == "granted":
                tid = bytes.fromhex(e.detail.rsplit("tx=", 1)[1])
                if tid not in committed:
                    unrecorded.append(tid.hex()[:16])
    checks.append(CheckResult("grants-recorded-on-chain", not unrecorded, " ".join(unrecorded)))

    # a denial carries no index, so retrievals can never outnumber grants
    leaks = []
    for user in sorted(a.name for a in result.actors.values() if a.role == "user"):
        granted = sum(1 for o in result.outcomes if o.split()[1:3] == ["contract", user] and o.endswith(" granted"))
        fetched = sum(1 for o in result.outcomes if o.split()[1:3] == ["cloud", user] and o.endswith(" retrieved"))
        if fetched > granted:
            leaks.append(f"{user}:{fetched}>{granted}")
    checks.append(CheckResult("no-index-without-grant", not leaks, " ".join(leaks)))

    failed = [f"{u}:{o}" for u, o, _, ok in result.verifications if not ok]
    checks.append(CheckResult("extracted-signatures-verify", not failed, " ".join(failed)))

    checks.extend(_expectations(result))
    return checks


def _expectations(result: RunResult) -> list:
    exp = result.scenario.expect
    out = []
    granted = sum(1 for o in result.outcomes if o.split()[1] == "contract" and o.split()[-1] == "granted")
    denied = sum(1 for o in result.outcomes if o.split()[1] == "contract" and "denied" in o.split())
    if "verified" in exp:
        got = bool(result.verifications) and all(v[3] for v in result.verifications)
        out.append(CheckResult("expect-verified", got == exp["verified"], f"got={got}"))
    if "granted" in exp:
        out.append(CheckResult("expect-granted", granted == exp["granted"], f"got={granted}"))
    if "denied" in exp:
        out.append(CheckResult("expect-denied", denied == exp["denied"], f"got={denied}"))
    if "min_height" in exp:
        h = result.chain.height
        out.append(CheckResult("expect-min-height", h >= exp["min_height"], f"got={h}"))
    return out


def run_scenario(scenario: Scenario, seed: int | None = None, profile: str | None = None) -> RunResult:
    return Runner(scenario, seed, profile).run()
