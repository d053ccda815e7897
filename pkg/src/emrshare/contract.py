"""Patient-controlled permission contracts.

A contract holds the patient's grants and a vault of released indexes.
Indexes are re-encrypted by the patient to a per-contract delegate key, so
the contract never holds the patient's own private key. A covered request
yields the index encrypted to the requester; anything else yields a denial
that carries no index material.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace

from . import ces
from .emr import AccountKeyPair, AccountPublicKey, EmrIndex, acct_sign, acct_verify, asym_decrypt, asym_encrypt
from .encoding import Reader, Writer
from .errors import AuthorizationError, NotReleasedError, ParameterError
from .ledger import ACTIONS, AccessTx, ReleaseTx, tx_id

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PermissionGrant:
    grantee: str
    part_indices: frozenset
    actions: frozenset
    valid_from: int
    valid_until: int
    revoked: bool = False

    def __post_init__(self):
        object.__setattr__(self, "part_indices", frozenset(self.part_indices))
        object.__setattr__(self, "actions", frozenset(self.actions))
        if not self.part_indices:
            raise ParameterError("grant must cover at least one part")
        if not self.part_indices <= set(ces.PART_RANGE):
            raise ParameterError("grant part indices must lie in [1, 7]")
        if not self.actions <= set(ACTIONS):
            raise ParameterError(f"actions must be drawn from {ACTIONS}")
        if not self.valid_from < self.valid_until:
            raise ParameterError("valid_from must precede valid_until")

    def covers(self, requester: str, i: int, action: str, t: int) -> bool:
        # window is inclusive at both ends
        return (not self.revoked and self.grantee == requester and i in self.part_indices
                and action in self.actions and self.valid_from <= t <= self.valid_until)

    def encode(self) -> bytes:
        w = Writer().text(self.grantee)
        w.text(",".join(str(i) for i in sorted(self.part_indices)))
        w.text(",".join(sorted(self.actions))).i64(self.valid_from).i64(self.valid_until)
        return w.getvalue()


@dataclass(frozen=True)
class Denial:
    reason: str
    t: int


@dataclass(frozen=True)
class LogEntry:
    t: int
    op: str
    actor: str
    detail: str
    outcome: str

    def line(self) -> str:
        return f"{self.t} {self.op} {self.actor} {self.detail} {self.outcome}"


@dataclass
class ContractState:
    patient: str
    patient_pk: AccountPublicKey
    delegate: AccountKeyPair
    grants: list = field(default_factory=list)
    index_vault: dict = field(default_factory=dict)
    execution_log: list = field(default_factory=list)
    pending: dict = field(default_factory=dict)

    @property
    def contract_id(self) -> str:
        return self.patient

    def _log(self, t, op, actor, detail, outcome):
        self.execution_log.append(LogEntry(t, op, actor, detail, outcome))

    def log_lines(self) -> list:
        return [e.line() for e in self.execution_log]


def new_contract(patient: AccountKeyPair, rng: random.Random) -> ContractState:
    delegate = AccountKeyPair.generate(patient.params, rng, "patient")
    return ContractState(patient.account_id, patient.pk, delegate)


def _grants_message(op: str, contract: ContractState, payload: bytes, now: int) -> bytes:
    return Writer().text(op).text(contract.contract_id).blob(payload).i64(now).getvalue()


def _authorize(caller: AccountKeyPair, contract: ContractState, op: str, payload: bytes,
               now: int, rng: random.Random) -> None:
    msg = _grants_message(op, contract, payload, now)
    sig = acct_sign(caller, msg, rng)
    if not acct_verify(contract.patient_pk, msg, sig):
        contract._log(now, op, caller.account_id, "-", "unauthorized")
        raise AuthorizationError(f"{caller.account_id} is not the patient of {contract.contract_id}")


def set_permissions(caller: AccountKeyPair, contract: ContractState, grants, now: int,
                    rng: random.Random, replace_all: bool = False) -> None:
    """Add grants (or replace them all). Overlapping grants combine as a union."""
    grants = list(grants)
    payload = b"".join(g.encode() for g in grants)
    _authorize(caller, contract, "set-permissions", payload, now, rng)
    if replace_all:
        contract.grants = grants
    else:
        contract.grants.extend(grants)
    detail = ";".join(f"{g.grantee}:{''.join(map(str, sorted(g.part_indices)))}" for g in grants) or "-"
    contract._log(now, "set-permissions", caller.account_id, detail, "ok")


def revoke(caller: AccountKeyPair, contract: ContractState, grantee: str, now: int,
           rng: random.Random) -> None:
    _authorize(caller, contract, "revoke", grantee.encode(), now, rng)
    if not any(g.grantee == grantee for g in contract.grants):
        log.warning("revoke for unknown grantee %s on %s", grantee, contract.contract_id)
        contract._log(now, "revoke", caller.account_id, grantee, "unknown-grantee")
        return
    contract.grants = [replace(g, revoked=True) if g.grantee == grantee else g for g in contract.grants]
    contract._log(now, "revoke", caller.account_id, grantee, "ok")


def deposit_index(contract: ContractState, part: int, index: EmrIndex, release_tx: ReleaseTx,
                  rng: random.Random) -> None:
    """Patient side: stage ``index`` for the vault until ``release_tx`` commits."""
    if index.hash() != release_tx.index_hash:
        raise ParameterError("index does not match the release transaction")
    ct = asym_encrypt(contract.delegate.pk, index.to_bytes(), rng)
    contract.pending[release_tx.index_hash] = (part, ct)


def on_release_committed(contract: ContractState, tx: ReleaseTx) -> bool:
    """Move a staged index into the vault once its release is on chain."""
    staged = contract.pending.pop(tx.index_hash, None)
    if staged is None or tx.patient_pk != contract.patient_pk:
        return False
    part, ct = staged
    contract.index_vault[part] = (ct, tx_id(tx))
    return True


def covering_grant(contract: ContractState, requester: str, i: int, action: str, t: int):
    for g in contract.grants:
        if g.covers(requester, i, action, t):
            return g
    return None


def handle_request(contract: ContractState, req: AccessTx, requester_pk: AccountPublicKey,
                   now: int, rng: random.Random, recorded: set | None = None):
    """Evaluate ``req`` at time ``now``.

    Returns the ciphertext of ``Index_i || t`` under the requester's key, or a
    :class:`Denial`. ``recorded`` is the set of committed tx ids; when given,
    the request must be among them.
    """
    requester = requester_pk.account_id
    tid = tx_id(req)
    detail = f"obj={req.obj} i={req.i} action={req.action} tx={tid.hex()}"

    def deny(reason):
        contract._log(now, "request", requester, detail, f"denied:{reason}")
        return Denial(reason, now)

    if recorded is not None and tid not in recorded:
        return deny("not-recorded")
    if req.requester_pk != requester_pk:
        return deny("requester-mismatch")
    if req.obj != contract.contract_id:
        return deny("wrong-object")
    if covering_grant(contract, requester, req.i, req.action, now) is None:
        return deny("no-covering-grant")
    entry = contract.index_vault.get(req.i)
    if entry is None:
        contract._log(now, "request", requester, detail, "error:not-released")
        raise NotReleasedError(f"part {req.i} of {contract.contract_id} has not been released")
    index_bytes = asym_decrypt(contract.delegate, entry[0])
    message = asym_encrypt(requester_pk, Writer().blob(index_bytes).i64(now).getvalue(), rng)
    contract._log(now, "request", requester, detail, "granted")
    return message


def open_message(user: AccountKeyPair, message: bytes) -> tuple:
    """Requester side: returns ``(index, t)``."""
    rd = Reader(asym_decrypt(user, message))
    index = EmrIndex.from_bytes(rd.blob())
    t = rd.i64()
    rd.done()
    return index, t
