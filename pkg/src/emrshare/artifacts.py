"""Artifact directory: writing a run's dumps, and offline inspect/verify.

Every file is line-delimited text with a stable field order, so two runs
of one scenario and seed produce byte-identical directories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import ledger
from .ces import GroupParams
from .cloud import parse_dump_line
from .emr import AccountPublicKey
from .errors import EmrShareError
from .ledger import Membership, Schedule

PARAMS = "params.txt"
ROSTER = "roster.txt"
MEMBERSHIP = "membership.txt"
BLOCKS = "blocks.hex"
CHAIN = "chain.txt"
ACCESS_LOG = "access_log.txt"
STORE = "store.txt"
EXECUTION_LOG = "execution_log.txt"
CREDITS = "credits.txt"
TRACE = "trace.txt"
CONSENSUS_TRACE = "consensus_trace.txt"
OUTCOMES = "outcomes.txt"
CHECKS = "checks.txt"

ALL_FILES = (PARAMS, ROSTER, MEMBERSHIP, BLOCKS, CHAIN, ACCESS_LOG, STORE, EXECUTION_LOG,
             CREDITS, TRACE, CONSENSUS_TRACE, OUTCOMES, CHECKS)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVARIANT = 3
EXIT_MISSING = 4


class MissingArtifact(EmrShareError):
    pass


def _write(path: Path, lines) -> None:
    path.write_text("".join(f"{line}\n" for line in lines))


def flip_bit(data: bytes, byte: int, bit: int) -> bytes:
    if not 0 <= byte < len(data) or not 0 <= bit < 8:
        raise EmrShareError(f"cannot flip bit {bit} of byte {byte} in a {len(data)}-byte record")
    out = bytearray(data)
    out[byte] ^= 1 << bit
    return bytes(out)


def write_artifacts(result, out_dir) -> Path:
    """Write every dump for ``result`` (a :class:`~emrshare.workflow.RunResult`)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = result.scenario
    registry = result.consortium.registry

    _write(out / PARAMS, [
        f"scenario {sc.name}",
        f"seed {result.seed}",
        f"p {result.params.p:x}",
        f"g {result.params.g:x}",
        f"ceas {','.join(map(str, sc.ceas.mandatory))}",
        f"duration {sc.duration}",
    ])
    roster = [f"node {nid} {k.pk.y:x}" for nid, k in sorted(result.node_keys.items())]
    roster += [f"{a.role} {a.name} {a.keys.account_id} {a.keys.pk.y:x}"
               for a in sorted(result.actors.values(), key=lambda a: (a.role, a.name))]
    _write(out / ROSTER, roster)
    _write(out / MEMBERSHIP, [s.line() for s in registry.membership.schedules])

    encodings = [b.encode() for b in result.chain.blocks]
    if sc.tamper is not None:
        h = sc.tamper.height
        if not 0 <= h < len(encodings):
            raise EmrShareError(f"tamper height {h} beyond chain height {len(encodings) - 1}")
        encodings[h] = flip_bit(encodings[h], sc.tamper.byte, sc.tamper.bit)
    _write(out / BLOCKS, [e.hex() for e in encodings])
    _write(out / CHAIN, [ledger.chain_dump_line(b) for b in result.chain.blocks])

    _write(out / ACCESS_LOG, result.cloud.log_lines())
    _write(out / STORE, result.cloud.dump_lines())
    _write(out / EXECUTION_LOG, [f"{cid} {line}" for cid, c in sorted(result.contracts.items())
                                 for line in c.log_lines()])
    _write(out / CREDITS, registry.table.lines())
    _write(out / TRACE, result.net.trace)
    _write(out / CONSENSUS_TRACE, registry.trace)
    _write(out / OUTCOMES, result.outcomes)
    _write(out / CHECKS, [c.line() for c in result.checks])
    return out


# -- offline reading ------------------------------------------------------------

def _read(art_dir: Path, name: str) -> list:
    path = art_dir / name
    if not path.is_file():
        raise MissingArtifact(f"missing artifact {name}")
    return path.read_text().splitlines()


def load_params(art_dir: Path) -> GroupParams:
    fields = dict(line.split(" ", 1) for line in _read(art_dir, PARAMS))
    return GroupParams(int(fields["p"], 16), int(fields["g"], 16))


def load_membership(art_dir: Path, params: GroupParams) -> Membership:
    pks = {}
    for line in _read(art_dir, ROSTER):
        kind, name, *rest = line.split()
        if kind == "node":
            pks[name] = AccountPublicKey(params, int(rest[0], 16))
    return Membership(pks, [Schedule.from_line(line) for line in _read(art_dir, MEMBERSHIP)])


def account_names(art_dir: Path) -> dict:
    """Account id -> actor name, from the roster."""
    out = {}
    for line in _read(art_dir, ROSTER):
        kind, name, *rest = line.split()
        if kind != "node":
            out[rest[0]] = name
    return out


@dataclass
class VerifyReport:
    code: int
    lines: list = field(default_factory=list)
    first_invalid_height: int | None = None


def verify_dir(art_dir, cache: dict | None = None) -> VerifyReport:
    """Re-check a written run offline: chain validity, dump consistency, cross-module links."""
    art_dir = Path(art_dir)
    missing = [n for n in ALL_FILES if not (art_dir / n).is_file()]
    if missing:
        return VerifyReport(EXIT_MISSING, [f"missing artifact {n}" for n in missing])
    rep = VerifyReport(EXIT_OK)

    def fail(msg):
        rep.code = EXIT_INVARIANT
        rep.lines.append(f"FAIL {msg}")

    try:
        params = load_params(art_dir)
        membership = load_membership(art_dir, params)
    except (ValueError, KeyError, EmrShareError) as exc:
        fail(f"roster-or-params unreadable: {exc}")
        return rep

    blocks, bad = [], None
    for height, line in enumerate(_read(art_dir, BLOCKS)):
        try:
            block = ledger.decode_block(bytes.fromhex(line), params)
        except (ValueError, EmrShareError):
            bad = height
            break
        if block.height != height:
            bad = height
            break
        blocks.append(block)
    checked = ledger.first_invalid_height(blocks, membership, cache)
    if checked is not None:
        bad = checked if bad is None else min(bad, checked)
    if bad is not None:
        rep.first_invalid_height = bad
        fail(f"chain first invalid height {bad}")
    else:
        rep.lines.append(f"ok chain {len(blocks)} blocks")

    dump = _read(art_dir, CHAIN)
    expected = [ledger.chain_dump_line(b) for b in blocks]
    for height, (got, want) in enumerate(zip(dump, expected)):
        if got != want:
            fail(f"chain dump differs from blocks at height {height}")
            rep.first_invalid_height = height if bad is None else min(bad, height)
            break
    else:
        if bad is None and len(dump) != len(expected):
            fail(f"chain dump has {len(dump)} lines for {len(expected)} blocks")

    on_chain = {tid for b in blocks for tid in b.tx_ids()}
    for line in _read(art_dir, EXECUTION_LOG):
        parts = line.split()
        if parts[2] == "request" and parts[-1] == "granted":
            tid = bytes.fromhex(next(p for p in parts if p.startswith("tx="))[3:])
            if tid not in on_chain:
                fail(f"granted request {tid.hex()[:16]} has no transaction on chain")

    entries = []
    for line in _read(art_dir, ACCESS_LOG):
        t, seq, actor, url, action = line.split()
        entries.append((int(t), int(seq), url, action))
    if any(a[:2] >= b[:2] for a, b in zip(entries, entries[1:])):
        fail("access log out of order")
    stored = {url for _, _, url, action in entries if action == "store"}
    for line in _read(art_dir, STORE):
        try:
            url, _ = parse_dump_line(line)
        except (ValueError, EmrShareError) as exc:
            fail(f"store dump unreadable: {exc}")
            continue
        if url not in stored:
            fail(f"stored object {url} has no store entry in the access log")

    for line in _read(art_dir, CHECKS):
        if line.startswith("FAIL"):
            fail(f"run check {line[5:]}")

    if rep.code == EXIT_OK:
        rep.lines.append("ok artifacts consistent")
    return rep


def inspect_dir(art_dir, what: str, actor: str | None = None) -> list:
    """Human-readable rendering of one dump; ``actor`` filters logs by name or account id."""
    art_dir = Path(art_dir)
    if what == "chain":
        out = []
        for line in _read(art_dir, CHAIN):
            h, prev, dh, producer, n_end, n_tx, t = line.split()
            out.append(f"#{h:>4}  t={t:<8} producer={producer:<4}  endorsements={n_end:>2}  "
                       f"txs={n_tx:>2}  prev={prev[:16]}  d_hash={dh[:16]}")
        return out
    if what == "credits":
        rows = [line.split() for line in _read(art_dir, CREDITS)]
        rows.sort(key=lambda r: (-int(r[1]), r[0]))
        return [f"{nid:<6} {score:>5}" for nid, score in rows]
    if what == "logs":
        names = account_names(art_dir)
        wanted = None
        if actor is not None:
            ids = {acct for acct, name in names.items() if name == actor}
            wanted = ids or {actor}
        out = []
        for line in _read(art_dir, ACCESS_LOG):
            t, seq, who, url, action = line.split()
            if wanted is None or who in wanted:
                out.append(f"cloud    t={t:<8} {names.get(who, who):<12} {action:<18} {url}")
        for line in _read(art_dir, EXECUTION_LOG):
            parts = line.split()
            cid, t, op, who, outcome = parts[0], parts[1], parts[2], parts[3], parts[-1]
            if wanted is None or who in wanted:
                detail = " ".join(p for p in parts[4:-1] if not p.startswith("tx="))
                out.append(f"contract t={t:<8} {names.get(who, who):<12} {op:<18} "
                           f"{outcome}  {detail} on={names.get(cid, cid)}")
        return out
    raise EmrShareError(f"unknown inspect target {what!r} (chain, credits, logs)")
