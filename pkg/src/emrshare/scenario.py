"""Scenario files: TOML documents describing actors, nodes and a timeline.

All times are simulated milliseconds. See ``scenarios/happy_path.toml``
for a complete example.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ces import Ceas, PART_RANGE
from .emr import PART_NAMES
from .errors import EmrShareError
from .ledger import ACTIONS
from .netsim import NetConfig, parse_fault_script
from .policy import parse_policy


class ScenarioError(EmrShareError):
    """Parse or validation failure; ``where`` names the line or field."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class Visit:
    t: int
    doctor: str
    patient: str
    record: dict
    extract: tuple
    policy: object


@dataclass
class Release:
    t: int
    patient: str
    parts: tuple


@dataclass
class Grant:
    t: int
    patient: str
    grantee: str
    parts: tuple
    actions: tuple
    valid_from: int
    valid_until: int


@dataclass
class Revocation:
    t: int
    patient: str
    grantee: str


@dataclass
class Request:
    t: int
    user: str
    patient: str
    parts: tuple
    action: str


@dataclass
class Tamper:
    height: int
    byte: int
    bit: int


@dataclass
class Scenario:
    name: str
    profile: str
    seed: int
    duration: int
    ceas: Ceas
    net: NetConfig
    node_count: int
    initial_credit: int
    node_credits: dict
    credit_config: dict
    doctors: list
    patients: list
    users: dict
    visits: list = field(default_factory=list)
    releases: list = field(default_factory=list)
    grants: list = field(default_factory=list)
    revocations: list = field(default_factory=list)
    requests: list = field(default_factory=list)
    faults: list = field(default_factory=list)
    expect: dict = field(default_factory=dict)
    tamper: Tamper | None = None


def _get(table: dict, key: str, where: str, kind=None, default=...):
    if key not in table:
        if default is ...:
            raise ScenarioError(f"{where}.{key}", "missing required field")
        return default
    value = table[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise ScenarioError(f"{where}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return value


def _parts(value, where: str) -> tuple:
    if not isinstance(value, list) or not value or any(not isinstance(i, int) or i not in PART_RANGE for i in value):
        raise ScenarioError(where, "expected a non-empty list of part indices in [1, 7]")
    return tuple(sorted(set(value)))


def _ordered(items: list, where: str) -> list:
    for a, b in zip(items, items[1:]):
        if b.t < a.t:
            raise ScenarioError(where, f"timeline not time-ordered (t={b.t} after t={a.t})")
    return items


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(source, str(exc)) from None

    head = _get(doc, "scenario", source, dict)
    name = _get(head, "name", "scenario", str)
    profile = _get(head, "profile", "scenario", str, "test")
    if profile not in ("test", "production"):
        raise ScenarioError("scenario.profile", "must be 'test' or 'production'")
    seed = _get(head, "seed", "scenario", int, 0)
    duration = _get(head, "duration", "scenario", int, 300_000)
    try:
        ceas = Ceas.of(_parts(_get(head, "ceas", "scenario", list), "scenario.ceas"))
    except EmrShareError as exc:
        raise ScenarioError("scenario.ceas", str(exc)) from None

    nt = _get(doc, "network", source, dict, {})
    try:
        net = NetConfig(
            seed=seed,
            base_delay=_get(nt, "base_delay", "network", int, 100),
            jitter=_get(nt, "jitter", "network", int, 0),
            drop_rate=float(_get(nt, "drop_rate", "network", (int, float), 0.0)),
        )
    except EmrShareError as exc:
        raise ScenarioError("network", str(exc)) from None

    nodes = _get(doc, "nodes", source, dict, {})
    node_count = _get(nodes, "count", "nodes", int, 50)
    if node_count < 50:
        raise ScenarioError("nodes.count", "at least 50 consortium nodes are required")
    initial_credit = _get(nodes, "initial_credit", "nodes", int, 100)
    node_credits = _get(nodes, "credits", "nodes", dict, {})
    credit_config = _get(doc, "credits", source, dict, {})
    allowed = {"reward", "miss_penalty", "bad_audit_penalty", "threshold"}
    for key in credit_config:
        if key not in allowed:
            raise ScenarioError(f"credits.{key}", "unknown credit setting")

    doctors = [_get(d, "name", "doctors", str) for d in _get(doc, "doctors", source, list, [])]
    patients = [_get(p, "name", "patients", str) for p in _get(doc, "patients", source, list, [])]
    users = {}
    for k, u in enumerate(_get(doc, "users", source, list, [])):
        where = f"users[{k}]"
        attrs = _get(u, "attributes", where, list)
        if not attrs or not all(isinstance(a, str) and a for a in attrs):
            raise ScenarioError(f"{where}.attributes", "expected non-empty attribute strings")
        users[_get(u, "name", where, str)] = tuple(attrs)
    labels = doctors + patients + list(users)
    if len(set(labels)) != len(labels):
        raise ScenarioError("actors", "actor names must be unique")

    def ref(value, pool, where):
        if value not in pool:
            raise ScenarioError(where, f"unknown actor {value!r}")
        return value

    visits = []
    for k, v in enumerate(_get(doc, "visits", source, list, [])):
        where = f"visits[{k}]"
        record = _get(v, "record", where, dict)
        missing = [n for n in PART_NAMES if not str(record.get(n, ""))]
        if missing:
            raise ScenarioError(f"{where}.record", f"missing parts {missing}")
        extract = _parts(_get(v, "extract", where, list), f"{where}.extract")
        try:
            policy = parse_policy(_get(v, "policy", where, str))
        except EmrShareError as exc:
            raise ScenarioError(f"{where}.policy", str(exc)) from None
        visits.append(Visit(_get(v, "t", where, int), ref(_get(v, "doctor", where, str), doctors, f"{where}.doctor"),
                            ref(_get(v, "patient", where, str), patients, f"{where}.patient"),
                            {n: str(record[n]) for n in PART_NAMES}, extract, policy))

    releases = []
    for k, r in enumerate(_get(doc, "releases", source, list, [])):
        where = f"releases[{k}]"
        releases.append(Release(_get(r, "t", where, int), ref(_get(r, "patient", where, str), patients, f"{where}.patient"),
                                _parts(_get(r, "parts", where, list), f"{where}.parts")))

    grants = []
    for k, g in enumerate(_get(doc, "grants", source, list, [])):
        where = f"grants[{k}]"
        actions = tuple(_get(g, "actions", where, list, ["read"]))
        if not actions or any(a not in ACTIONS for a in actions):
            raise ScenarioError(f"{where}.actions", f"actions must be drawn from {ACTIONS}")
        vf, vu = _get(g, "valid_from", where, int), _get(g, "valid_until", where, int)
        if not vf < vu:
            raise ScenarioError(where, "valid_from must precede valid_until")
        grants.append(Grant(_get(g, "t", where, int), ref(_get(g, "patient", where, str), patients, f"{where}.patient"),
                            ref(_get(g, "grantee", where, str), users, f"{where}.grantee"),
                            _parts(_get(g, "parts", where, list), f"{where}.parts"), actions, vf, vu))

    revocations = []
    for k, r in enumerate(_get(doc, "revocations", source, list, [])):
        where = f"revocations[{k}]"
        revocations.append(Revocation(_get(r, "t", where, int),
                                      ref(_get(r, "patient", where, str), patients, f"{where}.patient"),
                                      ref(_get(r, "grantee", where, str), users, f"{where}.grantee")))

    requests = []
    for k, r in enumerate(_get(doc, "requests", source, list, [])):
        where = f"requests[{k}]"
        action = _get(r, "action", where, str, "read")
        if action not in ACTIONS:
            raise ScenarioError(f"{where}.action", f"must be one of {ACTIONS}")
        requests.append(Request(_get(r, "t", where, int), ref(_get(r, "user", where, str), users, f"{where}.user"),
                                ref(_get(r, "patient", where, str), patients, f"{where}.patient"),
                                _parts(_get(r, "parts", where, list), f"{where}.parts"), action))

    node_ids = {f"n{i:02d}" for i in range(node_count)}
    for nid in node_credits:
        ref(nid, node_ids, f"nodes.credits.{nid}")
    try:
        faults = parse_fault_script(_get(doc, "faults", source, str, ""))
    except EmrShareError as exc:
        raise ScenarioError("faults", str(exc)) from None
    for d in faults:
        ref(d.node, node_ids, f"faults[{d.node}]")

    tamper = None
    if "tamper" in doc:
        tt = _get(doc, "tamper", source, dict)
        tamper = Tamper(_get(tt, "height", "tamper", int), _get(tt, "byte", "tamper", int),
                        _get(tt, "bit", "tamper", int, 0))

    expect = _get(doc, "expect", source, dict, {})
    kinds = {"verified": bool, "granted": int, "denied": int, "min_height": int}
    for key, value in expect.items():
        if key not in kinds or not isinstance(value, kinds[key]):
            raise ScenarioError(f"expect.{key}", f"unknown expectation or wrong type (known: {sorted(kinds)})")

    return Scenario(
        name=name, profile=profile, seed=seed, duration=duration, ceas=ceas, net=net,
        node_count=node_count, initial_credit=initial_credit, node_credits=dict(node_credits),
        credit_config=dict(credit_config), doctors=doctors, patients=patients, users=users,
        visits=_ordered(visits, "visits"), releases=_ordered(releases, "releases"),
        grants=_ordered(grants, "grants"), revocations=_ordered(revocations, "revocations"),
        requests=_ordered(requests, "requests"), faults=faults, expect=dict(expect), tamper=tamper,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(str(path), f"cannot read: {exc.strerror}") from None
    return parse_scenario(text, str(path))
