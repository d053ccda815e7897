"""Boolean attribute policies with AND, OR and k-of-n threshold gates.

Text syntax::

    cardiology AND researcher
    (cardiology OR oncology) AND researcher
    2 of (a, b, c)
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from .errors import ParameterError


class Policy:
    def satisfied_by(self, attrs) -> bool:
        raise NotImplementedError

    def leaves(self) -> set:
        raise NotImplementedError


@dataclass(frozen=True)
class Attr(Policy):
    name: str

    def __post_init__(self):
        if not self.name:
            raise ParameterError("attribute names must be non-empty")

    def satisfied_by(self, attrs) -> bool:
        return self.name in attrs

    def leaves(self) -> set:
        return {self.name}

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Threshold(Policy):
    """At least ``k`` of ``children`` hold. AND and OR are the n-of-n and 1-of-n cases."""

    k: int
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        n = len(self.children)
        if n == 0:
            raise ParameterError("gate needs at least one child")
        if not 1 <= self.k <= n:
            raise ParameterError(f"threshold {self.k} outside [1, {n}]")

    def satisfied_by(self, attrs) -> bool:
        hits = 0
        for child in self.children:
            if child.satisfied_by(attrs):
                hits += 1
                if hits >= self.k:
                    return True
        return False

    def leaves(self) -> set:
        return set().union(*(c.leaves() for c in self.children))

    @property
    def kind(self) -> str:
        n = len(self.children)
        if self.k == n and n > 1:
            return "AND"
        if self.k == 1 and n > 1:
            return "OR"
        return "THRESHOLD"

    def __str__(self):
        kind = self.kind
        if kind in ("AND", "OR"):
            return "(" + f" {kind} ".join(str(c) for c in self.children) + ")"
        return f"{self.k} of (" + ", ".join(str(c) for c in self.children) + ")"


def And(*children: Policy) -> Threshold:
    return Threshold(len(children), children)


def Or(*children: Policy) -> Threshold:
    return Threshold(1, children)


def policy_satisfies(attrs: Iterable[str], policy: Policy) -> bool:
    return policy.satisfied_by(frozenset(attrs))


_TOKEN = re.compile(r"\s*(?:(\()|(\))|(,)|([A-Za-z0-9_:.\-@/]+))")


def _tokenize(text: str) -> list:
    tokens, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParameterError(f"unexpected character at {pos} in policy {text!r}")
        tokens.append(next(g for g in m.groups() if g is not None))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expected=None):
        tok = self.peek()
        if tok is None or (expected is not None and tok != expected):
            raise ParameterError(f"expected {expected or 'token'} in policy {self.text!r}")
        self.pos += 1
        return tok

    def parse(self) -> Policy:
        node = self.expr()
        if self.peek() is not None:
            raise ParameterError(f"trailing input in policy {self.text!r}")
        return node

    def expr(self) -> Policy:
        terms = [self.conj()]
        while self.peek() == "OR":
            self.take()
            terms.append(self.conj())
        return terms[0] if len(terms) == 1 else Or(*terms)

    def conj(self) -> Policy:
        terms = [self.atom()]
        while self.peek() == "AND":
            self.take()
            terms.append(self.atom())
        return terms[0] if len(terms) == 1 else And(*terms)

    def atom(self) -> Policy:
        tok = self.peek()
        if tok == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if tok is not None and tok.isdigit() and self.pos + 1 < len(self.tokens) \
                and self.tokens[self.pos + 1] == "of":
            k = int(self.take())
            self.take("of")
            self.take("(")
            children = [self.expr()]
            while self.peek() == ",":
                self.take()
                children.append(self.expr())
            self.take(")")
            return Threshold(k, tuple(children))
        if tok in (None, ")", ",", "AND", "OR"):
            raise ParameterError(f"expected attribute in policy {self.text!r}")
        return Attr(self.take())


def parse_policy(text: str) -> Policy:
    return _Parser(text).parse()
