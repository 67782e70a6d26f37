"""Multi-agent modal formulas: syntax tree, parser and canonical printer.

Concrete syntax (ASCII, UTF-8 input accepted)::

    p                      abstract proposition
    a=1  w=fail            outcome atoms
    !f   f & g   f | g     negation, conjunction, disjunction
    f -> g   f <-> g       implication (right-assoc), equivalence
    K[A@1] f   K[B@3,l] f  knowledge, optional time tick and mode
    ctx[(A@1,l);(B@2,l)] f context-tagged statement

Precedence from tightest: ``!``/``K[..]``/``ctx[..]``, ``&``, ``|``, ``->``, ``<->``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

__all__ = [
    "AgentInstance", "Mode", "ContextVector", "Formula", "Atom", "Not", "And", "Or",
    "Implies", "Iff", "Knows", "Tagged", "FormulaSyntaxError", "DomainError",
    "parse", "to_text", "subformulas", "depth", "node_count", "agents_of",
    "knows_chain", "wrap_knows", "strip_tags", "tag",
]

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class DomainError(ValueError):
    """An outcome value is not in the variable's declared domain."""


@dataclass(frozen=True, order=True)
class AgentInstance:
    name: str
    time: int | None = None

    def __post_init__(self):
        if not self.name or not _IDENT.fullmatch(self.name):
            raise ValueError(f"invalid agent name {self.name!r}")
        if self.time is not None and (not isinstance(self.time, int) or self.time < 0):
            raise ValueError(f"agent time must be a non-negative integer, got {self.time!r}")

    @classmethod
    def parse(cls, text: str) -> "AgentInstance":
        name, _, tick = text.strip().partition("@")
        return cls(name, int(tick) if tick else None)

    def __str__(self):
        return self.name if self.time is None else f"{self.name}@{self.time}"


class Mode(enum.Enum):
    LOCAL = "l"
    GLOBAL = "g"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ContextVector:
    """Ordered record of (agent, mode) pairs, innermost speaker first."""

    entries: tuple[tuple[AgentInstance, Mode], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((a, Mode(m)) for a, m in self.entries))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __add__(self, other: "ContextVector") -> "ContextVector":
        return ContextVector(self.entries + tuple(other))

    def append(self, agent: AgentInstance, mode: Mode) -> "ContextVector":
        return ContextVector(self.entries + ((agent, mode),))

    def __str__(self):
        return ";".join(f"({a},{m})" for a, m in self.entries)


class Formula:
    """Base class of all syntax-tree nodes."""

    __slots__ = ()

    def children(self) -> tuple["Formula", ...]:
        return ()

    def __str__(self):
        return to_text(self)

    # operator sugar for building formulas in code
    def __and__(self, other):
        return And(self, other)

    def __or__(self, other):
        return Or(self, other)

    def __invert__(self):
        return Not(self)

    def __rshift__(self, other):
        return Implies(self, other)


@dataclass(frozen=True)
class Atom(Formula):
    """Abstract proposition (``value is None``) or outcome atom ``name=value``."""

    name: str
    value: str | None = None

    def __post_init__(self):
        if not _IDENT.fullmatch(self.name):
            raise ValueError(f"invalid atom name {self.name!r}")
        if self.value is not None:
            object.__setattr__(self, "value", str(self.value))
            if not re.fullmatch(r"[A-Za-z0-9_]+", self.value):
                raise ValueError(f"invalid atom value {self.value!r}")

    @classmethod
    def outcome(cls, variable: str, value, domains: Mapping[str, Sequence] | None = None) -> "Atom":
        atom = cls(variable, str(value))
        if domains is not None:
            check_domain(atom, domains)
        return atom

    @property
    def is_outcome(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class _Binary(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


class And(_Binary):
    pass


class Or(_Binary):
    pass


class Implies(_Binary):
    pass


class Iff(_Binary):
    pass


@dataclass(frozen=True)
class Knows(Formula):
    agent: AgentInstance
    body: Formula
    mode: Mode | None = None

    def __post_init__(self):
        if self.mode is not None:
            object.__setattr__(self, "mode", Mode(self.mode))

    def children(self):
        return (self.body,)


@dataclass(frozen=True)
class Tagged(Formula):
    """A statement bundled with the context it was produced in.

    An empty context yields the bare body, and a tag directly around another
    tag is merged (outer entries first).
    """

    context: ContextVector
    body: Formula

    def __new__(cls, context, body):
        if not isinstance(context, ContextVector):
            context = ContextVector(tuple(context))
        if len(context) == 0:
            return body
        return super().__new__(cls)

    def __init__(self, context, body):
        ctx = context if isinstance(context, ContextVector) else ContextVector(tuple(context))
        if len(ctx) == 0:
            # __new__ handed back ``body`` itself, which is already initialised
            return
        if isinstance(body, Tagged):
            ctx, body = ctx + body.context, body.body
        object.__setattr__(self, "context", ctx)
        object.__setattr__(self, "body", body)

    def __reduce__(self):
        return (Tagged, (self.context, self.body))

    def children(self):
        return (self.body,)


def tag(context, body: Formula) -> Formula:
    return Tagged(context, body)


_BINARY_SYMBOL = {And: "&", Or: "|", Implies: "->", Iff: "<->"}


def check_domain(atom: Atom, domains: Mapping[str, Sequence]) -> None:
    if atom.value is None:
        return
    if atom.name not in domains:
        raise DomainError(f"outcome variable {atom.name!r} has no declared domain")
    allowed = [str(v) for v in domains[atom.name]]
    if atom.value not in allowed:
        raise DomainError(f"{atom.name}={atom.value}: value not in domain {allowed}")


# ---------------------------------------------------------------- printing

def to_text(f: Formula) -> str:
    """Canonical fully parenthesized form; always re-parses to ``f``."""
    if isinstance(f, Atom):
        return f.name if f.value is None else f"{f.name}={f.value}"
    if isinstance(f, Not):
        return f"!({to_text(f.arg)})"
    if isinstance(f, _Binary):
        return f"({to_text(f.left)}) {_BINARY_SYMBOL[type(f)]} ({to_text(f.right)})"
    if isinstance(f, Knows):
        head = str(f.agent) if f.mode is None else f"{f.agent},{f.mode}"
        return f"K[{head}] ({to_text(f.body)})"
    if isinstance(f, Tagged):
        return f"ctx[{f.context}] ({to_text(f.body)})"
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------- parsing

class FormulaSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int, expected: Sequence[str] = ()):
        self.line, self.column, self.expected = line, column, tuple(sorted(set(expected)))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{line}:{column}: {message}{detail}")


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    column: int


_TOKEN_SPEC = [
    ("WS", r"[ \t\r\n]+"),
    ("IFF", r"<->|↔|⇔"),
    ("IMPLIES", r"->|→|⇒"),
    ("KNOWS", r"K\["),
    ("CTX", r"ctx\["),
    ("NOT", r"!|¬|~"),
    ("AND", r"&|∧"),
    ("OR", r"\||∨"),
    ("LPAREN", r"\("),
    ("RPAREN", r"\)"),
    ("RBRACK", r"\]"),
    ("AT", r"@"),
    ("COMMA", r","),
    ("SEMI", r";"),
    ("EQ", r"="),
    ("WORD", r"[A-Za-z0-9_]+"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{k}>{p})" for k, p in _TOKEN_SPEC))


def _tokenize(text: str) -> list[_Token]:
    tokens, pos, line, col = [], 0, 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind, lexeme = m.lastgroup, m.group()
        if kind != "WS":
            tokens.append(_Token(kind, lexeme, line, col))
        for ch in lexeme:
            if ch == "\n":
                line, col = line + 1, 1
            else:
                col += 1
        pos = m.end()
    tokens.append(_Token("EOF", "", line, col))
    return tokens


_UNARY_START = ("NOT", "KNOWS", "CTX", "LPAREN", "WORD")


class _Parser:
    def __init__(self, text: str, domains):
        self.tokens = _tokenize(text)
        self.i = 0
        self.domains = domains

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def fail(self, expected: Sequence[str], message: str | None = None):
        tok = self.cur
        found = "end of input" if tok.kind == "EOF" else repr(tok.text)
        raise FormulaSyntaxError(message or f"unexpected {found}", tok.line, tok.column, expected)

    def eat(self, kind: str) -> _Token:
        if self.cur.kind != kind:
            self.fail([kind])
        tok = self.cur
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.iff()
        if self.cur.kind != "EOF":
            self.fail(["EOF", "AND", "OR", "IMPLIES", "IFF"])
        return f

    def operator(self) -> None:
        """Consume a binary operator; a missing right operand is reported at the operator."""
        op = self.cur
        self.i += 1
        if self.cur.kind not in _UNARY_START:
            raise FormulaSyntaxError(
                f"operator {op.text!r} has no right operand", op.line, op.column, _UNARY_START
            )

    def iff(self) -> Formula:
        left = self.implies()
        while self.cur.kind == "IFF":
            self.operator()
            left = Iff(left, self.implies())
        return left

    def implies(self) -> Formula:
        left = self.disj()
        if self.cur.kind == "IMPLIES":
            self.operator()
            return Implies(left, self.implies())
        return left

    def disj(self) -> Formula:
        left = self.conj()
        while self.cur.kind == "OR":
            self.operator()
            left = Or(left, self.conj())
        return left

    def conj(self) -> Formula:
        left = self.unary()
        while self.cur.kind == "AND":
            self.operator()
            left = And(left, self.unary())
        return left

    def unary(self) -> Formula:
        kind = self.cur.kind
        if kind == "NOT":
            self.i += 1
            return Not(self.unary())
        if kind == "KNOWS":
            self.i += 1
            agent = self.agent()
            mode = None
            if self.cur.kind == "COMMA":
                self.i += 1
                mode = self.mode()
            self.eat("RBRACK")
            return Knows(agent, self.unary(), mode)
        if kind == "CTX":
            self.i += 1
            entries = [self.ctx_entry()]
            while self.cur.kind == "SEMI":
                self.i += 1
                entries.append(self.ctx_entry())
            self.eat("RBRACK")
            return Tagged(ContextVector(tuple(entries)), self.unary())
        if kind == "LPAREN":
            self.i += 1
            f = self.iff()
            self.eat("RPAREN")
            return f
        if kind == "WORD":
            return self.atom()
        self.fail(_UNARY_START)

    def atom(self) -> Formula:
        tok = self.eat("WORD")
        if not _IDENT.fullmatch(tok.text):
            raise FormulaSyntaxError(f"invalid identifier {tok.text!r}", tok.line, tok.column, ["IDENT"])
        if self.cur.kind != "EQ":
            return Atom(tok.text)
        self.i += 1
        value = self.eat("WORD")
        atom = Atom(tok.text, value.text)
        if self.domains is not None:
            try:
                check_domain(atom, self.domains)
            except DomainError as exc:
                raise FormulaSyntaxError(str(exc), value.line, value.column) from None
        return atom

    def agent(self) -> AgentInstance:
        tok = self.eat("WORD")
        if not _IDENT.fullmatch(tok.text):
            raise FormulaSyntaxError(f"invalid agent name {tok.text!r}", tok.line, tok.column, ["IDENT"])
        time = None
        if self.cur.kind == "AT":
            self.i += 1
            t = self.eat("WORD")
            if not t.text.isdigit():
                raise FormulaSyntaxError(f"time tick must be an integer, got {t.text!r}", t.line, t.column, ["INT"])
            time = int(t.text)
        return AgentInstance(tok.text, time)

    def mode(self) -> Mode:
        tok = self.cur
        if tok.kind == "WORD" and tok.text in ("l", "g"):
            self.i += 1
            return Mode(tok.text)
        self.fail(["l", "g"])

    def ctx_entry(self) -> tuple[AgentInstance, Mode]:
        self.eat("LPAREN")
        agent = self.agent()
        self.eat("COMMA")
        mode = self.mode()
        self.eat("RPAREN")
        return agent, mode


def parse(text: str, domains: Mapping[str, Sequence] | None = None) -> Formula:
    """Parse ``text``; when ``domains`` is given, outcome values are checked against it."""
    return _Parser(text, domains).parse()


# ---------------------------------------------------------------- structure helpers

def _walk(f: Formula) -> Iterator[Formula]:
    stack = [f]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children()))


def subformulas(f: Formula) -> set[Formula]:
    return set(_walk(f))


def node_count(f: Formula) -> int:
    return sum(1 for _ in _walk(f))


def depth(f: Formula) -> int:
    kids = f.children()
    return 1 + max((depth(k) for k in kids), default=0)


def agents_of(f: Formula) -> set[AgentInstance]:
    found = set()
    for node in _walk(f):
        if isinstance(node, Knows):
            found.add(node.agent)
        elif isinstance(node, Tagged):
            found.update(a for a, _ in node.context)
    return found


def knows_chain(f: Formula) -> tuple[list[tuple[AgentInstance, Mode | None]], Formula]:
    """Split ``K_1 K_2 ... K_n body`` into its operator list and the body."""
    chain = []
    while isinstance(f, Knows):
        chain.append((f.agent, f.mode))
        f = f.body
    return chain, f


def wrap_knows(chain: Sequence[tuple[AgentInstance, Mode | None]], body: Formula) -> Formula:
    for agent, mode in reversed(chain):
        body = Knows(agent, body, mode)
    return body


def strip_tags(f: Formula) -> Formula:
    """Drop every context tag, keeping the statements themselves."""
    if isinstance(f, Tagged):
        return strip_tags(f.body)
    if isinstance(f, Atom):
        return f
    if isinstance(f, Not):
        return Not(strip_tags(f.arg))
    if isinstance(f, _Binary):
        return type(f)(strip_tags(f.left), strip_tags(f.right))
    if isinstance(f, Knows):
        return Knows(f.agent, strip_tags(f.body), f.mode)
    raise TypeError(f"not a formula: {f!r}")
