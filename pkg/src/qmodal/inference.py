"""Forward-chaining derivation over scoped knowledge statements.

Every rule may fire underneath a shared prefix of knowledge operators
(``K_W K_U ...``) when ``AxiomSet.prefix_rules`` is on. Saturation applies the
enabled rules in a fixed order each round::

    distribution, conjunction, trust, truth, introspection, generalization,
    context rules, single outcome

and records every new statement as a trace step, so a run can be replayed and
diffed against a golden file.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Iterator, Mapping, Sequence

from .formula import (
    AgentInstance, And, Atom, ContextVector, Formula, Implies, Knows, Mode, Not, Tagged,
    depth, knows_chain, parse, strip_tags, to_text, wrap_knows,
)

log = logging.getLogger(__name__)

__all__ = [
    "Judgment", "TrustStructure", "AxiomSet", "Step", "DerivationTrace", "Contradiction",
    "BlockedPair", "SaturationResult", "KnowledgeBase", "InvalidStepError", "RULE_ORDER",
    "apply_distribution", "apply_truth", "apply_generalization", "apply_trust",
    "apply_single_outcome", "apply_conjunction", "compress_context",
    "apply_context_distribution", "saturate", "replay",
]

Prefix = tuple[tuple[AgentInstance, Mode | None], ...]

RULE_ORDER = (
    "distribution", "conjunction", "trust", "truth", "pos_introspection",
    "neg_introspection", "generalization", "context_compression", "context_distribution",
    "context_trust", "single_outcome",
)


@dataclass(frozen=True)
class Judgment:
    """``formula`` holds in every world (``world is None``) or in one named world."""

    formula: Formula
    world: str | None = None

    @property
    def scope(self) -> str:
        return "all" if self.world is None else f"world:{self.world}"

    @classmethod
    def from_scope(cls, formula: Formula, scope: str) -> "Judgment":
        if scope == "all":
            return cls(formula)
        if not scope.startswith("world:"):
            raise ValueError(f"bad scope {scope!r}")
        return cls(formula, scope[len("world:"):])

    def __str__(self):
        where = "|= " if self.world is None else f"({self.world}) |= "
        return where + to_text(self.formula)


@dataclass(frozen=True)
class TrustStructure:
    """Directed trust edges stored as ``(truster, trusted)``.

    In arrow notation ``j ~> i`` means *i trusts j*. Edges are never closed
    under symmetry or transitivity; an agent always trusts itself unless
    ``self_trust`` is off.
    """

    edges: frozenset[tuple[AgentInstance, AgentInstance]] = frozenset()
    self_trust: bool = True

    @classmethod
    def from_arrows(cls, arrows: Iterable[tuple[AgentInstance, AgentInstance]], self_trust=True):
        """Build from ``(j, i)`` pairs read as ``j ~> i``."""
        return cls(frozenset((i, j) for j, i in arrows), self_trust)

    def trusts(self, truster: AgentInstance, trusted: AgentInstance) -> bool:
        if truster == trusted:
            return self.self_trust
        return (truster, trusted) in self.edges

    def arrows(self) -> list[str]:
        return sorted(f"{j}~>{i}" for i, j in self.edges)


@dataclass(frozen=True)
class AxiomSet:
    distribution: bool = True
    generalization: bool = False
    truth: bool = False
    pos_introspection: bool = False
    neg_introspection: bool = False
    single_outcome: bool = True
    conjunction: bool = True
    trust: bool = False
    context_compression: bool = False
    context_distribution: bool = False
    prefix_rules: bool = True
    # trust may shorten context vectors; no soundness claim is made for it
    context_trust: bool = False

    @classmethod
    def truth_semantics(cls) -> "AxiomSet":
        return cls(distribution=True, generalization=True, truth=True)

    @classmethod
    def trust_semantics(cls) -> "AxiomSet":
        return cls(distribution=True, generalization=True, trust=True)

    @classmethod
    def context_semantics(cls) -> "AxiomSet":
        return cls(distribution=False, context_compression=True, context_distribution=True)

    def enabled(self) -> list[str]:
        return [f.name for f in fields(self) if f.name != "prefix_rules" and getattr(self, f.name)]


@dataclass(frozen=True)
class Step:
    rule: str
    premise_ids: tuple[int, ...]
    prefix: Prefix
    conclusion: Judgment
    detail: tuple[tuple[str, object], ...] = ()

    def info(self) -> dict:
        return dict(self.detail)


@dataclass(frozen=True)
class Contradiction:
    variable: str
    values: tuple[str, str]
    prefix: Prefix
    context: ContextVector
    world: str | None
    witness_ids: tuple[int, ...]
    statement: Judgment


@dataclass(frozen=True)
class BlockedPair:
    """Two statements that would chain if their contexts were ignored."""

    prefix: Prefix
    operator: tuple[AgentInstance, Mode | None] | None
    ids: tuple[int, int]
    contexts: tuple[ContextVector, ContextVector]
    statements: tuple[Judgment, Judgment]

    @property
    def lengths(self) -> tuple[int, int]:
        return len(self.contexts[0]), len(self.contexts[1])


class InvalidStepError(ValueError):
    """A trace step does not follow from its recorded premises."""


class KnowledgeBase:
    """Append-only list of judgments with structural deduplication.

    A world-scoped statement is redundant once the same formula is known to
    hold in every world.
    """

    def __init__(self, judgments: Iterable[Judgment] = ()):
        self.items: list[Judgment] = []
        self._index: dict[Judgment, int] = {}
        for j in judgments:
            self.add(j)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __contains__(self, j: Judgment) -> bool:
        return j in self._index or (j.world is not None and Judgment(j.formula) in self._index)

    def id_of(self, j: Judgment) -> int | None:
        if j in self._index:
            return self._index[j]
        return self._index.get(Judgment(j.formula)) if j.world is not None else None

    def add(self, j: Judgment) -> int | None:
        if j in self:
            return None
        self._index[j] = len(self.items)
        self.items.append(j)
        return len(self.items) - 1

    def enumerate(self) -> list[tuple[int, Judgment]]:
        return list(enumerate(self.items))


# ---------------------------------------------------------------- helpers

def _join_scope(*worlds: str | None):
    """Common scope of premises, or ``False`` when they live in different worlds."""
    named = {w for w in worlds if w is not None}
    if len(named) > 1:
        return False
    return next(iter(named), None)


def _prefix_text(prefix: Prefix) -> list[str]:
    return [str(a) if m is None else f"{a},{m}" for a, m in prefix]


def _parse_prefix(items: Sequence[str]) -> Prefix:
    out = []
    for item in items:
        agent, _, mode = item.partition(",")
        out.append((AgentInstance.parse(agent), Mode(mode) if mode else None))
    return tuple(out)


def _splits(f: Formula, prefix_rules: bool, need_k: bool = True) -> Iterator[tuple[Prefix, Formula]]:
    """Yield ``(P, rest)`` with ``f == P . rest``; ``rest`` starts with a K when ``need_k``."""
    chain, body = knows_chain(f)
    last = len(chain) - 1 if need_k else len(chain)
    for k in range(0, last + 1):
        if k > 0 and not prefix_rules:
            break
        yield tuple(chain[:k]), wrap_knows(chain[k:], body)


@dataclass
class _Candidate:
    rule: str
    premise_ids: tuple[int, ...]
    prefix: Prefix
    formula: Formula
    world: str | None
    detail: tuple[tuple[str, object], ...] = ()


def _literal_parts(f: Formula) -> list[Formula] | None:
    """Flatten a conjunction of outcome literals; ``None`` if ``f`` is not one."""
    if isinstance(f, And):
        left, right = _literal_parts(f.left), _literal_parts(f.right)
        return None if left is None or right is None else left + right
    if isinstance(f, Atom) or (isinstance(f, Not) and isinstance(f.arg, Atom)):
        return [f]
    return None


# ---------------------------------------------------------------- rules
#
# Each rule maps a list of (id, judgment) to candidate conclusions. The same
# functions serve saturation, the public apply_* helpers and trace replay.

def _units(items, prefix_rules, with_tags: bool):
    """Yield ``(group_key, context, body, id, world)`` for every ``P . K_i body``.

    With ``with_tags`` a body ``ctx[c] X`` is also offered as ``X`` in context
    ``c``, and a bare ``P . ctx[c] X`` forms a group with no operator.
    """
    for jid, j in items:
        chain, body = knows_chain(j.formula)
        for k in range(len(chain) + 1):
            if k > 0 and not prefix_rules:
                break
            prefix = tuple(chain[:k])
            if k < len(chain):
                op = chain[k]
                inner = wrap_knows(chain[k + 1:], body)
                yield (prefix, op), ContextVector(), inner, jid, j.world
                if with_tags and isinstance(inner, Tagged):
                    yield (prefix, op), inner.context, inner.body, jid, j.world
            elif with_tags and isinstance(body, Tagged):
                yield (prefix, None), body.context, body.body, jid, j.world


def _rebuild(key, context: ContextVector, body: Formula) -> Formula:
    prefix, op = key
    inner = Tagged(context, body)
    if op is not None:
        inner = Knows(op[0], inner, op[1])
    return wrap_knows(prefix, inner)


def _chain_candidates(rule, items, prefix_rules, exact: bool, with_tags: bool, only_prefix=None):
    """Modus ponens and implication chaining inside each knowledge group."""
    groups: dict = {}
    for key, ctx, body, jid, world in _units(items, prefix_rules, with_tags):
        if only_prefix is not None and key[0] != only_prefix:
            continue
        if not with_tags and key[1] is None:
            continue
        groups.setdefault((key, ctx), []).append((jid, world, body))
    norm = (lambda f: f) if exact else strip_tags
    for (key, ctx), entries in groups.items():
        by_formula: dict[Formula, list] = {}
        by_antecedent: dict[Formula, list] = {}
        for jid, world, body in entries:
            by_formula.setdefault(norm(body), []).append((jid, world))
            if isinstance(body, Implies):
                by_antecedent.setdefault(norm(body.left), []).append((jid, world, body))
        for jid, world, body in entries:
            if not isinstance(body, Implies):
                continue
            # K(A -> B), K A  =>  K B
            for fid, fworld in by_formula.get(norm(body.left), []):
                scope = _join_scope(world, fworld)
                if scope is not False:
                    yield _Candidate(rule, (fid, jid), key[0], _rebuild(key, ctx, body.right), scope)
            # K(A -> B), K(B -> C)  =>  K(A -> C)
            for nid, nworld, nxt in by_antecedent.get(norm(body.right), []):
                if nid == jid or body.left == nxt.right:
                    continue
                scope = _join_scope(world, nworld)
                if scope is not False:
                    yield _Candidate(rule, (jid, nid), key[0],
                                     _rebuild(key, ctx, Implies(body.left, nxt.right)), scope)


def _rule_distribution(items, axioms: AxiomSet, only_prefix=None, **_):
    # context-blind unless context distribution demands exact matches
    yield from _chain_candidates("distribution", items, axioms.prefix_rules,
                                 exact=axioms.context_distribution, with_tags=False,
                                 only_prefix=only_prefix)


def _rule_context_distribution(items, axioms: AxiomSet, only_prefix=None, **_):
    yield from _chain_candidates("context_distribution", items, axioms.prefix_rules,
                                 exact=True, with_tags=True, only_prefix=only_prefix)


def _rule_conjunction(items, axioms: AxiomSet, only_prefix=None, **_):
    groups: dict = {}
    for jid, j in items:
        for prefix, rest in _splits(j.formula, axioms.prefix_rules, need_k=False):
            if only_prefix is not None and prefix != only_prefix:
                continue
            if isinstance(rest, And):
                for part in (rest.left, rest.right):
                    yield _Candidate("conjunction", (jid,), prefix, wrap_knows(prefix, part), j.world)
            if isinstance(rest, Knows):
                inner = rest.body
                if isinstance(inner, And):
                    for part in (inner.left, inner.right):
                        yield _Candidate("conjunction", (jid,), prefix,
                                         wrap_knows(prefix, Knows(rest.agent, part, rest.mode)), j.world)
                else:
                    groups.setdefault((prefix, rest.agent, rest.mode), []).append((jid, j.world, inner))
    for (prefix, agent, mode), entries in groups.items():
        for (id1, w1, a), (id2, w2, b) in itertools.combinations(entries, 2):
            if a == b:
                continue
            if axioms.context_distribution and _context_of(a) != _context_of(b):
                continue
            scope = _join_scope(w1, w2)
            if scope is False:
                continue
            yield _Candidate("conjunction", (id1, id2), prefix,
                             wrap_knows(prefix, Knows(agent, And(a, b), mode)), scope)


def _context_of(f: Formula) -> ContextVector:
    return f.context if isinstance(f, Tagged) else ContextVector()


def _rule_trust(items, axioms: AxiomSet, trust: TrustStructure | None = None, only_prefix=None, **_):
    if trust is None:
        return
    for jid, j in items:
        chain, body = knows_chain(j.formula)
        for k in range(len(chain) - 1):
            if k > 0 and not axioms.prefix_rules:
                break
            prefix = tuple(chain[:k])
            if only_prefix is not None and prefix != only_prefix:
                continue
            (truster, mode), (trusted, _) = chain[k], chain[k + 1]
            if trust.trusts(truster, trusted):
                out = wrap_knows(prefix + ((truster, mode),) + tuple(chain[k + 2:]), body)
                yield _Candidate("trust", (jid,), prefix, out, j.world,
                                 (("edge", f"{trusted}~>{truster}"),))


def _rule_truth(items, axioms: AxiomSet, only_prefix=None, **_):
    for jid, j in items:
        for prefix, rest in _splits(j.formula, axioms.prefix_rules):
            if only_prefix is not None and prefix != only_prefix:
                continue
            yield _Candidate("truth", (jid,), prefix, wrap_knows(prefix, rest.body), j.world)


def _rule_pos_introspection(items, axioms: AxiomSet, only_prefix=None, **_):
    for jid, j in items:
        for prefix, rest in _splits(j.formula, axioms.prefix_rules):
            if only_prefix is not None and prefix != only_prefix:
                continue
            yield _Candidate("pos_introspection", (jid,), prefix,
                             wrap_knows(prefix, Knows(rest.agent, rest, rest.mode)), j.world)


def _rule_neg_introspection(items, axioms: AxiomSet, only_prefix=None, **_):
    for jid, j in items:
        for prefix, rest in _splits(j.formula, axioms.prefix_rules, need_k=False):
            if only_prefix is not None and prefix != only_prefix:
                continue
            if isinstance(rest, Not) and isinstance(rest.arg, Knows):
                k = rest.arg
                yield _Candidate("neg_introspection", (jid,), prefix,
                                 wrap_knows(prefix, Knows(k.agent, rest, k.mode)), j.world)


def _modal_free(f: Formula) -> bool:
    if isinstance(f, (Knows, Tagged)):
        return False
    return all(_modal_free(c) for c in f.children())


def _rule_generalization(items, axioms: AxiomSet, agents: Sequence[AgentInstance] = (), **_):
    # restricted to modal-free facts valid everywhere: the shared physical laws
    for jid, j in items:
        if j.world is None and _modal_free(j.formula):
            for agent in agents:
                yield _Candidate("generalization", (jid,), (), Knows(agent, j.formula), None,
                                 (("agent", str(agent)),))


def _rule_context_compression(items, axioms: AxiomSet, only_prefix=None, **_):
    for jid, j in items:
        chain, body = knows_chain(j.formula)
        if not chain:
            continue
        agent, mode = chain[-1]
        if mode is None:
            continue
        prefix = tuple(chain[:-1])
        if prefix and not axioms.prefix_rules:
            continue
        if only_prefix is not None and prefix != only_prefix:
            continue
        ctx, inner = (body.context, body.body) if isinstance(body, Tagged) else (ContextVector(), body)
        yield _Candidate("context_compression", (jid,), prefix,
                         wrap_knows(prefix, Tagged(ctx.append(agent, mode), inner)), j.world)


def _rule_context_trust(items, axioms: AxiomSet, trust: TrustStructure | None = None, only_prefix=None, **_):
    if trust is None:
        return
    for jid, j in items:
        chain, body = knows_chain(j.formula)
        prefix = tuple(chain)
        if not isinstance(body, Tagged) or (only_prefix is not None and prefix != only_prefix):
            continue
        entries = body.context.entries
        for m in range(len(entries) - 1):
            (trusted, _), (truster, _) = entries[m], entries[m + 1]
            if trust.trusts(truster, trusted):
                shorter = ContextVector(entries[:m] + entries[m + 1:])
                yield _Candidate("context_trust", (jid,), prefix, wrap_knows(prefix, Tagged(shorter, body.body)),
                                 j.world, (("edge", f"{trusted}~>{truster}"),))


def _literal_groups(items):
    groups: dict = {}
    for jid, j in items:
        chain, body = knows_chain(j.formula)
        ctx, inner = (body.context, body.body) if isinstance(body, Tagged) else (ContextVector(), body)
        parts = _literal_parts(inner)
        if parts:
            groups.setdefault((tuple(chain), ctx), []).append((jid, j.world, parts))
    return groups


def _conflicts(items):
    """Every pair of literals that cannot both hold under one prefix and context."""
    for (prefix, ctx), entries in _literal_groups(items).items():
        flat = [(jid, world, lit) for jid, world, parts in entries for lit in parts]
        for (id1, w1, l1), (id2, w2, l2) in itertools.combinations(flat, 2):
            scope = _join_scope(w1, w2)
            if scope is False:
                continue
            if isinstance(l1, Atom) and isinstance(l2, Atom):
                clash = l1.value is not None and l1.name == l2.name and l2.value is not None and l1.value != l2.value
            else:
                clash = (isinstance(l1, Not) and l1.arg == l2) or (isinstance(l2, Not) and l2.arg == l1)
            if not clash:
                continue
            ids = (id1,) if id1 == id2 else (id1, id2)
            formula = wrap_knows(prefix, Tagged(ctx, And(l1, l2)))
            name = l1.name if isinstance(l1, Atom) else l1.arg.name
            values = tuple(to_text(l) for l in (l1, l2))
            yield Contradiction(name, values, prefix, ctx, scope, ids, Judgment(formula, scope))


def _rule_single_outcome(items, axioms: AxiomSet, domains: Mapping[str, Sequence] | None = None,
                         only_prefix=None, **_):
    """Rewrite ``x=v`` into ``!(x=v')`` for the other declared values (and back, for two-valued domains)."""
    if not domains:
        return
    for (prefix, ctx), entries in _literal_groups(items).items():
        if only_prefix is not None and prefix != only_prefix:
            continue
        for jid, world, parts in entries:
            if len(parts) != 1:
                continue
            lit = parts[0]
            atom = lit if isinstance(lit, Atom) else lit.arg
            if atom.value is None or atom.name not in domains:
                continue
            values = [str(v) for v in domains[atom.name]]
            dom = (("domain", tuple(values)),)
            if isinstance(lit, Atom):
                for other in values:
                    if other != atom.value:
                        out = wrap_knows(prefix, Tagged(ctx, Not(Atom(atom.name, other))))
                        yield _Candidate("single_outcome", (jid,), prefix, out, world, dom)
            elif len(values) == 2 and atom.value in values:
                other = values[1 - values.index(atom.value)]
                out = wrap_knows(prefix, Tagged(ctx, Atom(atom.name, other)))
                yield _Candidate("single_outcome", (jid,), prefix, out, world, dom)


_RULES = {
    "distribution": _rule_distribution,
    "conjunction": _rule_conjunction,
    "trust": _rule_trust,
    "truth": _rule_truth,
    "pos_introspection": _rule_pos_introspection,
    "neg_introspection": _rule_neg_introspection,
    "generalization": _rule_generalization,
    "context_compression": _rule_context_compression,
    "context_distribution": _rule_context_distribution,
    "context_trust": _rule_context_trust,
}


# ---------------------------------------------------------------- public single-rule helpers

def _new_judgments(rule, kb, prefix=None, axioms=None, **kw) -> list[Judgment]:
    kb = kb if isinstance(kb, KnowledgeBase) else KnowledgeBase(kb)
    axioms = axioms or AxiomSet(context_distribution=(rule == "context_distribution"))
    only = tuple(prefix) if prefix is not None else None
    out: list[Judgment] = []
    rule_fn = _rule_single_outcome if rule == "single_outcome" else _RULES[rule]
    for cand in rule_fn(kb.enumerate(), axioms, only_prefix=only, **kw):
        j = Judgment(cand.formula, cand.world)
        if j not in kb and j not in out:
            out.append(j)
    return out


def apply_distribution(kb, prefix: Prefix | None = None) -> list[Judgment]:
    """``P.K_i phi, P.K_i(phi -> psi) |- P.K_i psi`` plus the implication-chaining form."""
    return _new_judgments("distribution", kb, prefix)


def apply_truth(kb, prefix: Prefix | None = None) -> list[Judgment]:
    return _new_judgments("truth", kb, prefix)


def apply_generalization(kb, agents: Iterable[AgentInstance]) -> list[Judgment]:
    return _new_judgments("generalization", kb, agents=sorted(agents))


def apply_trust(kb, trust: TrustStructure, prefix: Prefix | None = None) -> list[Judgment]:
    return _new_judgments("trust", kb, prefix, trust=trust)


def apply_conjunction(kb, prefix: Prefix | None = None) -> list[Judgment]:
    return _new_judgments("conjunction", kb, prefix)


def compress_context(kb, prefix: Prefix | None = None) -> list[Judgment]:
    """Fold trailing moded operators into context tags, one layer at a time, until none are left.

    The last element of the result for a fully moded chain is the bare tagged
    statement, e.g. ``K[B@3,l] K[A@2,l] x`` ends in ``ctx[(A@2,l);(B@3,l)] x``.
    """
    kb = KnowledgeBase(kb.items if isinstance(kb, KnowledgeBase) else kb)
    out: list[Judgment] = []
    while True:
        new = _new_judgments("context_compression", kb, prefix)
        if not new:
            return out
        for j in new:
            kb.add(j)
        out.extend(new)


def apply_context_distribution(kb, prefix: Prefix | None = None) -> list[Judgment]:
    return _new_judgments("context_distribution", kb, prefix)


def apply_single_outcome(kb, prefix: Prefix | None = None,
                         domains: Mapping[str, Sequence] | None = None) -> tuple[list[Judgment], Contradiction | None]:
    """Negation rewrites for outcome literals, and the first value clash if any."""
    kb = kb if isinstance(kb, KnowledgeBase) else KnowledgeBase(kb)
    new = [j for j in _new_judgments("single_outcome", kb, prefix, domains=domains)]
    clashes = [c for c in _conflicts(kb.enumerate()) if prefix is None or c.prefix == tuple(prefix)]
    return new, _first_conflict(clashes)


def _first_conflict(clashes: list[Contradiction]) -> Contradiction | None:
    if not clashes:
        return None
    return min(clashes, key=lambda c: (len(c.prefix), max(c.witness_ids), c.witness_ids))


# ---------------------------------------------------------------- traces

@dataclass
class DerivationTrace:
    premises: list[Judgment]
    steps: list[Step] = field(default_factory=list)
    contradiction: Contradiction | None = None

    @property
    def verdict(self) -> str:
        return "contradiction" if self.contradiction else "consistent"

    def judgment(self, jid: int) -> Judgment:
        if jid < len(self.premises):
            return self.premises[jid]
        return self.steps[jid - len(self.premises)].conclusion

    def conclusions(self) -> list[Judgment]:
        return [s.conclusion for s in self.steps]

    def proof_steps(self) -> list[Step]:
        """Steps the contradiction (or last step) actually depends on, in trace order."""
        if not self.steps:
            return []
        n = len(self.premises)
        needed, stack = set(), [len(self.steps) - 1]
        while stack:
            k = stack.pop()
            if k in needed:
                continue
            needed.add(k)
            stack.extend(pid - n for pid in self.steps[k].premise_ids if pid >= n)
        return [self.steps[k] for k in sorted(needed)]

    def pruned(self) -> "DerivationTrace":
        """Same premises, only the steps in :meth:`proof_steps`, ids renumbered."""
        n = len(self.premises)
        keep = self.proof_steps()
        position = {id(s): k for k, s in enumerate(self.steps)}
        new_id = {n + position[id(s)]: n + k for k, s in enumerate(keep)}
        steps = [replace(s, premise_ids=tuple(new_id.get(p, p) for p in s.premise_ids)) for s in keep]
        out = DerivationTrace(list(self.premises), steps)
        if self.contradiction is not None:
            c = self.contradiction
            out.contradiction = replace(c, witness_ids=tuple(new_id.get(p, p) for p in c.witness_ids))
        return out

    def to_dict(self) -> dict:
        n = len(self.premises)
        doc = {
            "premises": [{"id": i, "scope": j.scope, "formula": to_text(j.formula)}
                         for i, j in enumerate(self.premises)],
            "steps": [{
                "id": n + k,
                "rule": s.rule,
                "premise_ids": list(s.premise_ids),
                "prefix": _prefix_text(s.prefix),
                "scope": s.conclusion.scope,
                "conclusion": to_text(s.conclusion.formula),
                "detail": {key: list(v) if isinstance(v, tuple) else v for key, v in s.detail},
            } for k, s in enumerate(self.steps)],
        }
        if self.contradiction is None:
            doc["verdict"] = "consistent"
        else:
            c = self.contradiction
            doc["verdict"] = {"contradiction": {
                "variable": c.variable,
                "values": list(c.values),
                "prefix": _prefix_text(c.prefix),
                "scope": c.statement.scope,
                "witness_ids": list(c.witness_ids),
                "statement": to_text(c.statement.formula),
            }}
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DerivationTrace":
        premises = [Judgment.from_scope(parse(p["formula"]), p["scope"]) for p in doc["premises"]]
        steps = []
        for s in doc["steps"]:
            detail = tuple((k, tuple(v) if isinstance(v, list) else v) for k, v in s.get("detail", {}).items())
            steps.append(Step(s["rule"], tuple(s["premise_ids"]), _parse_prefix(s["prefix"]),
                              Judgment.from_scope(parse(s["conclusion"]), s["scope"]), detail))
        trace = cls(premises, steps)
        verdict = doc.get("verdict", "consistent")
        if isinstance(verdict, Mapping):
            c = verdict["contradiction"]
            statement = Judgment.from_scope(parse(c["statement"]), c["scope"])
            chain, body = knows_chain(statement.formula)
            trace.contradiction = Contradiction(
                c["variable"], tuple(c["values"]), _parse_prefix(c["prefix"]),
                body.context if isinstance(body, Tagged) else ContextVector(),
                statement.world, tuple(c["witness_ids"]), statement)
        return trace

    @classmethod
    def from_json(cls, text: str) -> "DerivationTrace":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- saturation

@dataclass
class SaturationResult:
    kb: KnowledgeBase
    trace: DerivationTrace
    contradiction: Contradiction | None
    rounds: int
    truncated: bool
    blocked: list[BlockedPair] = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return self.contradiction is None


def _blocked_pairs(items) -> list[BlockedPair]:
    """Pairs that chain once context tags are erased but carry different contexts."""
    lookup = dict(items)
    groups: dict = {}
    for key, ctx, body, jid, world in _units(items, True, with_tags=True):
        groups.setdefault(key, []).append((ctx, body, jid, world))
    found = {}
    for key, entries in groups.items():
        by_norm: dict[Formula, list] = {}
        for ctx, body, jid, world in entries:
            by_norm.setdefault(strip_tags(body), []).append((ctx, jid, world))
        for ctx, body, jid, world in entries:
            if not isinstance(body, Implies):
                continue
            partners = list(by_norm.get(strip_tags(body.left), []))
            partners += [(c, i, w) for c, b, i, w in entries
                         if isinstance(b, Implies) and strip_tags(b.left) == strip_tags(body.right)]
            for pctx, pid, pworld in partners:
                if pctx == ctx or pid == jid or _join_scope(world, pworld) is False:
                    continue
                # an untagged body inside a tag is also offered whole; skip that double view
                if isinstance(lookup[pid].formula, Tagged) and key[1] is not None and len(pctx) == 0:
                    continue
                a, b = sorted([(pid, pctx), (jid, ctx)], key=lambda t: (len(t[1]), t[0]))
                pair = BlockedPair(key[0], key[1], (a[0], b[0]), (a[1], b[1]), (lookup[a[0]], lookup[b[0]]))
                found.setdefault((pair.prefix, pair.operator, pair.ids), pair)
    return sorted(found.values(), key=lambda p: (len(p.prefix), -max(p.lengths), -min(p.lengths), p.ids))


def saturate(premises: Iterable[Judgment], axioms: AxiomSet, trust: TrustStructure | None = None,
             depth_bound: int = 12, *, agents: Sequence[AgentInstance] | None = None,
             domains: Mapping[str, Sequence] | None = None, max_rounds: int = 1000) -> SaturationResult:
    """Apply enabled rules until nothing new appears or a contradiction is found.

    Conclusions deeper than ``depth_bound`` are dropped; ``truncated`` reports
    whether that happened, so a fixpoint under the bound is never mistaken for
    a complete one.
    """
    if depth_bound < 1:
        raise ValueError("depth_bound must be at least 1")
    kb = KnowledgeBase(premises)
    trace = DerivationTrace(list(kb.items))
    if agents is None:
        seen = {}
        for j in kb:
            for chain_agent in _agents_in(j.formula):
                seen.setdefault(chain_agent, None)
        agents = sorted(seen)
    kwargs = dict(trust=trust if axioms.trust or axioms.context_trust else None,
                  agents=list(agents), domains=domains)
    active = [r for r in RULE_ORDER if r != "single_outcome" and getattr(axioms, r)]
    truncated = False
    contradiction = None
    rounds = 0
    while rounds < max_rounds:
        rounds += 1
        added = 0
        for rule in active:
            snapshot = kb.enumerate()
            # innermost first: candidates under longer prefixes are recorded earlier
            cands = sorted(_RULES[rule](snapshot, axioms, **kwargs), key=lambda c: -len(c.prefix))
            for cand in cands:
                added += _record(kb, trace, cand, depth_bound) or 0
                truncated |= depth(cand.formula) > depth_bound
        if axioms.single_outcome:
            contradiction = _first_conflict(list(_conflicts(kb.enumerate())))
            if contradiction is not None:
                cand = _Candidate("single_outcome", contradiction.witness_ids, contradiction.prefix,
                                  contradiction.statement.formula, contradiction.statement.world,
                                  (("contradiction", contradiction.variable),))
                _record(kb, trace, cand, None, force=True)
                trace.contradiction = contradiction
                break
            for cand in _rule_single_outcome(kb.enumerate(), axioms, **kwargs):
                added += _record(kb, trace, cand, depth_bound) or 0
        if not added:
            break
    else:
        truncated = True
    if truncated:
        log.warning("saturation stopped at depth bound %d before reaching a fixpoint", depth_bound)
    blocked = _blocked_pairs(kb.enumerate()) if (axioms.context_distribution or axioms.context_compression) else []
    return SaturationResult(kb, trace, contradiction, rounds, truncated, blocked)


def _agents_in(f: Formula) -> list[AgentInstance]:
    out = []
    if isinstance(f, Knows):
        out.append(f.agent)
    for child in f.children():
        out.extend(_agents_in(child))
    return out


def _record(kb: KnowledgeBase, trace: DerivationTrace, cand: _Candidate, bound, force=False) -> int:
    if bound is not None and depth(cand.formula) > bound:
        return 0
    j = Judgment(cand.formula, cand.world)
    if kb.add(j) is None and not force:
        return 0
    trace.steps.append(Step(cand.rule, cand.premise_ids, cand.prefix, j, cand.detail))
    return 1


# ---------------------------------------------------------------- replay

def replay(trace: DerivationTrace, premises: Iterable[Judgment]) -> KnowledgeBase:
    """Re-run every step of ``trace`` from ``premises``; raise on the first step that does not fire."""
    given = KnowledgeBase(premises)
    for p in trace.premises:
        if p not in given:
            raise InvalidStepError(f"trace premise missing from the given premises: {p}")
    kb = KnowledgeBase(trace.premises)
    axioms = AxiomSet(prefix_rules=True)
    for n, step in enumerate(trace.steps):
        ids = step.premise_ids
        if any(pid < 0 or pid >= len(trace.premises) + n for pid in ids):
            raise InvalidStepError(f"step {n} ({step.rule}) cites a statement that does not precede it: {ids}")
        items = [(pid, trace.judgment(pid)) for pid in ids]
        info = step.info()
        if step.rule == "single_outcome" and "contradiction" in info:
            fired = [Judgment(c.statement.formula, c.statement.world) for c in _conflicts(items)
                     if c.witness_ids == ids]
        else:
            kw = {}
            if "edge" in info:
                trusted, _, truster = info["edge"].partition("~>")
                kw["trust"] = TrustStructure.from_arrows([(AgentInstance.parse(trusted), AgentInstance.parse(truster))])
            if "agent" in info:
                kw["agents"] = [AgentInstance.parse(info["agent"])]
            if "domain" in info:
                kw["domains"] = {_outcome_variable(step.conclusion.formula): info["domain"]}
            rule_axioms = replace(axioms, context_distribution=step.rule == "context_distribution")
            rule_fn = _RULES.get(step.rule) or (_rule_single_outcome if step.rule == "single_outcome" else None)
            if rule_fn is None:
                raise InvalidStepError(f"step {n}: unknown rule {step.rule!r}")
            fired = [Judgment(c.formula, c.world) for c in rule_fn(items, rule_axioms, **kw)
                     if c.premise_ids == ids and c.prefix == step.prefix]
        if step.conclusion not in fired:
            raise InvalidStepError(f"step {n} ({step.rule}) does not yield {step.conclusion}")
        kb.add(step.conclusion)
    return kb


def _outcome_variable(f: Formula) -> str:
    _, body = knows_chain(f)
    if isinstance(body, Tagged):
        body = body.body
    atom = body.arg if isinstance(body, Not) else body
    return atom.name
