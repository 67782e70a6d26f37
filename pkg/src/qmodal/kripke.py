"""Kripke structures, satisfaction, axiom checks and public announcements."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Hashable, Iterable, Mapping, Sequence

from .formula import (
    AgentInstance, And, Atom, ContextVector, Formula, Iff, Implies, Knows, Mode, Not, Or,
    Tagged, parse, to_text,
)

__all__ = [
    "World", "KripkeModel", "ContextualModel", "ModelError", "S5Error", "IncompleteModelError",
    "AxiomReport", "AXIOMS", "evaluate", "valid", "extension", "evaluate_contextual",
    "check_axiom", "announce", "indistinguishability", "model_from_dict", "model_to_dict",
    "load_model",
]


class ModelError(ValueError):
    """Malformed model or a query the model cannot answer."""


class S5Error(ModelError):
    def __init__(self, agent: AgentInstance, prop: str, pair: tuple[str, ...]):
        self.agent, self.property, self.pair = agent, prop, pair
        super().__init__(f"relation of {agent} is not {prop}: missing {pair}")


class IncompleteModelError(ModelError):
    """A contextual truth value the evaluation needs was never assigned."""


@dataclass(frozen=True, eq=False)
class World:
    id: str
    valuation: Mapping[Atom, bool]

    def value(self, atom: Atom) -> bool:
        try:
            return self.valuation[atom]
        except KeyError:
            raise ModelError(f"world {self.id} has no valuation for {to_text(atom)}") from None


class KripkeModel:
    """Finite worlds, one accessibility relation per agent instance.

    With ``s5=True`` every relation is verified to be an equivalence relation.
    """

    def __init__(self, worlds: Iterable[World], relations: Mapping[AgentInstance, Iterable[tuple[str, str]]],
                 s5: bool = False):
        self.worlds: dict[str, World] = {}
        for w in worlds:
            if w.id in self.worlds:
                raise ModelError(f"duplicate world id {w.id}")
            self.worlds[w.id] = w
        if not self.worlds:
            raise ModelError("a Kripke model needs at least one world")
        self.s5 = s5
        self._position = {wid: k for k, wid in enumerate(self.worlds)}
        self.relations: dict[AgentInstance, frozenset[tuple[str, str]]] = {}
        self._succ: dict[AgentInstance, dict[str, tuple[str, ...]]] = {}
        for agent, pairs in relations.items():
            pairs = frozenset((str(s), str(t)) for s, t in pairs)
            for s, t in pairs:
                if s not in self.worlds or t not in self.worlds:
                    raise ModelError(f"relation of {agent} mentions unknown world in ({s}, {t})")
            self.relations[agent] = pairs
            succ = {w: [] for w in self.worlds}
            for s, t in sorted(pairs, key=self._pair_order):
                succ[s].append(t)
            self._succ[agent] = {w: tuple(ts) for w, ts in succ.items()}
        if s5:
            self.check_s5()
        self._cache: dict[Formula, frozenset[str]] = {}

    def _pair_order(self, pair):
        return self._position[pair[0]], self._position[pair[1]]

    @property
    def agents(self) -> list[AgentInstance]:
        return list(self.relations)

    def successors(self, agent: AgentInstance, world: str) -> tuple[str, ...]:
        if agent not in self._succ:
            raise ModelError(f"unknown agent instance {agent}")
        if world not in self.worlds:
            raise ModelError(f"unknown world {world}")
        return self._succ[agent][world]

    def check_s5(self) -> None:
        ids = list(self.worlds)
        for agent, pairs in self.relations.items():
            for s in ids:
                if (s, s) not in pairs:
                    raise S5Error(agent, "reflexive", (s, s))
            for s, t in sorted(pairs, key=self._pair_order):
                if (t, s) not in pairs:
                    raise S5Error(agent, "symmetric", (t, s))
            for s, t in sorted(pairs, key=self._pair_order):
                for u in self._succ_raw(pairs, t):
                    if (s, u) not in pairs:
                        raise S5Error(agent, "transitive", (s, u))

    @staticmethod
    def _succ_raw(pairs, world):
        return sorted(t for s, t in pairs if s == world)

    def restrict(self, keep: Iterable[str]) -> "KripkeModel":
        keep = set(keep)
        worlds = [w for wid, w in self.worlds.items() if wid in keep]
        relations = {a: [(s, t) for s, t in p if s in keep and t in keep] for a, p in self.relations.items()}
        return KripkeModel(worlds, relations, self.s5)

    def same_as(self, other: "KripkeModel") -> bool:
        return (list(self.worlds) == list(other.worlds)
                and all(dict(self.worlds[w].valuation) == dict(other.worlds[w].valuation) for w in self.worlds)
                and self.relations == other.relations)

    def __repr__(self):
        return f"KripkeModel(worlds={list(self.worlds)}, agents={[str(a) for a in self.relations]})"


def indistinguishability(world_ids: Sequence[str], observe: Callable[[str], Hashable]) -> list[tuple[str, str]]:
    """Pairs of worlds an agent cannot tell apart: those with equal observations."""
    return [(s, t) for s in world_ids for t in world_ids if observe(s) == observe(t)]


# ---------------------------------------------------------------- semantics

def extension(m: KripkeModel, f: Formula) -> frozenset[str]:
    """Set of worlds of ``m`` where ``f`` holds."""
    cached = m._cache.get(f)
    if cached is not None:
        return cached
    everything = frozenset(m.worlds)
    if isinstance(f, Atom):
        out = frozenset(w.id for w in m.worlds.values() if w.value(f))
    elif isinstance(f, Not):
        out = everything - extension(m, f.arg)
    elif isinstance(f, And):
        out = extension(m, f.left) & extension(m, f.right)
    elif isinstance(f, Or):
        out = extension(m, f.left) | extension(m, f.right)
    elif isinstance(f, Implies):
        out = (everything - extension(m, f.left)) | extension(m, f.right)
    elif isinstance(f, Iff):
        left, right = extension(m, f.left), extension(m, f.right)
        out = (left & right) | (everything - left - right)
    elif isinstance(f, Knows):
        if f.mode is not None:
            raise ModelError("knowledge with a mode needs a contextual model")
        inner = extension(m, f.body)
        out = frozenset(s for s in m.worlds if all(t in inner for t in m.successors(f.agent, s)))
    elif isinstance(f, Tagged):
        raise ModelError("context-tagged statement: use evaluate_contextual")
    else:
        raise TypeError(f"not a formula: {f!r}")
    m._cache[f] = out
    return out


def evaluate(m: KripkeModel, s: str, f: Formula) -> bool:
    if s not in m.worlds:
        raise ModelError(f"unknown world {s}")
    return s in extension(m, f)


def valid(m: KripkeModel, f: Formula) -> bool:
    return len(extension(m, f)) == len(m.worlds)


def announce(m: KripkeModel, f: Formula) -> KripkeModel:
    """Keep only the worlds where the announced formula holds."""
    keep = extension(m, f)
    if not keep:
        raise ModelError(f"announcement {to_text(f)} holds in no world")
    return m.restrict(keep)


# ---------------------------------------------------------------- axiom checks

AXIOMS = ("distribution", "generalization", "truth", "pos_introspection", "neg_introspection")


@dataclass(frozen=True)
class AxiomReport:
    axiom: str
    holds: bool
    counterexample: tuple[str | None, Formula] | None = None
    instances: int = 0


def _instance_pool(m: KripkeModel) -> list[Formula]:
    atoms = sorted({a for w in m.worlds.values() for a in w.valuation}, key=to_text)
    pool: list[Formula] = list(atoms)
    pool += [Not(a) for a in atoms]
    pool += [Knows(i, a) for i in m.agents for a in atoms]
    for a, b in itertools.product(atoms, repeat=2):
        if a != b:
            pool += [And(a, b), Or(a, b), Implies(a, b)]
    return pool


def check_axiom(m: KripkeModel, axiom: str) -> AxiomReport:
    """Search the model for a counterexample to one axiom schema.

    Instances range over the model's atoms and every formula built from them
    with one connective or knowledge operator (depth two).
    """
    if axiom not in AXIOMS:
        raise ValueError(f"unknown axiom {axiom!r}; choose from {AXIOMS}")
    pool = _instance_pool(m)
    count = 0

    def first_failure(formula):
        missing = set(m.worlds) - extension(m, formula)
        return next((w for w in m.worlds if w in missing), None)

    for i in m.agents:
        if axiom == "generalization":
            for phi in pool:
                count += 1
                if valid(m, phi) and not valid(m, Knows(i, phi)):
                    return AxiomReport(axiom, False, (first_failure(Knows(i, phi)), Knows(i, phi)), count)
            continue
        if axiom == "distribution":
            instances = (Implies(And(Knows(i, phi), Knows(i, Implies(phi, psi))), Knows(i, psi))
                         for phi in pool for psi in pool)
        elif axiom == "truth":
            instances = (Implies(Knows(i, phi), phi) for phi in pool)
        elif axiom == "pos_introspection":
            instances = (Implies(Knows(i, phi), Knows(i, Knows(i, phi))) for phi in pool)
        else:
            instances = (Implies(Not(Knows(i, phi)), Knows(i, Not(Knows(i, phi)))) for phi in pool)
        for inst in instances:
            count += 1
            bad = first_failure(inst)
            if bad is not None:
                return AxiomReport(axiom, False, (bad, inst), count)
    return AxiomReport(axiom, True, None, count)


# ---------------------------------------------------------------- contexts

class ContextualModel:
    """Kripke model whose truth values may depend on a context vector."""

    def __init__(self, base: KripkeModel,
                 contextual_valuation: Mapping[tuple[str, Formula, ContextVector], bool],
                 mode_accessibility: Mapping[tuple[AgentInstance, Mode], Iterable[tuple[str, str]]]):
        self.base = base
        self.contextual_valuation = dict(contextual_valuation)
        for (world, phi, ctx), value in self.contextual_valuation.items():
            if world not in base.worlds:
                raise ModelError(f"contextual valuation mentions unknown world {world}")
            if len(ctx) == 0 and isinstance(phi, Atom) and base.worlds[world].value(phi) != value:
                raise ModelError(f"empty-context value of {to_text(phi)} at {world} disagrees with base model")
        self.mode_accessibility: dict[tuple[AgentInstance, Mode], dict[str, tuple[str, ...]]] = {}
        for (agent, mode), pairs in mode_accessibility.items():
            succ = {w: [] for w in base.worlds}
            for s, t in pairs:
                if s not in base.worlds or t not in base.worlds:
                    raise ModelError(f"relation of {agent},{mode} mentions unknown world in ({s}, {t})")
                succ[s].append(t)
            self.mode_accessibility[(agent, Mode(mode))] = {w: tuple(ts) for w, ts in succ.items()}

    def lookup(self, world: str, phi: Formula, ctx: ContextVector) -> bool:
        key = (world, phi, ctx)
        if key in self.contextual_valuation:
            return self.contextual_valuation[key]
        if len(ctx) == 0 and isinstance(phi, Atom):
            return self.base.worlds[world].value(phi)
        raise IncompleteModelError(f"no truth value for ({ctx}, {to_text(phi)}) at world {world}")


def evaluate_contextual(m: ContextualModel, s: str, f: Formula) -> bool:
    if s not in m.base.worlds:
        raise ModelError(f"unknown world {s}")
    if isinstance(f, Atom):
        return m.lookup(s, f, ContextVector())
    if isinstance(f, Tagged):
        return m.lookup(s, f.body, f.context)
    if isinstance(f, Not):
        return not evaluate_contextual(m, s, f.arg)
    if isinstance(f, And):
        return evaluate_contextual(m, s, f.left) and evaluate_contextual(m, s, f.right)
    if isinstance(f, Or):
        return evaluate_contextual(m, s, f.left) or evaluate_contextual(m, s, f.right)
    if isinstance(f, Implies):
        return (not evaluate_contextual(m, s, f.left)) or evaluate_contextual(m, s, f.right)
    if isinstance(f, Iff):
        return evaluate_contextual(m, s, f.left) == evaluate_contextual(m, s, f.right)
    if isinstance(f, Knows):
        if f.mode is None:
            return all(evaluate_contextual(m, t, f.body) for t in m.base.successors(f.agent, s))
        key = (f.agent, f.mode)
        if key not in m.mode_accessibility:
            raise ModelError(f"no accessibility relation for {f.agent},{f.mode}")
        if isinstance(f.body, Tagged):
            ctx, phi = f.body.context, f.body.body
        else:
            ctx, phi = ContextVector(), f.body
        ctx = ctx.append(f.agent, f.mode)
        # evaluate every successor so that a missing entry surfaces even after a false one
        results = [m.lookup(t, phi, ctx) for t in m.mode_accessibility[key][s]]
        return all(results)
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------- model files

def model_from_dict(doc: Mapping) -> KripkeModel:
    try:
        worlds = []
        for entry in doc["worlds"]:
            valuation = {}
            for key, value in entry.get("valuation", {}).items():
                atom = parse(key)
                if not isinstance(atom, Atom):
                    raise ModelError(f"valuation key {key!r} is not an atom")
                valuation[atom] = bool(value)
            worlds.append(World(str(entry["id"]), valuation))
        relations = {AgentInstance.parse(agent): [tuple(p) for p in pairs]
                     for agent, pairs in doc.get("relations", {}).items()}
        return KripkeModel(worlds, relations, bool(doc.get("s5", False)))
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model document: {exc}") from None


def model_to_dict(m: KripkeModel) -> dict:
    return {
        "worlds": [{"id": w.id, "valuation": {to_text(a): v for a, v in w.valuation.items()}}
                   for w in m.worlds.values()],
        "relations": {str(a): [list(p) for p in sorted(pairs, key=m._pair_order)]
                      for a, pairs in m.relations.items()},
        "s5": m.s5,
    }


def load_model(path: str | Path) -> KripkeModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
