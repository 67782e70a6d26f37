"""The shipped experiments and their end-to-end verdicts.

``build_fr`` assembles the four-agent Wigner's-friend protocol on registers
R, A, S, B (plus the Ursula and Wigner records U, W). Its deterministic
predictions are turned into knowledge premises by ``generate_premises`` and
fed to :func:`qmodal.inference.saturate` by ``run_fr``. ``solve_hats`` runs
the three-hats puzzle by public announcement on a Kripke model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .formula import AgentInstance, Atom, Formula, Implies, Knows, Mode, Not, Or, wrap_knows
from .inference import AxiomSet, Judgment, SaturationResult, TrustStructure, saturate
from .kripke import KripkeModel, World, announce, indistinguishability, valid
from .quantum import (
    ATOL, BUILTIN_VECTORS, Ensemble, LocalOperator, ProjectorFamily, PureState, QuantumError,
    Register, ZeroProbabilityError, amplitudes_from_pairs, apply_unitary, born_probability, certainty,
    collapse_measure, condition, ket, measurement_isometry, record_family, tensor,
)

__all__ = [
    "ScenarioError", "ScheduleStep", "FRExperiment", "SemanticsChoice", "FRVerdict", "HatPuzzle",
    "HatRound", "HatReport", "Scenario", "build_fr", "halt_probability", "outcome_table",
    "deterministic_implication", "collapse_prediction", "generate_premises", "eq1_trust",
    "run_fr", "fr_world_model", "build_hats", "solve_hats", "load_scenario", "scenario_from_dict",
    "experiment_from_dict", "parse_arrow", "FR_DOMAINS", "POST_SELECTED_WORLD",
]

POST_SELECTED_WORLD = "ok,ok"


class ScenarioError(ValueError):
    """Malformed scenario document or unusable experiment description."""


# ---------------------------------------------------------------- the experiment

@dataclass(frozen=True, eq=False)
class ScheduleStep:
    tick: int
    agent: str | None
    variable: str | None = None
    family: ProjectorFamily | None = None
    observer: Register | None = None
    then: LocalOperator | None = None
    note: str = ""

    @property
    def instance(self) -> AgentInstance:
        return AgentInstance(self.agent, self.tick)


@dataclass(frozen=True, eq=False)
class FRExperiment:
    initial: PureState
    schedule: tuple[ScheduleStep, ...]
    order: tuple[str, ...]
    halt: Mapping[str, str]
    chain: tuple[str, ...]

    def measurement(self, key: str) -> ScheduleStep:
        """Step by outcome variable (``"a"``) or agent name (``"A"``)."""
        for step in self.schedule:
            if step.family is not None and key in (step.variable, step.agent):
                return step
        raise ScenarioError(f"no measurement by {key!r}")

    @property
    def domains(self) -> dict[str, list[str]]:
        return {s.variable: list(s.family.outcomes) for s in self.schedule if s.family is not None}

    def _canonical(self, psi: PureState) -> PureState:
        return psi.reorder([label for label in self.order if label in psi.labels])

    def _unitary_step(self, psi: PureState, step: ScheduleStep) -> PureState:
        if step.family is not None:
            psi = self._canonical(measurement_isometry(step.family, step.observer).apply(psi))
        if step.then is not None:
            psi = apply_unitary(psi, step.then)
        return psi

    def evolve(self, psi: PureState, start: int, stop: int) -> PureState:
        """Apply every scheduled step with ``start < tick <= stop`` (no collapse)."""
        for step in self.schedule:
            if start < step.tick <= stop:
                psi = self._unitary_step(psi, step)
        return psi

    def evolve_collapse(self, ens: Ensemble, start: int, stop: int) -> Ensemble:
        """Like :meth:`evolve`, but every record is read out and collapsed."""
        for step in self.schedule:
            if not start < step.tick <= stop:
                continue
            ens = ens.map(lambda s, st=step: self._unitary_step(s, st))
            if step.family is not None:
                rec = record_family(step.observer, step.family.outcomes)
                ens = ens.flat_map(lambda s, r=rec: collapse_measure(s, r))
        return ens

    def state_at(self, tick: int) -> PureState:
        return self.evolve(self.initial, 0, tick)

    def record(self, variable: str, value: str) -> LocalOperator:
        step = self.measurement(variable)
        return record_family(step.observer, step.family.outcomes).operator(value)


def _controlled(control: Register, target: Register, u: np.ndarray) -> LocalOperator:
    d = control.dim
    m = np.zeros((d * target.dim, d * target.dim), dtype=complex)
    m[: target.dim, : target.dim] = np.eye(target.dim)
    for k in range(1, d):
        sl = slice(k * target.dim, (k + 1) * target.dim)
        m[sl, sl] = u
    return LocalOperator((control, target), m)


def _lab_family(registers: Sequence[Register]) -> ProjectorFamily:
    # "fail" is the complement of |ok><ok| on the two-qubit lab
    return ProjectorFamily.from_basis(tuple(registers), {"ok": BUILTIN_VECTORS["okminus"]}, complement="fail")


def build_fr() -> FRExperiment:
    R, A, S, B, U, W = (Register(x) for x in "RASBUW")
    initial = tensor(ket(R, [math.sqrt(1 / 3), math.sqrt(2 / 3)]), ket(S, BUILTIN_VECTORS["0"]))
    hadamard = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    schedule = (
        ScheduleStep(1, "A", "a", ProjectorFamily.computational(R), A, _controlled(A, S, hadamard),
                     "Alice reads R and prepares S"),
        ScheduleStep(2, "B", "b", ProjectorFamily.computational(S), B, None, "Bob reads S"),
        ScheduleStep(3, "U", "u", _lab_family((R, A)), U, None, "Ursula measures Alice's lab"),
        ScheduleStep(4, "W", "w", _lab_family((S, B)), W, None, "Wigner measures Bob's lab"),
        ScheduleStep(5, None, None, note="Ursula and Wigner compare; halt on ok/ok"),
    )
    return FRExperiment(initial, schedule, tuple("RASBUW"), {"u": "ok", "w": "ok"}, ("u", "b", "a", "w"))


def _halt_operator(exp: FRExperiment, outcomes: Mapping[str, str]) -> LocalOperator:
    # records sit on distinct observer registers, so their projectors compose by tensor product
    ops = [exp.record(var, val) for var, val in outcomes.items()]
    op = ops[0]
    for nxt in ops[1:]:
        op = op @ nxt
    return op


def _recorded_state(exp: FRExperiment, variables) -> PureState:
    return exp.state_at(max(exp.measurement(v).tick for v in variables))


def halt_probability(exp: FRExperiment) -> float:
    """Probability that the halting measurements all report their halting outcomes."""
    return born_probability(_recorded_state(exp, exp.halt), _halt_operator(exp, exp.halt))


def outcome_table(exp: FRExperiment) -> dict[tuple[str, ...], float]:
    """Joint probabilities of every combination of the halting measurements."""
    variables = list(exp.halt)
    psi = _recorded_state(exp, variables)
    table = {}
    for combo in np.ndindex(*[len(exp.measurement(v).family.outcomes) for v in variables]):
        values = [exp.measurement(v).family.outcomes[k] for v, k in zip(variables, combo)]
        table[tuple(values)] = born_probability(psi, _halt_operator(exp, dict(zip(variables, values))))
    return table


def _normalize_given(given) -> list[tuple[str, str]]:
    if isinstance(given, Mapping):
        return [(str(k), str(v)) for k, v in given.items()]
    if isinstance(given, tuple) and len(given) == 2 and isinstance(given[0], str):
        return [(given[0], str(given[1]))]
    return [(str(k), str(v)) for k, v in given]


def _query_step(exp: FRExperiment, query) -> tuple[ScheduleStep, int]:
    agent, tick = query if isinstance(query, tuple) else (query, None)
    step = exp.measurement(agent)
    return step, step.tick if tick is None else int(tick)


def deterministic_implication(exp: FRExperiment, given, query, model: str = "unitary") -> str | None:
    """Outcome of ``query`` (agent or variable, tick) that is certain once ``given`` is observed.

    The global state is evolved to each given record's tick, conditioned on
    it, evolved on to the latest tick involved and read out with the queried
    agent's record family. ``None`` when no outcome has probability one.
    """
    givens = sorted(_normalize_given(given), key=lambda gv: exp.measurement(gv[0]).tick)
    qstep, qtick = _query_step(exp, query)
    if qtick < qstep.tick:
        raise ScenarioError(f"{qstep.agent} has no record before t={qstep.tick}")
    stop = max([qtick] + [exp.measurement(v).tick for v, _ in givens])
    readout = record_family(qstep.observer, qstep.family.outcomes)
    tick = 0
    if model == "unitary":
        psi = exp.initial
        for var, val in givens:
            step = exp.measurement(var)
            psi = exp.evolve(psi, tick, step.tick)
            tick = step.tick
            psi = condition(psi, exp.record(var, val))
        psi = exp.evolve(psi, tick, stop)
        return certainty(psi, readout)
    if model == "collapse":
        ens = Ensemble.pure(exp.initial)
        for var, val in givens:
            step = exp.measurement(var)
            ens = exp.evolve_collapse(ens, tick, step.tick)
            tick = step.tick
            ens = ens.condition(exp.record(var, val))
        ens = exp.evolve_collapse(ens, tick, stop)
        for label in readout.outcomes:
            if ens.expectation(readout.operator(label)) >= 1 - ATOL:
                return label
        return None
    raise ScenarioError(f"unknown model {model!r}; choose unitary or collapse")


def collapse_prediction(exp: FRExperiment, given=("a", "1"), query=("w", "ok")) -> float:
    """Probability of ``query`` given ``given`` when every measurement collapses the state."""
    (var, val), = _normalize_given(given)
    qvar, qval = query
    start = exp.measurement(var)
    ens = exp.evolve_collapse(Ensemble.pure(exp.initial), 0, start.tick)
    ens = ens.condition(exp.record(var, val))
    ens = exp.evolve_collapse(ens, start.tick, exp.measurement(qvar).tick)
    return ens.expectation(exp.record(qvar, qval))


# ---------------------------------------------------------------- premises

FR_DOMAINS = {"a": ["0", "1"], "b": ["0", "1"], "u": ["ok", "fail"], "w": ["ok", "fail"]}


@dataclass(frozen=True)
class SemanticsChoice:
    kind: str = "truth"
    model: str = "unitary"
    trust_edges: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("truth", "trust", "context"):
            raise ScenarioError(f"unknown semantics {self.kind!r}; choose truth, trust or context")
        if self.model not in ("unitary", "collapse"):
            raise ScenarioError(f"unknown model {self.model!r}; choose unitary or collapse")

    def axioms(self) -> AxiomSet:
        return {"truth": AxiomSet.truth_semantics, "trust": AxiomSet.trust_semantics,
                "context": AxiomSet.context_semantics}[self.kind]()

    def trust(self, exp: FRExperiment | None = None) -> TrustStructure | None:
        if self.kind != "trust":
            return None
        if self.trust_edges is None:
            return eq1_trust()
        return TrustStructure.from_arrows(parse_arrow(a) for a in self.trust_edges)


def parse_arrow(text: str) -> tuple[AgentInstance, AgentInstance]:
    for sep in ("~>", "↝", "⤳"):
        if sep in text:
            left, right = text.split(sep, 1)
            return AgentInstance.parse(left.strip()), AgentInstance.parse(right.strip())
    raise ScenarioError(f"trust edge {text!r} must look like 'A@1~>B@2'")


def eq1_trust() -> TrustStructure:
    """Alice (t=0,1,2) -> Bob@2 -> Ursula@3 -> Wigner@4 -> Alice (t=0,1,2), in arrow notation."""
    alice = [AgentInstance("A", t) for t in (0, 1, 2)]
    bob, ursula, wigner = AgentInstance("B", 2), AgentInstance("U", 3), AgentInstance("W", 4)
    arrows = [(a, bob) for a in alice] + [(bob, ursula), (ursula, wigner)] + [(wigner, a) for a in alice]
    return TrustStructure.from_arrows(arrows)


@dataclass(frozen=True)
class _Lemma:
    knower: AgentInstance
    given: Atom
    target: AgentInstance
    conclusion: Atom


def _lemmas(exp: FRExperiment, model: str) -> list[_Lemma]:
    """Walk the reasoning chain, keeping each step quantum theory makes certain."""
    lemmas = []
    var, value = exp.chain[0], exp.halt[exp.chain[0]]
    for nxt in exp.chain[1:]:
        step, qstep = exp.measurement(var), exp.measurement(nxt)
        try:
            out = deterministic_implication(exp, {var: value}, (nxt, qstep.tick), model)
        except ZeroProbabilityError:
            out = None
        if out is None:
            break
        lemmas.append(_Lemma(step.instance, Atom(var, value), qstep.instance, Atom(nxt, out)))
        var, value = nxt, out
    return lemmas


def generate_premises(exp: FRExperiment, semantics: SemanticsChoice) -> list[Judgment]:
    """Knowledge premises for one semantics.

    Truth semantics gets each lemma known by its author, as a plain
    implication valid in every world. Trust and context semantics get each
    lemma in knowledge form, nested under every later agent in time order.
    All three get the observations of the post-selected world.
    """
    mode = Mode.LOCAL if semantics.kind == "context" else None
    lemmas = _lemmas(exp, semantics.model)
    out: list[Judgment] = []

    def k(agent, body):
        return Knows(agent, body, mode)

    if semantics.kind == "truth":
        out += [Judgment(k(lem.knower, Implies(lem.given, lem.conclusion))) for lem in lemmas]
    else:
        timeline = sorted({lem.knower for lem in lemmas} | {exp.measurement(v).instance for v in exp.halt},
                          key=lambda a: (a.time, a.name))
        nested = []
        for idx, lem in enumerate(lemmas):
            body = Implies(k(lem.knower, lem.given), k(lem.target, lem.conclusion))
            start = timeline.index(lem.knower)
            for stop in range(start, len(timeline)):
                chain = [(a, mode) for a in reversed(timeline[start:stop + 1])]
                nested.append((stop - start, idx, Judgment(wrap_knows(chain, body))))
        out += [j for _, _, j in sorted(nested, key=lambda t: (t[0], t[1]))]
    first, second = (exp.measurement(v).instance for v in exp.halt)
    u_val, w_val = (Atom(v, val) for v, val in exp.halt.items())
    out += [
        Judgment(k(first, u_val), POST_SELECTED_WORLD),
        Judgment(k(second, w_val), POST_SELECTED_WORLD),
        Judgment(k(second, k(first, u_val)), POST_SELECTED_WORLD),
    ]
    return out


@dataclass
class FRVerdict:
    semantics: SemanticsChoice
    premises: list[Judgment]
    result: SaturationResult

    @property
    def contradiction(self):
        return self.result.contradiction

    @property
    def trace(self):
        return self.result.trace

    @property
    def verdict(self) -> str:
        return "contradiction" if self.contradiction else "consistent"


def run_fr(semantics: SemanticsChoice | str = "truth", depth_bound: int = 12,
           exp: FRExperiment | None = None) -> FRVerdict:
    if isinstance(semantics, str):
        semantics = SemanticsChoice(semantics)
    exp = exp or build_fr()
    premises = generate_premises(exp, semantics)
    result = saturate(premises, semantics.axioms(), semantics.trust(exp), depth_bound, domains=exp.domains)
    return FRVerdict(semantics, premises, result)


def fr_world_model(exp: FRExperiment | None = None) -> KripkeModel:
    """Worlds labelled by the two lab outcomes; each lab observer sees only its own result."""
    exp = exp or build_fr()
    (v1, s1), (v2, s2) = ((v, exp.measurement(v)) for v in exp.halt)
    ids, worlds = [], []
    for x in s1.family.outcomes:
        for y in s2.family.outcomes:
            wid = f"{x},{y}"
            ids.append(wid)
            val = {Atom(v1, o): o == x for o in s1.family.outcomes}
            val.update({Atom(v2, o): o == y for o in s2.family.outcomes})
            worlds.append(World(wid, val))
    relations = {
        s1.instance: indistinguishability(ids, lambda w: w.split(",")[0]),
        s2.instance: indistinguishability(ids, lambda w: w.split(",")[1]),
    }
    for v in exp.chain:
        step = exp.measurement(v)
        relations.setdefault(step.instance, indistinguishability(ids, lambda w: 0))
    return KripkeModel(worlds, relations, s5=True)


# ---------------------------------------------------------------- hats

HAT_COLOURS = ("white", "black")


@dataclass(frozen=True)
class HatPuzzle:
    names: tuple[str, ...] = ("Ged", "Tehanu", "Arren")
    worlds: tuple[tuple[int, ...], ...] = ()
    sees: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    speakers: tuple[str, ...] = ("Ged", "Tehanu")
    listener: str = "Arren"

    def agent(self, name: str) -> AgentInstance:
        return AgentInstance(name)


def world_id(hats: Sequence[int]) -> str:
    return "(" + ",".join(str(h) for h in hats) + ")"


def build_hats() -> tuple[HatPuzzle, KripkeModel]:
    """Three hats, at most two black; Ged sees Tehanu and Arren, Tehanu sees Arren."""
    names = ("Ged", "Tehanu", "Arren")
    # table order: by number of black hats, then lexicographic
    worlds = tuple(sorted((tuple(int(x) for x in w) for w in np.ndindex(2, 2, 2) if sum(w) < 3),
                          key=lambda w: (sum(w), w)))
    sees = {"Ged": (1, 2), "Tehanu": (2,), "Arren": ()}
    puzzle = HatPuzzle(names, worlds, sees)
    model_worlds = []
    for w in worlds:
        val = {Atom(name, colour): w[k] == c for k, name in enumerate(names) for c, colour in enumerate(HAT_COLOURS)}
        model_worlds.append(World(world_id(w), val))
    ids = [world_id(w) for w in worlds]
    lookup = dict(zip(ids, worlds))
    relations = {AgentInstance(name): indistinguishability(ids, lambda wid, s=sees[name]: tuple(lookup[wid][k] for k in s))
                 for name in names}
    return puzzle, KripkeModel(model_worlds, relations, s5=True)


def _knows_own(name: str) -> Formula:
    a = AgentInstance(name)
    return Or(Knows(a, Atom(name, "white")), Knows(a, Atom(name, "black")))


@dataclass(frozen=True)
class HatRound:
    tick: int
    model: KripkeModel
    silent: str | None

    @property
    def worlds(self) -> list[str]:
        return list(self.model.worlds)

    def table(self, columns: Sequence[str] = ("Tehanu", "Ged")) -> list[tuple[str, list[list[str]]]]:
        rows = []
        for wid in self.model.worlds:
            rows.append((wid, [list(self.model.successors(AgentInstance(c), wid)) for c in columns]))
        return rows


@dataclass(frozen=True)
class HatReport:
    rounds: tuple[HatRound, ...]
    announcer: str
    colour: str | None
    tick: int

    def to_dict(self) -> dict:
        return {
            "rounds": [{"t": r.tick, "silent": r.silent, "worlds": r.worlds,
                        "table": [{"state": s, "tehanu": cols[0], "ged": cols[1]} for s, cols in r.table()]}
                       for r in self.rounds],
            "announcement": {"agent": self.announcer, "colour": self.colour, "t": self.tick},
        }


def solve_hats() -> HatReport:
    """Speakers stay silent in turn; each silence is announced publicly."""
    puzzle, model = build_hats()
    rounds = [HatRound(0, model, None)]
    listener = AgentInstance(puzzle.listener)
    for tick, speaker in enumerate(puzzle.speakers, start=1):
        if valid(model, _knows_own(speaker)):
            break
        model = announce(model, Not(_knows_own(speaker)))
        rounds.append(HatRound(tick, model, speaker))
    colour = next((c for c in HAT_COLOURS if valid(model, Knows(listener, Atom(puzzle.listener, c)))), None)
    return HatReport(tuple(rounds), puzzle.listener, colour, rounds[-1].tick + 1)


# ---------------------------------------------------------------- scenario files

@dataclass(frozen=True)
class Scenario:
    experiment: str
    semantics: SemanticsChoice
    depth_bound: int = 12
    custom: FRExperiment | None = None

    def build(self) -> FRExperiment:
        return self.custom if self.custom is not None else build_fr()


def _register(doc) -> Register:
    if isinstance(doc, str):
        return Register(doc)
    return Register(str(doc["label"]), int(doc.get("dim", 2)))


def _family(registers: tuple[Register, ...], doc: Mapping) -> ProjectorFamily:
    if "computational" in doc:
        if len(registers) != 1:
            raise ScenarioError("a computational family measures exactly one register")
        return ProjectorFamily.computational(registers[0], doc["computational"])
    if "vectors" in doc:
        vectors = {str(k): amplitudes_from_pairs(v) for k, v in doc["vectors"].items()}
        return ProjectorFamily.from_basis(registers, vectors, doc.get("complement"))
    raise ScenarioError("family needs 'computational' or 'vectors'")


def _matrix(doc) -> np.ndarray:
    return np.array([[complex(float(re), float(im)) for re, im in row] for row in doc], dtype=complex)


def experiment_from_dict(doc: Mapping) -> FRExperiment:
    """Custom experiment: registers, initial amplitudes, schedule and families declared inline."""
    try:
        registers = {r.label: r for r in map(_register, doc["registers"])}
        init = doc["initial"]
        init_regs = tuple(registers[label] for label in init["registers"])
        initial = PureState.normalized(init_regs, amplitudes_from_pairs(init["amplitudes"]))
        steps = []
        for s in doc["schedule"]:
            family = observer = then = None
            if "measures" in s:
                measured = tuple(registers[label] for label in s["measures"])
                family = _family(measured, s["family"])
                observer = registers[s["observer"]]
            if "unitary" in s:
                u = s["unitary"]
                then = LocalOperator(tuple(registers[label] for label in u["registers"]), _matrix(u["matrix"]))
            steps.append(ScheduleStep(int(s["tick"]), s.get("agent"), s.get("variable"), family, observer, then,
                                      s.get("note", "")))
        order = tuple(doc.get("order", list(registers)))
        return FRExperiment(initial, tuple(sorted(steps, key=lambda st: st.tick)), order,
                            dict(doc["halt"]), tuple(doc["chain"]))
    except (KeyError, TypeError, IndexError) as exc:
        raise ScenarioError(f"malformed experiment description: {exc!r}") from None
    except QuantumError as exc:
        raise ScenarioError(str(exc)) from None


def scenario_from_dict(doc: Mapping) -> Scenario:
    if not isinstance(doc, Mapping):
        raise ScenarioError("scenario document must be a JSON object")
    experiment = doc.get("experiment", "fr")
    edges = doc.get("trust_edges")
    if edges is not None and (not isinstance(edges, list) or not all(isinstance(e, str) for e in edges)):
        raise ScenarioError("trust_edges must be a list of strings like 'A@1~>B@2'")
    semantics = SemanticsChoice(doc.get("semantics", "truth"), doc.get("model", "unitary"),
                                tuple(edges) if edges is not None else None)
    depth_bound = doc.get("depth_bound", 12)
    if not isinstance(depth_bound, int) or depth_bound < 1:
        raise ScenarioError("depth_bound must be a positive integer")
    custom = None
    if isinstance(experiment, Mapping):
        custom, experiment = experiment_from_dict(experiment), "custom"
    elif experiment not in ("fr", "hats"):
        raise ScenarioError(f"unknown experiment {experiment!r}")
    return Scenario(experiment, semantics, depth_bound, custom)


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return scenario_from_dict(doc)
