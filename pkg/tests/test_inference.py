import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmodal.formula import AgentInstance, ContextVector, Knows, Mode, Tagged, depth, parse, to_text
from qmodal.inference import (
    AxiomSet, DerivationTrace, InvalidStepError, Judgment, KnowledgeBase, TrustStructure,
    apply_conjunction, apply_context_distribution, apply_distribution, apply_generalization,
    apply_single_outcome, apply_trust, apply_truth, compress_context, replay, saturate,
)
from qmodal.kripke import KripkeModel, World, evaluate, valid
from qmodal.scenarios import build_fr, eq1_trust, generate_premises, run_fr, SemanticsChoice

from .oracles import AGENTS, random_formula, random_model_data

DATA = Path(__file__).parent / "data"
FR_AGENTS = [AgentInstance.parse(a) for a in ("A@1", "B@2", "U@3", "W@4")]
L = Mode.LOCAL


def J(text, world=None):
    return Judgment(parse(text), world)


def texts(judgments):
    return [to_text(j.formula) for j in judgments]


def canon(text):
    return to_text(parse(text))


# ---------------------------------------------------------------- single rules

def test_distribution_modus_ponens():
    assert texts(apply_distribution([J("K[i] p"), J("K[i] (p -> q)")])) == [canon("K[i] q")]


def test_distribution_chains_implications():
    assert texts(apply_distribution([J("K[i] (c -> p)"), J("K[i] (p -> q)")])) == [canon("K[i] (c -> q)")]


def test_distribution_needs_same_agent():
    assert apply_distribution([J("K[i] p"), J("K[j] (p -> q)")]) == []


def test_distribution_under_common_prefix_only():
    kb = [J("K[W@4] K[U@3] p"), J("K[W@4] K[U@3] (p -> q)")]
    assert texts(apply_distribution(kb)) == [canon("K[W@4] K[U@3] q")]
    assert apply_distribution(kb, prefix=()) == []


def test_distribution_world_scopes_combine():
    out = apply_distribution([J("K[i] p", "s"), J("K[i] (p -> q)")])
    assert out == [J("K[i] q", "s")]
    assert apply_distribution([J("K[i] p", "s"), J("K[i] (p -> q)", "t")]) == []


def test_truth_strips_one_layer():
    assert apply_truth([J("K[A] (a=1 -> w=fail)")]) == [J("a=1 -> w=fail")]
    assert apply_truth([J("K[W] (w=ok & w=fail)", "s")]) == [J("w=ok & w=fail", "s")]
    assert apply_truth([]) == []


def test_generalization_over_each_agent():
    out = apply_generalization([J("a=1 -> w=fail")], FR_AGENTS)
    assert texts(out) == [canon(f"K[{a}] (a=1 -> w=fail)") for a in ("A@1", "B@2", "U@3", "W@4")]
    assert all(j.world is None for j in out)


def test_generalization_gates():
    assert apply_generalization([J("a=1 -> w=fail", "s")], FR_AGENTS) == []
    assert apply_generalization([J("a=1 -> w=fail")], []) == []


def test_trust_single_edge():
    trust = TrustStructure.from_arrows([(AgentInstance.parse("U@3"), AgentInstance.parse("W@4"))])
    assert texts(apply_trust([J("K[W@4] K[U@3] phi")], trust)) == [canon("K[W@4] phi")]


def test_trust_is_not_transitive():
    A, B, C = (AgentInstance(x) for x in "ABC")
    trust = TrustStructure(frozenset({(A, B), (B, C)}))
    assert apply_trust([J("K[A] K[C] phi")], trust) == []


def test_trust_edges_are_directed():
    trust = TrustStructure.from_arrows([(AgentInstance("U"), AgentInstance("W"))])
    assert trust.trusts(AgentInstance("W"), AgentInstance("U"))
    assert not trust.trusts(AgentInstance("U"), AgentInstance("W"))
    assert apply_trust([J("K[U] K[W] phi")], trust) == []


def test_self_trust_is_implicit_unless_disabled():
    W = AgentInstance("W", 4)
    assert texts(apply_trust([J("K[W@4] K[W@4] phi")], TrustStructure(frozenset()))) == [canon("K[W@4] phi")]
    assert apply_trust([J("K[W@4] K[W@4] phi")], TrustStructure(frozenset(), self_trust=False)) == []
    assert TrustStructure(frozenset({(W, W)})).arrows() == ["W@4~>W@4"]


def test_single_outcome_flags_clash():
    new, clash = apply_single_outcome([J("w=ok", "s"), J("w=fail", "s")])
    assert new == []
    assert clash.witness_ids == (0, 1)
    assert clash.variable == "w"
    assert to_text(clash.statement.formula) == canon("w=ok & w=fail")


def test_single_value_is_not_a_clash():
    assert apply_single_outcome([J("w=ok", "s")]) == ([], None)


def test_single_outcome_under_prefix():
    _, clash = apply_single_outcome([J("K[W] w=ok", "s"), J("K[W] w=fail", "s")])
    assert clash.prefix == ((AgentInstance("W"), None),)
    assert to_text(clash.statement.formula) == canon("K[W] (w=ok & w=fail)")


def test_clash_needs_identical_prefix_and_scope():
    assert apply_single_outcome([J("K[W] w=ok", "s"), J("K[U] w=fail", "s")])[1] is None
    assert apply_single_outcome([J("w=ok", "s"), J("w=fail", "t")])[1] is None
    ctx = "ctx[(A@1,l)]"
    assert apply_single_outcome([J(f"{ctx} w=ok"), J("ctx[(B@2,l)] w=fail")])[1] is None


def test_negation_rewrite_needs_domain():
    assert apply_single_outcome([J("K[W] !(w=ok)")])[0] == []
    new, _ = apply_single_outcome([J("K[W] !(w=ok)")], domains={"w": ["ok", "fail"]})
    assert new == [J("K[W] w=fail")]
    new, _ = apply_single_outcome([J("x=0")], domains={"x": ["0", "1", "2"]})
    assert texts(new) == [canon("!(x=1)"), canon("!(x=2)")]


def test_conjunction_pairs_and_projects():
    assert texts(apply_conjunction([J("K[B] p"), J("K[B] q")])) == [canon("K[B] (p & q)")]
    assert texts(apply_conjunction([J("K[B] (p & q)")])) == [canon("K[B] p"), canon("K[B] q")]


def test_conjunction_under_two_level_prefix():
    # hand-derived: combining inside K[W@4] K[U@3] gives the joint statement there
    out = texts(apply_conjunction([J("K[W@4] K[U@3] p"), J("K[W@4] K[U@3] q")],
                                  prefix=((AgentInstance("W", 4), None),)))
    assert out == [canon("K[W@4] K[U@3] (p & q)")]


def test_compress_two_layers():
    out = compress_context([J("K[B@3,l] K[A@2,l] a=1")])
    assert out[-1] == Judgment(Tagged([(AgentInstance("A", 2), L), (AgentInstance("B", 3), L)], parse("a=1")))


def test_compress_tagged_statement_is_fixpoint():
    assert compress_context([J("ctx[(A@2,l)] a=1")]) == []


def test_compress_three_layers_inner_to_outer():
    out = compress_context([J("K[C@3,l] K[B@2,l] K[A@1,l] p")])
    final = out[-1].formula
    assert isinstance(final, Tagged)
    assert [str(a) for a, _ in final.context.entries] == ["A@1", "B@2", "C@3"]


def test_context_distribution_with_matching_contexts():
    c = "ctx[(A@1,l);(B@2,l)]"
    out = apply_context_distribution([J(f"K[C@3,l] {c} p"), J(f"K[C@3,l] ({c} p -> {c} q)")])
    assert texts(out) == [canon(f"K[C@3,l] {c} q")]


def test_context_distribution_blocks_different_lengths():
    short = "ctx[(B@2,l);(U@3,l);(W@4,l)]"
    long = "ctx[(A@1,l);(B@2,l);(U@3,l);(W@4,l)]"
    assert apply_context_distribution([J(f"{short} (b=1)"), J(f"{long} (b=1) -> {long} (a=1)")]) == []
    assert apply_context_distribution([J(f"{short} (b=1)"), J(f"({long} b=1) -> ({long} a=1)")]) == []


def test_context_distribution_needs_same_operator():
    c = "ctx[(A@1,l);(B@2,l)]"
    assert apply_context_distribution([J(f"K[C@3,l] {c} p"), J(f"K[D@3,l] ({c} p -> {c} q)")]) == []


# ---------------------------------------------------------------- soundness

SOUND_RULES = AxiomSet(distribution=True, conjunction=True, truth=True, generalization=True,
                       pos_introspection=True, neg_introspection=True)


def _valid_premises(rng, model, worlds):
    premises = []
    for _ in range(40):
        f = random_formula(rng, 3)
        if valid(model, f):
            premises.append(Judgment(f))
            continue
        s = rng.choice(worlds)
        if evaluate(model, s, f):
            premises.append(Judgment(f, s))
        if len(premises) >= 5:
            break
    return premises


@settings(max_examples=60)
@given(st.integers(0, 100_000))
def test_rules_sound_on_s5_models(seed):
    rng = random.Random(seed)
    worlds, relations = random_model_data(rng, max_worlds=4, s5=True)
    model = KripkeModel([World(w, v) for w, v in worlds.items()], relations, s5=True)
    premises = _valid_premises(rng, model, list(worlds))
    result = saturate(premises, SOUND_RULES, depth_bound=5, agents=AGENTS, max_rounds=2)
    for j in result.kb:
        if j.world is None:
            assert valid(model, j.formula), j
        else:
            assert evaluate(model, j.world, j.formula), j


# ---------------------------------------------------------------- saturation

def _fr_trust_inputs():
    choice = SemanticsChoice("trust")
    return generate_premises(build_fr(), choice), choice.axioms(), choice.trust()


def test_truth_run_reaches_contradiction_on_w():
    result = run_fr("truth").result
    assert not result.consistent
    assert result.contradiction.variable == "w"
    assert to_text(result.contradiction.statement.formula) == canon("w=ok & w=fail")


def test_saturate_is_deterministic():
    premises, axioms, trust = _fr_trust_inputs()
    a = saturate(premises, axioms, trust).trace.to_json()
    b = saturate(list(premises), axioms, trust).trace.to_json()
    assert a == b


def test_saturate_is_monotone():
    premises = generate_premises(build_fr(), SemanticsChoice("truth"))
    result = saturate(premises, AxiomSet.truth_semantics())
    kb = result.kb.items
    assert kb[:len(premises)] == list(premises)
    assert [s.conclusion for s in result.trace.steps if s.rule != "single_outcome"] == kb[len(premises):]


def test_depth_bound_drops_deep_conclusions():
    result = saturate([J("K[i] K[i] K[i] p")], AxiomSet(pos_introspection=True), depth_bound=4)
    assert result.truncated
    assert all(depth(j.formula) <= 4 for j in result.kb)


def test_depth_bound_must_be_positive():
    with pytest.raises(ValueError):
        saturate([], AxiomSet(), depth_bound=0)


@pytest.mark.parametrize("bound", [1, 4, 8, 16])
def test_trust_chain_never_skips_a_link(bound):
    A, B, C = (AgentInstance(x) for x in "ABC")
    trust = TrustStructure(frozenset({(A, B), (B, C)}))
    result = saturate([J("K[A] K[C] phi")], AxiomSet(trust=True), trust, depth_bound=bound)
    assert J("K[A] phi") not in result.kb


def test_trust_chain_with_middle_link_takes_two_steps():
    A, B, C = (AgentInstance(x) for x in "ABC")
    trust = TrustStructure(frozenset({(A, B), (B, C)}))
    result = saturate([J("K[A] K[B] K[C] phi")], AxiomSet(trust=True), trust)
    target = result.kb.id_of(J("K[A] phi"))
    assert target is not None
    trace = result.trace
    step = trace.steps[target - len(trace.premises)]
    head = DerivationTrace(trace.premises, trace.steps[:trace.steps.index(step) + 1])
    assert [s.rule for s in head.proof_steps()] == ["trust", "trust"]


def test_context_rules_never_join_different_lengths():
    choice = SemanticsChoice("context")
    result = saturate(generate_premises(build_fr(), choice), choice.axioms(), depth_bound=12)
    assert result.consistent
    trace = result.trace
    for step in trace.steps:
        if step.rule != "context_distribution":
            continue
        lengths = set()
        for pid in step.premise_ids:
            _, body = _innermost(trace.judgment(pid).formula)
            lengths.add(len(body.context) if isinstance(body, Tagged) else 0)
        assert len(lengths) == 1


def _innermost(f):
    chain = []
    while isinstance(f, Knows):
        chain.append(f.agent)
        f = f.body
    if isinstance(f, Tagged) or not hasattr(f, "left"):
        return chain, f
    return chain, f.left


def test_context_run_reports_blocked_pair():
    result = run_fr("context").result
    assert result.blocked
    assert result.blocked[0].lengths == (3, 4)


# ---------------------------------------------------------------- replay and traces

def test_replay_reproduces_final_kb():
    premises, axioms, trust = _fr_trust_inputs()
    result = saturate(premises, axioms, trust)
    assert replay(result.trace, premises).items == result.kb.items


def test_replay_rejects_missing_premise_id():
    premises = generate_premises(build_fr(), SemanticsChoice("truth"))
    doc = run_fr("truth").trace.pruned().to_dict()
    step = next(s for s in doc["steps"] if len(s["premise_ids"]) == 2)
    step["premise_ids"] = step["premise_ids"][:1]
    with pytest.raises(InvalidStepError):
        replay(DerivationTrace.from_dict(doc), premises)


def test_replay_rejects_forward_reference():
    premises = [J("K[i] p"), J("K[i] (p -> q)")]
    trace = saturate(premises, AxiomSet()).trace
    doc = trace.to_dict()
    doc["steps"][0]["premise_ids"] = [0, 7]
    with pytest.raises(InvalidStepError):
        replay(DerivationTrace.from_dict(doc), premises)


def test_replay_rejects_foreign_premises():
    trace = saturate([J("K[i] p"), J("K[i] (p -> q)")], AxiomSet()).trace
    with pytest.raises(InvalidStepError):
        replay(trace, [J("K[i] p")])


def test_golden_theorem1_trace_replays_to_contradiction():
    text = (DATA / "theorem1_trace.json").read_text()
    trace = DerivationTrace.from_json(text)
    premises = generate_premises(build_fr(), SemanticsChoice("truth"))
    kb = replay(trace, premises)
    assert trace.verdict == "contradiction"
    assert trace.contradiction.statement in kb
    assert to_text(trace.steps[-1].conclusion.formula) == canon("w=ok & w=fail")


def test_golden_trace_matches_fresh_run():
    assert run_fr("truth").trace.pruned().to_json() == (DATA / "theorem1_trace.json").read_text()


def test_trace_json_round_trip():
    trace = run_fr("trust").trace.pruned()
    again = DerivationTrace.from_json(trace.to_json())
    assert again.to_json() == trace.to_json()
    assert json.loads(trace.to_json())["verdict"]["contradiction"]["variable"] == "w"


def test_eq1_trust_arrows():
    trust = eq1_trust()
    arrows = trust.arrows()
    for edge in ("A@0~>B@2", "A@1~>B@2", "A@2~>B@2", "B@2~>U@3", "U@3~>W@4", "W@4~>A@0"):
        assert edge in arrows
    W = AgentInstance("W", 4)
    assert trust.trusts(W, W)
    assert not trust.trusts(AgentInstance("B", 2), W)


def test_knowledge_base_dedups_and_subsumes():
    kb = KnowledgeBase()
    assert kb.add(J("p")) == 0
    assert kb.add(J("p")) is None
    assert kb.add(J("p", "s")) is None
    assert J("p", "s") in kb
    assert len(kb) == 1
    assert ContextVector() == ContextVector(())
