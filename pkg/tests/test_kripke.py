import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmodal.formula import AgentInstance, Atom, ContextVector, Implies, Knows, Mode, Not, Or, Tagged, parse
from qmodal.kripke import (
    IncompleteModelError, KripkeModel, ModelError, S5Error, World, announce, check_axiom, ContextualModel,
    evaluate, evaluate_contextual, extension, indistinguishability, load_model, model_from_dict,
    model_to_dict, valid,
)
from qmodal.scenarios import build_hats

from .oracles import naive_eval, random_formula, random_model_data

I = AgentInstance("i")
P = Atom("p")
L = Mode.LOCAL


def _model(data, s5=False):
    worlds, relations = data
    return KripkeModel([World(w, v) for w, v in worlds.items()], relations, s5=s5)


def test_single_reflexive_world_knows_p():
    m = KripkeModel([World("s", {P: True})], {I: [("s", "s")]})
    assert evaluate(m, "s", Knows(I, P))


def test_ged_knows_only_at_011():
    _, m = build_hats()
    ged_white = Knows(AgentInstance("Ged"), Atom("Ged", "white"))
    assert extension(m, ged_white) == {"(0,1,1)"}
    assert evaluate(m, "(0,1,1)", ged_white)
    assert not valid(m, ged_white)


def test_tautologies_valid():
    _, m = build_hats()
    assert valid(m, parse("Ged=white | Ged=black"))
    one = KripkeModel([World("s", {P: False})], {I: [("s", "s")]})
    assert valid(one, Or(P, Not(P)))


def test_unknown_world_and_agent():
    m = KripkeModel([World("s", {P: True})], {I: [("s", "s")]})
    with pytest.raises(ModelError):
        evaluate(m, "nowhere", P)
    with pytest.raises(ModelError):
        evaluate(m, "s", Knows(AgentInstance("j"), P))


def test_tagged_and_moded_formulas_need_contextual_model():
    m = KripkeModel([World("s", {P: True})], {I: [("s", "s")]})
    with pytest.raises(ModelError):
        evaluate(m, "s", Tagged([(I, L)], P))
    with pytest.raises(ModelError):
        evaluate(m, "s", Knows(I, P, L))


def test_missing_valuation_is_an_error():
    m = KripkeModel([World("s", {})], {I: [("s", "s")]})
    with pytest.raises(ModelError, match="no valuation"):
        evaluate(m, "s", P)


def test_relation_endpoint_must_exist():
    with pytest.raises(ModelError):
        KripkeModel([World("s", {P: True})], {I: [("s", "t")]})


def test_s5_violation_names_pair():
    with pytest.raises(S5Error) as err:
        KripkeModel([World("s", {P: True}), World("t", {P: False})],
                    {I: [("s", "s"), ("t", "t"), ("s", "t")]}, s5=True)
    assert err.value.pair == ("t", "s")


@pytest.mark.parametrize("seed", range(60))
def test_evaluate_matches_naive_oracle(seed):
    rng = random.Random(seed)
    worlds, relations = random_model_data(rng, max_worlds=5)
    m = _model((worlds, relations))
    for _ in range(10):
        f = random_formula(rng, 4)
        for s in worlds:
            assert evaluate(m, s, f) == naive_eval(worlds, relations, s, f)


def test_truth_counterexample_on_non_reflexive_model():
    # s sees only t; p true at t, false at s
    m = KripkeModel([World("s", {P: False}), World("t", {P: True})], {I: [("s", "t"), ("t", "t")]})
    report = check_axiom(m, "truth")
    assert not report.holds
    world, formula = report.counterexample
    assert world == "s"
    assert formula == Implies(Knows(I, P), P)


@given(st.integers(0, 10_000))
def test_s5_models_satisfy_truth_and_introspection(seed):
    m = _model(random_model_data(random.Random(seed), s5=True), s5=True)
    for axiom in ("truth", "pos_introspection", "neg_introspection", "distribution", "generalization"):
        assert check_axiom(m, axiom).holds, axiom


def test_unknown_axiom():
    m = KripkeModel([World("s", {P: True})], {I: [("s", "s")]})
    with pytest.raises(ValueError):
        check_axiom(m, "omniscience")


def test_hat_announcements():
    _, m = build_hats()
    ged, teh = AgentInstance("Ged"), AgentInstance("Tehanu")
    silent = lambda a, name: Not(Or(Knows(a, Atom(name, "white")), Knows(a, Atom(name, "black"))))
    m1 = announce(m, silent(ged, "Ged"))
    assert set(m.worlds) - set(m1.worlds) == {"(0,1,1)"}
    m2 = announce(m1, silent(teh, "Tehanu"))
    assert set(m1.worlds) - set(m2.worlds) == {"(0,0,1)", "(1,0,1)"}
    m2.check_s5()


def test_announce_tautology_is_identity():
    _, m = build_hats()
    assert announce(m, parse("Ged=white | Ged=black")).same_as(m)


def test_announce_contradiction_is_error():
    _, m = build_hats()
    with pytest.raises(ModelError):
        announce(m, parse("Ged=white & Ged=black"))


@given(st.integers(0, 10_000))
def test_announce_idempotent_and_shrinking(seed):
    rng = random.Random(seed)
    m = _model(random_model_data(rng, s5=True), s5=True)
    f = random_formula(rng, 3)
    if not extension(m, f):
        return
    once = announce(m, f)
    assert set(once.worlds) <= set(m.worlds)
    # truth of f can change after removing worlds, so compare on a stable (modal-free) formula too
    g = random_formula(rng, 1)
    if extension(m, g):
        a = announce(m, g)
        assert announce(a, g).same_as(a)
    once.check_s5()


def test_indistinguishability_is_equivalence():
    pairs = indistinguishability(["a1", "a2", "b1"], lambda w: w[0])
    assert set(pairs) == {("a1", "a1"), ("a1", "a2"), ("a2", "a1"), ("a2", "a2"), ("b1", "b1")}


# ---------------------------------------------------------------- contexts

def _contextual():
    A2, B3 = AgentInstance("A", 2), AgentInstance("B", 3)
    a1 = Atom("a", "1")
    base = KripkeModel([World("s", {a1: True}), World("t", {a1: True})], {B3: [("s", "s"), ("t", "t")]})
    ctx = ContextVector(((A2, L), (B3, L)))
    valuation = {("s", a1, ctx): True, ("t", a1, ctx): True}
    access = {(B3, L): [("s", "s"), ("s", "t"), ("t", "t")]}
    return base, valuation, access, A2, B3, a1


def test_contextual_knowledge_reads_appended_context():
    base, valuation, access, A2, B3, a1 = _contextual()
    m = ContextualModel(base, valuation, access)
    f = Knows(B3, Tagged([(A2, L)], a1), L)
    assert evaluate_contextual(m, "s", f)


def test_empty_context_agrees_with_base():
    base, valuation, access, *_ = _contextual()
    m = ContextualModel(base, valuation, access)
    for f in (Atom("a", "1"), Not(Atom("a", "1")), Knows(AgentInstance("B", 3), Atom("a", "1"))):
        for s in base.worlds:
            assert evaluate_contextual(m, s, f) == evaluate(base, s, f)


def test_missing_contextual_entry_is_incomplete_not_false():
    base, valuation, access, A2, B3, a1 = _contextual()
    del valuation[("t", a1, ContextVector(((A2, L), (B3, L))))]
    m = ContextualModel(base, valuation, access)
    with pytest.raises(IncompleteModelError):
        evaluate_contextual(m, "s", Knows(B3, Tagged([(A2, L)], a1), L))


def test_contextual_valuation_must_agree_on_empty_context():
    base, valuation, access, A2, B3, a1 = _contextual()
    valuation[("s", a1, ContextVector())] = False
    with pytest.raises(ModelError):
        ContextualModel(base, valuation, access)


# ---------------------------------------------------------------- files

def test_model_file_round_trip(tmp_path):
    _, m = build_hats()
    path = tmp_path / "hats.json"
    path.write_text(json.dumps(model_to_dict(m)))
    again = load_model(path)
    assert again.same_as(m)
    assert again.s5


def test_malformed_model_document():
    with pytest.raises(ModelError):
        model_from_dict({"relations": {}})
    with pytest.raises(ModelError):
        model_from_dict({"worlds": [{"id": "s", "valuation": {"p & q": True}}]})
