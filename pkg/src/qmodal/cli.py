"""``qmodal`` command line.

Exit status: 0 on success or a consistent verdict, 2 when a derivation ends
in a contradiction (``fr``, ``derive``), 1 on usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from typing import Sequence

import numpy as np

from .formula import FormulaSyntaxError, DomainError, parse, to_text
from .inference import AxiomSet, Judgment, TrustStructure, saturate
from .kripke import ModelError, evaluate, extension, load_model, valid
from .quantum import BUILTIN_VECTORS, ProjectorFamily, QuantumError, Register, ket, relstate_probability
from .scenarios import (
    ScenarioError, SemanticsChoice, build_fr, collapse_prediction, deterministic_implication,
    halt_probability, load_scenario, outcome_table, run_fr, solve_hats, parse_arrow,
)

EXIT_OK, EXIT_ERROR, EXIT_CONTRADICTION = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(args, human: str, doc: dict) -> None:
    if args.format == "json":
        sys.stdout.write(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")
    else:
        sys.stdout.write(human.rstrip("\n") + "\n")


def _fraction(x: float) -> str:
    return str(Fraction(x).limit_denominator(1000))


# ---------------------------------------------------------------- fr

def _cmd_fr(args) -> int:
    depth = args.depth
    if args.scenario:
        scenario = load_scenario(args.scenario)
        if scenario.experiment == "hats":
            return _cmd_hats(args)
        semantics, exp = scenario.semantics, scenario.build()
        depth = depth if args.depth_given else scenario.depth_bound
    else:
        semantics, exp = SemanticsChoice(args.semantics, args.model), build_fr()
    if args.semantics_given:
        semantics = SemanticsChoice(args.semantics, semantics.model, semantics.trust_edges)
    verdict = run_fr(semantics, depth, exp)
    trace = verdict.trace if args.full_trace else verdict.trace.pruned()
    table = outcome_table(exp)
    chain = []
    var, value = exp.chain[0], exp.halt[exp.chain[0]]
    for nxt in exp.chain[1:]:
        out = deterministic_implication(exp, {var: value}, (nxt, exp.measurement(nxt).tick), semantics.model)
        chain.append({"given": f"{var}={value}", "query": nxt, "certain": out})
        if out is None:
            break
        var, value = nxt, out
    blocked = verdict.result.blocked
    doc = {
        "semantics": semantics.kind,
        "model": semantics.model,
        "depth_bound": depth,
        "halt_probability": halt_probability(exp),
        "outcomes": [{"values": list(k), "probability": p} for k, p in table.items()],
        "implications": chain,
        "verdict": verdict.verdict,
        "truncated": verdict.result.truncated,
        "trace": trace.to_dict(),
        "blocked_pairs": [{
            "prefix": [str(a) for a, _ in p.prefix],
            "lengths": list(p.lengths),
            "ids": list(p.ids),
            "statements": [to_text(s.formula) for s in p.statements],
        } for p in blocked],
    }
    lines = [f"semantics: {semantics.kind} ({semantics.model} model), depth bound {depth}", "",
             "outcome probabilities " + " ".join(exp.halt) + ":"]
    for k, p in table.items():
        lines.append(f"  {'/'.join(k):<10} {p:.12f}  ({_fraction(p)})")
    lines.append(f"halt probability: {doc['halt_probability']:.12f} ({_fraction(doc['halt_probability'])})")
    if semantics.model == "collapse" and {"a", "w"} <= set(exp.domains):
        lines.append(f"P(w=ok | a=1) under collapse: {collapse_prediction(exp):.12f}")
    lines.append("certain implications:")
    for c in chain:
        lines.append(f"  {c['given']} => {c['query']}={c['certain']}" if c["certain"]
                     else f"  {c['given']} => nothing certain about {c['query']}")
    lines += ["", f"derivation ({len(trace.steps)} of {len(verdict.trace.steps)} steps shown):"]
    lines += _trace_lines(trace)
    lines += ["", f"verdict: {verdict.verdict}" + (" (depth bound reached)" if verdict.result.truncated else "")]
    if blocked:
        p = blocked[0]
        lines += [f"blocked distribution pair (context lengths {p.lengths[0]} and {p.lengths[1]}):"]
        lines += [f"  [{i}] {s}" for i, s in zip(p.ids, p.statements)]
    _emit(args, "\n".join(lines), doc)
    return EXIT_CONTRADICTION if verdict.contradiction else EXIT_OK


def _trace_lines(trace) -> list[str]:
    n = len(trace.premises)
    lines = [f"  [{i}] {'premise':<20} {p}" for i, p in enumerate(trace.premises)]
    for k, s in enumerate(trace.steps):
        note = ""
        info = s.info()
        if "edge" in info:
            note = f"  via {info['edge']}"
        elif "agent" in info:
            note = f"  for {info['agent']}"
        ids = ",".join(str(i) for i in s.premise_ids)
        lines.append(f"  [{n + k}] {s.rule:<20} {s.conclusion}   <- {ids}{note}")
    return lines


# ---------------------------------------------------------------- hats

def _cmd_hats(args) -> int:
    report = solve_hats()
    titles = {0: "initial state", 1: "Ged stays silent", 2: "Tehanu stays silent"}
    lines = []
    for r in report.rounds:
        lines.append(f"t={r.tick}: {titles.get(r.tick, '')} ({len(r.worlds)} worlds)")
        lines.append(f"  {'state':<10} {'what Tehanu thinks':<40} what Ged thinks")
        for state, (teh, ged) in r.table():
            lines.append(f"  {state:<10} {' '.join(teh):<40} {' '.join(ged)}")
        lines.append("")
    if report.colour:
        lines.append(f"{report.announcer} announces: {report.colour} (t={report.tick})")
    else:
        lines.append(f"{report.announcer} cannot tell the hat colour")
    _emit(args, "\n".join(lines), report.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------- check

def _cmd_check(args) -> int:
    model = load_model(args.model)
    formula = parse(args.formula)
    if args.world:
        result = evaluate(model, args.world, formula)
        human = f"({args.world}) |= {to_text(formula)}: {result}"
        doc = {"formula": to_text(formula), "world": args.world, "holds": result}
    else:
        ext = sorted(extension(model, formula), key=list(model.worlds).index)
        result = valid(model, formula)
        human = f"|= {to_text(formula)}: {result}\n  holds in: {', '.join(ext) or '(none)'}"
        doc = {"formula": to_text(formula), "valid": result, "worlds": ext}
    _emit(args, human, doc)
    return EXIT_OK


# ---------------------------------------------------------------- derive

def _read_premises(path: str):
    """JSON document, or text with one ``[(world)] |= formula`` per line."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json"):
        doc = json.loads(text)
        premises = [Judgment.from_scope(parse(p["formula"]), p.get("scope", "all")) for p in doc["premises"]]
        return premises, doc
    premises = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        world, sep, rest = line.partition("|=")
        if not sep:
            premises.append(Judgment(parse(line)))
            continue
        world = world.strip()
        if world and not (world.startswith("(") and world.endswith(")")):
            raise ScenarioError(f"{path}:{lineno}: world must be written as '(id) |= formula'")
        premises.append(Judgment(parse(rest.strip()), world[1:-1] if world else None))
    return premises, {}


def _axioms(name: str, doc: dict) -> AxiomSet:
    spec = doc.get("axioms", name)
    if isinstance(spec, dict):
        try:
            return AxiomSet(**spec)
        except TypeError as exc:
            raise ScenarioError(f"bad axiom flags: {exc}") from None
    presets = {"truth": AxiomSet.truth_semantics, "trust": AxiomSet.trust_semantics,
               "context": AxiomSet.context_semantics, "basic": AxiomSet}
    if spec not in presets:
        raise ScenarioError(f"unknown axiom preset {spec!r}; choose from {sorted(presets)}")
    return presets[spec]()


def _cmd_derive(args) -> int:
    premises, doc = _read_premises(args.premises)
    axioms = _axioms(args.axioms, doc)
    arrows = list(args.trust or []) + list(doc.get("trust_edges", []))
    trust = TrustStructure.from_arrows(parse_arrow(a) for a in arrows)
    domains = doc.get("domains")
    result = saturate(premises, axioms, trust, args.depth, domains=domains)
    trace = result.trace if args.full_trace or not result.contradiction else result.trace.pruned()
    if args.trace_out:
        with open(args.trace_out, "w", encoding="utf-8") as fh:
            fh.write(result.trace.to_json())
    verdict = "contradiction" if result.contradiction else "consistent"
    lines = [f"rules: {', '.join(axioms.enabled())}"] + _trace_lines(trace)
    lines.append(f"verdict: {verdict} after {result.rounds} rounds, {len(result.kb)} statements"
                 + (" (depth bound reached)" if result.truncated else ""))
    _emit(args, "\n".join(lines), {"verdict": verdict, "truncated": result.truncated,
                                   "statements": len(result.kb), "trace": trace.to_dict()})
    return EXIT_CONTRADICTION if result.contradiction else EXIT_OK


# ---------------------------------------------------------------- relstate

def _random_qubit(rng) -> np.ndarray:
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return v / np.linalg.norm(v)


def _basis_family(register: Register, u: np.ndarray) -> ProjectorFamily:
    return ProjectorFamily.from_basis(register, {"0": u[:, 0], "1": u[:, 1]})


def _random_basis(rng) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    return q


def _cmd_relstate(args) -> int:
    S, O1, O2 = Register("S"), Register("O1"), Register("O2")
    rows = []
    z = np.eye(2, dtype=complex)
    x = np.column_stack([BUILTIN_VECTORS["+"], BUILTIN_VECTORS["-"]])
    cases = [("|0>, Z then X", ket(S, BUILTIN_VECTORS["0"]), z, x)]
    rng = np.random.default_rng(args.seed)
    for k in range(args.trials):
        cases.append((f"random #{k + 1}", ket(S, _random_qubit(rng)), _random_basis(rng), _random_basis(rng)))
    worst = 0.0
    for name, phi, first, second in cases:
        observers = [(_basis_family(S, first), O1), (_basis_family(S, second), O2)]
        for a in ("0", "1"):
            for b in ("0", "1"):
                try:
                    q = relstate_probability(phi, observers, {"O2": b}, {"O1": a})
                except QuantumError:
                    continue
                p = abs(np.vdot(second[:, int(b)], first[:, int(a)])) ** 2
                worst = max(worst, abs(q - p))
                rows.append({"case": name, "a": a, "b": b, "q": q, "p": p})
    lines = [f"{'case':<16} a b  {'q(b|a)':>14} {'|<b|a>|^2':>14}"]
    shown = rows if args.trials <= 5 else rows[:4 * 6]
    lines += [f"{r['case']:<16} {r['a']} {r['b']}  {r['q']:14.12f} {r['p']:14.12f}" for r in shown]
    if len(shown) < len(rows):
        lines.append(f"... {len(rows) - len(shown)} more rows")
    lines.append(f"max |q - p| over {len(cases)} cases: {worst:.3e}")
    _emit(args, "\n".join(lines), {"rows": rows, "max_abs_error": worst, "cases": len(cases)})
    return EXIT_OK


# ---------------------------------------------------------------- parse

def _cmd_parse(args) -> int:
    f = parse(args.formula)
    _emit(args, to_text(f), {"formula": to_text(f)})
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _common(suppress: bool) -> argparse.ArgumentParser:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = _Parser(add_help=False)
    p.add_argument("--format", choices=("human", "json"), default=d("human"))
    p.add_argument("--depth", type=int, default=d(12), help="formula depth bound for saturation")
    p.add_argument("--seed", type=int, default=d(0), help="seed for randomized instances")
    p.add_argument("--scenario", default=d(None), help="scenario file (JSON)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qmodal", description=__doc__.splitlines()[0], parents=[_common(False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common(True)

    fr = sub.add_parser("fr", parents=[common], help="run the four-agent experiment under one semantics")
    fr.add_argument("--semantics", choices=("truth", "trust", "context"), default=argparse.SUPPRESS)
    fr.add_argument("--model", choices=("unitary", "collapse"), default="unitary")
    fr.add_argument("--full-trace", action="store_true", help="print every step, not only the proof")
    fr.set_defaults(func=_cmd_fr)

    hats = sub.add_parser("hats", parents=[common], help="solve the three-hats puzzle")
    hats.set_defaults(func=_cmd_hats)

    check = sub.add_parser("check", parents=[common], help="model-check a formula")
    check.add_argument("model", help="Kripke model file (JSON)")
    check.add_argument("formula")
    check.add_argument("--world", help="evaluate at one world instead of checking validity")
    check.set_defaults(func=_cmd_check)

    derive = sub.add_parser("derive", parents=[common], help="saturate user premises")
    derive.add_argument("premises", help="premise file (.json, or text with one statement per line)")
    derive.add_argument("--axioms", default="basic", help="truth, trust, context or basic")
    derive.add_argument("--trust", action="append", metavar="J~>I", help="trust edge: I trusts J")
    derive.add_argument("--full-trace", action="store_true")
    derive.add_argument("--trace-out", help="write the full trace as JSON")
    derive.set_defaults(func=_cmd_derive)

    rel = sub.add_parser("relstate", parents=[common], help="relative-state vs standard probabilities")
    rel.add_argument("--trials", type=int, default=5)
    rel.set_defaults(func=_cmd_relstate)

    p = sub.add_parser("parse", parents=[common], help="print the canonical form of a formula")
    p.add_argument("formula")
    p.set_defaults(func=_cmd_parse)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.semantics_given = hasattr(args, "semantics")
        args.depth_given = any(a == "--depth" or a.startswith("--depth=") for a in argv)
        if not args.semantics_given:
            args.semantics = "truth"
        if args.depth < 1:
            raise UsageError("--depth must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (FormulaSyntaxError, DomainError, ModelError, ScenarioError, QuantumError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON ({exc.msg} at line {exc.lineno})", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
