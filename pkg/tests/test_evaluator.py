import random

import pytest

from isla_forge.evaluator import (
    EvalError,
    EvalUnknown,
    evaluate,
    evaluate_cdt_membership,
    explain_failure,
)
from isla_forge.formulas import (
    Conj,
    Disj,
    ExistsTree,
    ForallTree,
    Neg,
    NodeRef,
    PredicateAtom,
    SmtAtom,
    SmtNode,
    StringLit,
    Variable,
    parse_formula,
    substitute_vars,
)
from isla_forge.grammar import enumerate_strings, parse_grammar
from isla_forge.matching import match
from isla_forge.parsing import parse_input
from isla_forge.predicates import standard_registry
from isla_forge.smt import eval_ground
from isla_forge.trees import DerivationTree


# ---------------------------------------------------------------------------
# independent reference evaluator, deliberately written from scratch


def reference_eval(formula, tree, grammar, registry, env):
    if isinstance(formula, Conj):
        return all(reference_eval(p, tree, grammar, registry, env) for p in formula.parts)
    if isinstance(formula, Disj):
        return any(reference_eval(p, tree, grammar, registry, env) for p in formula.parts)
    if isinstance(formula, Neg):
        return not reference_eval(formula.body, tree, grammar, registry, env)
    if isinstance(formula, (ForallTree, ExistsTree)):
        container = env[formula.container.name] if isinstance(formula.container, Variable) else tree.by_id(formula.container.node_id)
        domain = []
        stack = [container]
        while stack:
            node = stack.pop(0)
            if node.label == formula.var.vtype:
                if formula.mexpr is None:
                    domain.append((node, {}))
                else:
                    for m in match(node, formula.mexpr, grammar):
                        domain.append((node, m))
            stack.extend(node.children or ())
        answers = []
        for node, bindings in domain:
            inner = dict(env)
            inner[formula.var.name] = node
            for name, sub in bindings.items():
                inner[name] = sub
            answers.append(reference_eval(formula.body, tree, grammar, registry, inner))
        return all(answers) if isinstance(formula, ForallTree) else any(answers)
    if isinstance(formula, SmtAtom):
        assignment = {}
        from isla_forge.smt import term_refs

        for ref in term_refs(formula.term):
            if isinstance(ref, Variable):
                value = env[ref.name]
            else:
                value = tree.by_id(ref.node_id)
            assignment[ref] = value
        return eval_ground(formula.term, assignment)
    if isinstance(formula, PredicateAtom):
        from isla_forge.predicates import eval_structural

        resolved = []
        for a in formula.args:
            if isinstance(a, Variable):
                resolved.append(env[a.name])
            elif isinstance(a, NodeRef):
                resolved.append(tree.by_id(a.node_id))
            elif isinstance(a, StringLit):
                resolved.append(a.value)
            else:
                resolved.append(a.value)
        value = eval_structural(formula.name, tuple(resolved), tree)
        return value != formula.negated
    raise AssertionError(f"reference evaluator cannot handle {formula!r}")


TINY = """
<start> ::= <p> <q>
<p> ::= "a" | "b"
<q> ::= "c" | "d"
"""


@pytest.fixture(scope="module")
def tiny():
    return parse_grammar(TINY)


def test_rest_constraint(rest_spec):
    good = parse_input(rest_spec.grammar, "abc\n=====")
    short = parse_input(rest_spec.grammar, "abc\n==")
    assert evaluate(rest_spec.formula, good, rest_spec.grammar, rest_spec.registry)
    assert not evaluate(rest_spec.formula, short, rest_spec.grammar, rest_spec.registry)


def test_vacuous_universal(tiny, registry):
    f = parse_formula('forall <p> v in start: (= v "zzz")', tiny, registry.signatures)
    # no <p> subtree in a <q>-rooted fragment: evaluate against a start tree
    # whose <p> part cannot match the binder type of another grammar
    g = parse_grammar('<start> ::= "k"')
    f2 = ForallTree(Variable("v", "<start>"), None, Variable("start", "<start>"), f.body)
    # simpler: quantifier over a type that never occurs below start
    g3 = parse_grammar('<start> ::= <q>\n<q> ::= "c"\n<p> ::= "a"')
    f3 = parse_formula('forall <p> v in start: (= v "zzz")', g3, registry.signatures)
    tree = parse_input(g3, "c")
    assert evaluate(f3, tree, g3, registry)


def test_xml_def_use(xml_spec):
    good = parse_input(xml_spec.grammar, "<a>x</a>")
    bad = parse_input(xml_spec.grammar, "<a>x</b>")
    assert evaluate(xml_spec.formula, good, xml_spec.grammar, xml_spec.registry)
    assert not evaluate(xml_spec.formula, bad, xml_spec.grammar, xml_spec.registry)


def test_open_tree_rejected(tiny, registry):
    f = parse_formula('(= start "ac")', tiny, registry.signatures)
    with pytest.raises(EvalError, match="closed"):
        evaluate(f, DerivationTree(1, "<start>", None), tiny, registry)


def test_de_morgan(tiny, registry):
    rng = random.Random(3)
    trees = [parse_input(tiny, s) for s in enumerate_strings(tiny, 3)]
    formulas = [
        parse_formula('forall <p> v in start: (= v "a")', tiny, registry.signatures),
        parse_formula('exists <q> w in start: (= w "c")', tiny, registry.signatures),
        parse_formula('(= start "ac") or (= start "bd")', tiny, registry.signatures),
    ]
    for f in formulas:
        for tree in trees:
            assert evaluate(Neg(f), tree, tiny, registry) == (
                not evaluate(f, tree, tiny, registry)
            )


def test_matches_reference_evaluator(tiny, registry):
    from test_formulas import random_formula

    rng = random.Random(99)
    trees = [parse_input(tiny, s) for s in enumerate_strings(tiny, 3)]
    for _ in range(60):
        formula = random_formula(rng, tiny)
        for tree in trees:
            env = {"start": tree}
            expected = reference_eval(formula, tree, tiny, registry, env)
            actual = evaluate(formula, tree, tiny, registry)
            assert actual == expected, (formula, tree.text)


def test_evaluate_deterministic(xml_spec):
    tree = parse_input(xml_spec.grammar, "<ab>xy</ab>")
    runs = {evaluate(xml_spec.formula, tree, xml_spec.grammar, xml_spec.registry) for _ in range(5)}
    assert runs == {True}


def test_exists_int_witness(csv_spec):
    tree = parse_input(csv_spec.grammar, "a;b;c\n1;2;3\n")
    assert evaluate(csv_spec.formula, tree, csv_spec.grammar, csv_spec.registry)


def test_exists_int_unknown_without_bounds(tiny, registry):
    # no atoms constrain the witness, so the search cannot be exhaustive
    f = parse_formula(
        "exists int n: (= (str.to_int n) (str.to_int n))", tiny, registry.signatures
    )
    tree = parse_input(tiny, "ac")
    with pytest.raises(EvalUnknown):
        evaluate(f, tree, tiny, registry)


# ---------------------------------------------------------------------------
# bounded membership


def test_membership_equals_language_membership(tiny, registry):
    root = DerivationTree(1, "<start>", None)
    language = set(enumerate_strings(tiny, 3))
    for text in sorted(language) + ["zz", "ca"]:
        member = evaluate_cdt_membership((), root, text, tiny, 3, registry)
        assert member == (text in language)


def test_membership_with_unsatisfiable_atom(tiny, registry):
    root = DerivationTree(1, "<start>", None)
    atom = parse_formula('(= start "notinlanguage")', tiny, registry.signatures)
    grounded = substitute_vars(atom, {"start": NodeRef(1)})
    for text in enumerate_strings(tiny, 3):
        assert not evaluate_cdt_membership((grounded,), root, text, tiny, 3, registry)


def test_membership_csv_accepts_uniform_counts(csv_spec):
    grammar = csv_spec.grammar
    root = DerivationTree(1, "<file>", None)
    constraint = substitute_vars(csv_spec.formula, {"start": NodeRef(1)})
    ok = "a;b;c\n1;2;3\n"
    ragged = "a;b;c\n1;2\n"
    assert evaluate_cdt_membership((constraint,), root, ok, grammar, 12, csv_spec.registry)
    assert not evaluate_cdt_membership((constraint,), root, ragged, grammar, 12, csv_spec.registry)


def test_explain_names_the_failing_part(csv_spec):
    ragged = parse_input(csv_spec.grammar, "a;b;c\n1;2\n")
    detail = explain_failure(
        csv_spec.formula, ragged, csv_spec.grammar, csv_spec.registry
    )
    assert detail is not None
    assert "count" in detail
