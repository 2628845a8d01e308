import random

import pytest

from isla_forge.evaluator import evaluate
from isla_forge.formulas import (
    Conj,
    Disj,
    ExistsInt,
    ExistsTree,
    ForallTree,
    FormulaError,
    Neg,
    NodeRef,
    PredicateAtom,
    SmtAtom,
    SmtNode,
    StringLit,
    Variable,
    establish_inv,
    free_variables,
    parse_formula,
    quantifier_metrics,
    substitute_vars,
)
from isla_forge.grammar import enumerate_strings, parse_grammar
from isla_forge.parsing import parse_input


TINY = """
<start> ::= <p> <q>
<p> ::= "a" | "b"
<q> ::= "c" | "d"
"""


@pytest.fixture(scope="module")
def tiny():
    return parse_grammar(TINY)


def test_nested_forall_with_predicate(registry):
    g = parse_grammar(
        """
<start> ::= <header>
<header> ::= <checksum>
<checksum> ::= "0"
"""
    )
    sigs = dict(registry.signatures)
    from isla_forge.predicates import PredicateSignature

    sigs["tar_checksum"] = PredicateSignature("tar_checksum", 2, "semantic", ("node", "node"))
    f = parse_formula(
        "forall <header> header in start: forall <checksum> checksum in header: "
        "tar_checksum(header, checksum)",
        g,
        sigs,
    )
    assert isinstance(f, ForallTree)
    assert isinstance(f.body, ForallTree)
    assert isinstance(f.body.body, PredicateAtom)
    assert f.body.body.name == "tar_checksum"


def test_mexpr_quantifier_with_atom(rest_spec, registry):
    f = parse_formula(
        'forall <section-title> title="{<title-txt> titletxt}\\n{<underline> underline}" '
        "in start: (>= (str.len underline) (str.len titletxt))",
        rest_spec.grammar,
        registry.signatures,
    )
    assert isinstance(f, ForallTree)
    assert f.mexpr is not None
    assert isinstance(f.body, SmtAtom)


def test_unknown_variable_rejected(tiny, registry):
    with pytest.raises(FormulaError, match="unknown variable"):
        parse_formula("(= x x)", tiny, registry.signatures)


def test_unknown_predicate_rejected(tiny, registry):
    with pytest.raises(FormulaError, match="unknown predicate"):
        parse_formula("frobnicate(start)", tiny, registry.signatures)


def test_arity_mismatch_rejected(tiny, registry):
    with pytest.raises(FormulaError, match="arguments"):
        parse_formula("forall <p> p in start: inside(p)", tiny, registry.signatures)


def test_unknown_nonterminal_type_rejected(tiny, registry):
    with pytest.raises(FormulaError, match="unknown nonterminal"):
        parse_formula('forall <zap> z in start: (= z "a")', tiny, registry.signatures)


def test_sort_error_rejected(tiny, registry):
    with pytest.raises(FormulaError, match="sort"):
        parse_formula("forall <p> p in start: (< p 3)", tiny, registry.signatures)


def test_negated_semantic_predicate_rejected(csv_spec):
    with pytest.raises(FormulaError, match="negation"):
        parse_formula(
            'not count(start, "<raw-field>", "3")',
            csv_spec.grammar,
            csv_spec.registry.signatures,
        )


def test_exists_int_under_negation_rejected(csv_spec):
    with pytest.raises(FormulaError, match="negation"):
        parse_formula(
            'not exists int n: count(start, "<raw-field>", n)',
            csv_spec.grammar,
            csv_spec.registry.signatures,
        )


def test_substitute_fresh_num_constant(tiny, registry):
    f = parse_formula(
        "exists int n: (>= (str.to_int n) 2)", tiny, registry.signatures
    )
    fresh = Variable(".num0", "NUM")
    body = substitute_vars(f.body, {f.var.name: fresh})
    refs = free_variables(body)
    assert fresh in refs


def test_substitute_empty_map(tiny, registry):
    f = parse_formula('forall <p> p in start: (= p "a")', tiny, registry.signatures)
    assert substitute_vars(f, {}) == f


def test_substitute_shadowed_binder(tiny, registry):
    f = parse_formula('forall <p> v in start: (= v "a")', tiny, registry.signatures)
    substituted = substitute_vars(f, {"v": NodeRef(99)})
    assert substituted == f  # bound occurrences untouched


def test_substitute_container(tiny, registry):
    f = parse_formula('forall <p> v in start: (= v "a")', tiny, registry.signatures)
    grounded = substitute_vars(f, {"start": NodeRef(1)})
    assert grounded.container == NodeRef(1)


def test_establish_inv_negated_exists(tiny, registry):
    f = parse_formula('not exists <p> v in start: (= v "a")', tiny, registry.signatures)
    branches = establish_inv(f)
    assert len(branches) == 1
    (formula,) = branches[0]
    assert isinstance(formula, ForallTree)
    assert isinstance(formula.body, SmtAtom)
    assert formula.body.term.op == "not"


def test_establish_inv_conjunction_split(tiny, registry):
    f = parse_formula('(= start "ac") and (= start "ad")', tiny, registry.signatures)
    branches = establish_inv(f)
    assert len(branches) == 1
    assert len(branches[0]) == 2


def test_establish_inv_dnf_branches(tiny, registry):
    f = parse_formula(
        '(= start "ac") or ((= start "ad") and (= start "bd"))',
        tiny,
        registry.signatures,
    )
    branches = establish_inv(f)
    assert len(branches) == 2
    assert len(branches[0]) == 1
    assert len(branches[1]) == 2


def test_establish_inv_branch_limit():
    g = parse_grammar('<start> ::= "a"')
    atom = SmtAtom(SmtNode("=", (Variable("start", "<start>"), StringLit("a"))))
    clause = Disj((atom, SmtAtom(SmtNode("=", (Variable("start", "<start>"), StringLit("b"))))))
    formula = Conj(tuple([clause] * 8))  # 2^8 = 256 branches
    with pytest.raises(FormulaError, match="branch limit"):
        establish_inv(formula)


def test_negate_structural_predicate(tiny, registry):
    f = parse_formula(
        "forall <p> a in start: forall <p> b in start: not same_position(a, b)",
        tiny,
        registry.signatures,
    )
    inner = f.body.body
    assert isinstance(inner, Neg)
    branches = establish_inv(f)
    normalized = branches[0][0]
    assert isinstance(normalized.body.body, PredicateAtom)
    assert normalized.body.body.negated


def test_quantifier_metrics(tiny, registry):
    f = parse_formula(
        'exists <p> v in start: forall <q> w in start: (= w "c")',
        tiny,
        registry.signatures,
    )
    assert quantifier_metrics(f) == (1, 2)


# ---------------------------------------------------------------------------
# random formulas: normalized evaluation equals original evaluation


def random_formula(rng, grammar, depth=3):
    from isla_forge.formulas import IntLit

    start = Variable("start", grammar.start)

    def atom(env):
        choices = []
        for var in env:
            value = rng.choice(["a", "b", "c", "d", "ac", "bd"])
            choices.append(SmtAtom(SmtNode("=", (var, StringLit(value)))))
            choices.append(
                SmtAtom(
                    SmtNode(
                        ">=",
                        (SmtNode("str.len", (var,)), IntLit(rng.randrange(0, 3))),
                    )
                )
            )
        return rng.choice(choices)

    def build(d, env):
        if d <= 0:
            return atom(env)
        kind = rng.randrange(6)
        if kind == 0:
            return Conj((build(d - 1, env), build(d - 1, env)))
        if kind == 1:
            return Disj((build(d - 1, env), build(d - 1, env)))
        if kind == 2:
            return Neg(build(d - 1, env))
        if kind == 3:
            var = Variable(f"v{rng.randrange(1000)}", "<p>")
            return ForallTree(var, None, start, build(d - 1, env + [var]))
        if kind == 4:
            var = Variable(f"w{rng.randrange(1000)}", "<q>")
            return ExistsTree(var, None, start, build(d - 1, env + [var]))
        return atom(env)

    return build(depth, [start])


def test_normalized_evaluation_matches_original(tiny, registry):
    rng = random.Random(42)
    trees = [parse_input(tiny, s) for s in enumerate_strings(tiny, 3)]
    for _ in range(100):
        formula = random_formula(rng, tiny)
        try:
            branches = establish_inv(formula)
        except FormulaError:
            continue  # blowup guard tripping is acceptable here
        for tree in trees:
            original = evaluate(formula, tree, tiny, registry)
            split = any(
                all(evaluate(member, tree, tiny, registry) for member in branch)
                for branch in branches
            )
            assert split == original, (formula, tree.text)


def test_substitution_commutes_with_evaluation(tiny, registry):
    f = parse_formula(
        'exists <p> v in start: (= v "a")', tiny, registry.signatures
    )
    tree = parse_input(tiny, "ac")
    direct = evaluate(f, tree, tiny, registry)
    grounded = substitute_vars(f, {"start": NodeRef(tree.node_id)})
    assert evaluate(grounded, tree, tiny, registry) == direct
