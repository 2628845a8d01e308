import itertools

import pytest

from isla_forge.evaluator import evaluate, evaluate_cdt_membership
from isla_forge.formulas import (
    ExistsTree,
    ForallTree,
    NodeRef,
    Variable,
    parse_formula,
    substitute_vars,
)
from isla_forge.grammar import enumerate_strings, parse_grammar
from isla_forge.matching import MatchExpression, match
from isla_forge.parsing import parse_input
from isla_forge.predicates import standard_registry
from isla_forge.solver import (
    CDT,
    Solver,
    SolverConfig,
    insert_tree,
    make_tree,
    solve_stream,
)
from isla_forge.trees import DerivationTree


TINY_FORALL = (
    """
<start> ::= <a> <b>
<a> ::= "x" | "y"
<b> ::= "0" | "1"
""",
    'forall <a> a in start: (= a "x")',
)

TINY_EXISTS = (
    """
<s> ::= <l> <r>
<l> ::= "a" | "b"
<r> ::= "c" | "d"
""",
    'exists <l> l in start: (= l "a")',
)

TINY_LEN = (
    """
<w> ::= <c> | <c> <w>
<c> ::= "a" | "b"
""",
    "(>= (str.len start) 2)",
)

TINY_COUNT = (
    """
<s> ::= <i> | <i> <s>
<i> ::= "x"
""",
    'exists int n: ((>= (str.to_int n) 2) and (<= (str.to_int n) 2) and count(start, "<i>", n))',
)

TINY_PAIRS = [TINY_FORALL, TINY_EXISTS, TINY_LEN, TINY_COUNT]


def brute_force_solutions(grammar_text, constraint, depth=4):
    registry = standard_registry()
    grammar = parse_grammar(grammar_text)
    formula = parse_formula(constraint, grammar, registry.signatures)
    out = []
    for text in enumerate_strings(grammar, depth):
        if evaluate(formula, parse_input(grammar, text), grammar, registry):
            out.append(text)
    return grammar, formula, registry, sorted(out)


# ---------------------------------------------------------------------------
# step-level behavior


def test_trivial_cdt_emits_its_text(tiny_ab, registry):
    solver = Solver(tiny_ab, "(= start start)", SolverConfig(max_outputs=4, seed=0), registry)
    outputs = list(solver.run())
    assert outputs
    assert all(len(s) == 2 for s in outputs)


def test_index_only_grows(xml_spec):
    sizes = []

    def hook(cdt, outcome):
        for out in outcome.outputs:
            assert cdt.index <= out.index
            sizes.append(len(out.index))

    solver = Solver(
        xml_spec.grammar,
        xml_spec.formula,
        SolverConfig(max_outputs=10, seed=1, transition_hook=hook),
        xml_spec.registry,
    )
    list(solver.run())
    assert sizes


def test_no_rematch_of_indexed_pairs(xml_spec):
    seen_pairs = []

    def hook(cdt, outcome):
        if outcome.rule == "forall_match":
            for out in outcome.outputs:
                new = out.index - cdt.index
                for pair in new:
                    assert pair not in cdt.index
                    seen_pairs.append(pair)

    solver = Solver(
        xml_spec.grammar,
        xml_spec.formula,
        SolverConfig(max_outputs=10, seed=1, transition_hook=hook),
        xml_spec.registry,
    )
    list(solver.run())
    assert seen_pairs


@pytest.mark.parametrize("grammar_text,constraint", TINY_PAIRS)
def test_local_precision_per_rule(grammar_text, constraint):
    """Every transition's outputs represent a subset of its input's strings."""
    grammar, formula, registry, _ = brute_force_solutions(grammar_text, constraint)
    depth = 4
    language = enumerate_strings(grammar, depth)
    transitions = []

    def hook(cdt, outcome):
        if len(transitions) < 40:
            transitions.append((cdt, outcome))

    solver = Solver(
        grammar,
        formula,
        SolverConfig(max_depth=depth, exhaustive=True, transition_hook=hook),
        registry,
    )
    list(solver.run())
    assert transitions
    for cdt, outcome in transitions:
        for text in language:
            in_outputs = any(
                evaluate_cdt_membership(
                    out.constraints, out.tree, text, grammar, depth, registry
                )
                for out in outcome.outputs
            )
            if in_outputs:
                assert evaluate_cdt_membership(
                    cdt.constraints, cdt.tree, text, grammar, depth, registry
                ), (outcome.rule, text)


@pytest.mark.parametrize("grammar_text,constraint", TINY_PAIRS)
def test_bounded_completeness_on_tiny_pairs(grammar_text, constraint):
    grammar, formula, registry, expected = brute_force_solutions(grammar_text, constraint)
    solver = Solver(
        grammar, formula, SolverConfig(max_depth=4, exhaustive=True), registry
    )
    got = sorted(solver.run())
    assert got == expected


def test_length_17_identifiers(xml_spec):
    config = SolverConfig(max_outputs=3, seed=1)
    solver = Solver(
        xml_spec.grammar,
        'forall <id> id in start: (= (str.len id) 17)',
        config,
        xml_spec.registry,
    )
    outputs = list(solver.run())
    assert outputs
    for text in outputs:
        tree = parse_input(xml_spec.grammar, text)
        for node in tree.subtrees_with_label("<id>"):
            assert len(node.text) == 17


def test_solver_requires_depth_for_exhaustive():
    with pytest.raises(ValueError, match="max_depth"):
        SolverConfig(exhaustive=True)


def test_stream_determinism(csv_spec):
    config = SolverConfig(max_outputs=25, seed=7)
    one = list(Solver(csv_spec.grammar, csv_spec.formula, config, csv_spec.registry).run())
    two = list(Solver(csv_spec.grammar, csv_spec.formula, config, csv_spec.registry).run())
    assert one == two


def test_different_seeds_explore_differently(rest_spec):
    a = list(Solver(rest_spec.grammar, rest_spec.formula, SolverConfig(max_outputs=30, seed=1), rest_spec.registry).run())
    b = list(Solver(rest_spec.grammar, rest_spec.formula, SolverConfig(max_outputs=30, seed=2), rest_spec.registry).run())
    assert a != b


def test_timeout_reports_partial(csv_spec):
    config = SolverConfig(max_outputs=10_000, timeout_s=0.3, seed=1)
    solver = Solver(csv_spec.grammar, csv_spec.formula, config, csv_spec.registry)
    outputs = list(solver.run())
    assert solver.stats["timed_out"]
    assert len(outputs) < 10_000


def test_emitted_streams_are_duplicate_free(xml_spec):
    solver = Solver(
        xml_spec.grammar, xml_spec.formula, SolverConfig(max_outputs=40, seed=3), xml_spec.registry
    )
    outputs = list(solver.run())
    assert len(outputs) == len(set(outputs))


# ---------------------------------------------------------------------------
# tree insertion


def test_insert_at_matching_open_leaf(xml_grammar):
    host = DerivationTree(1, "<xml-open-tag>", None)
    new = DerivationTree(1, "<xml-open-tag>", None)
    results = insert_tree(host, new, xml_grammar)
    assert results
    nid, tree = results[0]
    assert tree.label == "<xml-open-tag>"


def test_insert_via_self_embedding(xml_grammar):
    host = parse_input(xml_grammar, "<b/>")
    new = parse_input(xml_grammar, "<a>", start="<xml-open-tag>")
    results = insert_tree(host, new, xml_grammar)
    assert results
    host_ids = {n.node_id for _, n in host.walk()}
    for nid, tree in results:
        ids = {n.node_id for _, n in tree.walk()}
        assert host_ids <= ids
        inserted = tree.by_id(nid)
        assert inserted.label == "<xml-open-tag>"
        assert inserted.text == "<a>"


def test_insert_unreachable_label_yields_nothing():
    g = parse_grammar('<s> ::= "k"\n<t> ::= "u"')
    host = parse_input(g, "k")
    new = DerivationTree(1, "<t>", None)
    assert insert_tree(host, new, g) == []


def test_insertion_results_are_ordered_simplest_first(xml_grammar):
    host = parse_input(xml_grammar, "<b>x</b>")
    new = DerivationTree(1, "<xml-open-tag>", None)
    results = insert_tree(host, new, xml_grammar)
    sizes = [tree.node_count() for _, tree in results]
    assert sizes == sorted(sizes)


def test_existential_insertion_end_to_end(xml_spec):
    constraint = 'exists <xml-open-tag> optag in start: (= optag "<a>")'
    solver = Solver(
        xml_spec.grammar, constraint, SolverConfig(max_outputs=8, seed=1), xml_spec.registry
    )
    outputs = list(solver.run())
    assert outputs
    registry = xml_spec.registry
    formula = parse_formula(constraint, xml_spec.grammar, registry.signatures)
    for text in outputs:
        assert "<a>" in text
        assert evaluate(formula, parse_input(xml_spec.grammar, text), xml_spec.grammar, registry)


def test_insertion_ceiling_limits_growth(xml_spec):
    insertions = []

    def hook(cdt, outcome):
        for out in outcome.outputs:
            for _, n in out.insertions:
                insertions.append(n)

    solver = Solver(
        xml_spec.grammar,
        'exists <xml-open-tag> optag in start: (= optag "<a>")',
        SolverConfig(max_outputs=10, seed=1, insertion_ceiling=2, transition_hook=hook),
        xml_spec.registry,
    )
    list(solver.run())
    assert insertions
    assert max(insertions) <= 2


# ---------------------------------------------------------------------------
# make_tree


def test_make_tree_plain(xml_grammar):
    tree, paths = make_tree(Variable("v", "<id>"), None, xml_grammar)
    assert tree.children is None
    assert tree.label == "<id>"
    assert paths == {}


def test_make_tree_with_mexpr(xml_grammar):
    mexpr = MatchExpression("<{<id> x}>")
    tree, paths = make_tree(Variable("v", "<xml-open-tag>"), mexpr, xml_grammar)
    assert tree.node_count() == 4  # root + three children
    assert set(paths) == {"x"}
    results = match(tree.at(()), mexpr, xml_grammar)
    # the built tree matches its own expression
    assert match(tree, mexpr, xml_grammar)


def test_make_tree_incompatible_mexpr(xml_grammar):
    from isla_forge.matching import MatchError

    with pytest.raises(MatchError):
        make_tree(Variable("v", "<id>"), MatchExpression("<{<id> x}>"), xml_grammar)


# ---------------------------------------------------------------------------
# trace and stream wrapper


def test_trace_records_transitions(tiny_ab, registry):
    config = SolverConfig(max_outputs=2, seed=0, trace=True)
    solver = Solver(tiny_ab, 'forall <a> a in start: (= a "x")', config, registry)
    list(solver.run())
    dot = solver.trace_dot()
    assert dot.startswith("digraph")
    assert "forall" in dot or "expand" in dot or "smt" in dot


def test_solve_stream_wrapper(tiny_ab):
    outputs = list(
        solve_stream(tiny_ab, 'forall <a> a in start: (= a "x")', SolverConfig(max_outputs=2, seed=0))
    )
    assert outputs == ["x0", "x1"]
