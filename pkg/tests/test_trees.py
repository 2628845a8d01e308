import random

import pytest
from hypothesis import given, settings, strategies as st

from isla_forge.grammar import GrammarGraph, enumerate_strings, is_nonterminal, parse_grammar
from isla_forge.parsing import ParseFailure, parse_input
from isla_forge.trees import (
    DerivationTree,
    TreeError,
    enumerate_closures,
    kpath_coverage,
    substitute,
    tree_from_skeleton,
    tree_kpaths,
    unparse,
    validate_tree,
)


def naive_tree_paths(grammar, tree, k):
    """Oracle: extract alternating chains by explicit recursion over nodes."""
    found = set()

    def from_node(node, chain):
        if len(chain) == k:
            found.add(chain)
            return
        if node.children is None:
            return
        expansion = (
            node.label,
            grammar.production_index(node.label, tuple(c.label for c in node.children)),
        )
        if len(chain) + 1 == k:
            found.add(chain + (expansion,))
            return
        for child in node.children:
            if is_nonterminal(child.label):
                from_node(child, chain + (expansion, child.label))

    stack = [tree]
    while stack:
        node = stack.pop()
        if is_nonterminal(node.label):
            from_node(node, (node.label,))
        stack.extend(node.children or ())
    return found


def test_xml_example_has_fourteen_nodes(xml_grammar):
    tree = parse_input(xml_grammar, "<a>x</a>")
    assert tree.node_count() == 14
    assert tree.label == "<xml-tree>"
    assert len([1 for _, n in tree.walk() if not n.children]) == 7  # leaves


def test_two_node_tree():
    g = parse_grammar('<start> ::= "a"')
    tree = parse_input(g, "a")
    assert tree.node_count() == 2
    assert unparse(tree) == "a"


def test_mismatched_tags_still_parse(xml_grammar):
    tree = parse_input(xml_grammar, "<a>x</b>")
    ids = [n.text for _, n in tree.walk() if n.label == "<id>"]
    assert ids == ["a", "b"]


def test_parse_failure_position(xml_grammar):
    with pytest.raises(ParseFailure) as exc:
        parse_input(xml_grammar, "<a>x</a")
    assert exc.value.position >= 7


def test_yield_round_trip(xml_grammar):
    for text in enumerate_strings(xml_grammar, 4):
        assert unparse(parse_input(xml_grammar, text)) == text


def test_yield_of_open_tree_fails():
    open_tree = DerivationTree(1, "<start>", None)
    with pytest.raises(TreeError):
        unparse(open_tree)


def test_substitute_identity_up_to_renumbering(xml_grammar):
    tree = parse_input(xml_grammar, "<a>x</a>")
    replaced = substitute(tree, tree.node_id, tree)
    assert replaced.same_shape(tree)
    assert replaced.node_id == tree.node_id


def test_substitute_closes_open_leaf(xml_grammar):
    open_tag = tree_from_skeleton(("<xml-open-tag>", (("<", None), ("<id>", None), (">", None))))
    assert open_tag.is_open
    id_tree = parse_input(xml_grammar, "ab", start="<id>")
    leaf = open_tag.children[1]
    closed = substitute(open_tag, leaf.node_id, id_tree)
    assert not closed.is_open
    assert closed.text == "<ab>"
    validate_tree(xml_grammar, closed)


def test_substitute_label_mismatch(xml_grammar):
    tree = parse_input(xml_grammar, "<a>x</a>")
    id_node = next(n for _, n in tree.walk() if n.label == "<id>")
    text_tree = parse_input(xml_grammar, "x", start="<text>")
    with pytest.raises(TreeError, match="label mismatch"):
        substitute(tree, id_node.node_id, text_tree)


def test_substitute_unknown_id(xml_grammar):
    tree = parse_input(xml_grammar, "<a>x</a>")
    with pytest.raises(TreeError):
        substitute(tree, 999, tree)


def test_substitution_order_independent(xml_grammar):
    rng = random.Random(7)
    skeleton = (
        "<xml-tree>",
        (
            ("<xml-open-tag>", (("<", None), ("<id>", None), (">", None))),
            ("<inner-xml-tree>", None),
            ("<xml-close-tag>", (("</", None), ("<id>", None), (">", None))),
        ),
    )
    for _ in range(20):
        tree = tree_from_skeleton(skeleton)
        leaves = [leaf for _, leaf in tree.open_leaves()]
        l1, l2 = rng.sample(leaves, 2)
        r1 = parse_input(xml_grammar, rng.choice("abcd"), start=l1.label) if l1.label == "<id>" else parse_input(xml_grammar, "x", start=l1.label)
        r2 = parse_input(xml_grammar, rng.choice("abcd"), start=l2.label) if l2.label == "<id>" else parse_input(xml_grammar, "x", start=l2.label)
        one = substitute(substitute(tree, l1.node_id, r1), l2.node_id, r2)
        other = substitute(substitute(tree, l2.node_id, r2), l1.node_id, r1)
        if not one.is_open and not other.is_open:
            assert one.text == other.text


def test_substitute_keeps_other_ids(xml_grammar):
    tree = parse_input(xml_grammar, "<a>x</a>")
    id_node = next(n for _, n in tree.walk() if n.label == "<id>")
    replacement = parse_input(xml_grammar, "cd", start="<id>")
    updated = substitute(tree, id_node.node_id, replacement)
    before = {n.node_id for _, n in tree.walk()} - {
        n.node_id for _, n in tree.by_id(id_node.node_id).walk()
    }
    after = {n.node_id for _, n in updated.walk()}
    assert before <= after
    assert updated.by_id(id_node.node_id).label == "<id>"


def test_enumerate_closures_of_closed_tree(xml_grammar):
    tree = parse_input(xml_grammar, "<a>x</a>")
    assert enumerate_closures(xml_grammar, tree, 3) == [tree]


def test_enumerate_closures_of_root_matches_enumerate_strings(tiny_list):
    root = DerivationTree(1, "<s>", None)
    closures = enumerate_closures(tiny_list, root, 3)
    assert sorted(t.text for t in closures) == enumerate_strings(tiny_list, 3)


def test_enumerate_closures_cartesian_count():
    g = parse_grammar('<start> ::= <digit> <digit>\n<digit> ::= "0" | "1"')
    tree = tree_from_skeleton(("<start>", (("<digit>", None), ("<digit>", None))))
    closures = enumerate_closures(g, tree, 2)
    assert len(closures) == 4
    assert sorted(t.text for t in closures) == ["00", "01", "10", "11"]


def test_closures_conform_to_grammar(xml_grammar):
    root = DerivationTree(1, "<xml-tree>", None)
    for closure in enumerate_closures(xml_grammar, root, 4):
        validate_tree(xml_grammar, closure)


def test_closures_match_direct_recursive_oracle(tiny_ab):
    # oracle: all closed trees at depth <= 4 built by direct recursion
    def gen(nt, budget):
        if budget < 1:
            return []
        out = []
        for rhs in tiny_ab.alternatives(nt):
            if not rhs:
                out.append((nt, ()))
                continue
            if budget < 2:
                continue
            parts = [
                gen(s, budget - 1) if is_nonterminal(s) else [(s, None)] for s in rhs
            ]
            combos = [[]]
            for options in parts:
                combos = [c + [o] for c in combos for o in options]
            out.extend((nt, tuple(c)) for c in combos)
        return out

    def text_of(sk):
        label, children = sk
        if children is None:
            return label
        return "".join(text_of(c) for c in children)

    root = DerivationTree(1, "<start>", None)
    got = sorted(t.text for t in enumerate_closures(tiny_ab, root, 4))
    want = sorted(text_of(sk) for sk in gen("<start>", 4))
    assert got == want


def test_kpath_coverage_full_at_k1():
    g = parse_grammar('<start> ::= <a>\n<a> ::= "x"')
    tree = parse_input(g, "x")
    assert kpath_coverage(g, tree, 1) == 1.0


def test_kpath_coverage_root_only(xml_grammar):
    root = DerivationTree(1, "<xml-tree>", None)
    covered = tree_kpaths(xml_grammar, root, 1)
    assert covered == {("<xml-tree>",)}


def test_kpath_coverage_matches_oracle(xml_grammar):
    graph = GrammarGraph(xml_grammar)
    for text in ("<a>x</a>", "<ab>xy</ab>", "<a><b>x</b></a>", "<c/>"):
        tree = parse_input(xml_grammar, text)
        for k in (1, 2, 3):
            mine = tree_kpaths(xml_grammar, tree, k) & graph.kpaths(k)
            oracle = naive_tree_paths(xml_grammar, tree, k) & graph.kpaths(k)
            assert mine == oracle
            expected = len(oracle) / len(graph.kpaths(k))
            assert kpath_coverage(xml_grammar, tree, k) == pytest.approx(expected)


@given(st.integers(min_value=0, max_value=3))
@settings(max_examples=10, deadline=None)
def test_parse_is_deterministic(depth):
    g = parse_grammar('<s> ::= "a" <s> | "a"')
    text = "a" * (depth + 1)
    one = parse_input(g, text)
    two = parse_input(g, text)
    assert one.same_shape(two)
