import pytest
from hypothesis import given, settings, strategies as st

from isla_forge.grammar import (
    GrammarError,
    GrammarGraph,
    enumerate_strings,
    is_nonterminal,
    parse_grammar,
    reachable,
)
from isla_forge.parsing import parse_input


def fixpoint_reachable(grammar):
    """Independent oracle: transitive closure by fixpoint over productions."""
    reach = {nt: set() for nt in grammar.nonterminals}
    for lhs, rhs in grammar.productions:
        reach[lhs].update(s for s in rhs if is_nonterminal(s))
    changed = True
    while changed:
        changed = False
        for nt in grammar.nonterminals:
            extra = set()
            for mid in reach[nt]:
                extra |= reach[mid]
            if not extra <= reach[nt]:
                reach[nt] |= extra
                changed = True
    return reach


def brute_force_kpaths(grammar, k):
    """Oracle: enumerate alternating label/expansion paths directly."""
    paths = set()

    def walk(path, nt):
        if len(path) == k:
            paths.add(path)
            return
        for i, rhs in enumerate(grammar.alternatives(nt)):
            step = path + ((nt, i),)
            if len(step) == k:
                paths.add(step)
                continue
            for sym in rhs:
                if is_nonterminal(sym):
                    walk(step + (sym,), sym)

    for nt in grammar.nonterminals:
        walk((nt,), nt)
    return {p for p in paths if len(p) == k}


def test_minimal_grammar():
    g = parse_grammar('<start> ::= <a>\n<a> ::= "x"')
    assert len(g.nonterminals) == 2
    assert g.start == "<start>"


def test_xml_open_tag_alternative(xml_grammar):
    assert ("<", "<id>", ">") in xml_grammar.alternatives("<xml-open-tag>")


def test_undefined_nonterminal_is_rejected():
    with pytest.raises(GrammarError, match="<b>"):
        parse_grammar("<a> ::= <b>")


def test_syntax_error_carries_position():
    with pytest.raises(GrammarError, match="line 2"):
        parse_grammar('<a> ::= "x"\n<b> := "y"')


def test_unterminated_terminal():
    with pytest.raises(GrammarError, match="unterminated"):
        parse_grammar('<a> ::= "x')


def test_terminal_escapes():
    g = parse_grammar('<a> ::= "a\\nb\\t\\"\\\\"')
    assert 'a\nb\t"\\' in g.terminals


def test_alternative_order_preserved():
    g = parse_grammar('<a> ::= "z" | "y" | "x"')
    assert g.alternatives("<a>") == (("z",), ("y",), ("x",))


def test_reachable_xml(xml_grammar):
    assert reachable(xml_grammar, "<xml-tree>", "<id>")
    assert not reachable(xml_grammar, "<id>", "<xml-tree>")


def test_reachable_not_reflexive_without_self_embedding():
    g = parse_grammar('<a> ::= "x"')
    assert not reachable(g, "<a>", "<a>")


def test_reachable_reflexive_for_recursive(xml_grammar):
    assert reachable(xml_grammar, "<xml-tree>", "<xml-tree>")


def test_reachable_unknown_symbol(xml_grammar):
    with pytest.raises(GrammarError):
        reachable(xml_grammar, "<nope>", "<id>")


def test_reachable_agrees_with_fixpoint_oracle(xml_grammar):
    oracle = fixpoint_reachable(xml_grammar)
    graph = GrammarGraph(xml_grammar)
    for a in xml_grammar.nonterminals:
        for b in xml_grammar.nonterminals:
            assert graph.reachable(a, b) == (b in oracle[a]), (a, b)


def test_enumerate_strings_flat():
    g = parse_grammar('<start> ::= "a" | "b"')
    assert enumerate_strings(g, 2) == ["a", "b"]


def test_enumerate_strings_recursive(tiny_list):
    assert enumerate_strings(tiny_list, 3) == ["x", "xx"]


def test_enumerate_strings_depth_one_empty():
    g = parse_grammar("<start> ::= <a>\n<a> ::= \"x\"")
    assert enumerate_strings(g, 1) == []


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
def test_enumerate_strings_monotone(tiny_list, depth):
    smaller = set(enumerate_strings(tiny_list, depth))
    larger = set(enumerate_strings(tiny_list, depth + 1))
    assert smaller <= larger


def test_enumerated_strings_reparse(xml_grammar):
    for text in enumerate_strings(xml_grammar, 4):
        tree = parse_input(xml_grammar, text)
        assert not tree.is_open
        assert tree.text == text


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_kpaths_match_brute_force(xml_grammar, k):
    graph = GrammarGraph(xml_grammar)
    assert graph.kpaths(k) == brute_force_kpaths(xml_grammar, k)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_kpaths_match_brute_force_csv(csv_spec, k):
    graph = GrammarGraph(csv_spec.grammar)
    assert graph.kpaths(k) == brute_force_kpaths(csv_spec.grammar, k)


@given(st.integers(min_value=1, max_value=5))
@settings(max_examples=20, deadline=None)
def test_empty_expansion_counts_as_closed(depth):
    g = parse_grammar('<start> ::= "" | "a" <start>')
    strings = enumerate_strings(g, depth)
    assert "" in strings
    assert all(set(s) <= {"a"} for s in strings)
