"""Match expressions: flattening, parsing into abstract trees, and matching.

A match expression is raw text interspersed with ``<nonterminal>``
placeholders, ``{<nonterminal> var}`` binders, and ``[...]`` optional
segments.  ``\\`` escapes the next character, so literal ``<``, ``{`` and
``[`` are written ``\\<``, ``\\{`` and ``\\[``.

Matching proceeds in two stages.  ``mexpr_trees`` turns the expression into
abstract derivation trees (open leaves for placeholders and binders) plus a
map from binder variables to their paths; ``match_trees`` then structurally
matches an abstract tree against a concrete one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .grammar import Grammar
from .parsing import Item, ParseFailure, parse_items
from .trees import DerivationTree

__all__ = [
    "MatchExpression",
    "MatchError",
    "mexpr_trees",
    "match_trees",
    "match",
    "might_match",
]

_BINDER_RE = re.compile(r"\{(<[a-zA-Z][a-zA-Z0-9_-]*>)\s+([A-Za-z_][A-Za-z0-9_]*)\}")
_PLACEHOLDER_RE = re.compile(r"<[a-zA-Z][a-zA-Z0-9_-]*>")

# \n and \t decode; everything else escapes to itself (covers \< \{ \[ \\)
_ESCAPED = {"n": "\n", "t": "\t"}


class MatchError(ValueError):
    pass


@dataclass(frozen=True)
class MatchExpression:
    raw: str

    def binder_names(self) -> list[str]:
        return [m.group(2) for m in _BINDER_RE.finditer(self.raw)]

    def binder_types(self) -> dict[str, str]:
        """Declared nonterminal type per binder variable."""
        types: dict[str, str] = {}
        for m in _BINDER_RE.finditer(self.raw):
            nt, var = m.group(1), m.group(2)
            if var in types and types[var] != nt:
                raise MatchError(f"binder {var!r} declared with two types")
            types[var] = nt
        return types

    def nonterminals(self) -> set[str]:
        """All nonterminals mentioned by placeholders or binders."""
        names = set()
        i = 0
        raw = self.raw
        while i < len(raw):
            if raw[i] == "\\":
                i += 2
                continue
            b = _BINDER_RE.match(raw, i)
            if b:
                names.add(b.group(1))
                i = b.end()
                continue
            p = _PLACEHOLDER_RE.match(raw, i)
            if p:
                names.add(p.group(0))
                i = p.end()
                continue
            i += 1
        return names


def _flatten(raw: str) -> list[str]:
    """All combinations of activated and deactivated optional segments."""
    segments: list[tuple[str, bool]] = []  # (text, optional?)
    buf = []
    i = 0
    depth = 0
    while i < len(raw):
        ch = raw[i]
        if ch == "\\" and i + 1 < len(raw):
            buf.append(raw[i : i + 2])
            i += 2
            continue
        if ch == "[":
            if depth:
                raise MatchError("nested optionals are not supported")
            segments.append(("".join(buf), False))
            buf = []
            depth = 1
            i += 1
            continue
        if ch == "]":
            if not depth:
                raise MatchError("unbalanced ']' in match expression")
            segments.append(("".join(buf), True))
            buf = []
            depth = 0
            i += 1
            continue
        buf.append(ch)
        i += 1
    if depth:
        raise MatchError("unbalanced '[' in match expression")
    segments.append(("".join(buf), False))

    variants = [""]
    for text, optional in segments:
        if optional:
            # deactivated variant first, then activated, per existing variant
            variants = [v + extra for v in variants for extra in ("", text)]
        else:
            variants = [v + text for v in variants]
    return variants


def _tokenize(flat: str, grammar: Grammar) -> tuple[tuple[Item, ...], dict[int, str]]:
    """Items for the parser plus binder variable per placeholder item index."""
    items: list[Item] = []
    binders: dict[int, str] = {}
    seen_vars: set[str] = set()
    i = 0
    while i < len(flat):
        ch = flat[i]
        if ch == "\\" and i + 1 < len(flat):
            nxt = flat[i + 1]
            items.append(Item(_ESCAPED.get(nxt, nxt)))
            i += 2
            continue
        b = _BINDER_RE.match(flat, i)
        if b:
            nt, var = b.group(1), b.group(2)
            if var in seen_vars:
                raise MatchError(f"binder {var!r} used twice in one variant")
            seen_vars.add(var)
            binders[len(items)] = var
            items.append(Item(None, placeholder=nt))
            i = b.end()
            continue
        p = _PLACEHOLDER_RE.match(flat, i)
        if p and p.group(0) in grammar.nonterminals:
            items.append(Item(None, placeholder=p.group(0)))
            i = p.end()
            continue
        items.append(Item(ch))
        i += 1
    return tuple(items), binders


def mexpr_trees(
    t_type: str, mexpr: MatchExpression, grammar: Grammar
) -> list[tuple[DerivationTree, dict[str, tuple]]]:
    """Abstract trees for ``mexpr`` rooted at ``t_type`` with binder paths.

    Covers every flattening of the optionals and every parse of each
    flattening.  Raises :class:`MatchError` if no variant parses.
    """
    results: list[tuple[DerivationTree, dict[str, tuple]]] = []
    seen: set[tuple] = set()
    for flat in _flatten(mexpr.raw):
        items, binders = _tokenize(flat, grammar)
        try:
            parses = parse_items(grammar, items, start=t_type)
        except ParseFailure:
            continue
        for tree, positions in parses:
            var_paths = {var: positions[idx] for idx, var in binders.items() if idx in positions}
            if len(var_paths) != len(binders):
                continue
            key = (_shape_key(tree), tuple(sorted(var_paths.items())))
            if key in seen:
                continue
            seen.add(key)
            results.append((tree, var_paths))
    if not results:
        raise MatchError(
            f"match expression {mexpr.raw!r} does not parse as {t_type}"
        )
    return results


def _shape_key(tree: DerivationTree) -> tuple:
    if tree.children is None:
        return (tree.label, None)
    return (tree.label, tuple(_shape_key(c) for c in tree.children))


def match_trees(
    tree: DerivationTree, abstract: DerivationTree, paths: dict[str, tuple]
) -> dict[str, DerivationTree] | None:
    """Match ``tree`` against an abstract tree; ``None`` means failure.

    The cases below are mutually exclusive and tried in order: label or arity
    mismatch fails; a root binder binds the whole tree; otherwise children are
    matched pairwise, any failure failing the whole match, and the child
    results are merged with the binder paths projected per child.
    """
    n_abs = 0 if abstract.children is None else len(abstract.children)
    n_tree = 0 if tree.children is None else len(tree.children)
    if tree.label != abstract.label or (n_abs > 0 and n_tree != n_abs):
        return None
    if len(paths) == 1:
        (var, path), = paths.items()
        if path == ():
            return {var: tree}
    if n_abs == 0:
        return {}
    merged: dict[str, DerivationTree] = {}
    for i in range(1, n_abs + 1):
        projected = {v: p[1:] for v, p in paths.items() if p and p[0] == i}
        sub = match_trees(tree.children[i - 1], abstract.children[i - 1], projected)
        if sub is None:
            return None
        merged.update(sub)
    return merged


def match(
    tree: DerivationTree, mexpr: MatchExpression, grammar: Grammar
) -> list[dict[str, DerivationTree]]:
    """All successful matches of ``mexpr`` against ``tree``, canonically ordered."""
    results = []
    seen = set()
    for abstract, paths in mexpr_trees(tree.label, mexpr, grammar):
        outcome = match_trees(tree, abstract, paths)
        if outcome is None:
            continue
        key = tuple(sorted((v, t.node_id) for v, t in outcome.items()))
        if key not in seen:
            seen.add(key)
            results.append(outcome)
    results.sort(key=lambda m: tuple(sorted((v, t.node_id) for v, t in m.items())))
    return results


def might_match(
    tree: DerivationTree, abstract: DerivationTree, grammar: Grammar
) -> bool:
    """Could some completion of (possibly open) ``tree`` match ``abstract``?"""
    if tree.label != abstract.label:
        return False
    if abstract.children is None:
        return True
    if tree.children is not None:
        if len(tree.children) != len(abstract.children):
            return False
        return all(
            might_match(c, a, grammar)
            for c, a in zip(tree.children, abstract.children)
        )
    # open leaf: some expansion must line up with the abstract children
    wanted = tuple(a.label for a in abstract.children)
    for rhs in grammar.alternatives(tree.label):
        if rhs != wanted:
            continue
        if all(
            might_match(DerivationTree(0, sym), a, grammar)
            for sym, a in zip(rhs, abstract.children)
        ):
            return True
    return False
