"""Construction of closed subtrees with structural side conditions.

Skeletons are the nested (label, children|None) pairs also used by
:func:`isla_forge.grammar.enumerate_trees`; callers attach node ids via
:func:`isla_forge.trees.tree_from_skeleton`.
"""

from __future__ import annotations

from functools import lru_cache

from .grammar import Grammar, GrammarGraph, is_nonterminal

__all__ = [
    "min_heights",
    "minimal_skeleton",
    "min_heights_avoiding",
    "skeleton_avoiding",
    "skeleton_with_exact_count",
    "BuildError",
]

_UNREACHABLE = 10**9


class BuildError(ValueError):
    pass


@lru_cache(maxsize=None)
def min_heights(grammar: Grammar) -> dict[str, int]:
    """Minimal closed-tree height per nonterminal (terminal leaves count)."""
    heights = {nt: _UNREACHABLE for nt in grammar.nonterminals}
    changed = True
    while changed:
        changed = False
        for lhs, rhs in grammar.productions:
            if not rhs:
                candidate = 1
            else:
                worst = 0
                for sym in rhs:
                    h = heights[sym] if is_nonterminal(sym) else 1
                    worst = max(worst, h)
                candidate = 1 + worst
            if candidate < heights[lhs]:
                heights[lhs] = candidate
                changed = True
    return heights


def _height_of(rhs, heights) -> int:
    if not rhs:
        return 1
    return 1 + max(
        (heights.get(s, _UNREACHABLE) if is_nonterminal(s) else 1) for s in rhs
    )


def minimal_skeleton(grammar: Grammar, nonterminal: str) -> tuple:
    """A deterministic minimal-height closed tree rooted at ``nonterminal``."""
    return skeleton_avoiding(grammar, nonterminal, avoid=None)


@lru_cache(maxsize=None)
def min_heights_avoiding(grammar: Grammar, avoid: str) -> dict[str, int]:
    """Minimal closed-tree heights for trees containing no ``avoid`` node."""
    heights = {nt: _UNREACHABLE for nt in grammar.nonterminals}
    heights[avoid] = _UNREACHABLE
    changed = True
    while changed:
        changed = False
        for lhs, rhs in grammar.productions:
            if lhs == avoid:
                continue
            candidate = _height_of(rhs, heights)
            if candidate < heights[lhs]:
                heights[lhs] = candidate
                changed = True
    return heights


def skeleton_avoiding(grammar: Grammar, nonterminal: str, avoid: str | None) -> tuple:
    """Minimal closed tree rooted at ``nonterminal`` with no ``avoid`` node.

    Raises :class:`BuildError` when impossible.  First alternative wins among
    equally small choices.
    """
    heights = (
        min_heights(grammar) if avoid is None else min_heights_avoiding(grammar, avoid)
    )
    if heights.get(nonterminal, _UNREACHABLE) >= _UNREACHABLE:
        raise BuildError(
            f"no closed tree for {nonterminal}"
            + (f" avoiding {avoid}" if avoid else "")
        )

    def build(nt: str) -> tuple:
        best = None
        best_height = _UNREACHABLE
        for rhs in grammar.alternatives(nt):
            if avoid is not None and avoid in rhs:
                continue
            h = _height_of(rhs, heights)
            if h < best_height:
                best_height = h
                best = rhs
        children = tuple(
            build(sym) if is_nonterminal(sym) else (sym, None) for sym in best
        )
        return (nt, children)

    return build(nonterminal)


def skeleton_with_exact_count(
    grammar: Grammar, nonterminal: str, needle: str, count: int, max_height: int | None = None
) -> tuple | None:
    """A closed tree rooted at ``nonterminal`` with exactly ``count`` nodes
    labeled ``needle``, or None.  Deterministic; prefers small heights."""
    graph = GrammarGraph(grammar)
    ceiling = max_height or (2 * count + 16)

    def search(nt: str, k: int, budget: int) -> tuple | None:
        if k == 0:
            try:
                return skeleton_avoiding(grammar, nt, needle)
            except BuildError:
                return None
        if budget < 1:
            return None
        if k > 0 and nt != needle and not graph.reachable(nt, needle):
            return None
        remaining = k - (1 if nt == needle else 0)
        if remaining < 0:
            return None
        for rhs in grammar.alternatives(nt):
            if remaining == 0 and not rhs:
                return (nt, ())
            combo = assign(rhs, 0, remaining, budget - 1)
            if combo is not None:
                return (nt, combo)
        return None

    def assign(rhs, idx, k, budget) -> tuple | None:
        if idx == len(rhs):
            return () if k == 0 else None
        sym = rhs[idx]
        if not is_nonterminal(sym):
            rest = assign(rhs, idx + 1, k, budget)
            return None if rest is None else ((sym, None),) + rest
        # try giving this child 0..k needle occurrences, smallest first
        for share in range(0, k + 1):
            sub = search(sym, share, budget)
            if sub is None:
                continue
            rest = assign(rhs, idx + 1, k - share, budget)
            if rest is not None:
                return (sub,) + rest
        return None

    for budget in range(1, ceiling + 1):
        result = search(nonterminal, count, budget)
        if result is not None:
            return result
    return None
