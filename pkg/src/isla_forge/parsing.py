"""Recursive-descent parsing of concrete inputs into derivation trees.

The parser is a memoized descent that returns, per (nonterminal, position)
pair, the full list of partial parses in leftmost-alternative order; the
first complete parse wins.  Direct left recursion is handled by growing the
memo entry to a fixpoint; results per position are capped, so pathological
cyclic grammars terminate with a diagnostic instead of diverging.

Besides plain character input, the parser accepts *placeholder items*: a
pseudo-token that is consumed by exactly the nonterminal it names and becomes
an open leaf in the resulting tree.  Match expressions are parsed by
tokenizing their binders and placeholders into such items, which is
equivalent to parsing against a grammar augmented with one extra expansion
per nonterminal.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

from .grammar import Grammar, is_nonterminal
from .trees import DerivationTree

__all__ = ["ParseFailure", "Item", "parse_input", "parse_items"]

MAX_RESULTS_PER_POSITION = 512


class ParseFailure(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class Item:
    """One input item: a character, or a placeholder for a nonterminal."""

    char: str | None
    placeholder: str | None = None

    @staticmethod
    def chars(text: str) -> tuple["Item", ...]:
        return tuple(Item(c) for c in text)


# parse results are nested skeleton tuples: (label, children | None, item_index)
# item_index records which placeholder item produced an open leaf.


class _Descent:
    def __init__(self, grammar: Grammar, items: tuple[Item, ...]):
        self.grammar = grammar
        self.items = items
        self.memo: dict[tuple[str, int], tuple] = {}
        self.stack: list[tuple[str, int]] = []
        self.active: set[tuple[str, int]] = set()
        self.seeds: dict[tuple[str, int], tuple] = {}
        self.grew: set[tuple[str, int]] = set()
        self.depends: dict[tuple[str, int], set] = {}
        self.furthest = 0

    def parse_nt(self, nt: str, pos: int) -> tuple:
        key = (nt, pos)
        cached = self.memo.get(key)
        if cached is not None:
            return cached
        if key in self.active:
            # left-recursive re-entry: serve the seed grown so far and taint
            # everything on the stack above the head
            self.grew.add(key)
            idx = self.stack.index(key)
            for above in self.stack[idx + 1 :]:
                self.depends.setdefault(above, set()).add(key)
            return self.seeds.get(key, ())
        self.active.add(key)
        self.stack.append(key)
        self.seeds[key] = ()
        rounds = 0
        while True:
            self.grew.discard(key)
            results = self._expand(nt, pos)
            rounds += 1
            if key in self.grew and len(results) > len(self.seeds[key]) and rounds <= len(self.items) - pos + 2:
                self.seeds[key] = results
                continue
            break
        self.stack.pop()
        self.active.discard(key)
        deps = self.depends.pop(key, set())
        if not (deps & self.active):
            self.memo[key] = results
        return results

    def _expand(self, nt: str, pos: int) -> tuple:
        out = []
        seen = set()
        items = self.items
        if pos < len(items) and items[pos].placeholder == nt:
            result = ((nt, None, pos), pos + 1)
            out.append(result)
            seen.add(result)
            if pos + 1 > self.furthest:
                self.furthest = pos + 1
        for rhs in self.grammar.alternatives(nt):
            for children, end in self._sequence(rhs, 0, pos):
                result = ((nt, children, None), end)
                if result not in seen:
                    seen.add(result)
                    out.append(result)
                    if len(out) >= MAX_RESULTS_PER_POSITION:
                        raise ParseFailure(
                            f"too many ambiguous parses of {nt}", pos
                        )
        return tuple(out)

    def _sequence(self, rhs: tuple[str, ...], sym_idx: int, pos: int):
        if sym_idx == len(rhs):
            yield (), pos
            return
        sym = rhs[sym_idx]
        if is_nonterminal(sym):
            for node, mid in self.parse_nt(sym, pos):
                for tail, end in self._sequence(rhs, sym_idx + 1, mid):
                    yield (node,) + tail, end
            return
        end = pos + len(sym)
        if end > len(self.items):
            return
        for offset, ch in enumerate(sym):
            item = self.items[pos + offset]
            if item.char != ch:
                if pos + offset > self.furthest:
                    self.furthest = pos + offset
                return
        if end > self.furthest:
            self.furthest = end
        leaf = (sym, None, None)
        for tail, tail_end in self._sequence(rhs, sym_idx + 1, end):
            yield (leaf,) + tail, tail_end


def _to_tree(skeleton, next_id: int, positions: dict, path: tuple) -> DerivationTree:
    label, children, item_idx = skeleton
    node_id = next_id
    next_id += 1
    if item_idx is not None:
        positions[item_idx] = path
    if children is None:
        return DerivationTree(node_id, label, None)
    built = []
    for i, child in enumerate(children, start=1):
        sub = _to_tree(child, next_id, positions, path + (i,))
        next_id = sub.max_id + 1
        built.append(sub)
    return DerivationTree(node_id, label, tuple(built))


def parse_items(
    grammar: Grammar, items: tuple[Item, ...], start: str | None = None
) -> list[tuple[DerivationTree, dict[int, tuple]]]:
    """All full-span parses of ``items`` as trees rooted at ``start``.

    Each result pairs the tree with a map from placeholder item index to the
    path of the open leaf that consumed it.
    """
    start = start or grammar.start
    limit = sys.getrecursionlimit()
    needed = 50 * len(items) + 2000
    if needed > limit:
        sys.setrecursionlimit(needed)
    try:
        descent = _Descent(grammar, items)
        parses = descent.parse_nt(start, 0)
    finally:
        if needed > limit:
            sys.setrecursionlimit(limit)
    results = []
    for skeleton, end in parses:
        if end != len(items):
            continue
        positions: dict[int, tuple] = {}
        tree = _to_tree(skeleton, 1, positions, ())
        results.append((tree, positions))
    if not results:
        raise ParseFailure(
            f"cannot parse input as {start}", descent.furthest
        )
    return results


def parse_input(grammar: Grammar, text: str, start: str | None = None) -> DerivationTree:
    """Parse ``text`` into a closed derivation tree; first parse wins."""
    tree, _ = parse_items(grammar, Item.chars(text), start)[0]
    return tree
