"""Context-free grammars: textual format, structural queries, bounded enumeration.

The grammar file format is one rule per line::

    <name> ::= alternative | alternative
    <other> ::= "terminal" <name> "more"

Terminals are double-quoted and support ``\\n``, ``\\t``, ``\\"`` and ``\\\\``
escapes.  Blank lines and lines starting with ``#`` are ignored.  The left-hand
side of the first rule is the start symbol.  An alternative consisting of a
single empty terminal ``""`` denotes the empty expansion.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache

__all__ = [
    "Grammar",
    "GrammarGraph",
    "GrammarError",
    "is_nonterminal",
    "parse_grammar",
    "reachable",
    "enumerate_trees",
    "enumerate_strings",
]

_NONTERMINAL_RE = re.compile(r"<[a-zA-Z][a-zA-Z0-9_-]*>")


def is_nonterminal(symbol: str) -> bool:
    return _NONTERMINAL_RE.fullmatch(symbol) is not None


class GrammarError(ValueError):
    """Raised for malformed grammar files and unknown symbols."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"line {line}" + (f", column {column}" if column is not None else "") + f": {message}"
        super().__init__(message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Grammar:
    """A CFG with ordered expansion alternatives.

    ``productions`` preserves file order; ``alternatives(nt)`` preserves the
    order in which the alternatives were written, which downstream code relies
    on for deterministic results.
    """

    nonterminals: frozenset[str]
    terminals: frozenset[str]
    productions: tuple[tuple[str, tuple[str, ...]], ...]
    start: str
    _alternatives: dict[str, tuple[tuple[str, ...], ...]] = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self):
        by_lhs: dict[str, list[tuple[str, ...]]] = {nt: [] for nt in self.nonterminals}
        for lhs, rhs in self.productions:
            by_lhs[lhs].append(rhs)
        object.__setattr__(
            self, "_alternatives", {nt: tuple(alts) for nt, alts in by_lhs.items()}
        )

    def alternatives(self, nonterminal: str) -> tuple[tuple[str, ...], ...]:
        try:
            return self._alternatives[nonterminal]
        except KeyError:
            raise GrammarError(f"unknown nonterminal {nonterminal!r}") from None

    def production_index(self, lhs: str, rhs: tuple[str, ...]) -> int:
        """Index of ``rhs`` among the alternatives of ``lhs``."""
        for i, alt in enumerate(self.alternatives(lhs)):
            if alt == rhs:
                return i
        raise GrammarError(f"no production {lhs!r} -> {rhs!r}")


_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\", "<": "<", "{": "{", "[": "["}


def _unescape(raw: str, line: int, column: int) -> str:
    out = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch == "\\":
            if i + 1 >= len(raw) or raw[i + 1] not in _ESCAPES:
                raise GrammarError("bad escape in terminal", line, column + i)
            out.append(_ESCAPES[raw[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _parse_rhs(text: str, line: int, offset: int) -> list[str]:
    """One alternative: whitespace-separated quoted terminals and <nt> refs."""
    symbols = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in " \t":
            i += 1
            continue
        if ch == '"':
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == '"':
                    break
                j += 1
            if j >= n:
                raise GrammarError("unterminated terminal", line, offset + i + 1)
            symbols.append(_unescape(text[i + 1 : j], line, offset + i + 1))
            i = j + 1
        elif ch == "<":
            m = _NONTERMINAL_RE.match(text, i)
            if not m:
                raise GrammarError("malformed nonterminal reference", line, offset + i + 1)
            symbols.append(m.group(0))
            i = m.end()
        else:
            raise GrammarError(f"unexpected character {ch!r}", line, offset + i + 1)
    return symbols


def parse_grammar(text: str) -> Grammar:
    """Parse the textual grammar format into a :class:`Grammar`.

    Raises :class:`GrammarError` with line/column positions for syntax errors
    and names the offending symbol for undefined nonterminals.
    """
    productions: list[tuple[str, tuple[str, ...]]] = []
    defined: list[str] = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        stripped = raw_line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "::=" not in stripped:
            raise GrammarError("expected '::=' rule", lineno, 1)
        lhs_text, rhs_text = stripped.split("::=", 1)
        lhs = lhs_text.strip()
        if not is_nonterminal(lhs):
            raise GrammarError(f"bad rule head {lhs!r}", lineno, 1)
        if lhs not in defined:
            defined.append(lhs)
        offset = raw_line.index("::=") + 3
        for alt_text in rhs_text.split("|"):
            rhs = _parse_rhs(alt_text, lineno, offset)
            # a lone "" is the empty expansion; drop empty terminals elsewhere too
            rhs = [s for s in rhs if s != ""]
            productions.append((lhs, tuple(rhs)))
            offset += len(alt_text) + 1
    if not productions:
        raise GrammarError("empty grammar")

    nonterminals = frozenset(defined)
    terminals = set()
    for lhs, rhs in productions:
        for sym in rhs:
            if is_nonterminal(sym):
                if sym not in nonterminals:
                    raise GrammarError(f"undefined nonterminal {sym}")
            else:
                terminals.add(sym)
    return Grammar(
        nonterminals=nonterminals,
        terminals=frozenset(terminals),
        productions=tuple(productions),
        start=defined[0],
    )


class GrammarGraph:
    """Reachability and k-path queries over a grammar.

    Nodes are nonterminals and expansions; a k-path alternates between the
    two kinds, starts at a nonterminal, and has k entries total.  Expansion
    nodes are identified as ``(lhs, alternative_index)``.
    """

    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        adjacency: dict[str, set[str]] = {nt: set() for nt in grammar.nonterminals}
        for lhs, rhs in grammar.productions:
            adjacency[lhs].update(s for s in rhs if is_nonterminal(s))
        self.adjacency = {nt: frozenset(nts) for nt, nts in adjacency.items()}
        self._reach: dict[str, frozenset[str]] = {}

    def reachable(self, from_nt: str, to_nt: str) -> bool:
        """True iff a sentential form derivable from ``from_nt`` contains ``to_nt``.

        Reflexive only for self-embedding nonterminals.
        """
        for sym in (from_nt, to_nt):
            if sym not in self.adjacency:
                raise GrammarError(f"unknown nonterminal {sym!r}")
        return to_nt in self._reachable_set(from_nt)

    def _reachable_set(self, from_nt: str) -> frozenset[str]:
        cached = self._reach.get(from_nt)
        if cached is not None:
            return cached
        seen: set[str] = set()
        frontier = list(self.adjacency[from_nt])
        while frontier:
            nt = frontier.pop()
            if nt in seen:
                continue
            seen.add(nt)
            frontier.extend(self.adjacency[nt])
        result = frozenset(seen)
        self._reach[from_nt] = result
        return result

    @lru_cache(maxsize=None)
    def kpaths(self, k: int) -> frozenset[tuple]:
        """All k-paths of the grammar, as alternating symbol/expansion tuples."""
        if k < 1:
            raise ValueError("k must be >= 1")
        g = self.grammar
        paths: set[tuple] = set()

        def extend(path: tuple, nt: str):
            # path ends at nonterminal nt and already includes it
            if len(path) >= k:
                paths.add(path[:k])
                return
            for i, rhs in enumerate(g.alternatives(nt)):
                expansion = (nt, i)
                if len(path) + 1 >= k:
                    paths.add(path + (expansion,))
                    continue
                for sym in rhs:
                    if is_nonterminal(sym):
                        extend(path + (expansion, sym), sym)

        for nt in sorted(g.nonterminals):
            extend((nt,), nt)
        return frozenset(p for p in paths if len(p) == k)


def enumerate_trees(grammar: Grammar, nonterminal: str, max_height: int):
    """All closed derivation trees of height <= max_height rooted at ``nonterminal``.

    Trees are returned as nested ``(label, children_tuple)`` pairs; terminal
    leaves are ``(label, None)``.  Deterministic order (alternative order,
    then recursive composition).
    """
    if nonterminal not in grammar.nonterminals:
        raise GrammarError(f"unknown nonterminal {nonterminal!r}")

    memo: dict[tuple[str, int], tuple] = {}

    def closed(nt: str, budget: int) -> tuple:
        # budget counts remaining height including the nt node itself
        key = (nt, budget)
        if key in memo:
            return memo[key]
        results = []
        for rhs in grammar.alternatives(nt):
            if not rhs:
                results.append((nt, ()))
                continue
            if budget < 2:
                continue
            child_options = []
            ok = True
            for sym in rhs:
                if is_nonterminal(sym):
                    opts = closed(sym, budget - 1)
                    if not opts:
                        ok = False
                        break
                    child_options.append(opts)
                else:
                    child_options.append(((sym, None),))
            if not ok:
                continue
            results.extend((nt, combo) for combo in _product(child_options))
        memo[key] = tuple(results)
        return memo[key]

    return list(closed(nonterminal, max_height))


def _product(option_lists):
    if not option_lists:
        yield ()
        return
    head, *rest = option_lists
    for item in head:
        for combo in _product(rest):
            yield (item,) + combo


def _skeleton_text(tree: tuple) -> str:
    label, children = tree
    if children is None:
        return label
    return "".join(_skeleton_text(c) for c in children)


def enumerate_strings(grammar: Grammar, max_depth: int) -> list[str]:
    """Yields of all closed derivation trees of height <= max_depth, sorted."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    seen = {
        _skeleton_text(t) for t in enumerate_trees(grammar, grammar.start, max_depth)
    }
    return sorted(seen)


def reachable(grammar: Grammar, from_nt: str, to_nt: str) -> bool:
    return GrammarGraph(grammar).reachable(from_nt, to_nt)
