"""Derivation trees with stable numeric node identifiers.

Trees are immutable values.  A node whose ``children`` is ``None`` and whose
label is a nonterminal is an unexpanded (open) leaf; ``children == ()``
represents the empty expansion.  Substitution keeps the identifiers of all
untouched nodes stable and gives the replacement's root the identifier of the
replaced node, so formula references into the tree survive solver rewrites.
"""

from __future__ import annotations

from typing import Callable, Iterator, Optional

from .grammar import Grammar, GrammarError, GrammarGraph, enumerate_trees, is_nonterminal

__all__ = [
    "DerivationTree",
    "TreeError",
    "tree_from_skeleton",
    "open_node",
    "unparse",
    "substitute",
    "enumerate_closures",
    "tree_kpaths",
    "kpath_coverage",
    "validate_tree",
]

Path = tuple[int, ...]


class TreeError(ValueError):
    pass


class DerivationTree:
    __slots__ = ("node_id", "label", "children", "_text", "_open", "_height", "_max_id", "_by_id")

    def __init__(self, node_id: int, label: str, children: Optional[tuple] = None):
        self.node_id = node_id
        self.label = label
        self.children = children
        self._text = None
        self._open = None
        self._height = None
        self._max_id = None
        self._by_id = None

    # -- structure ---------------------------------------------------------

    @property
    def is_open(self) -> bool:
        """True iff some leaf is an unexpanded nonterminal."""
        if self._open is None:
            if self.children is None:
                self._open = is_nonterminal(self.label)
            else:
                self._open = any(c.is_open for c in self.children)
        return self._open

    @property
    def height(self) -> int:
        if self._height is None:
            if not self.children:
                self._height = 1
            else:
                self._height = 1 + max(c.height for c in self.children)
        return self._height

    @property
    def max_id(self) -> int:
        if self._max_id is None:
            m = self.node_id
            for c in self.children or ():
                m = max(m, c.max_id)
            self._max_id = m
        return self._max_id

    def node_count(self) -> int:
        return 1 + sum(c.node_count() for c in self.children or ())

    def walk(self, path: Path = ()) -> Iterator[tuple[Path, "DerivationTree"]]:
        """Preorder traversal as (path, node) pairs; paths are 1-based."""
        yield path, self
        for i, child in enumerate(self.children or (), start=1):
            yield from child.walk(path + (i,))

    def at(self, path: Path) -> "DerivationTree":
        node = self
        for i in path:
            if node.children is None or not 1 <= i <= len(node.children):
                raise TreeError(f"no node at path {path}")
            node = node.children[i - 1]
        return node

    def by_id(self, node_id: int) -> "DerivationTree":
        if self._by_id is None:
            self._by_id = {node.node_id: node for _, node in self.walk()}
        try:
            return self._by_id[node_id]
        except KeyError:
            raise TreeError(f"no node with id {node_id}") from None

    def path_of(self, node_id: int) -> Path:
        for path, node in self.walk():
            if node.node_id == node_id:
                return path
        raise TreeError(f"no node with id {node_id}")

    def open_leaves(self) -> list[tuple[Path, "DerivationTree"]]:
        return [
            (p, n)
            for p, n in self.walk()
            if n.children is None and is_nonterminal(n.label)
        ]

    def subtrees_with_label(self, label: str) -> list["DerivationTree"]:
        return [n for _, n in self.walk() if n.label == label]

    # -- text --------------------------------------------------------------

    @property
    def text(self) -> str:
        """Concatenation of leaf terminals in sibling order; closed trees only."""
        if self._text is None:
            if self.is_open:
                raise TreeError(f"open tree (node {self.node_id}: {self.label}) has no text")
            if self.children is None:
                self._text = self.label
            else:
                self._text = "".join(c.text for c in self.children)
        return self._text

    def dump(self, indent: int = 0) -> str:
        """Indented text rendering for traces and error messages."""
        mark = "" if self.children is not None else (" (open)" if is_nonterminal(self.label) else "")
        line = "  " * indent + f"{self.node_id}: {self.label!r}{mark}"
        return "\n".join([line] + [c.dump(indent + 1) for c in self.children or ()])

    def __repr__(self):
        return f"DerivationTree({self.node_id}, {self.label!r}, {'open' if self.children is None else len(self.children)})"

    # -- equality is structural, ignoring identifiers -----------------------

    def same_shape(self, other: "DerivationTree") -> bool:
        if self.label != other.label:
            return False
        if (self.children is None) != (other.children is None):
            return False
        if self.children is None:
            return True
        return len(self.children) == len(other.children) and all(
            a.same_shape(b) for a, b in zip(self.children, other.children)
        )


def open_node(label: str, node_id: int = 1) -> DerivationTree:
    return DerivationTree(node_id, label)


def unparse(tree: DerivationTree) -> str:
    return tree.text


def tree_from_skeleton(skeleton: tuple, next_id: int = 1) -> DerivationTree:
    """Build a tree from nested (label, children|None) pairs, ids in preorder."""
    label, children = skeleton
    node_id = next_id
    next_id += 1
    if children is None:
        return DerivationTree(node_id, label, None)
    built = []
    for child in children:
        sub = tree_from_skeleton(child, next_id)
        next_id = sub.max_id + 1
        built.append(sub)
    return DerivationTree(node_id, label, tuple(built))


def renumber(tree: DerivationTree, next_id: int) -> DerivationTree:
    """Fresh preorder ids starting at next_id."""
    children = None
    child_id = next_id + 1
    if tree.children is not None:
        built = []
        for c in tree.children:
            sub = renumber(c, child_id)
            child_id = sub.max_id + 1
            built.append(sub)
        children = tuple(built)
    return DerivationTree(next_id, tree.label, children)


def replace_at_path(tree: DerivationTree, path: Path, replacement: DerivationTree) -> DerivationTree:
    if not path:
        return replacement
    if tree.children is None:
        raise TreeError(f"no node at path {path}")
    i = path[0] - 1
    children = list(tree.children)
    children[i] = replace_at_path(children[i], path[1:], replacement)
    return DerivationTree(tree.node_id, tree.label, tuple(children))


def splice(tree: DerivationTree, node_id: int, replacement: DerivationTree) -> DerivationTree:
    """Replace the subtree at ``node_id`` trusting the replacement's ids."""
    return replace_at_path(tree, tree.path_of(node_id), replacement)


def substitute(tree: DerivationTree, at: int, replacement: DerivationTree) -> DerivationTree:
    """Replace the subtree rooted at node ``at``.

    The replacement's root adopts the identifier ``at`` (so references to the
    substituted node stay valid) and its descendants are renumbered above the
    host tree's maximum identifier.
    """
    target = tree.by_id(at)
    if target.label != replacement.label:
        raise TreeError(
            f"label mismatch at node {at}: {target.label!r} vs {replacement.label!r}"
        )
    fresh = renumber(replacement, tree.max_id + 1)
    adopted = DerivationTree(at, fresh.label, fresh.children)
    return splice(tree, at, adopted)


def enumerate_closures(grammar: Grammar, tree: DerivationTree, max_depth: int) -> list[DerivationTree]:
    """All closed trees obtained by closing every open leaf with a tree of
    height <= max_depth rooted at the leaf's nonterminal.  For a closed input
    the result is the input itself."""
    leaves = tree.open_leaves()
    if not leaves:
        return [tree]
    results = [tree]
    for path, leaf in leaves:
        options = enumerate_trees(grammar, leaf.label, max_depth)
        step = []
        for partial in results:
            for skeleton in options:
                built = tree_from_skeleton(skeleton, partial.max_id + 1)
                adopted = DerivationTree(leaf.node_id, built.label, built.children)
                step.append(replace_at_path(partial, path, adopted))
        results = step
    return results


def validate_tree(grammar: Grammar, tree: DerivationTree) -> None:
    """Check production conformance and id uniqueness; raises TreeError."""
    seen: set[int] = set()
    for _, node in tree.walk():
        if node.node_id in seen:
            raise TreeError(f"duplicate node id {node.node_id}")
        seen.add(node.node_id)
        if node.children is None:
            continue
        if not is_nonterminal(node.label):
            raise TreeError(f"terminal node {node.node_id} has children")
        rhs = tuple(c.label for c in node.children)
        if rhs not in grammar.alternatives(node.label):
            raise TreeError(
                f"node {node.node_id}: {node.label} -> {rhs} is not a production"
            )


def tree_kpaths(grammar: Grammar, tree: DerivationTree, k: int) -> set[tuple]:
    """The grammar k-paths exercised by ``tree``.

    A path starts at a nonterminal node of the tree and alternates between
    node labels and the expansions chosen below them, k entries total.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    covered: set[tuple] = set()

    def grow(chain: tuple, node: DerivationTree):
        if len(chain) == k:
            covered.add(chain)
            return
        if node.children is None:
            return
        rhs = tuple(c.label for c in node.children)
        expansion = (node.label, grammar.production_index(node.label, rhs))
        if len(chain) + 1 == k:
            covered.add(chain + (expansion,))
            return
        for child in node.children:
            if is_nonterminal(child.label):
                grow(chain + (expansion, child.label), child)

    for _, node in tree.walk():
        if is_nonterminal(node.label):
            grow((node.label,), node)
    return covered


def kpath_coverage(grammar: Grammar, tree: DerivationTree, k: int) -> float:
    """Fraction of the grammar's k-paths covered by ``tree``."""
    graph = GrammarGraph(grammar)
    all_paths = graph.kpaths(k)
    if not all_paths:
        return 0.0
    covered = tree_kpaths(grammar, tree, k)
    return len(covered & all_paths) / len(all_paths)
