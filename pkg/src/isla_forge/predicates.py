"""Structural and semantic predicates.

Structural predicates are total boolean relations over node positions in a
tree.  Semantic predicates may instead answer with a set of fixing
assignments (mapping node ids to replacement subtrees and numeric variables
to decimal strings) or with NOT_READY when the tree does not yet carry
enough information.  Evaluation functions must be pure; the registry is not
mutated after setup, extensions return a new registry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .building import BuildError, skeleton_avoiding, skeleton_with_exact_count
from .formulas import NUM, Variable
from .grammar import Grammar, GrammarGraph, is_nonterminal
from .trees import DerivationTree, TreeError, tree_from_skeleton

__all__ = [
    "PredicateSignature",
    "SemPredResult",
    "PredicateError",
    "PredicateRegistry",
    "standard_registry",
    "eval_structural",
    "eval_semantic",
    "internet_checksum_of",
]


class PredicateError(ValueError):
    pass


@dataclass(frozen=True)
class PredicateSignature:
    name: str
    arity: int
    kind: str  # "structural" | "semantic"
    arg_kinds: tuple[str, ...]  # "node" | "string" | "number"

    def __post_init__(self):
        if self.kind not in ("structural", "semantic"):
            raise PredicateError(f"bad predicate kind {self.kind!r}")
        if len(self.arg_kinds) != self.arity:
            raise PredicateError(f"{self.name}: arg kinds do not match arity")


@dataclass(frozen=True)
class SemPredResult:
    kind: str  # "true" | "false" | "not_ready" | "models"
    models: tuple = ()

    TRUE = None  # filled in below
    FALSE = None
    NOT_READY = None

    @staticmethod
    def with_models(models) -> "SemPredResult":
        models = tuple(models)
        if not models:
            raise PredicateError("empty model set; return FALSE instead")
        return SemPredResult("models", models)

    @property
    def is_true(self):
        return self.kind == "true"

    @property
    def is_false(self):
        return self.kind == "false"

    @property
    def is_not_ready(self):
        return self.kind == "not_ready"


SemPredResult.TRUE = SemPredResult("true")
SemPredResult.FALSE = SemPredResult("false")
SemPredResult.NOT_READY = SemPredResult("not_ready")


@dataclass
class EvalContext:
    grammar: Grammar
    root: DerivationTree
    graph: GrammarGraph


@dataclass(frozen=True)
class PredicateRegistry:
    signatures: dict[str, PredicateSignature] = field(default_factory=dict)
    semantic_evals: dict[str, Callable] = field(default_factory=dict)

    def with_predicate(
        self, signature: PredicateSignature, evaluator: Optional[Callable] = None
    ) -> "PredicateRegistry":
        if signature.name in self.signatures:
            raise PredicateError(f"predicate {signature.name!r} already registered")
        if signature.kind == "semantic" and evaluator is None:
            raise PredicateError(f"semantic predicate {signature.name} needs an evaluator")
        sigs = dict(self.signatures)
        sigs[signature.name] = signature
        evals = dict(self.semantic_evals)
        if evaluator is not None:
            evals[signature.name] = evaluator
        return PredicateRegistry(sigs, evals)

    def signature(self, name: str) -> PredicateSignature:
        try:
            return self.signatures[name]
        except KeyError:
            raise PredicateError(f"unknown predicate {name!r}") from None


# --------------------------------------------------------------------------
# Structural predicates

STRUCTURAL_NAMES = (
    "after",
    "before",
    "consecutive",
    "different_position",
    "direct_child",
    "inside",
    "level",
    "nth",
    "same_position",
)


def _node_path(root: DerivationTree, node: DerivationTree) -> tuple:
    try:
        found = root.by_id(node.node_id)
    except TreeError:
        raise PredicateError(f"argument node {node.node_id} is not part of the tree")
    if found is not node:
        raise PredicateError(f"argument node {node.node_id} is not part of the tree")
    return root.path_of(node.node_id)


def _ordered(p1: tuple, p2: tuple) -> bool:
    """p1 strictly before p2 in document order, neither nested in the other."""
    if p1[: len(p2)] == p2 or p2[: len(p1)] == p1:
        return False
    for a, b in zip(p1, p2):
        if a != b:
            return a < b
    return False


def _leaf_paths(root: DerivationTree) -> list[tuple]:
    return [p for p, n in root.walk() if not n.children]


def _int_arg(value, name: str) -> int:
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().isdigit():
        return int(value.strip())
    raise PredicateError(f"malformed numeric argument for {name}: {value!r}")


def eval_structural(name: str, args: tuple, root: DerivationTree) -> bool:
    """Evaluate a structural predicate on resolved arguments.

    Node arguments are subtrees of ``root``; string and number arguments are
    plain values.
    """
    if name in ("before", "after"):
        p1, p2 = _node_path(root, args[0]), _node_path(root, args[1])
        return _ordered(p1, p2) if name == "before" else _ordered(p2, p1)
    if name == "consecutive":
        p1, p2 = _node_path(root, args[0]), _node_path(root, args[1])
        leaves = _leaf_paths(root)
        if p1 not in leaves or p2 not in leaves:
            return False
        return abs(leaves.index(p1) - leaves.index(p2)) == 1
    if name == "same_position":
        return _node_path(root, args[0]) == _node_path(root, args[1])
    if name == "different_position":
        return _node_path(root, args[0]) != _node_path(root, args[1])
    if name == "inside":
        p1, p2 = _node_path(root, args[0]), _node_path(root, args[1])
        return p1[: len(p2)] == p2
    if name == "direct_child":
        p1, p2 = _node_path(root, args[0]), _node_path(root, args[1])
        return len(p1) == len(p2) + 1 and p1[: len(p2)] == p2
    if name == "nth":
        n = _int_arg(args[0], "nth")
        node, container = args[1], args[2]
        _node_path(root, node)
        cpath = _node_path(root, container)
        subtree = root.at(cpath)
        same_label = [m for _, m in subtree.walk() if m.label == node.label]
        ids = [m.node_id for m in same_label]
        return node.node_id in ids and ids.index(node.node_id) + 1 == n
    if name == "level":
        pred, nt = args[0], args[1]
        if not isinstance(pred, str) or pred not in ("EQ", "GE", "LE"):
            raise PredicateError(f"level: unknown relation {pred!r}")
        p1, p2 = _node_path(root, args[2]), _node_path(root, args[3])

        def depth(path):
            return sum(
                1
                for k in range(len(path))
                if root.at(path[:k]).label == nt
            )

        d1, d2 = depth(p1), depth(p2)
        return {"EQ": d1 == d2, "GE": d1 >= d2, "LE": d1 <= d2}[pred]
    raise PredicateError(f"unknown structural predicate {name!r}")


# --------------------------------------------------------------------------
# Semantic predicates


def _count_eval(ctx: EvalContext, args: tuple) -> SemPredResult:
    tree, needle, num = args
    if not isinstance(needle, str) or not is_nonterminal(needle):
        raise PredicateError(f"count: needle must be a nonterminal, got {needle!r}")
    if needle not in ctx.grammar.nonterminals:
        raise PredicateError(f"count: unknown nonterminal {needle}")
    fixed = sum(1 for _, n in tree.walk() if n.label == needle)
    growable = [
        (path, leaf)
        for path, leaf in tree.open_leaves()
        if ctx.graph.reachable(leaf.label, needle)
    ]
    if isinstance(num, Variable):
        if num.vtype != NUM:
            raise PredicateError("count: third argument must be numeric")
        if growable:
            return SemPredResult.NOT_READY
        return SemPredResult.with_models([{num: str(fixed)}])
    target = _int_arg(num, "count")
    if fixed > target:
        return SemPredResult.FALSE
    if not growable:
        return SemPredResult.TRUE if fixed == target else SemPredResult.FALSE
    need = target - fixed
    assignment = _distribute_needles(ctx, growable, need, needle)
    if assignment is None:
        return SemPredResult.FALSE
    return SemPredResult.with_models([assignment])


def _distribute_needles(ctx, growable, need, needle):
    """Assign closed subtrees to growable leaves adding exactly ``need`` needles."""

    def options(leaf, share):
        if share == 0:
            try:
                return skeleton_avoiding(ctx.grammar, leaf.label, needle)
            except BuildError:
                return None
        return skeleton_with_exact_count(ctx.grammar, leaf.label, needle, share)

    def solve(idx, remaining):
        if idx == len(growable):
            return {} if remaining == 0 else None
        _, leaf = growable[idx]
        # prefer to concentrate occurrences in the earliest leaf
        for share in range(remaining, -1, -1):
            skeleton = options(leaf, share)
            if skeleton is None:
                continue
            rest = solve(idx + 1, remaining - share)
            if rest is not None:
                rest[leaf.node_id] = skeleton
                return rest
        return None

    skeletons = solve(0, need)
    if skeletons is None:
        return None
    return {
        node_id: tree_from_skeleton(skeleton)
        for node_id, skeleton in sorted(skeletons.items())
    }


def internet_checksum_of(data: bytes) -> int:
    """RFC 1071 ones'-complement sum over 16-bit big-endian words."""
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


def _hex_tokens(text: str, what: str) -> list[int]:
    tokens = text.split()
    values = []
    for token in tokens:
        if len(token) != 2 or any(c not in "0123456789abcdef" for c in token):
            raise PredicateError(f"{what}: non-hex content {token!r}")
        values.append(int(token, 16))
    return values


def _fixed_token_count(ctx: EvalContext, node: DerivationTree) -> int | None:
    """Number of hex-byte tokens a (possibly open) field will hold."""
    if not node.is_open:
        return len(node.text.split())
    from .grammar import enumerate_trees  # local: avoid cycles at import time

    lengths = set()
    for skeleton in enumerate_trees(ctx.grammar, node.label, 8):
        text = _skeleton_text(skeleton)
        lengths.add(len(text.split()))
        if len(lengths) > 1:
            return None
    return lengths.pop() if lengths else None


def _skeleton_text(skeleton) -> str:
    label, children = skeleton
    if children is None:
        return label
    return "".join(_skeleton_text(c) for c in children)


def _internet_checksum_eval(ctx: EvalContext, args: tuple) -> SemPredResult:
    container, checksum = args
    try:
        inner = container.by_id(checksum.node_id)
    except TreeError:
        raise PredicateError("internet_checksum: checksum field outside the message")
    checksum_path = container.path_of(checksum.node_id)
    for path, leaf in container.open_leaves():
        if path[: len(checksum_path)] != checksum_path:
            return SemPredResult.NOT_READY
    width = _fixed_token_count(ctx, inner)
    if width is None:
        return SemPredResult.NOT_READY

    def region_text(node, path):
        if path == checksum_path:
            return "00 " * width
        if node.children is None:
            return node.label
        return "".join(
            region_text(c, path + (i,)) for i, c in enumerate(node.children, 1)
        )

    zeroed = region_text(container, ())
    value = internet_checksum_of(bytes(_hex_tokens(zeroed, "internet_checksum")))
    expected = f"{value >> 8:02x} {value & 0xff:02x} "
    if not inner.is_open and inner.text == expected:
        return SemPredResult.TRUE
    from .parsing import ParseFailure, parse_input  # local: avoid import cycle

    try:
        fixed = parse_input(ctx.grammar, expected, start=inner.label)
    except ParseFailure:
        return SemPredResult.FALSE
    return SemPredResult.with_models([{checksum.node_id: fixed}])


def eval_semantic(
    registry: "PredicateRegistry",
    name: str,
    args: tuple,
    root: DerivationTree,
    grammar: Grammar,
    graph: GrammarGraph | None = None,
) -> SemPredResult:
    """Evaluate a registered semantic predicate on resolved arguments."""
    sig = registry.signature(name)
    if sig.kind != "semantic":
        raise PredicateError(f"{name} is not a semantic predicate")
    if len(args) != sig.arity:
        raise PredicateError(f"{name}: expected {sig.arity} arguments")
    ctx = EvalContext(grammar, root, graph or GrammarGraph(grammar))
    return registry.semantic_evals[name](ctx, args)


def standard_registry() -> PredicateRegistry:
    """The built-in catalog: the structural predicates plus ``count`` and
    ``internet_checksum``."""
    registry = PredicateRegistry()
    node2 = ("node", "node")
    for name in ("after", "before", "consecutive", "different_position",
                 "direct_child", "inside", "same_position"):
        registry = registry.with_predicate(PredicateSignature(name, 2, "structural", node2))
    registry = registry.with_predicate(
        PredicateSignature("nth", 3, "structural", ("number", "node", "node"))
    )
    registry = registry.with_predicate(
        PredicateSignature("level", 4, "structural", ("string", "string", "node", "node"))
    )
    registry = registry.with_predicate(
        PredicateSignature("count", 3, "semantic", ("node", "string", "number")),
        _count_eval,
    )
    registry = registry.with_predicate(
        PredicateSignature("internet_checksum", 2, "semantic", ("node", "node")),
        _internet_checksum_eval,
    )
    return registry
