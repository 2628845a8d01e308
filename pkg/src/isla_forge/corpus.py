"""Bundled grammar+constraint specs: documentation, regression targets, seeds.

Each spec lives in ``specs/<name>/`` as a ``grammar.bnf`` and a
``constraint.isla`` file, the same layout the CLI accepts via ``--spec``.
The tar-lite spec registers two extra semantic predicates: ``data_size``
writes the data length into the size field, and ``octal_sum`` maintains a
blanked-field octal byte-sum checksum.  Their order in the constraint
matters: the checksum covers the size field, so the size must be fixed
first.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .formulas import Formula, parse_formula
from .grammar import Grammar, parse_grammar
from .parsing import ParseFailure, parse_input
from .predicates import (
    PredicateError,
    PredicateRegistry,
    PredicateSignature,
    SemPredResult,
    standard_registry,
)
from .trees import DerivationTree, TreeError

__all__ = ["LoadedSpec", "SPEC_NAMES", "load_spec", "load_spec_dir", "spec_dir"]

SPEC_NAMES = ("xml", "rest", "csv", "tar-lite", "icmp-lite", "dot", "racket-lite")

_SPEC_ROOT = Path(__file__).parent / "specs"


@dataclass(frozen=True)
class LoadedSpec:
    name: str
    grammar: Grammar
    formula: Formula
    registry: PredicateRegistry


def spec_dir(name: str) -> Path:
    if name not in SPEC_NAMES:
        raise KeyError(f"unknown spec {name!r}; available: {', '.join(SPEC_NAMES)}")
    return _SPEC_ROOT / name


def _first_labeled(tree: DerivationTree, label: str) -> DerivationTree | None:
    for _, node in tree.walk():
        if node.label == label:
            return node
    return None


def _data_size_eval(ctx, args) -> SemPredResult:
    container, size = args
    try:
        inner = container.by_id(size.node_id)
    except TreeError:
        raise PredicateError("data_size: size field outside the entry")
    data = _first_labeled(container, "<data>")
    if data is None:
        raise PredicateError("data_size: entry has no data field")
    if data.is_open:
        return SemPredResult.NOT_READY
    length = len(data.text)
    if length > 99:
        return SemPredResult.FALSE
    expected = f"{length:02d}"
    if not inner.is_open and inner.text == expected:
        return SemPredResult.TRUE
    try:
        fixed = parse_input(ctx.grammar, expected, start=inner.label)
    except ParseFailure:
        return SemPredResult.FALSE
    return SemPredResult.with_models([{size.node_id: fixed}])


def _octal_sum_eval(ctx, args) -> SemPredResult:
    container, checksum = args
    try:
        inner = container.by_id(checksum.node_id)
    except TreeError:
        raise PredicateError("octal_sum: checksum field outside the entry")
    checksum_path = container.path_of(checksum.node_id)
    for path, _ in container.open_leaves():
        if path[: len(checksum_path)] != checksum_path:
            return SemPredResult.NOT_READY

    def blanked(node, path):
        if path == checksum_path:
            return "   "
        if node.children is None:
            return node.label
        return "".join(
            blanked(child, path + (i,)) for i, child in enumerate(node.children, 1)
        )

    total = sum(ord(c) for c in blanked(container, ())) % 0o1000
    expected = f"{total:03o}"
    if not inner.is_open and inner.text == expected:
        return SemPredResult.TRUE
    try:
        fixed = parse_input(ctx.grammar, expected, start=inner.label)
    except ParseFailure:
        return SemPredResult.FALSE
    return SemPredResult.with_models([{checksum.node_id: fixed}])


def _tar_lite_registry() -> PredicateRegistry:
    registry = standard_registry()
    registry = registry.with_predicate(
        PredicateSignature("data_size", 2, "semantic", ("node", "node")),
        _data_size_eval,
    )
    registry = registry.with_predicate(
        PredicateSignature("octal_sum", 2, "semantic", ("node", "node")),
        _octal_sum_eval,
    )
    return registry


def _registry_for(name: str) -> PredicateRegistry:
    if name == "tar-lite":
        return _tar_lite_registry()
    return standard_registry()


def load_spec_dir(path, registry: PredicateRegistry | None = None) -> LoadedSpec:
    """Load a grammar.bnf/constraint.isla pair from a directory."""
    path = Path(path)
    grammar_file = path / "grammar.bnf"
    constraint_file = path / "constraint.isla"
    for f in (grammar_file, constraint_file):
        if not f.is_file():
            raise FileNotFoundError(f"spec file missing: {f}")
    registry = registry or standard_registry()
    grammar = parse_grammar(grammar_file.read_text())
    formula = parse_formula(constraint_file.read_text(), grammar, registry.signatures)
    return LoadedSpec(path.name, grammar, formula, registry)


def load_spec(name: str) -> LoadedSpec:
    """Load a bundled spec by name; see :data:`SPEC_NAMES`."""
    registry = _registry_for(name)
    loaded = load_spec_dir(spec_dir(name), registry)
    return LoadedSpec(name, loaded.grammar, loaded.formula, registry)
