"""Cost factors and their weighted geometric mean, which orders the solver queue.

The five factors are, in order: tree closing cost, constraint cost,
derivation depth penalty, k-path coverage penalty, and global k-path
coverage penalty.  The default weight vector is (11, 3, 5, 20, 10).
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .building import minimal_skeleton
from .formulas import quantifier_metrics
from .grammar import Grammar, GrammarGraph, is_nonterminal
from .trees import DerivationTree, kpath_coverage, tree_kpaths

__all__ = [
    "CostVector",
    "DEFAULT_WEIGHTS",
    "aggregate",
    "ClosingCostTable",
    "constraint_cost",
    "kpath_penalty",
    "global_kpath_penalty",
]

DEFAULT_WEIGHTS = (11.0, 3.0, 5.0, 20.0, 10.0)
DEFAULT_K = 3


@dataclass(frozen=True)
class CostVector:
    weights: tuple[float, ...] = DEFAULT_WEIGHTS

    def __post_init__(self):
        if len(self.weights) != 5:
            raise ValueError("expected five weights")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if all(w == 0 for w in self.weights):
            raise ValueError("at least one weight must be positive")


def aggregate(factors, vector: CostVector) -> float:
    """Weighted geometric mean over the factors whose weight is non-zero.

    Each factor is shifted by one before exponentiation and the result shifted
    back, so a single zero factor does not collapse the whole product.
    """
    weights = vector.weights if isinstance(vector, CostVector) else CostVector(tuple(vector)).weights
    factors = tuple(factors)
    if len(factors) != len(weights):
        raise ValueError("factor/weight arity mismatch")
    if any(f < 0 or f != f for f in factors):
        raise ValueError("factors must be finite and non-negative")
    product = 1.0
    total_weight = 0.0
    for factor, weight in zip(factors, weights):
        if weight == 0:
            continue
        product *= (factor + 1.0) ** weight
        total_weight += weight
    return product ** (1.0 / total_weight) - 1.0


def _random_skeleton(grammar: Grammar, nt: str, rng: random.Random, soft_depth: int) -> tuple:
    if soft_depth <= 0:
        return minimal_skeleton(grammar, nt)
    alternatives = grammar.alternatives(nt)
    rhs = alternatives[rng.randrange(len(alternatives))]
    children = tuple(
        _random_skeleton(grammar, sym, rng, soft_depth - 1)
        if is_nonterminal(sym)
        else (sym, None)
        for sym in rhs
    )
    return (nt, children)


def _expansion_size(grammar: Grammar, skeleton: tuple) -> int:
    label, children = skeleton
    total = 0
    if children is not None and is_nonterminal(label):
        total += sum(len(alt) for alt in grammar.alternatives(label))
        total += sum(_expansion_size(grammar, c) for c in children)
    return total


class ClosingCostTable:
    """Per-nonterminal instantiation effort, estimated by seeded sampling.

    Each nonterminal is instantiated ``samples`` times at random and the sizes
    of the expansion alternatives occurring in the resulting trees are summed;
    the table stores the mean.  The closing cost of a tree is the summed
    effort of its open leaves.
    """

    def __init__(self, grammar: Grammar, seed: int = 0, samples: int = 10, soft_depth: int = 6):
        self.grammar = grammar
        rng = random.Random(seed)
        self.efforts: dict[str, float] = {}
        for nt in sorted(grammar.nonterminals):
            total = 0
            for _ in range(samples):
                skeleton = _random_skeleton(grammar, nt, rng, soft_depth)
                total += _expansion_size(grammar, skeleton)
            self.efforts[nt] = total / samples

    def closing_cost(self, tree: DerivationTree) -> float:
        return sum(self.efforts[leaf.label] for _, leaf in tree.open_leaves())

    def alternative_cost(self, rhs: tuple[str, ...]) -> float:
        """Estimated effort to close the children introduced by ``rhs``."""
        return sum(self.efforts[s] for s in rhs if is_nonterminal(s))


def constraint_cost(constraints) -> float:
    """Existential and deeply nested quantifiers make a constraint set dearer."""
    total = 0.0
    for formula in constraints:
        existentials, depth = quantifier_metrics(formula)
        total += 1.0 + 2.0 * existentials + depth
    return total


def kpath_penalty(grammar: Grammar, tree: DerivationTree, k: int = DEFAULT_K) -> float:
    return 1.0 - kpath_coverage(grammar, tree, k)


def global_kpath_penalty(
    grammar: Grammar,
    graph: GrammarGraph,
    covered_record: set,
    tree: DerivationTree,
    k: int = DEFAULT_K,
) -> float:
    """Fraction of the already-covered grammar k-paths that ``tree`` covers
    again; steers the queue toward trees adding new language features."""
    if not covered_record:
        return 0.0
    tree_paths = tree_kpaths(grammar, tree, k) & graph.kpaths(k)
    return len(tree_paths & covered_record) / len(covered_record)
