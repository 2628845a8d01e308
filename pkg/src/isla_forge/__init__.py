"""Generation and validation of grammar-structured inputs under declarative
constraints over derivation trees."""

from .grammar import (
    Grammar,
    GrammarError,
    GrammarGraph,
    enumerate_strings,
    is_nonterminal,
    parse_grammar,
)
from .trees import (
    DerivationTree,
    TreeError,
    enumerate_closures,
    kpath_coverage,
    substitute,
    unparse,
)
from .parsing import ParseFailure, parse_input
from .matching import MatchError, MatchExpression, match, match_trees, mexpr_trees
from .formulas import (
    Formula,
    FormulaError,
    NodeRef,
    Variable,
    establish_inv,
    parse_formula,
    substitute_vars,
)
from .predicates import (
    PredicateRegistry,
    PredicateSignature,
    SemPredResult,
    eval_semantic,
    eval_structural,
    standard_registry,
)
from .smt import eval_ground, solve as solve_atoms
from .evaluator import EvalError, evaluate, evaluate_cdt_membership, explain_failure
from .cost import CostVector, DEFAULT_WEIGHTS, aggregate
from .solver import CDT, Solver, SolverConfig, SolverError, insert_tree, make_tree, solve_stream
from .corpus import SPEC_NAMES, load_spec, load_spec_dir

__version__ = "0.1.0"

__all__ = [
    "Grammar",
    "GrammarError",
    "GrammarGraph",
    "enumerate_strings",
    "is_nonterminal",
    "parse_grammar",
    "DerivationTree",
    "TreeError",
    "enumerate_closures",
    "kpath_coverage",
    "substitute",
    "unparse",
    "ParseFailure",
    "parse_input",
    "MatchError",
    "MatchExpression",
    "match",
    "match_trees",
    "mexpr_trees",
    "Formula",
    "FormulaError",
    "NodeRef",
    "Variable",
    "establish_inv",
    "parse_formula",
    "substitute_vars",
    "PredicateRegistry",
    "PredicateSignature",
    "SemPredResult",
    "eval_semantic",
    "eval_structural",
    "standard_registry",
    "eval_ground",
    "solve_atoms",
    "EvalError",
    "evaluate",
    "evaluate_cdt_membership",
    "explain_failure",
    "CostVector",
    "DEFAULT_WEIGHTS",
    "aggregate",
    "CDT",
    "Solver",
    "SolverConfig",
    "SolverError",
    "insert_tree",
    "make_tree",
    "solve_stream",
    "SPEC_NAMES",
    "load_spec",
    "load_spec_dir",
]
