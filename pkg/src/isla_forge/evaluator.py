"""Deciding whether a closed derivation tree satisfies a formula.

Quantifiers over trees range over the subtrees of their container (container
included) whose root label matches the declared type, filtered through the
match expression when one is present.  Numeric existentials are decided over
a witness domain derived from the atoms that mention the variable; when that
domain cannot be shown exhaustive and no witness is found, evaluation raises
:class:`EvalUnknown` rather than guessing.
"""

from __future__ import annotations

from .formulas import (
    NUM,
    Conj,
    Disj,
    ExistsInt,
    ExistsTree,
    ForallTree,
    Formula,
    IntLit,
    Neg,
    NodeRef,
    PredicateAtom,
    SmtAtom,
    SmtNode,
    StringLit,
    Variable,
    free_variables,
)
from .grammar import Grammar, GrammarGraph
from .matching import match
from .predicates import PredicateRegistry, eval_semantic, eval_structural, standard_registry
from .smt import derive_bounds, eval_ground, term_refs
from .trees import DerivationTree, TreeError, enumerate_closures

__all__ = ["EvalError", "EvalUnknown", "evaluate", "evaluate_cdt_membership", "explain_failure"]

MAX_INT_WITNESS_SPAN = 10_000


class EvalError(ValueError):
    pass


class EvalUnknown(EvalError):
    """The numeric witness search hit its bound without a decision."""


class _Eval:
    def __init__(self, tree: DerivationTree, grammar: Grammar, registry: PredicateRegistry):
        self.tree = tree
        self.grammar = grammar
        self.registry = registry
        self.graph = GrammarGraph(grammar)

    def resolve(self, ref, env):
        if isinstance(ref, Variable):
            if ref not in env:
                raise EvalError(f"unresolved variable {ref!r}")
            return env[ref]
        if isinstance(ref, NodeRef):
            try:
                return self.tree.by_id(ref.node_id)
            except TreeError:
                raise EvalError(f"dangling node reference {ref!r}") from None
        if isinstance(ref, StringLit):
            return ref.value
        if isinstance(ref, IntLit):
            return ref.value
        raise EvalError(f"cannot resolve {ref!r}")

    def run(self, formula: Formula, env: dict) -> bool:
        if isinstance(formula, Conj):
            return all(self.run(p, env) for p in formula.parts)
        if isinstance(formula, Disj):
            return any(self.run(p, env) for p in formula.parts)
        if isinstance(formula, Neg):
            return not self.run(formula.body, env)
        if isinstance(formula, (ForallTree, ExistsTree)):
            instances = self.quantifier_domain(formula, env)
            if isinstance(formula, ForallTree):
                return all(self.run(formula.body, e) for e in instances)
            return any(self.run(formula.body, e) for e in instances)
        if isinstance(formula, ExistsInt):
            return self.exists_int(formula, env)
        if isinstance(formula, SmtAtom):
            return self.smt_atom(formula, env)
        if isinstance(formula, PredicateAtom):
            return self.predicate_atom(formula, env)
        raise EvalError(f"cannot evaluate {formula!r}")

    def quantifier_domain(self, formula, env):
        container = self.resolve(formula.container, env)
        if not isinstance(container, DerivationTree):
            raise EvalError(f"container {formula.container!r} is not a tree")
        out = []
        for _, node in container.walk():
            if node.label != formula.var.vtype:
                continue
            if formula.mexpr is None:
                out.append({**env, formula.var: node})
                continue
            for result in match(node, formula.mexpr, self.grammar):
                bindings = {
                    Variable(name, sub.label): sub for name, sub in result.items()
                }
                out.append({**env, formula.var: node, **bindings})
        return out

    # -- numeric existentials ---------------------------------------------

    def exists_int(self, formula: ExistsInt, env) -> bool:
        var = formula.var
        atoms = _collect_smt_terms(formula.body)
        ground_env = _smt_env(atoms, env, self)
        bounds = derive_bounds(atoms, var, ground_env)
        candidates: list[str] = []
        exhaustive = False
        if bounds.exact is not None:
            candidates.append(bounds.exact)
            exhaustive = True
        if bounds.min_int is not None and bounds.max_int is not None:
            if bounds.max_int - bounds.min_int <= MAX_INT_WITNESS_SPAN:
                candidates.extend(
                    str(v) for v in range(max(bounds.min_int, 0), bounds.max_int + 1)
                )
                exhaustive = True
        for count_value in self.resolvable_counts(formula.body, var, env):
            candidates.append(str(count_value))
            exhaustive = True
        seen = set()
        for candidate in candidates:
            if candidate in seen:
                continue
            seen.add(candidate)
            if self.run(formula.body, {**env, var: candidate}):
                return True
        if exhaustive:
            return False
        raise EvalUnknown(
            f"no witness for 'exists int {var.name}' within the derived bounds"
        )

    def resolvable_counts(self, body, var: Variable, env):
        """Counts of needle nodes for count atoms binding ``var`` whose tree
        argument is resolvable in the current environment."""
        values = []

        def walk(f):
            if isinstance(f, PredicateAtom) and f.name == "count" and len(f.args) == 3:
                tree_arg, needle, num = f.args
                if num == var and isinstance(needle, StringLit):
                    try:
                        target = self.resolve(tree_arg, env)
                    except EvalError:
                        return
                    if isinstance(target, DerivationTree):
                        values.append(
                            sum(1 for _, n in target.walk() if n.label == needle.value)
                        )
            elif isinstance(f, (Conj, Disj)):
                for p in f.parts:
                    walk(p)
            elif isinstance(f, Neg):
                walk(f.body)
            elif isinstance(f, (ForallTree, ExistsTree, ExistsInt)):
                walk(f.body)

        walk(body)
        return values

    # -- atoms --------------------------------------------------------------

    def smt_atom(self, formula: SmtAtom, env) -> bool:
        assignment = _smt_env([formula.term], env, self, strict=True)
        return eval_ground(formula.term, assignment)

    def predicate_atom(self, formula: PredicateAtom, env) -> bool:
        sig = self.registry.signature(formula.name)
        resolved = tuple(self.resolve(a, env) for a in formula.args)
        for value, kind in zip(resolved, sig.arg_kinds):
            if kind == "node" and not isinstance(value, DerivationTree):
                raise EvalError(f"{formula.name}: expected a node argument, got {value!r}")
        if sig.kind == "structural":
            truth = eval_structural(formula.name, resolved, self.tree)
            return truth != formula.negated
        result = eval_semantic(
            self.registry, formula.name, resolved, self.tree, self.grammar, self.graph
        )
        if result.is_true:
            truth = True
        elif result.is_false or result.kind == "models":
            # a closed tree either satisfies the predicate or needs a fix
            truth = False
        else:
            raise EvalError(
                f"semantic predicate {formula.name} returned NOT_READY on a closed tree"
            )
        if formula.negated:
            raise EvalError(f"semantic predicate {formula.name} may not be negated")
        return truth


def _collect_smt_terms(formula) -> list[SmtNode]:
    terms = []

    def walk(f):
        if isinstance(f, SmtAtom):
            terms.append(f.term)
        elif isinstance(f, (Conj, Disj)):
            for p in f.parts:
                walk(p)
        elif isinstance(f, Neg):
            walk(f.body)
        elif isinstance(f, (ForallTree, ExistsTree, ExistsInt)):
            walk(f.body)

    walk(formula)
    return terms


def _smt_env(terms, env, ev: _Eval, strict: bool = False) -> dict:
    assignment = {}
    for term in terms:
        for ref in term_refs(term):
            if ref in assignment:
                continue
            try:
                value = ev.resolve(ref, env)
            except EvalError:
                if strict:
                    raise
                continue
            if isinstance(value, DerivationTree) and value.is_open:
                if strict:
                    raise EvalError(f"open subtree for {ref!r}")
                continue
            assignment[ref] = value
    return assignment


def evaluate(
    formula: Formula,
    tree: DerivationTree,
    grammar: Grammar,
    registry: PredicateRegistry | None = None,
    assignment: dict | None = None,
) -> bool:
    """True iff the closed ``tree`` satisfies ``formula``.

    The free variable ``start`` is bound to the tree root; additional free
    variables may be supplied through ``assignment`` (keyed by
    :class:`Variable`).
    """
    if tree.is_open:
        raise EvalError("evaluation requires a closed tree")
    registry = registry or standard_registry()
    env = {Variable("start", grammar.start): tree}
    if assignment:
        env.update(assignment)
    return _Eval(tree, grammar, registry).run(formula, env)


def _refining_closures(grammar, tree, text, depth):
    """Closures of ``tree`` with yield ``text`` and per-leaf height <= depth.

    Instead of enumerating all closures, every parse of ``text`` is tested
    for structural agreement with the open tree; agreeing parses are grafted
    back so the original node ids survive.
    """
    from .parsing import Item, ParseFailure, parse_items

    try:
        parses = parse_items(grammar, Item.chars(text), start=tree.label)
    except ParseFailure:
        return

    def graft(open_node, parsed):
        # returns the closure preserving open_node's ids, or None
        if open_node.label != parsed.label:
            return None
        if open_node.children is None:
            if parsed.height > depth:
                return None
            return DerivationTree(open_node.node_id, parsed.label, parsed.children)
        if parsed.children is None or len(parsed.children) != len(open_node.children):
            return None
        rebuilt = []
        for mine, theirs in zip(open_node.children, parsed.children):
            sub = graft(mine, theirs)
            if sub is None:
                return None
            rebuilt.append(sub)
        return DerivationTree(open_node.node_id, open_node.label, tuple(rebuilt))

    from .trees import renumber

    for parsed, _ in parses:
        closure = graft(tree, renumber(parsed, tree.max_id + 1))
        if closure is not None:
            yield closure


def evaluate_cdt_membership(
    constraints,
    tree: DerivationTree,
    text: str,
    grammar: Grammar,
    depth: int,
    registry: PredicateRegistry | None = None,
) -> bool:
    """Bounded semantics of a conditioned tree: is ``text`` the yield of some
    closure (height <= depth per substituted leaf) of ``tree`` satisfying all
    constraints?

    Free NUM-typed constants are quantified existentially across the whole
    constraint set.
    """
    constraints = list(constraints)
    conj: Formula = Conj(tuple(constraints)) if len(constraints) != 1 else constraints[0]
    if not constraints:
        conj = Conj(())
    num_vars = sorted(
        {v for v in free_variables(conj) if v.vtype == NUM}, key=lambda v: v.name
    )
    for var in num_vars:
        conj = ExistsInt(var, conj)
    for closure in _refining_closures(grammar, tree, text, depth):
        if evaluate(conj, closure, grammar, registry):
            return True
    return False


def explain_failure(
    formula: Formula,
    tree: DerivationTree,
    grammar: Grammar,
    registry: PredicateRegistry | None = None,
) -> str | None:
    """A human-readable account of the first failing sub-formula, or None."""
    registry = registry or standard_registry()
    ev = _Eval(tree, grammar, registry)
    env = {Variable("start", grammar.start): tree}

    def descend(f, env, context: list[str]) -> str | None:
        if ev.run(f, env):
            return None
        if isinstance(f, Conj):
            for part in f.parts:
                if not ev.run(part, env):
                    return descend(part, env, context)
        if isinstance(f, ForallTree):
            for inst in ev.quantifier_domain(f, env):
                if not ev.run(f.body, inst):
                    node = inst[f.var]
                    context = context + [
                        f"forall {f.var.name} fails at node {node.node_id} ({node.label})"
                    ]
                    return descend(f.body, inst, context)
        where = " -> ".join(context + [repr(f)])
        return where

    return descend(formula, env, [])
