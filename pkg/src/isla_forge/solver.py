"""Constraint solving as a transition system over conditioned derivation trees.

A conditioned derivation tree (CDT) pairs an ordered constraint set with a
possibly open tree, plus an index of (universal formula, node id) pairs
recording which subtrees a universal quantifier has already been unified
with.  One step rewrites the cheapest queued CDT by the first applicable
rule; CDTs with an empty constraint set and a closed tree are solutions.

Rule order: normalize, decide structural atoms, introduce numeric constants,
eliminate or match universals, expand quantifier-bound leaves, solve atom
clusters, run semantic predicates, match or insert for existentials, and
finally close remaining open leaves with a coverage-guided closer.
Existential matching and tree insertion both fire on the same step.
"""

from __future__ import annotations

import heapq
import random
import re
import time
from dataclasses import dataclass, field, replace

from .building import min_heights
from .cost import (
    DEFAULT_K,
    DEFAULT_WEIGHTS,
    ClosingCostTable,
    CostVector,
    aggregate,
    constraint_cost,
    global_kpath_penalty,
    kpath_penalty,
)
from .evaluator import evaluate, explain_failure
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
    StringLit,
    Variable,
    establish_inv,
    parse_formula,
    substitute_vars,
)
from .grammar import Grammar, GrammarGraph, enumerate_trees, is_nonterminal
from .matching import match, mexpr_trees, might_match
from .predicates import PredicateRegistry, eval_semantic, eval_structural, standard_registry
from .smt import eval_ground, solve as smt_solve, term_refs
from .trees import (
    DerivationTree,
    renumber,
    replace_at_path,
    splice,
    substitute,
    tree_from_skeleton,
    tree_kpaths,
)

__all__ = [
    "CDT",
    "SolverConfig",
    "SolverError",
    "TransitionOutcome",
    "Solver",
    "solve_stream",
    "insert_tree",
    "make_tree",
]


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class CDT:
    """Indexed conditioned derivation tree."""

    constraints: tuple[Formula, ...]
    index: frozenset
    tree: DerivationTree
    original: tuple[Formula, ...]
    step_count: int = 0
    insertions: tuple = ()  # ((existential formula, count), ...)
    branch: int = 0
    finish_visits: int = 0

    def without(self, formula: Formula) -> tuple[Formula, ...]:
        removed = False
        out = []
        for f in self.constraints:
            if not removed and f == formula:
                removed = True
                continue
            out.append(f)
        return tuple(out)

    def insertion_count(self, formula: Formula) -> int:
        for f, n in self.insertions:
            if f == formula:
                return n
        return 0

    def bump_insertions(self, formula: Formula) -> tuple:
        found = False
        out = []
        for f, n in self.insertions:
            if f == formula:
                out.append((f, n + 1))
                found = True
            else:
                out.append((f, n))
        if not found:
            out.append((formula, 1))
        return tuple(out)

    def summary(self) -> str:
        kinds = ",".join(type(f).__name__ for f in self.constraints) or "empty"
        return f"[{kinds}] nodes={self.tree.node_count()} open={self.tree.is_open}"


@dataclass(frozen=True)
class TransitionOutcome:
    rule: str
    outputs: tuple[CDT, ...]
    note: str = ""


@dataclass
class SolverConfig:
    max_outputs: int | None = None
    max_depth: int | None = None
    weights: tuple[float, ...] = DEFAULT_WEIGHTS
    seed: int = 0
    timeout_s: float | None = None
    k: int = DEFAULT_K
    exhaustive: bool = False
    validate: bool = True
    smt_budget: int = 3
    expansion_cap: int = 10
    finish_samples: int = 2
    insertion_ceiling: int = 3
    insertion_cap: int = 8
    max_steps: int | None = None
    trace: bool = False
    transition_hook: object = None

    def __post_init__(self):
        if self.exhaustive and self.max_depth is None:
            raise ValueError("exhaustive mode requires max_depth")


# --------------------------------------------------------------------------
# Tree insertion


class _IdAlloc:
    def __init__(self, start: int):
        self.next = start

    def take(self) -> int:
        value = self.next
        self.next += 1
        return value


def _shortest_chain(graph: GrammarGraph, grammar: Grammar, from_nt: str, to_nt: str):
    """Nonterminal sequence from_nt .. to_nt following one-step expansions."""
    if from_nt == to_nt:
        return [from_nt]
    parents = {from_nt: None}
    frontier = [from_nt]
    while frontier:
        step = []
        for nt in frontier:
            for rhs in grammar.alternatives(nt):
                for sym in rhs:
                    if is_nonterminal(sym) and sym not in parents:
                        parents[sym] = nt
                        if sym == to_nt:
                            chain = [sym]
                            while chain[-1] != from_nt:
                                chain.append(parents[chain[-1]])
                            return list(reversed(chain))
                        step.append(sym)
        frontier = step
    return None


def _chain_tree(
    grammar: Grammar,
    chain: list[str],
    target: DerivationTree,
    alloc: _IdAlloc,
    adopt_id: int | None = None,
) -> DerivationTree:
    """Expand along ``chain`` with open side leaves, ending in ``target``."""
    head = chain[0]
    node_id = adopt_id if adopt_id is not None else alloc.take()
    if len(chain) == 1:
        return DerivationTree(node_id, target.label, target.children) if adopt_id is not None else target
    successor = chain[1]
    for rhs in grammar.alternatives(head):
        if successor in rhs:
            position = rhs.index(successor)
            children = []
            for i, sym in enumerate(rhs):
                if i == position:
                    children.append(_chain_tree(grammar, chain[1:], target, alloc))
                elif is_nonterminal(sym):
                    children.append(DerivationTree(alloc.take(), sym, None))
                else:
                    children.append(DerivationTree(alloc.take(), sym, None))
            return DerivationTree(node_id, head, tuple(children))
    raise SolverError(f"broken chain at {head} -> {successor}")


def _added_nodes(result: DerivationTree, host: DerivationTree) -> int:
    return result.node_count() - host.node_count()


def insert_tree(
    host: DerivationTree,
    new: DerivationTree,
    grammar: Grammar,
    next_id: int | None = None,
    cap: int = 8,
) -> list[tuple[int, DerivationTree]]:
    """Embed ``new`` into ``host``, keeping every host node.

    Returns (inserted root id, replacement for host) pairs, structurally
    simplest first.  Strategies: grafting below an open leaf that can reach
    the new tree's label, and re-expanding a self-embedding nonterminal so
    that both the existing subtree and the new tree fit.  Empty when no
    insertion exists.
    """
    graph = GrammarGraph(grammar)
    floor = next_id if next_id is not None else host.max_id + 1
    scored: list[tuple[int, int, int, DerivationTree]] = []
    seq = 0

    def graft_results():
        nonlocal seq
        for path, leaf in host.open_leaves():
            alloc = _IdAlloc(floor)
            if leaf.label == new.label:
                fresh = renumber(new, alloc.take())
                adopted = DerivationTree(leaf.node_id, fresh.label, fresh.children)
                result = replace_at_path(host, path, adopted)
                scored.append((_added_nodes(result, host), seq, leaf.node_id, result))
                seq += 1
                continue
            chain = _shortest_chain(graph, grammar, leaf.label, new.label)
            if chain is None:
                continue
            fresh = renumber(new, alloc.take())
            built = _chain_tree(grammar, chain, fresh, alloc, adopt_id=leaf.node_id)
            result = replace_at_path(host, path, built)
            scored.append((_added_nodes(result, host), seq, fresh.node_id, result))
            seq += 1

    def embed_results():
        nonlocal seq
        for path, node in host.walk():
            label = node.label
            if not is_nonterminal(label):
                continue
            for rhs in grammar.alternatives(label):
                regraft_slots = [
                    i
                    for i, s in enumerate(rhs)
                    if is_nonterminal(s) and (s == label or graph.reachable(s, label))
                ]
                new_slots = [
                    j
                    for j, s in enumerate(rhs)
                    if is_nonterminal(s)
                    and (s == new.label or graph.reachable(s, new.label))
                ]
                done = False
                for ri in regraft_slots:
                    for nj in new_slots:
                        if ri == nj:
                            continue
                        alloc = _IdAlloc(floor)
                        old_sub = DerivationTree(alloc.take(), node.label, node.children)
                        fresh_new = renumber(new, alloc.take())
                        children = []
                        nid = fresh_new.node_id
                        ok = True
                        for i, sym in enumerate(rhs):
                            if i == ri:
                                chain = _shortest_chain(graph, grammar, sym, label)
                                if chain is None:
                                    ok = False
                                    break
                                children.append(_chain_tree(grammar, chain, old_sub, alloc))
                            elif i == nj:
                                chain = _shortest_chain(graph, grammar, sym, new.label)
                                if chain is None:
                                    ok = False
                                    break
                                children.append(_chain_tree(grammar, chain, fresh_new, alloc))
                            else:
                                children.append(DerivationTree(alloc.take(), sym, None))
                        if not ok:
                            continue
                        expanded = DerivationTree(node.node_id, label, tuple(children))
                        result = replace_at_path(host, path, expanded)
                        scored.append((_added_nodes(result, host), seq, nid, result))
                        seq += 1
                        done = True
                        break
                    if done:
                        break

    graft_results()
    embed_results()
    scored.sort(key=lambda item: (item[0], item[1]))
    return [(nid, tree) for _, _, nid, tree in scored[:cap]]


def make_tree(
    var: Variable, mexpr, grammar: Grammar
) -> tuple[DerivationTree, dict[str, tuple]]:
    """Minimal open tree for an existential: a single node, or the smallest
    abstract tree matching the match expression, with binder paths."""
    if var.vtype not in grammar.nonterminals:
        raise SolverError(f"{var!r} has no nonterminal type")
    if mexpr is None:
        return DerivationTree(1, var.vtype, None), {}
    options = mexpr_trees(var.vtype, mexpr, grammar)
    best, paths = min(options, key=lambda tp: tp[0].node_count())
    return best, paths


# --------------------------------------------------------------------------
# The solver


_NUM_NAME = re.compile(r"^\.num(\d+)$")


class Solver:
    def __init__(
        self,
        grammar: Grammar,
        formula,
        config: SolverConfig | None = None,
        registry: PredicateRegistry | None = None,
    ):
        self.grammar = grammar
        self.config = config or SolverConfig()
        self.registry = registry or standard_registry()
        self.graph = GrammarGraph(grammar)
        if isinstance(formula, str):
            formula = parse_formula(formula, grammar, self.registry.signatures)
        self.formula = formula
        self.rng = random.Random(self.config.seed)
        self.closing = ClosingCostTable(grammar, seed=self.config.seed)
        self.weights = CostVector(tuple(float(w) for w in self.config.weights))
        self.min_heights = min_heights(grammar)
        self.coverage_record: set = set()
        self.expansion_coverage: set = set()
        self.all_expansions = {
            (lhs, i)
            for lhs in grammar.nonterminals
            for i in range(len(grammar.alternatives(lhs)))
        }
        self.emitted: set[str] = set()
        self.stats = {
            "steps": 0,
            "emitted": 0,
            "dead": 0,
            "stuck": 0,
            "timed_out": False,
            "validation_failures": 0,
        }
        self.trace_lines: list[str] = []
        self._mexpr_cache: dict = {}
        self._finish_seen: set = set()
        self._seq = 0
        self._queues: dict[int, list] = {}
        self._branch_emitted: dict[int, int] = {}
        self._branch_pops: dict[int, int] = {}

        root = DerivationTree(1, grammar.start, None)
        start_map = {"start": NodeRef(1)}
        grounded = substitute_vars(self.formula, start_map)
        for branch_no, branch in enumerate(establish_inv(grounded)):
            self._branch_emitted[branch_no] = 0
            self._push(
                CDT(
                    constraints=_dedupe(branch),
                    index=frozenset(),
                    tree=root,
                    original=_dedupe(branch),
                    branch=branch_no,
                )
            )

    # -- queue ----------------------------------------------------------------

    def _cost(self, cdt: CDT) -> float:
        if self.config.exhaustive:
            return 0.0
        factors = (
            self.closing.closing_cost(cdt.tree),
            constraint_cost(cdt.constraints),
            float(cdt.step_count),
            kpath_penalty(self.grammar, cdt.tree, self.config.k),
            global_kpath_penalty(
                self.grammar, self.graph, self.coverage_record, cdt.tree, self.config.k
            ),
        )
        return aggregate(factors, self.weights)

    def _push(self, cdt: CDT):
        heap = self._queues.setdefault(cdt.branch, [])
        heapq.heappush(heap, (self._cost(cdt), self._seq, cdt))
        self._seq += 1

    def _pop(self) -> CDT | None:
        """Cheapest CDT of the least-served initial branch.  Rotating by pop
        count gives every disjunctive branch the same compute share, so one
        branch with an endless (or hopeless) search space cannot starve the
        others."""
        live = [b for b, heap in self._queues.items() if heap]
        if not live:
            return None
        branch = min(live, key=lambda b: (self._branch_pops.get(b, 0), b))
        self._branch_pops[branch] = self._branch_pops.get(branch, 0) + 1
        _, seq, cdt = heapq.heappop(self._queues[branch])
        return cdt

    # -- main loop --------------------------------------------------------------

    def run(self):
        """Yield solution strings until exhaustion or a configured limit."""
        config = self.config
        deadline = (
            time.monotonic() + config.timeout_s if config.timeout_s is not None else None
        )
        while True:
            if deadline is not None and time.monotonic() > deadline:
                self.stats["timed_out"] = True
                return
            if config.max_steps is not None and self.stats["steps"] >= config.max_steps:
                return
            cdt = self._pop()
            if cdt is None:
                return
            if not cdt.constraints and not cdt.tree.is_open:
                emitted = self._emit(cdt)
                if emitted is not None:
                    self._branch_emitted[cdt.branch] = (
                        self._branch_emitted.get(cdt.branch, 0) + 1
                    )
                    yield emitted
                    if (
                        config.max_outputs is not None
                        and self.stats["emitted"] >= config.max_outputs
                    ):
                        return
                continue
            outcome = self.step(cdt)
            self.stats["steps"] += 1
            if config.transition_hook is not None:
                config.transition_hook(cdt, outcome)
            if config.trace:
                self._record_trace(self.stats["steps"], cdt, outcome)
            if outcome.rule == "stuck":
                self.stats["stuck"] += 1
                continue
            if not outcome.outputs:
                self.stats["dead"] += 1
                continue
            for out in outcome.outputs:
                self._push(out)

    def _emit(self, cdt: CDT) -> str | None:
        text = cdt.tree.text
        if text in self.emitted:
            return None
        if self.config.validate:
            if not evaluate(self.formula, cdt.tree, self.grammar, self.registry):
                self.stats["validation_failures"] += 1
                detail = explain_failure(self.formula, cdt.tree, self.grammar, self.registry)
                raise SolverError(
                    f"precision violation: produced {text!r} which fails validation: {detail}"
                )
        self.emitted.add(text)
        self.stats["emitted"] += 1
        covered = tree_kpaths(self.grammar, cdt.tree, self.config.k) & self.graph.kpaths(
            self.config.k
        )
        self.coverage_record |= covered
        if self.coverage_record >= self.graph.kpaths(self.config.k):
            self.coverage_record = set()
        return text

    def _record_trace(self, seq: int, cdt: CDT, outcome: TransitionOutcome):
        parent = f"cdt{seq}"
        self.trace_lines.append(
            f'  {parent} [label="{outcome.rule}: {cdt.summary()}"];'
        )
        for i, out in enumerate(outcome.outputs):
            child = f"{parent}_{i}"
            self.trace_lines.append(f'  {child} [label="{out.summary()}"];')
            self.trace_lines.append(f"  {parent} -> {child};")

    def trace_dot(self) -> str:
        return "digraph transitions {\n" + "\n".join(self.trace_lines) + "\n}\n"

    # -- rules -------------------------------------------------------------------

    RULE_ORDER = (
        "normalize",
        "structural",
        "num_intro",
        "forall_elim",
        "forall_match",
        "expand",
        "smt",
        "sempred",
        "exists",
        "finish",
        "finish_semantic",
    )

    def step(self, cdt: CDT) -> TransitionOutcome:
        """Apply the first applicable transition rule."""
        for rule in self.RULE_ORDER:
            outputs = getattr(self, f"_rule_{rule}")(cdt)
            if outputs is not None:
                return TransitionOutcome(rule, tuple(outputs))
        return TransitionOutcome("stuck", ())

    # R1
    def _rule_normalize(self, cdt: CDT):
        for i, f in enumerate(cdt.constraints):
            if isinstance(f, (Conj, Disj, Neg)):
                outputs = []
                rest = cdt.constraints[:i] + cdt.constraints[i + 1 :]
                for branch in establish_inv(f):
                    merged = list(cdt.constraints[:i])
                    for member in branch:
                        if member not in rest and member not in merged:
                            merged.append(member)
                    merged.extend(cdt.constraints[i + 1 :])
                    outputs.append(
                        replace(cdt, constraints=tuple(merged), step_count=cdt.step_count + 1)
                    )
                return outputs
        return None

    # R2
    def _rule_structural(self, cdt: CDT):
        decided = []
        for f in cdt.constraints:
            if not isinstance(f, PredicateAtom):
                continue
            sig = self.registry.signature(f.name)
            if sig.kind != "structural":
                continue
            resolved = self._resolve_args(cdt, f)
            if resolved is None:
                continue
            truth = eval_structural(f.name, resolved, cdt.tree) != f.negated
            if not truth:
                return []
            decided.append(f)
        if not decided:
            return None
        constraints = tuple(f for f in cdt.constraints if f not in decided)
        return [replace(cdt, constraints=constraints, step_count=cdt.step_count + 1)]

    def _resolve_args(self, cdt: CDT, atom: PredicateAtom):
        resolved = []
        for arg in atom.args:
            if isinstance(arg, NodeRef):
                resolved.append(cdt.tree.by_id(arg.node_id))
            elif isinstance(arg, StringLit):
                resolved.append(arg.value)
            elif isinstance(arg, IntLit):
                resolved.append(arg.value)
            elif isinstance(arg, Variable):
                if arg.vtype == NUM:
                    return None  # undetermined numeric constant
                raise SolverError(f"unresolved variable {arg!r} in {atom!r}")
            else:
                raise SolverError(f"bad argument {arg!r}")
        return tuple(resolved)

    # R3
    def _rule_num_intro(self, cdt: CDT):
        for f in cdt.constraints:
            if isinstance(f, ExistsInt):
                fresh = Variable(f".num{self._next_num_index(cdt)}", NUM)
                body = substitute_vars(f.body, {f.var.name: fresh})
                constraints = tuple(body if g == f else g for g in cdt.constraints)
                return [replace(cdt, constraints=constraints, step_count=cdt.step_count + 1)]
        return None

    def _next_num_index(self, cdt: CDT) -> int:
        highest = -1

        def scan(value):
            nonlocal highest
            m = _NUM_NAME.match(value)
            if m:
                highest = max(highest, int(m.group(1)))

        def walk_formula(f):
            if isinstance(f, (ForallTree, ExistsTree)):
                walk_formula(f.body)
            elif isinstance(f, ExistsInt):
                scan(f.var.name)
                walk_formula(f.body)
            elif isinstance(f, (Conj, Disj)):
                for p in f.parts:
                    walk_formula(p)
            elif isinstance(f, Neg):
                walk_formula(f.body)
            elif isinstance(f, SmtAtom):
                for ref in term_refs(f.term):
                    if isinstance(ref, Variable):
                        scan(ref.name)
            elif isinstance(f, PredicateAtom):
                for a in f.args:
                    if isinstance(a, Variable):
                        scan(a.name)

        for f in cdt.constraints:
            walk_formula(f)
        return highest + 1

    # R4 / R5
    def _rule_forall_elim(self, cdt: CDT):
        for f in cdt.constraints:
            if not isinstance(f, ForallTree):
                continue
            container = self._container(cdt, f)
            vtype = f.var.vtype
            if any(
                self.graph.reachable(leaf.label, vtype)
                for _, leaf in container.open_leaves()
            ):
                continue
            unmatched = [
                node
                for _, node in container.walk()
                if node.label == vtype and (f, node.node_id) not in cdt.index
            ]
            if f.mexpr is None:
                if unmatched:
                    continue
            else:
                abstracts = self._mexpr(vtype, f.mexpr)
                if any(
                    any(might_match(node, abstract, self.grammar) for abstract, _ in abstracts)
                    for node in unmatched
                ):
                    continue
            return [
                replace(cdt, constraints=cdt.without(f), step_count=cdt.step_count + 1)
            ]
        return None

    # R6 / R7
    def _rule_forall_match(self, cdt: CDT):
        for f in cdt.constraints:
            if not isinstance(f, ForallTree):
                continue
            container = self._container(cdt, f)
            matched_nodes = []
            additions = []
            for _, node in container.walk():
                if node.label != f.var.vtype or (f, node.node_id) in cdt.index:
                    continue
                if f.mexpr is None:
                    bindings_list = [{}]
                else:
                    bindings_list = match(node, f.mexpr, self.grammar)
                    if not bindings_list:
                        continue
                matched_nodes.append(node.node_id)
                for bindings in bindings_list:
                    mapping = {f.var.name: NodeRef(node.node_id)}
                    mapping.update(
                        {name: NodeRef(sub.node_id) for name, sub in bindings.items()}
                    )
                    inst = substitute_vars(f.body, mapping)
                    if inst not in cdt.constraints and inst not in additions:
                        additions.append(inst)
            if matched_nodes:
                index = cdt.index | {(f, nid) for nid in matched_nodes}
                constraints = cdt.constraints + tuple(additions)
                return [
                    replace(
                        cdt,
                        constraints=constraints,
                        index=index,
                        step_count=cdt.step_count + 1,
                    )
                ]
        return None

    # R8
    def _rule_expand(self, cdt: CDT):
        universals = [f for f in cdt.constraints if isinstance(f, ForallTree)]
        if not universals:
            return None
        bound = self._bound_leaves(cdt, universals)
        if not bound:
            return None
        per_leaf = []
        for path, leaf in bound:
            options = self._leaf_expansions(leaf.label, len(path))
            if not options:
                return None  # a bound leaf cannot take a step
            per_leaf.append((path, leaf, options))
        cap = None if self.config.exhaustive else self.config.expansion_cap
        option_lists = [opts for _, _, opts in per_leaf]
        combos = _cheapest_products(option_lists, cap)
        if cap is not None:
            # recursion guard: every alternative of every leaf must reach the
            # queue in some combo, or cheap expansions starve deep structure
            cheapest = [opts[0] for opts in option_lists]
            for i, opts in enumerate(option_lists):
                present = {id(combo[i]) for combo in combos}
                for option in opts:
                    if id(option) not in present:
                        extra = list(cheapest)
                        extra[i] = option
                        combos.append(extra)
        outputs = []
        for combo in combos:
            tree = cdt.tree
            for (path, leaf, _), (rhs, _) in zip(per_leaf, combo):
                children = []
                next_id = tree.max_id + 1
                for sym in rhs:
                    children.append(DerivationTree(next_id, sym, None))
                    next_id += 1
                expanded = DerivationTree(leaf.node_id, leaf.label, tuple(children))
                tree = replace_at_path(tree, path, expanded)
            outputs.append(replace(cdt, tree=tree, step_count=cdt.step_count + 1))
        return outputs

    def _bound_leaves(self, cdt: CDT, universals):
        bound = []
        for path, leaf in cdt.tree.open_leaves():
            for f in universals:
                cpath = cdt.tree.path_of(f.container.node_id)
                if path[: len(cpath)] != cpath:
                    continue
                types = {f.var.vtype}
                if f.mexpr is not None:
                    types |= {
                        nt
                        for nt in f.mexpr.nonterminals()
                        if nt in self.grammar.nonterminals
                    }
                if leaf.label in types or any(
                    self.graph.reachable(leaf.label, t) for t in types
                ):
                    bound.append((path, leaf))
                    break
        return bound

    def _leaf_expansions(self, label: str, path_len: int):
        """(rhs, cost) options for one leaf, cheapest first."""
        max_depth = self.config.max_depth
        options = []
        for idx, rhs in enumerate(self.grammar.alternatives(label)):
            if rhs and max_depth is not None and path_len + 2 > max_depth:
                continue
            if max_depth is not None:
                # every nonterminal child must still be closable in the room left
                room = max_depth - (path_len + 1)
                if any(
                    is_nonterminal(s) and self.min_heights.get(s, 10**9) > room
                    for s in rhs
                ):
                    continue
            cost = self.closing.alternative_cost(rhs)
            options.append((cost, idx, rhs))
        if self.config.exhaustive:
            options.sort(key=lambda o: o[1])
        else:
            options.sort(key=lambda o: (o[0], o[1]))
        return [(rhs, cost) for cost, idx, rhs in options]

    # R9
    def _rule_smt(self, cdt: CDT):
        atoms = [f for f in cdt.constraints if isinstance(f, SmtAtom)]
        if not atoms:
            return None
        clusters = _cluster_by_refs(atoms)
        cluster = clusters[0]
        terms = [a.term for a in cluster]
        refs = []
        for term in terms:
            for ref in term_refs(term):
                if ref not in refs:
                    refs.append(ref)
        seeds = {}
        heights = {}
        paths = {}
        for ref in refs:
            if isinstance(ref, NodeRef):
                node = cdt.tree.by_id(ref.node_id)
                seeds[ref] = node
                paths[ref] = cdt.tree.path_of(ref.node_id)
                if self.config.max_depth is not None:
                    heights[ref] = self.config.max_depth - len(paths[ref])
        derived = {}
        for ref in refs:
            if not isinstance(ref, NodeRef):
                continue
            for other in refs:
                if (
                    isinstance(other, NodeRef)
                    and other != ref
                    and paths[ref][: len(paths[other])] == paths[other]
                ):
                    derived[ref] = other
                    break
        variables = [r for r in refs if r not in derived]
        budget = 10**6 if self.config.exhaustive else self.config.smt_budget
        cap = 10**6 if self.config.exhaustive else 64
        models = smt_solve(
            terms,
            variables,
            self.grammar,
            budget=budget,
            seeds=seeds,
            max_height=heights or (self.config.max_depth if self.config.max_depth else None),
            candidate_cap=cap,
            derived=derived,
        )
        outputs = []
        remaining = tuple(f for f in cdt.constraints if f not in cluster)
        for model in models:
            tree = cdt.tree
            num_map = {}
            for ref, value in model.items():
                if isinstance(ref, NodeRef):
                    tree = substitute(tree, ref.node_id, value)
                else:
                    num_map[ref.name] = StringLit(value)
            constraints = tuple(substitute_vars(f, num_map) for f in remaining)
            outputs.append(
                replace(
                    cdt,
                    constraints=constraints,
                    tree=tree,
                    step_count=cdt.step_count + 1,
                )
            )
        return outputs

    # R10
    def _rule_sempred(self, cdt: CDT):
        for f in cdt.constraints:
            if not isinstance(f, PredicateAtom):
                continue
            sig = self.registry.signature(f.name)
            if sig.kind != "semantic":
                continue
            args = []
            for arg in f.args:
                if isinstance(arg, NodeRef):
                    args.append(cdt.tree.by_id(arg.node_id))
                elif isinstance(arg, StringLit):
                    args.append(arg.value)
                elif isinstance(arg, IntLit):
                    args.append(arg.value)
                else:
                    args.append(arg)
            result = eval_semantic(
                self.registry, f.name, tuple(args), cdt.tree, self.grammar, self.graph
            )
            if result.is_not_ready:
                return None  # strict order: do not skip ahead to later atoms
            if result.is_false:
                return []
            without = cdt.without(f)
            if result.is_true:
                return [replace(cdt, constraints=without, step_count=cdt.step_count + 1)]
            outputs = []
            for model in result.models:
                tree = cdt.tree
                num_map = {}
                for key in sorted(model, key=repr):
                    value = model[key]
                    if isinstance(key, int):
                        tree = substitute(tree, key, value)
                    elif isinstance(key, Variable):
                        num_map[key.name] = StringLit(value)
                    else:
                        raise SolverError(f"bad model key {key!r} from {f.name}")
                constraints = tuple(substitute_vars(g, num_map) for g in without)
                outputs.append(
                    replace(
                        cdt,
                        constraints=constraints,
                        tree=tree,
                        step_count=cdt.step_count + 1,
                    )
                )
            return outputs
        return None

    # R11-R14
    def _rule_exists(self, cdt: CDT):
        for f in cdt.constraints:
            if not isinstance(f, ExistsTree):
                continue
            container = self._container(cdt, f)
            outputs = []
            for _, node in container.walk():
                if node.label != f.var.vtype or (f, node.node_id) in cdt.index:
                    continue
                if f.mexpr is None:
                    bindings_list = [{}]
                else:
                    bindings_list = match(node, f.mexpr, self.grammar)
                for bindings in bindings_list:
                    mapping = {f.var.name: NodeRef(node.node_id)}
                    mapping.update(
                        {name: NodeRef(sub.node_id) for name, sub in bindings.items()}
                    )
                    inst = substitute_vars(f.body, mapping)
                    constraints = tuple(
                        inst if g == f else g for g in cdt.constraints
                    )
                    outputs.append(
                        replace(
                            cdt, constraints=constraints, step_count=cdt.step_count + 1
                        )
                    )
            outputs.extend(self._insertion_outputs(cdt, f, container))
            return outputs
        return None

    def _insertion_outputs(self, cdt: CDT, f: ExistsTree, container: DerivationTree):
        if cdt.insertion_count(f) >= self.config.insertion_ceiling:
            return []
        new_tree, binder_paths = make_tree(f.var, f.mexpr, self.grammar)
        results = insert_tree(
            container,
            new_tree,
            self.grammar,
            next_id=cdt.tree.max_id + 1,
            cap=self.config.insertion_cap,
        )
        outputs = []
        for nid, replacement in results:
            tree = splice(cdt.tree, container.node_id, replacement)
            inserted = tree.by_id(nid)
            mapping = {f.var.name: NodeRef(nid)}
            for name, rel_path in binder_paths.items():
                mapping[name] = NodeRef(inserted.at(rel_path).node_id)
            inst = substitute_vars(f.body, mapping)
            constraints = list(
                inst if g == f else g for g in cdt.constraints
            )
            for orig in cdt.original:
                if orig not in constraints:
                    constraints.append(orig)
            outputs.append(
                replace(
                    cdt,
                    constraints=tuple(constraints),
                    tree=tree,
                    step_count=cdt.step_count + 1,
                    insertions=cdt.bump_insertions(f),
                )
            )
        return outputs

    # R15
    def _rule_finish(self, cdt: CDT):
        if cdt.constraints or not cdt.tree.is_open:
            return None
        return self._finish_outputs(cdt)

    # R16
    def _rule_finish_semantic(self, cdt: CDT):
        if not cdt.constraints or not cdt.tree.is_open:
            return None
        if not all(
            isinstance(f, PredicateAtom)
            and self.registry.signature(f.name).kind == "semantic"
            for f in cdt.constraints
        ):
            return None
        return self._finish_outputs(cdt)

    def _finish_outputs(self, cdt: CDT):
        """Closures of the remaining open tree.  Outside exhaustive mode the
        parent is re-queued as long as sampling still finds new closures, so
        a single partial solution can seed many outputs."""
        if self.config.exhaustive:
            return [
                replace(cdt, tree=closed, step_count=cdt.step_count + 1)
                for closed in self._closures(cdt.tree)
            ]
        key = cdt.constraints
        fresh = []
        for closed in self._closures(cdt.tree):
            mark = (key, closed.text)
            if mark in self._finish_seen:
                continue
            self._finish_seen.add(mark)
            fresh.append(closed)
        outputs = [
            replace(cdt, tree=closed, step_count=cdt.step_count + 1) for closed in fresh
        ]
        if fresh:
            recede = 2 ** min(cdt.finish_visits, 12)
            outputs.append(
                replace(
                    cdt,
                    step_count=cdt.step_count + recede,
                    finish_visits=cdt.finish_visits + 1,
                )
            )
        return outputs

    # -- closing ------------------------------------------------------------------

    def _closures(self, tree: DerivationTree) -> list[DerivationTree]:
        if self.config.exhaustive:
            return self._exhaustive_closures(tree)
        closures = []
        seen = set()
        for _ in range(self.config.finish_samples):
            closed = self._coverage_close(tree)
            if closed is None:
                break
            key = closed.text
            if key not in seen:
                seen.add(key)
                closures.append(closed)
        return closures

    def _coverage_close(self, tree: DerivationTree) -> DerivationTree | None:
        soft_depth = tree.height + 12
        work = tree
        while True:
            leaves = work.open_leaves()
            if not leaves:
                return work
            path, leaf = leaves[0]
            depth = len(path) + 1
            options = []
            for idx, rhs in enumerate(self.grammar.alternatives(leaf.label)):
                if rhs and self.config.max_depth is not None and depth + 1 > self.config.max_depth:
                    continue
                room = (self.config.max_depth or 10**9) - depth
                if any(
                    is_nonterminal(s) and self.min_heights.get(s, 10**9) > room
                    for s in rhs
                ):
                    continue
                options.append((idx, rhs))
            if not options:
                return None
            if depth >= soft_depth:
                idx, rhs = min(
                    options,
                    key=lambda o: max(
                        (self.min_heights.get(s, 1) for s in o[1] if is_nonterminal(s)),
                        default=0,
                    ),
                )
            else:
                uncovered = [
                    (idx, rhs)
                    for idx, rhs in options
                    if (leaf.label, idx) not in self.expansion_coverage
                ]
                idx, rhs = (
                    uncovered[self.rng.randrange(len(uncovered))]
                    if uncovered
                    else options[self.rng.randrange(len(options))]
                )
            self.expansion_coverage.add((leaf.label, idx))
            if self.expansion_coverage >= self.all_expansions:
                self.expansion_coverage = set()
            children = []
            next_id = work.max_id + 1
            for sym in rhs:
                children.append(DerivationTree(next_id, sym, None))
                next_id += 1
            work = replace_at_path(
                work, path, DerivationTree(leaf.node_id, leaf.label, tuple(children))
            )

    def _exhaustive_closures(self, tree: DerivationTree) -> list[DerivationTree]:
        max_depth = self.config.max_depth
        results = [tree]
        for path, leaf in tree.open_leaves():
            budget = max_depth - len(path)
            options = enumerate_trees(self.grammar, leaf.label, budget) if budget >= 1 else []
            grown = []
            for partial in results:
                for skeleton in options:
                    built = tree_from_skeleton(skeleton, partial.max_id + 1)
                    adopted = DerivationTree(leaf.node_id, built.label, built.children)
                    grown.append(replace_at_path(partial, path, adopted))
            results = grown
        return results

    # -- helpers ------------------------------------------------------------------

    def _container(self, cdt: CDT, f) -> DerivationTree:
        if not isinstance(f.container, NodeRef):
            raise SolverError(f"unresolved container in {f!r}")
        return cdt.tree.by_id(f.container.node_id)

    def _mexpr(self, vtype: str, mexpr):
        key = (vtype, mexpr.raw)
        if key not in self._mexpr_cache:
            self._mexpr_cache[key] = mexpr_trees(vtype, mexpr, self.grammar)
        return self._mexpr_cache[key]


def _dedupe(items) -> tuple:
    out = []
    for item in items:
        if item not in out:
            out.append(item)
    return tuple(out)


def _cluster_by_refs(atoms: list[SmtAtom]) -> list[list[SmtAtom]]:
    """Group atoms into connected components over shared references; the
    component order follows the first atom of each component."""
    clusters: list[tuple[list[SmtAtom], set]] = []
    for atom in atoms:
        refs = set(term_refs(atom.term))
        merged_atoms = [atom]
        merged_refs = set(refs)
        rest = []
        for members, crefs in clusters:
            if refs & crefs:
                merged_atoms = members + merged_atoms
                merged_refs |= crefs
            else:
                rest.append((members, crefs))
        clusters = rest + [(merged_atoms, merged_refs)]
    ordered = sorted(clusters, key=lambda c: atoms.index(c[0][0]))
    return [members for members, _ in ordered]


def _cheapest_products(option_lists, cap: int | None):
    """Combinations across per-leaf option lists, cheapest total cost first.

    Each option is (rhs, cost); lists are pre-sorted.  With a cap, a lattice
    walk yields only the requested number of combinations.
    """
    if cap is None:
        combos = [[]]
        for options in option_lists:
            combos = [c + [o] for c in combos for o in options]
            if len(combos) > 200_000:
                raise SolverError("expansion product too large for exhaustive mode")
        return combos
    heap = [(sum(opts[0][1] for opts in option_lists), (0,) * len(option_lists))]
    seen = {heap[0][1]}
    out = []
    while heap and len(out) < cap:
        total, indices = heapq.heappop(heap)
        out.append([option_lists[i][j] for i, j in enumerate(indices)])
        for i in range(len(indices)):
            if indices[i] + 1 < len(option_lists[i]):
                nxt = indices[:i] + (indices[i] + 1,) + indices[i + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    cost = total - option_lists[i][indices[i]][1] + option_lists[i][indices[i] + 1][1]
                    heapq.heappush(heap, (cost, nxt))
    return out


def solve_stream(
    grammar: Grammar,
    formula,
    config: SolverConfig | None = None,
    registry: PredicateRegistry | None = None,
):
    """Convenience wrapper: yields solution strings for ``formula``."""
    yield from Solver(grammar, formula, config, registry).run()
