"""Ground evaluation and model enumeration for the restricted atom language.

The solver is a constraint-guided enumerator: it derives exact values, length
intervals, and integer intervals from the atoms, then enumerates grammar
derivations inside those bounds and keeps the assignments that re-check true
under :func:`eval_ground`.  Unsatisfiability within the explored bounds is
reported as an empty model list, matching the convention that solver timeouts
count as "no".
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

from .formulas import NUM, IntLit, NodeRef, SmtNode, StringLit, Variable
from .grammar import Grammar, is_nonterminal
from .parsing import ParseFailure, parse_input
from .trees import DerivationTree, replace_at_path, tree_from_skeleton

__all__ = ["SmtError", "eval_ground", "solve", "term_refs", "derive_bounds"]

INT_MIN, INT_MAX = -(10**6), 10**6
NUM_ENUM_CAP = 32
TREE_CANDIDATE_CAP = 64
HEIGHT_SLACK = 6


class SmtError(ValueError):
    pass


# --------------------------------------------------------------------------
# Ground evaluation

_POISON = object()  # str.to_int of a non-numeric string


def _string_value(value) -> str:
    if isinstance(value, DerivationTree):
        return value.text
    if isinstance(value, str):
        return value
    raise SmtError(f"expected a string value, got {value!r}")


def _eval_term(term, assignment):
    if isinstance(term, StringLit):
        return term.value
    if isinstance(term, IntLit):
        return term.value
    if isinstance(term, (Variable, NodeRef)):
        if term not in assignment:
            raise SmtError(f"unassigned {term!r}")
        return _string_value(assignment[term])
    if not isinstance(term, SmtNode):
        raise SmtError(f"bad term {term!r}")
    op = term.op
    if op == "str.len":
        return len(_eval_term(term.args[0], assignment))
    if op == "str.to_int":
        text = _eval_term(term.args[0], assignment)
        return int(text) if text.isdigit() else _POISON
    if op == "str.++":
        return "".join(_eval_term(a, assignment) for a in term.args)
    if op == "not":
        return not _eval_term(term.args[0], assignment)
    if op == "and":
        return all(_eval_term(a, assignment) for a in term.args)
    if op == "or":
        return any(_eval_term(a, assignment) for a in term.args)
    if op in ("=", "<", "<=", ">", ">="):
        left = _eval_term(term.args[0], assignment)
        right = _eval_term(term.args[1], assignment)
        if left is _POISON or right is _POISON:
            return False
        if op == "=":
            return left == right
        return {"<": left < right, "<=": left <= right, ">": left > right, ">=": left >= right}[op]
    if op == "str.contains":
        hay = _eval_term(term.args[0], assignment)
        return _eval_term(term.args[1], assignment) in hay
    if op == "str.prefixof":
        prefix = _eval_term(term.args[0], assignment)
        return _eval_term(term.args[1], assignment).startswith(prefix)
    if op == "str.in_re":
        text = _eval_term(term.args[0], assignment)
        return _regex_pattern(term.args[1]).fullmatch(text) is not None
    raise SmtError(f"unknown operator {op!r}")


def eval_ground(term: SmtNode, assignment: dict) -> bool:
    """Evaluate a boolean term; every variable and node reference must be
    assigned (to a closed tree or a string)."""
    value = _eval_term(term, assignment)
    if not isinstance(value, bool):
        raise SmtError(f"term {term!r} is not boolean")
    return value


def _regex_source(node) -> str:
    if isinstance(node, SmtNode):
        if node.op == "str.to_re":
            return re.escape(node.args[0].value)
        if node.op == "re.++":
            return "".join(_regex_source(a) for a in node.args)
        if node.op == "re.union":
            return "(?:" + "|".join(_regex_source(a) for a in node.args) + ")"
        if node.op == "re.*":
            return "(?:" + _regex_source(node.args[0]) + ")*"
        if node.op == "re.+":
            return "(?:" + _regex_source(node.args[0]) + ")+"
        if node.op == "re.opt":
            return "(?:" + _regex_source(node.args[0]) + ")?"
        if node.op == "re.range":
            lo, hi = node.args[0].value, node.args[1].value
            return f"[{re.escape(lo)}-{re.escape(hi)}]"
    raise SmtError(f"not a regular expression term: {node!r}")


@lru_cache(maxsize=512)
def _compiled(source: str):
    return re.compile(source)


def _regex_pattern(node):
    return _compiled(_regex_source(node))


# --------------------------------------------------------------------------
# Bound derivation


def term_refs(term) -> list:
    """Variables and node references occurring in a term, in textual order."""
    out = []

    def walk(t):
        if isinstance(t, (Variable, NodeRef)):
            if t not in out:
                out.append(t)
        elif isinstance(t, SmtNode):
            for a in t.args:
                walk(a)

    walk(term)
    return out


@dataclass
class Bounds:
    exact: str | None = None
    min_len: int = 0
    max_len: int | None = None
    min_int: int | None = None
    max_int: int | None = None

    def narrow_len(self, lo=None, hi=None):
        if lo is not None:
            self.min_len = max(self.min_len, lo)
        if hi is not None:
            self.max_len = hi if self.max_len is None else min(self.max_len, hi)

    def narrow_int(self, lo=None, hi=None):
        if lo is not None:
            self.min_int = lo if self.min_int is None else max(self.min_int, lo)
        if hi is not None:
            self.max_int = hi if self.max_int is None else min(self.max_int, hi)


def _ground_int(term, assignment):
    try:
        value = _eval_term(term, assignment)
    except SmtError:
        return None
    return value if isinstance(value, int) and value is not _POISON else None


def _ground_str(term, assignment):
    try:
        value = _eval_term(term, assignment)
    except SmtError:
        return None
    return value if isinstance(value, str) else None


def derive_bounds(atoms, target, assignment) -> Bounds:
    """Bounds on ``target`` implied by comparison atoms whose other side is
    ground under ``assignment``.  Conservative: unknown shapes contribute
    nothing."""
    bounds = Bounds()
    for atom in atoms:
        op = atom.op
        if op not in ("=", "<", "<=", ">", ">="):
            continue
        left, right = atom.args
        for a, b, flipped in ((left, right, False), (right, left, True)):
            # a is the side mentioning the target
            if a == target:
                if op == "=":
                    value = _ground_str(b, assignment)
                    if value is not None:
                        bounds.exact = value
                        bounds.narrow_len(len(value), len(value))
                continue
            if isinstance(a, SmtNode) and len(a.args) == 1 and a.args[0] == target:
                value = _ground_int(b, assignment)
                if value is None:
                    continue
                effective = op
                if flipped:
                    effective = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "=": "="}[op]
                lo, hi = _interval(effective, value)
                if a.op == "str.len":
                    bounds.narrow_len(lo, hi)
                elif a.op == "str.to_int":
                    bounds.narrow_int(lo, hi)
    return bounds


def _interval(op: str, value: int):
    if op == "=":
        return value, value
    if op == "<":
        return None, value - 1
    if op == "<=":
        return None, value
    if op == ">":
        return value + 1, None
    if op == ">=":
        return value, None
    raise SmtError(op)


# --------------------------------------------------------------------------
# Candidate enumeration


@lru_cache(maxsize=None)
def _length_table(grammar: Grammar, max_len: int) -> dict[str, frozenset[int]]:
    """Achievable yield lengths (capped) per nonterminal."""
    table = {nt: set() for nt in grammar.nonterminals}
    changed = True
    while changed:
        changed = False
        for lhs, rhs in grammar.productions:
            sums = {0}
            feasible = True
            for sym in rhs:
                if is_nonterminal(sym):
                    opts = table[sym]
                    if not opts:
                        feasible = False
                        break
                    sums = {a + b for a in sums for b in opts if a + b <= max_len}
                else:
                    sums = {a + len(sym) for a in sums if a + len(sym) <= max_len}
                if not sums:
                    feasible = False
                    break
            if feasible and not sums <= table[lhs]:
                table[lhs].update(sums)
                changed = True
    return {nt: frozenset(v) for nt, v in table.items()}


def _gen_exact_length(grammar, nt, length, table, guard=0):
    """Skeletons rooted at nt with yield length exactly ``length``."""
    if guard > length + 24:
        return
    for rhs in grammar.alternatives(nt):
        yield from _gen_seq(grammar, nt, rhs, length, table, guard)


def _gen_seq(grammar, nt, rhs, length, table, guard):
    def parts(idx, remaining):
        if idx == len(rhs):
            if remaining == 0:
                yield ()
            return
        sym = rhs[idx]
        if not is_nonterminal(sym):
            if len(sym) <= remaining:
                for rest in parts(idx + 1, remaining - len(sym)):
                    yield ((sym, None),) + rest
            return
        for l in sorted(table.get(sym, ())):
            if l > remaining:
                break
            for sub in _gen_exact_length(grammar, sym, l, table, guard + 1):
                for rest in parts(idx + 1, remaining - l):
                    yield (sub,) + rest

    for children in parts(0, length):
        yield (nt, children)


def _seed_closures(grammar, seed: DerivationTree, bounds: Bounds, limit: int, max_height=None):
    """Closed trees refining ``seed`` within the given bounds, up to ``limit``."""
    if not seed.is_open:
        text = seed.text
        if bounds.exact is not None and text != bounds.exact:
            return []
        if len(text) < bounds.min_len:
            return []
        if bounds.max_len is not None and len(text) > bounds.max_len:
            return []
        return [seed]
    if bounds.exact is not None:
        return _close_to_text(grammar, seed, bounds.exact)
    if bounds.max_len is not None:
        return _close_by_length(grammar, seed, bounds, limit)
    return _close_by_height(grammar, seed, limit, max_height)


def _close_to_text(grammar, seed, text):
    # fast path for a single fully-open node; otherwise go through lengths
    if seed.children is None:
        try:
            parsed = parse_input(grammar, text, start=seed.label)
        except ParseFailure:
            return []
        return [DerivationTree(seed.node_id, parsed.label, parsed.children)]
    bounds = Bounds(min_len=len(text), max_len=len(text))
    return [t for t in _close_by_length(grammar, seed, bounds, 64) if t.text == text]


def _closed_prefix_len(tree: DerivationTree) -> int:
    if tree.children is None:
        return 0 if is_nonterminal(tree.label) else len(tree.label)
    return sum(_closed_prefix_len(c) for c in tree.children)


def _close_by_length(grammar, seed, bounds: Bounds, limit):
    max_len = bounds.max_len
    table = _length_table(grammar, max_len)
    leaves = seed.open_leaves()
    fixed = _closed_prefix_len(seed)
    budget_hi = max_len - fixed
    if budget_hi < 0:
        return []
    results = []
    lo = max(bounds.min_len - fixed, 0)

    def assign(idx, remaining_budget, tree):
        if len(results) >= limit:
            return
        if idx == len(leaves):
            text_len = len(tree.text)
            if bounds.min_len <= text_len and text_len <= max_len:
                results.append(tree)
            return
        path, leaf = leaves[idx]
        for l in sorted(table.get(leaf.label, ())):
            if l > remaining_budget:
                break
            for skeleton in _gen_exact_length(grammar, leaf.label, l, table):
                built = tree_from_skeleton(skeleton, tree.max_id + 1)
                adopted = DerivationTree(leaf.node_id, built.label, built.children)
                assign(idx + 1, remaining_budget - l, replace_at_path(tree, path, adopted))
                if len(results) >= limit:
                    return

    assign(0, budget_hi, seed)
    # deterministic: shorter yields first, then textual order
    results.sort(key=lambda t: (len(t.text), t.text))
    return results


def _close_by_height(grammar, seed, limit, max_height=None):
    from .grammar import enumerate_trees
    from .building import min_heights

    heights = min_heights(grammar)
    leaves = seed.open_leaves()
    needed = max((heights.get(l.label, 1) for _, l in leaves), default=1)
    cap = max_height or (needed + HEIGHT_SLACK)
    results = []
    seen_texts = set()
    for h in range(needed, cap + 1):
        options = {
            leaf.label: enumerate_trees(grammar, leaf.label, h)
            for _, leaf in leaves
        }
        if any(not opts for opts in options.values()):
            continue

        def assign(idx, tree):
            if len(results) >= limit:
                return
            if idx == len(leaves):
                text = tree.text
                if text not in seen_texts:
                    seen_texts.add(text)
                    results.append(tree)
                return
            path, leaf = leaves[idx]
            for skeleton in options[leaf.label]:
                built = tree_from_skeleton(skeleton, tree.max_id + 1)
                adopted = DerivationTree(leaf.node_id, built.label, built.children)
                assign(idx + 1, replace_at_path(tree, path, adopted))
                if len(results) >= limit:
                    return

        assign(0, seed)
        if len(results) >= limit:
            break
    return results


# --------------------------------------------------------------------------
# Solving


def _model_key(model: dict) -> tuple:
    parts = []
    for key in sorted(model, key=repr):
        value = model[key]
        parts.append((repr(key), value.text if isinstance(value, DerivationTree) else value))
    return tuple(parts)


def solve(
    conj: list[SmtNode],
    variables: list,
    grammar: Grammar,
    blocked: tuple = (),
    budget: int = 3,
    seeds: dict | None = None,
    max_height=None,
    candidate_cap: int = TREE_CANDIDATE_CAP,
    derived: dict | None = None,
) -> list[dict]:
    """Enumerate up to ``budget`` assignments satisfying every atom in ``conj``.

    ``variables`` are :class:`Variable` (nonterminal- or NUM-typed) and
    :class:`NodeRef` entries; ``seeds`` optionally maps tree-typed entries to
    partially expanded trees whose decided structure must be preserved.
    ``max_height`` bounds candidate subtree heights, either globally or per
    entry when given as a dict.  ``derived`` maps references nested inside a
    solved entry to their enclosing entry; they resolve by node id once the
    outer entry is assigned.  The empty list means no model was found within
    bounds.
    """
    if budget < 1:
        raise SmtError("budget must be >= 1")
    seeds = seeds or {}
    derived = derived or {}
    blocked_keys = {_model_key(m) for m in blocked}
    models: list[dict] = []

    def height_for(ref):
        if isinstance(max_height, dict):
            return max_height.get(ref)
        return max_height

    def var_type(ref) -> str:
        if isinstance(ref, Variable):
            return ref.vtype
        seed = seeds.get(ref)
        if seed is None:
            raise SmtError(f"node reference {ref!r} needs a seed tree")
        return seed.label

    def candidates(ref, partial):
        bounds = derive_bounds(conj, ref, partial)
        vtype = var_type(ref)
        if vtype == NUM:
            return _num_candidates(bounds)
        seed = seeds.get(ref)
        if seed is None:
            seed = DerivationTree(1, vtype, None)
        return _seed_closures(grammar, seed, bounds, candidate_cap, height_for(ref))

    def with_derived(partial, ref, value):
        extended = {**partial, ref: value}
        if isinstance(value, DerivationTree):
            for inner, outer in derived.items():
                if outer == ref:
                    extended[inner] = value.by_id(inner.node_id)
        return extended

    def ready(atom, partial):
        return all(r in partial for r in term_refs(atom))

    def descend(idx, partial):
        if len(models) >= budget:
            return
        pending = [a for a in conj if ready(a, partial)]
        if not all(eval_ground(a, partial) for a in pending):
            return
        if idx == len(variables):
            model = {k: v for k, v in partial.items() if k not in derived}
            if _model_key(model) not in blocked_keys:
                blocked_keys.add(_model_key(model))
                models.append(model)
            return
        ref = variables[idx]
        if ref in partial:
            descend(idx + 1, partial)
            return
        for candidate in candidates(ref, partial):
            descend(idx + 1, with_derived(partial, ref, candidate))
            if len(models) >= budget:
                return

    descend(0, {})
    return models


def _num_candidates(bounds: Bounds) -> list[str]:
    if bounds.exact is not None:
        return [bounds.exact] if bounds.exact.isdigit() else []
    lo = bounds.min_int if bounds.min_int is not None else 0
    hi = bounds.max_int if bounds.max_int is not None else lo + NUM_ENUM_CAP - 1
    lo = max(lo, 0)
    hi = min(hi, INT_MAX)
    if hi < lo:
        return []
    return [str(v) for v in range(lo, min(hi, lo + NUM_ENUM_CAP - 1) + 1)]
