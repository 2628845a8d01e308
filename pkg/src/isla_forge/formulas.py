"""Constraint formulas: AST, concrete syntax, substitution, normalization.

Concrete syntax summary::

    forall <type> var in container: BODY
    exists <type> var="MEXPR" in container: BODY
    exists int var: BODY
    predicate(arg, ...)
    (= (str.len var) 17)            -- prefix-notation atom
    F and F    F or F    not F    (F)

Quantifiers bind tighter than ``and``/``or``: their body is a single
quantified formula, negation, atom, or parenthesized formula.  The free
variable ``start`` denotes the tree root and is always in scope.  A
parenthesized expression is an atom exactly when the token after ``(`` is a
relational or string predicate symbol.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from .grammar import Grammar
from .matching import MatchError, MatchExpression, mexpr_trees

__all__ = [
    "NUM",
    "Variable",
    "NodeRef",
    "StringLit",
    "IntLit",
    "SmtNode",
    "SmtAtom",
    "PredicateAtom",
    "ForallTree",
    "ExistsTree",
    "ExistsInt",
    "Conj",
    "Disj",
    "Neg",
    "Formula",
    "FormulaError",
    "parse_formula",
    "substitute_vars",
    "establish_inv",
    "negate",
    "free_variables",
    "quantifier_metrics",
]

NUM = "NUM"

MAX_DNF_BRANCHES = 64


class FormulaError(ValueError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    vtype: str

    def __repr__(self):
        return f"{self.name}:{self.vtype}"


@dataclass(frozen=True)
class NodeRef:
    node_id: int

    def __repr__(self):
        return f"@{self.node_id}"


@dataclass(frozen=True)
class StringLit:
    value: str


@dataclass(frozen=True)
class IntLit:
    value: int


@dataclass(frozen=True)
class SmtNode:
    op: str
    args: tuple

    def __repr__(self):
        return "(" + " ".join([self.op] + [repr(a) for a in self.args]) + ")"


Term = Union[Variable, NodeRef, StringLit, IntLit, SmtNode]


@dataclass(frozen=True)
class SmtAtom:
    term: SmtNode

    def __repr__(self):
        return repr(self.term)


@dataclass(frozen=True)
class PredicateAtom:
    name: str
    args: tuple
    negated: bool = False

    def __repr__(self):
        inner = f"{self.name}({', '.join(map(repr, self.args))})"
        return f"not {inner}" if self.negated else inner


@dataclass(frozen=True)
class ForallTree:
    var: Variable
    mexpr: MatchExpression | None
    container: Variable | NodeRef
    body: "Formula"

    def __repr__(self):
        mx = f"={self.mexpr.raw!r}" if self.mexpr else ""
        return f"forall {self.var!r}{mx} in {self.container!r}: {self.body!r}"


@dataclass(frozen=True)
class ExistsTree:
    var: Variable
    mexpr: MatchExpression | None
    container: Variable | NodeRef
    body: "Formula"

    def __repr__(self):
        mx = f"={self.mexpr.raw!r}" if self.mexpr else ""
        return f"exists {self.var!r}{mx} in {self.container!r}: {self.body!r}"


@dataclass(frozen=True)
class ExistsInt:
    var: Variable
    body: "Formula"

    def __repr__(self):
        return f"exists int {self.var.name}: {self.body!r}"


@dataclass(frozen=True)
class Conj:
    parts: tuple

    def __repr__(self):
        return "(" + " and ".join(map(repr, self.parts)) + ")"


@dataclass(frozen=True)
class Disj:
    parts: tuple

    def __repr__(self):
        return "(" + " or ".join(map(repr, self.parts)) + ")"


@dataclass(frozen=True)
class Neg:
    body: "Formula"

    def __repr__(self):
        return f"not {self.body!r}"


Formula = Union[
    SmtAtom, PredicateAtom, ForallTree, ExistsTree, ExistsInt, Conj, Disj, Neg
]

QUANTIFIERS = (ForallTree, ExistsTree, ExistsInt)


# --------------------------------------------------------------------------
# Tokenizer


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<nt><[a-zA-Z][a-zA-Z0-9_-]*>)
  | (?P<string>"(?:\\.|[^"\\])*")
  | (?P<number>-?\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<punct>::=|[():,=]|<=|>=|<|>)
    """,
    re.VERBOSE,
)

_SMT_HEADS = {"=", "<", "<=", ">", ">=", "str.contains", "str.prefixof", "str.in_re"}
_SMT_FUNCTIONS = {"str.len", "str.to_int", "str.++"}
_SMT_REGEX = {"str.to_re", "re.++", "re.union", "re.*", "re.+", "re.opt", "re.range"}
_KEYWORDS = {"forall", "exists", "in", "int", "and", "or", "not"}


@dataclass
class _Token:
    kind: str
    value: str
    pos: int


def _tokenize_formula(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            # lone SMT symbols like '*' in re.* are caught by the name rule via
            # the dotted form; anything else is an error
            raise FormulaError(f"unexpected character {text[pos]!r} at offset {pos}")
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        tokens.append(_Token(m.lastgroup, m.group(0), m.start()))
    tokens.append(_Token("eof", "", len(text)))
    return tokens


def _unescape_string(raw: str) -> str:
    body = raw[1:-1]
    out = []
    i = 0
    while i < len(body):
        if body[i] == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            if nxt == "n":
                out.append("\n")
            elif nxt == "t":
                out.append("\t")
            elif nxt == '"':
                out.append('"')
            elif nxt == "\\":
                out.append("\\")
            else:
                raise FormulaError(f"bad string escape \\{nxt}")
            i += 2
        else:
            out.append(body[i])
            i += 1
    return "".join(out)


def _mexpr_content(raw: str) -> str:
    """Match expressions keep their escapes; only quotes are decoded."""
    return raw[1:-1].replace('\\"', '"')


# --------------------------------------------------------------------------
# Parser


class _FormulaParser:
    def __init__(self, tokens: list[_Token], grammar: Grammar, signatures: dict):
        self.tokens = tokens
        self.i = 0
        self.grammar = grammar
        self.signatures = signatures

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def expect(self, value: str) -> _Token:
        tok = self.next()
        if tok.value != value:
            raise FormulaError(f"expected {value!r}, found {tok.value!r} at offset {tok.pos}")
        return tok

    def parse(self) -> Formula:
        env = {"start": Variable("start", self.grammar.start)}
        formula = self.disjunction(env)
        tok = self.peek()
        if tok.kind != "eof":
            raise FormulaError(f"trailing input at offset {tok.pos}: {tok.value!r}")
        return formula

    def disjunction(self, env) -> Formula:
        parts = [self.conjunction(env)]
        while self.peek().value == "or":
            self.next()
            parts.append(self.conjunction(env))
        return parts[0] if len(parts) == 1 else Disj(tuple(parts))

    def conjunction(self, env) -> Formula:
        parts = [self.negation(env)]
        while self.peek().value == "and":
            self.next()
            parts.append(self.negation(env))
        return parts[0] if len(parts) == 1 else Conj(tuple(parts))

    def negation(self, env) -> Formula:
        if self.peek().value == "not":
            self.next()
            return Neg(self.negation(env))
        return self.primary(env)

    def primary(self, env) -> Formula:
        tok = self.peek()
        if tok.value in ("forall", "exists"):
            return self.quantified(env)
        if tok.value == "(":
            if self.peek(1).value in _SMT_HEADS:
                return SmtAtom(self.smt_term(env))
            self.next()
            inner = self.disjunction(env)
            self.expect(")")
            return inner
        if tok.kind == "name":
            return self.predicate(env)
        raise FormulaError(f"unexpected token {tok.value!r} at offset {tok.pos}")

    def quantified(self, env) -> Formula:
        kind = self.next().value
        tok = self.next()
        if tok.value == "int":
            if kind != "exists":
                raise FormulaError("only 'exists int' is supported")
            name = self._var_name()
            var = Variable(name, NUM)
            self.expect(":")
            body = self.negation({**env, name: var})
            return ExistsInt(var, body)
        if tok.kind != "nt":
            raise FormulaError(f"expected nonterminal type at offset {tok.pos}")
        vtype = tok.value
        if vtype not in self.grammar.nonterminals:
            raise FormulaError(f"unknown nonterminal type {vtype}")
        name_tok = self.next()
        if name_tok.kind != "name" or name_tok.value in _KEYWORDS:
            raise FormulaError(f"expected variable name at offset {name_tok.pos}")
        var = Variable(name_tok.value, vtype)
        mexpr = None
        binder_vars = {}
        if self.peek().value == "=":
            self.next()
            stok = self.next()
            if stok.kind != "string":
                raise FormulaError(f"expected match expression string at offset {stok.pos}")
            mexpr = MatchExpression(_mexpr_content(stok.value))
            try:
                for bname, btype in mexpr.binder_types().items():
                    if btype not in self.grammar.nonterminals:
                        raise FormulaError(f"unknown nonterminal type {btype} in match expression")
                    binder_vars[bname] = Variable(bname, btype)
                mexpr_trees(vtype, mexpr, self.grammar)
            except MatchError as err:
                raise FormulaError(str(err)) from None
        self.expect("in")
        ctok = self.next()
        if ctok.kind != "name" or ctok.value not in env:
            raise FormulaError(f"unknown container variable {ctok.value!r} at offset {ctok.pos}")
        container = env[ctok.value]
        if container.vtype == NUM:
            raise FormulaError(f"container {ctok.value!r} is numeric")
        self.expect(":")
        body_env = {**env, var.name: var, **binder_vars}
        body = self.negation(body_env)
        node = ForallTree if kind == "forall" else ExistsTree
        return node(var, mexpr, container, body)

    def _var_name(self) -> str:
        tok = self.next()
        if tok.kind != "name" or tok.value in _KEYWORDS:
            raise FormulaError(f"expected variable name at offset {tok.pos}")
        return tok.value

    def predicate(self, env) -> Formula:
        name_tok = self.next()
        name = name_tok.value
        sig = self.signatures.get(name)
        if sig is None:
            raise FormulaError(f"unknown predicate {name!r}")
        self.expect("(")
        args = []
        while True:
            args.append(self.pred_arg(env))
            if self.peek().value == ",":
                self.next()
                continue
            break
        self.expect(")")
        if len(args) != sig.arity:
            raise FormulaError(
                f"predicate {name} expects {sig.arity} arguments, got {len(args)}"
            )
        return PredicateAtom(name, tuple(args))

    def pred_arg(self, env):
        tok = self.next()
        if tok.kind == "name":
            if tok.value not in env:
                raise FormulaError(f"unknown variable {tok.value!r} at offset {tok.pos}")
            return env[tok.value]
        if tok.kind == "string":
            return StringLit(_unescape_string(tok.value))
        if tok.kind == "number":
            return IntLit(int(tok.value))
        if tok.kind == "nt":
            return StringLit(tok.value)
        raise FormulaError(f"bad predicate argument {tok.value!r} at offset {tok.pos}")

    def smt_term(self, env) -> SmtNode:
        self.expect("(")
        op_tok = self.next()
        op = op_tok.value
        if op not in _SMT_HEADS | _SMT_FUNCTIONS | _SMT_REGEX | {"not", "and", "or"}:
            raise FormulaError(f"unknown operator {op!r} at offset {op_tok.pos}")
        args = []
        while self.peek().value != ")":
            tok = self.peek()
            if tok.value == "(":
                args.append(self.smt_term(env))
            elif tok.kind == "string":
                self.next()
                args.append(StringLit(_unescape_string(tok.value)))
            elif tok.kind == "number":
                self.next()
                args.append(IntLit(int(tok.value)))
            elif tok.kind == "name":
                self.next()
                if tok.value not in env:
                    raise FormulaError(f"unknown variable {tok.value!r} at offset {tok.pos}")
                args.append(env[tok.value])
            else:
                raise FormulaError(f"bad term {tok.value!r} at offset {tok.pos}")
        self.expect(")")
        node = SmtNode(op, tuple(args))
        _check_sorts(node)
        return node


def _sort_of(term) -> str:
    if isinstance(term, (Variable, NodeRef, StringLit)):
        return "string"
    if isinstance(term, IntLit):
        return "int"
    if isinstance(term, SmtNode):
        op = term.op
        if op in ("str.len", "str.to_int"):
            return "int"
        if op == "str.++":
            return "string"
        if op in _SMT_REGEX:
            return "regex"
        return "bool"
    raise FormulaError(f"not a term: {term!r}")


def _check_sorts(node: SmtNode) -> None:
    op, args = node.op, node.args
    sorts = [_sort_of(a) for a in args]

    def need(expected: list[str]):
        if sorts != expected:
            raise FormulaError(f"sort error in ({op} ...): got {sorts}, need {expected}")

    if op == "=":
        if len(args) != 2 or sorts[0] != sorts[1] or sorts[0] not in ("string", "int"):
            raise FormulaError(f"sort error in (= ...): {sorts}")
    elif op in ("<", "<=", ">", ">="):
        need(["int", "int"])
    elif op in ("str.contains", "str.prefixof"):
        need(["string", "string"])
    elif op == "str.in_re":
        need(["string", "regex"])
    elif op in ("str.len", "str.to_int"):
        need(["string"])
    elif op == "str.++":
        if not sorts or any(s != "string" for s in sorts):
            raise FormulaError(f"sort error in (str.++ ...): {sorts}")
    elif op == "str.to_re":
        need(["string"])
    elif op == "re.range":
        if sorts != ["string", "string"] or any(
            not isinstance(a, StringLit) or len(a.value) != 1 for a in args
        ):
            raise FormulaError("re.range takes two single-character literals")
    elif op in ("re.++", "re.union"):
        if not sorts or any(s != "regex" for s in sorts):
            raise FormulaError(f"sort error in ({op} ...): {sorts}")
    elif op in ("re.*", "re.+", "re.opt"):
        need(["regex"])
    elif op == "not":
        need(["bool"])
    elif op in ("and", "or"):
        if not sorts or any(s != "bool" for s in sorts):
            raise FormulaError(f"sort error in ({op} ...): {sorts}")


def parse_formula(text: str, grammar: Grammar, signatures: dict) -> Formula:
    """Parse and type-check a constraint against ``grammar``.

    ``signatures`` maps predicate names to their :class:`PredicateSignature`.
    """
    parser = _FormulaParser(_tokenize_formula(text), grammar, signatures)
    formula = parser.parse()
    _validate_polarity(formula, positive=True, signatures=signatures)
    return formula


def _validate_polarity(formula: Formula, positive: bool, signatures: dict) -> None:
    """Semantic predicates and numeric quantifiers may not occur negated."""
    if isinstance(formula, Neg):
        _validate_polarity(formula.body, not positive, signatures)
    elif isinstance(formula, (Conj, Disj)):
        for part in formula.parts:
            _validate_polarity(part, positive, signatures)
    elif isinstance(formula, (ForallTree, ExistsTree)):
        _validate_polarity(formula.body, positive, signatures)
    elif isinstance(formula, ExistsInt):
        if not positive:
            raise FormulaError("'exists int' may not occur under negation")
        _validate_polarity(formula.body, positive, signatures)
    elif isinstance(formula, PredicateAtom):
        sig = signatures.get(formula.name)
        effective = positive ^ formula.negated
        if sig is not None and sig.kind == "semantic" and not effective:
            raise FormulaError(
                f"semantic predicate {formula.name} may not occur under negation"
            )


# --------------------------------------------------------------------------
# Substitution


def _subst_term(term, mapping):
    if isinstance(term, Variable) and term.name in mapping:
        return mapping[term.name]
    if isinstance(term, SmtNode):
        return SmtNode(term.op, tuple(_subst_term(a, mapping) for a in term.args))
    return term


def substitute_vars(formula: Formula, mapping: dict) -> Formula:
    """Replace free occurrences of variables by name; capture-avoiding.

    Values may be :class:`NodeRef`, :class:`Variable`, or literals.  Bound
    occurrences (quantifier variables and match-expression binders) shadow the
    mapping in their scope.
    """
    if not mapping:
        return formula
    if isinstance(formula, SmtAtom):
        return SmtAtom(_subst_term(formula.term, mapping))
    if isinstance(formula, PredicateAtom):
        return PredicateAtom(
            formula.name,
            tuple(_subst_term(a, mapping) for a in formula.args),
            formula.negated,
        )
    if isinstance(formula, (ForallTree, ExistsTree)):
        container = formula.container
        if isinstance(container, Variable) and container.name in mapping:
            replacement = mapping[container.name]
            if not isinstance(replacement, (Variable, NodeRef)):
                raise FormulaError(
                    f"container {container.name} must map to a variable or node"
                )
            container = replacement
        shadowed = {formula.var.name}
        if formula.mexpr is not None:
            shadowed.update(formula.mexpr.binder_names())
        inner = {k: v for k, v in mapping.items() if k not in shadowed}
        body = substitute_vars(formula.body, inner)
        return type(formula)(formula.var, formula.mexpr, container, body)
    if isinstance(formula, ExistsInt):
        inner = {k: v for k, v in mapping.items() if k != formula.var.name}
        return ExistsInt(formula.var, substitute_vars(formula.body, inner))
    if isinstance(formula, Conj):
        return Conj(tuple(substitute_vars(p, mapping) for p in formula.parts))
    if isinstance(formula, Disj):
        return Disj(tuple(substitute_vars(p, mapping) for p in formula.parts))
    if isinstance(formula, Neg):
        return Neg(substitute_vars(formula.body, mapping))
    raise FormulaError(f"cannot substitute in {formula!r}")


def free_variables(formula: Formula) -> set[Variable]:
    out: set[Variable] = set()

    def term_vars(term, bound):
        if isinstance(term, Variable) and term.name not in bound:
            out.add(term)
        elif isinstance(term, SmtNode):
            for a in term.args:
                term_vars(a, bound)

    def walk(f, bound: frozenset):
        if isinstance(f, SmtAtom):
            term_vars(f.term, bound)
        elif isinstance(f, PredicateAtom):
            for a in f.args:
                term_vars(a, bound)
        elif isinstance(f, (ForallTree, ExistsTree)):
            if isinstance(f.container, Variable) and f.container.name not in bound:
                out.add(f.container)
            inner = bound | {f.var.name}
            if f.mexpr is not None:
                inner = inner | set(f.mexpr.binder_names())
            walk(f.body, inner)
        elif isinstance(f, ExistsInt):
            walk(f.body, bound | {f.var.name})
        elif isinstance(f, (Conj, Disj)):
            for p in f.parts:
                walk(p, bound)
        elif isinstance(f, Neg):
            walk(f.body, bound)

    walk(formula, frozenset())
    return out


# --------------------------------------------------------------------------
# Normalization


def negate(formula: Formula) -> Formula:
    """Negation-normal form of ``not formula``."""
    if isinstance(formula, Neg):
        return to_nnf(formula.body)
    if isinstance(formula, Conj):
        return Disj(tuple(negate(p) for p in formula.parts))
    if isinstance(formula, Disj):
        return Conj(tuple(negate(p) for p in formula.parts))
    if isinstance(formula, ForallTree):
        return ExistsTree(formula.var, formula.mexpr, formula.container, negate(formula.body))
    if isinstance(formula, ExistsTree):
        return ForallTree(formula.var, formula.mexpr, formula.container, negate(formula.body))
    if isinstance(formula, ExistsInt):
        raise FormulaError("cannot negate 'exists int'")
    if isinstance(formula, SmtAtom):
        term = formula.term
        if term.op == "not":
            return SmtAtom(term.args[0])
        return SmtAtom(SmtNode("not", (term,)))
    if isinstance(formula, PredicateAtom):
        return PredicateAtom(formula.name, formula.args, not formula.negated)
    raise FormulaError(f"cannot negate {formula!r}")


def to_nnf(formula: Formula) -> Formula:
    if isinstance(formula, Neg):
        return negate(formula.body)
    if isinstance(formula, Conj):
        return Conj(tuple(to_nnf(p) for p in formula.parts))
    if isinstance(formula, Disj):
        return Disj(tuple(to_nnf(p) for p in formula.parts))
    if isinstance(formula, (ForallTree, ExistsTree)):
        return type(formula)(
            formula.var, formula.mexpr, formula.container, to_nnf(formula.body)
        )
    if isinstance(formula, ExistsInt):
        return ExistsInt(formula.var, to_nnf(formula.body))
    return formula


def establish_inv(formula: Formula) -> tuple[tuple[Formula, ...], ...]:
    """Normalize into disjunctive branches of conjunct sets.

    The result is a tuple of branches; each branch is a tuple of formulas to
    be interpreted as a conjunction.  The disjunction of the branches is
    equivalent to the input.  Each member formula is in negation normal form
    and free of top-level conjunction or disjunction (boolean structure inside
    quantifier bodies is untouched).
    """
    nnf = to_nnf(formula)

    def dnf(f) -> list[list[Formula]]:
        if isinstance(f, Conj):
            branches = [[]]
            for part in f.parts:
                grown = []
                for left in branches:
                    for right in dnf(part):
                        grown.append(left + right)
                        if len(grown) > MAX_DNF_BRANCHES:
                            raise FormulaError("normalization exceeds branch limit")
                branches = grown
            return branches
        if isinstance(f, Disj):
            branches = []
            for part in f.parts:
                branches.extend(dnf(part))
                if len(branches) > MAX_DNF_BRANCHES:
                    raise FormulaError("normalization exceeds branch limit")
            return branches
        return [[f]]

    return tuple(tuple(branch) for branch in dnf(nnf))


def satisfies_invariant(formula: Formula) -> bool:
    """True iff the formula may appear in a solver constraint set as-is."""
    if isinstance(formula, (Conj, Disj, Neg)):
        return False
    return True


def quantifier_metrics(formula: Formula) -> tuple[int, int]:
    """(number of existential quantifiers, maximal quantifier nesting depth)."""
    if isinstance(formula, (ForallTree, ExistsTree, ExistsInt)):
        inner_ex, inner_depth = quantifier_metrics(formula.body)
        is_ex = isinstance(formula, (ExistsTree, ExistsInt))
        return inner_ex + (1 if is_ex else 0), inner_depth + 1
    if isinstance(formula, (Conj, Disj)):
        pairs = [quantifier_metrics(p) for p in formula.parts]
        return sum(e for e, _ in pairs), max((d for _, d in pairs), default=0)
    if isinstance(formula, Neg):
        return quantifier_metrics(formula.body)
    return 0, 0
