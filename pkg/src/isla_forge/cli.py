"""Command-line interface: generate, validate, and fuzz against specs.

A spec is a grammar plus one constraint, given either as separate files
(``--grammar``/``--constraint``), as a directory containing ``grammar.bnf``
and ``constraint.isla`` (``--spec DIR``), or as the name of a bundled spec
(``--spec csv``).  The seed falls back to the ISLA_FORGE_SEED environment
variable.

Exit codes: 0 success / constraint holds; 1 constraint violated (check);
2 usage or spec errors, or unparseable input (check); 3 solve timed out
before the first output.
"""

from __future__ import annotations

import argparse
import json
import os
import shlex
import subprocess
import sys
import tempfile
from pathlib import Path

from .corpus import SPEC_NAMES, load_spec, load_spec_dir
from .evaluator import EvalError, evaluate, explain_failure
from .formulas import FormulaError, parse_formula
from .grammar import GrammarError, parse_grammar
from .matching import MatchError
from .parsing import ParseFailure, parse_input
from .predicates import standard_registry
from .cost import DEFAULT_WEIGHTS
from .solver import Solver, SolverConfig, SolverError

__all__ = ["main", "cmd_solve", "cmd_check", "cmd_fuzz"]

SPEC_ERRORS = (GrammarError, FormulaError, MatchError, FileNotFoundError, KeyError, ValueError)


def _env_seed() -> int:
    raw = os.environ.get("ISLA_FORGE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        return 0


def _add_spec_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--grammar", metavar="PATH", help="grammar file")
    parser.add_argument("--constraint", metavar="PATH", help="constraint file")
    parser.add_argument(
        "--spec",
        metavar="DIR|NAME",
        help=f"spec directory (grammar.bnf + constraint.isla) or one of: {', '.join(SPEC_NAMES)}",
    )


def _load_from_args(args):
    if args.spec:
        if args.grammar or args.constraint:
            raise ValueError("--spec conflicts with --grammar/--constraint")
        if args.spec in SPEC_NAMES:
            return load_spec(args.spec)
        return load_spec_dir(args.spec)
    if not args.grammar or not args.constraint:
        raise ValueError("need --spec or both --grammar and --constraint")
    registry = standard_registry()
    grammar = parse_grammar(Path(args.grammar).read_text())
    formula = parse_formula(
        Path(args.constraint).read_text(), grammar, registry.signatures
    )

    class _Loaded:
        pass

    loaded = _Loaded()
    loaded.grammar = grammar
    loaded.formula = formula
    loaded.registry = registry
    return loaded


def _parse_weights(raw: str) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 5:
        raise ValueError("--weights needs five comma-separated numbers")
    return tuple(float(p) for p in parts)


def cmd_solve(args) -> int:
    if args.n < 1:
        print("error: -n must be >= 1", file=sys.stderr)
        return 2
    try:
        spec = _load_from_args(args)
        weights = _parse_weights(args.weights) if args.weights else DEFAULT_WEIGHTS
        config = SolverConfig(
            max_outputs=args.n,
            max_depth=args.max_depth,
            weights=weights,
            seed=args.seed,
            timeout_s=args.timeout_s,
            trace=bool(args.trace),
        )
        solver = Solver(spec.grammar, spec.formula, config, spec.registry)
    except SPEC_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(args.n)))
    produced = 0
    try:
        for i, text in enumerate(solver.run()):
            if out_dir is None:
                sys.stdout.write(text + "\n")
            else:
                (out_dir / f"{i:0{width}d}.txt").write_text(text)
            produced += 1
    except SolverError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if args.trace:
        Path(args.trace).write_text(solver.trace_dot())
    if out_dir is not None:
        print(f"wrote {produced} solutions to {out_dir}", file=sys.stderr)
    if produced == 0 and solver.stats.get("timed_out"):
        return 3
    return 0


def cmd_check(args) -> int:
    try:
        spec = _load_from_args(args)
    except SPEC_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        if args.input == "-":
            text = sys.stdin.read()
        else:
            text = Path(args.input).read_text()
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        tree = parse_input(spec.grammar, text)
    except ParseFailure as err:
        print(f"parse failure: {err}", file=sys.stderr)
        return 2
    try:
        valid = evaluate(spec.formula, tree, spec.grammar, spec.registry)
    except EvalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if valid:
        return 0
    if args.explain:
        detail = explain_failure(spec.formula, tree, spec.grammar, spec.registry)
        print(f"constraint violated: {detail}", file=sys.stderr)
    return 1


def cmd_fuzz(args) -> int:
    if not args.target:
        print("error: --target is required", file=sys.stderr)
        return 2
    try:
        spec = _load_from_args(args)
        config = SolverConfig(
            max_outputs=args.n,
            seed=args.seed,
            timeout_s=args.timeout_s,
        )
        solver = Solver(spec.grammar, spec.formula, config, spec.registry)
    except SPEC_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    target = shlex.split(args.target)
    report = open(args.report, "w") if args.report else sys.stdout
    out_dir = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="isla-forge-fuzz-"))
    out_dir.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(args.n)))
    try:
        for i, text in enumerate(solver.run()):
            path = out_dir / f"{i:0{width}d}.txt"
            path.write_text(text)
            if any("{}" in part for part in target):
                cmd = [part.replace("{}", str(path)) for part in target]
                stdin_data = None
            else:
                cmd = target
                stdin_data = text.encode()
            try:
                proc = subprocess.run(
                    cmd, input=stdin_data, capture_output=True, timeout=30
                )
                exit_code = proc.returncode
            except FileNotFoundError:
                print(f"error: target not found: {cmd[0]}", file=sys.stderr)
                return 2
            except subprocess.TimeoutExpired:
                exit_code = None
            record = {
                "input": str(path),
                "exit": exit_code,
                "crash": exit_code is not None and exit_code < 0,
            }
            report.write(json.dumps(record) + "\n")
    finally:
        if args.report:
            report.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isla-forge",
        description="Generate and validate structured inputs under tree constraints.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="generate satisfying inputs")
    _add_spec_arguments(solve)
    solve.add_argument("-n", type=int, default=10, help="number of solutions")
    solve.add_argument("--out", metavar="DIR", help="write one file per solution")
    solve.add_argument("--seed", type=int, default=_env_seed())
    solve.add_argument("--max-depth", type=int, default=None)
    solve.add_argument("--timeout-s", type=float, default=None)
    solve.add_argument("--weights", metavar="A,B,C,D,E", default=None)
    solve.add_argument("--trace", metavar="PATH", help="write the transition DAG as DOT")
    solve.set_defaults(handler=cmd_solve)

    check = sub.add_parser("check", help="validate an input against a spec")
    _add_spec_arguments(check)
    check.add_argument("input", metavar="INPUT", help="input file, or - for stdin")
    check.add_argument("--explain", action="store_true", help="describe the failing part")
    check.set_defaults(handler=cmd_check)

    fuzz = sub.add_parser("fuzz", help="feed generated inputs to a target command")
    _add_spec_arguments(fuzz)
    fuzz.add_argument("--target", metavar="CMD", help="command; {} substitutes the input path")
    fuzz.add_argument("-n", type=int, default=10)
    fuzz.add_argument("--out", metavar="DIR", help="directory for generated inputs")
    fuzz.add_argument("--report", metavar="PATH", help="line-delimited JSON report")
    fuzz.add_argument("--seed", type=int, default=_env_seed())
    fuzz.add_argument("--timeout-s", type=float, default=None)
    fuzz.set_defaults(handler=cmd_fuzz)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
