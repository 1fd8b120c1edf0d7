"""Command line: replay or generate traces.

Exit status: 0 when every oracle check passed, 1 on a mismatch or invariant
violation, 2 on usage, parse or configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction

from . import harness
from .machine import UWRAMError

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE = 0, 1, 2
SEED_ENV = "UWRAM_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fraction(text: str) -> Fraction:
    try:
        eps = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a fraction: {text!r}") from None
    if not 0 < eps <= 1:
        raise argparse.ArgumentTypeError("epsilon must lie in (0, 1]")
    return eps


def _seed(text: str) -> int:
    try:
        seed = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= seed < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be a u64")
    return seed


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uwram", description="Ultra-wide word RAM structures: trace replay with oracle checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="replay a trace against a structure and the oracle")
    run.add_argument("--structure", required=True, choices=harness.STRUCTURES)
    run.add_argument("--w", type=int, required=True, choices=(8, 16, 32, 64))
    run.add_argument("--epsilon", type=_fraction, default=Fraction(1), help="p/q in (0, 1], default 1")
    run.add_argument("--seed", type=_seed, default=None, help=f"u64; default from ${SEED_ENV}")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", help="trace file ('-' for stdin)")
    src.add_argument("--gen", choices=harness.PROFILES, help="generate a trace with this profile")
    run.add_argument("--n", type=int, default=None, help="ops to generate (with --gen)")
    run.add_argument("--max-live", type=int, default=None, help="cap on generated live keys")
    run.add_argument("--validate", action="store_true", help="check preconditions and invariants")
    run.add_argument("--report", help="write the report here instead of stdout")
    run.add_argument("--format", choices=("text", "json-lines"), default="text")

    gen = sub.add_parser("gen", help="print a generated trace")
    gen.add_argument("--w", type=int, required=True, choices=(8, 16, 32, 64))
    gen.add_argument("--profile", choices=harness.PROFILES, default="uniform")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=_seed, default=None)
    gen.add_argument("--K", type=int, default=None, help="emit member/pmember queries for K lanes")
    gen.add_argument("--max-live", type=int, default=None)

    sub.add_parser("selftest", help="check that the harness catches a broken structure")
    return p


def _resolve_seed(args, parser) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        parser.error(f"--seed is required (or set {SEED_ENV})")
    try:
        return _seed(env)
    except argparse.ArgumentTypeError as e:
        parser.error(f"{SEED_ENV}: {e}")


def _cmd_run(args, parser) -> int:
    seed = _resolve_seed(args, parser)
    if args.gen:
        if args.n is None or args.n < 0:
            parser.error("--gen needs --n >= 0")
        K = harness.machine_for(args.structure, args.w, args.epsilon).K if args.structure == "pdict" else None
        trace = harness.gen_trace(args.w, args.gen, args.n, seed, K=K, max_live=args.max_live)
    else:
        try:
            if args.trace == "-":
                text = sys.stdin.read()
            else:
                with open(args.trace) as f:
                    text = f.read()
        except OSError as e:
            print(f"uwram: cannot read trace: {e}", file=sys.stderr)
            return EXIT_USAGE
        trace = harness.parse_trace(text)
    report = harness.run_trace(args.structure, trace, w=args.w, epsilon=args.epsilon,
                               seed=seed, validate=args.validate)
    out = report.to_text() if args.format == "text" else report.to_json_lines()
    if args.report:
        with open(args.report, "w") as f:
            f.write(out)
    else:
        sys.stdout.write(out)
    for mm in report.mismatches[:1]:
        print(f"uwram: mismatch at op {mm.index} ({mm.op}): expected {mm.expected}, got {mm.got}",
              file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_MISMATCH


def _cmd_gen(args, parser) -> int:
    seed = _resolve_seed(args, parser)
    trace = harness.gen_trace(args.w, args.profile, args.n, seed, K=args.K, max_live=args.max_live)
    sys.stdout.write(harness.format_trace(trace))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, parser)
        if args.command == "gen":
            return _cmd_gen(args, parser)
        caught = harness.self_test()
        print("selftest:", "PASS (stub divergence detected)" if caught else "FAIL")
        return EXIT_OK if caught else EXIT_MISMATCH
    except UWRAMError as e:
        # usage, parse and configuration errors
        print(f"uwram: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
