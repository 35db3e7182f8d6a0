"""Command-line front end: ``solve``, ``compare``, ``convergence``, ``cputable``."""
from __future__ import annotations

import argparse
import io
import sys
from typing import Optional, Sequence

from .experiments import (DEFAULT_LEVELS, SWEEPS, _encode, compare_methods, convergence_study,
                          cpu_table, resolve_problem, solve_case, write_csv)
from .greedy import SolverConfig
from .problems import CASES, load_problem

EXIT_OK, EXIT_USAGE, EXIT_STAGNATED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    x = float(text)
    if not 0 < x < 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return x


def _common(p, methods=False):
    p.add_argument("--case", choices=sorted(CASES))
    p.add_argument("--problem-file", help="JSON problem description instead of --case")
    if methods:
        p.add_argument("--method", type=int, choices=[1, 2, 3], default=1)
    p.add_argument("--nh-exp", type=int, help="mesh with 2^L cells per side")
    p.add_argument("--nk-exp", type=int, help="2^K time elements")
    p.add_argument("--eps-greedy", type=_positive_float, default=1e-5)
    p.add_argument("--eps-alt", type=_positive_float, default=5e-2)
    p.add_argument("--max-rank", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pg-refined", action="store_true",
                   help="Method 2 with a twice finer piecewise-constant test mesh")
    p.add_argument("--out", help="output path (stdout if omitted)")
    p.add_argument("--format", choices=["json", "csv"], default="json")


def build_parser():
    parser = _Parser(prog="spacetime-pgd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("solve", help="run one greedy solve"), methods=True)
    _common(sub.add_parser("compare", help="residuals r_i^m of all methods in the Method-1 system"))
    conv = sub.add_parser("convergence", help="errors along a refinement sweep")
    _common(conv)
    conv.add_argument("--axis", choices=["space", "time"], required=True)
    conv.add_argument("--methods", type=int, nargs="+", choices=[1, 2, 3], default=[1, 2, 3])
    conv.add_argument("--levels", type=int, nargs="+", help="sweep levels (default: standard ranges)")
    conv.add_argument("--fit-last", type=int, help="fit slopes on the finest N levels only")
    cpu = sub.add_parser("cputable", help="median wall-time ratios to Method 1")
    _common(cpu)
    cpu.add_argument("--cases", nargs="+", choices=sorted(CASES))
    cpu.add_argument("--repetitions", type=int, default=21)
    return parser


def _config(args):
    return SolverConfig(eps_greedy=args.eps_greedy, eps_alt=args.eps_alt,
                        max_rank=args.max_rank, seed=args.seed)


def _problem(args, parser):
    if (args.case is None) == (args.problem_file is None):
        parser.error("give exactly one of --case or --problem-file")
    if args.problem_file:
        return load_problem(args.problem_file)
    return resolve_problem(args.case)


def _levels(args, problem, parser):
    default = DEFAULT_LEVELS.get(problem.name)
    nh = args.nh_exp if args.nh_exp is not None else (default[0] if default else None)
    nk = args.nk_exp if args.nk_exp is not None else (default[1] if default else None)
    if nh is None or nk is None:
        parser.error("--nh-exp and --nk-exp are required for custom problems")
    if nh < 1 or nk < 0:
        parser.error("--nh-exp must be >= 1 and --nk-exp >= 0")
    return nh, nk


def _emit(text, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _table(rows, fmt):
    if fmt == "csv":
        buf = io.StringIO()
        write_csv(buf, rows)
        return buf.getvalue()
    return "".join(_encode(r) + "\n" for r in rows)


def cmd_solve(args, parser):
    problem = _problem(args, parser)
    nh, nk = _levels(args, problem, parser)
    run = solve_case(problem, args.method, nh, nk, _config(args),
                     pg_refine=2 if args.pg_refined else 1)
    rec = run.record
    if args.out:
        rec.write(args.out, args.format)
    elif args.format == "csv":
        _emit(_table(rec.rows, "csv"), None)
    else:
        _emit("\n".join(rec.to_lines()) + "\n", None)
    print(f"{rec.problem} method {rec.method}: {rec.status} after {rec.rank} iterations, "
          f"{rec.space_solves} space solves, {rec.wall_time:.2f} s", file=sys.stderr)
    return EXIT_OK if rec.status == "converged" else EXIT_STAGNATED


def cmd_compare(args, parser):
    problem = _problem(args, parser)
    nh, nk = _levels(args, problem, parser)
    rec, _ = compare_methods(problem, nh, nk, _config(args),
                             pg_refine=2 if args.pg_refined else 1)
    if rec.violations:
        print(f"warning: r_1 > min(r_2, r_3) at iterations {rec.violations}", file=sys.stderr)
    if args.format == "csv":
        text = _table(rec.rows(), "csv")
    else:
        text = _encode({"problem": rec.problem, "nh_exp": nh, "nk_exp": nk,
                        "curves": {str(k): v for k, v in rec.curves.items()},
                        "iterations": {str(k): v for k, v in rec.iterations.items()},
                        "space_solves": {str(k): v for k, v in rec.space_solves.items()},
                        "violations": rec.violations}) + "\n"
    _emit(text, args.out)
    finals = ", ".join(f"r{k} = {v:.2e}" for k, v in rec.final.items())
    print(f"final residuals: {finals}", file=sys.stderr)
    return EXIT_OK


def cmd_convergence(args, parser):
    problem = _problem(args, parser)
    levels = args.levels or SWEEPS.get((problem.name, args.axis))
    if not levels:
        parser.error("--levels is required for custom problems")
    n_fit = len(levels) if args.fit_last is None else min(args.fit_last, len(levels))
    if n_fit < 3:
        parser.error("a convergence sweep needs at least three levels to fit a slope")
    ref = _levels(args, problem, parser)
    rows, slopes = [], []
    for m in args.methods:
        res = convergence_study(problem, args.axis, m, levels, ref, _config(args), args.fit_last)
        rows.extend(res.rows())
        slopes.append({"method": m, "axis": args.axis, "fit_levels": res.fit_levels,
                       "slope_l2h1": res.slope_l2h1, "slope_h1hm1": res.slope_h1hm1})
        print(f"method {m}: slope L2(H1) {res.slope_l2h1:.2f}, H1(H-1) {res.slope_h1hm1:.2f}",
              file=sys.stderr)
    if args.format == "csv":
        text = _table(rows, "csv")
    else:
        text = _table(rows, "json") + _table([{"slopes": slopes}], "json")
    _emit(text, args.out)
    return EXIT_OK


def cmd_cputable(args, parser):
    cases = args.cases or ([args.case] if args.case else sorted(DEFAULT_LEVELS))
    if args.repetitions < 1:
        parser.error("--repetitions must be positive")
    rows = []
    for case in cases:
        problem = resolve_problem(case)
        nh, nk = DEFAULT_LEVELS[case]
        nh = args.nh_exp if args.nh_exp is not None else nh
        nk = args.nk_exp if args.nk_exp is not None else nk
        table = cpu_table(problem, nh, nk, repetitions=args.repetitions, base_seed=args.seed,
                          cfg=_config(args))
        for m, entry in table.items():
            rows.append({"case": case, "method": m, **entry})
    _emit(_table(rows, args.format), args.out)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "compare": cmd_compare, "convergence": cmd_convergence,
            "cputable": cmd_cputable}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, parser)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
