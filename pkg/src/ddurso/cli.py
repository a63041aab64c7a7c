"""Command-line driver: validate cases, solve them, rank components and run benchmark grids.

Exit codes: 0 success, 1 invalid network or scenarios, 2 usage error,
3 unreadable or malformed case file, 4 enumeration cap refused,
5 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import time
from pathlib import Path

from . import cases as builtin
from .backend import SolverError
from .core import CapExceededError, DduConfig, ValidationError, validate_network, validate_scenarios
from .io import CaseFormatError, dumps_report, load_case, save_case

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_CAP = 4
EXIT_SOLVER = 5

log = logging.getLogger("ddurso")

BUILTIN_CASES = {"desk6": builtin.desk6, "ieee33": builtin.ieee33}


class UsageError(Exception):
    pass


def _load(path: str, normalize: bool = False):
    return load_case(path, normalize=normalize)


def _problems(case) -> list[str]:
    return validate_network(case.network) + validate_scenarios(case.network, case.scenarios)


def solve_case(case, engine: str, on_iteration=None):
    """Dispatch to one engine; returns a SolveReport."""
    from .baseline import run_basic
    from .oracle import solve_exhaustive
    from .pccg import run

    net, scen, cfg, alg = case.network, case.scenarios, case.ddu, case.algorithm
    if engine == "pccg":
        return run(net, scen, cfg, dataclasses.replace(alg, enhance=False), on_iteration)
    if engine == "pccg-enhanced":
        return run(net, scen, cfg, dataclasses.replace(alg, enhance=True), on_iteration)
    if engine == "basic-ccg":
        return run_basic(net, scen, cfg, alg, on_iteration)
    if engine == "oracle":
        return solve_exhaustive(net, scen, cfg)
    raise UsageError(f"unknown engine {engine!r}")


def apply_overrides(case, k_lines=None, k_dgs=None, max_hardened=None, budget=None, gap_tol=None, seed=None, threads=None):
    """Return the case with CLI overrides applied; hardening counts above |components| are clamped."""
    if max_hardened is not None and budget is not None:
        raise UsageError("--max-hardened and --budget are mutually exclusive")
    net = case.network
    ddu = case.ddu
    kl = ddu.k_lines if k_lines is None else k_lines
    kg = ddu.k_dgs if k_dgs is None else k_dgs
    if kl > net.n_line_comps or kg > net.n_dg_comps or kl < 0 or kg < 0:
        raise UsageError(f"damage limits must lie in [0, {net.n_line_comps}] x [0, {net.n_dg_comps}]")
    if budget is not None:
        ddu = DduConfig(kl, kg, budget=budget)
    else:
        mh = ddu.max_hardened if max_hardened is None else max_hardened
        if mh is not None and mh > net.n_comps:
            log.warning("max_hardened=%d exceeds the %d vulnerable components; clamped", mh, net.n_comps)
            mh = net.n_comps
        ddu = DduConfig(kl, kg, budget=ddu.budget if mh is None else None, max_hardened=mh)
    alg = case.algorithm
    changes = {k: v for k, v in (("gap_tol", gap_tol), ("seed", seed), ("threads", threads)) if v is not None}
    if changes:
        alg = dataclasses.replace(alg, **changes)
    return dataclasses.replace(case, ddu=ddu, algorithm=alg)


def format_report(report) -> str:
    lines = [
        f"engine        {report.engine}",
        f"termination   {report.termination}",
        f"iterations    {report.iterations}",
        f"objective     {report.gamma:.6f}",
        f"shedding      {100 * report.shedding_ratio:.2f}%",
        f"hardened      {', '.join(sorted(report.hardening.hardened())) or '-'}",
        f"worst case    {', '.join(sorted(report.worst_case.damaged())) or '-'}",
    ]
    return "\n".join(lines)


# -- subcommands ----------------------------------------------------------------


def cmd_validate(args) -> int:
    case = _load(args.path, normalize=args.normalize)
    problems = _problems(case)
    try:
        case.ddu.check_against(case.network)
    except ValidationError as exc:
        problems.append(str(exc))
    if problems:
        for p in problems:
            print(f"error: {p}")
        return EXIT_INVALID
    net = case.network
    print(
        f"ok: {net.name}: {len(net.nodes)} nodes, {len(net.lines)} lines, {len(net.dgs)} DGs, {len(net.ess)} ESS, "
        f"{net.n_comps} vulnerable components, {len(case.scenarios)} scenarios, T={net.n_periods}"
    )
    return EXIT_OK


def cmd_solve(args) -> int:
    case = _load(args.path, normalize=args.normalize)
    problems = _problems(case)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_INVALID
    case = apply_overrides(
        case, args.k_lines, args.k_dgs, args.max_hardened, args.budget, args.gap_tol, args.seed, args.threads
    )
    if args.dump_lp:
        Path(args.dump_lp).mkdir(parents=True, exist_ok=True)
        case = dataclasses.replace(case, algorithm=dataclasses.replace(case.algorithm, dump_dir=args.dump_lp))
    stream = None if args.quiet else (lambda rec: print(rec.line(), file=sys.stderr, flush=True))
    report = solve_case(case, args.engine, stream)
    print(format_report(report), file=sys.stderr)
    text = dumps_report(report, timings=args.timings, case_name=case.network.name)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_indices(args) -> int:
    from .recourse import resilience_indices

    case = _load(args.path, normalize=args.normalize)
    problems = _problems(case)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_INVALID
    ind = resilience_indices(case.network, case.scenarios)
    rows = sorted(ind.items(), key=lambda kv: (-kv[1], kv[0]))
    width = max((len(k) for k in ind), default=9)
    print(f"{'component':<{width}}  {'index':>14}")
    for name, val in rows:
        print(f"{name:<{width}}  {val:14.6f}")
    return EXIT_OK


def bench_rows(case, k_lines, budgets, engines, on_cell=None) -> list[dict]:
    rows = []
    for kl in k_lines:
        for ub in budgets:
            cell = apply_overrides(case, k_lines=kl, max_hardened=ub)
            row = {"k_lines": kl, "max_hardened": cell.ddu.max_hardened}
            for eng in engines:
                t0 = time.perf_counter()
                rep = solve_case(cell, eng)
                row[f"{eng}:obj"] = rep.gamma
                row[f"{eng}:ratio"] = rep.shedding_ratio
                row[f"{eng}:iters"] = rep.iterations
                row[f"{eng}:time"] = time.perf_counter() - t0
            rows.append(row)
            if on_cell:
                on_cell(row)
    return rows


def format_bench(rows, engines) -> str:
    head = f"{'k_L':>4} {'U':>4}" + "".join(f" | {e + ' OBJ':>22} {'N_itr':>6} {'time':>8}" for e in engines)
    out = [head, "-" * len(head)]
    for r in rows:
        line = f"{r['k_lines']:>4} {r['max_hardened']:>4}"
        for e in engines:
            line += f" | {r[e + ':obj']:>22.6f} {r[e + ':iters']:>6d} {r[e + ':time']:>7.1f}s"
        out.append(line)
    return "\n".join(out)


def cmd_bench(args) -> int:
    case = _load(args.path, normalize=args.normalize)
    problems = _problems(case)
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_INVALID
    if args.gap_tol is not None:
        case = apply_overrides(case, gap_tol=args.gap_tol)
    engines = args.engines
    rows = bench_rows(
        case, args.k_lines, args.max_hardened, engines, on_cell=lambda r: print(f"done k_L={r['k_lines']} U={r['max_hardened']}", file=sys.stderr)
    )
    print(format_bench(rows, engines))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["k_lines", "max_hardened"])
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def cmd_case(args) -> int:
    case = BUILTIN_CASES[args.name]()
    save_case(case, args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .core import ENGINES

    p = argparse.ArgumentParser(prog="ddurso", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def case_arg(sp):
        sp.add_argument("path", help="case file (JSON)")
        sp.add_argument("--normalize", action="store_true", help="rescale scenario probabilities to sum to one")

    v = sub.add_parser("validate", help="check a case file")
    case_arg(v)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", help="compute an optimal hardening plan")
    case_arg(s)
    s.add_argument("--engine", choices=ENGINES, default="pccg")
    s.add_argument("--k-lines", type=int)
    s.add_argument("--k-dgs", type=int)
    s.add_argument("--max-hardened", type=int, help="cardinality budget")
    s.add_argument("--budget", type=float, help="cost budget")
    s.add_argument("--gap-tol", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--output", "-o", help="write the JSON report here instead of stdout")
    s.add_argument("--timings", action="store_true", help="include wall-clock times in the report")
    s.add_argument("--dump-lp", metavar="DIR", help="write every master problem as an LP file")
    s.add_argument("--quiet", "-q", action="store_true", help="do not stream the iteration trace")
    s.set_defaults(func=cmd_solve)

    i = sub.add_parser("indices", help="resilience index of every vulnerable component")
    case_arg(i)
    i.set_defaults(func=cmd_indices)

    b = sub.add_parser("bench", help="run a (k_L, U) grid across engines")
    case_arg(b)
    b.add_argument("--k-lines", type=int, nargs="+", default=[4, 6, 8])
    b.add_argument("--max-hardened", type=int, nargs="+", default=[4, 6, 8])
    b.add_argument("--engines", nargs="+", choices=ENGINES, default=["pccg", "pccg-enhanced", "basic-ccg"])
    b.add_argument("--gap-tol", type=float)
    b.add_argument("--csv", help="also write the table as CSV")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("case", help="write a built-in case to a file")
    c.add_argument("name", choices=sorted(BUILTIN_CASES))
    c.add_argument("output")
    c.set_defaults(func=cmd_case)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CaseFormatError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FileNotFoundError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except CapExceededError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CAP
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
