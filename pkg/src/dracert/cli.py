"""Command-line entry point: ``dracert synthesize|verify|check|simulate|bench``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import benchmarks
from .grid import grid_to_problem, parse_grid
from .model import (POLICY_CLASSES, QUANTIFIERS, TASKS, ModelError, ProblemSpec,
                    format_distributional_policy, format_policy, parse_model, parse_policy)
from .pipeline import (EXIT_ERROR, EXIT_OK, EXIT_REJECTED, RunOutcome, RunReport,
                       format_csv, format_table, run_problem)
from .smt import SolverConfig, SolverError
from .symbolic import format_rational
from .validation import (CheckError, check_certificate, format_certificate, parse_certificate,
                         rank_trace, simulate)

log = logging.getLogger("dracert")


class UsageError(Exception):
    pass


# --- input loading --------------------------------------------------------------

def load_problem(args) -> ProblemSpec:
    """The problem named by ``--builtin`` or by a model/grid file, with the
    task, quantifier and policy-class flags applied."""
    task = getattr(args, "task", None) or "synthesize"
    if args.builtin:
        if args.input:
            raise UsageError("give either a model path or --builtin, not both")
        return benchmarks.builtin(args.builtin, task=task, quantifier=args.quant,
                                  policy_class=args.policy_class)
    if not args.input:
        raise UsageError("a model or grid path (or --builtin NAME) is required")
    path = Path(args.input)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    name = path.stem
    if any(line.strip().startswith("states:") for line in text.splitlines()):
        problem = parse_model(text, name=name)
        problem = problem.with_(policy_class=args.policy_class)
        if args.quant != "unit" and problem.quantifier == "unit":
            raise UsageError("the model file only gives a unit initial distribution")
    else:
        problem = grid_to_problem(parse_grid(text), quantifier=args.quant, name=name,
                                  policy_class=args.policy_class)
    return problem.with_(task="synthesize") if task == "synthesize" else problem


def load_policy(path: str, problem: ProblemSpec):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return parse_policy(text, problem.mdp)


def solver_config(args) -> SolverConfig:
    return SolverConfig(path=args.solver, timeout=args.timeout, seed=args.seed,
                        retries=args.retries)


def _out_dir(args, problem: ProblemSpec, command: str) -> Path:
    out = Path(args.out) if args.out else Path("dracert-runs") / f"{problem.name}-{command}"
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- artifacts --------------------------------------------------------------------

def write_artifacts(outcome: RunOutcome, out: Path, plots: bool = True) -> None:
    report, problem = outcome.report, outcome.problem
    if outcome.policy is not None and problem.task == "synthesize":
        fmt = format_policy if outcome.policy.is_memoryless else format_distributional_policy
        path = out / "policy.txt"
        path.write_text(fmt(outcome.policy, problem.mdp))
        report.artifacts["policy"] = str(path)
    if outcome.certificate is not None:
        path = out / "certificate.txt"
        path.write_text(format_certificate(outcome.certificate))
        report.artifacts["certificate"] = str(path)
    if outcome.init is not None and problem.quantifier == "existential":
        path = out / "init.txt"
        path.write_text("init: " + " ".join(format_rational(v) for v in outcome.init) + "\n")
        report.artifacts["init"] = str(path)
    path = out / "report.csv"
    path.write_text(format_csv([report]))
    report.artifacts["report"] = str(path)
    if plots and report.exit_code == EXIT_OK and outcome.certificate is not None:
        from .report import plot_rank, plot_trace
        mu0 = outcome.init or problem.initial_distributions()[0]
        sim = simulate(problem, outcome.policy, mu0, cert=outcome.certificate)
        report.artifacts["trace_plot"] = str(plot_trace(problem, sim.trace, out / "trace.png"))
        report.artifacts["rank_plot"] = str(
            plot_rank(outcome.certificate, sim.trace, out / "rank.png", problem.name))


def _print_report(report: RunReport) -> None:
    sys.stdout.write(format_table([report]))
    if report.message:
        stream = sys.stderr if report.exit_code else sys.stdout
        print(report.message, file=stream)
    for key, path in report.artifacts.items():
        print(f"{key}: {path}")


# --- commands ---------------------------------------------------------------------

def cmd_synthesize(args) -> int:
    if args.task == "verify":
        return cmd_verify(args)
    return _run_and_report(args, load_problem(args))


def cmd_verify(args) -> int:
    if args.policy:
        problem = load_problem(argparse.Namespace(**{**vars(args), "task": "synthesize"}))
        problem = problem.with_(task="verify", given_policy=load_policy(args.policy, problem))
    elif args.builtin:
        problem = load_problem(argparse.Namespace(**{**vars(args), "task": "verify"}))
    else:
        raise UsageError("verification needs --policy (or --builtin with its reference policy)")
    return _run_and_report(args, problem)


def _run_and_report(args, problem: ProblemSpec) -> int:
    out = _out_dir(args, problem, problem.task)
    outcome = run_problem(problem, solver_config(args), ninv=args.ninv, ninv_max=args.ninv_max,
                          handelman_k=args.handelman_k, check=not args.no_check,
                          dump_smt=args.dump_smt)
    if outcome.report.exit_code == EXIT_REJECTED:
        log.error("CHECKER REJECTED A SOLVER MODEL; this indicates a bug in the "
                  "pipeline.\n%s", outcome.report.message)
    write_artifacts(outcome, out, plots=not args.no_plots)
    _print_report(outcome.report)
    return outcome.report.exit_code


def cmd_check(args) -> int:
    problem = load_problem(argparse.Namespace(**{**vars(args), "task": "synthesize"}))
    policy = load_policy(args.policy, problem)
    cert = _load_certificate(args.cert, problem)
    init = _load_init(args.init, problem) if args.init else None
    try:
        result = check_certificate(problem, policy, cert, solver_config(args), init=init,
                                   samples=args.samples, rng_seed=args.seed or 0)
    except (CheckError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(result.summary())
    return EXIT_OK if result.passed else EXIT_REJECTED


def cmd_simulate(args) -> int:
    problem = load_problem(argparse.Namespace(**{**vars(args), "task": "synthesize"}))
    policy = load_policy(args.policy, problem)
    cert = _load_certificate(args.cert, problem) if args.cert else None
    if args.bound is None and cert is None:
        raise UsageError("simulate needs --bound or --cert")
    mu0 = _load_init(args.init, problem) if args.init else problem.initial_distributions()[0]
    verdict = simulate(problem, policy, mu0, bound=args.bound, cert=cert)
    if verdict.reached:
        print(f"reached target at step {verdict.index}")
    elif verdict.outcome == "safety-violated":
        where = "" if verdict.row is None else f" (safe row {verdict.row})"
        print(f"safety violated at step {verdict.index}{where}")
    else:
        print(f"target not reached within {verdict.steps} steps")
    if args.trace:
        for i, x in enumerate(verdict.trace):
            print(i, " ".join(format_rational(v) for v in x))
    if args.out:
        from .report import plot_rank, plot_trace
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        print("trace_plot:", plot_trace(problem, verdict.trace, out / "trace.png"))
        if cert is not None:
            print("rank_plot:", plot_rank(cert, verdict.trace, out / "rank.png", problem.name))
            ranks = rank_trace(cert, verdict.trace)
            print("rank:", " ".join(format_rational(v) for v in ranks))
    return EXIT_OK if verdict.reached else EXIT_REJECTED


def _load_certificate(path: str, problem: ProblemSpec):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return parse_certificate(text, problem.mdp.n)


def _load_init(path: str, problem: ProblemSpec):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    body = text.split(":", 1)[1] if ":" in text else text
    from .model import check_distribution
    from .symbolic import parse_rational
    return check_distribution([parse_rational(t) for t in body.split()], problem.mdp.n)


def bench_cases(only=None, tasks=("verify", "synthesize")) -> list[tuple[str, str]]:
    names = [n.lower() for n in only] if only else list(benchmarks.NAMES)
    unknown = [n for n in names if n not in benchmarks.NAMES]
    if unknown:
        raise UsageError(f"unknown benchmark(s): {', '.join(unknown)}")
    cases = []
    for name in names:
        for task in tasks:
            if task == "synthesize" and name in benchmarks.CHAINS:
                continue  # Markov chains have nothing to synthesize
            cases.append((name, task))
    return cases


def cmd_bench(args) -> int:
    cases = bench_cases(args.only, tuple(args.tasks.split(",")))
    config = solver_config(args)
    out = Path(args.out) if args.out else Path("dracert-runs") / "bench"
    out.mkdir(parents=True, exist_ok=True)

    def one(case) -> RunReport:
        name, task = case
        try:
            problem = benchmarks.builtin(name, task=task, quantifier=args.quant)
            outcome = run_problem(problem, config, ninv=args.ninv, ninv_max=args.ninv_max,
                                  handelman_k=args.handelman_k, check=not args.no_check)
            sub = out / f"{name}-{task}"
            sub.mkdir(exist_ok=True)
            write_artifacts(outcome, sub, plots=not args.no_plots)
            return outcome.report
        except Exception as exc:  # one bad row never aborts the suite
            log.exception("benchmark %s/%s failed", name, task)
            return RunReport(task, name, verdict="error", message=str(exc))

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        reports = list(pool.map(one, cases))
    table = format_table(reports)
    sys.stdout.write(table)
    (out / "bench.txt").write_text(table)
    (out / "bench.csv").write_text(format_csv(reports))
    if not args.no_plots:
        from .report import plot_bench
        plot_bench(reports, out / "bench.png")
    print(f"artifacts: {out}")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------------

def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", help="solver executable (default: $SOLVER_PATH or yices-smt2)")
    p.add_argument("--timeout", type=float, default=600.0, help="per-query budget in seconds")
    p.add_argument("--seed", type=int, default=None, help="solver random seed")
    p.add_argument("--retries", type=int, default=0, help="re-runs with seed+1 after a timeout")


def _problem_flags(p: argparse.ArgumentParser, with_input: bool = True) -> None:
    if with_input:
        p.add_argument("input", nargs="?", help="model file or grid file")
        p.add_argument("--builtin", metavar="NAME", choices=benchmarks.NAMES,
                       help="use a built-in benchmark")
    p.add_argument("--quant", choices=QUANTIFIERS, default="unit")
    p.add_argument("--policy-class", choices=POLICY_CLASSES, default="memoryless")


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ninv", type=int, default=1, help="invariant template size")
    p.add_argument("--ninv-max", type=int, default=None,
                   help="sweep template sizes ninv..ninv-max, stopping at the first sat")
    p.add_argument("--handelman-k", type=int, default=2)
    p.add_argument("--no-check", action="store_true", help="skip the independent checker")
    p.add_argument("--no-plots", action="store_true", help="do not render figures")
    p.add_argument("--out", help="run directory for artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dracert",
                                     description="Distributional reach-avoid certificates "
                                                 "for MDPs via template constraint solving.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="synthesize a policy and certificate")
    _problem_flags(p)
    _pipeline_flags(p)
    _solver_flags(p)
    p.add_argument("--task", choices=TASKS, default="synthesize")
    p.add_argument("--policy", help="policy file (for --task verify)")
    p.add_argument("--dump-smt", metavar="PATH", help="write the SMT query here")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", help="certify a fixed policy")
    _problem_flags(p)
    _pipeline_flags(p)
    _solver_flags(p)
    p.add_argument("--policy", help="policy file (default for --builtin: reference policy)")
    p.add_argument("--dump-smt", metavar="PATH", help="write the SMT query here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("check", help="independently check a policy and certificate")
    _problem_flags(p)
    _solver_flags(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--cert", required=True)
    p.add_argument("--init", help="initial distribution file (existential runs)")
    p.add_argument("--samples", type=int, default=10000,
                   help="sample points for conditions without an exact query")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="unroll the distribution stream exactly")
    _problem_flags(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--cert", help="certificate (sets the default step bound)")
    p.add_argument("--init", help="initial distribution file")
    p.add_argument("--bound", type=int, default=None, help="number of steps")
    p.add_argument("--trace", action="store_true", help="print every distribution")
    p.add_argument("--out", help="directory for figures")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run the built-in benchmark suite")
    _problem_flags(p, with_input=False)
    _pipeline_flags(p)
    _solver_flags(p)
    p.add_argument("--only", action="append", metavar="NAME",
                   help="restrict to this benchmark (repeatable)")
    p.add_argument("--tasks", default="verify,synthesize")
    p.add_argument("--jobs", type=int, default=1, help="benchmarks run concurrently")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if getattr(args, "ninv", 1) < 1:
            raise UsageError("--ninv must be at least 1")
        return args.func(args)
    except (UsageError, ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
