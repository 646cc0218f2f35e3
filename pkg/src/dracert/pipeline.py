"""End-to-end synthesis and verification runs with timing and reporting."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

from .certgen import collect_constraints, instantiate_templates
from .model import Certificate, ConcretePolicy, Distribution, ProblemSpec
from .qelim import translate_system
from .smt import QueryStats, SolverConfig, SolverError, emit, extract, run
from .validation import CheckError, CheckReport, check_certificate

EXIT_OK, EXIT_REJECTED, EXIT_UNSAT, EXIT_TIMEOUT, EXIT_ERROR = 0, 1, 2, 3, 4

VERDICT_EXIT = {
    "certified": EXIT_OK,
    "unchecked": EXIT_OK,
    "rejected": EXIT_REJECTED,
    "unsat": EXIT_UNSAT,
    "timeout": EXIT_TIMEOUT,
    "error": EXIT_ERROR,
}


@dataclass
class RunReport:
    command: str
    model: str
    verdict: str = "error"
    template_size: int | None = None
    timings: dict[str, float] = field(default_factory=dict)  # milliseconds
    stats: QueryStats | None = None
    artifacts: dict[str, str] = field(default_factory=dict)
    message: str = ""
    states: int = 0
    actions: int = 0

    @property
    def exit_code(self) -> int:
        return VERDICT_EXIT[self.verdict]

    COLUMNS = ("model", "command", "states", "actions", "verdict", "ninv", "construct_ms",
               "solve_ms", "check_ms", "vars", "constraints", "ops")

    def row(self) -> dict[str, str]:
        s = self.stats
        return {
            "model": self.model,
            "command": self.command,
            "states": str(self.states),
            "actions": str(self.actions),
            "verdict": "T/O" if self.verdict == "timeout" else self.verdict,
            "ninv": "" if self.template_size is None else str(self.template_size),
            "construct_ms": _ms(self.timings.get("construct")),
            "solve_ms": _ms(self.timings.get("solve")),
            "check_ms": _ms(self.timings.get("check")),
            "vars": "" if s is None else str(s.variables),
            "constraints": "" if s is None else str(s.constraints),
            "ops": "" if s is None else str(s.operations),
        }


def _ms(v):
    return "" if v is None else f"{v:.0f}"


@dataclass
class RunOutcome:
    report: RunReport
    problem: ProblemSpec
    policy: ConcretePolicy | None = None
    certificate: Certificate | None = None
    init: Distribution | None = None
    check: CheckReport | None = None


def run_problem(problem: ProblemSpec, config: SolverConfig, ninv: int = 1,
                ninv_max: int | None = None, handelman_k: int = 2, check: bool = True,
                dump_smt: str | Path | None = None, command: str | None = None) -> RunOutcome:
    """Synthesize (or, for verification tasks, only certify) with template
    sizes ``ninv .. ninv_max``, stopping at the first satisfiable size."""
    last = ninv if ninv_max is None else max(ninv, ninv_max)
    report = RunReport(command or problem.task, problem.name, states=problem.mdp.n,
                       actions=problem.mdp.num_actions)
    outcome = RunOutcome(report, problem)
    timings = report.timings
    for size in range(ninv, last + 1):
        report.template_size = size
        start = time.perf_counter()
        templates = instantiate_templates(problem, size)
        system = collect_constraints(problem, templates)
        translated = translate_system(system, handelman_k)
        text, stats = emit(translated)
        timings["construct"] = timings.get("construct", 0.0) + _since(start)
        report.stats = stats
        if dump_smt:
            path = Path(dump_smt)
            if last > ninv:
                path = path.with_name(f"{path.stem}.ninv{size}{path.suffix or '.smt2'}")
            path.write_text(text)
            report.artifacts[f"smt{size}" if last > ninv else "smt"] = str(path)
        start = time.perf_counter()
        try:
            verdict = run(text, config)
        except SolverError as exc:
            timings["solve"] = timings.get("solve", 0.0) + _since(start)
            report.verdict, report.message = "error", str(exc)
            return outcome
        timings["solve"] = timings.get("solve", 0.0) + _since(start)
        if verdict.status == "unsat":
            report.verdict = "unsat"
            report.message = f"no certificate with template size {size}"
            continue
        if verdict.status == "timeout":
            report.verdict, report.message = "timeout", f"solver timed out after {config.timeout}s"
            return outcome
        if verdict.status != "sat":
            report.verdict = "error"
            report.message = "solver error: " + verdict.text.strip()[:500]
            return outcome
        try:
            init, policy, cert = extract(verdict.model, templates)
        except SolverError as exc:
            report.verdict, report.message = "error", str(exc)
            return outcome
        outcome.policy, outcome.certificate, outcome.init = policy, cert, init
        if not check:
            report.verdict = "unchecked"
            return outcome
        start = time.perf_counter()
        try:
            result = check_certificate(problem, policy, cert, config, init=init)
        except (CheckError, SolverError) as exc:
            timings["check"] = _since(start)
            report.verdict, report.message = "error", f"checker failed: {exc}"
            return outcome
        timings["check"] = _since(start)
        outcome.check = result
        if result.passed:
            report.verdict = "certified"
            if not result.complete:
                report.message = "some conditions were only sampled"
        else:
            report.verdict = "rejected"
            report.message = "checker rejected the solver model:\n" + result.summary()
        return outcome
    return outcome


def _since(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


def format_table(reports: list[RunReport]) -> str:
    """Aligned text table with a stable column order."""
    rows = [dict(zip(RunReport.COLUMNS, RunReport.COLUMNS))] + [r.row() for r in reports]
    widths = {c: max(len(row[c]) for row in rows) for c in RunReport.COLUMNS}
    lines = ["  ".join(row[c].ljust(widths[c]) for c in RunReport.COLUMNS).rstrip()
             for row in rows]
    return "\n".join(lines) + "\n"


def format_csv(reports: list[RunReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RunReport.COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()
