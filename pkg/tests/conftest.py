import shutil

import pytest

from dracert import benchmarks
from dracert.pipeline import run_problem
from dracert.smt import DEFAULT_SOLVER, SolverConfig

if shutil.which(DEFAULT_SOLVER) is None:
    pytest.exit(f"{DEFAULT_SOLVER} must be on PATH to run the tests", returncode=4)

CONFIG = SolverConfig(timeout=600)

_cache = {}


def artifacts(name: str, task: str = "synthesize"):
    """Run the pipeline once per (benchmark, task) and share the outcome."""
    key = (name, task)
    if key not in _cache:
        _cache[key] = run_problem(benchmarks.builtin(name, task=task), CONFIG)
    return _cache[key]


@pytest.fixture(scope="session")
def running():
    outcome = artifacts("running")
    assert outcome.report.verdict == "certified", outcome.report.message
    return outcome


# --- acceptance summary ---------------------------------------------------

CRITERIA = {
    1: "benchmark solvability",
    2: "query-size sanity",
    3: "certified soundness",
    4: "Farkas equisatisfiability",
    5: "Handelman spot checks",
    6: "model fidelity",
    7: "mutation rejection",
}

_outcomes: dict[int, list[tuple[str, bool]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes.setdefault(marker.args[0], []).append((item.name, report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        results = _outcomes.get(number)
        if not results:
            terminalreporter.line(f"criterion {number} ({title}): NOT RUN")
            continue
        failed = [name for name, ok in results if not ok]
        verdict = "FAIL" if failed else "PASS"
        line = f"criterion {number} ({title}): {verdict} ({len(results) - len(failed)}/{len(results)} checks)"
        if failed:
            line += " failed: " + ", ".join(failed)
        terminalreporter.line(line)
