"""SMT-LIB2 emission, solver process management and model extraction."""

from __future__ import annotations

import logging
import os
import re
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .certgen import GroundConstraint, Templates
from .model import AffineForm, AffineRow, AffineSetSpec, Certificate, ConcretePolicy
from .qelim import TranslatedSystem
from .symbolic import Poly, format_rational

DEFAULT_SOLVER = "yices-smt2"
# model-based GCD projection makes yices' nonlinear engine far more reliable
# on the bilinear systems produced here
YICES_ARGS = ("--mcsat-nra-mgcd",)
# MCSat's runtime swings by orders of magnitude with declaration order alone,
# so a query is raced across these orders in growing time slices
DECLARATION_ORDERS = ("policy-first", "lexicographic")
FIRST_SLICE = 10.0

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class UnsupportedModelError(SolverError):
    pass


class ExtractionError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    path: str | None = None
    timeout: float = 600.0
    logic: str | None = None
    seed: int | None = None
    retries: int = 0
    args: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError(f"solver timeout must be positive, got {self.timeout}")
        if self.retries < 0:
            raise ValueError("retries must be nonnegative")

    @property
    def executable(self) -> str:
        return self.path or os.environ.get("SOLVER_PATH") or DEFAULT_SOLVER

    @property
    def arguments(self) -> tuple[str, ...]:
        if self.args is not None:
            return tuple(self.args)
        if os.path.basename(self.executable).startswith("yices"):
            return YICES_ARGS
        return ()


@dataclass
class SolverVerdict:
    status: str  # sat | unsat | timeout | error
    model: dict[str, Fraction] = field(default_factory=dict)
    text: str = ""
    elapsed: float = 0.0
    attempts: int = 1

    @property
    def sat(self) -> bool:
        return self.status == "sat"


@dataclass(frozen=True)
class QueryStats:
    variables: int
    constraints: int
    operations: int

    def as_tuple(self):
        return (self.variables, self.constraints, self.operations)


# --- emission -------------------------------------------------------------

def literal(value) -> str:
    value = Fraction(value)
    num = str(abs(value.numerator))
    if value.denominator != 1:
        num = f"(/ {num} {value.denominator})"
    return f"(- {num})" if value < 0 else num


def _sym(name: str) -> str:
    return name if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.]*", name) else f"|{name}|"


def term(p: Poly, atom=_sym) -> str:
    parts = []
    for mono, coef in p.items():
        factors = [atom(v) for v in mono]
        if coef != 1 or not factors:
            factors.insert(0, literal(coef))
        parts.append(factors[0] if len(factors) == 1 else f"(* {' '.join(factors)})")
    if not parts:
        return "0"
    return parts[0] if len(parts) == 1 else f"(+ {' '.join(parts)})"


def constraint_term(c: GroundConstraint) -> str:
    return f"({c.relation} {term(c.poly)} 0)"


def _declaration_key(name: str) -> tuple[int, str]:
    return (0 if name.startswith("p_") else 1, name)


def emit(system: TranslatedSystem | Iterable[GroundConstraint],
         names: Iterable[str] | None = None, logic: str | None = None) -> tuple[str, QueryStats]:
    """Deterministic SMT-LIB2 text for a purely existential system."""
    if isinstance(system, TranslatedSystem):
        constraints = system.constraints
        names = [u.name for u in system.unknowns]
    else:
        constraints = list(system)
        if names is None:
            seen: dict[str, None] = {}
            for c in constraints:
                for v in sorted(c.poly.unknowns()):
                    seen.setdefault(v, None)
            names = list(seen)
        names = list(names)
    if logic is None:
        logic = "QF_NRA" if any(c.poly.degree > 1 for c in constraints) else "QF_LRA"
    lines = [f"(set-logic {logic})"]
    # Yices' MCSat search is very sensitive to declaration order; putting the
    # policy variables ahead of the invariant coefficients proved the most robust
    lines += [f"(declare-const {_sym(v)} Real)" for v in sorted(names, key=_declaration_key)]
    asserts = [constraint_term(c) for c in constraints]
    lines += [f"(assert {a})" for a in asserts]
    lines += ["(check-sat)", "(get-model)"]
    ops = sum(count_operations(a) for a in asserts)
    return "\n".join(lines) + "\n", QueryStats(len(names), len(asserts), ops)


# --- s-expressions ----------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\()|(\))|(\|[^|]*\|)|(\"(?:[^\"]|\"\")*\")|([^\s()|\"]+))")


def parse_sexprs(text: str) -> list:
    stack: list[list] = [[]]
    pos = 0
    while True:
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            break
        pos = m.end()
        if m.group(1):
            stack.append([])
        elif m.group(2):
            if len(stack) == 1:
                raise SolverError("unbalanced parenthesis in solver output")
            done = stack.pop()
            stack[-1].append(done)
        else:
            tok = m.group(3) or m.group(4) or m.group(5)
            if tok.startswith("|"):
                tok = tok[1:-1]
            stack[-1].append(tok)
    if text[pos:].strip():
        raise SolverError(f"cannot tokenize solver output near {text[pos:pos + 40]!r}")
    if len(stack) != 1:
        raise SolverError("unbalanced parenthesis in solver output")
    return stack[0]


def count_operations(text: str) -> int:
    """Number of AST nodes in SMT-LIB2 terms: every application and every
    leaf counts once."""
    return sum(_nodes(e) for e in parse_sexprs(text))


def _nodes(expr) -> int:
    if isinstance(expr, list):
        # the operator symbol is part of the application node
        return 1 + sum(_nodes(e) for e in expr[1:])
    return 1


def recount(text: str) -> QueryStats:
    """Independent stats recomputed from emitted SMT-LIB2 text."""
    variables = constraints = ops = 0
    for expr in parse_sexprs(text):
        if not isinstance(expr, list) or not expr:
            continue
        if expr[0] in ("declare-const", "declare-fun"):
            variables += 1
        elif expr[0] == "assert":
            constraints += 1
            ops += _nodes(expr[1])
    return QueryStats(variables, constraints, ops)


_DECIMAL = re.compile(r"^(-?\d+)(?:\.(\d+))?$")


def value_of(expr) -> Fraction:
    """Exact rational value of a model term; anything else is rejected."""
    if isinstance(expr, str):
        m = _DECIMAL.match(expr)
        if not m:
            raise UnsupportedModelError(f"non-rational model value {expr!r}")
        if m.group(2) and set(m.group(2)) != {"0"}:
            raise UnsupportedModelError(
                f"model value {expr} is a decimal approximation (likely an algebraic number); "
                "retry with another seed or solver")
        return Fraction(int(m.group(1)))
    if expr and expr[0] == "-" and len(expr) == 2:
        return -value_of(expr[1])
    if expr and expr[0] == "/" and len(expr) == 3:
        den = value_of(expr[2])
        if den == 0:
            raise UnsupportedModelError("division by zero in model value")
        return value_of(expr[1]) / den
    raise UnsupportedModelError(f"non-rational model value {render(expr)}; "
                                "retry with another seed or solver")


def render(expr) -> str:
    if isinstance(expr, list):
        return "(" + " ".join(render(e) for e in expr) + ")"
    return expr


def parse_model(text: str) -> dict[str, Fraction]:
    """Read ``get-value`` pairs, ``(= x v)`` lines or ``define-fun`` blocks."""
    model: dict[str, Fraction] = {}

    def visit(e):
        if not isinstance(e, list) or not e:
            return
        if e[0] == "define-fun" and len(e) == 5:
            model[e[1]] = value_of(e[4])
        elif e[0] == "=" and len(e) == 3 and isinstance(e[1], str):
            model[e[1]] = value_of(e[2])
        elif len(e) == 2 and isinstance(e[0], str) and e[0] not in ("-", "/", "model"):
            model[e[0]] = value_of(e[1])
        else:
            for sub in e:
                visit(sub)

    for e in parse_sexprs(text):
        visit(e)
    return model


# --- solver process -------------------------------------------------------

def _declared(text: str) -> list[str]:
    return [m.group(1).strip("|") for m in
            re.finditer(r"^\(declare-(?:const|fun) (\|[^|]*\||\S+)", text, re.M)]


def _prepare(text: str, seed: int | None) -> str:
    names = _declared(text)
    if names:
        request = "(get-value (" + " ".join(_sym(v) for v in names) + "))"
    else:
        request = ""
    body = text.replace("(get-model)", request)
    if seed is not None:
        body = f"(set-option :random-seed {seed})\n" + body
    return body


def _reorder(text: str, order: str) -> str:
    lines = text.splitlines(keepends=True)
    decls = [i for i, line in enumerate(lines) if line.startswith("(declare-")]
    if not decls:
        return text
    key = {"policy-first": lambda line: _declaration_key(_declared(line)[0]),
           "lexicographic": lambda line: _declared(line)[0]}[order]
    ordered = sorted((lines[i] for i in decls), key=key)
    for i, line in zip(decls, ordered):
        lines[i] = line
    return "".join(lines)


def run(text: str, config: SolverConfig | None = None) -> SolverVerdict:
    """Solve one query in fresh solver processes.

    The model is requested with ``get-value`` over every declared constant so
    solvers that omit unconstrained symbols still report a complete model.

    Within ``config.timeout`` the query is tried under each declaration order
    in turn, with a time slice that doubles after every round. The whole
    schedule is repeated with the next seed ``config.retries`` times.
    """
    config = config or SolverConfig()
    exe = config.executable
    if shutil.which(exe) is None and not os.path.isfile(exe):
        raise SolverError(f"solver executable {exe!r} not found")
    seed = config.seed
    attempts = 0
    total = 0.0
    for _ in range(config.retries + 1):
        remaining = config.timeout
        slice_ = FIRST_SLICE
        verdict = SolverVerdict("timeout")
        while remaining > 0 and verdict.status == "timeout":
            for order in DECLARATION_ORDERS:
                if remaining <= 0:
                    break
                attempts += 1
                budget = min(slice_, remaining)
                verdict = _run_once(_prepare(_reorder(text, order), seed),
                                    [exe, *config.arguments], budget)
                log.debug("attempt %d (%s, %.0fs): %s", attempts, order, budget, verdict.status)
                total += verdict.elapsed
                remaining -= budget if verdict.status == "timeout" else verdict.elapsed
                if verdict.status != "timeout":
                    break
            slice_ *= 2
        if verdict.status != "timeout":
            break
        seed = (seed or 0) + 1
    verdict.elapsed = total
    verdict.attempts = attempts
    return verdict


def _run_once(body: str, argv: list[str], timeout: float) -> SolverVerdict:
    start = time.monotonic()
    try:
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                stderr=subprocess.STDOUT, text=True)
    except OSError as exc:
        raise SolverError(f"cannot start solver {argv[0]!r}: {exc}") from exc
    try:
        out, _ = proc.communicate(body, timeout=timeout)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.communicate()
        return SolverVerdict("timeout", elapsed=time.monotonic() - start)
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()
    elapsed = time.monotonic() - start
    lines = out.strip().splitlines()
    head = lines[0].strip() if lines else ""
    if head == "unsat":
        return SolverVerdict("unsat", text=out, elapsed=elapsed)
    if head == "unknown":
        return SolverVerdict("error", text=out, elapsed=elapsed)
    if head != "sat":
        return SolverVerdict("error", text=out, elapsed=elapsed)
    rest = "\n".join(lines[1:])
    if "(error" in rest:
        return SolverVerdict("error", text=out, elapsed=elapsed)
    return SolverVerdict("sat", model=parse_model(rest), text=out, elapsed=elapsed)


def solve(constraints: Iterable[GroundConstraint], names: Iterable[str] | None = None,
          config: SolverConfig | None = None) -> SolverVerdict:
    text, _ = emit(list(constraints), names)
    return run(text, config)


# --- extraction -----------------------------------------------------------

def _concrete_affine(e, model: Mapping[str, Fraction], n: int) -> AffineForm:
    c = e.constant.evaluate(model)
    coeffs = tuple(e.coefficient(i).evaluate(model) for i in range(n))
    return AffineForm(c, coeffs)


def extract(model: Mapping[str, Fraction], templates: Templates):
    """Concrete (initial distribution, policy, certificate) from a model."""
    missing = [u.name for u in templates.registry if u.name not in model]
    if missing:
        raise ExtractionError(f"model has no value for {missing[0]!r}"
                              + (f" and {len(missing) - 1} more" if len(missing) > 1 else ""))
    problem = templates.problem
    mdp = problem.mdp
    n = mdp.n
    init = None
    if templates.init_vars is not None:
        init = tuple(m.evaluate(model) for m in templates.init_vars)
    elif problem.init_dist is not None:
        init = problem.init_dist
    kind = templates.policy_kind
    if kind == "concrete":
        policy = templates.concrete_policy
    elif kind == "memoryless":
        probs = {}
        for s in range(n):
            row = {a: templates.policy_vars[(s, a)].evaluate(model) for a in mdp.actions[s]}
            total = sum(row.values(), Fraction(0))
            if total != 1 or any(v < 0 for v in row.values()):
                raise ExtractionError(f"policy row at state {mdp.states[s]} sums to "
                                      f"{format_rational(total)}")
            for a, v in row.items():
                probs[(s, a)] = v
        policy = ConcretePolicy.memoryless(probs)
    else:
        nums = {k: _concrete_affine(e, model, n) for k, e in templates.numerators.items()}
        dens = {k: _concrete_affine(e, model, n) for k, e in templates.denominators.items()}
        policy = ConcretePolicy.distributional(nums, dens)
    rank = _concrete_affine(templates.rank, model, n)
    rows = []
    for e in templates.invariant:
        f = _concrete_affine(e, model, n)
        rows.append(AffineRow(f.constant, f.coefficients))
    cert = Certificate(rank, AffineSetSpec(n, tuple(rows)))
    return init, policy, cert
