"""Independent certificate checking and exact simulation.

The checker never looks at constraint systems or Farkas multipliers.  For a
concrete policy and certificate it asks the solver directly for a
distribution violating each reach-avoid condition, with every coefficient
spelled out as a rational literal.  Witnesses returned by the solver are
re-evaluated exactly before a condition is reported as failed.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .model import (AffineForm, AffineRow, AffineSetSpec, Certificate, ConcretePolicy,
                    DenominatorError, Distribution, ModelError, ParseError, ProblemSpec,
                    in_simplex, negate_row, step)
from .smt import SolverConfig, SolverError, literal, run
from .symbolic import format_rational, parse_rational

CONDITIONS = {
    0: "policy well-formed on I",
    1: "initial distribution in I",
    2: "I minus T closed under the policy",
    3: "I contained in H",
    4: "R nonnegative on I",
    5: "R decreases by at least 1 until T",
}

SAMPLED = "sampled (incomplete)"


@dataclass
class ConditionResult:
    index: int
    passed: bool
    method: str = "smt"
    witness: Distribution | None = None
    detail: str = ""

    @property
    def name(self) -> str:
        return CONDITIONS[self.index]


@dataclass
class CheckReport:
    conditions: list[ConditionResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    @property
    def complete(self) -> bool:
        return all(c.method != SAMPLED for c in self.conditions)

    def failures(self) -> list[ConditionResult]:
        return [c for c in self.conditions if not c.passed]

    def condition(self, index: int) -> ConditionResult:
        for c in self.conditions:
            if c.index == index:
                return c
        raise KeyError(index)

    def summary(self) -> str:
        lines = []
        for c in self.conditions:
            status = "pass" if c.passed else "FAIL"
            extra = f" [{c.method}]" if c.method != "smt" else ""
            lines.append(f"({c.index}) {c.name}: {status}{extra}"
                         + (f" {c.detail}" if c.detail else ""))
        return "\n".join(lines)


class CheckError(RuntimeError):
    pass


# --- SMT text for concrete queries ---------------------------------------

def _affine_text(constant, coefficients: Sequence[Fraction]) -> str:
    parts = [literal(constant)] if constant else []
    for i, c in enumerate(coefficients):
        if c == 1:
            parts.append(f"x{i + 1}")
        elif c:
            parts.append(f"(* {literal(c)} x{i + 1})")
    if not parts:
        return "0"
    return parts[0] if len(parts) == 1 else f"(+ {' '.join(parts)})"


def _row_text(r: AffineRow) -> str:
    return f"({'>' if r.strict else '>='} {_affine_text(r.constant, r.coefficients)} 0)"


def _any(terms: list[str]) -> str:
    if not terms:
        return "false"
    return terms[0] if len(terms) == 1 else f"(or {' '.join(terms)})"


class _Query:
    def __init__(self, n: int, logic: str = "QF_LRA"):
        self.n = n
        self.logic = logic
        self.extra: list[str] = []
        self.asserts: list[str] = []
        # every query lives on the probability simplex
        for i in range(n):
            self.asserts.append(f"(>= x{i + 1} 0)")
        self.asserts.append(f"(= {_affine_text(0, [1] * n)} 1)")

    def rows(self, spec_rows) -> "_Query":
        self.asserts.extend(_row_text(r) for r in spec_rows)
        return self

    def add(self, text: str) -> "_Query":
        self.asserts.append(text)
        return self

    def text(self) -> str:
        decls = [f"(declare-const x{i + 1} Real)" for i in range(self.n)] + self.extra
        body = [f"(set-logic {self.logic})", *decls]
        body += [f"(assert {a})" for a in self.asserts]
        body += ["(check-sat)", "(get-model)"]
        return "\n".join(body) + "\n"


def _solve_for_point(q: _Query, config: SolverConfig):
    """(status, point or None)."""
    verdict = run(q.text(), config)
    if verdict.status == "unsat":
        return "unsat", None
    if verdict.status != "sat":
        return verdict.status, None
    x = tuple(verdict.model.get(f"x{i + 1}", Fraction(0)) for i in range(q.n))
    return "sat", x


# --- step matrix -----------------------------------------------------------

def step_columns(problem: ProblemSpec, policy: ConcretePolicy) -> list[Distribution]:
    """Images of the point distributions; for a memoryless policy
    ``step(x) = sum_k x_k * columns[k]``."""
    n = problem.mdp.n
    cols = []
    for k in range(n):
        e = [Fraction(0)] * n
        e[k] = Fraction(1)
        cols.append(step(tuple(e), policy, problem.mdp))
    return cols


def _compose(row_const, row_coeffs, columns) -> tuple[Fraction, tuple[Fraction, ...]]:
    """Coefficients of ``row(step(x))`` for a linear step."""
    n = len(columns)
    coeffs = []
    for k in range(n):
        coeffs.append(sum((row_coeffs[i] * columns[k][i] for i in range(n) if row_coeffs[i]),
                          Fraction(0)))
    return Fraction(row_const), tuple(coeffs)


# --- condition checks --------------------------------------------------------

def _violates(rows, x) -> bool:
    return any(not r.holds(x) for r in rows)


def check_certificate(problem: ProblemSpec, policy: ConcretePolicy, cert: Certificate,
                      config: SolverConfig | None = None, init: Distribution | None = None,
                      samples: int = 10_000, rng_seed: int = 0) -> CheckReport:
    """Check all five certificate conditions for a concrete policy.

    ``init`` is the initial distribution for the unit and existential
    variants (defaults to the problem's own).
    """
    config = config or SolverConfig()
    if any(r.strict for r in cert.invariant.rows):
        raise CheckError("invariant rows must be non-strict")
    policy.validate(problem.mdp)
    report = CheckReport()
    inv = cert.invariant.rows
    target = problem.target.rows
    not_target = [negate_row(r) for r in target]
    n = problem.mdp.n
    rank = cert.rank
    memoryless = policy.is_memoryless
    sampler = _Sampler(problem, policy, cert, samples, rng_seed)

    if not memoryless:
        report.conditions.append(_check_policy(problem, policy, cert, config, sampler))
        policy_ok = report.conditions[-1].passed
    else:
        policy_ok = True

    # (1) initial distribution
    if problem.quantifier == "universal":
        q = _Query(n).rows(problem.init.rows).add(_any([_row_text(negate_row(r)) for r in inv]))
        report.conditions.append(_from_query(1, q, config, lambda x: problem.init.contains(x)
                                             and not cert.invariant.contains(x)))
    else:
        mu0 = init if init is not None else problem.init_dist
        ok = mu0 is not None and in_simplex(mu0) and cert.invariant.contains(mu0)
        detail = ""
        if ok and problem.quantifier == "existential" and not problem.init.contains(mu0):
            ok, detail = False, "initial distribution outside Init"
        report.conditions.append(ConditionResult(1, ok, "exact", None if ok else mu0, detail))

    # (3) safety and (4) nonnegativity are linear in x for every policy class
    q = _Query(n).rows(inv).add(_any([_row_text(negate_row(r)) for r in problem.safe.rows]))
    report.conditions.append(_from_query(3, q, config, lambda x: cert.invariant.contains(x)
                                         and not problem.safe.contains(x)))
    q = _Query(n).rows(inv).add(f"(< {_affine_text(rank.constant, rank.coefficients)} 0)")
    report.conditions.append(_from_query(4, q, config, lambda x: cert.invariant.contains(x)
                                         and rank.value(x) < 0))

    def in_lhs(x):
        return cert.invariant.contains(x) and any(r.holds(x) for r in not_target)

    def closure_broken(x):
        y = step(x, policy, problem.mdp)
        return in_lhs(x) and not cert.invariant.contains(y)

    def decrease_broken(x):
        y = step(x, policy, problem.mdp)
        return in_lhs(x) and rank.value(x) < rank.value(y) + 1

    if memoryless:
        cols = step_columns(problem, policy)
        stepped = [_compose(r.constant, r.coefficients, cols) for r in inv]
        q = _Query(n).rows(inv).add(_any([_row_text(r) for r in not_target]))
        q.add(_any([f"(< {_affine_text(c, a)} 0)" for c, a in stepped]))
        report.conditions.append(_from_query(2, q, config, closure_broken))
        rc, ra = _compose(rank.constant, rank.coefficients, cols)
        diff = tuple(a - b for a, b in zip(rank.coefficients, ra))
        q = _Query(n).rows(inv).add(_any([_row_text(r) for r in not_target]))
        q.add(f"(< {_affine_text(rank.constant - rc - 1, diff)} 0)")
        report.conditions.append(_from_query(5, q, config, decrease_broken))
    else:
        for idx, broken, builder in (
                (2, closure_broken, lambda q, y: _any([f"(< {_subst(r.constant, r.coefficients, y)} 0)"
                                                       for r in inv])),
                (5, decrease_broken, lambda q, y: "(< (- {} {}) 1)".format(
                    _affine_text(rank.constant, rank.coefficients),
                    _subst(rank.constant, rank.coefficients, y)))):
            if not policy_ok:
                report.conditions.append(ConditionResult(idx, False, "exact", None,
                                                         "policy not well-formed on I"))
                continue
            q = _Query(n, "QF_NRA").rows(inv).add(_any([_row_text(r) for r in not_target]))
            y = _distributional_step(q, problem, policy)
            q.add(builder(q, y))
            report.conditions.append(_from_query(idx, q, config, broken, sampler))
    report.conditions.sort(key=lambda c: c.index)
    return report


def _subst(constant, coefficients, y_terms: list[str]) -> str:
    parts = [literal(constant)] if constant else []
    for c, t in zip(coefficients, y_terms):
        if c and t != "0":
            parts.append(t if c == 1 else f"(* {literal(c)} {t})")
    if not parts:
        return "0"
    return parts[0] if len(parts) == 1 else f"(+ {' '.join(parts)})"


def _distributional_step(q: _Query, problem: ProblemSpec, policy: ConcretePolicy) -> list[str]:
    """Declare ``q_k_a = num/den`` helpers (as ``q * den = num``, ``den >= 1``)
    and return SMT terms for every entry of ``step(x)``."""
    mdp = problem.mdp
    n = mdp.n
    contrib: list[list[str]] = [[] for _ in range(n)]
    for k in range(n):
        acts = mdp.actions[k]
        if k not in policy.denominators:
            for i, p in mdp.delta(k, acts[0]).items():
                contrib[i].append(f"x{k + 1}" if p == 1 else f"(* {literal(p)} x{k + 1})")
            continue
        den = policy.denominators[k]
        den_t = _affine_text(den.constant, den.coefficients)
        q.add(f"(>= {den_t} 1)")
        for a in acts:
            num = policy.numerators.get((k, a))
            if num is None:
                continue
            name = f"q_{k + 1}_{a}"
            q.extra.append(f"(declare-const {name} Real)")
            q.add(f"(= (* {name} {den_t}) {_affine_text(num.constant, num.coefficients)})")
            for i, p in mdp.delta(k, a).items():
                contrib[i].append(f"(* {literal(p)} {name} x{k + 1})")
    return [("(+ " + " ".join(c) + ")") if len(c) > 1 else (c[0] if c else "0") for c in contrib]


def _from_query(index: int, q: _Query, config: SolverConfig, confirm,
                sampler: "_Sampler | None" = None) -> ConditionResult:
    try:
        status, x = _solve_for_point(q, config)
    except SolverError as exc:
        status, x = "error", None
        if sampler is None:
            raise CheckError(f"condition ({index}): {exc}") from exc
    if status == "unsat":
        return ConditionResult(index, True)
    if status == "sat" and x is not None and confirm(x):
        return ConditionResult(index, False, "smt", x)
    if sampler is not None:
        witness = sampler.search(confirm)
        if witness is not None:
            return ConditionResult(index, False, "sampled", witness)
        return ConditionResult(index, True, SAMPLED,
                               detail=f"solver {status}; {sampler.count} exact samples passed")
    if status == "sat":
        raise CheckError(f"condition ({index}): solver witness does not violate the condition")
    raise CheckError(f"condition ({index}): solver returned {status}")


def _check_policy(problem, policy, cert, config, sampler) -> ConditionResult:
    terms = []
    mdp = problem.mdp
    for k, den in sorted(policy.denominators.items()):
        terms.append(f"(< {_affine_text(den.constant, den.coefficients)} 1)")
        for a in mdp.actions[k]:
            num = policy.numerators.get((k, a))
            if num is not None:
                terms.append(f"(< {_affine_text(num.constant, num.coefficients)} 0)")

    def broken(x):
        if not cert.invariant.contains(x):
            return False
        for k, den in policy.denominators.items():
            if den.value(x) < 1:
                return True
            if any(num.value(x) < 0 for (s, _), num in policy.numerators.items() if s == k):
                return True
        return False

    q = _Query(problem.mdp.n).rows(cert.invariant.rows).add(_any(terms))
    return _from_query(0, q, config, broken)


class _Sampler:
    """Exact rational points of the simplex, biased toward I."""

    def __init__(self, problem, policy, cert, count, seed):
        self.problem = problem
        self.cert = cert
        self.count = count
        self.rng = random.Random(seed)

    def points(self):
        n = self.problem.mdp.n
        for i in range(n):
            e = [Fraction(0)] * n
            e[i] = Fraction(1)
            yield tuple(e)
        if self.problem.init_dist is not None:
            yield self.problem.init_dist
        for _ in range(self.count):
            cuts = sorted(self.rng.randint(0, 1000) for _ in range(n - 1))
            bounds = [0, *cuts, 1000]
            yield tuple(Fraction(b - a, 1000) for a, b in zip(bounds, bounds[1:]))

    def search(self, broken):
        for x in self.points():
            try:
                if broken(x):
                    return x
            except DenominatorError:
                continue
        return None


# --- simulation ----------------------------------------------------------------

TRACE_LIMIT = 1000


@dataclass
class SimVerdict:
    outcome: str  # reached | safety-violated | bound-exhausted
    index: int | None
    trace: list[Distribution]
    row: int | None = None
    steps: int = 0
    final: Distribution | None = None
    # every R(mu_i) - R(mu_{i+1}) >= 1 before the stop; None without a certificate
    rank_decreasing: bool | None = None

    @property
    def reached(self) -> bool:
        return self.outcome == "reached"


class SimulationError(ModelError):
    def __init__(self, step_index: int, cause: Exception):
        self.step_index = step_index
        super().__init__(f"step {step_index}: {cause}")


def default_bound(cert: Certificate, mu0: Distribution) -> int:
    return max(1, math.ceil(cert.rank.value(mu0))) + 1


class _IntRow:
    """An affine row scaled to integer coefficients."""

    def __init__(self, constant, coefficients):
        scale = math.lcm(Fraction(constant).denominator,
                         *(Fraction(a).denominator for a in coefficients))
        self.scale = scale
        self.constant = int(constant * scale)
        self.terms = [(i, int(a * scale)) for i, a in enumerate(coefficients) if a]

    def scaled(self, v: list[int], den: int) -> int:
        """``scale * den * row(v / den)``."""
        return self.constant * den + sum(a * v[i] for i, a in self.terms)


def _stream(problem, policy, mu0):
    """Yield ``(v, den, growth)`` with ``mu_i = v / den`` for i = 0, 1, ...

    Memoryless policies step a single integer vector over a common denominator
    that grows by the fixed factor ``growth`` per step, which avoids
    normalizing thousands of huge fractions.  Otherwise ``growth`` is None.
    """
    mu = tuple(Fraction(v) for v in mu0)
    if not policy.is_memoryless:
        i = 0
        while True:
            den = math.lcm(*(v.denominator for v in mu))
            yield [int(v * den) for v in mu], den, None
            try:
                mu = step(mu, policy, problem.mdp)
            except (DenominatorError, ModelError) as exc:
                raise SimulationError(i, exc) from exc
            i += 1
    cols = step_columns(problem, policy)
    scale = math.lcm(*(c.denominator for col in cols for c in col))
    moves = [[(i, int(c * scale)) for i, c in enumerate(col) if c] for col in cols]
    den = math.lcm(*(v.denominator for v in mu))
    v = [int(x * den) for x in mu]
    n = len(v)
    while True:
        yield v, den, scale
        w = [0] * n
        for k, mass in enumerate(v):
            if mass:
                for i, c in moves[k]:
                    w[i] += mass * c
        v, den = w, den * scale


def simulate(problem: ProblemSpec, policy: ConcretePolicy, mu0: Distribution,
             bound: int | None = None, cert: Certificate | None = None,
             trace_limit: int = TRACE_LIMIT) -> SimVerdict:
    """Exact unrolling of the distribution stream from ``mu0``.

    Only the first ``trace_limit + 1`` distributions are kept in the trace;
    ``final`` is the last distribution examined.  With a certificate the
    rank drop is checked at every step.
    """
    if bound is None:
        if cert is None:
            raise ValueError("a step bound or a certificate is required")
        bound = default_bound(cert, mu0)
    if bound < 0:
        raise ValueError("bound must be nonnegative")
    target = [_IntRow(r.constant, r.coefficients) for r in problem.target.rows]
    safe = [_IntRow(r.constant, r.coefficients) for r in problem.safe.rows]
    strict_t = [r.strict for r in problem.target.rows]
    strict_h = [r.strict for r in problem.safe.rows]
    rank = _IntRow(cert.rank.constant, cert.rank.coefficients) if cert is not None else None
    decreasing = True if cert is not None else None
    trace: list[Distribution] = []
    previous = None

    def holds(row, strict, v, den):
        value = row.scaled(v, den)
        return value > 0 if strict else value >= 0

    def verdict(outcome, i, v, den, row=None):
        final = trace[i] if i < len(trace) else tuple(Fraction(x, den) for x in v)
        return SimVerdict(outcome, None if outcome == "bound-exhausted" else i, trace, row,
                          i, final, decreasing)

    for i, (v, den, growth) in enumerate(_stream(problem, policy, mu0)):
        if i <= trace_limit:
            trace.append(tuple(Fraction(x, den) for x in v))
        if rank is not None:
            current = (rank.scaled(v, den), den)
            if previous is not None:
                # R(mu_{i-1}) - R(mu_i) >= 1 with denominators cleared
                (a, da), (b, db) = previous, current
                if growth is not None:
                    drop, unit = a * growth - b, rank.scale * db
                else:
                    drop, unit = a * db - b * da, rank.scale * da * db
                if drop < unit:
                    decreasing = False
            previous = current
        if all(holds(r, s, v, den) for r, s in zip(target, strict_t)):
            return verdict("reached", i, v, den)
        bad = [j for j, (r, s) in enumerate(zip(safe, strict_h)) if not holds(r, s, v, den)]
        if bad or any(x < 0 for x in v) or sum(v) != den:
            return verdict("safety-violated", i, v, den, bad[0] if bad else None)
        if i == bound:
            return verdict("bound-exhausted", i, v, den)
    raise AssertionError("the distribution stream is infinite")


def rank_trace(cert: Certificate, trace: Sequence[Distribution]) -> list[Fraction]:
    return [cert.rank.value(x) for x in trace]


# --- certificate files ------------------------------------------------------------

def format_certificate(cert: Certificate) -> str:
    lines = ["rank: " + " ".join(format_rational(v) for v in
                                 (cert.rank.constant, *cert.rank.coefficients))]
    for r in cert.invariant.rows:
        lines.append("inv: " + " ".join(format_rational(v) for v in
                                        (r.constant, *r.coefficients)) + " >= 0")
    return "\n".join(lines) + "\n"


def parse_certificate(text: str, n: int) -> Certificate:
    rank = None
    rows = []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        fields = rest.split()
        if key == "inv":
            if fields[-1:] != ["0"] or fields[-2:-1] != [">="]:
                raise ParseError("invariant rows must end with '>= 0'", no)
            fields = fields[:-2]
        elif key != "rank":
            raise ParseError(f"unknown certificate line {key!r}", no)
        try:
            values = [parse_rational(f) for f in fields]
        except ValueError as exc:
            raise ParseError(str(exc), no) from exc
        if len(values) != n + 1:
            raise ParseError(f"expected {n + 1} coefficients, got {len(values)}", no)
        if key == "rank":
            rank = AffineForm(values[0], tuple(values[1:]))
        else:
            rows.append(AffineRow(values[0], tuple(values[1:])))
    if rank is None:
        raise ParseError("certificate has no rank line")
    if not rows:
        raise ParseError("certificate has no invariant rows")
    return Certificate(rank, AffineSetSpec(n, tuple(rows)))
