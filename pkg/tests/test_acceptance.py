"""Acceptance suite.

Each test carries an ``acceptance(n)`` marker; the conftest summary prints one
PASS/FAIL line per criterion at the end of the run.
"""
import math
import random
import time
from fractions import Fraction as F

import pytest
import sympy
import z3

from dracert import benchmarks
from dracert.certgen import HornClause
from dracert.grid import parse_grid, summarize
from dracert.model import AffineForm, AffineRow, AffineSetSpec, Certificate, ConcretePolicy, step
from dracert.qelim import FreshNames, farkas_translate, handelman_basis, handelman_translate
from dracert.smt import SolverConfig, solve
from dracert.symbolic import SymbolicAffine, XPoly
from dracert.validation import check_certificate, rank_trace, simulate

from conftest import CONFIG, artifacts

acceptance = pytest.mark.acceptance

VERIFY = benchmarks.NAMES
SYNTHESIZE = ("running", "double", "grid5x4")
SMALL = ("running", "twoinit", "double", "slippery", "grid5x4", "insulin", "pagerank")
CASES = [(name, "verify") for name in VERIFY] + [(name, "synthesize") for name in SYNTHESIZE]
BUDGET = 600.0


def certified(name, task):
    outcome = artifacts(name, task)
    if outcome.report.verdict != "certified":
        pytest.fail(f"{name} {task}: {outcome.report.verdict} {outcome.report.message}")
    return outcome


# --- 1. solvability ----------------------------------------------------------

@acceptance(1)
@pytest.mark.parametrize("name,task", CASES)
def test_solvable_within_budget(name, task):
    outcome = certified(name, task)
    report = outcome.report
    assert report.exit_code == 0
    assert report.template_size == 1
    assert report.timings["solve"] / 1000 < BUDGET


# --- 2. query sizes ----------------------------------------------------------

@acceptance(2)
@pytest.mark.parametrize("name,expected", [("grid5x4", (112, 145, 1018)),
                                           ("running", (64, 81, 556))])
def test_query_size_within_factor_two(name, expected):
    stats = artifacts(name, "verify").report.stats.as_tuple()
    for got, want in zip(stats, expected):
        assert want / 2 <= got <= want * 2, (stats, expected)


# --- 3. certified soundness --------------------------------------------------

_soundness_seconds = {}


@acceptance(3)
@pytest.mark.parametrize("name,task", CASES)
def test_certified_soundness(name, task):
    start = time.monotonic()
    outcome = certified(name, task)
    problem, policy, cert = outcome.problem, outcome.policy, outcome.certificate
    report = check_certificate(problem, policy, cert, CONFIG, init=outcome.init)
    assert report.passed and report.complete, report.summary()
    assert [c.index for c in report.conditions] == [1, 2, 3, 4, 5]

    mu0 = outcome.init or problem.init_dist
    limit = math.ceil(cert.rank.value(mu0)) + 1
    verdict = simulate(problem, policy, mu0, bound=limit, cert=cert)
    # reaching the target first means no step before it left H
    assert verdict.reached, verdict.outcome
    assert verdict.index <= limit
    assert verdict.rank_decreasing
    assert problem.target.contains(verdict.final)
    # the kept prefix is re-checked with plain fractions
    prefix = verdict.trace[:verdict.index + 1]
    ranks = rank_trace(cert, prefix)
    assert all(a - b >= 1 for a, b in zip(ranks, ranks[1:]))
    assert all(problem.safe.contains(x) for x in prefix)
    elapsed = time.monotonic() - start
    stage = outcome.report.timings
    _soundness_seconds[(name, task)] = elapsed + sum(stage.values()) / 1000


@acceptance(3)
def test_small_benchmarks_runtime():
    small = [k for k in _soundness_seconds if k[0] in SMALL]
    if not small:
        pytest.skip("soundness cases did not run")
    assert sum(_soundness_seconds[k] for k in small) < 300


# --- 4. Farkas equisatisfiability --------------------------------------------

def _rational(rnd, bound=3):
    den = rnd.choice((1, 2, 3, 4))
    return F(rnd.randint(-bound * den, bound * den), den)


def _random_clause(rnd):
    n = rnd.randint(1, 3)
    point = [_rational(rnd, 1) for _ in range(n)]
    size = rnd.randint(1, 4)
    rows = []
    while len(rows) < size:
        coeffs = [_rational(rnd) for _ in range(n)]
        floor = -sum(a * p for a, p in zip(coeffs, point))
        if floor >= 3:
            continue
        strict = rnd.random() < 0.3
        # the constant keeps the chosen point feasible, so the premises are satisfiable
        low = max(F(-3), floor)
        const = low + (F(3) - low) * F(rnd.randint(1 if strict else 0, 8), 8)
        if strict and const + sum(a * p for a, p in zip(coeffs, point)) <= 0:
            continue
        rows.append((const, coeffs, strict))
    if rnd.random() < 0.5:
        const, coeffs, _ = rnd.choice(rows)
        const = min(F(3), const + F(rnd.randint(-2, 4), 4))
    else:
        const, coeffs = _rational(rnd), [_rational(rnd) for _ in range(n)]
    return n, rows, (const, coeffs)


def _entailed(n, rows, rhs):
    x = [z3.Real(f"x{i}") for i in range(n)]
    s = z3.Solver()
    for const, coeffs, strict in rows:
        e = z3.Sum([z3.RealVal(str(a)) * v for a, v in zip(coeffs, x)]) + z3.RealVal(str(const))
        s.add(e > 0 if strict else e >= 0)
    const, coeffs = rhs
    s.add(z3.Sum([z3.RealVal(str(a)) * v for a, v in zip(coeffs, x)]) + z3.RealVal(str(const)) < 0)
    return s.check() == z3.unsat


def _z3_poly(poly, env):
    terms = []
    for mono, coeff in poly.items():
        term = z3.RealVal(str(coeff))
        for name in mono:
            term = term * env.setdefault(name, z3.Real(name))
        terms.append(term)
    return z3.Sum(terms) if terms else z3.RealVal(0)


def _satisfiable(constraints):
    env, s = {}, z3.Solver()
    ops = {">=": lambda a: a >= 0, ">": lambda a: a > 0, "=": lambda a: a == 0}
    for c in constraints:
        s.add(ops[c.relation](_z3_poly(c.poly, env)))
    return s.check() == z3.sat


@acceptance(4)
def test_farkas_equisatisfiable():
    rnd = random.Random(20240611)
    start = time.monotonic()
    counts = {True: 0, False: 0}
    for _ in range(600):
        n, rows, rhs = _random_clause(rnd)
        clause = HornClause([(SymbolicAffine.from_rationals(c, a), strict) for c, a, strict in rows],
                            SymbolicAffine.from_rationals(*rhs))
        out = farkas_translate(clause, FreshNames())
        assert len(out.multipliers) == len(rows) + 1
        expected = _entailed(n, rows, rhs)
        assert _satisfiable(out.constraints) == expected, (rows, rhs)
        counts[expected] += 1
    assert time.monotonic() - start < 120
    # both outcomes are well represented
    assert min(counts.values()) >= 100, counts


# --- 5. Handelman ------------------------------------------------------------

@acceptance(5)
@pytest.mark.parametrize("n,k", [(n, k) for n in range(1, 5) for k in range(0, 4)])
def test_handelman_basis_closed_form(n, k):
    basis = handelman_basis(n, k)
    assert len(basis) == math.comb(n + k, k)
    assert len(set(basis)) == len(basis)


@acceptance(5)
def test_handelman_product_identity_solvable():
    # x (1 - x) >= 0 on [0, 1]; y_0 is strictly positive, so the conclusion
    # carries a small slack for it to absorb
    x = SymbolicAffine.from_rationals(0, [1])
    rhs = XPoly({(0,): 1, (0, 0): -1}) + XPoly.const(F(1, 100))
    clause = HornClause([(x, False), (SymbolicAffine.from_rationals(1, [-1]), False)], rhs)
    out = handelman_translate(clause, 2, FreshNames())
    verdict = solve(out.constraints, out.multipliers, SolverConfig(timeout=60))
    assert verdict.status == "sat"
    assert all(c.holds(verdict.model) for c in out.constraints)


# --- 6. model fidelity -------------------------------------------------------

# (|S|, actions, transitions, I, G, L, F) from the benchmark property table
TABLE = {
    "running": (7, 19, 24, 1, 1, 1, 0),
    "twoinit": (7, 18, 22, 2, 1, 3, 0),
    "double": (11, 30, 36, 2, 2, 2, 0),
    "slippery": (12, 37, 48, 1, 1, 3, 0),
    "grid5x4": (15, 29, 36, 1, 1, 3, 0),
    "grid8x8": (32, 99, 111, 1, 1, 3, 0),
    "grid20x10": (88, 280, 292, 2, 1, 9, 4),
}

PAGERANK_FIGURE = """
1/80 19/60 3/40 19/60 67/240
1/80 1/20 41/120 19/60 67/240
1/16 1/4 3/8 1/4 1/16
1/80 1/20 7/8 1/20 1/80
33/80 9/20 3/40 1/20 1/80
"""


@acceptance(6)
@pytest.mark.parametrize("name", sorted(TABLE))
def test_grid_counts_match_table(name):
    assert summarize(parse_grid(benchmarks.GRIDS[name])).as_tuple() == TABLE[name]
    mdp = benchmarks.builtin(name).mdp
    assert (mdp.n, mdp.num_actions, mdp.num_transitions) == TABLE[name][:3]


@acceptance(6)
@pytest.mark.parametrize("name", benchmarks.CHAINS)
def test_chain_rows_sum_to_one(name):
    mdp = benchmarks.builtin(name).mdp
    for k in range(mdp.n):
        assert sum(mdp.delta(k, "a").values()) == 1


@acceptance(6)
def test_pagerank_image_of_uniform():
    matrix = sympy.Matrix([[sympy.Rational(v) for v in line.split()]
                           for line in PAGERANK_FIGURE.strip().splitlines()])
    expected = (sympy.ones(1, 5) / 5 * matrix).tolist()[0]
    got = step((F(1, 5),) * 5, ConcretePolicy.memoryless({}), benchmarks.builtin("pagerank").mdp)
    assert [sympy.Rational(v.numerator, v.denominator) for v in got] == expected


# --- 7. mutation rejection ---------------------------------------------------

def _dot(coeffs, x):
    return sum((a * v for a, v in zip(coeffs, x)), F(0))


class Oracle:
    """Exact, solver-independent evaluation of the five certificate conditions."""

    def __init__(self, problem, policy):
        self.problem = problem
        mdp = problem.mdp
        self.n = mdp.n
        # matrix[k][i]: mass moved from k to i in one step
        self.matrix = [[F(0)] * self.n for _ in range(self.n)]
        for k in range(self.n):
            for a, p in policy.action_probabilities(mdp, k).items():
                for i, q in mdp.delta(k, a).items():
                    self.matrix[k][i] += p * q

    def step(self, x):
        return tuple(sum((x[k] * self.matrix[k][i] for k in range(self.n)), F(0))
                     for i in range(self.n))

    @staticmethod
    def holds(rows, x):
        return all((_dot(r.coefficients, x) + r.constant > 0) if r.strict
                   else (_dot(r.coefficients, x) + r.constant >= 0) for r in rows)

    def violates(self, index, cert, x):
        """Whether ``x`` is a witness against condition ``index``."""
        inv, target = cert.invariant.rows, self.problem.target.rows

        def rank(y):
            return _dot(cert.rank.coefficients, y) + cert.rank.constant

        if index == 1:
            return not self.holds(inv, x)
        if not (all(v >= 0 for v in x) and sum(x) == 1 and self.holds(inv, x)):
            return False
        if index == 3:
            return not self.holds(self.problem.safe.rows, x)
        if index == 4:
            return rank(x) < 0
        if self.holds(target, x):
            return False
        y = self.step(x)
        if index == 2:
            return not self.holds(inv, y)
        return rank(x) - rank(y) < 1

    def witness(self, index, cert, mu0):
        """A violating point confirmed by exact evaluation, or None."""
        if index == 1:
            return mu0 if self.violates(1, cert, mu0) else None
        xs = [z3.Real(f"x{i}") for i in range(self.n)]
        s = z3.Solver()
        s.add(*[v >= 0 for v in xs], z3.Sum(xs) == 1)

        def aff(constant, coeffs, point):
            return z3.Sum([z3.RealVal(str(a)) * v for a, v in zip(coeffs, point)]) + z3.RealVal(str(constant))

        def sat(r, point):
            e = aff(r.constant, r.coefficients, point)
            return e > 0 if r.strict else e >= 0

        ys = [z3.Sum([xs[k] * z3.RealVal(str(self.matrix[k][i])) for k in range(self.n)])
              for i in range(self.n)]
        inv = cert.invariant.rows
        s.add(*[sat(r, xs) for r in inv])
        rank = cert.rank
        not_target = z3.Or([z3.Not(sat(r, xs)) for r in self.problem.target.rows] or [False])
        if index == 3:
            s.add(z3.Or([z3.Not(sat(r, xs)) for r in self.problem.safe.rows] or [False]))
        elif index == 4:
            s.add(aff(rank.constant, rank.coefficients, xs) < 0)
        elif index == 2:
            s.add(not_target, z3.Or([z3.Not(sat(r, ys)) for r in inv] or [False]))
        else:
            s.add(not_target, aff(rank.constant, rank.coefficients, xs)
                  - aff(rank.constant, rank.coefficients, ys) < 1)
        if s.check() != z3.sat:
            return None
        m = s.model()
        x = tuple(F(str(m.eval(v, model_completion=True).as_fraction())) for v in xs)
        assert self.violates(index, cert, x), "oracle produced a non-witness"
        return x


def _mutate(cert, rnd):
    slots = [("rank", None, j) for j in range(len(cert.rank.coefficients) + 1)]
    for r in range(len(cert.invariant.rows)):
        slots += [("inv", r, j) for j in range(len(cert.rank.coefficients) + 1)]
    kind, r, j = rnd.choice(slots)
    if kind == "rank":
        values = [cert.rank.constant, *cert.rank.coefficients]
    else:
        row = cert.invariant.rows[r]
        values = [row.constant, *row.coefficients]
    old = values[j]
    new = rnd.choice([old + d for d in (F(1), F(-1), F(1, 2), F(-1, 2), F(1, 10), F(-1, 10),
                                        F(5), F(-5))] + [-old, F(0), 2 * old, old / 2])
    if new == old:
        new = old + 1
    values[j] = new
    if kind == "rank":
        return Certificate(AffineForm(values[0], tuple(values[1:])), cert.invariant)
    rows = list(cert.invariant.rows)
    rows[r] = AffineRow(values[0], tuple(values[1:]), rows[r].strict)
    return Certificate(cert.rank, AffineSetSpec(cert.invariant.n, tuple(rows)))


@acceptance(7)
@pytest.mark.parametrize("name,task", CASES)
def test_mutations_are_rejected(name, task):
    outcome = certified(name, task)
    problem, policy = outcome.problem, outcome.policy
    mu0 = outcome.init or problem.init_dist
    oracle = Oracle(problem, policy)
    rnd = random.Random(f"{name}/{task}")
    broken_count = 0
    for _ in range(24):
        mutant = _mutate(outcome.certificate, rnd)
        truth = {i: oracle.witness(i, mutant, mu0) for i in range(1, 6)}
        broken = any(w is not None for w in truth.values())
        report = check_certificate(problem, policy, mutant, CONFIG, init=outcome.init)
        if not broken:
            assert report.passed, report.summary()
            continue
        broken_count += 1
        assert not report.passed, "checker accepted a broken certificate"
        witnesses = [c for c in report.failures() if c.witness is not None]
        assert witnesses, report.summary()
        for c in witnesses:
            assert truth[c.index] is not None
            assert oracle.violates(c.index, mutant, c.witness), (c.index, c.witness)
    assert broken_count > 0
