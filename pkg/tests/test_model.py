from fractions import Fraction as F

import pytest
import sympy

from dracert import benchmarks
from dracert.grid import GridError, grid_to_problem, parse_grid, summarize
from dracert.model import (AffineRow, ConcretePolicy, ModelError, ParseError, PolicyError,
                           dump_model, format_policy, negate_row, parse_model, parse_policy, step)

CHAIN = """\
states: s0 s1
actions s0: a
actions s1: a
trans s0 a -> s1:1
trans s1 a -> s1:1
target:
  -1 + 0*x1 + 1*x2 >= 0
safe:
init-dist: 1 0
"""


def test_parse_two_state_chain():
    p = parse_model(CHAIN)
    assert p.mdp.n == 2
    assert p.mdp.num_actions == 2
    assert p.mdp.actions == (("a",), ("a",))


def test_transition_mass_must_sum_to_one():
    with pytest.raises(ModelError):
        parse_model(CHAIN.replace("trans s0 a -> s1:1", "trans s0 a -> s1:9/10"))


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as info:
        parse_model(CHAIN.replace("actions s1: a", "actions s9: a"))
    assert info.value.line == 3


def test_model_dump_roundtrip():
    p = parse_model(CHAIN)
    q = parse_model(dump_model(p))
    assert q.mdp == p.mdp
    assert q.target == p.target
    assert q.init_dist == p.init_dist


def test_tiny_grid():
    s = summarize(parse_grid("IG"))
    assert (s.states, s.initial, s.goal) == (2, 1, 1)
    p = grid_to_problem(parse_grid("IG"))
    (row,) = p.target.rows
    assert row.constant == F(-9, 10) and row.coefficients == (F(0), F(1))


def test_grid_without_initial_cell():
    with pytest.raises(GridError):
        parse_grid("XX")


# (|S|, actions, transitions, I, G, L, F) for every gridworld benchmark
TABLE = {
    "running": (7, 19, 24, 1, 1, 1, 0),
    "twoinit": (7, 18, 22, 2, 1, 3, 0),
    "double": (11, 30, 36, 2, 2, 2, 0),
    "slippery": (12, 37, 48, 1, 1, 3, 0),
    "grid5x4": (15, 29, 36, 1, 1, 3, 0),
    "grid8x8": (32, 99, 111, 1, 1, 3, 0),
    "grid20x10": (88, 280, 292, 2, 1, 9, 4),
}


@pytest.mark.parametrize("name", sorted(TABLE))
def test_grid_summary_counts(name):
    assert summarize(parse_grid(benchmarks.GRIDS[name])).as_tuple() == TABLE[name]


def test_running_layout_has_one_obstacle():
    g = parse_grid(benchmarks.GRIDS["running"])
    assert g.width * g.height == 8
    assert len(g.cells("X")) == 1


def test_builtin_chains():
    pr = benchmarks.builtin("pagerank").mdp
    assert pr.delta(0, "a") == dict(enumerate([F(1, 80), F(19, 60), F(3, 40), F(19, 60),
                                               F(67, 240)]))
    for k in range(5):
        assert sum(pr.delta(k, "a").values()) == 1
    ins = benchmarks.builtin("insulin").mdp
    assert ins.delta(4, "a") == {4: F(1)}
    for k in range(5):
        assert sum(ins.delta(k, "a").values()) == 1
    with pytest.raises(ModelError):
        benchmarks.builtin("nosuch")


def test_step_identity_and_swap():
    ident = parse_model(CHAIN.replace("trans s0 a -> s1:1", "trans s0 a -> s0:1"))
    mu = (F(1, 3), F(2, 3))
    assert step(mu, ConcretePolicy.memoryless({}), ident.mdp) == mu
    swap = parse_model(CHAIN.replace("trans s1 a -> s1:1", "trans s1 a -> s0:1"))
    assert step((F(1), F(0)), ConcretePolicy.memoryless({}), swap.mdp) == (F(0), F(1))


def test_pagerank_step_matches_matrix_oracle():
    problem = benchmarks.builtin("pagerank")
    mu = tuple([F(1, 5)] * 5)
    got = step(mu, ConcretePolicy.memoryless({}), problem.mdp)
    m = sympy.Matrix([[sympy.Rational(v.numerator, v.denominator) for v in row]
                      for row in benchmarks.PAGERANK])
    expected = (sympy.Matrix([[sympy.Rational(1, 5)] * 5]) * m).tolist()[0]
    assert [sympy.Rational(v.numerator, v.denominator) for v in got] == expected


def test_step_uses_source_mass():
    # from a point mass on the source only the source's row matters
    problem = benchmarks.builtin("running")
    mdp = problem.mdp
    pol = benchmarks.reference_policy("running")
    for k in range(mdp.n):
        mu = tuple(F(int(i == k)) for i in range(mdp.n))
        nxt = step(mu, pol, mdp)
        expected = [F(0)] * mdp.n
        for a, p in pol.action_probabilities(mdp, k).items():
            for i, q in mdp.delta(k, a).items():
                expected[i] += p * q
        assert list(nxt) == expected


def test_negation_rules():
    r = AffineRow(F(-9, 10), (F(1),))
    n = negate_row(r)
    assert n.strict and n.constant == F(9, 10) and n.coefficients == (F(-1),)
    s = AffineRow(F(0), (F(1),), strict=True)
    assert negate_row(s) == AffineRow(F(0), (F(-1),))
    assert negate_row(negate_row(r)) == r


def test_policy_file_roundtrip_and_errors():
    problem = benchmarks.builtin("running")
    pol = benchmarks.reference_policy("running")
    text = format_policy(pol, problem.mdp)
    again = parse_policy(text, problem.mdp)
    for s in range(problem.mdp.n):
        assert again.action_probabilities(problem.mdp, s) == pol.action_probabilities(problem.mdp, s)
    with pytest.raises(PolicyError):
        parse_policy("p_0_0: x:1\n", problem.mdp)
    with pytest.raises(ModelError):
        parse_policy("p_0_0: d:1/2 s:1/4\n", problem.mdp)
