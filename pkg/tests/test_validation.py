from fractions import Fraction as F

import pytest

from dracert.model import (AffineForm, AffineRow, AffineSetSpec, Certificate, ConcretePolicy,
                           PolicyError, parse_model)
from dracert.validation import (check_certificate, default_bound, format_certificate,
                                parse_certificate, rank_trace, simulate)

from conftest import CONFIG

CHAIN = """\
states: s1 s2
actions s1: a
actions s2: a
trans s1 a -> {dest}:1
trans s2 a -> {back}:1
target:
  {target}
safe:
init-dist: 1 0
"""


def chain(dest, back, target):
    return parse_model(CHAIN.format(dest=dest, back=back, target=target))


NO_POLICY = ConcretePolicy.memoryless({})


def test_running_artifacts_pass(running):
    report = check_certificate(running.problem, running.policy, running.certificate, CONFIG)
    assert report.passed and report.complete
    assert [c.index for c in report.conditions] == [1, 2, 3, 4, 5]


def test_zero_rank_fails_decrease_at_mu0(running):
    cert = running.certificate.with_rank(AffineForm.constant_form(0, running.problem.mdp.n))
    report = check_certificate(running.problem, running.policy, cert, CONFIG)
    failed = report.condition(5)
    assert not failed.passed
    assert failed.witness is not None
    assert cert.invariant.contains(failed.witness)


def test_trivial_invariant_fails_safety(running):
    n = running.problem.mdp.n
    everything = AffineSetSpec(n, (AffineRow(F(0), (F(0),) * n),))
    cert = Certificate(running.certificate.rank, everything)
    report = check_certificate(running.problem, running.policy, cert, CONFIG)
    failed = report.condition(3)
    assert not failed.passed
    assert not running.problem.safe.contains(failed.witness)


def test_running_simulation_reaches_within_bound(running):
    mu0 = running.problem.init_dist
    verdict = simulate(running.problem, running.policy, mu0, cert=running.certificate)
    assert verdict.reached
    assert verdict.index <= default_bound(running.certificate, mu0)
    ranks = rank_trace(running.certificate, verdict.trace)
    assert all(r >= 0 for r in ranks)
    assert all(a - b >= 1 for a, b in zip(ranks, ranks[1:]))


def test_identity_chain_exhausts_bound():
    p = chain("s1", "s2", "-9/10 + 1*x2 >= 0")
    verdict = simulate(p, NO_POLICY, (F(1), F(0)), bound=10)
    assert verdict.outcome == "bound-exhausted"
    assert len(verdict.trace) == 11


def test_swap_chain_reaches_in_one_step():
    p = chain("s2", "s1", "-1 + 1*x2 >= 0")
    verdict = simulate(p, NO_POLICY, (F(1), F(0)), bound=5)
    assert verdict.reached and verdict.index == 1


def test_rank_trace_edge_cases():
    const = Certificate(AffineForm(F(3), (F(0), F(0))), AffineSetSpec(2, ()))
    assert rank_trace(const, [(F(1), F(0)), (F(0), F(1))]) == [3, 3]
    assert rank_trace(const, []) == []


def test_certificate_file_roundtrip(running):
    text = format_certificate(running.certificate)
    assert parse_certificate(text, running.problem.mdp.n) == running.certificate


def test_strict_invariant_rows_are_refused():
    with pytest.raises(ValueError):
        Certificate(AffineForm(F(0), (F(0),)), AffineSetSpec(1, (AffineRow(F(0), (F(1),), True),)))


def test_swap_chain_certificate():
    # off the target x1 > 1/2, so R = 2 x1 drops by more than 1; I = everything
    p = chain("s2", "s2", "-1/2 + 1*x2 >= 0")
    cert = Certificate(AffineForm(F(0), (F(2), F(0))), AffineSetSpec(2, ()))
    report = check_certificate(p, NO_POLICY, cert, CONFIG)
    assert report.passed, report.summary()


def test_check_refuses_bad_policy(running):
    bad = ConcretePolicy.memoryless({(0, "d"): F(1, 2), (0, "s"): F(1, 4)})
    with pytest.raises(PolicyError):
        check_certificate(running.problem, bad, running.certificate, CONFIG)


def test_trace_is_capped_but_simulation_continues():
    p = chain("s1", "s2", "-9/10 + 1*x2 >= 0")
    verdict = simulate(p, NO_POLICY, (F(1), F(0)), bound=10, trace_limit=3)
    assert verdict.outcome == "bound-exhausted"
    assert len(verdict.trace) == 4
    assert verdict.steps == 10
    assert verdict.final == (F(1), F(0))


def test_constant_rank_is_flagged_during_simulation():
    p = chain("s2", "s2", "-1 + 1*x2 >= 0")
    flat = Certificate(AffineForm(F(5), (F(0), F(0))), AffineSetSpec(2, ()))
    verdict = simulate(p, NO_POLICY, (F(1), F(0)), cert=flat)
    assert verdict.reached and verdict.index == 1
    assert verdict.rank_decreasing is False
    good = Certificate(AffineForm(F(0), (F(2), F(0))), AffineSetSpec(2, ()))
    assert simulate(p, NO_POLICY, (F(1), F(0)), cert=good).rank_decreasing is True
