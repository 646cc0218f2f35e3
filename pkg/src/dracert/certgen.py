"""Certificate templates and constraint collection.

A template fixes the shape of every unknown object (policy, ranking
function, invariant, initial distribution) as affine expressions whose
coefficients are named unknowns.  :func:`collect_constraints` then turns the
reach-avoid conditions into ground constraints over unknowns only, plus
universally quantified horn clauses over the state variables which the
:mod:`dracert.qelim` module eliminates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import AffineRow, ConcretePolicy, ModelError, ProblemSpec, negate_row
from .symbolic import Poly, SymbolicAffine, Unknown, XPoly, format_poly

RELATIONS = (">=", ">", "=")


class TemplateError(ModelError):
    pass


@dataclass(frozen=True)
class GroundConstraint:
    """``poly (>= | > | =) 0`` over unknowns only."""

    poly: Poly
    relation: str
    note: str = ""

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"bad relation {self.relation!r}")

    def holds(self, assignment) -> bool:
        v = self.poly.evaluate(assignment)
        if self.relation == ">=":
            return v >= 0
        if self.relation == ">":
            return v > 0
        return v == 0

    def __str__(self):
        return f"{format_poly(self.poly)} {self.relation} 0"


@dataclass
class HornClause:
    """``forall x. AND(lhs) => rhs``.

    Each side is an expression paired with a strictness flag, read as
    ``e >= 0`` or ``e > 0``.  The right-hand side is affine in x except for
    distributional policies, where it is an :class:`XPoly`.
    """

    lhs: list[tuple[SymbolicAffine, bool]]
    rhs: SymbolicAffine | XPoly
    rhs_strict: bool = False
    note: str = ""

    def rhs_poly(self) -> XPoly:
        return self.rhs.to_xpoly() if isinstance(self.rhs, SymbolicAffine) else self.rhs

    def holds_at(self, x, assignment) -> bool:
        """Truth of the implication at one concrete point."""
        for e, strict in self.lhs:
            v = e.to_xpoly().evaluate(x, assignment)
            if v < 0 or (strict and v == 0):
                return True
        v = self.rhs_poly().evaluate(x, assignment)
        return v > 0 if self.rhs_strict else v >= 0


class UnknownRegistry:
    """Ordered set of unknowns; rejects duplicate names."""

    def __init__(self):
        self._items: dict[str, Unknown] = {}

    def add(self, name: str, kind: str) -> Poly:
        if name in self._items:
            raise TemplateError(f"duplicate unknown {name!r}")
        self._items[name] = Unknown(name, kind)
        return Poly.var(name)

    def __contains__(self, name):
        return name in self._items

    def __iter__(self):
        return iter(self._items.values())

    def __len__(self):
        return len(self._items)

    def names(self, kind: str | None = None) -> list[str]:
        return [u.name for u in self._items.values() if kind is None or u.kind == kind]

    def kind(self, name: str) -> str:
        return self._items[name].kind


@dataclass
class Templates:
    problem: ProblemSpec
    template_size: int
    registry: UnknownRegistry
    rank: SymbolicAffine
    invariant: list[SymbolicAffine]
    init_vars: list[Poly] | None = None
    policy_vars: dict[tuple[int, str], Poly] = field(default_factory=dict)
    numerators: dict[tuple[int, str], SymbolicAffine] = field(default_factory=dict)
    denominators: dict[int, SymbolicAffine] = field(default_factory=dict)
    concrete_policy: ConcretePolicy | None = None

    @property
    def n(self) -> int:
        return self.problem.mdp.n

    @property
    def policy_kind(self) -> str:
        if self.concrete_policy is not None:
            return "concrete"
        return "distributional" if self.denominators else "memoryless"

    def memoryless_probability(self, s: int, a: str) -> Poly:
        """Symbolic or concrete ``p_{s,a}`` (memoryless or concrete policies)."""
        if self.concrete_policy is not None:
            mdp = self.problem.mdp
            return Poly.const(self.concrete_policy.action_probabilities(mdp, s)[a])
        if len(self.problem.mdp.actions[s]) == 1:
            # pinned to 1 by the row-sum constraint; substituting keeps the
            # step expressions linear at forced states
            return Poly.const(1)
        return self.policy_vars[(s, a)]


def _affine_template(registry: UnknownRegistry, prefix: str, n: int, kind: str) -> SymbolicAffine:
    # index 1 is the constant, index i + 1 the coefficient of state i
    const = registry.add(f"{prefix}_1", kind)
    coeffs = {i: registry.add(f"{prefix}_{i + 2}", kind) for i in range(n)}
    return SymbolicAffine(const, coeffs)


def instantiate_templates(problem: ProblemSpec, template_size: int) -> Templates:
    if template_size < 1:
        raise TemplateError(f"template size must be at least 1, got {template_size}")
    mdp = problem.mdp
    n = mdp.n
    reg = UnknownRegistry()
    concrete = None
    policy_vars: dict = {}
    nums: dict = {}
    dens: dict = {}
    if problem.task == "verify":
        if problem.given_policy is None:
            raise TemplateError("verification needs a concrete policy")
        concrete = problem.given_policy
    elif problem.policy_class == "memoryless":
        for s in range(n):
            for a in mdp.actions[s]:
                policy_vars[(s, a)] = reg.add(f"p_{mdp.states[s]}_{a}", "policy")
    else:
        for s in range(n):
            if len(mdp.actions[s]) == 1:
                continue
            dens[s] = _affine_template(reg, f"den_{mdp.states[s]}", n, "policy")
            for a in mdp.actions[s]:
                nums[(s, a)] = _affine_template(reg, f"num_{mdp.states[s]}_{a}", n, "policy")
    init_vars = None
    if problem.quantifier == "existential":
        init_vars = [reg.add(f"m_{i + 1}", "init") for i in range(n)]
    rank = _affine_template(reg, "rank", n, "rank")
    inv = [_affine_template(reg, f"inv_{j + 1}", n, "invariant") for j in range(template_size)]
    return Templates(problem=problem, template_size=template_size, registry=reg, rank=rank,
                     invariant=inv, init_vars=init_vars, policy_vars=policy_vars,
                     numerators=nums, denominators=dens, concrete_policy=concrete)


@dataclass
class ConstraintSystem:
    ground: list[GroundConstraint]
    horn: list[HornClause]
    unknowns: UnknownRegistry
    templates: Templates

    def dump(self) -> str:
        """Human-readable listing, one constraint per line."""
        lines = [str(g) for g in self.ground]
        for c in self.horn:
            lhs = " & ".join(f"{_fmt_affine(e)} {'>' if s else '>='} 0" for e, s in c.lhs)
            rhs = _fmt_xpoly(c.rhs_poly())
            lines.append(f"[{c.note}] {lhs} => {rhs} {'>' if c.rhs_strict else '>='} 0")
        return "\n".join(lines) + ("\n" if lines else "")


def _fmt_affine(e: SymbolicAffine) -> str:
    return _fmt_xpoly(e.to_xpoly())


def _fmt_xpoly(p: XPoly) -> str:
    parts = []
    for mono, coef in sorted(p.terms.items(), key=lambda t: (len(t[0]), t[0])):
        xs = "*".join(f"x{i + 1}" for i in mono)
        c = format_poly(coef)
        parts.append(f"({c})*{xs}" if xs else f"({c})")
    return " + ".join(parts) or "0"


def negate_target_row(r: AffineRow) -> AffineRow:
    return negate_row(r)


def row_affine(r: AffineRow) -> SymbolicAffine:
    return SymbolicAffine.from_rationals(r.constant, r.coefficients)


def simplex_rows(n: int) -> list[tuple[SymbolicAffine, bool]]:
    rows = [(SymbolicAffine(0, {i: 1}), False) for i in range(n)]
    rows.append((SymbolicAffine(-1, {i: 1 for i in range(n)}), False))
    rows.append((SymbolicAffine(1, {i: -1 for i in range(n)}), False))
    return rows


def _after_step(t: Templates, e: SymbolicAffine) -> SymbolicAffine:
    """``e(step(x))`` for memoryless or concrete policies.

    ``step(x)_i = sum_{k,a} p_{k,a} delta(k,a,i) x_k`` so the result has
    constant ``e_0`` and coefficient ``sum_a p_{k,a} sum_i delta(k,a,i) e_i``
    at ``x_k``.
    """
    mdp = t.problem.mdp
    coeffs = {}
    for k in range(mdp.n):
        acc = Poly()
        for a in mdp.actions[k]:
            inner = Poly()
            for i, q in mdp.delta(k, a).items():
                inner = inner + e.coefficient(i) * q
            if inner:
                acc = acc + t.memoryless_probability(k, a) * inner
        coeffs[k] = acc
    return SymbolicAffine(e.constant, coeffs)


def _after_step_cleared(t: Templates, e: SymbolicAffine) -> tuple[XPoly, XPoly]:
    """``(D(x), D(x) * e(step(x)))`` for distributional templates, where ``D``
    is the product of the denominators of every multi-action state that feeds
    a nonzero contribution."""
    mdp = t.problem.mdp
    # per source state k: (denominator or None, numerator-weighted inner sum)
    contributions: list[tuple[int | None, XPoly]] = []
    for k in range(mdp.n):
        acts = mdp.actions[k]
        xk = XPoly({(k,): 1})
        if k not in t.denominators:
            inner = Poly()
            for i, q in mdp.delta(k, acts[0]).items():
                inner = inner + e.coefficient(i) * q
            if inner:
                contributions.append((None, xk * inner))
            continue
        total = XPoly()
        for a in acts:
            inner = Poly()
            for i, q in mdp.delta(k, a).items():
                inner = inner + e.coefficient(i) * q
            if inner:
                total = total + t.numerators[(k, a)].to_xpoly() * inner
        if total:
            contributions.append((k, xk * total))
    # fold one denominator at a time: with P the product so far and A the
    # cleared sum so far, adding state k gives A*d_k + term_k*P and P*d_k
    full = XPoly.const(1)
    result = XPoly.const(e.constant)
    for k, term in contributions:
        if k is None:
            result = result + term
    for k, term in sorted((c for c in contributions if c[0] is not None),
                          key=lambda c: c[0]):
        den = t.denominators[k].to_xpoly()
        result = result * den + term * full
        full = full * den
    return full, result


def collect_constraints(problem: ProblemSpec, templates: Templates) -> ConstraintSystem:
    if problem.target is None or not problem.target.rows:
        raise TemplateError("the target set needs at least one row")
    t = templates
    n = problem.mdp.n
    ground: list[GroundConstraint] = []
    horn: list[HornClause] = []
    simplex = simplex_rows(n)
    inv_lhs = [(e, False) for e in t.invariant]
    distributional = t.policy_kind == "distributional"

    # policy well-formedness
    if t.policy_kind == "memoryless":
        mdp = problem.mdp
        for s in range(n):
            total = Poly()
            for a in mdp.actions[s]:
                p = t.policy_vars[(s, a)]
                ground.append(GroundConstraint(p, ">=", "policy"))
                total = total + p
            ground.append(GroundConstraint(total - 1, "=", "policy"))
    elif distributional:
        mdp = problem.mdp
        for s, den in sorted(t.denominators.items()):
            horn.append(HornClause(inv_lhs + simplex, den - 1, note="policy"))
            total = SymbolicAffine()
            for a in mdp.actions[s]:
                num = t.numerators[(s, a)]
                horn.append(HornClause(inv_lhs + simplex, num, note="policy"))
                total = total + num
            horn.append(HornClause(inv_lhs + simplex, total - den, note="policy"))
            horn.append(HornClause(inv_lhs + simplex, den - total, note="policy"))

    # initial distribution
    if problem.quantifier == "existential":
        m = t.init_vars
        for i in range(n):
            ground.append(GroundConstraint(m[i], ">=", "init"))
        ground.append(GroundConstraint(sum(m, Poly()) - 1, "=", "init"))
        for r in problem.init.rows:
            e = Poly.const(r.constant)
            for i, c in enumerate(r.coefficients):
                if c:
                    e = e + m[i] * c
            ground.append(GroundConstraint(e, ">" if r.strict else ">=", "init"))
        for e in t.invariant:
            val = e.constant
            for i, c in e.coefficients.items():
                val = val + c * m[i]
            ground.append(GroundConstraint(val, ">=", "inv-init"))
    elif problem.quantifier == "unit":
        mu0 = problem.init_dist
        for e in t.invariant:
            val = e.constant
            for i, c in e.coefficients.items():
                if mu0[i]:
                    val = val + c * mu0[i]
            ground.append(GroundConstraint(val, ">=", "inv-init"))
    else:
        init_lhs = [(row_affine(r), r.strict) for r in problem.init.rows]
        for e in t.invariant:
            horn.append(HornClause(init_lhs + simplex, e, note="inv-init"))

    not_target = [negate_target_row(r) for r in problem.target.rows]

    # closure of I \ T under one step
    for nt in not_target:
        lhs = inv_lhs + [(row_affine(nt), nt.strict)] + simplex
        for e in t.invariant:
            rhs = _after_step_cleared(t, e)[1] if distributional else _after_step(t, e)
            horn.append(HornClause(list(lhs), rhs, note="closure"))

    # safety
    for r in problem.safe.rows:
        horn.append(HornClause(inv_lhs + simplex, row_affine(r), rhs_strict=r.strict, note="safe"))

    # nonnegativity of R on I
    horn.append(HornClause(inv_lhs + simplex, t.rank, note="rank-nonneg"))

    # strict decrease of R until T: R(x) - R(step x) - 1 >= 0
    for nt in not_target:
        lhs = inv_lhs + [(row_affine(nt), nt.strict)] + simplex
        if distributional:
            factor, stepped = _after_step_cleared(t, t.rank)
            rhs = factor * (t.rank.to_xpoly() - 1) - stepped
        else:
            rhs = t.rank - _after_step(t, t.rank) - 1
        horn.append(HornClause(lhs, rhs, note="decrease"))

    return ConstraintSystem(ground=ground, horn=horn, unknowns=t.registry, templates=t)


def expected_clause_count(problem: ProblemSpec, template_size: int) -> int:
    """Closed-form horn clause count for memoryless or concrete policies."""
    n_t = len(problem.target.rows)
    n_h = len(problem.safe.rows)
    count = template_size * n_t + n_h + 1 + n_t
    if problem.quantifier == "universal":
        count += template_size
    return count
