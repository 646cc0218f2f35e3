"""Quantifier elimination for horn clauses over the simplex.

Affine conclusions go through the strict Farkas translation: the conclusion
must equal a nonnegative combination of the constant 1 and the premises,
coefficient by coefficient.  Polynomial conclusions (distributional
policies) use the bounded Handelman translation, which also allows products
of up to K premises.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

from .certgen import ConstraintSystem, GroundConstraint, HornClause, UnknownRegistry
from .symbolic import Poly, SymbolicAffine, XPoly, match_coefficients


class TranslationError(ValueError):
    pass


class FreshNames:
    """Counters for multiplier and epsilon unknowns.  Shared across all the
    clauses of one system so no name is ever reused."""

    def __init__(self, registry: UnknownRegistry | None = None):
        self.registry = registry if registry is not None else UnknownRegistry()
        self._farkas = 0
        self._eps = 0

    def multiplier(self) -> Poly:
        self._farkas += 1
        return self.registry.add(f"f_{self._farkas:03d}", "farkas")

    def epsilon(self) -> Poly:
        self._eps += 1
        return self.registry.add(f"eps_{self._eps}", "epsilon")


@dataclass
class FarkasOutput:
    multipliers: list[str]
    equations: list[GroundConstraint]
    nonneg: list[GroundConstraint]

    @property
    def constraints(self) -> list[GroundConstraint]:
        return self.nonneg + self.equations


@dataclass
class HandelmanOutput:
    multipliers: list[str]
    basis: list[tuple[int, ...]]
    equations: list[GroundConstraint]
    nonneg: list[GroundConstraint]

    @property
    def constraints(self) -> list[GroundConstraint]:
        return self.nonneg + self.equations


def epsilon_shift(clause: HornClause, names: FreshNames) -> tuple[HornClause, GroundConstraint]:
    """Replace a strict conclusion ``e > 0`` by ``e - eps >= 0`` with ``eps > 0``."""
    if not clause.rhs_strict:
        raise TranslationError("epsilon shift needs a strict conclusion")
    eps = names.epsilon()
    if isinstance(clause.rhs, SymbolicAffine):
        rhs = clause.rhs - eps
    else:
        rhs = clause.rhs - XPoly.const(eps)
    shifted = HornClause(list(clause.lhs), rhs, rhs_strict=False, note=clause.note)
    return shifted, GroundConstraint(eps, ">", "epsilon")


def farkas_translate(clause: HornClause, names: FreshNames) -> FarkasOutput:
    """``rhs == y_0 + sum_j y_j * lhs_j`` coefficient-wise with ``y >= 0``.

    Strict and non-strict premises are treated alike.
    """
    if clause.rhs_strict:
        raise TranslationError("apply epsilon_shift to strict conclusions first")
    if not isinstance(clause.rhs, SymbolicAffine):
        if clause.rhs.degree > 1:
            raise TranslationError("Farkas translation needs an affine conclusion")
        rhs = clause.rhs
    else:
        rhs = clause.rhs.to_xpoly()
    y0 = names.multiplier()
    ys = [y0]
    combo = XPoly.const(y0)
    for e, _strict in clause.lhs:
        y = names.multiplier()
        ys.append(y)
        combo = combo + e.to_xpoly() * y
    equations = [GroundConstraint(d, "=", clause.note) for d in match_coefficients(rhs, combo)]
    nonneg = [GroundConstraint(y, ">=", clause.note) for y in ys]
    return FarkasOutput([_name(y) for y in ys], equations, nonneg)


def handelman_basis(num_rows: int, k: int) -> list[tuple[int, ...]]:
    """All multisets of at most ``k`` row indices, the empty product first."""
    out: list[tuple[int, ...]] = []
    for size in range(k + 1):
        out.extend(itertools.combinations_with_replacement(range(num_rows), size))
    return out


def handelman_basis_size(num_rows: int, k: int) -> int:
    return sum(comb(num_rows + t - 1, t) for t in range(k + 1))


def handelman_translate(clause: HornClause, k: int, names: FreshNames) -> HandelmanOutput:
    """``rhs == y_0 + sum_P y_P * prod(P)`` over products of at most ``k``
    premises, with ``y_0 > 0`` and every other ``y_P >= 0``."""
    if k < 1:
        raise TranslationError(f"Handelman degree must be at least 1, got {k}")
    if clause.rhs_strict:
        raise TranslationError("apply epsilon_shift to strict conclusions first")
    rows = [e.to_xpoly() for e, _ in clause.lhs]
    basis = handelman_basis(len(rows), k)
    combo = XPoly()
    ys = []
    nonneg = []
    for prod in basis:
        y = names.multiplier()
        ys.append(y)
        term = XPoly.const(1)
        for idx in prod:
            term = term * rows[idx]
        combo = combo + term * y
        nonneg.append(GroundConstraint(y, ">" if not prod else ">=", clause.note))
    equations = [GroundConstraint(d, "=", clause.note)
                 for d in match_coefficients(clause.rhs_poly(), combo)]
    return HandelmanOutput([_name(y) for y in ys], basis, equations, nonneg)


def _name(p: Poly) -> str:
    (mono, _), = p.items()
    return mono[0]


@dataclass
class TranslatedSystem:
    """Purely existential constraints, ready for an SMT solver."""

    constraints: list[GroundConstraint]
    unknowns: UnknownRegistry
    source: ConstraintSystem | None = None
    clause_outputs: list = field(default_factory=list)

    @property
    def nonlinear(self) -> bool:
        return any(c.poly.degree > 1 for c in self.constraints)


def translate_system(system: ConstraintSystem, handelman_k: int = 2) -> TranslatedSystem:
    """Eliminate every horn clause of ``system``; ground constraints pass through."""
    registry = UnknownRegistry()
    for u in system.unknowns:
        registry.add(u.name, u.kind)
    names = FreshNames(registry)
    constraints = list(system.ground)
    outputs = []
    for clause in system.horn:
        if clause.rhs_strict:
            clause, positive = epsilon_shift(clause, names)
            constraints.append(positive)
        if clause.rhs_poly().degree <= 1:
            out = farkas_translate(clause, names)
        else:
            out = handelman_translate(clause, handelman_k, names)
        outputs.append(out)
        constraints.extend(out.constraints)
    return TranslatedSystem(constraints, registry, system, outputs)
