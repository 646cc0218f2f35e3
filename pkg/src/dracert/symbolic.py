"""Exact polynomial machinery over template unknowns.

Two layers are provided:

* :class:`Poly` -- a polynomial with :class:`~fractions.Fraction` coefficients
  over named unknowns (policy probabilities, certificate coefficients, Farkas
  multipliers, ...).
* :class:`XPoly` -- a polynomial in the state-probability variables
  ``x_0 .. x_{n-1}`` whose coefficients are :class:`Poly` values.
  :class:`SymbolicAffine` is the degree-one special case used everywhere
  except the Handelman translation.

Everything is exact; no floats are ever produced.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Union

Number = Union[int, Fraction]

UNKNOWN_KINDS = ("policy", "invariant", "rank", "init", "farkas", "epsilon")


class SymbolicError(Exception):
    pass


class MissingUnknownError(SymbolicError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"no value assigned to unknown {self.name!r}"


@dataclass(frozen=True, order=True)
class Unknown:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in UNKNOWN_KINDS:
            raise SymbolicError(f"unknown kind {self.kind!r}")

    def poly(self) -> "Poly":
        return Poly.var(self.name)


def format_rational(value: Number) -> str:
    """``3`` or ``-3/4``; never any whitespace."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def parse_rational(text: str) -> Fraction:
    text = text.strip()
    if not text or any(c.isspace() for c in text):
        raise ValueError(f"malformed rational {text!r}")
    try:
        num, sep, den = text.partition("/")
        if sep:
            if den.startswith(("-", "+")):
                raise ValueError
            d = int(den)
            if d == 0:
                raise ValueError
            return Fraction(int(num), d)
        if "." in text or "e" in text.lower():
            return Fraction(text)
        return Fraction(int(text))
    except ValueError:
        raise ValueError(f"malformed rational {text!r}") from None


Monomial = tuple  # sorted tuple of unknown names, repetitions allowed


def _mono_key(m: Monomial):
    # graded lexicographic
    return (len(m), m)


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    return tuple(sorted(a + b))


class Poly:
    """Polynomial over unknowns with exact rational coefficients.

    Instances are treated as immutable; all arithmetic returns new objects.
    Zero coefficients are never stored.
    """

    __slots__ = ("terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, Number] | None = None):
        clean = {}
        if terms:
            for mono, coef in terms.items():
                key = tuple(sorted(mono))
                v = clean.get(key, 0) + Fraction(coef)
                if v:
                    clean[key] = v
                else:
                    clean.pop(key, None)
        self.terms: dict[Monomial, Fraction] = clean
        self._hash = None

    @classmethod
    def _raw(cls, terms: dict) -> "Poly":
        p = cls.__new__(cls)
        p.terms = terms
        p._hash = None
        return p

    @classmethod
    def const(cls, value: Number) -> "Poly":
        return cls._raw({(): Fraction(value)} if value else {})

    @classmethod
    def var(cls, name: str) -> "Poly":
        return cls._raw({(name,): Fraction(1)})

    @staticmethod
    def lift(value: "Poly | Number") -> "Poly":
        if isinstance(value, Poly):
            return value
        return Poly.const(value)

    # --- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = Poly.lift(other)
        if not other.terms:
            return self
        if not self.terms:
            return other
        out = dict(self.terms)
        for mono, coef in other.terms.items():
            v = out.get(mono, 0) + coef
            if v:
                out[mono] = v
            else:
                out.pop(mono, None)
        return Poly._raw(out)

    __radd__ = __add__

    def __neg__(self):
        return Poly._raw({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-Poly.lift(other))

    def __rsub__(self, other):
        return Poly.lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly):
            other = Fraction(other)
            if not other:
                return Poly()
            if other == 1:
                return self
            return Poly._raw({m: c * other for m, c in self.terms.items()})
        out: dict[Monomial, Fraction] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = _mono_mul(m1, m2)
                v = out.get(m, 0) + c1 * c2
                if v:
                    out[m] = v
                else:
                    out.pop(m, None)
        return Poly._raw(out)

    __rmul__ = __mul__

    # --- inspection -------------------------------------------------------
    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        if isinstance(other, Poly):
            return self.terms == other.terms
        if isinstance(other, (int, Fraction)):
            return self.terms == Poly.const(other).terms
        return NotImplemented

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self.terms.items()))
        return self._hash

    def items(self) -> list[tuple[Monomial, Fraction]]:
        """Terms in canonical (graded lexicographic) order."""
        return sorted(self.terms.items(), key=lambda t: _mono_key(t[0]))

    def canonical(self) -> "Poly":
        return Poly(dict(self.items()))

    @property
    def degree(self) -> int:
        return max((len(m) for m in self.terms), default=0)

    def is_constant(self) -> bool:
        return all(not m for m in self.terms)

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise SymbolicError(f"{self} is not constant")
        return self.terms.get((), Fraction(0))

    def unknowns(self) -> set[str]:
        return {name for mono in self.terms for name in mono}

    def evaluate(self, assignment: Mapping[str, Number]) -> Fraction:
        total = Fraction(0)
        for mono, coef in self.terms.items():
            term = coef
            for name in mono:
                try:
                    term *= assignment[name]
                except KeyError:
                    raise MissingUnknownError(name) from None
            total += term
        return total

    def substitute(self, assignment: Mapping[str, Number]) -> "Poly":
        """Partially evaluate: replace the assigned unknowns by constants."""
        out = Poly()
        for mono, coef in self.terms.items():
            c = Fraction(coef)
            rest = []
            for name in mono:
                if name in assignment:
                    c *= assignment[name]
                else:
                    rest.append(name)
            out = out + Poly({tuple(rest): c})
        return out

    def __repr__(self):
        return f"Poly({self})"

    def __str__(self):
        return format_poly(self)


def _format_term(mono: Monomial, coef: Fraction, first: bool) -> str:
    sign = "-" if coef < 0 else ("" if first else "+")
    mag = abs(coef)
    body = "*".join(mono)
    if not mono:
        text = format_rational(mag)
    else:
        if mag.numerator != 1:
            body = f"{mag.numerator}*{body}"
        if mag.denominator != 1:
            body = f"{body}/{mag.denominator}"
        text = body
    if first:
        return f"{sign}{text}"
    return f"{sign} {text}"


def format_poly(p: Poly) -> str:
    # constant last, like a hand-written equation
    items = sorted(p.terms.items(), key=lambda t: (not t[0], t[0]))
    if not items:
        return "0"
    return " ".join(_format_term(m, c, i == 0) for i, (m, c) in enumerate(items))


def poly_add(p: Poly, q: Poly) -> Poly:
    return p + q


def poly_mul(p: Poly, q: Poly) -> Poly:
    return p * q


XMonomial = tuple  # sorted tuple of state indices


class XPoly:
    """Polynomial in state variables with :class:`Poly` coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[XMonomial, Poly | Number] | None = None):
        clean: dict[XMonomial, Poly] = {}
        if terms:
            for mono, coef in terms.items():
                coef = Poly.lift(coef)
                if coef:
                    key = tuple(sorted(mono))
                    clean[key] = clean[key] + coef if key in clean else coef
                    if not clean[key]:
                        del clean[key]
        self.terms = clean

    @classmethod
    def _raw(cls, terms):
        p = cls.__new__(cls)
        p.terms = terms
        return p

    @classmethod
    def const(cls, value: Poly | Number) -> "XPoly":
        return cls({(): value})

    def __add__(self, other):
        if not isinstance(other, XPoly):
            other = XPoly.const(other)
        out = dict(self.terms)
        for mono, coef in other.terms.items():
            v = out[mono] + coef if mono in out else coef
            if v:
                out[mono] = v
            else:
                out.pop(mono, None)
        return XPoly._raw(out)

    __radd__ = __add__

    def __neg__(self):
        return XPoly._raw({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, XPoly):
            other = XPoly.const(other)
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, XPoly):
            other = Poly.lift(other)
            if not other:
                return XPoly()
            return XPoly._raw({m: c * other for m, c in self.terms.items()
                               if c * other})
        out: dict[XMonomial, Poly] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = tuple(sorted(m1 + m2))
                v = c1 * c2
                v = out[m] + v if m in out else v
                if v:
                    out[m] = v
                else:
                    out.pop(m, None)
        return XPoly._raw(out)

    __rmul__ = __mul__

    def __eq__(self, other):
        if isinstance(other, XPoly):
            return self.terms == other.terms
        return NotImplemented

    def __bool__(self):
        return bool(self.terms)

    @property
    def degree(self) -> int:
        return max((len(m) for m in self.terms), default=0)

    @property
    def unknown_degree(self) -> int:
        return max((c.degree for c in self.terms.values()), default=0)

    def coefficient(self, mono: XMonomial) -> Poly:
        return self.terms.get(tuple(sorted(mono)), Poly())

    def unknowns(self) -> set[str]:
        out: set[str] = set()
        for c in self.terms.values():
            out |= c.unknowns()
        return out

    def evaluate(self, x, assignment: Mapping[str, Number] | None = None) -> Fraction:
        assignment = assignment or {}
        total = Fraction(0)
        for mono, coef in self.terms.items():
            term = coef.evaluate(assignment)
            for i in mono:
                term *= x[i]
            total += term
        return total

    def substitute(self, assignment: Mapping[str, Number]) -> "XPoly":
        return XPoly({m: c.substitute(assignment) for m, c in self.terms.items()})

    def __repr__(self):
        parts = [f"({c})*{'*'.join(f'x{i + 1}' for i in m) or '1'}"
                 for m, c in sorted(self.terms.items(), key=lambda t: (len(t[0]), t[0]))]
        return "XPoly(" + " + ".join(parts) + ")"


class SymbolicAffine:
    """``constant + sum_i coefficients[i] * x_i`` with symbolic coefficients."""

    __slots__ = ("constant", "coefficients")

    def __init__(self, constant: Poly | Number = 0,
                 coefficients: Mapping[int, Poly | Number] | None = None):
        self.constant = Poly.lift(constant)
        coeffs = {}
        for i, c in (coefficients or {}).items():
            c = Poly.lift(c)
            if c:
                coeffs[i] = c
        self.coefficients: dict[int, Poly] = coeffs

    @classmethod
    def from_rationals(cls, constant: Number, coefficients: Iterable[Number]) -> "SymbolicAffine":
        return cls(constant, {i: c for i, c in enumerate(coefficients) if c})

    def coefficient(self, i: int) -> Poly:
        return self.coefficients.get(i, Poly())

    def __add__(self, other):
        if not isinstance(other, SymbolicAffine):
            return SymbolicAffine(self.constant + Poly.lift(other), self.coefficients)
        coeffs = dict(self.coefficients)
        for i, c in other.coefficients.items():
            coeffs[i] = coeffs[i] + c if i in coeffs else c
        return SymbolicAffine(self.constant + other.constant, coeffs)

    __radd__ = __add__

    def __neg__(self):
        return SymbolicAffine(-self.constant, {i: -c for i, c in self.coefficients.items()})

    def __sub__(self, other):
        if not isinstance(other, SymbolicAffine):
            return self + (-Poly.lift(other))
        return self + (-other)

    def scale(self, factor: Poly | Number) -> "SymbolicAffine":
        factor = Poly.lift(factor)
        return SymbolicAffine(self.constant * factor,
                              {i: c * factor for i, c in self.coefficients.items()})

    __mul__ = scale
    __rmul__ = scale

    def __eq__(self, other):
        if isinstance(other, SymbolicAffine):
            return (self.constant == other.constant
                    and self.coefficients == other.coefficients)
        return NotImplemented

    def unknowns(self) -> set[str]:
        out = set(self.constant.unknowns())
        for c in self.coefficients.values():
            out |= c.unknowns()
        return out

    @property
    def unknown_degree(self) -> int:
        return max([self.constant.degree] + [c.degree for c in self.coefficients.values()])

    def is_concrete(self) -> bool:
        return not self.unknowns()

    def substitute(self, assignment: Mapping[str, Number]) -> "SymbolicAffine":
        return SymbolicAffine(self.constant.substitute(assignment),
                              {i: c.substitute(assignment) for i, c in self.coefficients.items()})

    def to_xpoly(self) -> XPoly:
        terms: dict = {(): self.constant}
        for i, c in self.coefficients.items():
            terms[(i,)] = c
        return XPoly(terms)

    def rational_vector(self, n: int) -> tuple[Fraction, tuple[Fraction, ...]]:
        """(constant, coefficients) of a concrete affine form."""
        return (self.constant.constant_value(),
                tuple(self.coefficient(i).constant_value() for i in range(n)))

    def __repr__(self):
        parts = [str(self.constant)]
        for i in sorted(self.coefficients):
            parts.append(f"({self.coefficients[i]})*x{i + 1}")
        return "SymbolicAffine(" + " + ".join(parts) + ")"


def affine_eval(e: SymbolicAffine, x, assignment: Mapping[str, Number] | None = None) -> Fraction:
    """Exact value of ``e`` at the point ``x`` under ``assignment``."""
    assignment = assignment or {}
    total = e.constant.evaluate(assignment)
    for i, c in e.coefficients.items():
        if x[i]:
            total += c.evaluate(assignment) * x[i]
        else:
            # still resolve every unknown so missing ones are reported
            c.evaluate(assignment)
    return total


def match_coefficients(lhs: SymbolicAffine | XPoly, rhs: SymbolicAffine | XPoly) -> list[Poly]:
    """Equations ``lhs_m - rhs_m = 0`` for every x-monomial ``m``.

    Trivial ``0 = 0`` equations are dropped. The returned list is ordered by
    monomial (constant term first, then ``x_1``, ...).
    """
    if isinstance(lhs, SymbolicAffine):
        lhs = lhs.to_xpoly()
    if isinstance(rhs, SymbolicAffine):
        rhs = rhs.to_xpoly()
    monos = set(lhs.terms) | set(rhs.terms)
    out = []
    for mono in sorted(monos, key=lambda m: (len(m), m)):
        diff = lhs.coefficient(mono) - rhs.coefficient(mono)
        if diff:
            out.append(diff)
    return out


def iter_unknowns(polys: Iterable[Poly]) -> Iterator[str]:
    seen = set()
    for p in polys:
        for name in sorted(p.unknowns()):
            if name not in seen:
                seen.add(name)
                yield name
