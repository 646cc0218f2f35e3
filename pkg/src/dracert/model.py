"""MDPs viewed as transformers of state distributions.

Holds the core data model (MDP, affine distribution sets, problem
statements, concrete policies), the exact one-step transformer, and the
line-oriented model file format.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .symbolic import format_rational, parse_rational

Distribution = tuple  # tuple[Fraction, ...] indexed by state

QUANTIFIERS = ("unit", "existential", "universal")
TASKS = ("verify", "synthesize")
POLICY_CLASSES = ("memoryless", "distributional")


class ModelError(ValueError):
    """A model violates one of its structural invariants."""


class ParseError(ModelError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Mdp:
    states: tuple[str, ...]
    actions: tuple[tuple[str, ...], ...]
    # (state index, action name) -> {successor index: probability}
    transitions: Mapping[tuple[int, str], Mapping[int, Fraction]]

    def __post_init__(self):
        n = len(self.states)
        if len(set(self.states)) != n:
            raise ModelError("duplicate state names")
        if len(self.actions) != n:
            raise ModelError("need one action list per state")
        for s, acts in enumerate(self.actions):
            if not acts:
                raise ModelError(f"state {self.states[s]} has no available action")
            if len(set(acts)) != len(acts):
                raise ModelError(f"duplicate action at state {self.states[s]}")
            for a in acts:
                dist = self.transitions.get((s, a))
                if dist is None:
                    raise ModelError(f"missing transition for ({self.states[s]},{a})")
                total = sum(dist.values(), Fraction(0))
                if any(p < 0 for p in dist.values()):
                    raise ModelError(f"negative probability in transition for ({self.states[s]},{a})")
                if any(not 0 <= t < n for t in dist):
                    raise ModelError(f"successor out of range in ({self.states[s]},{a})")
                if total != 1:
                    raise ModelError(f"row {s + 1} of transition for ({self.states[s]},{a}) "
                                     f"sums to {format_rational(total)}")
        for (s, a) in self.transitions:
            if not 0 <= s < n or a not in self.actions[s]:
                raise ModelError(f"transition for unavailable action ({s},{a})")

    @property
    def n(self) -> int:
        return len(self.states)

    def index(self, state: str) -> int:
        try:
            return self.states.index(state)
        except ValueError:
            raise ModelError(f"unknown state {state!r}") from None

    def delta(self, s: int, a: str) -> Mapping[int, Fraction]:
        return self.transitions[(s, a)]

    @property
    def num_actions(self) -> int:
        return sum(len(a) for a in self.actions)

    @property
    def num_transitions(self) -> int:
        return sum(sum(1 for p in d.values() if p) for d in self.transitions.values())

    def is_chain(self) -> bool:
        return all(len(a) == 1 for a in self.actions)


@dataclass(frozen=True)
class AffineRow:
    """``constant + sum_i coefficients[i] * x_i  (>= | >)  0``."""

    constant: Fraction
    coefficients: tuple[Fraction, ...]
    strict: bool = False

    def value(self, x: Sequence[Fraction]) -> Fraction:
        return self.constant + sum((c * xi for c, xi in zip(self.coefficients, x) if c),
                                   Fraction(0))

    def holds(self, x: Sequence[Fraction]) -> bool:
        v = self.value(x)
        return v > 0 if self.strict else v >= 0

    def negate(self) -> "AffineRow":
        return negate_row(self)

    def __str__(self):
        return format_row(self)


def negate_row(row: AffineRow) -> AffineRow:
    """Complement of a single row: not(e >= 0) is -e > 0, not(e > 0) is -e >= 0."""
    return AffineRow(-row.constant, tuple(-c for c in row.coefficients), not row.strict)


@dataclass(frozen=True)
class AffineSetSpec:
    """Conjunction of affine rows, intersected with the probability simplex."""

    n: int
    rows: tuple[AffineRow, ...] = ()

    def __post_init__(self):
        for r in self.rows:
            if len(r.coefficients) != self.n:
                raise ModelError(f"row has {len(r.coefficients)} coefficients, expected {self.n}")

    def contains(self, x: Sequence[Fraction]) -> bool:
        return in_simplex(x) and all(r.holds(x) for r in self.rows)

    def violated_rows(self, x) -> list[int]:
        return [j for j, r in enumerate(self.rows) if not r.holds(x)]

    @property
    def strict(self) -> bool:
        return any(r.strict for r in self.rows)


def in_simplex(x: Sequence[Fraction]) -> bool:
    return all(v >= 0 for v in x) and sum(x, Fraction(0)) == 1


def row(n: int, constant, coefficients: Mapping[int, Fraction] | Sequence, strict=False) -> AffineRow:
    if isinstance(coefficients, Mapping):
        vec = [Fraction(0)] * n
        for i, c in coefficients.items():
            vec[i] += Fraction(c)
    else:
        vec = [Fraction(c) for c in coefficients]
    return AffineRow(Fraction(constant), tuple(vec), strict)


def check_distribution(mu: Sequence, n: int | None = None) -> Distribution:
    mu = tuple(Fraction(v) for v in mu)
    if n is not None and len(mu) != n:
        raise ModelError(f"distribution has {len(mu)} entries, expected {n}")
    if any(v < 0 for v in mu):
        raise ModelError("distribution has a negative entry")
    total = sum(mu, Fraction(0))
    if total != 1:
        raise ModelError(f"distribution sums to {format_rational(total)}")
    return mu


# --- policies -------------------------------------------------------------

@dataclass(frozen=True)
class AffineForm:
    """Concrete affine function of the distribution, ``c + sum_i a_i x_i``."""

    constant: Fraction
    coefficients: tuple[Fraction, ...]

    def value(self, x) -> Fraction:
        return self.constant + sum((c * xi for c, xi in zip(self.coefficients, x) if c),
                                   Fraction(0))

    @classmethod
    def constant_form(cls, value, n: int) -> "AffineForm":
        return cls(Fraction(value), (Fraction(0),) * n)


class PolicyError(ModelError):
    pass


@dataclass(frozen=True)
class ConcretePolicy:
    """A memoryless policy, or a distributionally memoryless one given as
    quotients of affine forms (``numerators[s, a] / denominators[s]``)."""

    kind: str
    probabilities: Mapping[tuple[int, str], Fraction] = field(default_factory=dict)
    numerators: Mapping[tuple[int, str], AffineForm] = field(default_factory=dict)
    denominators: Mapping[int, AffineForm] = field(default_factory=dict)

    @classmethod
    def memoryless(cls, probabilities: Mapping[tuple[int, str], Fraction]) -> "ConcretePolicy":
        return cls("memoryless", {k: Fraction(v) for k, v in probabilities.items()})

    @classmethod
    def distributional(cls, numerators, denominators) -> "ConcretePolicy":
        return cls("distributional", numerators=dict(numerators), denominators=dict(denominators))

    @property
    def is_memoryless(self) -> bool:
        return self.kind == "memoryless"

    def validate(self, mdp: Mdp) -> None:
        """Structural check. Memoryless rows must be exact distributions;
        distributional numerators must sum to the denominator identically."""
        keys = self.probabilities if self.is_memoryless else self.numerators
        for (s, a) in keys:
            if not 0 <= s < mdp.n or a not in mdp.actions[s]:
                state = mdp.states[s] if 0 <= s < mdp.n else s
                raise PolicyError(f"policy names unavailable action {a!r} at state {state}")
        for s in range(mdp.n):
            if self.is_memoryless:
                if len(mdp.actions[s]) == 1 and (s, mdp.actions[s][0]) not in self.probabilities:
                    continue
                row = [self.probabilities.get((s, a), Fraction(0)) for a in mdp.actions[s]]
                if any(p < 0 for p in row):
                    raise PolicyError(f"negative probability at state {mdp.states[s]}")
                total = sum(row, Fraction(0))
                if total != 1:
                    raise PolicyError(f"policy row at state {mdp.states[s]} sums to "
                                      f"{format_rational(total)}")
            else:
                if len(mdp.actions[s]) == 1 and s not in self.denominators:
                    continue
                den = self.denominators.get(s)
                if den is None:
                    raise PolicyError(f"no denominator for state {mdp.states[s]}")
                const = Fraction(0)
                coeffs = [Fraction(0)] * mdp.n
                for a in mdp.actions[s]:
                    num = self.numerators.get((s, a))
                    if num is None:
                        continue
                    const += num.constant
                    for i, c in enumerate(num.coefficients):
                        coeffs[i] += c
                if const != den.constant or tuple(coeffs) != tuple(den.coefficients):
                    raise PolicyError(f"numerators at state {mdp.states[s]} do not sum "
                                      f"to the denominator")

    def action_probabilities(self, mdp: Mdp, s: int, x=None) -> dict[str, Fraction]:
        acts = mdp.actions[s]
        if self.is_memoryless:
            if len(acts) == 1 and (s, acts[0]) not in self.probabilities:
                return {acts[0]: Fraction(1)}
            return {a: self.probabilities.get((s, a), Fraction(0)) for a in acts}
        if len(acts) == 1 and s not in self.denominators:
            return {acts[0]: Fraction(1)}
        den = self.denominators[s].value(x)
        if den < 1:
            raise DenominatorError(s, den)
        zero = AffineForm.constant_form(0, mdp.n)
        return {a: self.numerators.get((s, a), zero).value(x) / den for a in acts}


class DenominatorError(PolicyError):
    def __init__(self, state: int, value: Fraction):
        self.state = state
        self.value = value
        super().__init__(f"policy denominator at state index {state} evaluates to "
                         f"{format_rational(value)} < 1")


def step(mu: Sequence[Fraction], policy: ConcretePolicy, mdp: Mdp) -> Distribution:
    """One application of the distribution transformer.

    ``result[i] = sum_{k, a} p_{k,a}(mu) * delta(k, a, i) * mu[k]``
    """
    n = mdp.n
    out = [Fraction(0)] * n
    for k in range(n):
        mass = mu[k]
        if not mass:
            # denominators still have to be sane on the whole support of the policy
            if not policy.is_memoryless:
                policy.action_probabilities(mdp, k, mu)
            continue
        probs = policy.action_probabilities(mdp, k, mu)
        total = Fraction(0)
        for a, p in probs.items():
            if p < 0:
                raise PolicyError(f"negative action probability at state {mdp.states[k]}")
            total += p
            if not p:
                continue
            for t, q in mdp.delta(k, a).items():
                out[t] += mass * p * q
        if total != 1:
            raise PolicyError(f"policy row at state {mdp.states[k]} sums to {format_rational(total)}")
    return tuple(out)


@dataclass(frozen=True)
class Certificate:
    """Concrete ranking function and invariant (non-strict rows only)."""

    rank: AffineForm
    invariant: AffineSetSpec

    def __post_init__(self):
        if any(r.strict for r in self.invariant.rows):
            raise ValueError("invariant rows must be non-strict")

    @property
    def template_size(self) -> int:
        return len(self.invariant.rows)

    def rank_value(self, x) -> Fraction:
        return self.rank.value(x)

    def with_rank(self, rank: AffineForm) -> "Certificate":
        return replace(self, rank=rank)


# --- problems -------------------------------------------------------------

@dataclass(frozen=True)
class ProblemSpec:
    mdp: Mdp
    target: AffineSetSpec
    safe: AffineSetSpec
    init: AffineSetSpec | None = None
    init_dist: Distribution | None = None
    quantifier: str = "unit"
    task: str = "synthesize"
    policy_class: str = "memoryless"
    given_policy: ConcretePolicy | None = None
    name: str = "model"

    def __post_init__(self):
        if self.quantifier not in QUANTIFIERS:
            raise ModelError(f"unknown quantifier {self.quantifier!r}")
        if self.task not in TASKS:
            raise ModelError(f"unknown task {self.task!r}")
        if self.policy_class not in POLICY_CLASSES:
            raise ModelError(f"unknown policy class {self.policy_class!r}")
        n = self.mdp.n
        for name, s in (("target", self.target), ("safe", self.safe), ("init", self.init)):
            if s is not None and s.n != n:
                raise ModelError(f"{name} set has dimension {s.n}, expected {n}")
        if self.quantifier == "unit" and self.init_dist is None:
            raise ModelError("the unit variant needs a concrete initial distribution")
        if self.init_dist is not None:
            check_distribution(self.init_dist, n)
        if self.quantifier != "unit" and self.init is None:
            raise ModelError(f"the {self.quantifier} variant needs an init set")
        if self.task == "verify" and self.given_policy is None:
            raise ModelError("verification needs a concrete policy")
        if self.given_policy is not None:
            self.given_policy.validate(self.mdp)

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)

    def initial_distributions(self) -> list[Distribution]:
        return [self.init_dist] if self.init_dist is not None else []


# --- model file format ----------------------------------------------------




def parse_affine_row(text: str, n: int, line: int | None = None) -> AffineRow:
    """Parse ``<rational> [+|-] <rational>*x<idx> ... (>=|>) 0`` (x indices 1-based)."""
    m = re.fullmatch(r"(.*?)(>=|>)\s*0\s*", text)
    if not m:
        raise ParseError(f"expected '... >= 0' or '... > 0', got {text.strip()!r}", line)
    expr, op = m.group(1), m.group(2)
    const = Fraction(0)
    coeffs = [Fraction(0)] * n
    tokens = re.findall(r"[+-]|[^\s+-]+", expr)
    sign = 1
    for tok in tokens:
        if tok == "+":
            continue
        if tok == "-":
            sign = -sign
            continue
        if "x" in tok:
            coef_text, _, idx_text = tok.partition("x")
            coef_text = coef_text.rstrip("*")
            try:
                idx = int(idx_text)
                coef = parse_rational(coef_text) if coef_text else Fraction(1)
            except ValueError:
                raise ParseError(f"bad term {tok!r}", line) from None
            if not 1 <= idx <= n:
                raise ParseError(f"variable x{idx} out of range 1..{n}", line)
            coeffs[idx - 1] += sign * coef
        else:
            try:
                const += sign * parse_rational(tok)
            except ValueError:
                raise ParseError(f"bad constant {tok!r}", line) from None
        sign = 1
    return AffineRow(const, tuple(coeffs), op == ">")


def format_row(r: AffineRow) -> str:
    parts = [format_rational(r.constant)]
    for i, c in enumerate(r.coefficients):
        if c:
            parts.append(("- " if c < 0 else "+ ") + f"{format_rational(abs(c))}*x{i + 1}")
    return " ".join(parts) + (" > 0" if r.strict else " >= 0")


def parse_model(text: str, name: str = "model") -> ProblemSpec:
    """Parse the line-oriented model format into a validated problem.

    ::

        states: s0 s1
        actions s0: a
        actions s1: a
        trans s0 a -> s1:1
        trans s1 a -> s1:1
        target:
          -1 + 1*x2 >= 0
        safe:
        init-dist: 1 0
        quantifier: unit
    """
    states: list[str] | None = None
    actions: dict[str, list[str]] = {}
    trans: dict[tuple[int, str], dict[int, Fraction]] = {}
    blocks: dict[str, list[AffineRow]] = {}
    seen_blocks: set[str] = set()
    current: str | None = None
    init_dist = None
    quantifier = "unit"
    task = "synthesize"
    policy_class = "memoryless"

    def need_states(line_no):
        if states is None:
            raise ParseError("'states:' header must come first", line_no)
        return states

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, rest = line.partition(":")
        key = head.strip()
        if key == "states" and sep:
            states = rest.split()
            if not states:
                raise ParseError("empty state list", line_no)
            current = None
        elif key.startswith("actions ") and sep:
            st = key.split(None, 1)[1].strip()
            if st not in need_states(line_no):
                raise ParseError(f"unknown state {st!r}", line_no)
            actions[st] = rest.split()
            current = None
        elif line.startswith("trans "):
            sts = need_states(line_no)
            lhs, arrow, rhs = line[len("trans "):].partition("->")
            parts = lhs.split()
            if not arrow or len(parts) != 2:
                raise ParseError("expected 'trans <state> <action> -> <state>:<p> ...'", line_no)
            st, act = parts
            if st not in sts:
                raise ParseError(f"unknown state {st!r}", line_no)
            dist: dict[int, Fraction] = {}
            for item in rhs.split():
                tgt, colon, prob = item.rpartition(":")
                if not colon or tgt not in sts:
                    raise ParseError(f"bad successor {item!r}", line_no)
                try:
                    p = parse_rational(prob)
                except ValueError as exc:
                    raise ParseError(str(exc), line_no) from None
                t = sts.index(tgt)
                dist[t] = dist.get(t, Fraction(0)) + p
            trans[(sts.index(st), act)] = dist
            current = None
        elif key in ("target", "safe", "init") and sep:
            need_states(line_no)
            current = key
            seen_blocks.add(key)
            blocks.setdefault(key, [])
            if rest.strip():
                blocks[key].append(parse_affine_row(rest, len(states), line_no))
        elif key == "init-dist" and sep:
            try:
                init_dist = tuple(parse_rational(v) for v in rest.split())
            except ValueError as exc:
                raise ParseError(str(exc), line_no) from None
            current = None
        elif key == "quantifier" and sep:
            quantifier = rest.strip()
            if quantifier not in QUANTIFIERS:
                raise ParseError(f"unknown quantifier {quantifier!r}", line_no)
            current = None
        elif key == "task" and sep:
            task = rest.strip()
            current = None
        elif key == "policy-class" and sep:
            policy_class = rest.strip()
            current = None
        elif current is not None and (">" in line):
            blocks[current].append(parse_affine_row(line, len(states), line_no))
        else:
            raise ParseError(f"unrecognised line {line!r}", line_no)

    if states is None:
        raise ParseError("missing 'states:' header")
    n = len(states)
    act_lists = []
    for st in states:
        acts = actions.get(st)
        if acts is None:
            acts = sorted({a for (s, a) in trans if states[s] == st})
        act_lists.append(tuple(acts))
    try:
        mdp = Mdp(tuple(states), tuple(act_lists), trans)
        if "target" not in seen_blocks:
            raise ModelError("missing target block")
        target = AffineSetSpec(n, tuple(blocks.get("target", ())))
        safe = AffineSetSpec(n, tuple(blocks.get("safe", ())))
        init = AffineSetSpec(n, tuple(blocks["init"])) if "init" in seen_blocks else None
        if init_dist is not None:
            init_dist = check_distribution(init_dist, n)
        return ProblemSpec(mdp=mdp, target=target, safe=safe, init=init, init_dist=init_dist,
                           quantifier=quantifier, task=task, policy_class=policy_class,
                           name=name)
    except ModelError:
        raise
    except ValueError as exc:  # pragma: no cover - defensive
        raise ModelError(str(exc)) from None


def dump_model(problem: ProblemSpec) -> str:
    """Inverse of :func:`parse_model` (policies are not part of the format)."""
    mdp = problem.mdp
    lines = ["states: " + " ".join(mdp.states)]
    for s, st in enumerate(mdp.states):
        lines.append(f"actions {st}: " + " ".join(mdp.actions[s]))
    for s, st in enumerate(mdp.states):
        for a in mdp.actions[s]:
            succ = " ".join(f"{mdp.states[t]}:{format_rational(p)}"
                            for t, p in sorted(mdp.delta(s, a).items()) if p)
            lines.append(f"trans {st} {a} -> {succ}")
    for key, spec in (("target", problem.target), ("safe", problem.safe), ("init", problem.init)):
        if spec is None:
            continue
        lines.append(f"{key}:")
        lines.extend("  " + format_row(r) for r in spec.rows)
    if problem.init_dist is not None:
        lines.append("init-dist: " + " ".join(format_rational(v) for v in problem.init_dist))
    lines.append(f"quantifier: {problem.quantifier}")
    return "\n".join(lines) + "\n"


# --- policy file format ---------------------------------------------------

def format_policy(policy: ConcretePolicy, mdp: Mdp) -> str:
    """Memoryless policies as ``p_<state>: <action>:<rational> ...`` lines."""
    if not policy.is_memoryless:
        return format_distributional_policy(policy, mdp)
    lines = []
    for s, st in enumerate(mdp.states):
        acts = mdp.actions[s]
        if len(acts) == 1:
            continue
        probs = policy.action_probabilities(mdp, s)
        lines.append(f"p_{st}: " + " ".join(f"{a}:{format_rational(probs[a])}" for a in acts))
    return "\n".join(lines) + "\n"


def _format_form(f: AffineForm) -> str:
    return " ".join(format_rational(v) for v in (f.constant, *f.coefficients))


def format_distributional_policy(policy: ConcretePolicy, mdp: Mdp) -> str:
    lines = []
    for s, st in enumerate(mdp.states):
        if s not in policy.denominators:
            continue
        lines.append(f"den_{st}: {_format_form(policy.denominators[s])}")
        for a in mdp.actions[s]:
            num = policy.numerators.get((s, a))
            if num is not None:
                lines.append(f"num_{st}_{a}: {_format_form(num)}")
    return "\n".join(lines) + "\n"


def parse_policy(text: str, mdp: Mdp) -> ConcretePolicy:
    """Parse either policy file flavour and validate it against ``mdp``."""
    probs: dict[tuple[int, str], Fraction] = {}
    nums: dict[tuple[int, str], AffineForm] = {}
    dens: dict[int, AffineForm] = {}
    by_name = {st: i for i, st in enumerate(mdp.states)}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, colon, rest = line.partition(":")
        if not colon:
            raise ParseError(f"expected '<key>: ...', got {line!r}", line_no)
        head = head.strip()
        if head.startswith("p_"):
            st = head[2:]
            if st not in by_name:
                raise PolicyError(f"line {line_no}: unknown state {st!r}")
            s = by_name[st]
            for item in rest.split():
                act, c, val = item.partition(":")
                if not c:
                    raise ParseError(f"bad entry {item!r}", line_no)
                if act not in mdp.actions[s]:
                    raise PolicyError(f"line {line_no}: action {act!r} unavailable at {st}")
                try:
                    probs[(s, act)] = parse_rational(val)
                except ValueError as exc:
                    raise ParseError(str(exc), line_no) from None
        elif head.startswith("den_"):
            st = head[4:]
            if st not in by_name:
                raise PolicyError(f"line {line_no}: unknown state {st!r}")
            dens[by_name[st]] = _parse_form(rest, mdp.n, line_no)
        elif head.startswith("num_"):
            st, _, act = head[4:].rpartition("_")
            if st not in by_name:
                raise PolicyError(f"line {line_no}: unknown state {st!r}")
            if act not in mdp.actions[by_name[st]]:
                raise PolicyError(f"line {line_no}: action {act!r} unavailable at {st}")
            nums[(by_name[st], act)] = _parse_form(rest, mdp.n, line_no)
        else:
            raise ParseError(f"unrecognised key {head!r}", line_no)
    if nums or dens:
        policy = ConcretePolicy.distributional(nums, dens)
    else:
        policy = ConcretePolicy.memoryless(probs)
    policy.validate(mdp)
    return policy


def _parse_form(text: str, n: int, line_no: int) -> AffineForm:
    try:
        vals = [parse_rational(v) for v in text.split()]
    except ValueError as exc:
        raise ParseError(str(exc), line_no) from None
    if len(vals) != n + 1:
        raise ParseError(f"expected {n + 1} coefficients, got {len(vals)}", line_no)
    return AffineForm(vals[0], tuple(vals[1:]))


def uniform_over(n: int, cells: Iterable[int]) -> Distribution:
    cells = sorted(set(cells))
    w = Fraction(1, len(cells))
    return tuple(w if i in cells else Fraction(0) for i in range(n))
