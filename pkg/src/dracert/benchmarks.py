"""Built-in benchmark problems: seven robot-swarm gridworlds and two Markov
chains (a pharmacokinetics model and a five-page PageRank walk)."""

from __future__ import annotations

from fractions import Fraction
from importlib import resources

from .grid import grid_mdp, grid_to_problem, parse_grid
from .model import (AffineRow, AffineSetSpec, ConcretePolicy, Mdp, ModelError, ProblemSpec,
                    parse_policy)

F = Fraction

GRIDS = {
    "running": "IX.G\nSLS.",
    "twoinit": "IXG\nLtL\nIX.",
    "double": "I.L.G\nXsLXX\nI.RGX",
    "slippery": "IXtss\n.XL..\nsstXG",
    "grid5x4": "IX..G\nSssX.\nDXXXU\nRrrRu",
    "grid8x8": "\n".join([
        "I.XX..SX",
        "X.SSXL..",
        "XS..XD.X",
        "XL.XXSXX",
        ".D..S...",
        ".DX.XL..",
        "DR..XX.D",
        ".XX.XXLG",
    ]),
    "grid20x10": "\n".join([
        "IXXXsU.DSL.RU..XFDXL",
        ".LSSWsL.XXXXXWXL..LX",
        ".X.X..DXDU.XX.W.DXXR",
        "sLLWXSXXR.XSXFXXRXXX",
        "...RDR.XXDX.XX..R..X",
        ".L.L..R.XR....U.UR.G",
        "UW.LXXL.DL.X..X..LFX",
        "U..F..SD.....XF....X",
        ".XXXXX.UX.X.XXD.XXX.",
        "IXsX..XRFXRXLXFUXXX.",
    ]),
}

CHAINS = ("insulin", "pagerank")
NAMES = tuple(GRIDS) + CHAINS

# Row-stochastic matrices.  The insulin rows are given in units of 1e-6 but
# rows 1-4 only add up to 1e5; every row is renormalized to sum to exactly 1.
INSULIN_RAW = (
    (93980, 2634, 2564, 798, 24),
    (0, 20724, 48298, 29624, 1354),
    (0, 15531, 42539, 39530, 2400),
    (0, 2598, 10778, 77854, 8770),
    (0, 0, 0, 0, 10 ** 6),
)

PAGERANK = (
    (F(1, 80), F(19, 60), F(3, 40), F(19, 60), F(67, 240)),
    (F(1, 80), F(1, 20), F(41, 120), F(19, 60), F(67, 240)),
    (F(1, 16), F(1, 4), F(3, 8), F(1, 4), F(1, 16)),
    (F(1, 80), F(1, 20), F(7, 8), F(1, 20), F(1, 80)),
    (F(33, 80), F(9, 20), F(3, 40), F(1, 20), F(1, 80)),
)


def insulin_matrix() -> tuple[tuple[Fraction, ...], ...]:
    return tuple(tuple(F(v, sum(row)) for v in row) for row in INSULIN_RAW)


def chain_mdp(matrix, prefix: str = "s") -> Mdp:
    """A Markov chain as an MDP with the single action ``a`` everywhere."""
    n = len(matrix)
    states = tuple(f"{prefix}{i + 1}" for i in range(n))
    trans = {(k, "a"): {i: F(p) for i, p in enumerate(row) if p} for k, row in enumerate(matrix)}
    return Mdp(states, (("a",),) * n, trans)


def _rows(n, *rows):
    out = []
    for const, coeffs in rows:
        vec = [F(0)] * n
        for i, c in coeffs.items():
            vec[i - 1] = F(c)
        out.append(AffineRow(F(const), tuple(vec)))
    return AffineSetSpec(n, tuple(out))


def _chain_problem(name: str, **kwargs) -> ProblemSpec:
    if name == "insulin":
        mdp = chain_mdp(insulin_matrix())
        # at least 90% absorbed while the central compartments together never
        # hold more than 3/5 of the mass (the trajectory peaks near 0.37)
        target = _rows(5, (F(-9, 10), {5: 1}))
        safe = _rows(5, (F(3, 5), {2: -1, 3: -1, 4: -1}))
        mu0 = (F(1), F(0), F(0), F(0), F(0))
    else:
        mdp = chain_mdp(PAGERANK)
        # page 3 collects at least 2/5 of the surfers while page 4 never
        # holds more than half of them
        target = _rows(5, (F(-2, 5), {3: 1}))
        safe = _rows(5, (F(1, 2), {4: -1}))
        mu0 = (F(1, 5),) * 5
    return ProblemSpec(mdp=mdp, target=target, safe=safe, init_dist=mu0, name=name,
                       given_policy=ConcretePolicy.memoryless({}), **kwargs)


def builtin(name: str, task: str = "synthesize", quantifier: str = "unit",
            policy_class: str = "memoryless") -> ProblemSpec:
    """The named benchmark.  Verification tasks get the shipped reference policy."""
    key = name.lower()
    if key not in NAMES:
        raise ModelError(f"unknown benchmark {name!r}; choose from {', '.join(NAMES)}")
    if key in CHAINS:
        return _chain_problem(key, task=task,
                              quantifier=quantifier, policy_class=policy_class)
    grid = parse_grid(GRIDS[key])
    problem = grid_to_problem(grid, quantifier=quantifier, name=key, task="synthesize",
                              policy_class=policy_class)
    if task == "verify":
        problem = problem.with_(task="verify", given_policy=reference_policy(key))
    return problem


def reference_policy(name: str) -> ConcretePolicy:
    key = name.lower()
    if key in CHAINS:
        return ConcretePolicy.memoryless({})
    mdp, _ = grid_mdp(parse_grid(GRIDS[key]))
    text = resources.files("dracert").joinpath("policies").joinpath(f"{key}.policy").read_text()
    return parse_policy(text, mdp)
