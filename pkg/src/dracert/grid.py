"""Gridworld DSL for robot-swarm benchmarks.

A grid is a rectangle of single-character cells, top row first::

    IX.G
    SLS.

Legend
------
``.`` / ``O``  plain cell          ``X``  obstacle (not a state)
``I``          initial cell        ``G``  goal cell (absorbing)
``F``          forbidden cell (may never hold any mass)
``S``          stochastic: a move leaves 1/10 of the mass behind
``s``          slippery: 9/10 reaches the destination, 1/20 slips to each
               cell orthogonally adjacent to the destination
``L``          limited plain cell
``T`` / ``t``  limited stochastic / limited slippery cell
``U D R W``    forced move up / down / right / left (west)
``u d r w``    limited forced moves

Every non-goal, non-arrow cell offers the action ``s`` (stay) plus one move
``u``/``d``/``l``/``r`` per in-grid neighbour that is not an obstacle.
States are the cells reachable from an initial cell, enumerated column by
column; a state's name is ``<col>_<row>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .model import (AffineRow, AffineSetSpec, Mdp, ModelError, ProblemSpec,
                    uniform_over)

PLAIN, STOCHASTIC, SLIPPERY, ARROW = "plain", "stochastic", "slippery", "arrow"

MOVES = {"u": (0, -1), "d": (0, 1), "l": (-1, 0), "r": (1, 0)}
_ARROWS = {"U": "u", "D": "d", "R": "r", "W": "l"}

# char -> (dynamics, limited, arrow direction)
LEGEND: dict[str, tuple[str, bool, str | None]] = {
    ".": (PLAIN, False, None),
    "O": (PLAIN, False, None),
    "I": (PLAIN, False, None),
    "G": (PLAIN, False, None),
    "F": (PLAIN, False, None),
    "S": (STOCHASTIC, False, None),
    "s": (SLIPPERY, False, None),
    "L": (PLAIN, True, None),
    "T": (STOCHASTIC, True, None),
    "t": (SLIPPERY, True, None),
}
for _c, _d in _ARROWS.items():
    LEGEND[_c] = (ARROW, False, _d)
    LEGEND[_c.lower()] = (ARROW, True, _d)

STAY_FRACTION = Fraction(1, 10)
SLIP_FRACTION = Fraction(1, 20)


class GridError(ModelError):
    pass


@dataclass(frozen=True)
class Grid:
    rows: tuple[str, ...]

    @property
    def width(self) -> int:
        return len(self.rows[0])

    @property
    def height(self) -> int:
        return len(self.rows)

    def cell(self, col: int, row: int) -> str:
        return self.rows[row][col]

    def inside(self, col: int, row: int) -> bool:
        return 0 <= col < self.width and 0 <= row < self.height

    def open(self, col: int, row: int) -> bool:
        return self.inside(col, row) and self.cell(col, row) != "X"

    def cells(self, chars: str) -> list[tuple[int, int]]:
        return [(c, r) for c in range(self.width) for r in range(self.height)
                if self.cell(c, r) in chars]


def parse_grid(text: str) -> Grid:
    rows = tuple(line.strip() for line in text.strip().splitlines() if line.strip())
    if not rows:
        raise GridError("empty grid")
    width = len(rows[0])
    for r, line in enumerate(rows):
        if len(line) != width:
            raise GridError(f"grid row {r} has width {len(line)}, expected {width}")
        for c, ch in enumerate(line):
            if ch != "X" and ch not in LEGEND:
                raise GridError(f"unknown cell character {ch!r} at ({c},{r})")
    grid = Grid(rows)
    if not grid.cells("I"):
        raise GridError("grid has no initial cell")
    if not grid.cells("G"):
        raise GridError("grid has no goal cell")
    return grid


def _cell_actions(grid: Grid, col: int, row: int) -> dict[str, dict[tuple[int, int], Fraction]]:
    ch = grid.cell(col, row)
    here = (col, row)
    if ch == "G":
        return {"s": {here: Fraction(1)}}
    dynamics, _, arrow = LEGEND[ch]
    if dynamics == ARROW:
        dc, dr = MOVES[arrow]
        dest = (col + dc, row + dr)
        if not grid.open(*dest):
            raise GridError(f"arrow at ({col},{row}) points into a wall")
        return {arrow: {dest: Fraction(1)}}
    out = {"s": {here: Fraction(1)}}
    for name, (dc, dr) in MOVES.items():
        dest = (col + dc, row + dr)
        if not grid.open(*dest):
            continue
        dist: dict[tuple[int, int], Fraction] = {}
        if dynamics == PLAIN:
            dist[dest] = Fraction(1)
        elif dynamics == STOCHASTIC:
            dist[dest] = 1 - STAY_FRACTION
            dist[here] = STAY_FRACTION
        else:
            dist[dest] = 1 - 2 * SLIP_FRACTION
            for slip in ((dest[0] + dr, dest[1] + dc), (dest[0] - dr, dest[1] - dc)):
                key = slip if grid.open(*slip) else dest
                dist[key] = dist.get(key, Fraction(0)) + SLIP_FRACTION
        out[name] = dist
    return out


def grid_mdp(grid: Grid) -> tuple[Mdp, list[tuple[int, int]]]:
    """Build the MDP over reachable cells; also returns the cell of each state."""
    dynamics = {}
    frontier = grid.cells("I")
    seen = set(frontier)
    while frontier:
        cell = frontier.pop()
        acts = _cell_actions(grid, *cell)
        dynamics[cell] = acts
        for dist in acts.values():
            for nxt in dist:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
    cells = sorted(seen)  # column-major: (col, row)
    index = {cell: i for i, cell in enumerate(cells)}
    states = tuple(f"{c}_{r}" for c, r in cells)
    actions = []
    trans = {}
    for i, cell in enumerate(cells):
        acts = dynamics[cell]
        names = tuple(sorted(acts))
        actions.append(names)
        for a in names:
            trans[(i, a)] = {index[t]: p for t, p in acts[a].items()}
    return Mdp(states, tuple(actions), trans), cells


@dataclass(frozen=True)
class GridSummary:
    states: int
    actions: int
    transitions: int
    initial: int
    goal: int
    limited: int
    forbidden: int

    def as_tuple(self):
        return (self.states, self.actions, self.transitions, self.initial, self.goal,
                self.limited, self.forbidden)


def summarize(grid: Grid) -> GridSummary:
    mdp, cells = grid_mdp(grid)
    chars = [grid.cell(*c) for c in cells]
    return GridSummary(
        states=mdp.n,
        actions=mdp.num_actions,
        transitions=mdp.num_transitions,
        initial=sum(ch == "I" for ch in chars),
        goal=sum(ch == "G" for ch in chars),
        limited=sum(LEGEND[ch][1] for ch in chars if ch in LEGEND),
        forbidden=sum(ch == "F" for ch in chars),
    )


def grid_to_problem(grid: Grid, goal_mass: Fraction = Fraction(9, 10),
                    limit_mass: Fraction = Fraction(1, 10), quantifier: str = "unit",
                    name: str = "grid", **kwargs) -> ProblemSpec:
    """Reach-avoid problem: at least ``goal_mass`` on goal cells while never
    more than ``limit_mass`` on limited cells and nothing on forbidden cells."""
    mdp, cells = grid_mdp(grid)
    n = mdp.n
    chars = [grid.cell(*c) for c in cells]

    def indicator(pred, scale=Fraction(1)):
        return tuple(scale if pred(ch) else Fraction(0) for ch in chars)

    target = AffineSetSpec(n, (AffineRow(-Fraction(goal_mass), indicator(lambda ch: ch == "G")),))
    safe_rows = []
    if any(LEGEND[ch][1] for ch in chars):
        safe_rows.append(AffineRow(Fraction(limit_mass),
                                   indicator(lambda ch: LEGEND[ch][1], Fraction(-1))))
    for i, ch in enumerate(chars):
        if ch == "F":
            vec = [Fraction(0)] * n
            vec[i] = Fraction(-1)
            safe_rows.append(AffineRow(Fraction(0), tuple(vec)))
    safe = AffineSetSpec(n, tuple(safe_rows))
    init_cells = [i for i, ch in enumerate(chars) if ch == "I"]
    mu0 = uniform_over(n, init_cells)
    init = None
    if quantifier != "unit":
        rows = []
        for i in range(n):
            unit = [Fraction(0)] * n
            unit[i] = Fraction(1)
            # x_i = mu0_i as a pair of inequalities
            rows.append(AffineRow(-mu0[i], tuple(unit)))
            rows.append(AffineRow(mu0[i], tuple(-u for u in unit)))
        init = AffineSetSpec(n, tuple(rows))
    return ProblemSpec(mdp=mdp, target=target, safe=safe, init=init,
                       init_dist=mu0 if quantifier == "unit" else kwargs.pop("init_dist", None),
                       quantifier=quantifier, name=name, **kwargs)
