"""Simulated campus delivery world.

The map is a grid of free cells, blocked cells (walls, trees, roads), doors,
crosswalks and rooms.  Doors and crosswalks are not cells the robot stands
on: each connects the two opposite free cells next to it (its approach
cells), and the robot gets from one to the other with the obstacle action
(`open-door` or `cross`).  The robot's view of an approach cell carries the
obstacle's features restricted to the active feature space.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .cas import LEGAL_SIGNALS, SIGNALS, Level, Signal, legal_mask
from .feedback import NA, Feature, FeatureCatalog
from .ssp import Ssp

FREE, BLOCKED, DOOR, CROSSWALK, ROOM = ".", "#", "D", "C", "R"
CELL_CODES = {FREE, BLOCKED, DOOR, CROSSWALK, ROOM}
STANDABLE = {FREE, ROOM}

MOVES = {"north": (0, -1), "south": (0, 1), "east": (1, 0), "west": (-1, 0)}
OPEN_DOOR = "open-door"
CROSS = "cross"
ACTIONS = (*MOVES, OPEN_DOOR, CROSS)

FEATURE_VALUES = {
    "traffic": ("none", "light", "heavy"),
    "visibility": ("clear", "obstructed"),
    "street": ("one-way", "two-way"),
    "open": ("closed", "open"),
    "size": ("light", "medium", "heavy"),
    "color": ("red", "blue", "brown", "gray"),
    "mechanism": ("push", "pull"),
}
CROSSWALK_FEATURES = ("traffic", "visibility", "street")
DOOR_FEATURES = ("open", "size", "color", "mechanism")
DYNAMIC_FEATURES = ("traffic", "open")
INITIAL_ACTIVE = ("traffic", "open")
CAUSAL_FEATURES = ("visibility", "traffic", "size", "mechanism")

# stay 0.6, one step up or down 0.2 each, clamped at the ends
TRAFFIC_CHAIN = np.array([[0.8, 0.2, 0.0], [0.2, 0.6, 0.2], [0.0, 0.2, 0.8]])
DOOR_CHAIN = np.array([[0.92, 0.08], [0.7, 0.3]])
CHAINS = {"traffic": TRAFFIC_CHAIN, "open": DOOR_CHAIN}


class MapError(ValueError):
    pass


def stationary(chain: np.ndarray) -> np.ndarray:
    return _stationary(tuple(map(tuple, np.asarray(chain, dtype=float)))).copy()


@lru_cache(maxsize=None)
def _stationary(rows: tuple) -> np.ndarray:
    chain = np.array(rows)
    vals, vecs = np.linalg.eig(chain.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def campus_catalog(active: Iterable[str] = INITIAL_ACTIVE) -> FeatureCatalog:
    order = ("traffic", "visibility", "street", "open", "size", "color", "mechanism")
    return FeatureCatalog(tuple(Feature(n, (NA, *FEATURE_VALUES[n])) for n in order), frozenset(active))


# -- map ---------------------------------------------------------------------


@dataclass(frozen=True)
class Obstacle:
    kind: str  # "door" or "crosswalk"
    cell: tuple
    attrs: tuple  # ((feature, value), ...) static features and initial dynamic value
    sides: tuple  # the two approach cells
    building: str = ""

    @property
    def action(self) -> str:
        return OPEN_DOOR if self.kind == "door" else CROSS

    @property
    def features(self) -> tuple:
        return DOOR_FEATURES if self.kind == "door" else CROSSWALK_FEATURES

    @property
    def dynamic(self) -> str:
        return "open" if self.kind == "door" else "traffic"

    def attr(self, name: str) -> str:
        return dict(self.attrs)[name]

    def far_side(self, cell: tuple) -> tuple:
        a, b = self.sides
        return b if cell == a else a

    @property
    def label(self) -> str:
        return f"{self.kind}@{self.cell[0]},{self.cell[1]}"


@dataclass(frozen=True, eq=False)
class CampusMap:
    grid: tuple  # rows of cell codes
    obstacles: tuple
    rooms: dict  # name -> cell
    warnings: tuple = ()
    source: str = ""

    @property
    def width(self) -> int:
        return len(self.grid[0])

    @property
    def height(self) -> int:
        return len(self.grid)

    def code(self, cell: tuple) -> str:
        x, y = cell
        if 0 <= y < self.height and 0 <= x < self.width:
            return self.grid[y][x]
        return BLOCKED

    def standable(self, cell: tuple) -> bool:
        return self.code(cell) in STANDABLE

    @property
    def doors(self) -> tuple:
        return tuple(o for o in self.obstacles if o.kind == "door")

    @property
    def crosswalks(self) -> tuple:
        return tuple(o for o in self.obstacles if o.kind == "crosswalk")

    @property
    def approach(self) -> dict:
        """approach cell -> obstacle"""
        cached = self.__dict__.get("_approach")
        if cached is None:
            cached = {side: o for o in self.obstacles for side in o.sides}
            object.__setattr__(self, "_approach", cached)
        return cached

    def room_names(self) -> tuple:
        return tuple(sorted(self.rooms))


def _neighbor(cell, move):
    dx, dy = MOVES[move]
    return (cell[0] + dx, cell[1] + dy)


def _sides(grid, x, y, line_of):
    def standable(cx, cy):
        return 0 <= cy < len(grid) and 0 <= cx < len(grid[0]) and grid[cy][cx] in STANDABLE

    horizontal = standable(x - 1, y) and standable(x + 1, y)
    vertical = standable(x, y - 1) and standable(x, y + 1)
    if horizontal == vertical:
        raise MapError(
            f"line {line_of(y)}, column {x + 1}: obstacle must join exactly one pair of opposite free cells"
        )
    return ((x - 1, y), (x + 1, y)) if horizontal else ((x, y - 1), (x, y + 1))


def parse_map(text: str, source: str = "<string>") -> CampusMap:
    """Parse the ASCII map format; errors carry line and column numbers."""
    lines = text.splitlines()
    grid_rows: list[str] = []
    grid_lines: list[int] = []
    attr_lines: list[tuple[int, list[str]]] = []
    in_grid = True
    for no, raw in enumerate(lines, start=1):
        line = raw.rstrip()
        if in_grid:
            if not line:
                if grid_rows:
                    in_grid = False
                continue
            tokens = line.split()
            if len(tokens) > 1 or tokens[0].lower() in ("door", "crosswalk", "room"):
                in_grid = False
            else:
                grid_rows.append(line)
                grid_lines.append(no)
                continue
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        attr_lines.append((no, stripped.split()))
    if not grid_rows:
        raise MapError(f"{source}: no grid found")
    width = len(grid_rows[0])
    for row, no in zip(grid_rows, grid_lines):
        if len(row) != width:
            raise MapError(f"line {no}: grid row has {len(row)} cells, expected {width}")
        for col, ch in enumerate(row):
            if ch not in CELL_CODES:
                raise MapError(f"line {no}, column {col + 1}: unknown cell code {ch!r}")

    def line_of(y):
        return grid_lines[y]

    def cell_at(no, tokens, expected_code):
        try:
            x, y = int(tokens[1]), int(tokens[2])
        except (IndexError, ValueError):
            raise MapError(f"line {no}: expected integer coordinates") from None
        if not (0 <= y < len(grid_rows) and 0 <= x < width):
            raise MapError(f"line {no}: cell ({x}, {y}) is outside the grid")
        if grid_rows[y][x] != expected_code:
            raise MapError(
                f"line {no}: cell ({x}, {y}) is {grid_rows[y][x]!r} in the grid (line {line_of(y)}, "
                f"column {x + 1}), expected {expected_code!r}"
            )
        return (x, y)

    def check_value(no, name, value):
        if value not in FEATURE_VALUES[name]:
            raise MapError(f"line {no}: {value!r} is not a valid {name} (one of {FEATURE_VALUES[name]})")
        return value

    obstacles: dict = {}
    rooms: dict = {}
    for no, tokens in attr_lines:
        kind = tokens[0].lower()
        if kind == "door":
            if len(tokens) not in (7, 8):
                raise MapError(f"line {no}: door needs: door x y size color mechanism open [building]")
            cell = cell_at(no, tokens, DOOR)
            attrs = tuple(
                (n, check_value(no, n, v))
                for n, v in zip(("size", "color", "mechanism", "open"), tokens[3:7])
            )
            building = tokens[7] if len(tokens) == 8 else ""
            kind_ = "door"
        elif kind == "crosswalk":
            if len(tokens) != 6:
                raise MapError(f"line {no}: crosswalk needs: crosswalk x y visibility street traffic")
            cell = cell_at(no, tokens, CROSSWALK)
            attrs = tuple(
                (n, check_value(no, n, v)) for n, v in zip(("visibility", "street", "traffic"), tokens[3:6])
            )
            building = ""
            kind_ = "crosswalk"
        elif kind == "room":
            if len(tokens) != 4:
                raise MapError(f"line {no}: room needs: room x y name")
            cell = cell_at(no, tokens, ROOM)
            if tokens[3] in rooms:
                raise MapError(f"line {no}: duplicate room name {tokens[3]!r}")
            if cell in rooms.values():
                raise MapError(f"line {no}: room cell ({cell[0]}, {cell[1]}) is already named")
            rooms[tokens[3]] = cell
            continue
        else:
            raise MapError(f"line {no}: unknown attribute record {tokens[0]!r}")
        if cell in obstacles:
            raise MapError(f"line {no}: cell ({cell[0]}, {cell[1]}) already has attributes")
        sides = _sides(grid_rows, cell[0], cell[1], line_of)
        obstacles[cell] = Obstacle(kind_, cell, attrs, sides, building)

    for y, row in enumerate(grid_rows):
        for x, ch in enumerate(row):
            if ch in (DOOR, CROSSWALK) and (x, y) not in obstacles:
                what = "door" if ch == DOOR else "crosswalk"
                raise MapError(f"line {line_of(y)}, column {x + 1}: {what} has no attribute record")
            if ch == ROOM and (x, y) not in rooms.values():
                raise MapError(f"line {line_of(y)}, column {x + 1}: room has no attribute record")

    ordered = tuple(obstacles[c] for c in sorted(obstacles, key=lambda c: (c[1], c[0])))
    owner: dict = {}
    for o in ordered:
        for side in o.sides:
            if grid_rows[side[1]][side[0]] != FREE:
                raise MapError(
                    f"line {line_of(side[1])}, column {side[0] + 1}: approach cell of {o.label} must be free"
                )
            if side in owner:
                raise MapError(
                    f"line {line_of(side[1])}, column {side[0] + 1}: cell touches both {owner[side].label} "
                    f"and {o.label}"
                )
            owner[side] = o
    for side, o in owner.items():
        for move in MOVES:
            nb = _neighbor(side, move)
            if nb != o.cell and nb in obstacles:
                raise MapError(
                    f"line {line_of(side[1])}, column {side[0] + 1}: approach cell of {o.label} "
                    f"also borders {obstacles[nb].label}"
                )
    cmap = CampusMap(tuple(grid_rows), ordered, dict(sorted(rooms.items())), (), source)
    object.__setattr__(cmap, "warnings", tuple(structure_warnings(cmap)))
    return cmap


def load_map(path) -> CampusMap:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MapError(f"{path}: {exc.strerror or exc}") from None
    try:
        return parse_map(text, str(path))
    except MapError as exc:
        raise MapError(f"{path}: {exc}") from None


def default_map_path() -> Path:
    return Path(__file__).with_name("data") / "campus.map"


def structure_warnings(cmap: CampusMap) -> list[str]:
    """Checks the decoy structure that makes feature discovery non-trivial."""
    out = []
    doors = cmap.doors
    consistent = []
    for building in sorted({d.building for d in doors if d.building}):
        members = [d for d in doors if d.building == building]
        mapping: dict = {}
        ok = len({d.attr("size") for d in members}) >= 2
        for d in members:
            if mapping.setdefault(d.attr("size"), d.attr("color")) != d.attr("color"):
                ok = False
        if ok:
            consistent.append((building, mapping))
    if not consistent:
        out.append("no building has door color as a function of door size")
    elif not any(
        any(d.building != b and m.get(d.attr("size"), d.attr("color")) != d.attr("color") for d in doors)
        for b, m in consistent
    ):
        out.append("no door outside the color/size-consistent building breaks the correlation")
    cws = cmap.crosswalks
    best = None
    for vis_to_street in itertools.product(FEATURE_VALUES["street"], repeat=2):
        f = dict(zip(FEATURE_VALUES["visibility"], vis_to_street))
        misses = sum(f[c.attr("visibility")] != c.attr("street") for c in cws)
        best = misses if best is None else min(best, misses)
    if best != 1:
        out.append(f"street type disagrees with a function of visibility on {best} crosswalk(s), expected exactly 1")
    if len(cmap.rooms) < 2:
        out.append("fewer than two rooms")
    return out


# -- dynamics and features -----------------------------------------------------


def step_chain(chain: np.ndarray, value_index: int, rng: np.random.Generator) -> int:
    return _draw(np.cumsum(chain[value_index]), rng.random())


def _draw(cumulative: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cumulative, u, side="right")), len(cumulative) - 1)


class CampusWorld:
    """True world state: robot cell plus every obstacle's dynamic feature."""

    def __init__(self, cmap: CampusMap, rng: np.random.Generator):
        self.map = cmap
        self.rng = rng
        self.dynamic: dict = {}
        self._cells = [o.cell for o in cmap.obstacles]
        self._cumulative = [np.cumsum(CHAINS[o.dynamic], axis=1) for o in cmap.obstacles]
        for o in cmap.obstacles:
            start = np.cumsum(stationary(CHAINS[o.dynamic]))
            self.dynamic[o.cell] = _draw(start, rng.random())
        self.cell: tuple = (0, 0)

    def step_dynamics(self) -> None:
        draws = self.rng.random(len(self._cells))
        for cell, cum, u in zip(self._cells, self._cumulative, draws):
            row = cum[self.dynamic[cell]]
            self.dynamic[cell] = _draw(row, u)

    def obstacle_here(self) -> Optional[Obstacle]:
        return self.map.approach.get(self.cell)

    def full_features(self, cell: tuple | None = None) -> tuple:
        cell = self.cell if cell is None else cell
        o = self.map.approach.get(cell)
        if o is None:
            return empty_assignment()
        dyn = FEATURE_VALUES[o.dynamic][self.dynamic[o.cell]]
        return obstacle_assignment(o, dyn)


_CATALOG_ORDER = campus_catalog().names


def empty_assignment() -> tuple:
    return tuple(NA for _ in _CATALOG_ORDER)


@lru_cache(maxsize=None)
def obstacle_assignment(o: Obstacle, dynamic_value: str) -> tuple:
    """Complete feature tuple (catalog order) for an obstacle."""
    attrs = dict(o.attrs)
    attrs[o.dynamic] = dynamic_value
    return tuple(attrs.get(n, NA) for n in _CATALOG_ORDER)


def project(full: Sequence, catalog: FeatureCatalog, names: Sequence[str] | None = None) -> tuple:
    if names is None:
        return tuple(full[i] for i in catalog.active_positions)
    return tuple(full[catalog.index(n)] for n in names)


def blocks(o: Obstacle, dynamic_value: str) -> bool:
    """An open door is not an obstacle; closed doors and crosswalks are."""
    return not (o.kind == "door" and dynamic_value == "open")


def obstacle_contexts(cmap: CampusMap, catalog: FeatureCatalog) -> set:
    """Distinct active-feature contexts the map's obstacles can present."""
    out = set()
    for o in cmap.obstacles:
        for dyn in FEATURE_VALUES[o.dynamic]:
            out.add((o.kind, project(obstacle_assignment(o, dyn), catalog)))
    return out


# -- the oracle human authority --------------------------------------------------

# per obstacle action and level: the feature values under which the human
# gives the positive signal (approve at l1, no signal at l2)
DEFAULT_RULES = {
    CROSS: {
        Level.L1: {"visibility": ("clear",), "traffic": ("none", "light")},
        Level.L2: {"visibility": ("clear",), "traffic": ("none",)},
    },
    OPEN_DOOR: {
        Level.L1: {"size": ("light", "medium"), "mechanism": ("push",)},
        Level.L2: {"size": ("light",), "mechanism": ("push",)},
    },
}
POSITIVE = {Level.L1: Signal.APPROVE, Level.L2: Signal.NONE}
NEGATIVE = {Level.L1: Signal.DISAPPROVE, Level.L2: Signal.OVERRIDE}


def parse_rules(raw: Mapping | None) -> dict:
    if not raw:
        return DEFAULT_RULES
    out = {}
    for action, per_level in raw.items():
        if action not in (CROSS, OPEN_DOOR):
            raise ValueError(f"rules: unknown obstacle action {action!r}")
        out[action] = {}
        for level, conds in per_level.items():
            lvl = Level.parse(level)
            if lvl not in POSITIVE:
                raise ValueError(f"rules: no feedback rule can exist at {lvl.label}")
            parsed = {}
            for name, values in conds.items():
                values = (values,) if isinstance(values, str) else tuple(values)
                for v in values:
                    if name not in FEATURE_VALUES or v not in FEATURE_VALUES[name]:
                        raise ValueError(f"rules: {name}={v!r} is not a campus feature value")
                parsed[name] = values
            out[action][lvl] = parsed
    return out


@dataclass(frozen=True)
class OracleAuthority:
    rules: dict = field(default_factory=lambda: DEFAULT_RULES)
    epsilon: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    def intended(self, context: Mapping, action: str, level) -> Signal:
        level = Level(level)
        if level not in POSITIVE:
            raise ValueError(f"the human gives no feedback at {level.label}")
        conds = self.rules.get(action, {}).get(level)
        if conds is None:
            return POSITIVE[level]
        ok = all(context.get(n) in vals for n, vals in conds.items())
        return POSITIVE[level] if ok else NEGATIVE[level]

    def distribution(self, context: Mapping, action: str, level) -> np.ndarray:
        level = Level(level)
        out = np.zeros(len(SIGNALS))
        if level not in POSITIVE:
            out[Signal.NONE] = 1.0
            return out
        mask = legal_mask(level)
        out[mask] = self.epsilon / mask.sum()
        out[self.intended(context, action, level)] += 1.0 - self.epsilon
        return out


def as_context(full: Sequence) -> dict:
    return dict(zip(_CATALOG_ORDER, full))


def oracle_feedback(authority: OracleAuthority, context, action: str, level, rng: np.random.Generator) -> Signal:
    """Intended signal with probability 1 - epsilon, else uniform over legal signals."""
    level = Level(level)
    if level not in POSITIVE:
        raise ValueError(f"the human gives no feedback at {level.label}")
    if not isinstance(context, Mapping):
        context = as_context(context)
    intended = authority.intended(context, action, level)
    if rng.random() < authority.epsilon:
        legal = LEGAL_SIGNALS[level]
        return legal[int(rng.integers(len(legal)))]
    return intended


def oracle_transition(cmap: CampusMap, cell: tuple, action: str) -> tuple:
    """The human takes the robot through the obstacle; identity elsewhere."""
    o = cmap.approach.get(cell)
    if o is None or action != o.action:
        return cell
    return o.far_side(cell)


# -- tasks -------------------------------------------------------------------------


@dataclass(frozen=True)
class Task:
    start: str
    goal: str
    mode: str = "fixed"

    def __post_init__(self):
        if self.start == self.goal:
            raise ValueError("start and goal rooms must differ")
        if self.mode not in ("fixed", "random"):
            raise ValueError(f"unknown task mode {self.mode!r}")


def sample_task(
    cmap: CampusMap, mode: str, rng: np.random.Generator, fixed: tuple | None = None
) -> Task:
    names = cmap.room_names()
    if len(names) < 2:
        raise MapError("a task needs at least two rooms")
    if mode == "fixed":
        start, goal = fixed if fixed is not None else (names[0], names[-1])
        for n in (start, goal):
            if n not in cmap.rooms:
                raise MapError(f"unknown room {n!r}")
        return Task(start, goal, "fixed")
    if mode != "random":
        raise ValueError(f"unknown task mode {mode!r}")
    i, j = rng.choice(len(names), size=2, replace=False)
    return Task(names[int(i)], names[int(j)], "random")


# -- the robot's domain model ------------------------------------------------------


def _arrival(o: Obstacle, catalog: FeatureCatalog, dyn_dist: np.ndarray) -> list:
    """(active values, prob) for standing at one of o's approach cells."""
    values = FEATURE_VALUES[o.dynamic]
    names = catalog.active_names
    if o.dynamic not in catalog.active:
        return [(project(obstacle_assignment(o, values[0]), catalog, names), 1.0)]
    return [
        (project(obstacle_assignment(o, v), catalog, names), float(p))
        for v, p in zip(values, dyn_dist)
        if p > 0
    ]


def state_of(cmap: CampusMap, catalog: FeatureCatalog, cell: tuple, full: Sequence) -> tuple:
    """The robot's domain state for a true cell and complete feature tuple."""
    return (cell, project(full, catalog))


def build_domain_ssp(cmap: CampusMap, catalog: FeatureCatalog, task: Task) -> Ssp:
    """Deterministic grid movement plus obstacle actions, over (cell, active features)."""
    start_cell, goal_cell = cmap.rooms[task.start], cmap.rooms[task.goal]
    blank = project(empty_assignment(), catalog)
    start, goal = (start_cell, blank), (goal_cell, blank)

    def outcomes(state, action):
        cell, values = state
        o = cmap.approach.get(cell)
        if action == OPEN_DOOR or action == CROSS:
            far = o.far_side(cell)
            if o.dynamic in catalog.active:
                k = catalog.active_names.index(o.dynamic)
                cur = FEATURE_VALUES[o.dynamic].index(values[k])
                return [((far, v), p) for v, p in _arrival(o, catalog, CHAINS[o.dynamic][cur])]
            return [((far, v), p) for v, p in _arrival(o, catalog, None)]
        nxt = _neighbor(cell, action)
        target = cmap.approach.get(nxt)
        if target is None:
            return [((nxt, blank), 1.0)]
        return [((nxt, v), p) for v, p in _arrival(target, catalog, stationary(CHAINS[target.dynamic]))]

    def actions_at(state):
        cell = state[0]
        acts = [m for m in MOVES if cmap.standable(_neighbor(cell, m))]
        o = cmap.approach.get(cell)
        if o is not None:
            acts.append(o.action)
        return acts

    transitions: dict = {}
    costs: dict = {}
    available: dict = {}
    seen = {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        acts = actions_at(s)
        if not acts:
            raise MapError(f"cell {s[0]} has no available action")
        available[s] = acts
        for a in acts:
            if s == goal:
                transitions[(s, a)] = {s: 1.0}
                costs[(s, a)] = 0.0
                continue
            dist: dict = {}
            for s2, p in outcomes(s, a):
                dist[s2] = dist.get(s2, 0.0) + p
                if s2 not in seen:
                    seen.add(s2)
                    queue.append(s2)
            transitions[(s, a)] = dist
            costs[(s, a)] = 1.0
    if goal not in seen:
        raise MapError(f"goal room {task.goal!r} is unreachable from {task.start!r}")
    states = sorted(seen, key=lambda s: (s[0][1], s[0][0], s[1]))
    return Ssp.from_tables(states, ACTIONS, available, transitions, costs, start, goal)
