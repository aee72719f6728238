"""Grid-world crowd models with a congestion-averse reward."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from typing import Optional

import numpy as np

from ..core import NORM_TOL, MfgModel
from ..exceptions import ConfigurationError, GridParseError

UP, DOWN, LEFT, RIGHT, STAY = range(5)
ACTION_NAMES = ("UP", "DOWN", "LEFT", "RIGHT", "STAY")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))

HEADER_KEYS = ("horizon", "gamma", "c_pos", "c_move", "c_pop", "crowd_eps")
OPTIONAL_KEYS = ("version",)


@dataclass(frozen=True, eq=False)
class GridEnvSpec:
    """Immutable description of a grid environment.

    ``walls`` is a ``(height, width)`` boolean array, cells are ``(row, col)``
    with row 0 at the top. States are the free cells in row-major order and
    ``initial_distribution`` is indexed by state.
    """

    width: int
    height: int
    walls: np.ndarray
    goal: tuple
    horizon: int
    initial_distribution: np.ndarray
    reward_coeffs: tuple = (1.0, 1.0, 1.0)
    crowd_eps: float = 1e-8
    gamma: float = 0.99
    version: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        walls = np.asarray(self.walls, dtype=bool)
        if walls.shape != (self.height, self.width):
            raise ConfigurationError(
                f"walls shape {walls.shape} does not match {self.height}x{self.width}"
            )
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "goal", tuple(int(v) for v in self.goal))
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1")
        if not (~walls).any():
            raise ConfigurationError("no free cells")
        r, c = self.goal
        if not (0 <= r < self.height and 0 <= c < self.width) or walls[r, c]:
            raise ConfigurationError(f"goal {self.goal} is not a free cell")
        m0 = np.asarray(self.initial_distribution, dtype=float)
        if m0.shape != (self.num_states,):
            raise ConfigurationError(
                f"initial_distribution has length {m0.size}, expected {self.num_states}"
            )
        if np.any(m0 < 0) or abs(m0.sum() - 1.0) > NORM_TOL:
            raise ConfigurationError("initial_distribution must sum to 1")
        object.__setattr__(self, "initial_distribution", m0)
        coeffs = tuple(float(v) for v in self.reward_coeffs)
        if len(coeffs) != 3 or min(coeffs) < 0:
            raise ConfigurationError("reward_coeffs must be three nonnegative numbers")
        object.__setattr__(self, "reward_coeffs", coeffs)
        if not self.crowd_eps > 0:
            raise ConfigurationError("crowd_eps must be positive")

    def __eq__(self, other):
        if not isinstance(other, GridEnvSpec):
            return NotImplemented
        return (
            (self.width, self.height, self.goal, self.horizon)
            == (other.width, other.height, other.goal, other.horizon)
            and np.array_equal(self.walls, other.walls)
            and np.array_equal(self.initial_distribution, other.initial_distribution)
            and (self.reward_coeffs, self.crowd_eps, self.gamma)
            == (other.reward_coeffs, other.crowd_eps, other.gamma)
        )

    __hash__ = None

    @cached_property
    def free_cells(self) -> list:
        return [tuple(map(int, rc)) for rc in np.argwhere(~self.walls)]

    @cached_property
    def cell_index(self) -> dict:
        return {cell: i for i, cell in enumerate(self.free_cells)}

    @property
    def num_states(self) -> int:
        return int((~self.walls).sum())

    @property
    def num_actions(self) -> int:
        return len(MOVES)

    @property
    def obs_dim(self) -> int:
        return self.num_states + 1

    @cached_property
    def next_state(self) -> np.ndarray:
        """Deterministic successor ``next_state[s, a]``; blocked moves stay put."""
        out = np.empty((self.num_states, len(MOVES)), dtype=np.intp)
        for s, (r, c) in enumerate(self.free_cells):
            for a, (dr, dc) in enumerate(MOVES):
                target = self.cell_index.get((r + dr, c + dc))
                out[s, a] = s if target is None else target
        return out

    @cached_property
    def transition_tensor(self) -> np.ndarray:
        kernel = np.zeros((self.num_states, len(MOVES), self.num_states))
        s_idx = np.arange(self.num_states)[:, None]
        a_idx = np.arange(len(MOVES))[None, :]
        kernel[s_idx, a_idx, self.next_state] = 1.0
        kernel.flags.writeable = False
        return kernel

    @cached_property
    def position_reward(self) -> np.ndarray:
        """Negative L1 distance to the goal, scaled by ``width + height``."""
        cells = np.array(self.free_cells)
        dist = np.abs(cells - np.array(self.goal)).sum(axis=1)
        return -dist / (self.width + self.height)

    @cached_property
    def move_reward(self) -> np.ndarray:
        out = np.full(len(MOVES), -1.0 / self.horizon)
        out[STAY] = 0.0
        return out

    def reward_table(self, mu: np.ndarray) -> np.ndarray:
        """Reward for every (state, action) pair given the population ``mu``."""
        c_pos, c_move, c_pop = self.reward_coeffs
        pop = -np.log(np.clip(mu, 0.0, None) + self.crowd_eps)
        per_state = c_pos * self.position_reward + c_pop * pop
        return per_state[:, None] + c_move * self.move_reward[None, :]

    def state_of(self, s) -> int:
        """Accept a state index or a ``(row, col)`` cell and return the index."""
        if isinstance(s, tuple):
            try:
                return self.cell_index[tuple(int(v) for v in s)]
            except KeyError:
                raise ValueError(f"cell {s} is not a free cell") from None
        s = int(s)
        if not 0 <= s < self.num_states:
            raise ValueError(f"state {s} out of range [0, {self.num_states})")
        return s


def reward(spec: GridEnvSpec, s, a: int, mu_s: float) -> float:
    """Scalar reward for one agent at ``s`` taking ``a`` when ``mu_s`` of the crowd is there."""
    s = spec.state_of(s)
    if not 0 <= a < len(MOVES):
        raise ValueError(f"action {a} out of range")
    if not 0.0 <= mu_s <= 1.0:
        raise ValueError(f"population mass {mu_s} outside [0, 1]")
    c_pos, c_move, c_pop = spec.reward_coeffs
    return float(
        c_pos * spec.position_reward[s]
        + c_move * spec.move_reward[a]
        - c_pop * np.log(mu_s + spec.crowd_eps)
    )


def encode_observation(spec: GridEnvSpec, s, n: int) -> np.ndarray:
    """One-hot over free cells followed by the normalized time ``n / horizon``."""
    s = spec.state_of(s)
    if not 0 <= n <= spec.horizon:
        raise ValueError(f"time step {n} outside [0, {spec.horizon}]")
    obs = np.zeros(spec.obs_dim)
    obs[s] = 1.0
    obs[-1] = n / spec.horizon
    return obs


def observation_table(num_states: int, horizon: int) -> np.ndarray:
    """Every encoded observation, shape ``(horizon + 1, num_states, num_states + 1)``.

    Same layout as :func:`encode_observation`; works for any model, not only grids.
    """
    steps = horizon + 1
    obs = np.zeros((steps, num_states, num_states + 1))
    obs[:, np.arange(num_states), np.arange(num_states)] = 1.0
    obs[:, :, -1] = (np.arange(steps) / max(horizon, 1))[:, None]
    return obs


def make_model(spec: GridEnvSpec, discount_mode: str = "discounted") -> MfgModel:
    """Wrap ``spec`` as an :class:`MfgModel`; transitions ignore the population."""
    kernel = spec.transition_tensor

    def transition(s, a, mu):
        return kernel[s, a]

    def scalar_reward(s, a, mu):
        return reward(spec, s, a, float(mu[s]))

    return MfgModel(
        num_states=spec.num_states,
        num_actions=spec.num_actions,
        horizon=spec.horizon,
        initial_dist=spec.initial_distribution,
        transition=transition,
        reward=scalar_reward,
        discount=spec.gamma,
        discount_mode=discount_mode,
        transition_tensor=lambda mu: kernel,
        reward_table=spec.reward_table,
    )


# --- wall-map text format -------------------------------------------------


def _parse_number(key, raw, lineno):
    try:
        return int(raw) if key == "horizon" else float(raw)
    except ValueError:
        raise GridParseError(f"bad value {raw!r} for {key}", lineno) from None


def load_gridspec(text: str) -> GridEnvSpec:
    """Parse a wall-map document.

    The document starts with ``key = value`` header lines (blank lines are
    ignored), followed by equal-length rows over ``#`` (wall), ``.`` (free),
    ``G`` (goal) and ``S`` (free cell in the initial support). The initial
    distribution is uniform over ``S`` cells, or over every free cell when
    there is none.
    """
    header = {}
    rows = []
    row_lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            if rows:
                # a blank line ends the grid; anything after must be blank too
                row_lines.append(None)
            continue
        if "=" in line and not rows:
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in HEADER_KEYS + OPTIONAL_KEYS:
                raise GridParseError(f"unknown header key {key!r}", lineno)
            if key in header:
                raise GridParseError(f"duplicate header key {key!r}", lineno)
            header[key] = value if key == "version" else _parse_number(key, value, lineno)
            continue
        if row_lines and row_lines[-1] is None:
            raise GridParseError("unexpected content after grid", lineno)
        rows.append(line)
        row_lines.append(lineno)

    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        raise GridParseError(f"missing header keys: {', '.join(missing)}")
    if not rows:
        raise GridParseError("no grid rows")
    row_lines = [ln for ln in row_lines if ln is not None]

    width = len(rows[0])
    walls = np.zeros((len(rows), width), dtype=bool)
    goal = None
    support = []
    for r, (row, lineno) in enumerate(zip(rows, row_lines)):
        if len(row) != width:
            raise GridParseError(
                f"ragged row: length {len(row)}, expected {width}", lineno
            )
        for c, ch in enumerate(row):
            if ch == "#":
                walls[r, c] = True
            elif ch == "G":
                if goal is not None:
                    raise GridParseError("multiple goals", lineno, c + 1)
                goal = (r, c)
            elif ch == "S":
                support.append((r, c))
            elif ch != ".":
                raise GridParseError(f"unknown character {ch!r}", lineno, c + 1)
    if walls.all():
        raise GridParseError("no free cells")
    if goal is None:
        raise GridParseError("no goal cell")

    free = [tuple(map(int, rc)) for rc in np.argwhere(~walls)]
    index = {cell: i for i, cell in enumerate(free)}
    m0 = np.zeros(len(free))
    if support:
        m0[[index[cell] for cell in support]] = 1.0 / len(support)
    else:
        m0[:] = 1.0 / len(free)

    c_pos, c_move, c_pop = header["c_pos"], header["c_move"], header["c_pop"]
    try:
        return GridEnvSpec(
            width=width,
            height=len(rows),
            walls=walls,
            goal=goal,
            horizon=header["horizon"],
            initial_distribution=m0,
            reward_coeffs=(c_pos, c_move, c_pop),
            crowd_eps=header["crowd_eps"],
            gamma=header["gamma"],
            version=header.get("version"),
        )
    except ConfigurationError as exc:
        raise GridParseError(str(exc)) from None


def serialize_gridspec(spec: GridEnvSpec) -> str:
    """Canonical wall-map text for ``spec``; inverse of :func:`load_gridspec`."""
    m0 = spec.initial_distribution
    support = np.flatnonzero(m0 > 0)
    if not np.allclose(m0[support], 1.0 / len(support), rtol=0, atol=NORM_TOL):
        raise ConfigurationError("only uniform initial distributions can be serialized")
    mark_support = len(support) < spec.num_states
    goal_state = spec.cell_index[spec.goal]
    if mark_support and goal_state in support:
        raise ConfigurationError("goal cell cannot be part of the initial support")

    c_pos, c_move, c_pop = spec.reward_coeffs
    lines = []
    if spec.version is not None:
        lines.append(f"version = {spec.version}")
    lines += [
        f"horizon = {spec.horizon}",
        f"gamma = {spec.gamma!r}",
        f"c_pos = {c_pos!r}",
        f"c_move = {c_move!r}",
        f"c_pop = {c_pop!r}",
        f"crowd_eps = {spec.crowd_eps!r}",
        "",
    ]
    grid = np.where(spec.walls, "#", ".").astype("<U1")
    if mark_support:
        for s in support:
            grid[spec.free_cells[s]] = "S"
    grid[spec.goal] = "G"
    lines += ["".join(row) for row in grid]
    return "\n".join(lines) + "\n"


def load_builtin(name: str) -> GridEnvSpec:
    text = resources.files(__package__).joinpath("data", f"{name}.grid").read_text()
    return load_gridspec(text)


def build_four_rooms(discount_mode: str = "discounted", **overrides):
    """10x10 four-room layout, goal in the bottom-right room, 40 steps."""
    spec = load_builtin("four_rooms")
    if overrides:
        spec = replace(spec, **overrides)
    return spec, make_model(spec, discount_mode)


def build_maze(discount_mode: str = "discounted", **overrides):
    """20x20 maze, goal in the lower-right region, 100 steps."""
    spec = load_builtin("maze")
    if overrides:
        spec = replace(spec, **overrides)
    return spec, make_model(spec, discount_mode)


def reachable_from(spec: GridEnvSpec, start) -> set:
    """Flood fill over free cells from ``start`` using the four moves."""
    start = spec.free_cells[spec.state_of(start)]
    seen = {start}
    frontier = [start]
    while frontier:
        r, c = frontier.pop()
        for dr, dc in MOVES[:4]:
            cell = (r + dr, c + dc)
            if cell in spec.cell_index and cell not in seen:
                seen.add(cell)
                frontier.append(cell)
    return seen
