"""Benchmark environments: exploration (one room / four rooms), beach bar, linear-quadratic."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import (
    GRID_ACTIONS,
    ActionSpace,
    EnvModel,
    StateSpace,
    ValidationError,
    integer_actions,
    validate_distribution,
)

# Guards log(0) in crowd-aversion terms when the exact solvers visit empty states.
MU_FLOOR = 1e-10

NOISE_STAY = 0.9
NOISE_MOVE = 0.025
# (probability, displacement) for none/up/down/left/right
GRID_NOISE = (
    (NOISE_STAY, (0, 0)),
    (NOISE_MOVE, (-1, 0)),
    (NOISE_MOVE, (1, 0)),
    (NOISE_MOVE, (0, -1)),
    (NOISE_MOVE, (0, 1)),
)


def build_four_rooms(width: int, height: int) -> frozenset:
    """Cross of walls through the middle row/column with one door per wall arm.

    Doors sit mid-arm and mirror each other through the center cell.
    """
    if width < 7 or height < 7 or width % 2 == 0 or height % 2 == 0:
        raise ValidationError("four-rooms layout needs odd dimensions >= 7")
    mid_r, mid_c = height // 2, width // 2
    walls = {(mid_r, c) for c in range(width)} | {(r, mid_c) for r in range(height)}
    doors = {
        (mid_r, mid_c // 2),
        (mid_r, width - 1 - mid_c // 2),
        (mid_r // 2, mid_c),
        (height - 1 - mid_r // 2, mid_c),
    }
    return frozenset(walls - doors)


def connected_components(states: StateSpace) -> int:
    """Number of 4-connected components of the free cells (BFS)."""
    seen: set = set()
    count = 0
    for start in states.cells:
        if start in seen:
            continue
        count += 1
        queue = deque([start])
        seen.add(start)
        while queue:
            r, c = queue.popleft()
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                nb = (r + dr, c + dc)
                if nb not in seen and states.is_free(nb):
                    seen.add(nb)
                    queue.append(nb)
    return count


def _grid_move(states: StateSpace, cell, disp):
    target = (cell[0] + disp[0], cell[1] + disp[1])
    return target if states.is_free(target) else cell


def grid_transition(states: StateSpace, x: int, a: int, actions: ActionSpace = GRID_ACTIONS) -> np.ndarray:
    """Action move then noise move; a blocked stage leaves the agent where it was."""
    states.check_index(x)
    actions.check_index(a)
    out = np.zeros(states.size)
    y = _grid_move(states, states.cells[x], actions.displacements[a])
    for prob, delta in GRID_NOISE:
        z = _grid_move(states, y, delta)
        out[states.index(z)] += prob
    return out


def grid_kernel(states: StateSpace, actions: ActionSpace = GRID_ACTIONS) -> np.ndarray:
    return np.stack(
        [np.stack([grid_transition(states, x, a, actions) for a in range(actions.size)]) for x in range(states.size)]
    )


def crowd_term(mu: np.ndarray) -> np.ndarray:
    return -np.log(np.maximum(mu, MU_FLOOR))


@dataclass(frozen=True)
class ExplorationSpec:
    width: int = 11
    height: int = 11
    walls: frozenset = frozenset()
    horizon: int = 30

    @classmethod
    def four_rooms(cls, width: int = 11, height: int = 11, horizon: int = 30) -> "ExplorationSpec":
        return cls(width, height, build_four_rooms(width, height), horizon)

    @cached_property
    def states(self) -> StateSpace:
        return StateSpace("grid2d", self.width, self.height, frozenset(self.walls))


def exploration_transition(x: int, a: int, spec: ExplorationSpec) -> np.ndarray:
    return grid_transition(spec.states, x, a)


def exploration_reward(x: int, a: int, mu, spec: ExplorationSpec) -> float:
    states = spec.states
    states.check_index(x)
    GRID_ACTIONS.check_index(a)
    mu = validate_distribution(mu, states.size)
    return -math.log(max(mu[x], MU_FLOOR)) - GRID_ACTIONS.magnitudes()[a] / states.size


def exploration_model(spec: ExplorationSpec) -> EnvModel:
    states = spec.states
    move_cost = GRID_ACTIONS.magnitudes() / states.size

    def reward(n, mu):
        return crowd_term(mu)[:, None] - move_cost[None, :]

    name = "exploration-four-rooms" if spec.walls else "exploration-one-room"
    return EnvModel(states, GRID_ACTIONS, spec.horizon, grid_kernel(states), reward, name=name)


@dataclass(frozen=True)
class BeachBarSpec:
    dimension: int = 2
    size: int = 11
    closing_time: int | None = None
    horizon: int = 30

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValidationError("beach bar dimension must be 1 or 2")
        if self.closing_time is not None and not 0 <= self.closing_time < self.horizon:
            raise ValidationError("closing time must lie in [0, N_T)")

    @cached_property
    def states(self) -> StateSpace:
        # 1D beach: a single-row grid, so vertical moves are blocked like walls.
        height = self.size if self.dimension == 2 else 1
        return StateSpace("grid2d", self.size, height)

    @property
    def bar_cell(self) -> tuple:
        height = self.size if self.dimension == 2 else 1
        return (height // 2, self.size // 2)

    def bar_distance_term(self) -> np.ndarray:
        """Attraction term ``-||x - x_bar||_1 / |X|`` for every state."""
        br, bc = self.bar_cell
        dist = np.array([abs(r - br) + abs(c - bc) for r, c in self.states.cells], dtype=float)
        return -dist / self.states.size

    def closed(self, n: int) -> bool:
        return self.closing_time is not None and n >= self.closing_time


def beachbar_reward(x: int, a: int, mu, n: int, spec: BeachBarSpec) -> float:
    states = spec.states
    states.check_index(x)
    GRID_ACTIONS.check_index(a)
    mu = validate_distribution(mu, states.size)
    bar = 0.0 if spec.closed(n) else spec.bar_distance_term()[x]
    return bar - GRID_ACTIONS.magnitudes()[a] / states.size - math.log(max(mu[x], MU_FLOOR))


def beachbar_model(spec: BeachBarSpec) -> EnvModel:
    states = spec.states
    move_cost = GRID_ACTIONS.magnitudes() / states.size
    bar = spec.bar_distance_term()

    def reward(n, mu):
        base = crowd_term(mu)[:, None] - move_cost[None, :]
        return base if spec.closed(n) else base + bar[:, None]

    return EnvModel(states, GRID_ACTIONS, spec.horizon, grid_kernel(states), reward, name=f"beach-bar-{spec.dimension}d")


@dataclass(frozen=True)
class LQSpec:
    L: int = 20
    M: int = 3
    sigma: float = 1.0
    dt: float = 1.0
    q: float = 0.01
    kappa: float = 0.5
    c_term: float = 1.0
    horizon: int = 30

    @cached_property
    def states(self) -> StateSpace:
        return StateSpace("chain1d", 2 * self.L + 1, offset=-self.L)

    @cached_property
    def actions(self) -> ActionSpace:
        return integer_actions(self.M)


# Standard-normal noise discretized on {-3, ..., 3}.
_NOISE_SUPPORT = np.arange(-3, 4)
_phi = np.exp(-0.5 * _NOISE_SUPPORT.astype(float) ** 2) / math.sqrt(2 * math.pi)
LQ_NOISE_PROBS = _phi / _phi.sum()


def _round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def lq_transition(x: int, a: int, spec: LQSpec) -> np.ndarray:
    """``x`` and ``a`` are integer values (not indices); returns a distribution over state indices."""
    if not -spec.L <= x <= spec.L:
        raise ValidationError(f"LQ state {x} outside [-{spec.L}, {spec.L}]")
    if not -spec.M <= a <= spec.M:
        raise ValidationError(f"LQ action {a} outside [-{spec.M}, {spec.M}]")
    out = np.zeros(2 * spec.L + 1)
    for k, prob in zip(_NOISE_SUPPORT, LQ_NOISE_PROBS):
        nxt = _round_half_away(x + a * spec.dt + spec.sigma * k * math.sqrt(spec.dt))
        nxt = min(max(nxt, -spec.L), spec.L)
        out[nxt + spec.L] += prob
    return out


def lq_reward(x: int, a: int, mu, n: int, spec: LQSpec) -> float:
    mu = validate_distribution(mu, 2 * spec.L + 1)
    m = float(spec.states.values() @ mu)
    gap = m - x
    if n >= spec.horizon:
        return -0.5 * spec.c_term * gap**2
    return (-0.5 * a * a + spec.q * a * gap - 0.5 * spec.kappa * gap**2) * spec.dt


def lq_model(spec: LQSpec) -> EnvModel:
    states, actions = spec.states, spec.actions
    xs = states.values()
    acts = np.array([d[0] for d in actions.displacements], dtype=float)
    kernel = np.stack(
        [np.stack([lq_transition(int(x), int(a), spec) for a in acts]) for x in xs]
    )

    def reward(n, mu):
        gap = float(xs @ mu) - xs
        if n >= spec.horizon:
            return np.repeat((-0.5 * spec.c_term * gap**2)[:, None], acts.size, axis=1)
        return (
            -0.5 * acts[None, :] ** 2
            + spec.q * acts[None, :] * gap[:, None]
            - 0.5 * spec.kappa * gap[:, None] ** 2
        ) * spec.dt

    return EnvModel(states, actions, spec.horizon, kernel, reward, name="linear-quadratic", terminal_reward=True)


ENVIRONMENTS = ("exploration", "four-rooms", "beach-bar", "lq")


def random_game(rng: np.random.Generator, n_states: int, n_actions: int, horizon: int,
                crowd: float = 1.0) -> EnvModel:
    """Random dense kernel and rewards, plus ``crowd * -log mu`` so the flow matters."""
    if n_states < 1 or n_actions < 1:
        raise ValidationError("random game needs at least one state and one action")
    states = StateSpace("chain1d", n_states)
    actions = ActionSpace(tuple(f"a{i}" for i in range(n_actions)), tuple((i,) for i in range(n_actions)))
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    base = rng.normal(size=(horizon + 1, n_states, n_actions))

    def reward(n, mu):
        return base[n] + crowd * crowd_term(mu)[:, None]

    return EnvModel(states, actions, horizon, kernel, reward, name="random-game")
