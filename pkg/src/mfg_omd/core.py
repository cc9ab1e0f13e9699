"""State/action spaces, environment models and exact mean-field propagation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

MASS_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when an input violates a documented contract."""


@dataclass(frozen=True)
class StateSpace:
    """Finite state space; either a 2D grid with walls or a 1D integer chain.

    Grid states are indexed row-major over the non-wall cells. Chain states map
    index ``i`` to the integer value ``offset + i``.
    """

    kind: str
    width: int
    height: int = 1
    walls: frozenset = frozenset()
    offset: int = 0
    cells: tuple = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("grid2d", "chain1d"):
            raise ValidationError(f"unknown state-space kind {self.kind!r}")
        if self.width < 1 or self.height < 1:
            raise ValidationError("state-space dimensions must be positive")
        if self.kind == "chain1d":
            if self.height != 1 or self.walls:
                raise ValidationError("chain state spaces have height 1 and no walls")
            cells = tuple((0, c) for c in range(self.width))
        else:
            walls = frozenset(tuple(w) for w in self.walls)
            object.__setattr__(self, "walls", walls)
            cells = tuple(
                (r, c)
                for r in range(self.height)
                for c in range(self.width)
                if (r, c) not in walls
            )
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "_index", {cell: i for i, cell in enumerate(cells)})

    @property
    def size(self) -> int:
        return len(self.cells)

    def index(self, cell) -> int:
        """Dense index of a grid cell ``(row, col)``; walls and off-grid raise."""
        try:
            return self._index[tuple(cell)]
        except KeyError:
            raise ValidationError(f"{cell} is not a valid state") from None

    def is_free(self, cell) -> bool:
        return tuple(cell) in self._index

    def values(self) -> np.ndarray:
        """Integer value of each chain state (column index for grids)."""
        return np.array([c for _, c in self.cells], dtype=float) + self.offset

    def check_index(self, x: int) -> None:
        if not 0 <= x < self.size:
            raise ValidationError(f"state index {x} out of range [0, {self.size})")


@dataclass(frozen=True)
class ActionSpace:
    names: tuple
    displacements: tuple

    @property
    def size(self) -> int:
        return len(self.names)

    def magnitudes(self) -> np.ndarray:
        """L1 norm of each action's displacement."""
        return np.array([float(np.abs(d).sum()) for d in self.displacements])

    def check_index(self, a: int) -> None:
        if not 0 <= a < self.size:
            raise ValidationError(f"action index {a} out of range [0, {self.size})")


GRID_ACTIONS = ActionSpace(
    names=("up", "down", "left", "right", "stay"),
    displacements=((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)),
)


def integer_actions(max_move: int) -> ActionSpace:
    moves = tuple(range(-max_move, max_move + 1))
    return ActionSpace(names=tuple(str(m) for m in moves), displacements=tuple((m,) for m in moves))


class EnvModel:
    """Finite-horizon MFG model with a (population-independent) kernel.

    ``kernel`` has shape ``(|X|, |A|, |X|)``. ``reward(n, mu)`` returns the full
    ``(|X|, |A|)`` reward table at step ``n`` facing distribution ``mu``;
    ``n == horizon`` gives the terminal reward.
    """

    def __init__(
        self,
        states: StateSpace,
        actions: ActionSpace,
        horizon: int,
        kernel: np.ndarray,
        reward: Callable[[int, np.ndarray], np.ndarray],
        name: str = "model",
        terminal_reward: bool = False,
    ):
        kernel = np.asarray(kernel, dtype=float)
        if kernel.shape != (states.size, actions.size, states.size):
            raise ValidationError(f"kernel shape {kernel.shape} does not match spaces")
        if horizon < 0:
            raise ValidationError("horizon must be non-negative")
        self.states = states
        self.actions = actions
        self.horizon = int(horizon)
        self.kernel = kernel
        self._reward = reward
        self.name = name
        self.terminal_reward = terminal_reward

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def n_actions(self) -> int:
        return self.actions.size

    def transition_matrix(self, n: int, mu: np.ndarray) -> np.ndarray:
        del n, mu  # population-independent kernels only
        return self.kernel

    def reward(self, n: int, mu: np.ndarray) -> np.ndarray:
        return self._reward(n, mu)

    def __repr__(self):
        return f"EnvModel({self.name}, |X|={self.n_states}, |A|={self.n_actions}, N_T={self.horizon})"


class Policy(Protocol):
    """Anything that maps ``(n, mu)`` to a ``(|X|, |A|)`` table of action probabilities."""

    def action_probs(self, n: int, mu: np.ndarray) -> np.ndarray: ...


@dataclass
class TabularPolicy:
    """Population-independent policy ``probs[n, x, a]``, n = 0..N_T."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 3:
            raise ValidationError("tabular policy must have shape (N_T+1, |X|, |A|)")
        if (self.probs < 0).any() or not np.allclose(self.probs.sum(-1), 1.0, atol=MASS_TOL, rtol=0):
            raise ValidationError("policy rows must be distributions")

    def action_probs(self, n: int, mu: np.ndarray) -> np.ndarray:
        return self.probs[n]

    @classmethod
    def uniform(cls, model: EnvModel) -> "TabularPolicy":
        shape = (model.horizon + 1, model.n_states, model.n_actions)
        return cls(np.full(shape, 1.0 / model.n_actions))


def validate_distribution(mu, size: int | None = None) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1:
        raise ValidationError("distribution must be one-dimensional")
    if size is not None and mu.shape[0] != size:
        raise ValidationError(f"distribution has {mu.shape[0]} entries, expected {size}")
    if not np.isfinite(mu).all() or (mu < 0).any():
        raise ValidationError("distribution entries must be finite and non-negative")
    if abs(mu.sum() - 1.0) > MASS_TOL:
        raise ValidationError(f"distribution sums to {mu.sum():.15g}")
    return mu


def dirac(size: int, x: int) -> np.ndarray:
    mu = np.zeros(size)
    mu[x] = 1.0
    return mu


def uniform_distribution(size: int) -> np.ndarray:
    return np.full(size, 1.0 / size)


def forward_step(mu, policy_slice, model: EnvModel, n: int) -> np.ndarray:
    """Exact push-forward of ``mu`` through one step of policy and dynamics."""
    if n >= model.horizon:
        raise ValidationError(f"cannot step past the horizon (n={n}, N_T={model.horizon})")
    mu = validate_distribution(mu, model.n_states)
    pi = np.asarray(policy_slice, dtype=float)
    if pi.shape != (model.n_states, model.n_actions):
        raise ValidationError(f"policy slice shape {pi.shape} does not match model")
    kernel = model.transition_matrix(n, mu)
    return np.einsum("x,xa,xay->y", mu, pi, kernel)


def rollout(mu0, policy: Policy, model: EnvModel) -> tuple[np.ndarray, np.ndarray]:
    """Induced flow and the action tables the policy used along it.

    Returns ``(flow, probs)`` with shapes ``(N_T+1, |X|)`` and ``(N_T+1, |X|, |A|)``.
    """
    mu = validate_distribution(mu0, model.n_states)
    flow = np.empty((model.horizon + 1, model.n_states))
    probs = np.empty((model.horizon + 1, model.n_states, model.n_actions))
    flow[0] = mu
    for n in range(model.horizon + 1):
        probs[n] = policy.action_probs(n, flow[n])
        if n < model.horizon:
            flow[n + 1] = forward_step(flow[n], probs[n], model, n)
    return flow, probs


def induce_flow(mu0, policy: Policy, model: EnvModel) -> np.ndarray:
    return rollout(mu0, policy, model)[0]


def encode_observation(n: int, x: int, mu, horizon: int, n_states: int, master: bool = True) -> np.ndarray:
    """Network input ``[one-hot(n) ; one-hot(x) ; mu]``; the ``mu`` block is dropped if not ``master``."""
    if not 0 <= n <= horizon:
        raise ValidationError(f"timestep {n} outside [0, {horizon}]")
    if not 0 <= x < n_states:
        raise ValidationError(f"state {x} outside [0, {n_states})")
    dim = horizon + 1 + n_states + (n_states if master else 0)
    obs = np.zeros(dim)
    obs[n] = 1.0
    obs[horizon + 1 + x] = 1.0
    if master:
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (n_states,):
            raise ValidationError("distribution length does not match state count")
        obs[horizon + 1 + n_states:] = mu
    return obs


def observation_dim(horizon: int, n_states: int, master: bool = True) -> int:
    return horizon + 1 + n_states * (2 if master else 1)


def encode_all_states(n: int, mu, horizon: int, n_states: int, master: bool = True) -> np.ndarray:
    """Encoded observations for every state at step ``n``, shape ``(|X|, dim)``."""
    obs = np.zeros((n_states, observation_dim(horizon, n_states, master)))
    obs[:, n] = 1.0
    obs[np.arange(n_states), horizon + 1 + np.arange(n_states)] = 1.0
    if master:
        obs[:, horizon + 1 + n_states:] = mu
    return obs


def mix_distributions(mu_a, w_a: float, mu_b, w_b: float) -> np.ndarray:
    if w_a < 0 or w_b < 0:
        raise ValidationError("mixture weights must be non-negative")
    total = w_a + w_b
    if total <= 0:
        raise ValidationError("at least one mixture weight must be positive")
    mu = (w_a * np.asarray(mu_a, dtype=float) + w_b * np.asarray(mu_b, dtype=float)) / total
    return validate_distribution(mu)


def average_flows(flows: Sequence[np.ndarray]) -> np.ndarray:
    return np.mean(np.stack(flows), axis=0)
