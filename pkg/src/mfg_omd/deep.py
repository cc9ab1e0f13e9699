"""Deep MFG learners: master/vanilla Munchausen OMD and DQN-based fictitious play.

Variants:

* ``m-omd``  population-aware network, Munchausen target with the current target network
* ``v-omd2`` same learner without the distribution in the input
* ``v-omd1`` vanilla input, target and behaviour built from the previous-iteration network
* ``m-fp`` / ``v-fp``  fictitious play with a fresh DQN best response per iteration
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, NamedTuple

import numpy as np

from .core import (
    EnvModel,
    TabularPolicy,
    ValidationError,
    encode_all_states,
    observation_dim,
    rollout,
    validate_distribution,
)
from .exact import exploitability
from .neural import (
    AdamState,
    MlpParams,
    Trainer,
    clipped_log,
    hard_target_sync,
    init_mlp,
    mlp_forward,
    softmax_policy,
)

VARIANTS = ("m-omd", "v-omd1", "v-omd2", "m-fp", "v-fp")
MASTER_VARIANTS = ("m-omd", "m-fp")
DEFAULT_TAU = {"m-omd": 50.0, "v-omd2": 50.0, "v-omd1": 5.0}


class Transition(NamedTuple):
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    terminal: bool
    source: int = 0


class Batch(NamedTuple):
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminal: np.ndarray


class ReplayBuffer:
    """Bounded FIFO of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ValidationError("buffer capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros(self.capacity, dtype=int)
        self.rewards = np.zeros(self.capacity)
        self.terminal = np.zeros(self.capacity, dtype=bool)
        self.source = np.zeros(self.capacity, dtype=int)
        self._pos = 0
        self._size = 0
        self.clears = 0

    def __len__(self) -> int:
        return self._size

    def push(self, t: Transition) -> None:
        i = self._pos
        self.obs[i] = t.obs
        self.next_obs[i] = t.next_obs
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.terminal[i] = t.terminal
        self.source[i] = t.source
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self._size < batch_size:
            raise ValidationError(f"cannot sample {batch_size} from a buffer holding {self._size}")
        idx = rng.integers(0, self._size, size=batch_size)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.terminal[idx])

    def clear(self) -> None:
        self._pos = 0
        self._size = 0
        self.clears += 1

    def sources(self) -> np.ndarray:
        """Flow tags of the stored transitions, oldest first."""
        if self._size < self.capacity:
            return self.source[: self._size].copy()
        return np.roll(self.source, -self._pos)


@dataclass
class TrainConfig:
    """Learner hyperparameters with the standard training defaults."""

    variant: str = "m-omd"
    omd_tau: float | None = None
    omd_alpha: float = 1.0
    gamma: float = 0.99
    exploration_fraction: float = 0.1
    exploration_initial_eps: float = 1.0
    exploration_final_eps: float = 0.05
    target_update_freq: int = 4
    batch_size: int = 32
    gradient_steps: int = 1
    episodes_per_iteration: int | None = None
    max_steps_per_iteration: int = 30000
    iterations: int = 200
    n_agents: int = 500
    buffer_capacity: int | None = None
    hidden_layers: tuple = (64, 64)
    learning_rate: float = 1e-4
    sampled_flows: bool = False
    seed: int = 0

    def __post_init__(self):
        self.hidden_layers = tuple(int(h) for h in self.hidden_layers)
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.tau <= 0:
            raise ValidationError("omd_tau must be positive")
        if not 0 < self.gamma <= 1:
            raise ValidationError("gamma must lie in (0, 1]")
        if not 0 <= self.exploration_fraction <= 1:
            raise ValidationError("exploration_fraction must lie in [0, 1]")
        for name in ("target_update_freq", "batch_size", "gradient_steps", "max_steps_per_iteration",
                     "iterations", "n_agents"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.episodes_per_iteration is not None and self.episodes_per_iteration < 1:
            raise ValidationError("episodes_per_iteration must be >= 1")
        if self.buffer_capacity is not None and self.buffer_capacity < 1:
            raise ValidationError("buffer_capacity must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")

    @property
    def tau(self) -> float:
        if self.omd_tau is not None:
            return float(self.omd_tau)
        return DEFAULT_TAU.get(self.variant, 50.0)

    @property
    def master(self) -> bool:
        return self.variant in MASTER_VARIANTS

    @property
    def capacity(self) -> int:
        return self.buffer_capacity or self.max_steps_per_iteration

    def replace(self, **changes) -> "TrainConfig":
        values = asdict(self)
        values.update(changes)
        return TrainConfig(**values)

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------- policies


class QNetPolicy:
    """Softmax (``tau``) or greedy (``tau=None``) policy over a Q-network's outputs."""

    def __init__(self, params: MlpParams, horizon: int, n_states: int, master: bool, tau: float | None):
        self.params = params
        self.horizon = horizon
        self.n_states = n_states
        self.master = master
        self.tau = tau

    def qvalues(self, n: int, mu) -> np.ndarray:
        return mlp_forward(self.params, encode_all_states(n, mu, self.horizon, self.n_states, self.master))

    def action_probs(self, n: int, mu) -> np.ndarray:
        q = self.qvalues(n, mu)
        if self.tau is None:
            out = np.zeros_like(q)
            out[np.arange(len(q)), np.argmax(q, axis=1)] = 1.0
            return out
        return softmax_policy(q, self.tau)


class UniformMixturePolicy:
    """State-conditional uniform average of several policies' action distributions."""

    def __init__(self, members: list):
        if not members:
            raise ValidationError("mixture needs at least one member")
        self.members = list(members)

    def action_probs(self, n: int, mu) -> np.ndarray:
        return np.mean([m.action_probs(n, mu) for m in self.members], axis=0)


# ---------------------------------------------------------------- targets


def _next_value_mask(batch: Batch) -> np.ndarray:
    return (~np.asarray(batch.terminal, dtype=bool)).astype(float)


def munchausen_target(batch: Batch, target: MlpParams, prev: MlpParams, tau: float, gamma: float) -> np.ndarray:
    """``r + tau log pi_prev(a|s) + gamma sum_a' pi_tgt(a'|s') [Q_tgt(s',a') - tau log pi_prev(a'|s')]``."""
    rows = np.arange(len(batch.actions))
    q_prev = mlp_forward(prev, np.concatenate([batch.obs, batch.next_obs]))
    log_prev = clipped_log(softmax_policy(q_prev, tau))
    log_prev_s, log_prev_next = np.split(log_prev, 2)
    q_next = mlp_forward(target, batch.next_obs)
    pi_next = softmax_policy(q_next, tau)
    bootstrap = (pi_next * (q_next - tau * log_prev_next)).sum(axis=1)
    return batch.rewards + tau * log_prev_s[rows, batch.actions] + gamma * _next_value_mask(batch) * bootstrap


def vomd1_target(batch: Batch, prev: MlpParams, tau: float, alpha: float, gamma: float) -> np.ndarray:
    """Previous-iteration network supplies the regularizer, bootstrap policy and bootstrap values."""
    rows = np.arange(len(batch.actions))
    q_prev = mlp_forward(prev, np.concatenate([batch.obs, batch.next_obs]))
    pi_prev = softmax_policy(q_prev, tau)
    log_prev = clipped_log(pi_prev)
    log_prev_s, log_prev_next = np.split(log_prev, 2)
    q_next = np.split(q_prev, 2)[1]
    pi_next = np.split(pi_prev, 2)[1]
    bootstrap = (pi_next * (q_next - tau * log_prev_next)).sum(axis=1)
    return batch.rewards + alpha * tau * log_prev_s[rows, batch.actions] + gamma * _next_value_mask(batch) * bootstrap


def dqn_target(batch: Batch, target: MlpParams, gamma: float) -> np.ndarray:
    q_next = mlp_forward(target, batch.next_obs)
    return batch.rewards + gamma * _next_value_mask(batch) * q_next.max(axis=1)


def epsilon_greedy(qvals: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    if not 0 <= eps <= 1:
        raise ValidationError("epsilon must lie in [0, 1]")
    if eps > 0 and rng.random() < eps:
        return int(rng.integers(len(qvals)))
    return int(np.argmax(qvals))


def epsilon_schedule(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear decay over the first ``exploration_fraction`` of an iteration's steps."""
    horizon = config.exploration_fraction * total_steps
    if horizon <= 0 or step >= horizon:
        return config.exploration_final_eps
    frac = step / horizon
    return config.exploration_initial_eps + frac * (config.exploration_final_eps - config.exploration_initial_eps)


# ---------------------------------------------------------------- flows and rollouts


def sampled_flow(mu0, policy, model: EnvModel, n_agents: int, rng: np.random.Generator) -> np.ndarray:
    """Empirical histogram flow of ``n_agents`` agents acting under ``policy``."""
    X = model.n_states
    flow = np.zeros((model.horizon + 1, X))
    xs = rng.choice(X, size=n_agents, p=mu0)
    flow[0] = np.bincount(xs, minlength=X) / n_agents
    for n in range(model.horizon):
        probs = policy.action_probs(n, flow[n])
        acts = _sample_rows(np.cumsum(probs, axis=1)[xs], rng)
        cdf = np.cumsum(model.transition_matrix(n, flow[n])[xs, acts], axis=1)
        xs = _sample_rows(cdf, rng)
        flow[n + 1] = np.bincount(xs, minlength=X) / n_agents
    return flow


def _sample_rows(cdf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((cdf.shape[0], 1)) * cdf[:, -1:]
    return np.minimum((cdf < u).sum(axis=1), cdf.shape[1] - 1)


class _FlowContext:
    """Precomputed encodings, rewards and sampling tables for one training flow."""

    def __init__(self, mu0, flow, model: EnvModel, master: bool):
        T, X = model.horizon, model.n_states
        self.mu0_cdf = np.cumsum(mu0)
        self.enc = np.stack([encode_all_states(n, flow[n], T, X, master) for n in range(T + 1)])
        self.rewards = np.stack([model.reward(n, flow[n]) for n in range(T + 1)])
        self.kernel_cdf = np.stack([np.cumsum(model.transition_matrix(n, flow[n]), axis=2) for n in range(T)])


def _draw(cdf: np.ndarray, rng: np.random.Generator) -> int:
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(cdf) - 1)


def policy_flows(policy, dists, model: EnvModel, config: TrainConfig, rng) -> list:
    if config.sampled_flows:
        return [sampled_flow(mu0, policy, model, config.n_agents, rng) for mu0 in dists]
    return [rollout(mu0, policy, model)[0] for mu0 in dists]


def evaluate(policy, dists, model: EnvModel) -> list:
    """Exact exploitability of ``policy`` from each initial distribution (undiscounted)."""
    return [exploitability(policy, mu0, model) for mu0 in dists]


@dataclass
class IterationMetrics:
    iteration: int
    exploitability: list
    loss_mean: float
    loss_std: float
    wall_time: float
    stored_params: int
    transitions: int
    buffer_clears: int

    @property
    def mean_exploitability(self) -> float:
        return float(np.mean(self.exploitability))


@dataclass
class TrainResult:
    policy: object
    metrics: list
    networks: list
    config: TrainConfig

    @property
    def trace(self) -> list:
        return [m.mean_exploitability for m in self.metrics]


def _episodes(config: TrainConfig, n_flows: int, horizon: int) -> int:
    if config.episodes_per_iteration is not None:
        return config.episodes_per_iteration
    return max(1, config.max_steps_per_iteration // (n_flows * (horizon + 1)))


def _collect_and_learn(contexts, model, config, rng, act: Callable, learn: Callable, buffer: ReplayBuffer) -> int:
    """Interleaved episode loop: every episode visits each flow in turn.

    Each environment step stores one transition and then runs ``gradient_steps``
    updates once the buffer can fill a minibatch. Returns the transitions stored.
    """
    T = model.horizon
    episodes = _episodes(config, len(contexts), T)
    total = min(episodes * len(contexts) * (T + 1), config.max_steps_per_iteration)
    step = 0
    for _ in range(episodes):
        for tag, ctx in enumerate(contexts):
            x = _draw(ctx.mu0_cdf, rng)
            for n in range(T + 1):
                if step >= total:
                    return step
                obs = ctx.enc[n, x]
                a = act(obs, epsilon_schedule(step, total, config))
                reward = ctx.rewards[n, x, a]
                if n < T:
                    x_next = _draw(ctx.kernel_cdf[n, x, a], rng)
                    next_obs = ctx.enc[n + 1, x_next]
                else:
                    # the terminal step still carries r_{N_T}; its successor is never bootstrapped
                    x_next, next_obs = x, obs
                buffer.push(Transition(obs, a, reward, next_obs, n == T, tag))
                if len(buffer) >= config.batch_size:
                    for _ in range(config.gradient_steps):
                        learn(buffer.sample(config.batch_size, rng))
                step += 1
                x = x_next
    return step


def _check_inputs(model: EnvModel, dists) -> list:
    dists = [validate_distribution(mu, model.n_states) for mu in dists]
    if not dists:
        raise ValidationError("training needs at least one initial distribution")
    return dists


def _omd_train(model: EnvModel, dists, config: TrainConfig, on_iteration=None) -> TrainResult:
    dists = _check_inputs(model, dists)
    config.validate()
    rng = np.random.default_rng(config.seed)
    T, X, A = model.horizon, model.n_states, model.n_actions
    master, tau = config.master, config.tau
    dim = observation_dim(T, X, master)
    trainer = Trainer(init_mlp([dim, *config.hidden_layers, A], rng), None)
    trainer.adam = AdamState.zeros_like(trainer.params, lr=config.learning_rate)
    target = hard_target_sync(trainer.params)
    prev = trainer.params.copy()
    buffer = ReplayBuffer(config.capacity, dim)
    grad_steps = 0
    per_net = trainer.params.n_params
    metrics = []

    def learn(batch):
        nonlocal target, grad_steps
        if config.variant == "v-omd1":
            targets = vomd1_target(batch, prev, tau, config.omd_alpha, config.gamma)
        else:
            targets = munchausen_target(batch, target, prev, tau, config.gamma)
        trainer.step(batch.obs, batch.actions, targets)
        grad_steps += 1
        if grad_steps % config.target_update_freq == 0:
            target = hard_target_sync(trainer.params)

    def act_current(obs, eps):
        return epsilon_greedy(mlp_forward(trainer.params, obs), eps, rng)

    def act_previous(obs, eps):
        # V-OMD1 behaves with the previous-iteration softmax policy, plus uniform exploration
        if eps > 0 and rng.random() < eps:
            return int(rng.integers(A))
        probs = softmax_policy(mlp_forward(prev, obs), tau)
        return _draw(np.cumsum(probs), rng)

    act = act_previous if config.variant == "v-omd1" else act_current
    policy = QNetPolicy(prev, T, X, master, tau)
    for k in range(1, config.iterations + 1):
        start = time.perf_counter()
        flows = policy_flows(policy, dists, model, config, rng)  # step 1: flows of pi^{k-1}
        buffer.clear()  # step 2
        contexts = [_FlowContext(mu0, flow, model, master) for mu0, flow in zip(dists, flows)]
        first_loss = len(trainer.losses)
        stored = _collect_and_learn(contexts, model, config, rng, act, learn, buffer)  # step 3
        prev = trainer.params.copy()  # step 4
        policy = QNetPolicy(prev, T, X, master, tau)
        losses = trainer.losses[first_loss:] or [0.0]
        row = IterationMetrics(
            iteration=k,
            exploitability=evaluate(policy, dists, model),
            loss_mean=float(np.mean(losses)),
            loss_std=float(np.std(losses)),
            wall_time=time.perf_counter() - start,
            # online + target + previous-iteration snapshot
            stored_params=3 * per_net,
            transitions=stored,
            buffer_clears=buffer.clears,
        )
        metrics.append(row)
        if on_iteration is not None:
            on_iteration(row, [prev], buffer)
    return TrainResult(policy, metrics, [prev], config)


def momd_train(model: EnvModel, dists, config: TrainConfig, on_iteration=None) -> TrainResult:
    """Master deep OMD: population-aware Q-network trained with the Munchausen target."""
    if config.variant != "m-omd":
        config = config.replace(variant="m-omd")
    return _omd_train(model, dists, config, on_iteration)


def vomd_train(model: EnvModel, dists, config: TrainConfig, variant: str = "v-omd2", on_iteration=None) -> TrainResult:
    if variant not in ("v-omd1", "v-omd2"):
        raise ValidationError(f"vanilla OMD variant must be v-omd1 or v-omd2, got {variant!r}")
    if config.variant != variant:
        config = config.replace(variant=variant)
    return _omd_train(model, dists, config, on_iteration)


def fp_deep_train(model: EnvModel, dists, config: TrainConfig, population_aware: bool | None = None,
                  on_iteration=None) -> TrainResult:
    """Fictitious play with a freshly trained DQN best response at every iteration."""
    if population_aware is not None:
        want = "m-fp" if population_aware else "v-fp"
        if config.variant != want:
            config = config.replace(variant=want)
    if config.variant not in ("m-fp", "v-fp"):
        config = config.replace(variant="m-fp")
    dists = _check_inputs(model, dists)
    rng = np.random.default_rng(config.seed)
    T, X, A = model.horizon, model.n_states, model.n_actions
    master = config.master
    dim = observation_dim(T, X, master)
    buffer = ReplayBuffer(config.capacity, dim)
    latest = TabularPolicy.uniform(model)
    mean_flows = [None] * len(dists)
    stored: list = []
    metrics = []
    for k in range(1, config.iterations + 1):
        start = time.perf_counter()
        flows = policy_flows(latest, dists, model, config, rng)
        for i, flow in enumerate(flows):
            mean_flows[i] = flow if mean_flows[i] is None else (k - 1) / k * mean_flows[i] + flow / k
        buffer.clear()
        contexts = [_FlowContext(mu0, mf, model, master) for mu0, mf in zip(dists, mean_flows)]
        trainer = Trainer(init_mlp([dim, *config.hidden_layers, A], rng), None)
        trainer.adam = AdamState.zeros_like(trainer.params, lr=config.learning_rate)
        state = {"target": hard_target_sync(trainer.params), "steps": 0}

        def learn(batch, trainer=trainer, state=state):
            trainer.step(batch.obs, batch.actions, dqn_target(batch, state["target"], config.gamma))
            state["steps"] += 1
            if state["steps"] % config.target_update_freq == 0:
                state["target"] = hard_target_sync(trainer.params)

        def act(obs, eps, trainer=trainer):
            return epsilon_greedy(mlp_forward(trainer.params, obs), eps, rng)

        n_stored = _collect_and_learn(contexts, model, config, rng, act, learn, buffer)
        stored.append(trainer.params.copy())
        latest = QNetPolicy(stored[-1], T, X, master, None)
        mixture = UniformMixturePolicy([QNetPolicy(p, T, X, master, None) for p in stored])
        losses = trainer.losses or [0.0]
        row = IterationMetrics(
            iteration=k,
            exploitability=evaluate(mixture, dists, model),
            loss_mean=float(np.mean(losses)),
            loss_std=float(np.std(losses)),
            wall_time=time.perf_counter() - start,
            stored_params=sum(p.n_params for p in stored),
            transitions=n_stored,
            buffer_clears=buffer.clears,
        )
        metrics.append(row)
        if on_iteration is not None:
            on_iteration(row, stored, buffer)
    return TrainResult(mixture, metrics, stored, config)


def train(model: EnvModel, dists, config: TrainConfig, on_iteration=None) -> TrainResult:
    """Dispatch on ``config.variant``."""
    if config.variant == "m-omd":
        return momd_train(model, dists, config, on_iteration)
    if config.variant in ("v-omd1", "v-omd2"):
        return vomd_train(model, dists, config, config.variant, on_iteration)
    return fp_deep_train(model, dists, config, on_iteration=on_iteration)


def policy_from_networks(networks: list, variant: str, tau: float, horizon: int, n_states: int):
    """Rebuild the evaluated policy from stored networks (used when loading checkpoints)."""
    master = variant in MASTER_VARIANTS
    if variant in ("m-fp", "v-fp"):
        return UniformMixturePolicy([QNetPolicy(p, horizon, n_states, master, None) for p in networks])
    return QNetPolicy(networks[-1], horizon, n_states, master, tau)
