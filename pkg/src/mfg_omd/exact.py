"""Exact tabular solvers: backward DP, exploitability, fictitious play, online mirror descent.

All quantities are computed by exact summation over states and actions; nothing
here samples. ``gamma`` defaults to 1 because the finite-horizon objective is an
undiscounted sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    EnvModel,
    Policy,
    TabularPolicy,
    ValidationError,
    rollout,
    validate_distribution,
)

EXPLOITABILITY_FLOOR = -1e-9


def _check_flow(flow, model: EnvModel) -> np.ndarray:
    flow = np.asarray(flow, dtype=float)
    if flow.shape != (model.horizon + 1, model.n_states):
        raise ValidationError(f"flow shape {flow.shape} does not match model {model}")
    return flow


def policy_tables(policy, flow) -> np.ndarray:
    """Action tables ``[n, x, a]`` a policy plays along a given flow."""
    if isinstance(policy, TabularPolicy):
        return policy.probs
    if isinstance(policy, np.ndarray):
        return policy
    return np.stack([policy.action_probs(n, flow[n]) for n in range(len(flow))])


def reward_tables(flow, model: EnvModel) -> np.ndarray:
    return np.stack([model.reward(n, flow[n]) for n in range(model.horizon + 1)])


def best_response_q(flow, model: EnvModel, gamma: float = 1.0) -> np.ndarray:
    """Optimal Q against a frozen flow, by max-Bellman backward induction."""
    flow = _check_flow(flow, model)
    T = model.horizon
    q = np.empty((T + 1, model.n_states, model.n_actions))
    q[T] = model.reward(T, flow[T])
    for n in range(T - 1, -1, -1):
        kernel = model.transition_matrix(n, flow[n])
        q[n] = model.reward(n, flow[n]) + gamma * kernel @ q[n + 1].max(axis=1)
    return q


def policy_q(policy, flow, model: EnvModel, gamma: float = 1.0) -> np.ndarray:
    """Q-function of ``policy`` against a frozen flow (expectation instead of max)."""
    flow = _check_flow(flow, model)
    probs = policy_tables(policy, flow)
    if probs.shape != (model.horizon + 1, model.n_states, model.n_actions):
        raise ValidationError(f"policy shape {probs.shape} does not match model {model}")
    T = model.horizon
    q = np.empty_like(probs)
    q[T] = model.reward(T, flow[T])
    for n in range(T - 1, -1, -1):
        v_next = (probs[n + 1] * q[n + 1]).sum(axis=1)
        q[n] = model.reward(n, flow[n]) + gamma * model.transition_matrix(n, flow[n]) @ v_next
    return q


def greedy(q: np.ndarray) -> np.ndarray:
    """One-hot argmax over the last axis; ties go to the lowest action index."""
    out = np.zeros_like(q)
    idx = np.argmax(q, axis=-1)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def flow_value(flow, probs, model: EnvModel, gamma: float = 1.0) -> float:
    """``sum_n gamma^n sum_x mu_n(x) sum_a pi_n(a|x) r_n(x, a, mu_n)``."""
    total = 0.0
    for n in range(model.horizon + 1):
        total += gamma**n * float(flow[n] @ (probs[n] * model.reward(n, flow[n])).sum(axis=1))
    return total


def policy_value(policy: Policy, mu0, model: EnvModel, gamma: float = 1.0) -> float:
    """Exact value of ``policy`` against the flow it induces from ``mu0``."""
    flow, probs = rollout(mu0, policy, model)
    return flow_value(flow, probs, model, gamma)


def exploitability_terms(policy: Policy, mu0, model: EnvModel, gamma: float = 1.0) -> tuple[float, float]:
    """``(best-response value, policy value)`` against the policy's own flow."""
    mu0 = validate_distribution(mu0, model.n_states)
    flow, probs = rollout(mu0, policy, model)
    q_star = best_response_q(flow, model, gamma)
    br_value = float(mu0 @ q_star[0].max(axis=1))
    return br_value, flow_value(flow, probs, model, gamma)


def exploitability(policy: Policy, mu0, model: EnvModel, gamma: float = 1.0) -> float:
    br_value, value = exploitability_terms(policy, mu0, model, gamma)
    gap = br_value - value
    if gap < EXPLOITABILITY_FLOOR * max(1.0, abs(br_value)):
        raise ArithmeticError(f"best response is worse than the policy by {-gap:.3g}")
    return max(gap, 0.0)


def mean_exploitability(policy: Policy, mus, model: EnvModel, gamma: float = 1.0) -> tuple[float, list]:
    values = [exploitability(policy, mu0, model, gamma) for mu0 in mus]
    return float(np.mean(values)), values


@dataclass
class FPResult:
    policy: TabularPolicy
    mean_flow: np.ndarray
    trace: list = field(default_factory=list)
    flows: list = field(default_factory=list)


def fp_run(model: EnvModel, mu0, iterations: int, gamma: float = 1.0) -> FPResult:
    """Classic fictitious play started from the uniform policy.

    Iteration ``k`` induces the flow of the last best response, folds it into the
    running average ``mu_bar^k`` and best-responds to that average. The reported
    policy at iteration ``k`` is the state-conditional mixture of ``pi^0..pi^{k-1}``,
    each weighted by its own state visitation, so it generates ``mu_bar^k`` exactly.
    """
    if iterations < 1:
        raise ValidationError("fictitious play needs at least one iteration")
    mu0 = validate_distribution(mu0, model.n_states)
    uniform = TabularPolicy.uniform(model)
    current = uniform.probs
    num = np.zeros_like(current)
    den = np.zeros((model.horizon + 1, model.n_states))
    mean_flow = np.zeros_like(den)
    result = FPResult(uniform, mean_flow)
    for k in range(1, iterations + 1):
        flow, _ = rollout(mu0, TabularPolicy(current), model)
        result.flows.append(flow)
        mean_flow = (k - 1) / k * mean_flow + flow / k
        num += flow[..., None] * current
        den += flow
        policy = TabularPolicy(visitation_mixture(num, den))
        result.trace.append(exploitability(policy, mu0, model, gamma))
        current = greedy(best_response_q(mean_flow, model, gamma))
    result.policy = policy
    result.mean_flow = mean_flow
    return result


def visitation_mixture(weighted_sum: np.ndarray, visits: np.ndarray) -> np.ndarray:
    """``sum_i mu_i(x) pi_i(.|x) / sum_i mu_i(x)``; unvisited states fall back to uniform."""
    n_actions = weighted_sum.shape[-1]
    safe = np.where(visits > 0, visits, 1.0)[..., None]
    mix = np.where(visits[..., None] > 0, weighted_sum / safe, 1.0 / n_actions)
    return mix / mix.sum(axis=-1, keepdims=True)


@dataclass
class OMDResult:
    policy: TabularPolicy
    qbar: np.ndarray
    trace: list = field(default_factory=list)
    policies: list = field(default_factory=list)


def omd_run(model: EnvModel, mu0, tau: float, iterations: int, gamma: float = 1.0) -> OMDResult:
    """Classic OMD: evaluate the previous policy, accumulate ``Q / tau``, play the softmax."""
    if tau <= 0:
        raise ValidationError("tau must be positive")
    if iterations < 1:
        raise ValidationError("OMD needs at least one iteration")
    mu0 = validate_distribution(mu0, model.n_states)
    qbar = np.zeros((model.horizon + 1, model.n_states, model.n_actions))
    policy = TabularPolicy(softmax(qbar))
    result = OMDResult(policy, qbar)
    for _ in range(iterations):
        flow, probs = rollout(mu0, policy, model)
        qbar = qbar + policy_q(probs, flow, model, gamma) / tau
        policy = TabularPolicy(softmax(qbar))
        result.policies.append(policy)
        result.trace.append(exploitability(policy, mu0, model, gamma))
    result.policy = policy
    result.qbar = qbar
    return result


@dataclass
class MunchausenResult:
    policy: TabularPolicy
    policies: list
    flows: list
    q_tilde: list


def munchausen_tabular_run(model: EnvModel, mu0, tau: float, iterations: int, gamma: float = 1.0) -> MunchausenResult:
    """OMD through a single regularized Q-table per iteration (no stored history).

    ``Q~_n = r_n + tau log pi^{k-1}_n + gamma E_{x'} sum_a' pi^k_{n+1} (Q~_{n+1} - tau log pi^{k-1}_{n+1})``
    with ``pi^k = softmax(Q~ / tau)``; layers are solved from the horizon backwards.
    """
    if tau <= 0:
        raise ValidationError("tau must be positive")
    mu0 = validate_distribution(mu0, model.n_states)
    shape = (model.horizon + 1, model.n_states, model.n_actions)
    log_prev = np.full(shape, -np.log(model.n_actions))
    prev = TabularPolicy(np.exp(log_prev))
    policies, flows, tables = [], [], []
    T = model.horizon
    for _ in range(iterations):
        flow, _ = rollout(mu0, prev, model)
        qt = np.empty(shape)
        log_new = np.empty(shape)
        qt[T] = model.reward(T, flow[T]) + tau * log_prev[T]
        log_new[T] = log_softmax(qt[T] / tau)
        for n in range(T - 1, -1, -1):
            pi_next = np.exp(log_new[n + 1])
            v_next = (pi_next * (qt[n + 1] - tau * log_prev[n + 1])).sum(axis=1)
            qt[n] = (
                model.reward(n, flow[n])
                + tau * log_prev[n]
                + gamma * model.transition_matrix(n, flow[n]) @ v_next
            )
            log_new[n] = log_softmax(qt[n] / tau)
        prev = TabularPolicy(np.exp(log_new))
        log_prev = log_new
        policies.append(prev)
        flows.append(flow)
        tables.append(qt)
    return MunchausenResult(prev, policies, flows, tables)


def explicit_sum_omd_run(model: EnvModel, mu0, tau: float, iterations: int, gamma: float = 1.0,
                         flows=None) -> list:
    """Reference construction ``pi^k = softmax(sum_{i<=k} Q^i / tau)`` with every ``Q^i`` stored.

    ``Q^k`` evaluates the policy being formed at iteration ``k`` (layer ``n + 1`` is final
    before layer ``n`` is built). ``flows`` may pin the per-iteration flows; otherwise each
    is induced by the previous iterate.
    """
    mu0 = validate_distribution(mu0, model.n_states)
    shape = (model.horizon + 1, model.n_states, model.n_actions)
    history: list = []
    prev = TabularPolicy.uniform(model)
    policies = []
    T = model.horizon
    for k in range(iterations):
        flow = rollout(mu0, prev, model)[0] if flows is None else np.asarray(flows[k])
        past = np.sum(history, axis=0) if history else np.zeros(shape)
        q = np.empty(shape)
        probs = np.empty(shape)
        q[T] = model.reward(T, flow[T])
        probs[T] = softmax((past[T] + q[T]) / tau)
        for n in range(T - 1, -1, -1):
            v_next = (probs[n + 1] * q[n + 1]).sum(axis=1)
            q[n] = model.reward(n, flow[n]) + gamma * model.transition_matrix(n, flow[n]) @ v_next
            probs[n] = softmax((past[n] + q[n]) / tau)
        history.append(q)
        prev = TabularPolicy(probs)
        policies.append(prev)
    return policies


def theorem1_check(model: EnvModel, mu0, tau: float, iterations: int, gamma: float = 1.0) -> float:
    """Max ``|pi_munchausen - pi_explicit_sum|`` over iterations, steps, states and actions."""
    munch = munchausen_tabular_run(model, mu0, tau, iterations, gamma)
    ref = explicit_sum_omd_run(model, mu0, tau, iterations, gamma, flows=munch.flows)
    return max(float(np.abs(a.probs - b.probs).max()) for a, b in zip(munch.policies, ref))
