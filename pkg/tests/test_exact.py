import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfg_omd.core import ActionSpace, EnvModel, StateSpace, TabularPolicy, dirac, induce_flow, rollout
from mfg_omd.envs import ExplorationSpec, exploration_model, random_game
from mfg_omd.exact import (
    best_response_q,
    exploitability,
    explicit_sum_omd_run,
    flow_value,
    fp_run,
    greedy,
    log_softmax,
    munchausen_tabular_run,
    omd_run,
    policy_q,
    policy_value,
    softmax,
    theorem1_check,
    visitation_mixture,
)


def table_model(kernel, rewards, crowd=0.0):
    """Model with rewards ``rewards[n, x, a]`` (+ optional crowd aversion)."""
    kernel = np.asarray(kernel, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    X, A, _ = kernel.shape
    states = StateSpace("chain1d", X)
    actions = ActionSpace(tuple(str(i) for i in range(A)), tuple((i,) for i in range(A)))

    def reward(n, mu):
        return rewards[n] - crowd * np.log(np.maximum(mu, 1e-10))[:, None]

    return EnvModel(states, actions, rewards.shape[0] - 1, kernel, reward)


def deterministic_policies(model):
    """Every deterministic Markov policy as a one-hot table."""
    T, X, A = model.horizon, model.n_states, model.n_actions
    for choice in itertools.product(range(A), repeat=(T + 1) * X):
        probs = np.zeros((T + 1, X, A))
        for idx, a in enumerate(choice):
            probs[idx // X, idx % X, a] = 1.0
        yield probs


def trajectory_value(probs, flow, model, mu0):
    """Expected reward by enumerating every (state, action) trajectory against a frozen flow."""
    T, X, A = model.horizon, model.n_states, model.n_actions
    rewards = [model.reward(n, flow[n]) for n in range(T + 1)]
    total = 0.0
    for states in itertools.product(range(X), repeat=T + 1):
        for acts in itertools.product(range(A), repeat=T + 1):
            p = mu0[states[0]]
            value = 0.0
            for n in range(T + 1):
                p *= probs[n, states[n], acts[n]]
                if n < T:
                    p *= model.kernel[states[n], acts[n], states[n + 1]]
                value += rewards[n][states[n], acts[n]]
            total += p * value
    return total


def brute_exploitability(policy, mu0, model):
    flow, probs = rollout(mu0, policy, model)
    best = max(trajectory_value(d, flow, model, mu0) for d in deterministic_policies(model))
    return best - trajectory_value(probs, flow, model, mu0)


def toy():
    kernel = np.array([[[0.8, 0.2], [0.1, 0.9]], [[0.6, 0.4], [0.3, 0.7]]])
    rewards = np.array([[[1.0, 0.0], [0.0, 2.0]], [[0.5, -1.0], [1.5, 0.2]]])
    return table_model(kernel, rewards, crowd=0.5)


def test_best_response_matches_enumeration():
    model = toy()
    mu0 = np.array([0.3, 0.7])
    flow = induce_flow(mu0, TabularPolicy.uniform(model), model)
    q = best_response_q(flow, model)
    best = max(trajectory_value(d, flow, model, mu0) for d in deterministic_policies(model))
    assert float(mu0 @ q[0].max(axis=1)) == pytest.approx(best, abs=1e-12)


def test_best_response_zero_horizon_is_reward():
    model = toy()
    flat = table_model(model.kernel, np.ones((1, 2, 2)))
    flow = np.array([[0.5, 0.5]])
    np.testing.assert_array_equal(best_response_q(flow, flat), flat.reward(0, flow[0])[None])


def test_constant_reward_shift():
    rng = np.random.default_rng(0)
    kernel = rng.dirichlet(np.ones(3), size=(3, 2))
    rewards = rng.normal(size=(4, 3, 2))
    c = 1.7
    a, b = table_model(kernel, rewards), table_model(kernel, rewards + c)
    flow = induce_flow(np.full(3, 1 / 3), TabularPolicy.uniform(a), a)
    qa, qb = best_response_q(flow, a), best_response_q(flow, b)
    for n in range(4):
        np.testing.assert_allclose(qb[n] - qa[n], c * (3 - n + 1), atol=1e-12)
    np.testing.assert_array_equal(qa.argmax(-1), qb.argmax(-1))


def test_policy_q_uniform_by_hand():
    model = toy()
    flow = induce_flow(np.array([0.3, 0.7]), TabularPolicy.uniform(model), model)
    r0, r1 = model.reward(0, flow[0]), model.reward(1, flow[1])
    v1 = r1.mean(axis=1)
    expected = r0 + model.kernel @ v1
    q = policy_q(TabularPolicy.uniform(model), flow, model)
    np.testing.assert_allclose(q[0], expected, atol=1e-14)
    np.testing.assert_allclose(q[1], r1, atol=1e-14)


def test_greedy_policy_q_equals_best_response():
    model = exploration_model(ExplorationSpec(3, 3, horizon=3))
    flow = induce_flow(dirac(9, 0), TabularPolicy.uniform(model), model)
    q_star = best_response_q(flow, model)
    np.testing.assert_allclose(policy_q(greedy(q_star), flow, model), q_star, atol=1e-12)


def test_greedy_tie_break_lowest_index():
    np.testing.assert_array_equal(greedy(np.zeros((2, 3))), [[1, 0, 0], [1, 0, 0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_best_response_dominates_policy_q(seed):
    rng = np.random.default_rng(seed)
    model = random_game(rng, int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.integers(0, 4)))
    probs = rng.dirichlet(np.ones(model.n_actions), size=(model.horizon + 1, model.n_states))
    policy = TabularPolicy(probs)
    mu0 = rng.dirichlet(np.ones(model.n_states))
    flow = induce_flow(mu0 / mu0.sum(), policy, model)
    assert (best_response_q(flow, model) >= policy_q(policy, flow, model) - 1e-9).all()
    assert exploitability(policy, mu0 / mu0.sum(), model) >= 0.0


def test_value_identity_and_enumeration():
    model = toy()
    mu0 = np.array([0.6, 0.4])
    probs = np.array([[[0.2, 0.8], [0.5, 0.5]], [[0.9, 0.1], [0.3, 0.7]]])
    policy = TabularPolicy(probs)
    flow = induce_flow(mu0, policy, model)
    q = policy_q(policy, flow, model)
    value = policy_value(policy, mu0, model)
    assert value == pytest.approx(float(mu0 @ (probs[0] * q[0]).sum(axis=1)), abs=1e-12)
    assert value == pytest.approx(trajectory_value(probs, flow, model, mu0), abs=1e-12)


def test_exploitability_bad_policy_matches_enumeration():
    model = toy()
    mu0 = np.array([0.5, 0.5])
    bad = TabularPolicy(np.array([[[0.0, 1.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]]))
    assert exploitability(bad, mu0, model) == pytest.approx(brute_exploitability(bad, mu0, model), abs=1e-12)


def test_exploitability_random_games_match_enumeration():
    rng = np.random.default_rng(42)
    for _ in range(10):
        model = random_game(rng, 2, 2, int(rng.integers(0, 3)))
        probs = rng.dirichlet(np.ones(2), size=(model.horizon + 1, 2))
        mu0 = rng.dirichlet(np.ones(2))
        mu0 = mu0 / mu0.sum()
        policy = TabularPolicy(probs)
        assert exploitability(policy, mu0, model) == pytest.approx(brute_exploitability(policy, mu0, model), abs=1e-9)


def test_exploitability_degenerate_cases():
    kernel = np.array([[[0.5, 0.5]], [[0.2, 0.8]]])
    single = table_model(kernel, np.random.default_rng(0).normal(size=(3, 2, 1)), crowd=1.0)
    assert exploitability(TabularPolicy.uniform(single), np.array([0.5, 0.5]), single) == 0.0
    kernel2 = np.array([[[0.5, 0.5], [0.1, 0.9]], [[0.2, 0.8], [1.0, 0.0]]])
    flat = table_model(kernel2, np.ones((3, 2, 2)))
    probs = np.random.default_rng(1).dirichlet(np.ones(2), size=(3, 2))
    assert exploitability(TabularPolicy(probs), np.array([0.5, 0.5]), flat) == pytest.approx(0.0, abs=1e-12)
    zero = table_model(kernel2, np.zeros((3, 2, 2)))
    assert exploitability(TabularPolicy(probs), np.array([0.5, 0.5]), zero) == 0.0


def test_flow_value_matches_policy_value():
    model = toy()
    mu0 = np.array([0.3, 0.7])
    flow, probs = rollout(mu0, TabularPolicy.uniform(model), model)
    assert flow_value(flow, probs, model) == policy_value(TabularPolicy.uniform(model), mu0, model)


# ---------------------------------------------------------------- fictitious play


@pytest.fixture(scope="module")
def small_grid():
    return exploration_model(ExplorationSpec(3, 3, horizon=4))


def test_fp_single_iteration_mean_is_first_flow(small_grid):
    res = fp_run(small_grid, dirac(9, 0), 1)
    np.testing.assert_array_equal(res.mean_flow, res.flows[0])


def test_fp_running_average_equals_batch_mean(small_grid):
    res = fp_run(small_grid, dirac(9, 0), 7)
    np.testing.assert_allclose(res.mean_flow, np.mean(res.flows, axis=0), atol=1e-12)


def test_fp_policy_generates_mean_flow(small_grid):
    res = fp_run(small_grid, dirac(9, 4), 6)
    np.testing.assert_allclose(induce_flow(dirac(9, 4), res.policy, small_grid), res.mean_flow, atol=1e-12)


def test_visitation_mixture_unvisited_is_uniform():
    mix = visitation_mixture(np.zeros((1, 2, 3)), np.zeros((1, 2)))
    np.testing.assert_allclose(mix, 1 / 3)


# ---------------------------------------------------------------- online mirror descent


def test_omd_two_iterations_unrolled(small_grid):
    mu0 = dirac(9, 0)
    tau = 3.0
    res = omd_run(small_grid, mu0, tau, 2)
    pi0 = TabularPolicy.uniform(small_grid)
    flow1, _ = rollout(mu0, pi0, small_grid)
    q1 = policy_q(pi0, flow1, small_grid)
    pi1 = TabularPolicy(softmax(q1 / tau))
    flow2, _ = rollout(mu0, pi1, small_grid)
    q2 = policy_q(pi1, flow2, small_grid)
    np.testing.assert_allclose(res.qbar, (q1 + q2) / tau, atol=1e-12)
    np.testing.assert_allclose(res.policies[0].probs, pi1.probs, atol=1e-12)


def test_omd_iterates_are_softmax_outputs(small_grid):
    res = omd_run(small_grid, dirac(9, 0), 1.0, 5)
    for pol in res.policies:
        assert (pol.probs > 0).all()
        np.testing.assert_allclose(pol.probs.sum(-1), 1.0, atol=1e-12)


def test_softmax_of_zeros_is_uniform():
    np.testing.assert_array_equal(softmax(np.zeros((2, 5))), 0.2)
    np.testing.assert_allclose(np.exp(log_softmax(np.array([1.0, 0.0]))), [0.731059, 0.268941], atol=1e-6)


# ---------------------------------------------------------------- Munchausen equivalence


def two_state_toy(horizon=3, seed=0):
    rng = np.random.default_rng(seed)
    kernel = rng.dirichlet(np.ones(2), size=(2, 2))
    return table_model(kernel, rng.normal(size=(horizon + 1, 2, 2)), crowd=1.0)


def test_munchausen_first_iteration_is_softmax_of_q():
    model = two_state_toy()
    mu0 = np.array([0.4, 0.6])
    tau = 2.0
    res = munchausen_tabular_run(model, mu0, tau, 1)
    ref = explicit_sum_omd_run(model, mu0, tau, 1, flows=res.flows)
    np.testing.assert_allclose(res.policies[0].probs, ref[0].probs, atol=1e-15)
    # Q~ = Q + tau log(1/|A|) at the last layer, so the same softmax
    flow = res.flows[0]
    np.testing.assert_allclose(res.q_tilde[0][-1], model.reward(3, flow[3]) + tau * np.log(0.5), atol=1e-14)


def test_theorem1_two_state_toy():
    assert theorem1_check(two_state_toy(), np.array([0.4, 0.6]), 1.0, 10) < 1e-10


def test_theorem1_single_iteration_is_exact():
    assert theorem1_check(two_state_toy(seed=3), np.array([0.5, 0.5]), 5.0, 1) < 1e-15


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1.0, 5.0, 50.0]))
def test_theorem1_random_small_games(seed, tau):
    rng = np.random.default_rng(seed)
    model = random_game(rng, int(rng.integers(2, 8)), int(rng.integers(2, 5)), int(rng.integers(1, 6)))
    mu0 = rng.dirichlet(np.ones(model.n_states))
    assert theorem1_check(model, mu0 / mu0.sum(), tau, 10) < 1e-10


def test_tau_scaling_invariance():
    rng = np.random.default_rng(5)
    kernel = rng.dirichlet(np.ones(3), size=(3, 2))
    rewards = rng.normal(size=(4, 3, 2))
    c = 3.0
    a, b = table_model(kernel, rewards), table_model(kernel, c * rewards)
    mu0 = np.full(3, 1 / 3)
    ra = munchausen_tabular_run(a, mu0, 2.0, 5)
    rb = munchausen_tabular_run(b, mu0, 2.0 * c, 5)
    for pa, pb in zip(ra.policies, rb.policies):
        np.testing.assert_allclose(pa.probs, pb.probs, atol=1e-12)


def test_theorem1_invariant_to_action_relabeling():
    rng = np.random.default_rng(11)
    kernel = rng.dirichlet(np.ones(3), size=(3, 3))
    rewards = rng.normal(size=(4, 3, 3))
    perm = [2, 0, 1]
    a = table_model(kernel, rewards, crowd=1.0)
    b = table_model(kernel[:, perm], rewards[:, :, perm], crowd=1.0)
    mu0 = np.array([0.2, 0.5, 0.3])
    ra = munchausen_tabular_run(a, mu0, 5.0, 6)
    rb = munchausen_tabular_run(b, mu0, 5.0, 6)
    for pa, pb in zip(ra.policies, rb.policies):
        np.testing.assert_allclose(pa.probs[:, :, perm], pb.probs, atol=1e-12)
    assert theorem1_check(b, mu0, 5.0, 6) == pytest.approx(theorem1_check(a, mu0, 5.0, 6), abs=1e-12)
