import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wassrl.envs import TabularMdp, two_step_mdp
from wassrl.rl_core import (
    Family,
    PolicyParams,
    Trajectory,
    build_policy,
    grad_of_expectation_estimate,
    log_prob_of,
    mlp_params,
    policy_distribution,
    rbf_params,
    rollout,
    score_function_grad,
    trajectory_return,
)

from conftest import bandit_mdp

CELLS = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])


def chain_mdp() -> TabularMdp:
    P = np.zeros((4, 1, 4))
    for s in range(3):
        P[s, 0, s + 1] = 1.0
    P[3, 0, 3] = 1.0
    return TabularMdp(P, -np.ones((4, 1)), start=0, horizon=3, absorbing=[3])


def test_uniform_policy_at_zero_theta():
    dist = policy_distribution(rbf_params(CELLS, 4), [0.0, 1.0])
    np.testing.assert_allclose(dist.probs, 0.25, atol=1e-15)


def test_softmax_saturates_on_own_cell():
    p = rbf_params(CELLS, 4, bandwidth=0.1)
    W = p.theta.reshape(4, 4).copy()
    W[2, 3] = 10.0
    dist = policy_distribution(p.replace(W.ravel()), CELLS[2])
    assert dist.probs[3] > 0.99


def test_zero_mlp_gives_zero_mean():
    params = mlp_params(2, 2, stddev=0.1)
    dist = policy_distribution(params, [0.4, -2.0])
    np.testing.assert_array_equal(dist.mean, [0.0, 0.0])
    rng = np.random.default_rng(0)
    n = 10_000
    draws = np.array([dist.sample(rng) for _ in range(n)])
    assert np.all(np.abs(draws.mean(axis=0)) < 3 * 0.1 / np.sqrt(n))


def test_nan_theta_is_rejected():
    p = rbf_params(CELLS, 4)
    with pytest.raises(ValueError):
        policy_distribution(p.replace(np.full(16, np.nan)), [0.0, 0.0])


def test_theta_length_must_match_shape():
    with pytest.raises(ValueError):
        PolicyParams(Family.RBF_SOFTMAX, np.zeros(3), {"centers": CELLS.tolist(), "n_actions": 4})


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_probabilities_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    p = rbf_params(CELLS, 4, theta=rng.normal(scale=5, size=16))
    probs = build_policy(p).probs(rng.uniform(-1, 2, size=(10, 2)))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs > 0)


def test_rollout_on_deterministic_chain():
    tau = rollout(chain_mdp(), rbf_params(np.arange(4.0)[:, None], 1), 0)
    np.testing.assert_array_equal(tau.rewards, [-1.0, -1.0, -1.0])
    np.testing.assert_array_equal(tau.states.ravel(), [0, 1, 2, 3])
    assert tau.terminated
    assert trajectory_return(tau) == -3.0


def test_rollout_is_deterministic_in_seed():
    mdp = two_step_mdp()
    p = rbf_params(np.arange(3.0)[:, None], 2, theta=np.arange(6.0) / 5)
    a, b = rollout(mdp, p, 42), rollout(mdp, p, 42)
    assert a.to_json() == b.to_json()
    m = mlp_params(2, 2, rng=np.random.default_rng(1))

    class Drift:
        horizon, gamma = 4, 1.0

        def reset(self):
            return np.zeros(2)

        def step(self, s, a, rng=None):
            return s + a, float(-np.sum(a**2)), False

    assert rollout(Drift(), m, 7).to_json() == rollout(Drift(), m, 7).to_json()
    assert rollout(Drift(), m, 7).to_json() != rollout(Drift(), m, 8).to_json()


def test_trajectory_return_examples():
    tau = Trajectory(np.zeros((4, 1)), [0, 0, 0], [1.0, 1.0, 1.0], False)
    assert trajectory_return(tau, 0.5) == pytest.approx(1.75)
    assert trajectory_return(Trajectory(np.zeros((1, 1)), [], [], True)) == 0.0
    with pytest.raises(ValueError):
        trajectory_return(tau, 0.0)


def test_trajectory_json_round_trip():
    tau = rollout(two_step_mdp(), rbf_params(np.arange(3.0)[:, None], 2), 3)
    back = Trajectory.from_dict(__import__("json").loads(tau.to_json()))
    assert back.to_json() == tau.to_json()


def test_trajectory_rejects_non_finite_rewards():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((2, 1)), [0], [np.inf], True)


def _fd_logp(params, states, actions, eps=1e-6):
    g = np.zeros(params.theta.size)
    for i in range(g.size):
        e = np.zeros_like(g)
        e[i] = eps
        hi = log_prob_of(params.replace(params.theta + e), states, actions).sum()
        lo = log_prob_of(params.replace(params.theta - e), states, actions).sum()
        g[i] = (hi - lo) / (2 * eps)
    return g


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rbf_score_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = rbf_params(CELLS, 4, bandwidth=float(rng.uniform(0.3, 2)), theta=rng.normal(size=16))
    states = rng.uniform(-0.5, 1.5, size=(3, 2))
    actions = rng.integers(0, 4, size=3)
    analytic = build_policy(p).grad_log_prob_sum(states, actions)
    np.testing.assert_allclose(analytic, _fd_logp(p, states, actions), rtol=1e-6, atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mlp_score_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = mlp_params(2, 2, hidden=(4, 3), stddev=0.5, rng=rng)
    states = rng.normal(size=(3, 2))
    actions = rng.normal(size=(3, 2))
    analytic = build_policy(p).grad_log_prob_sum(states, actions)
    np.testing.assert_allclose(analytic, _fd_logp(p, states, actions), rtol=1e-6, atol=1e-7)


def test_score_function_grad_scaling():
    tau = rollout(two_step_mdp(), rbf_params(np.arange(3.0)[:, None], 2), 0)
    p = rbf_params(np.arange(3.0)[:, None], 2)
    np.testing.assert_array_equal(score_function_grad(tau, p, 0.0), np.zeros(6))
    np.testing.assert_allclose(score_function_grad(tau, p, 2.0), 2 * score_function_grad(tau, p, 1.0))


def test_identical_batch_equals_single_estimate():
    p = rbf_params(np.arange(3.0)[:, None], 2, theta=np.linspace(-1, 1, 6))
    tau = rollout(two_step_mdp(), p, 5)
    g = trajectory_return
    np.testing.assert_allclose(grad_of_expectation_estimate([tau] * 7, p, g), score_function_grad(tau, p, g(tau)))
    with pytest.raises(ValueError):
        grad_of_expectation_estimate([], p, g)


def test_bandit_score_expectation_is_zero():
    p = rbf_params([[0.0], [1.0], [2.0]], 2)
    policy = build_policy(p)
    probs = policy.probs(np.array([[0.0]]))[0]
    total = sum(probs[a] * policy.grad_log_prob_sum(np.array([[0.0]]), [a]) for a in range(2))
    np.testing.assert_allclose(total, 0.0, atol=1e-15)


def _sample_mean_and_se(mdp, params, g, n, seed):
    rng = np.random.default_rng(seed)
    samples = np.array([score_function_grad(tau, params, g(tau))
                        for tau in (rollout(mdp, params, rng) for _ in range(n))])
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / np.sqrt(n)


def test_bandit_indicator_gradient_is_unbiased():
    mdp = bandit_mdp(2)
    p = rbf_params([[0.0], [1.0], [2.0]], 2, bandwidth=0.2)
    g = lambda tau: float(tau.actions[0] == 0)
    # Exact: d pi_0 / d W[c, a] = phi_c * pi_0 * (1{a=0} - pi_a) with pi uniform.
    phi = build_policy(p).features(np.array([[0.0]]))[0]
    exact = np.outer(phi, 0.5 * (np.array([1.0, 0.0]) - 0.5)).ravel()
    mean, se = _sample_mean_and_se(mdp, p, g, 20_000, 0)
    assert np.all(np.abs(mean - exact) <= 3 * se + 1e-12)


def test_constant_g_estimate_is_centred():
    mdp = two_step_mdp()
    p = rbf_params(np.arange(3.0)[:, None], 2, theta=np.linspace(-0.5, 0.5, 6))
    mean, se = _sample_mean_and_se(mdp, p, lambda tau: 3.0, 20_000, 1)
    assert np.all(np.abs(mean) <= 3 * se)


def exact_value(theta: np.ndarray, mdp: TabularMdp, bandwidth: float = 1.0) -> float:
    """Enumerate every (action, next state) path of the tabular MDP under the RBF softmax."""
    pts = np.arange(mdp.n_states, dtype=float)
    phi = np.exp(-((pts[:, None] - pts[None, :]) ** 2) / (2 * bandwidth**2))
    phi /= phi.sum(axis=1, keepdims=True)
    logits = phi @ theta.reshape(mdp.n_states, mdp.n_actions)
    pi = np.exp(logits - logits.max(axis=1, keepdims=True))
    pi /= pi.sum(axis=1, keepdims=True)
    total = 0.0
    choices = itertools.product(range(mdp.n_actions), range(mdp.n_states))
    for path in itertools.product(list(choices), repeat=mdp.horizon):
        s, prob, ret = mdp.start, 1.0, 0.0
        for a, s2 in path:
            prob *= pi[s, a] * mdp.transitions[s, a, s2]
            ret += mdp.rewards[s, a]
            s = s2
        total += prob * ret
    return total


def exact_gradient(theta, mdp, eps=1e-6):
    return np.array([(exact_value(theta + eps * e, mdp) - exact_value(theta - eps * e, mdp)) / (2 * eps)
                     for e in np.eye(theta.size)])


def test_return_gradient_is_unbiased_on_two_step_mdp():
    mdp = two_step_mdp()
    theta = np.array([0.3, -0.2, 0.5, 0.1, -0.4, 0.2])
    p = rbf_params(np.arange(3.0)[:, None], 2, theta=theta)
    exact = exact_gradient(theta, mdp)
    mean, se = _sample_mean_and_se(mdp, p, trajectory_return, 20_000, 2)
    assert np.all(np.abs(mean - exact) <= 3 * se)
