import numpy as np
import pytest

from wassrl import wrl
from wassrl.dual_stochastic import expected_h
from wassrl.embeddings import EmbeddingSpec
from wassrl.entropic_ot import Convention, OtConfig, dual_objective, sinkhorn
from wassrl.envs import TwoGoal, TwoGoalSpec, two_step_mdp
from wassrl.measures import DiscreteMeasure
from wassrl.rl_core import Trajectory, build_policy, grad_log_prob_sum, mlp_params, rbf_params, rollout
from wassrl.wrl import (
    TrainingAborted,
    TrainLog,
    WrlConfig,
    reinforce,
    reinforce_pair,
    train_alg1_continuous,
    train_alg2_discrete,
    train_alg3_dual_discrete,
    train_alg4_semidiscrete,
    train_repulsive_pair,
)

from conftest import bandit_mdp

FINAL = EmbeddingSpec("final_x", "euclidean")
MEAN = EmbeddingSpec("mean_x", "euclidean")
SUPPORT = [[0.0], [1.0], [2.0]]


def tabular_policy(n_states=3, n_actions=2, theta=None):
    return rbf_params(np.arange(float(n_states))[:, None], n_actions, theta=theta)


def lam0(**kw):
    base = dict(lam=0.0, rho=0.5, embedding=FINAL, episodes=300, theta_step=0.05, checkpoint_every=10, seed=3)
    base.update(kw)
    return WrlConfig(**base)


def reference_theta(mdp, p0, cfg):
    return reinforce(mdp, p0, cfg)[0].theta


@pytest.mark.parametrize("baseline", [False, True])
def test_lam_zero_trainers_match_reinforce_bit_for_bit(baseline):
    mdp = two_step_mdp()
    p0 = tabular_policy(theta=np.linspace(-0.3, 0.3, 6))
    cfg = lam0(baseline=baseline)
    ref = reference_theta(mdp, p0, cfg)
    nu = DiscreteMeasure([[1.0], [2.0]], [0.4, 0.6])
    runs = {
        "alg1": train_alg1_continuous(mdp, p0, lambda r: r.normal(size=1), cfg)[0],
        "alg2": train_alg2_discrete(mdp, p0, nu, SUPPORT, cfg)[0],
        "alg3": train_alg3_dual_discrete(mdp, p0, nu, SUPPORT, cfg)[0],
        "alg4": train_alg4_semidiscrete(mdp, p0, nu, cfg)[0],
    }
    assert not np.array_equal(ref, p0.theta)
    for name, params in runs.items():
        assert np.array_equal(params.theta, ref), name


def test_lam_zero_leaves_discrete_duals_at_zero():
    mdp = two_step_mdp()
    nu = DiscreteMeasure([[1.0], [2.0]], [0.4, 0.6])
    _, _, uv = train_alg3_dual_discrete(mdp, tabular_policy(), nu, SUPPORT, lam0())
    assert not uv.u.any() and not uv.v.any()
    _, _, v = train_alg4_semidiscrete(mdp, tabular_policy(), nu, lam0())
    assert not v.any()


def test_lam_zero_repulsive_pair_matches_independent_runs():
    env = TwoGoal(TwoGoalSpec(horizon=5))
    rng = np.random.default_rng(0)
    pa, pb = mlp_params(2, 2, (4, 4), rng=rng), mlp_params(2, 2, (4, 4), rng=rng)
    cfg = WrlConfig(lam=0.0, rho=0.01, embedding=MEAN, episodes=5, batch_size=10, theta_step=0.01,
                    baseline=True, normalize_weights=True, dual_passes=2, seed=4)
    ra, rb, _ = reinforce_pair(env, pa, pb, cfg)
    ta, tb, log = train_repulsive_pair(env, pa, pb, cfg)
    assert np.array_equal(ta.theta, ra.theta) and np.array_equal(tb.theta, rb.theta)
    assert len(log) == 5


def test_single_atom_support_reduces_to_policy_gradient():
    mdp = bandit_mdp(2)
    p0 = tabular_policy()
    cfg = lam0(lam=-1.0, episodes=100)
    nu = DiscreteMeasure.dirac([1.0])
    params, log = train_alg2_discrete(mdp, p0, nu, [[1.0]], cfg)
    assert np.array_equal(params.theta, reference_theta(mdp, p0, cfg))
    np.testing.assert_allclose(log.column("w_estimate"), 0.0, atol=1e-12)


def hit_rate(params) -> float:
    return float(build_policy(params).probs(np.array([[0.0]]))[0, 0])


def test_alg2_attraction_drives_bandit_to_target_atom():
    # Rewards are zero; only the transport term says which arm to pull.
    mdp = bandit_mdp(2)
    nu = DiscreteMeasure.dirac([1.0])
    rates = []
    for seed in range(5):
        cfg = WrlConfig(lam=-1.0, rho=0.1, embedding=FINAL, episodes=2000, theta_step=0.1, seed=seed)
        params, _ = train_alg2_discrete(mdp, tabular_policy(), nu, [[1.0], [2.0]], cfg)
        rates.append(hit_rate(params))
    assert min(rates) > 0.9, rates


def test_alg3_sign_of_lambda_sets_direction():
    mdp = bandit_mdp(2)
    nu = DiscreteMeasure.dirac([1.0])
    for seed in range(5):
        rates = {}
        for lam in (-1.0, 1.0):
            cfg = WrlConfig(lam=lam, rho=0.1, embedding=FINAL, episodes=1000, theta_step=0.1, dual_step=0.5, seed=seed)
            params, _, _ = train_alg3_dual_discrete(mdp, tabular_policy(), nu, [[1.0], [2.0]], cfg)
            rates[lam] = hit_rate(params)
        assert rates[-1.0] > 0.5 > rates[1.0], rates


FROZEN_SUPPORT = np.array([[1.0], [2.0], [3.0]])
FROZEN_NU = DiscreteMeasure([[1.5], [2.5], [0.0]], [0.5, 0.3, 0.2])
UNIFORM_MU = DiscreteMeasure(FROZEN_SUPPORT, np.ones(3) / 3)


def test_alg3_frozen_duals_reach_sinkhorn_value():
    # The unweighted B of the discrete dual pairs with the -rho H(kappa) regulariser.
    rho = 0.5
    C = FINAL.cost(FROZEN_SUPPORT, FROZEN_NU.atoms)
    ref = sinkhorn(UNIFORM_MU, FROZEN_NU, C, OtConfig(rho=rho, convention=Convention.ENTROPY_H, tol=1e-12))
    cfg = WrlConfig(lam=-1.0, rho=rho, embedding=FINAL, episodes=20000, dual_step=0.5, seed=0)
    params, _, uv = train_alg3_dual_discrete(bandit_mdp(3), tabular_policy(4, 3), FROZEN_NU, FROZEN_SUPPORT,
                                             cfg, frozen=True)
    assert not params.theta.any()
    value = dual_objective(uv.u, uv.v, UNIFORM_MU, FROZEN_NU, C, rho, Convention.ENTROPY_H)
    assert value == pytest.approx(ref.primal_value, abs=1e-3)


def test_alg4_frozen_semidual_reaches_sinkhorn_value():
    rho = 0.5
    C = FINAL.cost(FROZEN_SUPPORT, FROZEN_NU.atoms)
    ref = sinkhorn(UNIFORM_MU, FROZEN_NU, C, OtConfig(rho=rho, tol=1e-12))
    cfg = WrlConfig(lam=-1.0, rho=rho, embedding=FINAL, episodes=3000, dual_step=0.1, seed=0)
    _, _, v = train_alg4_semidiscrete(bandit_mdp(3), tabular_policy(4, 3), FROZEN_NU, cfg, frozen=True)
    assert expected_h(UNIFORM_MU, v, FROZEN_NU, rho)[0] == pytest.approx(ref.primal_value, abs=1e-3)


def test_alg4_dirac_target_is_distance_shaping():
    # With one target atom h(x, v) = c(x, y), so lam * h is a shaped reward.
    mdp = two_step_mdp()
    p0 = tabular_policy(theta=np.linspace(-0.2, 0.4, 6))
    y = np.array([1.3])
    cfg = WrlConfig(lam=-0.7, rho=0.2, embedding=MEAN, episodes=200, theta_step=0.05, seed=11)
    trained, _, _ = train_alg4_semidiscrete(mdp, p0, DiscreteMeasure.dirac(y), cfg)
    rng = wrl.streams(cfg.seed)["rollout"]
    params = p0
    for _ in range(cfg.episodes):
        tau = rollout(mdp, params, rng)
        shaped = tau.rewards.sum() + cfg.lam * abs(tau.states[:, 0].mean() - y[0])
        params = params.replace(params.theta + cfg.theta_step * shaped * grad_log_prob_sum(tau, params))
    np.testing.assert_allclose(trained.theta, params.theta, rtol=0, atol=1e-12)


def mirror_mlp(params):
    """Reflect an MLP policy through x -> -x on both states and actions."""
    sizes = [2, *params.shape["hidden"], 2]
    theta = params.theta.copy()
    off = 0
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = theta[off: off + a * b].reshape(a, b)
        if k == 0:
            W[0, :] *= -1
        if k == len(sizes) - 2:
            W[:, 0] *= -1
            theta[off + a * b] *= -1
        off += a * b + b
    return params.replace(theta)


class MirroredNormal:
    """Same draws as a generator seeded identically, with the x column negated."""

    def __init__(self, rng):
        self.rng = rng

    def standard_normal(self, size):
        z = self.rng.standard_normal(size)
        z[..., 0] *= -1
        return z


def test_mirrored_start_gives_mirrored_training(monkeypatch):
    real = wrl.streams

    def mirrored_streams(seed):
        s = real(seed)
        s["rollout_b"] = MirroredNormal(real(seed)["rollout"])
        return s

    monkeypatch.setattr(wrl, "streams", mirrored_streams)
    env = TwoGoal(TwoGoalSpec(horizon=8))
    pa = mlp_params(2, 2, (6, 6), rng=np.random.default_rng(5))
    pb = mirror_mlp(pa)
    x = np.array([[0.3, 0.1]])
    np.testing.assert_allclose(build_policy(pb).mean(x * [-1, 1]), build_policy(pa).mean(x) * [-1, 1], atol=1e-15)
    cfg = WrlConfig(lam=1.0, rho=0.05, embedding=MEAN, episodes=15, batch_size=20, theta_step=0.01,
                    baseline=True, normalize_weights=True, rkhs_constant=0.1, rkhs_radius=1.0, dual_passes=2,
                    seed=1)
    _, _, log = train_repulsive_pair(env, pa, pb, cfg)
    np.testing.assert_allclose(log.column("mean_x_a"), -log.column("mean_x_b"), atol=1e-6)
    np.testing.assert_allclose(log.column("return_a"), log.column("return_b"), atol=1e-6)


def test_repulsive_trainer_rejects_attraction():
    env = TwoGoal(TwoGoalSpec())
    p = mlp_params(2, 2)
    with pytest.raises(ValueError):
        train_repulsive_pair(env, p, p, WrlConfig(lam=-1.0, embedding=MEAN))


class Exploding:
    horizon, gamma = 1, 1.0

    def reset(self):
        return np.zeros(1)

    def step(self, state, action, rng=None):
        return np.ones(1), 1e300, True


def test_non_finite_parameters_abort_with_snapshot():
    cfg = WrlConfig(lam=0.0, embedding=FINAL, episodes=10, theta_step=1e300)
    p0 = rbf_params([[0.0], [1.0]], 2, theta=[0.0, 5.0, 0.0, 0.0])
    with pytest.raises(TrainingAborted) as info:
        reinforce(Exploding(), p0, cfg)
    snap = info.value.snapshot
    assert snap["iteration"] == 1
    assert not np.all(np.isfinite(snap["theta"]))


def test_logs_have_increasing_iterations_and_finite_values():
    mdp = two_step_mdp()
    nu = DiscreteMeasure([[1.0], [2.0]], [0.4, 0.6])
    cfg = lam0(lam=-1.0, episodes=200, checkpoint_every=20)
    for log in (train_alg2_discrete(mdp, tabular_policy(), nu, SUPPORT, cfg)[1],
                train_alg4_semidiscrete(mdp, tabular_policy(), nu, cfg)[1],
                train_alg1_continuous(mdp, tabular_policy(), lambda r: r.normal(size=1), cfg)[1]):
        it = log.column("iteration")
        assert list(it) == list(range(20, 201, 20))
        for rec in log.records:
            assert all(np.isfinite(v) for v in rec.values())


def test_train_log_guards():
    log = TrainLog()
    log.append(1, a=1.0)
    with pytest.raises(ValueError):
        log.append(1, a=2.0)
    with pytest.raises(ValueError):
        log.append(2, a=float("nan"))


def test_config_validation():
    with pytest.raises(ValueError):
        WrlConfig(rho=0.0)
    with pytest.raises(ValueError):
        WrlConfig(episodes=0)
    with pytest.raises(ValueError):
        WrlConfig(theta_step=-1.0)


def test_streams_are_independent_and_reproducible():
    a, b = wrl.streams(0), wrl.streams(0)
    for name in a:
        assert a[name].random() == b[name].random()
    draws = {name: g.random() for name, g in wrl.streams(0).items()}
    assert len(set(draws.values())) == len(draws)
