"""Policies, rollouts and score-function gradients."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from wassrl.measures import CostKind, pairwise_cost


class Family(str, enum.Enum):
    RBF_SOFTMAX = "rbf_softmax"
    MLP_GAUSSIAN = "mlp_gaussian"


class MdpSpec(Protocol):
    horizon: int
    gamma: float

    def reset(self) -> np.ndarray: ...

    def step(self, state: np.ndarray, action, rng: np.random.Generator | None = None
             ) -> tuple[np.ndarray, float, bool]: ...


@dataclass(eq=False)
class Trajectory:
    """A rollout: ``states`` has one more row than ``actions``/``rewards`` (the final state)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated: bool

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.actions = np.asarray(self.actions)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.states.shape[0] != self.rewards.shape[0] + 1:
            raise ValueError("need exactly one more state than rewards")
        if self.actions.shape[0] != self.rewards.shape[0]:
            raise ValueError("actions and rewards differ in length")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

    def __len__(self) -> int:
        return self.rewards.shape[0]

    @property
    def visited(self) -> np.ndarray:
        return self.states

    def to_dict(self) -> dict:
        return {
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "terminated": self.terminated,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> Trajectory:
        return cls(d["states"], d["actions"], d["rewards"], d["terminated"])


@dataclass(eq=False)
class PolicyParams:
    family: Family
    theta: np.ndarray
    shape: dict = field(default_factory=dict)

    def __post_init__(self):
        self.family = Family(self.family)
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        expected = n_params(self.family, self.shape)
        if self.theta.size != expected:
            raise ValueError(f"theta has {self.theta.size} entries, shape metadata needs {expected}")

    def replace(self, theta: np.ndarray) -> PolicyParams:
        return PolicyParams(self.family, theta, self.shape)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "shape": _jsonable(self.shape), "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> PolicyParams:
        return cls(d["family"], d["theta"], d.get("shape", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _mlp_sizes(shape: dict) -> list[int]:
    return [int(shape["state_dim"]), *map(int, shape.get("hidden", (15, 15))), int(shape["action_dim"])]


def n_params(family: Family, shape: dict) -> int:
    if Family(family) is Family.RBF_SOFTMAX:
        return len(shape["centers"]) * int(shape["n_actions"])
    sizes = _mlp_sizes(shape)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def rbf_params(centers, n_actions: int, bandwidth: float = 1.0, normalize: bool = True,
               theta=None) -> PolicyParams:
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    shape = {"centers": centers.tolist(), "n_actions": int(n_actions),
             "bandwidth": float(bandwidth), "normalize": bool(normalize)}
    if theta is None:
        theta = np.zeros(centers.shape[0] * n_actions)
    return PolicyParams(Family.RBF_SOFTMAX, theta, shape)


def mlp_params(state_dim: int, action_dim: int, hidden=(15, 15), stddev: float = 0.3,
               rng: np.random.Generator | None = None, theta=None) -> PolicyParams:
    shape = {"state_dim": int(state_dim), "action_dim": int(action_dim),
             "hidden": [int(h) for h in hidden], "stddev": float(stddev)}
    if theta is None:
        sizes = _mlp_sizes(shape)
        parts = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            w = np.zeros((a, b)) if rng is None else rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b))
            parts += [w.ravel(), np.zeros(b)]
        theta = np.concatenate(parts)
    return PolicyParams(Family.MLP_GAUSSIAN, theta, shape)


# --------------------------------------------------------------------------
# Policy families


class RbfSoftmax:
    """Softmax over actions with logits linear in Gaussian bump features."""

    def __init__(self, params: PolicyParams):
        shape = params.shape
        self.centers = np.asarray(shape["centers"], dtype=float)
        self.n_actions = int(shape["n_actions"])
        self.bandwidth = float(shape.get("bandwidth", 1.0))
        self.normalize = bool(shape.get("normalize", True))
        self.W = params.theta.reshape(self.centers.shape[0], self.n_actions)
        self._feature_cache: dict[tuple, np.ndarray] = {}

    def features(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        sq = pairwise_cost(states, self.centers, CostKind.SQUARED_EUCLIDEAN)
        phi = np.exp(-sq / (2.0 * self.bandwidth**2))
        if self.normalize:
            phi /= phi.sum(axis=1, keepdims=True)
        return phi

    def feature(self, state: np.ndarray) -> np.ndarray:
        key = tuple(np.asarray(state, dtype=float).tolist())
        phi = self._feature_cache.get(key)
        if phi is None:
            phi = self.features(np.asarray(key))[0]
            self._feature_cache[key] = phi
        return phi

    def probs(self, states: np.ndarray) -> np.ndarray:
        logits = self.features(states) @ self.W
        return _softmax(logits)

    def log_prob(self, states, actions) -> np.ndarray:
        p = self.probs(states)
        return np.log(p[np.arange(p.shape[0]), np.asarray(actions, dtype=int)])

    def grad_log_prob_sum(self, states, actions) -> np.ndarray:
        """``sum_t grad log pi(a_t | s_t)`` as a flat vector."""
        states = np.atleast_2d(states)
        actions = np.asarray(actions, dtype=int)
        phi = self.features(states)
        p = _softmax(phi @ self.W)
        if np.any(p[np.arange(actions.size), actions] <= 0):
            raise ValueError("action outside the policy's support")
        onehot = np.zeros_like(p)
        onehot[np.arange(actions.size), actions] = 1.0
        return (phi.T @ (onehot - p)).ravel()


class MlpGaussian:
    """Gaussian actions with a tanh-MLP mean and fixed diagonal stddev."""

    def __init__(self, params: PolicyParams):
        shape = params.shape
        self.sizes = _mlp_sizes(shape)
        self.stddev = float(shape.get("stddev", 0.3))
        self.layers = []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = params.theta[off : off + a * b].reshape(a, b)
            off += a * b
            bias = params.theta[off : off + b]
            off += b
            self.layers.append((W, bias))

    def _forward(self, states: np.ndarray):
        acts = [np.atleast_2d(states)]
        h = acts[0]
        for k, (W, b) in enumerate(self.layers):
            z = h @ W + b
            h = z if k == len(self.layers) - 1 else np.tanh(z)
            acts.append(h)
        return acts

    def mean(self, states) -> np.ndarray:
        return self._forward(states)[-1]

    def log_prob(self, states, actions) -> np.ndarray:
        m = self.mean(states)
        a = np.atleast_2d(np.asarray(actions, dtype=float))
        d = m.shape[1]
        z = (a - m) / self.stddev
        return -0.5 * (z**2).sum(axis=1) - d * np.log(self.stddev) - 0.5 * d * np.log(2 * np.pi)

    def grad_log_prob_sum(self, states, actions) -> np.ndarray:
        acts = self._forward(states)
        a = np.atleast_2d(np.asarray(actions, dtype=float))
        delta = (a - acts[-1]) / self.stddev**2
        grads = []
        for k in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[k]
            h_in = acts[k]
            grads.append(delta.sum(axis=0))
            grads.append((h_in.T @ delta).ravel())
            if k > 0:
                delta = (delta @ W.T) * (1.0 - acts[k] ** 2)
        return np.concatenate(grads[::-1])


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def build_policy(params: PolicyParams):
    if not np.all(np.isfinite(params.theta)):
        raise ValueError("policy parameters contain NaN or infinity")
    if params.family is Family.RBF_SOFTMAX:
        return RbfSoftmax(params)
    return MlpGaussian(params)


@dataclass(frozen=True)
class Categorical:
    probs: np.ndarray

    def sample(self, rng: np.random.Generator) -> int:
        return int(np.searchsorted(np.cumsum(self.probs), rng.random() * self.probs.sum(), side="right"))


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    stddev: float

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.stddev * rng.standard_normal(self.mean.shape)


def policy_distribution(params: PolicyParams, state):
    policy = build_policy(params)
    state = np.asarray(state, dtype=float)
    if isinstance(policy, RbfSoftmax):
        return Categorical(policy.probs(state)[0])
    return DiagGaussian(policy.mean(state)[0], policy.stddev)


# --------------------------------------------------------------------------
# Rollouts


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def rollout(mdp: MdpSpec, params: PolicyParams, rng_seed) -> Trajectory:
    """Sample one episode: until an absorbing state or ``mdp.horizon`` steps.

    If the episode times out, ``mdp.timeout_penalty`` (when defined) is added
    to the last reward.
    """
    rng = as_generator(rng_seed)
    policy = build_policy(params)
    state = np.asarray(mdp.reset(), dtype=float)
    states, actions, rewards = [state], [], []
    terminated = bool(getattr(mdp, "is_absorbing", lambda s: False)(state))
    discrete = isinstance(policy, RbfSoftmax)
    if discrete and hasattr(mdp, "state_table"):
        # Finite state sets: one softmax per state for the whole episode.
        table_states, index = mdp.state_table()
        cdf = np.cumsum(policy.probs(table_states), axis=1)
        probs_of = lambda s: cdf[index(s)]
    elif discrete:
        probs_of = lambda s: np.cumsum(_softmax(policy.feature(s) @ policy.W))
    while not terminated and len(rewards) < mdp.horizon:
        if discrete:
            c = probs_of(state)
            action = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
            action = min(action, c.size - 1)
        else:
            action = policy.mean(state)[0] + policy.stddev * rng.standard_normal(policy.sizes[-1])
        state, reward, terminated = mdp.step(state, action, rng)
        state = np.asarray(state, dtype=float)
        states.append(state)
        actions.append(action)
        rewards.append(float(reward))
    if not terminated and rewards:
        rewards[-1] += float(getattr(mdp, "timeout_penalty", 0.0))
    act_arr = np.asarray(actions, dtype=int if discrete else float)
    if not discrete and not actions:
        act_arr = np.zeros((0, policy.sizes[-1]))
    return Trajectory(np.array(states), act_arr, np.array(rewards), terminated)


def trajectory_return(tau: Trajectory, gamma: float = 1.0) -> float:
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if len(tau) == 0:
        return 0.0
    if gamma == 1.0:
        return float(tau.rewards.sum())
    return float(tau.rewards @ gamma ** np.arange(len(tau)))


def grad_log_prob_sum(tau: Trajectory, params: PolicyParams) -> np.ndarray:
    if len(tau) == 0:
        return np.zeros(params.theta.size)
    policy = build_policy(params)
    return policy.grad_log_prob_sum(tau.states[:-1], tau.actions)


def score_function_grad(tau: Trajectory, params: PolicyParams, scalar_weight: float) -> np.ndarray:
    """``scalar_weight * sum_t grad_theta log pi(a_t | s_t)``."""
    return scalar_weight * grad_log_prob_sum(tau, params)


def grad_of_expectation_estimate(taus: Sequence[Trajectory], params: PolicyParams,
                                 g: Callable[[Trajectory], float]) -> np.ndarray:
    """Batch-mean score-function estimate of ``grad_theta E[g(tau)]``."""
    if not taus:
        raise ValueError("empty trajectory batch")
    total = np.zeros(params.theta.size)
    for tau in taus:
        total += score_function_grad(tau, params, g(tau))
    return total / len(taus)


def log_prob_of(params: PolicyParams, states, actions) -> np.ndarray:
    return build_policy(params).log_prob(states, actions)
