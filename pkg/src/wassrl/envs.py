"""Benchmark environments: terrain gridworld, two-goal plane, small tabular MDPs."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from wassrl.rl_core import MlpGaussian, PolicyParams, Trajectory, build_policy

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
ACTION_NAMES = ("up", "down", "left", "right")


def load_terrain(path: str | Path | None = None) -> np.ndarray:
    """Heights file: one line per grid row (row 0 at the top), whitespace-separated integers."""
    if path is None:
        text = resources.files("wassrl.data").joinpath("terrain_default.txt").read_text()
    else:
        text = Path(path).read_text()
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    try:
        heights = np.array([[int(tok) for tok in row] for row in rows])
    except ValueError as exc:
        raise ValueError(f"terrain must contain integers only: {exc}") from None
    if heights.ndim != 2:
        raise ValueError("terrain rows differ in length")
    return heights


@dataclass(frozen=True, eq=False)
class GridworldSpec:
    heights: np.ndarray = field(default_factory=load_terrain)
    horizon: int = 50
    timeout_penalty: float = -10.0
    gamma: float = 1.0
    start: tuple[int, int] | None = None
    goal: tuple[int, int] | None = None

    def __post_init__(self):
        h = np.asarray(self.heights)
        if h.ndim != 2 or h.size == 0:
            raise ValueError("heights must be a non-empty matrix")
        if np.any(h < 0) or not np.all(h == np.round(h)):
            raise ValueError("heights must be nonnegative integers")
        h = h.astype(int)
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)
        rows, cols = h.shape
        if self.start is None:
            object.__setattr__(self, "start", (rows - 1, 0))
        if self.goal is None:
            object.__setattr__(self, "goal", (0, cols - 1))
        if tuple(self.start) == tuple(self.goal):
            raise ValueError("start and goal coincide")
        manhattan = abs(self.start[0] - self.goal[0]) + abs(self.start[1] - self.goal[1])
        if self.horizon < manhattan:
            raise ValueError(f"horizon {self.horizon} cannot reach the goal ({manhattan} moves)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    @property
    def n_cells(self) -> int:
        return self.heights.size

    def cell_index(self, cell) -> int:
        r, c = int(cell[0]), int(cell[1])
        return r * self.shape[1] + c

    def cell_centers(self) -> np.ndarray:
        rows, cols = self.shape
        rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1).astype(float)


def gridworld_step(spec: GridworldSpec, state, action) -> tuple[np.ndarray, float, bool]:
    """Move one cell; off-grid moves stay put. Reward is ``-1 - height`` of the cell landed in."""
    r, c = int(state[0]), int(state[1])
    if (r, c) == tuple(spec.goal):
        return np.array([r, c], dtype=float), 0.0, True
    try:
        dr, dc = MOVES[int(action)]
    except (KeyError, TypeError, ValueError):
        raise ValueError(f"invalid gridworld action {action!r}") from None
    rows, cols = spec.shape
    nr, nc = r + dr, c + dc
    if not (0 <= nr < rows and 0 <= nc < cols):
        nr, nc = r, c
    reward = -1.0 - float(spec.heights[nr, nc])
    return np.array([nr, nc], dtype=float), reward, (nr, nc) == tuple(spec.goal)


class Gridworld:
    """MDP wrapper around a ``GridworldSpec``; states are ``(row, col)`` points."""

    n_actions = 4

    def __init__(self, spec: GridworldSpec):
        self.spec = spec
        self.horizon = spec.horizon
        self.gamma = spec.gamma
        self.timeout_penalty = spec.timeout_penalty
        self._centers = spec.cell_centers()
        cols = spec.shape[1]
        self._index = lambda s: int(s[0]) * cols + int(s[1])

    def reset(self) -> np.ndarray:
        return np.array(self.spec.start, dtype=float)

    def is_absorbing(self, state) -> bool:
        return (int(state[0]), int(state[1])) == tuple(self.spec.goal)

    def step(self, state, action, rng=None):
        return gridworld_step(self.spec, state, action)

    def state_table(self):
        return self._centers, self._index


@dataclass(frozen=True)
class TwoGoalSpec:
    goals: tuple[tuple[float, float], tuple[float, float]] = ((-2.0, 3.0), (2.0, 3.0))
    horizon: int = 20
    reward_scale: float = 1.0
    clip: float = 0.5
    start: tuple[float, float] = (0.0, 0.0)
    gamma: float = 1.0

    def __post_init__(self):
        g1, g2 = (np.asarray(g, dtype=float) for g in self.goals)
        if np.array_equal(g1, g2):
            raise ValueError("the two goals must differ")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.clip > 0:
            raise ValueError("clip radius must be positive")

    @property
    def goal_separation(self) -> float:
        g1, g2 = (np.asarray(g, dtype=float) for g in self.goals)
        return float(np.linalg.norm(g1 - g2))


def twogoal_reward(spec: TwoGoalSpec, states) -> np.ndarray:
    s = np.atleast_2d(states)
    d = np.min([np.linalg.norm(s - np.asarray(g), axis=1) for g in spec.goals], axis=0)
    return spec.reward_scale / (1.0 + d)


def clip_actions(spec: TwoGoalSpec, actions) -> np.ndarray:
    a = np.atleast_2d(np.asarray(actions, dtype=float))
    norm = np.linalg.norm(a, axis=1, keepdims=True)
    scale = np.minimum(1.0, spec.clip / np.maximum(norm, 1e-300))
    return a * scale


def twogoal_step(spec: TwoGoalSpec, state, action) -> tuple[np.ndarray, float, bool]:
    """Displace by the clipped action; reward decays with distance to the nearest goal."""
    if not np.all(np.isfinite(action)):
        raise ValueError("action must be finite")
    nxt = np.asarray(state, dtype=float) + clip_actions(spec, action)[0]
    return nxt, float(twogoal_reward(spec, nxt)[0]), False


class TwoGoal:
    def __init__(self, spec: TwoGoalSpec):
        self.spec = spec
        self.horizon = spec.horizon
        self.gamma = spec.gamma
        self.state_dim = 2
        self.action_dim = 2

    def reset(self) -> np.ndarray:
        return np.array(self.spec.start, dtype=float)

    def step(self, state, action, rng=None):
        return twogoal_step(self.spec, state, action)

    def rollout_batch(self, params: PolicyParams, rng: np.random.Generator, n: int) -> list[Trajectory]:
        """``n`` fixed-horizon episodes stepped together (Gaussian policies only)."""
        policy = build_policy(params)
        if not isinstance(policy, MlpGaussian):
            raise TypeError("two-goal rollouts need a Gaussian policy")
        S = np.tile(np.asarray(self.spec.start, dtype=float), (n, 1))
        states, actions, rewards = [S], [], []
        for _ in range(self.horizon):
            A = policy.mean(S) + policy.stddev * rng.standard_normal((n, self.action_dim))
            S = S + clip_actions(self.spec, A)
            states.append(S)
            actions.append(A)
            rewards.append(twogoal_reward(self.spec, S))
        states, actions, rewards = np.stack(states, 1), np.stack(actions, 1), np.stack(rewards, 1)
        return [Trajectory(states[k], actions[k], rewards[k], False) for k in range(n)]


class TabularMdp:
    """Finite MDP with explicit transition probabilities; states are 1-d points ``(index,)``.

    ``transitions[s, a]`` is a distribution over next states and
    ``rewards[s, a]`` the reward for taking ``a`` in ``s``.
    """

    def __init__(self, transitions, rewards, start: int = 0, horizon: int = 2,
                 absorbing=(), gamma: float = 1.0, timeout_penalty: float = 0.0):
        self.transitions = np.asarray(transitions, dtype=float)
        self.rewards = np.asarray(rewards, dtype=float)
        n_s, n_a, n_s2 = self.transitions.shape
        if n_s != n_s2 or self.rewards.shape != (n_s, n_a):
            raise ValueError("inconsistent tabular MDP shapes")
        if not np.allclose(self.transitions.sum(axis=2), 1.0):
            raise ValueError("transition rows must sum to 1")
        self.n_states, self.n_actions = n_s, n_a
        self.start = start
        self.horizon = horizon
        self.absorbing = frozenset(absorbing)
        self.gamma = gamma
        self.timeout_penalty = timeout_penalty
        self._points = np.arange(n_s, dtype=float)[:, None]

    def reset(self) -> np.ndarray:
        return np.array([self.start], dtype=float)

    def is_absorbing(self, state) -> bool:
        return int(state[0]) in self.absorbing

    def step(self, state, action, rng=None):
        s, a = int(state[0]), int(action)
        if not 0 <= a < self.n_actions:
            raise ValueError(f"invalid action {action!r}")
        if s in self.absorbing:
            return np.array([s], dtype=float), 0.0, True
        p = self.transitions[s, a]
        if np.count_nonzero(p) == 1:
            nxt = int(np.flatnonzero(p)[0])
        else:
            nxt = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        return np.array([nxt], dtype=float), float(self.rewards[s, a]), nxt in self.absorbing

    def state_table(self):
        return self._points, lambda s: int(s[0])


def two_step_mdp() -> TabularMdp:
    """Three states, two actions, horizon 2; the second step's transition is stochastic."""
    P = np.zeros((3, 2, 3))
    P[0, 0] = [0.0, 1.0, 0.0]
    P[0, 1] = [0.0, 0.0, 1.0]
    P[1, 0] = [0.0, 0.3, 0.7]
    P[1, 1] = [0.0, 0.8, 0.2]
    P[2, 0] = [0.0, 0.5, 0.5]
    P[2, 1] = [0.0, 1.0, 0.0]
    R = np.array([[1.0, 0.0], [0.0, 2.0], [1.5, -1.0]])
    return TabularMdp(P, R, start=0, horizon=2)
