"""Wasserstein-regularised policy-gradient trainers.

All trainers maximise ``V(theta) + lam * W_rho(mu_theta, nu)``: ``lam < 0`` pulls
the policy's embedded trajectory distribution toward ``nu``, ``lam > 0`` pushes
it away. Dual variables always ascend the dual of ``W_rho``; the sign of ``lam``
only enters the policy update. With ``lam == 0`` every trainer reproduces
``reinforce`` (or ``reinforce_pair``) bit for bit under the same seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import wasserstein_distance

from wassrl.dual_stochastic import (
    DualPair,
    DualVectors,
    Kernel,
    b_dual,
    clamped_exp,
    grad_v_h,
    median_bandwidth,
    semidiscrete_h,
)
from wassrl.embeddings import EmbeddingKind, EmbeddingSpec, embed
from wassrl.entropic_ot import Convention, OtConfig, grad_wrt_left_marginal, sinkhorn
from wassrl.measures import CostKind, DiscreteMeasure, pairwise_cost
from wassrl.rl_core import (
    PolicyParams,
    Trajectory,
    grad_log_prob_sum,
    rollout,
    trajectory_return,
)

log = logging.getLogger(__name__)

EMA_FLOOR = 1e-12
BASELINE_RATE = 0.05
W_TRACE_RATE = 0.05


@dataclass(frozen=True)
class WrlConfig:
    lam: float = -1.0
    rho: float = 1.0
    embedding: EmbeddingSpec = field(default_factory=lambda: EmbeddingSpec(EmbeddingKind.MEAN_X, CostKind.EUCLIDEAN))
    episodes: int = 1000
    theta_step: float = 0.01
    # Dual vector steps are dual_step / sqrt(i).
    dual_step: float = 0.1
    rkhs_constant: float = 1.0
    rkhs_radius: float = 100.0
    rkhs_cap: int = 5000
    kernel_bandwidth: float | None = None
    ema_rate: float = 0.05
    baseline: bool = False
    # Batch trainers only: divide centred weights by their batch standard deviation.
    normalize_weights: bool = False
    batch_size: int = 100
    reset_duals: bool = False
    dual_passes: int = 1
    checkpoint_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.episodes < 1 or self.batch_size < 1 or self.checkpoint_every < 1 or self.dual_passes < 1:
            raise ValueError("budgets must be >= 1")
        for name in ("theta_step", "dual_step", "rkhs_constant", "rkhs_radius", "ema_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


class TrainingAborted(RuntimeError):
    """Raised when parameters become non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, iteration: int, **fields) -> None:
        if self.records and iteration <= self.records[-1]["iteration"]:
            raise ValueError("log iterations must increase")
        for k, v in fields.items():
            if isinstance(v, float) and not np.isfinite(v):
                raise ValueError(f"non-finite log value {k}={v}")
        self.records.append({"iteration": iteration, **fields})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def __len__(self) -> int:
        return len(self.records)


def streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators so that dual-side sampling never perturbs rollouts."""
    names = ("rollout", "target", "warmup", "pairing", "rollout_b")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


def _sgd(theta: np.ndarray, step: float, weight: float, glp: np.ndarray) -> np.ndarray:
    # Overflow is reported by _check_finite, not as a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        return theta + step * (weight * glp)


def _check_finite(theta: np.ndarray, iteration: int, **context) -> None:
    if not np.all(np.isfinite(theta)):
        snap = {"iteration": iteration, "theta": theta.tolist()}
        snap.update({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in context.items()})
        raise TrainingAborted(f"non-finite policy parameters at iteration {iteration}", snap)


class _Baseline:
    """Running mean of past policy-gradient weights (off unless configured)."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.value = 0.0

    def apply(self, weight: float) -> float:
        if not self.enabled:
            return weight
        out = weight - self.value
        self.value += BASELINE_RATE * (weight - self.value)
        return out


def _episodic(mdp, params0: PolicyParams, cfg: WrlConfig,
              lam_term: Callable[[int, Trajectory], tuple[float, dict]],
              after_step: Callable[[int, Trajectory], None] | None = None,
              update_policy: bool = True):
    """Shared single-trajectory loop: ``theta += a * (lam_term + R) * sum grad log pi``."""
    rng = streams(cfg.seed)["rollout"]
    theta = params0.theta.copy()
    params = params0
    baseline = _Baseline(cfg.baseline)
    tlog = TrainLog()
    start = time.perf_counter()
    for i in range(1, cfg.episodes + 1):
        tau = rollout(mdp, params, rng)
        ret = trajectory_return(tau, mdp.gamma)
        extra, diag = lam_term(i, tau)
        weight = baseline.apply(extra + ret)
        if update_policy:
            glp = grad_log_prob_sum(tau, params)
            theta = _sgd(theta, cfg.theta_step, weight, glp)
            _check_finite(theta, i, weight=weight, rewards=tau.rewards)
            params = params.replace(theta)
        if after_step is not None:
            after_step(i, tau)
        if i % cfg.checkpoint_every == 0:
            tlog.append(i, **{"return": ret, **diag,
                              "wallclock_ms": 1000.0 * (time.perf_counter() - start)})
    return params, tlog


def reinforce(mdp, params0: PolicyParams, cfg: WrlConfig) -> tuple[PolicyParams, TrainLog]:
    """Reference episodic policy gradient: ``theta += a * R(tau) * sum grad log pi``."""
    rng = streams(cfg.seed)["rollout"]
    theta = params0.theta.copy()
    params = params0
    baseline = _Baseline(cfg.baseline)
    tlog = TrainLog()
    start = time.perf_counter()
    for i in range(1, cfg.episodes + 1):
        tau = rollout(mdp, params, rng)
        ret = trajectory_return(tau, mdp.gamma)
        theta = _sgd(theta, cfg.theta_step, baseline.apply(ret), grad_log_prob_sum(tau, params))
        _check_finite(theta, i)
        params = params.replace(theta)
        if i % cfg.checkpoint_every == 0:
            tlog.append(i, **{"return": ret, "w_estimate": 0.0, "dual_diag_saturations": 0,
                              "wallclock_ms": 1000.0 * (time.perf_counter() - start)})
    return params, tlog


class _Ema:
    def __init__(self, rate: float):
        self.rate = rate
        self.value: float | None = None

    def update(self, x: float) -> float:
        self.value = x if self.value is None else self.value + self.rate * (x - self.value)
        return self.value


def train_alg1_continuous(mdp, params0: PolicyParams, nu_sampler: Callable[[np.random.Generator], np.ndarray],
                          cfg: WrlConfig, dual: DualPair | None = None) -> tuple[PolicyParams, TrainLog]:
    """Kernel dual test functions grown online against a sampled target.

    Per episode: sample ``tau``, ``X = f(tau)``, ``Y ~ nu``; weight the score by
    ``lam * u(X) - lam * rho * Z + R(tau)`` with ``Z = exp((u(X) + v(Y) - c) / rho)``;
    then append one kernel term at ``(X, Y)``.
    """
    rngs = streams(cfg.seed)
    emb = cfg.embedding
    if dual is None:
        bandwidth = cfg.kernel_bandwidth
        if bandwidth is None:
            warm = [embed(emb, rollout(mdp, params0, rngs["warmup"])) for _ in range(50)]
            warm += [np.asarray(nu_sampler(rngs["warmup"]), dtype=float) for _ in range(50)]
            bandwidth = median_bandwidth(np.stack(warm))
        dual = DualPair(Kernel(bandwidth), emb.dim, cfg.rho, emb.cost_kind,
                        cfg.rkhs_constant, cfg.rkhs_radius, cfg.rkhs_cap, emb.cost_scale)
    w_trace = _Ema(W_TRACE_RATE)
    pending = {}

    def lam_term(i, tau):
        x = embed(emb, tau)
        y = np.asarray(nu_sampler(rngs["target"]), dtype=float)
        u_x, v_y = dual.u(x), dual.v(y)
        c = float(emb.cost(x[None, :], y[None, :])[0, 0])
        z = clamped_exp((u_x + v_y - c) / cfg.rho, dual.diag)
        pending.update(x=x, y=y, u_x=u_x, v_y=v_y)
        w = w_trace.update(u_x + v_y - cfg.rho * z + cfg.rho)
        return cfg.lam * u_x - cfg.lam * cfg.rho * z, {
            "w_estimate": w, "dual_diag_saturations": dual.diag.saturations}

    def after_step(i, tau):
        dual.update(pending["x"], pending["y"], pending["u_x"], pending["v_y"])

    params, tlog = _episodic(mdp, params0, cfg, lam_term, after_step)
    return params, tlog


def bin_to_support(x: np.ndarray, support: np.ndarray, cost_kind: CostKind) -> int:
    """Index of the nearest support atom (first on ties)."""
    return int(np.argmin(pairwise_cost(np.asarray(x)[None, :], support, cost_kind)[0]))


def train_alg2_discrete(mdp, params0: PolicyParams, nu: DiscreteMeasure, support: Sequence,
                        cfg: WrlConfig) -> tuple[PolicyParams, TrainLog]:
    """Chain rule through a Sinkhorn subgradient on a tracked estimate of ``mu_theta``.

    ``mu_theta`` is an exponential moving average of binned embeddings over a
    fixed support. The Sinkhorn potential of the visited atom multiplies the
    trajectory's score, which is ``<u*, grad mu_theta>`` for the indicator
    estimator of ``grad mu_theta``.
    """
    support = np.atleast_2d(np.asarray(support, dtype=float))
    emb = cfg.embedding
    C = emb.cost(support, nu.atoms)
    ot_cfg = OtConfig(rho=cfg.rho, convention=Convention.KL_PRODUCT, max_iters=20_000, tol=1e-9)
    mu_hat = np.full(support.shape[0], 1.0 / support.shape[0])

    def lam_term(i, tau):
        nonlocal mu_hat
        k = bin_to_support(embed(emb, tau), support, emb.cost_kind)
        mu_hat = (1.0 - cfg.ema_rate) * mu_hat
        mu_hat[k] += cfg.ema_rate
        floored = np.maximum(mu_hat, EMA_FLOOR)
        res = sinkhorn(DiscreteMeasure(support, floored), nu, C, ot_cfg)
        if res.converged:
            u = grad_wrt_left_marginal(res)
        else:
            u = res.dual_u - res.dual_u.mean()
        return cfg.lam * float(u[k]), {"w_estimate": res.primal_value, "dual_diag_saturations": 0}

    return _episodic(mdp, params0, cfg, lam_term)


def train_alg3_dual_discrete(mdp, params0: PolicyParams, nu: DiscreteMeasure, support: Sequence,
                             cfg: WrlConfig, frozen: bool = False
                             ) -> tuple[PolicyParams, TrainLog, DualVectors]:
    """Alternating stochastic ascent on discrete dual vectors and the policy.

    The policy sees ``lam * u[bin(f(tau))] + R(tau)``. The duals ascend
    ``<u, mu> + <v, nu> - rho * B(u, v)`` from one binned sample of each side,
    scaled by ``|lam|``. ``frozen`` skips policy updates (dual diagnostics only).
    """
    support = np.atleast_2d(np.asarray(support, dtype=float))
    emb = cfg.embedding
    C = emb.cost(support, nu.atoms)
    rngs = streams(cfg.seed)
    u = np.zeros(support.shape[0])
    v = np.zeros(nu.size)
    scale = abs(cfg.lam)
    w_trace = _Ema(W_TRACE_RATE)
    pending = {}

    def lam_term(i, tau):
        k = bin_to_support(embed(emb, tau), support, emb.cost_kind)
        pending["k"] = k
        return cfg.lam * float(u[k]), {"w_estimate": w_trace.value or 0.0, "dual_diag_saturations": 0}

    def after_step(i, tau):
        nonlocal u, v
        k = pending["k"]
        bd = b_dual(DualVectors(u, v), C, cfg.rho)
        step = cfg.dual_step / np.sqrt(i)
        j = int(rngs["target"].choice(nu.size, p=nu.weights))
        e_k = np.zeros_like(u)
        e_k[k] = 1.0
        e_j = np.zeros_like(v)
        e_j[j] = 1.0
        w_trace.update(float(u[k] + v[j]) - cfg.rho * bd.value + cfg.rho)
        u = u + step * scale * (e_k - cfg.rho * bd.grad_u)
        v = v + step * scale * (e_j - cfg.rho * bd.grad_v)

    params, tlog = _episodic(mdp, params0, cfg, lam_term, after_step, update_policy=not frozen)
    return params, tlog, DualVectors(u, v)


def train_alg4_semidiscrete(mdp, params0: PolicyParams, nu: DiscreteMeasure, cfg: WrlConfig,
                            frozen: bool = False) -> tuple[PolicyParams, TrainLog, np.ndarray]:
    """Semi-discrete dual against a finite target: policy weight ``lam * h(f(tau), v) + R``.

    ``frozen`` skips policy updates (dual diagnostics only).
    """
    emb = cfg.embedding
    v = np.zeros(nu.size)
    scale = abs(cfg.lam)
    w_trace = _Ema(W_TRACE_RATE)
    pending = {}

    def lam_term(i, tau):
        x = embed(emb, tau)
        h = semidiscrete_h(x, v, nu, cfg.rho, emb.cost_kind, emb.cost_scale)
        pending["x"] = x
        return cfg.lam * h, {"w_estimate": w_trace.update(h), "dual_diag_saturations": 0}

    def after_step(i, tau):
        nonlocal v
        g = grad_v_h(pending["x"], v, nu, cfg.rho, emb.cost_kind, emb.cost_scale)
        v = v + (cfg.dual_step / np.sqrt(i)) * scale * g

    params, tlog = _episodic(mdp, params0, cfg, lam_term, after_step, update_policy=not frozen)
    return params, tlog, v


# --------------------------------------------------------------------------
# Two-policy repulsion


def rollout_batch(mdp, params: PolicyParams, rng: np.random.Generator, n: int) -> list[Trajectory]:
    if hasattr(mdp, "rollout_batch"):
        return mdp.rollout_batch(params, rng, n)
    return [rollout(mdp, params, rng) for _ in range(n)]


def _batch_step(theta: np.ndarray, step: float, weights: np.ndarray, glps: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        return theta + step * (weights @ glps / weights.size)


def _batch_weights(raw: np.ndarray, baseline: bool, normalize: bool = False) -> np.ndarray:
    if normalize:
        centred = raw - raw.mean()
        sd = centred.std()
        return centred / sd if sd > 0 else centred
    return raw - raw.mean() if baseline else raw


def reinforce_pair(mdp, params_a0: PolicyParams, params_b0: PolicyParams, cfg: WrlConfig
                   ) -> tuple[PolicyParams, PolicyParams, TrainLog]:
    """Reference: two independent batch policy-gradient runs on the repulsive trainer's streams."""
    rngs = streams(cfg.seed)
    pa, pb = params_a0, params_b0
    tlog = TrainLog()
    for it in range(1, cfg.episodes + 1):
        taus_a = rollout_batch(mdp, pa, rngs["rollout"], cfg.batch_size)
        taus_b = rollout_batch(mdp, pb, rngs["rollout_b"], cfg.batch_size)
        ra = np.array([trajectory_return(t, mdp.gamma) for t in taus_a])
        rb = np.array([trajectory_return(t, mdp.gamma) for t in taus_b])
        ga = np.stack([grad_log_prob_sum(t, pa) for t in taus_a])
        gb = np.stack([grad_log_prob_sum(t, pb) for t in taus_b])
        pa = pa.replace(_batch_step(pa.theta, cfg.theta_step, _batch_weights(ra, cfg.baseline, cfg.normalize_weights), ga))
        pb = pb.replace(_batch_step(pb.theta, cfg.theta_step, _batch_weights(rb, cfg.baseline, cfg.normalize_weights), gb))
        _check_finite(np.concatenate([pa.theta, pb.theta]), it)
        tlog.append(it, return_a=float(ra.mean()), return_b=float(rb.mean()))
    return pa, pb, tlog


def w1_between(xs: np.ndarray, ys: np.ndarray, cost_kind: CostKind) -> float:
    """Unregularised transport cost between two equally weighted point clouds."""
    if xs.shape[1] == 1 and cost_kind in (CostKind.EUCLIDEAN, CostKind.L1):
        return float(wasserstein_distance(xs[:, 0], ys[:, 0]))
    from scipy.optimize import linear_sum_assignment

    C = pairwise_cost(xs, ys, cost_kind)
    r, c = linear_sum_assignment(C)
    return float(C[r, c].mean())


def train_repulsive_pair(mdp, params_a0: PolicyParams, params_b0: PolicyParams, cfg: WrlConfig,
                         on_iteration: Callable[[int, dict], None] | None = None
                         ) -> tuple[PolicyParams, PolicyParams, TrainLog]:
    """Two policies, each repelled from the other's current batch of embeddings.

    Per iteration both policies roll out ``cfg.batch_size`` trajectories. The
    kernel test functions ``u`` (policy A's side) and ``v`` (policy B's side)
    take ``dual_passes`` sweeps of stochastic ascent over randomly paired
    embeddings; each policy then takes one batch-averaged gradient step with
    weight ``lam * u(x) - lam * rho * mean_y Z(x, y) + R`` (B symmetrically).
    """
    if cfg.lam < 0:
        raise ValueError("the repulsive trainer needs lam >= 0")
    rngs = streams(cfg.seed)
    emb = cfg.embedding
    rho, lam = cfg.rho, cfg.lam
    pa, pb = params_a0, params_b0
    tlog = TrainLog()
    dual = None
    start = time.perf_counter()
    for it in range(1, cfg.episodes + 1):
        taus_a = rollout_batch(mdp, pa, rngs["rollout"], cfg.batch_size)
        taus_b = rollout_batch(mdp, pb, rngs["rollout_b"], cfg.batch_size)
        ra = np.array([trajectory_return(t, mdp.gamma) for t in taus_a])
        rb = np.array([trajectory_return(t, mdp.gamma) for t in taus_b])
        X = np.stack([embed(emb, t) for t in taus_a])
        Y = np.stack([embed(emb, t) for t in taus_b])
        if dual is None or cfg.reset_duals:
            half = cfg.batch_size // 2 or 1
            bandwidth = cfg.kernel_bandwidth or median_bandwidth(np.concatenate([X[:half], Y[:half]]))
            dual = DualPair(Kernel(bandwidth), emb.dim, rho, emb.cost_kind,
                            cfg.rkhs_constant, cfg.rkhs_radius, cfg.rkhs_cap, emb.cost_scale)
        for _ in range(cfg.dual_passes):
            # Batches are iid, so pairing equal indices in a shared random
            # order is a uniform random pairing; it also keeps A and B symmetric.
            for k in rngs["pairing"].permutation(cfg.batch_size):
                dual.update(X[k], Y[k])
        u_x = dual.u.eval_many(X)
        v_y = dual.v.eval_many(Y)
        C = emb.cost(X, Y)
        Z = clamped_exp((u_x[:, None] + v_y[None, :] - C) / rho, dual.diag)
        wa = lam * u_x - lam * rho * Z.mean(axis=1) + ra
        wb = lam * v_y - lam * rho * Z.mean(axis=0) + rb
        ga = np.stack([grad_log_prob_sum(t, pa) for t in taus_a])
        gb = np.stack([grad_log_prob_sum(t, pb) for t in taus_b])
        pa = pa.replace(_batch_step(pa.theta, cfg.theta_step, _batch_weights(wa, cfg.baseline, cfg.normalize_weights), ga))
        pb = pb.replace(_batch_step(pb.theta, cfg.theta_step, _batch_weights(wb, cfg.baseline, cfg.normalize_weights), gb))
        _check_finite(np.concatenate([pa.theta, pb.theta]), it, u_x=u_x, v_y=v_y)
        record = {
            "return_a": float(ra.mean()),
            "return_b": float(rb.mean()),
            "w_between_estimate": emb.cost_scale * w1_between(X, Y, emb.cost_kind),
            "mean_x_a": float(X[:, 0].mean()),
            "mean_x_b": float(Y[:, 0].mean()),
            "dual_value": float(np.mean(u_x) + np.mean(v_y) - rho * Z.mean() + rho),
            "dual_diag_saturations": dual.diag.saturations,
            "expansion_size": len(dual),
            "wallclock_ms": 1000.0 * (time.perf_counter() - start),
        }
        tlog.append(it, **record)
        if on_iteration is not None:
            on_iteration(it, {"X": X, "Y": Y, "dual": dual, **record})
    return pa, pb, tlog
