"""Stochastic dual machinery for entropic transport.

Covers the discrete dual objective ``B(u, v)``, the semi-discrete dual
``h(x, v)`` against a finite target, and kernel expansions for the
continuous dual test functions grown by stochastic ascent.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from wassrl.measures import CostKind, DiscreteMeasure, as_point, ground_cost, pairwise_cost

log = logging.getLogger(__name__)

EXP_CLAMP = 30.0


@dataclass
class Diagnostics:
    """Counters surfaced in training logs."""

    saturations: int = 0
    pruned: int = 0

    def reset(self) -> None:
        self.saturations = 0
        self.pruned = 0


def clamped_exp(z, diag: Diagnostics | None = None):
    """``exp`` with its argument clipped to +-30; clipped calls are counted."""
    z = np.asarray(z, dtype=float)
    clipped = np.clip(z, -EXP_CLAMP, EXP_CLAMP)
    if diag is not None:
        diag.saturations += int(np.count_nonzero(clipped != z))
    out = np.exp(clipped)
    return float(out) if out.ndim == 0 else out


class KernelKind(str, enum.Enum):
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class Kernel:
    bandwidth: float = 1.0
    kind: KernelKind = KernelKind.GAUSSIAN

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"kernel bandwidth must be positive, got {self.bandwidth}")

    def gram(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        sq = pairwise_cost(xs, ys, CostKind.SQUARED_EUCLIDEAN)
        return np.exp(-sq / (2.0 * self.bandwidth**2))


def kernel_eval(k: Kernel, x, y) -> float:
    sq = ground_cost(x, y, CostKind.SQUARED_EUCLIDEAN)
    return float(np.exp(-sq / (2.0 * k.bandwidth**2)))


def median_bandwidth(points, max_points: int = 100) -> float:
    """Median pairwise Euclidean distance of the first ``max_points`` points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:max_points]
    if pts.shape[0] < 2:
        return 1.0
    d = pairwise_cost(pts, pts, CostKind.EUCLIDEAN)
    d = d[np.triu_indices(pts.shape[0], k=1)]
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


class RkhsFunction:
    """Kernel expansion ``x -> sum_i alpha_i k(x, c_i)``, grown one term at a time."""

    def __init__(self, kernel: Kernel, dim: int, capacity: int = 64):
        self.kernel = kernel
        self.dim = dim
        self._centers = np.empty((capacity, dim))
        self._coef = np.empty(capacity)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    @property
    def centers(self) -> np.ndarray:
        return self._centers[: self._n]

    @property
    def coefficients(self) -> np.ndarray:
        return self._coef[: self._n]

    def append(self, center, alpha: float) -> None:
        if self._n == self._coef.shape[0]:
            cap = 2 * self._n
            self._centers = np.resize(self._centers, (cap, self.dim))
            self._coef = np.resize(self._coef, cap)
        self._centers[self._n] = center
        self._coef[self._n] = alpha
        self._n += 1

    def keep(self, idx: np.ndarray) -> None:
        idx = np.sort(np.asarray(idx, dtype=int))
        n = idx.size
        self._centers[:n] = self._centers[idx]
        self._coef[:n] = self._coef[idx]
        self._n = n

    def __call__(self, x) -> float:
        return rkhs_eval(self, x)

    def eval_many(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if self._n == 0:
            return np.zeros(xs.shape[0])
        return self.kernel.gram(xs, self.centers) @ self.coefficients


def rkhs_eval(f: RkhsFunction, x) -> float:
    if len(f) == 0:
        return 0.0
    return float(f.eval_many(as_point(x)[None, :])[0])


@dataclass(frozen=True)
class FOperands:
    rho: float
    cost_kind: CostKind = CostKind.EUCLIDEAN

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


def f_rho(x, y, u_val: float, v_val: float, ops: FOperands, diag: Diagnostics | None = None) -> float:
    """Pointwise dual integrand ``u + v - rho * exp((u + v - c) / rho)``."""
    c = ground_cost(x, y, ops.cost_kind)
    return u_val + v_val - ops.rho * clamped_exp((u_val + v_val - c) / ops.rho, diag)


def prop2_alpha(u_prev_at_x: float, v_prev_at_y: float, c_xy: float, rho: float,
                step: float, radius: float, diag: Diagnostics | None = None) -> float:
    """Coefficient of the next kernel term, clipped to ``[-radius, radius]``."""
    if not (step > 0 and radius > 0):
        raise ValueError("step and radius must be positive")
    z = clamped_exp((u_prev_at_x + v_prev_at_y - c_xy) / rho, diag)
    return float(np.clip(step * (1.0 - z), -radius, radius))


class DualPair:
    """Kernel test functions ``(u, v)`` sharing one coefficient per sampled pair."""

    def __init__(self, kernel: Kernel, dim: int, rho: float, cost_kind: CostKind,
                 step_constant: float = 1.0, radius: float = 100.0, cap: int = 5000,
                 cost_scale: float = 1.0):
        self.u = RkhsFunction(kernel, dim)
        self.v = RkhsFunction(kernel, dim)
        self.rho = rho
        self.cost_kind = CostKind(cost_kind)
        self.cost_scale = cost_scale
        self.step_constant = step_constant
        self.radius = radius
        self.cap = cap
        self.steps = 0
        self.diag = Diagnostics()

    def __len__(self) -> int:
        return len(self.u)

    def update(self, x, y, u_x: float | None = None, v_y: float | None = None) -> float:
        """One stochastic ascent step at the sampled pair; returns the new coefficient."""
        x, y = as_point(x), as_point(y)
        if u_x is None:
            u_x = rkhs_eval(self.u, x)
        if v_y is None:
            v_y = rkhs_eval(self.v, y)
        self.steps += 1
        step = self.step_constant / np.sqrt(self.steps)
        c = self.cost_scale * ground_cost(x, y, self.cost_kind)
        alpha = prop2_alpha(u_x, v_y, c, self.rho, step, self.radius, self.diag)
        self.u.append(x, alpha)
        self.v.append(y, alpha)
        if len(self.u) > self.cap:
            self._prune()
        return alpha

    def _prune(self) -> None:
        n = len(self.u)
        keep = np.argsort(-np.abs(self.u.coefficients), kind="stable")[: self.cap // 2]
        self.u.keep(keep)
        self.v.keep(keep)
        self.diag.pruned += n - keep.size
        log.warning("kernel expansion exceeded %d terms; pruned %d smallest", self.cap, n - keep.size)


@dataclass(frozen=True)
class DualVectors:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).ravel()
        v = np.asarray(self.v, dtype=float).ravel()
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("dual vectors must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class BDual:
    value: float
    log_value: float
    grad_u: np.ndarray = field(repr=False)
    grad_v: np.ndarray = field(repr=False)


def b_dual(uv: DualVectors, C, rho: float) -> BDual:
    """``B(u, v) = sum_ij exp((u_i + v_j - c_ij) / rho)`` and its partial derivatives.

    The exponential matrix is formed after subtracting its largest exponent, so
    the gradients and ``log_value`` stay finite even where ``value`` overflows.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape != (uv.u.size, uv.v.size):
        raise ValueError(f"cost shape {C.shape} does not match ({uv.u.size}, {uv.v.size})")
    expo = (uv.u[:, None] + uv.v[None, :] - C) / rho
    top = float(expo.max())
    E = np.exp(expo - top)
    total = float(E.sum())
    log_value = top + np.log(total)
    with np.errstate(over="ignore"):
        scale = np.exp(top) / rho
        value = float(np.exp(log_value))
    return BDual(value, log_value, E.sum(axis=1) * scale, E.sum(axis=0) * scale)


def discrete_dual_value(uv: DualVectors, mu: DiscreteMeasure, nu: DiscreteMeasure, C, rho: float) -> float:
    """``<u, mu> + <v, nu> - rho * B(u, v)``."""
    return float(uv.u @ mu.weights + uv.v @ nu.weights) - rho * b_dual(uv, C, rho).value


def _semidiscrete_terms(x, v, nu: DiscreteMeasure, rho: float, cost_kind, cost_scale: float = 1.0):
    v = np.asarray(v, dtype=float).ravel()
    if v.size != nu.size:
        raise ValueError(f"v has length {v.size} but the target has {nu.size} atoms")
    if not rho > 0:
        raise ValueError("rho must be positive")
    x = as_point(x)
    c = cost_scale * pairwise_cost(x[None, :], nu.atoms, cost_kind)[0]
    live = nu.weights > 0
    expo = np.full(v.size, -np.inf)
    expo[live] = (v[live] - c[live]) / rho + np.log(nu.weights[live])
    top = expo[live].max()
    w = np.exp(expo - top)
    total = w.sum()
    return v, top + np.log(total), w / total


def semidiscrete_h(x, v, nu: DiscreteMeasure, rho: float, cost_kind=CostKind.EUCLIDEAN,
                   cost_scale: float = 1.0) -> float:
    """``<v, nu> - rho * log sum_j nu_j exp((v_j - c(x, y_j)) / rho)``."""
    v, lse, _ = _semidiscrete_terms(x, v, nu, rho, cost_kind, cost_scale)
    return float(v @ nu.weights - rho * lse)


def grad_v_h(x, v, nu: DiscreteMeasure, rho: float, cost_kind=CostKind.EUCLIDEAN,
             cost_scale: float = 1.0) -> np.ndarray:
    """Gradient of ``semidiscrete_h`` in ``v``: target weights minus posterior weights."""
    _, _, post = _semidiscrete_terms(x, v, nu, rho, cost_kind, cost_scale)
    return nu.weights - post


def expected_h(mu: DiscreteMeasure, v, nu: DiscreteMeasure, rho: float, cost_kind=CostKind.EUCLIDEAN):
    """``E_{X~mu} h(X, v)`` and its gradient in ``v`` for a discrete ``mu``."""
    v = np.asarray(v, dtype=float)
    C = pairwise_cost(mu.atoms, nu.atoms, cost_kind)
    expo = (v[None, :] - C) / rho + np.log(np.where(nu.weights > 0, nu.weights, 1.0))[None, :]
    expo[:, nu.weights <= 0] = -np.inf
    top = expo.max(axis=1, keepdims=True)
    w = np.exp(expo - top)
    total = w.sum(axis=1, keepdims=True)
    lse = (top + np.log(total)).ravel()
    value = float(v @ nu.weights - rho * (mu.weights @ lse))
    grad = nu.weights - mu.weights @ (w / total)
    return value, grad


def maximise_semidual(mu: DiscreteMeasure, nu: DiscreteMeasure, rho: float,
                      cost_kind=CostKind.EUCLIDEAN, tol: float = 1e-10,
                      max_iters: int = 1_000_000) -> tuple[np.ndarray, float]:
    """Full-gradient ascent on ``E_mu h(., v)`` until the gradient norm is below ``tol``."""
    v = np.zeros(nu.size)
    # The gradient is rho^-1 Lipschitz.
    step = rho
    value, grad = expected_h(mu, v, nu, rho, cost_kind)
    for _ in range(max_iters):
        if np.linalg.norm(grad) < tol:
            break
        v = v + step * grad
        value, grad = expected_h(mu, v, nu, rho, cost_kind)
    return v, value
