"""Batch entropic optimal transport between discrete measures.

Two value conventions are supported for the same minimiser:

* ``ENTROPY_H``:  <k, C> - rho * H(k), potentials satisfy k_ij = exp((u_i + v_j - c_ij) / rho)
* ``KL_PRODUCT``: <k, C> + rho * KL(k || mu x nu), potentials satisfy
  k_ij = mu_i nu_j exp((u_i + v_j - c_ij) / rho)

KL here is the standard divergence (no ``-1`` inside the integrand); the
variant with ``-1`` is lower by exactly ``rho`` for unit total mass.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from wassrl.measures import Coupling, DiscreteMeasure, validate_cost_matrix

log = logging.getLogger(__name__)

EXACT_MAX_ATOMS = 8
LOG_DOMAIN_FACTOR = 0.05


class Convention(str, enum.Enum):
    ENTROPY_H = "entropy_h"
    KL_PRODUCT = "kl_product"


@dataclass(frozen=True)
class OtConfig:
    rho: float
    max_iters: int = 100_000
    tol: float = 1e-8
    convention: Convention = Convention.KL_PRODUCT
    # None: decide from rho against the median cost.
    log_domain: bool | None = None
    # Record the per-iteration dual value and assert it never decreases.
    debug: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        object.__setattr__(self, "convention", Convention(self.convention))


@dataclass(frozen=True, eq=False)
class SinkhornResult:
    coupling: Coupling
    dual_u: np.ndarray
    dual_v: np.ndarray
    primal_value: float
    iterations: int
    converged: bool
    rho: float
    convention: Convention
    log_domain: bool
    residual: float
    trace: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "value": self.primal_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "dual_u": self.dual_u.tolist(),
            "dual_v": self.dual_v.tolist(),
        }


def _xlogx(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    pos = a > 0
    out[pos] = a[pos] * np.log(a[pos])
    return out


def entropic_value(kappa, C, rho: float, convention: Convention | str = Convention.KL_PRODUCT) -> float:
    """Regularised transport objective of a given coupling (0 log 0 = 0)."""
    mass = kappa.mass if isinstance(kappa, Coupling) else np.atleast_2d(np.asarray(kappa, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if mass.shape != C.shape:
        raise ValueError(f"coupling shape {mass.shape} does not match cost shape {C.shape}")
    if np.any(mass < 0):
        raise ValueError("coupling has negative entries")
    transport = float((mass * C).sum())
    neg_h = float(_xlogx(mass).sum())
    if Convention(convention) is Convention.ENTROPY_H:
        return transport + rho * neg_h
    a = mass.sum(axis=1)
    b = mass.sum(axis=0)
    # KL(k || a x b) = sum k log k - sum a log a - sum b log b
    kl = neg_h - float(_xlogx(a).sum()) - float(_xlogx(b).sum())
    return transport + rho * kl


def exact_emd(mu: DiscreteMeasure, nu: DiscreteMeasure, C) -> tuple[Coupling, float]:
    """Unregularised optimal transport by linear programming (oracle scale only)."""
    C = validate_cost_matrix(C)
    n, m = mu.size, nu.size
    if C.shape != (n, m):
        raise ValueError(f"cost shape {C.shape} does not match ({n}, {m})")
    if n > EXACT_MAX_ATOMS or m > EXACT_MAX_ATOMS:
        raise ValueError(
            f"exact_emd is an oracle for supports of at most {EXACT_MAX_ATOMS} atoms; "
            "use sinkhorn for larger problems"
        )
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([mu.weights, nu.weights])
    res = linprog(C.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    mass = np.clip(res.x.reshape(n, m), 0.0, None)
    mass /= mass.sum()
    return Coupling(mass), float((mass * C).sum())


def _use_log_domain(C: np.ndarray, cfg: OtConfig) -> bool:
    if cfg.log_domain is not None:
        return cfg.log_domain
    return cfg.rho < LOG_DOMAIN_FACTOR * float(np.median(C))


def _gibbs_dual(f, g, a, b, C, rho):
    return float(f @ a + g @ b) - rho * float(np.exp((f[:, None] + g[None, :] - C) / rho).sum()) + rho


def _scaling_iterations(a, b, C, cfg):
    rho = cfg.rho
    with np.errstate(over="raise", under="ignore", divide="raise", invalid="raise"):
        try:
            K = np.exp(-C / rho)
            if np.any(K.sum(axis=1) == 0) or np.any(K.sum(axis=0) == 0):
                raise FloatingPointError("kernel underflow")
            s = np.ones_like(b)
            trace = []
            it, resid = 0, np.inf
            while it < cfg.max_iters:
                r = a / (K @ s)
                s = b / (K.T @ r)
                it += 1
                mass = r[:, None] * K * s[None, :]
                resid = float(np.abs(mass.sum(axis=1) - a).sum() + np.abs(mass.sum(axis=0) - b).sum())
                if cfg.debug:
                    trace.append(_gibbs_dual(rho * np.log(r), rho * np.log(s), a, b, C, rho))
                if not np.all(np.isfinite(mass)):
                    raise FloatingPointError("non-finite scaling")
                if resid <= cfg.tol:
                    break
            f = rho * np.log(r)
            g = rho * np.log(s)
        except FloatingPointError as exc:
            raise FloatingPointError(
                f"Sinkhorn scaling overflowed at rho={rho} ({exc}); use log_domain=True"
            ) from None
    return f, g, it, resid, trace


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    top = x.max(axis=axis, keepdims=True)
    return (top + np.log(np.exp(x - top).sum(axis=axis, keepdims=True))).squeeze(axis)


def _log_iterations(a, b, C, cfg, f=None, g=None):
    rho = cfg.rho
    log_a, log_b = np.log(a), np.log(b)
    if g is None:
        g = np.zeros_like(b)
    trace = []
    it, resid = 0, np.inf
    while it < cfg.max_iters:
        f = rho * (log_a - _lse((g[None, :] - C) / rho, axis=1))
        g = rho * (log_b - _lse((f[:, None] - C) / rho, axis=0))
        it += 1
        mass = np.exp((f[:, None] + g[None, :] - C) / rho)
        resid = float(np.abs(mass.sum(axis=1) - a).sum() + np.abs(mass.sum(axis=0) - b).sum())
        if cfg.debug:
            trace.append(_gibbs_dual(f, g, a, b, C, rho))
        if resid <= cfg.tol:
            break
    return f, g, it, resid, trace


def sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure, C, cfg: OtConfig) -> SinkhornResult:
    """Entropic transport plan and dual potentials by alternating marginal scaling.

    Iterates until the L1 marginal residual drops to ``cfg.tol`` or
    ``cfg.max_iters`` is reached. Log-domain updates are used when requested or
    when rho is small relative to the median cost.
    """
    C = validate_cost_matrix(C)
    a, b = mu.weights, nu.weights
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost shape {C.shape} does not match ({a.size}, {b.size})")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("sinkhorn needs strictly positive weights; floor or drop empty atoms")
    use_log = _use_log_domain(C, cfg)
    if use_log:
        f, g, it, resid, trace = _log_iterations(a, b, C, cfg)
    else:
        f, g, it, resid, trace = _scaling_iterations(a, b, C, cfg)
    if cfg.debug:
        steps = np.diff(trace)
        if np.any(steps < -1e-12 * (1.0 + np.abs(np.asarray(trace[1:])))):
            raise AssertionError("Sinkhorn dual value decreased between iterations")
    rho = cfg.rho
    mass = np.exp((f[:, None] + g[None, :] - C) / rho)
    # Column scaling was applied last: fix the rounding drift in total mass.
    mass /= mass.sum()
    converged = resid <= cfg.tol
    if not converged:
        log.warning("sinkhorn stopped after %d iterations with residual %.3e", it, resid)
    if cfg.convention is Convention.KL_PRODUCT:
        u, v = f - rho * np.log(a), g - rho * np.log(b)
    else:
        u, v = f, g
    return SinkhornResult(
        coupling=Coupling(mass),
        dual_u=u,
        dual_v=v,
        primal_value=entropic_value(mass, C, rho, cfg.convention),
        iterations=it,
        converged=converged,
        rho=rho,
        convention=cfg.convention,
        log_domain=use_log,
        residual=resid,
        trace=trace,
    )


def dual_objective(u, v, mu: DiscreteMeasure, nu: DiscreteMeasure, C, rho: float,
                   convention: Convention | str = Convention.KL_PRODUCT) -> float:
    """Dual transport objective <u, mu> + <v, nu> - rho * B(u, v) + rho.

    ``B`` is the plain exponential sum for ``ENTROPY_H`` potentials and the
    ``mu x nu``-weighted sum for ``KL_PRODUCT`` potentials. The ``+ rho`` term
    is the unit-mass offset that makes the maximum equal ``entropic_value``.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    expo = (u[:, None] + v[None, :] - C) / rho
    if Convention(convention) is Convention.KL_PRODUCT:
        expo = expo + np.log(mu.weights)[:, None] + np.log(nu.weights)[None, :]
    b_val = float(np.exp(logsumexp(expo)))
    return float(u @ mu.weights + v @ nu.weights) - rho * b_val + rho


def grad_wrt_left_marginal(result: SinkhornResult) -> np.ndarray:
    """Gradient of the regularised cost in the left weights, gauge-fixed to sum zero."""
    if not result.converged:
        raise ValueError("gradient requested from a non-converged Sinkhorn result")
    u = np.asarray(result.dual_u, dtype=float)
    return u - u.mean()
