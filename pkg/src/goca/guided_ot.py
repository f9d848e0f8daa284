"""Prior-guided entropic assignment.

Adds a KL pull toward a prior plan to the entropic assignment problem:

    min_{D in U}  <D, C> - lambda1 * h(D) + lambda2 * KL(D | prior).

Grouping the entropy terms shows this is a plain entropic problem with
shifted cost C - lambda2 * log(prior) and regularization
lambda1 + lambda2, so the minimizer keeps the scaling form
D = diag(u) K diag(v) with the elementwise-positive guided kernel

    K = exp((-C + lambda2 * log prior) / (lambda1 + lambda2))
      = prior^(lambda2 / (lambda1 + lambda2)) * exp(-C / (lambda1 + lambda2)),

and the same alternating row/column scaling applies.  Prior entries are
floored at ``prior_floor`` before logs are taken; the solution is
invariant to the prior's total mass, so priors need not be normalized.

The cross-view wiring solves each view plainly first, then re-solves it
guided by the *other* view's plain plan, against one shared prototype
set.
"""

from __future__ import annotations

import numpy as np

from .ot_core import (
    Marginals,
    SinkhornResult,
    SolverConfig,
    _forced_plan,
    _scale_plain_kernel,
    _solve_log,
    _validate_problem,
    cost_from_features,
    entropy,
    sinkhorn,
)

__all__ = [
    "clamp_prior",
    "guided_kernel",
    "guided_objective",
    "guided_sinkhorn",
    "cross_guided_assign",
]


def clamp_prior(prior: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Floor prior entries so logs stay finite."""
    p = np.asarray(prior, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("prior entries must be finite")
    if np.any(p < 0.0):
        raise ValueError("prior entries must be nonnegative")
    return np.maximum(p, floor)


def guided_kernel(
    cost: np.ndarray,
    prior: np.ndarray,
    lambda1: float,
    lambda2: float,
    prior_floor: float = 1e-12,
) -> np.ndarray:
    """K = exp((-C + lambda2 * log prior) / (lambda1 + lambda2)), entries > 0."""
    if lambda1 <= 0.0:
        raise ValueError("lambda1 must be positive")
    if lambda2 < 0.0:
        raise ValueError("lambda2 must be nonnegative")
    c = np.asarray(cost, dtype=float)
    p = clamp_prior(prior, prior_floor)
    if c.shape != p.shape:
        raise ValueError(f"shape mismatch: cost {c.shape} vs prior {p.shape}")
    return np.exp((-c + lambda2 * np.log(p)) / (lambda1 + lambda2))


def guided_objective(
    plan: np.ndarray,
    cost: np.ndarray,
    prior: np.ndarray,
    lambda1: float,
    lambda2: float,
    prior_floor: float = 1e-12,
) -> float:
    """<D, C> - lambda1 * h(D) + lambda2 * KL(D | prior)."""
    d = np.asarray(plan, dtype=float)
    c = np.asarray(cost, dtype=float)
    p = clamp_prior(prior, prior_floor)
    if d.shape != c.shape or d.shape != p.shape:
        raise ValueError("plan, cost and prior shapes must match")
    pos = d > 0.0
    kl = float(np.sum(d[pos] * np.log(d[pos] / p[pos])))
    return float(np.sum(d * c)) - lambda1 * entropy(d) + lambda2 * kl


def guided_sinkhorn(
    cost: np.ndarray,
    prior: np.ndarray,
    marginals: Marginals | None = None,
    cfg: SolverConfig | None = None,
    *,
    v_init: np.ndarray | None = None,
) -> SinkhornResult:
    """Minimize the guided objective over U by scaling the guided kernel."""
    c, marginals, v_init = _validate_problem(cost, marginals, v_init)
    if cfg is None:
        cfg = SolverConfig()
    p = clamp_prior(prior, cfg.prior_floor)
    if p.shape != c.shape:
        raise ValueError(f"shape mismatch: cost {c.shape} vs prior {p.shape}")
    if c.shape[0] == 1 or c.shape[1] == 1:
        return _forced_plan(marginals)
    scale = cfg.lambda1 + cfg.lambda2
    effective_cost = c - cfg.lambda2 * np.log(p)
    if cfg.log_domain:
        return _solve_log(effective_cost, scale, marginals, cfg.tolerance, cfg.max_iters, v_init)
    with np.errstate(over="ignore"):  # overflow is detected and reported below
        kernel = np.exp(-effective_cost / scale)
    return _scale_plain_kernel(kernel, marginals, cfg.tolerance, cfg.max_iters, v_init)


def cross_guided_assign(
    feats_a: np.ndarray,
    feats_b: np.ndarray,
    prototypes: np.ndarray,
    marginals: Marginals | None = None,
    cfg: SolverConfig | None = None,
) -> tuple[SinkhornResult, SinkhornResult]:
    """Assign two views against shared prototypes, each guided by the other.

    Per view, the plain plan of the *other* view on the same batch is the
    prior; priors are recomputed from scratch for every call.
    """
    fa = np.asarray(feats_a, dtype=float)
    fb = np.asarray(feats_b, dtype=float)
    if fa.shape[0] != fb.shape[0]:
        raise ValueError("both views must contain the same number of samples")
    if cfg is None:
        cfg = SolverConfig()
    cost_a = cost_from_features(fa, prototypes)
    cost_b = cost_from_features(fb, prototypes)
    if marginals is None:
        marginals = Marginals.uniform(fa.shape[0], np.asarray(prototypes).shape[0])
    plain_a = sinkhorn(cost_a, marginals, cfg)
    plain_b = sinkhorn(cost_b, marginals, cfg)
    guided_a = guided_sinkhorn(cost_a, plain_b.plan, marginals, cfg)
    guided_b = guided_sinkhorn(cost_b, plain_a.plan, marginals, cfg)
    return guided_a, guided_b
