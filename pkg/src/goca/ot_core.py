"""Entropic optimal assignment over the transport polytope.

The assignment between a batch of M unit feature vectors and N unit
prototypes is the matrix D in U(psi, omega) minimizing

    <D, C> - lambda1 * h(D),

where U(psi, omega) is the set of nonnegative M x N matrices with row
sums psi and column sums omega, C is the feature-to-prototype cost and
h(D) = -sum_ij d_ij log d_ij.  The minimizer has the scaling form
D = diag(u) K diag(v) with kernel K = exp(-C / lambda1); the scaling
vectors are found by alternating row/column (Sinkhorn) updates.

Iteration runs in the log domain by default so that regularization as
small as lambda1 ~ 0.01 does not underflow the kernel.  The plain
multiplicative variant is kept for cross-checking and raises
SinkhornNumericError when it over- or underflows, signalling the caller
to retry with ``log_domain=True``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Marginals",
    "SolverConfig",
    "SinkhornResult",
    "SinkhornNumericError",
    "cost_from_features",
    "entropy",
    "transport_objective",
    "marginal_residual",
    "sinkhorn",
]

# Tolerance for the unit-norm precondition on feature/prototype rows.
_UNIT_NORM_ATOL = 1e-6


class SinkhornNumericError(ArithmeticError):
    """Plain-domain scaling over- or underflowed; retry with log_domain=True."""


@dataclass(frozen=True)
class Marginals:
    """Prescribed row mass psi and column mass omega of the plan."""

    row: np.ndarray
    col: np.ndarray

    def __post_init__(self):
        row = np.asarray(self.row, dtype=float)
        col = np.asarray(self.col, dtype=float)
        object.__setattr__(self, "row", row)
        object.__setattr__(self, "col", col)
        if row.ndim != 1 or col.ndim != 1:
            raise ValueError("marginals must be vectors")
        if row.size < 1 or col.size < 1:
            raise ValueError("marginals must be non-empty")
        if np.any(row <= 0.0) or np.any(col <= 0.0):
            raise ValueError("marginal entries must be strictly positive")
        for name, vec in (("row", row), ("col", col)):
            if abs(float(vec.sum()) - 1.0) > 1e-12:
                raise ValueError(f"{name} marginal must sum to 1 within 1e-12")

    @classmethod
    def uniform(cls, num_rows: int, num_cols: int) -> "Marginals":
        return cls(
            np.full(num_rows, 1.0 / num_rows),
            np.full(num_cols, 1.0 / num_cols),
        )


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs: regularization, iteration cap and stopping rule.

    ``tolerance`` bounds the L-infinity marginal residual of the
    returned plan; ``prior_floor`` clamps prior entries before logs are
    taken in the guided variant.
    """

    lambda1: float = 0.02
    lambda2: float = 0.03
    max_iters: int = 10_000
    tolerance: float = 1e-8
    prior_floor: float = 1e-12
    log_domain: bool = True

    def __post_init__(self):
        if self.lambda1 <= 0.0:
            raise ValueError("lambda1 must be positive")
        if self.lambda2 < 0.0:
            raise ValueError("lambda2 must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")
        if self.prior_floor <= 0.0:
            raise ValueError("prior_floor must be positive")


@dataclass(frozen=True)
class SinkhornResult:
    """Transport plan plus convergence diagnostics.

    ``converged`` is False when the iteration cap was reached first; the
    plan is then the last iterate, which training code may still use.
    """

    plan: np.ndarray
    converged: bool
    iterations: int
    row_residual: float
    col_residual: float


def cost_from_features(features: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Negative cosine similarity between feature rows and prototype rows.

    Both inputs must have unit-norm rows of the same dimension; entries
    of the result lie in [-1, 1] up to rounding.
    """
    feats = np.asarray(features, dtype=float)
    protos = np.asarray(prototypes, dtype=float)
    if feats.ndim != 2 or protos.ndim != 2:
        raise ValueError("features and prototypes must be 2-D")
    if feats.shape[1] != protos.shape[1]:
        raise ValueError(
            f"dimension mismatch: features are {feats.shape[1]}-D, "
            f"prototypes are {protos.shape[1]}-D"
        )
    for name, arr in (("feature", feats), ("prototype", protos)):
        norms = np.linalg.norm(arr, axis=1)
        if np.max(np.abs(norms - 1.0)) > _UNIT_NORM_ATOL:
            raise ValueError(f"{name} rows must be unit-norm")
    return -(feats @ protos.T)


def entropy(plan: np.ndarray) -> float:
    """h(D) = -sum d log d with 0 log 0 taken as 0."""
    d = np.asarray(plan, dtype=float)
    if np.any(d < 0.0):
        raise ValueError("entropy requires nonnegative entries")
    pos = d[d > 0.0]
    return float(-np.sum(pos * np.log(pos)))


def transport_objective(plan: np.ndarray, cost: np.ndarray, lambda1: float) -> float:
    """<D, C> - lambda1 * h(D)."""
    d = np.asarray(plan, dtype=float)
    c = np.asarray(cost, dtype=float)
    if d.shape != c.shape:
        raise ValueError(f"shape mismatch: plan {d.shape} vs cost {c.shape}")
    return float(np.sum(d * c)) - lambda1 * entropy(d)


def marginal_residual(plan: np.ndarray, marginals: Marginals) -> tuple[float, float]:
    """(max |row sums - psi|, max |col sums - omega|)."""
    d = np.asarray(plan, dtype=float)
    if d.shape != (marginals.row.size, marginals.col.size):
        raise ValueError("plan shape does not match marginals")
    row_res = float(np.max(np.abs(d.sum(axis=1) - marginals.row)))
    col_res = float(np.max(np.abs(d.sum(axis=0) - marginals.col)))
    return row_res, col_res


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)


# Regularization annealing: the scaling loop warm-starts from stages whose
# regularization is halved down to the target, starting where the kernel
# exponent spread range(cost)/scale is at most _START_SPREAD.  Cold-started
# Sinkhorn enters a 1/iteration residual regime on near-degenerate instances
# when the regularization is small against the cost gaps; carrying rescaled
# potentials across stages keeps every stage in its linear-rate basin.
_START_SPREAD = 4.0
_STAGE_ITER_CAP = 500


def _anneal_schedule(scale: float, cost_range: float) -> list[float]:
    stages = [scale]
    s = scale
    while s < cost_range / _START_SPREAD:
        s *= 2.0
        stages.append(s)
    stages.reverse()
    return stages


def _log_sweeps(
    log_kernel: np.ndarray,
    marginals: Marginals,
    g: np.ndarray,
    tolerance: float,
    max_iters: int,
):
    log_row = np.log(marginals.row)
    log_col = np.log(marginals.col)
    f = np.zeros(log_row.size)
    plan = np.empty_like(log_kernel)
    row_res = col_res = np.inf
    converged = False
    iteration = 0
    for iteration in range(1, max_iters + 1):
        f = log_row - _logsumexp(log_kernel + g[None, :], axis=1)
        g = log_col - _logsumexp(log_kernel + f[:, None], axis=0)
        plan = np.exp(log_kernel + f[:, None] + g[None, :])
        row_res = float(np.max(np.abs(plan.sum(axis=1) - marginals.row)))
        col_res = float(np.max(np.abs(plan.sum(axis=0) - marginals.col)))
        if max(row_res, col_res) <= tolerance:
            converged = True
            break
    return f, g, plan, iteration, row_res, col_res, converged


def _solve_log(
    effective_cost: np.ndarray,
    scale: float,
    marginals: Marginals,
    tolerance: float,
    max_iters: int,
    v_init: np.ndarray | None,
) -> SinkhornResult:
    g = np.zeros(marginals.col.size) if v_init is None else np.log(v_init)
    cost_range = float(np.max(effective_cost) - np.min(effective_cost))
    stages = _anneal_schedule(scale, cost_range)
    for stage_scale in stages[:-1]:
        f, g, _, _, _, _, _ = _log_sweeps(
            -effective_cost / stage_scale,
            marginals,
            g,
            max(tolerance, 1e-9),
            _STAGE_ITER_CAP,
        )
        # keep the Kantorovich potentials (scale * f) continuous across stages
        g = g * 2.0
    _, _, plan, iteration, row_res, col_res, converged = _log_sweeps(
        -effective_cost / scale, marginals, g, tolerance, max_iters
    )
    return SinkhornResult(plan, converged, iteration, row_res, col_res)


def _scale_plain_kernel(
    kernel: np.ndarray,
    marginals: Marginals,
    tolerance: float,
    max_iters: int,
    v_init: np.ndarray | None,
) -> SinkhornResult:
    if not np.all(np.isfinite(kernel)):
        raise SinkhornNumericError(
            "kernel overflow in plain-domain scaling; retry with log_domain=True"
        )
    u = np.ones(marginals.row.size)
    v = np.ones(marginals.col.size) if v_init is None else v_init.copy()
    plan = kernel
    row_res = col_res = np.inf
    for iteration in range(1, max_iters + 1):
        kv = kernel @ v
        if np.any(kv <= 0.0) or not np.all(np.isfinite(kv)):
            raise SinkhornNumericError(
                "underflow in plain-domain scaling; retry with log_domain=True"
            )
        u = marginals.row / kv
        ktu = kernel.T @ u
        if np.any(ktu <= 0.0) or not np.all(np.isfinite(ktu)):
            raise SinkhornNumericError(
                "underflow in plain-domain scaling; retry with log_domain=True"
            )
        v = marginals.col / ktu
        plan = u[:, None] * kernel * v[None, :]
        if not np.all(np.isfinite(plan)):
            raise SinkhornNumericError(
                "overflow in plain-domain scaling; retry with log_domain=True"
            )
        row_res = float(np.max(np.abs(plan.sum(axis=1) - marginals.row)))
        col_res = float(np.max(np.abs(plan.sum(axis=0) - marginals.col)))
        if max(row_res, col_res) <= tolerance:
            return SinkhornResult(plan, True, iteration, row_res, col_res)
    return SinkhornResult(plan, False, max_iters, row_res, col_res)


def _validate_problem(
    cost: np.ndarray, marginals: Marginals | None, v_init: np.ndarray | None
) -> tuple[np.ndarray, Marginals, np.ndarray | None]:
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix entries must be finite")
    m, n = c.shape
    if marginals is None:
        marginals = Marginals.uniform(m, n)
    if marginals.row.size != m or marginals.col.size != n:
        raise ValueError("marginals do not match the cost matrix shape")
    if v_init is not None:
        v_init = np.asarray(v_init, dtype=float)
        if v_init.shape != (n,) or np.any(v_init <= 0.0):
            raise ValueError("v_init must be a positive length-N vector")
    return c, marginals, v_init


def _forced_plan(marginals: Marginals) -> SinkhornResult:
    # With a single row or column the constraints pin the plan exactly.
    plan = np.outer(marginals.row, marginals.col)
    row_res, col_res = marginal_residual(plan, marginals)
    return SinkhornResult(plan, True, 0, row_res, col_res)


def sinkhorn(
    cost: np.ndarray,
    marginals: Marginals | None = None,
    cfg: SolverConfig | None = None,
    *,
    v_init: np.ndarray | None = None,
) -> SinkhornResult:
    """Minimize <D, C> - lambda1 * h(D) over U(psi, omega).

    Defaults to uniform marginals.  ``v_init`` optionally seeds the
    column scaling vector; any positive choice converges to the same
    plan, which the tests exercise.
    """
    c, marginals, v_init = _validate_problem(cost, marginals, v_init)
    if cfg is None:
        cfg = SolverConfig()
    if c.shape[0] == 1 or c.shape[1] == 1:
        return _forced_plan(marginals)
    if cfg.log_domain:
        return _solve_log(c, cfg.lambda1, marginals, cfg.tolerance, cfg.max_iters, v_init)
    with np.errstate(over="ignore"):  # overflow is detected and reported below
        kernel = np.exp(-c / cfg.lambda1)
    return _scale_plain_kernel(kernel, marginals, cfg.tolerance, cfg.max_iters, v_init)
