"""Two-view swapped-prediction training against frozen prototypes.

Each view has its own two-layer perceptron backbone (linear, tanh,
linear projection, final L2 normalization); the projection layer is
shared across views except in single-view training.  A step encodes two
augmentations of each view, computes transport-plan targets for every
branch, and minimizes the swapped cross-entropy between one
augmentation's targets and the other augmentation's softmax prototype
scores, summed over both views.  Targets are treated as constants: no
gradient flows through the assignment solver.

Training modes
    sview  independent backbones, heads and prototypes per view,
           plain assignments
    avg    backbone outputs averaged into one shared-head branch,
           plain assignments
    sep    shared head and prototypes, per-view plain assignments
    goca   as sep, but each view's assignment is guided by the other
           view's plain assignment on the same batch

Solver plans have rows summing to 1/M; they are multiplied by M before
entering the cross-entropy so each target row is a probability row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .guided_ot import cross_guided_assign
from .ot_core import Marginals, SolverConfig, cost_from_features, sinkhorn
from .prototypes import ProtoOptConfig, optimize_prototypes

__all__ = [
    "MODES",
    "TrainConfig",
    "AugmentedBatch",
    "StepResult",
    "TrainResult",
    "init_params",
    "encode",
    "encode_avg",
    "prototype_scores",
    "swapped_loss",
    "goca_step",
    "baseline_step",
    "train",
    "extract_features",
]

logger = logging.getLogger(__name__)

MODES = ("sview", "avg", "sep", "goca")

ParamDict = dict[str, np.ndarray]


def _training_solver() -> SolverConfig:
    # training tolerates capped, loosely converged assignment solves; the
    # strict library defaults are for standalone solving
    return SolverConfig(tolerance=1e-6, max_iters=2000)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "goca"
    epochs: int = 15
    batch_size: int = 100
    temperature: float = 0.1
    learning_rate: float = 0.1
    hidden_dim: int = 32
    feature_dim: int = 16
    num_prototypes: int = 64
    aug_noise: float = 0.2
    aug_dropout: float = 0.1
    seed: int = 0
    solver: SolverConfig = field(default_factory=_training_solver)
    proto: ProtoOptConfig = field(default_factory=ProtoOptConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.num_prototypes < 2:
            raise ValueError("need at least 2 prototypes")
        if not 0.0 <= self.aug_dropout < 1.0:
            raise ValueError("aug_dropout must lie in [0, 1)")


@dataclass
class AugmentedBatch:
    """Two augmentations (slots t and s) of each view's raw inputs."""

    a_t: np.ndarray
    a_s: np.ndarray
    b_t: np.ndarray
    b_s: np.ndarray


@dataclass
class StepResult:
    loss: float
    grads: ParamDict
    targets: dict[str, np.ndarray]
    solver_converged: bool | None


@dataclass
class TrainResult:
    mode: str
    params: ParamDict
    prototypes: np.ndarray | tuple[np.ndarray, np.ndarray]
    trace: list[float]


def _linear_init(rng: np.random.Generator, out_dim: int, in_dim: int):
    weight = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
    return weight, np.zeros(out_dim)


def init_params(
    mode: str,
    in_dim_a: int,
    in_dim_b: int,
    hidden_dim: int,
    feature_dim: int,
    rng: np.random.Generator,
) -> ParamDict:
    """Seeded encoder parameters; shared-head modes share one projection."""
    params: ParamDict = {}
    params["a.w1"], params["a.b1"] = _linear_init(rng, hidden_dim, in_dim_a)
    params["b.w1"], params["b.b1"] = _linear_init(rng, hidden_dim, in_dim_b)
    if mode == "sview":
        params["a.w2"], params["a.b2"] = _linear_init(rng, feature_dim, hidden_dim)
        params["b.w2"], params["b.b2"] = _linear_init(rng, feature_dim, hidden_dim)
    else:
        params["shared.w2"], params["shared.b2"] = _linear_init(rng, feature_dim, hidden_dim)
    return params


def _head_key(params: ParamDict, view: str) -> str:
    return view if f"{view}.w2" in params else "shared"


def encode(params: ParamDict, view: str, inputs: np.ndarray):
    """Forward one view: linear, tanh, projection, row L2 normalization."""
    x = np.asarray(inputs, dtype=float)
    head = _head_key(params, view)
    z1 = x @ params[f"{view}.w1"].T + params[f"{view}.b1"]
    hidden = np.tanh(z1)
    z2 = hidden @ params[f"{head}.w2"].T + params[f"{head}.b2"]
    norms = np.maximum(np.linalg.norm(z2, axis=1, keepdims=True), 1e-30)
    features = z2 / norms
    cache = {"x": x, "hidden": hidden, "features": features, "norms": norms,
             "view": view, "head": head}
    return features, cache


def encode_avg(params: ParamDict, inputs_a: np.ndarray, inputs_b: np.ndarray):
    """Average both backbones' hidden activations into one shared-head branch."""
    xa = np.asarray(inputs_a, dtype=float)
    xb = np.asarray(inputs_b, dtype=float)
    hidden_a = np.tanh(xa @ params["a.w1"].T + params["a.b1"])
    hidden_b = np.tanh(xb @ params["b.w1"].T + params["b.b1"])
    hidden = 0.5 * (hidden_a + hidden_b)
    z2 = hidden @ params["shared.w2"].T + params["shared.b2"]
    norms = np.maximum(np.linalg.norm(z2, axis=1, keepdims=True), 1e-30)
    features = z2 / norms
    cache = {"x_a": xa, "x_b": xb, "hidden_a": hidden_a, "hidden_b": hidden_b,
             "hidden": hidden, "features": features, "norms": norms}
    return features, cache


def _backprop(cache: dict, d_features: np.ndarray, params: ParamDict, grads: ParamDict) -> None:
    features = cache["features"]
    inner = np.sum(d_features * features, axis=1, keepdims=True)
    dz2 = (d_features - features * inner) / cache["norms"]
    head, view = cache["head"], cache["view"]
    hidden = cache["hidden"]
    grads[f"{head}.w2"] += dz2.T @ hidden
    grads[f"{head}.b2"] += dz2.sum(axis=0)
    dz1 = (1.0 - hidden * hidden) * (dz2 @ params[f"{head}.w2"])
    grads[f"{view}.w1"] += dz1.T @ cache["x"]
    grads[f"{view}.b1"] += dz1.sum(axis=0)


def _backprop_avg(cache: dict, d_features: np.ndarray, params: ParamDict, grads: ParamDict) -> None:
    features = cache["features"]
    inner = np.sum(d_features * features, axis=1, keepdims=True)
    dz2 = (d_features - features * inner) / cache["norms"]
    grads["shared.w2"] += dz2.T @ cache["hidden"]
    grads["shared.b2"] += dz2.sum(axis=0)
    d_hidden = 0.5 * (dz2 @ params["shared.w2"])
    for view, hidden, x in (("a", cache["hidden_a"], cache["x_a"]),
                            ("b", cache["hidden_b"], cache["x_b"])):
        dz1 = (1.0 - hidden * hidden) * d_hidden
        grads[f"{view}.w1"] += dz1.T @ x
        grads[f"{view}.b1"] += dz1.sum(axis=0)


def prototype_scores(features: np.ndarray, prototypes: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row softmax of feature-prototype similarities; rows sum to 1."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    feats = np.asarray(features, dtype=float)
    protos = np.asarray(prototypes, dtype=float)
    if feats.shape[1] != protos.shape[1]:
        raise ValueError("feature and prototype dimensions differ")
    scores = (feats @ protos.T) / temperature
    scores -= scores.max(axis=1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=1, keepdims=True)
    return scores


def swapped_loss(
    targets_t: np.ndarray,
    scores_s: np.ndarray,
    targets_s: np.ndarray,
    scores_t: np.ndarray,
) -> float:
    """Per-sample mean of the two swapped cross-entropies.

    Target rows must be probability rows (plans rescaled by M); in
    return the loss is bounded below by twice the mean target-row
    entropy, attained when scores equal targets.
    """
    t_t = np.asarray(targets_t, dtype=float)
    t_s = np.asarray(targets_s, dtype=float)
    g_s = np.asarray(scores_s, dtype=float)
    g_t = np.asarray(scores_t, dtype=float)
    if not (t_t.shape == g_s.shape == t_s.shape == g_t.shape):
        raise ValueError("all four matrices must have the same shape")
    # loose bound: catches unscaled plans (rows summing to 1/M) while
    # tolerating solver residuals scaled up by M
    for name, t in (("targets_t", t_t), ("targets_s", t_s)):
        if np.max(np.abs(t.sum(axis=1) - 1.0)) > 0.1:
            raise ValueError(f"{name} rows must sum to 1 (rescale plans by M)")
    m = t_t.shape[0]
    total = -np.sum(t_t * np.log(np.maximum(g_s, 1e-300)))
    total -= np.sum(t_s * np.log(np.maximum(g_t, 1e-300)))
    return float(total / m)


def _plain_targets(features: np.ndarray, prototypes: np.ndarray, solver: SolverConfig):
    m = features.shape[0]
    marginals = Marginals.uniform(m, np.asarray(prototypes).shape[0])
    result = sinkhorn(cost_from_features(features, prototypes), marginals, solver)
    return m * result.plan, result.converged


def _branch_loss(
    slot_features: dict[str, np.ndarray],
    slot_caches: dict[str, dict],
    targets: dict[str, np.ndarray],
    keys: tuple[str, str],
    prototypes: np.ndarray,
    cfg: TrainConfig,
    params: ParamDict,
    grads: ParamDict,
    avg: bool = False,
) -> float:
    key_t, key_s = keys
    f_t, f_s = slot_features[key_t], slot_features[key_s]
    g_t = prototype_scores(f_t, prototypes, cfg.temperature)
    g_s = prototype_scores(f_s, prototypes, cfg.temperature)
    loss = swapped_loss(targets[key_t], g_s, targets[key_s], g_t)
    m = f_t.shape[0]
    scale = 1.0 / (m * cfg.temperature)
    d_f_s = scale * (g_s - targets[key_t]) @ prototypes
    d_f_t = scale * (g_t - targets[key_s]) @ prototypes
    backprop = _backprop_avg if avg else _backprop
    backprop(slot_caches[key_s], d_f_s, params, grads)
    backprop(slot_caches[key_t], d_f_t, params, grads)
    return loss


def _zero_grads(params: ParamDict) -> ParamDict:
    return {key: np.zeros_like(value) for key, value in params.items()}


def goca_step(
    batch: AugmentedBatch,
    params: ParamDict,
    prototypes: np.ndarray,
    cfg: TrainConfig,
    targets: dict[str, np.ndarray] | None = None,
) -> StepResult:
    """One guided two-view step: encode, assign with cross-view priors, backprop.

    Pass precomputed ``targets`` to hold the assignments fixed, e.g. for
    finite-difference gradient checks.
    """
    features, caches = {}, {}
    for key, x in (("a.t", batch.a_t), ("a.s", batch.a_s), ("b.t", batch.b_t), ("b.s", batch.b_s)):
        view = key.split(".")[0]
        features[key], caches[key] = encode(params, view, x)
    converged: bool | None = None
    if targets is None:
        converged = True
        targets = {}
        for slot in ("t", "s"):
            res_a, res_b = cross_guided_assign(
                features[f"a.{slot}"], features[f"b.{slot}"], prototypes, cfg=cfg.solver
            )
            m = features[f"a.{slot}"].shape[0]
            targets[f"a.{slot}"] = m * res_a.plan
            targets[f"b.{slot}"] = m * res_b.plan
            if not (res_a.converged and res_b.converged):
                converged = False
        if not converged:
            logger.warning("guided assignment did not converge; using last iterate")
    grads = _zero_grads(params)
    loss = _branch_loss(features, caches, targets, ("a.t", "a.s"), prototypes, cfg, params, grads)
    loss += _branch_loss(features, caches, targets, ("b.t", "b.s"), prototypes, cfg, params, grads)
    return StepResult(loss, grads, targets, converged)


def baseline_step(
    batch: AugmentedBatch,
    params: ParamDict,
    prototypes,
    cfg: TrainConfig,
    targets: dict[str, np.ndarray] | None = None,
) -> StepResult:
    """One sview, avg or sep step; see module docstring for the modes."""
    if cfg.mode == "sview":
        if not isinstance(prototypes, (tuple, list)) or len(prototypes) != 2:
            raise ValueError("sview mode needs one prototype set per view")
        protos = {"a": np.asarray(prototypes[0]), "b": np.asarray(prototypes[1])}
    elif cfg.mode in ("avg", "sep"):
        protos = {"a": np.asarray(prototypes), "b": np.asarray(prototypes)}
    else:
        raise ValueError(f"baseline_step does not handle mode {cfg.mode!r}")

    features, caches = {}, {}
    if cfg.mode == "avg":
        features["t"], caches["t"] = encode_avg(params, batch.a_t, batch.b_t)
        features["s"], caches["s"] = encode_avg(params, batch.a_s, batch.b_s)
        branch_keys = [(("t", "s"), protos["a"], True)]
    else:
        for key, x in (("a.t", batch.a_t), ("a.s", batch.a_s),
                       ("b.t", batch.b_t), ("b.s", batch.b_s)):
            view = key.split(".")[0]
            features[key], caches[key] = encode(params, view, x)
        branch_keys = [(("a.t", "a.s"), protos["a"], False), (("b.t", "b.s"), protos["b"], False)]

    converged: bool | None = None
    if targets is None:
        converged = True
        targets = {}
        for key in features:
            view = key.split(".")[0] if "." in key else "a"
            targets[key], ok = _plain_targets(features[key], protos[view], cfg.solver)
            if not ok:
                converged = False
        if not converged:
            logger.warning("plain assignment did not converge; using last iterate")
    grads = _zero_grads(params)
    loss = 0.0
    for keys, branch_protos, avg in branch_keys:
        loss += _branch_loss(features, caches, targets, keys, branch_protos, cfg, params, grads, avg=avg)
    return StepResult(loss, grads, targets, converged)


def _augment(x: np.ndarray, rng: np.random.Generator, cfg: TrainConfig) -> np.ndarray:
    out = x + cfg.aug_noise * rng.standard_normal(x.shape)
    mask = rng.random(x.shape) >= cfg.aug_dropout
    return out * mask


def _make_prototypes(cfg: TrainConfig):
    if cfg.mode == "sview":
        proto_b = replace(cfg.proto, seed=cfg.proto.seed + 1)
        return (
            optimize_prototypes(cfg.num_prototypes, cfg.feature_dim, cfg.proto),
            optimize_prototypes(cfg.num_prototypes, cfg.feature_dim, proto_b),
        )
    return optimize_prototypes(cfg.num_prototypes, cfg.feature_dim, cfg.proto)


def train(dataset, cfg: TrainConfig, prototypes=None) -> TrainResult:
    """Optimize prototypes once, then run shuffled minibatch SGD.

    ``dataset`` must expose ``view_a`` and ``view_b`` row-aligned
    arrays.  Only full batches are used.  Deterministic given the seed.
    """
    view_a = np.asarray(dataset.view_a, dtype=float)
    view_b = np.asarray(dataset.view_b, dtype=float)
    if view_a.shape[0] != view_b.shape[0]:
        raise ValueError("views must be row-aligned")
    num_samples = view_a.shape[0]
    if num_samples < cfg.batch_size:
        raise ValueError("batch_size exceeds the dataset size")

    if prototypes is None:
        prototypes = _make_prototypes(cfg)
    for proto in prototypes if isinstance(prototypes, tuple) else (prototypes,):
        if np.asarray(proto).shape[1] != cfg.feature_dim:
            raise ValueError("prototype dimension does not match feature_dim")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(
        cfg.mode, view_a.shape[1], view_b.shape[1], cfg.hidden_dim, cfg.feature_dim, rng
    )
    trace: list[float] = []
    num_batches = num_samples // cfg.batch_size
    for _ in range(cfg.epochs):
        order = rng.permutation(num_samples)
        for b in range(num_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch = AugmentedBatch(
                a_t=_augment(view_a[idx], rng, cfg),
                a_s=_augment(view_a[idx], rng, cfg),
                b_t=_augment(view_b[idx], rng, cfg),
                b_s=_augment(view_b[idx], rng, cfg),
            )
            if cfg.mode == "goca":
                result = goca_step(batch, params, prototypes, cfg)
            else:
                result = baseline_step(batch, params, prototypes, cfg)
            for key in params:
                params[key] -= cfg.learning_rate * result.grads[key]
            trace.append(result.loss)
    return TrainResult(cfg.mode, params, prototypes, trace)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    return x / norms


def extract_features(params: ParamDict, mode: str, dataset) -> dict[str, np.ndarray]:
    """Unaugmented test features per condition: per view plus fused average.

    The fused features are the L2-renormalized mean of the two views'
    unit features; avg mode has the single fused branch only.
    """
    view_a = np.asarray(dataset.view_a, dtype=float)
    view_b = np.asarray(dataset.view_b, dtype=float)
    if mode == "avg":
        fused, _ = encode_avg(params, view_a, view_b)
        return {"fused": fused}
    feats_a, _ = encode(params, "a", view_a)
    feats_b, _ = encode(params, "b", view_b)
    fused = _normalize_rows(0.5 * (feats_a + feats_b))
    return {"a": feats_a, "b": feats_b, "fused": fused}
