"""Guided online cluster assignment.

Entropic optimal assignment between feature batches and unit
prototypes, a prior-guided variant that lets two views steer each
other's assignments, hyperspherical prototype placement, a two-view
swapped-prediction training loop with ablation baselines, and the
clustering/retrieval metrics used to score it — all exercised on a
synthetic two-view benchmark at desk scale.
"""

from .guided_ot import (
    clamp_prior,
    cross_guided_assign,
    guided_kernel,
    guided_objective,
    guided_sinkhorn,
)
from .ot_core import (
    Marginals,
    SinkhornNumericError,
    SinkhornResult,
    SolverConfig,
    cost_from_features,
    entropy,
    marginal_residual,
    sinkhorn,
    transport_objective,
)
from .prototypes import (
    ProtoOptConfig,
    max_pairwise_cosine,
    optimize_prototypes,
    project_to_sphere,
    prototype_loss,
    prototype_loss_grad,
)
from .ssl_engine import (
    AugmentedBatch,
    TrainConfig,
    TrainResult,
    baseline_step,
    encode,
    encode_avg,
    extract_features,
    goca_step,
    init_params,
    prototype_scores,
    swapped_loss,
    train,
)
from .synth_data import SynthConfig, SynthDataset, generate

__version__ = "0.1.0"

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
    "clamp_prior",
    "guided_kernel",
    "guided_objective",
    "guided_sinkhorn",
    "cross_guided_assign",
    "ProtoOptConfig",
    "prototype_loss",
    "prototype_loss_grad",
    "project_to_sphere",
    "optimize_prototypes",
    "max_pairwise_cosine",
    "TrainConfig",
    "TrainResult",
    "AugmentedBatch",
    "init_params",
    "encode",
    "encode_avg",
    "prototype_scores",
    "swapped_loss",
    "goca_step",
    "baseline_step",
    "train",
    "extract_features",
    "SynthConfig",
    "SynthDataset",
    "generate",
    "__version__",
]
