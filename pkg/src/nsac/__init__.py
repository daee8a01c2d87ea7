"""Stochastic attention with closed-form Ornstein-Uhlenbeck logit dynamics.

The package is organised bottom up:

``autodiff``
    float64 tensors, a reverse mode tape, explicit random streams.
``ou``
    closed-form moments of the logit diffusion plus a simulation oracle.
``curation``
    square-root block partitioning and top-K key selection.
``gating``
    sparse wiring masks, sensory projections, the coefficient backbone.
``layer``
    the stochastic attention layer, Monte Carlo ensembling, readout heads.
``losses`` / ``optim``
    the two-term uncertainty objective and AdamW.
``metrics``
    MSE, Gaussian NLL, CRPS, regression ECE, distributional AUROC.
``datasets``
    the irregularly sampled spiral benchmark.
``checkpoint``
    content-hashed weight archives.
``runner`` / ``cli``
    train / eval / decompose / ablate harness.
"""

from .autodiff import Rng, Tensor, backward, finite_difference_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import SpiralSet, SplitSpec, generate_spirals, regime_masks, split_indices
from .errors import DomainError, GraphError, NsacError, NumericError, ValidationError
from .layer import (
    LogitMoments,
    MCEnsemble,
    NsacConfig,
    NsacLayer,
    NsacRegressor,
    PredictiveDistribution,
    UncertaintyDecomposition,
    attention_scores,
    decompose_uncertainty,
    logit_distribution,
    multihead_forward,
    stochastic_weights,
)
from .losses import LossBreakdown, OodParams, gaussian_nll, objective, train_step
from .metrics import EvalRecord, MetricsReport, evaluate
from .optim import AdamW
from .runner import RunConfig, SpiralTask, load_run_config

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "DomainError",
    "EvalRecord",
    "GraphError",
    "LogitMoments",
    "LossBreakdown",
    "MCEnsemble",
    "MetricsReport",
    "NsacConfig",
    "NsacError",
    "NsacLayer",
    "NsacRegressor",
    "NumericError",
    "OodParams",
    "PredictiveDistribution",
    "Rng",
    "RunConfig",
    "SpiralSet",
    "SpiralTask",
    "SplitSpec",
    "Tensor",
    "UncertaintyDecomposition",
    "ValidationError",
    "attention_scores",
    "backward",
    "decompose_uncertainty",
    "evaluate",
    "finite_difference_grad",
    "gaussian_nll",
    "generate_spirals",
    "load_checkpoint",
    "load_run_config",
    "logit_distribution",
    "multihead_forward",
    "objective",
    "regime_masks",
    "save_checkpoint",
    "split_indices",
    "stochastic_weights",
    "train_step",
    "__version__",
]
