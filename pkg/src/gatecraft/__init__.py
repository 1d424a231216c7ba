"""Structured pruning of heterogeneous conv+transformer networks.

Learnable stochastic gates decide which conv channels, attention heads, FFN
units and hidden dimensions survive; an adversarially trained multiplier
pair drives the expected sparsity, measured in parameters or in
multiply-accumulates, onto an exact target; extraction then materializes
the smaller architecture.
"""

from .arch import (
    ArchDescriptor,
    ConvLayerSpec,
    PosConvSpec,
    TransformerLayerSpec,
    heavy_frontend_toy_descriptor,
    toy_descriptor,
    wav2vec2_base_descriptor,
)
from .autodiff import Tensor, backward, forward_op
from .controller import LagrangeState, TargetSchedule, current_target, penalty
from .extract import ExtractedModel, PruneMask, architecture_report, binarize, extract
from .gates import GateGroup, HardConcreteParams, deterministic_gates, keep_probability, sample_gates
from .model import GatedModel, accuracy, cross_entropy
from .pipeline import PruneRunConfig, StageConfig, SyntheticTask, generate_batch, run_pipeline, run_stage
from .sparsity import (
    SparsityRegime,
    SparsityReport,
    exact_profile,
    expected_sparsity,
    mac_budget_from_sparsity,
)

__version__ = "0.1.0"

__all__ = [
    "ArchDescriptor",
    "ConvLayerSpec",
    "ExtractedModel",
    "GateGroup",
    "GatedModel",
    "HardConcreteParams",
    "LagrangeState",
    "PosConvSpec",
    "PruneMask",
    "PruneRunConfig",
    "SparsityRegime",
    "SparsityReport",
    "StageConfig",
    "SyntheticTask",
    "TargetSchedule",
    "Tensor",
    "TransformerLayerSpec",
    "accuracy",
    "architecture_report",
    "backward",
    "binarize",
    "cross_entropy",
    "current_target",
    "deterministic_gates",
    "exact_profile",
    "expected_sparsity",
    "extract",
    "forward_op",
    "generate_batch",
    "heavy_frontend_toy_descriptor",
    "keep_probability",
    "mac_budget_from_sparsity",
    "penalty",
    "run_pipeline",
    "run_stage",
    "sample_gates",
    "toy_descriptor",
    "wav2vec2_base_descriptor",
]
