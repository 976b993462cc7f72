"""Claim verification over evidence graphs with perturbation-mask rationale
extraction."""

from .data import Instance, SynthConfig, generate_synthetic, load_dataset, save_dataset
from .explain import ExplainConfig, Explanation, explain_instance
from .featurize import EvidencePiece, FileLookupProvider, HashedBowProvider
from .graph import EvidenceGraph, build_graph, normalize_adjacency
from .metrics import EvalReport, MaskReport, joint_metrics, mask_diagnostics, rationale_metrics
from .model import MaskSpec, ModelCheckpoint, TrainConfig, forward_full, forward_perturbed, train_base

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "EvidenceGraph",
    "EvidencePiece",
    "ExplainConfig",
    "Explanation",
    "FileLookupProvider",
    "HashedBowProvider",
    "Instance",
    "MaskReport",
    "MaskSpec",
    "ModelCheckpoint",
    "SynthConfig",
    "TrainConfig",
    "build_graph",
    "explain_instance",
    "forward_full",
    "forward_perturbed",
    "generate_synthetic",
    "joint_metrics",
    "load_dataset",
    "mask_diagnostics",
    "normalize_adjacency",
    "rationale_metrics",
    "save_dataset",
    "train_base",
]
