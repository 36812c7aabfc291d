"""Adversarial domain adaptation with graph convolution for cross-network
node classification."""

__version__ = "0.1.0"

from .data import SyntheticConfig, generate_pair, load_network, save_network
from .graph import (AttributedNetwork, DomainPair, GraphFilter, align_attributes,
                    apply_filter, reduce_common_attributes, renormalized_filter,
                    sample_labeled)
from .metrics import export_embeddings, macro_f1, micro_f1, threshold_predict
from .model import ModelParams, init_params, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, TrainHistory, TrainingError, lr_at, train

__all__ = [
    "AttributedNetwork", "DomainPair", "GraphFilter", "ModelParams", "SyntheticConfig",
    "TrainConfig", "TrainHistory", "TrainingError", "align_attributes", "apply_filter",
    "export_embeddings", "generate_pair", "init_params", "load_checkpoint", "load_network",
    "lr_at", "macro_f1", "micro_f1", "reduce_common_attributes", "renormalized_filter",
    "sample_labeled", "save_checkpoint", "save_network", "threshold_predict", "train",
]
