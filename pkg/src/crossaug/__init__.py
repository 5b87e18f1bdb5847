"""Cross-modal augmentation for long-tailed, domain-shifted recognition at
embedding scale: triplet alignment, balanced-softmax calibration, additive
text augmentation, a synthetic two-domain benchmark and its evaluation."""
from .core import (ClassGroup, CrossAugError, Dataset, DomainTag, EmbeddingVector, InvalidConfig,
                   InvalidInput, Rng, cosine_similarity, l2_normalize)
from .evaluate import GroupThresholds, MetricsReport, assign_groups, evaluate, topk_accuracy
from .formats import read_embedding_file, write_embedding_file
from .kernels import available_backends, get_backend, set_backend
from .losses import Mining, TripletBatch, balanced_softmax_loss, total_loss, triplet_alignment_loss
from .model import LossConfig, ModelParams, forward_backward, init_params
from .synthgen import BenchmarkConfig, generate_benchmark
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ClassGroup", "CrossAugError", "Dataset", "DomainTag", "EmbeddingVector", "InvalidConfig",
    "InvalidInput", "Rng", "cosine_similarity", "l2_normalize",
    "GroupThresholds", "MetricsReport", "assign_groups", "evaluate", "topk_accuracy",
    "read_embedding_file", "write_embedding_file",
    "available_backends", "get_backend", "set_backend",
    "Mining", "TripletBatch", "balanced_softmax_loss", "total_loss", "triplet_alignment_loss",
    "LossConfig", "ModelParams", "forward_backward", "init_params",
    "BenchmarkConfig", "generate_benchmark",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train",
]
