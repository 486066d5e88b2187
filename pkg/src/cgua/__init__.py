"""Context-guided clustering and unpaired-aware memory for weakly supervised
person re-identification, at desk scale on numpy."""

__version__ = "0.1.0"

from .cgc import cgc_cluster, split_paired_unpaired
from .core import ClusterAssignment, EmbeddingMatrix, SceneCatalog
from .datagen import WorldConfig, generate, heldout_split
from .evaluation import evaluate_retrieval, pairwise_f1
from .trainer import TrainConfig, train

__all__ = [
    "ClusterAssignment",
    "EmbeddingMatrix",
    "SceneCatalog",
    "TrainConfig",
    "WorldConfig",
    "cgc_cluster",
    "evaluate_retrieval",
    "generate",
    "heldout_split",
    "pairwise_f1",
    "split_paired_unpaired",
    "train",
]
