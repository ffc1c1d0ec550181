"""Cross-view contrastive bundle recommendation."""
__version__ = "0.1.0"

from .dataset import (BundleDataset, SplitDataset, generate_synthetic, load_dataset, split)
from .encoder import EmbeddingState, ModelConfig, init_embeddings
from .graph import AugmentationConfig, build_ub_graph, build_ui_graph, edge_dropout
from .kernels import BACKEND
from .objectives import LossConfig
from .trainer import TrainerConfig, train

__all__ = [
    "BACKEND", "AugmentationConfig", "BundleDataset", "EmbeddingState", "LossConfig",
    "ModelConfig", "SplitDataset", "TrainerConfig", "build_ub_graph", "build_ui_graph",
    "edge_dropout", "generate_synthetic", "init_embeddings", "load_dataset", "split", "train",
]
