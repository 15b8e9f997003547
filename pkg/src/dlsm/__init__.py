"""Deep latent space model for directed graphs."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .errors import DLSMError
from .evaluation import (
    EvalReport,
    community_detection_eval,
    degree_factor_report,
    export_embeddings,
    link_prediction_eval,
    score_edges,
)
from .graph import DirectedGraph, EdgeSplit, descriptive_stats, load_edge_list, preprocess, split_edges
from .metrics import auc, average_precision, clustering_accuracy
from .trainer import TrainedModel, train

__version__ = "0.1.0"
