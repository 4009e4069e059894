"""Dual-attention graph network (node attention plus category-oriented feature
attention) with a small reverse-mode autodiff engine, attention-guided minority
oversampling and a command-line front end."""

__version__ = "0.1.0"

from .errors import (CapacityError, CheckpointError, ContractError, DegenerateRowError, GDError,
                     NumericError, ParseError, ShapeError, ValidationError)
from .graph import (UNLABELED, Dataset, Graph, LabelSet, SbmSpec, Split, add_self_loops,
                    generate_sbm, load_dataset, make_split, save_dataset)
from .autodiff import Tensor, backward
from .optim import Adam, grad_check, xavier_init
from .checkpoint import load_checkpoint, save_checkpoint
from .fab import FeatureAttention, fab_forward, max_pool, partition_by_category, upsample_with_mask
from .model import GraphContext, ModelConfig, init_params, model_forward
from .train import Metrics, evaluate, train
from .flops import GraphStats, count_flops, count_params
from .augment import (build_two_class_dataset, clone_nodes, extract_representative, ratio_sweep,
                      rebalance_all)

__all__ = [
    "CapacityError", "CheckpointError", "ContractError", "DegenerateRowError", "GDError",
    "NumericError", "ParseError", "ShapeError", "ValidationError",
    "UNLABELED", "Dataset", "Graph", "LabelSet", "SbmSpec", "Split", "add_self_loops",
    "generate_sbm", "load_dataset", "make_split", "save_dataset",
    "Tensor", "backward", "Adam", "grad_check", "xavier_init", "load_checkpoint", "save_checkpoint",
    "FeatureAttention", "fab_forward", "max_pool", "partition_by_category", "upsample_with_mask",
    "GraphContext", "ModelConfig", "init_params", "model_forward", "Metrics", "evaluate", "train",
    "GraphStats", "count_flops", "count_params",
    "build_two_class_dataset", "clone_nodes", "extract_representative", "ratio_sweep", "rebalance_all",
]
