"""Bitemporal change detection with graph-space feature interaction.

A pure-NumPy implementation: a weight-shared residual encoder projects
both dates into a small vertex graph, cross-graph attention exchanges
context between the dates, and the evolved vertices are scattered back
onto the pixel grid to score per-pixel change. Every kernel carries a
hand-written backward pass verified against central finite differences.
"""

from .config import ConfigError, TrainConfig, load_config
from .data import SampleRecord, render_comparison_map, split, tile
from .encoder import EncoderConfig, FeatureMap, encode, encode_pair
from .gradcheck import GradCheckReport, finite_diff_grad
from .interaction import (
    InteractionParams,
    LinearMap,
    cross_message,
    inter_affinity,
    interact,
    intra_gcn,
    qkv_transform,
    unify_queries,
)
from .losses import LossConfig, dice_loss, focal_loss, total_loss
from .metrics import (
    ConfusionCounts,
    confusion,
    harmonic_f1,
    metrics_report,
    precision_recall_f1,
)
from .model import BGINet, ModelConfig, bginet_forward
from .projection import (
    GraphEmbedding,
    ProjectionParams,
    affinity,
    encode_vertices,
    project,
    soft_assign,
)
from .reference import naive_interact, naive_project
from .reprojection import ChangeMap, HeadParams, change_head, reproject
from .synth import SynthConfig, synth_generate
from .train import Checkpoint, TrainingDiverged, count_params, evaluate, lr_at, predict, train

__version__ = "0.1.0"

__all__ = [
    "BGINet", "ChangeMap", "Checkpoint", "ConfigError", "ConfusionCounts",
    "EncoderConfig", "FeatureMap", "GradCheckReport", "GraphEmbedding",
    "HeadParams", "InteractionParams", "LinearMap", "LossConfig", "ModelConfig",
    "ProjectionParams", "SampleRecord", "SynthConfig", "TrainConfig",
    "TrainingDiverged", "affinity", "bginet_forward", "change_head",
    "confusion", "count_params", "cross_message", "dice_loss", "encode",
    "encode_pair", "encode_vertices", "evaluate", "finite_diff_grad",
    "focal_loss", "harmonic_f1", "inter_affinity", "interact", "intra_gcn",
    "load_config", "lr_at", "metrics_report", "naive_interact",
    "naive_project", "precision_recall_f1", "predict", "project",
    "qkv_transform", "render_comparison_map", "reproject", "soft_assign",
    "split", "synth_generate", "tile", "total_loss", "train", "unify_queries",
]
