"""Graffin: a serialized-graph GRU plug-in for imbalanced node classification."""

from .data import DatasetBundle, SbmSpec, gen_synthetic, load_cora, load_dataset, load_native, save_native, split
from .graph import AttributedGraph, build_graph, class_stats
from .layers import Aggregation
from .metrics import MetricsReport, evaluate
from .model import (
    GraffinParams,
    TrainConfig,
    fused_forward,
    init_graffin_params,
    load_checkpoint,
    repeat_runs,
    save_checkpoint,
    train,
)
from .serialization import Strategy, enrichment_report, serialize

__version__ = "0.1.0"

__all__ = [
    "Aggregation", "AttributedGraph", "DatasetBundle", "GraffinParams", "MetricsReport", "SbmSpec",
    "Strategy", "TrainConfig", "build_graph", "class_stats", "enrichment_report", "evaluate",
    "fused_forward", "gen_synthetic", "init_graffin_params", "load_checkpoint", "load_cora",
    "load_dataset", "load_native", "repeat_runs", "save_checkpoint", "save_native", "serialize",
    "split", "train",
]
