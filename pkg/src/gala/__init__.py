"""Source-free graph domain adaptation with a source-trained graph diffusion model."""

from .classifier import ClassifierConfig, GCNClassifier, pretrain_source
from .config import ExperimentConfig
from .graph import Dataset, Graph, parse_tu_dataset
from .score_net import DiffusionConfig, ScoreNetwork, train_score_network
from .sde import NoiseSchedule, adapt_target_graph, reconstruct_graphs
from .trainer import MetricsReport, run_adaptation

__version__ = "0.1.0"

__all__ = [
    "ClassifierConfig", "GCNClassifier", "pretrain_source", "ExperimentConfig", "Dataset", "Graph",
    "parse_tu_dataset", "DiffusionConfig", "ScoreNetwork", "train_score_network", "NoiseSchedule",
    "adapt_target_graph", "reconstruct_graphs", "MetricsReport", "run_adaptation",
]
