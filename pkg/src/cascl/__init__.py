"""Contrastive pre-training, fine-tuning and self-distillation for cascade popularity."""
from .augment import (
    AugRwrParams,
    AugSimParams,
    aug_rwr,
    aug_sim,
    attractiveness,
    fit_global_rate,
    make_views,
    removal_prob,
)
from .config import ExperimentConfig, resolve_config
from .encoder import CascadeModel, ModelConfig, NodeFeatureSpec, encode, node_features, project
from .errors import CasclError, ConfigError, DataError, NumericFailure
from .evaluate import MetricsReport, build_outbreak_dataset, evaluate_outbreak, evaluate_popularity
from .experiment import run_experiment
from .graph import Adoption, CascadeGraph, ObservationWindow, build_graph, observe, popularity
from .ingest import CascadeDataset, DatasetConfig, generate_synthetic, label_fraction, load_dataset
from .train import distill, distill_loss, early_stop, finetune, msle_loss, nt_xent_loss, pretrain

__version__ = "0.1.0"
