"""Multi-view subspace-contrastive clustering with a from-scratch autodiff core."""

__version__ = "0.1.0"

from .data import MultiViewDataset, load_dataset, normalize, save_dataset, synth_3x3, synth_multiview
from .losses import Hyperparams, LossBreakdown, contrastive_loss, fusion_loss, total_loss
from .metrics import ClusteringReport, evaluate
from .model import ScmcModel, affinity, init_model, load_checkpoint, save_checkpoint
from .pipeline import ABLATION_MASKS, RunResult, run
from .spectral import eig_sym, kmeans, spectral_clustering
from .trainer import AdamState, TrainReport, adam_step, fit, pretrain, train

__all__ = [
    "MultiViewDataset", "load_dataset", "normalize", "save_dataset", "synth_3x3", "synth_multiview",
    "Hyperparams", "LossBreakdown", "contrastive_loss", "fusion_loss", "total_loss",
    "ClusteringReport", "evaluate",
    "ScmcModel", "affinity", "init_model", "load_checkpoint", "save_checkpoint",
    "ABLATION_MASKS", "RunResult", "run",
    "eig_sym", "kmeans", "spectral_clustering",
    "AdamState", "TrainReport", "adam_step", "fit", "pretrain", "train",
]
