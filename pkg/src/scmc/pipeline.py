"""Glue: train a model, cluster its affinity (or embedding), score the labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import MultiViewDataset
from .losses import Hyperparams
from .metrics import ClusteringReport, evaluate
from .model import ScmcModel
from .spectral import kmeans, spectral_clustering
from .trainer import STREAM_KMEANS, TrainReport, fit, stream

ABLATION_MASKS = (
    ("Re",),
    ("Re", "Sub"),
    ("Re", "Sub", "Con"),
    ("Re", "Sub", "Fu"),
    ("Re", "Sub", "Con", "Fu"),
)


def mask_label(mask: Iterable[str]) -> str:
    mask = set(mask)
    if mask == {"Re", "Sub", "Con", "Fu"}:
        return "L"
    return "+".join(f"L_{t}" for t in ("Re", "Sub", "Con", "Fu") if t in mask)


@dataclass
class RunResult:
    model: ScmcModel
    report: TrainReport
    labels: np.ndarray
    metrics: Optional[ClusteringReport]


def assign(report: TrainReport, n_clusters: int, seed: int,
           laplacian: str = "sym") -> np.ndarray:
    """Spectral clustering on the learned affinity; k-means on the averaged
    embedding for reconstruction-only runs."""
    rng = stream(seed, STREAM_KMEANS)
    if report.embedding_only:
        return kmeans(report.embedding, n_clusters, seed=rng, restarts=10).labels
    return spectral_clustering(report.A, n_clusters, seed=rng, laplacian=laplacian).labels


def run(ds: MultiViewDataset, hyper: Hyperparams, *, arch: str = "wide",
        hidden: Optional[Sequence[int]] = None, mask: Optional[Iterable[str]] = None,
        laplacian: str = "sym", nmi_variant: str = "geometric", callback=None) -> RunResult:
    model, report = fit(ds.views, ds.n_clusters, hyper, arch=arch, hidden=hidden,
                        mask=mask, callback=callback)
    labels = assign(report, ds.n_clusters, hyper.seed, laplacian)
    metrics = None if ds.labels is None else evaluate(labels, ds.labels, nmi_variant)
    return RunResult(model, report, labels, metrics)
