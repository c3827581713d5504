"""External clustering metrics: ACC, NMI, Purity, ARI and pairwise F/P/R."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

METRIC_NAMES = ("ACC", "NMI", "Purity", "ARI", "F-score", "Precision", "Recall")
NMI_VARIANTS = ("geometric", "arithmetic", "min", "max")


class MetricInputError(ValueError):
    pass


def _labels(pred, truth) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise MetricInputError(f"label length mismatch: {pred.size} vs {truth.size}")
    if pred.size == 0:
        raise MetricInputError("empty labelling")
    return pred, truth


def contingency(pred, truth) -> np.ndarray:
    """Counts n[i, j] of samples in predicted cluster i and true class j."""
    pred, truth = _labels(pred, truth)
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def accuracy(pred, truth) -> Tuple[float, Dict]:
    """Best one-to-one cluster-to-class matching; returns (ACC, mapping)."""
    pred, truth = _labels(pred, truth)
    table = contingency(pred, truth)
    rows, cols = linear_sum_assignment(-table)
    clusters, classes = np.unique(pred), np.unique(truth)
    mapping = {clusters[r].item(): classes[c].item() for r, c in zip(rows, cols)}
    return float(table[rows, cols].sum()) / pred.size, mapping


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def mutual_information(pred, truth) -> float:
    table = contingency(pred, truth).astype(np.float64)
    n = table.sum()
    pi = table.sum(axis=1, keepdims=True)
    pj = table.sum(axis=0, keepdims=True)
    nz = table > 0
    return float(np.sum(table[nz] / n * np.log(table[nz] * n / (pi @ pj)[nz])))


def nmi(pred, truth, variant: str = "geometric") -> float:
    pred, truth = _labels(pred, truth)
    table = contingency(pred, truth)
    h_pred = _entropy(table.sum(axis=1))
    h_true = _entropy(table.sum(axis=0))
    if h_pred == 0.0 or h_true == 0.0:
        # a single-cluster side only matches another single-cluster side
        return 1.0 if h_pred == h_true else 0.0
    mi = mutual_information(pred, truth)
    if variant == "geometric":
        norm = np.sqrt(h_pred * h_true)
    elif variant == "arithmetic":
        norm = 0.5 * (h_pred + h_true)
    elif variant == "min":
        norm = min(h_pred, h_true)
    elif variant == "max":
        norm = max(h_pred, h_true)
    else:
        raise MetricInputError(f"unknown NMI variant {variant!r}")
    return float(min(1.0, max(0.0, mi / norm)))


def purity(pred, truth) -> float:
    table = contingency(pred, truth)
    return float(table.max(axis=1).sum()) / table.sum()


def _pairs(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    return x * (x - 1) // 2


def ari(pred, truth) -> float:
    table = contingency(pred, truth)
    n = int(table.sum())
    index = _pairs(table).sum()
    a = _pairs(table.sum(axis=1)).sum()
    b = _pairs(table.sum(axis=0)).sum()
    total = n * (n - 1) // 2
    expected = a * b / total if total else 0.0
    max_index = 0.5 * (a + b)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def pairwise_prf(pred, truth) -> Tuple[float, float, float]:
    """Pair-counting (F-score, Precision, Recall)."""
    table = contingency(pred, truth)
    tp = _pairs(table).sum()
    same_pred = _pairs(table.sum(axis=1)).sum()
    same_true = _pairs(table.sum(axis=0)).sum()
    precision = tp / same_pred if same_pred else 0.0
    recall = tp / same_true if same_true else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return float(f), float(precision), float(recall)


@dataclass
class ClusteringReport:
    ACC: float
    NMI: float
    Purity: float
    ARI: float
    F_score: float
    Precision: float
    Recall: float
    mapping: Dict = field(default_factory=dict)

    def values(self) -> Tuple[float, ...]:
        return (self.ACC, self.NMI, self.Purity, self.ARI,
                self.F_score, self.Precision, self.Recall)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(METRIC_NAMES, self.values()))

    def to_json(self) -> str:
        d = self.as_dict()
        d["mapping"] = {str(k): v for k, v in self.mapping.items()}
        return json.dumps(d, indent=2, sort_keys=False)


def evaluate(pred, truth, nmi_variant: str = "geometric") -> ClusteringReport:
    acc, mapping = accuracy(pred, truth)
    f, p, r = pairwise_prf(pred, truth)
    return ClusteringReport(acc, nmi(pred, truth, nmi_variant), purity(pred, truth),
                            ari(pred, truth), f, p, r, mapping)


def table_header(label: str = "Method", width: int = 10) -> str:
    return f"{label:<{width}}" + "".join(f"{m:>11}" for m in METRIC_NAMES)


def table_row(values, label: str = "SCMC", width: int = 10, std=None) -> str:
    """One row of percentages with two decimals, optionally ``mean±std``."""
    cells = []
    for i, v in enumerate(values):
        cell = f"{100 * v:.2f}"
        if std is not None:
            cell += f"±{100 * std[i]:.2f}"
        cells.append(f"{cell:>11}")
    return f"{label:<{width}}" + "".join(cells)
