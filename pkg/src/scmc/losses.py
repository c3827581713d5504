"""Loss terms of the SCMC objective.

Each term exists twice: a plain numpy function (library API, used for
reporting and as a cross-check) and a graph builder on :mod:`scmc.diffcore`
nodes (used for training).  All terms are sums, never means, except the
contrastive total which carries the 1/(N V) factor.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import diffcore as dc
from .model import ForwardGraph, ScmcModel, build_forward

TERMS = ("Re", "Sub", "Con", "Fu")
FULL_MASK: FrozenSet[str] = frozenset(TERMS)


class LossInputError(ValueError):
    pass


@dataclass
class Hyperparams:
    gamma1: float = 500.0
    gamma2: float = 0.03
    gamma3: float = 0.01
    tau: float = 0.1
    learning_rate: float = 1e-4
    pretrain_learning_rate: float = 1e-3
    pretrain_epochs: int = 200
    train_epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("gamma1", "gamma2", "gamma3"):
            if not getattr(self, name) >= 0:
                raise LossInputError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not self.tau > 0:
            raise LossInputError(f"tau must be positive, got {self.tau}")
        if not (self.learning_rate > 0 and self.pretrain_learning_rate > 0):
            raise LossInputError("learning rates must be positive")
        if self.train_epochs < 1 or self.pretrain_epochs < 0:
            raise LossInputError("train_epochs must be >= 1 and pretrain_epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise LossInputError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LossBreakdown:
    L_Re: float
    L_Sub: float
    L_Con: float
    L_Fu: float
    L_total: float

    def as_row(self) -> List[float]:
        return [self.L_Re, self.L_Sub, self.L_Con, self.L_Fu, self.L_total]


def normalize_mask(mask: Optional[Iterable[str]]) -> FrozenSet[str]:
    if mask is None:
        return FULL_MASK
    mask = frozenset(mask)
    bad = mask - FULL_MASK
    if bad:
        raise LossInputError(f"unknown loss terms {sorted(bad)}; valid: {TERMS}")
    if "Re" not in mask:
        raise LossInputError("reconstruction term 'Re' must be in every loss mask")
    return mask


# ---------------------------------------------------------------------------
# numpy versions
# ---------------------------------------------------------------------------

def _check_pairs(a: Sequence[np.ndarray], b: Sequence[np.ndarray], what: str):
    if len(a) != len(b):
        raise LossInputError(f"{what}: {len(a)} vs {len(b)} views")
    for v, (x, y) in enumerate(zip(a, b)):
        if np.shape(x) != np.shape(y):
            raise LossInputError(f"{what}: view {v} shapes {np.shape(x)} vs {np.shape(y)}")


def reconstruction_loss(X: Sequence[np.ndarray], X_hat: Sequence[np.ndarray]) -> float:
    _check_pairs(X, X_hat, "reconstruction_loss")
    return float(sum(np.sum((x - y) ** 2) for x, y in zip(X, X_hat)))


def subspace_loss(C: Sequence[np.ndarray], Z: Sequence[np.ndarray]) -> float:
    """Sum over views of ||C^T - C^T Z||_F^2 (C has samples as rows)."""
    if len(C) != len(Z):
        raise LossInputError(f"subspace_loss: {len(C)} vs {len(Z)} views")
    total = 0.0
    for v, (c, z) in enumerate(zip(C, Z)):
        n = c.shape[0]
        if z.shape != (n, n):
            raise LossInputError(f"subspace_loss: view {v} Z is {z.shape}, need {(n, n)}")
        total += np.sum((c.T - c.T @ z) ** 2)
    return float(total)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise LossInputError(f"cosine_similarity: lengths {u.size} and {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < dc.NORM_EPS or nv < dc.NORM_EPS:
        return 0.0
    return float(u @ v / (nu * nv))


def _cosine_gram(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return dc._cosine_forward([a, b], {})


def _check_Z(Z: Sequence[np.ndarray], tau: float):
    if len(Z) < 2:
        raise LossInputError("contrastive loss needs at least 2 views")
    if not tau > 0:
        raise LossInputError(f"tau must be positive, got {tau}")
    n = Z[0].shape[0]
    for v, z in enumerate(Z):
        if z.shape != (n, n):
            raise LossInputError(f"view {v}: Z is {z.shape}, need {(n, n)}")


def view_contrastive_loss(v: int, Z: Sequence[np.ndarray], tau: float) -> float:
    """Contrastive term of anchor view ``v``.

    For anchor row i: the positives are row i of every other view; the
    denominator for view k adds intra-view similarities (j != i) and all
    cross-view similarities to view k (the positive included).
    """
    _check_Z(Z, tau)
    n = Z[0].shape[0]
    off = 1.0 - np.eye(n)
    intra = np.sum(np.exp(_cosine_gram(Z[v], Z[v]) / tau) * off, axis=1)
    loss = 0.0
    for k in range(len(Z)):
        if k == v:
            continue
        S = _cosine_gram(Z[v], Z[k]) / tau
        cross = np.sum(np.exp(S), axis=1)
        loss -= np.sum(np.diag(S) - np.log(intra + cross))
    return float(loss)


def contrastive_loss(Z: Sequence[np.ndarray], tau: float) -> float:
    _check_Z(Z, tau)
    n, V = Z[0].shape[0], len(Z)
    return sum(view_contrastive_loss(v, Z, tau) for v in range(V)) / (n * V)


def anchor_pairs(V: int, N: int, v: int, i: int) -> Tuple[List[Tuple[int, int]], List[Tuple[int, int]]]:
    """Distinct (view, sample) partners of anchor (v, i): (positives, negatives)."""
    positives = [(k, i) for k in range(V) if k != v]
    negatives = [(k, j) for k in range(V) for j in range(N) if j != i]
    return positives, negatives


def explicit_view_contrastive_loss(v: int, Z: Sequence[np.ndarray], tau: float,
                                   counts: Optional[Dict[int, Tuple[int, int]]] = None) -> float:
    """Slow per-anchor evaluation that enumerates pairs one by one.

    If ``counts`` is given, it is filled with anchor -> (number of distinct
    positives, number of distinct negatives) touched by the evaluation.
    """
    _check_Z(Z, tau)
    V, N = len(Z), Z[0].shape[0]
    loss = 0.0
    for i in range(N):
        positives, negatives = anchor_pairs(V, N, v, i)
        neg_set = set(negatives)
        seen_pos, seen_neg = set(), set()
        anchor = Z[v][i]
        for k, _ in positives:
            pos = np.exp(cosine_similarity(anchor, Z[k][i]) / tau)
            seen_pos.add((k, i))
            denom = 0.0
            for partner in [(v, j) for j in range(N) if j != i] + [(k, j) for j in range(N)]:
                denom += np.exp(cosine_similarity(anchor, Z[partner[0]][partner[1]]) / tau)
                if partner in neg_set:
                    seen_neg.add(partner)
            loss -= np.log(pos / denom)
        if counts is not None:
            counts[i] = (len(seen_pos), len(seen_neg))
    return float(loss)


def fusion_loss(Z: Sequence[np.ndarray], A: np.ndarray) -> float:
    """Graph regularizer sum_v sum_ij ||Z_i - Z_j||^2 A_ij plus ||A||_F^2,
    evaluated through the Laplacian of the symmetric part of A."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise LossInputError(f"fusion_loss: A must be square, got {A.shape}")
    S = 0.5 * (A + A.T)
    L = np.diag(S.sum(axis=1)) - S
    total = float(np.sum(A * A))
    for v, z in enumerate(Z):
        if z.shape[0] != n:
            raise LossInputError(f"fusion_loss: view {v} Z has {z.shape[0]} rows, A is {A.shape}")
        total += 2.0 * float(np.trace(z.T @ L @ z))
    return total


# ---------------------------------------------------------------------------
# graph versions
# ---------------------------------------------------------------------------

def reconstruction_node(X: Sequence[dc.Node], X_hat: Sequence[dc.Node]) -> dc.Node:
    terms = [dc.frob_sq(x - y) for x, y in zip(X, X_hat)]
    return _sum_nodes(terms)


def subspace_node(C: Sequence[dc.Node], CZ: Sequence[dc.Node]) -> dc.Node:
    # ||C^T - C^T Z||_F = ||C - Z^T C||_F and CZ already holds Z^T C
    return _sum_nodes([dc.frob_sq(c - cz) for c, cz in zip(C, CZ)])


class _ContrastGraph:
    """Shared similarity nodes for all anchor views.

    The cross-view block for (k, v) is the transpose of (v, k), so each
    unordered pair of views gets a single cosine Gram and exp node.
    """

    def __init__(self, Z: Sequence[dc.Node], tau: float):
        self.Z, self.tau = Z, tau
        n = Z[0].shape[0]
        self.off = Z[0].tape.constant(1.0 - np.eye(n))
        self.sims: Dict[Tuple[int, int], dc.Node] = {}
        self.exps: Dict[Tuple[int, int], dc.Node] = {}

    def sim(self, a: int, b: int) -> dc.Node:
        key = (min(a, b), max(a, b))
        if key not in self.sims:
            self.sims[key] = dc.scale(dc.cosine_row_gram(self.Z[key[0]], self.Z[key[1]]),
                                      1.0 / self.tau)
        return self.sims[key]

    def exp_rowsum(self, a: int, b: int) -> dc.Node:
        key = (min(a, b), max(a, b))
        if key not in self.exps:
            self.exps[key] = dc.exp(self.sim(a, b))
        E = self.exps[key]
        if a == b:
            return dc.rowsum(dc.hadamard(E, self.off))
        return dc.rowsum(E if a < b else dc.transpose(E))


def view_contrastive_node(v: int, Z: Sequence[dc.Node], tau: float,
                          shared: Optional[_ContrastGraph] = None) -> dc.Node:
    g = _ContrastGraph(Z, tau) if shared is None else shared
    intra = g.exp_rowsum(v, v)
    terms = []
    for k in range(len(Z)):
        if k == v:
            continue
        cross = g.exp_rowsum(v, k)
        # the positive similarity is symmetric in (v, k)
        positives = dc.total(dc.diag(g.sim(v, k)))
        terms.append(dc.total(dc.log(intra + cross)) - positives)
    return _sum_nodes(terms)


def contrastive_node(Z: Sequence[dc.Node], tau: float) -> dc.Node:
    n, V = Z[0].shape[0], len(Z)
    if V < 2:
        raise LossInputError("contrastive loss needs at least 2 views")
    shared = _ContrastGraph(Z, tau)
    per_view = [view_contrastive_node(v, Z, tau, shared) for v in range(V)]
    return dc.scale(_sum_nodes(per_view), 1.0 / (n * V))


def fusion_node(Z: Sequence[dc.Node], A: dc.Node) -> dc.Node:
    # sum_ij S_ij |z_i - z_j|^2 = 2 (sum_i deg_i |z_i|^2 - sum(S * Z Z^T))
    S = dc.scale(A + dc.transpose(A), 0.5)
    deg = dc.rowsum(S)
    terms = [dc.frob_sq(A)]
    for z in Z:
        sq_norms = dc.rowsum(dc.hadamard(z, z))
        quad = dc.total(dc.hadamard(deg, sq_norms)) - dc.total(dc.hadamard(S, dc.gram(z)))
        terms.append(dc.scale(quad, 2.0))
    return _sum_nodes(terms)


def _sum_nodes(nodes: Sequence[dc.Node]) -> dc.Node:
    out = nodes[0]
    for x in nodes[1:]:
        out = out + x
    return out


@dataclass
class Objective:
    """A built training graph plus handles on each loss term."""
    graph: ForwardGraph
    terms: Dict[str, dc.Node]
    total: dc.Node
    hyper: Hyperparams
    mask: FrozenSet[str]

    @property
    def tape(self) -> dc.Tape:
        return self.graph.tape

    def breakdown(self) -> LossBreakdown:
        vals = {t: (float(self.terms[t].value[0, 0]) if t in self.terms else 0.0)
                for t in TERMS}
        return LossBreakdown(vals["Re"], vals["Sub"], vals["Con"], vals["Fu"],
                             float(self.total.value[0, 0]))


def build_objective(model: ScmcModel, views: Sequence[np.ndarray], hyper: Hyperparams,
                    mask: Optional[Iterable[str]] = None) -> Objective:
    mask = normalize_mask(mask)
    # reconstruction-only ablation clusters embeddings, so no affinity head
    graph = build_forward(model, views, self_expression=True,
                          with_affinity=mask != {"Re"})
    terms = {"Re": reconstruction_node(graph.X, graph.X_hat)}
    if "Sub" in mask:
        terms["Sub"] = subspace_node(graph.C, graph.CZ)
    if "Con" in mask:
        terms["Con"] = contrastive_node(graph.Z, hyper.tau)
    if "Fu" in mask:
        terms["Fu"] = fusion_node(graph.Z, graph.A)
    weights = {"Re": 1.0, "Sub": hyper.gamma1, "Con": hyper.gamma2, "Fu": hyper.gamma3}
    total = terms["Re"]
    for t in ("Sub", "Con", "Fu"):
        if t in terms:
            total = total + dc.scale(terms[t], weights[t])
    graph.tape.set_root(total)
    return Objective(graph, terms, total, hyper, mask)


def total_loss(model: ScmcModel, views: Sequence[np.ndarray], hyper: Hyperparams,
               mask: Optional[Iterable[str]] = None) -> LossBreakdown:
    obj = build_objective(model, views, hyper, mask)
    obj.tape.forward()
    return obj.breakdown()
