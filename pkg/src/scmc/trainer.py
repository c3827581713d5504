"""Two-stage optimisation: autoencoder pretraining, then joint training.

Randomness comes from one integer seed.  Each consumer gets its own numpy
``Generator`` (PCG64) seeded with ``[seed, stream_id]`` so adding draws in
one stream never shifts another:

    stream 0  parameter initialisation
    stream 1  k-means seeding in the spectral step
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence

import numpy as np

from . import diffcore as dc
from .losses import (FULL_MASK, Hyperparams, LossBreakdown, build_objective,
                     normalize_mask, reconstruction_node)
from .model import (ScmcModel, affinity, build_forward, encode, init_model,
                    save_checkpoint)

log = logging.getLogger(__name__)

STREAM_INIT = 0
STREAM_KMEANS = 1


def stream(seed: int, stream_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream_id)])


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_arrays(self, prefix: str = "adam") -> Dict[str, np.ndarray]:
        out = {f"{prefix}/t": np.array([self.t], dtype=np.int64)}
        for k in self.m:
            out[f"{prefix}/m/{k}"] = self.m[k]
            out[f"{prefix}/v/{k}"] = self.v[k]
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], prefix: str = "adam") -> "AdamState":
        state = cls(t=int(arrays[f"{prefix}/t"][0]))
        for key, val in arrays.items():
            if key.startswith(f"{prefix}/m/"):
                state.m[key[len(prefix) + 3:]] = np.array(val)
            elif key.startswith(f"{prefix}/v/"):
                state.v[key[len(prefix) + 3:]] = np.array(val)
        return state


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """In-place Adam update with bias correction over every key in ``grads``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if params[name].shape != g.shape:
            raise dc.ShapeError(f"{name}: grad {g.shape} vs param {params[name].shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        with np.errstate(over="ignore"):
            v += (1.0 - b2) * np.square(g)
        if not np.all(np.isfinite(v)):
            # g is finite but g*g overflowed: the step would silently vanish
            raise TrainingError(f"second-moment overflow for parameter {name!r}")
        denom = np.sqrt(v * (1.0 / bc2))
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= lr / bc1
        params[name] -= denom


@dataclass
class TrainReport:
    history: List[LossBreakdown]
    epoch_seconds: List[float]
    A: Optional[np.ndarray]
    weights: np.ndarray
    seed: int
    mask: FrozenSet[str] = FULL_MASK
    pretrain_history: List[float] = field(default_factory=list)
    embedding: Optional[np.ndarray] = None
    adam_state: Optional[AdamState] = None

    @property
    def embedding_only(self) -> bool:
        return self.A is None


def _share_params(tape: dc.Tape, model: ScmcModel):
    # trainable nodes read the model's arrays directly; Adam updates them in place
    for node in tape.trainable:
        node.value = model.params[node.name]


def pretrain(model: ScmcModel, views: Sequence[np.ndarray], hyper: Hyperparams,
             epochs: Optional[int] = None, lr: Optional[float] = None) -> List[float]:
    """Fit each view's encoder/decoder on reconstruction alone (Z bypassed).

    Returns the per-epoch reconstruction loss.  Z and omega are not touched.
    """
    epochs = hyper.pretrain_epochs if epochs is None else epochs
    lr = hyper.pretrain_learning_rate if lr is None else lr
    graph = build_forward(model, views, self_expression=False, with_affinity=False)
    tape = graph.tape
    tape.set_root(reconstruction_node(graph.X, graph.X_hat))
    _share_params(tape, model)
    state = AdamState()
    history = []
    for epoch in range(epochs):
        loss = tape.forward()
        grads = tape.backward()
        adam_step(model.params, grads, state, lr)
        history.append(loss)
    return history


def _embedding(model: ScmcModel, views: Sequence[np.ndarray]) -> np.ndarray:
    return np.mean([encode(model, v, X) for v, X in enumerate(views)], axis=0)


def train(model: ScmcModel, views: Sequence[np.ndarray], hyper: Hyperparams, *,
          mask: Optional[Iterable[str]] = None, epochs: Optional[int] = None,
          state: Optional[AdamState] = None, pretrained: bool = True,
          callback: Optional[Callable[[int, ScmcModel, LossBreakdown], None]] = None,
          dump_path: Optional[Path] = None) -> TrainReport:
    """Jointly optimise every parameter on the (masked) SCMC objective.

    ``history[e]`` is the loss evaluated before the update of epoch ``e``.
    Passing a saved ``state`` continues an interrupted run exactly.
    """
    mask = normalize_mask(mask)
    if not pretrained:
        warnings.warn("training a model that was not pretrained", stacklevel=2)
    epochs = hyper.train_epochs if epochs is None else epochs
    obj = build_objective(model, views, hyper, mask)
    tape = obj.tape
    _share_params(tape, model)
    state = AdamState() if state is None else state
    history: List[LossBreakdown] = []
    seconds: List[float] = []
    last_good = None
    for epoch in range(epochs):
        t0 = time.perf_counter()
        if dump_path is not None:
            last_good = {k: v.copy() for k, v in model.params.items()}
        try:
            tape.forward()
        except dc.NonFiniteError as exc:
            if last_good is not None:
                bad = model.copy()
                bad.params = last_good
                save_checkpoint(bad, dump_path, meta={"aborted_epoch": epoch})
            raise TrainingError(f"epoch {epoch}: {exc}") from exc
        breakdown = obj.breakdown()
        grads = tape.backward()
        adam_step(model.params, grads, state, hyper.learning_rate)
        history.append(breakdown)
        seconds.append(time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, model, breakdown)
    A = None if mask == {"Re"} else affinity(model)
    return TrainReport(history, seconds, A, model.weights.copy(), hyper.seed, mask,
                       embedding=_embedding(model, views), adam_state=state)


def ablate(model: ScmcModel, views: Sequence[np.ndarray], hyper: Hyperparams,
           mask: Iterable[str], **kwargs) -> TrainReport:
    """Train with a subset of loss terms; ``{'Re'}`` yields an embedding-only report."""
    return train(model, views, hyper, mask=normalize_mask(mask), **kwargs)


def fit(views: Sequence[np.ndarray], n_clusters: int, hyper: Hyperparams, *,
        arch: str = "wide", hidden: Optional[Sequence[int]] = None,
        mask: Optional[Iterable[str]] = None, callback=None) -> tuple:
    """Initialise, pretrain and train a fresh model from ``hyper.seed``.

    Returns ``(model, report)``.
    """
    n = views[0].shape[0]
    model = init_model([X.shape[1] for X in views], n, n_clusters,
                       stream(hyper.seed, STREAM_INIT), arch=arch, hidden=hidden)
    pre = pretrain(model, views, hyper) if hyper.pretrain_epochs > 0 else []
    report = train(model, views, hyper, mask=mask, pretrained=hyper.pretrain_epochs > 0,
                   callback=callback)
    report.pretrain_history = pre
    return model, report
