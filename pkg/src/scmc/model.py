"""SCMC network: per-view autoencoders, self-expression layers, fusion head.

Parameters live in one flat ``dict`` keyed by name so the optimizer and the
checkpoint code can treat them uniformly:

    enc{v}.W{l}, enc{v}.b{l}    encoder layer l (1..3) of view v
    dec{v}.W{l}, dec{v}.b{l}    decoder layer l (1..3) of view v
    Z{v}                        N x N self-expression coefficients
    omega                       1 x V fusion logits

Samples are rows everywhere.  The self-expression layer maps the embedding
``C`` (N x c) to ``Z^T C``, the row form of ``C^T Z``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import diffcore as dc

ARCHITECTURES = {"wide": (500, 200), "narrow": (200, 100)}
CHECKPOINT_VERSION = 1
Z_INIT_SCALE = 1e-4


class ModelInputError(ValueError):
    pass


@dataclass
class ScmcModel:
    dims: Tuple[int, ...]
    n_samples: int
    n_clusters: int
    hidden: Tuple[int, int] = ARCHITECTURES["wide"]
    arch: str = "wide"
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.hidden = tuple(int(h) for h in self.hidden)
        if len(self.dims) < 2:
            raise ModelInputError(f"need at least 2 views, got {len(self.dims)}")
        if self.n_samples < 2:
            raise ModelInputError("need at least 2 samples")

    @property
    def n_views(self) -> int:
        return len(self.dims)

    def encoder_chain(self, v: int) -> List[int]:
        return [self.dims[v], *self.hidden, self.n_clusters]

    def decoder_chain(self, v: int) -> List[int]:
        return self.encoder_chain(v)[::-1]

    def layer(self, kind: str, v: int, l: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.params[f"{kind}{v}.W{l}"], self.params[f"{kind}{v}.b{l}"]

    def Z(self, v: int) -> np.ndarray:
        return self.params[f"Z{v}"]

    @property
    def omega_logits(self) -> np.ndarray:
        return self.params["omega"]

    @property
    def weights(self) -> np.ndarray:
        """Fusion weights softmax(omega) as a length-V vector."""
        x = self.params["omega"][0]
        e = np.exp(x - x.max())
        return e / e.sum()

    def autoencoder_names(self) -> List[str]:
        return [k for k in self.params if k.startswith(("enc", "dec"))]

    def copy(self) -> "ScmcModel":
        return ScmcModel(self.dims, self.n_samples, self.n_clusters, self.hidden,
                         self.arch, {k: v.copy() for k, v in self.params.items()})


def resolve_hidden(arch: str, hidden: Optional[Sequence[int]] = None) -> Tuple[int, int]:
    if hidden is not None:
        if len(hidden) != 2:
            raise ModelInputError("hidden must list two layer widths")
        return tuple(int(h) for h in hidden)
    try:
        return ARCHITECTURES[arch]
    except KeyError:
        raise ModelInputError(f"unknown architecture {arch!r}; "
                              f"choose from {sorted(ARCHITECTURES)}") from None


def init_model(dims: Sequence[int], n_samples: int, n_clusters: int,
               rng: np.random.Generator, arch: str = "wide",
               hidden: Optional[Sequence[int]] = None) -> ScmcModel:
    """Fresh model: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases,
    Z ~ U(-1e-4, 1e-4), uniform fusion logits."""
    hidden = resolve_hidden(arch, hidden)
    if hidden != ARCHITECTURES.get(arch):
        arch = "custom"
    model = ScmcModel(tuple(dims), n_samples, n_clusters, hidden, arch)
    params = model.params
    for v in range(model.n_views):
        for kind, chain in (("enc", model.encoder_chain(v)),
                            ("dec", model.decoder_chain(v))):
            for l, (fan_in, fan_out) in enumerate(zip(chain[:-1], chain[1:]), start=1):
                bound = 1.0 / np.sqrt(fan_in)
                params[f"{kind}{v}.W{l}"] = rng.uniform(-bound, bound, (fan_in, fan_out))
                params[f"{kind}{v}.b{l}"] = np.zeros((1, fan_out))
    for v in range(model.n_views):
        params[f"Z{v}"] = rng.uniform(-Z_INIT_SCALE, Z_INIT_SCALE, (n_samples, n_samples))
    params["omega"] = np.zeros((1, model.n_views))
    return model


# ---------------------------------------------------------------------------
# numpy forward operations
# ---------------------------------------------------------------------------

def _check_view(model: ScmcModel, v: int):
    if not 0 <= v < model.n_views:
        raise ModelInputError(f"view index {v} outside 0..{model.n_views - 1}")


def encode(model: ScmcModel, v: int, X: np.ndarray) -> np.ndarray:
    _check_view(model, v)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dims[v]:
        raise ModelInputError(f"view {v}: expected {model.dims[v]} columns, got shape {X.shape}")
    h = X
    for l in (1, 2, 3):
        W, b = model.layer("enc", v, l)
        h = np.tanh(h @ W + b)
    return h


def self_express(model: ScmcModel, v: int, C: np.ndarray) -> np.ndarray:
    _check_view(model, v)
    Z = model.Z(v)
    if C.shape[0] != Z.shape[0]:
        raise ModelInputError(f"view {v}: C has {C.shape[0]} rows, Z is {Z.shape}")
    return Z.T @ C


def decode(model: ScmcModel, v: int, CZ: np.ndarray) -> np.ndarray:
    """Two tanh layers followed by a linear read-out to the view's dimension."""
    _check_view(model, v)
    if CZ.ndim != 2 or CZ.shape[1] != model.n_clusters:
        raise ModelInputError(f"view {v}: expected {model.n_clusters} columns, got {CZ.shape}")
    h = CZ
    for l in (1, 2, 3):
        W, b = model.layer("dec", v, l)
        h = h @ W + b
        if l < 3:
            h = np.tanh(h)
    return h


def fuse_affinity(model: ScmcModel) -> np.ndarray:
    w = model.weights
    out = np.zeros((model.n_samples, model.n_samples))
    for v in range(model.n_views):
        out += w[v] * model.Z(v)
    return out


def project_affinity(A_raw: np.ndarray) -> np.ndarray:
    """ReLU, zero the diagonal, make rows sum to one.

    Rows with no positive off-diagonal mass become uniform 1/(N-1).
    """
    A_raw = np.asarray(A_raw, dtype=np.float64)
    if A_raw.ndim != 2 or A_raw.shape[0] != A_raw.shape[1]:
        raise ModelInputError(f"affinity must be square, got {A_raw.shape}")
    if A_raw.shape[0] < 2:
        raise ModelInputError("affinity projection needs N >= 2")
    pos = np.maximum(A_raw, 0.0)
    np.fill_diagonal(pos, 0.0)
    return dc._row_normalize_forward([pos], {})


def affinity(model: ScmcModel) -> np.ndarray:
    return project_affinity(fuse_affinity(model))


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------

@dataclass
class ForwardGraph:
    """Nodes produced by :func:`build_forward`; values filled by tape.forward()."""
    tape: dc.Tape
    X: List[dc.Node]
    C: List[dc.Node]
    CZ: List[dc.Node]
    X_hat: List[dc.Node]
    Z: List[dc.Node]
    omega: Optional[dc.Node] = None
    weights: Optional[dc.Node] = None
    A: Optional[dc.Node] = None


def param_inputs(tape: dc.Tape, model: ScmcModel, names: Sequence[str]) -> Dict[str, dc.Node]:
    return {k: tape.input(k, model.params[k]) for k in names}


def encoder_graph(p: Dict[str, dc.Node], v: int, X: dc.Node) -> dc.Node:
    h = X
    for l in (1, 2, 3):
        h = dc.tanh(dc.add_row(h @ p[f"enc{v}.W{l}"], p[f"enc{v}.b{l}"]))
    return h


def decoder_graph(p: Dict[str, dc.Node], v: int, H: dc.Node) -> dc.Node:
    h = H
    for l in (1, 2, 3):
        h = dc.add_row(h @ p[f"dec{v}.W{l}"], p[f"dec{v}.b{l}"])
        if l < 3:
            h = dc.tanh(h)
    return h


def affinity_graph(Z: Sequence[dc.Node], omega: dc.Node) -> Tuple[dc.Node, dc.Node]:
    """Return (softmax weights, projected affinity) nodes."""
    tape = omega.tape
    n = Z[0].shape[0]
    w = dc.softmax(omega)
    fused = None
    for v, Zv in enumerate(Z):
        term = dc.mul_scalar(dc.element(w, 0, v), Zv)
        fused = term if fused is None else fused + term
    off_diag = tape.constant(1.0 - np.eye(n))
    A = dc.row_normalize(dc.hadamard(dc.relu(fused), off_diag))
    return w, A


def build_forward(model: ScmcModel, views: Sequence[np.ndarray], *,
                  self_expression: bool = True, with_affinity: bool = True,
                  trainable: Optional[Sequence[str]] = None) -> ForwardGraph:
    """Build the SCMC forward graph over full-batch ``views``.

    With ``self_expression=False`` the decoder reads the encoder output
    directly (the pretraining path) and no Z / fusion nodes are created.
    ``trainable`` restricts which parameters become trainable inputs; the
    rest are bound as constants.
    """
    if len(views) != model.n_views:
        raise ModelInputError(f"model has {model.n_views} views, got {len(views)}")
    for v, X in enumerate(views):
        if X.shape != (model.n_samples, model.dims[v]):
            raise ModelInputError(f"view {v}: expected shape "
                                  f"{(model.n_samples, model.dims[v])}, got {X.shape}")
    tape = dc.Tape()
    wanted = [k for k in model.params
              if self_expression or k.startswith(("enc", "dec"))]
    if not with_affinity:
        wanted = [k for k in wanted if k != "omega"]
    train_set = set(wanted if trainable is None else trainable)
    p = {}
    for k in wanted:
        if k in train_set:
            p[k] = tape.input(k, model.params[k])
        else:
            p[k] = tape.constant(model.params[k], name=k)
    Xn = [tape.constant(X, name=f"X{v}") for v, X in enumerate(views)]
    C, CZ, X_hat, Z = [], [], [], []
    for v in range(model.n_views):
        c = encoder_graph(p, v, Xn[v])
        C.append(c)
        if self_expression:
            Zv = p[f"Z{v}"]
            Z.append(Zv)
            cz = dc.transpose(Zv) @ c
        else:
            cz = c
        CZ.append(cz)
        X_hat.append(decoder_graph(p, v, cz))
    graph = ForwardGraph(tape, Xn, C, CZ, X_hat, Z)
    if self_expression and with_affinity:
        graph.omega = p["omega"]
        graph.weights, graph.A = affinity_graph(Z, p["omega"])
    return graph


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: ScmcModel, path, extra: Optional[Dict[str, np.ndarray]] = None,
                    meta: Optional[dict] = None) -> Path:
    """Write an ``.npz`` container.

    ``__meta__`` holds a JSON header (format version, architecture tag, dims);
    every parameter is stored under its own name as a float64 array with its
    shape.  ``extra`` arrays (optimizer state) go under ``extra/<name>``.
    """
    path = Path(path)
    header = {"format": "scmc-checkpoint", "version": CHECKPOINT_VERSION,
              "arch": model.arch, "hidden": list(model.hidden),
              "dims": list(model.dims), "n_samples": model.n_samples,
              "n_clusters": model.n_clusters, "meta": meta or {}}
    arrays = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in model.params.items()}
    for k, v in (extra or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    arrays["__meta__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> Tuple[ScmcModel, Dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["__meta__"]).decode())
        if header.get("format") != "scmc-checkpoint":
            raise ValueError(f"{path}: not an SCMC checkpoint")
        if header["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {header['version']} is newer "
                             f"than supported {CHECKPOINT_VERSION}")
        params, extra = {}, {}
        for key in data.files:
            if key == "__meta__":
                continue
            if key.startswith("extra/"):
                extra[key[len("extra/"):]] = data[key]
            else:
                params[key] = data[key]
    model = ScmcModel(tuple(header["dims"]), header["n_samples"], header["n_clusters"],
                      tuple(header["hidden"]), header["arch"], params)
    return model, extra, header.get("meta", {})
