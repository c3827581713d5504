"""Multi-view dataset directories, normalisation and a synthetic generator.

Directory layout::

    manifest.json     {"name", "V", "N", "c", "dims": [...],
                       "views": ["view0.bin", ...], "normalization": [...]}
    view<v>.csv       comma-separated, one sample per line, or
    view<v>.bin       binary matrix (see below)
    labels.txt        optional, one integer per line

Binary matrix layout (little endian): 8-byte magic ``b"SCMCMAT1"``, uint32
rows, uint32 cols, then rows*cols float64 values in row-major order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

MAGIC = b"SCMCMAT1"
HEADER = struct.Struct("<8sII")
NORMALIZATIONS = ("none", "minmax", "minmax+unit-row")


class DatasetError(ValueError):
    pass


class ShapeMismatchError(DatasetError):
    pass


class NonFiniteDataError(DatasetError):
    pass


class MissingViewError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


@dataclass
class MultiViewDataset:
    name: str
    views: List[np.ndarray]
    n_clusters: int
    labels: Optional[np.ndarray] = None
    normalization: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.views = [np.asarray(X, dtype=np.float64) for X in self.views]
        if not self.normalization:
            self.normalization = ["none"] * len(self.views)
        self.validate()

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def n_samples(self) -> int:
        return self.views[0].shape[0]

    @property
    def dims(self) -> List[int]:
        return [X.shape[1] for X in self.views]

    def validate(self):
        if len(self.views) < 2:
            raise DatasetError(f"need at least 2 views, got {len(self.views)}")
        n = self.views[0].shape[0]
        for v, X in enumerate(self.views):
            if X.ndim != 2 or X.shape[1] < 1:
                raise ShapeMismatchError(f"view {v}: expected a non-empty matrix, got {X.shape}")
            if X.shape[0] != n:
                raise ShapeMismatchError(f"view {v} has {X.shape[0]} samples, view 0 has {n}")
            if not np.all(np.isfinite(X)):
                raise NonFiniteDataError(f"view {v} contains NaN or Inf")
        if len(self.normalization) != len(self.views):
            raise DatasetError("one normalization tag per view required")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
            if self.labels.size != n:
                raise ShapeMismatchError(f"{self.labels.size} labels for {n} samples")
            if self.labels.min() < 0 or self.labels.max() >= self.n_clusters:
                raise LabelRangeError(f"labels must lie in [0, {self.n_clusters})")


# ---------------------------------------------------------------------------
# matrix files
# ---------------------------------------------------------------------------

def write_matrix_bin(path, X: np.ndarray) -> None:
    X = np.ascontiguousarray(X, dtype="<f8")
    rows, cols = X.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, rows, cols))
        fh.write(X.tobytes(order="C"))


def read_matrix_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ShapeMismatchError(f"{path}: truncated header")
    magic, rows, cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    payload = len(raw) - HEADER.size
    if payload != rows * cols * 8:
        raise ShapeMismatchError(f"{path}: header says {rows}x{cols} but payload has "
                                 f"{payload // 8} values")
    return np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(rows, cols).astype(np.float64)


def write_matrix_csv(path, X: np.ndarray) -> None:
    # repr-precision so CSV round-trips bit-exactly
    with open(path, "w") as fh:
        for row in np.asarray(X, dtype=np.float64):
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                values = [float(x) for x in line.split(",")]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ShapeMismatchError(f"{path}:{lineno}: {len(values)} columns, expected {width}")
            rows.append(values)
    return np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingViewError(f"missing view file {path}")
    if path.suffix == ".bin":
        return read_matrix_bin(path)
    return read_matrix_csv(path)


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(x)}\n" for x in np.asarray(labels).ravel()))


def read_labels(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing label file {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: not an integer: {line!r}") from None
    return np.array(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def load_dataset(path) -> MultiViewDataset:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = json.loads(manifest_path.read_text())
    V, N, c = int(manifest["V"]), int(manifest["N"]), int(manifest["c"])
    dims = [int(d) for d in manifest["dims"]]
    files = manifest.get("views") or [f"view{v}.csv" for v in range(V)]
    if len(files) != V or len(dims) != V:
        raise ShapeMismatchError(f"manifest declares V={V} but lists {len(files)} files "
                                 f"and {len(dims)} dims")
    views = []
    for v, name in enumerate(files):
        X = read_matrix(root / name)
        if X.shape != (N, dims[v]):
            raise ShapeMismatchError(f"{name}: shape {X.shape}, manifest declares {(N, dims[v])}")
        if not np.all(np.isfinite(X)):
            raise NonFiniteDataError(f"{name}: contains NaN or Inf")
        views.append(X)
    labels = None
    label_file = manifest.get("labels", "labels.txt")
    if label_file and (root / label_file).exists():
        labels = read_labels(root / label_file)
        if labels.size != N:
            raise ShapeMismatchError(f"{label_file}: {labels.size} labels, manifest N={N}")
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise LabelRangeError(f"{label_file}: labels outside [0, {c})")
    norm = manifest.get("normalization") or ["none"] * V
    return MultiViewDataset(manifest.get("name", root.name), views, c, labels, list(norm))


def save_dataset(ds: MultiViewDataset, path, fmt: str = "bin") -> Path:
    if fmt not in ("bin", "csv"):
        raise DatasetError(f"unknown view format {fmt!r}")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    files = []
    for v, X in enumerate(ds.views):
        name = f"view{v}.{fmt}"
        (write_matrix_bin if fmt == "bin" else write_matrix_csv)(root / name, X)
        files.append(name)
    manifest = {"name": ds.name, "V": ds.n_views, "N": ds.n_samples, "c": ds.n_clusters,
                "dims": ds.dims, "views": files, "normalization": ds.normalization}
    if ds.labels is not None:
        write_labels(root / "labels.txt", ds.labels)
        manifest["labels"] = "labels.txt"
    else:
        manifest["labels"] = None
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return root


def minmax(X: np.ndarray) -> np.ndarray:
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    out = np.zeros_like(X)
    live = span > 0
    out[:, live] = (X[:, live] - lo[live]) / span[live]
    return out


def unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    out = X.copy()
    live = norms > 0
    out[live] /= norms[live, None]
    return out


def normalize(ds: MultiViewDataset, mode: str = "minmax") -> MultiViewDataset:
    """Per-feature min-max scaling to [0, 1], optionally followed by unit rows."""
    if mode not in NORMALIZATIONS:
        raise DatasetError(f"unknown normalization {mode!r}; choose from {NORMALIZATIONS}")
    views = []
    for X in ds.views:
        if mode != "none":
            X = minmax(X)
        if mode == "minmax+unit-row":
            X = unit_rows(X)
        views.append(X)
    return replace(ds, views=views, normalization=[mode] * ds.n_views,
                   labels=None if ds.labels is None else ds.labels.copy())


def synth_multiview(n_clusters: int = 3, per_cluster: int = 50, n_views: int = 3,
                    sub_dim: int = 4, dims: Sequence[int] = (30, 40, 50),
                    noise: float = 0.01, seed: int = 0, distort: bool = True,
                    center_scale: float = 2.0, latent_dim: Optional[int] = None,
                    name: Optional[str] = None) -> MultiViewDataset:
    """Union-of-subspaces data seen through ``n_views`` nonlinear views.

    Each cluster owns an orthonormal ``sub_dim``-basis in a shared latent
    space.  A sample's coordinates in its cluster's basis are drawn from
    N(mu_k, I) with |mu_k| = ``center_scale``, so points stay inside the
    subspace but concentrate around a cluster direction; ``center_scale=0``
    gives isotropic zero-mean coordinates.  Every view applies its own
    Gaussian linear map, an elementwise tanh (unless ``distort=False``) and
    additive Gaussian noise.
    """
    dims = [int(d) for d in dims]
    if len(dims) != n_views:
        raise DatasetError(f"{n_views} views need {n_views} dims, got {dims}")
    if n_clusters < 1 or per_cluster < 1 or n_views < 2:
        raise DatasetError("need n_clusters >= 1, per_cluster >= 1, n_views >= 2")
    if not 1 <= sub_dim < min(dims):
        raise DatasetError(f"sub_dim must satisfy 1 <= r < min(dims), got r={sub_dim}")
    if noise < 0 or center_scale < 0:
        raise DatasetError("noise and center_scale must be nonnegative")
    latent_dim = latent_dim or min(dims)
    if sub_dim > latent_dim:
        raise DatasetError("sub_dim exceeds latent_dim")
    rng = np.random.default_rng(seed)
    bases = [np.linalg.qr(rng.standard_normal((latent_dim, sub_dim)))[0]
             for _ in range(n_clusters)]
    blocks = []
    for B in bases:
        mu = rng.standard_normal(sub_dim)
        mu *= center_scale / np.linalg.norm(mu)
        blocks.append((mu + rng.standard_normal((per_cluster, sub_dim))) @ B.T)
    latent = np.vstack(blocks)
    labels = np.repeat(np.arange(n_clusters), per_cluster)
    views = []
    for d in dims:
        M = rng.standard_normal((latent_dim, d)) / np.sqrt(latent_dim)
        X = latent @ M
        if distort:
            X = np.tanh(X)
        if noise > 0:
            X = X + noise * rng.standard_normal(X.shape)
        views.append(X)
    name = name or f"synth-c{n_clusters}-v{n_views}-s{seed}"
    return MultiViewDataset(name, views, n_clusters, labels)


def synth_3x3(seed: int = 0) -> MultiViewDataset:
    """The standard desk-scale benchmark: c=3, 150 per cluster, V=3, r=4."""
    return synth_multiview(3, 150, 3, 4, (30, 40, 50), 0.01, seed, name="synth-3x3")
