"""Command-line front end.

    scmc synth    --out DIR [generator flags]
    scmc pretrain --config CFG [overrides]
    scmc train    --config CFG [overrides]
    scmc cluster  --affinity A.bin --clusters C [--seed S] --out labels.txt
    scmc eval     --pred labels.txt --truth labels.txt [--json out.json]
    scmc ablate   --config CFG [overrides]
    scmc sweep    --config CFG [overrides]

Exit status: 0 on success, 2 for usage or input errors, 1 for runtime failures.
The default output root is ``$SCMC_OUTPUT_ROOT`` (``./runs`` when unset).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .data import (NORMALIZATIONS, DatasetError, load_dataset, normalize, read_labels,
                   read_matrix_bin, save_dataset, synth_multiview, write_labels,
                   write_matrix_bin)
from .losses import TERMS, Hyperparams, normalize_mask
from .metrics import (METRIC_NAMES, NMI_VARIANTS, MetricInputError, evaluate,
                      table_header, table_row)
from .model import ARCHITECTURES, load_checkpoint, save_checkpoint
from .pipeline import ABLATION_MASKS, assign, mask_label
from .spectral import LAPLACIANS, kmeans, spectral_clustering
from .trainer import STREAM_KMEANS, AdamState, fit, stream, train

log = logging.getLogger("scmc")

OUTPUT_ROOT_ENV = "SCMC_OUTPUT_ROOT"
LOSS_COLUMNS = ("epoch", "L_Re", "L_Sub", "L_Con", "L_Fu", "L_total")
GRID_KEYS = ("gamma1", "gamma2", "gamma3")


class ConfigError(ValueError):
    pass


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or "runs")


@dataclass
class RunConfig:
    dataset: str = ""
    arch: str = "wide"
    hidden: Optional[List[int]] = None
    hyper: Hyperparams = field(default_factory=Hyperparams)
    repeat: int = 1
    output: Optional[str] = None
    normalization: str = "minmax"
    nmi_variant: str = "geometric"
    laplacian: str = "sym"
    mask: List[str] = field(default_factory=lambda: list(TERMS))
    grid: Dict[str, List[float]] = field(default_factory=dict)
    init_checkpoint: Optional[str] = None
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            d["hyper"] = Hyperparams.from_dict(d.get("hyper") or {})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"hyper: {exc}") from None
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyper"] = self.hyper.to_dict()
        return d

    def validate(self) -> "RunConfig":
        if not self.dataset:
            raise ConfigError("no dataset given")
        if self.arch not in ARCHITECTURES and self.hidden is None:
            raise ConfigError(f"unknown arch {self.arch!r}; choose from {sorted(ARCHITECTURES)}")
        if self.hidden is not None:
            if len(self.hidden) != 2 or any(int(h) < 1 for h in self.hidden):
                raise ConfigError(f"hidden must be two positive widths, got {self.hidden}")
            self.hidden = [int(h) for h in self.hidden]
        if int(self.repeat) < 1:
            raise ConfigError(f"repeat must be >= 1, got {self.repeat}")
        if int(self.workers) < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}")
        if self.nmi_variant not in NMI_VARIANTS:
            raise ConfigError(f"nmi_variant must be one of {NMI_VARIANTS}")
        if self.laplacian not in LAPLACIANS:
            raise ConfigError(f"laplacian must be one of {LAPLACIANS}")
        try:
            self.mask = [t for t in TERMS if t in normalize_mask(self.mask)]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not isinstance(self.grid, dict):
            raise ConfigError("grid must map gamma names to value lists")
        bad = set(self.grid) - set(GRID_KEYS)
        if bad:
            raise ConfigError(f"unknown grid keys: {sorted(bad)}")
        for key, values in self.grid.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid.{key} must be a nonempty list")
            if any(not float(x) >= 0 for x in values):
                raise ConfigError(f"grid.{key} values must be nonnegative")
        return self


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None


def build_config(args) -> RunConfig:
    d = load_config(args.config)
    hyper = dict(d.get("hyper") or {})
    for flag, key in (("seed", "seed"), ("epochs", "train_epochs"),
                      ("pretrain_epochs", "pretrain_epochs"), ("lr", "learning_rate"),
                      ("gamma1", "gamma1"), ("gamma2", "gamma2"), ("gamma3", "gamma3"),
                      ("tau", "tau")):
        value = getattr(args, flag, None)
        if value is not None:
            hyper[key] = value
    d["hyper"] = hyper
    for flag in ("dataset", "arch", "repeat", "output", "normalization", "nmi_variant",
                 "laplacian", "init_checkpoint", "workers"):
        value = getattr(args, flag, None)
        if value is not None:
            d[flag] = value
    if getattr(args, "mask", None):
        d["mask"] = args.mask.split(",")
    return RunConfig.from_dict(d)


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _write_loss_csv(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for e, b in enumerate(history, 1):
            w.writerow([e, *(repr(x) for x in b.as_row())])


def _load(cfg: RunConfig):
    ds = load_dataset(cfg.dataset)
    return normalize(ds, cfg.normalization)


def _output_dir(cfg: RunConfig, command: str, ds_name: str) -> Path:
    return Path(cfg.output) if cfg.output else default_output_root() / f"{ds_name}-{command}"


def run_single(cfg_dict: dict, run_dir: str) -> dict:
    """Pretrain, train, cluster and score one seed; populate ``run_dir``.

    ``cfg_dict`` must describe exactly one run (``repeat == 1``).  Returns the
    metric dict (empty when the dataset has no labels).
    """
    cfg = RunConfig.from_dict(cfg_dict)
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = _load(cfg)
    _write_json(out / "config.json", cfg.to_dict())
    if cfg.init_checkpoint:
        model, _, _ = load_checkpoint(cfg.init_checkpoint)
        if list(model.dims) != ds.dims or model.n_samples != ds.n_samples:
            raise DatasetError(f"{cfg.init_checkpoint} does not match dataset {cfg.dataset}")
        report = train(model, ds.views, cfg.hyper, mask=cfg.mask)
    else:
        model, report = fit(ds.views, ds.n_clusters, cfg.hyper, arch=cfg.arch,
                            hidden=cfg.hidden, mask=cfg.mask)
    labels = assign(report, ds.n_clusters, cfg.hyper.seed, cfg.laplacian)

    _write_loss_csv(out / "loss.csv", report.history)
    with open(out / "timing.csv", "w") as fh:
        fh.write("epoch,seconds\n")
        fh.writelines(f"{e},{s:.6f}\n" for e, s in enumerate(report.epoch_seconds, 1))
    if report.pretrain_history:
        with open(out / "pretrain_loss.csv", "w") as fh:
            fh.write("epoch,L_Re\n")
            fh.writelines(f"{e},{x!r}\n" for e, x in enumerate(report.pretrain_history, 1))
    save_checkpoint(model, out / "checkpoint.npz", extra=report.adam_state.to_arrays(),
                    meta={"seed": cfg.hyper.seed, "mask": cfg.mask})
    files = ["config.json", "loss.csv", "checkpoint.npz", "labels.txt"]
    if report.A is not None:
        write_matrix_bin(out / "affinity.bin", report.A)
        files.append("affinity.bin")
    write_matrix_bin(out / "embedding.bin", report.embedding)
    files.append("embedding.bin")
    write_labels(out / "labels.txt", labels)
    metrics = {}
    if ds.labels is not None:
        rep = evaluate(labels, ds.labels, cfg.nmi_variant)
        metrics = rep.as_dict()
        (out / "metrics.json").write_text(rep.to_json() + "\n")
        files.append("metrics.json")
    manifest = {
        "tool": "scmc", "version": __version__, "dataset": cfg.dataset, "name": ds.name,
        "N": ds.n_samples, "V": ds.n_views, "c": ds.n_clusters, "dims": ds.dims,
        "seed": cfg.hyper.seed, "mask": cfg.mask, "epochs": len(report.history),
        "pretrain_epochs": len(report.pretrain_history),
        "final_loss": report.history[-1].as_row()[-1] if report.history else None,
        "view_weights": report.weights.ravel().tolist(),
        "clustering": "kmeans-embedding" if report.embedding_only else f"spectral-{cfg.laplacian}",
        "metrics": metrics,
        "files": {name: _sha256(out / name) for name in sorted(files)},
    }
    _write_json(out / "manifest.json", manifest)
    return metrics


def _seed_configs(cfg: RunConfig) -> List[dict]:
    out = []
    for r in range(cfg.repeat):
        d = cfg.to_dict()
        d["repeat"] = 1
        d["output"] = None
        d["grid"] = {}
        d["workers"] = 1
        d["hyper"]["seed"] = cfg.hyper.seed + r
        out.append(d)
    return out


def _execute(jobs: Sequence[tuple], workers: int) -> List[dict]:
    if workers <= 1 or len(jobs) <= 1:
        return [run_single(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_single, *zip(*jobs)))


def summarize(metrics: Sequence[dict]) -> dict:
    metrics = [m for m in metrics if m]
    if not metrics:
        return {"runs": 0}
    arr = np.array([[m[k] for k in METRIC_NAMES] for m in metrics])
    return {"runs": len(metrics),
            "mean": dict(zip(METRIC_NAMES, arr.mean(axis=0).tolist())),
            "std": dict(zip(METRIC_NAMES, arr.std(axis=0).tolist())),
            "per_run": metrics}


def _repeat_runs(cfg: RunConfig, out: Path) -> dict:
    jobs = [(d, str(out / f"run-{r:02d}")) for r, d in enumerate(_seed_configs(cfg))]
    summary = summarize(_execute(jobs, cfg.workers))
    _write_json(out / "summary.json", summary)
    return summary


def _summary_row(summary: dict, label: str) -> str:
    if not summary.get("runs"):
        return f"{label}: no ground-truth labels, metrics skipped"
    mean = [summary["mean"][k] for k in METRIC_NAMES]
    std = [summary["std"][k] for k in METRIC_NAMES] if summary["runs"] > 1 else None
    return table_row(mean, label, std=std)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    dims = [int(x) for x in args.dims.split(",")]
    ds = synth_multiview(args.clusters, args.per_cluster, args.views, args.sub_dim, dims,
                         args.noise, args.seed, distort=not args.no_distort,
                         center_scale=args.center_scale, name=args.name)
    root = save_dataset(ds, args.out, args.format)
    print(f"wrote {ds.name}: N={ds.n_samples} V={ds.n_views} c={ds.n_clusters} "
          f"dims={ds.dims} -> {root}")
    return 0


def cmd_pretrain(args) -> int:
    from .model import init_model
    from .trainer import STREAM_INIT, pretrain

    cfg = build_config(args)
    ds = _load(cfg)
    out = _output_dir(cfg, "pretrain", ds.name)
    out.mkdir(parents=True, exist_ok=True)
    model = init_model(ds.dims, ds.n_samples, ds.n_clusters, stream(cfg.hyper.seed, STREAM_INIT),
                       arch=cfg.arch, hidden=cfg.hidden)
    history = pretrain(model, ds.views, cfg.hyper)
    save_checkpoint(model, out / "pretrained.npz", meta={"seed": cfg.hyper.seed, "pretrained": True})
    with open(out / "pretrain_loss.csv", "w") as fh:
        fh.write("epoch,L_Re\n")
        fh.writelines(f"{e},{x!r}\n" for e, x in enumerate(history, 1))
    _write_json(out / "config.json", cfg.to_dict())
    print(f"pretrained {len(history)} epochs, L_Re {history[0]:.4g} -> {history[-1]:.4g}"
          if history else "pretrain_epochs=0, wrote initial parameters")
    print(out / "pretrained.npz")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    ds_name = load_dataset(cfg.dataset).name
    out = _output_dir(cfg, "train", ds_name)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    summary = _repeat_runs(cfg, out)
    print(table_header())
    print(_summary_row(summary, "SCMC"))
    print(out)
    return 0


def cmd_cluster(args) -> int:
    seed = stream(args.seed, STREAM_KMEANS)
    if args.affinity:
        A = read_matrix_bin(args.affinity)
        labels = spectral_clustering(A, args.clusters, seed=seed, laplacian=args.laplacian).labels
    else:
        H = read_matrix_bin(args.embedding)
        labels = kmeans(H, args.clusters, seed=seed).labels
    if args.out:
        write_labels(args.out, labels)
    else:
        sys.stdout.write("".join(f"{x}\n" for x in labels))
    return 0


def format_eval(report, label: str = "SCMC") -> str:
    return table_header() + "\n" + table_row(report.values(), label)


def cmd_eval(args) -> int:
    pred = read_labels(args.pred)
    truth = read_labels(args.truth)
    if pred.size != truth.size:
        raise MetricInputError(f"{args.pred} has {pred.size} labels, {args.truth} has {truth.size}")
    report = evaluate(pred, truth, args.nmi_variant)
    print(format_eval(report, args.label))
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")
    return 0


def _arrow(value: float, base: float) -> str:
    if value > base:
        return "↑"
    if value < base:
        return "↓"
    return "="


def ablation_table(rows: Sequence[tuple]) -> List[List[str]]:
    """``rows``: (label, {ACC, NMI, Purity}) in mask order; the first row is the
    baseline and shows ``--``; later cells carry an arrow relative to it."""
    base = rows[0][1]
    out = []
    for i, (label, m) in enumerate(rows):
        cells = [label]
        for k in ("ACC", "NMI", "Purity"):
            mark = "--" if i == 0 else _arrow(m[k], base[k])
            cells.append(f"{100 * m[k]:.2f} {mark}")
        out.append(cells)
    return out


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    ds_name = load_dataset(cfg.dataset).name
    out = _output_dir(cfg, "ablate", ds_name)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    rows, per_seed = [], {}
    for mask in ABLATION_MASKS:
        sub = RunConfig.from_dict({**cfg.to_dict(), "mask": list(mask)})
        slug = "_".join(mask)
        summary = _repeat_runs(sub, out / slug)
        if not summary.get("runs"):
            raise DatasetError("ablation needs ground-truth labels")
        rows.append((mask_label(mask), summary["mean"]))
        per_seed[slug] = [m["ACC"] for m in summary["per_run"]]
    table = ablation_table(rows)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Loss", "ACC", "NMI", "Purity"])
        w.writerows(table)
    _write_json(out / "ablation.json", {"rows": [dict(zip(["Loss", "ACC", "NMI", "Purity"], r))
                                                  for r in table],
                                         "acc_per_seed": per_seed})
    width = max(len(r[0]) for r in table) + 2
    print(f"{'Loss':<{width}}" + "".join(f"{k:>12}" for k in ("ACC", "NMI", "Purity")))
    for r in table:
        print(f"{r[0]:<{width}}" + "".join(f"{c:>12}" for c in r[1:]))
    print(out)
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    grid = {k: [float(x) for x in cfg.grid.get(k, [getattr(cfg.hyper, k)])] for k in GRID_KEYS}
    ds_name = load_dataset(cfg.dataset).name
    out = _output_dir(cfg, "sweep", ds_name)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    header = list(GRID_KEYS) + [f"{k}_mean" for k in METRIC_NAMES] + [f"{k}_std" for k in METRIC_NAMES]
    header += ["final_loss_mean"]
    rows = []
    for g1, g2, g3 in itertools.product(grid["gamma1"], grid["gamma2"], grid["gamma3"]):
        d = cfg.to_dict()
        d["hyper"].update(gamma1=g1, gamma2=g2, gamma3=g3)
        d["grid"] = {}
        cell = RunConfig.from_dict(d)
        cell_dir = out / f"g1={g1:g}_g2={g2:g}_g3={g3:g}"
        summary = _repeat_runs(cell, cell_dir)
        finals = [json.loads((cell_dir / f"run-{r:02d}" / "manifest.json").read_text())["final_loss"]
                  for r in range(cell.repeat)]
        if summary.get("runs"):
            stats = [summary["mean"][k] for k in METRIC_NAMES] + [summary["std"][k] for k in METRIC_NAMES]
        else:
            stats = [float("nan")] * (2 * len(METRIC_NAMES))
        rows.append([g1, g2, g3, *stats, float(np.mean(finals))])
        log.info("sweep cell g1=%g g2=%g g3=%g done", g1, g2, g3)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows([[repr(float(x)) for x in r] for r in rows])
    print(f"{len(rows)} cells -> {out / 'sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    pass


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags below override it")
    p.add_argument("--dataset", help="dataset directory (with manifest.json)")
    p.add_argument("--out", dest="output", help="output directory")
    p.add_argument("--arch", choices=sorted(ARCHITECTURES))
    p.add_argument("--repeat", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, help="joint training epochs")
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--gamma3", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--mask", help="comma-separated loss terms, e.g. Re,Sub")
    p.add_argument("--normalization", choices=NORMALIZATIONS)
    p.add_argument("--nmi-variant", choices=NMI_VARIANTS)
    p.add_argument("--laplacian", choices=LAPLACIANS)
    p.add_argument("--init-checkpoint", help="start joint training from this checkpoint")
    p.add_argument("--workers", type=int, help="process pool size for repeats")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scmc", description="Multi-view subspace-contrastive clustering")
    parser.add_argument("--version", action="version", version=f"scmc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic union-of-subspaces dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--per-cluster", type=int, default=150)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--sub-dim", type=int, default=4)
    p.add_argument("--dims", default="30,40,50")
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--center-scale", type=float, default=2.0)
    p.add_argument("--no-distort", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="synth-3x3")
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.set_defaults(func=cmd_synth)

    for name, func, text in (("pretrain", cmd_pretrain, "reconstruction-only pretraining"),
                             ("train", cmd_train, "pretrain, train, cluster and score"),
                             ("ablate", cmd_ablate, "run the five loss-mask ablations"),
                             ("sweep", cmd_sweep, "grid over gamma1 x gamma2 x gamma3")):
        p = sub.add_parser(name, help=text)
        _run_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("cluster", help="spectral clustering of a saved affinity")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--affinity", help="affinity matrix (.bin)")
    src.add_argument("--embedding", help="embedding matrix (.bin), clustered by k-means")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--laplacian", choices=LAPLACIANS, default="sym")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--nmi-variant", choices=NMI_VARIANTS, default="geometric")
    p.add_argument("--label", default="SCMC")
    p.add_argument("--json")
    p.set_defaults(func=cmd_eval)
    return parser


INPUT_ERRORS = (UsageError, FileNotFoundError, ValueError, KeyError, json.JSONDecodeError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"scmc: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"scmc: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: training blew up, solver diverged, ...
        print(f"scmc: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
