"""Config-driven generate / train / evaluate / sweep runs behind the CLI.

Configs are TOML (or JSON by extension). Relative paths inside a config are
resolved against the config file's directory. Every run echoes its resolved
settings into a JSON sidecar and writes no timestamps, so reruns with the
same config and seed are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import Dataset, TimeGrid, read_dataset, write_dataset
from .datagen import (GroundTruth, censored_count, generate_centime, generate_classical,
                      round_half_up, write_sidecar)
from .metrics import MetricBundle
from .models import PredictorConfig, load_checkpoint, save_checkpoint
from .training import Objective, TrainConfig, UntrainableError, evaluate, train

DEFAULT_FRACTIONS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_SPLIT = (0.70, 0.15, 0.15)
DEFAULT_METHODS = tuple(o.value for o in Objective)
RESULT_COLUMNS = ("method", "fraction", "repeat", "c_index", "mae", "rae")
SUMMARY_COLUMNS = ("method", "fraction", "n", "c_index_mean", "c_index_sd",
                   "mae_mean", "mae_sd", "rae_mean", "rae_sd")
NA = "NA"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


# --- config loading -------------------------------------------------------------

def load_config(path) -> dict:
    path = Path(path)
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            cfg = json.loads(raw.decode("utf-8"))
        else:
            cfg = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a table")
    cfg["_base"] = str(path.resolve().parent)
    return cfg


def _resolve(cfg: dict, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def _table(cfg: dict, name: str) -> dict:
    t = cfg.get(name, {})
    if not isinstance(t, dict):
        raise ConfigError(f"[{name}] must be a table")
    return t


def _build(factory, kwargs: dict, what: str):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} settings: {exc}") from None


def ground_truth_from(cfg: dict) -> GroundTruth:
    return _build(GroundTruth.from_dict, {"d": _table(cfg, "ground_truth")}, "ground_truth")


def _split_fractions(split) -> tuple[float, float, float]:
    split = tuple(float(v) for v in split)
    if len(split) != 3 or any(v < 0 for v in split) or abs(sum(split) - 1.0) > 1e-9:
        raise ConfigError(f"split must be three non-negative fractions summing to 1, got {split}")
    return split


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return NA
    return repr(float(v))


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items() if not k.startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


# --- data generation -------------------------------------------------------------

@dataclass(frozen=True)
class DataSpec:
    mechanism: str = "centime"
    n: int = 1000
    censored_fraction: float = 0.65

    def __post_init__(self):
        if self.mechanism not in ("centime", "classical"):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.n < 0 or not 0.0 <= self.censored_fraction <= 1.0:
            raise ValueError("n must be >= 0 and censored_fraction in [0, 1]")


def generate_pool(gt: GroundTruth, spec: DataSpec, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    if spec.mechanism == "classical":
        return generate_classical(gt, spec.n, rng)
    n_cens = censored_count(spec.n, spec.censored_fraction)
    return generate_centime(gt, spec.n - n_cens, n_cens, rng)


def split_dataset(ds: Dataset, split, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Random train/val/test split; sizes round half up, the test split takes the rest."""
    n = len(ds)
    perm = np.random.default_rng([seed, 1]).permutation(n)
    n_train = round_half_up(split[0] * n)
    n_val = min(round_half_up(split[1] * n), n - n_train)
    return (ds.subset(perm[:n_train]), ds.subset(perm[n_train:n_train + n_val]),
            ds.subset(perm[n_train + n_val:]))


def run_generate(cfg: dict, out: Path, seed: int | None = None) -> dict[str, Path]:
    """Generate synthetic train/val/test CSVs and a JSON sidecar."""
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    gt = ground_truth_from(cfg)
    spec = _build(DataSpec, _table(cfg, "data"), "data")
    split = _split_fractions(cfg.get("split", DEFAULT_SPLIT))
    pool = generate_pool(gt, spec, seed)
    parts = split_dataset(pool, split, seed)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, part in zip(("train", "val", "test"), parts):
        paths[name] = write_dataset(part, out / f"{name}.csv")
    settings = {"seed": seed, "ground_truth": gt.to_dict(), "data": vars(spec),
                "split": list(split), "rows": {k: len(p) for k, p in zip(paths, parts)}}
    paths["sidecar"] = write_sidecar(out / "generate.json", _json_safe(settings))
    return paths


# --- training / evaluation -------------------------------------------------------------

def train_config_from(table: dict, **overrides) -> TrainConfig:
    kwargs = {**table, **overrides}
    return _build(TrainConfig, kwargs, "train")


def predictor_config_from(table: dict, tcfg: TrainConfig, d: int, t_max: int) -> PredictorConfig:
    # an explicit head that disagrees with the objective fails in training
    kwargs = {"seed": tcfg.seed, "head": tcfg.head, **table, "d": d, "t_max": t_max}
    return _build(PredictorConfig, kwargs, "model")


def _grid(cfg: dict) -> TimeGrid:
    try:
        return TimeGrid(int(_table(cfg, "data").get("t_max", cfg.get("t_max", 156))))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _read(cfg: dict, key: str, grid: TimeGrid) -> Dataset:
    data = _table(cfg, "data")
    if key not in data:
        raise ConfigError(f"[data] needs a {key!r} path")
    return read_dataset(_resolve(cfg, data[key]), grid)


def run_train(cfg: dict, out: Path, seed: int | None = None) -> dict[str, Path]:
    """Train one model; writes a checkpoint and the per-epoch log."""
    grid = _grid(cfg)
    train_ds = _read(cfg, "train", grid)
    val_ds = _read(cfg, "val", grid)
    overrides = {} if seed is None else {"seed": seed}
    tcfg = train_config_from(_table(cfg, "train"), **overrides)
    pcfg = predictor_config_from(_table(cfg, "model"), tcfg, train_ds.d, grid.t_max)
    params, trainlog = train(tcfg, train_ds, val_ds, pcfg)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(out / "model.ckpt", pcfg, params, meta={"train": tcfg.to_dict()})
    log_path = out / "train_log.csv"
    log_path.write_text(trainlog.to_csv(), encoding="utf-8")
    sidecar = write_sidecar(out / "train.json", _json_safe({
        "train": tcfg.to_dict(), "model": pcfg.to_dict(),
        "best_epoch": trainlog.best_epoch, "epochs_run": len(trainlog.records),
        "stopped_early": trainlog.stopped_early,
    }))
    return {"checkpoint": ckpt, "log": log_path, "sidecar": sidecar}


def run_evaluate(cfg: dict, out: Path, seed: int | None = None) -> dict[str, Path]:
    """Score a checkpoint on a dataset (loss, C-Index, MAE, RAE)."""
    grid = _grid(cfg)
    if "checkpoint" not in cfg:
        raise ConfigError("evaluate config needs a 'checkpoint' path")
    pcfg, params, meta = load_checkpoint(_resolve(cfg, cfg["checkpoint"]))
    tcfg = train_config_from({**meta.get("train", {}), **_table(cfg, "train")})
    ds = _read(cfg, "test", grid)
    data = _table(cfg, "data")
    baseline = read_dataset(_resolve(cfg, data["baseline"]), grid) if "baseline" in data else None
    value, bundle = evaluate(params, pcfg, ds, tcfg, baseline=baseline,
                             point=cfg.get("point", "mean"))
    out.mkdir(parents=True, exist_ok=True)
    path = write_sidecar(out / "evaluation.json",
                         _json_safe({"objective": tcfg.objective.value, "loss": value,
                                     **bundle.to_dict()}))
    return {"evaluation": path}


# --- sweep ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    ground_truth: GroundTruth = field(default_factory=GroundTruth)
    data: DataSpec = field(default_factory=DataSpec)
    methods: tuple[str, ...] = DEFAULT_METHODS
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    n_repeats: int = 5
    seeds: tuple[int, ...] = ()
    split: tuple[float, float, float] = DEFAULT_SPLIT
    seed: int = 0
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    point: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(Objective(m).value for m in self.methods))
        fr = tuple(float(f) for f in self.fractions)
        if any(not 0.0 <= f <= 1.0 for f in fr) or list(fr) != sorted(fr):
            raise ValueError("fractions must lie in [0, 1] and be sorted ascending")
        object.__setattr__(self, "fractions", fr)
        object.__setattr__(self, "split", _split_fractions(self.split))
        seeds = tuple(int(s) for s in self.seeds) or tuple(
            self.seed + r for r in range(self.n_repeats))
        if len(seeds) != self.n_repeats:
            raise ValueError("need exactly one seed per repeat")
        object.__setattr__(self, "seeds", seeds)

    def train_config(self, method: str, repeat: int) -> TrainConfig:
        shared = {k: v for k, v in self.train.items() if not isinstance(v, dict)}
        per_method = self.train.get(method, {})
        return train_config_from({**shared, **per_method}, objective=method,
                                 seed=self.seeds[repeat])

    def to_dict(self) -> dict:
        return {"ground_truth": self.ground_truth.to_dict(), "data": vars(self.data),
                "methods": list(self.methods), "fractions": list(self.fractions),
                "n_repeats": self.n_repeats, "seeds": list(self.seeds),
                "split": list(self.split), "seed": self.seed, "train": self.train,
                "model": self.model, "point": self.point}


def experiment_spec_from(cfg: dict, seed: int | None = None) -> ExperimentSpec:
    kwargs = {k: cfg[k] for k in ("methods", "fractions", "n_repeats", "seeds", "split",
                                  "point") if k in cfg}
    kwargs["seed"] = int(cfg.get("seed", 0) if seed is None else seed)
    if seed is not None:
        kwargs.pop("seeds", None)
    kwargs["ground_truth"] = ground_truth_from(cfg)
    kwargs["data"] = _build(DataSpec, _table(cfg, "data"), "data")
    kwargs["train"] = _table(cfg, "train")
    kwargs["model"] = _table(cfg, "model")
    return _build(ExperimentSpec, kwargs, "sweep")


@dataclass(frozen=True)
class RepeatData:
    train: Dataset
    val: Dataset
    test: Dataset
    uncensored_order: np.ndarray


def repeat_data(spec: ExperimentSpec, repeat: int, pool: Dataset | None = None) -> RepeatData:
    """Split for one repeat plus the nested subsampling order of its uncensored rows."""
    if pool is None:
        pool = generate_pool(spec.ground_truth, spec.data, spec.seed)
    seed = spec.seeds[repeat]
    tr, va, te = split_dataset(pool, spec.split, seed)
    unc = np.flatnonzero(tr.uncensored)
    order = unc[np.random.default_rng([seed, 2]).permutation(unc.size)]
    return RepeatData(tr, va, te, order)


def subsample_uncensored(rd: RepeatData, fraction: float) -> Dataset:
    """All censored training rows plus the first ``fraction`` of the uncensored order."""
    k = round_half_up(fraction * rd.uncensored_order.size)
    keep = np.zeros(len(rd.train), dtype=bool)
    keep[~rd.train.uncensored] = True
    keep[rd.uncensored_order[:k]] = True
    return rd.train.subset(np.flatnonzero(keep))


@dataclass(frozen=True)
class CellResult:
    method: str
    fraction: float
    repeat: int
    metrics: MetricBundle | None

    def row(self) -> list[str]:
        m = self.metrics
        vals = (m.c_index, m.mae, m.rae) if m is not None else (None, None, None)
        return [self.method, _fmt(self.fraction), str(self.repeat)] + [_fmt(v) for v in vals]


def run_cell(spec: ExperimentSpec, method: str, fraction: float, repeat: int,
             rd: RepeatData | None = None) -> CellResult:
    rd = rd or repeat_data(spec, repeat)
    tr = subsample_uncensored(rd, fraction)
    tcfg = spec.train_config(method, repeat)
    pcfg = predictor_config_from(spec.model, tcfg, tr.d, tr.grid.t_max)
    try:
        params, _ = train(tcfg, tr, rd.val, pcfg)
    except UntrainableError:
        return CellResult(method, fraction, repeat, None)
    _, bundle = evaluate(params, pcfg, rd.test, tcfg, baseline=tr, point=spec.point)
    return CellResult(method, fraction, repeat, bundle)


def _run_repeat(spec: ExperimentSpec, repeat: int) -> list[CellResult]:
    rd = repeat_data(spec, repeat)
    return [run_cell(spec, m, f, repeat, rd) for m in spec.methods for f in spec.fractions]


def sweep_results(spec: ExperimentSpec, workers: int | None = None) -> list[CellResult]:
    """All cells, ordered by (method, fraction, repeat) regardless of scheduling."""
    workers = workers or int(os.environ.get("CENSURV_THREADS", "1") or 1)
    repeats = range(spec.n_repeats)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_repeat, [spec] * spec.n_repeats, repeats))
    else:
        chunks = [_run_repeat(spec, r) for r in repeats]
    cells = [c for chunk in chunks for c in chunk]
    m_index = {m: k for k, m in enumerate(spec.methods)}
    return sorted(cells, key=lambda c: (m_index[c.method], c.fraction, c.repeat))


def results_csv(cells: list[CellResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for c in cells:
        w.writerow(c.row())
    return buf.getvalue()


def _parse(v: str) -> float:
    return math.nan if v == NA else float(v)


def read_results(text: str) -> list[dict]:
    """Parse a results or summary CSV back into dicts, ``NA`` as ``nan``."""
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append({k: (v if k == "method" else _parse(v)) for k, v in rec.items()})
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and sample SD per (method, fraction) over defined values."""
    groups: dict[tuple[str, float], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["method"], float(r["fraction"])), []).append(r)
    out = []
    for (method, fraction), rs in groups.items():
        rec = {"method": method, "fraction": fraction, "n": len(rs)}
        for metric in ("c_index", "mae", "rae"):
            vals = np.array([r[metric] for r in rs], dtype=float)
            vals = vals[np.isfinite(vals)]
            rec[f"{metric}_mean"] = float(np.mean(vals)) if vals.size else math.nan
            rec[f"{metric}_sd"] = float(np.std(vals, ddof=1)) if vals.size > 1 else math.nan
        out.append(rec)
    return out


def summary_csv(summary: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summary:
        w.writerow([s["method"], _fmt(s["fraction"]), str(s["n"])]
                   + [_fmt(s[c]) for c in SUMMARY_COLUMNS[3:]])
    return buf.getvalue()


def run_sweep(cfg: dict, out: Path, seed: int | None = None) -> dict[str, Path]:
    """Limited-uncensored-data sweep over methods, fractions and repeats."""
    spec = experiment_spec_from(cfg, seed)
    cells = sweep_results(spec)
    out.mkdir(parents=True, exist_ok=True)
    raw = results_csv(cells)
    results = out / "sweep.csv"
    results.write_text(raw, encoding="utf-8")
    summary = out / "sweep_summary.csv"
    summary.write_text(summary_csv(summarize(read_results(raw))), encoding="utf-8")
    sidecar = write_sidecar(out / "sweep.json", _json_safe(spec.to_dict()))
    return {"results": results, "summary": summary, "sidecar": sidecar}
