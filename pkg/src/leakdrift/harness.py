"""Experiment driver: model-loss folds, detector displacement sweeps, localization and ShapeDD curves.

Every study shares one leak-free baseline year. Scenario ``i`` (a pipe and an
onset) is drawn from its own seed derived from ``(master_seed, i)`` and is
injected at every configured leak size, so sizes are compared on identical
locations and noise. Work items are rebuilt from the config inside each worker,
which keeps memory flat and makes results independent of ``--jobs``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import partial
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .core import DAY, WEEK, ConfigError, ContractError, WdnGraph
from .distdetect import d3_score, dawidd_test, ks_feature_wise, mmd_curve, mmd_test, shape_curve
from .localize import localization_metrics, pvalue_map, select_sensor, shortest_paths
from .modelloss import FoldResult, evaluate_fold_grid, fold_starts, per_positive_auc, roc_auc_score
from .preprocess import LagSpec, window_pair
from .scenario import (
    GeneratorConfig,
    Leak,
    generate_scenario,
    inject_leak,
    place_sensors,
    read_inp,
    split_pipe,
    synthetic_network,
    write_csv,
    write_metadata,
)

log = logging.getLogger(__name__)

DETECTORS = ("ks", "mmd", "d3_linear", "d3_knn", "dawidd")
MODEL_KINDS = ("ridge", "poly_ridge", "knn", "elastic_net")
TASKS = ("forecast", "interpolate")
STUDIES = ("modelloss", "dist", "localize", "shape")


# ---------------------------------------------------------------- config


def _default_network() -> dict:
    return {"kind": "grid", "rows": 15, "cols": 15, "seed": 0}


def _default_model_params() -> dict:
    return {"ridge": {"lam": 1.0}, "poly_ridge": {"degree": 2, "lam": 1.0}, "knn": {"k": 5},
            "elastic_net": {"alpha": 0.05, "l1_ratio": 1.0}}


@dataclass(frozen=True)
class ExperimentConfig:
    network: dict = field(default_factory=_default_network)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    sizes: tuple[float, ...] = (7.0, 11.0, 15.0, 19.0)
    leak_edges: str | tuple[str, ...] = "random:20"
    displacements: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6)
    detectors: tuple[str, ...] = DETECTORS
    models: tuple[str, ...] = ("ridge", "poly_ridge", "knn")
    tasks: tuple[str, ...] = TASKS
    model_params: dict = field(default_factory=_default_model_params)
    folds: int = 10
    eval_stride: int = 47
    n_perm: int = 200
    window_days: int = 7
    d3_folds: int = 5
    d3_threshold: float = 0.7
    d3_neighbors: int = 10
    shape_window_days: tuple[int, ...] = (1, 7, 14)
    shape_step_divisor: int = 8
    master_seed: int = 0
    output_dir: str = "results"

    @property
    def window_len(self) -> int:
        return self.window_days * DAY

    @property
    def n_scenarios(self) -> int:
        if isinstance(self.leak_edges, str):
            return int(self.leak_edges.split(":", 1)[1])
        return len(self.leak_edges)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        gen = asdict(self.generator)
        gen.pop("master_seed")
        d["generator"] = gen
        return json.loads(json.dumps(d))

    def hash(self) -> str:
        """Digest of everything that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        if not isinstance(raw, dict):
            raise ConfigError("", "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown key")
        kw: dict[str, Any] = {}
        for key, value in raw.items():
            kw[key] = _PARSERS[key](key, value)
        master = kw.get("master_seed", 0)
        gen = kw.pop("generator", GeneratorConfig())
        try:
            return cls(generator=replace(gen, master_seed=master), **kw)
        except ValueError as exc:
            raise ConfigError("", str(exc)) from None

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"{path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def with_overrides(self, **kw) -> ExperimentConfig:
        """Copy with CLI-style overrides; values go through the same validation as file keys."""
        raw = self.to_dict()
        raw.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.from_dict(raw)


def _int(path: str, v, lo: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}")
    return v


def _num(path: str, v, lo: float | None = None) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}")
    return float(v)


def _list(path: str, v, item: Callable, allowed: Sequence | None = None, unique: bool = True) -> tuple:
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(path, "expected a non-empty list")
    out = tuple(item(f"{path}[{i}]", x) for i, x in enumerate(v))
    if allowed is not None:
        for i, x in enumerate(out):
            if x not in allowed:
                raise ConfigError(f"{path}[{i}]", f"{x!r} not one of {list(allowed)}")
    if unique and len(set(out)) != len(out):
        raise ConfigError(path, "duplicate entries")
    return out


def _str(path: str, v) -> str:
    if not isinstance(v, str):
        raise ConfigError(path, f"expected a string, got {v!r}")
    return v


def _network(path: str, v) -> dict:
    if not isinstance(v, dict):
        raise ConfigError(path, "expected an object")
    kind = v.get("kind")
    allowed = {"grid": {"kind", "rows", "cols", "seed", "min_length", "max_length"},
               "inp": {"kind", "path", "sensors"}}
    if kind not in allowed:
        raise ConfigError(f"{path}.kind", "must be 'grid' or 'inp'")
    for key in v:
        if key not in allowed[kind]:
            raise ConfigError(f"{path}.{key}", "unknown key")
    out = dict(v)
    if kind == "grid":
        for key in ("rows", "cols"):
            if key in v:
                out[key] = _int(f"{path}.{key}", v[key], 2)
        if "seed" in v:
            out["seed"] = _int(f"{path}.seed", v["seed"], 0)
        for key in ("min_length", "max_length"):
            if key in v:
                if not _num(f"{path}.{key}", v[key]) > 0:
                    raise ConfigError(f"{path}.{key}", "must be > 0")
    else:
        if "path" not in v:
            raise ConfigError(f"{path}.path", "required for kind 'inp'")
        _str(f"{path}.path", v["path"])
        if v.get("sensors") is not None:
            out["sensors"] = list(_list(f"{path}.sensors", v["sensors"], _str))
    return out


def _generator(path: str, v) -> GeneratorConfig:
    if not isinstance(v, dict):
        raise ConfigError(path, "expected an object")
    known = {f.name for f in fields(GeneratorConfig)} - {"master_seed"}
    for key in v:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown key" if key != "master_seed" else "set master_seed at top level")
    kw = {}
    for key, x in v.items():
        if key in ("n_sensors", "days", "ramp_samples"):
            kw[key] = _int(f"{path}.{key}", x)
        elif key == "base_pressure":
            kw[key] = _list(f"{path}.{key}", x, _num, unique=False) if isinstance(x, list) else _num(f"{path}.{key}", x)
        elif key == "attenuation_length":
            kw[key] = None if x is None else _num(f"{path}.{key}", x)
        else:
            kw[key] = _num(f"{path}.{key}", x)
    try:
        return GeneratorConfig(**kw)
    except ValueError as exc:
        name = str(exc).split(" ", 1)[0]
        raise ConfigError(f"{path}.{name}" if name in known else path, str(exc)) from None


def _leak_edges(path: str, v):
    if isinstance(v, str):
        head, _, count = v.partition(":")
        if head != "random" or not count.isdigit() or int(count) < 1:
            raise ConfigError(path, "expected 'random:<k>' with k >= 1 or a list of pipe ids")
        return f"random:{int(count)}"
    return _list(path, v, _str, unique=False)


def _model_params(path: str, v) -> dict:
    if not isinstance(v, dict):
        raise ConfigError(path, "expected an object")
    allowed = {"ridge": {"lam"}, "poly_ridge": {"degree", "lam"}, "knn": {"k"},
               "elastic_net": {"alpha", "l1_ratio", "max_iter", "tol"}}
    out = _default_model_params()
    for kind, params in v.items():
        if kind not in allowed:
            raise ConfigError(f"{path}.{kind}", "unknown model kind")
        if not isinstance(params, dict):
            raise ConfigError(f"{path}.{kind}", "expected an object")
        for key, x in params.items():
            if key not in allowed[kind]:
                raise ConfigError(f"{path}.{kind}.{key}", "unknown hyperparameter")
            p = f"{path}.{kind}.{key}"
            out[kind][key] = _int(p, x, 1) if key in ("degree", "k", "max_iter") else _num(p, x, 0.0)
    return out


_PARSERS: dict[str, Callable] = {
    "network": _network,
    "generator": _generator,
    "sizes": lambda p, v: tuple(sorted(_list(p, v, lambda q, x: _num(q, x, 0.0)))),
    "leak_edges": _leak_edges,
    "displacements": lambda p, v: _list(p, v, lambda q, x: _int(q, x, 0)),
    "detectors": lambda p, v: _list(p, v, _str, DETECTORS),
    "models": lambda p, v: _list(p, v, _str, MODEL_KINDS),
    "tasks": lambda p, v: _list(p, v, _str, TASKS),
    "model_params": _model_params,
    "folds": lambda p, v: _int(p, v, 1),
    "eval_stride": lambda p, v: _int(p, v, 1),
    "n_perm": lambda p, v: _int(p, v, 1),
    "window_days": lambda p, v: _int(p, v, 1),
    "d3_folds": lambda p, v: _int(p, v, 2),
    "d3_threshold": lambda p, v: _num(p, v, 0.0),
    "d3_neighbors": lambda p, v: _int(p, v, 1),
    "shape_window_days": lambda p, v: _list(p, v, lambda q, x: _int(q, x, 1)),
    "shape_step_divisor": lambda p, v: _int(p, v, 1),
    "master_seed": lambda p, v: _int(p, v, 0),
    "output_dir": _str,
}


# ---------------------------------------------------------------- scenario plan


def stable_seed(master_seed: int, *keys: int) -> int:
    """32-bit seed that depends only on the master seed and the key path."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class PlannedLeak:
    index: int
    edge: str
    onset: int


@dataclass
class _Context:
    graph: WdnGraph
    baseline: Any
    plan: list[PlannedLeak]


_CONTEXTS: dict[str, _Context] = {}


def build_graph(cfg: ExperimentConfig) -> WdnGraph:
    net = cfg.network
    n = cfg.generator.n_sensors
    if net["kind"] == "grid":
        kw = {k: net[k] for k in ("rows", "cols", "seed", "min_length", "max_length") if k in net}
        if n > kw.get("rows", 15) * kw.get("cols", 15):
            raise ConfigError("generator.n_sensors", "more sensors than grid nodes")
        return synthetic_network(n_sensors=n, **kw)
    try:
        graph = read_inp(net["path"])
    except OSError as exc:
        raise ConfigError("network.path", f"cannot read {net['path']}: {exc.strerror}") from None
    sensors = net.get("sensors")
    if sensors is None:
        sensors = place_sensors(graph, n)
    elif len(sensors) != n:
        raise ConfigError("network.sensors", f"{len(sensors)} sensors listed, generator.n_sensors is {n}")
    return graph.with_sensors(sensors)


def scenario_plan(cfg: ExperimentConfig, graph: WdnGraph) -> list[PlannedLeak]:
    """Pipe and onset of every scenario; scenario ``i`` depends only on ``(master_seed, i)``."""
    length = cfg.generator.length
    lo, hi = 2 * WEEK, length - 2 * WEEK
    if hi <= lo:
        raise ConfigError("generator.days", f"need more than {4 * WEEK // DAY} days to place onsets")
    edges = [e.id for e in graph.edges]
    plan = []
    for i in range(cfg.n_scenarios):
        rng = np.random.default_rng(stable_seed(cfg.master_seed, 1, i))
        onset = int(rng.integers(lo, hi))
        if isinstance(cfg.leak_edges, str):
            edge = edges[int(rng.integers(len(edges)))]
        else:
            edge = cfg.leak_edges[i]
            if edge not in graph.edge_index:
                raise ConfigError(f"leak_edges[{i}]", f"no pipe {edge!r} in the network")
        plan.append(PlannedLeak(i, edge, onset))
    return plan


def _context(cfg: ExperimentConfig) -> _Context:
    key = cfg.hash()
    ctx = _CONTEXTS.get(key)
    if ctx is None:
        graph = build_graph(cfg)
        plan = scenario_plan(cfg, graph)
        baseline = generate_scenario(graph, cfg.generator, None, stable_seed(cfg.master_seed, 0))
        _CONTEXTS.clear()
        ctx = _CONTEXTS[key] = _Context(graph, baseline, plan)
    return ctx


def _leak(cfg: ExperimentConfig, ctx: _Context, p: PlannedLeak, size: float):
    return inject_leak(ctx.baseline, ctx.graph, cfg.generator, Leak(p.edge, size, p.onset))


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Ordered map, in-process or over a process pool."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class SweepResult:
    """Aggregated rows (one per key combination) plus the per-item records they summarise."""

    name: str
    keys: tuple[str, ...]
    value: str
    rows: list[dict]
    records: list[dict]
    warnings: list[dict] = field(default_factory=list)
    extra_files: dict[str, list[dict]] = field(default_factory=dict)

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def row(self, **match) -> dict:
        hits = self.select(**match)
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {match}")
        return hits[0]


def summarize(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"n": 0, "mean": None, "std": None, "median": None}
    return {"n": int(v.size), "mean": float(v.mean()), "std": float(v.std()), "median": float(np.median(v))}


def _group(records: list[dict], keys: Sequence[str]) -> dict[tuple, list[dict]]:
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    return groups


def aggregate(records: list[dict], keys: Sequence[str], value: str, prefix: str | None = None) -> list[dict]:
    """One row per key combination with n and mean/std/median of ``value``."""
    prefix = prefix or value
    rows = []
    for key, group in sorted(_group(records, keys).items()):
        vals = [r[value] for r in group if r[value] is not None]
        s = summarize(vals)
        row = dict(zip(keys, key))
        row["n"] = s["n"]
        row.update({f"{prefix}_{k}": s[k] for k in ("mean", "std", "median")})
        rows.append(row)
    return rows


def check_consistency(sweep: SweepResult, tol: float = 1e-12) -> None:
    """Recompute every aggregate from the records; raise if any written number disagrees."""
    fresh = {tuple(r[k] for k in sweep.keys): r for r in aggregate(sweep.records, sweep.keys, sweep.value)}
    filled = [row for row in sweep.rows if row["n"] > 0]
    if len(fresh) != len(filled):
        raise ContractError(f"{sweep.name}: {len(filled)} non-empty rows but {len(fresh)} record groups")
    for row in filled:
        ref = fresh.get(tuple(row[k] for k in sweep.keys))
        if ref is None or ref["n"] != row["n"]:
            raise ContractError(f"{sweep.name}: row {row} has no matching records")
        for stat in ("mean", "std", "median"):
            a, b = row[f"{sweep.value}_{stat}"], ref[f"{sweep.value}_{stat}"]
            if (a is None) != (b is None) or (a is not None and abs(a - b) > tol):
                raise ContractError(f"{sweep.name}: {sweep.value}_{stat} of {row} does not match its records")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(rows: list[dict], path: Path) -> None:
    cols: list[str] = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")


def write_sweep(sweep: SweepResult, out_dir) -> list[Path]:
    check_consistency(sweep)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"sweep_{sweep.name}.csv", out / f"records_{sweep.name}.json"]
    write_table(sweep.rows, paths[0])
    _dump_json({"records": sweep.records, "warnings": sweep.warnings}, paths[1])
    for name, rows in sorted(sweep.extra_files.items()):
        paths.append(out / name)
        write_table(rows, paths[-1])
    return paths


def write_manifest(cfg: ExperimentConfig, paths: Sequence[Path], out_dir, studies: Sequence[str]) -> Path:
    """Run manifest. Wall time goes to the log, not here, so reruns stay byte-identical."""
    out = Path(out_dir)
    manifest = {
        "tool": "leakdrift",
        "tool_version": __version__,
        "config_hash": cfg.hash(),
        "master_seed": cfg.master_seed,
        "studies": list(studies),
        "config": {k: v for k, v in cfg.to_dict().items() if k != "output_dir"},
        "outputs": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(paths)},
    }
    path = out / "manifest.json"
    _dump_json(manifest, path)
    return path


# ---------------------------------------------------------------- model loss


def _modelloss_item(cfg: ExperimentConfig, fold: int) -> list[FoldResult]:
    ctx = _context(cfg)
    scenarios = (_leak(cfg, ctx, p, size) for p in ctx.plan for size in cfg.sizes)
    combos = [(kind, task) for task in cfg.tasks for kind in cfg.models]
    return evaluate_fold_grid(ctx.baseline.stream, scenarios, combos, fold, LagSpec(), cfg.model_params, cfg.eval_stride)


def run_modelloss(cfg: ExperimentConfig, jobs: int = 1) -> SweepResult:
    """Fold protocol for every model kind and task; AUC and MSE summarised per leak size over folds."""
    ctx = _context(cfg)
    folds = fold_starts(len(ctx.baseline.stream), cfg.folds)
    results = _map(partial(_modelloss_item, cfg), folds, jobs)
    records = []
    for fold_results in results:
        for fr in fold_results:
            for rec in fr.to_records():
                rec["mse_baseline"] = fr.mse_baseline
                records.append(rec)
    keys = ("model", "task", "size_mm")
    rows = aggregate(records, keys, "auc")
    mse = {tuple(r[k] for k in keys): r for r in aggregate(records, keys, "mse")}
    base = {tuple(r[k] for k in keys): r for r in aggregate(records, keys, "mse_baseline")}
    for row in rows:
        k = tuple(row[c] for c in keys)
        row["mse_mean"], row["mse_std"] = mse[k]["mse_mean"], mse[k]["mse_std"]
        row["mse_baseline_mean"] = base[k]["mse_baseline_mean"]
    return SweepResult("modelloss", keys, "auc", rows, records)


# ---------------------------------------------------------------- distribution detectors


def detector_score(name: str, ref, test, cfg: ExperimentConfig, seed: int) -> float:
    """Continuous drift score: 1 - p for the tests, the cross-validated AUC for D3."""
    if name == "ks":
        return 1.0 - ks_feature_wise(ref, test).p_value
    if name == "mmd":
        return 1.0 - mmd_test(ref, test, n_perm=cfg.n_perm, seed=seed).p_value
    if name == "dawidd":
        return 1.0 - dawidd_test(ref, test, n_perm=cfg.n_perm, seed=seed).p_value
    if name in ("d3_linear", "d3_knn"):
        kind = "linear" if name == "d3_linear" else "knn"
        return d3_score(ref, test, kind, cfg.d3_folds, seed, cfg.d3_threshold, cfg.d3_neighbors).statistic
    raise ValueError(f"unknown detector {name!r}")


def _dist_item(cfg: ExperimentConfig, index: int) -> tuple[list[dict], list[dict]]:
    ctx = _context(cfg)
    p = ctx.plan[index]
    W = cfg.window_len
    records, warnings = [], []
    usable = []
    for k, delta in enumerate(cfg.displacements):
        split = p.onset + delta * DAY
        if split < W or split + W > len(ctx.baseline.stream):
            warnings.append({"scenario": index, "delta_days": delta, "split": split,
                             "reason": "window pair outside the stream"})
        else:
            usable.append((k, delta, split))
    negatives = {}
    for k, delta, split in usable:
        seed = stable_seed(cfg.master_seed, 2, index, k)
        ref, test = window_pair(ctx.baseline.stream, split, W)
        negatives[k] = {d: detector_score(d, ref, test, cfg, seed) for d in cfg.detectors}
    for size in cfg.sizes:
        sc = _leak(cfg, ctx, p, size)
        for k, delta, split in usable:
            seed = stable_seed(cfg.master_seed, 2, index, k)
            ref, test = window_pair(sc.stream, split, W)
            for d in cfg.detectors:
                records.append({"scenario": index, "edge": p.edge, "onset": p.onset, "size_mm": size,
                                "delta_days": delta, "split": split, "detector": d,
                                "positive": detector_score(d, ref, test, cfg, seed), "negative": negatives[k][d]})
    return records, warnings


def run_distribution(cfg: ExperimentConfig, jobs: int = 1) -> SweepResult:
    """Week-pair detector scores on leak streams (positives) vs the baseline at the same split (negatives).

    Each record's ``auc`` is the fraction of that (detector, displacement)'s
    negatives its positive outranks, so the mean over scenarios equals the
    pooled ROC-AUC while std and median describe the spread across scenarios.
    """
    ctx = _context(cfg)
    out = _map(partial(_dist_item, cfg), [p.index for p in ctx.plan], jobs)
    records = [r for recs, _ in out for r in recs]
    warnings = [w for _, ws in out for w in ws]
    negatives: dict[tuple, list[float]] = {}
    for r in records:
        if r["size_mm"] == cfg.sizes[0]:
            negatives.setdefault((r["detector"], r["delta_days"]), []).append(r["negative"])
    for (det, delta, size), group in _group(records, ("detector", "delta_days", "size_mm")).items():
        aucs = per_positive_auc(negatives[(det, delta)], [r["positive"] for r in group])
        for r, a in zip(group, aucs):
            r["auc"] = float(a)
    keys = ("detector", "size_mm", "delta_days")
    rows = aggregate(records, keys, "auc")
    groups = _group(records, keys)
    for row in rows:
        group = groups[tuple(row[k] for k in keys)]
        neg = negatives[(row["detector"], row["delta_days"])]
        pos = [r["positive"] for r in group]
        pooled = roc_auc_score(np.r_[np.zeros(len(neg)), np.ones(len(pos))], np.r_[neg, pos])
        if abs(pooled - row["auc_mean"]) > 1e-12:
            raise ContractError(f"per-scenario AUCs of {row} do not average to the pooled AUC {pooled}")
        row["positive_mean"] = float(np.mean(pos))
        row["negative_mean"] = float(np.mean(neg))
    return SweepResult("dist", keys, "auc", rows, records, warnings)


# ---------------------------------------------------------------- localization


def _localize_item(cfg: ExperimentConfig, index: int) -> tuple[list[dict], list[dict]]:
    ctx = _context(cfg)
    p = ctx.plan[index]
    W = cfg.window_len
    if p.onset < W or p.onset + W > len(ctx.baseline.stream):
        return [], [{"scenario": index, "split": p.onset, "reason": "window pair outside the stream"}]
    split_graph, node = split_pipe(ctx.graph, p.edge)
    table = shortest_paths(split_graph, node)
    records = []
    for size in cfg.sizes:
        sc = _leak(cfg, ctx, p, size)
        ref, test = window_pair(sc.stream, p.onset, W)
        s_star = ctx.graph.sensors[select_sensor(pvalue_map(ref, test))]
        res = localization_metrics(split_graph, s_star, node, table)
        records.append(res.to_record(index, size))
    return records, []


def run_localization(cfg: ExperimentConfig, jobs: int = 1) -> SweepResult:
    """Smallest-p sensor at split = onset, scored by Dist., #Cls. and rel.D. per leak size."""
    ctx = _context(cfg)
    out = _map(partial(_localize_item, cfg), [p.index for p in ctx.plan], jobs)
    records = [r for recs, _ in out for r in recs]
    warnings = [w for _, ws in out for w in ws]
    keys = ("size_mm",)
    rows = aggregate(records, keys, "rel_dist")
    for extra in ("dist_m", "n_closer"):
        by = {r["size_mm"]: r for r in aggregate(records, keys, extra)}
        for row in rows:
            row[f"{extra}_mean"] = by[row["size_mm"]][f"{extra}_mean"]
            row[f"{extra}_std"] = by[row["size_mm"]][f"{extra}_std"]
    return SweepResult("localization", keys, "rel_dist", rows, records, warnings)


# ---------------------------------------------------------------- ShapeDD


def _shape_item(cfg: ExperimentConfig, item: tuple[str, int]) -> dict:
    case, days = item
    ctx = _context(cfg)
    gen = cfg.generator
    if case == "seasonal_x2":
        gen = replace(gen, seasonal_amplitude=2.0 * gen.seasonal_amplitude)
    edge = ctx.plan[0].edge
    size = min((s for s in cfg.sizes if s > 0), default=cfg.sizes[-1])
    onset = gen.length // 2
    L = days * DAY
    base = {"case": case, "window_days": days, "onset": onset, "size_mm": size, "edge": edge}
    if 2 * L > gen.length:
        return {**base, "skipped": "stream shorter than two windows"}
    sc = generate_scenario(ctx.graph, gen, Leak(edge, size, onset), stable_seed(cfg.master_seed, 0))
    step = max(1, L // cfg.shape_step_divisor)
    mc = mmd_curve(sc.stream.values, L, step)
    curve = shape_curve(mc.m, max(1, L // step))
    cands = [(int(mc.t[i]), float(m)) for i, m in curve.candidates]
    marked = {i for i, _ in curve.candidates}
    rows = [{"t": int(t), "magnitude": float(m), "shape": float(s), "candidate": int(i in marked)}
            for i, (t, m, s) in enumerate(zip(mc.t, mc.m, curve.shape))]
    return {**base, "step": step, "candidates": cands, "curve": rows}


def weekly_recurrence(times: Sequence[int], tol: int = DAY // 4) -> float | None:
    """Share of candidates (bar the last week's) that have another candidate one week later, within ``tol``."""
    ts = np.sort(np.asarray(times))
    if ts.size < 2:
        return None
    head = ts[ts + WEEK <= ts[-1] + tol]
    if head.size == 0:
        return None
    return float(np.mean([np.any(np.abs(ts - (t + WEEK)) <= tol) for t in head]))


def run_shape_analysis(cfg: ExperimentConfig, window_days: Sequence[int] | None = None, jobs: int = 1) -> SweepResult:
    """Magnitude and shape curves for each window length, on the base stream and with the seasonal trend doubled.

    The scenario is the first planned pipe at the smallest leak size with the
    onset mid-year, where the seasonal cosine is flat.
    """
    days = tuple(window_days or cfg.shape_window_days)
    items = [(case, d) for case in ("base", "seasonal_x2") for d in days]
    out = _map(partial(_shape_item, cfg), items, jobs)
    rows, records, warnings, extra = [], [], [], {}
    for res in out:
        if "skipped" in res:
            warnings.append(res)
            continue
        cands = res["candidates"]
        top = max(cands, key=lambda c: (c[1], -c[0])) if cands else None
        rows.append({
            "case": res["case"], "window_days": res["window_days"], "n": len(cands),
            "magnitude_mean": float(np.mean([m for _, m in cands])) if cands else None,
            "magnitude_std": float(np.std([m for _, m in cands])) if cands else None,
            "magnitude_median": float(np.median([m for _, m in cands])) if cands else None,
            "onset": res["onset"], "top_t": top[0] if top else None,
            "top_offset_days": (top[0] - res["onset"]) / DAY if top else None,
            "top_magnitude": top[1] if top else None,
            "weekly_recurrence": weekly_recurrence([t for t, _ in cands]),
        })
        for t, m in cands:
            records.append({"case": res["case"], "window_days": res["window_days"], "t": t, "magnitude": m,
                            "onset": res["onset"], "size_mm": res["size_mm"], "edge": res["edge"], "step": res["step"]})
        extra[f"curve_shape_{res['case']}_{res['window_days']}d.csv"] = res["curve"]
    return SweepResult("shape", ("case", "window_days"), "magnitude", rows, records, warnings, extra)


# ---------------------------------------------------------------- scenario export and full runs


def generate_files(cfg: ExperimentConfig, out_dir) -> list[Path]:
    """Baseline and every (scenario, size) stream as CSV with metadata JSON next to each."""
    ctx = _context(cfg)
    out = Path(out_dir) / "scenarios"
    out.mkdir(parents=True, exist_ok=True)
    base_csv = out / "baseline.csv"
    write_csv(ctx.baseline.stream, base_csv)
    write_metadata(ctx.baseline, out / "baseline.json", None)
    paths = [base_csv, out / "baseline.json"]
    for p in ctx.plan:
        for size in cfg.sizes:
            stem = f"scenario_{p.index:03d}_{_size_tag(size)}mm"
            sc = _leak(cfg, ctx, p, size)
            write_csv(sc.stream, out / f"{stem}.csv")
            write_metadata(sc, out / f"{stem}.json", base_csv.name)
            paths += [out / f"{stem}.csv", out / f"{stem}.json"]
    return paths


def _size_tag(size: float) -> str:
    return str(int(size)) if float(size).is_integer() else str(size).replace(".", "p")


RUNNERS: dict[str, Callable[..., SweepResult]] = {
    "modelloss": run_modelloss,
    "dist": run_distribution,
    "localize": run_localization,
    "shape": lambda cfg, jobs=1: run_shape_analysis(cfg, jobs=jobs),
}


def run_studies(cfg: ExperimentConfig, studies: Sequence[str], jobs: int = 1, out_dir=None) -> dict[str, SweepResult]:
    """Run the named studies, write their files and the manifest, and return the sweeps."""
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    results, paths = {}, []
    for name in studies:
        if name not in RUNNERS:
            raise ValueError(f"unknown study {name!r}")
        log.info("running %s", name)
        results[name] = RUNNERS[name](cfg, jobs=jobs)
        paths += write_sweep(results[name], out_dir)
    write_manifest(cfg, paths, out_dir, studies)
    return results


__all__ = [
    "DETECTORS", "ExperimentConfig", "PlannedLeak", "SweepResult", "aggregate",
    "build_graph", "check_consistency", "detector_score", "generate_files", "run_distribution",
    "run_localization", "run_modelloss", "run_shape_analysis", "run_studies", "scenario_plan",
    "stable_seed", "summarize", "weekly_recurrence", "write_manifest", "write_sweep",
]
