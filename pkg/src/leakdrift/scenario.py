"""Network topology ingestion, surrogate pressure scenarios with leak injection, and stream files.

The generator stands in for a hydraulic simulator. Each sensor reads

    base + daily profile (damped on weekends) + seasonal cosine + noise - leak response

The daily profile is a sinusoid plus a fixed per-sensor texture that repeats
every day, and the noise is white noise plus a short-memory AR(1) wander.
Without those two extras the lag relevance of an elastic net smears over
neighbouring offsets instead of singling out yesterday and last week.

where the leak response decays as exp(-d / attenuation_length) with the pipe
distance d from the leak and ramps in linearly after onset. The leak-free
stream for a seed is the exact pre-onset part of every leak stream with that
seed, so each scenario carries its own paired baseline.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .core import (
    DAY,
    Edge,
    FormatError,
    LeakScenario,
    NodeReferenceError,
    RangeError,
    SensorStream,
    ShapeError,
    WdnGraph,
)
from .localize import shortest_paths

YEAR = 364 * DAY
NODE_SECTIONS = ("JUNCTIONS", "RESERVOIRS", "TANKS")


# ---------------------------------------------------------------- topology


def parse_inp(text: str) -> WdnGraph:
    """Topology and pipe lengths from EPANET INP text; every other section is ignored."""
    section = None
    nodes: list[str] = []
    pipes: list[tuple[int, list[str]]] = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise FormatError(f"line {lineno}: malformed section header {raw!r}")
            section = line[1:-1].strip().upper()
            seen.add(section)
            continue
        cols = line.split()
        if section in NODE_SECTIONS:
            nodes.append(cols[0])
        elif section == "PIPES":
            pipes.append((lineno, cols))
    if "PIPES" not in seen:
        raise FormatError("no [PIPES] section")
    declared = set(nodes)
    if len(declared) != len(nodes):
        raise FormatError("duplicate node id")
    edges = []
    for lineno, cols in pipes:
        if len(cols) < 4:
            raise FormatError(f"line {lineno}: pipe needs id, two nodes and a length")
        pid, a, b = cols[:3]
        for n in (a, b):
            if n not in declared:
                raise NodeReferenceError(f"line {lineno}: pipe {pid} references undeclared node {n}")
        try:
            length = float(cols[3])
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric length {cols[3]!r}") from None
        if not length > 0:
            raise ValueError(f"line {lineno}: pipe {pid} has non-positive length {length}")
        edges.append(Edge(pid, a, b, length))
    return WdnGraph(tuple(nodes), tuple(edges))


def read_inp(path) -> WdnGraph:
    return parse_inp(Path(path).read_text())


def split_pipe(graph: WdnGraph, edge: str) -> tuple[WdnGraph, str]:
    """Replace ``edge`` by two half-length pipes joined at a new midpoint node."""
    if edge not in graph.edge_index:
        raise NodeReferenceError(f"unknown pipe {edge!r}")
    e = graph.edge_index[edge]
    mid = f"{edge}#mid"
    while mid in graph.adjacency:
        mid += "'"
    half = e.length / 2.0
    edges = []
    for x in graph.edges:
        if x.id == edge:
            edges += [Edge(f"{edge}#a", e.u, mid, half), Edge(f"{edge}#b", mid, e.v, half)]
        else:
            edges.append(x)
    return WdnGraph(graph.nodes + (mid,), tuple(edges), graph.sensors), mid


def place_sensors(graph: WdnGraph, n_sensors: int, start: str | None = None) -> tuple[str, ...]:
    """Greedy farthest-point placement: each new sensor maximises its distance to the chosen ones."""
    if not 1 <= n_sensors <= len(graph.nodes):
        raise ValueError(f"cannot place {n_sensors} sensors on {len(graph.nodes)} nodes")
    chosen = [start if start is not None else graph.nodes[0]]
    nearest = dict(shortest_paths(graph, chosen[0]).dist)
    while len(chosen) < n_sensors:
        nxt = max(graph.nodes, key=lambda n: (nearest[n], n not in chosen))
        chosen.append(nxt)
        for n, d in shortest_paths(graph, nxt).dist.items():
            nearest[n] = min(nearest[n], d)
    return tuple(chosen)


def synthetic_network(rows: int = 15, cols: int = 15, n_sensors: int = 29, seed: int = 0,
                      min_length: float = 50.0, max_length: float = 150.0) -> WdnGraph:
    """Grid network with random pipe lengths and spread-out sensors."""
    rng = np.random.default_rng(seed)
    name = lambda r, c: f"J{r:02d}_{c:02d}"  # noqa: E731
    nodes = tuple(name(r, c) for r in range(rows) for c in range(cols))
    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append(Edge(f"P{len(edges)}", name(r, c), name(r, c + 1), float(rng.uniform(min_length, max_length))))
            if r + 1 < rows:
                edges.append(Edge(f"P{len(edges)}", name(r, c), name(r + 1, c), float(rng.uniform(min_length, max_length))))
    graph = WdnGraph(nodes, tuple(edges))
    return graph.with_sensors(place_sensors(graph, n_sensors))


@lru_cache(maxsize=16)
def median_sensor_distance(graph: WdnGraph) -> float:
    s = graph.sensors
    if len(s) < 2:
        return 1.0
    d = []
    for i, a in enumerate(s[:-1]):
        table = shortest_paths(graph, a).dist
        d += [table[b] for b in s[i + 1:]]
    return float(np.median(d))


# ---------------------------------------------------------------- generator


@dataclass(frozen=True)
class GeneratorConfig:
    n_sensors: int = 29
    days: int = 364
    base_pressure: float | tuple[float, ...] = 50.0
    daily_amplitude: float = 2.0
    weekend_attenuation: float = 0.6
    seasonal_amplitude: float = 0.3
    noise_std: float = 0.3
    leak_magnitude_per_mm: float = 0.05
    attenuation_length: float | None = None
    ramp_samples: int = DAY
    pattern_std: float = 0.5
    fluctuation_std: float = 0.3
    fluctuation_corr: float = 0.8
    master_seed: int = 0

    def __post_init__(self):
        if isinstance(self.base_pressure, (list, tuple)):
            object.__setattr__(self, "base_pressure", tuple(float(b) for b in self.base_pressure))
            if len(self.base_pressure) != self.n_sensors:
                raise ValueError("one base pressure per sensor required")
        for name in ("daily_amplitude", "seasonal_amplitude", "leak_magnitude_per_mm", "pattern_std", "fluctuation_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be > 0")
        if not 0 < self.weekend_attenuation <= 1:
            raise ValueError("weekend_attenuation must lie in (0, 1]")
        if self.attenuation_length is not None and not self.attenuation_length > 0:
            raise ValueError("attenuation_length must be > 0")
        if self.ramp_samples < 0 or self.days < 1 or self.n_sensors < 1:
            raise ValueError("ramp_samples >= 0, days >= 1 and n_sensors >= 1 required")
        if not 0 <= self.fluctuation_corr < 1:
            raise ValueError("fluctuation_corr must lie in [0, 1)")

    @property
    def length(self) -> int:
        return self.days * DAY

    def base_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.base_pressure, dtype=float), (self.n_sensors,)).copy()


@dataclass(frozen=True)
class Leak:
    edge: str
    diameter: float
    onset: int


def weekend_mask(length: int, t0: int = 0) -> np.ndarray:
    """True on days 5 and 6 of every 7-day block (the stream starts on a Monday)."""
    return ((np.arange(t0, t0 + length) // DAY) % 7) >= 5


def _leak_free(graph: WdnGraph, cfg: GeneratorConfig, seed: int) -> np.ndarray:
    n, T = len(graph.sensors), cfg.length
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, n)
    noise = rng.normal(0.0, cfg.noise_std, (T, n))
    t = np.arange(T)
    daily = cfg.daily_amplitude * np.sin(2.0 * np.pi * t[:, None] / DAY + phases[None, :])
    if cfg.pattern_std > 0:
        daily += rng.normal(0.0, cfg.pattern_std, (DAY, n))[t % DAY]
    daily *= np.where(weekend_mask(T), cfg.weekend_attenuation, 1.0)[:, None]
    seasonal = cfg.seasonal_amplitude * np.cos(2.0 * np.pi * t / YEAR)
    x = cfg.base_vector()[None, :] + daily + seasonal[:, None] + noise
    if cfg.fluctuation_std > 0:
        x += np.column_stack([_ar1(rng, T, cfg.fluctuation_corr, cfg.fluctuation_std) for _ in range(n)])
    return x


def _ar1(rng: np.random.Generator, length: int, corr: float, std: float) -> np.ndarray:
    shocks = rng.normal(0.0, std * math.sqrt(1.0 - corr * corr), length)
    shocks[0] = rng.normal(0.0, std)
    return lfilter([1.0], [1.0, -corr], shocks)


def leak_response(graph: WdnGraph, cfg: GeneratorConfig, leak: Leak) -> tuple[str, np.ndarray]:
    """Virtual leak node and the per-sensor steady-state pressure drop (m)."""
    split, node = split_pipe(graph, leak.edge)
    dist = shortest_paths(split, node).dist
    lam = cfg.attenuation_length if cfg.attenuation_length is not None else median_sensor_distance(graph)
    d = np.array([dist[s] for s in graph.sensors])
    return node, leak.diameter * cfg.leak_magnitude_per_mm * np.exp(-d / lam)


def leak_term(length: int, onset: int, ramp: int, drop: np.ndarray) -> np.ndarray:
    t = np.arange(length)
    if ramp > 0:
        r = np.clip((t - onset) / ramp, 0.0, 1.0)
    else:
        r = (t >= onset).astype(float)
    return r[:, None] * drop[None, :]


def _check_graph(graph: WdnGraph, cfg: GeneratorConfig) -> None:
    if len(graph.sensors) != cfg.n_sensors:
        raise ShapeError(f"graph has {len(graph.sensors)} sensors, config expects {cfg.n_sensors}")


def generate_scenario(graph: WdnGraph, cfg: GeneratorConfig, leak: Leak | tuple | None = None,
                      seed: int | None = None) -> LeakScenario:
    _check_graph(graph, cfg)
    seed = cfg.master_seed if seed is None else int(seed)
    if leak is not None and not isinstance(leak, Leak):
        leak = Leak(*leak)
    if leak is not None and not 0 <= leak.onset < cfg.length:
        raise RangeError(f"onset {leak.onset} outside stream of {cfg.length} samples")
    base = _leak_free(graph, cfg, seed)
    baseline_id = f"seed{seed}"
    if leak is None:
        return LeakScenario(SensorStream(base, graph.sensors), None, 0.0, 0, None, seed, baseline_id)
    return inject_leak(LeakScenario(SensorStream(base, graph.sensors), None, 0.0, 0, None, seed, baseline_id),
                       graph, cfg, leak)


def inject_leak(baseline: LeakScenario, graph: WdnGraph, cfg: GeneratorConfig, leak: Leak | tuple) -> LeakScenario:
    """Leak scenario derived from an already generated leak-free one (bitwise equal to generating it)."""
    if not isinstance(leak, Leak):
        leak = Leak(*leak)
    _check_graph(graph, cfg)
    if not 0 <= leak.onset < len(baseline.stream):
        raise RangeError(f"onset {leak.onset} outside stream of {len(baseline.stream)} samples")
    node, drop = leak_response(graph, cfg, leak)
    values = baseline.stream.values - leak_term(len(baseline.stream), leak.onset, cfg.ramp_samples, drop)
    return LeakScenario(baseline.stream.with_values(values), node, float(leak.diameter), leak.onset,
                        leak.edge, baseline.seed, baseline.baseline_id)


# ---------------------------------------------------------------- files


def write_csv(stream: SensorStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *stream.sensor_ids])
        for t, row in zip(stream.t, stream.values):
            w.writerow([int(t), *map(repr, row.tolist())])


def read_csv(path) -> SensorStream:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "t":
        raise FormatError(f"{path}: header must start with 't'")
    ids = rows[0][1:]
    width = len(rows[0])
    body = rows[1:]
    if not body:
        raise FormatError(f"{path}: no samples")
    t = np.empty(len(body), dtype=np.int64)
    values = np.empty((len(body), width - 1))
    for i, row in enumerate(body, start=2):
        if len(row) != width:
            raise FormatError(f"{path}:{i}: expected {width} cells, got {len(row)}")
        try:
            t[i - 2] = int(row[0])
            values[i - 2] = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{i}: {exc}") from None
    if np.any(np.diff(t) != 1):
        raise FormatError(f"{path}: sample index must increase by exactly 1")
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite value")
    try:
        return SensorStream(values, tuple(ids), int(t[0]))
    except ShapeError as exc:
        raise FormatError(f"{path}: {exc}") from None


def scenario_metadata(scenario: LeakScenario, baseline_path: str | None = None) -> dict:
    return {
        "leak_node": scenario.leak_node,
        "diameter_mm": scenario.diameter,
        "onset": scenario.onset,
        "seed": scenario.seed,
        "baseline_path": baseline_path,
    }


def write_metadata(scenario: LeakScenario, path, baseline_path: str | None = None) -> None:
    Path(path).write_text(json.dumps(scenario_metadata(scenario, baseline_path), indent=2, sort_keys=True) + "\n")


def read_scenario(csv_path, meta_path) -> LeakScenario:
    """Load an externally simulated (or previously written) scenario from its CSV and metadata."""
    meta = json.loads(Path(meta_path).read_text())
    missing = {"leak_node", "diameter_mm", "onset", "seed", "baseline_path"} - set(meta)
    if missing:
        raise FormatError(f"{meta_path}: missing keys {sorted(missing)}")
    stream = read_csv(csv_path)
    return LeakScenario(stream, meta["leak_node"], float(meta["diameter_mm"]), int(meta["onset"]) - stream.t0,
                        None, meta["seed"], meta["baseline_path"])
