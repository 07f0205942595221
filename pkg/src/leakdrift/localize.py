"""Leak localization from per-sensor KS p-values and graph-distance quality metrics."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ConnectivityError,
    ContractError,
    NodeReferenceError,
    ShapeError,
    WdnGraph,
    as_matrix,
)
from .distdetect import ks_p_value, ks_statistic


@dataclass(frozen=True)
class DistanceTable:
    source: str
    dist: Mapping[str, float]

    def __getitem__(self, node: str) -> float:
        return self.dist[node]


@dataclass(frozen=True)
class LocalizationResult:
    s_star: str
    v: str
    dist: float
    n_closer: int
    rel_dist: float
    degenerate: bool = False

    def to_record(self, scenario_id=None, size_mm=None) -> dict:
        return {
            "scenario_id": scenario_id,
            "size_mm": size_mm,
            "s_star": self.s_star,
            "v": self.v,
            "dist_m": self.dist,
            "n_closer": self.n_closer,
            "rel_dist": None if self.degenerate else self.rel_dist,
        }


def shortest_paths(graph: WdnGraph, source: str) -> DistanceTable:
    """Dijkstra from ``source`` over pipe lengths; raises if any node is unreachable."""
    adj = graph.adjacency
    if source not in adj:
        raise NodeReferenceError(f"unknown source node {source!r}")
    dist = {source: 0.0}
    done = set()
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in adj[u]:
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    if len(done) != len(graph.nodes):
        missing = next(n for n in graph.nodes if n not in done)
        raise ConnectivityError(f"node {missing!r} unreachable from {source!r}")
    return DistanceTable(source, dist)


def pvalue_map(ref, test) -> np.ndarray:
    """Raw KS p-value of every sensor column, reference window vs test window."""
    a, b = as_matrix(ref), as_matrix(test)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"window widths differ: {a.shape[1]} vs {b.shape[1]}")
    n_a, n_b = a.shape[0], b.shape[0]
    return np.array([ks_p_value(ks_statistic(a[:, j], b[:, j]), n_a, n_b) for j in range(a.shape[1])])


def select_sensor(pmap: Sequence[float] | Mapping[str, float]):
    """Sensor with the smallest p-value; the first one wins on ties.

    Accepts a sequence (returns the index) or a mapping in sensor order (returns the key).
    """
    if isinstance(pmap, Mapping):
        keys = list(pmap)
        return keys[int(np.argmin([pmap[k] for k in keys]))]
    return int(np.argmin(np.asarray(pmap, dtype=float)))


def localization_metrics(graph: WdnGraph, s_star: str, v: str, table: DistanceTable | None = None) -> LocalizationResult:
    if s_star not in graph.sensors:
        raise ContractError(f"selected node {s_star!r} is not a sensor")
    if table is None:
        table = shortest_paths(graph, v)
    elif table.source != v:
        raise ContractError(f"distance table is rooted at {table.source!r}, not {v!r}")
    d_sel = table[s_star]
    d_sensors = np.array([table[s] for s in graph.sensors])
    n_closer = int(np.sum(d_sensors < d_sel))
    d_min = float(d_sensors.min())
    if d_min == 0:
        return LocalizationResult(s_star, v, d_sel, n_closer, math.nan, degenerate=True)
    return LocalizationResult(s_star, v, d_sel, n_closer, d_sel / d_min)
