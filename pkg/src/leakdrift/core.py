"""Shared domain types: pressure streams, windows, the pipe network and leak scenarios."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import timedelta
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

DAY = 96
WEEK = 7 * DAY
SAMPLE_INTERVAL = timedelta(minutes=15)


class LeakDriftError(Exception):
    """Base class for all errors raised by this package."""


class RangeError(LeakDriftError, IndexError):
    pass


class SizeError(LeakDriftError, ValueError):
    pass


class ShapeError(LeakDriftError, ValueError):
    pass


class FormatError(LeakDriftError, ValueError):
    pass


class NodeReferenceError(LeakDriftError, KeyError):
    pass


class ConnectivityError(LeakDriftError, ValueError):
    pass


class ContractError(LeakDriftError, ValueError):
    pass


class CapacityError(LeakDriftError, ValueError):
    pass


class NumericalError(LeakDriftError, ArithmeticError):
    pass


class UndefinedMetricError(LeakDriftError, ValueError):
    pass


class ConfigError(LeakDriftError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field (e.g. ``generator.noise_std``)."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class SensorFrame:
    t: int
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class SensorStream:
    """Uniformly sampled multivariate pressure series.

    ``values`` has shape (length, n_sensors) and is stored read-only. ``t0`` is
    the sample index of the first row; all index arithmetic is in samples.
    """

    values: np.ndarray
    sensor_ids: tuple[str, ...]
    t0: int = 0
    sample_interval: timedelta = SAMPLE_INTERVAL

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ShapeError(f"stream values must be 2-D, got shape {values.shape}")
        ids = tuple(str(s) for s in self.sensor_ids)
        if len(ids) != values.shape[1]:
            raise ShapeError(f"{len(ids)} sensor ids for {values.shape[1]} columns")
        if len(set(ids)) != len(ids):
            raise ShapeError("sensor ids must be distinct")
        if not np.all(np.isfinite(values)):
            raise ValueError("stream contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sensor_ids", ids)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SensorStream):
            return NotImplemented
        return (
            self.sensor_ids == other.sensor_ids
            and self.t0 == other.t0
            and self.sample_interval == other.sample_interval
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    @property
    def n_sensors(self) -> int:
        return self.values.shape[1]

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + len(self))

    @property
    def frames(self) -> Iterator[SensorFrame]:
        for i, row in enumerate(self.values):
            yield SensorFrame(self.t0 + i, row)

    def with_values(self, values: np.ndarray, t0: int | None = None) -> SensorStream:
        return SensorStream(values, self.sensor_ids, self.t0 if t0 is None else t0, self.sample_interval)


@dataclass(frozen=True)
class Window:
    """A contiguous run of ``len`` rows of a stream starting at row ``start``."""

    stream: SensorStream
    start: int
    len: int

    @property
    def values(self) -> np.ndarray:
        return self.stream.values[self.start:self.start + self.len]

    @property
    def stop(self) -> int:
        return self.start + self.len

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def to_stream(self) -> SensorStream:
        return self.stream.with_values(self.values, t0=self.stream.t0 + self.start)


def slice(stream: SensorStream, start: int, len: int) -> Window:  # noqa: A001 - public name
    if len < 1 or start < 0 or start + len > stream.values.shape[0]:
        raise RangeError(f"window [{start}, {start + len}) outside stream of length {stream.values.shape[0]}")
    return Window(stream, start, len)


def week_count(stream: SensorStream) -> int:
    return len(stream) // WEEK


def as_matrix(x) -> np.ndarray:
    """Coerce a Window, stream or array-like into a 2-D float array (rows = samples)."""
    if isinstance(x, SensorStream):
        return x.values
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


@dataclass(frozen=True)
class Edge:
    id: str
    u: str
    v: str
    length: float


@dataclass(frozen=True)
class WdnGraph:
    """Undirected pipe network. Parallel pipes between the same nodes are allowed."""

    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    sensors: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "sensors", tuple(self.sensors))
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            raise ValueError("duplicate node ids")
        for e in self.edges:
            if e.u not in known or e.v not in known:
                missing = e.u if e.u not in known else e.v
                raise NodeReferenceError(f"pipe {e.id} references undeclared node {missing}")
            if not e.length > 0:
                raise ValueError(f"pipe {e.id} has non-positive length {e.length}")
        for s in self.sensors:
            if s not in known:
                raise NodeReferenceError(f"sensor {s} is not a node")

    @cached_property
    def adjacency(self) -> dict[str, list[tuple[str, float]]]:
        adj: dict[str, list[tuple[str, float]]] = {n: [] for n in self.nodes}
        for e in self.edges:
            adj[e.u].append((e.v, e.length))
            adj[e.v].append((e.u, e.length))
        return adj

    @cached_property
    def edge_index(self) -> dict[str, Edge]:
        return {e.id: e for e in self.edges}

    def with_sensors(self, sensors: Sequence[str]) -> WdnGraph:
        return WdnGraph(self.nodes, self.edges, tuple(sensors))

    @property
    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))


@dataclass(frozen=True)
class LeakScenario:
    stream: SensorStream
    leak_node: str | None
    diameter: float
    onset: int
    leak_edge: str | None = None
    seed: int | None = None
    baseline_id: str | None = None

    def __post_init__(self):
        if not 0 <= self.onset < len(self.stream):
            raise RangeError(f"onset {self.onset} outside stream of length {len(self.stream)}")


@dataclass(frozen=True)
class LabeledScore:
    label: int
    score: float

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if not np.isfinite(self.score):
            raise ValueError("score must be finite")

