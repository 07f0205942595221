"""Model-loss drift detection.

Regressors for the forecasting (own lags) and interpolation (other sensors)
tasks, per-sample error series, the ROC-AUC score and the fold protocol:
train on two baseline weeks, freeze the model, and ask whether leak-scenario
errors outrank the remaining baseline errors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import rankdata

from .core import (
    WEEK,
    CapacityError,
    ContractError,
    LabeledScore,
    LeakScenario,
    NumericalError,
    SensorStream,
    ShapeError,
    SizeError,
    UndefinedMetricError,
)
from .preprocess import LagSpec

log = logging.getLogger(__name__)

Task = Literal["forecast", "interpolate"]
FOLD_LEN = 2 * WEEK
MAX_POLY_FEATURES = 5000


@dataclass
class Regressor:
    """A fitted model. Linear kinds keep original-scale ``coef``/``intercept``."""

    kind: str
    params: dict
    coef: np.ndarray | None = None
    intercept: float = 0.0
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    train_x: np.ndarray | None = None
    train_y: np.ndarray | None = None
    converged: bool = True
    n_iter: int = 0
    objective_path: list = field(default_factory=list)
    # set when fitted through fit_task_model
    task: str | None = None
    lags: tuple[int, ...] | None = None
    sensor: int | None = None

    @property
    def fitted(self) -> bool:
        return self.coef is not None or self.train_x is not None

    def predict(self, X) -> np.ndarray:
        if not self.fitted:
            raise ContractError("predict called before fit")
        X = np.asarray(X, dtype=float)
        if self.kind == "knn":
            z = (X - self.x_mean) / self.x_scale
            return knn_predict(self.train_x, self.train_y, z, self.params["k"])
        if self.kind == "poly_ridge":
            X = poly_features(X, self.params["degree"])
        return X @ self.coef + self.intercept


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (X - mean) / scale, mean, scale


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.size or y.size < 1:
        raise ShapeError(f"{X.shape[0]} rows vs {y.size} targets")
    return X, y


def fit_ridge(X, y, lam: float = 1.0) -> Regressor:
    """Ridge with an unpenalised intercept on internally standardised features."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    X, y = _check_xy(X, y)
    Z, mean, scale = _standardize(X)
    y_mean = y.mean()
    gram = Z.T @ Z + lam * np.eye(Z.shape[1])
    if lam == 0 and np.linalg.matrix_rank(gram) < Z.shape[1]:
        raise NumericalError("singular normal equations; use lambda > 0")
    try:
        w = np.linalg.solve(gram, Z.T @ (y - y_mean))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc)) from exc
    coef = w / scale
    return Regressor("ridge", {"lam": lam}, coef=coef, intercept=float(y_mean - mean @ coef), x_mean=mean, x_scale=scale)


def poly_features(X, degree: int) -> np.ndarray:
    """All monomials of total degree 1..degree (the intercept is fitted separately).

    Columns come grouped by degree; within a degree each monomial is extended
    only by variables at or after its last one, so every monomial appears once.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    p = X.shape[1]
    block, last = X, np.arange(p)
    blocks = [block]
    for _ in range(2, degree + 1):
        parts, tails = [], []
        for j in range(p):
            keep = last <= j
            parts.append(block[:, keep] * X[:, j:j + 1])
            tails.append(np.full(int(keep.sum()), j))
        block, last = np.hstack(parts), np.concatenate(tails)
        blocks.append(block)
    return np.hstack(blocks)


def n_poly_features(n_inputs: int, degree: int) -> int:
    from math import comb

    return comb(n_inputs + degree, degree) - 1


def fit_poly_ridge(X, y, degree: int = 2, lam: float = 1.0, max_features: int = MAX_POLY_FEATURES) -> Regressor:
    if degree < 1:
        raise ValueError("degree must be >= 1")
    X, y = _check_xy(X, y)
    n_feat = n_poly_features(X.shape[1], degree)
    if n_feat > max_features:
        raise CapacityError(f"degree {degree} on {X.shape[1]} inputs gives {n_feat} features (cap {max_features})")
    base = fit_ridge(poly_features(X, degree), y, lam)
    base.kind = "poly_ridge"
    base.params = {"degree": degree, "lam": lam}
    return base


def knn_predict(train_X, train_y, query, k: int) -> np.ndarray | float:
    """Mean target of the k nearest rows (Euclidean); equal distances go to the lower row index."""
    train_X = np.asarray(train_X, dtype=float)
    train_y = np.asarray(train_y, dtype=float).ravel()
    if train_X.ndim == 1:
        train_X = train_X[:, None]
    if train_X.shape[0] == 0:
        raise SizeError("empty training set")
    if not 1 <= k <= train_X.shape[0]:
        raise ValueError(f"k={k} outside 1..{train_X.shape[0]}")
    q = np.asarray(query, dtype=float)
    single = q.ndim == 1
    Q = q[None, :] if single else q
    n = train_X.shape[0]
    if k == n:
        out = np.full(len(Q), train_y.mean())
        return float(out[0]) if single else out
    # one extra neighbour tells whether the k-th distance is shared with a row left out
    if train_X.shape[1] <= 8:
        dist, idx = _kdtree(train_X).query(Q, k=k + 1)
    else:
        dist, idx = _brute_neighbours(train_X, Q, k + 1)
    out = train_y[idx[:, :k]].mean(axis=1)
    tied = np.flatnonzero(dist[:, k - 1] == dist[:, k])
    for i in tied:
        d = np.sqrt(((train_X - Q[i]) ** 2).sum(axis=1))
        order = np.lexsort((np.arange(n), d))[:k]
        out[i] = train_y[order].mean()
    return float(out[0]) if single else out


def _brute_neighbours(train_X: np.ndarray, Q: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """The m smallest of |x|^2 - 2 q.x per query row, ascending (a rank-preserving squared distance)."""
    d = np.einsum("ij,ij->i", train_X, train_X)[None, :] - 2.0 * Q @ train_X.T
    idx = np.argpartition(d, m - 1, axis=1)[:, :m]
    part = np.take_along_axis(d, idx, axis=1)
    order = np.argsort(part, axis=1)
    return np.take_along_axis(part, order, axis=1), np.take_along_axis(idx, order, axis=1)


_TREES: dict[int, tuple[np.ndarray, cKDTree]] = {}


def _kdtree(train_X: np.ndarray) -> cKDTree:
    # fitted kNN models query the same training matrix many times
    hit = _TREES.get(id(train_X))
    if hit is not None and hit[0] is train_X:
        return hit[1]
    tree = cKDTree(train_X)
    if len(_TREES) > 512:
        _TREES.clear()
    _TREES[id(train_X)] = (train_X, tree)
    return tree


def fit_knn(X, y, k: int = 5) -> Regressor:
    X, y = _check_xy(X, y)
    Z, mean, scale = _standardize(X)
    return Regressor("knn", {"k": k}, x_mean=mean, x_scale=scale, train_x=Z, train_y=y)


def _enet_objective(yy: float, c: np.ndarray, q: np.ndarray, w: np.ndarray, alpha: float, l1_ratio: float) -> float:
    # (1/2m)|y - Zw|^2 expanded with G = Z'Z/m, c = Z'y/m, q = G w
    return 0.5 * (yy - 2.0 * c @ w + q @ w) + alpha * l1_ratio * np.abs(w).sum() + 0.5 * alpha * (1 - l1_ratio) * (w @ w)


def fit_elastic_net(X, y, alpha: float = 1.0, l1_ratio: float = 0.5, max_iter: int = 1000, tol: float = 1e-4) -> Regressor:
    """Cyclic coordinate descent on standardised features with an unpenalised intercept.

    Minimises (1/2m)|y - Xw - b|^2 + alpha*l1_ratio*|w|_1 + (alpha/2)(1 - l1_ratio)|w|^2.
    Stops when the largest coordinate change in a sweep is below ``tol``; running
    out of sweeps is reported through ``converged``/``n_iter``, not raised.
    """
    if alpha < 0 or not 0 <= l1_ratio <= 1:
        raise ValueError("need alpha >= 0 and l1_ratio in [0, 1]")
    X, y = _check_xy(X, y)
    Z, mean, scale = _standardize(X)
    m, p = Z.shape
    y_mean = y.mean()
    yc = y - y_mean
    G = Z.T @ Z / m
    c = Z.T @ yc / m
    yy = yc @ yc / m
    diag = np.diag(G)
    l1 = alpha * l1_ratio
    denom = diag + alpha * (1 - l1_ratio)
    w = np.zeros(p)
    q = np.zeros(p)
    path = [_enet_objective(yy, c, q, w, alpha, l1_ratio)]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        max_step = 0.0
        for j in range(p):
            if denom[j] == 0:
                continue
            rho = c[j] - q[j] + diag[j] * w[j]
            new = np.sign(rho) * max(abs(rho) - l1, 0.0) / denom[j]
            step = new - w[j]
            if step != 0.0:
                q += G[:, j] * step
                w[j] = new
                max_step = max(max_step, abs(step))
        path.append(_enet_objective(yy, c, q, w, alpha, l1_ratio))
        if max_step < tol:
            converged = True
            break
    if not converged:
        log.warning("elastic net stopped after %d sweeps without reaching tol=%g", n_iter, tol)
    coef = w / scale
    return Regressor(
        "elastic_net",
        {"alpha": alpha, "l1_ratio": l1_ratio, "max_iter": max_iter, "tol": tol},
        coef=coef,
        intercept=float(y_mean - mean @ coef),
        x_mean=mean,
        x_scale=scale,
        converged=converged,
        n_iter=n_iter,
        objective_path=path,
    )


@dataclass(frozen=True)
class RelevanceProfile:
    lags: tuple[int, ...]
    mean: np.ndarray
    std: np.ndarray

    def top(self, k: int) -> list[int]:
        order = np.argsort(-self.mean, kind="stable")[:k]
        return [self.lags[i] for i in order]


def relevance_profile(runs: Sequence[Regressor]) -> RelevanceProfile:
    """Mean and std of absolute weights per lag over several fitted forecast models."""
    if not runs:
        raise ValueError("need at least one fitted model")
    lags = runs[0].lags
    for r in runs:
        if r.lags != lags or r.coef is None or len(r.coef) != len(lags or ()):
            raise ShapeError("all runs must be linear forecast models over the same lag spec")
    w = np.abs(np.vstack([r.coef for r in runs]))
    return RelevanceProfile(lags, w.mean(axis=0), w.std(axis=0))


# ---------------------------------------------------------------- tasks


def build_task(stream: SensorStream, task: Task, sensor: int, spec: LagSpec = LagSpec()) -> tuple[np.ndarray, np.ndarray]:
    X, y, _ = _task_rows(stream, task, sensor, spec)
    return X, y


def _task_rows(stream: SensorStream, task: str, sensor: int, spec: LagSpec, rows: np.ndarray | None = None):
    """Design matrix, target and stream row index of each task row (optionally a subset of rows)."""
    x = stream.values
    if task == "forecast":
        first = spec.max_lag
        if len(stream) <= first:
            raise SizeError(f"stream of {len(stream)} samples too short for lag {first}")
        idx = np.arange(first, len(stream)) if rows is None else rows[rows >= first]
        X = np.column_stack([x[idx - lag, sensor] for lag in spec.lags]) if len(idx) else np.empty((0, len(spec.lags)))
        return X, x[idx, sensor], idx
    if task == "interpolate":
        if stream.n_sensors < 2:
            raise SizeError("interpolation needs at least two sensors")
        idx = np.arange(len(stream)) if rows is None else rows
        others = [j for j in range(stream.n_sensors) if j != sensor]
        return x[np.ix_(idx, others)], x[idx, sensor], idx
    raise ValueError(f"unknown task {task!r}")


def fit_model(kind: str, X, y, params: dict | None = None) -> Regressor:
    params = dict(params or {})
    if kind == "ridge":
        return fit_ridge(X, y, params.get("lam", 1.0))
    if kind == "poly_ridge":
        return fit_poly_ridge(X, y, params.get("degree", 2), params.get("lam", 1.0))
    if kind == "knn":
        return fit_knn(X, y, params.get("k", 5))
    if kind == "elastic_net":
        return fit_elastic_net(X, y, **{k: params[k] for k in ("alpha", "l1_ratio", "max_iter", "tol") if k in params})
    raise ValueError(f"unknown model kind {kind!r}")


def fit_task_model(
    kind: str,
    stream: SensorStream,
    task: Task,
    sensor: int,
    spec: LagSpec = LagSpec(),
    params: dict | None = None,
    rows: np.ndarray | None = None,
) -> Regressor:
    """Fit ``kind`` on the task rows of ``stream`` (restricted to target rows ``rows`` if given)."""
    X, y, _ = _task_rows(stream, task, sensor, spec, rows)
    if len(y) == 0:
        raise SizeError("no training rows")
    model = fit_model(kind, X, y, params)
    model.task, model.sensor = task, sensor
    model.lags = spec.lags if task == "forecast" else None
    return model


@dataclass(frozen=True)
class ErrorSeries:
    t: np.ndarray
    errors: np.ndarray
    label: str = "baseline"

    def __post_init__(self):
        if self.t.shape != self.errors.shape:
            raise ShapeError("one error per time index")
        if np.any(self.errors < 0) or not np.all(np.isfinite(self.errors)):
            raise ValueError("errors must be finite and non-negative")

    @property
    def mse(self) -> float:
        return float(self.errors.mean())


def error_series(
    model: Regressor,
    stream: SensorStream,
    task: Task,
    sensor: int,
    spec: LagSpec = LagSpec(),
    rows: np.ndarray | None = None,
    label: str = "baseline",
) -> ErrorSeries:
    """Squared prediction error at every evaluable sample (or at ``rows``)."""
    if model.task is not None and (model.task != task or model.sensor != sensor):
        raise ContractError(f"model fitted for {model.task}/sensor {model.sensor}, asked for {task}/sensor {sensor}")
    if task == "forecast" and model.lags is not None and model.lags != spec.lags:
        raise ContractError("model was fitted on a different lag spec")
    X, y, idx = _task_rows(stream, task, sensor, spec, rows)
    err = (model.predict(X) - y) ** 2 if len(y) else np.empty(0)
    return ErrorSeries(idx + stream.t0, err, label)


# ---------------------------------------------------------------- scoring


def roc_auc_score(labels, scores) -> float:
    """Mann-Whitney AUC: P(random positive outranks random negative), ties count 1/2."""
    labels = np.asarray(labels).ravel()
    scores = np.asarray(scores, dtype=float).ravel()
    if labels.shape != scores.shape:
        raise ShapeError("one score per label")
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = int((labels == 0).sum())
    if n0 + n1 != labels.size:
        raise ValueError("labels must be 0 or 1")
    if n0 == 0 or n1 == 0:
        raise UndefinedMetricError("ROC-AUC needs both classes")
    r = rankdata(scores)
    return float((r[pos].sum() - n1 * (n1 + 1) / 2) / (n0 * n1))


def roc_auc(scores: Iterable[LabeledScore]) -> float:
    scores = list(scores)
    return roc_auc_score([s.label for s in scores], [s.score for s in scores])


def per_positive_auc(negatives, positives) -> np.ndarray:
    """Fraction of negatives each positive outranks (ties 1/2); its mean is the pooled AUC."""
    neg = np.sort(np.asarray(negatives, dtype=float).ravel())
    pos = np.asarray(positives, dtype=float).ravel()
    if neg.size == 0 or pos.size == 0:
        raise UndefinedMetricError("ROC-AUC needs both classes")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    return (below + 0.5 * (upto - below)) / neg.size


# ---------------------------------------------------------------- folds


@dataclass(frozen=True)
class FoldResult:
    fold: int
    model: str
    task: str
    auc: dict
    mse_baseline: float = float("nan")
    mse: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in self.auc.values():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"AUC {v} outside [0, 1]")

    def to_records(self) -> list[dict]:
        return [
            {"fold": self.fold, "model": self.model, "task": self.task, "size_mm": size, "auc": auc, "mse": self.mse.get(size)}
            for size, auc in sorted(self.auc.items())
        ]


def fold_starts(length: int, n_folds: int = 10, first_block: int = 1) -> list[int]:
    """Starts of ``n_folds`` evenly spread, non-overlapping two-week blocks.

    Block 0 is skipped by default so forecast lags reaching two weeks back stay inside the stream.
    """
    blocks = length // FOLD_LEN
    avail = np.arange(first_block, blocks)
    if len(avail) == 0:
        raise SizeError(f"stream of {length} samples has no two-week fold")
    pick = np.unique(np.round(np.linspace(0, len(avail) - 1, min(n_folds, len(avail)))).astype(int))
    return [int(avail[i] * FOLD_LEN) for i in pick]


def _first_difference(a: np.ndarray, b: np.ndarray) -> int:
    diff = np.any(a != b, axis=1)
    return int(np.argmax(diff)) if diff.any() else len(a)


def _pooled_errors(models, stream, task, spec, rows) -> np.ndarray:
    return np.mean([error_series(mdl, stream, task, j, spec, rows).errors for j, mdl in enumerate(models)], axis=0)


def _eval_rows(length: int, task: str, spec: LagSpec, stride: int) -> np.ndarray:
    first = spec.max_lag if task == "forecast" else 0
    start = -(-first // stride) * stride
    return np.arange(start, length, stride)


def evaluate_fold(
    baseline: SensorStream,
    scenarios: Iterable[LeakScenario],
    kind: str,
    task: Task,
    fold_start: int,
    spec: LagSpec = LagSpec(),
    params: dict | None = None,
    eval_stride: int = 1,
) -> FoldResult:
    """Train on baseline[fold_start, fold_start + 2 weeks), then score leak vs no-leak errors.

    E_0 is the pooled (mean over sensors) squared error on every other evaluable
    baseline sample, E_1 the same on every evaluable sample of each leak scenario;
    the AUC is computed separately for each leak diameter. ``eval_stride`` scores
    every k-th sample only (the same grid for both classes).
    """
    return evaluate_fold_grid(baseline, scenarios, [(kind, task)], fold_start, spec, {kind: params or {}}, eval_stride)[0]


def evaluate_fold_grid(
    baseline: SensorStream,
    scenarios: Iterable[LeakScenario],
    combos: Sequence[tuple[str, str]],
    fold_start: int,
    spec: LagSpec = LagSpec(),
    params: dict[str, dict] | None = None,
    eval_stride: int = 1,
) -> list[FoldResult]:
    """:func:`evaluate_fold` for several (model kind, task) pairs sharing one pass over ``scenarios``.

    Scenarios may be a generator; each one is consumed once and dropped, which
    keeps memory flat for long sweeps.
    """
    if fold_start < 0 or fold_start + FOLD_LEN > len(baseline):
        raise SizeError(f"fold [{fold_start}, {fold_start + FOLD_LEN}) outside baseline of {len(baseline)}")
    params = params or {}
    train_rows = np.arange(fold_start, fold_start + FOLD_LEN)
    states = []
    for kind, task in combos:
        models = [fit_task_model(kind, baseline, task, j, spec, params.get(kind), train_rows)
                  for j in range(baseline.n_sensors)]
        grid = _eval_rows(len(baseline), task, spec, eval_stride)
        base_err = _pooled_errors(models, baseline, task, spec, grid)
        states.append((kind, task, models, grid, base_err, {}))

    for sc in scenarios:
        if sc.stream.sensor_ids != baseline.sensor_ids or len(sc.stream) != len(baseline):
            raise ShapeError("scenarios must share the baseline's sensors and length")
        # rows before the first differing sample see identical inputs, so their errors are the baseline's
        cut = _first_difference(sc.stream.values, baseline.values)
        for kind, task, models, grid, base_err, by_size in states:
            err = base_err.copy()
            late = grid >= cut
            if late.any():
                err[late] = _pooled_errors(models, sc.stream, task, spec, grid[late])
            by_size.setdefault(float(sc.diameter), []).append(err)

    results = []
    for kind, task, models, grid, base_err, by_size in states:
        held_out = (grid < fold_start) | (grid >= fold_start + FOLD_LEN)
        e0 = base_err[held_out]
        auc, mse = {}, {}
        for size, errs in sorted(by_size.items()):
            e1 = np.concatenate(errs)
            auc[size] = roc_auc_score(np.r_[np.zeros(e0.size), np.ones(e1.size)], np.r_[e0, e1])
            mse[size] = float(e1.mean())
        results.append(FoldResult(fold_start, kind, task, auc, float(e0.mean()), mse))
    return results
