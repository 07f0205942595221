"""Distribution-based drift detectors on pairs of windows.

Two-sample tests (feature-wise Kolmogorov-Smirnov, kernel MMD with a permutation
null), the D3 virtual classifier, a data-vs-time HSIC independence test
(DAWIDD) and the sliding MMD magnitude curve with its sign-change shape
heuristic.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Callable, Literal, NamedTuple, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold
from sklearn.neighbors import KNeighborsClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .core import ShapeError, SizeError, as_matrix
from .modelloss import roc_auc_score


@dataclass(frozen=True)
class TwoSampleResult:
    statistic: float
    p_value: float | None = None
    per_feature: np.ndarray | None = None
    drift: bool | None = None

    def __post_init__(self):
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")

    def to_record(self, detector: str) -> dict:
        rec = {"detector": detector, "statistic": float(self.statistic), "p_value": self.p_value}
        if self.per_feature is not None:
            rec["per_feature"] = [[float(d), float(p)] for d, p in self.per_feature]
        return rec


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel exp(-|x - y|^2 / (2 h^2)); ``bandwidth="median"`` picks h per call."""

    bandwidth: Union[float, Literal["median"]] = "median"

    def __post_init__(self):
        if self.bandwidth != "median" and not float(self.bandwidth) > 0:
            raise ValueError("fixed bandwidth must be positive")


@dataclass(frozen=True)
class ShapeCurve:
    magnitude: np.ndarray
    shape: np.ndarray
    candidates: list[tuple[int, float]] = field(default_factory=list)


class MagnitudeCurve(NamedTuple):
    t: np.ndarray
    m: np.ndarray


# ---------------------------------------------------------------- KS


def ks_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise SizeError("KS needs two non-empty samples")
    x = np.concatenate([a, b])
    fa = np.searchsorted(a, x, side="right") / a.size
    fb = np.searchsorted(b, x, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def kolmogorov_q(lam: float) -> float:
    """Kolmogorov tail 2 * sum_k (-1)^(k-1) exp(-2 k^2 lam^2)."""
    if lam < 0.05:
        # the series sums to 1 within double precision here, but converges too slowly
        return 1.0
    total, k = 0.0, 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < 1e-12:
            break
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_p_value(d: float, n_a: int, n_b: int) -> float:
    if not 0.0 <= d <= 1.0 or n_a < 1 or n_b < 1:
        raise ValueError("need D in [0, 1] and positive sample sizes")
    return kolmogorov_q(d * math.sqrt(n_a * n_b / (n_a + n_b)))


def ks_feature_wise(a, b) -> TwoSampleResult:
    """Per-column KS; the combined p is Bonferroni over columns, the statistic the max D."""
    A, B = as_matrix(a), as_matrix(b)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"window widths differ: {A.shape[1]} vs {B.shape[1]}")
    n = A.shape[1]
    per = np.empty((n, 2))
    for j in range(n):
        d = ks_statistic(A[:, j], B[:, j])
        per[j] = d, ks_p_value(d, A.shape[0], B.shape[0])
    return TwoSampleResult(float(per[:, 0].max()), float(min(1.0, n * per[:, 1].min())), per)


# ---------------------------------------------------------------- kernels


def median_bandwidth(z: np.ndarray) -> float:
    d = pdist(z)
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def rbf_gram(z: np.ndarray, kernel: KernelSpec = KernelSpec()) -> np.ndarray:
    d = pdist(z)
    if kernel.bandwidth == "median":
        med = float(np.median(d)) if d.size else 0.0
        h = med if med > 0 else 1.0
    else:
        h = float(kernel.bandwidth)
    k = squareform(np.exp(-(d * d) / (2.0 * h * h)))
    np.fill_diagonal(k, 1.0)
    return k


def _mmd2_from_gram(k: np.ndarray, m: int) -> float:
    n = k.shape[0] - m
    kaa, kbb, kab = k[:m, :m], k[m:, m:], k[:m, m:]
    term_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return float(term_a + term_b - 2.0 * kab.sum() / (m * n))


def mmd2_unbiased(a, b, kernel: KernelSpec = KernelSpec()) -> float:
    A, B = as_matrix(a), as_matrix(b)
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise SizeError("unbiased MMD needs at least two rows per sample")
    if A.shape[1] != B.shape[1]:
        raise ShapeError("samples must have the same width")
    return _mmd2_from_gram(rbf_gram(np.vstack([A, B]), kernel), A.shape[0])


def _permutations(rng: np.random.Generator, size: int, n_perm: int):
    for _ in range(n_perm):
        yield rng.permutation(size)


def permutation_test(stat_fn: Callable, a, b, n_perm: int = 200, seed: int = 0) -> float:
    """Add-one permutation p-value of ``stat_fn`` over reshuffles of the pooled rows."""
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    A, B = as_matrix(a), as_matrix(b)
    pooled = np.vstack([A, B])
    m = A.shape[0]
    observed = stat_fn(A, B)
    rng = np.random.default_rng(seed)
    hits = sum(stat_fn(pooled[p[:m]], pooled[p[m:]]) >= observed for p in _permutations(rng, len(pooled), n_perm))
    return (1 + hits) / (1 + n_perm)


def mmd_test(a, b, kernel: KernelSpec = KernelSpec(), n_perm: int = 200, seed: int = 0) -> TwoSampleResult:
    """MMD permutation test; same draws and p as ``permutation_test(mmd2_unbiased, ...)``.

    The pooled Gram matrix is permutation invariant (so is the median bandwidth),
    so every reshuffle is scored from block sums of one matrix product.
    """
    A, B = as_matrix(a), as_matrix(b)
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise SizeError("unbiased MMD needs at least two rows per sample")
    k = rbf_gram(np.vstack([A, B]), kernel)
    m, n = A.shape[0], B.shape[0]
    observed = _mmd2_from_gram(k, m)
    rng = np.random.default_rng(seed)
    ind = np.zeros((m + n, n_perm))
    for j, p in enumerate(_permutations(rng, m + n, n_perm)):
        ind[p[:m], j] = 1.0
    kp = k @ ind
    diag = np.diag(k)
    total = k.sum()
    s_aa = np.einsum("ij,ij->j", ind, kp)
    s_ab = kp.sum(axis=0) - s_aa
    s_bb = total - s_aa - 2.0 * s_ab
    tr_a = diag @ ind
    tr_b = diag.sum() - tr_a
    stats = (s_aa - tr_a) / (m * (m - 1)) + (s_bb - tr_b) / (n * (n - 1)) - 2.0 * s_ab / (m * n)
    p = (1 + int(np.sum(stats >= observed))) / (1 + n_perm)
    return TwoSampleResult(observed, p)


# ---------------------------------------------------------------- DAWIDD / HSIC


def _normalized_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float).ravel()
    span = t.max() - t.min()
    return (t - t.min()) / span if span > 0 else np.zeros_like(t)


def _centered(k: np.ndarray) -> np.ndarray:
    return k - k.mean(axis=0)[None, :] - k.mean(axis=1)[:, None] + k.mean()


def hsic(x, t) -> float:
    """Biased HSIC trace(K H L H) / m^2 between data rows and their time stamps."""
    X = as_matrix(x)
    if X.shape[0] < 4:
        raise SizeError("HSIC needs at least four rows")
    tau = _normalized_time(t)
    if tau.size != X.shape[0]:
        raise ShapeError("one time stamp per row required")
    kc = _centered(rbf_gram(X))
    ell = rbf_gram(tau[:, None])
    return float(np.sum(kc * ell) / X.shape[0] ** 2)


@lru_cache(maxsize=8)
def _time_eigenbasis(tau_bytes: bytes, rank_tol: float) -> tuple[np.ndarray, np.ndarray]:
    ell = rbf_gram(np.frombuffer(tau_bytes)[:, None])
    w, u = np.linalg.eigh(ell)
    keep = w > rank_tol * w.max()
    return w[keep], u[:, keep]


def hsic_test(x, t, n_perm: int = 200, seed: int = 0, rank_tol: float = 1e-13) -> TwoSampleResult:
    """Time-permutation HSIC test.

    The time Gram matrix is smooth, so it is replaced by its eigen-expansion
    truncated at ``rank_tol`` relative eigenvalue; each permuted statistic is
    then a sum of a few quadratic forms.
    """
    X = as_matrix(x)
    if X.shape[0] < 4:
        raise SizeError("HSIC needs at least four rows")
    tau = _normalized_time(t)
    if tau.size != X.shape[0]:
        raise ShapeError("one time stamp per row required")
    m = X.shape[0]
    kc = _centered(rbf_gram(X))
    ell = rbf_gram(tau[:, None])
    observed = float(np.sum(kc * ell) / m**2)
    w, u = _time_eigenbasis(tau.tobytes(), rank_tol)
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = max(1, 4096 // u.shape[1])
    perms = list(_permutations(rng, m, n_perm))
    for lo in range(0, n_perm, chunk):
        block = perms[lo:lo + chunk]
        up = np.concatenate([u[p] for p in block], axis=1)
        q = np.einsum("ij,ij->j", up, kc @ up).reshape(len(block), -1)
        stats = q @ w / m**2
        hits += int(np.sum(stats >= observed))
    return TwoSampleResult(observed, (1 + hits) / (1 + n_perm))


def dawidd_test(a, b, n_perm: int = 200, seed: int = 0) -> TwoSampleResult:
    A, B = as_matrix(a), as_matrix(b)
    x = np.vstack([A, B])
    return hsic_test(x, np.arange(len(x)), n_perm=n_perm, seed=seed)


# ---------------------------------------------------------------- D3


def d3_score(
    a,
    b,
    classifier: str = "linear",
    folds: int = 5,
    seed: int = 0,
    threshold: float = 0.7,
    n_neighbors: int = 10,
) -> TwoSampleResult:
    """Virtual-classifier drift score: cross-validated AUC of telling window B from window A."""
    A, B = as_matrix(a), as_matrix(b)
    if min(len(A), len(B)) < folds or folds < 2:
        raise SizeError(f"windows of {len(A)} and {len(B)} rows cannot fill {folds} folds")
    x = np.vstack([A, B])
    y = np.r_[np.zeros(len(A), dtype=int), np.ones(len(B), dtype=int)]
    if classifier == "linear":
        clf = make_pipeline(StandardScaler(), LogisticRegression(C=1.0, max_iter=1000))
    elif classifier == "knn":
        clf = make_pipeline(StandardScaler(), KNeighborsClassifier(n_neighbors=n_neighbors))
    else:
        raise ValueError(f"unknown D3 classifier {classifier!r}")
    scores = np.zeros(len(y))
    for train, test in StratifiedKFold(folds, shuffle=True, random_state=seed).split(x, y):
        clf.fit(x[train], y[train])
        scores[test] = clf.predict_proba(x[test])[:, 1]
    auc = roc_auc_score(y, scores)
    return TwoSampleResult(auc, None, None, auc > threshold)


# ---------------------------------------------------------------- ShapeDD


def mmd_curve(data, window_len: int, step: int = 1, kernel: KernelSpec = KernelSpec()) -> MagnitudeCurve:
    """MMD^2 between the window ending at t and the one starting at t, on a step grid."""
    X = as_matrix(data)
    if window_len < 2 or len(X) < 2 * window_len:
        raise SizeError(f"stream of {len(X)} rows too short for two windows of {window_len}")
    t = np.arange(window_len, len(X) - window_len + 1, step)
    m = np.array([mmd2_unbiased(X[s - window_len:s], X[s:s + window_len], kernel) for s in t])
    return MagnitudeCurve(t, np.maximum(m, 0.0))


def shape_curve(m, half_width: int) -> ShapeCurve:
    """Convolve the magnitude with a +1/-1 step kernel and mark + to - sign changes.

    s[i] = sum(m[i+1 : i+w+1]) - sum(m[i-w : i]) where the full kernel fits, 0 elsewhere;
    so s is positive on the rising side of a bump and negative after its crest.
    """
    m = np.asarray(m, dtype=float).ravel()
    w = int(half_width)
    if w < 1:
        raise ValueError("half_width must be >= 1")
    if m.size <= 2 * w:
        raise SizeError(f"series of {m.size} too short for half width {w}")
    sums = np.lib.stride_tricks.sliding_window_view(m, w).sum(axis=1)  # sums[j] = m[j:j+w].sum()
    i = np.arange(w, m.size - w)
    s = np.zeros_like(m)
    s[i] = sums[i + 1] - sums[i - w]
    # rounding-level values count as zero so positive rescaling cannot move a crossing
    s[np.abs(s) <= 1e-12 * max(np.abs(sums).max(), np.finfo(float).tiny)] = 0.0
    candidates = []
    nz = np.flatnonzero(s)
    for lo, hi in zip(nz[:-1], nz[1:]):
        if s[lo] > 0 and s[hi] < 0:
            k = int((lo + hi) // 2)
            candidates.append((k, float(m[k])))
    return ShapeCurve(m, s, candidates)
