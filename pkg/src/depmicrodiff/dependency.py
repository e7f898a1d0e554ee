"""Directed (lagged F-test) and symmetric (binned mutual information)
dependency estimation between features, and their union."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DataError


@dataclass
class DependencyMatrix:
    """``c_dir[i, j] = 1`` means feature j influences feature i."""

    c_dir: np.ndarray
    c_mi: np.ndarray
    dep: np.ndarray

    def __post_init__(self):
        self.c_dir = _as_binary(self.c_dir, "c_dir")
        self.c_mi = _as_binary(self.c_mi, "c_mi")
        self.dep = _as_binary(self.dep, "dep")
        if not (self.c_dir.shape == self.c_mi.shape == self.dep.shape):
            raise DataError("dependency matrices have mismatched shapes")
        for name in ("c_dir", "c_mi", "dep"):
            if np.any(np.diag(getattr(self, name))):
                raise DataError(f"{name} has a nonzero diagonal")
        if not np.array_equal(self.c_mi, self.c_mi.T):
            raise DataError("c_mi must be symmetric")
        if not np.array_equal(self.dep, self.c_dir | self.c_mi):
            raise DataError("dep must equal c_dir OR c_mi")

    @property
    def size(self):
        return self.dep.shape[0]


@dataclass
class FTestResult:
    source: int
    target: int
    f_stat: float
    p_value: float
    dof: tuple[int, int]
    degenerate: bool = False


@dataclass
class MIResult:
    i: int
    j: int
    mi: float
    p_value: float  # NaN when no permutation test was run
    n_permutations: int
    bins: int
    degenerate: bool = False


def _as_binary(a, name):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all((a == 0) | (a == 1)):
        raise DataError(f"{name} must be binary")
    return a.astype(np.int8)


def _rss(X, y):
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    return float(r @ r), int(rank)


def directed_dependency_test(Y, i, j, lag=1) -> FTestResult:
    """Does lagged feature j improve the prediction of feature i beyond i's own lag?

    Restricted: ``y_i[t] ~ 1 + y_i[t-lag]``; full adds ``y_j[t-lag]``.
    Sample order is treated as pseudo-time.
    """
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    if i == j:
        raise DataError("source and target must differ")
    if lag < 1:
        raise DataError(f"lag must be >= 1, got {lag}")
    if n - lag - 3 <= 0:
        raise DataError(f"need more than lag + 3 samples, got n={n}, lag={lag}")
    y = Y[lag:, i]
    xi = Y[:-lag, i]
    xj = Y[:-lag, j]
    m = y.size
    ones = np.ones(m)
    rss_r, rank_r = _rss(np.column_stack([ones, xi]), y)
    rss_f, rank_f = _rss(np.column_stack([ones, xi, xj]), y)
    df = m - rank_f
    scale = max(float(y @ y), 1.0)
    if np.ptp(xj) == 0 or rank_f <= rank_r or df <= 0 or rss_f <= 1e-12 * scale:
        return FTestResult(j, i, 0.0, 1.0, (1, max(df, 0)), degenerate=True)
    f_stat = max((rss_r - rss_f) / (rss_f / df), 0.0)
    p = float(stats.f.sf(f_stat, 1, df))
    return FTestResult(j, i, float(f_stat), min(max(p, 0.0), 1.0), (1, df))


def benjamini_hochberg(pvals):
    """Adjusted p-values (step-up FDR)."""
    p = np.asarray(pvals, dtype=float)
    if p.size == 0:
        return p
    order = np.argsort(p, kind="stable")
    ranked = p[order] * p.size / np.arange(1, p.size + 1)
    adj = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty_like(adj)
    out[order] = np.minimum(adj, 1.0)
    return out


def _map_rows(fn, rows, jobs):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, rows))
    return [fn(r) for r in rows]


def directed_tests(Y, lag=1, jobs=1):
    Y = np.asarray(Y, dtype=float)
    D = Y.shape[1]

    def row(i):
        return [directed_dependency_test(Y, i, j, lag) for j in range(D) if j != i]

    return [res for chunk in _map_rows(row, range(D), jobs) for res in chunk]


def build_directed_matrix(Y, alpha=0.05, lag=1, jobs=1, fdr=False, return_results=False):
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    Y = np.asarray(Y, dtype=float)
    D = Y.shape[1]
    results = directed_tests(Y, lag, jobs) if D > 1 else []
    pvals = np.array([r.p_value for r in results])
    if fdr:
        pvals = benjamini_hochberg(pvals)
    c_dir = np.zeros((D, D), dtype=np.int8)
    for r, p in zip(results, pvals):
        if not r.degenerate and p < alpha:
            c_dir[r.target, r.source] = 1
    return (c_dir, results) if return_results else c_dir


def quantile_bins(x, bins):
    """Equal-frequency bin labels; tied values share a bin."""
    x = np.asarray(x, dtype=float)
    edges = np.quantile(x, np.arange(1, bins) / bins)
    return np.searchsorted(edges, x, side="right")


def _mi_from_labels(lx, ly, bins):
    n = lx.size
    joint = np.bincount(lx * bins + ly, minlength=bins * bins).reshape(bins, bins)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    rows, cols = np.nonzero(joint)
    c = joint[rows, cols].astype(float)
    # fsum makes the value independent of summation order, so MI(x, y) == MI(y, x) exactly
    terms = (c / n) * np.log(c * n / (px[rows] * py[cols].astype(float)))
    return max(math.fsum(terms.tolist()), 0.0)


def mutual_information(x, y, bins=8):
    """Plug-in MI (nats) of quantile-binned x and y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("x and y must be 1-D vectors of equal length")
    if bins < 2 or x.size < bins:
        raise DataError(f"need bins >= 2 and at least {bins} samples")
    return _mi_from_labels(quantile_bins(x, bins), quantile_bins(y, bins), bins)


def _perm_test_labels(lx, ly, bins, n_perm, rng, i=0, j=1):
    observed = _mi_from_labels(lx, ly, bins)
    if np.all(lx == lx[0]) or np.all(ly == ly[0]):
        return MIResult(i, j, 0.0, 1.0, n_perm, bins, degenerate=True)
    exceed = 0
    for _ in range(n_perm):
        if _mi_from_labels(lx, rng.permutation(ly), bins) >= observed:
            exceed += 1
    return MIResult(i, j, observed, (1 + exceed) / (1 + n_perm), n_perm, bins)


def mi_permutation_test(x, y, bins=8, n_perm=199, seed=0) -> MIResult:
    """Permutation p-value ``(1 + #{MI_perm >= MI_obs}) / (1 + n_perm)``; only y is shuffled."""
    if n_perm < 100:
        raise DataError(f"n_perm must be >= 100, got {n_perm}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or bins < 2 or x.size < bins:
        raise DataError("x and y must be equal-length vectors with at least `bins` samples")
    rng = np.random.default_rng(seed)
    return _perm_test_labels(quantile_bins(x, bins), quantile_bins(y, bins), bins, n_perm, rng)


def pair_seed(seed, i, j):
    a, b = min(i, j), max(i, j)
    return np.random.SeedSequence([int(seed), a, b])


def build_mi_matrix(Y, mode="permutation", param=0.05, bins=8, n_perm=199, seed=0, jobs=1, fdr=False,
                    return_results=False):
    """Symmetric binary MI adjacency.

    ``mode="permutation"``: edge when the permutation p-value < ``param``.
    ``mode="threshold"``: edge when MI (nats) > ``param``.
    """
    Y = np.asarray(Y, dtype=float)
    D = Y.shape[1]
    if mode == "permutation":
        if not 0.0 < param < 1.0:
            raise DataError(f"permutation alpha must lie in (0, 1), got {param}")
        if n_perm < 100:
            raise DataError(f"n_perm must be >= 100, got {n_perm}")
    elif mode == "threshold":
        if param < 0:
            raise DataError("MI threshold must be non-negative")
    else:
        raise DataError(f"unknown MI mode {mode!r}")
    labels = [quantile_bins(Y[:, k], bins) for k in range(D)]

    def row(i):
        out = []
        for j in range(i + 1, D):
            if mode == "permutation":
                rng = np.random.default_rng(pair_seed(seed, i, j))
                out.append(_perm_test_labels(labels[i], labels[j], bins, n_perm, rng, i, j))
            else:
                const = np.all(labels[i] == labels[i][0]) or np.all(labels[j] == labels[j][0])
                mi = 0.0 if const else _mi_from_labels(labels[i], labels[j], bins)
                out.append(MIResult(i, j, mi, float("nan"), 0, bins, degenerate=bool(const)))
        return out

    results = [r for chunk in _map_rows(row, range(D), jobs) for r in chunk]
    c_mi = np.zeros((D, D), dtype=np.int8)
    if mode == "permutation":
        pvals = np.array([r.p_value for r in results])
        if fdr:
            pvals = benjamini_hochberg(pvals)
        hits = [(r.i, r.j) for r, p in zip(results, pvals) if not r.degenerate and p < param]
    else:
        hits = [(r.i, r.j) for r in results if not r.degenerate and r.mi > param]
    for i, j in hits:
        c_mi[i, j] = c_mi[j, i] = 1
    return (c_mi, results) if return_results else c_mi


def combine_dependencies(c_dir, c_mi) -> DependencyMatrix:
    c_dir = _as_binary(c_dir, "c_dir")
    c_mi = _as_binary(c_mi, "c_mi")
    if c_dir.shape != c_mi.shape:
        raise DataError(f"shape mismatch: c_dir {c_dir.shape} vs c_mi {c_mi.shape}")
    return DependencyMatrix(c_dir, c_mi, c_dir | c_mi)


def top_variable_features(Y, k):
    Y = np.asarray(Y, dtype=float)
    D = Y.shape[1]
    if not 1 <= k <= D:
        raise DataError(f"k must lie in [1, {D}], got {k}")
    var = Y.var(axis=0)
    return [int(i) for i in np.lexsort((np.arange(D), -var))[:k]]


def significant(results, alpha=0.05):
    return [r for r in results if not getattr(r, "degenerate", False) and r.p_value < alpha]


def _edge_fields(r):
    if isinstance(r, FTestResult):
        return r.source, r.target, r.f_stat, r.p_value
    if isinstance(r, MIResult):
        return r.i, r.j, r.mi, r.p_value
    return r


def neg_log10(p):
    return 0.0 if p >= 1.0 else -math.log10(p)


def export_network(results, path, feature_ids=None, top=None):
    """Write a scored edge list TSV sorted by -log10(p) descending."""
    rows = []
    for r in results:
        src, dst, statistic, p = _edge_fields(r)
        if not 0.0 < p <= 1.0:
            raise DataError(f"p-value {p} outside (0, 1]")
        name = (lambda k: feature_ids[k]) if feature_ids is not None else str
        rows.append((name(src), name(dst), float(statistic), float(p), neg_log10(p)))
    rows.sort(key=lambda row: -row[4])
    if top is not None:
        rows = rows[:top]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["source", "target", "statistic", "p_value", "neg_log10_p"])
        for src, dst, statistic, p, nl in rows:
            w.writerow([src, dst, repr(statistic), repr(p), repr(nl)])
    return path


def write_binary_matrix(path, mat, feature_ids):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_id", *feature_ids])
        for fid, row in zip(feature_ids, np.asarray(mat)):
            w.writerow([fid, *(str(int(v)) for v in row)])
    return path


def read_binary_matrix(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    ids = rows[0][1:]
    mat = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int8)
    return _as_binary(mat.reshape(len(rows) - 1, len(ids)), str(path)), ids


def infer_dependencies(Y, alpha=0.05, lag=1, mi_mode="permutation", mi_param=0.05, bins=8, n_perm=199,
                       seed=0, jobs=1, fdr=False):
    """Run both estimators; returns (DependencyMatrix, F-test results, MI results)."""
    c_dir, f_res = build_directed_matrix(Y, alpha, lag, jobs, fdr, return_results=True)
    c_mi, mi_res = build_mi_matrix(Y, mi_mode, mi_param, bins, n_perm, seed, jobs, fdr, return_results=True)
    return combine_dependencies(c_dir, c_mi), f_res, mi_res
