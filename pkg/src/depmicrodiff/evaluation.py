"""Imputation metrics over masked entries, figure-data exports and the KNN /
mean baselines."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


def _pair(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape or a.size == 0:
        raise DataError(f"metric inputs must be equal-length and non-empty, got {a.size} and {b.size}")
    return a, b


def pcc(a, b):
    """Pearson r; NaN (missing) when either side is constant or shorter than 2."""
    a, b = _pair(a, b)
    if a.size < 2:
        return math.nan
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(da @ da) * float(db @ db))
    if den == 0.0:
        return math.nan
    return float(np.clip(da @ db / den, -1.0, 1.0))


def cosine(a, b):
    a, b = _pair(a, b)
    den = float(np.linalg.norm(a) * np.linalg.norm(b))
    if den == 0.0:
        return math.nan
    return float(np.clip(a @ b / den, -1.0, 1.0))


def rmse(a, b):
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae(a, b):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def _mask(mask, shape):
    m = np.asarray(getattr(mask, "mask", mask)) != 0
    if m.shape != shape:
        raise DataError(f"mask shape {m.shape} does not match {shape}")
    return m


@dataclass
class MetricsReport:
    pcc: float
    cosine: float
    rmse: float
    mae: float
    per_feature_pcc: list
    masked_count: int
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def evaluate(imputed, truth, mask, config=None) -> MetricsReport:
    """Metrics on masked positions only; per-feature PCC is NaN for features
    with fewer than two masked entries."""
    imputed = np.asarray(getattr(imputed, "values", imputed), dtype=float)
    truth = np.asarray(getattr(truth, "values", truth), dtype=float)
    if imputed.shape != truth.shape:
        raise DataError(f"imputed shape {imputed.shape} does not match truth {truth.shape}")
    m = _mask(mask, truth.shape)
    if not m.any():
        raise DataError("evaluation mask is empty")
    a, b = imputed[m], truth[m]
    per = [pcc(imputed[m[:, j], j], truth[m[:, j], j]) if m[:, j].sum() >= 2 else math.nan
           for j in range(truth.shape[1])]
    return MetricsReport(pcc(a, b), cosine(a, b), rmse(a, b), mae(a, b), per, int(m.sum()), dict(config or {}))


def summarize(reports, keys=("pcc", "cosine", "rmse", "mae")):
    """Across-fold mean and sample std per metric."""
    out = {}
    for k in keys:
        vals = np.array([getattr(r, k) for r in reports], dtype=float)
        vals = vals[np.isfinite(vals)]
        mean = float(vals.mean()) if vals.size else math.nan
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[k] = {"mean": mean, "std": std, "text": format_pm(mean, std)}
    return out


def format_pm(mean, std, digits=3):
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def mean_impute(Y_masked, mask):
    """Masked entries -> per-feature mean of observed entries (global mean if none)."""
    Y = np.asarray(getattr(Y_masked, "values", Y_masked), dtype=float)
    m = _mask(mask, Y.shape)
    out = Y.copy()
    obs = ~m
    if not obs.any():
        raise DataError("no observed entries to impute from")
    glob = Y[obs].mean()
    for j in range(Y.shape[1]):
        if m[:, j].any():
            col = Y[obs[:, j], j]
            out[m[:, j], j] = col.mean() if col.size else glob
    return out


def nan_euclidean(Y, obs):
    """Pairwise distances on mutually observed entries, rescaled by the share
    of coordinates present: sqrt(q / n_common * sum of squared differences)."""
    n, q = Y.shape
    X = np.where(obs, Y, 0.0)
    o = obs.astype(float)
    sq = (X**2) @ o.T + o @ (X**2).T - 2 * X @ X.T
    common = o @ o.T
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.sqrt(np.maximum(sq, 0.0) * q / common)
    d[common == 0] = np.nan
    return d


def knn_impute(Y_masked, mask, k=5):
    """Masked entry -> mean of that feature over the k nearest samples that
    observe it; feature mean when no sample does."""
    Y = np.asarray(getattr(Y_masked, "values", Y_masked), dtype=float)
    m = _mask(mask, Y.shape)
    n = Y.shape[0]
    if not 1 <= k < n:
        raise DataError(f"k must satisfy 1 <= k < n={n}, got {k}")
    obs = ~m
    D = nan_euclidean(Y, obs)
    np.fill_diagonal(D, np.nan)
    out = Y.copy()
    means = mean_impute(Y, m)
    for i, j in zip(*np.nonzero(m)):
        cand = np.flatnonzero(obs[:, j] & np.isfinite(D[i]))
        if cand.size == 0:
            out[i, j] = means[i, j]
            continue
        # stable sort keeps ties in row order
        near = cand[np.argsort(D[i, cand], kind="stable")[:k]]
        out[i, j] = Y[near, j].mean()
    return out


def write_report(path, report: MetricsReport | dict, extra=None):
    payload = report.to_dict() if isinstance(report, MetricsReport) else dict(report)
    if extra:
        payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def _fmt(x):
    return "NA" if x is None or (isinstance(x, float) and not math.isfinite(x)) else repr(float(x))


def write_heatmap(path, feature_ids, per_feature: dict):
    """Rows = features, columns = datasets (or methods)."""
    names = list(per_feature)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["feature_id", *names])
        for j, fid in enumerate(feature_ids):
            w.writerow([fid, *(_fmt(per_feature[nm][j]) for nm in names)])
    return path


def write_boxplot(path, per_fold: dict):
    """Long format: method, fold, pcc."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["method", "fold", "pcc"])
        for name, vals in per_fold.items():
            for f, v in enumerate(vals):
                w.writerow([name, f, _fmt(v)])
    return path
