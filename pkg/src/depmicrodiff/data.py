"""Abundance I/O, normalization, feature selection, evaluation masking and
synthetic data with planted dependency structure."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dependency import DependencyMatrix
from .errors import DataError


@dataclass
class AbundanceMatrix:
    values: np.ndarray
    sample_ids: list[str]
    feature_ids: list[str]
    name: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError(f"abundance matrix must be 2-D, got shape {self.values.shape}")
        n, d = self.values.shape
        self.sample_ids = [str(s) for s in self.sample_ids]
        self.feature_ids = [str(f) for f in self.feature_ids]
        if len(self.sample_ids) != n or len(self.feature_ids) != d:
            raise DataError(
                f"id lengths ({len(self.sample_ids)}, {len(self.feature_ids)}) "
                f"do not match matrix shape {self.values.shape}"
            )
        _check_unique(self.sample_ids, "sample")
        _check_unique(self.feature_ids, "feature")
        if not np.all(np.isfinite(self.values)):
            r, c = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(f"non-finite value at sample {self.sample_ids[r]!r}, feature {self.feature_ids[c]!r}")
        if np.any(self.values < 0):
            r, c = np.argwhere(self.values < 0)[0]
            raise DataError(
                f"negative value {self.values[r, c]} at sample {self.sample_ids[r]!r}, "
                f"feature {self.feature_ids[c]!r}"
            )

    @property
    def shape(self):
        return self.values.shape


@dataclass
class NormalizedMatrix:
    """log10(100 * row-share + 1) transformed abundances."""

    values: np.ndarray
    sample_ids: list[str]
    feature_ids: list[str]
    source: AbundanceMatrix | None = None

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values):
        return NormalizedMatrix(np.asarray(values, dtype=float), list(self.sample_ids), list(self.feature_ids), self.source)


@dataclass
class EvalMask:
    mask: np.ndarray  # 1 = hidden, 0 = observed
    fraction: float
    seed: int

    @property
    def count(self):
        return int(self.mask.sum())


@dataclass
class MetadataRecord:
    sample_id: str
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass
class SyntheticSpec:
    """Parameters of the planted-dependency generator.

    Samples form a pseudo-time series. Latent log-abundances follow
    ``s[t] = self_weight * s[t-1] + edge_strength * A @ s[t-1] + noise`` with
    ``A[i, j] = 1`` for a planted edge ``j -> i``. Parentless features get unit
    innovations, features with parents get ``noise_scale`` innovations.
    ``group_effect`` adds metadata-driven per-sample shifts on top of the
    dynamics, so metadata becomes informative when it is > 0; ``n_factors``
    latent factors (iid across samples, loadings ~ N(0, factor_scale^2)) add
    within-sample co-variation. Both enter at observation level, so they do
    not create lagged dependencies.

    With ``structure_seed`` set, the feature-level parameters (baselines,
    group shifts, factor loadings) come from that seed and only the sample
    draws come from ``seed``; datasets sharing a structure seed behave like
    related cohorts over the same features.
    """

    n_samples: int = 500
    n_features: int = 20
    planted_edges: list[tuple[int, int]] = field(default_factory=list)
    edge_strength: float = 0.9
    sparsity: float = 0.3
    noise_scale: float = 0.1
    seed: int = 0
    self_weight: float = 0.0
    group_effect: float = 0.0
    n_factors: int = 0
    factor_scale: float = 0.0
    baseline_spread: float = 0.5
    signal_scale: float = 1.0
    burn_in: int = 50
    structure_seed: int | None = None
    id_prefix: str = "S"

    def validate(self):
        if self.n_samples < 2 or self.n_features < 1:
            raise DataError("synthetic spec needs n_samples >= 2 and n_features >= 1")
        if not 0.0 <= self.sparsity < 1.0:
            raise DataError(f"infeasible sparsity {self.sparsity}; must lie in [0, 1)")
        for src, dst in self.planted_edges:
            if not (0 <= src < self.n_features and 0 <= dst < self.n_features):
                raise DataError(f"planted edge ({src}, {dst}) references an invalid feature index")
            if src == dst:
                raise DataError(f"planted edge ({src}, {dst}) is a self-loop")


@dataclass
class SyntheticDataset:
    matrix: AbundanceMatrix
    planted: DependencyMatrix
    metadata: list[MetadataRecord]


def _check_unique(ids, kind):
    seen = set()
    for x in ids:
        if x in seen:
            raise DataError(f"duplicate {kind} id {x!r}")
        seen.add(x)


def _sniff_delimiter(header_line):
    return "\t" if header_line.count("\t") > header_line.count(",") else ","


def _read_table(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    delim = _sniff_delimiter(lines[0])
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=delim) if r]
    return rows


def load_abundance(path, samples_in_rows=True, name=None):
    """Read a delimited abundance table (comma or tab, header row required)."""
    rows = _read_table(path)
    header, body = rows[0], rows[1:]
    col_ids = [h.strip() for h in header[1:]]
    row_ids, values = [], []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {r} has {len(row)} cells, expected {len(header)}")
        row_ids.append(row[0].strip())
        parsed = []
        for c, cell in enumerate(row[1:], start=2):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise DataError(f"{path}: cannot parse {cell!r} as a number at line {r}, column {c}") from None
        values.append(parsed)
    arr = np.array(values, dtype=float).reshape(len(row_ids), len(col_ids))
    if not samples_in_rows:
        arr, row_ids, col_ids = arr.T, col_ids, row_ids
    return AbundanceMatrix(arr, row_ids, col_ids, name=name or Path(path).stem)


def write_matrix(path, values, row_ids, col_ids, integer=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *col_ids])
        for rid, row in zip(row_ids, np.asarray(values)):
            cells = [str(int(v)) for v in row] if integer else [repr(float(v)) for v in row]
            w.writerow([rid, *cells])
    return path


def load_matrix(path):
    """Read a real-valued table (e.g. a normalized or imputed matrix) without abundance checks."""
    rows = _read_table(path)
    header, body = rows[0], rows[1:]
    try:
        vals = np.array([[float(x) for x in row[1:]] for row in body], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    vals = vals.reshape(len(body), len(header) - 1)
    return vals, [row[0] for row in body], header[1:]


def load_metadata(path):
    rows = _read_table(path)
    header, body = rows[0], rows[1:]
    keys = [h.strip() for h in header[1:]]
    records = []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {r} has {len(row)} cells, expected {len(header)}")
        records.append(MetadataRecord(row[0].strip(), dict(zip(keys, (x.strip() for x in row[1:])))))
    _check_unique([rec.sample_id for rec in records], "metadata sample")
    return records


def write_metadata(path, records):
    keys = []
    for rec in records:
        for k in rec.attributes:
            if k not in keys:
                keys.append(k)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *keys])
        for rec in records:
            w.writerow([rec.sample_id, *(rec.attributes.get(k, "") for k in keys)])
    return path


def align_metadata(records, sample_ids):
    by_id = {rec.sample_id: rec for rec in records}
    missing = [s for s in sample_ids if s not in by_id]
    if missing:
        raise DataError(f"metadata missing for samples: {missing[:10]}")
    return [by_id[s] for s in sample_ids]


def normalize(M: AbundanceMatrix) -> NormalizedMatrix:
    vals = M.values
    sums = vals.sum(axis=1)
    zero_rows = np.flatnonzero(sums <= 0)
    if zero_rows.size:
        raise DataError(f"sample {M.sample_ids[zero_rows[0]]!r} has an all-zero row; cannot normalize")
    shares = 100.0 * vals / sums[:, None]
    return NormalizedMatrix(np.log10(shares + 1.0), list(M.sample_ids), list(M.feature_ids), M)


def relative_abundance(M: AbundanceMatrix) -> np.ndarray:
    """Row-normalized matrix M' (each row sums to 100)."""
    sums = M.values.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise DataError("all-zero row; cannot normalize")
    return 100.0 * M.values / sums


def compute_dropout_rate(M) -> float:
    vals = M.values if hasattr(M, "values") else np.asarray(M)
    if vals.size == 0:
        raise DataError("empty matrix")
    return float(np.mean(vals == 0))


def select_features(M: AbundanceMatrix, criterion="variance", param=None) -> AbundanceMatrix:
    """Keep the top-k most variable features, or features observed in >= tau of samples.

    Selected columns keep their original relative order.
    """
    n, d = M.shape
    if criterion == "variance":
        k = d if param is None else int(param)
        if not 1 <= k <= d:
            raise DataError(f"top-k variance needs 1 <= k <= {d}, got {k}")
        sums = M.values.sum(axis=1, keepdims=True)
        shares = np.divide(100.0 * M.values, sums, out=np.zeros_like(M.values), where=sums > 0)
        var = np.log10(shares + 1.0).var(axis=0)
        keep = np.sort(np.lexsort((np.arange(d), -var))[:k])
    elif criterion == "prevalence":
        tau = float(param)
        if not 0.0 < tau <= 1.0:
            raise DataError(f"prevalence threshold must lie in (0, 1], got {tau}")
        prevalence = np.mean(M.values > 0, axis=0)
        keep = np.flatnonzero(prevalence >= tau - 1e-12)
    else:
        raise DataError(f"unknown selection criterion {criterion!r}")
    if keep.size == 0:
        raise DataError(f"feature selection ({criterion}, {param}) removed every feature")
    return AbundanceMatrix(M.values[:, keep], list(M.sample_ids), [M.feature_ids[i] for i in keep], M.name)


def apply_eval_mask(Y: NormalizedMatrix, fraction: float = 0.1, seed: int = 0):
    """Hide round(fraction * nnz) nonzero entries in every sample.

    Returns the masked copy and the EvalMask (1 = hidden).
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"mask fraction must lie in (0, 1), got {fraction}")
    vals = Y.values
    rng = np.random.default_rng(seed)
    mask = np.zeros(vals.shape, dtype=np.int8)
    for r in range(vals.shape[0]):
        nz = np.flatnonzero(vals[r] != 0)
        if nz.size == 0:
            raise DataError(f"sample {Y.sample_ids[r]!r} has no nonzero entries to mask")
        k = int(math.floor(fraction * nz.size + 0.5))
        if k:
            mask[r, rng.choice(nz, size=k, replace=False)] = 1
    masked = np.where(mask == 1, 0.0, vals)
    return Y.with_values(masked), EvalMask(mask, fraction, seed)


def random_dag_edges(n_features, n_edges, seed):
    """Draw ``n_edges`` distinct edges that respect a random topological order."""
    max_edges = n_features * (n_features - 1) // 2
    if n_edges > max_edges:
        raise DataError(f"cannot place {n_edges} acyclic edges among {n_features} features")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_features)
    pairs = [(int(order[a]), int(order[b])) for a in range(n_features) for b in range(a + 1, n_features)]
    pick = rng.choice(len(pairs), size=n_edges, replace=False)
    return sorted(pairs[i] for i in pick)


SAMPLE_TYPES = ("Primary Tumor", "Solid Tissue Normal")
STAGES = ("Stage I", "Stage II", "Stage III", "Stage IV")


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    spec.validate()
    n, d = spec.n_samples, spec.n_features
    rng = np.random.default_rng(spec.seed)
    srng = rng if spec.structure_seed is None else np.random.default_rng(spec.structure_seed)

    A = np.zeros((d, d))
    for src, dst in spec.planted_edges:
        A[dst, src] = 1.0
    trans = spec.self_weight * np.eye(d) + spec.edge_strength * A
    if d and np.max(np.abs(np.linalg.eigvals(trans))) >= 1.0:
        raise DataError("planted dynamics are unstable (spectral radius >= 1)")
    sigma = np.where(A.sum(axis=1) > 0, spec.noise_scale, 1.0)

    steps = n + spec.burn_in
    s = np.zeros((steps, d))
    innov = rng.standard_normal((steps, d)) * sigma
    s[0] = innov[0]
    for t in range(1, steps):
        s[t] = trans @ s[t - 1] + innov[t]
    s = s[spec.burn_in:]
    std = s.std(axis=0)
    s = (s - s.mean(axis=0)) / np.where(std > 0, std, 1.0)

    baseline = srng.normal(0.0, spec.baseline_spread, size=d)
    types = rng.choice(len(SAMPLE_TYPES), size=n, p=[0.7, 0.3])
    stages = rng.integers(0, len(STAGES), size=n)
    ages = rng.integers(30, 86, size=n)
    type_shift = srng.normal(0.0, spec.group_effect, size=(len(SAMPLE_TYPES), d))
    stage_shift = srng.normal(0.0, spec.group_effect, size=(len(STAGES), d))
    log_ab = baseline + spec.signal_scale * s + type_shift[types] + stage_shift[stages]
    if spec.n_factors > 0 and spec.factor_scale > 0:
        loadings = srng.normal(0.0, spec.factor_scale, size=(spec.n_factors, d))
        log_ab = log_ab + rng.standard_normal((n, spec.n_factors)) @ loadings

    values = np.exp(log_ab)
    if spec.sparsity > 0:
        cut = np.quantile(log_ab, spec.sparsity)
        drop = log_ab <= cut
        # every sample keeps its largest entry so rows stay normalizable
        drop[np.arange(n), np.argmax(log_ab, axis=1)] = False
        values = np.where(drop, 0.0, values)

    width = len(str(n))
    sample_ids = [f"{spec.id_prefix}{i:0{width}d}" for i in range(n)]
    feature_ids = [f"Microbe_{j}" for j in range(d)]
    matrix = AbundanceMatrix(values, sample_ids, feature_ids, name=f"synthetic_{spec.seed}")
    c_dir = A.astype(np.int8)
    planted = DependencyMatrix(c_dir, np.zeros_like(c_dir), c_dir.copy())
    metadata = [
        MetadataRecord(
            sid,
            {
                "sample_type": SAMPLE_TYPES[types[i]],
                "pathologic_stage": STAGES[stages[i]],
                "age": str(int(ages[i])),
            },
        )
        for i, sid in enumerate(sample_ids)
    ]
    return SyntheticDataset(matrix, planted, metadata)


def subset_rows(M: AbundanceMatrix, rows: Sequence[int], name=None) -> AbundanceMatrix:
    rows = list(rows)
    return AbundanceMatrix(M.values[rows], [M.sample_ids[r] for r in rows], list(M.feature_ids), name or M.name)
