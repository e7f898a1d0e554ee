"""Metadata records -> fixed-width embeddings.

Three providers share one interface: a precomputed file (for embeddings
produced offline by a text encoder), a deterministic hashed token-bag
encoder, and an opt-in external command.
"""

from __future__ import annotations

import csv
import hashlib
import re
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import MetadataRecord
from .errors import ConfigError, DataError

KEY_ALIASES = {"stage": "pathologic_stage", "type": "sample_type", "tissue": "sample_type"}
CANONICAL_ORDER = ("sample_type", "pathologic_stage", "age", "gender", "race")


def _canon_key(key):
    k = re.sub(r"[\s\-]+", "_", key.strip().lower())
    return KEY_ALIASES.get(k, k)


def metadata_to_text(record: MetadataRecord) -> str:
    """``key: value; key: value`` with known keys first, the rest alphabetical."""
    items = {_canon_key(k): str(v).strip() for k, v in record.attributes.items()}
    rank = {k: i for i, k in enumerate(CANONICAL_ORDER)}
    keys = sorted(items, key=lambda k: (rank.get(k, len(rank)), k))
    return "; ".join(f"{k}: {items[k]}" for k in keys)


class EmbeddingProvider:
    name = "base"
    dim: int

    def embed(self, item) -> np.ndarray:
        raise NotImplementedError

    def embed_all(self, records):
        return np.stack([self.embed(r) for r in records]) if records else np.zeros((0, self.dim))

    def describe(self):
        return {"name": self.name, "dim": self.dim}


def _tokens(text):
    # one token per "key: value" pair plus its words, so single-attribute edits move the vector
    out = []
    for part in (p.strip() for p in text.split(";")):
        if part:
            out.append(part.lower())
            out.extend(w for w in re.split(r"[\s:]+", part.lower()) if w)
    return out


@dataclass
class HashEmbedding(EmbeddingProvider):
    """Signed random projections of a hashed token bag, unit-normalized."""

    dim: int = 64
    seed: int = 0
    name: str = "builtin"

    def _token_vector(self, token):
        digest = hashlib.blake2b(f"{self.seed}\x00{token}".encode(), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.choice([-1.0, 1.0], size=self.dim)

    def embed(self, item):
        text = metadata_to_text(item) if isinstance(item, MetadataRecord) else str(item)
        vec = np.zeros(self.dim)
        for tok in _tokens(text):
            vec += self._token_vector(tok)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def describe(self):
        return {"name": self.name, "dim": self.dim, "seed": self.seed}


@dataclass
class PrecomputedEmbedding(EmbeddingProvider):
    table: dict[str, np.ndarray] = field(default_factory=dict)
    dim: int = 0
    path: str | None = None
    name: str = "precomputed"

    def embed(self, item):
        sid = item.sample_id if isinstance(item, MetadataRecord) else str(item)
        try:
            return self.table[sid]
        except KeyError:
            raise DataError(f"no precomputed embedding for sample_id {sid!r}") from None

    def describe(self):
        return {"name": self.name, "dim": self.dim, "path": self.path}


def load_precomputed(path) -> PrecomputedEmbedding:
    """File layout: header ``sample_id,dim=<d>`` then ``sample_id,v_1,...,v_d`` rows."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    delim = "\t" if text.split("\n", 1)[0].count("\t") > text.split("\n", 1)[0].count(",") else ","
    rows = list(csv.reader(text.splitlines(), delimiter=delim))
    if not rows:
        raise DataError(f"{path}: empty embedding file")
    header = rows[0]
    declared = None
    if len(header) >= 2 and header[1].strip().startswith("dim="):
        try:
            declared = int(header[1].strip()[4:])
        except ValueError:
            raise DataError(f"{path}: bad dim declaration {header[1]!r}") from None
    table, dim = {}, declared
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        sid, vals = row[0].strip(), row[1:]
        if dim is None:
            dim = len(vals)
        if len(vals) != dim:
            raise DataError(f"{path}: line {line_no} has {len(vals)} values, expected {dim}")
        if sid in table:
            raise DataError(f"{path}: duplicate sample_id {sid!r} at line {line_no}")
        try:
            vec = np.array([float(v) for v in vals])
        except ValueError:
            raise DataError(f"{path}: non-numeric value at line {line_no}") from None
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{path}: non-finite value at line {line_no}")
        table[sid] = vec
    return PrecomputedEmbedding(table, int(dim or 0), str(path))


def write_precomputed(path, sample_ids, vectors):
    vectors = np.asarray(vectors, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", f"dim={vectors.shape[1]}"])
        for sid, vec in zip(sample_ids, vectors):
            w.writerow([sid, *(repr(float(x)) for x in vec)])


@dataclass
class CommandEmbedding(EmbeddingProvider):
    """Runs ``command``, writes one text line per record to its stdin and
    reads one whitespace/comma separated vector per line from stdout.

    Disabled unless ``enabled=True``.
    """

    command: list[str] = field(default_factory=list)
    dim: int = 0
    enabled: bool = False
    timeout: float = 600.0
    name: str = "command"

    def embed_all(self, records):
        if not self.enabled:
            raise ConfigError("external-command embedding provider is disabled")
        texts = [metadata_to_text(r) if isinstance(r, MetadataRecord) else str(r) for r in records]
        if any("\n" in t for t in texts):
            raise DataError("metadata text must not contain newlines")
        proc = subprocess.run(self.command, input="\n".join(texts) + "\n", capture_output=True, text=True,
                              timeout=self.timeout, check=False)
        if proc.returncode != 0:
            raise DataError(f"embedding command failed ({proc.returncode}): {proc.stderr.strip()[:200]}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != len(texts):
            raise DataError(f"embedding command returned {len(lines)} vectors for {len(texts)} inputs")
        out = np.array([[float(x) for x in re.split(r"[,\s]+", ln.strip())] for ln in lines])
        if out.shape[1] != self.dim:
            raise DataError(f"embedding command returned width {out.shape[1]}, expected {self.dim}")
        return out

    def embed(self, item):
        return self.embed_all([item])[0]

    def describe(self):
        return {"name": self.name, "dim": self.dim, "command": list(self.command)}


def embed(item, provider: EmbeddingProvider) -> np.ndarray:
    return provider.embed(item)


def make_provider(kind="builtin", dim=64, seed=0, path=None, command=None, enabled=False) -> EmbeddingProvider:
    if kind == "builtin":
        return HashEmbedding(dim, seed)
    if kind == "precomputed":
        if not path:
            raise ConfigError("precomputed embeddings need a path")
        return load_precomputed(path)
    if kind == "command":
        return CommandEmbedding(list(command or []), dim, enabled)
    raise ConfigError(f"unknown embedding provider {kind!r}")
