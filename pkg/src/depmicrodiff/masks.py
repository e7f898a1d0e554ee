"""AR step splitting with exponential decay and the blockwise
dependency-aware attention mask (0 = attend, 1 = blocked)."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

DEP_MODES = ("or_as_written", "allow_dep")


@dataclass(frozen=True)
class ARSplit:
    sizes: tuple[int, ...]
    cumsum: tuple[int, ...]

    def __post_init__(self):
        sz, cs = self.sizes, self.cumsum
        if len(sz) == 0 or any(k < 1 for k in sz):
            raise DataError(f"split sizes must be positive and non-empty, got {list(sz)}")
        if len(cs) != len(sz) + 1 or cs[0] != 0 or any(b - a != k for a, b, k in zip(cs, cs[1:], sz)):
            raise DataError(f"cumsum {list(cs)} inconsistent with sizes {list(sz)}")

    @classmethod
    def from_sizes(cls, sizes):
        sizes = tuple(int(k) for k in sizes)
        return cls(sizes, tuple(int(x) for x in np.concatenate([[0], np.cumsum(sizes)])))

    @property
    def total(self):
        return self.cumsum[-1]

    @property
    def n_steps(self):
        return len(self.sizes)

    def segment_ids(self):
        """AR step index of every sample token."""
        return np.repeat(np.arange(self.n_steps), self.sizes)

    def __str__(self):
        return f"sz={list(self.sizes)}; cs={list(self.cumsum)}"


def parse_split(text):
    m = re.fullmatch(r"\s*sz=\[([\d,\s]*)\];\s*cs=\[([\d,\s]*)\]\s*", text)
    if not m:
        raise DataError(f"cannot parse split {text!r}")
    split = ARSplit.from_sizes([int(x) for x in m.group(1).split(",") if x.strip()])
    if list(split.cumsum) != [int(x) for x in m.group(2).split(",") if x.strip()]:
        raise DataError(f"inconsistent split {text!r}")
    return split


def step_count_probabilities(S, alpha):
    """P(N = k) for k = 1..S under the exponential-decay law."""
    if S < 1:
        raise ConfigError(f"sample length must be >= 1, got {S}")
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"decay alpha must lie in (0, 1], got {alpha}")
    if alpha == 1.0:
        return np.full(S, 1.0 / S)
    b = (1.0 - alpha) / (1.0 - alpha**S)
    return b * alpha ** np.arange(S)


def generate_ar_steps(S, alpha, rng) -> ARSplit:
    """Draw the number of AR steps N, then N-1 distinct interior cut points."""
    probs = step_count_probabilities(S, alpha)
    if alpha == 1.0:
        n_steps = int(rng.integers(1, S + 1))
    else:
        n_steps = int(rng.choice(np.arange(1, S + 1), p=probs / probs.sum()))
    cuts = np.sort(rng.choice(np.arange(1, S), size=n_steps - 1, replace=False)) if n_steps > 1 else []
    cs = [0, *(int(x) for x in cuts), S]
    return ARSplit(tuple(b - a for a, b in zip(cs, cs[1:])), tuple(cs))


@dataclass
class AttentionMask:
    matrix: np.ndarray
    c: int
    v: int
    ctx: int
    s: int
    split: ARSplit

    @property
    def seq(self):
        return self.matrix.shape[0]


def build_attention_mask(s, c, split: ARSplit, dep=None, dep_mode="or_as_written") -> AttentionMask:
    """Layout [condition | visible | sample]; visible holds the clean tokens of
    every AR step except the last.

    ``or_as_written`` ORs Dep into the sample-to-sample block (dependency
    edges become blocked); ``allow_dep`` clears blocked entries along
    dependency edges instead.
    """
    if split.total != s:
        raise DataError(f"split covers {split.total} tokens but s={s}")
    if c < 0:
        raise DataError("condition length must be non-negative")
    if dep_mode not in DEP_MODES:
        raise ConfigError(f"dep_mode must be one of {DEP_MODES}, got {dep_mode!r}")
    sz, cs = split.sizes, split.cumsum
    v = s - sz[-1]
    ctx = c + v
    seq = ctx + s
    M = np.ones((seq, seq), dtype=np.int8)
    M[:, :c] = 0

    vTv = np.ones((v, v), dtype=np.int8)
    sTv = np.ones((s, v), dtype=np.int8)
    sTs = np.ones((s, s), dtype=np.int8)
    for i in range(len(sz) - 1):
        vTv[cs[i]:cs[i + 1], 0:cs[i + 1]] = 0
        sTv[cs[i + 1]:cs[i + 2], 0:cs[i + 1]] = 0
    for i in range(len(sz)):
        sTs[cs[i]:cs[i + 1], cs[i]:cs[i + 1]] = 0

    if dep is not None:
        dep = np.asarray(dep)
        if dep.shape != (s, s):
            raise DataError(f"dep shape {dep.shape} does not match sample length {s}")
        dep = (dep != 0).astype(np.int8)
        if dep_mode == "or_as_written":
            sTs = sTs | dep
        else:
            sTs = sTs & (1 - dep)

    M[c:ctx, c:ctx] = vTv
    M[ctx:, c:ctx] = sTv
    M[ctx:, ctx:] = sTs
    return AttentionMask(M, c, v, ctx, s, split)


def mask_row_reachability(mask: AttentionMask):
    return [np.flatnonzero(row == 0).tolist() for row in mask.matrix]


def permute_dep(dep, order):
    """Dep re-indexed so token k corresponds to feature ``order[k]``."""
    order = np.asarray(order)
    return np.asarray(dep)[np.ix_(order, order)]


def write_mask(path, mask: AttentionMask):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(str(int(x)) for x in row) for row in mask.matrix]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
