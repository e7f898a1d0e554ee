"""Run configuration: nested dataclasses persisted as YAML.

Precedence, lowest to highest: dataclass defaults, the ``--config`` file,
``--set section.key=value`` overrides, then the dedicated global flags
(``--seed``, ``--out``, ``--jobs``). The top-level seed is copied into every
section that carries one, so the written file is the whole story.
"""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .dat import DATConfig, SamplerConfig
from .errors import ConfigError
from .vae import VAEConfig


@dataclass
class PathsConfig:
    data: str | None = None
    metadata: str | None = None
    embeddings: str | None = None
    truth: str | None = None
    mask: str | None = None
    deps: str | None = None  # directory holding c_dir/c_mi/dep matrices
    checkpoint: str | None = None
    vae_checkpoint: str | None = None
    imputed: str | None = None
    pretrain: list = field(default_factory=list)
    out: str = "runs/default"


@dataclass
class DataConfig:
    samples_in_rows: bool = True
    normalized: bool = False  # paths.data already holds log-normalized values
    select: str | None = None  # "variance" or "prevalence"
    select_param: float | None = None


@dataclass
class SynthConfig:
    n_samples: int = 500
    n_features: int = 20
    n_edges: int = 5
    edge_strength: float = 0.9
    sparsity: float = 0.3
    noise_scale: float = 0.1
    group_effect: float = 0.5
    n_factors: int = 3
    factor_scale: float = 0.5
    baseline_spread: float = 0.5
    id_prefix: str = "S"
    seed: int = 0


@dataclass
class DependencyConfig:
    lag: int = 1
    alpha: float = 0.05
    mi_mode: str = "permutation"
    mi_param: float = 0.05
    bins: int = 8
    n_perm: int = 199
    fdr: bool = False
    top: int = 5
    seed: int = 0


@dataclass
class EmbeddingConfig:
    kind: str = "builtin"
    dim: int = 64
    command: list = field(default_factory=list)
    enabled: bool = False
    seed: int = 0


@dataclass
class EvalConfig:
    mask_fraction: float = 0.1
    folds: int = 5
    knn_k: int = 5
    seed: int = 0


@dataclass
class AblateConfig:
    arm: str = "decay_sweep"
    alphas: list = field(default_factory=lambda: [0.7, 0.8, 0.9, 1.0])
    pretrain_sources: int = 2  # synthetic sibling datasets for the pretraining arm


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    dependency: DependencyConfig = field(default_factory=DependencyConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    vae: VAEConfig = field(default_factory=VAEConfig)
    model: DATConfig = field(default_factory=DATConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def propagate_seed(self):
        for f in fields(self):
            sub = getattr(self, f.name)
            if dataclasses.is_dataclass(sub) and hasattr(sub, "seed"):
                sub.seed = self.seed
        return self

    def to_dict(self):
        return asdict(self)


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = _coerce(value, default, f"{where}.{name}")
    return cls(**kwargs)


def _coerce(value, default, where):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads forms like 1e-3 as strings
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{where}: expected a number, got {value!r}") from None
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list, got {value!r}")
    return value


def config_from_dict(data) -> RunConfig:
    return _build(RunConfig, data or {}, "config")


def load_config(path=None, overrides=(), seed=None, out=None, jobs=None) -> RunConfig:
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    for item in overrides:
        apply_override(data, item)
    if seed is not None:
        data["seed"] = seed
    if jobs is not None:
        data["jobs"] = jobs
    if out is not None:
        data.setdefault("paths", {})["out"] = str(out)
    cfg = config_from_dict(data).propagate_seed()
    cfg.model.validate()
    return cfg


def apply_override(data: dict, item: str):
    """``a.b.c=value`` with ``value`` parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {item!r} has an empty key")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {item!r}: {p} is not a section")
    try:
        node[parts[-1]] = yaml.safe_load(raw)
    except yaml.YAMLError:
        raise ConfigError(f"override {item!r}: cannot parse value") from None


def dump_config(cfg: RunConfig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
    return path
