"""Fold protocol and ablation arms.

A fold is one evaluation-mask seed over the full matrix: dependencies and
the model are fitted on the masked matrix only, then the hidden entries are
scored against the truth alongside the KNN and mean baselines.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .data import SyntheticSpec, apply_eval_mask, generate_synthetic, normalize, random_dag_edges
from .dat import impute, train
from .dependency import infer_dependencies
from .evaluation import evaluate, knn_impute, mean_impute, summarize
from .vae import pretrain

METHODS = ("depmicrodiff", "knn", "mean")


def fold_seed(seed, fold):
    return int(seed) * 1000 + int(fold)


def synthetic_spec(cfg, seed=None, structure_seed=None, id_prefix=None) -> SyntheticSpec:
    """The synthetic benchmark described by a ``SynthConfig``."""
    s = cfg
    return SyntheticSpec(
        n_samples=s.n_samples, n_features=s.n_features,
        planted_edges=random_dag_edges(s.n_features, s.n_edges, s.seed),
        edge_strength=s.edge_strength, sparsity=s.sparsity, noise_scale=s.noise_scale,
        seed=s.seed if seed is None else seed, group_effect=s.group_effect, n_factors=s.n_factors,
        factor_scale=s.factor_scale, baseline_spread=s.baseline_spread,
        structure_seed=s.seed if structure_seed is None else structure_seed,
        id_prefix=s.id_prefix if id_prefix is None else id_prefix,
    )


@dataclass
class FoldResult:
    fold: int
    mask_seed: int
    reports: dict
    n_dep_edges: int
    epochs_run: int
    history: list = field(default_factory=list)

    def pcc(self, method="depmicrodiff"):
        return self.reports[method].pcc


def run_fold(Y, meta, cfg, fold, vae_init=None, log=None) -> FoldResult:
    """One mask seed end to end. ``Y`` is the complete NormalizedMatrix."""
    ms = fold_seed(cfg.eval.seed, fold)
    Ym, em = apply_eval_mask(Y, cfg.eval.mask_fraction, ms)
    d = cfg.dependency
    dep, _, _ = infer_dependencies(Ym.values, alpha=d.alpha, lag=d.lag, mi_mode=d.mi_mode, mi_param=d.mi_param,
                                   bins=d.bins, n_perm=d.n_perm, seed=d.seed, jobs=cfg.jobs, fdr=d.fdr)
    model_cfg = dataclasses.replace(cfg.model, seed=fold_seed(cfg.model.seed, fold))
    vae_cfg = dataclasses.replace(cfg.vae, seed=fold_seed(cfg.vae.seed, fold))
    ck = train(Ym.values, dep, model_cfg, vae_cfg, meta=meta if cfg.model.use_metadata else None,
               known_missing=em.mask, vae_init=vae_init, feature_ids=Y.feature_ids, log=log)
    sampler = dataclasses.replace(cfg.sampler, seed=fold_seed(cfg.sampler.seed, fold))
    imputed = impute(Ym, em, ck, sampler, meta=meta if cfg.model.use_metadata else None)
    snap = {"fold": fold, "mask_seed": ms}
    reports = {
        "depmicrodiff": evaluate(imputed, Y, em, snap),
        "knn": evaluate(knn_impute(Ym, em, cfg.eval.knn_k), Y, em, snap),
        "mean": evaluate(mean_impute(Ym, em), Y, em, snap),
    }
    return FoldResult(fold, ms, reports, int(dep.dep.sum()), len(ck.history), ck.history)


def run_folds(Y, meta, cfg, vae_init=None, log=None, folds=None):
    folds = range(cfg.eval.folds) if folds is None else folds
    return [run_fold(Y, meta, cfg, f, vae_init, log) for f in folds]


def fold_summary(results):
    """Per-method mean±std plus the fold-wise PCC table."""
    out = {}
    for m in METHODS:
        out[m] = summarize([r.reports[m] for r in results])
        out[m]["per_fold_pcc"] = [r.reports[m].pcc for r in results]
    wins = [r.pcc("depmicrodiff") > max(r.pcc("knn"), r.pcc("mean")) for r in results]
    out["folds_won"] = int(sum(wins))
    out["margin_over_mean"] = out["depmicrodiff"]["pcc"]["mean"] - out["mean"]["pcc"]["mean"]
    return out


def mean_pcc(results, method="depmicrodiff"):
    vals = [r.pcc(method) for r in results]
    return float(np.mean(vals)) if vals else math.nan


def sibling_datasets(cfg, n_sources=2):
    """Related cohorts over the same features (shared structure seed, fresh
    samples, distinct sample ids) for VAE pretraining."""
    prefixes = "RE" + "ABCDFGHJKLMNPQTUVWXYZ"
    out = []
    for k in range(n_sources):
        spec = synthetic_spec(cfg.synth, seed=cfg.synth.seed + 101 + k, id_prefix=prefixes[k % len(prefixes)])
        ds = generate_synthetic(spec)
        ds.matrix.name = f"sibling_{k}"
        out.append(ds.matrix)
    return out


def ablate_vae_pretrain(Y, meta, cfg, target_matrix, log=None):
    """Pretrained-VAE arm vs fresh-VAE arm under identical seeds and masks."""
    sources = sibling_datasets(cfg, cfg.ablate.pretrain_sources)
    vae, _ = pretrain(sources, cfg.vae, target=target_matrix)
    pre = run_folds(Y, meta, cfg, vae_init=vae, log=log)
    fresh = run_folds(Y, meta, cfg, log=log)
    return {"pretrained": pre, "random": fresh}


def ablate_metadata(Y, meta, cfg, log=None):
    on = run_folds(Y, meta, dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, use_metadata=True)), log=log)
    off = run_folds(Y, meta, dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, use_metadata=False)),
                    log=log)
    return {"metadata_on": on, "metadata_off": off}


def ablate_decay(Y, meta, cfg, alphas=None, log=None):
    alphas = list(cfg.ablate.alphas if alphas is None else alphas)
    return {f"alpha={a}": run_folds(Y, meta, dataclasses.replace(cfg, model=dataclasses.replace(
        cfg.model, decay_alpha=float(a))), log=log) for a in alphas}


def arm_table(arms: dict):
    """Rows of (arm, mean PCC, std PCC, per-fold PCC) for the DepMicroDiff method."""
    rows = []
    for name, results in arms.items():
        vals = np.array([r.pcc() for r in results])
        rows.append({"arm": name, "pcc_mean": float(vals.mean()),
                     "pcc_std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
                     "per_fold_pcc": vals.tolist()})
    return rows


def load_synthetic(cfg):
    ds = generate_synthetic(synthetic_spec(cfg.synth))
    return ds, normalize(ds.matrix)


def benchmark_arms(Y, meta, cfg, target_matrix, log=None, ablations=True):
    """The full method (VAE pretrained on sibling cohorts, metadata on) plus
    its fresh-VAE and metadata-off ablations, all under the same fold seeds."""
    on = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, use_metadata=True))
    off = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, use_metadata=False))
    vae, _ = pretrain(sibling_datasets(cfg, cfg.ablate.pretrain_sources), cfg.vae, target=target_matrix)
    arms = {"main": run_folds(Y, meta, on, vae_init=vae, log=log)}
    if ablations:
        arms["random_vae"] = run_folds(Y, meta, on, log=log)
        arms["metadata_off"] = run_folds(Y, meta, off, vae_init=vae, log=log)
    return arms
