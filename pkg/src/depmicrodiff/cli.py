"""Command-line entry point.

Every command resolves its configuration, writes it to ``<out>/config.yaml``
and keeps all of its artifacts in ``<out>``. Exit codes: 0 success, 2 config
error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment
from .config import RunConfig, dump_config, load_config
from .dat import DATCheckpoint, impute, train
from .data import (NormalizedMatrix, align_metadata, apply_eval_mask, compute_dropout_rate,
                   generate_synthetic, load_abundance, load_matrix, load_metadata, normalize, select_features,
                   write_matrix, write_metadata)
from .dependency import (DependencyMatrix, export_network, infer_dependencies, read_binary_matrix,
                         write_binary_matrix)
from .errors import ConfigError, DataError, TrainingDivergence
from .evaluation import evaluate, knn_impute, mean_impute, write_boxplot, write_heatmap, write_report
from .metadata import load_precomputed, make_provider
from .vae import load_vae, pretrain, save_vae

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4


class _JsonLog:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w", encoding="utf-8")

    def __call__(self, rec):
        self.fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def _require(value, what):
    if not value:
        raise ConfigError(f"missing required setting {what}")
    return value


def _out(cfg):
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_mask(path, Y: NormalizedMatrix):
    if not path:
        return np.zeros(Y.shape, dtype=np.int8)
    vals, rows, cols = load_matrix(path)
    if list(rows) != list(Y.sample_ids) or list(cols) != list(Y.feature_ids):
        raise DataError(f"mask {path} ids do not match the data matrix")
    if not np.isin(vals, (0, 1)).all():
        raise DataError(f"mask {path} must be binary")
    return vals.astype(np.int8)


def load_input(cfg):
    """The working matrix: normalized, feature-selected, with mask entries hidden."""
    path = _require(cfg.paths.data, "paths.data")
    if cfg.data.normalized:
        vals, rows, cols = load_matrix(path)
        Y = NormalizedMatrix(vals, list(rows), list(cols))
    else:
        M = load_abundance(path, samples_in_rows=cfg.data.samples_in_rows)
        if cfg.data.select:
            M = select_features(M, cfg.data.select, cfg.data.select_param)
        Y = normalize(M)
    mask = _load_mask(cfg.paths.mask, Y)
    return Y.with_values(np.where(mask == 1, 0.0, Y.values)), mask


def load_embeddings(cfg, sample_ids, use_metadata=None):
    """Metadata embeddings aligned to ``sample_ids``, or None when conditioning is off."""
    if not (cfg.model.use_metadata if use_metadata is None else use_metadata):
        return None, None
    if cfg.paths.embeddings:
        prov = load_precomputed(cfg.paths.embeddings)
        return np.stack([prov.embed(s) for s in sample_ids]), prov.describe()
    if not cfg.paths.metadata:
        raise ConfigError("metadata conditioning is on: set paths.metadata or paths.embeddings "
                          "(or model.use_metadata=false)")
    e = cfg.embedding
    prov = make_provider(e.kind, e.dim, e.seed, command=e.command, enabled=e.enabled)
    records = align_metadata(load_metadata(cfg.paths.metadata), sample_ids)
    return prov.embed_all(records), prov.describe()


def _deps(cfg, Y):
    if cfg.paths.deps:
        d = Path(cfg.paths.deps)
        mats = {}
        for name in ("c_dir", "c_mi", "dep"):
            vals, ids = read_binary_matrix(d / f"{name}.tsv")
            if list(ids) != list(Y.feature_ids):
                raise DataError(f"{d / name}.tsv feature ids do not match the data")
            mats[name] = vals
        return DependencyMatrix(mats["c_dir"], mats["c_mi"], mats["dep"])
    d = cfg.dependency
    dep, _, _ = infer_dependencies(Y.values, alpha=d.alpha, lag=d.lag, mi_mode=d.mi_mode, mi_param=d.mi_param,
                                   bins=d.bins, n_perm=d.n_perm, seed=d.seed, jobs=cfg.jobs, fdr=d.fdr)
    return dep


def cmd_gen_synth(cfg: RunConfig):
    out = _out(cfg)
    ds = generate_synthetic(experiment.synthetic_spec(cfg.synth))
    M = ds.matrix
    write_matrix(out / "abundance.tsv", M.values, M.sample_ids, M.feature_ids)
    write_metadata(out / "metadata.tsv", ds.metadata)
    write_binary_matrix(out / "planted_c_dir.tsv", ds.planted.c_dir, M.feature_ids)
    Y = normalize(M)
    Ym, em = apply_eval_mask(Y, cfg.eval.mask_fraction, experiment.fold_seed(cfg.eval.seed, 0))
    write_matrix(out / "normalized.tsv", Y.values, Y.sample_ids, Y.feature_ids)
    write_matrix(out / "masked.tsv", Ym.values, Y.sample_ids, Y.feature_ids)
    write_matrix(out / "mask.tsv", em.mask, Y.sample_ids, Y.feature_ids, integer=True)
    summary = {"n_samples": M.shape[0], "n_features": M.shape[1], "dropout_rate": compute_dropout_rate(M),
               "planted_edges": [list(e) for e in experiment.synthetic_spec(cfg.synth).planted_edges],
               "masked_entries": em.count}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def cmd_infer_deps(cfg: RunConfig):
    out = _out(cfg)
    Y, _ = load_input(cfg)
    d = cfg.dependency
    dep, f_res, mi_res = infer_dependencies(Y.values, alpha=d.alpha, lag=d.lag, mi_mode=d.mi_mode,
                                            mi_param=d.mi_param, bins=d.bins, n_perm=d.n_perm, seed=d.seed,
                                            jobs=cfg.jobs, fdr=d.fdr)
    fids = Y.feature_ids
    write_binary_matrix(out / "c_dir.tsv", dep.c_dir, fids)
    write_binary_matrix(out / "c_mi.tsv", dep.c_mi, fids)
    write_binary_matrix(out / "dep.tsv", dep.dep, fids)
    export_network(f_res, out / "edges_directed.tsv", fids)
    export_network(f_res, out / "top_directed.tsv", fids, top=d.top)
    export_network([r for r in mi_res if r.i < r.j], out / "edges_mi.tsv", fids)
    return {"c_dir": int(dep.c_dir.sum()), "c_mi": int(dep.c_mi.sum()), "dep": int(dep.dep.sum())}


def cmd_pretrain_vae(cfg: RunConfig):
    out = _out(cfg)
    sources = [load_abundance(p, samples_in_rows=cfg.data.samples_in_rows) for p in
               _require(cfg.paths.pretrain, "paths.pretrain")]
    target = load_abundance(cfg.paths.data, samples_in_rows=cfg.data.samples_in_rows) if cfg.paths.data else None
    log = _JsonLog(out / "vae_log.jsonl")
    try:
        model, history = pretrain(sources, cfg.vae, target=target, log=log)
    finally:
        log.close()
    save_vae(out / "vae.npz", model, cfg.vae)
    return {"epochs_run": len(history), "n_sources": len(sources)}


def cmd_train(cfg: RunConfig):
    out = _out(cfg)
    Y, mask = load_input(cfg)
    meta, prov = load_embeddings(cfg, Y.sample_ids)
    dep = _deps(cfg, Y)
    vae_init = None
    if cfg.paths.vae_checkpoint:
        vae_init, vmeta = load_vae(cfg.paths.vae_checkpoint)
        if vmeta.get("feature_ids") and list(vmeta["feature_ids"]) != list(Y.feature_ids):
            raise DataError("pretrained VAE feature ids do not match the data")
    log = _JsonLog(out / "train_log.jsonl")
    try:
        ck = train(Y.values, dep, cfg.model, cfg.vae, meta=meta, known_missing=mask, vae_init=vae_init,
                   feature_ids=Y.feature_ids, provider=prov, log=log)
    finally:
        log.close()
    ck.save(out / "checkpoint.npz")
    return {"epochs_run": len(ck.history), "best_val_loss": min(r["val_loss"] for r in ck.history)}


def cmd_impute(cfg: RunConfig):
    out = _out(cfg)
    Y, mask = load_input(cfg)
    ck = DATCheckpoint.load(_require(cfg.paths.checkpoint, "paths.checkpoint"))
    if ck.feature_ids and list(ck.feature_ids) != list(Y.feature_ids):
        raise DataError("checkpoint feature ids do not match the data")
    meta, _ = load_embeddings(cfg, Y.sample_ids, use_metadata=ck.config.use_metadata)
    imputed = impute(Y, mask, ck, cfg.sampler, meta=meta)
    write_matrix(out / "imputed.tsv", imputed, Y.sample_ids, Y.feature_ids)
    return {"imputed_entries": int(mask.sum())}


def cmd_eval(cfg: RunConfig):
    out = _out(cfg)
    imp, rows, cols = load_matrix(_require(cfg.paths.imputed, "paths.imputed"))
    truth, trows, tcols = load_matrix(_require(cfg.paths.truth, "paths.truth"))
    if list(rows) != list(trows) or list(cols) != list(tcols):
        raise DataError("imputed and truth matrices have different ids")
    Yt = NormalizedMatrix(truth, list(trows), list(tcols))
    mask = _load_mask(cfg.paths.mask, Yt) if cfg.paths.mask else np.ones(truth.shape, dtype=np.int8)
    reports = {"depmicrodiff": evaluate(imp, truth, mask, {"imputed": cfg.paths.imputed})}
    if cfg.paths.mask:
        masked = np.where(mask == 1, 0.0, truth)
        reports["knn"] = evaluate(knn_impute(masked, mask, cfg.eval.knn_k), truth, mask)
        reports["mean"] = evaluate(mean_impute(masked, mask), truth, mask)
    write_report(out / "report.json", {k: r.to_dict() for k, r in reports.items()})
    write_heatmap(out / "per_feature_pcc.tsv", list(cols), {k: r.per_feature_pcc for k, r in reports.items()})
    return {k: r.pcc for k, r in reports.items()}


def cmd_ablate(cfg: RunConfig):
    out = _out(cfg)
    ds, Y = experiment.load_synthetic(cfg)
    meta = make_provider(cfg.embedding.kind, cfg.embedding.dim, cfg.embedding.seed).embed_all(ds.metadata)
    log = _JsonLog(out / "train_log.jsonl")
    try:
        arm = cfg.ablate.arm
        if arm == "vae_pretrain":
            arms = experiment.ablate_vae_pretrain(Y, meta, cfg, ds.matrix, log=log)
        elif arm == "metadata":
            arms = experiment.ablate_metadata(Y, meta, cfg, log=log)
        elif arm == "decay_sweep":
            arms = experiment.ablate_decay(Y, meta, cfg, log=log)
        else:
            raise ConfigError(f"unknown ablation arm {arm!r}; use vae_pretrain, metadata or decay_sweep")
    finally:
        log.close()
    table = experiment.arm_table(arms)
    write_report(out / f"ablation_{arm}.json", {"arm": arm, "rows": table,
                                                "summaries": {k: experiment.fold_summary(v) for k, v in arms.items()}})
    with open(out / f"ablation_{arm}.tsv", "w", encoding="utf-8") as fh:
        fh.write("arm\tpcc_mean\tpcc_std\n")
        for r in table:
            fh.write(f"{r['arm']}\t{r['pcc_mean']!r}\t{r['pcc_std']!r}\n")
    write_boxplot(out / f"ablation_{arm}_folds.tsv", {r["arm"]: r["per_fold_pcc"] for r in table})
    return {r["arm"]: r["pcc_mean"] for r in table}


COMMANDS = {
    "infer-deps": cmd_infer_deps,
    "pretrain-vae": cmd_pretrain_vae,
    "train": cmd_train,
    "impute": cmd_impute,
    "eval": cmd_eval,
    "gen-synth": cmd_gen_synth,
    "ablate": cmd_ablate,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed (overrides config)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (overrides paths.out)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads for pairwise tests")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override a config key, e.g. --set model.epochs=50 (repeatable)")
    parser = argparse.ArgumentParser(prog="depmicrodiff", parents=[common],
                                     description="Dependency-aware diffusion imputation for microbiome abundance data")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "ablate":
            p.add_argument("--arm", choices=("vae_pretrain", "metadata", "decay_sweep"), default=argparse.SUPPRESS)
    return parser


def main(argv=None):
    args = vars(build_parser().parse_args(argv))
    try:
        overrides = list(args.get("set", []))
        if "arm" in args:
            overrides.append(f"ablate.arm={args['arm']}")
        cfg = load_config(args.get("config"), overrides, seed=args.get("seed"), out=args.get("out"),
                          jobs=args.get("jobs"))
        out = _out(cfg)
        dump_config(cfg, out / "config.yaml")
        result = COMMANDS[args["command"]](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"training diverged: {exc} {json.dumps(exc.diagnostics, default=str)}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
