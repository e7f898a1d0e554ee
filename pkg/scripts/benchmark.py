"""Synthetic benchmark: DepMicroDiff vs KNN vs mean over mask-seed folds,
plus the metadata and VAE-pretraining arms.

    python3 scripts/benchmark.py --config configs/acceptance.yaml --out runs/benchmark
"""

import argparse
import json
import sys
import time
from pathlib import Path

from depmicrodiff import experiment
from depmicrodiff.config import dump_config, load_config
from depmicrodiff.evaluation import write_boxplot, write_report
from depmicrodiff.metadata import make_provider


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/acceptance.yaml")
    ap.add_argument("--out", default="runs/benchmark")
    ap.add_argument("--set", action="append", default=[])
    ap.add_argument("--main-only", action="store_true", help="skip the ablation arms")
    args = ap.parse_args(argv)
    cfg = load_config(args.config, args.set, out=args.out)
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")

    ds, Y = experiment.load_synthetic(cfg)
    meta = make_provider(cfg.embedding.kind, cfg.embedding.dim, cfg.embedding.seed).embed_all(ds.metadata)
    t0 = time.time()

    def log(rec):
        if rec["epoch"] % 100 == 0:
            print(f"[{time.time() - t0:7.0f}s] epoch {rec['epoch']} val {rec['val_loss']:.4f}", flush=True)

    arms = experiment.benchmark_arms(Y, meta, cfg, ds.matrix, log=log, ablations=not args.main_only)
    summary = {name: experiment.fold_summary(res) for name, res in arms.items()}
    write_report(out / "benchmark.json", {"arms": summary, "table": experiment.arm_table(arms),
                                          "seconds": time.time() - t0})
    s = summary["main"]
    write_boxplot(out / "folds.tsv", {m: s[m]["per_fold_pcc"] for m in experiment.METHODS})
    for m in experiment.METHODS:
        print(f"{m:14s} PCC {s[m]['pcc']['text']}  folds {[round(v, 3) for v in s[m]['per_fold_pcc']]}")
    print(f"folds won {s['folds_won']}/{len(arms['main'])}; margin over mean {s['margin_over_mean']:.3f}")
    for row in experiment.arm_table(arms):
        print(f"arm {row['arm']:14s} {row['pcc_mean']:.4f}±{row['pcc_std']:.4f}")
    print(json.dumps({"seconds": round(time.time() - t0)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
