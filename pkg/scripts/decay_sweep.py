"""AR-step decay sweep: masked-entry PCC for each decay alpha over the mask-seed folds.

    python3 scripts/decay_sweep.py --config configs/acceptance.yaml --out runs/decay --set ablate.alphas=[0.7,0.9]
"""

import argparse
import sys
from pathlib import Path

from depmicrodiff import experiment
from depmicrodiff.config import dump_config, load_config
from depmicrodiff.evaluation import write_report
from depmicrodiff.metadata import make_provider


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/acceptance.yaml")
    ap.add_argument("--out", default="runs/decay")
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args(argv)
    cfg = load_config(args.config, args.set, out=args.out)
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")

    ds, Y = experiment.load_synthetic(cfg)
    e = cfg.embedding
    meta = make_provider(e.kind, e.dim, e.seed).embed_all(ds.metadata)
    table = experiment.arm_table(experiment.ablate_decay(Y, meta, cfg))
    write_report(out / "decay_sweep.json", {"table": table})
    for row in table:
        print(f"{row['arm']:10s} {row['pcc_mean']:.4f} +/- {row['pcc_std']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
