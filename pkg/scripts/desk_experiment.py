"""Desk-scale comparison on synthetic phantoms (zero-filled, U-Net, plain / weight-shared CRNN,
sequential and end-to-end refinement) under a matched epoch budget.

    python scripts/desk_experiment.py --seeds 0 1 2 --epochs 30 --out runs/desk
"""

import argparse
import json
import tempfile
from pathlib import Path

from cinerecon.experiments import VARIANTS, run_ablation


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--variants", nargs="*", default=list(VARIANTS))
    p.add_argument("--out", type=Path, default=None)
    args = p.parse_args()
    workdir = Path(args.out or tempfile.mkdtemp(prefix="desk_"))
    workdir.mkdir(parents=True, exist_ok=True)
    summary = {}
    for seed in args.seeds:
        res = run_ablation(seed, workdir / f"seed{seed}", args.epochs, args.variants)
        print(f"seed {seed}: " + ", ".join(f"{k} {v:.0f}s" for k, v in res.seconds.items()))
        for proto, table in res.tables.items():
            print(table.to_markdown())
            (workdir / f"seed{seed}_{proto}.json").write_text(table.to_json())
        summary[seed] = {m: res.mean(m) for m in res.tables["full_image"].models}
        summary[seed]["n_params"] = res.n_params
    print(json.dumps(summary, indent=2))
    (workdir / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
