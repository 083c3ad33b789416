"""Command-line entry point: ``cinerecon {gen-data,train,eval,reconstruct}``.

Exit code 0 on success. On failure a one-line JSON object ``{"error": <category>, "message": ...}``
goes to stderr and the exit code identifies the category.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import dump_config, load_config
from .errors import CineReconError

EXIT_CODES = {"validation": 2, "data": 3, "schema": 4, "precondition": 5, "error": 1}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cinerecon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML or JSON run configuration")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set optimizer.epochs=5 (repeatable)")

    common(sub.add_parser("gen-data", help="generate a synthetic phantom dataset"))
    common(sub.add_parser("train", help="train a model on the dataset's train split"))
    ev = sub.add_parser("eval", help="metric tables on a split")
    common(ev)
    ev.add_argument("--checkpoint")
    ev.add_argument("--unet-checkpoint")
    ev.add_argument("--split", default="test", choices=("train", "eval", "test"))
    rc = sub.add_parser("reconstruct", help="reconstruct k-space containers")
    common(rc)
    rc.add_argument("--checkpoint", required=True)
    rc.add_argument("--input", nargs="+", required=True, help="k-space containers (.npz + .json sidecar)")
    rc.add_argument("--reference", nargs="*", default=[], help="optional reference image per input")
    return p


def run(argv: Optional[List[str]] = None) -> dict:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    cfg = load_config(args.config, args.overrides, command=args.command)

    from . import train as harness

    report_dir = Path(cfg.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, report_dir / f"{cfg.run_id}_{args.command}_config.yaml")

    if args.command == "gen-data":
        return {"manifest": str(harness.gen_data(cfg))}
    if args.command == "train":
        res = harness.train(cfg)
        return {"best_checkpoint": str(res.best_checkpoint), "last_checkpoint": str(res.last_checkpoint),
                "best_eval_ssim": res.best_eval_ssim, "epochs_run": len(res.history), "log": str(res.log_path)}
    if args.command == "eval":
        tables = harness.run_eval(cfg, args.checkpoint, args.unet_checkpoint, args.split)
        return {p: json.loads(t.to_json()) for p, t in tables.items()}
    return {"outputs": harness.run_reconstruct(cfg, args.checkpoint, args.input, args.reference)}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        result = run(argv)
    except CineReconError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
