"""Desk-scale ablation protocol shared by ``scripts/`` and the acceptance suite.

Every trained variant gets the same budget of ``epochs`` passes over the training set:

- ``crnn``: plain CRNN, ``epochs``.
- ``end_to_end``: CRNN + refinement trained jointly, ``epochs``.
- ``sequential``: stage-1 CRNN for ``epochs // 2`` (reported as ``crnn_half``), then the
  refinement module alone on the frozen CRNN for the remaining epochs.
- ``crnn_ws``: weight-shared CRNN for ``epochs // 2``, compared against ``crnn_half``.
- ``unet``: cascaded U-Net baseline, ``epochs``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Sequence

from .config import RunConfig, from_dict
from .metrics import MetricTable
from .model import count_parameters
from .phantom import PhantomSpec, generate_dataset
from .train import evaluate, model_reconstructor, samples_from_items, train, zero_filled

DESK = {
    "data": {"frames": 8, "height": 32, "width": 32},
    "model": {"cascades": 3, "channels": 16},
    "unet": {"cascades": 3, "channels": 12},
    "optimizer": {"lr": 1e-3, "epochs": 30, "patience": 1000},
}
VARIANTS = ("crnn", "end_to_end", "sequential", "crnn_ws", "unet")


def desk_config(seed: int, workdir: Path, run_id: str, **sections) -> RunConfig:
    raw = json.loads(json.dumps(DESK))
    for key, value in sections.items():
        raw.setdefault(key, {}).update(value)
    raw.update(seed=seed, run_id=run_id, paths={
        "data_dir": str(workdir / "data"),
        "checkpoint_dir": str(workdir / "checkpoints"),
        "report_dir": str(workdir / "reports"),
    })
    return from_dict(raw)


def desk_samples(seed: int, n_train: int = 16, n_eval: int = 4, n_test: int = 20):
    d = DESK["data"]
    spec = PhantomSpec(frames=d["frames"], height=d["height"], width=d["width"])
    items = generate_dataset(n_train + n_eval + n_test, spec, seed=1000 + seed, split=(n_train, n_eval, n_test))
    return tuple(samples_from_items(items, s) for s in ("train", "eval", "test"))


@dataclass
class AblationResult:
    seed: int
    tables: Dict[str, MetricTable]
    n_params: Dict[str, int] = field(default_factory=dict)
    seconds: Dict[str, float] = field(default_factory=dict)
    eval_ssim: Dict[str, float] = field(default_factory=dict)

    def mean(self, model: str, metric: str = "ssim", protocol: str = "full_image") -> float:
        t = self.tables[protocol]
        accs = list(t.values)
        return sum(t.get(a, model, metric) for a in accs) / len(accs)


def run_ablation(seed: int, workdir: Path, epochs: int = 30, variants: Sequence[str] = VARIANTS,
                 accelerations: Sequence[int] = (4, 8, 10), n_test: int = 20) -> AblationResult:
    workdir = Path(workdir)
    tr, ev, te = desk_samples(seed, n_test=n_test)
    half = max(1, epochs // 2)
    recons = {"zero_filled": zero_filled}
    result = AblationResult(seed, {})

    def fit(name, n_epochs, **sections):
        t0 = time.time()
        sections.setdefault("optimizer", {})["epochs"] = n_epochs
        res = train(desk_config(seed, workdir, f"seed{seed}_{name}", **sections), tr, ev)
        result.seconds[name] = time.time() - t0
        result.n_params[name] = count_parameters(res.model)
        result.eval_ssim[name] = res.best_eval_ssim
        recons[name] = model_reconstructor(res.model)
        return res

    if "crnn" in variants:
        fit("crnn", epochs)
    if "end_to_end" in variants:
        fit("end_to_end", epochs, model={"refinement": "end_to_end"})
    if "sequential" in variants or "crnn_ws" in variants:
        stage1 = fit("crnn_half", half)
        if "sequential" in variants:
            fit("sequential", epochs - half, model={"refinement": "sequential"},
                train={"crnn_checkpoint": str(stage1.best_checkpoint)})
        if "crnn_ws" in variants:
            fit("crnn_ws", half, model={"weight_sharing": True})
    if "unet" in variants:
        fit("unet", epochs, train={"model_kind": "unet"})
    result.tables, _ = evaluate(te, recons, accelerations)
    return result
