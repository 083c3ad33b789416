"""Data loading, training, evaluation and reconstruction behind the CLI subcommands."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import storage
from .config import RunConfig
from .errors import DataError, PreconditionError, SchemaError
from .kspace import CineSlice, KSpaceData, apply_adjoint, crop_to, pad_to
from .losses import combined_loss
from .metrics import ChallengeReport, MetricTable, average_reports, challenge_eval, ssim
from .model import CRNN, UNetCascade, build_model, load_checkpoint, save_checkpoint
from .phantom import PhantomSpec, generate_dataset

log = logging.getLogger(__name__)

Reconstructor = Callable[["Sample", int], np.ndarray]


@dataclass
class Sample:
    slice_id: str
    split: str
    target: CineSlice
    kspace: Dict[int, KSpaceData]


# -- data ------------------------------------------------------------------------------------------


def gen_data(cfg: RunConfig) -> Path:
    d = cfg.data
    template = PhantomSpec(frames=d.frames, height=d.height, width=d.width, n_ellipses=d.n_ellipses,
                           contraction_amplitude=d.contraction_amplitude, noise_std=d.noise_std, seed=cfg.seed)
    generate_dataset(d.n_slices, template, cfg.seed, out_dir=Path(cfg.paths.data_dir),
                     accelerations=cfg.accelerations, split=d.split, center_lines=d.center_lines,
                     size_choices=[tuple(s) for s in d.size_choices] if d.size_choices else None)
    return Path(cfg.paths.data_dir) / "manifest.json"


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}; run gen-data first")
    return storage.read_json(path)


def load_samples(data_dir, split: str) -> List[Sample]:
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    samples = []
    for entry in manifest["slices"]:
        if entry["split"] != split:
            continue
        files = entry["files"]
        target = storage.load_cine(data_dir / files["image"])
        kspace = {}
        for key, name in files.items():
            if key == "image":
                continue
            kspace[0 if key == "kfull" else int(key)] = storage.load_kspace(data_dir / name)
        samples.append(Sample(entry["id"], split, target, kspace))
    return samples


def samples_from_items(items, split: Optional[str] = None) -> List[Sample]:
    return [Sample(it.slice_id, it.split, it.cine, it.kspace) for it in items if split is None or it.split == split]


# -- model IO --------------------------------------------------------------------------------------


def model_inputs(k: KSpaceData, canvas: Optional[Sequence[int]] = None, dtype=torch.complex64):
    """Zero-filled image (padded to ``canvas``), k-space and line mask as batched tensors.

    Everything is divided by the zero-filled maximum, which is returned as ``scale``.
    """
    zf = apply_adjoint(k.data, k.lines)
    scale = float(np.abs(zf).max()) or 1.0
    x = zf / scale
    if canvas is not None:
        x = pad_to(x, tuple(canvas))
    x = torch.as_tensor(x[None], dtype=dtype)
    y = torch.as_tensor(k.data[None] / scale, dtype=dtype)
    mask = torch.as_tensor(k.lines[None])
    return x, y, mask, scale


def _forward(model, x, y, mask, stage: str):
    if stage == "crnn":
        return model.reconstruct(x, y, mask)
    return model(x, y, mask)


def predict(model, k: KSpaceData, canvas=None, stage: str = "full") -> np.ndarray:
    """Reconstruction on the measured grid, in the data's own intensity scale."""
    x, y, mask, scale = model_inputs(k, canvas)
    with torch.no_grad():
        out = _forward(model, x, y, mask, stage)
    out = crop_to(out[0], tuple(k.data.shape[-2:]))
    return out.numpy().astype(np.complex128) * scale


def model_reconstructor(model, canvas=None, stage: str = "full") -> Reconstructor:
    model.eval()
    return lambda sample, acc: predict(model, sample.kspace[acc], canvas, stage)


def zero_filled(sample: Sample, acc: int) -> np.ndarray:
    k = sample.kspace[acc]
    return apply_adjoint(k.data, k.lines)


def ground_truth(sample: Sample, acc: int) -> np.ndarray:
    return sample.target.data


# -- training --------------------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: List[dict]
    best_checkpoint: Path
    last_checkpoint: Path
    best_eval_ssim: float
    log_path: Optional[Path] = None
    extra: dict = field(default_factory=dict)


def _canvas(cfg: RunConfig):
    return tuple(cfg.data.canvas) if cfg.data.canvas else None


def _target_tensor(sample: Sample, scale: float, dtype=torch.complex64) -> torch.Tensor:
    return torch.as_tensor(sample.target.data[None] / scale, dtype=dtype)


class _LossRouter:
    """Computes the per-sample training loss for the configured refinement mode."""

    def __init__(self, model, cfg: RunConfig, mode: str):
        self.model = model
        self.mode = mode
        self.canvas = _canvas(cfg)
        self.crnn_loss = cfg.training_loss()
        self.refine_loss = cfg.refinement_loss()
        self._cache: Dict[Tuple[str, int], torch.Tensor] = {}

    def __call__(self, sample: Sample, acc: int) -> Tuple[torch.Tensor, dict]:
        k = sample.kspace[acc]
        x, y, mask, scale = model_inputs(k, self.canvas)
        target = _target_tensor(sample, scale)
        grid = tuple(k.data.shape[-2:])
        if self.mode == "none":
            out = crop_to(self.model(x, y, mask), grid)
            return combined_loss(out, target, self.crnn_loss)
        if self.mode == "end_to_end":
            mid = self.model.reconstruct(x, y, mask)
            out = self.model.refine(mid)
            l_mid, p_mid = combined_loss(crop_to(mid, grid), target, self.refine_loss)
            l_out, p_out = combined_loss(crop_to(out, grid), target, self.refine_loss)
            parts = {f"crnn_{k}": v for k, v in p_mid.items()}
            parts.update({f"refine_{k}": v for k, v in p_out.items()})
            parts["total"] = float(l_mid.detach() + l_out.detach())
            return l_mid + l_out, parts
        # sequential: the CRNN is frozen, only the refinement module learns
        key = (sample.slice_id, acc)
        if key not in self._cache:
            with torch.no_grad():
                self._cache[key] = self.model.reconstruct(x, y, mask)
        out = self.model.refine(self._cache[key])
        return combined_loss(crop_to(out, grid), target, self.refine_loss)


def mean_eval_ssim(model, samples: Sequence[Sample], accelerations: Sequence[int], canvas=None) -> float:
    model.eval()
    vals = []
    for s in samples:
        for acc in accelerations:
            rec = predict(model, s.kspace[acc], canvas)
            vals.append(ssim(np.abs(rec), np.abs(s.target.data)))
    return float(np.mean(vals))


def _build_for_training(cfg: RunConfig):
    if cfg.train.model_kind == "unet":
        return build_model("unet", cfg.to_dict()["unet"]), "none"
    model = build_model("crnn", cfg.to_dict()["model"])
    mode = cfg.model.refinement
    if cfg.train.init_checkpoint:
        init, _ = load_checkpoint(cfg.train.init_checkpoint)
        model.load_state_dict(init.state_dict(), strict=False)
    if mode == "sequential":
        path = cfg.train.crnn_checkpoint
        if not path or not Path(path).exists():
            raise PreconditionError(
                "sequential refinement needs a trained CRNN: train stage 1 first with model.refinement=none, "
                "then pass its checkpoint as train.crnn_checkpoint"
            )
        stage1, _ = load_checkpoint(path)
        if not isinstance(stage1, CRNN):
            raise SchemaError(f"{path} is not a CRNN checkpoint")
        for key in ("cascades", "channels", "weight_sharing", "extra_bcrnn", "kernel_size"):
            if getattr(stage1.config, key) != getattr(cfg.model, key):
                raise SchemaError(f"stage-1 checkpoint {key}={getattr(stage1.config, key)} does not match config")
        missing, unexpected = model.load_state_dict(stage1.state_dict(), strict=False)
        if unexpected or any(not m.startswith("refine.") for m in missing):
            raise SchemaError("stage-1 checkpoint parameters do not match the CRNN layout")
        for name, p in model.named_parameters():
            p.requires_grad = name.startswith("refine.")
    return model, mode


def train(cfg: RunConfig, train_samples: Optional[List[Sample]] = None,
          eval_samples: Optional[List[Sample]] = None) -> TrainResult:
    """Mixed-acceleration training with Adam, gradient clipping, best-by-eval-SSIM checkpointing,
    early stopping and resume from the ``last`` checkpoint."""
    torch.manual_seed(cfg.seed)
    model, mode = _build_for_training(cfg)
    if train_samples is None:
        train_samples = load_samples(cfg.paths.data_dir, "train")
    if eval_samples is None:
        eval_samples = load_samples(cfg.paths.data_dir, "eval")
    if not train_samples:
        raise DataError("no training samples")
    eval_set = eval_samples or train_samples
    accs = [cfg.train.finetune_acceleration] if cfg.train.finetune_acceleration else list(cfg.accelerations)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.optimizer.lr)
    rng = np.random.default_rng(cfg.seed)

    ckdir = Path(cfg.paths.checkpoint_dir)
    best_path = ckdir / f"{cfg.run_id}_best.pt"
    last_path = ckdir / f"{cfg.run_id}_last.pt"
    history: List[dict] = []
    best = -math.inf
    stale = 0
    start = 0
    if cfg.train.resume and last_path.exists():
        resumed, extra = load_checkpoint(last_path)
        model.load_state_dict(resumed.state_dict())
        opt.load_state_dict(extra["optimizer"])
        rng.bit_generator.state = extra["rng"]
        history, best, stale, start = extra["history"], extra["best_ssim"], extra["stale"], extra["epoch"] + 1
        log.info("resumed %s at epoch %d", cfg.run_id, start)

    router = _LossRouter(model, cfg, mode)
    canvas = _canvas(cfg)
    bs = cfg.optimizer.batch_size
    for epoch in range(start, cfg.optimizer.epochs):
        model.train()
        order = rng.permutation(len(train_samples))
        if cfg.optimizer.steps_per_epoch:
            order = order[: cfg.optimizer.steps_per_epoch]
        losses = []
        opt.zero_grad()
        for n, idx in enumerate(order):
            acc = accs[int(rng.integers(len(accs)))]
            loss, _ = router(train_samples[idx], acc)
            (loss / bs).backward()
            losses.append(float(loss.detach()))
            if (n + 1) % bs == 0 or n == len(order) - 1:
                torch.nn.utils.clip_grad_norm_(params, cfg.optimizer.grad_clip)
                opt.step()
                opt.zero_grad()

        model.eval()
        with torch.no_grad():
            eval_loss = float(np.mean([float(router(s, a)[0]) for s in eval_set for a in accs]))
        eval_ssim = mean_eval_ssim(model, eval_set, accs, canvas)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "eval_loss": eval_loss,
                        "eval_ssim": eval_ssim})
        log.info("epoch %d train_loss %.5f eval_loss %.5f eval_ssim %.4f", epoch, history[-1]["train_loss"],
                 eval_loss, eval_ssim)
        if eval_ssim > best:
            best, stale = eval_ssim, 0
            save_checkpoint(best_path, model, {"epoch": epoch, "eval_ssim": eval_ssim, "run_id": cfg.run_id})
        else:
            stale += 1
        save_checkpoint(last_path, model, {
            "epoch": epoch, "optimizer": opt.state_dict(), "rng": rng.bit_generator.state,
            "history": history, "best_ssim": best, "stale": stale, "run_id": cfg.run_id,
        })
        if stale >= cfg.optimizer.patience:
            log.info("early stop at epoch %d", epoch)
            break

    report_dir = Path(cfg.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    log_path = report_dir / f"{cfg.run_id}_train_log.json"
    log_path.write_text(json.dumps(history, indent=2))
    best_model, _ = load_checkpoint(best_path)
    return TrainResult(best_model, history, best_path, last_path, best, log_path)


# -- evaluation ------------------------------------------------------------------------------------


def evaluate(samples: Sequence[Sample], reconstructors: Dict[str, Reconstructor],
             accelerations: Sequence[int]) -> Tuple[Dict[str, MetricTable], List[dict]]:
    """Per-acceleration mean metrics for each named reconstructor under both protocols."""
    tables = {p: MetricTable(p) for p in ("full_image", "challenge_crop")}
    records = []
    for acc in accelerations:
        for name, fn in reconstructors.items():
            reports: List[ChallengeReport] = []
            for s in samples:
                rep = challenge_eval(fn(s, acc), s.target)
                reports.append(rep)
                records.append({"slice_id": s.slice_id, "acceleration": acc, "model": name, **rep.to_dict()})
            tables["full_image"].add(acc, name, average_reports([r.full_image for r in reports]))
            tables["challenge_crop"].add(acc, name, average_reports([r.challenge_crop for r in reports]))
    return tables, records


def run_eval(cfg: RunConfig, checkpoint: Optional[str] = None, unet_checkpoint: Optional[str] = None,
             split: str = "test", samples: Optional[List[Sample]] = None) -> Dict[str, MetricTable]:
    if samples is None:
        samples = load_samples(cfg.paths.data_dir, split)
    if not samples:
        raise DataError(f"no samples in split {split!r}")
    canvas = _canvas(cfg)
    recons: Dict[str, Reconstructor] = {"zero_filled": zero_filled}
    if checkpoint:
        model, _ = load_checkpoint(checkpoint)
        recons["unet" if isinstance(model, UNetCascade) else "model"] = model_reconstructor(model, canvas)
    if unet_checkpoint:
        unet, _ = load_checkpoint(unet_checkpoint)
        recons["unet"] = model_reconstructor(unet, canvas)
    tables, records = evaluate(samples, recons, cfg.accelerations)
    out = Path(cfg.paths.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{cfg.run_id}_eval_records.json").write_text(json.dumps(records, indent=2))
    for proto, table in tables.items():
        (out / f"{cfg.run_id}_table_{proto}.json").write_text(table.to_json())
        (out / f"{cfg.run_id}_table_{proto}.md").write_text(table.to_markdown())
    return tables


# -- reconstruction --------------------------------------------------------------------------------


def run_reconstruct(cfg: RunConfig, checkpoint: str, inputs: Sequence[str],
                    references: Sequence[str] = ()) -> List[dict]:
    """Reconstruct k-space containers; write images, error maps and figures to the report dir."""
    from .figures import save_recon_figure

    if references and len(references) != len(inputs):
        raise DataError("--reference must list one file per input")
    model, _ = load_checkpoint(checkpoint)
    model.eval()
    out_dir = Path(cfg.paths.report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for i, path in enumerate(inputs):
        k = storage.load_kspace(path)
        recon = predict(model, k, _canvas(cfg))
        stem = Path(path).with_suffix("").name
        base = out_dir / f"{cfg.run_id}_{stem}"
        cine = CineSlice(recon, original_size=tuple(recon.shape[-2:]))
        entry = {"input": str(path), "recon": str(storage.save_cine(f"{base}_recon", cine)) + ".npz",
                 "shape": list(recon.shape)}
        ref_mag = None
        if references:
            ref = storage.load_cine(references[i])
            if ref.shape != recon.shape:
                raise DataError(f"reference {references[i]} shape {ref.shape} != reconstruction {recon.shape}")
            ref_mag = np.abs(ref.data)
            err = np.abs(np.abs(recon) - ref_mag)
            vmax = float(err.max())
            storage.save_cine(f"{base}_error", CineSlice(err.astype(np.complex128)),
                              {"error_map": "absolute magnitude error", "colorbar_max": vmax})
            entry.update({"error": f"{base}_error.npz", "colorbar_max": vmax, **challenge_eval(recon, ref).to_dict()})
        entry["figure"] = str(save_recon_figure(f"{base}.png", np.abs(recon), ref_mag))
        results.append(entry)
    (out_dir / f"{cfg.run_id}_reconstruct.json").write_text(json.dumps(results, indent=2))
    return results
