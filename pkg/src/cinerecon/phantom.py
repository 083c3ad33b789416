"""Synthetic cine cardiac phantoms and dataset generation.

A phantom is a stack of painted ellipses: a static body outline, a few static random
"organs", and a heart made of a myocardial ellipse with a left and a right blood pool whose
axes scale by ``1 - a cos(2 pi t / T)`` (end-systole at t=0, end-diastole at t=T/2). A smooth
random phase map makes the images genuinely complex.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import storage
from .errors import ValidationError
from .kspace import CineSlice, KSpaceData, default_center_lines, forward_operator, make_mask

BODY_INTENSITY = 0.25
MYOCARDIUM_INTENSITY = 0.5
RV_INTENSITY = 0.7
LV_INTENSITY = 1.0
SUPERSAMPLE = 4


@dataclass
class PhantomSpec:
    frames: int = 12
    height: int = 64
    width: int = 64
    n_ellipses: int = 4
    contraction_amplitude: float = 0.2
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.frames < 2:
            raise ValidationError("phantom needs at least 2 frames")
        if self.height < 32 or self.width < 32:
            raise ValidationError("phantom dimensions must be >= 32")
        if not 0.0 <= self.contraction_amplitude <= 0.5:
            raise ValidationError("contraction_amplitude must lie in [0, 0.5]")
        if self.noise_std < 0 or self.n_ellipses < 0:
            raise ValidationError("noise_std and n_ellipses must be nonnegative")


def contraction_scale(t: int, frames: int, amplitude: float) -> float:
    return 1.0 - amplitude * math.cos(2.0 * math.pi * t / frames)


def _ellipse(yy, xx, cy, cx, ay, ax, theta=0.0):
    c, s = math.cos(theta), math.sin(theta)
    dy, dx = yy - cy, xx - cx
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def _grid(height: int, width: int):
    """Supersampled pixel-centre coordinates in units of min(H, W) / 2, origin at the centre."""
    half = min(height, width) / 2.0
    ys = (np.arange(height * SUPERSAMPLE) + 0.5) / SUPERSAMPLE - height / 2.0
    xs = (np.arange(width * SUPERSAMPLE) + 0.5) / SUPERSAMPLE - width / 2.0
    return np.meshgrid(ys / half, xs / half, indexing="ij")


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return img.reshape(h // SUPERSAMPLE, SUPERSAMPLE, w // SUPERSAMPLE, SUPERSAMPLE).mean(axis=(1, 3))


def _smooth_phase(yy, xx, rng) -> np.ndarray:
    phase = np.zeros_like(yy)
    for _ in range(3):
        fy, fx = rng.uniform(-1.5, 1.5, size=2)
        phase += rng.uniform(0.2, 0.6) * np.cos(math.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * math.pi))
    return phase


def generate_cine_phantom(spec: PhantomSpec) -> CineSlice:
    rng = np.random.default_rng(spec.seed)
    yy, xx = _grid(spec.height, spec.width)

    body_ax = (rng.uniform(0.8, 0.9), rng.uniform(0.65, 0.75))
    statics = []
    for _ in range(spec.n_ellipses):
        r = rng.uniform(0.1, 0.6)
        ang = rng.uniform(0, 2 * math.pi)
        statics.append(
            (r * math.sin(ang), r * math.cos(ang), rng.uniform(0.05, 0.18), rng.uniform(0.05, 0.18),
             rng.uniform(0, math.pi), rng.uniform(0.3, 0.6))
        )
    hy, hx = rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)
    tilt = rng.uniform(-0.4, 0.4)
    myo = (rng.uniform(0.28, 0.32), rng.uniform(0.26, 0.30))
    lv = (myo[0] * 0.62, myo[1] * 0.62)
    rv = (lv[0] * 1.1, lv[1] * 0.7)
    rv_offset = (-0.05, -(myo[1] + rv[1]) * 0.85)

    static = np.zeros_like(yy)
    static[_ellipse(yy, xx, 0.0, 0.0, body_ax[1], body_ax[0])] = BODY_INTENSITY
    for cy, cx, ay, ax, th, val in statics:
        static[_ellipse(yy, xx, cy, cx, ay, ax, th)] = val

    phase = _downsample(_smooth_phase(yy, xx, rng))
    frames = []
    for t in range(spec.frames):
        s = contraction_scale(t, spec.frames, spec.contraction_amplitude)
        img = static.copy()
        img[_ellipse(yy, xx, hy, hx, myo[0] * s, myo[1] * s, tilt)] = MYOCARDIUM_INTENSITY
        img[_ellipse(yy, xx, hy + rv_offset[0] * s, hx + rv_offset[1] * s, rv[0] * s, rv[1] * s, tilt)] = RV_INTENSITY
        img[_ellipse(yy, xx, hy, hx, lv[0] * s, lv[1] * s, tilt)] = LV_INTENSITY
        frames.append(_downsample(img))
    data = np.stack(frames) * np.exp(1j * phase)
    if spec.noise_std > 0:
        data = data + spec.noise_std / math.sqrt(2) * (rng.normal(size=data.shape) + 1j * rng.normal(size=data.shape))
    return CineSlice(data, frame_rate_hint=float(spec.frames))


def blood_pool_area(cine: CineSlice, frame: int) -> float:
    """Pixel area of the left blood pool in one frame, by thresholding halfway between myocardium and LV intensity."""
    return float((np.abs(cine.data[frame]) > 0.5 * (MYOCARDIUM_INTENSITY + LV_INTENSITY)).sum())


def split_counts(n: int, ratios: Sequence[float] = (90, 20, 10)) -> Tuple[int, int, int]:
    """Train/eval/test counts: eval rounds up, test rounds to nearest (at least 1), train takes the rest."""
    total = float(sum(ratios))
    n_eval = math.ceil(n * ratios[1] / total) if ratios[1] > 0 else 0
    n_test = max(1, int(round(n * ratios[2] / total))) if ratios[2] > 0 else 0
    n_train = n - n_eval - n_test
    if n_train < 0 or (ratios[0] > 0 and n_train < 1):
        raise ValidationError(f"{n} slices cannot be split {tuple(ratios)}")
    return n_train, n_eval, n_test


@dataclass
class DatasetItem:
    slice_id: str
    split: str
    cine: CineSlice
    kspace: Dict[int, KSpaceData]
    spec: PhantomSpec


def generate_dataset(
    n_slices: int,
    spec_template: PhantomSpec,
    seed: int,
    out_dir: Optional[Path] = None,
    accelerations: Sequence[int] = (4, 8, 10),
    split: Sequence[float] = (90, 20, 10),
    center_lines: Optional[int] = None,
    size_choices: Optional[Sequence[Tuple[int, int]]] = None,
) -> List[DatasetItem]:
    """Randomised phantoms with fully sampled and undersampled k-space per acceleration.

    When ``out_dir`` is given, containers and a ``manifest.json`` are written there.
    """
    if n_slices < 1:
        raise ValidationError("n_slices must be >= 1")
    counts = split_counts(n_slices, split)
    root = np.random.SeedSequence(seed)
    split_rng = np.random.default_rng(root.spawn(1)[0])
    order = split_rng.permutation(n_slices)
    labels = np.empty(n_slices, dtype=object)
    labels[order[: counts[0]]] = "train"
    labels[order[counts[0] : counts[0] + counts[1]]] = "eval"
    labels[order[counts[0] + counts[1] :]] = "test"

    items = []
    for i, child in enumerate(root.spawn(n_slices)):
        rng = np.random.default_rng(child)
        h, w = spec_template.height, spec_template.width
        if size_choices:
            h, w = size_choices[int(rng.integers(len(size_choices)))]
        amp = float(np.clip(spec_template.contraction_amplitude + rng.uniform(-0.05, 0.05), 0.0, 0.5))
        spec = dataclasses.replace(
            spec_template,
            height=int(h),
            width=int(w),
            n_ellipses=max(0, spec_template.n_ellipses + int(rng.integers(-1, 2))),
            contraction_amplitude=amp,
            seed=int(rng.integers(2**31)),
        )
        cine = generate_cine_phantom(spec)
        kspace = {0: forward_operator(cine, None)}
        cl = default_center_lines(w) if center_lines is None else center_lines
        for acc in accelerations:
            mask = make_mask(w, acc, cl, seed=int(rng.integers(2**31)))
            kspace[acc] = forward_operator(cine, mask)
        items.append(DatasetItem(f"slice_{i:04d}", str(labels[i]), cine, kspace, spec))

    if out_dir is not None:
        write_dataset(items, Path(out_dir), seed=seed, split=split)
    return items


def write_dataset(items: List[DatasetItem], out_dir: Path, seed: int, split: Sequence[float]) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for item in items:
        files = {"image": f"{item.slice_id}_gt"}
        storage.save_cine(out_dir / files["image"], item.cine, {"phantom": dataclasses.asdict(item.spec)})
        masks = {}
        for acc, k in item.kspace.items():
            name = f"{item.slice_id}_k{'full' if acc == 0 else f'{acc:02d}'}"
            storage.save_kspace(out_dir / name, k, {"acceleration": acc, "slice_id": item.slice_id})
            files["kfull" if acc == 0 else str(acc)] = name
            if k.mask is not None:
                masks[str(acc)] = k.mask.params()
        entries.append({"id": item.slice_id, "split": item.split, "files": files, "masks": masks,
                        "original_size": list(item.cine.original_size)})
    manifest = {
        "version": storage.FORMAT_VERSION,
        "seed": seed,
        "split_ratios": list(split),
        "splits": {s: [e["id"] for e in entries if e["split"] == s] for s in ("train", "eval", "test")},
        "slices": entries,
    }
    path = out_dir / "manifest.json"
    storage.write_json(path, manifest)
    return path
