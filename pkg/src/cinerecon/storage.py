"""On-disk formats.

Cine volumes and k-space: ``<stem>.npz`` holding real arrays ``real`` and ``imag`` of shape
(T, H, W), plus a ``<stem>.json`` sidecar. Masks: ``<stem>.npz`` with a boolean ``lines``
array plus a ``<stem>.json`` parameter record.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import DataError
from .kspace import CineSlice, KSpaceData, SamplingMask

PathLike = Union[str, Path]
FORMAT_VERSION = 1


def _stem(path: PathLike) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".npz", ".json") else path


def write_json(path: PathLike, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True))


def read_json(path: PathLike) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _save_complex(stem: Path, data: np.ndarray) -> None:
    stem.parent.mkdir(parents=True, exist_ok=True)
    np.savez(stem.with_suffix(".npz"), real=np.ascontiguousarray(data.real), imag=np.ascontiguousarray(data.imag))


def _load_complex(stem: Path) -> np.ndarray:
    try:
        with np.load(stem.with_suffix(".npz")) as f:
            real, imag = f["real"], f["imag"]
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"malformed container {stem.with_suffix('.npz')}: {exc}") from exc
    if real.shape != imag.shape or real.ndim != 3:
        raise DataError(f"container {stem} must hold matching (T, H, W) real/imag arrays")
    return real + 1j * imag


def save_mask(path: PathLike, mask: SamplingMask) -> Path:
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    np.savez(stem.with_suffix(".npz"), lines=mask.lines)
    write_json(stem.with_suffix(".json"), {"kind": "mask", "version": FORMAT_VERSION, **mask.params()})
    return stem


def load_mask(path: PathLike) -> SamplingMask:
    stem = _stem(path)
    rec = read_json(stem.with_suffix(".json"))
    try:
        with np.load(stem.with_suffix(".npz")) as f:
            lines = f["lines"]
    except (OSError, KeyError) as exc:
        raise DataError(f"malformed mask file {stem}: {exc}") from exc
    return SamplingMask(lines, rec["acceleration"], rec["center_lines"], rec["seed"], rec.get("nonstandard", False))


def save_cine(path: PathLike, cine: CineSlice, meta: Optional[dict] = None) -> Path:
    stem = _stem(path)
    _save_complex(stem, cine.data)
    record = {
        "kind": "image",
        "version": FORMAT_VERSION,
        "shape": list(cine.shape),
        "original_size": list(cine.original_size),
        "padded": cine.padded,
        "frame_rate_hint": cine.frame_rate_hint,
        **(meta or {}),
    }
    write_json(stem.with_suffix(".json"), record)
    return stem


def load_cine(path: PathLike) -> CineSlice:
    stem = _stem(path)
    rec = read_json(stem.with_suffix(".json"))
    if rec.get("kind") != "image":
        raise DataError(f"{stem} is not an image container (kind={rec.get('kind')!r})")
    return CineSlice(
        _load_complex(stem),
        frame_rate_hint=rec.get("frame_rate_hint"),
        padded=rec.get("padded", False),
        original_size=tuple(rec["original_size"]),
    )


def save_kspace(path: PathLike, kspace: KSpaceData, meta: Optional[dict] = None) -> Path:
    stem = _stem(path)
    _save_complex(stem, kspace.data)
    record = {
        "kind": "kspace",
        "version": FORMAT_VERSION,
        "shape": list(kspace.data.shape),
        "original_size": list(kspace.original_size),
        "fully_sampled": kspace.fully_sampled,
        **(meta or {}),
    }
    if kspace.mask is not None:
        mask_stem = save_mask(stem.parent / (stem.name + "_mask"), kspace.mask)
        record["mask"] = kspace.mask.params()
        record["mask_file"] = mask_stem.name
    write_json(stem.with_suffix(".json"), record)
    return stem


def load_kspace(path: PathLike) -> KSpaceData:
    stem = _stem(path)
    rec = read_json(stem.with_suffix(".json"))
    if rec.get("kind") != "kspace":
        raise DataError(f"{stem} is not a k-space container (kind={rec.get('kind')!r})")
    mask = None
    if not rec.get("fully_sampled", False):
        if "mask_file" not in rec:
            raise DataError(f"{stem} is undersampled but has no mask_file entry")
        mask = load_mask(stem.parent / rec["mask_file"])
    meta = {k: v for k, v in rec.items() if k not in ("kind", "version", "shape", "original_size", "fully_sampled")}
    return KSpaceData(_load_complex(stem), mask, original_size=tuple(rec["original_size"]), meta=meta)
