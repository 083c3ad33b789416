"""SSIM, NMSE, PSNR and the challenge evaluation protocol.

All metrics operate on magnitude images. For (T, H, W) stacks, NMSE and PSNR pool over the
whole stack and SSIM is the mean of per-frame 2D SSIM, each with ``data_range`` defaulting to
the reference maximum over the stack.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ValidationError

K1 = 0.01
K2 = 0.03
SSIM_SIGMA = 1.5


def gaussian_window(size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1D Gaussian taps of odd length ``size``."""
    if size < 1 or size % 2 == 0:
        raise ValidationError(f"SSIM window must be a positive odd integer, got {size}")
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    return g / g.sum()


def _as_real(x) -> np.ndarray:
    x = np.asarray(x)
    return np.abs(x) if np.iscomplexobj(x) else x.astype(np.float64)


def _check_pair(pred, ref) -> Tuple[np.ndarray, np.ndarray]:
    pred, ref = _as_real(pred), _as_real(ref)
    if pred.shape != ref.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {ref.shape}")
    return pred, ref


def _valid_filter(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    pad = (taps.size - 1) // 2
    out = correlate1d(correlate1d(img, taps, axis=-2, mode="reflect"), taps, axis=-1, mode="reflect")
    if pad:
        out = out[..., pad:-pad, pad:-pad]
    return out


def ssim_map(pred, ref, data_range: float, window: int = 7, k1: float = K1, k2: float = K2,
             sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Local SSIM over the valid region (borders of half a window are dropped)."""
    pred, ref = _check_pair(pred, ref)
    if window > min(pred.shape[-2:]):
        raise ValidationError(f"window {window} larger than image {pred.shape[-2:]}")
    taps = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_x = _valid_filter(pred, taps)
    mu_y = _valid_filter(ref, taps)
    sxx = _valid_filter(pred * pred, taps) - mu_x**2
    syy = _valid_filter(ref * ref, taps) - mu_y**2
    sxy = _valid_filter(pred * ref, taps) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return num / den


def ssim(pred, ref, window: int = 7, k1: float = K1, k2: float = K2,
         data_range: Optional[float] = None, sigma: float = SSIM_SIGMA) -> float:
    pred, ref = _check_pair(pred, ref)
    if data_range is None:
        data_range = float(ref.max())
    if data_range <= 0:
        raise ValidationError("data_range must be positive")
    if pred.ndim == 2:
        return float(ssim_map(pred, ref, data_range, window, k1, k2, sigma).mean())
    if pred.ndim != 3:
        raise ValidationError("ssim expects a 2D image or (T, H, W) stack")
    return float(np.mean([ssim_map(p, r, data_range, window, k1, k2, sigma).mean() for p, r in zip(pred, ref)]))


def nmse(pred, ref) -> float:
    pred, ref = _check_pair(pred, ref)
    denom = float(np.sum(ref**2))
    if denom == 0:
        raise ValidationError("nmse undefined for an all-zero reference")
    return float(np.sum((pred - ref) ** 2) / denom)


def psnr(pred, ref, data_range: Optional[float] = None) -> float:
    pred, ref = _check_pair(pred, ref)
    if data_range is None:
        data_range = float(ref.max())
    mse = float(np.mean((pred - ref) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


@dataclass
class MetricReport:
    ssim: float
    nmse: float
    psnr: float
    protocol: str
    n_frames_evaluated: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChallengeReport:
    full_image: MetricReport
    challenge_crop: MetricReport

    def to_dict(self) -> dict:
        return {"full_image": self.full_image.to_dict(), "challenge_crop": self.challenge_crop.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChallengeReport":
        return cls(MetricReport(**d["full_image"]), MetricReport(**d["challenge_crop"]))


def challenge_crop_box(height: int, width: int) -> Tuple[slice, slice]:
    """Central crop with one sixth of the image area: floor(H/2) x floor(W/3), centred."""
    ch, cw = height // 2, width // 3
    top, left = (height - ch) // 2, (width - cw) // 2
    return slice(top, top + ch), slice(left, left + cw)


def report(pred_mag: np.ndarray, ref_mag: np.ndarray, protocol: str, window: int = 7) -> MetricReport:
    return MetricReport(
        ssim=ssim(pred_mag, ref_mag, window=window),
        nmse=nmse(pred_mag, ref_mag),
        psnr=psnr(pred_mag, ref_mag),
        protocol=protocol,
        n_frames_evaluated=int(pred_mag.shape[0]),
    )


def challenge_eval(pred, ref, n_frames: int = 3, window: int = 7) -> ChallengeReport:
    """Metrics on the whole magnitude stack and on the first ``n_frames`` frames' central crop.

    ``pred`` and ``ref`` are CineSlice objects or (T, H, W) arrays.
    """
    p = _as_real(getattr(pred, "data", pred))
    r = _as_real(getattr(ref, "data", ref))
    if p.shape != r.shape or p.ndim != 3:
        raise ValidationError(f"challenge_eval needs matching (T, H, W) stacks, got {p.shape} / {r.shape}")
    if p.shape[0] < n_frames:
        raise ValidationError(f"challenge protocol needs at least {n_frames} frames, got {p.shape[0]}")
    rows, cols = challenge_crop_box(*p.shape[1:])
    full = report(p, r, "full_image", window)
    crop = report(p[:n_frames, rows, cols], r[:n_frames, rows, cols], "challenge_crop", window)
    return ChallengeReport(full, crop)


def average_reports(reports: Sequence[MetricReport]) -> MetricReport:
    if not reports:
        raise ValidationError("no reports to average")
    return MetricReport(
        ssim=float(np.mean([r.ssim for r in reports])),
        nmse=float(np.mean([r.nmse for r in reports])),
        psnr=float(np.mean([r.psnr for r in reports])),
        protocol=reports[0].protocol,
        n_frames_evaluated=int(sum(r.n_frames_evaluated for r in reports)),
    )


class MetricTable:
    """Aggregate table laid out as rows (acceleration, metric) by columns (model)."""

    METRICS = ("ssim", "nmse", "psnr")

    def __init__(self, protocol: str, values: Optional[Dict[str, Dict[str, Dict[str, float]]]] = None):
        self.protocol = protocol
        # values[acc][model][metric]
        self.values: Dict[str, Dict[str, Dict[str, float]]] = values or {}

    def add(self, acceleration, model: str, rep: MetricReport) -> None:
        self.values.setdefault(str(acceleration), {})[model] = {m: getattr(rep, m) for m in self.METRICS}

    @property
    def models(self) -> List[str]:
        seen: List[str] = []
        for per_model in self.values.values():
            seen.extend(m for m in per_model if m not in seen)
        return seen

    def get(self, acceleration, model: str, metric: str) -> float:
        return self.values[str(acceleration)][model][metric]

    def to_json(self) -> str:
        return json.dumps({"protocol": self.protocol, "values": self.values}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricTable":
        d = json.loads(text)
        return cls(d["protocol"], d["values"])

    def to_markdown(self) -> str:
        models = self.models
        lines = [f"protocol: {self.protocol}", "", "| AR | metric | " + " | ".join(models) + " |",
                 "|---|---|" + "---|" * len(models)]
        for acc in sorted(self.values, key=int):
            for metric in self.METRICS:
                cells = []
                for m in models:
                    v = self.values[acc].get(m, {}).get(metric)
                    cells.append("" if v is None else f"{v:.4f}")
                lines.append(f"| {acc}x | {metric.upper()} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def __eq__(self, other) -> bool:
        return isinstance(other, MetricTable) and self.protocol == other.protocol and self.values == other.values
