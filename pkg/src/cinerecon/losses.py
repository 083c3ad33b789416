"""Training objectives on complex image tensors.

Every loss takes ``pred`` and ``target`` as tensors (complex, or real for the SSIM loss which
works on magnitudes) and returns a scalar tensor; inputs whose last two axes are the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import torch
import torch.nn.functional as F

from .errors import ValidationError
from .kspace import fft2c, ifft2c
from .metrics import K1, K2, SSIM_SIGMA

LOSS_KINDS = ("l1", "l2", "ssim", "perp", "l1_split")
PERP_EPS = 1e-8

# Named loss presets; all weights default to 1.
PRESETS: Dict[str, List[Tuple[str, float]]] = {
    "perp": [("perp", 1.0)],
    "l1": [("l1", 1.0)],
    "perp_l1": [("perp", 1.0), ("l1", 1.0)],
    "perp_l1_split": [("perp", 1.0), ("l1_split", 1.0)],
    "perp_ssim_l1_split": [("perp", 1.0), ("ssim", 1.0), ("l1_split", 1.0)],
    # used for the refinement stage and for end-to-end training
    "l1_ssim": [("l1", 1.0), ("ssim", 1.0)],
}


@dataclass
class LossConfig:
    terms: List[Tuple[str, float]] = field(default_factory=lambda: [("perp", 1.0), ("l1", 1.0)])
    highpass_cutoff: float = 0.25
    highpass_weight_ratio: float = 2.0
    ssim_window: int = 7

    def __post_init__(self):
        self.terms = [(str(k), float(w)) for k, w in self.terms]
        if not self.terms:
            raise ValidationError("loss needs at least one term")
        for kind, w in self.terms:
            if kind not in LOSS_KINDS:
                raise ValidationError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
            if w < 0:
                raise ValidationError(f"loss weight for {kind} must be nonnegative")
        if sum(w for _, w in self.terms) <= 0:
            raise ValidationError("loss weights must sum to a positive value")
        if not 0.0 < self.highpass_cutoff < 1.0:
            raise ValidationError("highpass_cutoff must lie in (0, 1)")
        if self.highpass_weight_ratio <= 0:
            raise ValidationError("highpass_weight_ratio must be positive")

    @classmethod
    def preset(cls, name: str, **kwargs) -> "LossConfig":
        if name not in PRESETS:
            raise ValidationError(f"unknown loss preset {name!r}; expected one of {sorted(PRESETS)}")
        return cls(terms=list(PRESETS[name]), **kwargs)


def _check(pred: torch.Tensor, target: torch.Tensor) -> None:
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check(pred, target)
    return (pred - target).abs().mean()


def l2_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check(pred, target)
    return (pred - target).abs().pow(2).mean()


def perp_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = PERP_EPS) -> torch.Tensor:
    """Distance of ``pred`` from the complex ray through ``target`` plus the magnitude error."""
    _check(pred, target)
    pred = pred if torch.is_complex(pred) else torch.complex(pred, torch.zeros_like(pred))
    target = target if torch.is_complex(target) else torch.complex(target, torch.zeros_like(target))
    t_abs = target.abs()
    cross = (pred.real * target.imag - pred.imag * target.real).abs()
    return (cross / t_abs.clamp_min(eps) + (pred.abs() - t_abs).abs()).mean()


def _gaussian_kernel(window: int, dtype, device) -> torch.Tensor:
    r = torch.arange(window, dtype=dtype, device=device) - (window - 1) / 2.0
    g = torch.exp(-0.5 * (r / SSIM_SIGMA) ** 2)
    return g / g.sum()


def ssim_torch(pred: torch.Tensor, target: torch.Tensor, window: int = 7, data_range=None) -> torch.Tensor:
    """Mean local SSIM of real images (..., H, W) over the valid region, Gaussian-weighted."""
    _check(pred, target)
    h, w = pred.shape[-2:]
    if window > min(h, w) or window % 2 == 0:
        raise ValidationError(f"window {window} invalid for image {(h, w)}")
    if data_range is None:
        data_range = target.detach().amax()
    g = _gaussian_kernel(window, pred.dtype, pred.device)
    kh = g.view(1, 1, window, 1)
    kw = g.view(1, 1, 1, window)

    def filt(z):
        z = z.reshape(-1, 1, h, w)
        return F.conv2d(F.conv2d(z, kh), kw)

    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_x, mu_y = filt(pred), filt(target)
    sxx = filt(pred * pred) - mu_x**2
    syy = filt(target * target) - mu_y**2
    sxy = filt(pred * target) - mu_x * mu_y
    s = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / ((mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2))
    return s.mean()


def ssim_loss(pred: torch.Tensor, target: torch.Tensor, window: int = 7) -> torch.Tensor:
    """``1 - SSIM`` of magnitudes, dynamic range taken from the target maximum."""
    if torch.is_complex(pred):
        pred = pred.abs()
    if torch.is_complex(target):
        target = target.abs()
    return 1.0 - ssim_torch(pred, target, window)


def highpass_filter(shape: Tuple[int, int], cutoff: float, order: int = 2, dtype=torch.float64, device=None):
    """Radial Butterworth high-pass on the centred k-space grid; radius 1 is Nyquist along an axis.

    Exactly zero at the DC bin, approaching 1 far above ``cutoff``.
    """
    h, w = shape
    ky = (torch.arange(h, dtype=dtype, device=device) - h // 2) / (h / 2)
    kx = (torch.arange(w, dtype=dtype, device=device) - w // 2) / (w / 2)
    r = torch.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)
    hp = torch.zeros_like(r)
    nz = r > 0
    hp[nz] = 1.0 / (1.0 + (cutoff / r[nz]) ** (2 * order))
    return hp


def split_weights(ratio: float) -> Tuple[float, float]:
    """(high, low) band weights with mean 1 and high:low = ``ratio``."""
    return 2 * ratio / (1 + ratio), 2 / (1 + ratio)


def frequency_bands(x: torch.Tensor, cutoff: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """Split an image into (low, high) bands that sum back to ``x``."""
    hp = highpass_filter(tuple(x.shape[-2:]), cutoff, dtype=x.real.dtype, device=x.device)
    k = fft2c(x, check=False)
    high = ifft2c(k * hp, check=False)
    return x - high, high


def l1_split_loss(pred: torch.Tensor, target: torch.Tensor, config: LossConfig = None,
                  breakdown: bool = False):
    """l1 of the band-reweighted error ``w_lo * low(e) + w_hi * high(e)``, ``e = pred - target``.

    With a 1:1 ratio the weights are both 1 and the bands sum back to ``e``, so this is plain l1.
    With ``breakdown=True`` also returns the unweighted l1 of each band.
    """
    _check(pred, target)
    config = config or LossConfig()
    err = pred - target
    if not torch.is_complex(err):
        err = torch.complex(err, torch.zeros_like(err))
    low, high = frequency_bands(err, config.highpass_cutoff)
    w_hi, w_lo = split_weights(config.highpass_weight_ratio)
    loss = (w_lo * low + w_hi * high).abs().mean()
    if breakdown:
        return loss, {"low": low.abs().mean(), "high": high.abs().mean()}
    return loss


def combined_loss(pred: torch.Tensor, target: torch.Tensor, config: LossConfig) -> Tuple[torch.Tensor, Dict[str, float]]:
    """Weighted sum of the configured terms and a per-term breakdown of unweighted values."""
    total = pred.real.new_zeros(())
    parts: Dict[str, float] = {}
    for kind, weight in config.terms:
        if kind == "l1":
            value = l1_loss(pred, target)
        elif kind == "l2":
            value = l2_loss(pred, target)
        elif kind == "ssim":
            value = ssim_loss(pred, target, config.ssim_window)
        elif kind == "perp":
            value = perp_loss(pred, target)
        elif kind == "l1_split":
            value = l1_split_loss(pred, target, config)
        else:
            raise ValidationError(f"unknown loss kind {kind!r}")
        total = total + weight * value
        parts[kind] = float(value.detach())
    parts["total"] = float(total.detach())
    return total, parts

