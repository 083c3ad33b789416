"""Image/k-space containers, centered FFTs, Cartesian line masks and the acquisition operators.

The acquisition model is ``y = M F x (+ noise)`` applied frame by frame, where ``F`` is the
orthonormal centered 2D DFT and ``M`` a binary mask that keeps whole phase-encode columns.
Array-level helpers (``fft2c``, ``ifft2c``, ``apply_forward``, ``apply_adjoint``, ``pad_to``,
``crop_to``) accept either numpy arrays or torch tensors so the networks reuse them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ValidationError

STANDARD_ACCELERATIONS = (4, 8, 10)
PADDED_CANVAS = (256, 512)


def _is_torch(x) -> bool:
    return isinstance(x, torch.Tensor)


def _check_finite(x, what: str) -> None:
    ok = bool(torch.isfinite(x).all()) if _is_torch(x) else bool(np.isfinite(x).all())
    if not ok:
        raise ValidationError(f"{what} contains non-finite entries")


def fft2c(image, check: bool = True):
    """Centered orthonormal 2D FFT over the last two axes."""
    if check:
        _check_finite(image, "image")
    if _is_torch(image):
        x = torch.fft.ifftshift(image, dim=(-2, -1))
        x = torch.fft.fft2(x, norm="ortho")
        return torch.fft.fftshift(x, dim=(-2, -1))
    x = np.fft.ifftshift(image, axes=(-2, -1))
    x = np.fft.fft2(x, norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def ifft2c(kspace, check: bool = True):
    """Inverse of :func:`fft2c`."""
    if check:
        _check_finite(kspace, "k-space")
    if _is_torch(kspace):
        x = torch.fft.ifftshift(kspace, dim=(-2, -1))
        x = torch.fft.ifft2(x, norm="ortho")
        return torch.fft.fftshift(x, dim=(-2, -1))
    x = np.fft.ifftshift(kspace, axes=(-2, -1))
    x = np.fft.ifft2(x, norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def apply_forward(image, lines):
    """``M F x`` for an image stack (..., H, W) and a boolean column mask of length W."""
    k = fft2c(image, check=False)
    if _is_torch(k):
        return k * torch.as_tensor(lines, device=k.device).to(k.real.dtype)
    return k * np.asarray(lines, dtype=bool)


def apply_adjoint(kspace, lines):
    """``F^H M y``."""
    if _is_torch(kspace):
        m = torch.as_tensor(lines, device=kspace.device).to(kspace.real.dtype)
    else:
        m = np.asarray(lines, dtype=bool)
    return ifft2c(kspace * m, check=False)


def pad_offsets(size: Tuple[int, int], target: Tuple[int, int]) -> Tuple[int, int]:
    """Top/left offsets of an original ``size`` region centred in ``target``."""
    return (target[0] - size[0]) // 2, (target[1] - size[1]) // 2


def pad_to(x, target: Tuple[int, int]):
    """Zero-pad the last two axes symmetrically to ``target`` (extra row/column goes last)."""
    h, w = x.shape[-2:]
    th, tw = target
    if h > th or w > tw:
        raise ValidationError(f"cannot pad {(h, w)} to smaller target {target}")
    top, left = pad_offsets((h, w), target)
    if _is_torch(x):
        if torch.is_complex(x):
            return torch.complex(pad_to(x.real, target), pad_to(x.imag, target))
        return F.pad(x, (left, tw - w - left, top, th - h - top))
    widths = [(0, 0)] * (x.ndim - 2) + [(top, th - h - top), (left, tw - w - left)]
    return np.pad(x, widths)


def crop_to(x, size: Tuple[int, int]):
    """Inverse of :func:`pad_to` for the recorded original ``size``."""
    h, w = x.shape[-2:]
    if size[0] > h or size[1] > w:
        raise ValidationError(f"crop size {size} exceeds array size {(h, w)}")
    top, left = pad_offsets(tuple(size), (h, w))
    return x[..., top : top + size[0], left : left + size[1]]


@dataclass
class SamplingMask:
    """Boolean mask over phase-encode columns, broadcast over frames and readout rows."""

    lines: np.ndarray
    acceleration: int
    center_lines: int
    seed: int
    nonstandard: bool = False

    def __post_init__(self):
        self.lines = np.asarray(self.lines, dtype=bool)
        if self.lines.ndim != 1 or self.lines.size == 0:
            raise ValidationError("mask lines must be a non-empty 1D array")

    @property
    def width(self) -> int:
        return int(self.lines.size)

    @property
    def n_sampled(self) -> int:
        return int(self.lines.sum())

    @property
    def effective_acceleration(self) -> float:
        return self.width / self.n_sampled

    def full(self, shape: Tuple[int, int, int]) -> np.ndarray:
        """The (T, H, W) binary mask."""
        return np.broadcast_to(self.lines, shape).copy()

    def params(self) -> dict:
        return {
            "width": self.width,
            "acceleration": int(self.acceleration),
            "center_lines": int(self.center_lines),
            "seed": int(self.seed),
            "nonstandard": bool(self.nonstandard),
            "n_sampled": self.n_sampled,
            "effective_acceleration": self.effective_acceleration,
        }


def default_center_lines(width: int) -> int:
    """24 central lines at width 512, scaled proportionally (at least 2)."""
    return max(2, int(round(24 * width / 512)))


def make_mask(
    width: int,
    acceleration: int,
    center_lines: Optional[int] = None,
    seed: int = 0,
    nonstandard: bool = False,
) -> SamplingMask:
    """Equispaced lines with stride ``acceleration`` and a seeded offset, plus a central block.

    The equispaced set alone has ``ceil((width - offset) / acceleration)`` lines; the central
    block is added on top, so :attr:`SamplingMask.effective_acceleration` is below the nominal
    rate whenever ``center_lines > 0``.
    """
    if acceleration not in STANDARD_ACCELERATIONS and not nonstandard:
        raise ValidationError(
            f"acceleration must be one of {STANDARD_ACCELERATIONS}, got {acceleration} "
            "(pass nonstandard=True to allow other values)"
        )
    if not isinstance(acceleration, (int, np.integer)) or acceleration < 1:
        raise ValidationError("acceleration must be a positive integer")
    if width < acceleration:
        raise ValidationError(f"width {width} smaller than acceleration {acceleration}")
    if center_lines is None:
        center_lines = default_center_lines(width)
    if center_lines < 0 or center_lines >= 2 * width / acceleration:
        raise ValidationError(
            f"center_lines={center_lines} must be in [0, 2*width/acceleration) = [0, {2 * width / acceleration:g})"
        )
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(acceleration))
    lines = np.zeros(width, dtype=bool)
    lines[offset::acceleration] = True
    start = width // 2 - center_lines // 2
    lines[start : start + center_lines] = True
    return SamplingMask(lines, int(acceleration), int(center_lines), int(seed), nonstandard)


@dataclass
class CineSlice:
    """Complex 2D+t image sequence of one slice, shape (T, H, W).

    ``padded`` records whether the array is a padded canvas; ``original_size`` is the (H, W)
    region that :func:`center_crop` recovers.
    """

    data: np.ndarray
    frame_rate_hint: Optional[float] = None
    padded: bool = False
    original_size: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.iscomplexobj(self.data):
            self.data = self.data.astype(np.complex128)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValidationError(f"cine data must have shape (T, H, W), got {self.data.shape}")
        _check_finite(self.data, "cine data")
        if self.frame_rate_hint is not None and not self.frame_rate_hint > 0:
            raise ValidationError("frame_rate_hint must be positive")
        if self.original_size is None:
            self.original_size = tuple(self.data.shape[1:])
        self.original_size = tuple(int(s) for s in self.original_size)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


@dataclass
class KSpaceData:
    """Frequency-domain counterpart of a :class:`CineSlice`. ``mask=None`` means fully sampled."""

    data: np.ndarray
    mask: Optional[SamplingMask] = None
    original_size: Optional[Tuple[int, int]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValidationError(f"k-space must have shape (T, H, W), got {self.data.shape}")
        if self.mask is not None:
            if self.mask.width != self.data.shape[-1]:
                raise ValidationError("mask width does not match k-space width")
            if np.any(self.data[..., ~self.mask.lines] != 0):
                raise ValidationError("undersampled k-space has nonzero entries outside the mask")
        if self.original_size is None:
            self.original_size = tuple(self.data.shape[1:])

    @property
    def lines(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.data.shape[-1], dtype=bool)
        return self.mask.lines

    @property
    def fully_sampled(self) -> bool:
        return self.mask is None


def forward_operator(
    cine: CineSlice,
    mask: Optional[SamplingMask],
    noise_std: float = 0.0,
    seed: Optional[int] = None,
) -> KSpaceData:
    """Per-frame ``fft2c`` then masking. Optional complex Gaussian noise lands on sampled entries only."""
    if mask is not None and mask.width != cine.shape[-1]:
        raise ValidationError(f"mask width {mask.width} != image width {cine.shape[-1]}")
    lines = np.ones(cine.shape[-1], bool) if mask is None else mask.lines
    k = apply_forward(cine.data, lines)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(size=k.shape) + 1j * rng.normal(size=k.shape)
        k = k + noise_std / np.sqrt(2) * noise * lines
    return KSpaceData(k, mask, original_size=cine.original_size)


def adjoint_operator(kspace: KSpaceData) -> CineSlice:
    """Zero-filled reconstruction ``F^H M y``."""
    return CineSlice(apply_adjoint(kspace.data, kspace.lines), original_size=kspace.original_size)


def zero_pad(cine: CineSlice, target: Tuple[int, int] = PADDED_CANVAS) -> CineSlice:
    if cine.padded:
        raise ValidationError("slice is already padded")
    data = pad_to(cine.data, target)
    return CineSlice(data, cine.frame_rate_hint, padded=True, original_size=cine.shape[1:])


def center_crop(cine: CineSlice, original: Optional[Tuple[int, int]] = None) -> CineSlice:
    size = tuple(original) if original is not None else cine.original_size
    return CineSlice(crop_to(cine.data, size), cine.frame_rate_hint, padded=False, original_size=size)
