"""Reconstruction networks: the cascaded CRNN with data consistency, the refinement module,
and the cascaded U-Net baseline.

Tensors at the model boundary are complex with shape (B, T, H, W). Inside the convolutions a
complex image is carried as two real channels. Measured k-space ``y`` has shape
(B, T, Hy, Wy) and ``mask`` (B, Wy); when the image canvas is larger than ``y`` (zero-padded
input) the data-consistency step crops to the measured grid, enforces consistency there and
pads back.
"""

from __future__ import annotations

import dataclasses
import math
import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import SchemaError, ValidationError
from .kspace import crop_to, fft2c, ifft2c, pad_to

CHECKPOINT_SCHEMA = "cinerecon.checkpoint/v1"
REFINEMENT_MODES = ("none", "sequential", "end_to_end")


@dataclass
class ReconModelConfig:
    cascades: int = 6
    channels: int = 48
    weight_sharing: bool = False
    extra_bcrnn: bool = True
    refinement: str = "none"
    dc_log_lambda_init: float = math.log(0.1)
    kernel_size: int = 3
    refine_channels: int = 32
    refine_blocks: int = 3
    refine_factor: int = 2

    def __post_init__(self):
        if self.cascades < 1 or self.channels < 1:
            raise ValidationError("cascades and channels must be >= 1")
        if self.refinement not in REFINEMENT_MODES:
            raise ValidationError(f"refinement must be one of {REFINEMENT_MODES}, got {self.refinement!r}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError("kernel_size must be a positive odd integer")
        if self.refine_factor < 1:
            raise ValidationError("refine_factor must be >= 1")


@dataclass
class UNetConfig:
    cascades: int = 3
    channels: int = 48
    pool_layers: int = 2
    dc_log_lambda_init: float = math.log(0.1)


# -- complex <-> channel layouts ---------------------------------------------------------------


def to_channels(x: torch.Tensor) -> torch.Tensor:
    """(B, T, H, W) complex -> (T, B, 2, H, W) real."""
    return torch.stack((x.real, x.imag), dim=2).transpose(0, 1)


def from_channels(x: torch.Tensor) -> torch.Tensor:
    """(T, B, 2, H, W) real -> (B, T, H, W) complex."""
    x = x.transpose(0, 1)
    return torch.complex(x[:, :, 0], x[:, :, 1])


def _frames(x: torch.Tensor) -> torch.Tensor:
    """(B, T, H, W) complex -> (B*T, 2, H, W) real."""
    b, t, h, w = x.shape
    return torch.stack((x.real, x.imag), dim=2).reshape(b * t, 2, h, w)


def _unframes(x: torch.Tensor, b: int, t: int) -> torch.Tensor:
    x = x.reshape(b, t, 2, *x.shape[-2:])
    return torch.complex(x[:, :, 0], x[:, :, 1])


def _merge(x: torch.Tensor) -> torch.Tensor:
    return x.reshape(-1, *x.shape[2:])


def _split(x: torch.Tensor, t: int) -> torch.Tensor:
    return x.reshape(t, -1, *x.shape[1:])


# -- data consistency ----------------------------------------------------------------------------


def data_consistency(x_pred, y, mask, log_lambda):
    """Soft k-space replacement on sampled columns: ``(F x + lam y) / (1 + lam)``, ``lam = exp(log_lambda)``.

    Unsampled entries keep the prediction. Works on torch tensors, or numpy arrays (evaluated
    in float64 and returned as numpy).
    """
    if not isinstance(x_pred, torch.Tensor):
        out = data_consistency(torch.as_tensor(np.asarray(x_pred, dtype=np.complex128)),
                               torch.as_tensor(np.asarray(y, dtype=np.complex128)),
                               torch.as_tensor(np.asarray(mask)),
                               torch.as_tensor(float(log_lambda), dtype=torch.float64))
        return out.numpy()
    log_lambda = torch.as_tensor(log_lambda, dtype=x_pred.real.dtype, device=x_pred.device)
    if x_pred.shape[:-2] != y.shape[:-2]:
        raise ValidationError(f"prediction {tuple(x_pred.shape)} and k-space {tuple(y.shape)} disagree")
    if mask.shape[-1] != y.shape[-1]:
        raise ValidationError(f"mask width {mask.shape[-1]} != k-space width {y.shape[-1]}")
    canvas = tuple(x_pred.shape[-2:])
    grid = tuple(y.shape[-2:])
    x = crop_to(x_pred, grid) if canvas != grid else x_pred
    m = mask.to(x.real.dtype)
    if m.ndim == 1:
        m = m.expand(y.shape[-1])
    else:
        m = m.reshape(*m.shape[:-1], *([1] * (y.ndim - m.ndim)), m.shape[-1])
    k = fft2c(x, check=False)
    lam = torch.exp(log_lambda)
    if torch.isinf(lam):
        k_sampled = y.to(k.dtype)
    else:
        k_sampled = (k + lam * y) / (1 + lam)
    out = ifft2c(m * k_sampled + (1 - m) * k, check=False)
    return pad_to(out, canvas) if canvas != grid else out


# -- CRNN units ----------------------------------------------------------------------------------


class CRNNCell(nn.Module):
    """``relu(W_l * x + W_i * h_iter [+ W_t * h_time] + b)``; time term only when ``temporal``."""

    def __init__(self, in_ch: int, hidden: int, kernel_size: int = 3, temporal: bool = False):
        super().__init__()
        p = kernel_size // 2
        self.hidden = hidden
        self.conv_x = nn.Conv2d(in_ch, hidden, kernel_size, padding=p)
        self.conv_i = nn.Conv2d(hidden, hidden, kernel_size, padding=p, bias=False)
        self.conv_t = nn.Conv2d(hidden, hidden, kernel_size, padding=p, bias=False) if temporal else None


class BCRNNLayer(nn.Module):
    """Bidirectional convolutional recurrent layer over time with an iteration connection.

    Input (T, B, C_in, H, W), previous-iteration state (T, B, C, H, W). The same cell runs
    forward and backward over t starting from zero states; the two sweeps are summed.
    """

    def __init__(self, in_ch: int, hidden: int, kernel_size: int = 3):
        super().__init__()
        self.cell = CRNNCell(in_ch, hidden, kernel_size, temporal=True)

    def forward(self, x: torch.Tensor, h_iter: torch.Tensor) -> torch.Tensor:
        t = x.shape[0]
        if x.ndim != 5 or h_iter.shape[:2] != x.shape[:2] or h_iter.shape[2] != self.cell.hidden:
            raise ValidationError(f"BCRNN got input {tuple(x.shape)} and state {tuple(h_iter.shape)}")
        drive = _split(self.cell.conv_x(_merge(x)) + self.cell.conv_i(_merge(h_iter)), t)
        fwd: List[torch.Tensor] = []
        h = torch.zeros_like(drive[0])
        for i in range(t):
            h = F.relu(drive[i] + self.cell.conv_t(h))
            fwd.append(h)
        bwd: List[Optional[torch.Tensor]] = [None] * t
        h = torch.zeros_like(drive[0])
        for i in reversed(range(t)):
            h = F.relu(drive[i] + self.cell.conv_t(h))
            bwd[i] = h
        return torch.stack([f + b for f, b in zip(fwd, bwd)])


class CRNNiLayer(nn.Module):
    """Recurrent over iterations only; frames are processed independently."""

    def __init__(self, in_ch: int, hidden: int, kernel_size: int = 3):
        super().__init__()
        self.cell = CRNNCell(in_ch, hidden, kernel_size)

    def forward(self, x: torch.Tensor, h_iter: torch.Tensor) -> torch.Tensor:
        if h_iter.shape[:2] != x.shape[:2] or h_iter.shape[2] != self.cell.hidden:
            raise ValidationError(f"CRNN-i got input {tuple(x.shape)} and state {tuple(h_iter.shape)}")
        t = x.shape[0]
        return _split(F.relu(self.cell.conv_x(_merge(x)) + self.cell.conv_i(_merge(h_iter))), t)


class CRNNBlock(nn.Module):
    """One cascade's network: BCRNN (+ optional second BCRNN), three CRNN-i units, output conv."""

    def __init__(self, channels: int, kernel_size: int = 3, extra_bcrnn: bool = True):
        super().__init__()
        self.bcrnn = nn.ModuleList([BCRNNLayer(2, channels, kernel_size)])
        if extra_bcrnn:
            self.bcrnn.append(BCRNNLayer(channels, channels, kernel_size))
        self.crnn_i = nn.ModuleList([CRNNiLayer(channels, channels, kernel_size) for _ in range(3)])
        self.conv_out = nn.Conv2d(channels, 2, kernel_size, padding=kernel_size // 2)

    @property
    def n_states(self) -> int:
        return len(self.bcrnn) + len(self.crnn_i)

    def forward(self, x: torch.Tensor, states: List[torch.Tensor]) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        """``x``: (T, B, 2, H, W). Returns the residual update and the new iteration states."""
        new_states = []
        h = x
        for layer, s in zip(list(self.bcrnn) + list(self.crnn_i), states):
            h = layer(h, s)
            new_states.append(h)
        out = _split(self.conv_out(_merge(h)), x.shape[0])
        return out, new_states


class Refinement(nn.Module):
    """Lightweight denoiser: strided-conv downsample, residual conv blocks, final conv, sub-pixel
    upsample back to the input size, global residual. The upsampling conv starts at zero, so a
    fresh module is the identity map.
    """

    def __init__(self, channels: int = 32, blocks: int = 3, factor: int = 2, kernel_size: int = 3):
        super().__init__()
        p = kernel_size // 2
        self.factor = factor
        self.down = nn.Conv2d(2, channels, kernel_size, stride=factor, padding=p)
        self.blocks = nn.ModuleList(
            nn.Sequential(nn.Conv2d(channels, channels, kernel_size, padding=p), nn.ReLU(),
                          nn.Conv2d(channels, channels, kernel_size, padding=p))
            for _ in range(blocks)
        )
        self.tail = nn.Conv2d(channels, channels, kernel_size, padding=p)
        self.up = nn.Conv2d(channels, 2 * factor * factor, kernel_size, padding=p)
        self.shuffle = nn.PixelShuffle(factor)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, h, w = x.shape
        if h % self.factor or w % self.factor:
            raise ValidationError(f"refinement needs dims divisible by {self.factor}, got {(h, w)}")
        z = _frames(x)
        f = F.relu(self.down(z))
        for block in self.blocks:
            f = f + block(f)
        f = F.relu(self.tail(f))
        return x + _unframes(self.shuffle(self.up(f)), b, t)


class CRNN(nn.Module):
    """Cascaded CRNN reconstruction with residual connections and learnable data consistency."""

    def __init__(self, config: ReconModelConfig):
        super().__init__()
        self.config = config
        n_blocks = 1 if config.weight_sharing else config.cascades
        self.blocks = nn.ModuleList(
            CRNNBlock(config.channels, config.kernel_size, config.extra_bcrnn) for _ in range(n_blocks)
        )
        self.log_lambda = nn.Parameter(torch.full((n_blocks,), float(config.dc_log_lambda_init)))
        self.refine = (
            Refinement(config.refine_channels, config.refine_blocks, config.refine_factor, config.kernel_size)
            if config.refinement != "none"
            else None
        )

    def _block(self, i: int) -> Tuple[CRNNBlock, torch.Tensor]:
        j = 0 if self.config.weight_sharing else i
        return self.blocks[j], self.log_lambda[j]

    def reconstruct(self, x: torch.Tensor, y: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """CRNN cascades only (no refinement). ``x`` is the zero-filled image."""
        if x.ndim != 4 or not torch.is_complex(x):
            raise ValidationError(f"expected complex (B, T, H, W) input, got {tuple(x.shape)} {x.dtype}")
        t, b = x.shape[1], x.shape[0]
        c = self.config.channels
        zeros = x.real.new_zeros((t, b, c, *x.shape[-2:]))
        states = [zeros] * self.blocks[0].n_states
        for i in range(self.config.cascades):
            block, log_lambda = self._block(i)
            xc = to_channels(x)
            update, states = block(xc, states)
            x = from_channels(xc + update)
            x = data_consistency(x, y, mask, log_lambda)
        return x

    def forward(self, x: torch.Tensor, y: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        out = self.reconstruct(x, y, mask)
        if self.refine is not None:
            out = self.refine(out)
        return out


class UNet(nn.Module):
    """2D U-Net on two-channel frames (instance norm, leaky ReLU, transpose-conv upsampling)."""

    def __init__(self, in_ch: int = 2, out_ch: int = 2, channels: int = 48, pool_layers: int = 2):
        super().__init__()
        self.pool_layers = pool_layers

        def block(i, o):
            return nn.Sequential(
                nn.Conv2d(i, o, 3, padding=1, bias=False), nn.InstanceNorm2d(o), nn.LeakyReLU(0.2),
                nn.Conv2d(o, o, 3, padding=1, bias=False), nn.InstanceNorm2d(o), nn.LeakyReLU(0.2),
            )

        self.down = nn.ModuleList([block(in_ch, channels)])
        ch = channels
        for _ in range(pool_layers - 1):
            self.down.append(block(ch, ch * 2))
            ch *= 2
        self.bottom = block(ch, ch * 2)
        self.up_t = nn.ModuleList()
        self.up = nn.ModuleList()
        for _ in range(pool_layers):
            self.up_t.append(nn.ConvTranspose2d(ch * 2, ch, 2, stride=2))
            self.up.append(block(ch * 2, ch))
            ch //= 2
        self.out = nn.Conv2d(channels, out_ch, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for layer in self.down:
            x = layer(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottom(x)
        for up_t, layer in zip(self.up_t, self.up):
            x = up_t(x)
            x = layer(torch.cat([x, skips.pop()], dim=1))
        return self.out(x)


class UNetCascade(nn.Module):
    """Frame-by-frame baseline: one weight-shared U-Net applied ``cascades`` times, each
    followed by data consistency with a shared learnable lambda.
    """

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        self.unet = UNet(2, 2, config.channels, config.pool_layers)
        self.log_lambda = nn.Parameter(torch.tensor(float(config.dc_log_lambda_init)))

    def forward(self, x: torch.Tensor, y: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, t, h, w = x.shape
        div = 2**self.config.pool_layers
        if h % div or w % div:
            raise ValidationError(f"U-Net needs dims divisible by {div}, got {(h, w)}")
        for _ in range(self.config.cascades):
            x = x + _unframes(self.unet(_frames(x)), b, t)
            x = data_consistency(x, y, mask, self.log_lambda)
        return x

    def reconstruct(self, x, y, mask):
        return self.forward(x, y, mask)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def build_model(kind: str, config: dict) -> nn.Module:
    if kind == "crnn":
        return CRNN(ReconModelConfig(**config))
    if kind == "unet":
        return UNetCascade(UNetConfig(**config))
    raise SchemaError(f"unknown model kind {kind!r}")


def model_kind(model: nn.Module) -> str:
    return "unet" if isinstance(model, UNetCascade) else "crnn"


def save_checkpoint(path: Union[str, Path], model: nn.Module, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "schema": CHECKPOINT_SCHEMA,
            "kind": model_kind(model),
            "config": dataclasses.asdict(model.config),
            "state_dict": model.state_dict(),
            "extra": extra or {},
        },
        path,
    )
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[nn.Module, dict]:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise SchemaError(f"cannot load checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("schema") != CHECKPOINT_SCHEMA:
        raise SchemaError(f"{path} is not a {CHECKPOINT_SCHEMA} checkpoint")
    model = build_model(payload["kind"], payload["config"])
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise SchemaError(f"checkpoint parameters do not match its config: {exc}") from exc
    return model, payload.get("extra", {})
