"""Reconstruction and error-map figures."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def save_recon_figure(path, recon_mag: np.ndarray, ref_mag: Optional[np.ndarray] = None, frame: int = 0) -> Path:
    """Reconstruction of one frame and, given a reference, its absolute error map with a colorbar."""
    panels = 1 if ref_mag is None else 3
    fig, axes = plt.subplots(1, panels, figsize=(3.2 * panels, 3.2), squeeze=False)
    axes = axes[0]
    vmax = float((ref_mag if ref_mag is not None else recon_mag).max())
    axes[0].imshow(recon_mag[frame], cmap="gray", vmin=0, vmax=vmax)
    axes[0].set_title("reconstruction")
    if ref_mag is not None:
        axes[1].imshow(ref_mag[frame], cmap="gray", vmin=0, vmax=vmax)
        axes[1].set_title("reference")
        err = np.abs(recon_mag[frame] - ref_mag[frame])
        im = axes[2].imshow(err, cmap="inferno", vmin=0, vmax=max(float(np.abs(recon_mag - ref_mag).max()), 1e-12))
        axes[2].set_title("|error|")
        fig.colorbar(im, ax=axes[2], fraction=0.046)
    for ax in axes:
        ax.axis("off")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
