"""Image fidelity metrics with visible/invisible region splits.

PSNR is computed on [0, 1] images as 10*log10(1/MSE), capped at 99 dB for
exact matches. SSIM uses the standard 11x11 Gaussian window (sigma 1.5,
C1=0.01^2, C2=0.03^2), channel-averaged; region masks select which window
centers contribute. Windows touching the image border are excluded (no
full support), so SSIM needs images of at least 11x11.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve

from .errors import ValidationError

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {target.shape}")
    return pred, target


def psnr(pred, target, mask=None):
    """Peak signal-to-noise ratio in dB over masked pixels."""
    pred, target = _check_pair(pred, target)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValidationError("psnr mask is empty")
        pred, target = pred[mask], target[mask]
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _ssim_window_kernel():
    half = (SSIM_WINDOW - 1) / 2.0
    x = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA**2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_map_single(a, b):
    k = _ssim_window_kernel()
    blur = lambda img: convolve(img, k, mode="constant", cval=0.0)
    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(pred, target, mask=None):
    """Mean local SSIM over masked window centers (channel-averaged)."""
    pred, target = _check_pair(pred, target)
    h, w = pred.shape[:2]
    border = SSIM_WINDOW // 2
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValidationError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    if pred.ndim == 2:
        pred, target = pred[:, :, None], target[:, :, None]
    maps = np.stack(
        [_ssim_map_single(pred[:, :, c], target[:, :, c]) for c in range(pred.shape[2])],
        axis=-1,
    ).mean(axis=-1)
    crop = maps[border:-border, border:-border]
    if mask is None:
        return float(crop.mean())
    mask = np.asarray(mask, dtype=bool)[border:-border, border:-border]
    if not mask.any():
        raise ValidationError("ssim mask is empty inside the window-supported region")
    return float(crop[mask].mean())


@dataclass
class RegionScore:
    psnr_db: float
    ssim: float
    pixels: int

    def to_dict(self):
        return {"psnr_db": self.psnr_db, "ssim": self.ssim, "pixels": self.pixels}


@dataclass
class MetricsReport:
    both: RegionScore
    vis: RegionScore | None = None
    invis: RegionScore | None = None

    def to_dict(self):
        out = {"both": self.both.to_dict()}
        if self.vis is not None:
            out["vis"] = self.vis.to_dict()
        if self.invis is not None:
            out["invis"] = self.invis.to_dict()
        return out


def _region(pred, target, mask):
    return RegionScore(
        psnr_db=psnr(pred, target, mask),
        ssim=ssim(pred, target, mask),
        pixels=int(np.asarray(mask, dtype=bool).sum()),
    )


def evaluate_views(pred, target, vis_mask=None) -> MetricsReport:
    """PSNR/SSIM on the whole image and, given a visibility mask, on the
    visible and invisible regions (which partition the image)."""
    pred, target = _check_pair(pred, target)
    full = np.ones(pred.shape[:2], dtype=bool)
    report = MetricsReport(both=_region(pred, target, full))
    if vis_mask is not None:
        vis = np.asarray(vis_mask, dtype=bool)
        if vis.shape != pred.shape[:2]:
            raise ValidationError("visibility mask shape mismatch")
        report.vis = _region(pred, target, vis) if vis.any() else None
        report.invis = _region(pred, target, ~vis) if (~vis).any() else None
    return report
