"""Y-channel PSNR / SSIM and per-sequence quality reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# BT.601 studio swing, inputs in [0, 1]
_Y_COEFFS = np.array([65.481, 128.553, 24.966]) / 255.0
_Y_OFFSET = 16.0 / 255.0


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """(3, h, w) or (n, 3, h, w) RGB in [0, 1] -> luma with a singleton channel axis."""
    img = np.asarray(img, dtype=np.float64)
    axis = img.ndim - 3
    if img.ndim not in (3, 4) or img.shape[axis] != 3:
        raise ValueError(f"rgb_to_y expects 3 channels, got shape {img.shape}")
    y = np.tensordot(_Y_COEFFS, img, axes=([0], [axis])) + _Y_OFFSET
    return np.expand_dims(y, axis)


def _plane(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a = np.squeeze(a)
    if a.ndim != 2:
        raise ValueError(f"expected a single-channel image, got shape {np.shape(a)}")
    return a


def crop_border(img: np.ndarray, border: int) -> np.ndarray:
    if border < 0:
        raise ValueError("border must be non-negative")
    if border == 0:
        return img
    h, w = img.shape[-2:]
    if 2 * border >= min(h, w):
        raise ValueError(f"border {border} leaves nothing of a {h}x{w} image")
    return img[..., border:-border, border:-border]


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim_map(a, b, peak: float = 1.0) -> np.ndarray:
    a, b = _plane(a), _plane(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean local SSIM over all valid 11x11 Gaussian window positions."""
    return float(np.mean(ssim_map(a, b, peak)))


@dataclass
class QualityReport:
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def table(self) -> str:
        lines = [f"{'frame':>5}  {'psnr_db':>9}  {'ssim':>7}"]
        for i, (p, s) in enumerate(zip(self.psnr, self.ssim), start=1):
            lines.append(f"{i:>5}  {p:>9.4f}  {s:>7.5f}")
        lines.append(f"{'mean':>5}  {self.mean_psnr:>9.4f}  {self.mean_ssim:>7.5f}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["frame_index", "psnr_db", "ssim"])
            for i, (p, s) in enumerate(zip(self.psnr, self.ssim), start=1):
                writer.writerow([i, f"{p:.6f}", f"{s:.6f}"])


def evaluate(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], border: int = 0) -> QualityReport:
    """Per-frame Y-channel PSNR/SSIM between two equally long lists of (3, h, w) RGB frames."""
    if len(pred) != len(gt):
        raise ValueError(f"frame count mismatch: {len(pred)} predicted vs {len(gt)} ground truth")
    report = QualityReport()
    for i, (p, g) in enumerate(zip(pred, gt), start=1):
        if p.shape != g.shape:
            raise ValueError(f"frame {i}: shape {p.shape} vs {g.shape}")
        yp = crop_border(rgb_to_y(p), border)
        yg = crop_border(rgb_to_y(g), border)
        report.psnr.append(psnr(yp, yg))
        report.ssim.append(ssim(yp, yg))
    return report
