"""Foreground L2 and SSIM on 8-bit-scale display colours, plus the per-sequence report."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from ..raster import srgb_encode

LUMA_601 = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2, DYNAMIC_RANGE = 0.01, 0.03, 255.0


def foreground_l2(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Mean Euclidean RGB distance over mask pixels in 0..255 units.

    uint8 images are taken as 8-bit values; float images as [0, 1].
    """
    scale = 1.0 if np.asarray(gt).dtype == np.uint8 else 255.0
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or mask.shape != pred.shape[:2]:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    if not mask.any():
        raise ValueError("foreground mask is empty")
    d = np.linalg.norm((pred - gt)[mask], axis=-1)
    return float(d.mean() * scale)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def to_luma255(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img @ LUMA_601 if img.ndim == 3 else img


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    h = len(g) // 2
    return y[h:x.shape[0] - h, h:x.shape[1] - h]


def ssim_map(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """SSIM at every valid 11x11 window position; images are luma or RGB on a 0..255 scale."""
    a, b = to_luma255(pred), to_luma255(gt)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    c1, c2 = (K1 * DYNAMIC_RANGE) ** 2, (K2 * DYNAMIC_RANGE) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean SSIM over valid window positions (those centred on mask pixels when a mask is given)."""
    m = ssim_map(pred, gt)
    if mask is None:
        return float(m.mean())
    h = SSIM_WINDOW // 2
    sel = np.asarray(mask, dtype=bool)[h:-h, h:-h]
    if not sel.any():
        raise ValueError("no valid SSIM window is centred on the mask")
    return float(m[sel].mean())


def display255(linear_rgb: np.ndarray) -> np.ndarray:
    """Linear [0, 1] colours to the sRGB 0..1 values stored in the PNG frames."""
    return srgb_encode(linear_rgb)


@dataclass
class EvalReport:
    frame_indices: list[int]
    l2: list[float]
    ssim: list[float]
    config: dict
    config_hash: str
    runtime_s: float
    label: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def mean_l2(self) -> float:
        return float(np.mean(self.l2))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_l2"], d["mean_ssim"] = self.mean_l2, self.mean_ssim
        return d

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(json.dumps(self.to_dict(), indent=2))
        with open(d / "per_frame.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "l2", "ssim"])
            for row in zip(self.frame_indices, self.l2, self.ssim):
                w.writerow(row)


def evaluate(config, pred_frames, gt_frames, masks, frame_indices=None, label: str = "") -> EvalReport:
    """Per-frame foreground L2 and foreground SSIM; frames are linear RGB in [0, 1]."""
    t0 = time.perf_counter()
    if not (len(pred_frames) == len(gt_frames) == len(masks)):
        raise ValueError(f"frame counts differ: {len(pred_frames)} predicted, {len(gt_frames)} ground truth, "
                         f"{len(masks)} masks")
    idx = list(range(len(gt_frames))) if frame_indices is None else [int(i) for i in frame_indices]
    l2, ss = [], []
    for p, g, m in zip(pred_frames, gt_frames, masks):
        pd, gd = display255(p), display255(g)
        l2.append(foreground_l2(pd, gd, m))
        ss.append(ssim(pd * 255.0, gd * 255.0, m))
    cfg = config.to_dict() if hasattr(config, "to_dict") else dict(config)
    h = config.config_hash() if hasattr(config, "config_hash") else ""
    return EvalReport(idx, l2, ss, cfg, h, time.perf_counter() - t0, label)
