"""PSNR / SSIM and per-image metric reports.

Metrics are computed in float64 on HxW or HxWxC arrays. Predictions are
clipped to ``[0, data_range]`` first.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidShape

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(pred, target, data_range):
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape:
        raise InvalidShape(f"shape mismatch: {x.shape} vs {y.shape}")
    if not data_range > 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    return np.clip(x, 0.0, data_range), np.clip(y, 0.0, data_range)


def psnr(pred, target, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images match."""
    x, y = _pair(pred, target, data_range)
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(data_range ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = correlate1d(correlate1d(img, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")
    r = len(g) // 2
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def _ssim_channel(x: np.ndarray, y: np.ndarray, data_range: float, g: np.ndarray) -> float:
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(pred, target, data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-inside 11x11 Gaussian windows, averaged over channels.

    Uses c1 = (0.01 L)^2, c2 = (0.03 L)^2 and c3 = c2 / 2 with unit
    exponents, which collapses the luminance/contrast/structure product into
    the usual two-constant expression.
    """
    x, y = _pair(pred, target, data_range)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.ndim != 3 or min(x.shape[:2]) < SSIM_WINDOW:
        raise InvalidShape(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    g = gaussian_window()
    return float(np.mean([_ssim_channel(x[..., c], y[..., c], data_range, g) for c in range(x.shape[2])]))


@dataclass
class MetricReport:
    """Per-image metrics for one evaluation setting (one burst length)."""

    n_frames: int
    sample_ids: List[str] = field(default_factory=list)
    psnr: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)
    runtime_ms: List[float] = field(default_factory=list)
    param_count: Optional[int] = None
    label: str = ""

    def add(self, sample_id: str, psnr_db: float, ssim_val: float, runtime_ms: float) -> None:
        self.sample_ids.append(sample_id)
        self.psnr.append(float(psnr_db))
        self.ssim.append(float(ssim_val))
        self.runtime_ms.append(float(runtime_ms))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    @property
    def mean_runtime_ms(self) -> float:
        return float(np.mean(self.runtime_ms)) if self.runtime_ms else math.nan

    def records(self):
        for sid, p, s, t in zip(self.sample_ids, self.psnr, self.ssim, self.runtime_ms):
            yield {"sample_id": sid, "n_frames": self.n_frames, "psnr_db": p,
                   "psnr_infinite": math.isinf(p), "ssim": s, "runtime_ms": t}

    def summary(self) -> dict:
        return {"label": self.label, "n_frames": self.n_frames, "mean_psnr_db": self.mean_psnr,
                "mean_ssim": self.mean_ssim, "mean_runtime_ms": self.mean_runtime_ms,
                "param_count": self.param_count, "count": len(self.psnr)}


def write_reports(reports: List[MetricReport], out_dir) -> None:
    """Write ``metrics.jsonl`` (per image), ``metrics.csv`` and ``summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["sample_id", "n_frames", "psnr_db", "ssim", "runtime_ms"]
    with open(out / "metrics.jsonl", "w") as fj, open(out / "metrics.csv", "w", newline="") as fc:
        writer = csv.DictWriter(fc, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        for rep in reports:
            for rec in rep.records():
                fj.write(json.dumps(rec) + "\n")
                writer.writerow(rec)
    with open(out / "summary.csv", "w", newline="") as fs:
        rows = [r.summary() for r in reports]
        writer = csv.DictWriter(fs, fieldnames=list(rows[0]) if rows else ["n_frames"])
        writer.writeheader()
        writer.writerows(rows)
