"""Full-reference image quality metrics (data range 1.0)."""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b):
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(a, b):
    """``10 log10(1 / MSE)``; identical images give ``inf``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation over the last two axes, no padding
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g


def ssim(a, b):
    """Mean single-scale SSIM over valid windows, averaged across channels.

    Accepts ``[H, W]`` or ``[C, H, W]``.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(np.mean(num / den, axis=(-2, -1))))


@dataclass
class MetricReport:
    """Per-sample metrics plus mean and population standard deviation.

    Infinite PSNR values (identical images) are excluded from aggregates.
    The ``lpips`` column is reserved for externally computed values.
    """

    names: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    rmse: list = field(default_factory=list)
    lpips: list = field(default_factory=list)

    def add(self, name, pred, target, lpips=None):
        self.names.append(name)
        self.psnr.append(psnr(pred, target))
        self.ssim.append(ssim(pred, target))
        self.rmse.append(rmse(pred, target))
        self.lpips.append(lpips)

    @staticmethod
    def _agg(values):
        vals = [v for v in values if v is not None and math.isfinite(v)]
        if len(vals) < len([v for v in values if v is not None]):
            warnings.warn("infinite values excluded from aggregate", RuntimeWarning, stacklevel=3)
        if not vals:
            return math.nan, math.nan
        arr = np.asarray(vals, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    def aggregate(self):
        return {k: self._agg(getattr(self, k)) for k in ("psnr", "ssim", "rmse", "lpips")}

    def to_csv(self):
        def fmt(v):
            return "" if v is None else f"{v:.10g}"

        lines = ["name,psnr,ssim,rmse,lpips"]
        for row in zip(self.names, self.psnr, self.ssim, self.rmse, self.lpips):
            lines.append(",".join([row[0]] + [fmt(v) for v in row[1:]]))
        agg = self.aggregate()
        for i, label in enumerate(("mean", "std")):
            lines.append(",".join([label] + [fmt(None if math.isnan(agg[k][i]) else agg[k][i])
                                             for k in ("psnr", "ssim", "rmse", "lpips")]))
        return "\n".join(lines) + "\n"
