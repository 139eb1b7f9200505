"""Image quality metrics: PSNR, SSIM, histogram correlation and LBP texture distance."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate

from .errors import DegenerateHistogram, ImageTooSmall, ShapeMismatch

__all__ = [
    "MetricsReport",
    "psnr",
    "ssim",
    "histogram_correlation",
    "lbp_codes",
    "lbp_texture_similarity",
    "evaluate",
]


def _pair(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    return a, b


def psnr(a, b, data_range: float = 1.0) -> float:
    """``10 log10(range^2 / MSE)``; ``inf`` for identical images."""
    a, b = _pair(a, b)
    if not data_range > 0:
        raise ValueError("data_range must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, data_range: float = 1.0, full: bool = False):
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5).

    Local statistics are taken only where the window fits inside the image,
    so the map is ``(ny - 10, nx - 10)``. With ``full=True`` returns
    ``(mean, map)``.
    """
    a, b = _pair(a, b)
    if min(a.shape) < 11:
        raise ImageTooSmall("SSIM needs both sides >= 11")
    w = _gaussian_window()
    crop = (slice(5, -5), slice(5, -5))

    def local(img):
        return correlate(img, w, mode="reflect")[crop]

    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    mu_a, mu_b = local(a), local(b)
    var_a = local(a * a) - mu_a**2
    var_b = local(b * b) - mu_b**2
    cov = local(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    smap = num / den
    mean = float(smap.mean())
    return (mean, smap) if full else mean


def histogram_correlation(a, b, bins: int = 256, lo: float = 0.0, hi: float = 1.0) -> float:
    """Pearson correlation of the two intensity histograms over ``[lo, hi]``."""
    if not hi > lo or bins < 2:
        raise ValueError("need hi > lo and bins >= 2")
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    edges = np.linspace(lo, hi, bins + 1)
    ha = np.histogram(np.clip(a, lo, hi), edges)[0].astype(float)
    hb = np.histogram(np.clip(b, lo, hi), edges)[0].astype(float)
    if ha.std() == 0 or hb.std() == 0:
        raise DegenerateHistogram("a histogram has zero variance")
    da, db = ha - ha.mean(), hb - hb.mean()
    return float(np.sum(da * db) / math.sqrt(np.sum(da * da) * np.sum(db * db)))


_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def lbp_codes(img) -> np.ndarray:
    """8-neighbour radius-1 LBP codes of interior pixels (bit set when neighbour >= centre)."""
    img = np.asarray(img, dtype=float)
    if min(img.shape) < 3:
        raise ImageTooSmall("LBP needs both sides >= 3")
    ny, nx = img.shape
    centre = img[1:-1, 1:-1]
    codes = np.zeros(centre.shape, dtype=np.int64)
    for bit, (di, dj) in enumerate(_NEIGHBOURS):
        nb = img[1 + di: ny - 1 + di, 1 + dj: nx - 1 + dj]
        codes |= (nb >= centre).astype(np.int64) << bit
    return codes


def lbp_texture_similarity(a, b) -> float:
    """Total variation distance between normalised 256-bin LBP histograms."""
    a, b = _pair(a, b)
    ha = np.bincount(lbp_codes(a).ravel(), minlength=256) / (a.shape[0] - 2) / (a.shape[1] - 2)
    hb = np.bincount(lbp_codes(b).ravel(), minlength=256) / (b.shape[0] - 2) / (b.shape[1] - 2)
    return 0.5 * float(np.abs(ha - hb).sum())


@dataclass
class MetricsReport:
    psnr_db: float
    ssim: float
    hc: float
    lbp_ts: float
    data_range: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def evaluate(img, reference, data_range: float | None = None, bins: int = 256,
             window=None) -> MetricsReport:
    """All four metrics of ``img`` against ``reference``.

    ``data_range`` defaults to the reference's peak-to-peak value and the
    histogram window to the reference's ``[min, max]``.
    """
    img, reference = _pair(img, reference)
    if data_range is None:
        data_range = float(np.ptp(reference)) or 1.0
    lo, hi = (float(reference.min()), float(reference.max())) if window is None else window
    if hi <= lo:
        hi = lo + data_range
    return MetricsReport(
        psnr_db=psnr(img, reference, data_range),
        ssim=ssim(img, reference, data_range),
        hc=histogram_correlation(img, reference, bins, lo, hi),
        lbp_ts=lbp_texture_similarity(img, reference),
        data_range=float(data_range),
    )
