"""Full-reference proxies for the visible cost of an attack."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5


@dataclass(frozen=True)
class ProxyScores:
    mse: float
    psnr: float  # math.inf for identical images
    ssim: float

    def to_dict(self):
        d = asdict(self)
        if math.isinf(self.psnr):
            d["psnr"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        psnr = math.inf if d["psnr"] == "inf" else float(d["psnr"])
        return cls(float(d["mse"]), psnr, float(d["ssim"]))


def mse(reference, attacked):
    reference = np.asarray(reference, dtype=np.float64)
    attacked = np.asarray(attacked, dtype=np.float64)
    if reference.shape != attacked.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {attacked.shape}")
    diff = attacked - reference
    return float(np.mean(diff * diff))


def psnr_from_mse(value, peak=1.0):
    if value == 0.0:
        return math.inf
    return -10.0 * math.log10(value / (peak * peak))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def to_luma(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.shape[2] == 1:
        return image[..., 0]
    return image @ LUMA_WEIGHTS


def ssim(reference, attacked, peak=1.0, luma=True):
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1=0.01, K2=0.03).

    With ``luma=False`` the per-channel SSIM values are averaged instead.
    """
    reference = np.asarray(reference, dtype=np.float64)
    attacked = np.asarray(attacked, dtype=np.float64)
    if reference.shape != attacked.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {attacked.shape}")
    if luma:
        planes = [(to_luma(reference), to_luma(attacked))]
    else:
        planes = [(reference[..., c], attacked[..., c]) for c in range(reference.shape[2])]
    return float(np.mean([_ssim_plane(a, b, peak) for a, b in planes]))


def _ssim_plane(x, y, peak):
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {x.shape}")
    w = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    def filt(img):
        return np.einsum("hwij,ij->hw", sliding_window_view(img, w.shape), w)

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def proxy_scores(reference, attacked, luma=True):
    m = mse(reference, attacked)
    return ProxyScores(mse=m, psnr=psnr_from_mse(m), ssim=ssim(reference, attacked, luma=luma))
