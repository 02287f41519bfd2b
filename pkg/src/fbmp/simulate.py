"""Ground-truth blur kernels, synthetic scenes and LRMS degradation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import erfc
from scipy.stats import rankdata

from .errors import ParameterError
from .ops import as_bands, circular_convolve, downsample


@dataclass(frozen=True)
class SyntheticKernelSpec:
    """Gaussian blur convolved with a linear motion blur.

    ``cx``/``cy`` offset the peak (columns/rows, HR pixels), ``d`` is the
    motion length and ``theta`` its angle in degrees. The kernel side is
    ``2 * R + 1``.
    """

    sigma: float
    cx: float = 0.0
    cy: float = 0.0
    d: float = 0.0
    theta: float = 0.0
    R: int = 9

    def validate(self) -> None:
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not self.d >= 0:
            raise ParameterError(f"d must be non-negative, got {self.d}")
        if self.R < 1 or int(self.R) != self.R:
            raise ParameterError(f"R must be a positive integer, got {self.R}")
        if abs(self.cx) >= self.R or abs(self.cy) >= self.R:
            raise ParameterError(
                f"peak offset ({self.cx}, {self.cy}) must lie within radius {self.R}")


def _gauss_cdf(x, sigma):
    return 0.5 * erfc(-x / (sigma * math.sqrt(2.0)))


def motion_gaussian(x, y, sigma: float, d: float) -> np.ndarray:
    """Unrotated, centered Gaussian-times-box profile (continuous domain)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if d < 1e-8:
        along = np.exp(-x * x / (2 * sigma * sigma)) / (math.sqrt(2 * math.pi) * sigma)
    else:
        along = (_gauss_cdf(x + d / 2, sigma) - _gauss_cdf(x - d / 2, sigma)) / d
    return along * np.exp(-y * y / (2 * sigma * sigma)) / (math.sqrt(2 * math.pi) * sigma)


def synth_kernel(spec: SyntheticKernelSpec) -> np.ndarray:
    """Sample the shifted, rotated blur on the integer tap grid and normalize."""
    spec.validate()
    R = int(spec.R)
    t = math.radians(spec.theta)
    j, i = np.mgrid[-R:R + 1, -R:R + 1].astype(np.float64)  # rows = y, cols = x
    dx = i - spec.cx
    dy = j - spec.cy
    xr = dx * math.cos(t) + dy * math.sin(t)
    yr = -dx * math.sin(t) + dy * math.cos(t)
    taps = motion_gaussian(xr, yr, spec.sigma, spec.d)
    total = taps.sum()
    if not total > 0:
        raise ParameterError("kernel vanishes on the tap grid; increase R or sigma")
    return taps / total


def add_noise_at_psnr(img, psnr_db: float, peak: float = 1.0, seed=None) -> np.ndarray:
    """Add white Gaussian noise whose realized PSNR equals ``psnr_db`` exactly.

    The noise draw is rescaled so its empirical mean square matches the
    target, which removes sampling error on small images.
    """
    img = np.asarray(img, dtype=np.float64)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(img.shape)
    target_mse = peak * peak / 10.0 ** (psnr_db / 10.0)
    noise *= math.sqrt(target_mse / np.mean(noise * noise))
    return img + noise


def simulate_lrms(hrms, k, c: int, noise_psnr_db: float | None = None,
                  seed=None, peak: float = 1.0) -> np.ndarray:
    """Blur each band with ``k``, decimate by ``c`` and optionally add noise."""
    hrms = as_bands(hrms)
    out = np.stack([downsample(circular_convolve(hrms[:, :, b], k), c)
                    for b in range(hrms.shape[2])], axis=2)
    if noise_psnr_db is not None:
        out = add_noise_at_psnr(out, noise_psnr_db, peak=peak, seed=seed)
    return out


DEFAULT_PAN_WEIGHTS = (0.15, 0.3, 0.35, 0.2)


def make_scene(size: int = 128, bands: int = 4, seed: int = 0,
               pan_weights=None, smooth: bool = False):
    """Synthetic HRMS cube and matching PAN image in ``[0, 1]``.

    Bands share histogram-equalized multi-scale texture and piecewise-constant
    shapes with band-specific gains, so that PAN is an exact linear
    combination of the bands (weights ``pan_weights``) and locally affine in
    each of them.
    With ``smooth=True`` only the coarse texture is kept.

    Returns ``(hrms, pan, weights)``.
    """
    rng = np.random.default_rng(seed)
    H = W = size
    base = np.zeros((H, W))
    scales = (8.0, 3.0) if smooth else (8.0, 3.0, 1.2, 0.6)
    amps = (1.0, 0.6) if smooth else (1.0, 0.6, 0.35, 0.2)
    for s, a in zip(scales, amps):
        f = gaussian_filter(rng.standard_normal((H, W)), s, mode="wrap")
        base += a * f / f.std()
    # flatten the histogram so the texture spans the full dynamic range
    base = 2.0 * rankdata(base).reshape(H, W) / (H * W) - 1.0
    shapes = np.zeros((H, W))
    if not smooth:
        yy, xx = np.mgrid[0:H, 0:W]
        for _ in range(max(4, size // 12)):
            cy, cx = rng.uniform(0, H), rng.uniform(0, W)
            if rng.random() < 0.5:
                rad = rng.uniform(size / 30, size / 8)
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2
            else:
                hh, ww = rng.uniform(size / 20, size / 5, 2)
                mask = (abs(yy - cy) < hh) & (abs(xx - cx) < ww)
            shapes[mask] += rng.uniform(-1.5, 1.5)
        shapes = gaussian_filter(shapes, 0.7, mode="wrap")

    cube = np.empty((H, W, bands))
    for b in range(bands):
        gain = rng.uniform(0.6, 1.4)
        drift = gaussian_filter(rng.standard_normal((H, W)), 12.0, mode="wrap")
        drift /= drift.std()
        cube[:, :, b] = gain * base + rng.uniform(0.5, 1.5) * shapes + 0.3 * drift
    lo, hi = cube.min(), cube.max()
    cube = 0.05 + 0.9 * (cube - lo) / (hi - lo)

    if pan_weights is None:
        pan_weights = np.full(bands, 1.0 / bands) if bands != 4 else DEFAULT_PAN_WEIGHTS
    w = np.asarray(pan_weights, dtype=np.float64)
    if w.shape != (bands,):
        raise ParameterError(f"need {bands} PAN weights, got {w.shape}")
    pan = cube @ w
    return cube, pan, w
