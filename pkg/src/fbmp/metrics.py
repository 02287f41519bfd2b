"""Reference and no-reference quality measures plus kernel relative error.

Reference metrics assume both inputs share a dynamic range ``peak``
(255 for 8-bit-scaled data). Images held in ``[0, 1]`` pass ``peak=1``, which
is equivalent to rescaling both to ``[0, 255]`` first.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DimensionError, NumericalError
from .ops import as_bands, as_plane

DEFAULT_BORDER = 10


def crop_border(img, margin: int = DEFAULT_BORDER) -> np.ndarray:
    a = as_bands(img)
    H, W = a.shape[:2]
    if margin < 0 or 2 * margin >= min(H, W):
        raise DimensionError(f"border {margin} too large for {H}x{W} image")
    if margin == 0:
        return a
    return a[margin:H - margin, margin:W - margin]


def _pair(est, ref):
    e = as_bands(est)
    r = as_bands(ref)
    if e.shape != r.shape:
        raise DimensionError(f"shape mismatch: {e.shape} vs {r.shape}")
    return e, r


def _psnr_from_mse(mse: float, peak: float) -> float:
    if mse == 0:
        return math.inf
    return 20.0 * math.log10(peak / math.sqrt(mse))


def psnr_avg(est, ref, peak: float = 255.0):
    """Per-band PSNR list and its mean. Identical bands give ``inf``."""
    e, r = _pair(est, ref)
    per = [_psnr_from_mse(float(np.mean((e[:, :, i] - r[:, :, i]) ** 2)), peak)
           for i in range(e.shape[2])]
    return per, float(np.mean(per))


def regress_band(e: np.ndarray, r: np.ndarray):
    """Closed-form ``(a, b)`` minimizing ``||a*e + b - r||^2``."""
    me, mr = e.mean(), r.mean()
    de = e - me
    var = float(np.sum(de * de))
    if var == 0:
        return 0.0, float(mr)
    a = float(np.sum(de * (r - mr))) / var
    return a, float(mr - a * me)


def psnr_reg_avg(est, ref, peak: float = 255.0) -> float:
    """Mean PSNR after fitting each estimated band affinely to its reference."""
    e, r = _pair(est, ref)
    per = []
    for i in range(e.shape[2]):
        a, b = regress_band(e[:, :, i], r[:, :, i])
        fit = a * e[:, :, i] + b
        per.append(_psnr_from_mse(float(np.mean((fit - r[:, :, i]) ** 2)), peak))
    return float(np.mean(per))


def ergas(est, ref, c: int) -> float:
    """``100/c * sqrt(mean_i (RMSE_i / mu_i)^2)`` with ``mu_i`` the reference band mean."""
    e, r = _pair(est, ref)
    if c < 1:
        raise ValueError(f"invalid resolution factor {c}")
    mu = r.mean(axis=(0, 1))
    if np.any(mu == 0):
        raise NumericalError("ERGAS undefined: a reference band has zero mean")
    rmse = np.sqrt(np.mean((e - r) ** 2, axis=(0, 1)))
    return float(100.0 / c * np.sqrt(np.mean((rmse / mu) ** 2)))


def sam(est, ref) -> float:
    """Mean spectral angle in degrees, skipping pixels with a zero spectrum."""
    e, r = _pair(est, ref)
    ne = np.linalg.norm(e, axis=2)
    nr = np.linalg.norm(r, axis=2)
    ok = (ne > 0) & (nr > 0)
    if not ok.any():
        return 0.0
    cos = np.sum(e * r, axis=2)[ok] / (ne[ok] * nr[ok])
    ang = np.arccos(np.clip(cos, -1.0, 1.0))
    # identical directions can round to cos slightly below 1
    same = np.all(e[ok] * nr[ok][:, None] == r[ok] * ne[ok][:, None], axis=1)
    ang[same] = 0.0
    return float(np.degrees(ang.mean()))


def rase(est, ref) -> float:
    """``100/mean(ref) * sqrt(mean_i MSE_i)``, in percent."""
    e, r = _pair(est, ref)
    mu = r.mean()
    if mu == 0:
        raise NumericalError("RASE undefined: zero reference mean")
    mse = np.mean((e - r) ** 2, axis=(0, 1))
    return float(100.0 / mu * np.sqrt(mse.mean()))


SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def ssim_plane(x, y, peak: float = 255.0) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Local statistics use reflected borders; the mean is taken over the
    region at least 5 pixels from the edge.
    """
    x = as_plane(x)
    y = as_plane(y)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    pad = 5
    if min(x.shape) <= 2 * pad:
        raise DimensionError(f"image {x.shape} too small for the SSIM window")

    def filt(a):
        return gaussian_filter(a, SSIM_SIGMA, mode="reflect", truncate=3.5)

    ux, uy = filt(x), filt(y)
    vx = filt(x * x) - ux * ux
    vy = filt(y * y) - uy * uy
    vxy = filt(x * y) - ux * uy
    C1 = (SSIM_K1 * peak) ** 2
    C2 = (SSIM_K2 * peak) ** 2
    num = (2 * ux * uy + C1) * (2 * vxy + C2)
    den = (ux * ux + uy * uy + C1) * (vx + vy + C2)
    smap = num / den
    return float(smap[pad:-pad, pad:-pad].mean())


def ssim_avg(est, pan, peak: float = 255.0) -> float:
    """Mean over bands of the SSIM between each band and the PAN image."""
    e = as_bands(est)
    p = as_plane(pan)
    if e.shape[:2] != p.shape:
        raise DimensionError(f"bands {e.shape[:2]} and PAN {p.shape} differ in size")
    return float(np.mean([ssim_plane(e[:, :, i], p, peak) for i in range(e.shape[2])]))


def _center_pad(k: np.ndarray, n: int) -> np.ndarray:
    m = k.shape[0]
    out = np.zeros((n, n))
    o = (n - m) // 2
    out[o:o + m, o:o + m] = k
    return out


def kernel_rel_error(est, truth) -> float:
    """``100 * ||U - U_hat||_F / ||U||_F``, center-aligning kernels of different size."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    for k in (est, truth):
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise DimensionError(f"kernel must be square with odd side, got {k.shape}")
    n = max(est.shape[0], truth.shape[0])
    est = _center_pad(est, n)
    truth = _center_pad(truth, n)
    norm = np.linalg.norm(truth)
    if norm == 0:
        raise NumericalError("relative error undefined for a zero reference kernel")
    return float(100.0 * np.linalg.norm(truth - est) / norm)


FORMULAS = {
    "psnr": "20*log10(peak/sqrt(MSE)) per band, averaged",
    "psnr_reg": "PSNR of a*est+b fitted to ref per band, averaged",
    "ergas": "100/c*sqrt(mean_i (RMSE_i/mean_i)^2)",
    "sam": "mean over pixels of arccos(<v,v_hat>/(|v||v_hat|)), degrees",
    "rase": "100/mean(ref)*sqrt(mean_i MSE_i)",
    "ssim": "mean over bands of SSIM(band, pan), 11x11 Gaussian sigma 1.5, K1=0.01, K2=0.03",
    "kernel_rel_error": "100*||U-U_hat||_F/||U||_F",
}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


@dataclass
class MetricsReport:
    psnr_per_band: list[float] = field(default_factory=list)
    psnr_avg: float | None = None
    psnr_reg_avg: float | None = None
    ergas: float | None = None
    sam_deg: float | None = None
    rase: float | None = None
    ssim_avg: float | None = None
    kernel_rel_error_pct: float | None = None

    def items(self):
        rows = [(f"psnr_band{i}", v) for i, v in enumerate(self.psnr_per_band)]
        for key in ("psnr_avg", "psnr_reg_avg", "ergas", "sam_deg", "rase",
                    "ssim_avg", "kernel_rel_error_pct"):
            val = getattr(self, key)
            if val is not None:
                rows.append((key, val))
        return rows

    def to_text(self) -> str:
        lines = [f"{k} = {_fmt(v)}" for k, v in self.items()]
        lines += [f"# {k}: {f}" for k, f in FORMULAS.items()]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.items():
            w.writerow([k, _fmt(v)])
        return buf.getvalue()


def evaluate(est, ref=None, pan=None, c: int | None = None, peak: float = 255.0,
             border: int = DEFAULT_BORDER, kernel=None, kernel_truth=None) -> MetricsReport:
    """Fill a report with every metric the supplied inputs allow."""
    rep = MetricsReport()
    e = crop_border(est, border)
    if ref is not None:
        r = crop_border(ref, border)
        rep.psnr_per_band, rep.psnr_avg = psnr_avg(e, r, peak)
        rep.psnr_reg_avg = psnr_reg_avg(e, r, peak)
        if c is not None:
            rep.ergas = ergas(e, r, c)
        rep.sam_deg = sam(e, r)
        rep.rase = rase(e, r)
    if pan is not None:
        p = crop_border(pan, border)[:, :, 0]
        rep.ssim_avg = ssim_avg(e, p, peak)
    if kernel is not None and kernel_truth is not None:
        rep.kernel_rel_error_pct = kernel_rel_error(kernel, kernel_truth)
    return rep
