"""Image-plane primitives shared by the whole pipeline.

Planes are 2-D float arrays, multi-band images are ``(H, W, N)`` arrays and
kernels are odd-sized square arrays whose center tap sits at ``(n//2, n//2)``.
Every convolution is circular.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def as_plane(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise DimensionError(f"expected a non-empty 2-D plane, got shape {a.shape}")
    return a


def as_bands(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.size == 0:
        raise DimensionError(f"expected an (H, W, N) image, got shape {a.shape}")
    return a


def check_kernel(k) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise DimensionError(f"kernel must be square with odd side, got {k.shape}")
    return k


def dirac(n: int) -> np.ndarray:
    """Centered unit impulse of side ``n``."""
    k = np.zeros((n, n))
    k[n // 2, n // 2] = 1.0
    return k


def kernel_otf(k, shape) -> np.ndarray:
    """Transfer function of ``k`` on a grid of ``shape`` (center tap at the origin)."""
    k = check_kernel(k)
    n = k.shape[0]
    H, W = shape
    if n > min(H, W):
        raise DimensionError(f"kernel side {n} exceeds image size {H}x{W}")
    pad = np.zeros((H, W))
    pad[:n, :n] = k
    pad = np.roll(pad, (-(n // 2), -(n // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


def circular_convolve(img, k) -> np.ndarray:
    img = as_plane(img)
    otf = kernel_otf(k, img.shape)
    return np.real(np.fft.ifft2(np.fft.fft2(img) * otf))


def circular_correlate(img, k) -> np.ndarray:
    """Adjoint of :func:`circular_convolve` for a fixed kernel."""
    img = as_plane(img)
    otf = kernel_otf(k, img.shape)
    return np.real(np.fft.ifft2(np.fft.fft2(img) * np.conj(otf)))


def downsample(img, c: int) -> np.ndarray:
    img = as_plane(img)
    H, W = img.shape
    if c < 1 or H % c or W % c:
        raise DimensionError(f"{H}x{W} plane is not divisible by factor {c}")
    return img[::c, ::c].copy()


def upsample_adjoint(img, c: int) -> np.ndarray:
    """Zero-insertion upsampling, the transpose of :func:`downsample`."""
    img = as_plane(img)
    if c < 1:
        raise DimensionError(f"invalid factor {c}")
    h, w = img.shape
    out = np.zeros((h * c, w * c))
    out[::c, ::c] = img
    return out


LAPLACIAN = np.array([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]])


def grad_h(x: np.ndarray) -> np.ndarray:
    return np.roll(x, -1, axis=-1) - x


def grad_h_adj(y: np.ndarray) -> np.ndarray:
    return np.roll(y, 1, axis=-1) - y


def grad_v(x: np.ndarray) -> np.ndarray:
    return np.roll(x, -1, axis=-2) - x


def grad_v_adj(y: np.ndarray) -> np.ndarray:
    return np.roll(y, 1, axis=-2) - y


def laplacian(x: np.ndarray) -> np.ndarray:
    return (4.0 * x - np.roll(x, 1, axis=-1) - np.roll(x, -1, axis=-1)
            - np.roll(x, 1, axis=-2) - np.roll(x, -1, axis=-2))


_DIFF = {
    "grad_h": (grad_h, grad_h_adj),
    "grad_v": (grad_v, grad_v_adj),
    "laplacian": (laplacian, laplacian),
}


def diff_operator(img, which: str, adjoint: bool = False) -> np.ndarray:
    """Circular finite differences: ``grad_h``, ``grad_v`` or ``laplacian``."""
    img = as_plane(img)
    try:
        fwd, adj = _DIFF[which]
    except KeyError:
        raise ValueError(f"unknown operator {which!r}") from None
    return adj(img) if adjoint else fwd(img)


def _window_sums(img: np.ndarray, r: int) -> np.ndarray:
    H, W = img.shape
    s = np.zeros((H + 1, W + 1))
    s[1:, 1:] = img.cumsum(0).cumsum(1)
    i = np.arange(H)
    j = np.arange(W)
    i0 = np.clip(i - r, 0, H)[:, None]
    i1 = np.clip(i + r + 1, 0, H)[:, None]
    j0 = np.clip(j - r, 0, W)[None, :]
    j1 = np.clip(j + r + 1, 0, W)[None, :]
    return s[i1, j1] - s[i0, j1] - s[i1, j0] + s[i0, j0]


def box_mean(img, r: int) -> np.ndarray:
    """Mean over ``(2r+1)^2`` windows, clipped to the image at the borders."""
    img = as_plane(img)
    H, W = img.shape
    if r < 0 or 2 * r + 1 > min(H, W):
        raise DimensionError(f"window radius {r} too large for {H}x{W} plane")
    if r == 0:
        return img.copy()
    counts = _window_sums(np.ones_like(img), r)
    return _window_sums(img, r) / counts


def box_kernel(width: int) -> np.ndarray:
    """Unit-gain box filter of the given window width as an odd-sided kernel.

    Even widths are embedded in the next odd size, leaving the trailing row and
    column empty (a half-pixel offset).
    """
    if width < 1:
        raise ValueError("box width must be positive")
    n = width if width % 2 else width + 1
    k = np.zeros((n, n))
    k[:width, :width] = 1.0 / (width * width)
    return k
