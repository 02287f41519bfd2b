"""Channel-wise HRMS reconstruction with a local cross-channel prior.

For each band ``x`` the solver minimizes::

    1/2 |D B Z - x|^2 + lam/2 sum_j sum_{k in w_j} ((L Z)_k - a_j (L Y)_k - c_j)^2 + eps a_j^2

where ``B`` is the estimated blur, ``D`` decimation, ``Y`` the PAN image and
``L`` a high-pass operator (the 5-point Laplacian by default). One pass is
made: a matting-matrix warm start solved by conjugate gradients, a guided
filter step for ``(a, c)``, then an exact frequency-domain solve for ``Z``.

Intensities are expected in ``[0, 1]``; ``eps`` and ``lam`` are tuned for
that range.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, FbmpError, NumericalError, ParameterError
from .ops import (LAPLACIAN, as_bands, as_plane, box_mean, check_kernel, kernel_otf,
                  upsample_adjoint)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PansharpenParams:
    lam: float = 2e-4
    r: int = 1
    eps: float = 1e-4
    cg_tol: float = 5e-5
    cg_maxiter: int = 2000
    prior_filter: object = "laplacian"
    cg_strict: bool = True

    def validate(self) -> None:
        if not self.lam > 0:
            raise ParameterError(f"lambda must be positive, got {self.lam}")
        if self.r < 1:
            raise ParameterError(f"window radius must be >= 1, got {self.r}")
        if not self.eps > 0:
            raise ParameterError("eps must be positive")
        if not self.cg_tol > 0:
            raise ParameterError("cg_tol must be positive")
        if self.cg_maxiter < 1:
            raise ParameterError("cg_maxiter must be >= 1")
        prior_kernel(self.prior_filter)


def prior_kernel(prior_filter) -> np.ndarray:
    """Stencil of the high-pass operator: ``laplacian``, ``identity`` or a kernel."""
    if isinstance(prior_filter, str):
        if prior_filter == "laplacian":
            return LAPLACIAN.copy()
        if prior_filter == "identity":
            return np.ones((1, 1))
        raise ParameterError(f"unknown prior filter {prior_filter!r}")
    return check_kernel(prior_filter)


@dataclass(frozen=True, eq=False)
class MattingMatrix:
    matrix: sp.csr_matrix
    shape: tuple
    r: int
    eps: float
    window_mean: np.ndarray
    window_var: np.ndarray

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def quad(self, x) -> float:
        x = np.ravel(x)
        return float(x @ (self.matrix @ x))


@dataclass
class AffineCoeffMaps:
    a: np.ndarray
    c: np.ndarray
    guide_mean: np.ndarray
    guide_var: np.ndarray
    input_mean: np.ndarray


def build_matting_matrix(guide, r: int, eps: float) -> MattingMatrix:
    """Closed-form matting matrix over all windows fully inside the image."""
    I = as_plane(guide)
    H, W = I.shape
    m = (2 * r + 1) ** 2
    if r < 0 or 2 * r + 1 > min(H, W):
        raise DimensionError(f"window radius {r} too large for {H}x{W} guide")
    idx = np.arange(H * W).reshape(H, W)
    win = sliding_window_view(idx, (2 * r + 1, 2 * r + 1)).reshape(-1, m)
    vals = I.ravel()[win]
    mu = vals.mean(axis=1, keepdims=True)
    dev = vals - mu
    var = np.mean(dev * dev, axis=1, keepdims=True)
    cross = dev[:, :, None] * dev[:, None, :] / (eps / m + var)[:, :, None]
    block = np.eye(m)[None] - (1.0 + cross) / m
    rows = np.repeat(win, m, axis=1).ravel()
    cols = np.tile(win, (1, m)).ravel()
    M = sp.coo_matrix((block.ravel(), (rows, cols)), shape=(H * W, H * W)).tocsr()
    M.sum_duplicates()
    return MattingMatrix(matrix=M, shape=(H, W), r=r, eps=eps,
                         window_mean=mu.reshape(H - 2 * r, W - 2 * r),
                         window_var=var.reshape(H - 2 * r, W - 2 * r))


def guided_coeffs(p, guide, r: int, eps: float) -> AffineCoeffMaps:
    p = as_plane(p)
    g = as_plane(guide)
    if p.shape != g.shape:
        raise DimensionError(f"input {p.shape} and guide {g.shape} differ")
    mean_g = box_mean(g, r)
    mean_p = box_mean(p, r)
    var_g = box_mean(g * g, r) - mean_g * mean_g
    cov = box_mean(g * p, r) - mean_g * mean_p
    var_g = np.maximum(var_g, 0.0)
    a = cov / (var_g + eps)
    c = mean_p - a * mean_g
    return AffineCoeffMaps(a=a, c=c, guide_mean=mean_g, guide_var=var_g, input_mean=mean_p)


def guided_output(coeffs: AffineCoeffMaps, guide, r: int) -> np.ndarray:
    g = as_plane(guide)
    return box_mean(coeffs.a, r) * g + box_mean(coeffs.c, r)


class _ChannelOperators:
    """Cached transfer functions for blur, decimation and the prior filter."""

    def __init__(self, shape, k, c: int, prior):
        H, W = shape
        if H % c or W % c:
            raise DimensionError(f"{H}x{W} grid not divisible by factor {c}")
        self.shape = shape
        self.c = c
        self.otf_b = kernel_otf(k, shape)
        self.otf_l = kernel_otf(prior_kernel(prior), shape)
        self.mask = np.zeros(shape)
        self.mask[::c, ::c] = 1.0

    def _apply(self, z, otf):
        return np.real(np.fft.ifft2(np.fft.fft2(z) * otf))

    def B(self, z):
        return self._apply(z, self.otf_b)

    def Bt(self, z):
        return self._apply(z, np.conj(self.otf_b))

    def L(self, z):
        return self._apply(z, self.otf_l)

    def Lt(self, z):
        return self._apply(z, np.conj(self.otf_l))

    def data_normal(self, z):
        return self.Bt(self.mask * self.B(z))


def conjugate_gradient(apply_A, b, x0, tol: float, maxiter: int, strict: bool = True):
    """CG stopping when the relative change of the iterate drops below ``tol``.

    Returns ``(x, iterations)``. Reaching ``maxiter`` raises
    :class:`NumericalError` unless ``strict`` is false.
    """
    x = x0.copy()
    r = b - apply_A(x)
    p = r.copy()
    rs = float(np.vdot(r, r))
    bnorm = float(np.linalg.norm(b))
    if rs == 0.0:
        return x, 0
    for it in range(1, maxiter + 1):
        Ap = apply_A(p)
        pAp = float(np.vdot(p, Ap))
        if pAp <= 0:
            raise NumericalError(f"CG breakdown at iteration {it} (p^T A p = {pAp:.3g})")
        alpha = rs / pAp
        step = alpha * p
        x = x + step
        r = r - alpha * Ap
        rs_new = float(np.vdot(r, r))
        xn = float(np.linalg.norm(x))
        if xn > 0 and np.linalg.norm(step) / xn < tol:
            return x, it
        if rs_new <= (1e-15 * bnorm) ** 2:
            return x, it
        p = r + (rs_new / rs) * p
        rs = rs_new
    if not strict:
        return x, maxiter
    raise NumericalError(
        f"CG did not converge in {maxiter} iterations "
        f"(relative residual {np.sqrt(rs) / max(bnorm, 1e-300):.3g})")


def warmstart_channel(x_i, pan, k, c: int, M: MattingMatrix, params: PansharpenParams,
                      x0=None) -> np.ndarray:
    """Solve ``(B'D'DB + lam L'ML) Z = B'D' x`` by conjugate gradients.

    ``M`` must be the matting matrix of the filtered PAN image. The default
    starting point is the zero-order-hold upsampled band.
    """
    x = as_plane(x_i)
    Y = as_plane(pan)
    if Y.shape != (c * x.shape[0], c * x.shape[1]):
        raise DimensionError(f"PAN {Y.shape} must be {c}x the band size {x.shape}")
    if M.shape != Y.shape:
        raise DimensionError(f"matting matrix built for {M.shape}, PAN is {Y.shape}")
    ops = _ChannelOperators(Y.shape, k, c, params.prior_filter)
    lam = params.lam
    Mx = M.matrix

    def apply_A(z):
        lz = ops.L(z)
        return ops.data_normal(z) + lam * ops.Lt((Mx @ lz.ravel()).reshape(z.shape))

    rhs = ops.Bt(upsample_adjoint(x, c))
    start = np.kron(x, np.ones((c, c))) if x0 is None else as_plane(x0)
    z, iters = conjugate_gradient(apply_A, rhs, start, params.cg_tol, params.cg_maxiter,
                                  strict=params.cg_strict)
    log.debug("warm start converged in %d CG iterations", iters)
    return z


def _to_groups(a: np.ndarray, c: int) -> np.ndarray:
    H, W = a.shape
    h, w = H // c, W // c
    return a.reshape(c, h, c, w).transpose(1, 3, 0, 2).reshape(h * w, c * c)


def _from_groups(g: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    return g.reshape(h, w, c, c).transpose(2, 0, 3, 1).reshape(c * h, c * w)


def solve_channel_fft(x_i, k, c: int, v, params: PansharpenParams) -> np.ndarray:
    """Exact minimizer of ``1/2|DBZ - x|^2 + lam/2 |LZ - v|^2``.

    Decimation couples the ``c*c`` frequencies that alias onto one LR
    frequency; each such group is solved as a small dense system with a
    diagonal-plus-rank-one matrix.
    """
    x = as_plane(x_i)
    v = as_plane(v)
    H, W = v.shape
    h, w = x.shape
    if (H, W) != (c * h, c * w):
        raise DimensionError(f"target {v.shape} must be {c}x the band size {x.shape}")
    ops = _ChannelOperators((H, W), k, c, params.prior_filter)
    lam = params.lam
    rhs = (np.conj(ops.otf_b) * np.fft.fft2(upsample_adjoint(x, c))
           + lam * np.conj(ops.otf_l) * np.fft.fft2(v))
    diag = lam * np.abs(ops.otf_l) ** 2
    if c == 1:
        denom = np.abs(ops.otf_b) ** 2 + diag
        if np.min(denom) <= 1e-14 * np.max(denom):
            raise NumericalError("normal equations are singular at some frequency")
        return np.real(np.fft.ifft2(rhs / denom))

    b = _to_groups(ops.otf_b, c)
    d = _to_groups(diag, c)
    rg = _to_groups(rhs, c)
    A = np.conj(b)[:, :, None] * b[:, None, :] / (c * c)
    idx = np.arange(c * c)
    A[:, idx, idx] += d
    cond = np.linalg.cond(A)
    worst = float(np.max(cond))
    if not np.isfinite(worst) or worst > 1e14:
        raise NumericalError(
            f"alias-group system ill-conditioned (max condition number {worst:.3g}); "
            "check that the kernel has non-zero DC gain and lam > 0")
    zg = np.linalg.solve(A, rg[:, :, None])[:, :, 0]
    return np.real(np.fft.ifft2(_from_groups(zg, c, h, w)))


def solve_channel_cg(x_i, k, c: int, v, params: PansharpenParams, x0=None,
                     maxiter: int | None = None, tol: float | None = None) -> np.ndarray:
    """Conjugate-gradient counterpart of :func:`solve_channel_fft`.

    With ``maxiter`` set, stops silently after that many iterations.
    """
    x = as_plane(x_i)
    v = as_plane(v)
    ops = _ChannelOperators(v.shape, k, c, params.prior_filter)
    lam = params.lam

    def apply_A(z):
        return ops.data_normal(z) + lam * ops.Lt(ops.L(z))

    rhs = ops.Bt(upsample_adjoint(x, c)) + lam * ops.Lt(v)
    start = np.kron(x, np.ones((c, c))) if x0 is None else as_plane(x0)
    tol = params.cg_tol if tol is None else tol
    if maxiter is None:
        z, _ = conjugate_gradient(apply_A, rhs, start, tol, params.cg_maxiter)
    else:
        z, _ = conjugate_gradient(apply_A, rhs, start, tol, maxiter, strict=False)
    return z


def filtered_pan(pan, params: PansharpenParams) -> np.ndarray:
    Y = as_plane(pan)
    return np.real(np.fft.ifft2(np.fft.fft2(Y) * kernel_otf(prior_kernel(params.prior_filter), Y.shape)))


def pansharpen_channel(x_i, pan, k, c: int, M: MattingMatrix, params: PansharpenParams,
                       pan_f=None):
    """One band of the fast pipeline. Returns ``(warm_start, result)``."""
    pan_f = filtered_pan(pan, params) if pan_f is None else pan_f
    z0 = warmstart_channel(x_i, pan, k, c, M, params)
    ops = _ChannelOperators(z0.shape, k, c, params.prior_filter)
    coeffs = guided_coeffs(ops.L(z0), pan_f, params.r, params.eps)
    v = guided_output(coeffs, pan_f, params.r)
    z = solve_channel_fft(x_i, k, c, v, params)
    return z0, z


def pansharpen(lrms, pan, k, c: int, params: PansharpenParams = PansharpenParams(),
               threads: int = 0) -> np.ndarray:
    """Fuse an LRMS cube with the PAN image given the blur kernel ``k``."""
    params.validate()
    X = as_bands(lrms)
    Y = as_plane(pan)
    h, w, N = X.shape
    if Y.shape != (c * h, c * w):
        raise DimensionError(f"PAN {Y.shape} must be {c}x the LRMS size {(h, w)}")
    check_kernel(k)
    pan_f = filtered_pan(Y, params)
    M = build_matting_matrix(pan_f, params.r, params.eps)

    def run(i):
        try:
            return pansharpen_channel(X[:, :, i], Y, k, c, M, params, pan_f=pan_f)[1]
        except FbmpError as exc:
            raise type(exc)(f"channel {i}: {exc}") from exc

    workers = threads if threads > 0 else (os.cpu_count() or 1)
    if workers == 1 or N == 1:
        bands = [run(i) for i in range(N)]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, N)) as pool:
            bands = list(pool.map(run, range(N)))
    return np.stack(bands, axis=2)
