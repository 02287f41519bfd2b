"""Blur-kernel estimation by ADMM with a TGV² + simplex prior.

The kernel ``u`` (``n x n``) is fitted so that the blurred, decimated PAN image
matches the weighted combination of the PAN-overlapping LRMS bands::

    min_{u,p} 1/2 |E u - f|^2 + a1 |grad u - p|_{2,1} + a2 |sym(p)|_{2,1} + I_S(u)

``E`` holds one PAN patch per LR pixel, ``sym(p)`` is the symmetrized
Jacobian of the vector field ``p`` and ``I_S`` the indicator of the unit
simplex. Splitting ``x = grad u - p``, ``y = sym(p)`` and ``z = u`` gives
shrinkage steps for ``x``/``y``, a cached Cholesky solve plus simplex
projection for ``z`` and a per-frequency 3x3 solve for ``(u, p)``.

The TV and quadratic (ℓ2) baselines reuse the same machinery.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DimensionError, NumericalError, ParameterError
from .ops import as_bands, as_plane, dirac, grad_h, grad_h_adj, grad_v, grad_v_adj

log = logging.getLogger(__name__)

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class KernelEstParams:
    n: int = 29
    alpha1: float = 1.0
    alpha2: float = 0.006
    mu1: float = 100.0
    mu2: float = 100.0
    mu3: float = 100.0
    rho: float = 0.5
    t_max: int = 10000
    th: float = 1e-5
    # inputs in [0, 1] are multiplied by this before fitting; the weights
    # above are calibrated for 8-bit intensities
    scale: float = 255.0

    def validate(self, allow_zero_weights: bool = False) -> None:
        if self.n < 1 or self.n % 2 == 0:
            raise ParameterError(f"kernel side n must be odd, got {self.n}")
        for name in ("alpha1", "alpha2"):
            v = getattr(self, name)
            if not (v >= 0 if allow_zero_weights else v > 0):
                raise ParameterError(f"{name} must be positive")
        for name in ("mu1", "mu2", "mu3"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if not 0 < self.rho < GOLDEN:
            raise ParameterError(f"rho must lie in (0, {GOLDEN:.4f}), got {self.rho}")
        if not self.th > 0:
            raise ParameterError("th must be positive")
        if self.t_max < 1:
            raise ParameterError("t_max must be >= 1")
        if not self.scale > 0:
            raise ParameterError("scale must be positive")


@dataclass
class TgvAdmmState:
    u: np.ndarray
    p: np.ndarray   # (2, n, n)
    x: np.ndarray   # (2, n, n)
    y: np.ndarray   # (4, n, n)
    z: np.ndarray
    L1: np.ndarray  # (2, n, n)
    L2: np.ndarray  # (4, n, n)
    L3: np.ndarray


@dataclass
class AdmmInfo:
    iterations: int
    converged: bool
    rel_change: float
    history: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class ObservationSystem:
    E: np.ndarray
    f: np.ndarray
    n: int
    mu3: float
    EtE: np.ndarray
    Etf: np.ndarray
    factor: tuple

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.factor, rhs)


# -- observation matrix -------------------------------------------------------

def patch_matrix(pan, c: int, n: int) -> np.ndarray:
    """Rows = PAN patches producing each decimated pixel of ``pan (*) u``."""
    Y = as_plane(pan)
    H, W = Y.shape
    if n % 2 == 0 or n > min(H, W):
        raise DimensionError(f"kernel side {n} invalid for {H}x{W} PAN")
    if H % c or W % c:
        raise DimensionError(f"PAN {H}x{W} not divisible by factor {c}")
    r = n // 2
    off = np.arange(n) - r
    rows = (c * np.arange(H // c))[:, None, None, None] - off[None, None, :, None]
    cols = (c * np.arange(W // c))[None, :, None, None] - off[None, None, None, :]
    patches = Y[rows % H, cols % W]
    return patches.reshape((H // c) * (W // c), n * n)


def build_observation(pan, weighted_lrms, c: int, n: int, mu3: float) -> ObservationSystem:
    Y = as_plane(pan)
    f = as_plane(weighted_lrms)
    if Y.shape != (c * f.shape[0], c * f.shape[1]):
        raise DimensionError(
            f"PAN {Y.shape} must be {c}x the LRMS size {f.shape}")
    E = patch_matrix(Y, c, n)
    EtE = E.T @ E
    eig = np.linalg.eigvalsh(EtE)
    rank = int(np.sum(eig > 1e-10 * max(eig[-1], 1e-300)))
    if rank <= 1:
        raise NumericalError(
            f"kernel is unidentifiable: PAN patch matrix has rank {rank} "
            "(constant or empty PAN image)")
    try:
        factor = cho_factor(EtE + mu3 * np.eye(n * n))
    except LinAlgError as exc:
        raise NumericalError("failed to factor E^T E + mu3 I") from exc
    fv = f.ravel()
    return ObservationSystem(E=E, f=fv, n=n, mu3=mu3, EtE=EtE, Etf=E.T @ fv,
                             factor=factor)


# -- proximal pieces ----------------------------------------------------------

def shrink2(rows, t: float, axis: int = -1) -> np.ndarray:
    """Group soft-thresholding: scale each vector along ``axis`` by ``max(|e|-t, 0)/|e|``."""
    rows = np.asarray(rows, dtype=np.float64)
    if t < 0:
        raise ParameterError("threshold must be non-negative")
    norm = np.sqrt(np.sum(rows * rows, axis=axis, keepdims=True))
    scale = np.maximum(norm - t, 0.0) / np.where(norm > 0, norm, 1.0)
    return rows * scale


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{s >= 0, sum(s) = 1}`` (sort and threshold)."""
    v = np.asarray(v, dtype=np.float64)
    flat = v.ravel()
    s = np.sort(flat)[::-1]
    css = np.cumsum(s)
    j = np.arange(1, flat.size + 1)
    cond = s + (1.0 - css) / j > 0
    k = j[cond][-1]
    shift = (1.0 - css[k - 1]) / k
    return np.maximum(flat + shift, 0.0).reshape(v.shape)


def solve_z(obs: ObservationSystem, anchor) -> np.ndarray:
    """``(E^T E + mu3 I)^-1 (E^T f + mu3 anchor)``; projection is left to the caller."""
    a = np.asarray(anchor, dtype=np.float64)
    return obs.solve(obs.Etf + obs.mu3 * a.ravel()).reshape(a.shape)


def grad2(u: np.ndarray) -> np.ndarray:
    return np.stack([grad_h(u), grad_v(u)])


def grad2_adj(g: np.ndarray) -> np.ndarray:
    return grad_h_adj(g[0]) + grad_v_adj(g[1])


def sym_grad(p: np.ndarray) -> np.ndarray:
    """Symmetrized Jacobian of ``p``; the cross term is stored twice."""
    cross = 0.5 * (grad_v(p[0]) + grad_h(p[1]))
    return np.stack([grad_h(p[0]), cross, cross, grad_v(p[1])])


def _diff_spectra(n: int):
    k = np.arange(n)
    e = np.exp(2j * np.pi * k / n) - 1.0
    return e[None, :] * np.ones((n, 1)), e[:, None] * np.ones((1, n))


def _det3(a11, a12, a13, a21, a22, a23, a31, a32, a33):
    return (a11 * a22 * a33 + a12 * a23 * a31 + a13 * a21 * a32
            - a13 * a22 * a31 - a12 * a21 * a33 - a11 * a32 * a23)


def solve_up(x, y, L1, L2, params: KernelEstParams, anchor=None):
    """Exact minimizer of the ``(u, p)`` subproblem via per-frequency Cramer's rule.

    ``anchor`` is ``z - L3``; when given, the ``mu3/2 |z - u - L3|^2`` coupling
    enters the ``u`` block. Without it ``u`` is only defined up to a constant;
    the zero-mean solution is returned.
    """
    a1m1 = params.alpha1 * params.mu1
    a2m2 = params.alpha2 * params.mu2
    n = x.shape[-1]
    y3 = 0.5 * (y[1] + y[2])
    l23 = 0.5 * (L2[1] + L2[2])

    B1 = a1m1 * (grad_h_adj(x[0] - L1[0]) + grad_v_adj(x[1] - L1[1]))
    B2 = a1m1 * (L1[0] - x[0]) + a2m2 * (grad_h_adj(y[0] - L2[0]) + grad_v_adj(y3 - l23))
    B3 = a1m1 * (L1[1] - x[1]) + a2m2 * (grad_v_adj(y[3] - L2[3]) + grad_h_adj(y3 - l23))

    h, v = _diff_spectra(n)
    hh = np.abs(h) ** 2
    vv = np.abs(v) ** 2
    d1 = a1m1 * (hh + vv) + 0j
    if anchor is not None:
        d1 = d1 + params.mu3
        B1 = B1 + params.mu3 * anchor
    d2 = a1m1 + a2m2 * (hh + 0.5 * vv) + 0j
    d3 = a1m1 + a2m2 * (vv + 0.5 * hh) + 0j
    d4 = -a1m1 * h
    d5 = -a1m1 * v
    d6 = 0.5 * a2m2 * np.conj(h) * v
    d4t, d5t, d6t = np.conj(d4), np.conj(d5), np.conj(d6)

    F1, F2, F3 = (np.fft.fft2(b) for b in (B1, B2, B3))
    denom = _det3(d1, d4t, d5t, d4, d2, d6t, d5, d6, d3)
    floor = 1e-12 * np.max(np.abs(denom))
    denom = np.where(np.abs(denom) < floor, floor, denom)

    u = _det3(F1, d4t, d5t, F2, d2, d6t, F3, d6, d3) / denom
    p1 = _det3(d1, F1, d5t, d4, F2, d6t, d5, F3, d3) / denom
    p2 = _det3(d1, d4t, F1, d4, d2, F2, d5, d6, F3) / denom
    if anchor is None:
        # the system decouples at DC: u is free, p solves two scalar equations
        u[0, 0] = 0.0
        p1[0, 0] = F2[0, 0] / d2[0, 0]
        p2[0, 0] = F3[0, 0] / d3[0, 0]
    u = np.real(np.fft.ifft2(u))
    p = np.stack([np.real(np.fft.ifft2(p1)), np.real(np.fft.ifft2(p2))])
    return u, p


# -- objectives ---------------------------------------------------------------

def _norm21(a: np.ndarray) -> float:
    return float(np.sum(np.sqrt(np.sum(a * a, axis=0))))


def tgv_objective(obs: ObservationSystem, u, p, params: KernelEstParams) -> float:
    r = obs.E @ np.ravel(u) - obs.f
    return (0.5 * float(r @ r) + params.alpha1 * _norm21(grad2(u) - p)
            + params.alpha2 * _norm21(sym_grad(p)))


def tv_objective(obs: ObservationSystem, u, alpha: float) -> float:
    r = obs.E @ np.ravel(u) - obs.f
    return 0.5 * float(r @ r) + alpha * _norm21(grad2(u))


def l2_objective(obs: ObservationSystem, u, alpha1: float, alpha2: float) -> float:
    r = obs.E @ np.ravel(u) - obs.f
    g = grad2(u)
    return 0.5 * float(r @ r) + alpha1 * float(np.sum(g * g)) + alpha2 * float(np.sum(u * u))


# -- drivers ------------------------------------------------------------------

def _initial_kernel(init, n: int) -> np.ndarray:
    if init is None or (isinstance(init, str) and init == "dirac"):
        return dirac(n)
    if isinstance(init, str) and init == "uniform":
        return np.full((n, n), 1.0 / (n * n))
    k = np.asarray(init, dtype=np.float64)
    if k.shape != (n, n):
        raise DimensionError(f"initial kernel shape {k.shape} != {(n, n)}")
    return k.copy()


def _check_finite(t: int, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"ADMM diverged: non-finite iterate at iteration {t}")


def run_tgv_admm(obs: ObservationSystem, params: KernelEstParams, init=None,
                 callback: Callable[[int, TgvAdmmState], None] | None = None):
    """Run the TGV² ADMM loop on a prepared observation system.

    Returns ``(state, info)``; ``state.z`` is the simplex-feasible kernel.
    ``callback(t, state)`` is invoked before each iteration.
    """
    params.validate()
    n = params.n
    if obs.n != n:
        raise DimensionError(f"observation built for n={obs.n}, params have n={n}")
    u = _initial_kernel(init, n)
    st = TgvAdmmState(u=u, p=np.zeros((2, n, n)), x=grad2(u), y=np.zeros((4, n, n)),
                      z=u.copy(), L1=np.zeros((2, n, n)), L2=np.zeros((4, n, n)),
                      L3=np.zeros((n, n)))
    rho = params.rho
    rel = math.inf
    converged = False
    t = 0
    for t in range(1, params.t_max + 1):
        if callback is not None:
            callback(t, st)
        st.x = shrink2(grad2(st.u) - st.p + st.L1, 1.0 / params.mu1, axis=0)
        st.y = shrink2(sym_grad(st.p) + st.L2, 1.0 / params.mu2, axis=0)
        st.z = project_simplex(solve_z(obs, st.u + st.L3))
        u_new, st.p = solve_up(st.x, st.y, st.L1, st.L2, params, anchor=st.z - st.L3)
        st.L1 = st.L1 + rho * (grad2(u_new) - st.p - st.x)
        st.L2 = st.L2 + rho * (sym_grad(st.p) - st.y)
        st.L3 = st.L3 + rho * (u_new - st.z)
        _check_finite(t, u_new, st.p, st.L1, st.L2, st.L3)
        rel = np.linalg.norm(st.u - u_new) / max(np.linalg.norm(u_new), 1e-300)
        st.u = u_new
        if rel < params.th:
            converged = True
            break
    log.debug("TGV ADMM stopped after %d iterations (rel change %.3g)", t, rel)
    return st, AdmmInfo(iterations=t, converged=converged, rel_change=float(rel))


def run_tv_admm(obs: ObservationSystem, params: KernelEstParams, init=None):
    """TV + simplex baseline: the TGV loop with ``p`` pinned to zero.

    ``params.alpha1`` is the TV weight.
    """
    params.validate()
    n = params.n
    a1m1 = params.alpha1 * params.mu1
    mu3 = params.mu3
    rho = params.rho
    h, v = _diff_spectra(n)
    denom = a1m1 * (np.abs(h) ** 2 + np.abs(v) ** 2) + mu3
    u = _initial_kernel(init, n)
    z = u.copy()
    L1 = np.zeros((2, n, n))
    L3 = np.zeros((n, n))
    rel = math.inf
    converged = False
    t = 0
    for t in range(1, params.t_max + 1):
        x = shrink2(grad2(u) + L1, 1.0 / params.mu1, axis=0)
        z = project_simplex(solve_z(obs, u + L3))
        rhs = a1m1 * grad2_adj(x - L1) + mu3 * (z - L3)
        u_new = np.real(np.fft.ifft2(np.fft.fft2(rhs) / denom))
        L1 = L1 + rho * (grad2(u_new) - x)
        L3 = L3 + rho * (u_new - z)
        _check_finite(t, u_new, L1, L3)
        rel = np.linalg.norm(u - u_new) / max(np.linalg.norm(u_new), 1e-300)
        u = u_new
        if rel < params.th:
            converged = True
            break
    return z, AdmmInfo(iterations=t, converged=converged, rel_change=float(rel))


def grad_matrices(n: int):
    """Dense circular forward-difference matrices ``(Dh, Dv)`` on an ``n x n`` grid."""
    I = np.eye(n * n)
    Dh = np.stack([grad_h(I[:, k].reshape(n, n)).ravel() for k in range(n * n)], axis=1)
    Dv = np.stack([grad_v(I[:, k].reshape(n, n)).ravel() for k in range(n * n)], axis=1)
    return Dh, Dv


def l2_system_matrix(obs: ObservationSystem, alpha1: float, alpha2: float, mu: float):
    n = obs.n
    Dh, Dv = grad_matrices(n)
    return (obs.EtE + 2 * alpha1 * (Dh.T @ Dh + Dv.T @ Dv)
            + (2 * alpha2 + mu) * np.eye(n * n))


def run_l2_admm(obs: ObservationSystem, params: KernelEstParams, init=None):
    """Quadratic smoothness + ridge + simplex baseline, single split ``z = u``.

    Uses ``params.alpha1`` (gradient energy), ``params.alpha2`` (ridge) and
    ``params.mu3`` as the penalty. Zero weights are allowed here.
    """
    params.validate(allow_zero_weights=True)
    n = params.n
    mu = params.mu3
    rho = params.rho
    K = l2_system_matrix(obs, params.alpha1, params.alpha2, mu)
    factor = cho_factor(K)
    u = _initial_kernel(init, n).ravel()
    z = u.copy()
    lam = np.zeros(n * n)
    rel = math.inf
    converged = False
    t = 0
    for t in range(1, params.t_max + 1):
        u_new = cho_solve(factor, obs.Etf + mu * (z - lam))
        z = project_simplex(u_new + lam)
        lam = lam + rho * (u_new - z)
        _check_finite(t, u_new, lam)
        rel = np.linalg.norm(u - u_new) / max(np.linalg.norm(u_new), 1e-300)
        u = u_new
        if rel < params.th:
            converged = True
            break
    return z.reshape(n, n), AdmmInfo(iterations=t, converged=converged, rel_change=float(rel))


def _weighted_lrms(lrms_subset, omega) -> np.ndarray:
    X = as_bands(lrms_subset)
    omega = np.asarray(omega, dtype=np.float64).ravel()
    if omega.size != X.shape[2]:
        raise DimensionError(f"{omega.size} weights for {X.shape[2]} bands")
    return X @ omega


def _observation(lrms_subset, pan, omega, c, params, allow_zero_weights=False):
    params.validate(allow_zero_weights)
    s = params.scale
    return build_observation(s * as_plane(pan), s * _weighted_lrms(lrms_subset, omega),
                             c, params.n, params.mu3)


def estimate_kernel_tgv(lrms_subset, pan, omega, c: int,
                        params: KernelEstParams = KernelEstParams(), init=None) -> np.ndarray:
    obs = _observation(lrms_subset, pan, omega, c, params)
    st, _ = run_tgv_admm(obs, params, init=init)
    return st.z


def estimate_kernel_tv(lrms_subset, pan, omega, c: int,
                       params: KernelEstParams = KernelEstParams(), init=None) -> np.ndarray:
    obs = _observation(lrms_subset, pan, omega, c, params)
    z, _ = run_tv_admm(obs, params, init=init)
    return z


def estimate_kernel_l2(lrms_subset, pan, omega, c: int,
                       params: KernelEstParams = KernelEstParams(), init=None) -> np.ndarray:
    obs = _observation(lrms_subset, pan, omega, c, params, allow_zero_weights=True)
    z, _ = run_l2_admm(obs, params, init=init)
    return z


ESTIMATORS = {
    "tgv": estimate_kernel_tgv,
    "tv": estimate_kernel_tv,
    "l2": estimate_kernel_l2,
}


def with_overrides(params: KernelEstParams, **kw) -> KernelEstParams:
    return replace(params, **{k: v for k, v in kw.items() if v is not None})
