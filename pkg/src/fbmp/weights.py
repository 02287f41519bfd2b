"""Spectral weights mapping the PAN-overlapping LRMS bands onto the PAN image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DimensionError, NumericalError, ParameterError
from .ops import as_bands, as_plane, box_kernel, circular_convolve, downsample


@dataclass(frozen=True)
class SpectralWeightConfig:
    band_indices: tuple[int, ...]
    l: int = 4
    lambda_omega: float = 10.0
    c: int = 4
    # intensities in [0, 1] are multiplied by this; lambda_omega is
    # calibrated for 8-bit data
    scale: float = 255.0

    def validate(self, n_bands: int | None = None) -> None:
        idx = tuple(self.band_indices)
        if not idx:
            raise ParameterError("band_indices must not be empty")
        if len(set(idx)) != len(idx):
            raise ParameterError(f"duplicate band indices {idx}")
        if n_bands is not None and any(i < 0 or i >= n_bands for i in idx):
            raise ParameterError(f"band indices {idx} out of range for {n_bands} bands")
        if self.l < 1:
            raise ParameterError(f"l must be >= 1, got {self.l}")
        if self.lambda_omega < 0:
            raise ParameterError("lambda_omega must be non-negative")
        if self.c < 1:
            raise ParameterError(f"invalid resolution factor {self.c}")
        if not self.scale > 0:
            raise ParameterError("scale must be positive")


def difference_matrix(n: int) -> np.ndarray:
    """``(n-1) x n`` first-difference matrix between adjacent weights."""
    G = np.zeros((max(n - 1, 0), n))
    for i in range(n - 1):
        G[i, i] = -1.0
        G[i, i + 1] = 1.0
    return G


def weight_system(lrms_subset, pan, cfg: SpectralWeightConfig):
    """Design matrix ``A`` (blurred LR bands) and target ``b`` (blurred, decimated PAN)."""
    X = cfg.scale * as_bands(lrms_subset)
    Y = cfg.scale * as_plane(pan)
    h, w, _ = X.shape
    c = cfg.c
    if Y.shape != (c * h, c * w):
        raise DimensionError(
            f"PAN {Y.shape} must be {c}x the LRMS size {(h, w)}")
    u1 = box_kernel(cfg.l + 1)
    u2 = box_kernel(c * cfg.l + 1)
    A = np.column_stack([circular_convolve(X[:, :, i], u1).ravel()
                         for i in range(X.shape[2])])
    b = downsample(circular_convolve(Y, u2), c).ravel()
    return A, b


def solve_weights(lrms_subset, pan, cfg: SpectralWeightConfig) -> np.ndarray:
    """Regularized least-squares weights ``omega`` (one per selected band)."""
    cfg.validate()
    A, b = weight_system(lrms_subset, pan, cfg)
    G = difference_matrix(A.shape[1])
    normal = A.T @ A + cfg.lambda_omega * (G.T @ G)
    rhs = A.T @ b
    try:
        factor = cho_factor(normal)
    except LinAlgError as exc:
        raise NumericalError(
            "spectral-weight normal matrix is singular; bands may be constant or "
            "duplicated (try lambda_omega > 0)") from exc
    eig = np.linalg.eigvalsh(normal)
    if eig[0] <= 1e-13 * max(eig[-1], 1e-300):
        raise NumericalError(
            f"spectral-weight normal matrix is numerically singular "
            f"(eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})")
    omega = cho_solve(factor, rhs)
    if not np.all(np.isfinite(omega)):
        raise NumericalError("non-finite spectral weights")
    return omega
