import numpy as np
import pytest

from fbmp.errors import DimensionError, NumericalError, ParameterError
from fbmp.weights import SpectralWeightConfig, difference_matrix, solve_weights, weight_system


def _box_blur_naive(img, width):
    H, W = img.shape
    r = width // 2
    out = np.zeros_like(img)
    for i in range(H):
        for j in range(W):
            out[i, j] = sum(img[(i + a) % H, (j + b) % W]
                            for a in range(-r, r + 1) for b in range(-r, r + 1)) / width ** 2
    return out


def _problem(rng, h=6, bands=3, c=2):
    lr = rng.random((h, h, bands))
    pan = rng.random((c * h, c * h))
    return lr, pan


def test_difference_matrix():
    np.testing.assert_array_equal(difference_matrix(3), [[-1, 1, 0], [0, -1, 1]])
    assert difference_matrix(1).shape == (0, 1)


def test_system_matches_naive(rng):
    lr, pan = _problem(rng)
    cfg = SpectralWeightConfig(band_indices=(0, 1, 2), l=2, c=2, scale=1.0)
    A, b = weight_system(lr, pan, cfg)
    ref_A = np.column_stack([_box_blur_naive(lr[:, :, i], 3).ravel() for i in range(3)])
    ref_b = _box_blur_naive(pan, 5)[::2, ::2].ravel()
    np.testing.assert_allclose(A, ref_A, atol=1e-13)
    np.testing.assert_allclose(b, ref_b, atol=1e-13)


def test_single_band_closed_form(rng):
    lr, pan = _problem(rng, bands=1)
    cfg = SpectralWeightConfig(band_indices=(0,), l=2, c=2, lambda_omega=5.0, scale=1.0)
    A, b = weight_system(lr, pan, cfg)
    omega = solve_weights(lr, pan, cfg)
    # no neighbour pairs, so the regularizer vanishes
    assert omega[0] == pytest.approx(float(A[:, 0] @ b) / float(A[:, 0] @ A[:, 0]), rel=1e-12)


@pytest.mark.parametrize("lam", [0.0, 0.3, 10.0])
def test_normal_equations(rng, lam):
    lr, pan = _problem(rng, bands=4)
    cfg = SpectralWeightConfig(band_indices=(0, 1, 2, 3), l=2, c=2, lambda_omega=lam, scale=1.0)
    A, b = weight_system(lr, pan, cfg)
    G = difference_matrix(4)
    omega = solve_weights(lr, pan, cfg)
    ref = np.linalg.solve(A.T @ A + lam * G.T @ G, A.T @ b)
    np.testing.assert_allclose(omega, ref, rtol=1e-9, atol=1e-12)


def test_fit_no_worse_than_generating_weights(rng):
    c = 2
    lr = rng.random((8, 8, 3))
    w = np.array([0.2, 0.5, 0.3])
    hr = np.kron(lr, np.ones((c, c, 1)))
    pan = hr @ w
    cfg = SpectralWeightConfig(band_indices=(0, 1, 2), l=1, c=c, lambda_omega=0.0, scale=1.0)
    A, b = weight_system(lr, pan, cfg)
    omega = solve_weights(lr, pan, cfg)
    assert np.linalg.norm(A @ omega - b) <= np.linalg.norm(A @ w - b) + 1e-12


def test_scale_homogeneity(rng):
    lr, pan = _problem(rng, bands=3)
    a = solve_weights(lr, pan, SpectralWeightConfig((0, 1, 2), l=2, c=2, lambda_omega=10.0,
                                                    scale=255.0))
    b = solve_weights(lr, pan, SpectralWeightConfig((0, 1, 2), l=2, c=2,
                                                    lambda_omega=10.0 / 255.0 ** 2, scale=1.0))
    np.testing.assert_allclose(a, b, rtol=1e-9)


def test_large_lambda_equalizes(rng):
    lr, pan = _problem(rng, bands=3)
    omega = solve_weights(lr, pan, SpectralWeightConfig((0, 1, 2), l=2, c=2,
                                                        lambda_omega=1e9, scale=1.0))
    assert np.ptp(omega) < 1e-4 * abs(omega.mean())


def test_constant_bands_singular():
    lr = np.ones((6, 6, 2))
    pan = np.ones((12, 12))
    with pytest.raises(NumericalError):
        solve_weights(lr, pan, SpectralWeightConfig((0, 1), l=2, c=2, lambda_omega=0.0))


def test_size_mismatch(rng):
    lr, _ = _problem(rng)
    with pytest.raises(DimensionError):
        weight_system(lr, np.zeros((13, 12)), SpectralWeightConfig((0, 1, 2), l=2, c=2))


@pytest.mark.parametrize("kw", [dict(band_indices=()), dict(band_indices=(0, 0)),
                                dict(band_indices=(0,), l=0), dict(band_indices=(0,), lambda_omega=-1),
                                dict(band_indices=(0,), scale=0.0), dict(band_indices=(0,), c=0)])
def test_invalid_config(kw):
    with pytest.raises(ParameterError):
        SpectralWeightConfig(**kw).validate()


def test_band_index_range():
    with pytest.raises(ParameterError):
        SpectralWeightConfig((0, 4)).validate(n_bands=4)
