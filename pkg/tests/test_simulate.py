import math

import numpy as np
import pytest

from fbmp.errors import ParameterError
from fbmp.metrics import psnr_avg
from fbmp.ops import dirac
from fbmp.simulate import (SyntheticKernelSpec, add_noise_at_psnr, make_scene, motion_gaussian,
                           simulate_lrms, synth_kernel)

from conftest import naive_circular_convolve


def test_isotropic_gaussian():
    k = synth_kernel(SyntheticKernelSpec(sigma=1.0, R=4))
    np.testing.assert_allclose(k, np.rot90(k), atol=1e-15)
    t = np.arange(-4, 5)
    g = np.exp(-(t[:, None] ** 2 + t[None, :] ** 2) / 2.0)
    np.testing.assert_allclose(k, g / g.sum(), atol=1e-12)


@pytest.mark.parametrize("spec", [
    SyntheticKernelSpec(sigma=2, cx=1.392, cy=0.093, d=3, theta=-13.7, R=9),
    SyntheticKernelSpec(sigma=0.7, cx=-2.5, cy=3.1, d=5, theta=80, R=6),
    SyntheticKernelSpec(sigma=1, cx=5.87, cy=4.11, d=1, theta=36.1, R=14),
])
def test_kernel_in_simplex(spec):
    k = synth_kernel(spec)
    assert k.shape == (2 * spec.R + 1,) * 2
    assert np.all(k >= 0)
    assert abs(k.sum() - 1) < 1e-12


def test_peak_near_offset():
    spec = SyntheticKernelSpec(sigma=2, cx=1.392, cy=0.093, d=3, theta=-13.7, R=9)
    k = synth_kernel(spec)
    row, col = np.unravel_index(np.argmax(k), k.shape)
    # cx is a column offset, cy a row offset
    assert (row - 9, col - 9) == (0, 1)


def test_rotation_is_coordinate_rotation():
    spec = SyntheticKernelSpec(sigma=1.3, cx=0.4, cy=-0.7, d=2.5, theta=27.0, R=5)
    k = synth_kernel(spec)
    t = math.radians(27.0)
    j, i = np.mgrid[-5:6, -5:6].astype(float)
    dx, dy = i - 0.4, j + 0.7
    raw = motion_gaussian(dx * math.cos(t) + dy * math.sin(t),
                          -dx * math.sin(t) + dy * math.cos(t), 1.3, 2.5)
    np.testing.assert_allclose(k, raw / raw.sum(), atol=1e-15)


def test_motion_limit_is_continuous():
    x = np.linspace(-3, 3, 13)
    a = motion_gaussian(x, 0.2, 1.1, 0.0)
    b = motion_gaussian(x, 0.2, 1.1, 1e-5)
    np.testing.assert_allclose(a, b, rtol=1e-6)


def test_motion_elongates_along_theta():
    k = synth_kernel(SyntheticKernelSpec(sigma=0.8, d=6, theta=0, R=6))
    assert k[6, :].sum() > k[:, 6].sum()


@pytest.mark.parametrize("kw", [dict(sigma=0), dict(sigma=1, d=-1), dict(sigma=1, cx=9, R=9),
                                dict(sigma=1, R=0)])
def test_invalid_spec(kw):
    with pytest.raises(ParameterError):
        synth_kernel(SyntheticKernelSpec(**kw))


def test_simulate_identity(rng):
    hr = rng.random((8, 8, 3))
    np.testing.assert_allclose(simulate_lrms(hr, dirac(1), 1), hr, atol=1e-14)


def test_simulate_constant_bands():
    hr = np.stack([np.full((16, 16), v) for v in (0.2, 0.7)], axis=2)
    k = synth_kernel(SyntheticKernelSpec(sigma=1.5, d=2, theta=30, R=4))
    lr = simulate_lrms(hr, k, 4)
    assert lr.shape == (4, 4, 2)
    np.testing.assert_allclose(lr[:, :, 0], 0.2, atol=1e-14)
    np.testing.assert_allclose(lr[:, :, 1], 0.7, atol=1e-14)


def test_simulate_matches_naive(rng):
    band = rng.random((16, 16))
    k = synth_kernel(SyntheticKernelSpec(sigma=1, R=2))
    ref = naive_circular_convolve(band, k)[::2, ::2]
    np.testing.assert_allclose(simulate_lrms(band, k, 2)[:, :, 0], ref, atol=1e-13)


@pytest.mark.parametrize("db", [10.0, 20.0, 40.0])
def test_noise_psnr(rng, db):
    clean = rng.random((128, 128))
    noisy = add_noise_at_psnr(clean, db, seed=1)
    _, got = psnr_avg(noisy, clean, peak=1.0)
    assert abs(got - db) < 0.1


def test_noise_is_seeded(rng):
    clean = rng.random((16, 16))
    a = add_noise_at_psnr(clean, 20, seed=7)
    b = add_noise_at_psnr(clean, 20, seed=7)
    np.testing.assert_array_equal(a, b)


def test_scene_is_linear_in_bands():
    cube, pan, w = make_scene(64, 4, seed=3)
    assert cube.shape == (64, 64, 4) and pan.shape == (64, 64)
    np.testing.assert_allclose(pan, cube @ w, atol=1e-14)
    assert cube.min() >= 0.05 - 1e-12 and cube.max() <= 0.95 + 1e-12
    again = make_scene(64, 4, seed=3)[0]
    np.testing.assert_array_equal(cube, again)
