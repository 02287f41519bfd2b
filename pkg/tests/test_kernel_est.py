from itertools import product

import numpy as np
import pytest

from fbmp.errors import DimensionError, NumericalError, ParameterError
from fbmp.kernel_est import (KernelEstParams, build_observation, estimate_kernel_l2,
                             estimate_kernel_tgv, estimate_kernel_tv, grad2, grad_matrices, l2_system_matrix,
                             patch_matrix, project_simplex, run_tgv_admm, run_tv_admm,
                             shrink2, solve_up, solve_z, sym_grad, tgv_objective, with_overrides)
from fbmp.metrics import kernel_rel_error
from fbmp.ops import circular_convolve, dirac, downsample
from fbmp.simulate import SyntheticKernelSpec, make_scene, simulate_lrms, synth_kernel


# -- observation matrix ---------------------------------------------------

def test_patch_matrix_matches_convolution(rng):
    pan = rng.random((12, 12))
    k = rng.random((5, 5))
    E = patch_matrix(pan, 3, 5)
    assert E.shape == (16, 25)
    ref = downsample(circular_convolve(pan, k), 3).ravel()
    np.testing.assert_allclose(E @ k.ravel(), ref, atol=1e-12)


def test_patch_matrix_dirac_row():
    pan = np.arange(16.0).reshape(4, 4)
    E = patch_matrix(pan, 2, 3)
    # with a centred Dirac each LR pixel reads its own PAN sample
    np.testing.assert_array_equal(E[:, 4], pan[::2, ::2].ravel())


def test_patch_matrix_shape_checks():
    with pytest.raises(DimensionError):
        patch_matrix(np.zeros((8, 8)), 2, 4)
    with pytest.raises(DimensionError):
        patch_matrix(np.zeros((8, 8)), 3, 3)


def test_constant_pan_unidentifiable():
    with pytest.raises(NumericalError):
        build_observation(np.full((16, 16), 0.5), np.full((8, 8), 0.5), 2, 5, 100.0)


# -- shrinkage and projection --------------------------------------------

def test_shrink2_examples():
    np.testing.assert_allclose(shrink2([3.0, 4.0], 1.0), [2.4, 3.2])
    np.testing.assert_array_equal(shrink2([0.3, 0.4], 1.0), [0.0, 0.0])
    np.testing.assert_array_equal(shrink2([0.0, 0.0], 1.0), [0.0, 0.0])
    np.testing.assert_array_equal(shrink2([3.0, 4.0], 0.0), [3.0, 4.0])


def test_shrink2_axis(rng):
    a = rng.standard_normal((2, 5, 5))
    out = shrink2(a, 0.5, axis=0)
    ref = np.moveaxis(shrink2(np.moveaxis(a, 0, -1), 0.5), -1, 0)
    np.testing.assert_allclose(out, ref)


def test_shrink2_is_prox(rng):
    # prox of t*|.|_2: output beats nearby perturbations on the prox objective
    v = rng.standard_normal(4)
    t = 0.7
    x = shrink2(v, t)
    obj = lambda w: 0.5 * np.sum((w - v) ** 2) + t * np.linalg.norm(w)
    for _ in range(50):
        assert obj(x) <= obj(x + 1e-3 * rng.standard_normal(4)) + 1e-12


def test_project_simplex_examples():
    np.testing.assert_allclose(project_simplex([0.5, 0.7]), [0.4, 0.6])
    np.testing.assert_allclose(project_simplex([2.0, -1.0]), [1.0, 0.0])
    np.testing.assert_allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])
    np.testing.assert_allclose(project_simplex(np.zeros(4)), np.full(4, 0.25))


def _qp_projection(v):
    """Brute force: try every support set, keep the feasible KKT point closest to v."""
    n = v.size
    best, best_d = None, np.inf
    for mask in product([0, 1], repeat=n):
        s = np.array(mask, dtype=bool)
        if not s.any():
            continue
        x = np.zeros(n)
        x[s] = v[s] + (1.0 - v[s].sum()) / s.sum()
        if np.all(x >= -1e-15):
            d = np.sum((x - v) ** 2)
            if d < best_d:
                best, best_d = x, d
    return best


@pytest.mark.parametrize("seed", range(20))
def test_project_simplex_brute_force(seed):
    g = np.random.default_rng(seed)
    v = g.standard_normal(1 + seed % 4) * 2
    np.testing.assert_allclose(project_simplex(v), _qp_projection(v), atol=1e-12)


def test_project_simplex_keeps_shape(rng):
    out = project_simplex(rng.standard_normal((3, 3)))
    assert out.shape == (3, 3) and abs(out.sum() - 1) < 1e-12 and out.min() >= 0


# -- z step ---------------------------------------------------------------

def test_solve_z_dense(rng):
    pan = rng.random((16, 16))
    f = rng.random((8, 8))
    obs = build_observation(pan, f, 2, 5, 3.0)
    anchor = rng.standard_normal((5, 5))
    z = solve_z(obs, anchor)
    E = obs.E
    ref = np.linalg.solve(E.T @ E + 3.0 * np.eye(25), E.T @ f.ravel() + 3.0 * anchor.ravel())
    np.testing.assert_allclose(z.ravel(), ref, rtol=1e-10, atol=1e-12)


def test_solve_z_negligible_data(rng):
    # a tiny PAN makes E ~ 0, so z reduces to the anchor
    pan = 1e-9 * rng.random((16, 16))
    obs = build_observation(pan, np.zeros((8, 8)), 2, 3, 1.0)
    a = rng.standard_normal((3, 3))
    np.testing.assert_allclose(solve_z(obs, a), a, atol=1e-12)


# -- (u, p) step ----------------------------------------------------------

def _dense_up(x, y, L1, L2, prm, anchor):
    n = x.shape[-1]
    Dh, Dv = grad_matrices(n)
    I = np.eye(n * n)
    Z = np.zeros_like(I)
    s1 = np.sqrt(prm.alpha1 * prm.mu1)
    s2 = np.sqrt(prm.alpha2 * prm.mu2)
    rows = [s1 * np.hstack([Dh, -I, Z]), s1 * np.hstack([Dv, Z, -I]),
            s2 * np.hstack([Z, Dh, Z]), s2 * np.hstack([Z, 0.5 * Dv, 0.5 * Dh]),
            s2 * np.hstack([Z, 0.5 * Dv, 0.5 * Dh]), s2 * np.hstack([Z, Z, Dv])]
    tx = x - L1
    ty = y - L2
    rhs = [s1 * tx[0].ravel(), s1 * tx[1].ravel()] + [s2 * ty[i].ravel() for i in range(4)]
    if anchor is not None:
        s3 = np.sqrt(prm.mu3)
        rows.append(s3 * np.hstack([I, Z, Z]))
        rhs.append(s3 * anchor.ravel())
    M = np.vstack(rows)
    sol = np.linalg.lstsq(M, np.concatenate(rhs), rcond=None)[0]
    return sol[:n * n].reshape(n, n), sol[n * n:].reshape(2, n, n)


@pytest.mark.parametrize("seed", range(20))
def test_solve_up_dense_with_anchor(seed):
    g = np.random.default_rng(seed)
    n = 4
    prm = KernelEstParams(n=n, alpha1=g.uniform(0.1, 2), alpha2=g.uniform(0.001, 1),
                          mu1=g.uniform(1, 100), mu2=g.uniform(1, 100), mu3=g.uniform(1, 100))
    x, L1 = g.standard_normal((2, 2, n, n))
    y, L2 = g.standard_normal((2, 4, n, n))
    anchor = g.standard_normal((n, n))
    u, p = solve_up(x, y, L1, L2, prm, anchor=anchor)
    ru, rp = _dense_up(x, y, L1, L2, prm, anchor)
    scale = max(np.abs(ru).max(), np.abs(rp).max())
    assert np.abs(u - ru).max() <= 1e-8 * scale
    assert np.abs(p - rp).max() <= 1e-8 * scale


@pytest.mark.parametrize("seed", range(5))
def test_solve_up_dense_without_anchor(seed):
    g = np.random.default_rng(100 + seed)
    n = 4
    prm = KernelEstParams(n=n, alpha1=1.0, alpha2=0.3, mu1=10.0, mu2=20.0)
    x, L1 = g.standard_normal((2, 2, n, n))
    y, L2 = g.standard_normal((2, 4, n, n))
    u, p = solve_up(x, y, L1, L2, prm)
    ru, rp = _dense_up(x, y, L1, L2, prm, None)
    np.testing.assert_allclose(u - u.mean(), ru - ru.mean(), atol=1e-8)
    np.testing.assert_allclose(p, rp, atol=1e-8)


def test_sym_grad_symmetric(rng):
    s = sym_grad(rng.standard_normal((2, 6, 6)))
    np.testing.assert_array_equal(s[1], s[2])


# -- quadratic baseline ----------------------------------------------------

def test_l2_system_matches_objective_hessian(rng):
    pan = rng.random((16, 16))
    obs = build_observation(pan, rng.random((8, 8)), 2, 3, 5.0)
    K = l2_system_matrix(obs, 0.7, 0.2, 5.0)
    # Hessian of 1/2|Eu-f|^2 + a1|grad u|^2 + a2|u|^2 + mu/2|u - t|^2
    Dh, Dv = grad_matrices(3)
    H = obs.E.T @ obs.E + 1.4 * (Dh.T @ Dh + Dv.T @ Dv) + 0.4 * np.eye(9) + 5.0 * np.eye(9)
    np.testing.assert_allclose(K, H, atol=1e-12)


# -- end-to-end recovery ---------------------------------------------------

@pytest.fixture(scope="module")
def recovery_problem():
    hr, pan, w = make_scene(64, 4, seed=2)
    truth = synth_kernel(SyntheticKernelSpec(sigma=1.0, cx=0.6, cy=-0.4, d=1.5, theta=30, R=4))
    lr = simulate_lrms(hr, truth, 2)
    return lr, pan, w, truth


def test_tv_weak_prior_recovers_noiseless(recovery_problem):
    lr, pan, w, truth = recovery_problem
    z = estimate_kernel_tv(lr, pan, w, 2, KernelEstParams(n=9, alpha1=1e-4))
    assert kernel_rel_error(z, truth) < 1.0


def test_tgv_default_recovers_noiseless(recovery_problem):
    lr, pan, w, truth = recovery_problem
    k = estimate_kernel_tgv(lr, pan, w, 2, KernelEstParams(n=9))
    assert k.min() >= 0 and abs(k.sum() - 1) < 1e-9
    assert kernel_rel_error(k, truth) < 5.0


def test_l2_baseline_feasible(recovery_problem):
    lr, pan, w, truth = recovery_problem
    k = estimate_kernel_l2(lr, pan, w, 2, KernelEstParams(n=9, alpha1=0.0, alpha2=0.0))
    assert k.min() >= 0 and abs(k.sum() - 1) < 1e-9
    assert kernel_rel_error(k, truth) < 5.0


def test_tgv_objective_decreases(recovery_problem):
    lr, pan, w, _ = recovery_problem
    prm = KernelEstParams(n=9, scale=1.0, alpha1=0.01, alpha2=0.001, t_max=400)
    obs = build_observation(pan, lr @ w, 2, 9, prm.mu3)
    st, info = run_tgv_admm(obs, prm)
    start = tgv_objective(obs, dirac(9), np.zeros((2, 9, 9)), prm)
    assert tgv_objective(obs, st.z, st.p, prm) < start


def test_callback_sees_each_iteration(recovery_problem):
    lr, pan, w, _ = recovery_problem
    prm = KernelEstParams(n=9, t_max=7, th=1e-30)
    obs = build_observation(pan, lr @ w, 2, 9, prm.mu3)
    seen = []
    _, info = run_tgv_admm(obs, prm, callback=lambda t, st: seen.append(t))
    assert seen == list(range(1, 8)) and info.iterations == 7 and not info.converged


def test_init_shape_checked(recovery_problem):
    lr, pan, w, _ = recovery_problem
    with pytest.raises(DimensionError):
        estimate_kernel_tgv(lr, pan, w, 2, KernelEstParams(n=9), init=np.ones((5, 5)))


def test_weight_count_checked(recovery_problem):
    lr, pan, _, _ = recovery_problem
    with pytest.raises(DimensionError):
        estimate_kernel_tgv(lr, pan, [0.5, 0.5], 2, KernelEstParams(n=9))


@pytest.mark.parametrize("kw", [dict(n=4), dict(alpha1=0), dict(alpha2=-1), dict(mu2=0),
                                dict(rho=1.7), dict(rho=0), dict(th=0), dict(t_max=0),
                                dict(scale=-1)])
def test_invalid_params(kw):
    with pytest.raises(ParameterError):
        KernelEstParams(**kw).validate()


def test_rho_inside_golden_ok():
    KernelEstParams(rho=1.6).validate()


def test_with_overrides_skips_none():
    p = with_overrides(KernelEstParams(), alpha1=2.0, alpha2=None)
    assert p.alpha1 == 2.0 and p.alpha2 == KernelEstParams().alpha2


def test_grad2_constant_zero():
    np.testing.assert_array_equal(grad2(np.ones((5, 5))), 0.0)
