import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wightman_models.core import minkowski_dot, on_shell_array, random_lorentz
from wightman_models.kernels import (AnalyticB, B_matrix_quadrature, InteractionKernel, beta_coefficients,
                                     check_multiplier_bound, evaluate_B, free_kernel, generic_kernel, hankel_psd,
                                     moments, phi4_like, radial_B_scalar_oracle, rest_boost, shell_laplace_scalar,
                                     sphere_rule)
from wightman_models.spin_models import preset


def test_moments_and_scaling():
    k = InteractionKernel(sigma_atoms=((2.0, 1.0), (1.0, 0.5)))
    assert np.allclose(moments(k, 3), [3.0, 2.5, 2.25, 2.125])
    assert np.allclose(moments(k.scaled(2.0), 3), 2 * moments(k, 3))
    assert phi4_like(3.0).c(4) == 3.0
    assert moments(free_kernel(), 4) == pytest.approx(np.zeros(5))
    assert hankel_psd(generic_kernel()) >= 0


def test_beta_normalisation_and_index():
    k = generic_kernel()
    assert k.beta(2) == pytest.approx(1.0)
    b = beta_coefficients(k, 5)
    assert len(b) == 5 and b[1] == pytest.approx(1.0)
    # result9: i + j - k;  sum2: reversed out position
    assert k.beta_index(1, 3, 2) == 2
    k2 = InteractionKernel(beta_convention="sum2")
    assert k2.beta_index(1, 3, 2) == 3
    with pytest.raises(ValueError):
        beta_coefficients(k, 1)


@pytest.mark.parametrize("kwargs", [dict(sigma_atoms=((-1.0, 1.0),)), dict(mu1_atoms=((1.0, 0.0),)),
                                    dict(a=-0.1), dict(beta_atoms=((0.0, 0.0),)),
                                    dict(beta_convention="other"), dict(beta_atoms=((1.0, -1.0),))])
def test_kernel_validation(kwargs):
    with pytest.raises(ValueError):
        InteractionKernel(**kwargs)


def test_U_and_Upsilon_polynomials():
    k = generic_kernel()
    assert k.U_n(3, 2.0) == pytest.approx(0.15 + 0.05 * 2.0)
    assert k.U_n(9, 2.0) == 0 and k.U_is_zero(9) and not k.U_is_zero(1)
    assert k.Upsilon(3.0) == pytest.approx(1.6)


@pytest.mark.parametrize("d", [3, 4, 5])
@pytest.mark.parametrize("E,lam", [(2.0, 1.0), (3.5, 0.8), (2.2, 4.0)])
def test_shell_transform_matches_radial_integral(d, E, lam):
    got = shell_laplace_scalar(E, math.sqrt(lam), d)
    assert got == pytest.approx(radial_B_scalar_oracle(E, lam, d), rel=1e-10)


def test_shell_transform_d3_elementary():
    # in two space dimensions the transform is pi exp(-mu E)/E
    E, mu = 2.7, 0.9
    assert shell_laplace_scalar(E, mu, 3) == pytest.approx(math.pi * math.exp(-mu * E) / E, rel=1e-13)


def test_sphere_rule_moments():
    nodes, w = sphere_rule(3, 4)
    assert w.sum() == pytest.approx(4 * math.pi)
    assert np.sum(w * nodes[:, 0] ** 2) == pytest.approx(4 * math.pi / 3)
    assert np.sum(w * nodes[:, 1] ** 4) == pytest.approx(4 * math.pi / 5)
    nodes, w = sphere_rule(2, 4)
    assert np.sum(w * nodes[:, 0] ** 2) == pytest.approx(math.pi)


def test_rest_boost():
    p = np.array([3.0, 1.0, -0.5, 0.7])
    lam = rest_boost(p)
    E = math.sqrt(minkowski_dot(p, p))
    assert np.allclose(lam @ np.array([E, 0, 0, 0]), p)


@pytest.mark.parametrize("name,d", [("scalar", 3), ("charged_scalar", 3), ("vector_d4", 4), ("dirac_d4", 4)])
def test_analytic_B_matches_quadrature(name, d):
    model = preset(name, d=d)
    k = generic_kernel()
    B = AnalyticB(k, model)
    rng = np.random.default_rng(5)
    for _ in range(4):
        p = on_shell_array(rng.normal(size=d - 1), 1.0) + on_shell_array(rng.normal(size=d - 1), 1.0)
        ref, err = B_matrix_quadrature(p, k, model)
        assert err < 1e-10
        assert np.allclose(B(p), ref, rtol=1e-9, atol=1e-11)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_B_is_covariant(seed):
    rng = np.random.default_rng(seed)
    for name in ("vector_d4", "dirac_d4"):
        model = preset(name)
        B = AnalyticB(generic_kernel(), model)
        p = on_shell_array(rng.normal(size=3), 1.0) + on_shell_array(rng.normal(size=3), 1.0)
        el = random_lorentz(seed, 1.0, 4)
        S = model.S(el)
        lhs = S @ B(p) @ S.T
        rhs = B(el.inverse_matrix @ p)
        assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-10 * np.abs(rhs).max())


def test_B_threshold_and_constant_part():
    model = preset("scalar", 3)
    with pytest.raises(ValueError):
        evaluate_B(np.array([1.5, 0.0, 0.0]), 0, 0, generic_kernel(), model)
    val, _ = evaluate_B(np.array([2.5, 0.0, 0.0]), 0, 0, phi4_like(), model)
    assert val == pytest.approx(1.0)


def test_multiplier_bound():
    model = preset("scalar", 3)
    assert check_multiplier_bound(generic_kernel(), model)["pass"]
    assert check_multiplier_bound(generic_kernel(), model, density=lambda x: np.exp(-x))["pass"]
    grow = check_multiplier_bound(generic_kernel(), model, density=lambda x: np.exp(3 * np.sqrt(x)))
    assert not grow["pass"]
