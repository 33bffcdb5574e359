import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from wightman_models.algebra import delta_L
from wightman_models.phase_space import (EvalReport, QuadOptions, ShellSystem, gaussian_integrate, nascent_delta,
                                         radial_closed_form, radial_convergence_study, richardson, shell_integrate,
                                         singular_configuration, summability_exponent)


def two_body_oracle(s: float, mass: float = 1.0, eta: float = 1e-3) -> float:
    """Two equal-mass particles in two space dimensions, delta resolved numerically."""
    def f(p):
        w = math.sqrt(mass**2 + p * p)
        return 2 * math.pi * p / (4 * w * w) * nascent_delta(math.sqrt(s) - 2 * w, eta)
    p0 = math.sqrt(s / 4 - mass**2)
    val, _ = integrate.quad(f, 0, 3 * p0, points=[p0], limit=400, epsabs=0, epsrel=1e-12)
    return val


def test_two_body_closed_form_against_quadrature():
    for s in (9.0, 16.0):
        assert two_body_oracle(s) == pytest.approx(math.pi / (2 * math.sqrt(s)), rel=1e-5)


def _decay_setup(L=1.5, q=(0.3, -0.2)):
    q = np.array(q)

    def f(P):
        # undo the 1/(2 omega) of the decaying momentum, leaving a normalised packet
        return 2 * P[..., 0, 0] * delta_L(P[..., 0, 1:] - q, L)
    gm = [q, -q / 2, -q / 2]
    gp = [2 * L**2 * np.eye(2), 0.5 * np.eye(2), 0.5 * np.eye(2)]
    return f, gm, gp


def test_exact_surface_integral_two_body():
    # invariant phase space only depends on P^2 = 9, so the packet integrates out
    f, gm, gp = _decay_setup()
    rep = shell_integrate(f, (3.0, 1.0, 1.0), (1, -1, -1), 3, gm, gp, QuadOptions(mode="exact"))
    assert isinstance(rep, EvalReport)
    assert rep.value.real == pytest.approx(math.pi / 6, rel=1e-10)
    assert rep.stat_error < 1e-9


def test_regulated_mode_converges():
    f, gm, gp = _decay_setup()
    etas = [0.4, 0.2, 0.1]
    vals = [shell_integrate(f, (3.0, 1.0, 1.0), (1, -1, -1), 3, gm, gp,
                            QuadOptions(mode="gaussian", eta=e)).value for e in etas]
    errs = [abs(v - math.pi / 6) for v in vals]
    assert errs[0] > errs[1] > errs[2]
    best, _ = richardson(vals, etas)
    assert abs(best - math.pi / 6) < errs[-1]


def test_same_sign_support_is_empty():
    f, gm, gp = _decay_setup()
    rep = shell_integrate(f, (3.0, 1.0, 1.0), (1, 1, 1), 3, gm, gp)
    assert rep.value == 0 and rep.method == "empty_support"
    with pytest.raises(ValueError):
        shell_integrate(f, (3.0, 1.0, 1.0), (1, -1, -1), 3, gm, gp, QuadOptions(mode="boxcar"))


def test_shell_system_conserves_momentum():
    sys_ = ShellSystem((1.0, 2.0, 1.5, 1.0), (1, 1, -1, -1), 4)
    y = np.random.default_rng(0).normal(size=(5, sys_.dim))
    sp = sys_.spatial(y)
    assert np.allclose(np.einsum("j,njk->nk", sys_.signs, sp), 0)


@pytest.mark.parametrize("kind", ["gaussian", "sinc"])
def test_nascent_delta_normalised(kind):
    eta = 0.3
    if kind == "gaussian":
        val, _ = integrate.quad(lambda x: nascent_delta(x, eta, kind), -np.inf, np.inf)
    else:
        # slowly decaying tail: truncated integral is off by O(eta / X)
        val, _ = integrate.quad(lambda x: nascent_delta(x, eta, kind), -300, 300, limit=5000)
    assert val == pytest.approx(1.0, rel=1e-3)
    assert nascent_delta(0.0, eta, "sinc") == pytest.approx(1 / (math.pi * eta))
    with pytest.raises(ValueError):
        nascent_delta(0.0, eta, "box")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_gaussian_integrate_moments(seed, dim):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim))
    Q = a @ a.T + dim * np.eye(dim)
    m = rng.normal(size=dim)
    c = rng.normal(size=dim)

    def integrand(y):
        r = y - m
        return (1 + r @ c) ** 2 * np.exp(-0.5 * np.einsum("...i,ij,...j->...", r, Q, r))
    # exact: (2 pi)^{dim/2} det(Q)^{-1/2} (1 + c Q^{-1} c)
    expect = (2 * math.pi) ** (dim / 2) / math.sqrt(np.linalg.det(Q)) * (1 + c @ np.linalg.solve(Q, c))
    # matched proposal: the ratio is a quadratic, integrated exactly
    rep = gaussian_integrate(integrand, m, Q, QuadOptions(nodes_per_axis=8, widen=1.0))
    assert rep.value.real == pytest.approx(expect, rel=1e-10)


def test_gaussian_integrate_degenerate_precision_is_rotation_free():
    # isotropic precision: result must not depend on grid orientation
    iso = 4.0 * np.eye(3)
    rep = gaussian_integrate(lambda y: np.exp(-2 * np.sum(y**2, axis=-1)) * y[..., 0] ** 2, np.zeros(3), iso)
    expect = (math.pi / 2) ** 1.5 / 4
    assert rep.value.real == pytest.approx(expect, rel=1e-10)


def test_richardson_removes_even_powers():
    etas = [0.4, 0.2, 0.1, 0.05]
    vals = [1 + 3 * e**2 + 2 * e**4 for e in etas]
    best, err = richardson(vals, etas)
    assert best == pytest.approx(1.0, abs=1e-13)
    assert richardson([2.0], [0.1]) == (2.0, 0.0)


def test_singular_configurations():
    sc = singular_configuration((1.0, 1.0, 2.0), (1, 1, -1))
    assert sc.exists and sc.gradient_norm < 1e-12 and abs(sc.energy_residual) < 1e-12
    assert not singular_configuration((1.0, 1.0, 3.0), (1, 1, -1)).exists
    with pytest.raises(ValueError):
        singular_configuration((1.0, 1.0), (1, 1))


@pytest.mark.parametrize("d,n", [(2, 4), (3, 4), (4, 4), (3, 6), (4, 6)])
def test_summability_exponent(d, n):
    # delta of a quadratic in k transverse directions leaves r^(k-3) dr
    k = (n - 2) * (d - 1)
    res = summability_exponent(d, n)
    assert res["exponent"] == k - 3
    assert res["integrable"] == (k - 3 > -1)


def test_radial_convergence():
    st_ = radial_convergence_study(3, 4, [1e-1, 1e-2, 1e-3])
    assert st_["max_closed_form_error"] < 1e-12
    assert radial_closed_form(-1, 1e-3) == pytest.approx(math.log(1e3))
    with pytest.raises(ValueError):
        radial_convergence_study(3, 4, [1e-2, 1e-1])
    with pytest.raises(ValueError):
        summability_exponent(3, 5)
