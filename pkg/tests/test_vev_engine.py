import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from wightman_models.algebra import delta_L, dual, lsz_packet, product, unit
from wightman_models.core import on_shell_array
from wightman_models.kernels import free_kernel, generic_kernel, phi4_like
from wightman_models.phase_space import QuadOptions
from wightman_models.spin_models import preset
from wightman_models.vev_engine import (Evaluator, NilpotentSeries, VevOptions, connected_kernel,
                                        connected_matchings, energy_ordered_wick, fock_gram_oracle, gram,
                                        oracle_generator_coefficients, perfect_matchings, sesquilinear,
                                        wick_pairings)

EXACT = VevOptions(mode="exact", quad=QuadOptions(nodes_per_axis=16, max_nodes=100_000))


def _double_factorial(n):
    return math.prod(range(n, 0, -2)) if n > 0 else 1


@pytest.mark.parametrize("n", [2, 4, 6, 8])
def test_matching_counts(n):
    assert len(list(perfect_matchings(range(n)))) == _double_factorial(n - 1)
    assert len(wick_pairings(n)) == _double_factorial(n - 1)
    assert len(energy_ordered_wick(n // 2, n)) == math.factorial(n // 2)
    assert wick_pairings(n + 1) == []


def test_fermionic_wick_signs():
    signs = {p.pairs: p.sign for p in wick_pairings(4, [True] * 4)}
    assert signs[((1, 2), (3, 4))] == 1
    assert signs[((1, 3), (2, 4))] == -1
    assert signs[((1, 4), (2, 3))] == 1
    assert all(p.sign == 1 for p in wick_pairings(4))


def test_connected_matchings_drop_zero_edges():
    # with U = 0 only graphs made of cross edges survive
    assert len(connected_matchings(2, 4, phi4_like())) == 2
    assert len(connected_matchings(3, 6, phi4_like())) == 6
    assert len(connected_matchings(2, 4, generic_kernel())) == 3
    assert len(connected_matchings(1, 4, phi4_like())) == 0
    assert connected_matchings(1, 3, generic_kernel()) == []


def _config(model, k, n, rng):
    sp = rng.normal(scale=0.6, size=(n, model.d - 1))
    p = on_shell_array(sp, model.masses[0])
    p[:k] *= -1
    return p


def test_phi4_scalar_density_is_constant():
    # two cross graphs, each of weight one, times 2!2! orderings over 2!2!
    model = preset("scalar", 3)
    rng = np.random.default_rng(0)
    for c4 in (1.0, 2.5):
        val = connected_kernel(_config(model, 2, 4, rng), [0] * 4, 2, phi4_like(c4), model)
        assert val == pytest.approx((2 * math.pi) ** 3 * c4 * 2, rel=1e-13)


@pytest.mark.parametrize("name,d,k,n", [("scalar", 3, 2, 4), ("scalar", 4, 1, 4), ("charged_scalar", 3, 3, 6),
                                        ("dirac_d4", 4, 2, 4), ("vector_d4", 4, 2, 4)])
def test_kernel_matches_generator_oracle(name, d, k, n):
    model = preset(name, d=d)
    kern = generic_kernel()
    rng = np.random.default_rng(11)
    for _ in range(3):
        p = _config(model, k, n, rng)
        kap = list(rng.integers(model.n_components, size=n))
        if name == "charged_scalar":
            kap = [0, 1] * (n // 2)
        a = connected_kernel(p, kap, k, kern, model)
        b = oracle_generator_coefficients(k, n, p, kap, kern, model)
        scale = connected_kernel(p, kap, k, kern, model, absolute=True)
        assert abs(a - b) <= 1e-11 * max(scale, 1e-300)


def test_connected_kernel_validation():
    model = preset("scalar", 3)
    p = _config(model, 2, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        connected_kernel(p, [0, 0, 0], 2, phi4_like(), model)
    with pytest.raises(ValueError):
        connected_kernel(-p, [0] * 4, 2, phi4_like(), model)


def test_nilpotent_series():
    q = NilpotentSeries({0b0011: 2.0, 0b1100: 3.0})
    e = q.exp(2)
    assert e.coefficient(0b1111) == pytest.approx(6.0)
    assert e.coefficient(0) == 1.0
    assert (q * q).coefficient(0b1111) == pytest.approx(12.0)
    with pytest.raises(ValueError):
        NilpotentSeries.one().exp(2)


def test_free_pair_matches_direct_quadrature():
    model = preset("scalar", 3)
    q1, q2, L, t = np.array([0.3, 0.1]), np.array([0.0, -0.2]), 1.3, 0.6
    f = lsz_packet(0.0, q1, L, 1.0)
    g = lsz_packet(t, q2, L, 1.0)

    def integrand(y, x, part):
        w = math.sqrt(1 + x * x + y * y)
        p = np.array([x, y])
        v = 4 * w * w * delta_L(p - q1, L) * delta_L(p - q2, L) * np.exp(1j * w * t) / (2 * w)
        return v.real if part == 0 else v.imag
    ref = complex(*(integrate.dblquad(integrand, -5, 5, -5, 5, args=(k,), epsabs=1e-13)[0] for k in (0, 1)))
    rep = sesquilinear(f, g, phi4_like(), model, VevOptions(mode="exact"))
    assert rep.value == pytest.approx(ref, rel=1e-9)
    assert abs(rep.value - ref) <= 10 * rep.stat_error + 1e-12


def _states():
    a = lsz_packet(0.0, (0.2, 0.0), 1.5, 1.0)
    b = lsz_packet(0.0, (-0.3, 0.2), 1.5, 1.0)
    c = lsz_packet(0.3, (0.0, 0.4), 2.0, 1.0)
    return [unit(), a, product(a, b), product(b, c).scale(0.5j) + a, product(a, c)]


def test_free_gram_matches_fock():
    model = preset("scalar", 3)
    ev = Evaluator(model, free_kernel(), EXACT)
    st_ = _states()
    g = gram(st_, free_kernel(), model, evaluator=ev)
    assert np.allclose(g.matrix, fock_gram_oracle(st_, model, ev), rtol=1e-12, atol=1e-12)
    assert g.eigenvalues[0] > -1e-10 * g.eigenvalues[-1]


def test_form_is_hermitian_and_linear():
    model = preset("scalar", 3)
    ev = Evaluator(model, phi4_like(), EXACT)
    a = lsz_packet(0.0, (0.2, 0.0), 1.5, 1.0)
    b = lsz_packet(0.0, (-0.3, 0.2), 1.5, 1.0)
    c = lsz_packet(0.3, (0.0, 0.4), 2.0, 1.0)
    f, g1, g2 = product(a, b), product(a, c), product(b, c)
    r1, r2 = ev.inner(f, g1), ev.inner(g1, f)
    # the two orders use different integration frames; agreement within the error estimate
    assert abs(r2.value - np.conj(r1.value)) <= 3 * (r1.stat_error + r2.stat_error)
    x, y = 0.7 - 0.2j, 1.5j
    lhs = ev.inner(f, g1.scale(x) + g2.scale(y)).value
    rhs = x * r1.value + y * ev.inner(f, g2).value
    assert lhs == pytest.approx(rhs, rel=1e-12)
    # the 2-2 block actually contributes
    parts = ev.inner_parts(f, g1)
    assert abs(parts["connected"]) > 1e-6 * abs(parts["disconnected"])


def test_inner_rejects_bad_sequences():
    model = preset("scalar", 3)
    ev = Evaluator(model, phi4_like(), EXACT)
    a = lsz_packet(0.0, (0.2, 0.0), 1.5, 1.0)
    with pytest.raises(ValueError):
        ev.inner(dual(a, model.D), a)
    with pytest.raises(ValueError):
        ev.inner(a, lsz_packet(0.0, (0.2, 0.0), 1.5, [1.0, 0.0]))
    with pytest.raises(ValueError):
        ev.inner(a, lsz_packet(0.0, (0.2, 0.0), 1.5, 1.0, fermion=True))


def test_W_on_dual_product_equals_inner():
    model = preset("scalar", 3)
    ev = Evaluator(model, phi4_like(), EXACT)
    a = lsz_packet(0.0, (0.2, 0.0), 1.5, 1.0)
    b = lsz_packet(0.0, (-0.3, 0.2), 1.5, 1.0)
    f = product(a, b)
    assert ev.W(product(dual(f, model.D), f)) == pytest.approx(ev.inner(f, f).value, rel=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_one_particle_norm_positive(qx, qy):
    model = preset("dirac_d4")
    f = lsz_packet(0.0, (qx, qy, 0.1), 1.0, [0, 0, 1.0, 0.3j], fermion=True)
    assert sesquilinear(f, f, generic_kernel(), model, EXACT).value.real > 0
