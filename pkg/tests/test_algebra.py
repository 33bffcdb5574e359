import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from wightman_models.algebra import (FunctionSequence, GaussianPacket, TensorTerm, delta_L, dual, lsz_packet,
                                     permutation_sign, permute_term, poincare_transform, product, symmetrize,
                                     time_translate, unit)
from wightman_models.core import minkowski_dot, on_shell_array, random_lorentz
from wightman_models.spin_models import preset


def _packet(q=(0.3, -0.2), L=1.5, u=(1.0,), fermion=False, t=0.0, kind="lsz"):
    return lsz_packet(t, q, L, u, fermion=fermion, kind=kind).terms[0].factors[0]


def test_delta_L_normalised():
    val, _ = integrate.dblquad(lambda y, x: delta_L(np.array([x - 0.4, y + 0.1]), 1.7), -6, 6, -6, 6)
    assert val == pytest.approx(1.0, abs=1e-10)


def test_lsz_value_on_shell():
    q, L, t = np.array([0.3, -0.2]), 1.5, 0.7
    pk = _packet(q, L, t=t)
    sp = np.array([[0.1, 0.2], [0.5, -0.4]])
    p = on_shell_array(sp, 1.0)
    w = p[:, 0]
    expect = 2 * w * np.exp(1j * w * t) * delta_L(sp - q, L)
    assert np.allclose(pk.value(p)[:, 0], expect)


def test_packet_rejects_bad_input():
    with pytest.raises(ValueError):
        lsz_packet(0.0, (0.0, 0.0), 0.0, 1.0)
    with pytest.raises(ValueError):
        GaussianPacket(1.0, (1,), (0.0, 0.0), 1.0, shell_sign=-1, kind="lsz")
    with pytest.raises(ValueError):
        GaussianPacket(1.0, (1,), (0.0, 0.0), 1.0, kind="sharp")


def test_dual_is_involution_and_reverses_products():
    D = preset("dirac_d4").D
    f = lsz_packet(0.0, (0.1, 0.2, 0.3), 1.0, [1, 0.5j, 0, 0.2], fermion=True).scale(2 - 1j)
    g = lsz_packet(0.4, (0.0, -0.2, 0.1), 2.0, [0, 1, 1j, 0], fermion=True)
    ff = dual(dual(f, D), D)
    p = on_shell_array(np.array([[0.2, 0.1, 0.2]]), 1.0)
    assert np.allclose(ff.terms[0].factors[0].value(p), f.terms[0].factors[0].value(p))
    assert ff.terms[0].coefficient == f.terms[0].coefficient
    lhs = dual(product(f, g), D)
    rhs = product(dual(g, D), dual(f, D))
    assert lhs.equals(rhs)


def test_dual_lives_on_negative_shell():
    pk = _packet().dual(np.eye(1))
    assert pk.sign == -1
    p = on_shell_array(np.array([[0.3, -0.2]]), 1.0)
    assert np.allclose(pk.value(-p), np.conj(_packet().value(p)))


def test_unit_and_associativity():
    f, g, h = (lsz_packet(0, (k * 0.1, 0), 1.0, 1.0) for k in range(3))
    assert product(unit(), f).equals(f) and product(f, unit()).equals(f)
    assert product(product(f, g), h).equals(product(f, product(g, h)))
    assert (f + g).max_order == 1 and product(f, g).max_order == 2
    assert product(f, g).in_subalgebra_B()
    assert not dual(f, np.eye(1)).in_subalgebra_B()


def test_permutation_sign():
    assert permutation_sign([1, 0], [True, True]) == -1
    assert permutation_sign([1, 0], [True, False]) == 1
    assert permutation_sign([2, 0, 1], [True, True, True]) == 1
    assert permutation_sign([1, 0, 2], [True, False, True]) == 1
    assert permutation_sign([2, 1, 0], [True, False, True]) == -1


def test_permute_term_moves_factors():
    a, b, c = _packet((0.1, 0)), _packet((0.2, 0)), _packet((0.3, 0))
    t = permute_term(TensorTerm(1.0, (a, b, c)), [2, 0, 1])
    assert t.factors == (b, c, a)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_symmetrize_term_count(k):
    f = unit()
    for i in range(k):
        f = product(f, lsz_packet(0, (0.1 * i, 0.0), 1.0, 1.0))
    assert len(symmetrize(f).terms) == math.factorial(k)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 4), st.booleans())
def test_normalised_symmetrize_is_idempotent(k, fermion):
    f = unit()
    for i in range(k):
        f = product(f, lsz_packet(0, (0.1 * i, 0.0), 1.0 + i, 1.0, fermion=fermion))
    s = symmetrize(f, normalized=True)
    assert symmetrize(s, normalized=True).equals(s)


def test_fermion_antisymmetrisation_of_equal_packets_vanishes():
    f = lsz_packet(0, (0.1, 0.0), 1.0, 1.0, fermion=True)
    assert symmetrize(product(f, f)).terms == ()
    b = lsz_packet(0, (0.1, 0.0), 1.0, 1.0)
    assert symmetrize(product(b, b)).terms[0].coefficient == 2


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_poincare_transform_value(seed):
    model = preset("vector_d4")
    el = random_lorentz(seed, 1.0, 4)
    a = np.random.default_rng(seed).normal(size=4)
    f = lsz_packet(0.3, (0.2, -0.1, 0.4), 1.2, [0.5, 1, 0, 1j])
    pk, tp = f.terms[0].factors[0], poincare_transform(f, a, el, model.S).terms[0].factors[0]
    p = on_shell_array(np.array([[0.1, 0.3, -0.2]]), 1.0)[0]
    expect = np.exp(-1j * minkowski_dot(p, a)) * model.S(el).T @ pk.value(el.inverse_matrix @ p)
    assert np.allclose(tp.value(p), expect, atol=1e-12)


def test_poincare_transforms_compose():
    e1, e2 = random_lorentz(3, 0.8, 3), random_lorentz(4, 0.6, 3)
    a1, a2 = np.array([0.1, 0.5, -0.3]), np.array([1.0, 0.0, 0.2])
    f = lsz_packet(0.0, (0.2, 0.1), 1.0, 1.0)
    two = poincare_transform(poincare_transform(f, a1, e1), a2, e2)
    one = poincare_transform(f, a2 + e2.matrix @ a1, e2.compose(e1))
    p = on_shell_array(np.array([[0.4, -0.3], [1.0, 0.2]]), 1.0)
    assert np.allclose(two.terms[0].factors[0].value(p), one.terms[0].factors[0].value(p))
    with pytest.raises(ValueError):
        poincare_transform(f, None, type(e1)(np.diag([-1.0, -1.0, 1.0])))


def test_time_translation_shifts_lsz_time():
    f = lsz_packet(0.9, (0.2, 0.1), 1.0, 1.0)
    p = on_shell_array(np.array([[0.4, -0.3]]), 1.0)
    moved = time_translate(f, 0.5).terms[0].factors[0]
    assert np.allclose(moved.value(p), _packet((0.2, 0.1), 1.0, t=0.4).value(p))


def test_serialisation_round_trip():
    el = random_lorentz(0, 0.5, 3)
    f = poincare_transform(lsz_packet(0.2, (0.1, 0.0), 1.0, [1 + 1j], fermion=True), [0.1, 0.2, 0.0], el)
    f = product(f, dual(f, np.eye(1))).scale(0.5j)
    g = FunctionSequence.from_dict(f.to_dict())
    assert g.equals(f)
