import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wightman_models.core import (LorentzElement, MomentumVector, Species, boost_matrix, identity_lorentz,
                                  in_forward_cone, lorentz_from_sl2, metric, minkowski_dot, omega, on_shell,
                                  on_shell_array, random_lorentz)

seeds = st.integers(0, 2**31 - 1)


def test_metric_signature():
    g = metric(4)
    assert np.allclose(np.diag(g), [1, -1, -1, -1])


def test_minkowski_dot_known():
    assert minkowski_dot([2.0, 1.0, 0.0], [3.0, 0.5, 4.0]) == pytest.approx(5.5)
    with pytest.raises(ValueError):
        minkowski_dot([1.0, 0, 0], [1.0, 0, 0, 0])


def test_on_shell_mass():
    p = on_shell([0.3, -0.4, 1.2], Species(1, 2.0, 1))
    assert minkowski_dot(p, p) == pytest.approx(4.0)
    assert on_shell([0.3, 0.4], 1.0, sign=-1).energy == pytest.approx(-omega(1.0, [0.3, 0.4]))
    arr = on_shell_array(np.zeros((5, 3)), 1.5)
    assert np.allclose(arr[:, 0], 1.5)


def test_momentum_and_species_validation():
    with pytest.raises(ValueError):
        MomentumVector((1.0, 0.0))
    with pytest.raises(ValueError):
        MomentumVector((1.0, np.nan, 0.0))
    with pytest.raises(ValueError):
        Species(1, -1.0, 1)
    assert Species(2, 1.0, 1).is_fermion and not Species(1, 1.0, 1).is_fermion
    s = MomentumVector((1, 2, 3)) + MomentumVector((1, 1, 1))
    assert s.components == (2.0, 3.0, 4.0)


def test_forward_cone():
    assert in_forward_cone([1.0, 0.5, 0.0])
    assert not in_forward_cone([1.0, 1.5, 0.0])
    assert not in_forward_cone([-1.0, 0.0, 0.0])


def test_lorentz_element_rejects_bad_matrices():
    with pytest.raises(ValueError):
        LorentzElement(np.diag([1.0, 2.0, 1.0]))
    with pytest.raises(ValueError):
        LorentzElement(np.diag([-1.0, 1.0, 1.0]))    # time reversal


@settings(max_examples=30, deadline=None)
@given(seeds, st.sampled_from([3, 4, 5]), st.floats(0.0, 2.5))
def test_random_lorentz_is_proper_orthochronous(seed, d, chi):
    el = random_lorentz(seed, chi, d=d)
    assert el.metric_residual() < 1e-10
    assert el.matrix[0, 0] >= 1.0 - 1e-12
    assert np.linalg.det(el.matrix) == pytest.approx(1.0, abs=1e-9)
    assert el.params["rapidity"] <= chi + 1e-15


@settings(max_examples=30, deadline=None)
@given(seeds, st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_dot_is_invariant(seed, p, q):
    el = random_lorentz(seed, 1.5, d=3)
    a, b = np.array(p), np.array(q)
    lhs = minkowski_dot(el.matrix @ a, el.matrix @ b)
    assert lhs == pytest.approx(minkowski_dot(a, b), abs=1e-9 * (1 + np.abs(a).max() * np.abs(b).max()) * 50)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_sl2_partner_is_inverse_image(seed):
    # the stored partner maps to Lambda^{-1}
    el = random_lorentz(seed, 1.2, d=4)
    assert np.allclose(lorentz_from_sl2(el.sl2), el.inverse_matrix, atol=1e-10)


def test_compose_and_inverse():
    a, b = random_lorentz(1, 1.0), random_lorentz(2, 0.7)
    c = a.compose(b)
    assert np.allclose(c.matrix, a.matrix @ b.matrix)
    assert np.allclose(lorentz_from_sl2(c.sl2), c.inverse_matrix, atol=1e-10)
    assert np.allclose(a.compose(a.inverse()).matrix, np.eye(4), atol=1e-12)
    assert np.allclose(identity_lorentz(4).matrix, np.eye(4))


def test_boost_rapidity_adds():
    assert np.allclose(boost_matrix(3, 0.3) @ boost_matrix(3, 0.5), boost_matrix(3, 0.8))
