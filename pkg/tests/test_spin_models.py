import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wightman_models.core import on_shell_array
from wightman_models.spin_models import (compose, direct_sum, kronecker, orthogonal_conjugation, preset,
                                         report_passed, sample_shell_momenta, verify_spin_model)


def _assert_all_pass(report):
    bad = {k: v for k, v in report.items() if not v["pass"]}
    assert not bad, bad


@pytest.mark.parametrize("name,d", [("scalar", 3), ("scalar", 4), ("charged_scalar", 3),
                                    ("vector_d4", 4), ("dirac_d4", 4)])
def test_presets_satisfy_identities(name, d):
    rep = verify_spin_model(preset(name, d=d, mass=1.3), samples=40, seed=1)
    _assert_all_pass(rep)
    assert report_passed(rep)


def test_rest_frame_values():
    rest = np.array([1.0, 0, 0, 0])
    assert np.allclose(preset("vector_d4").M(rest), np.diag([0, 1, 1, 1]))
    dirac = preset("dirac_d4").M(rest)
    assert np.allclose(dirac, np.block([[np.zeros((2, 2)), np.eye(2)], [np.eye(2), np.zeros((2, 2))]]))
    assert np.allclose(preset("charged_scalar", 3).M(np.array([1.0, 0, 0])), [[0, 1], [1, 0]])


def test_polynomial_degree():
    assert preset("scalar", 3).degree() == 0
    assert preset("dirac_d4").degree() == 1
    assert preset("vector_d4").degree() == 2


def test_statistics():
    m = preset("dirac_d4")
    assert m.n_bosons == 0 and all(m.is_fermion(k) for k in range(4))
    s = direct_sum(preset("dirac_d4"), preset("scalar", 4))
    # bosons are reordered to the front
    assert s.n_bosons == 1 and not s.is_fermion(0) and s.is_fermion(1)
    assert s.n_components == 5
    _assert_all_pass(verify_spin_model(s, samples=20, seed=3))


@pytest.mark.parametrize("kwargs", [dict(name="dirac_d4", d=3), dict(name="vector_d4", d=5),
                                    dict(name="scalar", d=3, mass=0.0), dict(name="nope", d=3)])
def test_preset_rejects(kwargs):
    with pytest.raises(ValueError):
        preset(**kwargs)


def test_composition_rejects():
    with pytest.raises(ValueError):
        kronecker(preset("dirac_d4"), preset("dirac_d4"))
    with pytest.raises(ValueError):
        direct_sum(preset("scalar", 3), preset("scalar", 4))
    mixed = direct_sum(preset("scalar", 3, mass=1.0), preset("scalar", 3, mass=2.0))
    c, s = np.cos(0.3), np.sin(0.3)
    with pytest.raises(ValueError):
        orthogonal_conjugation(mixed, [[c, -s], [s, c]])
    with pytest.raises(ValueError):
        orthogonal_conjugation(preset("charged_scalar", 3), [[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(ValueError):
        compose(preset("scalar", 3), preset("scalar", 3), mode="tensor")


def test_kronecker_boson_fermion():
    m = compose(preset("charged_scalar", 4), preset("dirac_d4"), mode="kronecker")
    assert m.n_components == 8 and m.n_bosons == 0
    _assert_all_pass(verify_spin_model(m, samples=15, seed=2))


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_orthogonal_conjugation_keeps_identities(theta):
    c, s = np.cos(theta), np.sin(theta)
    m = compose(preset("charged_scalar", 3), mode="orthogonal_conjugation", O=[[c, -s], [s, c]])
    _assert_all_pass(verify_spin_model(m, samples=10, seed=0))


def test_sampled_momenta_on_shell():
    m = preset("vector_d4", mass=2.0)
    ps = sample_shell_momenta(m, 30, np.random.default_rng(0))
    assert np.allclose(ps, on_shell_array(ps[:, 1:], 2.0))
