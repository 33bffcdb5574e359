import math

import numpy as np
import pytest

from wightman_models.core import omega
from wightman_models.kernels import generic_kernel, phi4_like
from wightman_models.phase_space import QuadOptions
from wightman_models.physics_checks import (CheckResult, ScatteringSetup, check_appendix_a, check_dual_path,
                                            check_free_reduction, check_locality_kernel, check_poincare_invariance,
                                            check_spectral_support, check_time_independence,
                                            closed_form_amplitude, cluster_decay, cm_kinematics, default_states,
                                            make_packet, overlap_density, scattering_amplitude, species_pol, state,
                                            two_point)
from wightman_models.spin_models import direct_sum, preset
from wightman_models.vev_engine import Evaluator, VevOptions


@pytest.fixture(scope="module")
def scalar():
    return preset("scalar", 3)


def test_check_result_dict():
    r = CheckResult("x", True, 1e-3, 1e-2, {"a": 1})
    assert r.to_dict() == {"name": "x", "pass": True, "residual": 1e-3, "tolerance": 1e-2, "details": {"a": 1}}


def test_default_states_are_positive_energy(scalar):
    st_ = default_states(scalar)
    assert len(st_) == 6 and all(s.in_subalgebra_B() for s in st_)
    assert [s.max_order for s in st_] == [0, 1, 1, 2, 2, 2]


def test_species_pol_respects_statistics():
    m = direct_sum(preset("scalar", 4), preset("dirac_d4"))
    u = species_pol(m, 2, np.random.default_rng(0))
    assert u[0] == 0 and np.linalg.norm(u) == pytest.approx(1.0)


def test_poincare_invariance_scalar(scalar):
    st_ = default_states(scalar)
    res = check_poincare_invariance(st_[3], st_[4], scalar, phi4_like(), trials=2)
    assert res.passed, res.details
    assert res.residual < 1e-10
    assert "lab_frame" in res.details


def test_spectral_support(scalar):
    res = check_spectral_support(scalar, generic_kernel())
    assert res.passed, res.details


def test_two_point_is_norm_on_dual_and_zero_otherwise(scalar):
    pk = make_packet(scalar, (0.2, 0.1), 1.5)
    norm = Evaluator(scalar, phi4_like(), VevOptions(mode="exact")).inner(state(pk), state(pk)).value
    assert norm.real > 0
    assert two_point(pk.dual(scalar.D), pk, scalar) == pytest.approx(norm, rel=1e-10)
    # both factors on the positive sheet: no support
    assert two_point(pk, pk, scalar) == 0


@pytest.mark.parametrize("model", [preset("scalar", 3), preset("dirac_d4"),
                                   direct_sum(preset("scalar", 4), preset("dirac_d4"))],
                         ids=["scalar", "dirac", "mixed"])
def test_locality_kernel(model):
    res = check_locality_kernel(model, generic_kernel(), n=4, trials=6, smeared=False)
    assert res.passed, res.details
    # fermion pairs must actually pick up the sign
    if model.n_bosons < model.n_components:
        assert any(row["sigma"] == -1 for row in res.details["trials"]) or model.n_bosons > 0


def test_locality_rejects_odd_n(scalar):
    with pytest.raises(ValueError):
        check_locality_kernel(scalar, phi4_like(), n=3)


def test_time_independence(scalar):
    st_ = default_states(scalar)
    res = check_time_independence(st_[1], st_[2], scalar, phi4_like(), ts=(0.0, 2.0))
    assert res.passed, res.details


def test_connected_part_is_linear_in_c4(scalar):
    st_ = default_states(scalar)
    opts = VevOptions(mode="exact")
    p1 = Evaluator(scalar, phi4_like(1.0), opts).inner_parts(st_[3], st_[4], 0.0)
    p2 = Evaluator(scalar, phi4_like(2.0), opts).inner_parts(st_[3], st_[4], 0.0)
    assert p2["connected"] == pytest.approx(2 * p1["connected"], rel=1e-12)
    assert p2["disconnected"] == pytest.approx(p1["disconnected"], rel=1e-12)


def test_cluster_requires_spacelike(scalar):
    st_ = default_states(scalar)
    with pytest.raises(ValueError):
        cluster_decay(st_[3], st_[4], [1.0, 0.0, 0.0], scalar, phi4_like())


def test_cluster_connected_part_falls(scalar):
    st_ = default_states(scalar)
    opts = VevOptions(mode="exact", quad=QuadOptions(method="mc", mc_samples=1 << 14))
    _, rows = cluster_decay(st_[3], st_[4], [0.0, 1.0, 0.0], scalar, phi4_like(), rs=[0.0, 20.0, 40.0],
                            options=opts)
    conn = [r["connected"] for r in rows]
    assert conn[0] > conn[1] > conn[2]
    assert rows[-1]["disconnected"] > 0.1 * rows[0]["disconnected"]


def _overlap_oracle(qs, signs, masses, L, eta, d):
    # density at 0 of the linear map x -> (sum s x, sum s v.x + eta xi)
    sd = d - 1
    n = len(qs)
    A = np.zeros((d, n * sd + 1))
    for i, (q, s, m) in enumerate(zip(qs, signs, masses)):
        A[:sd, i * sd:(i + 1) * sd] = s * np.eye(sd)
        A[sd, i * sd:(i + 1) * sd] = s * np.asarray(q) / omega(m, np.asarray(q))
    A[sd, -1] = 1.0
    cov_in = np.diag([1 / (2 * L**2)] * (n * sd) + [eta**2])
    C = A @ cov_in @ A.T
    return (2 * math.pi) ** (-d / 2) / math.sqrt(np.linalg.det(C))


@pytest.mark.parametrize("eta", [0.0, 0.3])
def test_overlap_density_closed_form(eta):
    out_q, in_q = cm_kinematics(1.0, 1.2)
    qs = list(out_q) + list(in_q)
    for L in (2.0, 8.0):
        got = overlap_density(qs, [1.0] * 4, L, eta, 3)
        assert got == pytest.approx(_overlap_oracle(qs, [1, 1, -1, -1], [1.0] * 4, L, eta, 3), rel=1e-12)


def test_cm_kinematics_conserve():
    out_q, in_q = cm_kinematics(0.8, 2.0, d=4)
    assert np.allclose(np.sum(out_q, axis=0), np.sum(in_q, axis=0))
    assert sum(omega(1.0, q) for q in out_q) == pytest.approx(sum(omega(1.0, q) for q in in_q))


def test_scattering_rejects_bad_kinematics(scalar):
    out_q, in_q = cm_kinematics(1.0, 0.0)
    with pytest.raises(ValueError):
        scattering_amplitude(ScatteringSetup(out_q, in_q), scalar, phi4_like())
    with pytest.raises(ValueError):
        closed_form_amplitude(ScatteringSetup(out_q, [np.array([0.5, 0.0]), np.array([-0.4, 0.0])]),
                              scalar, phi4_like(), 4.0)


def test_scattering_ratio_approaches_one(scalar):
    setup = ScatteringSetup(*cm_kinematics(1.0, 1.0), L_schedule=(4.0, 8.0),
                            quad=QuadOptions(max_nodes=300_000, nodes_per_axis=24))
    _, rows = scattering_amplitude(setup, scalar, phi4_like())
    dev = [abs(r["ratio"] - 1) for r in rows]
    assert dev[1] < dev[0] < 0.05


def test_dual_path_small():
    res, rows = check_dual_path(preset("dirac_d4"), generic_kernel(), cases=((4, 2), (6, 3)), configs=2)
    assert res.passed and len(rows) == 4


def test_free_reduction_small(scalar):
    res, _ = check_free_reduction(scalar, grams=2, size=3)
    assert res.passed, res.details
    assert res.details["pairing_counts"] == {1: 1, 2: 2, 3: 6, 4: 24}


def test_appendix_a():
    res, rows = check_appendix_a(mass_sets=20)
    assert res.passed
    assert any(r["exists"] for r in rows) and not all(r["exists"] for r in rows)
