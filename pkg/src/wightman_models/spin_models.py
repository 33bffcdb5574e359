"""Spin content of a field: the matrices M(p), D, S(A), C(p).

M(p) entries are stored as sympy polynomials in (E, p_1, ..., p_{d-1}) and
compiled to numpy for evaluation.  S acts on LorentzElements; the convention
is S(A) M(p) S(A)^T = M(Lambda^{-1} p).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from .core import LorentzElement, Species, on_shell_array, pauli_matrix, random_lorentz

PRESETS = ("scalar", "charged_scalar", "vector_d4", "dirac_d4")


def momentum_symbols(d: int):
    return sp.symbols("E " + " ".join(f"p{i}" for i in range(1, d)), real=True)


@dataclass(frozen=True, eq=False)
class SpinModel:
    name: str
    d: int
    masses: tuple  # per component
    n_bosons: int
    M_sym: sp.Matrix
    D: np.ndarray
    S: Callable[[LorentzElement], np.ndarray]
    C: Callable[[np.ndarray], np.ndarray]
    S_phi: Callable[[float], np.ndarray] | None = None
    c_excluded: Callable[[np.ndarray], bool] | None = None
    _M_funcs: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.d < 3:
            raise ValueError("dimension must be >= 3")
        n = len(self.masses)
        if self.M_sym.shape != (n, n) or self.D.shape != (n, n):
            raise ValueError("matrix sizes do not match the number of components")
        if not 0 <= self.n_bosons <= n:
            raise ValueError("need 0 <= N_b <= N_c")
        syms = momentum_symbols(self.d)
        funcs = [[sp.lambdify(syms, self.M_sym[i, j], "numpy") for j in range(n)] for i in range(n)]
        object.__setattr__(self, "_M_funcs", funcs)
        object.__setattr__(self, "D", np.asarray(self.D, dtype=complex))

    @property
    def n_components(self) -> int:
        return len(self.masses)

    @property
    def species(self) -> list:
        return [Species(k + 1, m, self.n_bosons) for k, m in enumerate(self.masses)]

    def is_fermion(self, k: int) -> bool:
        """Zero-based component index."""
        return k >= self.n_bosons

    def degree(self) -> int:
        syms = momentum_symbols(self.d)
        deg = 0
        for e in self.M_sym:
            if e != 0:
                deg = max(deg, sp.Poly(e, *syms).total_degree())
        return deg

    def M(self, p) -> np.ndarray:
        """M(p) for p of shape (..., d); returns (..., N, N)."""
        p = np.asarray(p, dtype=float)
        n = self.n_components
        out = np.empty(p.shape[:-1] + (n, n), dtype=complex)
        args = [p[..., i] for i in range(self.d)]
        for i in range(n):
            for j in range(n):
                out[..., i, j] = self._M_funcs[i][j](*args)
        return out

    def DM(self, p) -> np.ndarray:
        return self.D @ self.M(p)

    def with_D(self, D) -> "SpinModel":
        return SpinModel(self.name, self.d, self.masses, self.n_bosons, self.M_sym,
                         np.asarray(D, dtype=complex), self.S, self.C, self.S_phi, self.c_excluded)


# presets ------------------------------------------------------------------

def _scalar(d: int, mass: float) -> SpinModel:
    return SpinModel("scalar", d, (mass,), 1, sp.Matrix([[1]]), np.eye(1),
                     lambda el: np.eye(1, dtype=complex),
                     lambda p: np.ones(np.shape(p)[:-1] + (1, 1), dtype=complex),
                     lambda phi: np.eye(1, dtype=complex))


def _charged_scalar(d: int, mass: float) -> SpinModel:
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    # DM = 1, so C = 1.
    return SpinModel("charged_scalar", d, (mass, mass), 2, sp.Matrix([[0, 1], [1, 0]]), x,
                     lambda el: np.eye(2, dtype=complex),
                     lambda p: np.broadcast_to(np.eye(2, dtype=complex), np.shape(p)[:-1] + (2, 2)).copy(),
                     lambda phi: np.diag([np.exp(1j * phi), np.exp(-1j * phi)]))


def _vector_cstar_unit(p: np.ndarray) -> np.ndarray:
    """Printed lower-triangular C*(p) for m = 1."""
    p = np.asarray(p, dtype=float)
    e, px, py, pz = (p[..., i] for i in range(4))
    a = np.sqrt(e**2 - 1)
    r = np.sqrt(py**2 + pz**2)
    out = np.zeros(p.shape[:-1] + (4, 4), dtype=complex)
    out[..., 0, 0] = a
    out[..., 1, 0] = px * e / a
    out[..., 2, 0] = py * e / a
    out[..., 3, 0] = pz * e / a
    out[..., 1, 1] = r / a
    out[..., 2, 1] = -px * py / (r * a)
    out[..., 3, 1] = -px * pz / (r * a)
    out[..., 2, 2] = pz / r
    out[..., 3, 2] = -py / r
    return out


def _vector_d4(mass: float) -> SpinModel:
    syms = momentum_symbols(4)
    g = sp.diag(1, -1, -1, -1)
    m2 = sp.nsimplify(mass) ** 2
    M = sp.Matrix(4, 4, lambda j, k: syms[j] * syms[k] / m2 - g[j, k])

    def C(p):
        # M(p) = M_{m=1}(p/m), so rescale before applying the printed factor.
        cstar = _vector_cstar_unit(np.asarray(p, dtype=float) / mass)
        return np.conj(np.swapaxes(cstar, -1, -2))

    def excluded(p):
        p = np.asarray(p) / mass
        return bool(p[0] ** 2 - 1 < 1e-6 or p[2] ** 2 + p[3] ** 2 < 1e-10)

    # The stored matrix is Lambda^{-1} so that S M(p) S^T = M(Lambda^{-1} p).
    return SpinModel("vector_d4", 4, (mass,) * 4, 4, M, np.eye(4),
                     lambda el: el.inverse_matrix.astype(complex), C, None, excluded)


def dirac_c(p: np.ndarray, mass: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    e, px, py, pz = (p[..., i] for i in range(4))
    s = np.sqrt(e + pz)
    c = np.zeros(p.shape[:-1] + (2, 2), dtype=complex)
    c[..., 0, 0] = s
    c[..., 0, 1] = (px + 1j * py) / s
    c[..., 1, 1] = mass / s
    return c


def _dirac_d4(mass: float) -> SpinModel:
    E, px, py, pz = momentum_symbols(4)
    P = sp.Matrix([[E + pz, px - sp.I * py], [px + sp.I * py, E - pz]])
    z = sp.zeros(2, 2)
    M = sp.Matrix(sp.BlockMatrix([[z, P], [P.T, z]]))
    one = np.eye(2)
    D = np.block([[0 * one, one], [one, 0 * one]])

    def S(el: LorentzElement):
        if el.sl2 is None:
            raise ValueError("spin-1/2 preset needs the SL(2) element of the Lorentz transform")
        a = el.sl2
        return np.block([[a, np.zeros((2, 2))], [np.zeros((2, 2)), np.conj(a)]])

    def C(p):
        # diag(c, conj c) so that C*C = diag(c^dag c, c^T conj c) = D M(p).
        c = dirac_c(p, mass)
        out = np.zeros(c.shape[:-2] + (4, 4), dtype=complex)
        out[..., :2, :2] = c
        out[..., 2:, 2:] = np.conj(c)
        return out

    def S_phi(phi):
        ph = np.exp(1j * phi)
        return np.diag([ph, ph, np.conj(ph), np.conj(ph)])

    def excluded(p):
        return bool(p[0] + p[3] < 1e-8)

    return SpinModel("dirac_d4", 4, (mass,) * 4, 0, M, D, S, C, S_phi, excluded)


def preset(name: str, d: int = 4, mass: float = 1.0) -> SpinModel:
    if name not in PRESETS:
        raise ValueError(f"unknown spin model preset {name!r}; choose from {PRESETS}")
    if name in ("vector_d4", "dirac_d4") and d != 4:
        raise ValueError(f"{name} requires d=4, got d={d}")
    if not mass > 0:
        raise ValueError("mass must be positive")
    if name == "scalar":
        return _scalar(d, mass)
    if name == "charged_scalar":
        return _charged_scalar(d, mass)
    if name == "vector_d4":
        return _vector_d4(mass)
    return _dirac_d4(mass)


# composition --------------------------------------------------------------

def _block_diag(a, b):
    a, b = np.asarray(a), np.asarray(b)
    shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    n1, n2 = a.shape[-1], b.shape[-1]
    out = np.zeros(shape + (n1 + n2, n1 + n2), dtype=complex)
    out[..., :n1, :n1] = a
    out[..., n1:, n1:] = b
    return out


def _permute(mat, perm):
    return mat[..., perm, :][..., :, perm]


def direct_sum(m1: SpinModel, m2: SpinModel) -> SpinModel:
    if m1.d != m2.d:
        raise ValueError("dimension mismatch in composition")
    n1, n2 = m1.n_components, m2.n_components
    # bosons of both blocks first, then fermions
    order = ([k for k in range(m1.n_bosons)] + [n1 + k for k in range(m2.n_bosons)]
             + [k for k in range(m1.n_bosons, n1)] + [n1 + k for k in range(m2.n_bosons, n2)])
    perm = np.array(order)
    M = sp.diag(m1.M_sym, m2.M_sym)
    M = M.extract(order, order)
    masses = tuple((m1.masses + m2.masses)[k] for k in order)
    D = _permute(_block_diag(m1.D, m2.D), perm)

    def S(el):
        return _permute(_block_diag(m1.S(el), m2.S(el)), perm)

    def C(p):
        return _permute(_block_diag(m1.C(p), m2.C(p)), perm)

    S_phi = None
    if m1.S_phi is not None or m2.S_phi is not None:
        def S_phi(phi):
            a = m1.S_phi(phi) if m1.S_phi else np.eye(n1)
            b = m2.S_phi(phi) if m2.S_phi else np.eye(n2)
            return _permute(_block_diag(a, b), perm)

    def excluded(p):
        return any(m.c_excluded is not None and m.c_excluded(p) for m in (m1, m2))

    return SpinModel(f"({m1.name}+{m2.name})", m1.d, masses, m1.n_bosons + m2.n_bosons,
                     M, D, S, C, S_phi, excluded)


def kronecker(m1: SpinModel, m2: SpinModel) -> SpinModel:
    if m1.d != m2.d:
        raise ValueError("dimension mismatch in composition")
    for m in (m1, m2):
        if 0 < m.n_bosons < m.n_components:
            raise ValueError("kronecker factors must each have a single statistics")
    f1 = m1.n_bosons == 0
    f2 = m2.n_bosons == 0
    if f1 and f2:
        raise ValueError("kronecker product of two fermionic blocks is not supported: "
                         "composite statistics are not defined")
    masses = set(m1.masses) | set(m2.masses)
    if len(masses) != 1:
        raise ValueError("kronecker factors must share a single mass")
    mass = masses.pop()
    n = m1.n_components * m2.n_components
    M = sp.kronecker_product(m1.M_sym, m2.M_sym)

    def kron(a, b):
        a, b = np.asarray(a), np.asarray(b)
        out = np.einsum("...ij,...kl->...ikjl", a, b)
        return out.reshape(out.shape[:-4] + (n, n))

    S_phi = None
    if m1.S_phi is not None or m2.S_phi is not None:
        def S_phi(phi):
            a = m1.S_phi(phi) if m1.S_phi else np.eye(m1.n_components)
            b = m2.S_phi(phi) if m2.S_phi else np.eye(m2.n_components)
            return kron(a, b)

    def excluded(p):
        return any(m.c_excluded is not None and m.c_excluded(p) for m in (m1, m2))

    return SpinModel(f"({m1.name}x{m2.name})", m1.d, (mass,) * n, 0 if (f1 or f2) else n,
                     M, kron(m1.D, m2.D), lambda el: kron(m1.S(el), m2.S(el)),
                     lambda p: kron(m1.C(p), m2.C(p)), S_phi, excluded)


def orthogonal_conjugation(model: SpinModel, O) -> SpinModel:
    O = np.asarray(O, dtype=float)
    n = model.n_components
    if O.shape != (n, n) or np.max(np.abs(O @ O.T - np.eye(n))) > 1e-12:
        raise ValueError("O must be a real orthogonal matrix of matching size")
    nb = model.n_bosons
    if np.any(np.abs(O[:nb, nb:]) > 1e-14) or np.any(np.abs(O[nb:, :nb]) > 1e-14):
        raise ValueError("O must not mix bosonic and fermionic components")
    ms = np.array(model.masses)
    if np.any((np.abs(O) > 1e-14) & (ms[:, None] != ms[None, :])):
        raise ValueError("O must not mix components of different mass")
    # keep exact zeros and ones so M stays a clean polynomial
    Osym = sp.Matrix(O.tolist()).applyfunc(lambda x: sp.Integer(int(x)) if float(x).is_integer() else x)
    M = Osym * model.M_sym * Osym.T
    S_phi = None
    if model.S_phi is not None:
        def S_phi(phi):
            return O @ model.S_phi(phi) @ O.T
    return SpinModel(f"O({model.name})", model.d, model.masses, nb, M, O @ model.D @ O.T,
                     lambda el: O @ model.S(el) @ O.T, lambda p: model.C(p) @ O.T,
                     S_phi, model.c_excluded)


def compose(m1: SpinModel, m2: SpinModel | None = None, mode: str = "direct_sum", O=None) -> SpinModel:
    if mode == "direct_sum":
        return direct_sum(m1, m2)
    if mode == "kronecker":
        return kronecker(m1, m2)
    if mode == "orthogonal_conjugation":
        if O is None:
            raise ValueError("orthogonal_conjugation needs O")
        return orthogonal_conjugation(m1, O)
    raise ValueError(f"unknown composition mode {mode!r}")


# verification --------------------------------------------------------------

def sample_shell_momenta(model: SpinModel, n: int, rng, scale: float = 1.5) -> np.ndarray:
    """Forward-shell momenta for the first component's mass, avoiding C singularities."""
    mass = model.masses[0]
    out = []
    while len(out) < n:
        q = rng.normal(scale=scale, size=model.d - 1)
        p = on_shell_array(q, mass)
        if model.c_excluded is not None and model.c_excluded(p):
            continue
        out.append(p)
    return np.array(out)


def verify_spin_model(model: SpinModel, samples: int = 100, seed=0, max_rapidity: float = 1.5,
                      tol: float = 1e-8) -> dict:
    """Check the algebraic identities on random forward-shell momenta.

    Returns {identity: {"pass": bool, "residual": float}}.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    n = model.n_components
    sign = np.array([-1.0 if model.is_fermion(k) else 1.0 for k in range(n)])
    report = {}

    def put(key, res, ok=None):
        res = float(res)
        report[key] = {"pass": bool(res <= tol) if ok is None else bool(ok), "residual": res}

    put("conjD_D_identity", np.max(np.abs(np.conj(model.D) @ model.D - np.eye(n))))

    ps = sample_shell_momenta(model, samples, rng)
    M = model.M(ps)
    DM = model.D @ M
    scale = np.max(np.abs(DM), axis=(-1, -2))[:, None, None]
    C = model.C(ps)
    CC = np.conj(np.swapaxes(C, -1, -2)) @ C
    put("DM_equals_CstarC", np.max(np.abs(DM - CC) / scale))

    herm = 0.5 * (DM + np.conj(np.swapaxes(DM, -1, -2)))
    eig = np.linalg.eigvalsh(herm)
    worst = np.max(-eig[:, 0] / scale[:, 0, 0])
    put("DM_psd", max(worst, 0.0), ok=worst <= 1e-9)
    put("DM_hermitian", np.max(np.abs(DM - herm)) / np.max(scale))

    Mneg = np.swapaxes(model.M(-ps), -1, -2)
    # bosonic rows/cols get +, fermionic block gets -; mixed entries must vanish anyway
    par = np.where(np.outer(sign < 0, sign < 0), -1.0, 1.0)
    put("M_reflection_parity", np.max(np.abs(Mneg - par * M)) / np.max(scale))

    Mstar = np.conj(np.swapaxes(M, -1, -2))
    put("M_adjoint_via_D", np.max(np.abs(Mstar - model.D @ M @ model.D.T)) / np.max(scale))

    cov = 0.0
    conjS = 0.0
    for i in range(samples):
        el = random_lorentz(int(rng.integers(2**31)), max_rapidity, model.d)
        S = model.S(el)
        p = ps[i]
        lhs = S @ M[i] @ S.T
        rhs = model.M(el.inverse_matrix @ p)
        cov = max(cov, np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(rhs)), 1.0))
        conjS = max(conjS, np.max(np.abs(np.conj(S) @ model.D - model.D @ S)))
    put("S_covariance", cov)
    put("conjS_D_commutes", conjS)

    if model.S_phi is not None:
        phis = rng.uniform(0, 2 * np.pi, size=8)
        r1 = r2 = 0.0
        for phi in phis:
            sphi = model.S_phi(phi)
            r1 = max(r1, np.max(np.abs(sphi @ M @ sphi.T - M)) / np.max(scale))
            r2 = max(r2, np.max(np.abs(model.D @ sphi - np.conj(sphi) @ model.D)))
        put("charge_symmetry_M", r1)
        put("charge_symmetry_D", r2)
    return report


def report_passed(report: dict) -> bool:
    return all(v["pass"] for v in report.values())
