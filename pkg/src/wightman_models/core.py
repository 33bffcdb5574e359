"""Minkowski geometry, mass shells and Lorentz transformations.

Conventions: energy component first, signature (+, -, ..., -).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.spatial.transform import Rotation
from scipy.stats import special_ortho_group

CONE_TOL = 1e-12
LORENTZ_TOL = 1e-12

PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def metric(d: int) -> np.ndarray:
    g = -np.eye(d)
    g[0, 0] = 1.0
    return g


@dataclass(frozen=True)
class MomentumVector:
    components: tuple

    def __post_init__(self):
        comps = tuple(float(c) for c in self.components)
        if len(comps) < 3:
            raise ValueError(f"dimension must be >= 3, got {len(comps)}")
        if not all(np.isfinite(comps)):
            raise ValueError("momentum components must be finite")
        object.__setattr__(self, "components", comps)

    @property
    def d(self) -> int:
        return len(self.components)

    @property
    def energy(self) -> float:
        return self.components[0]

    @property
    def spatial(self) -> np.ndarray:
        return np.array(self.components[1:])

    def array(self) -> np.ndarray:
        return np.array(self.components)

    def __add__(self, other: "MomentumVector") -> "MomentumVector":
        return MomentumVector(tuple(self.array() + other.array()))


@dataclass(frozen=True)
class Species:
    index: int
    mass: float
    n_bosons: int

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"species mass must be positive, got {self.mass}")
        if self.index < 1:
            raise ValueError("species index starts at 1")

    @property
    def is_fermion(self) -> bool:
        return self.index > self.n_bosons


def _as_array(p) -> np.ndarray:
    return p.array() if isinstance(p, MomentumVector) else np.asarray(p, dtype=float)


def minkowski_dot(p, q) -> float:
    """E_p E_q - p.q for two momenta of equal dimension."""
    a, b = _as_array(p), _as_array(q)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return a[..., 0] * b[..., 0] - np.sum(a[..., 1:] * b[..., 1:], axis=-1)


def omega(mass, spatial) -> np.ndarray:
    spatial = np.asarray(spatial, dtype=float)
    return np.sqrt(np.asarray(mass, dtype=float) ** 2 + np.sum(spatial**2, axis=-1))


def on_shell(spatial, species, sign: int = +1) -> MomentumVector:
    mass = species.mass if isinstance(species, Species) else float(species)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    sp = np.asarray(spatial, dtype=float)
    return MomentumVector((sign * float(omega(mass, sp)), *sp))


def on_shell_array(spatial: np.ndarray, mass: float, sign: int = +1) -> np.ndarray:
    """Vectorised shell embedding: (..., d-1) -> (..., d)."""
    spatial = np.asarray(spatial, dtype=float)
    e = sign * omega(mass, spatial)
    return np.concatenate([e[..., None], spatial], axis=-1)


def in_forward_cone(p, tol: float = CONE_TOL) -> bool:
    a = _as_array(p)
    return bool(minkowski_dot(a, a) >= -tol and a[0] >= -tol)


def boost_matrix(d: int, rapidity: float, axis: int = 1) -> np.ndarray:
    lam = np.eye(d)
    c, s = np.cosh(rapidity), np.sinh(rapidity)
    lam[0, 0] = lam[axis, axis] = c
    lam[0, axis] = lam[axis, 0] = s
    return lam


def rotation_embed(rot: np.ndarray) -> np.ndarray:
    d = rot.shape[0] + 1
    lam = np.eye(d)
    lam[1:, 1:] = rot
    return lam


def pauli_matrix(p: np.ndarray) -> np.ndarray:
    """E + p.sigma for a 4-vector (or a stack of them)."""
    p = np.asarray(p)
    return np.einsum("...m,mij->...ij", p.astype(complex), np.array(PAULI))


def lorentz_from_sl2(a: np.ndarray) -> np.ndarray:
    """Standard map: A (p.sigma) A^dagger = (Lambda p).sigma."""
    lam = np.empty((4, 4))
    for nu in range(4):
        img = a @ PAULI[nu] @ a.conj().T
        for mu in range(4):
            lam[mu, nu] = 0.5 * np.real(np.trace(PAULI[mu] @ img))
    return lam


@dataclass(frozen=True)
class LorentzElement:
    """A proper orthochronous Lorentz matrix with an optional SL(2,C) partner.

    The partner obeys A (p.sigma) A^dagger = (Lambda^{-1} p).sigma, the pairing
    under which the spin-1/2 preset satisfies S M(p) S^T = M(Lambda^{-1} p).
    """

    matrix: np.ndarray
    sl2: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.asarray(self.matrix, dtype=float)
        g = metric(lam.shape[0])
        if np.max(np.abs(lam.T @ g @ lam - g)) > 1e-10:
            raise ValueError("matrix does not preserve the Minkowski metric")
        if lam[0, 0] < 1 - 1e-12:
            raise ValueError("Lorentz element is not orthochronous")
        object.__setattr__(self, "matrix", lam)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def inverse_matrix(self) -> np.ndarray:
        g = metric(self.d)
        return g @ self.matrix.T @ g

    def inverse(self) -> "LorentzElement":
        sl2 = None if self.sl2 is None else np.linalg.inv(self.sl2)
        return LorentzElement(self.inverse_matrix, sl2)

    def compose(self, other: "LorentzElement") -> "LorentzElement":
        sl2 = None
        if self.sl2 is not None and other.sl2 is not None:
            # Lambda = L1 L2 pairs with A = A2 A1 under the inverse convention.
            sl2 = other.sl2 @ self.sl2
        return LorentzElement(self.matrix @ other.matrix, sl2)

    def metric_residual(self) -> float:
        g = metric(self.d)
        return float(np.max(np.abs(self.matrix.T @ g @ self.matrix - g)))


def identity_lorentz(d: int) -> LorentzElement:
    return LorentzElement(np.eye(d), np.eye(2, dtype=complex) if d == 4 else None)


def _random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    n = d - 1
    if n == 1:
        return np.eye(1)
    if n == 2:
        th = rng.uniform(0, 2 * np.pi)
        return np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    if n == 3:
        return Rotation.random(random_state=rng).as_matrix()
    return special_ortho_group.rvs(n, random_state=rng)


def _su2_from_rotation(rot: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(rot).as_quat()
    return w * PAULI[0] - 1j * (x * PAULI[1] + y * PAULI[2] + z * PAULI[3])


def random_lorentz(seed, max_rapidity: float, d: int = 4, rotate: bool = True) -> LorentzElement:
    """R1 . boost_x(chi) . R2 with chi ~ U[0, max_rapidity] and Haar rotations."""
    if max_rapidity < 0:
        raise ValueError("max_rapidity must be non-negative")
    rng = np.random.default_rng(seed)
    chi = rng.uniform(0.0, max_rapidity) if max_rapidity > 0 else 0.0
    r1 = _random_rotation(d, rng) if rotate else np.eye(d - 1)
    r2 = _random_rotation(d, rng) if rotate else np.eye(d - 1)
    lam = rotation_embed(r1) @ boost_matrix(d, chi) @ rotation_embed(r2)
    sl2 = None
    if d == 4:
        a_std = _su2_from_rotation(r1) @ expm(0.5 * chi * PAULI[1]) @ _su2_from_rotation(r2)
        sl2 = np.linalg.inv(a_std)
    return LorentzElement(lam, sl2, {"rapidity": chi, "seed": seed})
