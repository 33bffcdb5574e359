"""Interaction ingredients: moment measures, B(p), beta_j, U_n and Upsilon.

All measures are finite atomic sums.  The Lorentz-invariant measure on
momenta is  a*delta(s) + sum_j w_j delta^+(s^2 - lambda_j), so

    B(p) = a M(0) + sum_j w_j  int ds/(2 omega) M(s) exp(-s.p),   s^2 = lambda_j.

Two evaluation routes are provided.  ``evaluate_B`` integrates in the rest
frame of p by Gauss-Legendre in the hyperbolic angle times an exact product
rule on the sphere.  ``AnalyticB`` uses the closed form

    int ds/(2 omega) exp(-s.p) = (2 pi)^{(n-1)/2} (mu/E)^{(n-1)/2} K_{(n-1)/2}(mu E),

n = d-1, mu = sqrt(lambda), E = sqrt(p^2), and turns polynomial entries of M
into derivatives in p.  The second is the fast path used inside integrals.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.special as ssp
import sympy as sp
from scipy.integrate import quad

from .core import boost_matrix, minkowski_dot, rotation_embed
from .spin_models import SpinModel, momentum_symbols

THRESHOLD_TOL = 1e-9


def _poly_p2(coeffs, p2):
    """sum_k coeffs[k] (p^2)^k."""
    out = np.zeros_like(np.asarray(p2, dtype=float), dtype=complex)
    for c in reversed(list(coeffs)):
        out = out * p2 + c
    return out


@dataclass(frozen=True)
class InteractionKernel:
    sigma_atoms: tuple = ((1.0, 1.0),)
    varsigma: dict = field(default_factory=dict)   # n -> complex, missing -> varsigma_default
    varsigma_default: complex = 1.0
    U: dict = field(default_factory=dict)          # n -> coefficients in p^2, missing -> 0
    upsilon: tuple = (1.0,)                        # coefficients in p^2
    beta_atoms: tuple = ((1.0, 0.0),)              # (weight, v)
    mu1_atoms: tuple = ()                          # (weight, lambda > 0)
    a: float = 1.0                                 # point mass at s = 0
    beta_convention: str = "result9"

    def __post_init__(self):
        object.__setattr__(self, "sigma_atoms", tuple((float(w), float(l)) for w, l in self.sigma_atoms))
        object.__setattr__(self, "beta_atoms", tuple((float(w), float(v)) for w, v in self.beta_atoms))
        object.__setattr__(self, "mu1_atoms", tuple((float(w), float(l)) for w, l in self.mu1_atoms))
        object.__setattr__(self, "upsilon", tuple(complex(c) for c in self.upsilon))
        for name, atoms in (("sigma", self.sigma_atoms), ("beta", self.beta_atoms), ("mu1", self.mu1_atoms)):
            for w, loc in atoms:
                if w < 0:
                    raise ValueError(f"{name} measure weights must be nonnegative, got {w}")
                if loc < 0:
                    raise ValueError(f"{name} atom locations must be nonnegative, got {loc}")
        for w, lam in self.mu1_atoms:
            if lam <= 0:
                raise ValueError("mu1 atoms need lambda > 0 (the point at s=0 is the separate weight a)")
        if self.a < 0:
            raise ValueError("point mass a must be nonnegative")
        if self.beta_convention not in ("result9", "sum2"):
            raise ValueError(f"unknown beta convention {self.beta_convention!r}")
        if not any(w > 0 for w, _ in self.beta_atoms):
            raise ValueError("beta measure is identically zero")

    def c(self, n: int) -> float:
        return float(sum(w * lam**n for w, lam in self.sigma_atoms))

    def varsigma_n(self, n: int) -> complex:
        return complex(self.varsigma.get(n, self.varsigma_default))

    def U_n(self, n: int, p2):
        coeffs = self.U.get(n, ())
        if len(coeffs) == 0:
            return np.zeros_like(np.asarray(p2, dtype=float), dtype=complex)
        return _poly_p2(coeffs, p2)

    def U_is_zero(self, n: int) -> bool:
        return all(c == 0 for c in self.U.get(n, ()))

    def Upsilon(self, p2):
        return _poly_p2(self.upsilon, p2)

    def beta_raw(self, j):
        return sum(w * np.exp(-np.asarray(j, dtype=float) * v) for w, v in self.beta_atoms)

    def beta(self, j):
        """beta_j normalised so beta_2 = 1."""
        return self.beta_raw(j) / self.beta_raw(2)

    def beta_index(self, i: int, j: int, k: int) -> int:
        """Index of beta for a cross edge between out-position i (1..k) and in-position j (k+1..n)."""
        if self.beta_convention == "result9":
            return i + j - k
        return (k + 1 - i) + j - k

    def scaled(self, factor: float) -> "InteractionKernel":
        """Same kernel with every sigma weight multiplied by factor (c_n scales linearly)."""
        atoms = tuple((w * factor, lam) for w, lam in self.sigma_atoms)
        return InteractionKernel(atoms, dict(self.varsigma), self.varsigma_default, dict(self.U),
                                 self.upsilon, self.beta_atoms, self.mu1_atoms, self.a, self.beta_convention)


def phi4_like(c4: float = 1.0, **overrides) -> InteractionKernel:
    """sigma = c4 delta(lambda-1), varsigma = 1, beta = delta(v), B = M(0), U = 0, Upsilon = 1."""
    kw = dict(sigma_atoms=((c4, 1.0),), varsigma_default=1.0, beta_atoms=((1.0, 0.0),),
              mu1_atoms=(), a=1.0, upsilon=(1.0,))
    kw.update(overrides)
    return InteractionKernel(**kw)


def generic_kernel(scale: float = 1.0) -> InteractionKernel:
    """Every ingredient switched on: two sigma, two beta and one mu1 atom, nonzero U and Upsilon.

    Two distinct beta atoms matter for fermions: with a constant beta the two
    cross graphs of a 2+2 block cancel under antisymmetrisation.
    """
    U = {1: (0.25,), 2: (0.2,), 3: (0.15, 0.05), 4: (0.3, 0.1), 5: (0.1,), 6: (0.1,)}
    return InteractionKernel(sigma_atoms=((scale, 1.0), (0.5 * scale, 0.7)), U=U,
                             upsilon=(1.0, 0.2), beta_atoms=((1.0, 0.0), (0.5, 0.3)), mu1_atoms=((0.4, 0.8),), a=0.5)


def free_kernel() -> InteractionKernel:
    """All couplings zero: only the free pairings survive."""
    return InteractionKernel(sigma_atoms=((0.0, 1.0),))


def beta_coefficients(kernel: InteractionKernel, j_max: int) -> list:
    if j_max < 2:
        raise ValueError("j_max must be >= 2")
    return [float(kernel.beta(j)) for j in range(1, j_max + 1)]


def moments(kernel: InteractionKernel, n_max: int) -> np.ndarray:
    return np.array([kernel.c(n) for n in range(n_max + 1)])


# --- closed-form route ----------------------------------------------------

def shell_laplace_scalar(E, mu, d: int):
    """int d^{d-1}s/(2 omega) exp(-omega E) on the shell s^2 = mu^2, rest frame."""
    n = d - 1
    nu = 0.5 * (n - 1)
    E = np.asarray(E, dtype=float)
    z = mu * E
    return (2 * np.pi) ** nu * (mu / E) ** nu * ssp.kv(nu, z)


class AnalyticB:
    """B(p) from derivatives of the closed-form shell transform."""

    _lock = threading.Lock()
    _cache: dict = {}       # (d, M) -> lambdified entries; the kernel only enters through mu

    def __init__(self, kernel: InteractionKernel, model: SpinModel):
        self.kernel = kernel
        self.model = model
        self._funcs = None
        self._M0 = model.M(np.zeros(model.d))

    def _build(self):
        key = (self.model.d, sp.srepr(self.model.M_sym))
        if key not in self._cache:
            self._cache[key] = self._lambdify()
        self._funcs = self._cache[key]

    def _lambdify(self):
        d = self.model.d
        syms = momentum_symbols(d)
        mu = sp.Symbol("mu", positive=True)
        nu = sp.Rational(d - 2, 2)
        x = sp.sqrt(syms[0] ** 2 - sum(s**2 for s in syms[1:]))
        phi = (2 * sp.pi) ** nu * (mu / x) ** nu * sp.besselk(nu, mu * x)
        n = self.model.n_components
        funcs = []
        for i in range(n):
            row = []
            for j in range(n):
                poly = sp.Poly(sp.expand(self.model.M_sym[i, j]), *syms)
                expr = 0
                for mon, coeff in poly.terms():
                    term = phi
                    for axis, power in enumerate(mon):
                        sign = -1 if axis == 0 else 1
                        for _ in range(power):
                            term = sign * sp.diff(term, syms[axis])
                    expr += coeff * term
                expr = sp.simplify(expr) if d == 3 else expr
                row.append(sp.lambdify((*syms, mu), expr, modules=[{"besselk": ssp.kv}, "scipy", "numpy"]))
            funcs.append(row)
        return funcs

    def __call__(self, p) -> np.ndarray:
        """B(p) for p of shape (..., d) in the forward cone above threshold."""
        with self._lock:
            if self._funcs is None:
                self._build()
        p = np.asarray(p, dtype=float)
        n = self.model.n_components
        out = np.zeros(p.shape[:-1] + (n, n), dtype=complex)
        out += self.kernel.a * self._M0
        if not self.kernel.mu1_atoms:
            return out
        args = [p[..., k] for k in range(self.model.d)]
        for w, lam in self.kernel.mu1_atoms:
            mu = math.sqrt(lam)
            for i in range(n):
                for j in range(n):
                    out[..., i, j] += w * self._funcs[i][j](*args, mu)
        return out


# --- quadrature route -----------------------------------------------------

def sphere_rule(n: int, order: int):
    """Nodes (N, n) and weights on S^{n-1}, exact for polynomials of degree <= order."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    m_phi = order + 1
    phi = 2 * np.pi * np.arange(m_phi) / m_phi
    nodes = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    weights = np.full(m_phi, 2 * np.pi / m_phi)
    # add polar angles one dimension at a time; weight sin^{k-1} theta
    for k in range(2, n):
        m = order // 2 + 2
        x, wx = ssp.roots_gegenbauer(m, (k - 1) / 2.0)
        s = np.sqrt(1 - x**2)
        nodes = np.concatenate([np.repeat(x, len(nodes))[:, None], np.tile(nodes, (m, 1)) * np.repeat(s, len(nodes))[:, None]], axis=1)
        weights = np.repeat(wx, len(weights)) * np.tile(weights, m)
    return nodes, weights


def rest_boost(p: np.ndarray) -> np.ndarray:
    """Pure boost taking (sqrt(p^2), 0) to p."""
    p = np.asarray(p, dtype=float)
    d = len(p)
    m = math.sqrt(max(minkowski_dot(p, p), 0.0))
    u = p / m
    lam = np.eye(d)
    g0 = u[0]
    v = u[1:]
    lam[0, 0] = g0
    lam[0, 1:] = v
    lam[1:, 0] = v
    lam[1:, 1:] = np.eye(d - 1) + np.outer(v, v) / (1 + g0)
    return lam


def _check_domain(p, mi, mj):
    p = np.asarray(p, dtype=float)
    p2 = minkowski_dot(p, p)
    if p[0] <= 0 or p2 < (mi + mj) ** 2 - THRESHOLD_TOL:
        raise ValueError(f"B argument below threshold: p^2={p2:.6g} < (m_i+m_j)^2={(mi + mj) ** 2:.6g}")
    return p2


def B_matrix_quadrature(p, kernel: InteractionKernel, model: SpinModel, n_t: int = 80, check=True):
    """Rest-frame quadrature for the full matrix B(p); returns (B, error estimate)."""
    p = np.asarray(p, dtype=float)
    if check:
        ms = model.masses
        _check_domain(p, min(ms), min(ms))
    d = model.d
    E = math.sqrt(minkowski_dot(p, p))
    lam_p = rest_boost(p)
    out = kernel.a * model.M(np.zeros(d))
    err = 0.0
    deg = max(model.degree(), 1)
    nodes, wsph = sphere_rule(d - 1, deg + 2)
    for w, lam in kernel.mu1_atoms:
        mu = math.sqrt(lam)
        z = mu * E
        # exp(-z cosh t) negligible once z (cosh t - 1) > 60
        t_max = math.acosh(1 + 60.0 / z)

        def integral(nt):
            x, wx = np.polynomial.legendre.leggauss(nt)
            t = 0.5 * t_max * (x + 1)
            wt = 0.5 * t_max * wx
            radial = wt * (mu * np.sinh(t)) ** (d - 2) * 0.5 * np.exp(-z * (np.cosh(t) - 1))
            s0 = mu * np.cosh(t)
            s_sp = mu * np.sinh(t)[:, None, None] * nodes[None, :, :]
            s_rest = np.concatenate([np.broadcast_to(s0[:, None, None], s_sp.shape[:2] + (1,)), s_sp], axis=-1)
            s_lab = s_rest @ lam_p.T
            Ms = model.M(s_lab)
            wts = radial[:, None] * wsph[None, :]
            return np.einsum("ab,abij->ij", wts, Ms) * math.exp(-z)

        v1 = integral(n_t)
        v2 = integral(2 * n_t)
        out = out + w * v2
        err = max(err, float(np.max(np.abs(v2 - v1))) * w)
    return out, err


def evaluate_B(p, ki: int, kj: int, kernel: InteractionKernel, model: SpinModel, n_t: int = 80):
    """B_{ki kj}(p) (zero-based component indices) with a quadrature error estimate."""
    mi, mj = model.masses[ki], model.masses[kj]
    _check_domain(p, mi, mj)
    B, err = B_matrix_quadrature(p, kernel, model, n_t=n_t, check=False)
    return complex(B[ki, kj]), err


def radial_B_scalar_oracle(E: float, lam: float, d: int) -> float:
    """1-d radial integral of ds/(2 omega) exp(-E omega) at rest (scalar M = 1)."""
    mu = math.sqrt(lam)
    n = d - 1
    area = 2 * math.pi ** (n / 2) / math.gamma(n / 2)

    def f(s):
        om = math.sqrt(mu * mu + s * s)
        return area * s ** (n - 1) / (2 * om) * math.exp(-E * om)

    val, _ = quad(f, 0, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    return val


def check_multiplier_bound(kernel: InteractionKernel, model: SpinModel, density=None,
                           cutoffs=(10.0, 100.0, 1000.0, 10000.0)) -> dict:
    """Finiteness of int dmu1 (1 + lambda^N1) exp(-(m_i+m_j) sqrt(lambda/2)).

    ``density`` optionally replaces the atomic mu1 by a callable density; it is
    integrated to growing cutoffs and judged finite if the tail contribution
    shrinks.
    """
    n1 = math.ceil(model.degree() / 2)
    msum = 2 * min(model.masses)

    def integrand(lam):
        return (1 + lam**n1) * np.exp(-msum * np.sqrt(lam / 2))

    if density is None:
        val = float(sum(w * integrand(lam) for w, lam in kernel.mu1_atoms))
        return {"pass": bool(np.isfinite(val)), "value": val, "N1": n1, "mass_sum": msum}
    vals = []
    prev = 0.0
    for c in cutoffs:
        v, _ = quad(lambda x: density(x) * integrand(x), 0, c, limit=500)
        vals.append(v)
        prev = v
    tail = abs(vals[-1] - vals[-2])
    ok = bool(np.isfinite(prev) and tail <= 1e-6 * max(1.0, abs(prev)))
    return {"pass": ok, "value": float(prev), "partial": vals, "N1": n1, "mass_sum": msum}


def hankel_psd(kernel: InteractionKernel) -> float:
    h = np.array([[kernel.c(0), kernel.c(1)], [kernel.c(1), kernel.c(2)]])
    return float(np.linalg.eigvalsh(h)[0])
