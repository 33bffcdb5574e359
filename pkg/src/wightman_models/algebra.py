"""Terminating sequences of test functions built from Gaussian shell packets.

A packet is a function on a single mass shell.  Its momentum-space value is

    raw(p) = exp(-i p.a) * pol * pref(L^{-1} p) * delta_L(spatial(L^{-1} p) - q)

where (L, a) is an accumulated Poincare transform and pref is either 1 or the
LSZ factor (omega + E) exp(i omega t).  The dual of a packet is stored as the
same raw data with ``conjugated=True``; its value is pol' * conj(raw(-p)), with
pol' = D^T conj(pol) already folded in.
"""
from __future__ import annotations

import itertools
import math
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from .core import LorentzElement, metric, omega


def delta_L(x, L: float) -> np.ndarray:
    """(L/sqrt(pi))^n exp(-L^2 x^2), normalised Gaussian in the last axis."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    return (L / math.sqrt(math.pi)) ** n * np.exp(-(L**2) * np.sum(x**2, axis=-1))


def _tup(a, dtype=float):
    return tuple(dtype(v) for v in np.ravel(a))


@dataclass(frozen=True)
class GaussianPacket:
    mass: float
    pol: tuple          # complex weights over the N_c components
    center: tuple       # q, d-1 reals (raw frame)
    width: float        # L
    shell_sign: int = 1  # raw shell; the dual lives on the opposite one
    fermion: bool = False
    t: float = 0.0
    kind: str = "lsz"
    lorentz: tuple | None = None   # flattened d x d, None = identity
    shift: tuple | None = None     # translation a, None = 0
    conjugated: bool = False

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"packet width L must be positive, got {self.width}")
        if not self.mass > 0:
            raise ValueError("packet mass must be positive")
        if self.kind not in ("lsz", "plain"):
            raise ValueError(f"unknown packet kind {self.kind!r}")
        if self.shell_sign not in (1, -1):
            raise ValueError("shell_sign must be +1 or -1")
        if self.kind == "lsz" and self.shell_sign != 1:
            raise ValueError("LSZ packets live on the positive shell")
        object.__setattr__(self, "pol", _tup(self.pol, complex))
        object.__setattr__(self, "center", _tup(self.center))

    # geometry -----------------------------------------------------------
    @property
    def d(self) -> int:
        return len(self.center) + 1

    @property
    def sign(self) -> int:
        """Energy sign of the shell the packet actually lives on."""
        return -self.shell_sign if self.conjugated else self.shell_sign

    @property
    def lorentz_matrix(self) -> np.ndarray:
        if self.lorentz is None:
            return np.eye(self.d)
        return np.array(self.lorentz).reshape(self.d, self.d)

    @property
    def shift_vector(self) -> np.ndarray:
        return np.zeros(self.d) if self.shift is None else np.array(self.shift)

    @property
    def pol_array(self) -> np.ndarray:
        return np.array(self.pol, dtype=complex)

    def mean_momentum(self) -> np.ndarray:
        """Shell momentum at the packet centre, in the lab frame, on its own shell."""
        q = np.array(self.center)
        p_raw = np.concatenate([[self.shell_sign * omega(self.mass, q)], q])
        p = self.lorentz_matrix @ p_raw
        return -p if self.conjugated else p

    # values ---------------------------------------------------------------
    def _raw_scalar(self, p: np.ndarray) -> np.ndarray:
        """Scalar part of the raw packet at d-vectors p on the raw shell."""
        lam = self.lorentz_matrix
        g = metric(self.d)
        lam_inv = g @ lam.T @ g
        pr = p @ lam_inv.T
        val = delta_L(pr[..., 1:] - np.array(self.center), self.width).astype(complex)
        if self.kind == "lsz":
            w = omega(self.mass, pr[..., 1:])
            val = val * (w + pr[..., 0]) * np.exp(1j * w * self.t)
        if self.shift is not None:
            a = self.shift_vector
            val = val * np.exp(-1j * (p[..., 0] * a[0] - p[..., 1:] @ a[1:]))
        return val

    def scalar_value(self, p: np.ndarray) -> np.ndarray:
        """Scalar part at d-vectors p lying on the packet's shell."""
        p = np.asarray(p, dtype=float)
        if self.conjugated:
            return np.conj(self._raw_scalar(-p))
        return self._raw_scalar(p)

    def value(self, p: np.ndarray) -> np.ndarray:
        """Vector value (..., N_c)."""
        return self.scalar_value(p)[..., None] * self.pol_array

    def value_spatial(self, spatial: np.ndarray) -> np.ndarray:
        spatial = np.asarray(spatial, dtype=float)
        e = self.sign * omega(self.mass, spatial)
        return self.value(np.concatenate([e[..., None], spatial], axis=-1))

    # operations -----------------------------------------------------------
    def dual(self, D) -> "GaussianPacket":
        D = np.asarray(D)
        new_pol = D.T @ np.conj(self.pol_array)
        return replace(self, pol=tuple(new_pol), conjugated=not self.conjugated)

    def transformed(self, lam: np.ndarray, a: np.ndarray, S: np.ndarray | None = None) -> "GaussianPacket":
        lam = np.asarray(lam, dtype=float)
        a = np.asarray(a, dtype=float)
        new_lam = lam @ self.lorentz_matrix
        new_a = a + lam @ self.shift_vector
        pol = self.pol_array if S is None else np.asarray(S).T @ self.pol_array
        lam_t = None if np.allclose(new_lam, np.eye(self.d), atol=0, rtol=0) else _tup(new_lam)
        a_t = None if not np.any(new_a) else _tup(new_a)
        return replace(self, pol=tuple(pol), lorentz=lam_t, shift=a_t)

    def to_dict(self) -> dict:
        out = {"mass": self.mass, "pol": [[z.real, z.imag] for z in self.pol],
               "center": list(self.center), "width": self.width, "shell_sign": self.shell_sign,
               "fermion": self.fermion, "t": self.t, "kind": self.kind,
               "conjugated": self.conjugated}
        if self.lorentz is not None:
            out["lorentz"] = list(self.lorentz)
        if self.shift is not None:
            out["shift"] = list(self.shift)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianPacket":
        data = dict(data)
        data["pol"] = tuple(complex(*z) if isinstance(z, (list, tuple)) else complex(z) for z in data["pol"])
        for k in ("lorentz", "shift"):
            if data.get(k) is not None:
                data[k] = tuple(data[k])
        return cls(**data)


@dataclass(frozen=True)
class TensorTerm:
    coefficient: complex
    factors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "coefficient", complex(self.coefficient))
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def order(self) -> int:
        return len(self.factors)


@dataclass(frozen=True)
class FunctionSequence:
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def max_order(self) -> int:
        return max((t.order for t in self.terms), default=0)

    def component(self, n: int) -> list:
        return [t for t in self.terms if t.order == n]

    def in_subalgebra_B(self) -> bool:
        return all(pk.sign == 1 for t in self.terms for pk in t.factors)

    def __add__(self, other: "FunctionSequence") -> "FunctionSequence":
        return FunctionSequence(self.terms + other.terms)

    def scale(self, c: complex) -> "FunctionSequence":
        return FunctionSequence(TensorTerm(t.coefficient * c, t.factors) for t in self.terms)

    def simplify(self, tol: float = 0.0) -> "FunctionSequence":
        """Merge terms with identical factor lists and drop vanishing ones."""
        acc = OrderedDict()
        for t in self.terms:
            acc[t.factors] = acc.get(t.factors, 0) + t.coefficient
        return FunctionSequence(TensorTerm(c, f) for f, c in acc.items() if abs(c) > tol)

    def equals(self, other: "FunctionSequence", tol: float = 1e-12) -> bool:
        a, b = self.simplify(), other.simplify()
        da = {t.factors: t.coefficient for t in a.terms}
        db = {t.factors: t.coefficient for t in b.terms}
        keys = set(da) | set(db)
        return all(abs(da.get(k, 0) - db.get(k, 0)) <= tol * max(1.0, abs(da.get(k, 0))) for k in keys)

    def to_dict(self) -> dict:
        return {"terms": [{"coefficient": [t.coefficient.real, t.coefficient.imag],
                           "factors": [pk.to_dict() for pk in t.factors]} for t in self.terms]}

    @classmethod
    def from_dict(cls, data: dict) -> "FunctionSequence":
        terms = []
        for t in data["terms"]:
            c = t.get("coefficient", 1.0)
            c = complex(*c) if isinstance(c, (list, tuple)) else complex(c)
            terms.append(TensorTerm(c, [GaussianPacket.from_dict(f) for f in t.get("factors", [])]))
        return cls(terms)


def unit() -> FunctionSequence:
    return FunctionSequence([TensorTerm(1.0, ())])


def product(f: FunctionSequence, g: FunctionSequence) -> FunctionSequence:
    """Cauchy product: the order-n part is sum_l f_l (x) g_{n-l}."""
    return FunctionSequence(TensorTerm(a.coefficient * b.coefficient, a.factors + b.factors)
                            for a in f.terms for b in g.terms)


def dual(f: FunctionSequence, D) -> FunctionSequence:
    return FunctionSequence(TensorTerm(np.conj(t.coefficient), tuple(pk.dual(D) for pk in reversed(t.factors)))
                            for t in f.terms)


def permutation_sign(perm, fermionic) -> int:
    """(-1)^(number of inversions among fermionic entries)."""
    idx = [p for p in perm if fermionic[p]]
    inv = sum(1 for i in range(len(idx)) for j in range(i + 1, len(idx)) if idx[i] > idx[j])
    return -1 if inv % 2 else 1


def permute_term(term: TensorTerm, perm) -> TensorTerm:
    """(pi f)(x_1..x_n) = f(x_{pi(1)}..x_{pi(n)}): factor i moves to slot perm[i]."""
    fac = [None] * term.order
    for i, j in enumerate(perm):
        fac[j] = term.factors[i]
    fermionic = [pk.fermion for pk in term.factors]
    return TensorTerm(term.coefficient * permutation_sign(perm, fermionic), fac)


def symmetrize(f: FunctionSequence, subset=None, normalized: bool = False) -> FunctionSequence:
    """Signed sum over permutations of the argument positions in ``subset``.

    subset=None permutes all arguments.  Statistics is read off each packet
    (fermionic packets pick up -1 per transposition among themselves).
    With normalized=True the result is divided by (#subset)!.
    """
    out = []
    for t in f.terms:
        sub = list(range(t.order)) if subset is None else sorted(i for i in subset if i < t.order)
        norm = math.factorial(len(sub)) if normalized else 1
        for p in itertools.permutations(sub):
            perm = list(range(t.order))
            for src, dst in zip(sub, p):
                perm[src] = dst
            pt = permute_term(t, perm)
            out.append(TensorTerm(pt.coefficient / norm, pt.factors))
    return FunctionSequence(out).simplify()


def lsz_packet(t: float, q, L: float, u, mass: float = 1.0, fermion: bool = False,
               kind: str = "lsz", shell_sign: int = 1, coefficient: complex = 1.0) -> FunctionSequence:
    """Order-1 sequence with on-shell value 2 omega exp(i omega t) delta_L(p - q) u."""
    if not L > 0:
        raise ValueError(f"packet width L must be positive, got {L}")
    u = np.atleast_1d(np.asarray(u, dtype=complex))
    pk = GaussianPacket(mass, tuple(u), tuple(np.ravel(q)), L, shell_sign, fermion, t, kind)
    return FunctionSequence([TensorTerm(coefficient, (pk,))])


def poincare_transform(f: FunctionSequence, a, el: LorentzElement, S=None) -> FunctionSequence:
    """Apply (a, A): values become exp(-i p.a) S(A)^T f(Lambda^{-1} p).

    S is the model's representation (callable on LorentzElement) or None for
    a trivial one.
    """
    if el.matrix[0, 0] < 1 - 1e-12:
        raise ValueError("Lorentz transform must be orthochronous")
    a = np.zeros(el.d) if a is None else np.asarray(a, dtype=float)
    s_mat = None if S is None else S(el)
    return FunctionSequence(TensorTerm(t.coefficient, tuple(pk.transformed(el.matrix, a, s_mat) for pk in t.factors))
                            for t in f.terms)


def time_translate(f: FunctionSequence, t: float) -> FunctionSequence:
    d = next((pk.d for term in f.terms for pk in term.factors), None)
    if d is None:
        return f
    a = np.zeros(d)
    a[0] = t
    return FunctionSequence(TensorTerm(term.coefficient, tuple(pk.transformed(np.eye(d), a) for pk in term.factors))
                            for term in f.terms)
