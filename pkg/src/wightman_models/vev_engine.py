"""Wightman functional on packet sequences.

Conventions
-----------
The connected density is the transition amplitude <out_k | in_{n-k}>: k out
arguments labelled in the out state's own order, then n-k in arguments.
Kernels are written in physical momenta (every P on its positive shell; a
W-slot momentum of an out argument is -P, and W-slots list the out arguments
in reverse).  Out polarisations u are the physical ones, so the edge weights are

    out-out   conj(U_k((P_i-P_j)^2) u_i^T M(P_i-P_j) u_j)
    in-in     U_{n-k}((P_i-P_j)^2) v_i^T M(P_i-P_j) v_j
    cross     beta_{i+j-k} Upsilon((P_i+P_j)^2) conj(u_i)^T D B(P_i+P_j) v_j

for slot positions i < j, and the connected density is

    (2 pi)^d c_n conj(vs_k) vs_{n-k} / (k! (n-k)!)  S_out S_in [ Haf ]

with Haf the sum over perfect matchings of edge-weight products.

The sesquilinear form on the positive-energy subalgebra is

    <f|g> = sum_{n,m} sum_{a,b} C(n,a) C(m,b) l!  int conj(S^f)(A,R) S^g(B,R')
            V(A,B) prod_r Delta(R_r, R'_r),          l = n-a = m-b,

where S^ is the normalised (signed) symmetrisation, Delta the free pair
dp/(2w) conj(F)^T D M(p) G, V(0,0) = 1 and V(A,B) the connected block when
both sides have at least two arguments (zero otherwise).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import FunctionSequence, GaussianPacket, TensorTerm, permutation_sign
from .core import metric, omega
from .kernels import AnalyticB, B_matrix_quadrature, InteractionKernel
from .phase_space import (EvalReport, QuadOptions, gaussian_integrate, richardson,
                          shell_integrate)
from .spin_models import SpinModel


# --- pairings and matchings ------------------------------------------------

def perfect_matchings(items):
    items = list(items)
    if not items:
        yield ()
        return
    if len(items) % 2:
        return
    first, rest = items[0], items[1:]
    for i, other in enumerate(rest):
        for tail in perfect_matchings(rest[:i] + rest[i + 1:]):
            yield ((first, other),) + tail


@dataclass(frozen=True)
class WickPairing:
    pairs: tuple
    sign: int = 1


def _pairing_sign(pairs, fermionic):
    flat = [i for pr in pairs for i in pr]
    return permutation_sign_of_sequence(flat, fermionic)


def permutation_sign_of_sequence(seq, fermionic):
    """Sign of reordering `seq` into ascending order, counting fermionic entries only."""
    idx = [x for x in seq if fermionic[x]]
    inv = sum(1 for i in range(len(idx)) for j in range(i + 1, len(idx)) if idx[i] > idx[j])
    return -1 if inv % 2 else 1


def wick_pairings(n: int, fermionic=None) -> list:
    """All pairings of {1..n}; sign from fermionic transpositions (1-based flags dict/list)."""
    if n % 2:
        return []
    ferm = _flags(n, fermionic)
    out = []
    for m in perfect_matchings(range(1, n + 1)):
        out.append(WickPairing(m, _pairing_sign(m, ferm)))
    return out


def energy_ordered_wick(k: int, n: int, fermionic=None) -> list:
    """Pairings with every pair (i <= k, j > k); k! of them when n = 2k."""
    if n != 2 * k:
        return []
    ferm = _flags(n, fermionic)
    out = []
    for perm in itertools.permutations(range(k + 1, n + 1)):
        pairs = tuple((i + 1, j) for i, j in enumerate(perm))
        out.append(WickPairing(pairs, _pairing_sign(pairs, ferm)))
    return out


def _flags(n, fermionic):
    if fermionic is None:
        return {i: False for i in range(1, n + 1)}
    if isinstance(fermionic, dict):
        return fermionic
    return {i + 1: bool(f) for i, f in enumerate(fermionic)}


EDGE_TYPES = ("MbarU", "MU", "BcrossBeta")


@dataclass(frozen=True)
class MatchingGraph:
    k: int
    n: int
    edges: tuple      # ((i, j, type), ...) 1-based positions

    def edge_type(self, i, j):
        return next(t for a, b, t in self.edges if (a, b) == (i, j))

    def weight(self, tables) -> np.ndarray:
        """Product of edge weights from precomputed position tables."""
        w = 1.0
        for i, j, t in self.edges:
            w = w * tables[(i - 1, j - 1)]
        return w


def _edge_type(i, j, k):
    if j <= k:
        return "MbarU"
    if i > k:
        return "MU"
    return "BcrossBeta"


def connected_matchings(k: int, n: int, kernel: InteractionKernel, model: SpinModel | None = None) -> list:
    """Perfect matchings of the n slots typed by side, dropping graphs with identically zero edges."""
    if n % 2 or n < 4:
        return []
    out = []
    zero_out = kernel.U_is_zero(k)
    zero_in = kernel.U_is_zero(n - k)
    for m in perfect_matchings(range(1, n + 1)):
        edges = tuple((i, j, _edge_type(i, j, k)) for i, j in m)
        if zero_out and any(t == "MbarU" for _, _, t in edges):
            continue
        if zero_in and any(t == "MU" for _, _, t in edges):
            continue
        out.append(MatchingGraph(k, n, edges))
    return out


# --- connected kernel ------------------------------------------------------

def _mink_sq(x):
    return x[..., 0] ** 2 - np.sum(x[..., 1:] ** 2, axis=-1)


class BEvaluator:
    """Vectorised D B(p) with a choice of route."""

    def __init__(self, kernel: InteractionKernel, model: SpinModel, method: str = "analytic"):
        self.kernel, self.model, self.method = kernel, model, method
        self._analytic = AnalyticB(kernel, model)

    def DB(self, p):
        p = np.asarray(p, dtype=float)
        if self.method == "analytic" or not self.kernel.mu1_atoms:
            B = self._analytic(p)
        else:
            flat = p.reshape(-1, p.shape[-1])
            B = np.array([B_matrix_quadrature(q, self.kernel, self.model, check=False)[0] for q in flat])
            B = B.reshape(p.shape[:-1] + B.shape[-2:])
        return self.model.D @ B


def _prefactor(n, k, kernel: InteractionKernel, d: int):
    return ((2 * np.pi) ** d * kernel.c(n) * np.conj(kernel.varsigma_n(k)) * kernel.varsigma_n(n - k)
            / (math.factorial(k) * math.factorial(n - k)))


def _pair_tables(P, U, V, k, kernel, model, bev):
    """Edge weights per ordered argument pair (independent of slot positions except beta)."""
    n = P.shape[-2]
    nout = k
    ww = {}
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            if a < nout and b < nout:
                if kernel.U_is_zero(k):
                    continue
                x = P[..., a, :] - P[..., b, :]
                Mx = model.M(x)
                val = np.einsum("...i,...ij,...j->...", U[..., a, :], Mx, U[..., b, :])
                ww[(a, b)] = np.conj(kernel.U_n(k, _mink_sq(x)) * val)
            elif a >= nout and b >= nout:
                if kernel.U_is_zero(n - k):
                    continue
                x = P[..., a, :] - P[..., b, :]
                Mx = model.M(x)
                val = np.einsum("...i,...ij,...j->...", V[..., a - nout, :], Mx, V[..., b - nout, :])
                ww[(a, b)] = kernel.U_n(n - k, _mink_sq(x)) * val
            elif a < nout <= b:
                y = P[..., a, :] + P[..., b, :]
                val = np.einsum("...i,...ij,...j->...", np.conj(U[..., a, :]), bev.DB(y), V[..., b - nout, :])
                ww[(a, b)] = kernel.Upsilon(_mink_sq(y)) * val
    return ww


def kernel_physical(P, U, V, k: int, fermionic, kernel: InteractionKernel, model: SpinModel,
                    bev: BEvaluator | None = None, symmetrize: bool = True, absolute: bool = False) -> np.ndarray:
    """Connected density at physical momenta P (..., n, d) with out pols U (..., k, N) and in pols V.

    absolute=True sums |term| instead, a magnitude scale for exact cancellations.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[-2]
    if n % 2 or n < 2:
        return np.zeros(P.shape[:-2], dtype=complex)
    bev = bev or BEvaluator(kernel, model)
    pref = _prefactor(n, k, kernel, model.d)
    if pref == 0:
        return np.zeros(P.shape[:-2], dtype=complex)
    ww = _pair_tables(P, U, V, k, kernel, model, bev)
    graphs = connected_matchings(k, n, kernel) if n >= 4 else [
        MatchingGraph(k, n, ((1, 2, _edge_type(1, 2, k)),))]
    out_perms = list(itertools.permutations(range(k))) if symmetrize else [tuple(range(k))]
    in_perms = list(itertools.permutations(range(k, n))) if symmetrize else [tuple(range(k, n))]
    total = np.zeros(P.shape[:-2], dtype=complex)
    for so in out_perms:
        for si in in_perms:
            arg = list(so) + list(si)       # argument sitting at each slot position
            sign = permutation_sign_of_sequence(arg, fermionic)
            for gr in graphs:
                w = sign
                for i, j, t in gr.edges:
                    a, b = arg[i - 1], arg[j - 1]
                    e = ww.get((a, b))
                    if e is None:
                        w = 0
                        break
                    if t == "BcrossBeta":
                        e = e * kernel.beta(kernel.beta_index(i, j, k))
                    w = w * e
                total = total + (np.abs(w) if absolute else w)
    return (abs(pref) if absolute else pref) * total


def connected_kernel(momenta, kappas, k: int, kernel: InteractionKernel, model: SpinModel,
                     b_method: str = "analytic", pols=None, absolute: bool = False) -> complex | np.ndarray:
    """Connected density <out|in> at momenta whose first k entries (negative energy) are the out arguments.

    Out arguments are listed in the out state's own order and given as -P.
    ``kappas`` are zero-based component indices; by default the polarisation of
    each argument is the unit vector e_kappa (for out slots the physical one).
    """
    p = np.asarray(momenta, dtype=float)
    n = p.shape[-2]
    if len(kappas) != n:
        raise ValueError("need one component index per momentum")
    if np.any(p[..., :k, 0] > 0) or np.any(p[..., k:, 0] < 0):
        raise ValueError("first k momenta must have negative energy, the rest positive")
    P = p.copy()
    P[..., :k, :] *= -1
    N = model.n_components
    if pols is None:
        pols = np.eye(N)[list(kappas)]
    pols = np.broadcast_to(np.asarray(pols, dtype=complex), P.shape[:-1] + (N,))
    ferm = [model.is_fermion(kp) for kp in kappas]
    bev = BEvaluator(kernel, model, b_method)
    val = kernel_physical(P, pols[..., :k, :], pols[..., k:, :], k, ferm, kernel, model, bev, absolute=absolute)
    if absolute:
        return float(np.real(val)) if np.ndim(val) == 0 else np.real(val)
    return complex(val) if np.ndim(val) == 0 else val


# --- nilpotent-series oracle ------------------------------------------------

class NilpotentSeries:
    """Polynomials in commuting variables r_1..r_n with r_i^2 = 0: {bitmask: coefficient}."""

    def __init__(self, terms=None):
        self.terms = dict(terms or {})

    @classmethod
    def one(cls):
        return cls({0: 1.0})

    def __add__(self, other):
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return NilpotentSeries(out)

    def __mul__(self, other):
        if not isinstance(other, NilpotentSeries):
            return NilpotentSeries({m: c * other for m, c in self.terms.items()})
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                if m1 & m2:
                    continue
                out[m1 | m2] = out.get(m1 | m2, 0) + c1 * c2
        return NilpotentSeries(out)

    def exp(self, order: int):
        """exp(self) truncated at `order`; exact once order >= n/2 for quadratic forms."""
        if self.terms.get(0, 0) != 0:
            raise ValueError("exp only for series without constant term")
        result = NilpotentSeries.one()
        power = NilpotentSeries.one()
        for r in range(1, order + 1):
            power = power * self * (1.0 / r)
            if not power.terms:
                break
            result = result + power
        return result

    def coefficient(self, mask: int):
        return self.terms.get(mask, 0)


def oracle_generator_coefficients(k: int, n: int, momenta, kappas, kernel: InteractionKernel,
                                  model: SpinModel, truncation_order: int | None = None,
                                  pols=None) -> complex:
    """Brute-force connected density from the generator's series expansion.

    Builds exp(sum rho rho conj(U M)) exp(sum rho rho U M) exp(sum rho rho W_cross)
    in the nilpotent ring, where the cross form is assembled from the beta
    atoms (exp(-i v) exp(-j v) per slot), Upsilon and the closed-form B,
    then reads off the coefficient of rho_1...rho_n.  Single configuration.
    """
    if truncation_order is None:
        truncation_order = n
    if truncation_order < n:
        raise ValueError("truncation order must be >= n")
    p = np.asarray(momenta, dtype=float)
    if p.shape != (n, model.d):
        raise ValueError("momenta must have shape (n, d)")
    if n % 2 or n < 2:
        return 0j
    P = p.copy()
    P[:k] *= -1
    N = model.n_components
    if pols is None:
        pols = np.eye(N)[list(kappas)]
    pols = np.asarray(pols, dtype=complex)
    ferm = [model.is_fermion(kp) for kp in kappas]
    aB = AnalyticB(kernel, model)
    g = metric(model.d)
    beta_norm = sum(w * math.exp(-2 * v) for w, v in kernel.beta_atoms)

    def msq(x):
        return float(x @ g @ x)

    def upoly(coeffs, x2):
        return sum(c * x2**i for i, c in enumerate(coeffs))

    c_n = sum(w * lam**n for w, lam in kernel.sigma_atoms)
    pref = (2 * np.pi) ** model.d * c_n * np.conj(kernel.varsigma_n(k)) * kernel.varsigma_n(n - k)
    pref /= math.factorial(k) * math.factorial(n - k)
    total = 0j
    for so in itertools.permutations(range(k)):
        for si in itertools.permutations(range(k, n)):
            arg = list(so) + list(si)
            sign = permutation_sign_of_sequence(arg, ferm)
            q_out, q_in, q_x = NilpotentSeries(), NilpotentSeries(), NilpotentSeries()
            for i in range(n):
                for j in range(i + 1, n):
                    a, b = arg[i], arg[j]
                    bit = (1 << i) | (1 << j)
                    if j < k:
                        x = P[a] - P[b]
                        val = pols[a] @ model.M(x) @ pols[b]
                        q_out.terms[bit] = np.conj(upoly(kernel.U.get(k, ()), msq(x)) * val)
                    elif i >= k:
                        x = P[a] - P[b]
                        val = pols[a] @ model.M(x) @ pols[b]
                        q_in.terms[bit] = upoly(kernel.U.get(n - k, ()), msq(x)) * val
                    else:
                        y = P[a] + P[b]
                        ii, jj = i + 1, j + 1 - k
                        if kernel.beta_convention == "sum2":
                            ii = k + 1 - ii
                        beta = sum(w * math.exp(-ii * v) * math.exp(-jj * v) for w, v in kernel.beta_atoms) / beta_norm
                        ups = upoly(kernel.upsilon, msq(y))
                        DB = model.D @ aB(y)
                        q_x.terms[bit] = beta * ups * (np.conj(pols[a]) @ DB @ pols[b])
            half = truncation_order // 2 + 1
            series = q_out.exp(half) * q_in.exp(half) * q_x.exp(half)
            total += sign * series.coefficient((1 << n) - 1)
    return complex(pref * total)


# --- packet helpers -----------------------------------------------------------

def packet_guide(pk: GaussianPacket, frame: np.ndarray):
    """Gaussian approximation of |packet| in frame spatial coordinates: (mean, precision)."""
    d = pk.d
    g = metric(d)
    frame_inv = g @ frame.T @ g
    p_lab = pk.mean_momentum()
    y = (frame_inv @ p_lab)[1:]
    R = g @ pk.lorentz_matrix.T @ g @ frame     # raw = sign * R p'
    sgn = -1.0 if pk.conjugated else 1.0
    w = omega(pk.mass, y)
    J = sgn * (np.outer(R[1:, 0], y / w) + R[1:, 1:])
    prec = 2 * pk.width**2 * J.T @ J
    return y, prec


def _check_pol(pk: GaussianPacket, model: SpinModel):
    if len(pk.pol) != model.n_components:
        raise ValueError(f"packet has {len(pk.pol)} weights, model has {model.n_components} components")
    pol = np.asarray(pk.pol)
    for c in range(model.n_components):
        if abs(pol[c]) > 0:
            if abs(model.masses[c] - pk.mass) > 1e-12 * pk.mass:
                raise ValueError("packet weight on a component of a different mass")
            if model.is_fermion(c) != pk.fermion:
                raise ValueError("packet statistics does not match the weighted component")


# --- sesquilinear form ---------------------------------------------------------

@dataclass
class VevOptions:
    mode: str = "gaussian"           # gaussian | sinc | exact
    eta_schedule: tuple | None = None  # None -> eta0 (1, 1/2, 1/4), eta0 = 0.2 min mass
    quad: QuadOptions = field(default_factory=QuadOptions)
    b_method: str = "analytic"
    min_side: int = 2
    frame_transport: bool = True

    def etas(self, model: SpinModel):
        if self.mode == "exact":
            return (0.0,)
        if self.eta_schedule is not None:
            return tuple(self.eta_schedule)
        e0 = 0.2 * min(model.masses)
        return (e0, e0 / 2, e0 / 4)


class Evaluator:
    """Evaluates <f|g> with caching of free pairs and connected blocks."""

    def __init__(self, model: SpinModel, kernel: InteractionKernel, options: VevOptions | None = None):
        self.model = model
        self.kernel = kernel
        self.opts = options or VevOptions()
        self.bev = BEvaluator(kernel, model, self.opts.b_method)
        self._pairs = {}
        self._blocks = {}

    # free pair ------------------------------------------------------------
    def pair(self, phi: GaussianPacket, gam: GaussianPacket):
        key = (phi, gam)
        if key in self._pairs:
            return self._pairs[key]
        if abs(phi.mass - gam.mass) > 1e-12 * phi.mass or phi.fermion != gam.fermion:
            res = (0j, 0.0)
        else:
            frame = phi.lorentz_matrix if self.opts.frame_transport else np.eye(phi.d)
            m1, P1 = packet_guide(phi, frame)
            m2, P2 = packet_guide(gam, frame)
            prec = P1 + P2
            mean = np.linalg.solve(prec, P1 @ m1 + P2 @ m2)
            model = self.model
            mass = phi.mass

            def f(y):
                w = omega(mass, y)
                p = np.concatenate([w[..., None], y], axis=-1) @ frame.T
                F = phi.value(p)
                G = gam.value(p)
                return np.einsum("...i,...ij,...j->...", np.conj(F), model.DM(p), G) / (2 * w)

            qo = QuadOptions(**{**self.opts.quad.__dict__, "mode": "exact"})
            rep = gaussian_integrate(f, mean, prec, qo)
            res = (rep.value, rep.stat_error)
        self._pairs[key] = res
        return res

    # connected block --------------------------------------------------------
    def block(self, A: tuple, B: tuple, eta: float):
        """Connected block with f-order packets A (conjugated side) and g-order packets B."""
        key = (A, B, eta)
        if key in self._blocks:
            return self._blocks[key]
        a, b = len(A), len(B)
        if (a + b) % 2 or a < self.opts.min_side or b < self.opts.min_side:
            self._blocks[key] = (0j, 0.0)
            return self._blocks[key]
        if self.kernel.c(a + b) == 0:
            self._blocks[key] = (0j, 0.0)
            return self._blocks[key]
        out = tuple(A)      # out arguments labelled in the conjugated state's own order
        pk_all = out + tuple(B)
        frame = pk_all[0].lorentz_matrix if self.opts.frame_transport else np.eye(pk_all[0].d)
        guides = [packet_guide(pk, frame) for pk in pk_all]
        ferm = [pk.fermion for pk in pk_all]
        model, kernel, bev = self.model, self.kernel, self.bev

        def integrand(P):
            U = np.stack([pk.value(P[..., i, :]) for i, pk in enumerate(out)], axis=-2)
            V = np.stack([pk.value(P[..., a + j, :]) for j, pk in enumerate(B)], axis=-2)
            return kernel_physical(P, U, V, a, ferm, kernel, model, bev)

        qo = QuadOptions(**{**self.opts.quad.__dict__})
        qo.mode = "exact" if eta == 0 else self.opts.mode
        qo.eta = eta if eta > 0 else qo.eta
        rep = shell_integrate(integrand, [pk.mass for pk in pk_all], [1] * a + [-1] * b, model.d,
                              np.array([g[0] for g in guides]), np.array([g[1] for g in guides]), qo, frame)
        self._blocks[key] = (rep.value, rep.stat_error)
        return self._blocks[key]

    # terms ------------------------------------------------------------------
    def term_inner(self, tf: TensorTerm, tg: TensorTerm, eta: float, parts: dict | None = None):
        n, m = tf.order, tg.order
        F, G = tf.factors, tg.factors
        ferm_f = [pk.fermion for pk in F]
        ferm_g = [pk.fermion for pk in G]
        total, err2 = 0j, 0.0
        for l in range(min(n, m) + 1):
            a, b = n - l, m - l
            if not ((a == 0 and b == 0) or (a >= self.opts.min_side and b >= self.opts.min_side and (a + b) % 2 == 0)):
                continue
            weight = math.comb(n, a) * math.comb(m, b) * math.factorial(l) / (math.factorial(n) * math.factorial(m))
            sub, sub_err2 = 0j, 0.0
            for sf in itertools.permutations(range(n)):
                sgn_f = permutation_sign_of_sequence(list(sf), ferm_f)
                for sg in itertools.permutations(range(m)):
                    sgn_g = permutation_sign_of_sequence(list(sg), ferm_g)
                    if a:
                        # the kernel is signed-symmetric within each side: cache by sorted factors
                        ka, kb = tuple(sorted(sf[:a])), tuple(sorted(sg[:b]))
                        sgn = (permutation_sign_of_sequence(list(sf[:a]), ferm_f)
                               * permutation_sign_of_sequence(list(sg[:b]), ferm_g))
                        v, e = self.block(tuple(F[i] for i in ka), tuple(G[j] for j in kb), eta)
                        v = sgn * v
                    else:
                        v, e = 1.0, 0.0
                    if v == 0:
                        continue
                    prod, rel2 = v, (e / abs(v)) ** 2 if v else 0.0
                    for r in range(l):
                        pv, pe = self.pair(F[sf[a + r]], G[sg[b + r]])
                        prod = prod * pv
                        rel2 += (pe / abs(pv)) ** 2 if pv else 0.0
                        if prod == 0:
                            break
                    sub += sgn_f * sgn_g * prod
                    sub_err2 += rel2 * abs(prod) ** 2
            total += weight * sub
            err2 += weight**2 * sub_err2
            if parts is not None:
                key = "disconnected" if a == 0 else "connected"
                parts[key] = parts.get(key, 0j) + np.conj(tf.coefficient) * tg.coefficient * weight * sub
        val = np.conj(tf.coefficient) * tg.coefficient * total
        return val, abs(tf.coefficient * tg.coefficient) * math.sqrt(err2)

    def inner_at(self, f: FunctionSequence, g: FunctionSequence, eta: float):
        total, err2 = 0j, 0.0
        for tf in f.terms:
            for tg in g.terms:
                v, e = self.term_inner(tf, tg, eta)
                total += v
                err2 += e**2
        return total, math.sqrt(err2)

    def inner_parts(self, f: FunctionSequence, g: FunctionSequence, eta: float | None = None) -> dict:
        """Connected (some block) and disconnected (pairs only) pieces at one regulator value."""
        if eta is None:
            eta = self.opts.etas(self.model)[-1]
        parts = {"connected": 0j, "disconnected": 0j}
        for tf in f.terms:
            for tg in g.terms:
                self.term_inner(tf, tg, eta, parts)
        return parts

    def inner(self, f: FunctionSequence, g: FunctionSequence) -> EvalReport:
        for s, name in ((f, "f"), (g, "g")):
            if not s.in_subalgebra_B():
                raise ValueError(f"{name} is not in the positive-energy subalgebra")
            for t in s.terms:
                for pk in t.factors:
                    _check_pol(pk, self.model)
        etas = self.opts.etas(self.model)
        vals, errs = [], []
        for eta in etas:
            v, e = self.inner_at(f, g, eta)
            vals.append(v)
            errs.append(e)
        if len(etas) > 1:
            best, rerr = richardson(vals, etas)
            err = math.hypot(rerr, max(errs))
        else:
            best, err = vals[0], errs[0]
        q = self.opts.quad
        return EvalReport(complex(best), float(err),
                          "tensor_quadrature" if q.method != "mc" else "monte_carlo",
                          {"mode": self.opts.mode, "eta_schedule": list(etas)}, q.seed,
                          details={"per_eta": [[complex(v).real, complex(v).imag] for v in vals],
                                   "per_eta_error": errs})

    # general W on sequences -------------------------------------------------------
    def W(self, h: FunctionSequence, D=None) -> complex:
        """W(h) for any sequence: a term contributes only with sign pattern (-)^k (+)^{n-k}."""
        D = self.model.D if D is None else D
        total = 0j
        for t in h.terms:
            signs = [pk.sign for pk in t.factors]
            k = sum(1 for s in signs if s < 0)
            if signs != [-1] * k + [1] * (t.order - k):
                continue
            out = [pk.dual(D) for pk in reversed(t.factors[:k])]
            tf = TensorTerm(1.0, tuple(out))
            tg = TensorTerm(t.coefficient, t.factors[k:])
            rep = self.inner(FunctionSequence([tf]), FunctionSequence([tg]))
            total += rep.value
        return total


def sesquilinear(f: FunctionSequence, g: FunctionSequence, kernel: InteractionKernel, model: SpinModel,
                 options: VevOptions | None = None, evaluator: Evaluator | None = None) -> EvalReport:
    ev = evaluator or Evaluator(model, kernel, options)
    return ev.inner(f, g)


@dataclass
class GramResult:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    min_ratio: float
    per_eta: list
    per_eta_min_ratio: list
    errors: np.ndarray


def _hermitian_eig(G):
    H = 0.5 * (G + G.conj().T)
    ev = np.linalg.eigvalsh(H)
    ratio = float(ev[0] / max(abs(ev[-1]), 1e-300))
    return ev, ratio


def gram(states, kernel: InteractionKernel, model: SpinModel, options: VevOptions | None = None,
         evaluator: Evaluator | None = None) -> GramResult:
    ev = evaluator or Evaluator(model, kernel, options)
    n = len(states)
    etas = ev.opts.etas(model)
    per_eta = [np.zeros((n, n), dtype=complex) for _ in etas]
    best = np.zeros((n, n), dtype=complex)
    errs = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            rep = ev.inner(states[i], states[j])
            best[i, j] = rep.value
            errs[i, j] = errs[j, i] = rep.stat_error
            for e, (re, im) in enumerate(rep.details["per_eta"]):
                per_eta[e][i, j] = complex(re, im)
            if i != j:
                best[j, i] = np.conj(best[i, j])
                for e in range(len(etas)):
                    per_eta[e][j, i] = np.conj(per_eta[e][i, j])
    evs, ratio = _hermitian_eig(best)
    ratios = [_hermitian_eig(G)[1] for G in per_eta]
    return GramResult(best, evs, ratio, per_eta, ratios, errs)


def fock_gram_oracle(states, model: SpinModel, evaluator: Evaluator) -> np.ndarray:
    """Free-field Gram from permanents/determinants of the pair matrix."""
    n = len(states)
    G = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            tot = 0j
            for tf in states[i].terms:
                for tg in states[j].terms:
                    if tf.order != tg.order:
                        continue
                    k = tf.order
                    D = np.array([[evaluator.pair(a, b)[0] for b in tg.factors] for a in tf.factors]) if k else np.ones((0, 0))
                    ferm = [pk.fermion for pk in tg.factors]
                    s = 0j
                    for perm in itertools.permutations(range(k)):
                        sign = permutation_sign_of_sequence(list(perm), ferm)
                        s += sign * np.prod([D[r, perm[r]] for r in range(k)])
                    tot += np.conj(tf.coefficient) * tg.coefficient * s
            G[i, j] = tot
    return G
