"""Integration over products of mass shells with energy-momentum conservation.

The generic integral is

    int prod_j dp_j/(2 omega_j)  delta^d(sum_j s_j p_j)  F(p_1, ..., p_n)

with every p_j a physical momentum on its positive shell and s_j = +1 for
outgoing, -1 for incoming arguments.  The spatial delta removes the last
momentum.  The energy delta is either kept exact (integration over the
constraint surface) or replaced by a nascent delta of width eta.

Variables live in an integration frame: lab momenta are p = frame @ p'.
Each argument carries a Gaussian guide (mean, precision) in frame spatial
coordinates, used to build the proposal for Gauss-Hermite or Monte Carlo.

Also here: the Appendix A analysis of the constraint surface.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import quad
from scipy.special import roots_gegenbauer

from .core import omega

MAX_TENSOR_DIM = 6
MAX_SURFACE_TENSOR_DIM = 5   # kinks at collinear points spoil product rules beyond this


@dataclass
class EvalReport:
    value: complex
    stat_error: float
    method: str
    regulator: dict = field(default_factory=dict)
    seed: int | None = None
    n_nodes: int = 0
    warnings: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stat_error < 0:
            raise ValueError("stat_error must be nonnegative")

    def to_dict(self) -> dict:
        return {"value": [self.value.real, self.value.imag], "stat_error": self.stat_error,
                "method": self.method, "regulator": self.regulator, "seed": self.seed,
                "n_nodes": self.n_nodes, "warnings": list(self.warnings), "details": self.details}


@dataclass
class QuadOptions:
    mode: str = "exact"            # exact | gaussian | sinc
    eta: float = 0.2
    nodes_per_axis: int = 24
    max_nodes: int = 200_000
    mc_samples: int = 1 << 15
    method: str = "auto"           # auto | tensor | mc
    seed: int = 0
    chunk: int = 20_000
    error_estimate: bool = True
    sphere_order: int = 12
    widen: float = 1.5             # proposal variance / packet variance


def nascent_delta(x, eta: float, kind: str = "gaussian"):
    x = np.asarray(x, dtype=float)
    if kind == "gaussian":
        return np.exp(-0.5 * (x / eta) ** 2) / (math.sqrt(2 * math.pi) * eta)
    if kind == "sinc":
        return np.sinc(x / (math.pi * eta)) / (math.pi * eta)
    raise ValueError(f"unknown regulator {kind!r}")


# --- Gaussian rules --------------------------------------------------------

def _gh_rule(dim: int, n_ax: int):
    x, w = hermegauss(n_ax)
    w = w / math.sqrt(2 * math.pi)
    grids = np.array(list(itertools.product(range(n_ax), repeat=dim)))
    return x[grids], np.prod(w[grids], axis=1)


def _std_normal_rule(dim: int, opts: QuadOptions, coarse: bool = False):
    """Nodes/weights for E[h(x)], x ~ N(0, I_dim); returns (x, w, method, n_ax)."""
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1), "tensor_quadrature", 0
    use_tensor = opts.method == "tensor" or (opts.method == "auto" and dim <= MAX_TENSOR_DIM)
    if use_tensor:
        n_ax = min(opts.nodes_per_axis, max(3, int(math.floor(opts.max_nodes ** (1.0 / dim) + 1e-9))))
        if coarse:
            n_ax = max(2, int(round(n_ax * 2 / 3)))
        x, w = _gh_rule(dim, n_ax)
        return x, w, "tensor_quadrature", n_ax
    rng = np.random.Generator(np.random.Philox(opts.seed + (7919 if coarse else 0)))
    n = opts.mc_samples
    x = rng.standard_normal((n, dim))
    return x, np.full(n, 1.0 / n), "monte_carlo", 0


def _gaussian_map(mean, prec):
    """y = mean + A x with x ~ N(0, I) has precision prec; returns A and log det of A."""
    # Cholesky rather than eigh: degenerate eigenspaces would rotate the grid arbitrarily
    try:
        C = np.linalg.cholesky(0.5 * (prec + prec.T))
    except np.linalg.LinAlgError:
        raise ValueError("proposal precision is not positive definite") from None
    A = np.linalg.inv(C).T
    return A, -float(np.sum(np.log(np.diag(C))))


# --- constraint geometry ---------------------------------------------------

class ShellSystem:
    """Momenta p_j (frame spatial coords) as linear functions of free variables y."""

    def __init__(self, masses, signs, d: int, frame=None):
        self.masses = np.asarray(masses, dtype=float)
        self.signs = np.asarray(signs, dtype=float)
        self.n = len(self.masses)
        self.d = d
        self.frame = np.eye(d) if frame is None else np.asarray(frame, dtype=float)
        sd = d - 1
        n = self.n
        self.dim = (n - 1) * sd
        T = np.zeros((n, sd, self.dim))
        for j in range(n - 1):
            T[j, :, j * sd:(j + 1) * sd] = np.eye(sd)
        # sum_j s_j p_j = 0  =>  p_n = -s_n sum_{j<n} s_j p_j
        for j in range(n - 1):
            T[n - 1] += -self.signs[-1] * self.signs[j] * T[j]
        self.T = T

    def spatial(self, y):
        return np.einsum("jab,...b->...ja", self.T, y)

    def energy_gap(self, y):
        sp = self.spatial(y)
        return np.sum(self.signs * omega(self.masses, sp), axis=-1)

    def energy_gap_grad(self, y):
        sp = self.spatial(y)
        w = omega(self.masses, sp)
        v = self.signs[:, None] * sp / w[..., None]     # (..., n, sd)
        return np.einsum("...ja,jab->...b", v, self.T)

    def lab_momenta(self, y):
        sp = self.spatial(y)
        w = omega(self.masses, sp)
        pf = np.concatenate([w[..., None], sp], axis=-1)
        return pf @ self.frame.T

    def measure(self, y):
        sp = self.spatial(y)
        return np.prod(1.0 / (2 * omega(self.masses, sp)), axis=-1)

    def proposal(self, guide_means, guide_precs):
        P = np.zeros((self.dim, self.dim))
        b = np.zeros(self.dim)
        for j in range(self.n):
            TQ = self.T[j].T @ guide_precs[j]
            P += TQ @ self.T[j]
            b += TQ @ guide_means[j]
        return np.linalg.solve(P, b), P


def _sphere(dim: int, order: int):
    """Unit vectors in R^dim with weights summing to the area of S^{dim-1}."""
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    m_phi = order + 1
    phi = 2 * np.pi * np.arange(m_phi) / m_phi
    nodes = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    weights = np.full(m_phi, 2 * np.pi / m_phi)
    for k in range(2, dim):
        m = order // 2 + 2
        x, wx = roots_gegenbauer(m, (k - 1) / 2.0)
        s = np.sqrt(1 - x**2)
        nodes = np.concatenate([np.repeat(x, len(nodes))[:, None],
                                np.tile(nodes, (m, 1)) * np.repeat(s, len(nodes))[:, None]], axis=1)
        weights = np.repeat(wx, len(weights)) * np.tile(weights, m)
    return nodes, weights


def _sphere_area(dim: int) -> float:
    return 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)


def _random_directions(n: int, dim: int, rng):
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _boost_from_rest(K, prest):
    """Apply the pure boost taking (sqrt(K^2), 0) to K, row by row."""
    m = np.sqrt(K[..., 0] ** 2 - np.sum(K[..., 1:] ** 2, axis=-1))
    g0 = K[..., 0] / m
    v = K[..., 1:] / m[..., None]
    vp = np.sum(v * prest[..., 1:], axis=-1)
    e = g0 * prest[..., 0] + vp
    sp = v * prest[..., :1] + prest[..., 1:] + v * (vp / (1 + g0))[..., None]
    return np.concatenate([e[..., None], sp], axis=-1)


class PairSurface:
    """Energy-momentum surface parametrised by free shell momenta and one two-body direction.

    Momenta i, j (same sign s) carry the constraint: s (p_i + p_j) = -sum_{l free} s_l p_l
    up to an energy offset, so their total K is fixed and the relative direction in the
    K rest frame is the only remaining variable.
    """

    def __init__(self, masses, signs, d: int, frame=None):
        self.masses = np.asarray(masses, dtype=float)
        self.signs = np.asarray(signs, dtype=float)
        self.n = len(self.masses)
        self.d = d
        self.frame = np.eye(d) if frame is None else np.asarray(frame, dtype=float)
        pair = None
        for i in reversed(range(self.n)):
            for j in reversed(range(i)):
                if self.signs[i] == self.signs[j]:
                    pair = (j, i)
                    break
            if pair:
                break
        if pair is None:
            raise ValueError("surface parametrisation needs two momenta with the same sign")
        self.pair = pair
        self.free = [l for l in range(self.n) if l not in pair]
        self.s = self.signs[pair[0]]
        self.sd = d - 1
        self.dim = len(self.free) * self.sd

    def proposal(self, guide_means, guide_precs):
        """Gaussian over free spatial momenta including the pair's pull on their total."""
        sd = self.sd
        P = np.zeros((self.dim, self.dim))
        b = np.zeros(self.dim)
        for r, l in enumerate(self.free):
            sl = slice(r * sd, (r + 1) * sd)
            P[sl, sl] += guide_precs[l]
            b[sl] += guide_precs[l] @ guide_means[l]
        i, j = self.pair
        cov = np.linalg.inv(guide_precs[i]) + np.linalg.inv(guide_precs[j])
        QK = np.linalg.inv(cov)
        mK = guide_means[i] + guide_means[j]
        T = np.zeros((sd, self.dim))
        for r, l in enumerate(self.free):
            T[:, r * sd:(r + 1) * sd] = -self.s * self.signs[l] * np.eye(sd)
        P += T.T @ QK @ T
        b += T.T @ QK @ mK
        self.guide_mean_i = np.asarray(guide_means[i], dtype=float)
        self.guide_prec_i = np.asarray(guide_precs[i], dtype=float)
        return np.linalg.solve(P, b), P

    def total(self, z, offset=0.0):
        """Pair total K (frame coords) from free spatial momenta z (..., dim)."""
        sp = z.reshape(z.shape[:-1] + (len(self.free), self.sd))
        w = omega(self.masses[self.free], sp)
        sf = self.signs[self.free]
        K0 = self.s * (offset - np.sum(sf * w, axis=-1))
        Ks = -self.s * np.einsum("l,...la->...a", sf, sp)
        return np.concatenate([K0[..., None], Ks], axis=-1), sp, w

    def momenta(self, z, nhat, offset=0.0):
        """Lab momenta (..., n, d), phase-space weight and support mask."""
        K, sp, w = self.total(z, offset)
        i, j = self.pair
        mi, mj = self.masses[i], self.masses[j]
        s2 = K[..., 0] ** 2 - np.sum(K[..., 1:] ** 2, axis=-1)
        good = (K[..., 0] > 0) & (s2 > (mi + mj) ** 2)
        s2g = np.where(good, s2, (mi + mj + 1.0) ** 2)
        rs = np.sqrt(s2g)
        lam = (s2g - (mi + mj) ** 2) * (s2g - (mi - mj) ** 2)
        k = np.sqrt(np.maximum(lam, 0.0)) / (2 * rs)
        Kg = np.where(good[..., None], K, np.concatenate([rs[..., None], np.zeros(K.shape[:-1] + (self.sd,))], axis=-1))
        pi_rest = np.concatenate([np.sqrt(mi**2 + k**2)[..., None], k[..., None] * nhat], axis=-1)
        pj_rest = np.concatenate([np.sqrt(mj**2 + k**2)[..., None], -k[..., None] * nhat], axis=-1)
        pi = _boost_from_rest(Kg, pi_rest)
        pj = _boost_from_rest(Kg, pj_rest)
        out = np.empty(z.shape[:-1] + (self.n, self.d))
        out[..., self.free, 0] = w
        out[..., self.free, 1:] = sp
        out[..., i, :] = pi
        out[..., j, :] = pj
        jac = np.prod(1.0 / (2 * w), axis=-1) * k ** (self.d - 3) / (4 * rs)
        return out @ self.frame.T, np.where(good, jac, 0.0), good


def _householder_frames(n0):
    """Rows n0 (..., m) unit; returns (..., m, m) orthogonal matrices with first column n0."""
    m = n0.shape[-1]
    e1 = np.zeros(m)
    e1[0] = 1.0
    v = e1 - n0
    vv = np.sum(v * v, axis=-1)
    safe = vv > 1e-24
    H = np.eye(m) - 2 * v[..., :, None] * v[..., None, :] / np.where(safe, vv, 1.0)[..., None, None]
    H = np.where(safe[..., None, None], H, np.eye(m))
    return H     # symmetric reflection: H e1 = n0


def _direction_guide(surf: PairSurface, z, offset):
    """Predicted unit direction of the pair's first momentum in the K rest frame, and k*."""
    K, _, _ = surf.total(z, offset)
    i, j = surf.pair
    mi, mj = surf.masses[i], surf.masses[j]
    s2 = K[..., 0] ** 2 - np.sum(K[..., 1:] ** 2, axis=-1)
    good = (K[..., 0] > 0) & (s2 > (mi + mj) ** 2)
    s2g = np.where(good, s2, (mi + mj + 1.0) ** 2)
    rs = np.sqrt(s2g)
    k = np.sqrt(np.maximum((s2g - (mi + mj) ** 2) * (s2g - (mi - mj) ** 2), 0.0)) / (2 * rs)
    y = surf.guide_mean_i
    p = np.concatenate([[omega(mi, y)], y])
    Kinv = np.where(good[..., None], K * np.concatenate([[1.0], -np.ones(surf.sd)]), 0.0)
    Kinv[..., 0] = np.where(good, K[..., 0], rs)
    prest = _boost_from_rest(Kinv, np.broadcast_to(p, K.shape))
    sp = prest[..., 1:]
    nrm = np.linalg.norm(sp, axis=-1)
    fallback = np.zeros(sp.shape)
    fallback[..., 0] = 1.0
    n0 = np.where((nrm > 1e-12)[..., None], sp / np.where(nrm > 1e-12, nrm, 1.0)[..., None], fallback)
    return n0, np.maximum(k, 1e-12)


def _surface_integrate(integrand, surf: PairSurface, mu, P, opts, eta: float):
    """Gaussian proposal on free momenta, importance-mapped pair direction, optional energy offset."""
    kind = opts.mode
    dim_z = surf.dim
    extra = 1 if eta > 0 else 0
    sdir = surf.sd                      # direction lives on S^{sd-1}
    tdim = sdir - 1                     # tangent dimension
    if dim_z > 0:
        A, logdetA = _gaussian_map(mu, P)
        lognorm = 0.5 * dim_z * math.log(2 * math.pi) + logdetA
    if extra:
        e_sd = eta if kind == "gaussian" else max(eta, _energy_spread(surf, mu, P))
    # angular spread at the proposal mean decides between a uniform and a gnomonic direction rule
    n_mu, k_mu = _direction_guide(surf, mu[None, :] if dim_z else np.zeros((1, 0)), 0.0)
    sig_p = math.sqrt(max(np.trace(np.linalg.inv(surf.guide_prec_i)) / sdir, 1e-30)) * math.sqrt(opts.widen)
    gnomonic = sig_p / float(k_mu[0]) < 0.3
    dim = dim_z + extra + (tdim if gnomonic else 0)

    def base(x):
        if dim_z:
            z = mu + x[:, :dim_z] @ A.T
            wz = np.exp(0.5 * np.sum(x[:, :dim_z] ** 2, axis=-1) + lognorm)
        else:
            z = np.zeros((len(x), 0))
            wz = np.ones(len(x))
        off = 0.0
        if extra:
            t = x[:, dim_z]
            off = e_sd * t
            if kind != "gaussian":
                phi = np.exp(-0.5 * t**2) / (math.sqrt(2 * math.pi) * e_sd)
                wz = wz * nascent_delta(off, eta, kind) / phi
        return z, off, wz

    def gnomonic_dirs(z, off, xt):
        """Both hemispheres: directions (2N, sdir) and solid-angle weights over the proposal."""
        n0, k = _direction_guide(surf, z, off)
        sw = np.minimum(sig_p / k, 1.0)
        w = xt * sw[:, None]
        H = _householder_frames(n0)
        v = n0 + np.einsum("nab,nb->na", H[:, :, 1:], w)
        r2 = np.sum(w * w, axis=-1)
        nh = v / np.sqrt(1 + r2)[:, None]
        dens = (1 + r2) ** (-0.5 * sdir)
        phi = np.exp(-0.5 * np.sum(xt * xt, axis=-1)) / (math.sqrt(2 * math.pi) * sw) ** tdim
        wt = dens / phi
        return nh, wt

    def evaluate(x):
        """Integrand times weights at standard-normal points x (rows); directions appended if gnomonic."""
        z, off, wz = base(x)
        if gnomonic:
            xt = x[:, dim_z + extra:]
            nh, wt = gnomonic_dirs(z, off, xt)
            total = 0.0
            for sgn in (1.0, -1.0):
                mom, jac, good = surf.momenta(z, sgn * nh, off)
                total = total + np.where(good, integrand(mom), 0.0) * jac
            return total * wz * wt
        return None

    use_tensor = opts.method == "tensor" or (opts.method == "auto" and dim <= MAX_SURFACE_TENSOR_DIM)
    if use_tensor:
        def run(coarse):
            if gnomonic:
                n_ax = min(opts.nodes_per_axis, max(3, int(math.floor((opts.max_nodes / 2) ** (1.0 / max(dim, 1)) + 1e-9))))
                if coarse:
                    n_ax = max(2, int(round(n_ax * 2 / 3)))
                x, wx = _gh_rule(dim, n_ax) if dim else (np.zeros((1, 0)), np.ones(1))
                total = 0j
                for s0 in range(0, len(x), opts.chunk):
                    total += np.sum(wx[s0:s0 + opts.chunk] * evaluate(x[s0:s0 + opts.chunk]))
                return total, 2 * len(x), n_ax
            order = opts.sphere_order if not coarse else max(2, (2 * opts.sphere_order) // 3)
            nh, wh = _sphere(sdir, order)
            budget = max(1.0, opts.max_nodes / len(wh))
            n_ax = min(opts.nodes_per_axis, max(3, int(math.floor(budget ** (1.0 / max(dim, 1)) + 1e-9)))) if dim else 0
            if coarse and dim:
                n_ax = max(2, int(round(n_ax * 2 / 3)))
            x, wx = _gh_rule(dim, n_ax) if dim else (np.zeros((1, 0)), np.ones(1))
            total = 0j
            step = max(1, opts.chunk // len(wh))
            for s0 in range(0, len(x), step):
                xs = x[s0:s0 + step]
                z, off, wz = base(xs)
                zz = np.repeat(z, len(wh), axis=0)
                oo = np.repeat(off, len(wh)) if np.ndim(off) else off
                nn = np.tile(nh, (len(xs), 1))
                mom, jac, good = surf.momenta(zz, nn, oo)
                v = np.where(good, integrand(mom), 0.0) * jac
                w = np.repeat(wx[s0:s0 + step] * wz, len(wh)) * np.tile(wh, len(xs))
                total += np.sum(w * v)
            return total, len(x) * len(wh), n_ax
        val, nn, n_ax = run(False)
        err = abs(val - run(True)[0]) if opts.error_estimate else 0.0
        method = "tensor_quadrature"
    else:
        rng = np.random.Generator(np.random.Philox(opts.seed))
        n = opts.mc_samples
        x = rng.standard_normal((n, dim))
        nh_all = None if gnomonic else _random_directions(n, sdir, rng)
        vals = []
        for s0 in range(0, n, opts.chunk):
            xs = x[s0:s0 + opts.chunk]
            if gnomonic:
                vals.append(evaluate(xs))
            else:
                z, off, wz = base(xs)
                mom, jac, good = surf.momenta(z, nh_all[s0:s0 + opts.chunk], off)
                vals.append(np.where(good, integrand(mom), 0.0) * jac * wz * _sphere_area(sdir))
        vals = np.concatenate(vals)
        val = np.mean(vals)
        err = float(np.std(vals) / math.sqrt(n))
        nn, n_ax, method = n, 0, "monte_carlo"
    return EvalReport(complex(val), float(err), method, {"mode": opts.mode if eta > 0 else "exact", "eta": eta},
                      opts.seed, nn, details={"nodes_per_axis": n_ax, "dim": dim, "gnomonic": bool(gnomonic)})


def _energy_spread(surf: PairSurface, mu, P) -> float:
    """Rough standard deviation of the pair's invariant energy under the proposal."""
    cov = np.linalg.inv(P)
    sd = surf.sd
    var = 0.0
    for r, l in enumerate(surf.free):
        var += np.trace(cov[r * sd:(r + 1) * sd, r * sd:(r + 1) * sd])
    return float(math.sqrt(max(var, 1e-12)))


def shell_integrate(integrand, masses, signs, d: int, guide_means, guide_precs,
                    opts: QuadOptions | None = None, frame=None) -> EvalReport:
    """int prod dp_j/(2w_j) delta^d(sum s_j p_j) integrand(P_lab), P_lab of shape (N, n, d)."""
    opts = opts or QuadOptions()
    system = ShellSystem(masses, signs, d, frame)
    warn = []
    if len(system.masses) < 2:
        raise ValueError("need at least two momenta")
    signs_arr = system.signs
    if np.all(signs_arr > 0) or np.all(signs_arr < 0):
        # sum of positive energies never vanishes
        return EvalReport(0j, 0.0, "empty_support", {"mode": opts.mode, "eta": opts.eta}, opts.seed)
    mu, P = system.proposal(guide_means, guide_precs)
    if singular_within(system, mu, P):
        warn.append("singular configuration within 5 sigma of the packet support")
    if opts.mode not in ("exact", "gaussian", "sinc"):
        raise ValueError(f"unknown integration mode {opts.mode!r}")
    surf = PairSurface(masses, signs, d, frame)
    mz, Pz = surf.proposal(np.asarray(guide_means, dtype=float), np.asarray(guide_precs, dtype=float))
    eta = 0.0 if opts.mode == "exact" else float(opts.eta)
    rep = _surface_integrate(integrand, surf, mz, Pz / opts.widen, opts, eta)
    rep.warnings.extend(warn)
    return rep


def _evaluate_rule(fn, x, w, chunk):
    total = 0j
    vals = []
    for s in range(0, len(x), chunk):
        v = fn(x[s:s + chunk])
        vals.append(v)
        total += np.sum(w[s:s + chunk] * v)
    return total, np.concatenate(vals) if vals else np.zeros(0)


def _run_rule(fn, dim, opts):
    x, w, method, n_ax = _std_normal_rule(dim, opts)
    val, vals = _evaluate_rule(fn, x, w, opts.chunk)
    if method == "monte_carlo":
        err = float(np.std(vals) / math.sqrt(len(vals)))
    elif opts.error_estimate and dim > 0:
        xc, wc, _, _ = _std_normal_rule(dim, opts, coarse=True)
        valc, _ = _evaluate_rule(fn, xc, wc, opts.chunk)
        err = float(abs(val - valc))
    else:
        err = 0.0
    return val, err, method, len(w), n_ax


def gaussian_integrate(integrand, mean, prec, opts: QuadOptions | None = None) -> EvalReport:
    """int dy integrand(y) with a Gaussian proposal (mean, precision); no constraint."""
    opts = opts or QuadOptions()
    mean = np.asarray(mean, dtype=float)
    dim = len(mean)
    A, logdetA = _gaussian_map(mean, np.asarray(prec) / opts.widen)
    lognorm = 0.5 * dim * math.log(2 * math.pi) + logdetA

    def fn(x):
        y = mean + x @ A.T
        return integrand(y) * np.exp(0.5 * np.sum(x**2, axis=-1) + lognorm)

    val, err, method, nn, n_ax = _run_rule(fn, dim, opts)
    return EvalReport(complex(val), err, method, {}, opts.seed, nn, details={"nodes_per_axis": n_ax})


def richardson(values, etas, power: int = 2):
    """Extrapolate v(eta) = v0 + c eta^power + ... from a halving schedule."""
    values = [complex(v) for v in values]
    if len(values) == 1:
        return values[0], 0.0
    r = 2.0**power
    tab = [values]
    while len(tab[-1]) > 1:
        prev = tab[-1]
        tab.append([(r * prev[i + 1] - prev[i]) / (r - 1) for i in range(len(prev) - 1)])
        r *= 2.0**power
    best = tab[-1][0]
    lvl = tab[-2]
    err = abs(lvl[-1] - lvl[-2]) if len(lvl) > 1 else abs(best - lvl[-1])
    # the eta^power model fails near collinear points; never claim more than the last step
    err = max(err, abs(best - values[-1]))
    return best, float(err)


# --- Appendix A ------------------------------------------------------------

@dataclass
class SingularConfiguration:
    masses: tuple
    signs: tuple
    exists: bool
    base_momentum: np.ndarray | None = None
    family: np.ndarray | None = None        # p_j on the collinear family
    gradient_norm: float | None = None
    energy_residual: float | None = None


def constraint_gradient(spatial: np.ndarray, masses, signs) -> np.ndarray:
    """dP/dp_j for j < n on the surface p_n = -sum p_j; rows j = 1..n-1."""
    w = omega(np.asarray(masses), spatial)
    s = np.asarray(signs, dtype=float)
    v = s[:, None] * spatial / w[:, None]
    return v[:-1] - v[-1]


def energy_sum(spatial, masses, signs) -> float:
    return float(np.sum(np.asarray(signs) * omega(np.asarray(masses), spatial)))


def singular_configuration(masses, signs, base=None, tol: float = 1e-12) -> SingularConfiguration:
    """Collinear family p_j/m_j = s_j p_1/m_1 where the gradient of the energy sum vanishes."""
    masses = np.asarray(masses, dtype=float)
    signs = np.asarray(signs, dtype=int)
    if not (np.any(signs > 0) and np.any(signs < 0)):
        raise ValueError("need at least one + and one - sign")
    if signs[0] != 1:
        raise ValueError("first sign must be + (s_1 = 1)")
    smass = float(np.sum(signs * masses))
    exists = abs(smass) <= tol * np.sum(masses)
    if not exists:
        return SingularConfiguration(tuple(masses), tuple(signs), False)
    d1 = 3 if base is None else len(base)
    p1 = np.array([0.7, -0.3, 0.4][:d1]) if base is None else np.asarray(base, dtype=float)
    fam = signs[:, None] * masses[:, None] * p1[None, :] / masses[0]
    gnorm = float(np.linalg.norm(constraint_gradient(fam, masses, signs)))
    res = energy_sum(fam, masses, signs)
    return SingularConfiguration(tuple(masses), tuple(signs), True, p1, fam, gnorm, res)


def singular_within(system: ShellSystem, mu, P, radius: float = 5.0) -> bool:
    """True if a point of the collinear family lies within `radius` sigma of the proposal."""
    s = system.signs
    if abs(np.sum(s * system.masses)) > 1e-12 * np.sum(system.masses) or s[0] != 1:
        return False
    sd = system.d - 1
    # family parametrised by p_1: y = (s_j m_j/m_1 p_1)_{j<n}; choose p_1 minimising the Mahalanobis distance
    B = np.zeros((system.dim, sd))
    for j in range(system.n - 1):
        B[j * sd:(j + 1) * sd] = s[j] * system.masses[j] / system.masses[0] * np.eye(sd)
    M = B.T @ P @ B
    p1 = np.linalg.solve(M, B.T @ P @ mu)
    r = B @ p1 - mu
    return bool(r @ P @ r <= radius**2)


def summability_exponent(d: int, n: int) -> dict:
    if n < 4 or n % 2:
        raise ValueError("n must be an even integer >= 4")
    e = (d - 1) * (n - 2) - 3
    return {"d": d, "n": n, "exponent": e, "integrable": e > -1}


def radial_closed_form(e: int, eps: float) -> float:
    if e == -1:
        return math.log(1.0 / eps)
    return (1.0 - eps ** (e + 1)) / (e + 1)


def radial_convergence_study(d: int, n: int, epsilons) -> dict:
    eps = [float(x) for x in epsilons]
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be positive and strictly decreasing")
    e = (d - 1) * (n - 2) - 3
    rows = []
    for x in eps:
        val, _ = quad(lambda r: r**e, x, 1.0, epsabs=0, epsrel=1e-13, limit=200, points=None)
        rows.append({"eps": x, "quadrature": val, "closed_form": radial_closed_form(e, x)})
    logs = np.log(1.0 / np.array(eps))
    vals = np.array([r["quadrature"] for r in rows])
    slope = float(np.polyfit(logs, vals, 1)[0]) if len(eps) > 1 else float("nan")
    return {"d": d, "n": n, "exponent": e, "rows": rows, "log_slope": slope,
            "max_closed_form_error": max(abs(r["quadrature"] - r["closed_form"]) for r in rows)}
