"""Resolvents of sampled matrices and the empirical checks built on them.

Every check works from one eigendecomposition per sample, shared by all spectral
parameters and all observables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .ensemble import tridiagonal_gaussian, trial_rng
from .errors import InsufficientData
from .mde import DataPair, MdeSolution, solve_mde, scdos
from .selfenergy import normalize_class
from .shape import fit_power, fluctuation_scale_gap


class ResolventCache:
    """Eigendecomposition of a Hermitian matrix hosting G(z) = (H - z)^-1.

    Parameters
    ----------
    H : ndarray
        Hermitian matrix.
    vectors : bool
        Keep eigenvectors; without them only traces of G are available.
    """

    def __init__(self, H: np.ndarray, vectors: bool = True):
        self.H = H
        self.N = H.shape[0]
        if vectors:
            self.eigenvalues, self.U = np.linalg.eigh(H)
        else:
            self.eigenvalues, self.U = np.linalg.eigvalsh(H), None

    @classmethod
    def from_eigen(cls, eigenvalues, U=None, H=None):
        obj = cls.__new__(cls)
        obj.eigenvalues = np.asarray(eigenvalues)
        obj.U, obj.H, obj.N = U, H, len(obj.eigenvalues)
        return obj

    def _need_vectors(self):
        if self.U is None:
            raise ValueError("eigenvectors were not computed")

    def G(self, z: complex) -> np.ndarray:
        self._need_vectors()
        return (self.U / (self.eigenvalues - z)) @ self.U.conj().T

    def avg(self, z) -> np.ndarray | complex:
        """<G(z)> for scalar or array z."""
        z = np.asarray(z, dtype=complex)
        out = np.mean(1.0 / (self.eigenvalues[:, None] - z.ravel()[None, :]), axis=0)
        return complex(out[0]) if z.ndim == 0 else out.reshape(z.shape)

    def trace_with(self, B: np.ndarray, z) -> np.ndarray | complex:
        """<G(z) B> for scalar or array z."""
        self._need_vectors()
        w = np.real_if_close(np.einsum("ji,jk,ki->i", self.U.conj(), B, self.U))
        z = np.asarray(z, dtype=complex)
        out = (w[:, None] / (self.eigenvalues[:, None] - z.ravel()[None, :])).mean(axis=0)
        return complex(out[0]) if z.ndim == 0 else out.reshape(z.shape)

    def entry(self, x: np.ndarray, y: np.ndarray, z) -> np.ndarray | complex:
        """x* G(z) y for scalar or array z."""
        self._need_vectors()
        w = (self.U.conj().T @ x).conj() * (self.U.conj().T @ y)
        z = np.asarray(z, dtype=complex)
        out = (w[:, None] / (self.eigenvalues[:, None] - z.ravel()[None, :])).sum(axis=0)
        return complex(out[0]) if z.ndim == 0 else out.reshape(z.shape)

    def reconstruction_error(self, z: complex) -> float:
        if self.H is None:
            raise ValueError("matrix not stored")
        return float(np.linalg.norm((self.H - z * np.eye(self.N)) @ self.G(z) - np.eye(self.N), 2))


def resolvent(H: np.ndarray, z: complex) -> np.ndarray:
    """G = (H - z)^-1 assembled from the eigendecomposition of H."""
    if complex(z).imag == 0:
        raise ValueError("z must have nonzero imaginary part")
    return ResolventCache(H).G(z)


def ward_residual(cache: ResolventCache, z: complex) -> float:
    """| <G G*> - <Im G>/eta |."""
    G = cache.G(z)
    lhs = np.trace(G @ G.conj().T).real / cache.N
    rhs = np.trace((G - G.conj().T) / 2j).real / cache.N / complex(z).imag
    return float(abs(lhs - rhs))


def monotone_profile(cache: ResolventCache, u: np.ndarray, E: float, etas) -> np.ndarray:
    """eta * Im <u, G(E + i eta) u> on an increasing eta grid (nondecreasing in eta)."""
    etas = np.asarray(etas, dtype=float)
    return etas * np.imag(cache.entry(u, u, E + 1j * etas))


# ---------------------------------------------------------------- observables

def hs_norm(B: np.ndarray) -> float:
    """Normalized Hilbert-Schmidt norm <B B*>^(1/2)."""
    return float(np.sqrt(np.sum(np.abs(B) ** 2) / B.shape[0]))


@dataclass
class ObservableSet:
    """Deterministic test matrices and vectors for the local-law metrics."""

    matrices: dict
    vectors: dict

    @classmethod
    def standard(cls, N: int, seed: int = 0, klass="complex"):
        rng = np.random.default_rng([seed, N, 7])
        real = normalize_class(klass).startswith("real")
        def unit():
            v = rng.standard_normal(N) + (0 if real else 1j * rng.standard_normal(N))
            return v / np.linalg.norm(v)
        e1 = np.zeros(N)
        e1[0] = 1.0
        x, y = unit(), unit()
        y = y - (x.conj() @ y) * x
        y /= np.linalg.norm(y)
        R = rng.standard_normal((N, N)) + (0 if real else 1j * rng.standard_normal((N, N)))
        B_hs = R / hs_norm(R)
        B_op = R / np.linalg.norm(R, 2)
        traceless = np.sqrt(N) * np.outer(y, x.conj())
        mats = {"identity": np.eye(N), "rank-one": traceless, "random-hs": B_hs,
                "random-op": B_op}
        vecs = {"coordinate": e1, "uniform": np.ones(N) / np.sqrt(N), "random": x,
                "random-orth": y}
        return cls(mats, vecs)


# ---------------------------------------------------------------- metrics

def bracket(z: complex) -> float:
    return 1.0 + abs(z)


def support_distance(z: complex, bands) -> float:
    """Distance from z to the union of the closed intervals in ``bands``."""
    z = complex(z)
    best = np.inf
    for l, r in bands:
        dx = 0.0 if l <= z.real <= r else min(abs(z.real - l), abs(z.real - r))
        best = min(best, np.hypot(dx, z.imag))
    return float(best)


def _solution(model, z):
    return model if isinstance(model, MdeSolution) else solve_mde(model, z)


def average_law_metric(cache: ResolventCache, model, z: complex, B: np.ndarray,
                       bands=None) -> float:
    """|<(G - M) B>| <z> N dist(z, supp rho) / ||B||_hs.

    ``model`` is a DataPair or an already computed MdeSolution at z. Without
    ``bands`` z is taken to lie over the support, so that the distance is eta.
    """
    z = complex(z)
    sol = _solution(model, z)
    N = cache.N
    if B is None or (B.ndim == 2 and np.array_equal(B, np.eye(N))):
        diff = cache.avg(z) - sol.avg
        nb = 1.0
    else:
        diff = cache.trace_with(B, z) - np.trace(sol.M @ B) / N
        nb = hs_norm(B)
    dist = z.imag if bands is None else support_distance(z, bands)
    return float(abs(diff) * bracket(z) * N * dist / nb)


def iso_normalizer(rho: float, z: complex, N: int) -> float:
    return float(np.sqrt(rho / (bracket(z) ** 2 * N * complex(z).imag)))


def control_parameter(rho: float, z: complex, N: int) -> float:
    """Psi(z): isotropic normalizer plus 1/(<z>^2 N eta)."""
    z = complex(z)
    return iso_normalizer(rho, z, N) + 1.0 / (bracket(z) ** 2 * N * z.imag)


def isotropic_law_metric(cache: ResolventCache, model, z: complex, x: np.ndarray,
                         y: np.ndarray) -> float:
    """|(G - M)_xy| / (sqrt(rho/(<z>^2 N eta)) ||x|| ||y||)."""
    z = complex(z)
    sol = _solution(model, z)
    diff = cache.entry(x, y, z) - sol.quad(x, y)
    return float(abs(diff) / (iso_normalizer(sol.rho, z, cache.N)
                              * np.linalg.norm(x) * np.linalg.norm(y)))


def far_away_errors(cache: ResolventCache, model, z: complex, B: np.ndarray,
                    x: np.ndarray, y: np.ndarray) -> dict:
    """Raw errors rescaled by the far-away rates N <z>^2 and sqrt(N) <z>^2."""
    z = complex(z)
    sol = _solution(model, z)
    N = cache.N
    av = abs(cache.trace_with(B, z) - np.trace(sol.M @ B) / N) / hs_norm(B)
    iso = abs(cache.entry(x, y, z) - sol.quad(x, y)) / (np.linalg.norm(x) * np.linalg.norm(y))
    return {"average": float(av * N * bracket(z) ** 2),
            "isotropic": float(iso * np.sqrt(N) * bracket(z) ** 2)}


# ---------------------------------------------------------------- scaling study

def continued_fraction_g11(d: np.ndarray, e: np.ndarray, z) -> np.ndarray:
    """(T - z)^-1_{11} of the tridiagonal matrix with diagonal d, off-diagonal e."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    g = 1.0 / (d[-1] - z)
    for k in range(len(d) - 2, -1, -1):
        g = 1.0 / (d[k] - z - e[k] ** 2 * g)
    return g


@dataclass
class SpectralSample:
    """Eigenvalues plus a routine for the (1,1) resolvent entry of one sample."""

    eigenvalues: np.ndarray
    g11: callable


def tridiagonal_sampler(klass="complex"):
    """Sampler of GOE/GUE spectra and G_11 through the Householder tridiagonal form."""
    def draw(rng, N):
        d, e = tridiagonal_gaussian(rng, N, klass)
        lam = sla.eigvalsh_tridiagonal(d, e)
        return SpectralSample(lam, lambda z: continued_fraction_g11(d, e, z))
    return draw


def dense_sampler(make_matrix):
    """Sampler from a callable (rng, N) -> dense Hermitian matrix."""
    def draw(rng, N):
        cache = ResolventCache(make_matrix(rng, N))
        e1 = np.zeros(N)
        e1[0] = 1.0
        return SpectralSample(cache.eigenvalues, lambda z: cache.entry(e1, e1, z))
    return draw


@dataclass
class LocalLawReport:
    N: list
    etas: dict
    avg_raw_q: dict
    iso_raw_q: dict
    avg_norm_q: dict
    iso_norm_q: dict
    avg_eta_slopes: dict
    iso_eta_slopes: dict
    avg_N_slope: float
    iso_N_slope: float
    quantile: float
    raw: list = field(default_factory=list)

    def summary(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "raw"}


def scaling_study(model_for, Ns, trials: int, seed: int, E: float = 0.0, n_eta: int = 8,
                  eta_range=(-0.9, 0.1), sampler=None, quantile: float = 0.9,
                  keep_raw: bool = False) -> LocalLawReport:
    """Quantiles of raw and normalized local-law errors over N and eta.

    Parameters
    ----------
    model_for : callable
        N -> DataPair providing M(z); M_11 and <M> are read from its solution.
    Ns : sequence of int
    trials : int
    seed : int
    E : float
        Energy of the path z = E + i eta.
    n_eta : int
        Number of geometrically spaced eta values in [N^eta_range[0], eta_range[1]].
    sampler : callable, optional
        (rng, N) -> SpectralSample; GUE tridiagonal form by default.

    Returns
    -------
    LocalLawReport
        Raw-error log-log slopes in eta for each N, and the N-slope of the
        normalized metrics (worst quantile over the eta grid for each N).
    """
    if trials < 3 or len(Ns) < 2 or n_eta < 3:
        raise InsufficientData("need at least 3 trials, 2 sizes and 3 eta values")
    sampler = sampler or tridiagonal_sampler("complex")
    etas, aq, iq, anq, inq, asl, isl = {}, {}, {}, {}, {}, {}, {}
    raw = []
    for N in Ns:
        eta = np.geomspace(float(N) ** eta_range[0], eta_range[1], n_eta)
        z = E + 1j * eta
        model = model_for(N)
        sols = [solve_mde(model, zz) for zz in z]
        m_avg = np.array([s.avg for s in sols])
        m11 = np.array([s.M[0, 0] if s.m_vec is None else s.m_vec[0] for s in sols])
        rho = np.array([s.rho for s in sols])
        av = np.empty((trials, n_eta))
        iso = np.empty((trials, n_eta))
        for t in range(trials):
            smp = sampler(trial_rng(seed, N * 100003 + t), N)
            g_avg = np.mean(1.0 / (smp.eigenvalues[:, None] - z[None, :]), axis=0)
            av[t] = np.abs(g_avg - m_avg)
            iso[t] = np.abs(smp.g11(z) - m11)
        av_n = av * (1 + np.abs(z)) * N * eta
        iso_n = iso / np.sqrt(rho / ((1 + np.abs(z)) ** 2 * N * eta))
        etas[N] = eta.tolist()
        aq[N] = np.quantile(av, quantile, axis=0).tolist()
        iq[N] = np.quantile(iso, quantile, axis=0).tolist()
        anq[N] = np.quantile(av_n, quantile, axis=0).tolist()
        inq[N] = np.quantile(iso_n, quantile, axis=0).tolist()
        asl[N] = fit_power(eta, np.asarray(aq[N]))[0]
        isl[N] = fit_power(eta, np.asarray(iq[N]))[0]
        if keep_raw:
            raw.append({"N": N, "eta": eta, "avg": av, "iso": iso})
    Ns = list(Ns)
    a_worst = np.array([max(anq[N]) for N in Ns])
    i_worst = np.array([max(inq[N]) for N in Ns])
    return LocalLawReport(Ns, etas, aq, iq, anq, inq, asl, isl,
                          fit_power(np.array(Ns, float), a_worst)[0],
                          fit_power(np.array(Ns, float), i_worst)[0], quantile, raw)


# ---------------------------------------------------------------- classical locations

class DensityTable:
    """Cumulative distribution of the density, tabulated band by band.

    Each band uses the cosine substitution x = l + (r - l)(1 - cos t)/2, which keeps
    square-root edges resolved; the table is exact up to the trapezoid rule in t.
    """

    def __init__(self, model: DataPair, bands, nodes: int = 1500, eta_floor: float = 1e-9):
        xs, Fs = [], []
        total = 0.0
        for l, r in bands:
            t = np.linspace(0.0, np.pi, nodes + 1)
            x = l + (r - l) * (1 - np.cos(t)) / 2
            jac = (r - l) * np.sin(t) / 2
            rho = scdos(model, x, eta_floor)
            f = rho * jac
            cum = np.concatenate([[0.0], np.cumsum((f[1:] + f[:-1]) / 2 * np.diff(t))])
            xs.append(x)
            Fs.append(total + cum)
            total += cum[-1]
        self.x = np.concatenate(xs)
        self.F = np.concatenate(Fs) / total
        self.mass = total
        self.bands = list(bands)

    def cdf(self, E):
        return np.interp(E, self.x, self.F, left=0.0, right=1.0)

    def quantiles(self, N: int, offset: float = 0.5) -> np.ndarray:
        """gamma_k with N F(gamma_k) = k - offset, k = 1..N."""
        p = (np.arange(1, N + 1) - offset) / N
        return np.interp(p, self.F, self.x)

    def fluctuation_scale(self, E, N: int, iters: int = 60) -> np.ndarray:
        """eta_f with mass 1/N in [E - eta_f, E + eta_f] (energies in the support)."""
        E = np.atleast_1d(np.asarray(E, dtype=float))
        lo = np.zeros_like(E)
        hi = np.full_like(E, self.x[-1] - self.x[0])
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            small = self.cdf(E + mid) - self.cdf(E - mid) < 1.0 / N
            lo = np.where(small, mid, lo)
            hi = np.where(small, hi, mid)
        return 0.5 * (lo + hi)


def bulk_window(table: DensityTable, model: DataPair, fraction: float = 0.5, grid: int = 2001):
    """Interval hull of {E : rho(E) >= fraction * max rho} in the first band."""
    l, r = table.bands[0]
    E = np.linspace(l, r, grid)
    rho = scdos(model, E, 1e-9)
    keep = E[rho >= fraction * rho.max()]
    return float(keep.min()), float(keep.max())


@dataclass
class RigidityResult:
    max_deviation: float
    deviations: np.ndarray
    indices: np.ndarray
    offset: float


def rigidity_check(eigenvalues: np.ndarray, table: DensityTable, window=None,
                   offset: float = 0.5, eta_f=None) -> RigidityResult:
    """max_k |lambda_k - gamma_k| / eta_f(gamma_k) over classical locations in ``window``."""
    lam = np.sort(np.asarray(eigenvalues))
    N = len(lam)
    gamma = table.quantiles(N, offset)
    idx = np.arange(N) if window is None else np.flatnonzero(
        (gamma >= window[0]) & (gamma <= window[1]))
    ef = table.fluctuation_scale(gamma[idx], N) if eta_f is None else np.asarray(eta_f)
    dev = (lam[idx] - gamma[idx]) / ef
    return RigidityResult(float(np.abs(dev).max(initial=0.0)), dev, idx, offset)


# ---------------------------------------------------------------- bands and gaps

@dataclass
class BandMassResult:
    counts: list
    expected: list
    deviations: list
    integral: bool
    exact: bool


def band_mass_check(eigenvalues: np.ndarray, bands, masses, tol: float = 1e-3) -> BandMassResult:
    """Eigenvalue counts per band against N times the band mass.

    Each eigenvalue is attributed to the band whose closure is nearest.
    """
    lam = np.asarray(eigenvalues)
    N = len(lam)
    bands = list(bands)
    cuts = [0.5 * (bands[k][1] + bands[k + 1][0]) for k in range(len(bands) - 1)]
    which = np.searchsorted(np.asarray(cuts), lam)
    counts = np.bincount(which, minlength=len(bands)).tolist()
    expected = [N * float(m) for m in masses]
    integral = all(abs(e - round(e)) <= tol for e in expected)
    dev = [c - round(e) for c, e in zip(counts, expected)]
    return BandMassResult(counts, expected, dev, integral, all(d == 0 for d in dev))


def exclusion_interval(gap, N: int, eps: float):
    """Part of the gap deeper than N^eps eta_f from both endpoints (None if empty)."""
    em, ep = gap
    ef = fluctuation_scale_gap(ep - em, N)
    lo, hi = em + N ** eps * ef, ep - N ** eps * ef
    return (lo, hi) if lo < hi else None


def gap_exclusion_check(eigenvalues: np.ndarray, gaps, N: int, eps: float = 0.1) -> bool:
    """True iff no eigenvalue lies deeper than N^eps eta_f inside any of the gaps."""
    lam = np.asarray(eigenvalues)
    for gap in gaps:
        inner = exclusion_interval(gap, N, eps)
        if inner is not None and np.any((lam > inner[0]) & (lam < inner[1])):
            return False
    return True


# ---------------------------------------------------------------- eigenvectors

def probe_vectors(N: int, count: int = 10, seed: int = 12345, real: bool = False) -> np.ndarray:
    """Fixed random unit vectors (columns), independent of any sampled matrix."""
    rng = np.random.default_rng([seed, N])
    X = rng.standard_normal((N, count))
    if not real:
        X = X + 1j * rng.standard_normal((N, count))
    return X / np.linalg.norm(X, axis=0)


def delocalization_check(cache: ResolventCache, window=None, probes: np.ndarray | None = None) -> float:
    """max |<x, u_i>| sqrt(N) over eigenvectors with eigenvalue in ``window``.

    The probe set is the coordinate basis plus ``probes`` (10 fixed random unit
    vectors by default).
    """
    cache._need_vectors()
    N = cache.N
    lam = cache.eigenvalues
    sel = np.ones(N, bool) if window is None else (lam >= window[0]) & (lam <= window[1])
    U = cache.U[:, sel]
    if U.shape[1] == 0:
        return 0.0
    probes = probe_vectors(N, real=np.isrealobj(cache.U)) if probes is None else probes
    coord = np.abs(U).max()
    rand = np.abs(probes.conj().T @ U).max() if probes.size else 0.0
    return float(max(coord, rand) * np.sqrt(N))


# ---------------------------------------------------------------- counting by inertia

def count_below(H: np.ndarray, x: float) -> int:
    """Number of eigenvalues of H below x, from the inertia of an LDL* factorization."""
    N = H.shape[0]
    _, D, _ = sla.ldl(H - x * np.eye(N), hermitian=True)
    off = np.abs(np.diag(D, 1))
    d = np.real(np.diag(D))
    return int(np.count_nonzero(sla.eigvalsh_tridiagonal(d, off) < 0))


def band_counts_by_inertia(H: np.ndarray, bands) -> list:
    """Eigenvalue counts per band, split at the gap midpoints (as in band_mass_check)."""
    bands = list(bands)
    cuts = [0.5 * (bands[k][1] + bands[k + 1][0]) for k in range(len(bands) - 1)]
    below = [0] + [count_below(H, c) for c in cuts] + [H.shape[0]]
    return [below[k + 1] - below[k] for k in range(len(bands))]


def gap_exclusion_by_inertia(H: np.ndarray, gaps, N: int, eps: float = 0.1) -> bool:
    """gap_exclusion_check computed from two factorizations per gap."""
    for gap in gaps:
        inner = exclusion_interval(gap, N, eps)
        if inner is not None and count_below(H, inner[1]) != count_below(H, inner[0]):
            return False
    return True


def band_and_gap_by_inertia(H: np.ndarray, bands, gaps, N: int, eps: float):
    """Band counts (split at gap midpoints) and the exclusion verdict per trial.

    Uses two factorizations per gap when the exclusion interval is empty of
    eigenvalues, since its count below either end then equals the count below the
    midpoint.
    """
    below, excluded = [0], True
    for gap in gaps:
        mid = 0.5 * (gap[0] + gap[1])
        inner = exclusion_interval(gap, N, eps)
        if inner is not None and inner[0] < mid < inner[1]:
            a, b = count_below(H, inner[0]), count_below(H, inner[1])
            if a == b:
                below.append(a)
                continue
            excluded = False
        below.append(count_below(H, mid))
    below.append(H.shape[0])
    return [below[k + 1] - below[k] for k in range(len(bands))], excluded
