"""Correlated Wigner-type ensembles, covariance tensors and matrix OU flows.

Covariance tensors act as X -> E[Tr((H - EH) X) (H - EH)]. In the orthonormal
basis of the symmetry class (see ``selfenergy.hermitian_basis``) they are
symmetric d x d matrices, with I/N for GUE and 2I/N for GOE.

"White noise" below is the matrix whose class coordinates are i.i.d. standard
normal: sqrt(N) W_GUE or sqrt(N/2) W_GOE. The GOE/GUE matrix W_G equals
Sigma_G^{1/2} applied to it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotFull, NotFullEnough
from .mde import DataPair
from .selfenergy import (COMPLEX, REAL, DenseTensor, FilterSelfEnergy, SelfEnergy, WignerScalar,
                         autocorrelation, hermitian_basis, normalize_class,
                         polynomial_kernel)

NOISE_LAWS = ("gaussian", "rademacher", "shifted-mixture")

# two-component Gaussian mixture: weights (p, 1 - p) at means (2, -1/2) * MIX_LOC, unit variance
_MIX_P = 0.2
_MIX_LOC = 0.9
_MIX_SD = np.sqrt(1.0 - _MIX_LOC ** 2)


def trial_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for trial ``index`` of a run with master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def noise(rng: np.random.Generator, law: str, shape) -> np.ndarray:
    """Real i.i.d. samples with mean 0 and variance 1."""
    if law == "gaussian":
        return rng.standard_normal(shape)
    if law == "rademacher":
        return rng.choice(np.array([-1.0, 1.0]), size=shape)
    if law == "shifted-mixture":
        hi = rng.random(shape) < _MIX_P
        loc = np.where(hi, 2.0 * _MIX_LOC, -0.5 * _MIX_LOC)
        return loc + _MIX_SD * rng.standard_normal(shape)
    raise ValueError(f"unknown noise law {law!r}")


def noise_third_cumulant(law: str) -> float:
    if law in ("gaussian", "rademacher"):
        return 0.0
    if law == "shifted-mixture":
        # third moment of the two-point law (2, -1/2) with weights (0.2, 0.8), scaled
        return float(_MIX_LOC ** 3 * (_MIX_P * 8.0 - (1 - _MIX_P) * 0.125))
    raise ValueError(f"unknown noise law {law!r}")


def white_noise(rng: np.random.Generator, N: int, klass: str) -> np.ndarray:
    """Matrix with i.i.d. standard normal class coordinates."""
    klass = normalize_class(klass)
    if klass == REAL:
        G = rng.standard_normal((N, N))
        return (G + G.T) / 2
    G = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(2)
    return (G + G.conj().T) / np.sqrt(2)


def gaussian_matrix(rng: np.random.Generator, N: int, klass: str) -> np.ndarray:
    """GOE/GUE matrix with E|w_ij|^2 = 1/N off the diagonal."""
    klass = normalize_class(klass)
    if klass == REAL:
        G = rng.standard_normal((N, N))
        return (G + G.T) / np.sqrt(2 * N)
    G = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(2)
    return (G + G.conj().T) / np.sqrt(2 * N)


def tridiagonal_gaussian(rng: np.random.Generator, N: int, klass: str):
    """Householder tridiagonal form of a GOE/GUE matrix (same law of spectrum and G_11).

    Returns the diagonal and off-diagonal of the tridiagonal matrix.
    """
    klass = normalize_class(klass)
    k = np.arange(N - 1, 0, -1)
    if klass == REAL:
        d = rng.standard_normal(N) * np.sqrt(2.0)
        e = np.sqrt(rng.chisquare(k))
    else:
        d = rng.standard_normal(N)
        e = np.sqrt(rng.chisquare(2 * k) / 2)
    return d / np.sqrt(N), e / np.sqrt(N)


def to_coordinates(X: np.ndarray, klass: str) -> np.ndarray:
    """Coordinates Tr(B_c X) of a class matrix in the orthonormal basis."""
    N = X.shape[0]
    B = hermitian_basis(N, klass)
    return np.real(np.einsum("cij,ji->c", B, X))


def from_coordinates(x: np.ndarray, N: int, klass: str) -> np.ndarray:
    B = hermitian_basis(N, klass)
    out = np.tensordot(x, B, axes=1)
    return out.real if normalize_class(klass) == REAL else out


def gaussian_coordinate_covariance(N: int, klass: str) -> np.ndarray:
    d = N * N if normalize_class(klass) == COMPLEX else N * (N + 1) // 2
    return np.eye(d) * (2.0 if normalize_class(klass) == REAL else 1.0) / N


def psd_sqrt(C: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(C)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


# ---------------------------------------------------------------- correlation models

class CorrelationModel:
    """Law of the centred part W of H = A + W."""

    variant = "abstract"

    def __init__(self, N: int, klass: str):
        self.N = int(N)
        self.klass = normalize_class(klass)

    @property
    def real(self) -> bool:
        return self.klass == REAL

    def sample_w(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sigma(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sigma_sqrt(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def self_energy(self) -> SelfEnergy:
        raise NotImplementedError

    def fullness(self) -> float:
        """Largest c with N E|Tr WX|^2 >= c Tr X^2 on the class (analytic)."""
        raise NotImplementedError

    def third_cumulant(self) -> float:
        return 0.0

    def coordinate_covariance(self) -> np.ndarray:
        """Covariance of the class coordinates of W (d x d), for small N."""
        B = hermitian_basis(self.N, self.klass)
        return np.array([to_coordinates(self.sigma(b if not self.real else b.real), self.klass)
                         for b in B])

    def covariance_entry(self, alpha, beta) -> complex:
        """E[w_alpha w_beta] for index pairs alpha = (a, b), beta = (c, d)."""
        raise NotImplementedError

    def params(self) -> dict:
        return {"variant": self.variant, "N": self.N, "class": self.klass}


class IndependentGaussian(CorrelationModel):
    variant = "independent-gaussian"

    def sample_w(self, rng):
        return gaussian_matrix(rng, self.N, self.klass)

    def sigma(self, X):
        X = np.asarray(X)
        return (X + X.T) / self.N if self.real else X / self.N

    def sigma_sqrt(self, X):
        return np.sqrt(2.0 / self.N) * X if self.real else X / np.sqrt(self.N)

    def self_energy(self):
        return WignerScalar(self.N, self.klass)

    def fullness(self):
        return 2.0 if self.real else 1.0

    def covariance_entry(self, alpha, beta):
        (a, b), (c, d) = alpha, beta
        v = float(a == d and b == c)
        if self.real:
            v += float(a == c and b == d)
        return v / self.N


class DenseGaussian(CorrelationModel):
    """Gaussian W with an explicit covariance on class coordinates (N <= 64)."""

    variant = "dense-gaussian"
    max_N = 64

    def __init__(self, C: np.ndarray, N: int, klass: str):
        super().__init__(N, klass)
        if N > self.max_N:
            raise ValueError(f"dense covariance limited to N <= {self.max_N}")
        C = np.asarray(C, dtype=float)
        d = N * N if not self.real else N * (N + 1) // 2
        if C.shape != (d, d) or not np.allclose(C, C.T, atol=1e-14):
            raise ValueError("coordinate covariance must be symmetric d x d")
        w = np.linalg.eigvalsh(C)
        if w[0] < -1e-12 * max(1.0, w[-1]):
            raise ValueError("coordinate covariance must be positive semidefinite")
        self.C = C
        self._root = psd_sqrt(C)
        self._basis = hermitian_basis(N, klass)
        self._lam_min = float(w[0])

    @classmethod
    def random(cls, N: int, klass: str, full: float = 0.5, rank: int | None = None,
               seed: int = 0) -> "DenseGaussian":
        """C = C_G (full I + (1 - full) V V^t) with V a random d x rank frame, scaled to unit trace weight."""
        rng = np.random.default_rng(seed)
        CG = gaussian_coordinate_covariance(N, klass)
        d = CG.shape[0]
        rank = rank or max(1, d // 4)
        V = rng.standard_normal((d, rank))
        P = V @ V.T * (d / np.trace(V @ V.T))
        return cls(CG @ (full * np.eye(d) + (1 - full) * P), N, klass)

    def _coords(self, X):
        return np.real(np.einsum("cij,ji->c", self._basis, X))

    def _matrix(self, x):
        out = np.tensordot(x, self._basis, axes=1)
        return out.real if self.real else out

    def sample_w(self, rng):
        return self._matrix(self._root @ rng.standard_normal(self.C.shape[0]))

    def sigma(self, X):
        return self._matrix(self.C @ self._coords(X))

    def sigma_sqrt(self, X):
        return self._matrix(self._root @ self._coords(X))

    def self_energy(self):
        return DenseTensor.from_coordinates(self.C, self.N, self.klass)

    def fullness(self):
        return self.N * self._lam_min

    def coordinate_covariance(self):
        return self.C.copy()

    def covariance_entry(self, alpha, beta):
        (a, b), (c, d) = alpha, beta
        B = self._basis
        return complex(B[:, a, b] @ self.C @ B[:, c, d])


class FilterModel(CorrelationModel):
    """W = (Y + Y*) / sqrt(2N) with Y = phi (*) xi, xi i.i.d. noise on the index torus.

    In the complex class the noise is (xi' + i xi'') / sqrt(2). The covariance
    tensor is the Fourier multiplier (|phi^(theta)|^2 + |phi^(theta^t)|^2) / (2N),
    doubled in the real class.
    """

    variant = "filter"

    def __init__(self, N: int, klass: str, decay: float = 3.0, radius: int | None = None,
                 law: str = "gaussian", phi: np.ndarray | None = None):
        super().__init__(N, klass)
        if law not in NOISE_LAWS:
            raise ValueError(f"unknown noise law {law!r}")
        if phi is None:
            if decay <= 2:
                raise ValueError("decay exponent must exceed 2")
            radius = int(np.ceil(N ** 0.25)) if radius is None else int(radius)
            phi = polynomial_kernel(N, radius, decay)
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (N, N):
            raise ValueError("kernel must be N x N")
        self.phi = phi
        self.decay = float(decay)
        self.radius = radius
        self.law = law
        self._phat = np.fft.fft2(phi)
        P2 = np.abs(self._phat) ** 2
        self.symbol = (P2 + P2.T) / 2 * (2.0 if self.real else 1.0)

    def _conv(self, X):
        return np.fft.ifft2(self._phat * np.fft.fft2(X))

    def sample_w(self, rng):
        N = self.N
        if self.real:
            Y = self._conv(noise(rng, self.law, (N, N))).real
            return (Y + Y.T) / np.sqrt(2 * N)
        xi = (noise(rng, self.law, (N, N)) + 1j * noise(rng, self.law, (N, N))) / np.sqrt(2)
        Y = self._conv(xi)
        return (Y + Y.conj().T) / np.sqrt(2 * N)

    def _multiply(self, X, sym):
        out = np.fft.ifft2(sym * np.fft.fft2(X))
        return out.real if self.real else out

    def sigma(self, X):
        return self._multiply(X, self.symbol / self.N)

    def sigma_sqrt(self, X):
        return self._multiply(X, np.sqrt(self.symbol / self.N))

    def self_energy(self):
        return FilterSelfEnergy(self.phi, self.klass)

    def fullness(self):
        return float(self.symbol.min())

    def third_cumulant(self):
        return noise_third_cumulant(self.law)

    @property
    def autocorrelation(self) -> np.ndarray:
        if not hasattr(self, "_R"):
            self._R = autocorrelation(self.phi)
        return self._R

    def kappa2_row(self, alpha) -> np.ndarray:
        """N E[w_alpha w_(c,d)] as an N x N array over (c, d)."""
        N = self.N
        R = self.autocorrelation
        a, b = alpha
        c, d = np.arange(N)[:, None], np.arange(N)[None, :]
        K = R[(c - b) % N, (d - a) % N] + R[(d - a) % N, (c - b) % N]
        if self.real:
            K = K + R[(c - a) % N, (d - b) % N] + R[(d - b) % N, (c - a) % N]
        return K / 2

    def covariance_entry(self, alpha, beta):
        return float(self.kappa2_row(alpha)[beta]) / self.N

    def kappa2_matrix(self) -> np.ndarray:
        """N^2 x N^2 matrix N E[w_alpha w_beta] (row-major labels)."""
        N = self.N
        R = self.autocorrelation
        i = np.arange(N)
        a, b = i[:, None, None, None], i[None, :, None, None]
        c, d = i[None, None, :, None], i[None, None, None, :]
        K = R[(c - b) % N, (d - a) % N] + R[(d - a) % N, (c - b) % N]
        if self.real:
            K = K + R[(c - a) % N, (d - b) % N] + R[(d - b) % N, (c - a) % N]
        return (K / 2).reshape(N * N, N * N)

    def params(self):
        out = super().params()
        out.update(decay=self.decay, radius=self.radius, law=self.law)
        return out


def label_distance(alpha, beta, N: int | None = None) -> int:
    """min(|a1-a2| + |b1-b2|, |a1-b2| + |b1-a2|), periodic when N is given."""
    (a1, b1), (a2, b2) = alpha, beta

    def dist(x, y):
        d = abs(x - y)
        return min(d, N - d) if N else d
    return min(dist(a1, a2) + dist(b1, b2), dist(a1, b2) + dist(b1, a2))


def neighborhood_report(model: CorrelationModel, mu: float = 0.25, label=(0, 1)) -> dict:
    """Number of entries correlated with w_label against the bound N^{1/2 - mu}."""
    N = model.N
    if isinstance(model, FilterModel):
        count = int(np.count_nonzero(np.abs(model.kappa2_row(label)) > 1e-15))
    else:
        count = sum(abs(model.covariance_entry(label, (c, d))) > 1e-15
                    for c in range(N) for d in range(N))
    bound = N ** (0.5 - mu)
    return {"size": count, "bound": bound, "holds": count <= bound}


# ---------------------------------------------------------------- ensemble

class EnsembleModel:
    """H = A + W with W drawn from a correlation model."""

    def __init__(self, corr: CorrelationModel, A=None, name: str = ""):
        self.corr = corr
        N = corr.N
        A = np.zeros(N) if A is None else np.asarray(A)
        self.pair = DataPair(A, corr.self_energy(), corr.klass, name=name)
        self.A = self.pair.A.real if corr.real else self.pair.A
        self.name = name

    @property
    def N(self):
        return self.corr.N

    @property
    def klass(self):
        return self.corr.klass

    def c_full(self) -> float:
        return self.corr.fullness()


def sample(model: EnsembleModel, seed: int, index: int = 0) -> np.ndarray:
    """H = A + W for trial ``index`` of master ``seed``."""
    return model.A + model.corr.sample_w(trial_rng(seed, index))


def self_energy_of(corr: CorrelationModel) -> SelfEnergy:
    return corr.self_energy()


def self_energy_mc_check(corr: CorrelationModel, trials: int = 400, probes: int = 5,
                         seed: int = 0) -> float:
    """Largest standardized deviation between E[W X W] sampled and S[X].

    Entries are compared one by one; the maximum |mean - S[X]| / stderr over
    all entries and probes is returned.
    """
    rng = np.random.default_rng(seed)
    S = corr.self_energy()
    N = corr.N
    Xs = []
    for _ in range(probes):
        G = rng.standard_normal((N, N))
        if not corr.real:
            G = G + 1j * rng.standard_normal((N, N))
        Xs.append(G)
    acc = [np.zeros((trials, N, N), dtype=complex) for _ in Xs]
    for t in range(trials):
        W = corr.sample_w(trial_rng(seed + 1, t))
        for k, X in enumerate(Xs):
            acc[k][t] = W @ X @ W
    worst = 0.0
    for k, X in enumerate(Xs):
        mean = acc[k].mean(axis=0)
        se_r = acc[k].real.std(axis=0, ddof=1) / np.sqrt(trials)
        se_i = acc[k].imag.std(axis=0, ddof=1) / np.sqrt(trials)
        target = S.apply(X)
        with np.errstate(divide="ignore", invalid="ignore"):
            zr = np.where(se_r > 0, np.abs(mean.real - target.real) / se_r, 0.0)
            zi = np.where(se_i > 0, np.abs(mean.imag - target.imag) / se_i, 0.0)
        worst = max(worst, float(zr.max()), float(zi.max()))
    return worst


@dataclass
class FullnessReport:
    analytic: float
    monte_carlo: float | None
    stderr: float | None


def fullness_estimate(model, trials: int = 200, seed: int = 0) -> FullnessReport:
    """Fullness constant: analytic value plus a Monte Carlo check on the worst direction.

    Raises NotFull when the constant is not positive.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    corr = model.corr if isinstance(model, EnsembleModel) else model
    c = corr.fullness()
    N = corr.N
    X = _worst_direction(corr)
    vals = np.empty(trials)
    for t in range(trials):
        W = corr.sample_w(trial_rng(seed, t))
        vals[t] = N * abs(np.trace(W @ X)) ** 2 / np.real(np.trace(X @ X))
    mc, se = float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(trials)) if trials > 1 else None
    if c <= 0 and (se is None or mc - 3 * se <= 0):
        raise NotFull("covariance is not full")
    return FullnessReport(float(c), mc, se)


def _worst_direction(corr: CorrelationModel) -> np.ndarray:
    N = corr.N
    if isinstance(corr, FilterModel):
        k = np.unravel_index(np.argmin(corr.symbol), corr.symbol.shape)
        p, q = np.arange(N)[:, None], np.arange(N)[None, :]
        wave = np.exp(2j * np.pi * (k[0] * p + k[1] * q) / N)
        X = wave + wave.conj().T
        if corr.real:
            X = (X + X.T).real
            if np.allclose(X, 0):
                X = (1j * (wave - wave.conj().T) + (1j * (wave - wave.conj().T)).T).real
        return X
    if isinstance(corr, DenseGaussian):
        w, V = np.linalg.eigh(corr.C)
        return corr._matrix(V[:, 0])
    return np.eye(N)


# ---------------------------------------------------------------- cumulant checks

def tree_sum_fast(model: FilterModel, X, Y, Z) -> float:
    """N^{-3/2} sum |kappa(a1, a2, a3)| |X_{b1 a2}| |Y_{b2 a3}| |Z_{b3 a1}| for a real filter model.

    With a nonnegative kernel the third cumulant of the rescaled entries is
    c3 sum_x L_a1(x) L_a2(x) L_a3(x), L_(a,b)(x) = phi((a,b) - x) + phi((b,a) - x),
    so the sum is c3 N^{-3/2} sum_x Tr(P^x |X| P^x |Y| P^x |Z|) with P^x_{ab} = L_(a,b)(x).
    Each P^x lives on a block of 2(2r + 1) indices.
    """
    if not model.real:
        raise ValueError("tree check implemented for the real symmetric class")
    N = model.N
    phi = model.phi
    if np.any(phi < 0):
        raise ValueError("tree check assumes a nonnegative kernel")
    r = int(model.radius if model.radius is not None else N // 2)
    if 2 * r + 1 > N:
        r = (N - 1) // 2
    off = np.arange(-r, r + 1)
    m = len(off)
    c3 = abs(model.third_cumulant()) * 2.0 ** -1.5
    ax, ay, az = np.abs(X), np.abs(Y), np.abs(Z)
    x1, x2 = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    x1, x2 = x1.ravel(), x2.ravel()
    # block index lists: first m around x1, next m around x2
    I = np.concatenate([(x1[:, None] + off) % N, (x2[:, None] + off) % N], axis=1)
    blk = np.zeros((2 * m, 2 * m))
    ph = phi[np.ix_(off % N, off % N)]
    blk[:m, m:] = ph          # phi(a - x1, b - x2) with a near x1, b near x2
    blk[m:, :m] = ph.T        # phi(b - x1, a - x2) with a near x2, b near x1
    total = 0.0
    chunk = max(1, 20000 // (4 * m * m))
    for s in range(0, N * N, chunk):
        Ii = I[s:s + chunk]
        Xs = ax[Ii[:, :, None], Ii[:, None, :]]
        Ys = ay[Ii[:, :, None], Ii[:, None, :]]
        Zs = az[Ii[:, :, None], Ii[:, None, :]]
        T = blk @ Xs @ blk @ Ys @ blk @ Zs
        total += float(np.trace(T, axis1=1, axis2=2).sum())
    return c3 * total / N ** 1.5


def linear_map(model: FilterModel) -> np.ndarray:
    """Matrix L with rescaled entries sqrt(N) w_(a,b) = sum_x L[(a,b), x] xi_x (real class)."""
    N = model.N
    L = np.empty((N * N, N * N))
    for k in range(N * N):
        e = np.zeros(N * N)
        e[k] = 1.0
        Y = model._conv(e.reshape(N, N)).real
        L[:, k] = ((Y + Y.T) / np.sqrt(2 * N)).ravel() * np.sqrt(N)
    return L


def tree_sum_bruteforce(model: FilterModel, X, Y, Z) -> float:
    """Same quantity from the explicit third-cumulant tensor (small N only)."""
    N = model.N
    if N > 16:
        raise ValueError("brute-force tensor limited to N <= 16")
    L = linear_map(model)
    kappa = model.third_cumulant() * np.einsum("ax,bx,cx->abc", L, L, L, optimize=True)
    K = np.abs(kappa).reshape((N, N) * 3)          # a1 b1 a2 b2 a3 b3
    val = np.einsum("pqrstu,qr,st,up->", K, np.abs(X), np.abs(Y), np.abs(Z), optimize=True)
    return float(val / N ** 1.5)


def tree_probes(N: int, trials: int, seed: int):
    """Probe triples (X, Y, Z) with ||X|| = ||Y|| = 1 and ||Z||_hs = 1 (normalized trace)."""
    rng = np.random.default_rng(seed)
    I = np.eye(N)
    ones = np.ones((N, N))
    out = [(I, I, I), (ones / N, ones / N, ones / np.sqrt(N)), (I, ones / N, I)]
    for _ in range(trials):
        mats = []
        for kind in range(3):
            G = rng.standard_normal((N, N))
            G = (G + G.T) / 2
            if kind < 2:
                mats.append(G / np.linalg.norm(G, 2))
            else:
                mats.append(G / np.sqrt(np.sum(G * G) / N))
        out.append(tuple(mats))
    return out


def cumulant_norm_checks(corr: CorrelationModel, trials: int = 10, seed: int = 0,
                         unit_cumulant: bool = False) -> dict:
    """Second-cumulant matrix norm and the third-cumulant tree ratio.

    With ``unit_cumulant`` the tree ratio is evaluated as if the noise had
    third cumulant 1, which isolates the correlation structure from the law.
    """
    N = corr.N
    report = {"N": N, "variant": corr.variant}
    if isinstance(corr, FilterModel):
        K = np.abs(corr.kappa2_matrix()) if N <= 64 else None
        report["kappa2_norm"] = float(np.linalg.norm(K, 2)) if K is not None else None
    elif isinstance(corr, IndependentGaussian):
        report["kappa2_norm"] = 1.0
    else:
        rows = np.array([[N * corr.covariance_entry((a, b), (c, d)) for c in range(N)
                          for d in range(N)] for a in range(N) for b in range(N)])
        report["kappa2_norm"] = float(np.linalg.norm(np.abs(rows), 2))
    c3 = corr.third_cumulant()
    report["kappa3"] = c3
    if not isinstance(corr, FilterModel) or corr.law == "gaussian":
        report["tree_ratio"] = 0.0
        return report
    scale = 1.0
    if unit_cumulant:
        scale = 1.0 / abs(c3) if c3 != 0 else None
    ratios = []
    for X, Y, Z in tree_probes(N, trials, seed):
        denom = np.linalg.norm(X, 2) * np.linalg.norm(Y, 2) * np.sqrt(np.sum(np.abs(Z) ** 2) / N)
        if unit_cumulant and c3 == 0:
            val = _unit_tree(corr, X, Y, Z)
        else:
            val = tree_sum_fast(corr, X, Y, Z) * scale
        ratios.append(val / denom)
    report["tree_ratio"] = float(max(ratios))
    return report


def _unit_tree(corr, X, Y, Z):
    probe = FilterModel(corr.N, corr.klass, phi=corr.phi, law="shifted-mixture")
    probe.radius = corr.radius
    return tree_sum_fast(probe, X, Y, Z) / abs(probe.third_cumulant())


# ---------------------------------------------------------------- flows

def zig_flow(H0: np.ndarray, t: float, seed: int, klass: str, index: int = 0) -> np.ndarray:
    """OU marginal e^{-t/2} H0 + sqrt(1 - e^{-t}) W_G with a fresh GOE/GUE W_G."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return H0.copy()
    WG = gaussian_matrix(trial_rng(seed, index), H0.shape[0], klass)
    return np.exp(-t / 2) * H0 + np.sqrt(-np.expm1(-t)) * WG


def zag_flow(model: EnsembleModel, H: np.ndarray, s: float, seed: int, index: int = 0) -> np.ndarray:
    """Mean- and covariance-preserving OU marginal."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    if s == 0:
        return H.copy()
    xi = white_noise(trial_rng(seed, index), model.N, model.klass)
    EH = model.A
    return EH + np.exp(-s / 2) * (H - EH) + np.sqrt(-np.expm1(-s)) * model.corr.sigma_sqrt(xi)


def s_of_t(c: float, t):
    """log c - log(c - 1 + e^{-t})."""
    t = np.asarray(t, dtype=float)
    return np.log(c) - np.log(c - 1 + np.exp(-t))


def relative_fullness(corr: CorrelationModel) -> float:
    """Largest c with Sigma >= c Sigma_G."""
    return corr.fullness() / (2.0 if corr.real else 1.0)


def _residual_sqrt(corr: CorrelationModel, c: float):
    """Square root of Sigma - c Sigma_G as an action on matrices."""
    if isinstance(corr, IndependentGaussian):
        return lambda X: np.sqrt(max(1 - c, 0.0)) * corr.sigma_sqrt(X)
    if isinstance(corr, DenseGaussian):
        D = corr.C - c * gaussian_coordinate_covariance(corr.N, corr.klass)
        lam = np.linalg.eigvalsh(D)[0]
        if lam < -1e-10:
            raise NotFullEnough(f"Sigma - c Sigma_G has eigenvalue {lam:.3e}")
        R = psd_sqrt(D)
        return lambda X: corr._matrix(R @ corr._coords(X))
    if isinstance(corr, FilterModel):
        sym = corr.symbol - c * (2.0 if corr.real else 1.0)
        if sym.min() < -1e-10:
            raise NotFullEnough(f"Sigma - c Sigma_G has eigenvalue {sym.min() / corr.N:.3e}")
        root = np.sqrt(np.clip(sym, 0, None) / corr.N)
        return lambda X: corr._multiply(X, root)
    raise TypeError("unsupported correlation model")


def surjectivity_pair(model: EnsembleModel, H: np.ndarray, c: float, t: float, seed: int,
                      index: int = 0):
    """Initial matrix whose zig evolution to time t matches the zag evolution of H to s_c(t).

    Returns (h, s) with h = e^{t/2}(EH + e^{-s/2}(H - EH) + sqrt(1 - e^{-s}) W_hat),
    W_hat Gaussian with covariance Sigma - c Sigma_G.
    """
    if not 0 < c <= 1:
        raise ValueError("c must lie in (0, 1]")
    if c < 1 and t > -np.log(1 - c):
        raise ValueError("t exceeds -log(1 - c)")
    root = _residual_sqrt(model.corr, c)
    s = float(s_of_t(c, t))
    xi = white_noise(trial_rng(seed, index), model.N, model.klass)
    EH = model.A
    h = np.exp(t / 2) * (EH + np.exp(-s / 2) * (H - EH) + np.sqrt(-np.expm1(-s)) * root(xi))
    return h, s


# covariance algebra on class coordinates (dense-gaussian models)

def zig_covariance(C0: np.ndarray, t: float, N: int, klass: str) -> np.ndarray:
    CG = gaussian_coordinate_covariance(N, klass)
    return np.exp(-t) * C0 - np.expm1(-t) * CG


def zag_covariance(C: np.ndarray, s: float) -> np.ndarray:
    R = psd_sqrt(C)
    return np.exp(-s) * C - np.expm1(-s) * R @ R.T


def surjectivity_covariance(C: np.ndarray, c: float, t: float, N: int, klass: str) -> np.ndarray:
    """Covariance of h from ``surjectivity_pair`` built from its linear construction."""
    s = float(s_of_t(c, t))
    R = psd_sqrt(C - c * gaussian_coordinate_covariance(N, klass))
    return np.exp(t) * (np.exp(-s) * C - np.expm1(-s) * R @ R.T)


def sigma_flow_closed_form(C0: np.ndarray, t: float, N: int, klass: str) -> np.ndarray:
    """Sigma_G + e^{-t} (Sigma_0 - Sigma_G)."""
    CG = gaussian_coordinate_covariance(N, klass)
    return CG + np.exp(-t) * (C0 - CG)
