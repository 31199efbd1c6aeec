"""Self-energy operators X -> E[W X W] for the supported correlation structures.

Every representation acts on dense N x N matrices through ``apply`` and, where
the operator maps matrices diagonal in a known basis to matrices diagonal in the
same basis, exposes that restriction so the Dyson solver can work on vectors.
"""
from __future__ import annotations

import numpy as np

REAL = "real-symmetric"
COMPLEX = "complex-hermitian"


def normalize_class(klass: str) -> str:
    k = str(klass).lower()
    if k in ("real", "real-symmetric", "goe", "orthogonal"):
        return REAL
    if k in ("complex", "complex-hermitian", "gue", "unitary"):
        return COMPLEX
    raise ValueError(f"unknown symmetry class {klass!r}")


def hermitian_basis(N: int, klass: str) -> np.ndarray:
    """Orthonormal basis of the symmetry class under (X, Y) -> Tr XY.

    Returns an array of shape (d, N, N) with d = N^2 (complex) or N(N+1)/2 (real).
    """
    klass = normalize_class(klass)
    mats = []
    for i in range(N):
        e = np.zeros((N, N), dtype=complex)
        e[i, i] = 1.0
        mats.append(e)
    s = 1.0 / np.sqrt(2.0)
    for i in range(N):
        for j in range(i + 1, N):
            e = np.zeros((N, N), dtype=complex)
            e[i, j] = e[j, i] = s
            mats.append(e)
            if klass == COMPLEX:
                e = np.zeros((N, N), dtype=complex)
                e[i, j] = 1j * s
                e[j, i] = -1j * s
                mats.append(e)
    return np.array(mats)


class SelfEnergy:
    """Base class. Subclasses implement ``apply``."""

    kind = "abstract"

    def __init__(self, N: int, klass: str):
        self.N = int(N)
        self.klass = normalize_class(klass)

    @property
    def real(self) -> bool:
        return self.klass == REAL

    def apply(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, X):
        return self.apply(X)

    def terms(self):
        return [(1.0, self)]

    def dense_matrix(self) -> np.ndarray:
        """N^2 x N^2 matrix of the operator on row-major vectorized matrices."""
        N = self.N
        out = np.empty((N * N, N * N), dtype=complex)
        for k in range(N * N):
            e = np.zeros(N * N, dtype=complex)
            e[k] = 1.0
            out[:, k] = self.apply(e.reshape(N, N)).ravel()
        return out

    def vector_matrix(self, U: np.ndarray | None) -> np.ndarray:
        """Action on diagonal coefficients in the basis U (identity when None)."""
        N = self.N
        out = np.empty((N, N), dtype=complex)
        for k in range(N):
            if U is None:
                P = np.zeros((N, N), dtype=complex)
                P[k, k] = 1.0
                out[:, k] = np.diag(self.apply(P))
            else:
                u = U[:, k]
                P = np.outer(u, u.conj())
                out[:, k] = np.einsum("ij,ij->j", U.conj(), self.apply(P) @ U)
        return out

    def params(self) -> dict:
        return {}


class WignerScalar(SelfEnergy):
    """S[X] = <X> I, plus X^t / N in the real symmetric class.

    ``transpose=False`` drops the transpose term (pure trace average).
    """

    kind = "wigner-scalar"

    def __init__(self, N, klass=COMPLEX, scale: float = 1.0, transpose: bool | None = None):
        super().__init__(N, klass)
        self.scale = float(scale)
        self.transpose = self.real if transpose is None else bool(transpose)

    def apply(self, X):
        out = np.trace(X) / self.N * np.eye(self.N, dtype=complex)
        if self.transpose:
            out = out + X.T / self.N
        return self.scale * out

    def vector_matrix(self, U):
        S = np.full((self.N, self.N), 1.0 / self.N, dtype=complex)
        if self.transpose:
            if U is None or not np.iscomplexobj(U) or np.all(U.imag == 0):
                S += np.eye(self.N) / self.N
            else:
                # X^t in a complex basis: coefficient k moves to the partner index
                S += np.abs(U.T @ U).T ** 2 / self.N
        return self.scale * S

    def params(self):
        return {"scale": self.scale, "transpose": self.transpose}


class VarianceProfile(SelfEnergy):
    """Independent entries with E|w_ij|^2 = s_ij.

    Complex class: S[X] = diag(s @ diag X). The real class adds the transposed
    off-diagonal part s_ij X_ji.
    """

    kind = "variance-profile-diagonal"

    def __init__(self, s: np.ndarray, klass=COMPLEX):
        s = np.asarray(s, dtype=float)
        super().__init__(s.shape[0], klass)
        if not np.allclose(s, s.T):
            raise ValueError("variance matrix must be symmetric")
        if np.any(s < 0):
            raise ValueError("variances must be nonnegative")
        self.s = s

    def apply(self, X):
        out = np.diag(self.s @ np.diag(X)).astype(complex)
        if self.real:
            off = self.s * X.T
            np.fill_diagonal(off, 0.0)
            out = out + off
        return out

    def vector_matrix(self, U):
        if U is not None:
            return super().vector_matrix(U)
        return self.s.astype(complex)

    def params(self):
        return {"s": self.s.tolist()}


class DenseTensor(SelfEnergy):
    """Explicit second-cumulant tensor, stored as an N^2 x N^2 matrix.

    ``kmat[(i, j), (k, l)] = E[w_ik w_lj]`` so that S[X] = kmat @ vec(X).
    """

    kind = "dense-four-tensor"
    max_N = 64

    def __init__(self, kmat: np.ndarray, klass=COMPLEX):
        kmat = np.asarray(kmat, dtype=complex)
        N = int(round(np.sqrt(kmat.shape[0])))
        if N * N != kmat.shape[0] or kmat.shape[0] != kmat.shape[1]:
            raise ValueError("kmat must be N^2 x N^2")
        if N > self.max_N:
            raise ValueError(f"dense tensor limited to N <= {self.max_N}")
        super().__init__(N, klass)
        self.kmat = kmat

    @classmethod
    def from_coordinates(cls, C: np.ndarray, N: int, klass=COMPLEX):
        """Build from the covariance of W in the orthonormal class basis."""
        B = hermitian_basis(N, klass).reshape(-1, N * N)
        P = B.T @ (np.asarray(C, dtype=float) @ B)
        K4 = P.reshape(N, N, N, N).transpose(0, 3, 1, 2)
        return cls(K4.reshape(N * N, N * N), klass)

    def apply(self, X):
        return (self.kmat @ np.asarray(X, dtype=complex).ravel()).reshape(self.N, self.N)

    def dense_matrix(self):
        return self.kmat.copy()


def polynomial_kernel(N: int, radius: int, decay: float) -> np.ndarray:
    """Nonnegative kernel (1 + |p| + |q|)^-decay on the torus, unit l2 norm."""
    off = np.arange(N)
    signed = np.where(off <= N // 2, off, off - N)
    P, Q = np.meshgrid(signed, signed, indexing="ij")
    phi = (1.0 + np.abs(P) + np.abs(Q)) ** (-float(decay))
    phi[(np.abs(P) > radius) | (np.abs(Q) > radius)] = 0.0
    return phi / np.sqrt(np.sum(phi ** 2))


def autocorrelation(phi: np.ndarray) -> np.ndarray:
    """R(u, v) = sum_p phi(p) phi(p + u) on the torus.

    Entries outside the difference set of the kernel support are set to exactly 0.
    """
    F = np.fft.fft2(phi)
    R = np.real(np.fft.ifft2(np.conj(F) * F))
    ind = np.fft.fft2((phi != 0).astype(float))
    overlap = np.real(np.fft.ifft2(np.conj(ind) * ind))
    R[overlap < 0.5] = 0.0
    return R


class FilterSelfEnergy(SelfEnergy):
    """Self-energy of W = (Y + Y*)/sqrt(2N) with Y = phi (*) X on the index torus."""

    kind = "filter"

    def __init__(self, phi: np.ndarray, klass=COMPLEX):
        phi = np.asarray(phi, dtype=float)
        super().__init__(phi.shape[0], klass)
        self.phi = phi
        self.R = autocorrelation(phi)

    def _diag_sums(self, X):
        N = self.N
        idx = np.arange(N)
        # tau[u] = sum_k X[k, k+u]
        return np.array([X[idx, (idx + u) % N].sum() for u in range(N)])

    def apply(self, X):
        N = self.N
        R = self.R
        X = np.asarray(X, dtype=complex)
        tau = self._diag_sums(X)
        neg = (-np.arange(N)) % N
        # circulant part, indexed by v = j - i
        if self.real:
            c = R @ tau + R.T @ tau
        else:
            c = R @ tau + R[neg][:, neg].T @ tau
        i = np.arange(N)
        circ = c[(i[None, :] - i[:, None]) % N]
        if not self.real:
            return circ / (2 * N)
        # transposed terms: corr of X^T with (R + R^T)(p, -q)
        K = R + R.T
        Kq = K[:, neg]
        Y = X.T
        corr = np.fft.ifft2(np.fft.fft2(Y) * np.conj(np.fft.fft2(Kq)))
        return (circ + corr) / (2 * N)

    def params(self):
        return {"N": self.N}


class CombinedSelfEnergy(SelfEnergy):
    """Linear combination sum_k c_k S_k of representations of equal N and class."""

    kind = "combined"

    def __init__(self, terms):
        terms = [(float(c), rep) for c, rep in terms]
        super().__init__(terms[0][1].N, terms[0][1].klass)
        for _, rep in terms:
            if rep.N != self.N or rep.klass != self.klass:
                raise ValueError("terms must share N and class")
        self._terms = terms

    def terms(self):
        out = []
        for c, rep in self._terms:
            out.extend((c * c2, r2) for c2, r2 in rep.terms())
        return out

    def apply(self, X):
        return sum(c * rep.apply(X) for c, rep in self._terms)

    def vector_matrix(self, U):
        return sum(c * rep.vector_matrix(U) for c, rep in self._terms)


def gaussian_reference(N: int, klass: str) -> WignerScalar:
    """Self-energy of the normalized GOE/GUE."""
    return WignerScalar(N, klass)
