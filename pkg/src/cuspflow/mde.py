"""Matrix Dyson equation solver, density of states and stability diagnostics.

The equation solved is ``-1/M = z - A + S[M]`` with ``Im M > 0``. Two code paths
share one driver:

* a vector path, used when A and S are simultaneously diagonal in a known basis
  (eigenbasis of A for the Wigner-type self-energy, the coordinate basis for
  variance profiles, the Fourier basis for translation invariant filters);
* a matrix path for general operators.

Both follow the same continuation in eta with damped fixed-point sweeps, and
finish every level with Newton steps on the linearized equation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import (IllConditioned, NonConvergence, PositivityLoss, SingularInput,
                     SingularInverse, SingularStability)
from .selfenergy import REAL, SelfEnergy, normalize_class


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral parameter z = E + i eta with eta > 0."""

    E: float
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be strictly positive")

    @property
    def z(self) -> complex:
        return complex(self.E, self.eta)


@dataclass
class SolverOptions:
    tol: float = 1e-11
    path_tol: float = 1e-7
    factor: float = 0.8
    eta_start: float | None = None
    omega_min: float = 0.05
    fixed_point_sweeps: int = 25
    newton_steps: int = 60
    dense_cap: int = 40


class DataPair:
    """Expectation matrix A together with a self-energy operator S."""

    def __init__(self, A, S: SelfEnergy, klass: str | None = None, C_A: float | None = None,
                 name: str = ""):
        A = np.asarray(A)
        if A.ndim == 1:
            A = np.diag(A)
        self.A = A.astype(complex)
        self.N = self.A.shape[0]
        self.S = S
        self.klass = normalize_class(klass or S.klass)
        self.name = name
        if S.N != self.N:
            raise ValueError("A and S dimensions differ")
        if not np.allclose(self.A, self.A.conj().T, atol=1e-12):
            raise ValueError("A must be Hermitian")
        if self.klass == REAL and np.abs(self.A.imag).max(initial=0.0) > 0:
            raise ValueError("A must be real in the real symmetric class")
        normA = float(np.linalg.norm(self.A, 2)) if self.N else 0.0
        self.C_A = float(C_A) if C_A is not None else normA
        if normA > self.C_A * (1 + 1e-12) + 1e-14:
            raise ValueError("norm bound C_A violated")
        self._vform = None

    @classmethod
    def _trusted(cls, A, S, klass, C_A, vform=None, name=""):
        """Construct without validation (inputs derived from a validated model)."""
        obj = cls.__new__(cls)
        obj.A, obj.N, obj.S, obj.klass = A, A.shape[0], S, klass
        obj.C_A, obj.name = float(C_A), name
        obj._vform = vform
        return obj

    @property
    def a_is_diagonal(self) -> bool:
        return np.count_nonzero(self.A - np.diag(np.diag(self.A))) == 0

    def vector_form(self):
        if self._vform is None:
            self._vform = _build_vector_form(self)
        return self._vform if self._vform is not False else None


def _is_circulant(A):
    N = A.shape[0]
    i = np.arange(N)
    return np.allclose(A, A[0][(i[None, :] - i[:, None]) % N], atol=1e-13)


@dataclass
class VectorForm:
    U: np.ndarray | None      # basis (None = identity)
    a: np.ndarray             # compressed eigenvalues of A
    groups: np.ndarray        # full index -> compressed index
    weights: np.ndarray       # fraction of indices per compressed entry
    Sv: np.ndarray            # action on compressed coefficient vectors


def _build_vector_form(model: DataPair):
    terms = model.S.terms()
    kinds = {rep.kind for _, rep in terms}
    N = model.N
    if kinds <= {"wigner-scalar"}:
        if model.a_is_diagonal:
            U, a = None, np.real(np.diag(model.A))
        else:
            Ar = model.A.real if model.klass == REAL else model.A
            a, U = np.linalg.eigh(Ar)
            U = U.astype(complex)
        scale = 1e-12 * max(1.0, np.abs(a).max(initial=0.0))
        keys = np.round(a / scale).astype(np.int64) if N else a
        uniq, first, groups = np.unique(keys, return_index=True, return_inverse=True)
        ac = a[first]
        weights = np.bincount(groups, minlength=len(uniq)) / N
        K = len(uniq)
        Sv = np.zeros((K, K), dtype=complex)
        for c, rep in terms:
            Sv += c * rep.scale * np.outer(np.ones(K), weights)
            if rep.transpose:
                Sv += c * rep.scale * np.eye(K) / N
        return VectorForm(U, ac, groups, weights, Sv)
    if kinds <= {"wigner-scalar", "variance-profile-diagonal"} and model.a_is_diagonal:
        a = np.real(np.diag(model.A))
        return VectorForm(None, a, np.arange(N), np.full(N, 1.0 / N), model.S.vector_matrix(None))
    if kinds <= {"wigner-scalar", "filter"} and _is_circulant(model.A):
        idx = np.arange(N)
        U = np.exp(2j * np.pi * np.outer(idx, idx) / N) / np.sqrt(N)
        a = np.real(np.einsum("ij,ij->j", U.conj(), model.A @ U))
        return VectorForm(U, a, np.arange(N), np.full(N, 1.0 / N), model.S.vector_matrix(U))
    return False


@dataclass
class MdeSolution:
    """Solution of the Dyson equation at one spectral point."""

    z: complex
    rho: float
    residual: float
    iterations: int
    continuation_path: list = field(default_factory=list)
    m_vec: np.ndarray | None = None
    basis: np.ndarray | None = None
    matrix: np.ndarray | None = None

    @property
    def M(self) -> np.ndarray:
        if self.matrix is None:
            if self.basis is None:
                self.matrix = np.diag(self.m_vec)
            else:
                self.matrix = (self.basis * self.m_vec) @ self.basis.conj().T
        return self.matrix

    @property
    def avg(self) -> complex:
        if self.m_vec is not None:
            return complex(np.mean(self.m_vec))
        return complex(np.trace(self.matrix) / self.matrix.shape[0])

    def im_eigenvalues(self) -> np.ndarray:
        if self.m_vec is not None:
            return np.sort(self.m_vec.imag)
        M = self.matrix
        return np.linalg.eigvalsh((M - M.conj().T) / 2j)

    def quad(self, x: np.ndarray, y: np.ndarray) -> complex:
        """Return x* M y."""
        if self.m_vec is not None:
            if self.basis is None:
                return complex(np.sum(x.conj() * self.m_vec * y))
            return complex((self.basis.conj().T @ x).conj() @ (self.m_vec * (self.basis.conj().T @ y)))
        return complex(x.conj() @ self.matrix @ y)


def _eta_schedule(eta_start, eta, factor):
    etas = []
    e = eta_start
    while e > eta:
        etas.append(e)
        e *= factor
    etas.append(eta)
    return etas


# ---------------------------------------------------------------- vector path

def _vec_residual(z, a, Sv, m):
    return np.abs(1.0 + m * (z[:, None] - a[None, :] + m @ Sv.T)).max(axis=1)


def _vec_level(z, a, Sv, m, tol, opts: SolverOptions):
    """Solve the vector equation at fixed z (batched), starting from m."""
    B, K = m.shape
    iters = 0
    m = m.copy()
    res = _vec_residual(z, a, Sv, m)
    omega = np.ones(B)
    sweeping = np.ones(B, bool)
    for _ in range(opts.fixed_point_sweeps):
        if np.all(res <= tol):
            return m, res, iters
        act = np.flatnonzero((res > tol) & sweeping)
        if len(act) == 0:
            break
        ma, za, ra, wa = m[act], z[act], res[act], omega[act]
        R = za[:, None] - a[None, :] + ma @ Sv.T
        if np.any(np.abs(R) < 1e-300):
            raise SingularInverse("z - A + S[M] singular")
        new = (1 - wa[:, None]) * ma + wa[:, None] * (-1.0 / R)
        new_res = _vec_residual(za, a, Sv, new)
        ok = (new_res <= ra) & np.all(new.imag > 0, axis=1)
        # contraction too weak for fixed-point sweeps: hand these points over to Newton
        sweeping[act] = ok & (new_res <= 0.5 * ra)
        m[act] = np.where(ok[:, None], new, ma)
        res[act] = np.where(ok, new_res, ra)
        omega[act] = np.where(ok, np.minimum(1.0, wa * 1.25), np.maximum(opts.omega_min, wa / 2))
        iters += 1
    eye = np.eye(K)
    for _ in range(opts.newton_steps):
        todo = res > tol
        if not np.any(todo):
            return m, res, iters
        mt, zt = m[todo], z[todo]
        R = zt[:, None] - a[None, :] + mt @ Sv.T
        F = 1.0 + mt * R
        J = R[:, :, None] * eye[None] + mt[:, :, None] * Sv[None]
        try:
            step = np.linalg.solve(J, -F[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularInverse("singular Newton system") from exc
        lam = np.ones(len(mt))
        rt = res[todo]
        cand = mt + step
        for _ in range(30):
            cres = _vec_residual(zt, a, Sv, cand)
            good = (np.all(cand.imag > 0, axis=1)) & (cres < np.maximum(rt, tol))
            if np.all(good):
                break
            lam = np.where(good, lam, lam / 2)
            cand = mt + lam[:, None] * step
        else:
            bad = ~((np.all(cand.imag > 0, axis=1)) & (cres < np.maximum(rt, tol)))
            if np.any(~np.all(cand.imag > 0, axis=1)):
                raise PositivityLoss("Im M lost positivity after backtracking")
            cand[bad] = mt[bad]
            cres[bad] = rt[bad]
        m[todo] = cand
        res[todo] = cres
        iters += 1
    if np.any(res > tol):
        raise NonConvergence("Newton iteration cap reached", float(res.max()))
    return m, res, iters


def solve_vector_batch(model: DataPair, zs, opts: SolverOptions | None = None, init=None):
    """Solve on the vector path for an array of spectral parameters.

    Returns the compressed solution array of shape (len(zs), K), residuals,
    iteration count and the continuation path of the batch maximum residual.
    """
    opts = opts or SolverOptions()
    vf = model.vector_form()
    if vf is None:
        raise ValueError("model has no vector form")
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    if np.any(zs.imag <= 0):
        raise ValueError("eta must be strictly positive")
    a, Sv = vf.a, vf.Sv
    path = []
    total = 0
    if init is not None:
        m = np.array(np.broadcast_to(init, (len(zs), len(a))), dtype=complex)
        try:
            m, res, it = _vec_level(zs, a, Sv, m, opts.tol, opts)
            return m, res, it, [(float(zs.imag.max()), float(res.max()))]
        except (NonConvergence, PositivityLoss, SingularInverse):
            pass
    eta_start = opts.eta_start or max(10.0, 2.0 * model.C_A)
    E = zs.real
    eta_t = zs.imag
    n_levels = len(_eta_schedule(eta_start, float(eta_t.min()), opts.factor))
    m = None
    res = None
    for k in range(n_levels):
        level = np.maximum(eta_start * opts.factor ** k, eta_t)
        zk = E + 1j * level
        if m is None:
            m = -1.0 / (zk[:, None] - a[None, :])
        final = k == n_levels - 1
        m, res, it = _vec_level(zk, a, Sv, m, opts.tol if final else opts.path_tol, opts)
        total += it
        path.append((float(level.max()), float(res.max())))
        if not final and np.all(level <= eta_t):
            m, res, it = _vec_level(zk, a, Sv, m, opts.tol, opts)
            total += it
            break
    return m, res, total, path


# ---------------------------------------------------------------- matrix path

def _mat_residual(model, z, M):
    R = z * np.eye(model.N) - model.A + model.S.apply(M)
    return float(np.linalg.norm(np.eye(model.N) + M @ R, 2)), R


def _min_im_eig(M):
    return float(np.linalg.eigvalsh((M - M.conj().T) / 2j)[0])


def _mat_level(model, z, M, tol, opts, Smat=None):
    N = model.N
    iters = 0
    res, R = _mat_residual(model, z, M)
    omega = 1.0
    for _ in range(opts.fixed_point_sweeps):
        if res <= tol:
            return M, res, iters
        try:
            inv = -np.linalg.inv(R)
        except np.linalg.LinAlgError as exc:
            raise SingularInverse("z - A + S[M] singular") from exc
        new = (1 - omega) * M + omega * inv
        new_res, new_R = _mat_residual(model, z, new)
        slow = new_res > 0.5 * res
        if new_res <= res and _min_im_eig(new) > 0:
            M, res, R = new, new_res, new_R
            omega = min(1.0, omega * 1.25)
        else:
            omega = max(opts.omega_min, omega / 2)
        iters += 1
        if slow:
            break
    I = np.eye(N)
    for _ in range(opts.newton_steps):
        if res <= tol:
            return M, res, iters
        try:
            Rinv = np.linalg.inv(R)
        except np.linalg.LinAlgError as exc:
            raise SingularInverse("z - A + S[M] singular") from exc
        F = I + M @ R
        rhs = -(F @ Rinv)
        if N <= opts.dense_cap:
            if Smat is None:
                Smat = model.S.dense_matrix()
            L = np.eye(N * N) + np.kron(M, Rinv.T) @ Smat
            step = np.linalg.solve(L, rhs.ravel()).reshape(N, N)
        else:
            def mv(v, M=M, Rinv=Rinv):
                Y = v.reshape(N, N)
                return (Y + M @ model.S.apply(Y) @ Rinv).ravel()
            op = spla.LinearOperator((N * N, N * N), matvec=mv, dtype=complex)
            sol, info = spla.gmres(op, rhs.ravel(), rtol=1e-13, atol=0.0, restart=60, maxiter=20)
            step = sol.reshape(N, N)
        lam = 1.0
        for _ in range(30):
            cand = M + lam * step
            cres, cR = _mat_residual(model, z, cand)
            if cres < max(res, tol) and _min_im_eig(cand) > 0:
                break
            lam /= 2
        else:
            raise PositivityLoss("Im M lost positivity after backtracking")
        M, res, R = cand, cres, cR
        iters += 1
    if res > tol:
        raise NonConvergence("Newton iteration cap reached", res)
    return M, res, iters


def _solve_matrix(model, z, opts, init=None):
    Smat = model.S.dense_matrix() if model.N <= opts.dense_cap else None
    if init is not None:
        try:
            M, res, it = _mat_level(model, z, np.array(init, dtype=complex), opts.tol, opts, Smat)
            return M, res, it, [(z.imag, res)]
        except (NonConvergence, PositivityLoss, SingularInverse):
            pass
    eta_start = opts.eta_start or max(10.0, 2.0 * model.C_A)
    etas = _eta_schedule(eta_start, z.imag, opts.factor)
    M = None
    total = 0
    path = []
    for k, eta in enumerate(etas):
        zk = complex(z.real, eta)
        if M is None:
            M = -np.linalg.inv(zk * np.eye(model.N) - model.A)
        final = k == len(etas) - 1
        M, res, it = _mat_level(model, zk, M, opts.tol if final else opts.path_tol, opts, Smat)
        total += it
        path.append((eta, res))
    return M, res, total, path


# ---------------------------------------------------------------- public API

def solve_mde(model: DataPair, z, opts: SolverOptions | None = None, init=None) -> MdeSolution:
    """Solve the Dyson equation at z, continuing down from large eta.

    Parameters
    ----------
    model : DataPair
    z : SpectralPoint or complex
    opts : SolverOptions, optional
    init : array, optional
        Warm start (compressed vector or matrix from a previous solution). When
        it fails to converge the solver falls back to the full continuation.

    Returns
    -------
    MdeSolution
    """
    opts = opts or SolverOptions()
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    if not z.imag > 0:
        raise ValueError("eta must be strictly positive")
    vf = model.vector_form()
    if vf is not None:
        if isinstance(init, MdeSolution):
            init = init._compressed if hasattr(init, "_compressed") else None
        m, res, it, path = solve_vector_batch(model, np.array([z]), opts, init=init)
        mc = m[0]
        full = mc[vf.groups]
        sol = MdeSolution(z, float(np.mean(full.imag) / np.pi), float(res[0]), it, path,
                          m_vec=full, basis=vf.U)
        sol._compressed = mc
        return sol
    if isinstance(init, MdeSolution):
        init = init.M
    M, res, it, path = _solve_matrix(model, z, opts, init=init)
    rho = float(np.trace(M).imag / model.N / np.pi)
    return MdeSolution(z, rho, res, it, path, matrix=M)


def mde_residual(model: DataPair, z, M) -> float:
    """Spectral norm of I + M (z - A + S[M]), evaluated with dense matrices."""
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    M = np.asarray(M, dtype=complex)
    if M.ndim == 0:
        M = M * np.eye(model.N)
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] <= 1e-14 * max(1.0, s[0]):
        raise SingularInput("M is not invertible")
    res, _ = _mat_residual(model, z, M)
    return res


def density_batch(model: DataPair, zs, opts: SolverOptions | None = None) -> np.ndarray:
    """Return <Im M(z)>/pi for an array of spectral parameters."""
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    vf = model.vector_form()
    if vf is not None:
        m, *_ = solve_vector_batch(model, zs, opts)
        return (m.imag @ vf.weights) / np.pi
    out = np.empty(len(zs))
    prev = None
    for k, z in enumerate(zs):
        sol = solve_mde(model, z, opts, init=prev)
        prev = sol
        out[k] = sol.rho
    return out


def richardson(r1, r2, r4):
    """Quadratic extrapolation to eta = 0 from samples at eta, 2 eta, 4 eta."""
    return (8.0 * r1 - 6.0 * r2 + r4) / 3.0


def scdos(model: DataPair, E, eta_floor: float = 1e-6, opts: SolverOptions | None = None):
    """Self-consistent density of states at real energy E (scalar or array).

    The density is extrapolated to the real axis from eta in
    {eta_floor, 2 eta_floor, 4 eta_floor} and clipped at zero.
    """
    if not eta_floor > 0:
        raise ValueError("eta_floor must be positive")
    Es = np.atleast_1d(np.asarray(E, dtype=float))
    zs = np.concatenate([Es + 1j * eta_floor, Es + 2j * eta_floor, Es + 4j * eta_floor])
    r = density_batch(model, zs, opts)
    n = len(Es)
    out = np.maximum(richardson(r[:n], r[n:2 * n], r[2 * n:]), 0.0)
    return float(out[0]) if np.ndim(E) == 0 else out


def mean_m_real_axis(model: DataPair, E, eta_floor: float = 1e-8, opts=None):
    """Extrapolated <M(E + i0)> from eta_floor, 2 eta_floor, 4 eta_floor."""
    Es = np.atleast_1d(np.asarray(E, dtype=float))
    zs = np.concatenate([Es + 1j * eta_floor, Es + 2j * eta_floor, Es + 4j * eta_floor])
    vf = model.vector_form()
    if vf is not None:
        m, *_ = solve_vector_batch(model, zs, opts)
        avg = m @ vf.weights
    else:
        avg = np.array([solve_mde(model, z, opts).avg for z in zs])
    n = len(Es)
    out = richardson(avg[:n], avg[n:2 * n], avg[2 * n:])
    return complex(out[0]) if np.ndim(E) == 0 else out


# ---------------------------------------------------------------- stability

def sigma_shape(model: DataPair, z, opts=None, sol: MdeSolution | None = None) -> float:
    """Shape parameter built from the polar decomposition of Re M in Im M geometry."""
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    sol = sol or solve_mde(model, z, opts)
    rho = sol.rho
    if sol.m_vec is not None:
        im = sol.m_vec.imag
        if im.min() < 1e-13:
            raise IllConditioned("Im M nearly singular")
        q = sol.m_vec.real / im
    else:
        M = sol.M
        ImM = (M - M.conj().T) / 2j
        ReM = (M + M.conj().T) / 2
        w, V = np.linalg.eigh(ImM)
        if w[0] < 1e-13:
            raise IllConditioned("Im M nearly singular")
        isq = (V / np.sqrt(w)) @ V.conj().T
        q = np.linalg.eigvalsh(isq @ ReM @ isq)
    im_u = 1.0 / np.sqrt(q ** 2 + 1.0)
    return float(np.mean(np.sign(q) * (im_u / rho) ** 3))


@dataclass
class StabilityDiagnostics:
    beta: float
    sigma: float
    binv_hs_norm: float
    binv_op_norm: float
    rho: float
    ratio: float
    method: str


def stability_matrix(model: DataPair, sol: MdeSolution) -> np.ndarray:
    """Dense N^2 x N^2 matrix of X -> X - M S[X] M (row-major vectorization)."""
    M = sol.M
    return np.eye(model.N ** 2) - np.kron(M, M.T) @ model.S.dense_matrix()


def stability_operator_norms(model: DataPair, z, opts=None, dense_cap: int = 40,
                             probes: int = 8, seed: int = 0) -> StabilityDiagnostics:
    """Inverse norms of the stability operator together with beta.

    The hs->hs norm is exact (smallest singular value). The op->op norm is a
    lower estimate: the largest ratio over a fixed probe set that contains the
    least stable direction.
    """
    z = z.z if isinstance(z, SpectralPoint) else complex(z)
    sol = solve_mde(model, z, opts)
    N = model.N
    rho = sol.rho
    sig = sigma_shape(model, z, sol=sol)
    beta = rho ** 2 + rho * abs(sig) + z.imag / rho
    M = sol.M
    rng = np.random.default_rng(seed)
    if N <= dense_cap:
        Bm = stability_matrix(model, sol)
        U, s, Vh = np.linalg.svd(Bm)
        smin = s[-1]
        if smin < 1e-14:
            raise SingularStability("stability operator singular")
        worst = Vh[-1].conj().reshape(N, N)

        def solve(X):
            return np.linalg.solve(Bm, X.ravel()).reshape(N, N)
        method = "dense"
    else:
        def mv(v):
            X = v.reshape(N, N)
            return (X - M @ model.S.apply(X) @ M).ravel()

        def rmv(v):
            X = v.reshape(N, N)
            return (X - model.S.apply(M.conj().T @ X @ M.conj().T)).ravel()
        op = spla.LinearOperator((N * N, N * N), matvec=mv, rmatvec=rmv, dtype=complex)

        def solve(X):
            sol_, _ = spla.gmres(op, X.ravel(), rtol=1e-12, atol=0.0, restart=50, maxiter=50)
            return sol_.reshape(N, N)

        # inverse power iteration on (B B*)^{-1}
        v = rng.standard_normal(N * N) + 1j * rng.standard_normal(N * N)
        v /= np.linalg.norm(v)
        smin = np.inf
        for _ in range(40):
            y = solve(v.reshape(N, N)).ravel()
            x, _ = spla.gmres(op.H, y, rtol=1e-12, atol=0.0, restart=50, maxiter=50)
            nx = np.linalg.norm(x)
            new = 1.0 / np.sqrt(nx)
            v = x / nx
            if abs(new - smin) < 1e-10 * new:
                smin = new
                break
            smin = new
        if smin < 1e-14:
            raise SingularStability("stability operator singular")
        worst = v.reshape(N, N)
        method = "iterative"
    cands = [worst, np.eye(N), M, (M - M.conj().T) / 2j]
    for _ in range(probes):
        G = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
        cands.append((G + G.conj().T) / 2)
    op_norm = 0.0
    for X in cands:
        nx = np.linalg.norm(X, 2)
        if nx > 0:
            op_norm = max(op_norm, np.linalg.norm(solve(X), 2) / nx)
    hs = 1.0 / smin
    return StabilityDiagnostics(beta, sig, hs, op_norm, rho, hs / (1.0 + 1.0 / beta), method)
