"""Extended Pearcey kernel by contour quadrature and empirical cusp statistics.

The kernel is

    K_a(x, y) = (2 pi i)^-2 int_Xi dz int_Phi dw
                exp(-w^4/4 + a w^2/2 - y w + z^4/4 - a z^2/2 + x z) / (w - z),

with Phi the imaginary axis traversed upwards and Xi the union of the wedge
e^{i pi/4} inf -> 0 -> e^{-i pi/4} inf and its mirror image
e^{5i pi/4} inf -> 0 -> e^{3i pi/4} inf. The two contours touch at the origin;
the wedge vertices are moved to +-delta so that they are disjoint. For every w on
Phi except the origin this deformation does not cross the pole, so the value does
not depend on delta, which is checked rather than assumed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .ensemble import trial_rng
from .errors import PoorFit, QuadratureNotConverged, TooFewPoints
from .mde import DataPair, scdos


@dataclass(frozen=True)
class PearceyConfig:
    alpha: float = 0.0
    ray_length: float = 7.0
    nodes_per_ray: int = 64
    delta: float = 0.2
    tol: float = 1e-6

    def __post_init__(self):
        if self.nodes_per_ray < 32:
            raise ValueError("nodes_per_ray must be at least 32")
        if not 0 < self.delta <= 0.5:
            raise ValueError("delta must lie in (0, 0.5]")
        if self.ray_length < 5:
            raise ValueError("ray_length too short for quartic decay")


def _ray_nodes(n: int, L: float):
    """Gauss-Legendre nodes on [0, L] after the graded map r = L u^2 (dense near 0)."""
    u, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (u + 1)
    w = 0.5 * w
    return L * u ** 2, 2 * L * u * w


def _contours(cfg: PearceyConfig, n: int):
    r, wr = _ray_nodes(n, cfg.ray_length)
    d = cfg.delta
    # Phi: w = i s for s in [0, L] and w = -i s for s in [0, L] (the latter reversed)
    w = np.concatenate([1j * r, -1j * r])
    dw = np.concatenate([1j * wr, 1j * wr])
    # Xi: (vertex, direction, orientation)
    rays = [(d, np.exp(1j * np.pi / 4), -1), (d, np.exp(-1j * np.pi / 4), 1),
            (-d, np.exp(5j * np.pi / 4), -1), (-d, np.exp(3j * np.pi / 4), 1)]
    z = np.concatenate([v + r * e for v, e, _ in rays])
    dz = np.concatenate([s * e * wr for _, e, s in rays])
    return w, dw, z, dz


def _kernel_matrix(cfg: PearceyConfig, x: np.ndarray, y: np.ndarray, n: int) -> np.ndarray:
    a = cfg.alpha
    w, dw, z, dz = _contours(cfg, n)
    Fw = dw[None, :] * np.exp(-w ** 4 / 4 + a * w ** 2 / 2 - np.outer(y, w))
    Fz = dz[None, :] * np.exp(z ** 4 / 4 - a * z ** 2 / 2 + np.outer(x, z))
    C = 1.0 / (w[:, None] - z[None, :])
    return (Fz @ (C.T @ Fw.T)) / (2j * np.pi) ** 2


def pearcey_kernel(cfg: PearceyConfig, x, y, return_error: bool = False):
    """K_alpha(x_i, y_j) on the outer product grid of x and y.

    Scalars in give a scalar out. The error estimate is the change under doubling
    of the nodes per ray; QuadratureNotConverged is raised when it exceeds cfg.tol.
    """
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    K1 = _kernel_matrix(cfg, x, y, cfg.nodes_per_ray)
    K2 = _kernel_matrix(cfg, x, y, 2 * cfg.nodes_per_ray)
    err = float(np.abs(K2 - K1).max())
    if err > cfg.tol:
        raise QuadratureNotConverged("node doubling changed the kernel", err)
    K = K2
    if scalar:
        K = complex(K[0, 0])
    return (K, err) if return_error else K


def pearcey_density(cfg: PearceyConfig, x) -> np.ndarray:
    """One-point intensity K_alpha(x, x)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty(len(x))
    for k in range(0, len(x), 64):
        xs = x[k:k + 64]
        out[k:k + 64] = np.real(np.diag(pearcey_kernel(cfg, xs, xs)))
    return out


def pearcey_asymptotic_density(x) -> np.ndarray:
    """Large |x| behaviour sqrt(3)/(2 pi) |x|^(1/3) of the alpha = 0 intensity."""
    return np.sqrt(3.0) / (2 * np.pi) * np.abs(x) ** (1.0 / 3.0)


def kpoint_correlation(cfg: PearceyConfig, points) -> float:
    """det(K(x_i, x_j)) for up to six points."""
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    if not 1 <= len(pts) <= 6:
        raise ValueError("between 1 and 6 points supported")
    K = pearcey_kernel(cfg, pts, pts)
    return float(np.real(np.linalg.det(K)))


# ---------------------------------------------------------------- slope parameter

@dataclass
class SlopeFit:
    c: float
    gamma: float
    r2: float
    convention: str = "gamma = (2 pi c / sqrt 3)^(3/4)"


def slope_estimate(model: DataPair, b: float, window=(1e-4, 1e-2), points: int = 25,
                   eta_floor: float = 1e-10, min_r2: float = 0.95) -> SlopeFit:
    """Fit rho(b + x) = c |x|^(1/3) on both sides of b and convert c to gamma.

    The conversion makes the rescaled intensity c |x|^(1/3) / gamma^(4/3) agree
    with the large-|x| Pearcey intensity sqrt(3)/(2 pi) |x|^(1/3).
    """
    ax = np.geomspace(window[0], window[1], points)
    x = np.concatenate([-ax[::-1], ax])
    rho = scdos(model, b + x, eta_floor)
    f = np.abs(x) ** (1.0 / 3.0)
    c = float(f @ rho / (f @ f))
    ss_res = float(np.sum((rho - c * f) ** 2))
    ss_tot = float(np.sum((rho - rho.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    if r2 < min_r2 or c <= 0:
        raise PoorFit("density is not of cube-root type at b", r2)
    return SlopeFit(c, float((2 * np.pi * c / np.sqrt(3.0)) ** 0.75), r2)


# ---------------------------------------------------------------- empirical statistics

@dataclass
class CuspStatistics:
    b: float
    gamma: float
    N: int
    trials: int
    x_max: float
    samples: list
    bin_edges: np.ndarray
    density: np.ndarray
    stderr: np.ndarray
    pair_counts: dict = field(default_factory=dict)

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def all_samples(self) -> np.ndarray:
        return np.concatenate([np.asarray(s) for s in self.samples]) if self.samples else np.array([])


def eigenvalues_near(H: np.ndarray, center: float, radius: float, k: int = 16) -> np.ndarray:
    """All eigenvalues of H within ``radius`` of ``center`` by shift-invert Lanczos.

    k grows until the farthest computed eigenvalue lies outside the radius.
    """
    N = H.shape[0]
    while True:
        k = min(k, N - 2)
        vals = spla.eigsh(H, k=k, sigma=center, which="LM", return_eigenvectors=False)
        vals = np.sort(np.real(vals))
        if np.abs(vals - center).max() > radius or k >= N - 2:
            return vals[np.abs(vals - center) <= radius]
        k *= 2


def empirical_cusp_statistics(sampler, b: float, gamma: float, N: int, trials: int, seed: int,
                              x_max: float = 5.0, bin_width: float = 0.25,
                              min_points: int = 500) -> CuspStatistics:
    """Rescaled eigenvalues x = gamma N^(3/4) (lambda - b) collected over trials.

    Parameters
    ----------
    sampler : callable
        (rng, N) -> dense Hermitian matrix of the cusp ensemble.
    b, gamma : float
        Cusp location and slope parameter.

    Returns
    -------
    CuspStatistics
        Binned intensity (points per unit x per trial) with standard errors and
        pair counts over bins for two-point estimates.
    """
    if not 0 < x_max <= 5:
        raise ValueError("x_max must lie in (0, 5]")
    scale = gamma * N ** 0.75
    samples = []
    for t in range(trials):
        H = sampler(trial_rng(seed, t), N)
        lam = eigenvalues_near(H, b, x_max / scale)
        samples.append((scale * (lam - b)).tolist())
    total = sum(len(s) for s in samples)
    if total < min_points:
        raise TooFewPoints(f"{total} rescaled eigenvalues in the window, need {min_points}")
    nb = int(round(2 * x_max / bin_width))
    edges = np.linspace(-x_max, x_max, nb + 1)
    per_trial = np.array([np.histogram(s, edges)[0] for s in samples], dtype=float)
    density = per_trial.mean(axis=0) / bin_width
    stderr = per_trial.std(axis=0, ddof=1) / np.sqrt(trials) / bin_width
    pairs = np.zeros((nb, nb))
    for s in samples:
        idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, nb - 1)
        h = np.bincount(idx, minlength=nb).astype(float)
        pairs += np.outer(h, h) - np.diag(h)
    return CuspStatistics(b, gamma, N, trials, x_max, samples, edges, density, stderr,
                          {"counts": pairs / trials / bin_width ** 2})


def binned_kernel_density(cfg: PearceyConfig, edges: np.ndarray, per_bin: int = 6) -> np.ndarray:
    """Average of K(x, x) over each bin (Gauss-Legendre in every bin)."""
    u, w = np.polynomial.legendre.leggauss(per_bin)
    lo, hi = edges[:-1], edges[1:]
    x = (0.5 * (hi - lo))[:, None] * u[None, :] + (0.5 * (hi + lo))[:, None]
    K = pearcey_density(cfg, x.ravel()).reshape(x.shape)
    return 0.5 * K @ w


def compare_density(stats: CuspStatistics, cfg: PearceyConfig, compare_range: float = 3.0) -> dict:
    """Sup distance between empirical and predicted bin intensities on [-r, r].

    The returned ``relative`` is the sup distance divided by sup K over the same
    bins; ``z_scores`` measure each bin's deviation in standard errors.
    """
    pred = binned_kernel_density(cfg, stats.bin_edges)
    c = stats.centers
    sel = np.abs(c) <= compare_range
    diff = stats.density[sel] - pred[sel]
    sup_k = float(pred[sel].max())
    se = np.where(stats.stderr[sel] > 0, stats.stderr[sel], np.nan)
    return {"sup_distance": float(np.abs(diff).max()), "sup_kernel": sup_k,
            "relative": float(np.abs(diff).max() / sup_k),
            "z_scores": (diff / se).tolist(), "predicted": pred.tolist(),
            "empirical": stats.density.tolist(), "centers": c.tolist()}


def reflection_asymmetry(stats: CuspStatistics) -> np.ndarray:
    """(density(x) - density(-x)) / combined standard error, for bins with x > 0."""
    d, s = stats.density, stats.stderr
    half = len(d) // 2
    left, right = d[:half][::-1], d[-half:]
    sl, sr = s[:half][::-1], s[-half:]
    se = np.sqrt(sl ** 2 + sr ** 2)
    return np.where(se > 0, (right - left) / np.where(se > 0, se, 1.0), 0.0)
