"""Characteristic flow of the time-dependent Dyson equation.

The data pair is evolved backward from a terminal time T by

    A_t = e^{(T-t)/2} A,    S_t = R + e^{T-t} (S - R),

where R is the relaxation target (the trace average by default). Spectral
parameters follow dz = -z/2 dt - <M_t(z)> dt, along which the solution of the
Dyson equation is transported by the scalar factor e^{-(T-t)/2}.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FlowExitsDomain, FrontExceedsGap, GapClosed, NonConvergence, NotInGap
from .mde import DataPair, MdeSolution, SolverOptions, SpectralPoint, VectorForm, solve_mde
from .selfenergy import CombinedSelfEnergy, WignerScalar, gaussian_reference
from .shape import gap_around


@dataclass
class FlowSchedule:
    """Time grid t_0 = 0 < t_1 < ... < t_K = T with t_k = T - N^{-k delta} T."""

    T: float
    delta: float
    N: int
    times: np.ndarray
    diffs: np.ndarray

    @classmethod
    def build(cls, N: int, T: float | None = None, delta: float = 0.02, eps: float = 0.1,
              xi: float | None = None, C: float = 1.0) -> "FlowSchedule":
        """Build the schedule; T defaults to C N^{-xi/4} with xi = eps/10.

        K is the smallest integer with N^{-K delta} T <= N^{-1+eps}.
        """
        if delta <= 0 or N < 2:
            raise ValueError("delta must be positive and N >= 2")
        xi = eps / 10 if xi is None else xi
        T = C * N ** (-xi / 4) if T is None else float(T)
        if T <= 0:
            raise ValueError("T must be positive")
        K = max(1, int(np.ceil(np.log(T / N ** (-1 + eps)) / (delta * np.log(N)) - 1e-12)))
        k = np.arange(1, K)
        times = np.concatenate([[0.0], T - N ** (-k * delta) * T, [T]])
        return cls(T, delta, N, times, np.diff(times))


class DataPairPath:
    """Closed-form backward evolution of a terminal data pair.

    Parameters
    ----------
    model : DataPair
        Terminal data pair (A, S) at time T.
    T : float
        Terminal time.
    reference : {"average", "gaussian"}
        Relaxation target of the self-energy. ``"average"`` is X -> <X> I in
        both classes, for which M is transported exactly by a scalar.
        ``"gaussian"`` uses the GOE/GUE self-energy (transpose term in the real
        class).
    """

    def __init__(self, model: DataPair, T: float, reference: str = "average"):
        if T <= 0:
            raise ValueError("T must be positive")
        self.model = model
        self.T = float(T)
        self.reference = reference
        N, klass = model.N, model.klass
        if reference == "average":
            self.G = WignerScalar(N, klass, transpose=False)
        elif reference == "gaussian":
            self.G = gaussian_reference(N, klass)
        else:
            raise ValueError(f"unknown reference {reference!r}")
        self._vf = model.vector_form()
        if self._vf is not None:
            vf = self._vf
            if len(vf.a) < N:
                K = len(vf.a)
                Sg = np.outer(np.ones(K), vf.weights).astype(complex)
                if self.G.transpose:
                    Sg += np.eye(K) / N
            else:
                Sg = self.G.vector_matrix(vf.U)
            self._Sg = Sg

    def at(self, t: float) -> DataPair:
        """Data pair (A_t, S_t); the terminal model itself at t = T."""
        if not -1e-15 <= t <= self.T + 1e-15:
            raise ValueError("t outside [0, T]")
        tau = self.T - t
        if tau == 0:
            return self.model
        m = self.model
        S = CombinedSelfEnergy([(np.exp(tau), m.S), (-np.expm1(tau), self.G)])
        vf = None
        if self._vf is not None:
            v = self._vf
            vf = VectorForm(v.U, np.exp(tau / 2) * v.a, v.groups, v.weights,
                            np.exp(tau) * v.Sv - np.expm1(tau) * self._Sg)
        return DataPair._trusted(np.exp(tau / 2) * m.A, S, m.klass, np.exp(tau / 2) * m.C_A,
                                 vform=vf if vf is not None else False, name=m.name)


def evolve_data_pair(path: DataPairPath, t: float) -> DataPair:
    return path.at(t)


@dataclass
class Characteristic:
    """Samples (t, z_t, <M_t(z_t)>, rho_t) ordered from T backward."""

    t: np.ndarray
    z: np.ndarray
    m_avg: np.ndarray
    rho: np.ndarray
    T: float
    z_T: complex
    exited: bool = False
    solutions: list = field(default_factory=list, repr=False)

    def conserved(self) -> np.ndarray:
        return self.z.imag / self.rho + np.pi

    def conservation_residual(self) -> np.ndarray:
        """Relative deviation of eta/rho + pi from its transported terminal value."""
        c = self.conserved()
        target = np.exp(self.T - self.t) * c[0]
        return np.abs(c - target) / c[0]


def _avg_and_sol(path, t, z, init, opts):
    if z.imag <= 0:
        raise FlowExitsDomain("eta left the upper half plane", None)
    sol = solve_mde(path.at(t), z, opts, init=init)
    return sol


def _rk4(path, t, z, h, init, opts):
    """One classical step from t to t + h (h < 0 integrates backward)."""
    def f(tt, zz, ini):
        sol = _avg_and_sol(path, tt, zz, ini, opts)
        return -zz / 2 - sol.avg, sol
    k1, s1 = f(t, z, init)
    k2, s2 = f(t + h / 2, z + h / 2 * k1, s1)
    k3, s3 = f(t + h / 2, z + h / 2 * k2, s2)
    k4, s4 = f(t + h, z + h * k3, s3)
    return z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), s4


def integrate_characteristic(path: DataPairPath, z_T, t_start: float, tol: float = 1e-10,
                             h0: float | None = None, eta_min: float = 1e-9,
                             opts: SolverOptions | None = None,
                             keep_solutions: bool = False) -> Characteristic:
    """Integrate the characteristic ODE backward from (T, z_T) to t_start.

    Classical fourth-order steps with step doubling; a step is accepted when
    the doubling estimate is below ``tol`` per unit time.

    Raises
    ------
    FlowExitsDomain
        When eta would drop below ``eta_min``; the partial characteristic is
        attached as ``last_sample``.
    """
    z_T = z_T.z if isinstance(z_T, SpectralPoint) else complex(z_T)
    if not z_T.imag > 0:
        raise ValueError("terminal eta must be positive")
    T = path.T
    if not 0 <= t_start <= T:
        raise ValueError("t_start outside [0, T]")
    sol = solve_mde(path.at(T), z_T, opts)
    ts, zs, ms, rs, sols = [T], [z_T], [sol.avg], [sol.rho], [sol]
    t, z = T, z_T
    h = h0 or max((T - t_start) / 8, 1e-12)

    def partial(exited):
        return Characteristic(np.array(ts), np.array(zs), np.array(ms), np.array(rs), T, z_T,
                              exited, sols if keep_solutions else [])

    while t > t_start + 1e-15:
        h = min(h, t - t_start)
        try:
            zb, _ = _rk4(path, t, z, -h, sol, opts)
            zh, sh = _rk4(path, t, z, -h / 2, sol, opts)
            z2, s2 = _rk4(path, t - h / 2, zh, -h / 2, sh, opts)
            err = abs(z2 - zb) / 15
            ok = err <= tol * h
        except FlowExitsDomain:
            ok = False
        if not ok:
            h /= 2
            if h < 1e-12:
                raise NonConvergence("characteristic step size underflow", float("nan"))
            continue
        if z2.imag < eta_min:
            raise FlowExitsDomain("eta fell below eta_min", partial(True))
        t = t - h
        if t - t_start < 1e-14:
            t = t_start
        z, sol = z2, s2
        ts.append(t)
        zs.append(z)
        ms.append(sol.avg)
        rs.append(sol.rho)
        sols.append(sol)
        if err < tol * h / 32:
            h *= 2
    return partial(False)


def closed_form_characteristic(path: DataPairPath, z_T, t, sol_T: MdeSolution | None = None):
    """Exact z_t = e^{tau/2} z_T + 2 sinh(tau/2) <M_T(z_T)>, tau = T - t.

    Valid for the trace-average reference.
    """
    z_T = z_T.z if isinstance(z_T, SpectralPoint) else complex(z_T)
    sol_T = sol_T or solve_mde(path.model, z_T)
    tau = path.T - np.asarray(t, dtype=float)
    return np.exp(tau / 2) * z_T + 2 * np.sinh(tau / 2) * sol_T.avg


def transport_M(M_T, t: float, T: float):
    """M_t(z_t) = e^{-(T-t)/2} M_T(z_T)."""
    return np.exp(-(T - t) / 2) * np.asarray(M_T)


def eta_rho_derivative(path: DataPairPath, t: float, z, h: float = 1e-3,
                       opts: SolverOptions | None = None) -> float:
    """Fourth-order central difference of eta_t rho_t along the characteristic at (t, z).

    Neighbouring points are reached by single classical steps, so the result
    is independent of the stored sampling.
    """
    z = complex(z)
    sol = solve_mde(path.at(t), z, opts)
    vals = {}
    for k in (-2, -1, 1, 2):
        s = t + k * h
        if not 0 <= s <= path.T:
            raise ValueError("difference stencil leaves [0, T]")
        zk, sk = _rk4(path, t, z, k * h, sol, opts)
        vals[k] = zk.imag * sk.rho
    return (vals[-2] - 8 * vals[-1] + 8 * vals[1] - vals[2]) / (12 * h)


# ---------------------------------------------------------------- domains

@dataclass
class DomainParams:
    N: int
    T: float
    eps: float = 0.1
    C_L: float = 10.0
    c_prime: float = 1.0
    C_prime: float = 1.0
    zeta: float = 0.01
    r_front: float = 0.1

    def __post_init__(self):
        if not 0 < self.c_prime <= np.pi:
            raise ValueError("c' must lie in (0, pi]")
        if min(self.eps, self.zeta, self.T) <= 0:
            raise ValueError("exponents and T must be positive")


@dataclass
class Membership:
    inside: bool
    margins: dict


def domain_membership(path: DataPairPath, z, t: float, params: DomainParams, which: str = "above",
                      gap: tuple | None = None, rho: float | None = None) -> Membership:
    """Evaluate the defining inequalities of the above-scale or sub-scale domain.

    Margins are positive when the inequality holds. The sub-scale domain needs
    the gap endpoints at time t (``gap``).
    """
    z = complex(z)
    N, eps = params.N, params.eps
    if rho is None:
        rho = solve_mde(path.at(t), z).rho
    E, eta = z.real, z.imag
    tau = params.T - t
    count = rho * N * eta
    if which == "above":
        box = params.C_L + params.C_prime * tau
        margins = {
            "count": np.log(count) - eps * np.log(N),
            "box_E": box - abs(E),
            "box_eta": box - eta,
            "distance": eta / rho - params.c_prime * (N ** (-1 + eps) + tau),
        }
    elif which == "sub":
        if gap is None:
            raise ValueError("sub-scale membership needs gap endpoints")
        em, ep = gap
        kappa = min(abs(E - em), abs(E - ep))
        f = front_function(t, ep - em, N, eps, params.r_front, params.T, check=False)
        margins = {
            "front": kappa - f,
            "count_low": np.log(count) + params.zeta / 2 * np.log(N) if count > 0 else -np.inf,
            "count_high": eps * np.log(N) - (np.log(count) if count > 0 else -np.inf),
        }
    else:
        raise ValueError("which must be 'above' or 'sub'")
    return Membership(all(v >= 0 for v in margins.values()), {k: float(v) for k, v in margins.items()})


def front_function(t: float, Delta_t: float, N: int, eps: float = 0.1, r: float = 0.1,
                   T: float | None = None, check: bool = True) -> float:
    """Distance kept between the sub-scale domain and the edges at time t.

    Raises FrontExceedsGap when the result exceeds Delta_t / 4.
    """
    if Delta_t <= 0:
        raise ValueError("Delta_t must be positive")
    T = t if T is None else T
    eta_f = N ** (-2.0 / 3.0) * Delta_t ** (1.0 / 9.0)
    a = (N ** (-1 + eps) + r * (T - t)) / (2 * Delta_t ** (1.0 / 6.0))
    f = max(a, N ** eps * np.sqrt(eta_f)) ** 2
    if check and f > Delta_t / 4:
        raise FrontExceedsGap(f"front {f:.3e} exceeds a quarter of the gap {Delta_t:.3e}")
    return float(f)


# ---------------------------------------------------------------- gaps

@dataclass
class GapTrack:
    t: np.ndarray
    e_minus: np.ndarray
    e_plus: np.ndarray
    predicted_minus: np.ndarray
    predicted_plus: np.ndarray

    @property
    def Delta(self) -> np.ndarray:
        return self.e_plus - self.e_minus


def _edge_velocity(path, t, e, inward, eta_floor=1e-8):
    """-e/2 - <M_t(e)> with <M> extrapolated to the real axis from just inside the gap."""
    from .mde import mean_m_real_axis
    x = e + inward
    return -x / 2 - mean_m_real_axis(path.at(t), x, eta_floor).real


def evolve_gap(path: DataPairPath, endpoints, t: float, steps: int = 20,
               rho_threshold: float = 1e-6) -> GapTrack:
    """Track the endpoints of a gap from time T back to time t.

    Each step is an explicit midpoint predictor of the endpoint ODE followed by
    a corrector that relocates the true gap edges of rho_s around the
    predicted gap, since the endpoint ODE does not determine the edge
    uniquely when integrated backward.

    Raises
    ------
    GapClosed
        When the gap width drops to 1e-9 or below.
    """
    em, ep = map(float, endpoints)
    T = path.T
    if not ep > em:
        raise NotInGap("endpoints do not bound a gap")
    g0 = gap_around(path.at(T), 0.5 * (em + ep), rho_threshold)
    if not g0[1] - g0[0] > 1e-9:
        raise GapClosed("no gap at the terminal time")
    grid = np.linspace(T, t, steps + 1)
    out_t, out_m, out_p, pr_m, pr_p = [T], [em], [ep], [em], [ep]
    for s0, s1 in zip(grid[:-1], grid[1:]):
        h = s1 - s0
        width = ep - em
        inward = 1e-3 * width
        vm = _edge_velocity(path, s0, em, inward)
        vp = _edge_velocity(path, s0, ep, -inward)
        mm, mp = em + h / 2 * vm, ep + h / 2 * vp
        if not mp > mm:
            raise GapClosed("predicted endpoints crossed")
        vm = _edge_velocity(path, s0 + h / 2, mm, 1e-3 * (mp - mm))
        vp = _edge_velocity(path, s0 + h / 2, mp, -1e-3 * (mp - mm))
        qm, qp = em + h * vm, ep + h * vp
        if not qp - qm > 1e-9:
            raise GapClosed("gap closed during integration")
        cm, cp = gap_around(path.at(s1), 0.5 * (qm + qp), rho_threshold)
        if not cp - cm > 1e-9:
            raise GapClosed("gap closed during integration")
        em, ep = cm, cp
        out_t.append(s1)
        out_m.append(em)
        out_p.append(ep)
        pr_m.append(qm)
        pr_p.append(qp)
    return GapTrack(np.array(out_t), np.array(out_m), np.array(out_p), np.array(pr_m),
                    np.array(pr_p))


def gap_comparison(track: GapTrack, T: float) -> np.ndarray:
    """Delta_s / (Delta_T + (T - s)^{3/2}) along a tracked gap."""
    return track.Delta / (track.Delta[0] + (T - track.t) ** 1.5)


def kappa_growth_constant(path: DataPairPath, track: GapTrack, z_T, opts=None) -> float:
    """Smallest c with sqrt(kappa_s) >= sqrt(kappa_T) + c (T - s) Delta_s^{-1/6}.

    Evaluated along the characteristic through z_T at the tracked times.
    """
    T = path.T
    sol_T = solve_mde(path.model, z_T, opts)
    zs = closed_form_characteristic(path, z_T, track.t, sol_T)
    kap = np.minimum(np.abs(zs.real - track.e_minus), np.abs(zs.real - track.e_plus))
    tau = T - track.t
    ok = tau > 0
    c = (np.sqrt(kap[ok]) - np.sqrt(kap[0])) * track.Delta[ok] ** (1 / 6) / tau[ok]
    return float(c.min()) if c.size else float("nan")


def fit_box_speed(chars) -> float:
    """Largest |dz/dt| seen along a set of characteristics (empirical C')."""
    speed = 0.0
    for ch in chars:
        if len(ch.t) > 1:
            dz = np.abs(np.diff(ch.z)) / np.abs(np.diff(ch.t))
            speed = max(speed, float(dz.max()))
    return speed


def nesting_audit(path: DataPairPath, chars, params: DomainParams) -> dict:
    """Check that flowing a point of the above-scale domain backward stays inside it."""
    checked = violations = 0
    for ch in chars:
        for k in range(len(ch.t)):
            if not domain_membership(path, ch.z[k], ch.t[k], params, rho=ch.rho[k]).inside:
                continue
            for j in range(k + 1, len(ch.t)):
                checked += 1
                if not domain_membership(path, ch.z[j], ch.t[j], params, rho=ch.rho[j]).inside:
                    violations += 1
    return {"pairs": checked, "violations": violations}
