"""Support structure of the density: bands, gaps, edges, cusps and fluctuation scales."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AmbiguousExponent, EmptySupport, NoSignChange, NotInGap
from .mde import DataPair, density_batch, scdos

REFINE_ETA = 1e-10


@dataclass
class SupportProfile:
    bands: list
    gaps: list
    band_masses: list
    singularities: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def band_of(self, E):
        for k, (l, r) in enumerate(self.bands):
            if l <= E <= r:
                return k
        return None


@dataclass
class GapGeometry:
    Delta: float
    kappa: float
    side: str
    e_minus: float
    e_plus: float


@dataclass
class FluctuationScale:
    eta_f: float
    regime: str


def default_range(model: DataPair, pad: float = 0.5):
    N = model.N
    s_norm = float(np.linalg.norm(model.S.apply(np.eye(N)), 2))
    L = model.C_A + 2.0 * np.sqrt(s_norm) + pad
    return (-L, L)


def _bisect_edge(model, inside, outside, thr, tol=1e-8, eta_floor=REFINE_ETA, points=15):
    """Locate the threshold crossing between ``inside`` (above) and ``outside`` (below).

    Each round evaluates ``points`` equispaced interior energies in one batch.
    """
    while abs(inside - outside) > tol:
        x = inside + (outside - inside) * np.arange(1, points + 1) / (points + 1)
        above = scdos(model, x, eta_floor) > thr
        k = int(np.argmin(above)) if not above.all() else points
        # first point (from the inside) that falls below threshold
        new_in = inside if k == 0 else x[k - 1]
        new_out = outside if k == points else x[k]
        inside, outside = new_in, new_out
    return 0.5 * (inside + outside)


def band_mass(model: DataPair, left: float, right: float, nodes: int = 400,
              eta_floor: float = 1e-9) -> float:
    """Mass of the density over [left, right] using a cosine substitution.

    The substitution x = l + (r - l)(1 - cos t)/2 removes square root endpoint
    singularities so that the trapezoid rule in t converges quickly.
    """
    t = np.linspace(0.0, np.pi, nodes + 1)
    x = left + (right - left) * (1 - np.cos(t)) / 2
    jac = (right - left) * np.sin(t) / 2
    r = scdos(model, x, eta_floor)
    return float(np.trapezoid(r * jac, t))


def _interior_minima(E, r, thr):
    out = []
    for k in range(1, len(r) - 1):
        if r[k] > thr and r[k] <= r[k - 1] and r[k] < r[k + 1]:
            lo = max(0, k - 50)
            hi = min(len(r), k + 51)
            if r[k] < 0.25 * r[lo:hi].max():
                out.append(k)
    return out


def _refine_minimum(model, a, b, eta, iters=60):
    g = (np.sqrt(5) - 1) / 2
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc = density_batch(model, np.array([c + 1j * eta]))[0]
    fd = density_batch(model, np.array([d + 1j * eta]))[0]
    for _ in range(iters):
        if abs(b - a) < 1e-10:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = density_batch(model, np.array([c + 1j * eta]))[0]
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = density_batch(model, np.array([d + 1j * eta]))[0]
    return 0.5 * (a + b)


def scan_support(model: DataPair, E_range=None, grid_step: float = 1e-3,
                 rho_threshold: float = 1e-6, eta_floor: float = 1e-6,
                 classify: bool = True) -> SupportProfile:
    """Locate bands and gaps of the density on a grid and refine the edges.

    Parameters
    ----------
    model : DataPair
    E_range : (float, float), optional
        Scan window, by default a bound on the spectrum.
    grid_step : float
        Spacing of the coarse grid.
    rho_threshold : float
        Density level separating bands from gaps.
    eta_floor : float
        Smallest eta of the extrapolated density on the coarse grid.
    classify : bool
        Fit exponents at edges and interior minima.

    Returns
    -------
    SupportProfile
    """
    lo, hi = E_range if E_range is not None else default_range(model)
    if not hi > lo:
        raise ValueError("empty energy range")
    E = np.arange(lo, hi + 0.5 * grid_step, grid_step)
    r = scdos(model, E, eta_floor)
    mask = r > rho_threshold
    if not mask.any():
        raise EmptySupport("density below threshold on the whole range")
    idx = np.flatnonzero(np.diff(mask.astype(int)))
    bands = []
    start = E[0] if mask[0] else None
    for k in idx:
        if not mask[k]:
            start = _bisect_edge(model, E[k + 1], E[k], rho_threshold)
        else:
            bands.append((float(start), float(_bisect_edge(model, E[k], E[k + 1], rho_threshold))))
            start = None
    if start is not None:
        bands.append((float(start), float(E[-1])))
    gaps = [(bands[k][1], bands[k + 1][0]) for k in range(len(bands) - 1)]
    minima = [_refine_minimum(model, E[k - 1], E[k + 1], REFINE_ETA * 100)
              for k in _interior_minima(E, r, rho_threshold)]
    masses = []
    for l, r_ in bands:
        cuts = [l] + sorted(x for x in minima if l < x < r_) + [r_]
        masses.append(sum(band_mass(model, cuts[j], cuts[j + 1]) for j in range(len(cuts) - 1)))
    sings = []
    if classify:
        for l, r_ in bands:
            for loc in (l, r_):
                try:
                    kind, expo, _ = classify_singularity(model, loc)
                except AmbiguousExponent as exc:
                    kind, expo = "ambiguous", exc.slope
                sings.append((float(loc), kind, float(expo)))
        for loc in minima:
            try:
                kind, expo, _ = classify_singularity(model, loc, rho_threshold=rho_threshold)
            except AmbiguousExponent as exc:
                kind, expo = "ambiguous", exc.slope
            sings.append((float(loc), kind, float(expo)))
    return SupportProfile(bands, gaps, masses, sings)


def fit_power(x, y):
    """Least squares fit log y = a + p log x; returns (p, a, r2, rms)."""
    lx, ly = np.log(x), np.log(y)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return float(coef[0]), float(coef[1]), r2, float(np.sqrt(ss_res / len(lx)))


def classify_singularity(model: DataPair, location: float, window=(1e-4, 1e-2),
                         points: int = 21, eta_floor: float = 1e-6,
                         rho_threshold: float = 1e-6):
    """Fit the local power law of the density at ``location``.

    Returns
    -------
    kind : str
        One of "edge", "cusp", "small-minimum".
    exponent : float
    r2 : float
        Coefficient of determination of the log-log fit.
    """
    x = np.geomspace(window[0], window[1], points)
    rp = scdos(model, location + x, eta_floor)
    rm = scdos(model, location - x, eta_floor)
    xs, ys = [], []
    for side in (rp, rm):
        if np.all(side > rho_threshold):
            xs.append(x)
            ys.append(side)
    if not xs:
        raise AmbiguousExponent("density vanishes near the point", float("nan"))
    p, _, r2, rms = fit_power(np.concatenate(xs), np.concatenate(ys))
    if rms > 0.1:
        raise AmbiguousExponent("poor power-law fit", p)
    if 0.4 <= p <= 0.6:
        return "edge", p, r2
    if 0.28 <= p <= 0.39:
        return "cusp", p, r2
    r0 = scdos(model, location, 1e-9)
    if r0 > rho_threshold:
        return "small-minimum", p, r2
    raise AmbiguousExponent("exponent outside edge and cusp ranges", p)


def _gap_integral(model, e0, eta, nodes=24, eta_floor=1e-8):
    u, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * (u + 1)
    w = 0.5 * w
    x = eta * u ** 3
    jac = 3 * eta * u ** 2 * w
    r = scdos(model, np.concatenate([e0 + x, e0 - x]), eta_floor)
    return float(np.sum(jac * r[:nodes]) + np.sum(jac * r[nodes:]))


def fluctuation_scale_gap(Delta: float, N: int) -> float:
    """Fluctuation scale at a gap edge with width Delta (convention constant 1)."""
    D = min(abs(Delta), 1.0)
    if D > N ** -0.75:
        return N ** (-2.0 / 3.0) * D ** (1.0 / 9.0)
    return N ** -0.75


def gap_around(model: DataPair, E0: float, rho_threshold: float = 1e-6,
               eta_floor: float = REFINE_ETA, reach: float | None = None, tol: float = 1e-10):
    """Endpoints of the gap containing E0; (E0, E0) when E0 lies in the support.

    Endpoints are +-inf when the density vanishes all the way out to ``reach``.
    """
    if scdos(model, E0, eta_floor) > rho_threshold:
        return E0, E0
    lo_r, hi_r = default_range(model)
    reach = reach or (hi_r - lo_r)
    # doubling steps resolve edges near E0; capping the step keeps narrow bands from being skipped
    cap = reach / 400
    geo = 1e-6 * 2.0 ** np.arange(int(np.ceil(np.log2(cap / 1e-6))) + 1)
    steps = np.concatenate([geo, geo[-1] + cap * np.arange(1, int(np.ceil(reach / cap)) + 1)])
    ends = []
    for sgn in (-1.0, 1.0):
        k = None
        for c0 in range(0, len(steps), 48):
            r = scdos(model, E0 + sgn * steps[c0:c0 + 48], eta_floor)
            hit = np.flatnonzero(r > rho_threshold)
            if hit.size:
                k = c0 + int(hit[0])
                break
        if k is None:
            ends.append(sgn * np.inf)
            continue
        inner = E0 if k == 0 else E0 + sgn * steps[k - 1]
        ends.append(_bisect_edge(model, E0 + sgn * steps[k], inner, rho_threshold, tol, eta_floor))
    return ends[0], ends[1]


def fluctuation_scale(model: DataPair, e0: float, N: int, rho_threshold: float = 1e-6,
                      eta_floor: float = 1e-8) -> FluctuationScale:
    """Self-consistent fluctuation scale at e0 for matrix size N."""
    if scdos(model, e0, eta_floor) > rho_threshold:
        target = 1.0 / N
        lo, hi = 1e-14, 10.0
        if _gap_integral(model, e0, hi) < target:
            return FluctuationScale(hi, "bulk")
        for _ in range(80):
            mid = np.sqrt(lo * hi)
            if _gap_integral(model, e0, mid) < target:
                lo = mid
            else:
                hi = mid
            if hi / lo < 1 + 1e-10:
                break
        eta_f = float(np.sqrt(lo * hi))
        edge = min(scdos(model, e0 + eta_f, eta_floor), scdos(model, e0 - eta_f, eta_floor))
        return FluctuationScale(eta_f, "edge" if edge <= rho_threshold else "bulk")
    em, ep = gap_around(model, e0, rho_threshold)
    Delta = ep - em
    return FluctuationScale(fluctuation_scale_gap(Delta if np.isfinite(Delta) else 1.0, N), "gap")


def gap_geometry(profile: SupportProfile, E: float) -> GapGeometry:
    """Width of the gap containing E and the distance to its nearest endpoint."""
    for em, ep in profile.gaps:
        if em < E < ep:
            dl, dr = E - em, ep - E
            if abs(dl - dr) <= 1e-12 * max(1.0, ep - em):
                side = "interior"
            else:
                side = "left" if dl < dr else "right"
            return GapGeometry(ep - em, min(dl, dr), side, em, ep)
    raise NotInGap(f"E = {E} is not inside a recorded gap")


def gap_comparison_ratio(model: DataPair, geom: GapGeometry, E: float, eta: float) -> float:
    """rho(E + i eta) (kappa + eta)^{1/2} (Delta + kappa + eta)^{1/6} / eta."""
    rho = density_batch(model, np.array([E + 1j * eta]))[0]
    k, D = geom.kappa, geom.Delta
    return float(rho * np.sqrt(k + eta) * (D + k + eta) ** (1 / 6) / eta)


def gap_width(model: DataPair, center: float = 0.0, rho_threshold: float = 1e-6) -> float:
    em, ep = gap_around(model, center, rho_threshold)
    return float(ep - em)


def critical_coupling_search(family, bracket=(0.1, 5.0), center: float = 0.0,
                             tol: float = 1e-6, rho_threshold: float = 1e-6, max_iter: int = 80):
    """Bisection on the gap width of a one-parameter family.

    Parameters
    ----------
    family : callable
        d -> DataPair.
    bracket : (float, float)
        Parameters with and without a gap at ``center`` (either order).
    center : float
        Energy at which the gap opens.

    Returns
    -------
    d_cusp : float
        Parameter on the gapped side with gap width at most ``tol``.
    location : float
        Midpoint of the residual gap.
    """
    a, b = bracket
    Da = gap_width(family(a), center, rho_threshold)
    Db = gap_width(family(b), center, rho_threshold)
    if (Da > 0) == (Db > 0):
        raise NoSignChange("gap present at both or neither bracket end")
    closed, opened = (a, b) if Db > 0 else (b, a)
    Dopen = max(Da, Db)
    for _ in range(max_iter):
        if Dopen <= tol:
            break
        mid = 0.5 * (closed + opened)
        Dm = gap_width(family(mid), center, rho_threshold)
        if Dm > 0:
            opened, Dopen = mid, Dm
        else:
            closed = mid
    em, ep = gap_around(family(opened), center, rho_threshold)
    return float(opened), float(0.5 * (em + ep))
