import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cuspflow.ensemble import gaussian_matrix, trial_rng
from cuspflow.errors import InsufficientData
from cuspflow.mde import DataPair, solve_mde
from cuspflow.models import semicircle_model, two_level_model
from cuspflow.selfenergy import COMPLEX, WignerScalar
from cuspflow.shape import scan_support
from cuspflow.verify import (DensityTable, ObservableSet, ResolventCache, average_law_metric, bracket,
                             band_and_gap_by_inertia, band_counts_by_inertia, band_mass_check,
                             bulk_window, count_below, delocalization_check, exclusion_interval,
                             far_away_errors, gap_exclusion_by_inertia, gap_exclusion_check,
                             hs_norm, iso_normalizer, isotropic_law_metric, monotone_profile, resolvent,
                             rigidity_check, scaling_study, tridiagonal_sampler, ward_residual)


def gue(N, seed=0):
    return gaussian_matrix(trial_rng(seed, 0), N, COMPLEX)


@pytest.fixture(scope="module")
def gue_cache():
    return ResolventCache(gue(200, 3))


def test_reconstruction_and_completeness(gue_cache):
    assert len(gue_cache.eigenvalues) == gue_cache.N
    assert np.all(np.diff(gue_cache.eigenvalues) >= 0)
    for z in (0.1 + 0.01j, -1.5 + 1e-3j, 3.0 + 2j):
        assert gue_cache.reconstruction_error(z) <= 1e-9


def test_resolvent_rejects_real_z():
    with pytest.raises(ValueError):
        resolvent(gue(8), 0.3)


@pytest.mark.parametrize("z", [0.2 + 1e-3j, 1.9 + 0.05j, -0.7 + 1.0j])
def test_ward_identity_and_trace_sum_rule(gue_cache, z):
    assert ward_residual(gue_cache, z) <= 1e-9
    G = gue_cache.G(z)
    direct = np.mean(1.0 / (gue_cache.eigenvalues - z))
    assert abs(np.trace(G) / gue_cache.N - direct) <= 1e-10
    assert abs(gue_cache.avg(z) - direct) <= 1e-10


def test_neumann_bound_far_away(gue_cache):
    z = 1e3 * np.exp(0.4j)
    G = gue_cache.G(z)
    normH = np.linalg.norm(gue_cache.H, 2)
    assert np.linalg.norm(G + np.eye(gue_cache.N) / z, 2) <= 2 * normH / abs(z) ** 2


def test_degenerate_model_has_zero_error():
    N = 6
    a = np.array([-1.0, -0.5, 0.0, 0.3, 1.0, 2.0])
    model = DataPair(a, WignerScalar(N, COMPLEX, scale=0.0))
    cache = ResolventCache(np.diag(a).astype(complex))
    z = 0.1 + 0.05j
    sol = solve_mde(model, z)
    assert np.abs(sol.M - cache.G(z)).max() < 1e-12
    assert average_law_metric(cache, sol, z, np.eye(N)) < 1e-9
    # eigenvalues of the sample are those of A
    assert np.array_equal(cache.eigenvalues, np.sort(a))


def test_observable_normalization():
    obs = ObservableSet.standard(64)
    assert hs_norm(obs.matrices["random-hs"]) == pytest.approx(1.0)
    assert hs_norm(obs.matrices["rank-one"]) == pytest.approx(1.0)
    assert abs(np.trace(obs.matrices["rank-one"])) < 1e-12
    for v in obs.vectors.values():
        assert np.linalg.norm(v) == pytest.approx(1.0)


def test_bulk_medians_coordinate():
    # G_11 and <G> of GUE have the same law through the tridiagonal form
    N, z = 1024, 1e-2j
    sol = solve_mde(semicircle_model(2), z)
    draw = tridiagonal_sampler("complex")
    av, iso = [], []
    for t in range(100):
        smp = draw(trial_rng(5, t), N)
        cache = ResolventCache.from_eigen(smp.eigenvalues)
        av.append(abs(cache.avg(z) - sol.avg) * bracket(z) * N * z.imag)
        iso.append(abs(smp.g11(z)[0] - sol.avg) / iso_normalizer(sol.rho, z, N))
    assert np.median(av) <= N ** 0.1
    assert np.median(iso) <= N ** 0.1


def test_metrics_same_order_across_observables():
    N, z = 512, 1e-2j
    sol = solve_mde(semicircle_model(N), z)
    obs = ObservableSet.standard(N)
    e1 = obs.vectors["coordinate"]
    av, rk, iso, orth = [], [], [], []
    for t in range(20):
        cache = ResolventCache(gaussian_matrix(trial_rng(11, t), N, COMPLEX))
        av.append(average_law_metric(cache, sol, z, np.eye(N)))
        rk.append(average_law_metric(cache, sol, z, obs.matrices["rank-one"]))
        iso.append(isotropic_law_metric(cache, sol, z, e1, e1))
        orth.append(isotropic_law_metric(cache, sol, z, obs.vectors["random"],
                                         obs.vectors["random-orth"]))
    assert 0.1 <= np.median(rk) / np.median(av) <= 10
    assert 0.1 <= np.median(orth) / np.median(iso) <= 10


def test_far_away_errors():
    N, z = 256, 50j
    sol = solve_mde(semicircle_model(N), z)
    obs = ObservableSet.standard(N)
    cache = ResolventCache(gue(N, 5))
    err = far_away_errors(cache, sol, z, obs.matrices["random-hs"], obs.vectors["coordinate"],
                          obs.vectors["coordinate"])
    assert err["average"] <= N ** 0.1 and err["isotropic"] <= N ** 0.1


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
def test_metrics_invariant_under_rescaling(c, phi, psi):
    N, z = 32, 0.4 + 0.05j
    cache = ResolventCache(gue(N, 1))
    sol = solve_mde(semicircle_model(N), z)
    obs = ObservableSet.standard(N)
    B = obs.matrices["random-hs"]
    x, y = obs.vectors["random"], obs.vectors["coordinate"]
    a0 = average_law_metric(cache, sol, z, B)
    assert average_law_metric(cache, sol, z, c * B) == pytest.approx(a0, rel=1e-10)
    i0 = isotropic_law_metric(cache, sol, z, x, y)
    i1 = isotropic_law_metric(cache, sol, z, np.exp(1j * phi) * x, np.exp(1j * psi) * y)
    assert i1 == pytest.approx(i0, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2.5, 2.5), st.integers(0, 1000))
def test_monotone_profile(E, k):
    cache = ResolventCache(gue(40, 2))
    u = np.random.default_rng(k).standard_normal(40) + 0j
    prof = monotone_profile(cache, u, E, np.geomspace(1e-6, 1e3, 60))
    assert np.all(np.diff(prof) >= -1e-12 * prof.max())


def test_scaling_study_slopes_and_errors():
    rep = scaling_study(semicircle_model, [256, 512], trials=30, seed=4, n_eta=6,
                        eta_range=(-0.6, 0.1))
    assert set(rep.summary()) >= {"avg_eta_slopes", "avg_N_slope"}
    for N in rep.N:
        assert all(v > 0 for v in rep.avg_norm_q[N])
    with pytest.raises(InsufficientData):
        scaling_study(semicircle_model, [256, 512], trials=2, seed=0)
    with pytest.raises(InsufficientData):
        scaling_study(semicircle_model, [256], trials=10, seed=0)


def test_density_table_semicircle():
    table = DensityTable(semicircle_model(2), [(-2.0, 2.0)])
    assert table.mass == pytest.approx(1.0, abs=1e-4)
    q = table.quantiles(1000)
    assert np.all(np.diff(q) > 0)
    assert abs(q[499] + q[500]) < 1e-9
    ef = table.fluctuation_scale(0.0, 2048)[0]
    assert ef == pytest.approx(np.pi / (2 * 2048), rel=1e-3)


def test_rigidity_median_at_center():
    N, trials = 256, 60
    model = semicircle_model(2)
    table = DensityTable(model, [(-2.0, 2.0)])
    draw = tridiagonal_sampler("complex")
    k = N // 2
    gam = table.quantiles(N)[k]
    devs = np.array([draw(trial_rng(21, t), N).eigenvalues[k] - gam for t in range(trials)])
    se = devs.std(ddof=1) / np.sqrt(trials)
    assert abs(np.median(devs)) <= 3 * 1.25 * se
    window = bulk_window(table, model)
    res = rigidity_check(draw(trial_rng(21, 0), N).eigenvalues, table, window)
    assert res.max_deviation < N ** 0.5 and len(res.indices) > N // 2


def test_rigidity_deterministic_model():
    a = np.linspace(-1, 1, 8)
    table = DensityTable(semicircle_model(2), [(-2.0, 2.0)])
    res = rigidity_check(a, table, eta_f=np.ones(8))
    assert np.allclose(res.deviations, a - table.quantiles(8))


def test_band_mass_examples():
    lam = np.linspace(-1, 1, 10)
    single = band_mass_check(lam, [(-2, 2)], [1.0])
    assert single.counts == [10] and single.exact and single.integral
    model = two_level_model(5.0)
    prof = scan_support(model, classify=False)
    N = 64
    H = np.diag(np.repeat([-5.0, 5.0], N // 2)) + gue(N, 9)
    res = band_mass_check(np.linalg.eigvalsh(H), prof.bands, [0.5, 0.5])
    assert res.integral and res.counts == [N // 2, N // 2] and res.exact
    odd = band_mass_check(np.arange(5.0), prof.bands, [0.5, 0.5])
    assert not odd.integral


def test_gap_exclusion_examples():
    lam = np.array([-3.0, 3.0])
    assert gap_exclusion_check(lam, [], 100)
    gap = (-1.0, 1.0)
    assert gap_exclusion_check(lam, [gap], 1000)
    assert not gap_exclusion_check(np.array([0.0]), [gap], 1000)
    assert exclusion_interval((0.0, 1e-6), 1000, 0.1) is None


def test_inertia_matches_eigenvalues():
    N = 96
    H = np.diag(np.repeat([-3.0, 3.0], N // 2)) + gue(N, 6)
    lam = np.linalg.eigvalsh(H)
    for x in (-5.0, -3.1, 0.0, 0.7, 2.9, 6.0):
        assert count_below(H, x) == np.count_nonzero(lam < x)
    bands, gaps = [(-4.5, -1.5), (1.5, 4.5)], [(-1.5, 1.5)]
    assert band_counts_by_inertia(H, bands) == band_mass_check(lam, bands, [0.5, 0.5]).counts
    assert gap_exclusion_by_inertia(H, gaps, N) == gap_exclusion_check(lam, gaps, N)
    counts, excl = band_and_gap_by_inertia(H, bands, gaps, N, 0.1)
    assert counts == band_counts_by_inertia(H, bands) and excl == gap_exclusion_check(lam, gaps, N)
    # an eigenvalue planted inside the gap is caught by both routes
    H2 = H.copy()
    H2[0, :] = H2[:, 0] = 0
    H2[0, 0] = 0.0
    lam2 = np.linalg.eigvalsh(H2)
    assert not gap_exclusion_check(lam2, gaps, N)
    assert not band_and_gap_by_inertia(H2, bands, gaps, N, 0.1)[1]


def test_delocalization():
    N = 256
    cache = ResolventCache(gue(N, 8))
    v = delocalization_check(cache)
    assert 1.0 <= v <= np.sqrt(N)
    assert delocalization_check(cache, window=(10, 11)) == 0.0
    # a localized eigenvector saturates the bound
    assert delocalization_check(ResolventCache(np.diag(np.arange(4.0)))) == pytest.approx(2.0)
