import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cuspflow.errors import AmbiguousExponent, EmptySupport, NoSignChange, NotInGap
from cuspflow.models import semicircle_model, two_level_family, two_level_model
from cuspflow.shape import (classify_singularity, critical_coupling_search, fit_power,
                            fluctuation_scale, fluctuation_scale_gap, gap_comparison_ratio,
                            gap_geometry, gap_width, scan_support)

from oracles import semicircle_density

D_CUSP = 1.0000579833984375


@pytest.fixture(scope="module")
def two_band():
    model = two_level_model(5.0)
    return model, scan_support(model)


def test_semicircle_support():
    prof = scan_support(semicircle_model(2))
    assert len(prof.bands) == 1 and not prof.gaps
    l, r = prof.bands[0]
    # rho(E) > 1e-6 cuts the band where sqrt(4 - E^2) / (2 pi) = 1e-6
    edge = np.sqrt(4 - (2 * np.pi * 1e-6) ** 2)
    assert abs(r - edge) < 1e-7 and abs(l + edge) < 1e-7
    assert abs(prof.band_masses[0] - 1) < 1e-3
    assert abs(semicircle_density(r)) < 2e-6


def test_two_band_masses(two_band):
    _, prof = two_band
    assert len(prof.bands) == 2 and len(prof.gaps) == 1
    assert np.allclose(prof.band_masses, [0.5, 0.5], atol=1e-3)
    (l0, r0), (l1, r1) = prof.bands
    assert l0 < r0 < l1 < r1
    assert prof.gaps[0] == (r0, l1)
    assert abs(sum(prof.band_masses) - 1) < 1e-3
    assert all(kind == "edge" for _, kind, _ in prof.singularities)


def test_empty_support():
    with pytest.raises(EmptySupport):
        scan_support(semicircle_model(2), (5.0, 6.0))


def test_cusp_model_profile():
    prof = scan_support(two_level_model(D_CUSP))
    kinds = [k for _, k, _ in prof.singularities]
    assert "cusp" in kinds
    loc = [x for x, k, _ in prof.singularities if k == "cusp"][0]
    assert abs(loc) < 1e-3


def test_classify_edge_and_cusp():
    kind, p, r2 = classify_singularity(semicircle_model(2), 2.0)
    assert kind == "edge" and abs(p - 0.5) < 0.03
    kind, p, r2 = classify_singularity(two_level_model(D_CUSP), 0.0, eta_floor=1e-10)
    assert kind == "cusp" and abs(p - 1 / 3) < 0.05 and r2 >= 0.99


def test_classify_gap_midpoint_is_ambiguous():
    with pytest.raises(AmbiguousExponent):
        classify_singularity(two_level_model(5.0), 0.0)


def test_classify_small_minimum():
    kind, p, _ = classify_singularity(two_level_model(0.95), 0.0)
    assert kind == "small-minimum"


def test_critical_coupling_search():
    d, b = critical_coupling_search(two_level_family())
    assert d == D_CUSP
    assert gap_width(two_level_model(d)) <= 1e-6
    assert abs(b) <= 1e-6
    # the gap of this family closes at d = 1 (the cubic for <M> has a triple root at z = 0)
    assert abs(d - 1) < 1e-4
    with pytest.raises(NoSignChange):
        critical_coupling_search(two_level_family(), (2.0, 5.0))


def test_gap_width_monotone_past_cusp():
    ds = np.linspace(D_CUSP, 4.0, 20)
    widths = [gap_width(two_level_model(d)) for d in ds]
    assert np.all(np.diff(widths) >= 0)


def test_fluctuation_scale_bulk():
    fs = fluctuation_scale(semicircle_model(2), 0.0, 1000)
    assert fs.regime == "bulk"
    assert abs(fs.eta_f - np.pi / 2000) / (np.pi / 2000) < 1e-4
    # mass 1/N in the window, within 1 %
    x = np.linspace(-fs.eta_f, fs.eta_f, 2001)
    mass = np.trapezoid(semicircle_density(x), x)
    assert abs(mass * 1000 - 1) < 0.01


def test_fluctuation_scale_gap_regimes():
    assert fluctuation_scale_gap(1.0, 10 ** 6) == pytest.approx(1e-4, rel=1e-12)
    assert fluctuation_scale_gap(1e-4, 10 ** 4) == pytest.approx(1e-3, rel=1e-12)
    assert fluctuation_scale_gap(50.0, 10 ** 6) == pytest.approx(1e-4, rel=1e-12)
    fs = fluctuation_scale(two_level_model(5.0), 0.0, 10 ** 6)
    assert fs.regime == "gap" and fs.eta_f == pytest.approx(1e-4)


@settings(max_examples=50, deadline=None)
@given(st.integers(100, 10 ** 8), st.floats(0.5, 2.0))
def test_fluctuation_scale_continuous_at_switch(N, f):
    D0 = N ** -0.75
    a, b = fluctuation_scale_gap(D0 / f, N), fluctuation_scale_gap(D0 * f, N)
    assert max(a, b) / min(a, b) <= 2.0


def test_gap_geometry(two_band):
    model, prof = two_band
    geo = gap_geometry(prof, 0.0)
    assert geo.Delta == pytest.approx(prof.gaps[0][1] - prof.gaps[0][0])
    assert geo.kappa == pytest.approx(geo.Delta / 2)
    assert geo.kappa <= geo.Delta
    with pytest.raises(NotInGap):
        gap_geometry(prof, 5.0)


@pytest.mark.parametrize("d", [1.05, 1.3])
def test_gap_comparison_ratio_bounded(d):
    model = two_level_model(d)
    prof = scan_support(model, classify=False)
    em, ep = prof.gaps[0]
    D = ep - em
    ratios = []
    for kf in (0.01, 0.1, 0.3, 0.5):
        E = em + kf * D
        geo = gap_geometry(prof, E)
        for ef in (1e-3, 1e-2, 0.1, 1.0):
            ratios.append(gap_comparison_ratio(model, geo, E, ef * geo.kappa))
    assert 0.1 <= min(ratios) and max(ratios) <= 10


def test_fit_power_recovers_exponent():
    x = np.geomspace(1e-4, 1e-2, 20)
    p, a, r2, rms = fit_power(x, 3 * x ** 0.37)
    assert abs(p - 0.37) < 1e-12 and abs(np.exp(a) - 3) < 1e-10 and r2 > 1 - 1e-12


def test_profile_serializes(two_band):
    _, prof = two_band
    d = prof.to_dict()
    assert set(d) == {"bands", "gaps", "band_masses", "singularities"}
