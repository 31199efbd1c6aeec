import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from cuspflow.errors import SingularInput
from cuspflow.mde import (DataPair, SolverOptions, SpectralPoint, mde_residual, scdos, sigma_shape,
                          solve_mde, stability_operator_norms)
from cuspflow.models import semicircle_model, two_level_model
from cuspflow.selfenergy import COMPLEX, REAL, DenseTensor, VarianceProfile, WignerScalar

from oracles import (scalar_sigma, scalar_stability_inverse_norm, semicircle_density, semicircle_m,
                     two_level_mean_m)

D_CUSP = 1.0000579833984375


def test_oracle_frozen_values():
    assert abs(semicircle_m(1j) - 0.6180339887498949j) < 1e-15
    assert abs(semicircle_m(2j) - 0.41421356237309503j) < 1e-15
    assert abs(semicircle_density(0.0) - 0.3183098861837907) < 1e-15


@pytest.mark.parametrize("z, expected", [(1j, 0.6180339887498949j), (2j, 0.41421356237309503j)])
def test_semicircle_solution(z, expected):
    sol = solve_mde(semicircle_model(4), z)
    assert np.abs(sol.M - expected * np.eye(4)).max() < 1e-10
    assert sol.residual <= 1e-11


def test_far_field_decay():
    z = 1e6j
    for model in (semicircle_model(3), two_level_model(2.0, 4), semicircle_model(3, REAL)):
        sol = solve_mde(model, z)
        assert np.linalg.norm(sol.M + np.eye(model.N) / z, 2) <= 1e-5


def test_spectral_point_rejects_real_axis():
    with pytest.raises(ValueError):
        SpectralPoint(0.0, 0.0)
    with pytest.raises(ValueError):
        solve_mde(semicircle_model(2), 1.0 + 0j)


def test_scdos_semicircle():
    m = semicircle_model(2)
    assert abs(scdos(m, 0.0) - 1 / np.pi) < 1e-6
    assert scdos(m, 2.5) < 1e-6
    E = np.linspace(-1.9, 1.9, 39)
    assert np.abs(scdos(m, E) - semicircle_density(E)).max() < 1e-5


@pytest.mark.parametrize("model", [semicircle_model(2), two_level_model(5.0), two_level_model(D_CUSP),
                                   semicircle_model(6, REAL)])
def test_density_normalization(model):
    E = np.linspace(-9, 9, 18001)
    rho = scdos(model, E, 1e-7)
    assert abs(np.trapezoid(rho, E) - 1) < 1e-4


def test_residual_of_exact_solution():
    model = semicircle_model(3)
    assert mde_residual(model, 1j, semicircle_m(1j) * np.eye(3)) <= 1e-12
    z = 1e6j
    assert mde_residual(model, z, -np.eye(3) / z) <= 1e-5
    with pytest.raises(SingularInput):
        mde_residual(model, 1j, np.zeros((3, 3)))


def test_sigma_vanishes_at_symmetry_point():
    assert abs(sigma_shape(semicircle_model(2), 1e-4j)) < 1e-8


def test_sigma_near_edge_matches_scalar_oracle():
    z = 1.9 + 1e-3j
    m = semicircle_m(z)
    expected = scalar_sigma(m, m.imag / np.pi)
    assert abs(sigma_shape(semicircle_model(2), z) - expected) < 1e-8 * max(1, abs(expected))


def test_sigma_small_at_cusp():
    assert abs(sigma_shape(two_level_model(D_CUSP), 1e-6j)) <= 0.05


def test_stability_bulk_and_far_field():
    d = stability_operator_norms(semicircle_model(3), 0.01j)
    m = semicircle_m(0.01j)
    assert abs(d.rho - m.imag / np.pi) < 1e-9
    assert abs(d.beta - (d.rho ** 2 + 0.01 / d.rho)) < 1e-9
    assert abs(d.binv_hs_norm - scalar_stability_inverse_norm(m)) < 1e-8
    far = stability_operator_norms(semicircle_model(3), 100j)
    assert abs(far.binv_hs_norm - 1) < 1e-3


def test_stability_growth_at_cusp():
    # dense N = 32 singular values; ||B^-1|| should track 1/beta
    model = two_level_model(D_CUSP, 32)
    etas = [1e-2, 3e-3, 1e-3]
    diags = [stability_operator_norms(model, 1j * e) for e in etas]
    norms = np.array([d.binv_hs_norm for d in diags])
    assert np.all(np.diff(norms) > 0)
    slope = np.polyfit(np.log([1 / d.beta for d in diags]), np.log(norms), 1)[0]
    assert 0.8 <= slope <= 1.2


def test_matrix_path_matches_vector_path():
    N = 4
    a = np.array([-1.0, 0.3, 0.3, 2.0])
    dense = DenseTensor(WignerScalar(N, COMPLEX).dense_matrix())
    vec = DataPair(a, WignerScalar(N, COMPLEX))
    mat = DataPair(a, dense)
    assert vec.vector_form() is not None and mat.vector_form() is None
    for z in (0.2 + 0.05j, -1.5 + 0.3j, 3.0 + 1e-3j):
        assert np.abs(solve_mde(vec, z).M - solve_mde(mat, z).M).max() < 1e-9


def test_variance_profile_path():
    rng = np.random.default_rng(0)
    s = rng.uniform(0.5, 1.5, (5, 5))
    s = (s + s.T) / 2 / 5
    a = rng.standard_normal(5)
    vp = DataPair(a, VarianceProfile(s))
    dense = DataPair(a, DenseTensor(VarianceProfile(s).dense_matrix()))
    z = 0.1 + 0.02j
    assert np.abs(solve_mde(vp, z).M - solve_mde(dense, z).M).max() < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(1e-3, 3), st.floats(0.0, 3.0))
def test_two_level_mean_matches_cubic(E, eta, d):
    z = complex(E, eta)
    ref = two_level_mean_m(z, d)
    assume(ref is not None)
    sol = solve_mde(two_level_model(d), z)
    assert abs(sol.avg - ref) < 1e-9
    assert sol.residual <= 1e-11


@settings(max_examples=30, deadline=None)
@given(st.floats(-4, 4), st.floats(1e-4, 10), st.sampled_from([COMPLEX, REAL]))
def test_positivity_and_independent_residual(E, eta, klass):
    model = two_level_model(1.5, 6, klass)
    sol = solve_mde(model, complex(E, eta))
    assert sol.im_eigenvalues().min() > 0
    assert sol.rho >= 0
    assert mde_residual(model, complex(E, eta), sol.M) <= 1e-10


def test_positivity_on_grid():
    model = two_level_model(D_CUSP, 4)
    E = np.linspace(-4, 4, 20)
    etas = np.geomspace(1e-6, 10, 10)
    for e in E:
        for eta in etas:
            assert solve_mde(model, complex(e, eta)).im_eigenvalues().min() > 0


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(0.0, 3.0))
def test_herglotz_monotonicity(E, d):
    model = two_level_model(d)
    etas = np.geomspace(1e-4, 100, 25)
    vals = np.array([eta * solve_mde(model, complex(E, eta)).avg.imag for eta in etas])
    assert np.all(np.diff(vals) >= -1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 6), st.floats(0.1, 4))
def test_reflection_symmetry(E, d):
    model = two_level_model(d, 4)
    assert abs(scdos(model, E) - scdos(model, -E)) < 1e-8


def test_solver_options_respected():
    sol = solve_mde(semicircle_model(2), 0.5j, SolverOptions(tol=1e-13))
    assert sol.residual <= 1e-13
