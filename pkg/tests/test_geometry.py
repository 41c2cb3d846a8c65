import numpy as np
import pytest

from conftest import smooth
from flowlab.errors import CurvatureModelError
from flowlab.geometry import (
    SyntheticCurvature,
    build_metric_state,
    codifferential_oneform,
    codifferential_twoform,
    covariant_derivative,
    deturck_field,
    differential,
    divergence_symtensor,
    exterior_derivative_oneform,
    hessian,
    hodge_laplacian_oneform,
    hodge_laplacian_threeform,
    hodge_laplacian_threeform_explicit,
    laplacian_scalar,
    laplacian_values,
    lichnerowicz,
    lie_derivative_metric,
    lie_derivative_oneform,
    lie_derivative_scalar,
    norm_sq_oneform,
    rough_laplacian,
)
from flowlab.grid_core import Grid, ScalarField, SymTensor2Field, ThreeFormField, VecOneFormField, VectorField


def _conformal(grid, u):
    return SymTensor2Field(grid, np.exp(2.0 * u)[..., None, None] * np.eye(grid.dim))


def test_flat_metric_has_no_curvature(flat2):
    assert np.all(flat2.christoffel == 0.0)
    assert np.all(flat2.riemann == 0.0)
    assert np.all(flat2.scalar.values == 0.0)
    assert np.allclose(flat2.vol_density.values, 1.0)


def test_conformal_scalar_curvature():
    grid = Grid.uniform(2, 32)
    x, y = grid.coordinates()
    u = 0.1 * np.sin(x) + 0.05 * np.cos(y)
    m = build_metric_state(_conformal(grid, u))
    lap_u = -0.1 * np.sin(x) - 0.05 * np.cos(y)
    expected = -2.0 * np.exp(-2.0 * u) * lap_u
    assert np.max(np.abs(m.scalar.values - expected)) < 1e-3


def test_curvature_symmetries_hold_after_projection(rng):
    grid = Grid.uniform(3, 8)
    m = build_metric_state(_conformal(grid, 0.1 * smooth(grid, rng, modes=1)))
    R = m.riemann
    assert np.allclose(R, -np.swapaxes(R, -4, -3), atol=1e-12)
    assert np.allclose(R, -np.swapaxes(R, -2, -1), atol=1e-12)
    assert np.allclose(R, np.einsum("...abcd->...cdab", R), atol=1e-12)


def test_metric_is_parallel(rng):
    grid = Grid.uniform(2, 16)
    g = _conformal(grid, 0.2 * smooth(grid, rng))
    m = build_metric_state(g)
    assert np.max(np.abs(covariant_derivative(g.values, m, 2))) < 1e-12


def test_hodge_laplacian_of_a_oneform_on_the_flat_torus(flat2):
    grid = flat2.grid
    x, _ = grid.coordinates()
    omega = VecOneFormField.zeros(grid, 1).values
    omega[..., 0, 0] = np.sin(x)
    omega[..., 1, 0] = np.cos(x)
    out = hodge_laplacian_oneform(VecOneFormField(grid, omega), flat2).values
    assert np.max(np.abs(out + omega)) < 1e-2


def test_threeform_laplacians_agree_on_flat_metric(rng):
    grid = Grid.uniform(3, 8)
    m = build_metric_state(SymTensor2Field.identity(grid))
    H = ThreeFormField(grid, smooth(grid, rng, modes=1))
    a = hodge_laplacian_threeform(H, m).values
    b = hodge_laplacian_threeform_explicit(H, m).values
    assert np.max(np.abs(a - b)) < 1e-10


def test_lichnerowicz_is_the_rough_laplacian_when_flat(flat2, rng):
    grid = flat2.grid
    h = np.zeros(grid.points + (2, 2))
    h[..., 0, 0] = smooth(grid, rng)
    h[..., 0, 1] = h[..., 1, 0] = smooth(grid, rng)
    out = lichnerowicz(SymTensor2Field(grid, h), flat2).values
    assert np.allclose(out, rough_laplacian(h, flat2, 2), atol=1e-12)


def test_laplacian_of_fiber_valued_function():
    grid = Grid.uniform(2, 32)
    m = build_metric_state(SymTensor2Field.identity(grid))
    x, y = grid.coordinates()
    F = np.stack([np.sin(x), np.cos(2.0 * y)], axis=-1)
    expected = np.stack([-np.sin(x), -4.0 * np.cos(2.0 * y)], axis=-1)
    assert np.max(np.abs(laplacian_values(F, m) - expected)) < 1e-2


def test_constant_field_is_killing(flat2):
    X = VectorField(flat2.grid, np.broadcast_to([0.3, -1.2], flat2.grid.points + (2,)).copy())
    assert np.all(lie_derivative_metric(X, flat2).values == 0.0)


def test_deturck_field_vanishes_at_the_reference(rng):
    grid = Grid.uniform(2, 16)
    m = build_metric_state(_conformal(grid, 0.2 * smooth(grid, rng)))
    assert np.all(deturck_field(m, m).values == 0.0)


def test_space_form_curvature_model():
    synth = SyntheticCurvature.space_form(-1.0, 3)
    assert synth.lam == -2.0
    g = np.eye(3)
    assert np.allclose(synth.curvature_action(g, g, g), synth.lam * g)
    assert np.allclose(synth.reduced_action(g, g, g), 0.0)
    R = synth.riemann(g)
    assert np.allclose(np.einsum("abcd,bd->ac", R, g), synth.ricci(g))
    with pytest.raises(CurvatureModelError):
        synth.check_dim(2)
    with pytest.raises(CurvatureModelError):
        SyntheticCurvature(1.0, 2, "einstein")


def test_hessian_on_the_flat_torus():
    grid = Grid.uniform(2, 32)
    m = build_metric_state(SymTensor2Field.identity(grid))
    x, y = grid.coordinates()
    H = hessian(ScalarField(grid, np.sin(x) * np.sin(y)), m).values
    assert np.max(np.abs(H[..., 0, 0] + np.sin(x) * np.sin(y))) < 1e-3
    assert np.max(np.abs(H[..., 0, 1] - np.cos(x) * np.cos(y))) < 1e-3
    assert np.array_equal(H[..., 0, 1], H[..., 1, 0])


@pytest.fixture
def flat32():
    return build_metric_state(SymTensor2Field.identity(Grid.uniform(2, 32)))


def test_exterior_derivative_of_a_differential_vanishes(rng):
    grid = Grid.uniform(2, 16)
    f = ScalarField(grid, smooth(grid, rng))
    dd = exterior_derivative_oneform(differential(f).values, grid)
    assert np.max(np.abs(dd)) < 1e-12


def test_codifferential_of_a_differential_is_minus_the_laplacian(flat32):
    x, y = flat32.grid.coordinates()
    f = ScalarField(flat32.grid, np.sin(x) * np.cos(y))
    delta_df = codifferential_oneform(differential(f).values, flat32)
    lap = laplacian_scalar(f, flat32).values
    assert np.max(np.abs(delta_df + lap)) < 1e-3
    assert np.max(np.abs(lap + 2.0 * np.sin(x) * np.cos(y))) < 1e-3


def test_codifferential_of_a_twoform(flat32):
    grid = flat32.grid
    x, _ = grid.coordinates()
    omega = np.zeros(grid.points + (2,))
    omega[..., 1] = np.sin(x)
    F = exterior_derivative_oneform(omega, grid)
    out = codifferential_twoform(F, flat32)
    assert np.max(np.abs(out[..., 0])) < 1e-12
    assert np.max(np.abs(out[..., 1] - np.sin(x))) < 1e-3


def test_divergence_of_a_symmetric_tensor(flat32, rng):
    grid = flat32.grid
    x, _ = grid.coordinates()
    h = np.zeros(grid.points + (2, 2))
    h[..., 0, 0] = h[..., 1, 1] = np.sin(x)
    div = divergence_symtensor(SymTensor2Field(grid, h), flat32).values
    assert np.max(np.abs(div[..., 0] + np.cos(x))) < 1e-3
    assert np.max(np.abs(div[..., 1])) < 1e-12

    m = build_metric_state(_conformal(grid, 0.2 * smooth(grid, rng)))
    assert np.max(np.abs(divergence_symtensor(m.g, m).values)) < 1e-12


def test_norm_of_a_differential(flat32):
    x, _ = flat32.grid.coordinates()
    df = differential(ScalarField(flat32.grid, np.sin(x))).values
    assert np.max(np.abs(norm_sq_oneform(df, flat32) - np.cos(x) ** 2)) < 1e-3


def test_lie_derivatives_along_a_coordinate_field(flat32):
    grid = flat32.grid
    x, y = grid.coordinates()
    X = VectorField(grid, np.broadcast_to([1.0, 0.0], grid.points + (2,)).copy())
    assert np.max(np.abs(lie_derivative_scalar(X, np.sin(x)) - np.cos(x))) < 1e-3

    omega = np.zeros(grid.points + (2,))
    omega[..., 0] = np.sin(x)
    out = lie_derivative_oneform(X, omega)
    assert np.max(np.abs(out[..., 0] - np.cos(x))) < 1e-3
    assert np.max(np.abs(out[..., 1])) < 1e-12


def test_lie_derivative_of_the_flat_metric(flat32):
    grid = flat32.grid
    _, y = grid.coordinates()
    X = np.zeros(grid.points + (2,))
    X[..., 0] = np.sin(y)
    L = lie_derivative_metric(VectorField(grid, X), flat32).values
    assert np.max(np.abs(L[..., 0, 1] - np.cos(y))) < 1e-3
    assert np.max(np.abs(L[..., 0, 0])) < 1e-12
    assert np.max(np.abs(L[..., 1, 1])) < 1e-12


def test_surface_curvature_matches_the_product_with_a_circle(rng):
    grid2 = Grid.uniform(2, 16)
    g2 = np.broadcast_to(np.eye(2), grid2.points + (2, 2)).copy()
    g2[..., 0, 0] += 0.2 * smooth(grid2, rng)
    g2[..., 0, 1] = g2[..., 1, 0] = 0.1 * smooth(grid2, rng)
    m2 = build_metric_state(SymTensor2Field(grid2, g2))

    grid3 = Grid((16, 16, 8), (2.0 * np.pi,) * 3)
    g3 = np.zeros(grid3.points + (3, 3))
    g3[..., :2, :2] = g2[:, :, None]
    g3[..., 2, 2] = 1.0
    m3 = build_metric_state(SymTensor2Field(grid3, g3))

    assert np.allclose(m3.ricci.values[:, :, 0, :2, :2], m2.ricci.values, atol=1e-12)
    assert np.allclose(m3.scalar.values[:, :, 0], m2.scalar.values, atol=1e-12)
    assert np.allclose(m3.riemann[:, :, 0, :2, :2, :2, :2], m2.riemann, atol=1e-12)
    assert m2.asymmetry == pytest.approx(m3.asymmetry, abs=1e-12)
    assert np.allclose(np.einsum("...abcd,...bd->...ac", m2.riemann, m2.g_inv.values), m2.ricci.values, atol=1e-12)
