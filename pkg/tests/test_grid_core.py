import math

import numpy as np
import pytest

from conftest import smooth
from flowlab.errors import FieldShapeError, GridError, GridMismatchError, NonSPDError
from flowlab.geometry import build_metric_state
from flowlab.grid_core import (
    Grid,
    OneFormField,
    ScalarField,
    SymTensor2Field,
    batched_det,
    batched_inv,
    derivative_symbol,
    difference,
    integrate,
    l2_inner,
    partial_derivative,
    load_field,
    save_field,
    sup_norm,
)


def test_grid_rejects_bad_shapes():
    with pytest.raises(GridError):
        Grid.uniform(4, 16)
    with pytest.raises(GridError):
        Grid.uniform(2, 4)
    with pytest.raises(GridError):
        Grid((16, 16), (1.0,))
    with pytest.raises(GridError):
        Grid.uniform(1, 16, period=0.0)


def test_constant_differentiates_to_exact_zero(grid2):
    f = np.full(grid2.points, -2.75)
    for axis in range(2):
        assert np.all(difference(f, grid2, axis, 1) == 0.0)
        assert np.all(difference(f, grid2, axis, 2) == 0.0)


def test_difference_is_fourth_order_on_sine():
    errors = []
    for n in (16, 32):
        grid = Grid.uniform(1, n)
        x = grid.coordinates()[0]
        errors.append(float(np.max(np.abs(difference(np.sin(x), grid, 0) - np.cos(x)))))
    assert errors[1] < 1e-4
    assert math.log2(errors[0] / errors[1]) > 3.8


def test_derivative_symbol_matches_stencil():
    grid = Grid.uniform(1, 24)
    x = grid.coordinates()[0]
    for k in (1, 3, 5):
        s1 = derivative_symbol(k, grid.spacing[0], 1)
        s2 = derivative_symbol(k, grid.spacing[0], 2)
        assert np.allclose(difference(np.sin(k * x), grid, 0, 1), s1 * np.cos(k * x), atol=1e-12)
        assert np.allclose(difference(np.sin(k * x), grid, 0, 2), s2 * np.sin(k * x), atol=1e-11)


def test_difference_rejects_third_order(grid2):
    with pytest.raises(GridError):
        difference(np.zeros(grid2.points), grid2, 0, 3)
    with pytest.raises(GridError):
        difference(np.zeros(grid2.points), grid2, 2)


def test_integral_of_derivative_vanishes(grid2, rng):
    f = smooth(grid2, rng, modes=3)
    for axis in range(2):
        assert abs(integrate(ScalarField(grid2, difference(f, grid2, axis)))) < 1e-12


def test_integrate_constant_gives_coordinate_volume(grid2):
    assert integrate(ScalarField.constant(grid2, 1.0)) == pytest.approx(4.0 * math.pi ** 2, rel=1e-14)


def test_symmetric_fields_are_validated(grid2):
    values = np.zeros(grid2.points + (2, 2))
    values[..., 0, 1] = 1.0
    with pytest.raises(FieldShapeError):
        SymTensor2Field(grid2, values)
    with pytest.raises(FieldShapeError):
        OneFormField(grid2, np.zeros(grid2.points + (3,)))


def test_non_spd_metric_reports_the_grid_point(grid2):
    g = SymTensor2Field.identity(grid2).values
    g[3, 5] = -np.eye(2)
    with pytest.raises(NonSPDError) as info:
        SymTensor2Field(grid2, g).require_spd()
    assert info.value.index == (3, 5)
    assert info.value.min_eigenvalue == pytest.approx(-1.0)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_batched_det_and_inverse_agree_with_numpy(n, rng):
    a = rng.standard_normal((6, 5, n, n))
    values = np.einsum("...ik,...jk->...ij", a, a) + n * np.eye(n)
    assert np.allclose(batched_det(values), np.linalg.det(values), rtol=1e-12, atol=0.0)
    assert np.allclose(batched_inv(values), np.linalg.inv(values), rtol=1e-10, atol=1e-12)


def test_indefinite_metric_with_positive_determinant_is_rejected(grid3):
    g = SymTensor2Field.identity(grid3).values
    g[1, 2, 4] = np.diag([-1.0, -2.0, 1.0])
    with pytest.raises(NonSPDError) as info:
        SymTensor2Field(grid3, g).require_spd()
    assert info.value.index == (1, 2, 4)
    assert info.value.min_eigenvalue == pytest.approx(-2.0)
    g[1, 2, 4] = np.nan
    with pytest.raises(NonSPDError):
        SymTensor2Field(grid3, g).require_spd()


def test_field_arithmetic_checks_the_grid(grid2):
    a = ScalarField.constant(grid2, 1.0)
    b = ScalarField.constant(Grid.uniform(2, 8), 1.0)
    with pytest.raises(GridMismatchError):
        a + b
    assert sup_norm(2.0 * a - a) == 1.0


def test_l2_inner_of_the_metric_with_itself(grid2):
    g = SymTensor2Field.identity(grid2, scale=2.0)
    m = build_metric_state(g)
    # |g|^2 = dim, dV = 2 dx dy
    assert l2_inner(g, g, m) == pytest.approx(2.0 * 2.0 * 4.0 * math.pi ** 2, rel=1e-12)


def test_field_file_round_trip(tmp_path, grid2, rng):
    values = rng.standard_normal(grid2.points + (2, 2))
    g = SymTensor2Field(grid2, 0.5 * (values + np.swapaxes(values, -1, -2)))
    path = tmp_path / "g.txt"
    save_field(path, g)
    loaded = load_field(path)
    assert isinstance(loaded, SymTensor2Field)
    assert loaded.grid == grid2
    assert np.array_equal(loaded.values, g.values)


def test_load_field_needs_a_header(tmp_path):
    path = tmp_path / "bare.txt"
    path.write_text("1.0\n2.0\n")
    with pytest.raises(FieldShapeError):
        load_field(path)


def test_partial_derivative_keeps_the_field_type(grid2):
    x, _ = grid2.coordinates()
    f = ScalarField(grid2, np.sin(x))
    df = partial_derivative(f, 0)
    assert isinstance(df, ScalarField)
    assert np.array_equal(df.values, difference(f.values, grid2, 0))
