import numpy as np
import pytest

from conftest import smooth
from flowlab.errors import FieldShapeError, NonSPDError, SamplingError
from flowlab import flows, targets
from flowlab.geometry import build_metric_state, laplacian_values
from flowlab.grid_core import FiberMetricField, Grid, SymTensor2Field, VecOneFormField, gradient_values
from flowlab.targets import (
    MapField,
    TargetSpace,
    bundle_pullback_form,
    check_modified_hmf_identity,
    fit_coupling_constant,
    pullback_form,
    spd_christoffel,
    spd_christoffel_numeric,
    sym_basis,
    tension_field,
    tension_field_christoffel_sum,
)


def _fiber_metric(grid, rng, base=2.0):
    G = np.broadcast_to(np.eye(2) * base, grid.points + (2, 2)).copy()
    G[..., 0, 0] += 0.3 * smooth(grid, rng)
    G[..., 0, 1] = G[..., 1, 0] = 0.2 * smooth(grid, rng)
    return FiberMetricField(grid, G)


def test_target_space_dimensions():
    assert TargetSpace.euclidean(3).dimension == 3
    assert TargetSpace.spd(3).dimension == 6
    assert TargetSpace.spd(3).value_shape == (3, 3)
    assert len(sym_basis(3)) == 6
    with pytest.raises(FieldShapeError):
        TargetSpace("sphere", 2)


def test_spd_map_must_be_positive_definite(grid2):
    with pytest.raises(NonSPDError):
        MapField.constant(grid2, TargetSpace.spd(2), -np.eye(2))


def test_euclidean_tension_is_the_laplacian(grid2, flat2, rng):
    values = np.stack([smooth(grid2, rng), smooth(grid2, rng)], axis=-1)
    phi = MapField(grid2, TargetSpace.euclidean(2), values)
    assert np.array_equal(tension_field(phi, flat2).values, laplacian_values(values, flat2))


def test_spd_tension_closed_form_matches_christoffel_sum(rng):
    grid = Grid.uniform(2, 8)
    G = np.broadcast_to(np.eye(2), grid.points + (2, 2)).copy()
    G[..., 0, 0] += 0.3 * smooth(grid, rng, modes=1)
    phi = MapField(grid, TargetSpace.spd(2), G)
    m = build_metric_state(SymTensor2Field.identity(grid))
    closed = tension_field(phi, m).values
    assert np.max(np.abs(closed - tension_field_christoffel_sum(phi, m).values)) < 1e-10
    assert np.max(np.abs(closed - tension_field_christoffel_sum(phi, m, eps=1e-5).values)) < 1e-6


def test_spd_christoffel_symbols_agree(rng):
    G = np.array([[2.0, 0.3], [0.3, 1.2]])
    assert np.allclose(spd_christoffel(G), spd_christoffel_numeric(G), atol=1e-8)
    batch = np.broadcast_to(G, (4, 2, 2))
    assert np.allclose(spd_christoffel(batch), spd_christoffel(G)[None], atol=1e-14)


def test_coupling_constant_is_one_quarter(grid2, rng):
    G = _fiber_metric(grid2, rng, base=1.5)
    assert fit_coupling_constant(G) == pytest.approx(0.25, abs=1e-10)
    pull = pullback_form(MapField.from_fiber_metric(G)).values
    assert np.allclose(bundle_pullback_form(G).values, 0.5 * pull, atol=1e-12)


def test_constant_fiber_metric_has_no_coupling(grid2):
    with pytest.raises(SamplingError):
        fit_coupling_constant(FiberMetricField.constant(grid2, np.eye(2)))


def test_fiber_metric_equation_is_tension_minus_curvature(grid2, flat2, rng):
    G = _fiber_metric(grid2, rng)
    A = VecOneFormField.zeros(grid2, 2).values
    A[..., 0, 1] = 0.5 * smooth(grid2, rng)
    A[..., 1, 0] = 0.5 * smooth(grid2, rng)
    assert check_modified_hmf_identity(G, VecOneFormField(grid2, A), flat2) <= 1e-10
    assert check_modified_hmf_identity(G, VecOneFormField(grid2, A), flat2, trace_free=True) <= 1e-10


def _random_draw(grid, rng):
    d = grid.dim
    g = np.broadcast_to(np.eye(d), grid.points + (d, d)).copy()
    g[..., 0, 0] += 0.3 * smooth(grid, rng)
    if d == 2:
        g[..., 1, 1] += 0.2 * smooth(grid, rng)
        g[..., 0, 1] = g[..., 1, 0] = 0.2 * smooth(grid, rng)
    A = np.stack([np.stack([smooth(grid, rng) for _ in range(2)], axis=-1) for _ in range(d)], axis=-2)
    return (build_metric_state(SymTensor2Field(grid, g)),
            VecOneFormField(grid, 0.5 * A),
            _fiber_metric(grid, rng, base=1.0 + rng.uniform()))


@pytest.mark.parametrize("dim", [1, 2])
def test_fiber_metric_identity_on_random_draws(dim, rng):
    grid = Grid.uniform(dim, 8)
    worst = 0.0
    for _ in range(50):
        m, A, G = _random_draw(grid, rng)
        worst = max(worst, check_modified_hmf_identity(G, A, m))
    assert worst <= 1e-10


def test_fiber_metric_identity_detects_a_wrong_quadratic_term(grid2, flat2, rng, monkeypatch):
    G = _fiber_metric(grid2, rng)
    A = VecOneFormField.zeros(grid2, 2)
    real = flows.fiber_metric_rhs

    def dropped_quadratic(Gv, Av, m):
        dG = gradient_values(Gv, m.grid)
        quad = np.einsum("...ab,...aik,...kl,...blj->...ij", m.g_inv.values, dG, np.linalg.inv(Gv), dG)
        return real(Gv, Av, m) + quad

    monkeypatch.setattr(flows, "fiber_metric_rhs", dropped_quadratic)
    assert check_modified_hmf_identity(G, A, flat2) > 1e-4


def test_fiber_metric_identity_does_not_use_the_closed_tension(grid2, flat2, rng, monkeypatch):
    G = _fiber_metric(grid2, rng)
    A = VecOneFormField.zeros(grid2, 2)
    monkeypatch.setattr(targets, "_spd_quadratic", lambda *args: np.zeros(grid2.points + (2, 2)))
    assert check_modified_hmf_identity(G, A, flat2) <= 1e-10
