import numpy as np
import pytest

from conftest import smooth
from flowlab.errors import ConfigError, CurvatureModelError, DomainExitError, NumericalFailure, SamplingError, StepperError
from flowlab.flows import (
    ConnectionState,
    CouplingSchedule,
    FlowParams,
    HRFState,
    InvariantState,
    StepperConfig,
    WarpedState,
    check_cfl,
    evaluate_rhs,
    increment_sup,
    max_diffusivity,
    normalize_transform,
    rhs_warped,
    run_flow,
    torsion_square_closed,
    torsion_square_naive,
)
from flowlab.geometry import SyntheticCurvature, build_metric_state
from flowlab.grid_core import (
    FiberMetricField,
    Grid,
    ScalarField,
    SymTensor2Field,
    ThreeFormField,
    VecOneFormField,
    derivative_symbol,
)
from flowlab.targets import MapField, TargetSpace

G0 = np.array([[2.0, 0.5], [0.5, 1.0]])


def _hrf(grid, values=None, c0=1.0):
    target = TargetSpace.euclidean(1)
    phi = MapField(grid, target, values[..., None]) if values is not None else MapField.constant(grid, target, [0.4])
    return HRFState(SymTensor2Field.identity(grid), phi), FlowParams(coupling=CouplingSchedule(c0))


def _warped(grid, rng, amplitude=0.1):
    phi = ScalarField(grid, amplitude * smooth(grid, rng, modes=1))
    return WarpedState(SymTensor2Field.identity(grid), phi)


def _fixed_points(grid2, grid3):
    eye2 = SymTensor2Field.identity(grid2)
    synth = SyntheticCurvature.space_form(-1.0, 2)
    reference = build_metric_state(eye2)
    return [
        (HRFState(eye2, MapField.constant(grid2, TargetSpace.euclidean(2), [0.3, -0.2])),
         FlowParams(gauge="deturck", reference=reference)),
        (HRFState(eye2, MapField.constant(grid2, TargetSpace.spd(2), G0)), FlowParams()),
        (WarpedState(eye2, ScalarField.constant(grid2, 0.0)),
         FlowParams(lam=synth.lam, reference=reference, synth=synth).at_fixed_point()),
        (InvariantState(eye2, VecOneFormField.zeros(grid2, 2), FiberMetricField.constant(grid2, G0)),
         FlowParams()),
        (ConnectionState(SymTensor2Field.identity(grid3), ThreeFormField(grid3, np.zeros(grid3.points))),
         FlowParams()),
    ]


def test_flat_states_are_fixed_points(grid2, grid3):
    for st, p in _fixed_points(grid2, grid3):
        assert increment_sup(evaluate_rhs(st, p)) <= 1e-13


def test_fixed_points_do_not_drift_over_a_thousand_steps(grid3):
    for st, p in _fixed_points(Grid.uniform(2, 8), grid3):
        dt = 0.5 * 0.25 * st.grid.h_min ** 2 / max_diffusivity(st)
        traj = run_flow(st, p, StepperConfig(dt=dt, t_end=1000 * dt, record_every=1000))
        assert len(traj) == 2
        start, end = traj.states[0].components(), traj.states[-1].components()
        assert max(float(np.max(np.abs(end[k] - start[k]))) for k in start) <= 1e-10


def test_params_are_validated(flat2):
    with pytest.raises(ConfigError):
        FlowParams(gauge="harmonic")
    with pytest.raises(ConfigError):
        FlowParams(gauge="deturck")
    with pytest.raises(ConfigError):
        CouplingSchedule(c0=-1.0)
    synth = SyntheticCurvature.space_form(-1.0, 2)
    with pytest.raises(CurvatureModelError):
        FlowParams(lam=0.0, reference=flat2, synth=synth)
    with pytest.raises(CurvatureModelError):
        FlowParams(lam=synth.lam, synth=synth)


def test_coupling_schedule_decays():
    c = CouplingSchedule(2.0, 0.5)
    assert c(0.0) == 2.0
    assert c(2.0) == pytest.approx(2.0 * np.exp(-1.0))


def test_stepper_config_is_validated():
    with pytest.raises(StepperError):
        StepperConfig(dt=0.0, t_end=1.0)
    with pytest.raises(StepperError):
        StepperConfig(dt=0.1, t_end=1.0, record_every=0)
    with pytest.raises(StepperError):
        StepperConfig(dt=0.1, t_end=1.0, scheme="euler")


def test_cfl_limit(grid2):
    st, _ = _hrf(grid2)
    limit = check_cfl(st, StepperConfig(dt=1e-3, t_end=1.0, cfl=0.25))
    assert limit == pytest.approx(0.25 * grid2.h_min ** 2 / 2.0)
    with pytest.raises(StepperError):
        check_cfl(st, StepperConfig(dt=2.0 * limit, t_end=1.0, cfl=0.25))


def test_warped_mu_and_normalization_are_checked(grid2, rng):
    with pytest.raises(ConfigError):
        WarpedState(SymTensor2Field.identity(grid2), ScalarField.constant(grid2, 0.0), mu=0.3)
    st = WarpedState(SymTensor2Field.identity(grid2), ScalarField.constant(grid2, 0.0), mu=0.5)
    with pytest.raises(ConfigError):
        rhs_warped(st, FlowParams(normalized=True))


def test_uncoupled_map_follows_the_discrete_heat_equation(grid2):
    x, _ = grid2.coordinates()
    st, p = _hrf(grid2, 0.1 * np.sin(x), c0=0.0)
    traj = run_flow(st, p, StepperConfig(dt=0.01, t_end=0.2, record_every=5))
    assert len(traj) == 5
    rate = derivative_symbol(1.0, grid2.spacing[0], 2)
    final = traj.states[-1]
    assert final.t == pytest.approx(0.2)
    assert np.max(np.abs(final.phi.values[..., 0] - 0.1 * np.exp(rate * 0.2) * np.sin(x))) < 1e-9
    assert np.all(final.g.values == SymTensor2Field.identity(grid2).values)


def test_runs_are_deterministic(grid2, rng):
    st = _warped(grid2, rng)
    cfg = StepperConfig(dt=0.01, t_end=0.05)
    p = FlowParams(normalized=False)
    a = run_flow(st, p, cfg).to_frame()
    b = run_flow(st, p, cfg).to_frame()
    assert list(a["checksum"]) == list(b["checksum"])


def test_non_finite_rhs_is_a_numerical_failure(grid2):
    st, p = _hrf(grid2)

    def poisoned(state, params):
        return {k: np.full_like(v, np.nan) for k, v in state.components().items()}

    with pytest.raises(NumericalFailure) as info:
        run_flow(st, p, StepperConfig(dt=0.01, t_end=0.1), rhs=poisoned)
    assert info.value.time == pytest.approx(0.01)
    assert info.value.last_state.t == 0.0


def test_losing_positive_definiteness_is_a_numerical_failure(grid2):
    st, p = _hrf(grid2)

    def shrinking(state, params):
        inc = {k: np.zeros_like(v) for k, v in state.components().items()}
        inc["g"] = -200.0 * SymTensor2Field.identity(grid2).values
        return inc

    with pytest.raises(NumericalFailure):
        run_flow(st, p, StepperConfig(dt=0.01, t_end=0.1), rhs=shrinking)


def test_torsion_square_of_a_constant_threeform(grid3):
    c = 0.7
    H = ThreeFormField(grid3, np.full(grid3.points, c))
    m = build_metric_state(SymTensor2Field.identity(grid3))
    expected = 2.0 * c * c * np.eye(3)
    assert np.allclose(torsion_square_naive(H, m), expected, atol=1e-12)
    assert np.allclose(torsion_square_closed(H, m), expected, atol=1e-12)


def test_warped_normalization_transform(grid2, rng):
    st = _warped(grid2, rng)
    p = FlowParams(normalized=False, m=1, phi_avg0=0.0)
    traj = run_flow(st, p, StepperConfig(dt=0.01, t_end=0.3))
    exact = normalize_transform(traj, 1.0, p)
    assert exact.residual < 1e-3
    assert exact.times[-1] == pytest.approx(np.log(1.3))
    sampled = normalize_transform(traj, 1.0, p, quadrature="trapezoid")
    assert np.max(np.abs(sampled.times - exact.times)) < 1e-4


def test_hrf_normalization_transform(grid2, rng):
    values = 0.2 * smooth(grid2, rng, modes=1)
    st, p = _hrf(grid2, values)
    traj = run_flow(st, p, StepperConfig(dt=0.01, t_end=0.3))
    out = normalize_transform(traj, 0.5, p)
    assert out.residual < 1e-3
    assert np.allclose(out.sigma, 1.0 + 0.5 * traj.times)


def test_normalization_domain_and_sampling(grid2):
    st, p = _hrf(grid2)
    traj = run_flow(st, p, StepperConfig(dt=0.01, t_end=0.3))
    with pytest.raises(DomainExitError):
        normalize_transform(traj, -10.0, p)
    short = run_flow(st, p, StepperConfig(dt=0.01, t_end=0.01))
    with pytest.raises(SamplingError):
        normalize_transform(short, 1.0, p)
