"""Verification suites run by ``flowlab verify``.

Each check is small, seeded and deterministic. A check that raises a
``FlowLabError`` is recorded as failed rather than aborting the suite.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np
import pandas as pd

from flowlab.errors import ConfigError, DomainExitError, FlowLabError
from flowlab.estimates import (
    ComparisonODE,
    comparison_solution,
    energy_functional,
    evolution_identity_residual,
    fit_decay,
    monitor_gradient_decay,
    monitor_sandwich,
    warped_ricci_oracle,
)
from flowlab.flows import (
    ConnectionState,
    FlowParams,
    FlowState,
    HRFState,
    Increment,
    InvariantState,
    StepperConfig,
    WarpedState,
    evaluate_rhs,
    increment_sup,
    max_diffusivity,
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
    difference,
    integrate,
)
from flowlab.scenario import load_settings
from flowlab.stability import (
    algebraic_identity_check,
    analytic_linearization,
    assemble_operator,
    einstein_sectional_sample,
    linearization_orders,
    quadratic_form_bound,
    spectrum,
)
from flowlab.targets import (
    MapField,
    TargetSpace,
    check_modified_hmf_identity,
    fit_coupling_constant,
    tension_field,
    tension_field_christoffel_sum,
)

logger = logging.getLogger(__name__)

SUITES = ("identities", "linearization", "estimates", "spectra")

MIN_ORDER = 1.9


@dataclass
class CheckResult:
    suite: str
    name: str
    value: float
    tol: float
    passed: bool
    detail: str = ""


@dataclass
class VerifyReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> list[CheckResult]:
        return [r for r in self.results if not r.passed]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.results],
                            columns=["suite", "name", "value", "tol", "passed", "detail"])

    def to_json(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "checks": len(self.results),
            "failures": [r.name for r in self.failures],
            "results": [asdict(r) for r in self.results],
        }


Check = Callable[[dict[str, Any], np.random.Generator], tuple[float, float, str]]


# --------------------------------------------------------------------------- fixtures

def _grid2(points: int = 16) -> Grid:
    return Grid.uniform(2, points)


def _grid3(points: int = 8) -> Grid:
    return Grid.uniform(3, points)


def _smooth(grid: Grid, rng: np.random.Generator, modes: int = 2) -> np.ndarray:
    """Random trigonometric polynomial scaled to sup norm 1."""
    out = np.zeros(grid.points)
    for xa in grid.coordinates():
        for j in range(1, modes + 1):
            out += rng.standard_normal() * np.sin(j * xa + rng.uniform(0.0, 2.0 * np.pi)) / j
    return out / float(np.max(np.abs(out)))


def _smooth_direction(st: FlowState, rng: np.random.Generator) -> Increment:
    out: Increment = {}
    for key, value in st.components().items():
        shape = value.shape[st.grid.dim:]
        comp = np.zeros(value.shape)
        for idx in np.ndindex(*shape):
            comp[(Ellipsis,) + idx] = _smooth(st.grid, rng)
        if comp.ndim == st.grid.dim + 2 and shape[0] == shape[1] and key != "A":
            comp = 0.5 * (comp + np.swapaxes(comp, -1, -2))
        out[key] = comp
    return out


def _flat_states() -> list[tuple[str, FlowState, FlowParams]]:
    g2 = _grid2()
    g3 = _grid3()
    eye2 = SymTensor2Field.identity(g2)
    eye3 = SymTensor2Field.identity(g3)
    reference = build_metric_state(eye2)
    synth = SyntheticCurvature.space_form(-1.0, 2)
    G0 = np.array([[2.0, 0.5], [0.5, 1.0]])
    return [
        ("hrf", HRFState(eye2, MapField.constant(g2, TargetSpace.euclidean(2), [0.3, -0.2])), FlowParams()),
        ("hrf_deturck", HRFState(eye2, MapField.constant(g2, TargetSpace.euclidean(2), [0.3, -0.2])),
         FlowParams(gauge="deturck", reference=reference)),
        ("hrf_spd", HRFState(eye2, MapField.constant(g2, TargetSpace.spd(2), G0)), FlowParams()),
        ("warped_space_form", WarpedState(eye2, ScalarField.constant(g2, 0.0)),
         FlowParams(lam=synth.lam, gauge="deturck", reference=reference, synth=synth).at_fixed_point()),
        ("invariant", InvariantState(eye2, VecOneFormField.zeros(g2, 2), FiberMetricField.constant(g2, G0)),
         FlowParams()),
        ("connection", ConnectionState(eye3, ThreeFormField(g3, np.zeros(g3.points))), FlowParams()),
    ]


# --------------------------------------------------------------------------- identities

def check_constant_stencil(settings, rng):
    grid = _grid2()
    f = np.full(grid.points, 3.7)
    worst = max(float(np.max(np.abs(difference(f, grid, a, order))))
                for a in range(grid.dim) for order in (1, 2))
    return worst, 0.0, "stencils of a constant"


def check_integral_of_derivative(settings, rng):
    grid = _grid2()
    f = _smooth(grid, rng, modes=3)
    worst = max(abs(integrate(ScalarField(grid, difference(f, grid, a)))) for a in range(grid.dim))
    return worst, settings["identity_tol"], "integral of a partial derivative"


def check_hmf_identity(settings, rng):
    grid = _grid2()
    G = np.broadcast_to(np.eye(2) * 2.0, grid.points + (2, 2)).copy()
    G[..., 0, 0] += 0.3 * _smooth(grid, rng)
    G[..., 0, 1] = G[..., 1, 0] = 0.2 * _smooth(grid, rng)
    A = VecOneFormField.zeros(grid, 2).values
    A[..., 0, 1] = 0.5 * _smooth(grid, rng)
    A[..., 1, 0] = 0.5 * _smooth(grid, rng)
    m = build_metric_state(SymTensor2Field.identity(grid))
    value = check_modified_hmf_identity(FiberMetricField(grid, G), VecOneFormField(grid, A), m)
    return value, settings["identity_tol"], "fiber-metric equation against tension minus curvature quadratic"


def check_coupling_constant(settings, rng):
    grid = _grid2()
    G = np.broadcast_to(np.eye(2) * 1.5, grid.points + (2, 2)).copy()
    G[..., 1, 1] += 0.4 * _smooth(grid, rng)
    c = fit_coupling_constant(FiberMetricField(grid, G))
    return abs(c - 0.25), settings["identity_tol"], f"fitted c = {c:.15g}"


def check_tension_forms(settings, rng):
    grid = Grid.uniform(2, 8)
    G = np.broadcast_to(np.eye(2), grid.points + (2, 2)).copy()
    G[..., 0, 0] += 0.3 * _smooth(grid, rng, modes=1)
    phi = MapField(grid, TargetSpace.spd(2), G)
    m = build_metric_state(SymTensor2Field.identity(grid))
    closed = tension_field(phi, m).values
    summed = tension_field_christoffel_sum(phi, m, eps=1e-5).values
    return float(np.max(np.abs(closed - summed))), 1e-6, "closed SPD tension against finite-difference Christoffel sum"


def check_torsion_square(settings, rng):
    grid = _grid3()
    c = 0.7
    H = ThreeFormField(grid, np.full(grid.points, c))
    m = build_metric_state(SymTensor2Field.identity(grid))
    naive = torsion_square_naive(H, m)
    closed = torsion_square_closed(H, m)
    expected = 2.0 * c * c * np.eye(3)
    value = max(float(np.max(np.abs(naive - expected))), float(np.max(np.abs(closed - expected))))
    return value, settings["identity_tol"], "torsion square of c dx^dy^dz equals 2c^2 Id"


def check_warped_oracle(settings, rng):
    grid = _grid2()
    phi = ScalarField(grid, 0.2 * _smooth(grid, rng))
    result = warped_ricci_oracle(SymTensor2Field.identity(grid), phi)
    return result["mixed"], 1e-12, (f"horizontal {result['horizontal']:.3e}, "
                                    f"vertical {result['vertical']:.3e}")


def check_algebraic_identity(settings, rng):
    worst = 0.0
    for n in range(2, 7):
        sec = einstein_sectional_sample(n, rng)
        worst = max(worst, algebraic_identity_check(rng.standard_normal(n), sec))
    return worst, settings["identity_tol"], "Einstein sectional identity, n = 2..6"


def check_fixed_points(settings, rng):
    worst = 0.0
    for name, st, p in _flat_states():
        residual = increment_sup(evaluate_rhs(st, p))
        logger.debug("fixed point %s: sup|rhs| = %.3e", name, residual)
        worst = max(worst, residual)
    return worst, settings["fixed_point_tol"], "flat fixed points of all systems"


# --------------------------------------------------------------------------- linearization

def _linearization_check(name: str) -> Check:
    def run(settings, rng):
        for label, st, p in _flat_states():
            if label != name:
                continue
            direction = _smooth_direction(st, rng)
            exact = analytic_linearization(st, direction, p)
            check = linearization_orders(None, st, direction, p, exact)
            order_ok = check.exact or check.order >= MIN_ORDER
            value = check.richardson_residual if order_ok else math.inf
            return value, settings["linearization_tol"], f"observed order {check.order:.3g}"
        raise ConfigError("verify.linearization", f"no base state named {name!r}")
    return run


# --------------------------------------------------------------------------- estimates

def check_comparison_solution(settings, rng):
    value = abs(float(comparison_solution(-0.5, 0.0, 1.0)) - 0.5 * math.log(2.0))
    return value, 1e-14, "U(1) for mu = -1/2, d = 0"


def check_domain_exit(settings, rng):
    ode = ComparisonODE(0.5, 0.0)
    try:
        ode(ode.domain_end + 1.0)
    except DomainExitError:
        return 0.0, 0.0, f"domain ends at t = {ode.domain_end:.6g}"
    return 1.0, 0.0, "no DomainExitError past the end of the domain"


def _short_warped_run(settings, rng, normalized: bool, points: int = 16):
    grid = _grid2(points)
    phi = ScalarField(grid, 0.1 * _smooth(grid, rng, modes=1))
    st = WarpedState(SymTensor2Field.identity(grid), phi)
    p = FlowParams(normalized=normalized, m=1)
    dt = 0.5 * settings["cfl"] * grid.h_min ** 2 / max_diffusivity(st)
    n = 40
    cfg = StepperConfig(dt=dt, t_end=n * dt, cfl=settings["cfl"], record_every=1)
    return run_flow(st, p, cfg)


def check_monitors(settings, rng):
    traj = _short_warped_run(settings, rng, normalized=False)
    margin = settings["monitor_margin"]
    sandwich = monitor_sandwich(traj, -0.5, margin)
    gradient = monitor_gradient_decay(traj, -0.5, margin)
    value = float(sandwich.violations + gradient.violations)
    return value, 0.0, f"tightest gradient constant {gradient.tightest_constant:.4g}"


def check_evolution_identity(settings, rng):
    traj = _short_warped_run(settings, rng, normalized=False, points=32)
    value = evolution_identity_residual(traj, "dphi_sq", fiber_dim=1)
    return value, 1e-3, "evolution of |dphi|^2 along an un-normalized warped run"


def check_decay_fit(settings, rng):
    t = np.linspace(0.0, 3.0, 31)
    fit = fit_decay(t, 3.0 * np.exp(-2.0 * t))
    return max(abs(fit.C_fit - 3.0), abs(fit.lam_fit - 2.0)), 1e-10, f"C = {fit.C_fit:.12g}, lambda = {fit.lam_fit:.12g}"


def check_energy_functional(settings, rng):
    grid = _grid2()
    zero = ScalarField.constant(grid, 0.0)
    value = energy_functional(SymTensor2Field.identity(grid), zero, zero, 1, -0.5)
    return abs(value + 2.0 * math.pi ** 2), 1e-10, f"F = {value:.15g} on the flat torus"


# --------------------------------------------------------------------------- spectra

def check_circle_spectrum(settings, rng):
    grid = Grid.uniform(1, 64)
    m = build_metric_state(SymTensor2Field.identity(grid))
    report = spectrum(assemble_operator("L1_map", m, lam=0.0, system="hrf", target_rank=1), k=5)
    expected = np.array([0.0, -1.0, -1.0, -4.0, -4.0])
    return float(np.max(np.abs(np.array(report.eigenvalues) - expected))), 1e-3, report.verdict


def check_trace_free_kernel(settings, rng):
    grid = Grid.uniform(1, 16)
    m = build_metric_state(SymTensor2Field.identity(grid))
    op = assemble_operator("L2_fiber", m, lam=0.0, system="invariant", fiber_rank=2, trace_free=True)
    report = spectrum(op, k=4)
    return float(abs(report.kernel_dim - 2)), 0.0, f"kernel dimension {report.kernel_dim}"


def check_oneform_top(settings, rng):
    lam = -1.0
    grid = _grid2()
    m = build_metric_state(SymTensor2Field.identity(grid))
    report = spectrum(assemble_operator("L1_oneform", m, lam=lam, system="invariant", fiber_rank=1), k=3)
    return abs(report.top - lam), 1e-8, f"top {report.top:.12g}"


def check_space_form_L0(settings, rng):
    K, n = -1.0, 3
    synth = SyntheticCurvature.space_form(K, n)
    m = build_metric_state(SymTensor2Field.identity(_grid3()))
    op = assemble_operator("L0_metric", m, synth=synth)
    report = spectrum(op, k=4)
    bound = quadratic_form_bound(op, samples=50, seed=int(rng.integers(1 << 31)))
    value = max(report.top, bound) - K * (n - 2)
    return max(value, 0.0), 1e-8, f"top {report.top:.8g}, sampled bound {bound:.8g}"


SUITE_CHECKS: dict[str, dict[str, Check]] = {
    "identities": {
        "constant_stencil": check_constant_stencil,
        "integral_of_derivative": check_integral_of_derivative,
        "hmf_identity": check_hmf_identity,
        "coupling_constant": check_coupling_constant,
        "spd_tension_forms": check_tension_forms,
        "torsion_square": check_torsion_square,
        "warped_ricci_oracle": check_warped_oracle,
        "algebraic_identity": check_algebraic_identity,
        "fixed_points": check_fixed_points,
    },
    "linearization": {
        f"linearization_{name}": _linearization_check(name)
        for name in ("hrf", "hrf_deturck", "hrf_spd", "warped_space_form", "invariant", "connection")
    },
    "estimates": {
        "comparison_solution": check_comparison_solution,
        "domain_exit": check_domain_exit,
        "bound_monitors": check_monitors,
        "evolution_identity": check_evolution_identity,
        "decay_fit": check_decay_fit,
        "energy_functional": check_energy_functional,
    },
    "spectra": {
        "circle_spectrum": check_circle_spectrum,
        "trace_free_kernel": check_trace_free_kernel,
        "oneform_top": check_oneform_top,
        "space_form_L0": check_space_form_L0,
    },
}


def resolve_suites(suite: str) -> tuple[str, ...]:
    if suite == "all":
        return SUITES
    if suite not in SUITES:
        raise ConfigError("suite", f"unknown suite {suite!r}; choose from {SUITES + ('all',)}")
    return (suite,)


def run_suite(suite: str, seed: int | None = None, settings: dict[str, Any] | None = None) -> VerifyReport:
    settings = load_settings() if settings is None else settings
    seed = settings["verify_seed"] if seed is None else seed
    report = VerifyReport()
    for name in resolve_suites(suite):
        for check_name, check in SUITE_CHECKS[name].items():
            rng = np.random.default_rng([seed, len(report.results)])
            try:
                value, tol, detail = check(settings, rng)
                result = CheckResult(name, check_name, float(value), float(tol), bool(value <= tol), detail)
            except FlowLabError as e:
                result = CheckResult(name, check_name, math.nan, math.nan, False, f"{type(e).__name__}: {e}")
            level = logging.INFO if result.passed else logging.WARNING
            logger.log(level, "%s/%s: %s (value %.3e, tol %.1e)", name, check_name,
                       "pass" if result.passed else "FAIL", result.value, result.tol)
            report.results.append(result)
    logger.info("verify %s: %d checks, %d failures", suite, len(report.results), len(report.failures))
    return report
