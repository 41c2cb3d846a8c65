"""Maximum-principle envelopes, bound monitors and decay diagnostics for warped runs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from flowlab.errors import DimensionError, DomainExitError, SamplingError
from flowlab.flows import (
    FlowParams,
    FlowState,
    StepperConfig,
    Trajectory,
    WarpedState,
    check_cfl,
    run_flow,
)
from flowlab.geometry import (
    MetricState,
    build_metric_state,
    hessian_values,
    laplacian_values,
    norm_sq_oneform,
    rough_laplacian,
)
from flowlab.grid_core import Grid, ScalarField, SymTensor2Field, difference, gradient_values, integrate

logger = logging.getLogger(__name__)

DEFAULT_MARGIN_C1 = 1.0
FIBER_PERIOD = 2.0 * np.pi


@dataclass(frozen=True)
class ComparisonODE:
    """dU/dt = −μe^{−2U}, U(0) = d, solved by U(t) = ½log(e^{2d} − 2μt)."""

    mu: float
    d: float

    @property
    def domain_end(self) -> float:
        if self.mu <= 0:
            return float("inf")
        return float(np.exp(2.0 * self.d) / (2.0 * self.mu))

    def exp2(self, t):
        """e^{2U(t)}."""
        value = np.exp(2.0 * self.d) - 2.0 * self.mu * np.asarray(t, dtype=float)
        if np.any(value <= 0.0):
            raise DomainExitError(
                f"comparison solution for mu = {self.mu}, d = {self.d} ends at t = {self.domain_end:.6g}"
            )
        return value

    def __call__(self, t):
        return 0.5 * np.log(self.exp2(t))


def comparison_solution(mu: float, d: float, t):
    return ComparisonODE(mu, d)(t)


def discretization_margin(t, h: float, c1: float = DEFAULT_MARGIN_C1):
    return c1 * h ** 4 * (1.0 + np.asarray(t, dtype=float))


@dataclass(eq=False)
class BoundMonitor:
    name: str
    times: np.ndarray
    observed_min: np.ndarray
    observed_max: np.ndarray
    lower_env: np.ndarray
    upper_env: np.ndarray
    margin: np.ndarray
    tightest_constant: float | None = None
    meta: dict[str, float] = field(default_factory=dict)

    @property
    def violated(self) -> np.ndarray:
        return ((self.observed_min < self.lower_env - self.margin)
                | (self.observed_max > self.upper_env + self.margin))

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(self.violated))

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def envelope_ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.upper_env > 0, self.observed_max / self.upper_env, np.nan)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": self.times,
            "observed_min": self.observed_min,
            "observed_max": self.observed_max,
            "lower_env": self.lower_env,
            "upper_env": self.upper_env,
            "margin": self.margin,
            "violated": self.violated,
        })


def _warped_states(traj: Trajectory) -> list[WarpedState]:
    if traj.system != "warped":
        raise SamplingError(f"bound monitors need a warped trajectory, got {traj.system!r}")
    if not traj.states:
        raise SamplingError("trajectory is empty")
    return traj.states


def _margins(times: np.ndarray, grid: Grid, margin: float | None, c1: float) -> np.ndarray:
    if margin is not None:
        return np.full(times.shape, float(margin))
    return discretization_margin(times, grid.h_min, c1)


def monitor_sandwich(traj: Trajectory, mu: float = -0.5, margin: float | None = None,
                     c1: float = DEFAULT_MARGIN_C1) -> BoundMonitor:
    """e^{2d₁} − 2μt ≤ e^{2φ} ≤ e^{2d₂} − 2μt with d₁, d₂ the extremes of φ(·, 0)."""
    states = _warped_states(traj)
    times = traj.times
    phi0 = states[0].phi.values
    lower = ComparisonODE(mu, float(np.min(phi0))).exp2(times)
    upper = ComparisonODE(mu, float(np.max(phi0))).exp2(times)
    exps = [np.exp(2.0 * s.phi.values) for s in states]
    monitor = BoundMonitor(
        "sandwich", times,
        np.array([float(np.min(e)) for e in exps]),
        np.array([float(np.max(e)) for e in exps]),
        lower, upper, _margins(times, states[0].grid, margin, c1),
    )
    if not monitor.passed:
        logger.warning("sandwich monitor: %d violations", monitor.violations)
    return monitor


def dphi_norm_sq(st: FlowState) -> np.ndarray:
    m = build_metric_state(st.g)
    return norm_sq_oneform(gradient_values(st.phi.values, st.grid), m)


def monitor_gradient_decay(traj: Trajectory, mu: float = -0.5, margin: float | None = None,
                           c1: float = DEFAULT_MARGIN_C1) -> BoundMonitor:
    """|dφ|² ≤ b²U₀/(t + b)², b = e^{2d₂}, U₀ = max|dφ(·, 0)|²."""
    states = _warped_states(traj)
    times = traj.times
    b = float(np.exp(2.0 * np.max(states[0].phi.values)))
    norms = [dphi_norm_sq(s) for s in states]
    U0 = float(np.max(norms[0]))
    observed_max = np.array([float(np.max(v)) for v in norms])
    upper = b * b * U0 / (times + b) ** 2
    tightest = float(np.max(observed_max * (times + 1.0) ** 2))
    monitor = BoundMonitor(
        "gradient_decay", times,
        np.array([float(np.min(v)) for v in norms]),
        observed_max,
        np.zeros_like(times), upper, _margins(times, states[0].grid, margin, c1),
        tightest_constant=tightest,
        meta={"b": b, "U0": U0, "C": b * b * U0, "mu": mu},
    )
    if not monitor.passed:
        logger.warning("gradient-decay monitor: %d violations", monitor.violations)
    return monitor


def warped_monitor_values(st: FlowState) -> dict[str, float]:
    """Per-record values written to trajectory.csv for warped runs."""
    phi = st.phi.values
    dsq = dphi_norm_sq(st)
    return {
        "phi_min": float(np.min(phi)),
        "phi_max": float(np.max(phi)),
        "exp2phi_min": float(np.exp(2.0 * np.min(phi))),
        "exp2phi_max": float(np.exp(2.0 * np.max(phi))),
        "dphi_sq_max": float(np.max(dsq)),
    }


def metric_monitor_values(st: FlowState) -> dict[str, float]:
    m = build_metric_state(st.g)
    return {
        "scalar_min": float(np.min(m.scalar.values)),
        "scalar_max": float(np.max(m.scalar.values)),
        "volume": integrate(ScalarField(st.grid, np.ones(st.grid.points)), m.vol_density),
    }


def warped_ricci_oracle(g: SymTensor2Field, phi: ScalarField, fiber_points: int = 8) -> dict[str, float]:
    """Compare the Ricci tensor of g + e^{2φ}dθ² on T³ with its warped-product blocks."""
    grid = g.grid
    if grid.dim != 2:
        raise DimensionError(f"the warped Ricci oracle needs a 2D base, got dim {grid.dim}")
    total = Grid(grid.points + (fiber_points,), grid.periods + (FIBER_PERIOD,))
    metric = np.zeros(total.points + (3, 3))
    metric[..., :2, :2] = g.values[:, :, None]
    metric[..., 2, 2] = np.exp(2.0 * phi.values)[:, :, None]
    ricci = build_metric_state(SymTensor2Field(total, metric)).ricci.values[:, :, 0]

    m = build_metric_state(g)
    dphi = gradient_values(phi.values, grid)
    horizontal = (m.ricci.values - hessian_values(phi.values, m)
                  - np.einsum("...a,...b->...ab", dphi, dphi))
    vertical = -np.exp(2.0 * phi.values) * (laplacian_values(phi.values, m) + norm_sq_oneform(dphi, m))
    return {
        "horizontal": float(np.max(np.abs(ricci[..., :2, :2] - horizontal))),
        "mixed": float(np.max(np.abs(ricci[..., :2, 2]))),
        "vertical": float(np.max(np.abs(ricci[..., 2, 2] - vertical))),
    }


def _dphi_rhs(st: WarpedState, m: MetricState) -> np.ndarray:
    """Δdφ − Rc(dφ) + 2μe^{−2φ}dφ, with Δ the rough Laplacian on 1-forms."""
    phi = st.phi.values
    dphi = gradient_values(phi, st.grid)
    ric = np.einsum("...ak,...kl,...l->...a", m.ricci.values, m.g_inv.values, dphi)
    return rough_laplacian(dphi, m, 1) - ric + 2.0 * st.mu * np.exp(-2.0 * phi)[..., None] * dphi


def _dphi_sq_rhs(st: WarpedState, m: MetricState, fiber_dim: int) -> np.ndarray:
    """Δ|dφ|² − 2|∇²φ|² − 2m|dφ|⁴ + 4μe^{−2φ}|dφ|²."""
    phi = st.phi.values
    sq = norm_sq_oneform(gradient_values(phi, st.grid), m)
    hess = hessian_values(phi, m)
    gi = m.g_inv.values
    hess_sq = np.einsum("...ac,...bd,...ab,...cd->...", gi, gi, hess, hess)
    return (laplacian_values(sq, m) - 2.0 * hess_sq - 2.0 * fiber_dim * sq ** 2
            + 4.0 * st.mu * np.exp(-2.0 * phi) * sq)


def evolution_identity_residual(traj: Trajectory, which: str = "dphi_sq", fiber_dim: int = 1) -> float:
    """Max over interior samples of |∂_t Q − (right side of its evolution equation)|."""
    states = _warped_states(traj)
    if len(states) < 3:
        raise SamplingError(f"need at least 3 samples for an evolution identity, got {len(states)}")
    if which not in ("dphi", "dphi_sq"):
        raise SamplingError(f"unknown evolution identity {which!r}")
    times = traj.times
    if which == "dphi":
        series = np.stack([gradient_values(s.phi.values, s.grid) for s in states])
    else:
        series = np.stack([dphi_norm_sq(s) for s in states])
    ddt = np.gradient(series, times, axis=0, edge_order=2)
    worst = 0.0
    for k in range(1, len(states) - 1):
        m = build_metric_state(states[k].g)
        rhs = _dphi_rhs(states[k], m) if which == "dphi" else _dphi_sq_rhs(states[k], m, fiber_dim)
        worst = max(worst, float(np.max(np.abs(ddt[k] - rhs))))
    return worst


@dataclass(frozen=True)
class DecayFit:
    C_fit: float
    lam_fit: float
    window: tuple[float, float]
    rms: float
    samples: int


def fit_decay(times, values, window: tuple[float, float] | None = None) -> DecayFit:
    """Least-squares fit of value ≈ C·e^{−λt} on log(value)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = (float(t.min()), float(t.max()))
    mask = (t >= window[0]) & (t <= window[1])
    t, v = t[mask], v[mask]
    if t.size < 2:
        raise SamplingError(f"need at least 2 samples in window {window}, got {t.size}")
    if np.any(v <= 0.0):
        raise SamplingError(f"non-positive values in window {window}; cannot fit on log scale")
    design = np.column_stack([np.ones_like(t), -t])
    coef, *_ = np.linalg.lstsq(design, np.log(v), rcond=None)
    rms = float(np.sqrt(np.mean((design @ coef - np.log(v)) ** 2)))
    return DecayFit(float(np.exp(coef[0])), float(coef[1]), (float(window[0]), float(window[1])), rms, int(t.size))


def decay_series(traj: Trajectory, reference: FlowState, component: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(t, sup-distance to ``reference``) along a trajectory."""
    ref = reference.components()
    keys = [component] if component else list(ref)
    dist = np.array([
        max(float(np.max(np.abs(s.components()[k] - ref[k]))) for k in keys)
        for s in traj.states
    ])
    return traj.times, dist


def energy_functional(g: SymTensor2Field, phi: ScalarField, f: ScalarField, m: int, mu: float) -> float:
    """∫ (R − m|dφ|² + mμe^{−2φ} + |df|²) e^{−f} dV_g."""
    ms = build_metric_state(g)
    grid = g.grid
    dphi = norm_sq_oneform(gradient_values(phi.values, grid), ms)
    df = norm_sq_oneform(gradient_values(f.values, grid), ms)
    integrand = (ms.scalar.values - m * dphi + m * mu * np.exp(-2.0 * phi.values) + df) * np.exp(-f.values)
    return integrate(ScalarField(grid, integrand), ms.vol_density)


def c2_norm(values: np.ndarray, grid: Grid) -> float:
    """max of |f|, |∂f| and |∂∂f| over the grid."""
    parts = [np.max(np.abs(values))]
    for a in range(grid.dim):
        first = difference(values, grid, a, 1)
        parts.append(np.max(np.abs(first)))
        parts.append(np.max(np.abs(difference(values, grid, a, 2))))
        for b in range(a + 1, grid.dim):
            parts.append(np.max(np.abs(difference(first, grid, b, 1))))
    return float(max(parts))


def calibrate_margin_constant(grid: Grid, t_end: float = 1.0, cfl: float = 0.2) -> float:
    """Fit c1 in c1·h⁴(1 + t) from a heat-equation run with a known exact solution."""
    x = grid.coordinates()[0]
    k = 2.0 * np.pi / grid.periods[0]
    state = WarpedState(SymTensor2Field.identity(grid), ScalarField(grid, np.sin(k * x)), mu=0.0)
    params = FlowParams(m=0, normalized=False)
    dt = cfl * grid.h_min ** 2 / grid.dim
    n = max(1, int(np.ceil(t_end / dt)))
    cfg = StepperConfig(dt=t_end / n, t_end=t_end, cfl=0.25, record_every=max(1, n // 10))
    check_cfl(state, cfg)
    traj = run_flow(state, params, cfg)
    worst = 0.0
    for st in traj.states:
        exact = np.exp(-k * k * st.t) * np.sin(k * x)
        err = float(np.max(np.abs(st.phi.values - exact)))
        worst = max(worst, err / (grid.h_min ** 4 * (1.0 + st.t)))
    logger.info("calibrated margin constant c1 = %.4g on %s", worst, grid.points)
    return worst
