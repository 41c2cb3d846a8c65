"""Right-hand sides of the four curvature-normalized flow systems, the DeTurck
gauge, the normalization transforms and the explicit RK4 integrator.

Every RHS returns an increment: a dict keyed like ``state.components()``.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, ClassVar

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from flowlab.errors import (
    ConfigError,
    CurvatureModelError,
    DomainExitError,
    NonSPDError,
    NumericalFailure,
    SamplingError,
    StepperError,
)
from flowlab.geometry import (
    MetricState,
    SyntheticCurvature,
    build_metric_state,
    codifferential_oneform,
    codifferential_twoform,
    deturck_field,
    exterior_derivative_oneform,
    full_threeform,
    hessian_values,
    hodge_laplacian_threeform,
    laplacian_values,
    lie_derivative_metric,
    lie_derivative_oneform,
    lie_derivative_scalar,
    norm_sq_oneform,
    symmetrize,
)
from flowlab.grid_core import (
    FiberMetricField,
    Grid,
    ScalarField,
    SymTensor2Field,
    ThreeFormField,
    VecOneFormField,
    batched_inv,
    check_spd,
    difference,
    gradient_values,
)
from flowlab.targets import MapField, bundle_pullback_form, pullback_form, tension_field

logger = logging.getLogger(__name__)

Increment = dict[str, np.ndarray]

WARPED_MU_VALUES = (-0.5, 0.0, 0.5)
GAUGES = ("none", "deturck")


# --------------------------------------------------------------------------- states

class FlowState:
    """Shared behaviour of the four state variants (each a frozen dataclass)."""

    system: ClassVar[str] = ""
    g: SymTensor2Field
    t: float

    @property
    def grid(self) -> Grid:
        return self.g.grid

    def components(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def with_components(self, comps: dict[str, np.ndarray], t: float) -> "FlowState":
        raise NotImplementedError

    def advanced(self, increment: Increment, dt: float) -> "FlowState":
        comps = {k: v + dt * increment[k] for k, v in self.components().items()}
        return self.with_components(comps, self.t + dt)

    def perturbed(self, direction: Increment, eps: float) -> "FlowState":
        comps = {k: v + eps * direction[k] if k in direction else v
                 for k, v in self.components().items()}
        return self.with_components(comps, self.t)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for key, value in self.components().items():
            digest.update(key.encode())
            digest.update(np.ascontiguousarray(value, dtype=np.float64).tobytes())
        return digest.hexdigest()[:16]

    def spd_components(self) -> dict[str, np.ndarray]:
        return {"g": self.g.values}

    def check_health(self) -> None:
        for key, value in self.components().items():
            if not np.all(np.isfinite(value)):
                raise NumericalFailure(f"non-finite values in component {key!r}")
        for key, value in self.spd_components().items():
            check_spd(value, self.grid.dim, key)


@dataclass(frozen=True, eq=False)
class HRFState(FlowState):
    g: SymTensor2Field
    phi: MapField
    t: float = 0.0

    system: ClassVar[str] = "hrf"

    def components(self):
        return {"g": self.g.values, "phi": self.phi.values}

    def with_components(self, comps, t):
        return HRFState(SymTensor2Field(self.grid, symmetrize(comps["g"])),
                        MapField(self.grid, self.phi.target, comps["phi"]), t)

    def spd_components(self):
        out = {"g": self.g.values}
        if self.phi.target.kind == "spd":
            out["phi"] = self.phi.values
        return out


@dataclass(frozen=True, eq=False)
class WarpedState(FlowState):
    g: SymTensor2Field
    phi: ScalarField
    mu: float = -0.5
    t: float = 0.0

    system: ClassVar[str] = "warped"

    def __post_init__(self):
        if float(self.mu) not in WARPED_MU_VALUES:
            raise ConfigError("flow.mu", f"mu must be one of {WARPED_MU_VALUES}, got {self.mu}")

    def components(self):
        return {"g": self.g.values, "phi": self.phi.values}

    def with_components(self, comps, t):
        return WarpedState(SymTensor2Field(self.grid, symmetrize(comps["g"])),
                           ScalarField(self.grid, comps["phi"]), self.mu, t)


@dataclass(frozen=True, eq=False)
class InvariantState(FlowState):
    g: SymTensor2Field
    A: VecOneFormField
    G: FiberMetricField
    t: float = 0.0

    system: ClassVar[str] = "invariant"

    def components(self):
        return {"g": self.g.values, "A": self.A.values, "G": self.G.values}

    def with_components(self, comps, t):
        return InvariantState(SymTensor2Field(self.grid, symmetrize(comps["g"])),
                              VecOneFormField(self.grid, comps["A"]),
                              FiberMetricField(self.grid, symmetrize(comps["G"])), t)

    def spd_components(self):
        return {"g": self.g.values, "G": self.G.values}


@dataclass(frozen=True, eq=False)
class ConnectionState(FlowState):
    g: SymTensor2Field
    H: ThreeFormField
    t: float = 0.0

    system: ClassVar[str] = "connection"

    def components(self):
        return {"g": self.g.values, "H": self.H.values}

    def with_components(self, comps, t):
        return ConnectionState(SymTensor2Field(self.grid, symmetrize(comps["g"])),
                               ThreeFormField(self.grid, comps["H"]), t)


STATE_TYPES: dict[str, type[FlowState]] = {
    cls.system: cls for cls in (HRFState, WarpedState, InvariantState, ConnectionState)
}


# --------------------------------------------------------------------------- parameters

@dataclass(frozen=True)
class CouplingSchedule:
    """c(t) = c0·exp(−ρt); non-increasing for c0, ρ ≥ 0."""

    c0: float = 1.0
    rho: float = 0.0

    def __post_init__(self):
        if self.c0 < 0:
            raise ConfigError("flow.c0", f"coupling must be >= 0, got {self.c0}")
        if self.rho < 0:
            raise ConfigError("flow.rho", f"coupling decay rate must be >= 0, got {self.rho}")

    def __call__(self, t: float) -> float:
        return self.c0 * float(np.exp(-self.rho * t))


@dataclass(frozen=True, eq=False)
class FlowParams:
    coupling: CouplingSchedule = field(default_factory=CouplingSchedule)
    s: float = 0.0
    lam: float = 0.0
    m: int = 1
    phi_avg0: float = 0.0
    gauge: str = "none"
    reference: MetricState | None = None
    synth: SyntheticCurvature | None = None
    normalized: bool = True
    pre_gauge: bool = False

    def __post_init__(self):
        if self.gauge not in GAUGES:
            raise ConfigError("flow.gauge", f"unknown gauge {self.gauge!r}")
        if self.gauge == "deturck" and self.reference is None:
            raise ConfigError("flow.gauge", "DeTurck gauge needs a reference metric")
        if self.m < 0:
            raise ConfigError("flow.m", f"fiber dimension must be >= 0, got {self.m}")
        if self.synth is not None and self.synth.is_space_form:
            if self.reference is None:
                raise CurvatureModelError("space-form curvature needs a reference metric g0")
            if abs(self.lam - self.synth.lam) > 1e-12:
                raise CurvatureModelError(
                    f"lambda = {self.lam} is inconsistent with K(n-1) = {self.synth.lam}"
                )

    @property
    def c(self) -> CouplingSchedule:
        return self.coupling

    def at_fixed_point(self) -> "FlowParams":
        return replace(self, s=-2.0 * self.lam)


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    t_end: float
    cfl: float = 0.25
    record_every: int = 1
    scheme: str = "rk4"

    def __post_init__(self):
        if self.scheme != "rk4":
            raise StepperError(f"only the rk4 scheme is available, got {self.scheme!r}")
        if not self.dt > 0:
            raise StepperError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise StepperError(f"t_end must be >= 0, got {self.t_end}")
        if self.record_every < 1:
            raise StepperError(f"record_every must be >= 1, got {self.record_every}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


# --------------------------------------------------------------------------- shared terms

def effective_ricci(m: MetricState, p: FlowParams) -> np.ndarray:
    """Ricci tensor seen by the RHS.

    Under space-form curvature with reference g0 this is
    Rc(g) + λg0 − ½(Rm_K(g − g0) − λ(g − g0)), equal to λg0 at g0.
    """
    rc = m.ricci.values
    synth = p.synth
    if synth is None or not synth.is_space_form:
        return rc
    synth.check_dim(m.dim)
    g0 = p.reference.g.values
    h = m.g.values - g0
    return rc + synth.lam * g0 - 0.5 * (synth.curvature_action(h, g0, p.reference.g_inv.values) - synth.lam * h)


def _gauge_field(m: MetricState, p: FlowParams):
    if p.gauge == "deturck":
        return deturck_field(m, p.reference)
    return None


def outer_differential(phi: np.ndarray, grid: Grid) -> np.ndarray:
    """dφ⊗dφ, summed over trailing target components."""
    d = gradient_values(phi, grid).reshape(grid.points + (grid.dim, -1))
    return np.einsum("...ai,...bi->...ab", d, d)


# --------------------------------------------------------------------------- HRF

def rhs_hrf(st: HRFState, p: FlowParams) -> Increment:
    """∂g = −2Rc + 2c(t) φ*h − sg,  ∂φ = τφ."""
    m = build_metric_state(st.g)
    rc = effective_ricci(m, p)
    dg = -2.0 * rc + 2.0 * p.coupling(st.t) * pullback_form(st.phi).values - p.s * st.g.values
    dphi = tension_field(st.phi, m).values
    W = _gauge_field(m, p)
    if W is not None:
        dg = dg + lie_derivative_metric(W, m).values
        dphi = dphi + lie_derivative_scalar(W, st.phi.values)
    return {"g": symmetrize(dg), "phi": dphi}


# --------------------------------------------------------------------------- warped

def rhs_warped(st: WarpedState, p: FlowParams, normalized: bool | None = None,
               pre_gauge: bool | None = None) -> Increment:
    """Warped-product flow of (g, φ) with a μ-Einstein fiber of dimension m.

    un-normalized:  ∂g = −2Rc + 2m dφ⊗dφ,       ∂φ = Δφ − μe^{−2φ}
    normalized:     ∂g = −2Rc + 2m dφ⊗dφ − sg,  ∂φ = Δφ + (s/2)(e^{−2(φ−φ_avg0)} − 1)
    pre_gauge adds 2m Hess φ to ∂g and m|dφ|² to ∂φ.
    """
    normalized = p.normalized if normalized is None else normalized
    pre_gauge = p.pre_gauge if pre_gauge is None else pre_gauge
    if normalized and st.mu != -0.5:
        raise ConfigError("flow.mu", f"the normalized warped flow needs mu = -1/2, got {st.mu}")
    m = build_metric_state(st.g)
    grid = st.grid
    phi = st.phi.values
    rc = effective_ricci(m, p)
    dg = -2.0 * rc + 2.0 * p.m * outer_differential(phi, grid)
    dphi = laplacian_values(phi, m)
    if normalized:
        dg = dg - p.s * st.g.values
        dphi = dphi + 0.5 * p.s * (np.exp(-2.0 * (phi - p.phi_avg0)) - 1.0)
    else:
        dphi = dphi - st.mu * np.exp(-2.0 * phi)
    if pre_gauge:
        dg = dg + 2.0 * p.m * hessian_values(phi, m)
        dphi = dphi + p.m * norm_sq_oneform(gradient_values(phi, grid), m)
    W = _gauge_field(m, p)
    if W is not None:
        dg = dg + lie_derivative_metric(W, m).values
        dphi = dphi + lie_derivative_scalar(W, phi)
    return {"g": symmetrize(dg), "phi": dphi}


# --------------------------------------------------------------------------- invariant

def fiber_metric_rhs(G: np.ndarray, A: np.ndarray, m: MetricState) -> np.ndarray:
    """ΔG − g^{ab}∂_aG G⁻¹∂_bG − ½ g^{ac}g^{bd} G_ik G_jl F^k_ab F^l_cd, s-free."""
    grid = m.grid
    gi = m.g_inv.values
    inv = batched_inv(G)
    dG = gradient_values(G, grid)
    F = exterior_derivative_oneform(A, grid)
    lap = laplacian_values(G, m)
    quad = np.einsum("...ab,...aik,...kl,...blj->...ij", gi, dG, inv, dG)
    gauge_sq = np.einsum("...ac,...bd,...ik,...jl,...abk,...cdl->...ij", gi, gi, G, G, F, F, optimize=True)
    return symmetrize(lap - quad - 0.5 * gauge_sq)


def rhs_invariant(st: InvariantState, p: FlowParams) -> Increment:
    """Locally ℝᴺ-invariant flow of (g, A, G) with F = dA.

    ∂g = −2Rc + ½tr(G⁻¹∂G G⁻¹∂G) + g^{cd}G_ij F^i_ac F^j_bd − sg
    ∂A = −δdA + G⁻¹ g^{bc} ∂_cG F_{b·} − ½sA
    ∂G = fiber_metric_rhs
    """
    m = build_metric_state(st.g)
    grid = st.grid
    gi = m.g_inv.values
    A = st.A.values
    G = st.G.values
    inv = batched_inv(G)
    dG = gradient_values(G, grid)
    F = exterior_derivative_oneform(A, grid)

    rc = effective_ricci(m, p)
    mixed = np.einsum("...cd,...ij,...aci,...bdj->...ab", gi, G, F, F, optimize=True)
    dg = -2.0 * rc + bundle_pullback_form(st.G).values + mixed - p.s * st.g.values

    dA = (-codifferential_twoform(F, m)
          + np.einsum("...ij,...bc,...cjk,...bak->...ai", inv, gi, dG, F, optimize=True)
          - 0.5 * p.s * A)
    dGt = fiber_metric_rhs(G, A, m)

    W = _gauge_field(m, p)
    if W is not None:
        dg = dg + lie_derivative_metric(W, m).values
        dA = dA + lie_derivative_oneform(W, A) - gradient_values(codifferential_oneform(A, m), grid)
        dGt = dGt + lie_derivative_scalar(W, G)
    return {"g": symmetrize(dg), "A": dA, "G": symmetrize(dGt)}


# --------------------------------------------------------------------------- connection

def torsion_square(H: ThreeFormField, m: MetricState) -> np.ndarray:
    """𝓗_ij = g^{pq} g^{rs} H_ipr H_jqs."""
    full = full_threeform(H)
    gi = m.g_inv.values
    return np.einsum("...ipr,...jqs,...pq,...rs->...ij", full, full, gi, gi, optimize=True)


def torsion_square_naive(H: ThreeFormField, m: MetricState) -> np.ndarray:
    full = full_threeform(H)
    gi = m.g_inv.values
    out = np.zeros(H.grid.points + (3, 3))
    for i in range(3):
        for j in range(3):
            for p in range(3):
                for q in range(3):
                    for r in range(3):
                        for s in range(3):
                            out[..., i, j] += (gi[..., p, q] * gi[..., r, s]
                                               * full[..., i, p, r] * full[..., j, q, s])
    return out


def torsion_square_closed(H: ThreeFormField, m: MetricState) -> np.ndarray:
    """2 H_123² / det g · g."""
    det = m.vol_density.values ** 2
    return (2.0 * H.values ** 2 / det)[..., None, None] * m.g.values


def rhs_connection(st: ConnectionState, p: FlowParams) -> Increment:
    """∂g = −2Rc + ½𝓗 − sg,  ∂H = Δ_d H − sH."""
    m = build_metric_state(st.g)
    rc = effective_ricci(m, p)
    dg = -2.0 * rc + 0.5 * torsion_square(st.H, m) - p.s * st.g.values
    dH = hodge_laplacian_threeform(st.H, m).values - p.s * st.H.values
    W = _gauge_field(m, p)
    if W is not None:
        dg = dg + lie_derivative_metric(W, m).values
        flux = W.values * st.H.values[..., None]
        dH = dH + sum(difference(flux[..., k], st.grid, k) for k in range(3))
    return {"g": symmetrize(dg), "H": dH}


RHS_FUNCTIONS: dict[str, Callable[[FlowState, FlowParams], Increment]] = {
    "hrf": rhs_hrf,
    "warped": rhs_warped,
    "invariant": rhs_invariant,
    "connection": rhs_connection,
}


def evaluate_rhs(st: FlowState, p: FlowParams) -> Increment:
    return RHS_FUNCTIONS[st.system](st, p)


def increment_sup(inc: Increment) -> float:
    return max((float(np.max(np.abs(v))) for v in inc.values() if v.size), default=0.0)


# --------------------------------------------------------------------------- integration

_RK4_STAGE_SHIFT = (0.0, 0.5, 0.5, 1.0)
_RK4_WEIGHTS = (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)


def max_diffusivity(st: FlowState) -> float:
    """dim · max eigenvalue of g⁻¹ over the grid."""
    lowest = np.linalg.eigvalsh(st.g.values)[..., 0]
    return st.grid.dim / float(np.min(lowest))


def check_cfl(st: FlowState, cfg: StepperConfig) -> float:
    limit = cfg.cfl * st.grid.h_min ** 2 / max_diffusivity(st)
    if cfg.dt > limit:
        raise StepperError(f"dt = {cfg.dt:.4g} exceeds the CFL limit {limit:.4g}")
    return limit


def step(st: FlowState, p: FlowParams, cfg: StepperConfig,
         rhs: Callable[[FlowState, FlowParams], Increment] | None = None) -> FlowState:
    """One classical RK4 step."""
    rhs = rhs or evaluate_rhs
    dt = cfg.dt
    stages: list[Increment] = []
    stage_state = st
    for shift in _RK4_STAGE_SHIFT:
        if stages:
            stage_state = st.advanced(stages[-1], shift * dt)
        stages.append(rhs(stage_state, p))
    total = {k: sum(w * k_i[k] for w, k_i in zip(_RK4_WEIGHTS, stages)) for k in stages[0]}
    return st.advanced(total, dt)


@dataclass(frozen=True)
class TrajectoryRecord:
    time: float
    checksum: str
    values: dict[str, float] = field(default_factory=dict)


Monitor = Callable[[FlowState], dict[str, float]]


@dataclass(eq=False)
class Trajectory:
    system: str
    states: list[FlowState] = field(default_factory=list)
    records: list[TrajectoryRecord] = field(default_factory=list)

    def append(self, st: FlowState, monitors: tuple[Monitor, ...] = ()) -> TrajectoryRecord:
        values: dict[str, float] = {}
        for monitor in monitors:
            values.update(monitor(st))
        record = TrajectoryRecord(st.t, st.checksum(), values)
        self.states.append(st)
        self.records.append(record)
        return record

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records])

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        rows = [{"time": r.time, "checksum": r.checksum, **r.values} for r in self.records]
        return pd.DataFrame(rows)


def run_flow(st: FlowState, p: FlowParams, cfg: StepperConfig,
             monitors: tuple[Monitor, ...] = (),
             rhs: Callable[[FlowState, FlowParams], Increment] | None = None) -> Trajectory:
    """Integrate to ``cfg.t_end``, recording every ``cfg.record_every`` steps."""
    check_cfl(st, cfg)
    st.check_health()
    n_steps = cfg.n_steps
    logger.info("running %s flow: %d steps of dt = %.4g", st.system, n_steps, cfg.dt)
    traj = Trajectory(st.system)
    traj.append(st, monitors)
    for n in range(1, n_steps + 1):
        previous = st
        try:
            st = step(st, p, cfg, rhs)
            st.check_health()
        except NonSPDError as exc:
            logger.error("positive-definiteness lost at t = %.6g: %s", previous.t + cfg.dt, exc)
            raise NumericalFailure(str(exc), time=previous.t + cfg.dt, last_state=previous) from exc
        except NumericalFailure as exc:
            logger.error("numerical failure at t = %.6g", previous.t + cfg.dt)
            raise NumericalFailure(str(exc), time=previous.t + cfg.dt, last_state=previous) from exc
        if n % cfg.record_every == 0 or n == n_steps:
            record = traj.append(st, monitors)
            logger.debug("t = %.6g checksum %s %s", record.time, record.checksum, record.values)
    logger.info("finished %s flow at t = %.6g (%d records)", st.system, st.t, len(traj))
    return traj


# --------------------------------------------------------------------------- normalization

@dataclass(eq=False)
class NormalizedTrajectory:
    times: np.ndarray
    states: list[FlowState]
    residual: float
    sigma: np.ndarray


def _time_change(tbar: np.ndarray, sigma: np.ndarray, exact: Callable[[np.ndarray], np.ndarray] | None):
    if exact is not None:
        return exact(tbar)
    return cumulative_trapezoid(1.0 / sigma, tbar, initial=0.0)


def substitution_residual(times: np.ndarray, states: list[FlowState], p: FlowParams,
                          rhs: Callable[[FlowState, FlowParams], Increment] | None = None) -> float:
    """sup over interior samples of |∂_t state − rhs(state)|, ∂_t by non-uniform differences."""
    if len(states) < 3:
        raise SamplingError(f"need at least 3 samples for a substitution residual, got {len(states)}")
    rhs = rhs or evaluate_rhs
    worst = 0.0
    for key in states[0].components():
        stack = np.stack([s.components()[key] for s in states])
        ddt = np.gradient(stack, times, axis=0, edge_order=2)
        for k in range(1, len(states) - 1):
            worst = max(worst, float(np.max(np.abs(ddt[k] - rhs(states[k], p)[key]))))
    return worst


def normalize_transform(traj: Trajectory, s: float, p: FlowParams,
                        quadrature: str = "exact") -> NormalizedTrajectory:
    """Map an un-normalized trajectory (t̄, ḡ, φ̄) to the normalized system.

    HRF:    σ = 1 + s·t̄,        g = ḡ/σ
    warped: σ = s(e^{2p} + t̄),  g = ḡ/σ,  φ = φ̄ − ½log(e^{2p} + t̄) + p,  p = φ_avg0
    t = ∫ dr/σ. With s = 0 the transform is the identity and the residual is
    that of the un-normalized system.
    """
    states = traj.states
    tbar = traj.times
    if len(states) < 3:
        raise SamplingError(f"trajectory has {len(states)} samples, need at least 3")
    system = traj.system
    if system not in ("hrf", "warped"):
        raise ConfigError("normalize.system", f"no normalization transform for {system!r}")

    if s == 0.0:
        if system == "warped":
            target = replace(p, s=0.0, normalized=False)
        else:
            target = replace(p, s=0.0)
        residual = substitution_residual(tbar, states, target)
        return NormalizedTrajectory(tbar.copy(), list(states), residual, np.ones_like(tbar))

    if system == "hrf":
        sigma = 1.0 + s * tbar
        exact = (lambda tb: np.log1p(s * tb) / s) if quadrature == "exact" else None
    else:
        a = float(np.exp(2.0 * p.phi_avg0))
        sigma = s * (a + tbar)
        exact = (lambda tb: np.log((a + tb) / a) / s) if quadrature == "exact" else None
    if np.any(sigma <= 0.0):
        bad = float(tbar[np.argmax(sigma <= 0.0)])
        raise DomainExitError(f"sigma <= 0 at t = {bad:.6g}; the transform leaves its domain")

    times = _time_change(tbar, sigma, exact)
    out: list[FlowState] = []
    for st, sg, t in zip(states, sigma, times):
        comps = dict(st.components())
        comps["g"] = comps["g"] / sg
        if system == "warped":
            comps["phi"] = comps["phi"] - 0.5 * np.log(a + st.t) + p.phi_avg0
        out.append(st.with_components(comps, float(t)))

    target = replace(p, s=float(s), normalized=True) if system == "warped" else replace(p, s=float(s))
    residual = substitution_residual(times, out, target)
    logger.info("normalized %s trajectory with s = %.4g: residual %.3e", system, s, residual)
    return NormalizedTrajectory(times, out, residual, sigma)
