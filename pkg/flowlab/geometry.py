"""Riemannian tensor calculus over grid metrics.

Conventions used throughout the package:

* ``Δ = g^{ab}∇_a∇_b`` (so Δ = Σ∂² on flat space and its spectrum is ≤ 0);
* ``R_{abcd}`` is stored so that ``g^{bd} R_{abcd} = Rc_{ac}``; a space form of
  curvature K has ``R_{abcd} = K(g_ac g_bd − g_ad g_bc)``;
* the Lichnerowicz curvature term is ``R_{ipjq} h^{pq}``, the contraction that
  returns ``+Rc`` on ``h = g``.

Scalar and fiber-valued functions are differentiated with the order-2 stencil
on the diagonal (``laplacian_scalar``); tensors and forms use nested covariant
derivatives (``rough_laplacian``), which keeps the discrete Ricci linearization
and the analytic operators on the same footing.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from flowlab.errors import CurvatureModelError, DimensionError
from flowlab.grid_core import (
    Grid,
    OneFormField,
    ScalarField,
    SymTensor2Field,
    ThreeFormField,
    VecOneFormField,
    VectorField,
    batched_det,
    batched_inv,
    difference,
    gradient_values,
    same_grid,
)

logger = logging.getLogger(__name__)


def symmetrize(values: np.ndarray) -> np.ndarray:
    return 0.5 * (values + np.swapaxes(values, -1, -2))


def levi_civita(n: int = 3) -> np.ndarray:
    eps = np.zeros((n,) * n)
    for perm in itertools.permutations(range(n)):
        inversions = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        eps[perm] = -1.0 if inversions % 2 else 1.0
    return eps


@dataclass(frozen=True)
class SyntheticCurvature:
    """Algebraic curvature injected on a flat differential structure.

    In ``space_form`` mode the curvature of every metric g is taken to be
    ``K(g_ac g_bd − g_ad g_bc)``; in ``from_metric`` mode the metric's own
    finite-difference curvature is used and this object only records n.
    """

    K: float = 0.0
    n: int = 3
    mode: str = "space_form"

    def __post_init__(self):
        if self.mode not in ("space_form", "from_metric"):
            raise CurvatureModelError(f"unknown synthetic curvature mode {self.mode!r}")

    @classmethod
    def space_form(cls, K: float, n: int) -> "SyntheticCurvature":
        return cls(float(K), int(n), "space_form")

    @classmethod
    def from_metric(cls, n: int) -> "SyntheticCurvature":
        return cls(0.0, int(n), "from_metric")

    @property
    def is_space_form(self) -> bool:
        return self.mode == "space_form"

    @property
    def lam(self) -> float:
        return self.K * (self.n - 1)

    def riemann(self, g: np.ndarray) -> np.ndarray:
        return self.K * (np.einsum("...ac,...bd->...abcd", g, g) - np.einsum("...ad,...bc->...abcd", g, g))

    def ricci(self, g: np.ndarray) -> np.ndarray:
        return self.lam * g

    def curvature_action(self, h: np.ndarray, g: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
        """R_{ipjq} h^{pq} = K(tr_g h · g − h)."""
        tr = np.einsum("...ab,...ab->...", g_inv, h)
        return self.K * (tr[..., None, None] * g - h)

    def reduced_action(self, h: np.ndarray, g: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
        """Pointwise part of the L0 quadratic form left after the Bochner identity."""
        return self.curvature_action(h, g, g_inv) - self.lam * h

    def check_dim(self, dim: int) -> None:
        if self.n != dim:
            raise CurvatureModelError(f"synthetic curvature is for n = {self.n}, grid has dim {dim}")


@dataclass(frozen=True, eq=False)
class MetricState:
    g: SymTensor2Field
    g_inv: SymTensor2Field
    dg: np.ndarray
    christoffel: np.ndarray
    ricci: SymTensor2Field
    scalar: ScalarField
    vol_density: ScalarField
    asymmetry: float = 0.0
    _riemann: np.ndarray | None = field(default=None, repr=False)

    @property
    def grid(self) -> Grid:
        return self.g.grid

    @property
    def dim(self) -> int:
        return self.g.grid.dim

    @cached_property
    def riemann(self) -> np.ndarray:
        """R_abcd; a surface keeps only its Gauss curvature and expands on first use."""
        if self._riemann is not None:
            return self._riemann
        gv = self.g.values
        K = 0.5 * self.scalar.values
        gg = np.einsum("...ac,...bd->...abcd", gv, gv)
        return K[..., None, None, None, None] * (gg - np.swapaxes(gg, -1, -2))


def _project_curvature_symmetries(R: np.ndarray) -> np.ndarray:
    R = 0.25 * (R - np.swapaxes(R, -4, -3) - np.swapaxes(R, -2, -1)
                + np.swapaxes(np.swapaxes(R, -4, -3), -2, -1))
    return 0.5 * (R + np.einsum("...cdab->...abcd", R))


def _surface_curvature(gv: np.ndarray, gamma: np.ndarray, dgamma: np.ndarray, det: np.ndarray):
    """Gauss curvature from the single projected component R_0101, and its asymmetry.

    ``low[a, s] = g_ar R^r_s01`` is the only independent slice of the raw tensor.
    """
    g0 = gamma[..., :, 0, :]  # Γ^r_0l
    g1 = gamma[..., :, 1, :]
    r_up = dgamma[..., 0, :, 1, :] - dgamma[..., 1, :, 0, :] + g0 @ g1 - g1 @ g0
    low = gv @ r_up
    r0101 = 0.5 * (low[..., 0, 1] - low[..., 1, 0])
    scale = max(1.0, float(np.max(np.abs(low))))
    off = np.stack([low[..., 0, 0], low[..., 1, 1], 0.5 * (low[..., 0, 1] + low[..., 1, 0])])
    return r0101 / det, float(np.max(np.abs(off))) / scale


def build_metric_state(g: SymTensor2Field) -> MetricState:
    """Inverse, Christoffel symbols, curvature and volume density of a grid metric."""
    g.require_spd("metric g")
    grid = g.grid
    gv = g.values
    g_inv = symmetrize(batched_inv(gv))
    det = batched_det(gv)

    dg = gradient_values(gv, grid)  # dg[..., c, a, b] = ∂_c g_ab
    lowered = 0.5 * (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
    gamma = np.einsum("...kl,...lij->...kij", g_inv, lowered)
    gamma = 0.5 * (gamma + np.swapaxes(gamma, -1, -2))
    dgamma = gradient_values(gamma, grid)  # dgamma[..., m, r, a, b] = ∂_m Γ^r_ab

    riemann = None
    if grid.dim == 2:
        gauss, asymmetry = _surface_curvature(gv, gamma, dgamma, det)
        ricci = gauss[..., None, None] * gv
        scalar = 2.0 * gauss
    else:
        t1 = np.einsum("...mrns->...rsmn", dgamma)
        quad = np.einsum("...rml,...lns->...rsmn", gamma, gamma)
        r_up = (t1 - np.swapaxes(t1, -1, -2)) + (quad - np.swapaxes(quad, -1, -2))
        raw = np.einsum("...ar,...rsmn->...asmn", gv, r_up)
        riemann = _project_curvature_symmetries(raw)
        scale = max(1.0, float(np.max(np.abs(raw))))
        asymmetry = float(np.max(np.abs(raw - riemann))) / scale
        ricci = symmetrize(np.einsum("...abcd,...bd->...ac", riemann, g_inv))
        scalar = np.einsum("...ab,...ab->...", g_inv, ricci)
    if asymmetry > 1e-8:
        logger.debug("projected curvature asymmetry %.3e", asymmetry)

    return MetricState(
        g=g,
        g_inv=SymTensor2Field(grid, g_inv),
        dg=dg,
        christoffel=gamma,
        ricci=SymTensor2Field(grid, ricci),
        scalar=ScalarField(grid, scalar),
        vol_density=ScalarField(grid, np.sqrt(det)),
        asymmetry=asymmetry,
        _riemann=riemann,
    )


def covariant_derivative(values: np.ndarray, m: MetricState, rank: int) -> np.ndarray:
    """∇T for a covariant tensor with ``rank`` base indices and any trailing fiber axes.

    The new derivative index is placed first among the component axes.
    """
    grid = m.grid
    d = grid.dim
    out = gradient_values(values, grid)
    for k in range(rank):
        moved = np.moveaxis(values, d + k, d)
        rest = moved.shape[d + 1:]
        flat = moved.reshape(grid.points + (d, -1))
        corr = np.einsum("...eca,...er->...car", m.christoffel, flat)
        corr = corr.reshape(grid.points + (d, d) + rest)
        out = out - np.moveaxis(corr, d + 1, d + 1 + k)
    return out


def _trace_first_pair(values: np.ndarray, m: MetricState) -> np.ndarray:
    pts = m.grid.points
    d = m.grid.dim
    rest = values.shape[len(pts) + 2:]
    flat = values.reshape(pts + (d, d, -1))
    return np.einsum("...cd,...cdr->...r", m.g_inv.values, flat).reshape(pts + rest)


def rough_laplacian(values: np.ndarray, m: MetricState, rank: int) -> np.ndarray:
    """g^{cd}∇_c∇_d T, by composing covariant derivatives."""
    first = covariant_derivative(values, m, rank)
    second = covariant_derivative(first, m, rank + 1)
    return _trace_first_pair(second, m)


def hessian_values(values: np.ndarray, m: MetricState) -> np.ndarray:
    """∂_a∂_b f − Γ^c_ab ∂_c f for scalar or fiber-valued functions."""
    grid = m.grid
    d = grid.dim
    first = gradient_values(values, grid)
    second = np.empty(grid.points + (d, d) + values.shape[d:])
    for a in range(d):
        second[tuple([slice(None)] * d + [a, a])] = difference(values, grid, a, 2)
        for b in range(a + 1, d):
            mixed = difference(np.take(first, b, axis=d), grid, a, 1)
            second[tuple([slice(None)] * d + [a, b])] = mixed
            second[tuple([slice(None)] * d + [b, a])] = mixed
    flat_first = first.reshape(grid.points + (d, -1))
    corr = np.einsum("...cab,...cr->...abr", m.christoffel, flat_first).reshape(second.shape)
    return second - corr


def laplacian_values(values: np.ndarray, m: MetricState) -> np.ndarray:
    return _trace_first_pair(hessian_values(values, m), m)


def hessian(phi: ScalarField, m: MetricState) -> SymTensor2Field:
    same_grid(phi, m.g)
    return SymTensor2Field(m.grid, symmetrize(hessian_values(phi.values, m)))


def laplacian_scalar(phi: ScalarField, m: MetricState) -> ScalarField:
    same_grid(phi, m.g)
    return ScalarField(m.grid, laplacian_values(phi.values, m))


def differential(phi: ScalarField) -> OneFormField:
    return OneFormField(phi.grid, gradient_values(phi.values, phi.grid))


def gradient(phi: ScalarField, m: MetricState) -> VectorField:
    same_grid(phi, m.g)
    return raise_index(differential(phi), m)


def raise_index(omega: OneFormField, m: MetricState) -> VectorField:
    return VectorField(m.grid, np.einsum("...ab,...b->...a", m.g_inv.values, omega.values))


def lower_index(X: VectorField, m: MetricState) -> OneFormField:
    return OneFormField(m.grid, np.einsum("...ab,...b->...a", m.g.values, X.values))


def norm_sq_oneform(omega: np.ndarray, m: MetricState) -> np.ndarray:
    """|ω|²_g for base 1-forms, optionally with trailing fiber axes summed."""
    flat = omega.reshape(m.grid.points + (m.dim, -1))
    return np.einsum("...ab,...ar,...br->...", m.g_inv.values, flat, flat)


def raise_pair(h: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    return np.einsum("...pa,...qb,...ab->...pq", g_inv, g_inv, h)


def curvature_action(h: np.ndarray, riemann: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    """R_{ipjq} h^{pq}."""
    return np.einsum("...ipjq,...pq->...ij", riemann, raise_pair(h, g_inv))


def lichnerowicz(h: SymTensor2Field, m: MetricState, synth: SyntheticCurvature | None = None) -> SymTensor2Field:
    """Δ_ℓ h = Δh + 2R_{ipjq}h^{pq} − R_i^k h_kj − R_j^k h_ik."""
    same_grid(h, m.g)
    gi = m.g_inv.values
    rough = rough_laplacian(h.values, m, 2)
    if synth is not None and synth.is_space_form:
        synth.check_dim(m.dim)
        rm_h = synth.curvature_action(h.values, m.g.values, gi)
        ricci = synth.ricci(m.g.values)
    else:
        rm_h = curvature_action(h.values, m.riemann, gi)
        ricci = m.ricci.values
    mixed = np.einsum("...ik,...kl,...lj->...ij", ricci, gi, h.values)
    out = rough + 2.0 * rm_h - mixed - np.swapaxes(mixed, -1, -2)
    return SymTensor2Field(m.grid, symmetrize(out))


def exterior_derivative_oneform(omega: np.ndarray, grid: Grid) -> np.ndarray:
    """(dω)_{ab} = ∂_a ω_b − ∂_b ω_a, fiber axes carried along."""
    grad = gradient_values(omega, grid)
    d = grid.dim
    return grad - np.swapaxes(grad, d, d + 1)


def codifferential_oneform(omega: np.ndarray, m: MetricState) -> np.ndarray:
    """δω = −g^{ab}∇_a ω_b."""
    return -_trace_first_pair(covariant_derivative(omega, m, 1), m)


def codifferential_twoform(F: np.ndarray, m: MetricState) -> np.ndarray:
    """(δF)_b = −g^{ac}∇_a F_{cb}."""
    return -_trace_first_pair(covariant_derivative(F, m, 2), m)


def hodge_laplacian_oneform(omega: VecOneFormField, m: MetricState) -> VecOneFormField:
    """Δ₁ω = −(dδ + δd)ω, fiber index by fiber index."""
    same_grid(omega, m.g)
    delta = codifferential_oneform(omega.values, m)
    d_delta = gradient_values(delta, m.grid)
    delta_d = codifferential_twoform(exterior_derivative_oneform(omega.values, m.grid), m)
    return VecOneFormField(m.grid, -(d_delta + delta_d))


def _require_3d(grid: Grid) -> None:
    if grid.dim != 3:
        raise DimensionError(f"3-form operations need dim 3, got {grid.dim}")


def hodge_laplacian_threeform(H: ThreeFormField, m: MetricState) -> ThreeFormField:
    """Δ_d(f dV_g) = (Δf) dV_g on a 3-manifold."""
    _require_3d(m.grid)
    same_grid(H, m.g)
    vol = m.vol_density.values
    density = H.values / vol
    return ThreeFormField(m.grid, rough_laplacian(density, m, 0) * vol)


def full_threeform(H: ThreeFormField) -> np.ndarray:
    return H.values[..., None, None, None] * levi_civita(3)


def hodge_laplacian_threeform_explicit(H: ThreeFormField, m: MetricState) -> ThreeFormField:
    """−dδH evaluated through the full antisymmetric tensor (dH = 0 on top forms)."""
    _require_3d(m.grid)
    same_grid(H, m.g)
    cov = covariant_derivative(full_threeform(H), m, 3)
    delta = -np.einsum("...ea,...eabc->...bc", m.g_inv.values, cov)
    grid = m.grid
    d_delta = (difference(delta[..., 1, 2], grid, 0)
               + difference(delta[..., 2, 0], grid, 1)
               + difference(delta[..., 0, 1], grid, 2))
    return ThreeFormField(grid, -d_delta)


def divergence_symtensor(h: SymTensor2Field, m: MetricState) -> OneFormField:
    """(δh)_b = −g^{ac}∇_a h_{cb}."""
    same_grid(h, m.g)
    return OneFormField(m.grid, -_trace_first_pair(covariant_derivative(h.values, m, 2), m))


def lie_derivative_metric(X: VectorField, m: MetricState) -> SymTensor2Field:
    """(𝓛_X g)_{ab} = ∇_a X_b + ∇_b X_a."""
    same_grid(X, m.g)
    cov = covariant_derivative(lower_index(X, m).values, m, 1)
    return SymTensor2Field(m.grid, cov + np.swapaxes(cov, -1, -2))


def lie_derivative_scalar(X: VectorField, values: np.ndarray) -> np.ndarray:
    """X^a ∂_a f for scalar or fiber-valued f."""
    grid = X.grid
    grad = gradient_values(values, grid).reshape(grid.points + (grid.dim, -1))
    return np.einsum("...a,...ar->...r", X.values, grad).reshape(values.shape)


def lie_derivative_oneform(X: VectorField, omega: np.ndarray) -> np.ndarray:
    """(𝓛_X ω)_a = X^b ∂_b ω_a + ω_b ∂_a X^b, fiber axes carried along."""
    grid = X.grid
    d = grid.dim
    grad = gradient_values(omega, grid).reshape(grid.points + (d, d, -1))
    transport = np.einsum("...b,...bar->...ar", X.values, grad)
    dX = gradient_values(X.values, grid)  # dX[..., a, b] = ∂_a X^b
    flat = omega.reshape(grid.points + (d, -1))
    twist = np.einsum("...ab,...br->...ar", dX, flat)
    return (transport + twist).reshape(omega.shape)


def deturck_field(m: MetricState, m0: MetricState) -> VectorField:
    """W^k = g^{ij}(Γ^k_ij − Γ₀^k_ij)."""
    same_grid(m.g, m0.g)
    diff = m.christoffel - m0.christoffel
    return VectorField(m.grid, np.einsum("...ij,...kij->...k", m.g_inv.values, diff))
