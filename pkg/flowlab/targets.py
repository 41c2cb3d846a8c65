"""Harmonic-map targets: Euclidean ℝᵏ and the SPD space 𝓢_N.

𝓢_N carries the invariant metric ``tr(G⁻¹ X G⁻¹ Y)``. Its Levi-Civita
connection in the flat coordinates of Sym(N) is
``Γ_G(X, Y) = −½(X G⁻¹ Y + Y G⁻¹ X)``, which gives the closed tension field
``ΔG − g^{ab} ∂_aG G⁻¹ ∂_bG``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from flowlab.errors import FieldShapeError, SamplingError
from flowlab.geometry import MetricState, laplacian_values, symmetrize
from flowlab.grid_core import (
    FiberMetricField,
    Grid,
    SymTensor2Field,
    VecOneFormField,
    batched_inv,
    check_spd,
    gradient_values,
    same_grid,
)

logger = logging.getLogger(__name__)

TARGET_KINDS = ("euclidean", "spd")


@dataclass(frozen=True)
class TargetSpace:
    kind: str
    rank: int

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise FieldShapeError(f"unknown target kind {self.kind!r}")
        if self.rank < 1:
            raise FieldShapeError(f"target rank must be >= 1, got {self.rank}")

    @classmethod
    def euclidean(cls, k: int) -> "TargetSpace":
        return cls("euclidean", int(k))

    @classmethod
    def spd(cls, N: int) -> "TargetSpace":
        return cls("spd", int(N))

    @property
    def value_shape(self) -> tuple[int, ...]:
        return (self.rank,) if self.kind == "euclidean" else (self.rank, self.rank)

    @property
    def dimension(self) -> int:
        return self.rank if self.kind == "euclidean" else self.rank * (self.rank + 1) // 2

    def metric(self, point: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Target inner product of tangent vectors X, Y at ``point`` (grid-broadcast)."""
        if self.kind == "euclidean":
            return np.einsum("...i,...i->...", X, Y)
        inv = np.linalg.inv(point)
        return np.einsum("...ij,...jk,...kl,...li->...", inv, X, inv, Y)


@dataclass(frozen=True, eq=False)
class MapField:
    grid: Grid
    target: TargetSpace
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        expected = self.grid.points + self.target.value_shape
        if values.shape != expected:
            raise FieldShapeError(f"map into {self.target.kind}({self.target.rank}) expects {expected}, got {values.shape}")
        if self.target.kind == "spd":
            check_spd(values, self.grid.dim, "map value G")

    @classmethod
    def constant(cls, grid: Grid, target: TargetSpace, point) -> "MapField":
        point = np.asarray(point, dtype=float).reshape(target.value_shape)
        return cls(grid, target, np.broadcast_to(point, grid.points + target.value_shape).copy())

    @classmethod
    def from_fiber_metric(cls, G: FiberMetricField) -> "MapField":
        return cls(G.grid, TargetSpace.spd(G.fiber_rank), G.values)


@dataclass(frozen=True, eq=False)
class TangentSection:
    """A section of φ*T𝓝; the value type of the tension field."""

    grid: Grid
    target: TargetSpace
    values: np.ndarray


def _spd_quadratic(G: np.ndarray, dG: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    """g^{ab} ∂_aG G⁻¹ ∂_bG."""
    inv = batched_inv(G)
    return np.einsum("...ab,...aij,...jk,...bkl->...il", g_inv, dG, inv, dG)


def tension_field(phi: MapField, m: MetricState) -> TangentSection:
    same_grid(phi, m.g)
    lap = laplacian_values(phi.values, m)
    if phi.target.kind == "euclidean":
        return TangentSection(phi.grid, phi.target, lap)
    dG = gradient_values(phi.values, phi.grid)
    tau = lap - _spd_quadratic(phi.values, dG, m.g_inv.values)
    return TangentSection(phi.grid, phi.target, symmetrize(tau))


def pullback_form(phi: MapField) -> SymTensor2Field:
    """φ*h: γ_{λμ}∂_aφ^λ∂_bφ^μ, with the trace metric on 𝓢_N."""
    grid = phi.grid
    d = gradient_values(phi.values, grid)
    if phi.target.kind == "euclidean":
        out = np.einsum("...ai,...bi->...ab", d, d)
    else:
        inv = batched_inv(phi.values)
        out = np.einsum("...ij,...ajk,...kl,...bli->...ab", inv, d, inv, d)
    return SymTensor2Field(grid, symmetrize(out))


def bundle_pullback_form(G: FiberMetricField) -> SymTensor2Field:
    """½ G^{ik} G^{jl} ∂_aG_ij ∂_bG_kl, summed index by index."""
    inv = batched_inv(G.values)
    dG = gradient_values(G.values, G.grid)
    out = 0.5 * np.einsum("...ik,...jl,...aij,...bkl->...ab", inv, inv, dG, dG)
    return SymTensor2Field(G.grid, symmetrize(out))


def fit_coupling_constant(G: FiberMetricField) -> float:
    """Least-squares c with 2c·pullback_form(G) = bundle_pullback_form(G)."""
    pull = pullback_form(MapField.from_fiber_metric(G)).values.ravel()
    bundle = bundle_pullback_form(G).values.ravel()
    denom = 2.0 * float(np.dot(pull, pull))
    if denom == 0.0:
        raise SamplingError("constant fiber metric carries no coupling information")
    c = float(np.dot(pull, bundle)) / denom
    logger.debug("fitted coupling constant c = %.15g", c)
    return c


def sym_basis(N: int) -> list[np.ndarray]:
    """Coordinate basis of Sym(N): e_ii, and e_ij + e_ji for i < j."""
    basis = []
    for i in range(N):
        for j in range(i, N):
            E = np.zeros((N, N))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def sym_coordinates(X: np.ndarray) -> np.ndarray:
    N = X.shape[-1]
    iu = np.triu_indices(N)
    return X[..., iu[0], iu[1]]


def spd_christoffel(G: np.ndarray) -> np.ndarray:
    """Γ^s_pq of 𝓢_N in the coordinates of Sym(N), broadcast over leading axes.

    Built from the exact derivative of the metric matrix
    M_pq = tr(P_p P_q), P_p = G⁻¹E_p, so ∂_r M_pq = −tr(P_r P_p P_q) − tr(P_p P_r P_q).
    """
    E = np.array(sym_basis(G.shape[-1]))
    P = np.einsum("...ij,pjk->...pik", np.linalg.inv(G), E)
    M = np.einsum("...pij,...qji->...pq", P, P)
    T = np.einsum("...rij,...pjk,...qki->...rpq", P, P, P)
    dM = -(T + np.swapaxes(T, -3, -2))  # dM[r, p, q] = ∂_r M_pq
    lowered = 0.5 * (np.swapaxes(dM, -3, -2) + np.einsum("...qrp->...rpq", dM) - dM)
    return np.einsum("...sr,...rpq->...spq", np.linalg.inv(M), lowered)


def spd_christoffel_numeric(G: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Γ^s_pq of 𝓢_N at one SPD point, from centered differences of the metric matrix."""
    N = G.shape[-1]
    basis = sym_basis(N)
    D = len(basis)

    def metric_matrix(P):
        inv = np.linalg.inv(P)
        return np.array([[np.trace(inv @ Ep @ inv @ Eq) for Eq in basis] for Ep in basis])

    dM = np.empty((D, D, D))  # dM[r] = ∂_r M
    for r, Er in enumerate(basis):
        dM[r] = (metric_matrix(G + eps * Er) - metric_matrix(G - eps * Er)) / (2.0 * eps)
    Minv = np.linalg.inv(metric_matrix(G))
    lowered = 0.5 * (np.einsum("prq->rpq", dM) + np.einsum("qrp->rpq", dM) - dM)
    return np.einsum("sr,rpq->spq", Minv, lowered)


def tension_field_christoffel_sum(phi: MapField, m: MetricState, eps: float | None = None) -> TangentSection:
    """τ^s = Δx^s + g^{ab} Γ^s_pq ∂_a x^p ∂_b x^q in Sym(N) coordinates.

    ``eps=None`` uses ``spd_christoffel``; a step size switches to the
    point-by-point finite-difference symbols.
    """
    if phi.target.kind != "spd":
        return tension_field(phi, m)
    N = phi.target.rank
    grid = phi.grid
    x = sym_coordinates(phi.values)
    dx = gradient_values(x, grid)
    lap = laplacian_values(x, m)
    gi = m.g_inv.values
    if eps is None:
        gamma = spd_christoffel(phi.values)
        out = lap + np.einsum("...ab,...spq,...ap,...bq->...s", gi, gamma, dx, dx)
    else:
        out = np.empty_like(lap)
        for idx in np.ndindex(*grid.points):
            gamma = spd_christoffel_numeric(phi.values[idx], eps)
            out[idx] = lap[idx] + np.einsum("ab,spq,ap,bq->s", gi[idx], gamma, dx[idx], dx[idx])
    iu = np.triu_indices(N)
    tau = np.zeros(grid.points + (N, N))
    tau[..., iu[0], iu[1]] = out
    tau[..., iu[1], iu[0]] = out
    return TangentSection(grid, phi.target, tau)


def connection_quadratic(G: np.ndarray, F: np.ndarray, g_inv: np.ndarray) -> np.ndarray:
    """g^{ac} g^{bd} G_ik G_jl F^k_ab F^l_cd as a product of fiber matrices."""
    GF = np.einsum("...ik,...abk->...abi", G, F)
    return np.einsum("...ac,...bd,...abi,...cdj->...ij", g_inv, g_inv, GF, GF)


def check_modified_hmf_identity(
    G: FiberMetricField,
    A: VecOneFormField,
    m: MetricState,
    trace_free: bool = False,
) -> float:
    """Sup residual between the fiber-metric equation and τG − ½(dA quadratic).

    The reference tension is the Christoffel sum of 𝓢_N in Sym(N)
    coordinates, not the closed form the flow uses.
    """
    from flowlab.flows import fiber_metric_rhs
    from flowlab.geometry import exterior_derivative_oneform

    same_grid(G, A, m.g)
    direct = fiber_metric_rhs(G.values, A.values, m)
    tau = tension_field_christoffel_sum(MapField.from_fiber_metric(G), m).values
    F = exterior_derivative_oneform(A.values, m.grid)
    reference = tau - 0.5 * connection_quadratic(G.values, F, m.g_inv.values)
    diff = direct - reference
    if trace_free:
        inv = np.linalg.inv(G.values)
        tr = np.einsum("...ij,...ji->...", inv, diff)
        diff = diff - (tr / G.fiber_rank)[..., None, None] * G.values
    return float(np.max(np.abs(diff)))
