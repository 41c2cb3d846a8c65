"""Linearized operators of the flow systems and their spectra.

Perturbation fields are encoded as DOF vectors in coordinates that are
orthonormal for ``l2_inner`` point by point, so an operator that is
self-adjoint for the L² pairing is a symmetric matrix in these coordinates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.sparse.linalg import LinearOperator as ScipyOperator

from flowlab.errors import (
    ConfigError,
    CurvatureModelError,
    DimensionError,
    NotAFixedPointError,
)
from flowlab.flows import (
    FlowParams,
    FlowState,
    Increment,
    evaluate_rhs,
    increment_sup,
)
from flowlab.geometry import (
    MetricState,
    SyntheticCurvature,
    build_metric_state,
    covariant_derivative,
    divergence_symtensor,
    hessian_values,
    hodge_laplacian_oneform,
    hodge_laplacian_threeform,
    laplacian_values,
    lichnerowicz,
    rough_laplacian,
    codifferential_twoform,
    exterior_derivative_oneform,
)
from flowlab.grid_core import SymTensor2Field, ThreeFormField, VecOneFormField
from flowlab.targets import sym_basis

logger = logging.getLogger(__name__)

DENSE_LIMIT = 20_000
KERNEL_RTOL = 1e-8
EPSILONS = (1e-3, 1e-4)
FIXED_POINT_TOL = 1e-10

BLOCKS = ("L0_metric", "L1_map", "L1_oneform", "L2_fiber", "L1_threeform")


# --------------------------------------------------------------------------- DOF coordinates

def _sym_extract(values: np.ndarray) -> np.ndarray:
    n = values.shape[-1]
    iu = np.triu_indices(n)
    return values[..., iu[0], iu[1]]


def _sym_expand(raw: np.ndarray, n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    out = np.zeros(raw.shape[:-1] + (n, n))
    out[..., iu[0], iu[1]] = raw
    out[..., iu[1], iu[0]] = raw
    return out


def _inverse_sqrt(gram: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, V = np.linalg.eigh(gram)
    C = np.einsum("...pk,...k,...qk->...pq", V, 1.0 / np.sqrt(w), V)
    Cinv = np.einsum("...pk,...k,...qk->...pq", V, np.sqrt(w), V)
    return C, Cinv


@dataclass(eq=False)
class DofCodec:
    """Maps perturbation field values to orthonormal DOF vectors and back."""

    points: tuple[int, ...]
    extract: Callable[[np.ndarray], np.ndarray]
    expand: Callable[[np.ndarray], np.ndarray]
    C: np.ndarray
    Cinv: np.ndarray
    Q: np.ndarray | None = None

    @property
    def local_size(self) -> int:
        return self.Q.shape[-1] if self.Q is not None else self.C.shape[-1]

    @property
    def size(self) -> int:
        return int(np.prod(self.points)) * self.local_size

    def to_values(self, x: np.ndarray) -> np.ndarray:
        y = np.asarray(x, dtype=float).reshape(self.points + (self.local_size,))
        if self.Q is not None:
            y = np.einsum("...pr,...r->...p", self.Q, y)
        return self.expand(np.einsum("...pq,...q->...p", self.C, y))

    def from_values(self, values: np.ndarray) -> np.ndarray:
        x = np.einsum("...pq,...q->...p", self.Cinv, self.extract(values))
        if self.Q is not None:
            x = np.einsum("...pr,...p->...r", self.Q, x)
        return x.ravel()


def _weight(m: MetricState) -> np.ndarray:
    return m.vol_density.values * m.grid.cell_volume


def sym_codec(m: MetricState) -> DofCodec:
    n = m.dim
    E = np.array(sym_basis(n))
    gi = m.g_inv.values
    gram = np.einsum("...ac,...bd,pab,qcd->...pq", gi, gi, E, E) * _weight(m)[..., None, None]
    C, Cinv = _inverse_sqrt(gram)
    return DofCodec(m.grid.points, _sym_extract, lambda raw: _sym_expand(raw, n), C, Cinv)


def map_codec(m: MetricState, k: int | None) -> DofCodec:
    """Euclidean map perturbations; ``k=None`` is a bare scalar field."""
    width = 1 if k is None else k
    gram = np.eye(width) * _weight(m)[..., None, None]
    C, Cinv = _inverse_sqrt(gram)
    if k is None:
        return DofCodec(m.grid.points, lambda v: v[..., None], lambda raw: raw[..., 0], C, Cinv)
    return DofCodec(m.grid.points, lambda v: v, lambda raw: raw, C, Cinv)


def oneform_codec(m: MetricState, N: int) -> DofCodec:
    n = m.dim
    gram = np.einsum("...ab,ij->...aibj", m.g_inv.values, np.eye(N)).reshape(m.grid.points + (n * N, n * N))
    C, Cinv = _inverse_sqrt(gram * _weight(m)[..., None, None])
    pts = m.grid.points
    return DofCodec(pts, lambda v: v.reshape(pts + (n * N,)), lambda raw: raw.reshape(pts + (n, N)), C, Cinv)


def fiber_codec(m: MetricState, N: int, trace_free: bool = False, G0: np.ndarray | None = None) -> DofCodec:
    E = np.array(sym_basis(N))
    local = np.einsum("pab,qab->pq", E, E)
    gram = np.broadcast_to(local, m.grid.points + local.shape) * _weight(m)[..., None, None]
    C, Cinv = _inverse_sqrt(gram)
    Q = None
    if trace_free:
        if G0 is None:
            G0 = np.broadcast_to(np.eye(N), m.grid.points + (N, N))
        inv = np.linalg.inv(G0)
        a = 2.0 * _sym_extract(inv)
        diag = np.cumsum([0] + [N - i for i in range(N - 1)])
        a[..., diag] *= 0.5
        nu = np.einsum("...pq,...q->...p", C, a)
        Q = np.empty(m.grid.points + (len(E), len(E) - 1))
        for idx in np.ndindex(*m.grid.points):
            Q[idx] = scipy.linalg.null_space(nu[idx][None, :])
    return DofCodec(m.grid.points, _sym_extract, lambda raw: _sym_expand(raw, N), C, Cinv, Q)


def threeform_codec(m: MetricState) -> DofCodec:
    gram = (_weight(m) / m.vol_density.values ** 2)[..., None, None]
    C, Cinv = _inverse_sqrt(gram)
    return DofCodec(m.grid.points, lambda v: v[..., None], lambda raw: raw[..., 0], C, Cinv)


# --------------------------------------------------------------------------- operators

@dataclass(eq=False)
class LinearOperator:
    system: str
    block: str
    codec: DofCodec
    field_action: Callable[[np.ndarray], np.ndarray]
    lam: float
    K: float | None
    n: int
    N: int | None = None
    dense_limit: int = DENSE_LIMIT
    _matrix: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.codec.size

    def action(self, x: np.ndarray) -> np.ndarray:
        return self.codec.from_values(self.field_action(self.codec.to_values(x)))

    def apply_field(self, values: np.ndarray) -> np.ndarray:
        return self.field_action(values)

    @property
    def assembled(self) -> np.ndarray | None:
        """Dense matrix, built column by column on first use; None above the dense limit."""
        if self._matrix is None and self.size <= self.dense_limit:
            logger.debug("assembling %s (%d DOF)", self.block, self.size)
            M = np.empty((self.size, self.size))
            unit = np.zeros(self.size)
            for j in range(self.size):
                unit[j] = 1.0
                M[:, j] = self.action(unit)
                unit[j] = 0.0
            self._matrix = M
        return self._matrix

    def asymmetry(self) -> float:
        M = self.assembled
        if M is None:
            raise ConfigError("spectrum.dense_limit", f"{self.size} DOF exceeds the dense limit {self.dense_limit}")
        scale = max(float(np.max(np.abs(M))), 1e-300)
        return float(np.max(np.abs(M - M.T))) / scale

    def as_scipy(self) -> ScipyOperator:
        return ScipyOperator((self.size, self.size), matvec=self.action, rmatvec=self.action, dtype=float)

    def rayleigh_quotient(self, values: np.ndarray) -> float:
        x = self.codec.from_values(values)
        return float(x @ self.action(x)) / float(x @ x)


def _resolve_lambda(synth: SyntheticCurvature | None, lam: float | None) -> float:
    if synth is not None and synth.is_space_form:
        if lam is not None and abs(lam - synth.lam) > 1e-12:
            raise CurvatureModelError(f"lambda = {lam} is inconsistent with K(n-1) = {synth.lam}")
        return synth.lam
    return 0.0 if lam is None else float(lam)


def metric_block_action(h: np.ndarray, m: MetricState, synth: SyntheticCurvature | None, lam: float) -> np.ndarray:
    """L0 h: Δh + reduced_action(h) + 2λh under space-form curvature, Δ_ℓh + 2λh otherwise."""
    if synth is not None and synth.is_space_form:
        synth.check_dim(m.dim)
        reduced = synth.reduced_action(h, m.g.values, m.g_inv.values)
        return rough_laplacian(h, m, 2) + reduced + 2.0 * lam * h
    return lichnerowicz(SymTensor2Field(m.grid, h), m).values + 2.0 * lam * h


def assemble_operator(
    block: str,
    m: MetricState,
    synth: SyntheticCurvature | None = None,
    lam: float | None = None,
    system: str = "hrf",
    *,
    target_rank: int | None = 1,
    fiber_rank: int = 1,
    trace_free: bool = False,
    G0: np.ndarray | None = None,
    dense_limit: int = DENSE_LIMIT,
) -> LinearOperator:
    """Build one block of the linearized operator at a fixed point with base metric m."""
    if block not in BLOCKS:
        raise ConfigError("spectrum.block", f"unknown block {block!r}; choose from {BLOCKS}")
    lam = _resolve_lambda(synth, lam)
    K = synth.K if synth is not None and synth.is_space_form else None
    N = None

    if block == "L0_metric":
        codec = sym_codec(m)
        action = lambda h: metric_block_action(h, m, synth, lam)  # noqa: E731
    elif block == "L1_map":
        if system == "warped":
            codec = map_codec(m, None)
            action = lambda psi: laplacian_values(psi, m) + 2.0 * lam * psi  # noqa: E731
        else:
            codec = map_codec(m, target_rank)
            N = target_rank
            action = lambda psi: laplacian_values(psi, m)  # noqa: E731
    elif block == "L1_oneform":
        N = fiber_rank
        codec = oneform_codec(m, fiber_rank)
        action = lambda B: (hodge_laplacian_oneform(VecOneFormField(m.grid, B), m).values  # noqa: E731
                            + lam * B)
    elif block == "L2_fiber":
        N = fiber_rank
        codec = fiber_codec(m, fiber_rank, trace_free, G0)
        action = lambda F: laplacian_values(F, m)  # noqa: E731
    else:
        if m.dim != 3:
            raise DimensionError(f"L1_threeform needs a 3D grid, got dim {m.dim}")
        codec = threeform_codec(m)
        action = lambda eta: (hodge_laplacian_threeform(ThreeFormField(m.grid, eta), m).values  # noqa: E731
                              + 2.0 * lam * eta)

    op = LinearOperator(system, block, codec, action, lam, K, m.dim, N, dense_limit)
    logger.info("assembled %s/%s: %d DOF, lambda = %.4g", system, block, op.size, lam)
    return op


# --------------------------------------------------------------------------- spectra

@dataclass
class SpectrumReport:
    system: str
    block: str
    lam: float
    K: float | None
    n: int
    N: int | None
    eigenvalues: list[float]
    kernel_dim: int
    verdict: str
    tol: float
    gap: float
    norm: float
    method: str
    converged: bool = True
    residual: float = 0.0

    @property
    def top(self) -> float:
        return self.eigenvalues[0]

    @property
    def stable(self) -> bool:
        return self.verdict != "unstable"

    def to_text(self) -> str:
        fields = [
            ("block", self.block),
            ("system", self.system),
            ("lambda", repr(self.lam)),
            ("K", "none" if self.K is None else repr(self.K)),
            ("n", str(self.n)),
            ("N", "none" if self.N is None else str(self.N)),
            ("eigenvalues", ", ".join(f"{v:.15g}" for v in self.eigenvalues)),
            ("kernel_dim", str(self.kernel_dim)),
            ("gap", f"{self.gap:.15g}"),
            ("verdict", self.verdict),
            ("tol", f"{self.tol:.3e}"),
            ("norm", f"{self.norm:.15g}"),
            ("method", self.method),
            ("converged", str(self.converged).lower()),
            ("residual", f"{self.residual:.3e}"),
        ]
        return "\n".join(f"{k} = {v}" for k, v in fields) + "\n"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"index": range(len(self.eigenvalues)), "eigenvalue": self.eigenvalues})


def _verdict(top: float, kernel_dim: int, tol: float) -> str:
    if top > tol:
        return "unstable"
    if kernel_dim > 0:
        return f"weak({kernel_dim})"
    return "strict"


def spectrum(op: LinearOperator, k: int = 6, seed: int = 0) -> SpectrumReport:
    """k algebraically largest eigenvalues, kernel dimension and stability verdict."""
    k = max(1, min(k, op.size))
    converged = True
    residual = 0.0
    if op.size <= op.dense_limit:
        M = op.assembled
        M = 0.5 * (M + M.T)
        all_values = scipy.linalg.eigh(M, eigvals_only=True)[::-1]
        norm = float(np.max(np.abs(all_values)))
        top = all_values[:k]
        method = "dense"
        pool = all_values
    else:
        A = op.as_scipy()
        v0 = np.random.default_rng(seed).standard_normal(op.size)
        norm = float(abs(eigsh(A, k=1, which="LM", v0=v0, return_eigenvectors=False)[0]))
        ncv = min(op.size - 1, max(2 * k + 1, 24))
        try:
            values, vectors = eigsh(A, k=k, which="LA", v0=v0, ncv=ncv)
        except ArpackNoConvergence as exc:
            logger.warning("eigsh did not converge for %s: %d of %d eigenvalues", op.block,
                           len(exc.eigenvalues), k)
            values, vectors = exc.eigenvalues, exc.eigenvectors
            converged = False
        order = np.argsort(values)[::-1]
        values, vectors = values[order], vectors[:, order]
        if values.size:
            residual = max(float(np.linalg.norm(op.action(vectors[:, j]) - values[j] * vectors[:, j]))
                           for j in range(values.size))
        top = values
        method = "eigsh"
        pool = values
    tol = KERNEL_RTOL * norm
    in_kernel = np.abs(pool) <= tol
    kernel_dim = int(np.count_nonzero(in_kernel))
    rest = np.abs(pool[~in_kernel])
    gap = float(np.min(rest)) if rest.size else float("nan")
    verdict = _verdict(float(top[0]), kernel_dim, tol) if len(top) else "unstable"
    report = SpectrumReport(op.system, op.block, op.lam, op.K, op.n, op.N,
                            [float(v) for v in top], kernel_dim, verdict, tol, gap, norm,
                            method, converged, residual)
    logger.info("%s spectrum: top %.6g, kernel %d, verdict %s", op.block, report.top, kernel_dim, verdict)
    return report


def quadratic_form_bound(op: LinearOperator, samples: int = 500, seed: int = 0) -> float:
    """Largest Rayleigh quotient ⟨Lh, h⟩/‖h‖² over random perturbations of the L0 block."""
    if op.block != "L0_metric" or op.K is None:
        raise CurvatureModelError("the quadratic-form bound is stated for L0 under space-form curvature")
    if op.K >= 0:
        raise CurvatureModelError(f"the quadratic-form bound needs K < 0, got K = {op.K}")
    rng = np.random.default_rng(seed)
    best = -np.inf
    for _ in range(samples):
        x = rng.standard_normal(op.size)
        best = max(best, float(x @ op.action(x)) / float(x @ x))
    return best


# --------------------------------------------------------------------------- linearizations

def _difference_quotient(rhs, base: FlowState, direction: Increment, p: FlowParams, eps: float) -> Increment:
    plus = rhs(base.perturbed(direction, eps), p)
    minus = rhs(base.perturbed(direction, -eps), p)
    return {k: (plus[k] - minus[k]) / (2.0 * eps) for k in plus}


def check_fixed_point(rhs, base: FlowState, p: FlowParams, tol: float = FIXED_POINT_TOL) -> float:
    residual = increment_sup(rhs(base, p))
    if residual > tol:
        raise NotAFixedPointError(residual)
    return residual


def linearize_numeric(
    rhs: Callable[[FlowState, FlowParams], Increment] | None,
    base: FlowState,
    direction: Increment,
    p: FlowParams,
    eps: tuple[float, float] = EPSILONS,
) -> Increment:
    """Centered-difference linearization with one Richardson step over the two ε."""
    rhs = rhs or evaluate_rhs
    check_fixed_point(rhs, base, p)
    big, small = eps
    coarse = _difference_quotient(rhs, base, direction, p, big)
    fine = _difference_quotient(rhs, base, direction, p, small)
    factor = (big / small) ** 2 - 1.0
    return {k: fine[k] + (fine[k] - coarse[k]) / factor for k in fine}


def _ungauged_metric_terms(h: np.ndarray, m: MetricState) -> np.ndarray:
    """∇_i(δh)_j + ∇_j(δh)_i + ∇_i∇_j tr h."""
    delta = divergence_symtensor(SymTensor2Field(m.grid, h), m).values
    nabla_delta = covariant_derivative(delta, m, 1)
    tr = np.einsum("...ab,...ab->...", m.g_inv.values, h)
    hess_tr = covariant_derivative(covariant_derivative(tr, m, 0), m, 1)
    return nabla_delta + np.swapaxes(nabla_delta, -1, -2) + hess_tr


def analytic_linearization(
    base: FlowState,
    direction: Increment,
    p: FlowParams,
    gauged: bool | None = None,
) -> Increment:
    """Closed-form linearizations evaluated with the discrete building blocks of the RHS."""
    gauged = (p.gauge == "deturck") if gauged is None else gauged
    m = build_metric_state(base.g)
    lam = p.lam
    synth = p.synth
    out: Increment = {}

    if "g" in direction:
        h = direction["g"]
        metric = metric_block_action(h, m, synth, lam) + (-p.s - 2.0 * lam) * h
        if not gauged:
            metric = metric + _ungauged_metric_terms(h, m)
        if base.system == "warped" and p.pre_gauge and "phi" in direction:
            metric = metric + 2.0 * p.m * hessian_values(direction["phi"], m)
        out["g"] = metric
    elif base.system == "warped" and p.pre_gauge and "phi" in direction:
        out["g"] = 2.0 * p.m * hessian_values(direction["phi"], m)

    if base.system == "hrf" and "phi" in direction:
        out["phi"] = laplacian_values(direction["phi"], m)
    elif base.system == "warped" and "phi" in direction:
        psi = direction["phi"]
        if p.normalized:
            out["phi"] = laplacian_values(psi, m) - p.s * psi
        else:
            out["phi"] = laplacian_values(psi, m) + 2.0 * base.mu * np.exp(-2.0 * base.phi.values) * psi
    elif base.system == "invariant":
        if "A" in direction:
            B = direction["A"]
            if gauged:
                out["A"] = hodge_laplacian_oneform(VecOneFormField(m.grid, B), m).values - 0.5 * p.s * B
            else:
                out["A"] = -codifferential_twoform(exterior_derivative_oneform(B, m.grid), m) - 0.5 * p.s * B
        if "G" in direction:
            out["G"] = laplacian_values(direction["G"], m)
    elif base.system == "connection" and "H" in direction:
        eta = direction["H"]
        out["H"] = hodge_laplacian_threeform(ThreeFormField(m.grid, eta), m).values - p.s * eta

    for key, value in base.components().items():
        out.setdefault(key, np.zeros_like(value))
    return out


@dataclass
class LinearizationCheck:
    residuals: dict[float, float]
    richardson_residual: float
    order: float
    scale: float

    @property
    def exact(self) -> bool:
        return self.order == float("inf")


def linearization_orders(
    rhs: Callable[[FlowState, FlowParams], Increment] | None,
    base: FlowState,
    direction: Increment,
    p: FlowParams,
    exact: Increment,
    eps: tuple[float, float] = EPSILONS,
    floor: float = 1e-11,
) -> LinearizationCheck:
    """Residuals of the plain centered differences at both ε against ``exact``, and the observed order.

    When both residuals sit at round-off level (the RHS is quadratic in the
    direction) the order is reported as infinite.
    """
    rhs = rhs or evaluate_rhs
    check_fixed_point(rhs, base, p)
    scale = max(increment_sup(exact), 1.0)
    residuals = {}
    for e in eps:
        dq = _difference_quotient(rhs, base, direction, p, e)
        residuals[e] = increment_sup({k: dq[k] - exact[k] for k in dq}) / scale
    rich = linearize_numeric(rhs, base, direction, p, eps)
    rich_res = increment_sup({k: rich[k] - exact[k] for k in rich}) / scale
    big, small = eps
    if residuals[small] <= floor:
        order = float("inf")
    else:
        order = float(np.log(residuals[big] / residuals[small]) / np.log(big / small))
    logger.debug("linearization residuals %s, order %.3f", residuals, order)
    return LinearizationCheck(residuals, rich_res, order, scale)


# --------------------------------------------------------------------------- algebraic identity

def check_einstein_sectional(sec: np.ndarray, tol: float = 1e-10) -> float:
    sec = np.asarray(sec, dtype=float)
    scale = max(1.0, float(np.max(np.abs(sec))))
    if sec.ndim != 2 or sec.shape[0] != sec.shape[1]:
        raise CurvatureModelError(f"sectional data must be a square matrix, got shape {sec.shape}")
    if np.max(np.abs(sec - sec.T)) > tol * scale:
        raise CurvatureModelError("sectional curvature matrix is not symmetric")
    if np.max(np.abs(np.diag(sec))) > tol * scale:
        raise CurvatureModelError("sectional curvature matrix must have a zero diagonal")
    rows = sec.sum(axis=1)
    if np.ptp(rows) > tol * scale * sec.shape[0]:
        raise CurvatureModelError(f"row sums differ (spread {np.ptp(rows):.3e}): not Einstein")
    return float(rows.mean())


def algebraic_identity_check(eigenvalues, sec) -> float:
    """|Σ sec_ij λ_iλ_j + λΣλ_i² − ½Σ sec_ij(λ_i + λ_j)²| for Einstein-consistent sec."""
    lam_i = np.asarray(eigenvalues, dtype=float)
    sec = np.asarray(sec, dtype=float)
    if sec.shape != (lam_i.size, lam_i.size):
        raise CurvatureModelError(f"{lam_i.size} eigenvalues but sectional matrix {sec.shape}")
    einstein = check_einstein_sectional(sec)
    lhs = float(lam_i @ sec @ lam_i) + einstein * float(lam_i @ lam_i)
    rhs = 0.0
    n = lam_i.size
    for i in range(n):
        for j in range(n):
            rhs += sec[i, j] * (lam_i[i] + lam_i[j]) ** 2
    return abs(lhs - 0.5 * rhs)


def einstein_sectional_sample(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Random symmetric zero-diagonal matrix with equal row sums."""
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    constraint = np.zeros((n - 1, len(pairs)))
    for col, (i, j) in enumerate(pairs):
        for row in range(1, n):
            constraint[row - 1, col] = ((i == row) or (j == row)) - ((i == 0) or (j == 0))
    basis = scipy.linalg.null_space(constraint)
    coeffs = basis @ rng.standard_normal(basis.shape[1]) * scale
    sec = np.zeros((n, n))
    for value, (i, j) in zip(coeffs, pairs):
        sec[i, j] = sec[j, i] = value
    return sec
