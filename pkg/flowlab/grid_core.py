"""Periodic structured grids, the field containers that live on them, and the
fourth-order difference / quadrature / norm primitives every other module uses.

Array layout: ``values`` always has the grid axes first (``grid.points``),
followed by the component axes of the field kind.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import ClassVar, Protocol

import numpy as np

from flowlab.errors import (
    DimensionError,
    FieldShapeError,
    GridError,
    GridMismatchError,
    NonSPDError,
)

logger = logging.getLogger(__name__)

MIN_POINTS = 8
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class Grid:
    points: tuple[int, ...]
    periods: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(int(p) for p in self.points))
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if len(self.points) not in (1, 2, 3):
            raise GridError(f"grid dimension must be 1, 2 or 3, got {len(self.points)}")
        if len(self.periods) != len(self.points):
            raise GridError(f"{len(self.points)} axes but {len(self.periods)} periods")
        if min(self.points) < MIN_POINTS:
            raise GridError(f"every axis needs at least {MIN_POINTS} points, got {self.points}")
        if min(self.periods) <= 0.0:
            raise GridError(f"periods must be positive, got {self.periods}")

    @classmethod
    def uniform(cls, dim: int, points: int, period: float = 2.0 * np.pi) -> "Grid":
        return cls((points,) * dim, (period,) * dim)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.periods, self.points))

    @property
    def h_min(self) -> float:
        return min(self.spacing)

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def coordinate_volume(self) -> float:
        return float(np.prod(self.periods))

    def coordinates(self) -> list[np.ndarray]:
        axes = [np.arange(N) * h for N, h in zip(self.points, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(tuple(p * factor for p in self.points), self.periods)

    def check_axis(self, axis: int) -> None:
        if not 0 <= axis < self.dim:
            raise GridError(f"axis {axis} out of range for a {self.dim}D grid")


def difference(values: np.ndarray, grid: Grid, axis: int, order: int = 1) -> np.ndarray:
    """Fourth-order central difference along a grid axis with periodic wraparound.

    Terms are grouped so a constant input gives exactly zero.
    """
    grid.check_axis(axis)
    h = grid.spacing[axis]
    fp1 = np.roll(values, -1, axis=axis)
    fm1 = np.roll(values, 1, axis=axis)
    fp2 = np.roll(values, -2, axis=axis)
    fm2 = np.roll(values, 2, axis=axis)
    if order == 1:
        return ((fm2 - fp2) + 8.0 * (fp1 - fm1)) / (12.0 * h)
    if order == 2:
        return (16.0 * (fp1 + fm1) - (fp2 + fm2) - 30.0 * values) / (12.0 * h * h)
    raise GridError(f"derivative order must be 1 or 2, got {order}")


def gradient_values(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Stack of first differences; the new derivative axis sits right after the grid axes."""
    return np.stack([difference(values, grid, a, 1) for a in range(grid.dim)], axis=grid.dim)


def derivative_symbol(k: float, spacing: float, order: int = 1) -> float:
    """Real symbol of the stencils on the mode e^{ikx}.

    order 1: D e^{ikx} = i·s·e^{ikx}, returns s.
    order 2: D² e^{ikx} = s·e^{ikx}, returns s.
    """
    kh = k * spacing
    if order == 1:
        return (8.0 * np.sin(kh) - np.sin(2.0 * kh)) / (6.0 * spacing)
    if order == 2:
        return (32.0 * np.cos(kh) - 2.0 * np.cos(2.0 * kh) - 30.0) / (12.0 * spacing**2)
    raise GridError(f"derivative order must be 1 or 2, got {order}")


def batched_det(values: np.ndarray) -> np.ndarray:
    """Determinant over the last two axes; closed forms up to 3×3."""
    n = values.shape[-1]
    if n == 1:
        return values[..., 0, 0].copy()
    if n == 2:
        return values[..., 0, 0] * values[..., 1, 1] - values[..., 0, 1] * values[..., 1, 0]
    if n == 3:
        return np.sum(values[..., 0, :] * np.cross(values[..., 1, :], values[..., 2, :]), axis=-1)
    return np.linalg.det(values)


def batched_inv(values: np.ndarray) -> np.ndarray:
    """Inverse over the last two axes, by the adjugate up to 3×3."""
    n = values.shape[-1]
    if n == 1:
        return 1.0 / values
    if n == 2:
        a, b = values[..., 0, 0], values[..., 0, 1]
        c, d = values[..., 1, 0], values[..., 1, 1]
        adj = np.stack([np.stack([d, -b], axis=-1), np.stack([-c, a], axis=-1)], axis=-2)
        return adj / (a * d - b * c)[..., None, None]
    if n == 3:
        r0, r1, r2 = values[..., 0, :], values[..., 1, :], values[..., 2, :]
        adj = np.stack([np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], axis=-1)
        return adj / np.sum(r0 * adj[..., :, 0], axis=-1)[..., None, None]
    return np.linalg.inv(values)


def _leading_minors_positive(values: np.ndarray) -> bool:
    ok = values[..., 0, 0] > 0.0
    for k in range(2, values.shape[-1] + 1):
        ok &= batched_det(values[..., :k, :k]) > 0.0
    return bool(np.all(ok))


def check_spd(values: np.ndarray, n_grid_axes: int, what: str) -> None:
    """Raise NonSPDError at the point with the smallest eigenvalue.

    Up to 3×3 the pass is decided by Sylvester's criterion; eigenvalues are
    only computed to locate a failure.
    """
    finite = np.all(np.isfinite(values), axis=(-1, -2))
    if not np.all(finite):
        index = np.unravel_index(np.argmin(finite), finite.shape)
        raise NonSPDError(what, index, np.nan)
    if values.shape[-1] <= 3 and _leading_minors_positive(values):
        return
    lowest = np.linalg.eigvalsh(values)[..., 0]
    if np.min(lowest) <= 0.0:
        flat = int(np.argmin(lowest))
        index = np.unravel_index(flat, lowest.shape)[:n_grid_axes]
        raise NonSPDError(what, index, lowest.flat[flat])


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    kind: ClassVar[str] = "field"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        expected = self.grid.points + self.component_shape(values)
        if values.shape != expected:
            raise FieldShapeError(f"{self.kind} expects shape {expected}, got {values.shape}")
        self._validate()

    def component_shape(self, values: np.ndarray) -> tuple[int, ...]:
        return ()

    def _validate(self) -> None:
        pass

    def with_values(self, values: np.ndarray):
        return replace(self, values=values)

    def _check_peer(self, other: "Field") -> None:
        if type(other) is not type(self):
            raise FieldShapeError(f"cannot combine {self.kind} with {other.kind}")
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other):
        self._check_peer(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        self._check_peer(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


class ScalarField(Field):
    kind = "scalar"

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, fn(*grid.coordinates()))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.points, float(value)))


class SymTensor2Field(Field):
    kind = "symtensor2"

    def component_shape(self, values):
        return (self.grid.dim, self.grid.dim)

    def _validate(self):
        v = self.values
        scale = max(1.0, float(np.max(np.abs(v)))) if v.size else 1.0
        if v.size and np.max(np.abs(v - np.swapaxes(v, -1, -2))) > SYMMETRY_TOL * scale:
            raise FieldShapeError("symmetric 2-tensor field is not symmetric")

    @classmethod
    def identity(cls, grid: Grid, scale: float = 1.0) -> "SymTensor2Field":
        eye = np.broadcast_to(np.eye(grid.dim) * scale, grid.points + (grid.dim, grid.dim))
        return cls(grid, eye.copy())

    def trace_with(self, g_inv: np.ndarray) -> np.ndarray:
        return np.einsum("...ab,...ab->...", g_inv, self.values)

    def require_spd(self, what: str = "metric") -> None:
        check_spd(self.values, self.grid.dim, what)


class OneFormField(Field):
    kind = "oneform"

    def component_shape(self, values):
        return (self.grid.dim,)


class VectorField(Field):
    kind = "vector"

    def component_shape(self, values):
        return (self.grid.dim,)


class VecOneFormField(Field):
    """ℝᴺ-valued 1-form; ``values[..., α, i] = A^i_α``."""

    kind = "vec_oneform"

    def component_shape(self, values):
        rank = values.shape[-1] if values.ndim == self.grid.dim + 2 else 0
        return (self.grid.dim, max(rank, 1))

    @property
    def fiber_rank(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def zeros(cls, grid: Grid, fiber_rank: int) -> "VecOneFormField":
        return cls(grid, np.zeros(grid.points + (grid.dim, fiber_rank)))


class FiberMetricField(Field):
    """Symmetric N×N fiber matrices; positive-definiteness is checked where a metric is required."""

    kind = "fiber_metric"

    def component_shape(self, values):
        rank = values.shape[-1] if values.ndim == self.grid.dim + 2 else 0
        return (max(rank, 1), max(rank, 1))

    def _validate(self):
        v = self.values
        scale = max(1.0, float(np.max(np.abs(v))))
        if np.max(np.abs(v - np.swapaxes(v, -1, -2))) > SYMMETRY_TOL * scale:
            raise FieldShapeError("fiber metric field is not symmetric")

    @property
    def fiber_rank(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def constant(cls, grid: Grid, matrix) -> "FiberMetricField":
        matrix = np.asarray(matrix, dtype=float)
        return cls(grid, np.broadcast_to(matrix, grid.points + matrix.shape).copy())

    def require_spd(self, what: str = "fiber metric G") -> None:
        check_spd(self.values, self.grid.dim, what)


class ThreeFormField(Field):
    """Top-degree form on a 3D grid, stored as its single component H_123."""

    kind = "threeform"

    def _validate(self):
        if self.grid.dim != 3:
            raise DimensionError(f"3-forms need a 3D grid, got dim {self.grid.dim}")


FIELD_KINDS: dict[str, type[Field]] = {
    cls.kind: cls
    for cls in (ScalarField, SymTensor2Field, OneFormField, VectorField,
                VecOneFormField, FiberMetricField, ThreeFormField)
}


def same_grid(*fields) -> Grid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grid mismatch: {grid} vs {f.grid}")
    return grid


def partial_derivative(f: Field, axis: int, order: int = 1) -> Field:
    """∂_axis f (order 1) or ∂²_axis f (order 2), component-wise."""
    return f.with_values(difference(f.values, f.grid, axis, order))


def integrate(f: ScalarField, volume_density: ScalarField | None = None) -> float:
    if volume_density is None:
        weighted = f.values
    else:
        same_grid(f, volume_density)
        weighted = f.values * volume_density.values
    return float(np.sum(weighted) * f.grid.cell_volume)


def sup_norm(f: Field) -> float:
    return float(np.max(np.abs(f.values))) if f.values.size else 0.0


class MetricLike(Protocol):
    g: SymTensor2Field
    g_inv: SymTensor2Field
    vol_density: ScalarField


def pointwise_inner(f: Field, h: Field, metric: MetricLike) -> np.ndarray:
    if type(f) is not type(h):
        raise FieldShapeError(f"cannot pair {f.kind} with {h.kind}")
    same_grid(f, h, metric.g)
    gi = metric.g_inv.values
    a, b = f.values, h.values
    if isinstance(f, ScalarField):
        return a * b
    if isinstance(f, SymTensor2Field):
        return np.einsum("...ac,...bd,...ab,...cd->...", gi, gi, a, b)
    if isinstance(f, OneFormField):
        return np.einsum("...ab,...a,...b->...", gi, a, b)
    if isinstance(f, VectorField):
        return np.einsum("...ab,...a,...b->...", metric.g.values, a, b)
    if isinstance(f, VecOneFormField):
        return np.einsum("...ab,...ai,...bi->...", gi, a, b)
    if isinstance(f, FiberMetricField):
        return np.einsum("...ij,...ij->...", a, b)
    if isinstance(f, ThreeFormField):
        return a * b / metric.vol_density.values**2
    raise FieldShapeError(f"no inner product for {f.kind}")


def l2_inner(f: Field, h: Field, metric: MetricLike) -> float:
    """∫ ⟨f, h⟩_g dV_g with every base index contracted through g / g⁻¹."""
    pointwise = pointwise_inner(f, h, metric)
    return float(np.sum(pointwise * metric.vol_density.values) * f.grid.cell_volume)


def save_field(path: str | Path, f: Field) -> None:
    """Write a field in the text format described in docs/FORMATS.md."""
    header = {
        "kind": f.kind,
        "dim": f.grid.dim,
        "points": list(f.grid.points),
        "periods": list(f.grid.periods),
        "components": list(f.values.shape[f.grid.dim:]),
    }
    rows = f.values.reshape(f.grid.size, -1)
    np.savetxt(path, rows, fmt="%.17g", header=json.dumps(header), comments="# ")


def load_field(path: str | Path) -> Field:
    with open(path, "r") as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise FieldShapeError(f"{path}: missing field header")
    header = json.loads(first.lstrip("#").strip())
    grid = Grid(tuple(header["points"]), tuple(header["periods"]))
    rows = np.loadtxt(path, ndmin=2)
    shape = grid.points + tuple(header["components"])
    if rows.size != int(np.prod(shape)):
        raise FieldShapeError(f"{path}: {rows.size} values, header promises {shape}")
    cls = FIELD_KINDS.get(header["kind"])
    if cls is None:
        raise FieldShapeError(f"{path}: unknown field kind {header['kind']!r}")
    return cls(grid, rows.reshape(shape))
