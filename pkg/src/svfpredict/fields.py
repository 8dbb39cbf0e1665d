"""Grids, images, label maps and vector fields, plus their basic algebra.

Vector fields are stored channel-first, shape ``(D, *dims)``, in voxel units:
component ``i`` is the displacement along array axis ``i``. Grid spacing only
enters physical metrics (surface distance, volumes).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class GridMismatchError(ValueError):
    """Two operands live on different grids."""


def _frozen(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class Grid:
    dims: tuple[int, ...]
    spacing: tuple[float, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must be 2-D or 3-D, got {len(dims)} axes")
        if any(d < 2 for d in dims):
            raise ValueError(f"every grid extent must be >= 2, got {dims}")
        spacing = (1.0,) * len(dims) if self.spacing is None else tuple(float(s) for s in self.spacing)
        if len(spacing) != len(dims):
            raise ValueError("spacing length does not match grid dimensionality")
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise ValueError(f"spacing must be strictly positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def identity(self) -> np.ndarray:
        """Voxel-index coordinates, shape ``(D, *dims)`` (read-only, cached)."""
        return _identity(self.dims)


@functools.lru_cache(maxsize=32)
def _identity(dims: tuple[int, ...]) -> np.ndarray:
    return _frozen(np.indices(dims, dtype=np.float64))


def _check_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


def _resolve_grid(grid: Grid | None, dims: tuple[int, ...]) -> Grid:
    if grid is None:
        return Grid(dims)
    if tuple(grid.dims) != tuple(dims):
        raise GridMismatchError(f"values of shape {dims} do not match grid {grid.dims}")
    return grid


@dataclass(frozen=True, eq=False)
class ScalarImage:
    values: np.ndarray
    grid: Grid | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "grid", _resolve_grid(self.grid, values.shape))
        _check_finite(values, "image")
        object.__setattr__(self, "values", _frozen(values))


@dataclass(frozen=True, eq=False)
class VectorField:
    values: np.ndarray
    grid: Grid | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim < 3 or values.shape[0] != values.ndim - 1:
            raise ValueError(f"vector field must have shape (D, *dims), got {values.shape}")
        object.__setattr__(self, "grid", _resolve_grid(self.grid, values.shape[1:]))
        _check_finite(values, "vector field")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(np.zeros((grid.ndim,) + grid.dims), grid)

    def max_norm(self) -> float:
        """Largest per-voxel Euclidean vector length."""
        return float(np.sqrt(np.max(np.sum(self.values**2, axis=0))))


@dataclass(frozen=True, eq=False)
class LabelMap:
    values: np.ndarray
    grid: Grid | None = None
    structure_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values)
        if not np.issubdtype(values.dtype, np.integer):
            raise ValueError("label map must hold integers")
        values = values.astype(np.int32, copy=False)
        if values.size and values.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "grid", _resolve_grid(self.grid, values.shape))
        names = {int(k): str(v) for k, v in self.structure_names.items()}
        missing = sorted(set(np.unique(values).tolist()) - {0} - set(names))
        if missing:
            raise ValueError(f"labels {missing} have no structure name")
        object.__setattr__(self, "structure_names", names)
        object.__setattr__(self, "values", _frozen(values))

    def labels(self) -> list[int]:
        """Non-background labels present in the map, ascending."""
        return [int(x) for x in np.unique(self.values) if x != 0]


@dataclass(frozen=True, eq=False)
class DeformationField:
    """phi = Id + u; only the displacement ``u`` is stored."""

    displacement: VectorField

    @property
    def grid(self) -> Grid:
        return self.displacement.grid

    @classmethod
    def identity(cls, grid: Grid) -> "DeformationField":
        return cls(VectorField.zeros(grid))

    def coordinates(self) -> np.ndarray:
        """Absolute sample coordinates ``x + u(x)``."""
        return self.grid.identity() + self.displacement.values


def check_same_grid(*objs):
    dims = {tuple(o.grid.dims) for o in objs}
    if len(dims) != 1:
        raise GridMismatchError(f"operands live on different grids: {sorted(dims)}")


# --- finite differences -----------------------------------------------------

def diff_axis(f: np.ndarray, axis: int) -> np.ndarray:
    """Central differences inside, one-sided at both ends, along ``axis``."""
    return np.gradient(f, axis=axis, edge_order=1)


def diff_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`diff_axis`."""
    g = np.moveaxis(g, axis, 0)
    n = g.shape[0]
    out = np.zeros_like(g)
    if n == 2:
        s = g[0] + g[1]
        out[0] = -s
        out[1] = s
        return np.moveaxis(out, 0, axis)
    # interior rows: d[i] = (f[i+1] - f[i-1]) / 2
    out[2:] += 0.5 * g[1:-1]
    out[:-2] -= 0.5 * g[1:-1]
    # d[0] = f[1] - f[0], d[n-1] = f[n-1] - f[n-2]
    out[0] -= g[0]
    out[1] += g[0]
    out[-1] += g[-1]
    out[-2] -= g[-1]
    return np.moveaxis(out, 0, axis)


def spatial_gradient(u: VectorField) -> np.ndarray:
    """Per-voxel Jacobian, shape ``(*dims, D, D)`` with entry ``[..., i, j] = du_i/dx_j``."""
    D = u.grid.ndim
    J = np.empty(u.grid.dims + (D, D))
    for i in range(D):
        for j in range(D):
            J[..., i, j] = diff_axis(u.values[i], j)
    return J


# --- composition --------------------------------------------------------------

def _compose_arrays(u_outer: np.ndarray, u_inner: np.ndarray, identity: np.ndarray) -> np.ndarray:
    return kernels.sample_linear(u_outer, identity + u_inner) + u_inner


def _compose_backward(u_outer, u_inner, identity, grad):
    """Gradients of ``_compose_arrays`` w.r.t. ``(u_outer, u_inner)``."""
    g_outer, g_coords = kernels.sample_linear_backward(u_outer, identity + u_inner, grad)
    return g_outer, g_coords + grad


def compose(phi_outer: DeformationField, phi_inner: DeformationField) -> DeformationField:
    """phi_outer o phi_inner, i.e. ``u(x) = u_outer(x + u_inner(x)) + u_inner(x)``."""
    check_same_grid(phi_outer, phi_inner)
    grid = phi_inner.grid
    u = _compose_arrays(phi_outer.displacement.values, phi_inner.displacement.values, grid.identity())
    return DeformationField(VectorField(u, grid))


def jacobian_determinant(phi: DeformationField) -> ScalarImage:
    D = phi.grid.ndim
    J = spatial_gradient(phi.displacement) + np.eye(D)
    return ScalarImage(np.linalg.det(J), phi.grid)
