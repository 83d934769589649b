"""Uniform-grid fields and the second-order stencils built on them.

Arrays are stored with shape ``(nx, ny, nz)`` for scalars, ``(nx, ny, nz, 3)``
for vectors and ``(nx, ny, nz, 3, 3)`` for matrices, indexed ``(i, j, k)`` for
``(x, y, z)``. Matrix entry ``[..., i, j]`` of a vector gradient is
``∂_j v_i``.

First derivatives use an isotropic second-order stencil: the central
difference along one axis is smoothed (1, 4, 1)/6 across the other two, so the
leading error (h²/6)∂Δf has no preferred direction. The Hessian keeps the plain
three-point and four-point cross stencils.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

log = logging.getLogger(__name__)


MIN_POINTS_PER_AXIS: int = 8

_workers: int = 1


def set_workers(count: int) -> None:
    """Number of threads used to evaluate independent stencil components."""
    global _workers
    _workers = max(1, int(count))


def get_workers() -> int:
    return _workers


def _map(fn: Callable, items: Sequence) -> list:
    if _workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(_workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _as_triple(values, kind: type, name: str) -> tuple:
    try:
        triple = tuple(kind(v) for v in values)
    except TypeError:
        triple = (kind(values),) * 3
    if len(triple) != 3:
        raise ValueError(f"{name} must have 3 entries")
    return triple


@dataclass(frozen=True, slots=True)
class GridSpec:
    dims: tuple[int, int, int]
    origin: tuple[float, float, float]
    h: float

    def __post_init__(self) -> None:
        dims = _as_triple(self.dims, int, "dims")
        origin = _as_triple(self.origin, float, "origin")
        if any(d < MIN_POINTS_PER_AXIS for d in dims):
            raise ValueError(f"dims must be >= {MIN_POINTS_PER_AXIS} per axis")
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError("h must be > 0")
        if not all(np.isfinite(origin)):
            raise ValueError("origin must be finite")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def from_box(cls, lower: Sequence[float], upper: Sequence[float], h: float) -> GridSpec:
        lo = np.asarray(_as_triple(lower, float, "lower"))
        hi = np.asarray(_as_triple(upper, float, "upper"))
        if np.any(hi <= lo):
            raise ValueError("upper must exceed lower on every axis")
        dims = tuple(int(round(v)) + 1 for v in (hi - lo) / h)
        return cls(dims=dims, origin=tuple(lo), h=h)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def cell_volume(self) -> float:
        return self.h**3

    @property
    def upper(self) -> tuple[float, float, float]:
        return tuple(o + (d - 1) * self.h for o, d in zip(self.origin, self.dims))

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(o + self.h * np.arange(d) for o, d in zip(self.origin, self.dims))

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def refined(self) -> GridSpec:
        """Same box at half the spacing."""
        return GridSpec(
            dims=tuple(2 * d - 1 for d in self.dims), origin=self.origin, h=self.h / 2
        )


def _checked(spec: GridSpec, data, trailing: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    expected = spec.dims + trailing
    if arr.shape != expected:
        raise ValueError(f"{name} data must have shape {expected}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} data must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, slots=True, eq=False)
class ScalarField3:
    spec: GridSpec
    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _checked(self.spec, self.data, (), "ScalarField3"))

    @classmethod
    def from_function(cls, spec: GridSpec, fn: Callable) -> ScalarField3:
        x, y, z = spec.coords()
        return cls(spec, np.broadcast_to(fn(x, y, z), spec.dims))

    @classmethod
    def constant(cls, spec: GridSpec, value: float) -> ScalarField3:
        return cls(spec, np.full(spec.dims, float(value)))

    def flat(self) -> np.ndarray:
        """Values in x-fastest order."""
        return self.data.ravel(order="F")

    def with_data(self, data) -> ScalarField3:
        return ScalarField3(self.spec, data)

    def _other(self, other) -> np.ndarray | float:
        if isinstance(other, ScalarField3):
            if other.spec != self.spec:
                raise ValueError("fields live on different grids")
            return other.data
        return float(other)

    def __add__(self, other) -> ScalarField3:
        return self.with_data(self.data + self._other(other))

    __radd__ = __add__

    def __sub__(self, other) -> ScalarField3:
        return self.with_data(self.data - self._other(other))

    def __mul__(self, other) -> ScalarField3:
        return self.with_data(self.data * self._other(other))

    __rmul__ = __mul__

    def __neg__(self) -> ScalarField3:
        return self.with_data(-self.data)


@dataclass(frozen=True, slots=True, eq=False)
class VectorField3:
    spec: GridSpec
    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _checked(self.spec, self.data, (3,), "VectorField3"))

    @classmethod
    def from_function(cls, spec: GridSpec, fn: Callable) -> VectorField3:
        x, y, z = spec.coords()
        comps = [np.broadcast_to(c, spec.dims) for c in fn(x, y, z)]
        return cls(spec, np.stack(comps, axis=-1))

    def component(self, i: int) -> ScalarField3:
        return ScalarField3(self.spec, self.data[..., i])

    def dot(self, other: VectorField3 | np.ndarray) -> ScalarField3:
        o = other.data if isinstance(other, VectorField3) else np.asarray(other)
        return ScalarField3(self.spec, np.einsum("...i,...i->...", self.data, o))

    def norm(self) -> ScalarField3:
        return ScalarField3(self.spec, np.linalg.norm(self.data, axis=-1))


@dataclass(frozen=True, slots=True, eq=False)
class MatrixField3:
    spec: GridSpec
    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _checked(self.spec, self.data, (3, 3), "MatrixField3"))

    def trace(self) -> ScalarField3:
        return ScalarField3(self.spec, trace_array(self.data))

    def transpose(self) -> MatrixField3:
        return MatrixField3(self.spec, np.swapaxes(self.data, -1, -2))

    def matvec(self, v: VectorField3) -> VectorField3:
        return VectorField3(self.spec, np.einsum("...ij,...j->...i", self.data, v.data))

    def trace_cofactor(self) -> ScalarField3:
        """Tr(Cof(A)) = ½(Tr(A)² − Tr(A²))."""
        return ScalarField3(self.spec, trace_cofactor_array(self.data))


def trace_array(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2]


def trace_cofactor_array(m: np.ndarray) -> np.ndarray:
    tr = trace_array(m)
    tr_sq = np.einsum("...ij,...ji->...", m, m)
    return 0.5 * (tr * tr - tr_sq)


# Array-level stencils. The field wrappers below delegate here so that
# other modules can chain several operators without re-validating.


def central_partial_array(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Plain three-point central difference, one-sided second order on the faces."""
    return np.gradient(a, h, axis=axis, edge_order=2)


def _transverse_average(d: np.ndarray, axis: int) -> np.ndarray:
    for other in (0, 1, 2):
        if other == axis:
            continue
        m = np.moveaxis(d, other, 0)
        out = m.copy()
        out[1:-1] += (m[2:] - 2.0 * m[1:-1] + m[:-2]) / 6.0
        d = np.moveaxis(out, 0, other)
    return d


def partial_array(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Central difference along ``axis`` averaged (1, 4, 1)/6 over each transverse axis.

    Face rows of a transverse axis keep the plain difference. The leading error
    is (h²/6)∂_axis Δa, the same in every direction.
    """
    return _transverse_average(central_partial_array(a, h, axis), axis)


def second_partial_array(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - 2.0 * a[1:-1] + a[:-2]) / (h * h)
    out[0] = (2.0 * a[0] - 5.0 * a[1] + 4.0 * a[2] - a[3]) / (h * h)
    out[-1] = (2.0 * a[-1] - 5.0 * a[-2] + 4.0 * a[-3] - a[-4]) / (h * h)
    return np.moveaxis(out, 0, axis)


def gradient_array(a: np.ndarray, h: float) -> np.ndarray:
    return np.stack(_map(lambda ax: partial_array(a, h, ax), (0, 1, 2)), axis=-1)


def divergence_array(v: np.ndarray, h: float) -> np.ndarray:
    d = _map(lambda ax: partial_array(v[..., ax], h, ax), (0, 1, 2))
    return d[0] + d[1] + d[2]


def vector_gradient_array(v: np.ndarray, h: float) -> np.ndarray:
    rows = _map(lambda i: gradient_array(v[..., i], h), (0, 1, 2))
    return np.stack(rows, axis=-2)


def hessian_array(a: np.ndarray, h: float) -> np.ndarray:
    out = np.empty(a.shape + (3, 3))
    for ax, d2 in zip((0, 1, 2), _map(lambda ax: second_partial_array(a, h, ax), (0, 1, 2))):
        out[..., ax, ax] = d2
    first = _map(lambda ax: central_partial_array(a, h, ax), (0, 1, 2))
    for i, j in ((0, 1), (0, 2), (1, 2)):
        mixed = central_partial_array(first[i], h, j)
        out[..., i, j] = mixed
        out[..., j, i] = mixed
    return out


def gradient(f: ScalarField3) -> VectorField3:
    return VectorField3(f.spec, gradient_array(f.data, f.spec.h))


def hessian(f: ScalarField3) -> MatrixField3:
    return MatrixField3(f.spec, hessian_array(f.data, f.spec.h))


def divergence(v: VectorField3) -> ScalarField3:
    return ScalarField3(v.spec, divergence_array(v.data, v.spec.h))


def vector_gradient(v: VectorField3) -> MatrixField3:
    return MatrixField3(v.spec, vector_gradient_array(v.data, v.spec.h))


def interpolate(field: ScalarField3, points) -> np.ndarray:
    """Trilinear interpolation of ``field`` at ``points`` of shape (N, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    interp = RegularGridInterpolator(field.spec.axes(), field.data, method="linear")
    return interp(pts)
