"""Analytic shapes with exact geometry, used as ground truth."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeTouchesBoundary
from .fields import GridSpec, ScalarField3
from .geometry import DIST_TOL, LevelSet, distance_defect

log = logging.getLogger(__name__)


DEFAULT_KERNEL_RATIO: float = 3.0

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True, slots=True)
class SurfaceSample:
    point: np.ndarray
    n: np.ndarray
    H: float
    G: float


def fibonacci_params(count: int) -> tuple[np.ndarray, np.ndarray]:
    """Quasi-uniform (u, θ) with u ∈ (−1, 1) the cosine of the polar angle."""
    if count < 1:
        raise ValueError("count must be >= 1")
    k = np.arange(count, dtype=np.float64)
    u = 1.0 - 2.0 * (k + 0.5) / count
    theta = (_GOLDEN_ANGLE * k) % (2.0 * math.pi)
    return u, theta


class AnalyticShape:
    """Base class. Subclasses define the level function and exact geometry."""

    is_distance: bool = False

    def phi(self, x, y, z) -> np.ndarray:
        raise NotImplementedError

    def exact_normal(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def exact_H(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def exact_G(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def surface_points(self, count: int) -> np.ndarray:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Axis-aligned bounding box, or None for unbounded shapes."""
        raise NotImplementedError

    @property
    def exact_area(self) -> float | None:
        return None

    @property
    def exact_total_G(self) -> float | None:
        return None


@dataclass(frozen=True, slots=True)
class Sphere(AnalyticShape):
    radius: float = 0.5
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    is_distance = True

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("radius must be > 0")

    def _c(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)

    def phi(self, x, y, z):
        cx, cy, cz = self.center
        return np.sqrt((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2) - self.radius

    def exact_normal(self, p):
        d = np.atleast_2d(p) - self._c()
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def exact_H(self, p):
        return np.full(len(np.atleast_2d(p)), 2.0 / self.radius)

    def exact_G(self, p):
        return np.full(len(np.atleast_2d(p)), 1.0 / self.radius**2)

    def surface_points(self, count):
        u, theta = fibonacci_params(count)
        s = np.sqrt(1.0 - u * u)
        dirs = np.stack([s * np.cos(theta), s * np.sin(theta), u], axis=-1)
        return self._c() + self.radius * dirs

    def bounds(self):
        c = self._c()
        return c - self.radius, c + self.radius

    @property
    def exact_area(self):
        return 4.0 * math.pi * self.radius**2

    @property
    def exact_total_G(self):
        return 4.0 * math.pi


@dataclass(frozen=True, slots=True)
class Ellipsoid(AnalyticShape):
    """Scaled algebraic level function s·(Σ(xᵢ/aᵢ)² − 1).

    The scale s = (abc)^{1/3}/2 keeps |∇φ| of order one on the surface, so the
    smeared-delta support stays a few cells wide; φ is not a distance function.
    """

    semi_axes: tuple[float, float, float] = (0.5, 0.5, 0.3)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if len(self.semi_axes) != 3 or min(self.semi_axes) <= 0:
            raise ValueError("semi_axes must be 3 positive values")

    @property
    def scale(self) -> float:
        a, b, c = self.semi_axes
        return (a * b * c) ** (1.0 / 3.0) / 2.0

    def _a(self) -> np.ndarray:
        return np.asarray(self.semi_axes, dtype=np.float64)

    def phi(self, x, y, z):
        a, b, c = self.semi_axes
        cx, cy, cz = self.center
        q = ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2
        return self.scale * (q - 1.0)

    def _local(self, p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d = np.atleast_2d(p) - np.asarray(self.center)
        a2 = self._a() ** 2
        grad = 2.0 * d / a2
        hess = np.broadcast_to(np.diag(2.0 / a2), (len(d), 3, 3))
        return d, grad, hess

    def exact_normal(self, p):
        _, g, _ = self._local(p)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def exact_H(self, p):
        # H = (|∇F|² tr Hs − ∇Fᵀ Hs ∇F) / |∇F|³
        _, g, hs = self._local(p)
        gg = np.einsum("ni,ni->n", g, g)
        tr = np.trace(hs, axis1=-2, axis2=-1)
        ghg = np.einsum("ni,nij,nj->n", g, hs, g)
        return (gg * tr - ghg) / gg**1.5

    def exact_G(self, p):
        # G = ∇Fᵀ adj(Hs) ∇F / |∇F|⁴ ; Hs is diagonal here
        _, g, hs = self._local(p)
        d = np.stack([hs[:, 0, 0], hs[:, 1, 1], hs[:, 2, 2]], axis=-1)
        adj = np.stack([d[:, 1] * d[:, 2], d[:, 0] * d[:, 2], d[:, 0] * d[:, 1]], axis=-1)
        gg = np.einsum("ni,ni->n", g, g)
        return np.einsum("ni,ni->n", adj, g * g) / gg**2

    def surface_points(self, count):
        u, theta = fibonacci_params(count)
        s = np.sqrt(1.0 - u * u)
        dirs = np.stack([s * np.cos(theta), s * np.sin(theta), u], axis=-1)
        return np.asarray(self.center) + dirs * self._a()

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        return c - self._a(), c + self._a()

    @property
    def exact_total_G(self):
        return 4.0 * math.pi


@dataclass(frozen=True, slots=True)
class Torus(AnalyticShape):
    """Torus around the z axis, signed distance √((ρ−a)² + z²) − b."""

    major: float = 0.5
    minor: float = 0.2
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    is_distance = True

    def __post_init__(self) -> None:
        if not 0 < self.minor < self.major:
            raise ValueError("torus needs 0 < minor < major")

    def phi(self, x, y, z):
        cx, cy, cz = self.center
        rho = np.sqrt((x - cx) ** 2 + (y - cy) ** 2)
        return np.sqrt((rho - self.major) ** 2 + (z - cz) ** 2) - self.minor

    def _angles(self, p) -> tuple[np.ndarray, np.ndarray]:
        d = np.atleast_2d(p) - np.asarray(self.center)
        rho = np.hypot(d[:, 0], d[:, 1])
        theta = np.arctan2(d[:, 1], d[:, 0])
        psi = np.arctan2(d[:, 2], rho - self.major)
        return theta, psi

    def exact_normal(self, p):
        theta, psi = self._angles(p)
        return np.stack(
            [np.cos(psi) * np.cos(theta), np.cos(psi) * np.sin(theta), np.sin(psi)], axis=-1
        )

    def _principal(self, p) -> tuple[np.ndarray, np.ndarray]:
        _, psi = self._angles(p)
        k1 = np.full_like(psi, 1.0 / self.minor)
        k2 = np.cos(psi) / (self.major + self.minor * np.cos(psi))
        return k1, k2

    def exact_H(self, p):
        k1, k2 = self._principal(p)
        return k1 + k2

    def exact_G(self, p):
        k1, k2 = self._principal(p)
        return k1 * k2

    def surface_points(self, count):
        u, theta = fibonacci_params(count)
        # a single sample sits on the outer equator
        psi = -math.pi * u
        rho = self.major + self.minor * np.cos(psi)
        pts = np.stack([rho * np.cos(theta), rho * np.sin(theta), self.minor * np.sin(psi)], axis=-1)
        return np.asarray(self.center) + pts

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        r = self.major + self.minor
        ext = np.array([r, r, self.minor])
        return c - ext, c + ext

    @property
    def exact_area(self):
        return 4.0 * math.pi**2 * self.major * self.minor

    @property
    def exact_total_G(self):
        return 0.0


@dataclass(frozen=True, slots=True)
class Plane(AnalyticShape):
    """Half-space below the plane through ``point`` with outward ``normal``."""

    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    point: tuple[float, float, float] = (0.0, 0.0, 0.0)

    is_distance = True

    def _n(self) -> np.ndarray:
        n = np.asarray(self.normal, dtype=np.float64)
        return n / np.linalg.norm(n)

    def phi(self, x, y, z):
        n = self._n()
        p = self.point
        return n[0] * (x - p[0]) + n[1] * (y - p[1]) + n[2] * (z - p[2])

    def exact_normal(self, p):
        return np.broadcast_to(self._n(), np.atleast_2d(p).shape).copy()

    def exact_H(self, p):
        return np.zeros(len(np.atleast_2d(p)))

    def exact_G(self, p):
        return np.zeros(len(np.atleast_2d(p)))

    def surface_points(self, count):
        n = self._n()
        e1 = np.cross(n, [1.0, 0.0, 0.0])
        if np.linalg.norm(e1) < 1e-6:
            e1 = np.cross(n, [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        u, theta = fibonacci_params(count)
        r = 0.5 * np.sqrt((1.0 - u) / 2.0)
        return (
            np.asarray(self.point)
            + (r * np.cos(theta))[:, None] * e1
            + (r * np.sin(theta))[:, None] * e2
        )

    def bounds(self):
        return None


Multiplier = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

MULTIPLIERS: dict[str, Multiplier] = {
    "linear": lambda x, y, z: 2.0 + x,
    "exp": lambda x, y, z: np.exp(x),
}


@dataclass(frozen=True, slots=True)
class Perturbed(AnalyticShape):
    """Same zero set as ``base``, level function multiplied by a positive field."""

    base: AnalyticShape
    multiplier: Multiplier
    label: str = "custom"

    is_distance = False

    @classmethod
    def named(cls, base: AnalyticShape, name: str) -> Perturbed:
        try:
            return cls(base, MULTIPLIERS[name], name)
        except KeyError:
            raise ValueError(f"unknown multiplier: {name}") from None

    def phi(self, x, y, z):
        m = self.multiplier(x, y, z)
        if np.any(np.asarray(m) <= 0):
            raise ValueError("multiplier must be positive over the box")
        return self.base.phi(x, y, z) * m

    def exact_normal(self, p):
        return self.base.exact_normal(p)

    def exact_H(self, p):
        return self.base.exact_H(p)

    def exact_G(self, p):
        return self.base.exact_G(p)

    def surface_points(self, count):
        return self.base.surface_points(count)

    def bounds(self):
        return self.base.bounds()

    @property
    def exact_area(self):
        return self.base.exact_area

    @property
    def exact_total_G(self):
        return self.base.exact_total_G


def sample(
    shape: AnalyticShape,
    spec: GridSpec,
    epsilon: float | None = None,
    band_width: float | None = None,
) -> LevelSet:
    """Sample ``shape`` on the grid; ``epsilon`` defaults to 3h."""
    h = spec.h
    eps = DEFAULT_KERNEL_RATIO * h if epsilon is None else float(epsilon)
    box = shape.bounds()
    if box is not None:
        lo, hi = box
        margin = min(
            float(np.min(lo - np.asarray(spec.origin))),
            float(np.min(np.asarray(spec.upper) - hi)),
        )
        if margin < eps + 2.0 * h - 1e-12:
            raise ShapeTouchesBoundary(
                f"shape margin {margin:.4g} is below eps + 2h = {eps + 2.0 * h:.4g}"
            )
    phi = ScalarField3.from_function(spec, shape.phi)
    bw = eps + 2.0 * h if band_width is None else band_width
    ls = LevelSet(phi, is_distance=False, band_width=bw)
    log.debug("已在 %s 网格上采样 %s, h=%g", spec.dims, type(shape).__name__, h)
    if not shape.is_distance:
        return ls
    defect = distance_defect(ls)
    if defect > DIST_TOL:
        log.warning("采样的距离函数未通过校验 (%.3g > %g)，已按一般水平集处理", defect, DIST_TOL)
        return ls
    return LevelSet(phi, is_distance=True, band_width=bw)


def surface_samples(shape: AnalyticShape, count: int) -> list[SurfaceSample]:
    pts = shape.surface_points(count)
    n = shape.exact_normal(pts)
    H = shape.exact_H(pts)
    G = shape.exact_G(pts)
    return [SurfaceSample(pts[i], n[i], float(H[i]), float(G[i])) for i in range(len(pts))]
