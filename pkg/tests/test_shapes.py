from __future__ import annotations

import math

import numpy as np
import pytest

from geoflow.errors import ShapeTouchesBoundary
from geoflow.fields import GridSpec
from geoflow.shapes import Ellipsoid, Perturbed, Plane, Sphere, Torus, fibonacci_params, sample, surface_samples


def test_fibonacci_params_range() -> None:
    u, theta = fibonacci_params(50)
    assert u.shape == (50,)
    assert np.all(np.abs(u) < 1.0)
    assert np.all((theta >= 0) & (theta < 2 * math.pi))
    with pytest.raises(ValueError):
        fibonacci_params(0)


def test_sphere_exact_geometry() -> None:
    s = Sphere(0.5, (0.1, 0.0, 0.0))
    pts = s.surface_points(20)
    assert np.allclose(s.phi(pts[:, 0], pts[:, 1], pts[:, 2]), 0.0, atol=1e-12)
    assert np.allclose(s.exact_H(pts), 4.0)
    assert np.allclose(s.exact_G(pts), 4.0)
    assert s.exact_area == pytest.approx(math.pi)
    assert s.exact_total_G == pytest.approx(4 * math.pi)


def test_ellipsoid_pole_curvatures() -> None:
    e = Ellipsoid((0.5, 0.5, 0.3))
    pole = np.array([[0.0, 0.0, 0.3]])
    assert e.exact_H(pole)[0] == pytest.approx(2.4)
    assert e.exact_G(pole)[0] == pytest.approx(1.44)
    assert e.phi(0.0, 0.0, 0.0) < 0
    assert e.exact_area is None


def test_ellipsoid_with_equal_axes_matches_sphere() -> None:
    e = Ellipsoid((0.4, 0.4, 0.4))
    pts = e.surface_points(10)
    assert np.allclose(e.exact_H(pts), 5.0)
    assert np.allclose(e.exact_G(pts), 6.25)


def test_torus_outer_equator() -> None:
    t = Torus(0.5, 0.2)
    (p,) = t.surface_points(1)
    assert p == pytest.approx([0.7, 0.0, 0.0])
    assert t.exact_H(p)[0] == pytest.approx(5.0 + 1.0 / 0.7)
    assert t.exact_G(p)[0] == pytest.approx(5.0 / 0.7)
    assert t.exact_area == pytest.approx(4 * math.pi**2 * 0.1)
    assert t.exact_total_G == 0.0


def test_torus_rejects_bad_radii() -> None:
    with pytest.raises(ValueError):
        Torus(0.2, 0.5)


def test_plane_is_unbounded() -> None:
    p = Plane()
    assert p.bounds() is None
    pts = p.surface_points(8)
    assert np.allclose(pts[:, 2], 0.0)
    assert np.allclose(p.exact_H(pts), 0.0)


def test_perturbed_keeps_zero_set() -> None:
    base = Sphere(0.5)
    shape = Perturbed.named(base, "exp")
    pts = base.surface_points(16)
    assert np.allclose(shape.phi(pts[:, 0], pts[:, 1], pts[:, 2]), 0.0, atol=1e-12)
    assert shape.phi(0.0, 0.0, 0.0) < 0
    assert shape.exact_area == base.exact_area
    with pytest.raises(ValueError):
        Perturbed.named(base, "cubic")


def test_sample_certifies_distance_shapes(grid32: GridSpec) -> None:
    assert sample(Sphere(0.5), grid32).is_distance
    assert not sample(Ellipsoid((0.5, 0.5, 0.3)), grid32).is_distance


def test_sample_band_is_kernel_plus_two_cells(grid32: GridSpec) -> None:
    ls = sample(Sphere(0.5), grid32)
    assert ls.band_width == pytest.approx(5 * grid32.h)


def test_sample_rejects_shape_near_boundary() -> None:
    grid = GridSpec.from_box((-0.6, -0.6, -0.6), (0.6, 0.6, 0.6), 1.0 / 32.0)
    with pytest.raises(ShapeTouchesBoundary):
        sample(Sphere(0.5), grid)


def test_surface_samples_carry_exact_values() -> None:
    samples = surface_samples(Sphere(0.25), 5)
    assert len(samples) == 5
    assert all(s.H == pytest.approx(8.0) and s.G == pytest.approx(16.0) for s in samples)
    assert np.allclose([np.linalg.norm(s.n) for s in samples], 1.0)
