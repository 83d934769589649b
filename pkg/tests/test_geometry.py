from __future__ import annotations

import numpy as np
import pytest

from geoflow.dynamics import interface_nodes
from geoflow.errors import DegenerateGradient, NotDistanceFunction
from geoflow.fields import GridSpec, ScalarField3, interpolate
from geoflow.functionals import gauss_bonnet_normal_derivative_check
from geoflow.geometry import (
    LevelSet,
    distance_defect,
    geometry_bundle,
    laplace_beltrami,
    lemma_residuals,
    normal,
    nsnu_check,
    shape_operator_asymmetry,
    tangential_gradient,
)
from geoflow.quadrature import SmearKernel
from geoflow.shapes import Ellipsoid, Sphere, Torus, sample
from geoflow.validation import curvature_scale, residual_checks


def test_sampled_sphere_is_certified(sphere_ls) -> None:
    assert sphere_ls.is_distance
    assert distance_defect(sphere_ls) < 0.05


def test_scaled_sdf_fails_certificate(grid32) -> None:
    phi = ScalarField3.from_function(grid32, lambda x, y, z: 2.0 * Sphere(0.5).phi(x, y, z))
    with pytest.raises(NotDistanceFunction):
        LevelSet(phi, is_distance=True)
    assert not LevelSet(phi).is_distance


def test_flat_field_is_degenerate(grid32) -> None:
    with pytest.raises(DegenerateGradient):
        LevelSet.from_array(grid32, np.zeros(grid32.dims))


def test_default_band_is_five_cells(grid32) -> None:
    phi = ScalarField3.from_function(grid32, Sphere(0.5).phi)
    assert LevelSet(phi).band_width == pytest.approx(5 * grid32.h)


def test_sphere_curvatures_at_surface(sphere_ls) -> None:
    shape = Sphere(0.5)
    b = geometry_bundle(sphere_ls)
    pts = shape.surface_points(64)
    assert np.max(np.abs(interpolate(b.H, pts) - 4.0)) < 0.02 * 4.0
    assert np.max(np.abs(interpolate(b.G, pts) - 4.0)) < 0.04 * 4.0
    n = np.stack([interpolate(b.n.component(i), pts) for i in range(3)], axis=-1)
    assert np.max(np.abs(n - shape.exact_normal(pts))) < 1e-2


def test_sphere_mean_curvature_at_interface_nodes(sphere_ls) -> None:
    b = geometry_bundle(sphere_ls)
    nodes = interface_nodes(sphere_ls.phi.data)
    x, y, z = sphere_ls.spec.coords()
    r = np.sqrt(x * x + y * y + z * z)[nodes]
    assert np.max(np.abs(b.H.data[nodes] - 2.0 / r)) < 0.005 * 4.0


def _torus_grid(h: float) -> GridSpec:
    return GridSpec.from_box((-0.875, -0.875, -0.5), (0.875, 0.875, 0.5), h)


@pytest.mark.parametrize(
    "shape, grid",
    [
        (Torus(), _torus_grid(1.0 / 32.0)),
        (Ellipsoid((0.5, 0.5, 0.3)), GridSpec.from_box((-0.75, -0.75, -0.75), (0.75, 0.75, 0.75), 1.0 / 32.0)),
    ],
    ids=["torus", "ellipsoid"],
)
def test_curvatures_on_curved_shapes(shape, grid) -> None:
    b = geometry_bundle(sample(shape, grid))
    pts = shape.surface_points(128)
    exact_H = shape.exact_H(pts)
    exact_G = shape.exact_G(pts)
    assert np.max(np.abs(interpolate(b.H, pts) - exact_H)) < 0.04 * np.max(np.abs(exact_H))
    assert np.max(np.abs(interpolate(b.G, pts) - exact_G)) < 0.08 * np.max(np.abs(exact_G))


def test_gauss_normal_derivative_on_torus() -> None:
    grid = _torus_grid(1.0 / 48.0)
    ls = sample(Torus(), grid)
    assert ls.is_distance
    assert gauss_bonnet_normal_derivative_check(ls, SmearKernel.for_grid(grid, 3.0)) < 0.05


def test_tangential_gradient_is_tangent(sphere_ls) -> None:
    b = geometry_bundle(sphere_ls)
    z = ScalarField3.from_function(sphere_ls.spec, lambda x, y, z: z)
    tg = tangential_gradient(z, b)
    assert np.max(np.abs(tg.dot(b.n).data[b.band])) < 1e-10


def test_laplace_beltrami_of_height_on_sphere(sphere_ls) -> None:
    # Δ z = −H n_z = −2z/R² on a sphere of radius R
    shape = Sphere(0.5)
    b = geometry_bundle(sphere_ls)
    z = ScalarField3.from_function(sphere_ls.spec, lambda x, y, z: z)
    lap = laplace_beltrami(z, b)
    pts = shape.surface_points(64)
    exact = -2.0 * pts[:, 2] / 0.25
    assert np.max(np.abs(interpolate(lap, pts) - exact)) < 0.4


def test_identities_hold_on_sphere(sphere_ls) -> None:
    results = residual_checks(sphere_ls)
    assert {r.name for r in results} == {"normal_flux", "tangential_hessian", "normal_drift", "grad_n_transpose", "grad_n_normal", "normal_variation"}
    assert all(r.passed for r in results), [(r.name, r.value) for r in results]


def test_identities_hold_without_distance(perturbed_sphere_ls) -> None:
    ls = perturbed_sphere_ls
    assert not ls.is_distance
    kappa = curvature_scale(geometry_bundle(ls))
    summary = lemma_residuals(ls).summary()
    assert summary["normal_flux"].max < 0.1 * kappa**2
    assert summary["normal_drift"].max < 0.1 * kappa**2
    assert summary["grad_n_transpose"].max < 0.1 * kappa
    assert summary["grad_n_normal"].max < 0.1 * kappa
    assert nsnu_check(ls).residual_stats().max < 0.1 * kappa


def test_normal_variation_separates_distance_functions(sphere_ls, perturbed_sphere_ls) -> None:
    assert nsnu_check(sphere_ls).variation_stats().max < 0.1
    check = nsnu_check(perturbed_sphere_ls)
    assert not check.is_distance
    assert check.variation_stats().max > 0.2


def test_shape_operator_nearly_symmetric_for_distance(sphere_ls) -> None:
    assert shape_operator_asymmetry(sphere_ls).max < 0.05 * 4.0


def test_geometry_ignores_scaling_of_phi(sphere_ls) -> None:
    doubled = LevelSet(ScalarField3(sphere_ls.spec, 2.0 * sphere_ls.phi.data), band_width=sphere_ls.band_width)
    assert np.allclose(normal(doubled).data, normal(sphere_ls).data, atol=1e-10)
    band = sphere_ls.band_mask()
    h1 = geometry_bundle(sphere_ls).H.data[band]
    h2 = geometry_bundle(doubled).H.data[band]
    assert np.max(np.abs(h1 - h2)) < 1e-10
