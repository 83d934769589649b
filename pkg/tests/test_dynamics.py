from __future__ import annotations

import math

import numpy as np
import pytest

from geoflow.dynamics import (
    FlowConfig,
    VelocitySpec,
    compare_with_oracle,
    gradient_flow,
    interface_shift,
    laplacian_symbol,
    measure_radius,
    named_velocity,
    normal_time_derivative_residual,
    redistance,
    semi_implicit_step,
    speed_taper,
    stabilize,
    stable_dt,
    transport_step,
)
from geoflow.errors import CflViolation, NoInterface
from geoflow.fields import GridSpec
from geoflow.functionals import aniso_diag, area, gauss, mean_linear, willmore, willmore_gauss
from geoflow.geometry import LevelSet, distance_defect, distance_estimate, nsnu_check
from geoflow.quadrature import SmearKernel
from geoflow.shapes import Ellipsoid, Perturbed, Plane, Sphere, Torus, sample


def test_stable_dt_for_unit_speed(grid32) -> None:
    vel = named_velocity("normal")
    assert stable_dt(vel, grid32) == pytest.approx(grid32.h / math.sqrt(3.0))
    assert stable_dt(vel, grid32, 0.5) == pytest.approx(0.5 * grid32.h / math.sqrt(3.0))


def test_stable_dt_curvature_bounds(grid32) -> None:
    h = grid32.h
    ones = lambda x, y, z: np.ones_like(x)  # noqa: E731
    second = VelocitySpec.normal_speed(ones, order=2, stiffness=1.0)
    fourth = VelocitySpec.normal_speed(ones, order=4, stiffness=2.0)
    assert stable_dt(second, grid32) == pytest.approx(h * h / 3.0)
    assert stable_dt(fourth, grid32) == pytest.approx(h**4 / 18.0)


def test_velocity_spec_rejects_bad_input() -> None:
    with pytest.raises(ValueError):
        VelocitySpec("normal")
    with pytest.raises(ValueError):
        VelocitySpec.normal_speed(lambda x, y, z: x, order=3)
    with pytest.raises(ValueError):
        named_velocity("spin")


def test_transport_rejects_large_step(sphere_ls) -> None:
    vel = named_velocity("normal")
    dt = stable_dt(vel, sphere_ls.spec)
    with pytest.raises(CflViolation):
        transport_step(sphere_ls, vel, 2.0 * dt)
    with pytest.raises(ValueError):
        transport_step(sphere_ls, vel, 0.0)


def test_expanding_sphere_tracks_radius(grid32, kernel32) -> None:
    ls = sample(Sphere(0.4), grid32)
    vel = named_velocity("normal")
    dt = stable_dt(vel, grid32)
    t = 0.0
    for _ in range(6):
        ls = transport_step(ls, vel, dt)
        t += dt
    assert not ls.is_distance
    assert abs(measure_radius(ls, kernel32) - (0.4 + t)) < grid32.h


def test_plane_translates_exactly(grid32) -> None:
    ls = sample(Plane(), grid32)
    vel = VelocitySpec.full_vector(lambda x, y, z: (0.0 * x, 0.0 * y, 0.5 + 0.0 * z))
    dt = stable_dt(vel, grid32)
    moved = transport_step(ls, vel, dt)
    _, _, z = grid32.coords()
    expected = z - 0.5 * dt
    assert np.allclose(moved.phi.data[:, :, 1:], expected[:, :, 1:], atol=1e-12)


def test_redistance_recovers_distance(grid32) -> None:
    base = sample(Sphere(0.5), grid32)
    scaled = LevelSet.from_array(grid32, 5.0 * base.phi.data, band_width=base.band_width)
    out = redistance(scaled)
    h = grid32.h
    assert interface_shift(scaled, out) <= 1.05 * h
    band = base.band_mask()
    assert np.max(np.abs(out.phi.data - base.phi.data)[band]) < h


def test_redistance_needs_an_interface(grid32) -> None:
    base = sample(Sphere(0.5), grid32)
    shifted = LevelSet.from_array(grid32, base.phi.data + 2.0)
    with pytest.raises(NoInterface):
        redistance(shifted)


def test_redistanced_linear_multiplier_has_no_normal_variation(perturbed_sphere_ls, sphere_ls) -> None:
    out = redistance(perturbed_sphere_ls)
    assert out.is_distance
    assert nsnu_check(out).variation_stats().max <= 2.0 * out.h
    band = sphere_ls.band_mask()
    assert np.max(np.abs(out.phi.data - sphere_ls.phi.data)[band]) < 1e-3


@pytest.mark.parametrize(
    "shape, lower, upper",
    [
        (Torus(0.5, 0.2), (-0.875, -0.875, -0.5), (0.875, 0.875, 0.5)),
        (Ellipsoid((0.5, 0.5, 0.3)), (-0.75, -0.75, -0.75), (0.75, 0.75, 0.75)),
    ],
    ids=["torus", "flat_ellipsoid"],
)
def test_redistance_certifies_curved_shapes(shape, lower, upper) -> None:
    spec = GridSpec.from_box(lower, upper, 1.0 / 32.0)
    base = sample(shape, spec)
    stretched = LevelSet.from_array(spec, 3.0 * base.phi.data, band_width=base.band_width)
    out = redistance(stretched)
    assert out.is_distance
    assert distance_defect(out) <= 0.05
    assert interface_shift(stretched, out) <= 1.05 * spec.h


def test_speed_taper_profile(sphere_ls) -> None:
    taper = speed_taper(sphere_ls)
    d = distance_estimate(sphere_ls.phi.data, sphere_ls.norm_grad())
    bw = sphere_ls.band_width
    assert np.all(taper[d <= 0.5 * bw] == 1.0)
    assert np.all(taper[d >= bw] == pytest.approx(0.0, abs=1e-12))
    assert np.all((taper >= 0.0) & (taper <= 1.0))


def test_oracle_area_normal_speed(sphere_ls, kernel32) -> None:
    cmp = compare_with_oracle(sphere_ls, area(), named_velocity("normal"), kernel32)
    assert cmp.agrees(0.03)
    assert cmp.predicted == pytest.approx(4.0 * math.pi, rel=0.03)


def test_oracle_area_trig_speed(sphere_ls, kernel32) -> None:
    assert compare_with_oracle(sphere_ls, area(), named_velocity("trig"), kernel32).agrees(0.06)


def test_oracle_area_linear_field(sphere_ls, kernel32) -> None:
    assert compare_with_oracle(sphere_ls, area(), named_velocity("linear"), kernel32).agrees(0.06)


def test_oracle_anisotropic_trig_speed(sphere_ls, kernel32) -> None:
    assert compare_with_oracle(sphere_ls, aniso_diag(1.0, 1.0, 4.0), named_velocity("trig"), kernel32).agrees(0.06)


def test_tangential_field_does_not_change_area(sphere_ls, kernel32) -> None:
    cmp = compare_with_oracle(sphere_ls, area(), named_velocity("tangential"), kernel32)
    assert abs(cmp.predicted) < 0.05
    assert abs(cmp.fd) < 0.05


@pytest.mark.parametrize("velocity", ["normal", "linear", "trig"])
def test_oracle_willmore_on_sphere(sphere_ls, kernel32, velocity: str) -> None:
    assert compare_with_oracle(sphere_ls, willmore(), named_velocity(velocity), kernel32).agrees(0.06)


def test_oracle_linear_bending_normal_speed(sphere_ls, kernel32) -> None:
    cmp = compare_with_oracle(sphere_ls, mean_linear(), named_velocity("normal"), kernel32)
    assert cmp.agrees(0.03)
    # ∫2G dσ = 8π on every sphere
    assert cmp.predicted == pytest.approx(8.0 * math.pi, rel=0.03)


@pytest.mark.parametrize("velocity", ["linear", "trig"])
def test_oracle_linear_bending(sphere_ls, kernel32, velocity: str) -> None:
    assert compare_with_oracle(sphere_ls, mean_linear(), named_velocity(velocity), kernel32).agrees(0.06)


@pytest.mark.parametrize("velocity", ["normal", "linear", "trig"])
def test_oracle_gauss_is_flat(sphere_ls, kernel32, velocity: str) -> None:
    cmp = compare_with_oracle(sphere_ls, gauss(), named_velocity(velocity), kernel32)
    assert abs(cmp.predicted) < 1e-6
    assert cmp.agrees(0.06)


@pytest.mark.parametrize("velocity", ["normal", "linear", "trig"])
def test_oracle_willmore_gauss_on_redistanced_field(perturbed_sphere_ls, kernel32, velocity: str) -> None:
    ls = redistance(perturbed_sphere_ls)
    assert ls.is_distance
    assert compare_with_oracle(ls, willmore_gauss(), named_velocity(velocity), kernel32).agrees(0.06)


def _prolate_grid(h: float) -> GridSpec:
    return GridSpec.from_box((-0.625, -0.625, -0.8125), (0.625, 0.625, 0.8125), h)


@pytest.mark.slow
@pytest.mark.parametrize("velocity", ["normal", "linear", "trig"])
def test_oracle_willmore_on_ellipsoid(velocity: str) -> None:
    spec = _prolate_grid(1.0 / 32.0)
    kernel = SmearKernel.for_grid(spec, 3.0)
    ls = sample(Ellipsoid((0.4, 0.4, 0.6)), spec, epsilon=kernel.epsilon)
    assert compare_with_oracle(ls, willmore(), named_velocity(velocity), kernel).agrees(0.06)


@pytest.mark.slow
@pytest.mark.parametrize("velocity", ["normal", "linear", "trig"])
def test_oracle_willmore_gauss_on_redistanced_ellipsoid(velocity: str) -> None:
    spec = _prolate_grid(1.0 / 64.0)
    kernel = SmearKernel.for_grid(spec, 3.0)
    ls = redistance(sample(Ellipsoid((0.4, 0.4, 0.6)), spec, epsilon=kernel.epsilon))
    assert ls.is_distance
    assert compare_with_oracle(ls, willmore_gauss(), named_velocity(velocity), kernel).agrees(0.06)


def test_normal_time_derivative(sphere_ls) -> None:
    assert normal_time_derivative_residual(sphere_ls, named_velocity("trig")) < 0.05


def test_flow_config_validation() -> None:
    with pytest.raises(ValueError):
        FlowConfig(dt_safety=0.0)
    with pytest.raises(ValueError):
        FlowConfig(redistance_every=0)
    with pytest.raises(ValueError):
        FlowConfig(max_steps=-1)
    with pytest.raises(ValueError):
        FlowConfig(aux="volume")
    with pytest.raises(ValueError):
        FlowConfig(scheme="crank_nicolson")
    with pytest.raises(ValueError):
        FlowConfig(dt_scale=0.5)
    with pytest.raises(ValueError):
        FlowConfig(dt_scale=10.0)
    with pytest.raises(ValueError):
        FlowConfig(scheme="semi_implicit", redistance_every=5)
    assert FlowConfig(scheme="semi_implicit", redistance_every=1, dt_scale=10.0).dt_scale == 10.0


def test_stabilize_scales_each_cosine_mode() -> None:
    spec = GridSpec.from_box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 1.0 / 16.0)
    n = spec.dims[0]
    i = np.arange(n, dtype=np.float64)
    mode = np.cos(math.pi * 3.0 * (i + 0.5) / n)[:, None, None] * np.ones(spec.dims)
    lam = 4.0 / spec.h**2 * math.sin(0.5 * math.pi * 3.0 / n) ** 2
    out = stabilize(mode, spec, 1e-4, 2)
    assert np.allclose(out, mode / (1.0 + 1e-4 * lam**2), atol=1e-12)
    assert laplacian_symbol(spec)[0, 0, 0] == 0.0
    assert np.allclose(stabilize(np.full(spec.dims, 2.5), spec, 1.0, 2), 2.5)
    assert stabilize(mode, spec, 1e-4, 0) is mode


def test_semi_implicit_step_without_curvature_matches_transport(sphere_ls) -> None:
    vel = named_velocity("normal")
    moved, dt = semi_implicit_step(sphere_ls, vel)
    assert dt == pytest.approx(sphere_ls.h / math.sqrt(3.0))
    reference = transport_step(sphere_ls, vel, dt)
    near = distance_estimate(sphere_ls.phi.data, sphere_ls.norm_grad()) <= 2.0 * sphere_ls.h
    assert np.allclose(moved.phi.data[near], reference.phi.data[near], atol=1e-12)
    assert not moved.is_distance
    with pytest.raises(ValueError):
        semi_implicit_step(sphere_ls, named_velocity("linear"))


def test_gauss_flow_needs_redistancing_every_step(sphere_ls, kernel32) -> None:
    with pytest.raises(ValueError):
        gradient_flow(sphere_ls, gauss(), kernel32, FlowConfig(redistance_every=5))


def test_zero_step_flow_records_initial_state(sphere_ls, kernel32) -> None:
    seen = []
    result = gradient_flow(
        sphere_ls, area(), kernel32, FlowConfig(max_steps=0), on_row=lambda row, ls, g: seen.append(row)
    )
    assert len(result.trajectory) == 1
    assert result.stop_reason == "max_steps"
    assert result.final is sphere_ls
    row = result.trajectory.last
    assert row.step == 0 and row.time == 0.0
    assert row.energy == pytest.approx(math.pi, rel=0.015)
    assert row.aux == pytest.approx(0.5, abs=0.01)
    assert seen == [row]


def test_flow_stops_on_gradient_norm(sphere_ls, kernel32) -> None:
    result = gradient_flow(sphere_ls, area(), kernel32, FlowConfig(max_steps=10, stop_grad_norm=1e6))
    assert result.stop_reason == "converged"
    assert len(result.trajectory) == 1


@pytest.mark.slow
def test_area_flow_shrinks_sphere(sphere_ls, kernel32) -> None:
    result = gradient_flow(sphere_ls, area(), kernel32, FlowConfig(max_steps=30))
    rows = result.trajectory.rows()
    assert len(rows) == 31
    energies = result.trajectory.energies()
    assert np.all(np.diff(energies) <= 1e-3 * energies[0])
    last = result.trajectory.last
    expected = math.sqrt(0.25 - 4.0 * last.time)
    assert abs(last.aux - expected) < 2.0 * sphere_ls.h


def test_willmore_flow_on_ellipsoid_is_monotone(grid32, kernel32) -> None:
    ls = sample(Ellipsoid((0.5, 0.5, 0.3)), grid32)
    result = gradient_flow(ls, willmore(), kernel32, FlowConfig(max_steps=3, aux="total_gauss"))
    energies = result.trajectory.energies()
    assert len(energies) == 4
    assert np.all(np.diff(energies) <= 1e-3 * energies[0])
    assert result.trajectory.last.aux == pytest.approx(4.0 * math.pi, rel=0.1)


@pytest.mark.slow
def test_semi_implicit_area_flow_tracks_radius(sphere_ls, kernel32) -> None:
    cfg = FlowConfig(redistance_every=1, max_steps=10, scheme="semi_implicit", dt_scale=4.0)
    result = gradient_flow(sphere_ls, area(), kernel32, cfg)
    energies = result.trajectory.energies()
    assert np.all(np.diff(energies) <= 1e-3 * energies[0])
    last = result.trajectory.last
    expected = math.sqrt(0.25 - 4.0 * last.time)
    assert abs(last.aux - expected) < 2.0 * sphere_ls.h


@pytest.mark.slow
def test_semi_implicit_willmore_flow_rounds_the_ellipsoid(grid32, kernel32) -> None:
    ls = sample(Ellipsoid((0.5, 0.5, 0.3)), grid32)
    cfg = FlowConfig(
        redistance_every=1, max_steps=150, aux="total_gauss", scheme="semi_implicit", dt_scale=400.0
    )
    result = gradient_flow(ls, willmore(), kernel32, cfg)
    energies = result.trajectory.energies()
    assert energies[0] > 1.1 * 16.0 * math.pi
    assert np.all(np.diff(energies) <= 1e-3 * energies[0])
    assert energies[-1] == pytest.approx(16.0 * math.pi, rel=0.05)
    assert result.trajectory.last.aux == pytest.approx(4.0 * math.pi, rel=0.1)
