"""Level-set transport, redistancing, the finite-difference energy oracle and
gradient-descent flows.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy.fft import dctn, idctn

from .eikonal import closest_point_distance, fast_sweep
from .errors import CflViolation, NoInterface, NonMonotoneEnergy
from .fields import GridSpec, ScalarField3, VectorField3
from .functionals import FunctionalSpec, ShapeGradient, energy, shape_gradient
from .geometry import (
    DIST_TOL,
    GeometryBundle,
    LevelSet,
    distance_defect,
    distance_estimate,
    geometry_bundle,
    normal,
    tangential_gradient_array,
)
from .quadrature import SmearKernel, enclosed_volume, integrate_weighted, surface_integral, surface_weights
from .trajectory import FlowTrajectory, TrajectoryRow

log = logging.getLogger(__name__)


VelocityKind = Literal["normal", "vector"]

RICHARDSON_RTOL: float = 1e-3
ORACLE_STEP_FACTOR: float = 0.1
MONOTONE_PATIENCE: int = 3
# cells beyond the band reached by the nested curvature stencils
REDISTANCE_HALO: float = 4.0
# half-width of the shell that sets the semi-implicit advective bound
NEAR_CELLS: float = 2.0
_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True, slots=True, eq=False)
class VelocitySpec:
    """Either a normal speed s (u = s n) or a full vector field u.

    Callables are evaluated on grid coordinates: ``speed(x, y, z)`` returns an
    array, ``u(x, y, z)`` a 3-tuple of arrays. ``order`` is the highest
    derivative order of φ the speed depends on (0, 2 or 4) and, together with
    ``stiffness``, sets the explicit time-step bound.
    """

    kind: VelocityKind
    speed: ScalarField3 | Callable | None = None
    u: VectorField3 | Callable | None = None
    order: int = 0
    stiffness: float = 1.0
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind == "normal" and self.speed is None:
            raise ValueError("normal velocity needs a speed")
        if self.kind == "vector" and self.u is None:
            raise ValueError("vector velocity needs u")
        if self.kind not in ("normal", "vector"):
            raise ValueError(f"unknown velocity kind: {self.kind}")
        if self.order not in (0, 2, 4):
            raise ValueError("order must be 0, 2 or 4")
        if self.stiffness < 0:
            raise ValueError("stiffness must be >= 0")

    @classmethod
    def normal_speed(
        cls, speed: ScalarField3 | Callable, order: int = 0, stiffness: float = 1.0, name: str = "normal"
    ) -> VelocitySpec:
        return cls("normal", speed=speed, order=order, stiffness=stiffness, name=name)

    @classmethod
    def full_vector(cls, u: VectorField3 | Callable, name: str = "vector") -> VelocitySpec:
        return cls("vector", u=u, name=name)

    def speed_array(self, grid: GridSpec) -> np.ndarray:
        if isinstance(self.speed, ScalarField3):
            return self.speed.data
        x, y, z = grid.coords()
        s = np.broadcast_to(np.asarray(self.speed(x, y, z), dtype=np.float64), grid.dims)
        if not np.all(np.isfinite(s)):
            raise ValueError("speed must be finite")
        return s

    def vector_array(self, grid: GridSpec) -> np.ndarray:
        if isinstance(self.u, VectorField3):
            return self.u.data
        x, y, z = grid.coords()
        comps = [np.broadcast_to(np.asarray(c, dtype=np.float64), grid.dims) for c in self.u(x, y, z)]
        u = np.stack(comps, axis=-1)
        if not np.all(np.isfinite(u)):
            raise ValueError("velocity must be finite")
        return u

    def normal_component(self, n: np.ndarray, grid: GridSpec) -> np.ndarray:
        """u·n at every grid point."""
        if self.kind == "normal":
            return self.speed_array(grid)
        return np.einsum("...i,...i->...", self.vector_array(grid), n)


VELOCITIES: dict[str, Callable[[], VelocitySpec]] = {
    "normal": lambda: VelocitySpec.normal_speed(lambda x, y, z: np.ones_like(x), name="normal"),
    "linear": lambda: VelocitySpec.full_vector(lambda x, y, z: (x, -0.5 * y, 0.0 * z), name="linear"),
    "trig": lambda: VelocitySpec.normal_speed(
        lambda x, y, z: np.cos(math.pi * x) * np.cos(math.pi * y), name="trig"
    ),
    "tangential": lambda: VelocitySpec.full_vector(lambda x, y, z: (-y, x, 0.0 * z), name="tangential"),
}


def named_velocity(name: str) -> VelocitySpec:
    try:
        return VELOCITIES[name]()
    except KeyError:
        raise ValueError(f"unknown velocity: {name}") from None


def _curvature_bound(vel: VelocitySpec, h: float) -> float:
    if vel.order == 2:
        return h * h / (3.0 * max(vel.stiffness, 1.0))
    if vel.order == 4 and vel.stiffness > 0:
        return h**4 / (9.0 * vel.stiffness)
    return math.inf


def stable_dt(vel: VelocitySpec, grid: GridSpec, dt_safety: float = 1.0) -> float:
    """Largest explicit-Euler step allowed for ``vel`` on ``grid``."""
    h = grid.h
    if vel.kind == "normal":
        vmax = _SQRT3 * float(np.max(np.abs(vel.speed_array(grid))))
    else:
        vmax = float(np.max(np.sum(np.abs(vel.vector_array(grid)), axis=-1)))
    advective = h / vmax if vmax > 0 else math.inf
    return dt_safety * min(advective, _curvature_bound(vel, h))


def _one_sided(phi: np.ndarray, h: float, axis: int) -> tuple[np.ndarray, np.ndarray]:
    pad = [(0, 0)] * 3
    pad[axis] = (1, 1)
    d = np.diff(np.pad(phi, pad, mode="edge"), axis=axis) / h
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return d[tuple(lo)], d[tuple(hi)]


def godunov_norm(phi: np.ndarray, h: float, speed: np.ndarray) -> np.ndarray:
    """Upwind |∇φ| for φ_t + s|∇φ| = 0."""
    outward = np.zeros_like(phi)
    inward = np.zeros_like(phi)
    for axis in range(3):
        dm, dp = _one_sided(phi, h, axis)
        outward += np.maximum(dm, 0.0) ** 2 + np.minimum(dp, 0.0) ** 2
        inward += np.minimum(dm, 0.0) ** 2 + np.maximum(dp, 0.0) ** 2
    return np.sqrt(np.where(speed > 0, outward, inward))


def upwind_advection(phi: np.ndarray, h: float, u: np.ndarray) -> np.ndarray:
    """u·∇φ with each derivative taken from the upwind side."""
    out = np.zeros_like(phi)
    for axis in range(3):
        dm, dp = _one_sided(phi, h, axis)
        ua = u[..., axis]
        out += ua * np.where(ua > 0, dm, dp)
    return out


def transport_step(ls: LevelSet, vel: VelocitySpec, dt: float, dt_safety: float = 1.0) -> LevelSet:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    bound = stable_dt(vel, ls.spec, dt_safety)
    if dt > bound * (1.0 + 1e-9):
        raise CflViolation(f"dt={dt:.4g} exceeds the stable bound {bound:.4g}")
    phi = ls.phi.data
    h = ls.h
    if vel.kind == "normal":
        s = vel.speed_array(ls.spec)
        new = phi - dt * s * godunov_norm(phi, h, s)
    else:
        new = phi - dt * upwind_advection(phi, h, vel.vector_array(ls.spec))
    return ls.with_phi(new, is_distance=False)


def _central_step(ls: LevelSet, vel: VelocitySpec, delta: float) -> LevelSet:
    """Second-order central update φ − δ (u·∇φ), only used for tiny δ."""
    if vel.kind == "normal":
        rate = vel.speed_array(ls.spec) * ls.norm_grad()
    else:
        rate = np.einsum("...i,...i->...", vel.vector_array(ls.spec), ls.grad_phi)
    return ls.with_phi(ls.phi.data - delta * rate, is_distance=False)


def laplacian_symbol(spec: GridSpec) -> np.ndarray:
    """Eigenvalues of the 3-point −Δ_h with mirror boundaries, indexed like a DCT-II."""
    total = np.zeros(spec.dims)
    for axis, n in enumerate(spec.dims):
        shape = [1, 1, 1]
        shape[axis] = n
        k = np.arange(n, dtype=np.float64).reshape(shape)
        total = total + (4.0 / spec.h**2) * np.sin(0.5 * math.pi * k / n) ** 2
    return total


def stabilize(increment: np.ndarray, spec: GridSpec, coefficient: float, power: int) -> np.ndarray:
    """Solve (1 + c(−Δ_h)^power) x = increment."""
    if coefficient <= 0 or power == 0:
        return increment
    hat = dctn(increment, type=2, norm="ortho")
    hat /= 1.0 + coefficient * laplacian_symbol(spec) ** power
    return idctn(hat, type=2, norm="ortho")


def semi_implicit_step(
    ls: LevelSet, vel: VelocitySpec, dt_scale: float = 1.0, dt_safety: float = 1.0
) -> tuple[LevelSet, float]:
    """Euler step with the speed taken explicitly and the increment damped by
    (1 + dt·k(−Δ_h)^(order/2))⁻¹, k the stiffness.

    The advective bound only looks at nodes within ``NEAR_CELLS`` of the
    interface, so the caller has to redistance after every step. Increments
    elsewhere are clipped to the largest one found there.
    """
    if vel.kind != "normal":
        raise ValueError("semi-implicit steps need a normal speed")
    h = ls.h
    phi = ls.phi.data
    s = vel.speed_array(ls.spec)
    near = distance_estimate(phi, ls.norm_grad()) <= NEAR_CELLS * h
    vmax = _SQRT3 * float(np.max(np.abs(s[near]))) if near.any() else 0.0
    advective = h / vmax if vmax > 0 else math.inf
    dt = dt_safety * min(advective, dt_scale * _curvature_bound(vel, h))
    if not math.isfinite(dt):
        dt = dt_safety * h
    inc = -dt * s * godunov_norm(phi, h, s)
    cap = float(np.max(np.abs(inc[near]))) if near.any() else 0.0
    inc = stabilize(np.clip(inc, -cap, cap), ls.spec, dt * vel.stiffness, vel.order // 2)
    return ls.with_phi(phi + inc, is_distance=False), dt


def interface_nodes(phi: np.ndarray) -> np.ndarray:
    """Nodes touching a grid edge on which φ changes sign (or vanishes)."""
    mask = phi == 0.0
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        cross = phi[lo] * phi[hi] <= 0.0
        mask[lo] |= cross
        mask[hi] |= cross
    return mask


def redistance(ls: LevelSet, max_iterations: int = 4) -> LevelSet:
    """Signed distance to {φ=0}, keeping the sign of φ.

    Nodes within the band plus a stencil halo take their closest-point distance
    on the tricubic interface. The sweep fills the rest, and any interface node
    whose Newton iteration failed falls back to φ/|∇φ|.
    """
    phi = ls.phi.data
    if np.all(phi > 0) or np.all(phi < 0):
        raise NoInterface("phi has a uniform sign")
    h = ls.h
    crossing = interface_nodes(phi)
    estimate = distance_estimate(phi, ls.norm_grad())
    near = (estimate <= ls.band_width + REDISTANCE_HALO * h) | crossing
    dist, ok = closest_point_distance(phi, h, near)
    fixed = np.zeros_like(near)
    init = np.zeros_like(phi)
    hit = tuple(idx[ok] for idx in np.nonzero(near))
    fixed[hit] = True
    init[hit] = dist[ok]
    fallback = crossing & ~fixed
    if fallback.any():
        log.warning("%d 个界面节点的最近点迭代未收敛, 改用一阶估计", int(fallback.sum()))
        init[fallback] = estimate[fallback]
        fixed |= fallback
    swept = fast_sweep(init, fixed, h, max_iterations=max_iterations)
    signed = np.where(phi < 0, -swept, swept)
    out = ls.with_phi(signed, is_distance=False)
    defect = distance_defect(out)
    if defect > DIST_TOL:
        log.warning("重新距离化后 ||grad phi|-1| = %.3g 超过阈值 %g", defect, DIST_TOL)
        return out
    log.debug("重新距离化完成: 偏差 %.3g", defect)
    return ls.with_phi(signed, is_distance=True)


def interface_shift(before: LevelSet, after: LevelSet) -> float:
    """max |φ_after| on nodes adjacent to sign changes of φ_before."""
    mask = interface_nodes(before.phi.data)
    return float(np.max(np.abs(after.phi.data[mask])))


def measure_radius(ls: LevelSet, kernel: SmearKernel) -> float:
    """Radius of the ball with the same enclosed volume."""
    volume = enclosed_volume(ls, kernel)
    return (3.0 * volume / (4.0 * math.pi)) ** (1.0 / 3.0)


def _max_normal_speed(ls: LevelSet, vel: VelocitySpec, bundle: GeometryBundle) -> float:
    un = vel.normal_component(bundle.n.data, ls.spec)
    band = bundle.band
    return float(np.max(np.abs(un[band]))) if band.any() else 0.0


def fd_energy_derivative(
    ls: LevelSet,
    spec: FunctionalSpec,
    vel: VelocitySpec,
    kernel: SmearKernel,
    delta_t: float | None = None,
) -> float:
    """Central difference in time of the energy along the transport by ``vel``.

    The step is checked against half of itself and the Richardson combination
    of the two estimates is returned.
    """
    bundle = geometry_bundle(ls)
    vmax = _max_normal_speed(ls, vel, bundle)
    if vmax == 0.0:
        return 0.0
    delta = ORACLE_STEP_FACTOR * ls.h**2 / vmax if delta_t is None else float(delta_t)

    def central(d: float) -> float:
        e_plus = energy(_central_step(ls, vel, d), spec, kernel)
        e_minus = energy(_central_step(ls, vel, -d), spec, kernel)
        return (e_plus - e_minus) / (2.0 * d)

    coarse = central(delta)
    fine = central(0.5 * delta)
    if abs(coarse - fine) > RICHARDSON_RTOL * max(abs(fine), 1e-12):
        log.warning("FD 导数步长不一致: %.6g vs %.6g (delta=%.3g)", coarse, fine, delta)
    return (4.0 * fine - coarse) / 3.0


def predicted_energy_derivative(
    ls: LevelSet,
    spec: FunctionalSpec,
    vel: VelocitySpec,
    kernel: SmearKernel,
    bundle: GeometryBundle | None = None,
    gradient: ShapeGradient | None = None,
) -> float:
    b = geometry_bundle(ls) if bundle is None else bundle
    g = shape_gradient(ls, spec, b) if gradient is None else gradient
    un = vel.normal_component(b.n.data, ls.spec)
    return surface_integral(ls, g.field.data * un, kernel)


@dataclass(frozen=True, slots=True)
class OracleComparison:
    predicted: float
    fd: float
    scale: float

    @property
    def error(self) -> float:
        return abs(self.predicted - self.fd)

    def agrees(self, tol: float) -> bool:
        return self.error <= tol * (abs(self.fd) + self.scale)


def compare_with_oracle(
    ls: LevelSet, spec: FunctionalSpec, vel: VelocitySpec, kernel: SmearKernel
) -> OracleComparison:
    """Predicted vs finite-difference dJ/dt; scale is ∫|H| dσ · max|u·n|."""
    bundle = geometry_bundle(ls)
    predicted = predicted_energy_derivative(ls, spec, vel, kernel, bundle)
    fd = fd_energy_derivative(ls, spec, vel, kernel)
    w = surface_weights(ls, kernel)
    scale = integrate_weighted(w, np.abs(bundle.H.data)) * _max_normal_speed(ls, vel, bundle)
    log.info("梯度校验 %s/%s: 预测=%.6g 差分=%.6g", spec.name, vel.name, predicted, fd)
    return OracleComparison(predicted, fd, scale)


def normal_time_derivative_residual(
    ls: LevelSet, vel: VelocitySpec, delta_t: float | None = None
) -> float:
    """Relative band residual of n_t = −∇_∂Ω(u·n) − ([∇n]n)(u·n)."""
    bundle = geometry_bundle(ls)
    vmax = _max_normal_speed(ls, vel, bundle)
    if vmax == 0.0:
        return 0.0
    delta = ORACLE_STEP_FACTOR * ls.h**2 / vmax if delta_t is None else float(delta_t)
    n_plus = normal(_central_step(ls, vel, delta)).data
    n_minus = normal(_central_step(ls, vel, -delta)).data
    lhs = (n_plus - n_minus) / (2.0 * delta)

    n = bundle.n.data
    un = vel.normal_component(n, ls.spec)
    gnn = np.einsum("...ij,...j->...i", bundle.grad_n.data, n)
    rhs = -tangential_gradient_array(un, n, ls.h) - gnn * un[..., None]
    band = bundle.band
    err = np.linalg.norm(lhs - rhs, axis=-1)[band]
    ref = np.linalg.norm(rhs, axis=-1)[band]
    return float(np.max(err) / max(float(np.max(ref)), 1e-12))


def speed_taper(ls: LevelSet) -> np.ndarray:
    """1 within half a band of the interface, cosine decay to 0 at the band edge."""
    d = distance_estimate(ls.phi.data, ls.norm_grad())
    half = 0.5 * ls.band_width
    t = np.clip((d - half) / half, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(math.pi * t))


AuxKind = Literal["radius", "total_gauss"]
SchemeKind = Literal["explicit", "semi_implicit"]


@dataclass(frozen=True, slots=True)
class FlowConfig:
    dt_safety: float = 0.9
    redistance_every: int = 5
    max_steps: int = 100
    stop_grad_norm: float = 0.0
    mono_tol_rel: float = 1e-3
    stop_radius: float = 0.0
    aux: AuxKind = "radius"
    scheme: SchemeKind = "explicit"
    # step as a multiple of the explicit curvature bound
    dt_scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.dt_safety <= 1:
            raise ValueError("dt_safety must be in (0, 1]")
        if self.redistance_every < 1:
            raise ValueError("redistance_every must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.stop_grad_norm < 0 or self.mono_tol_rel < 0 or self.stop_radius < 0:
            raise ValueError("tolerances must be >= 0")
        if self.aux not in ("radius", "total_gauss"):
            raise ValueError(f"unknown aux column: {self.aux}")
        if self.scheme not in ("explicit", "semi_implicit"):
            raise ValueError(f"unknown scheme: {self.scheme}")
        if self.dt_scale < 1:
            raise ValueError("dt_scale must be >= 1")
        if self.scheme == "explicit" and self.dt_scale != 1.0:
            raise ValueError("dt_scale > 1 needs the semi_implicit scheme")
        if self.scheme == "semi_implicit" and self.redistance_every != 1:
            raise ValueError("the semi_implicit scheme needs redistance_every = 1")


@dataclass(frozen=True, slots=True, eq=False)
class FlowResult:
    trajectory: FlowTrajectory
    final: LevelSet
    stop_reason: str


RowCallback = Callable[[TrajectoryRow, LevelSet, ShapeGradient], None]


def gradient_flow(
    ls: LevelSet,
    spec: FunctionalSpec,
    kernel: SmearKernel,
    cfg: FlowConfig,
    on_row: RowCallback | None = None,
) -> FlowResult:
    """Steepest descent with normal speed −d, d the shape gradient density."""
    if spec.requires_distance and cfg.redistance_every != 1:
        raise ValueError(f"{spec.name} needs redistance_every = 1")
    trajectory = FlowTrajectory()
    current = ls
    time = 0.0
    tol = None
    previous = None
    rising = 0
    reason = "max_steps"
    needs_distance = spec.requires_distance or cfg.scheme == "semi_implicit"
    for step in range(cfg.max_steps + 1):
        scheduled = step > 0 and step % cfg.redistance_every == 0
        if scheduled or (step == 0 and needs_distance and not current.is_distance):
            current = redistance(current)
            log.debug("第 %d 步: 已重新距离化", step)

        bundle = geometry_bundle(current)
        grad = shape_gradient(current, spec, bundle)
        w = surface_weights(current, kernel)
        e = integrate_weighted(w, spec.density(bundle))
        density = grad.field.data
        grad_norm = math.sqrt(max(integrate_weighted(w, density * density), 0.0))
        if cfg.aux == "radius":
            aux = measure_radius(current, kernel)
        else:
            aux = integrate_weighted(w, bundle.G.data)
        row = TrajectoryRow(step, time, e, grad_norm, aux)
        trajectory.append(row)
        log.debug("第 %d 步 t=%.5g 能量=%.8g |g|=%.4g aux=%.5g", step, time, e, grad_norm, aux)
        if on_row is not None:
            on_row(row, current, grad)

        if tol is None:
            tol = cfg.mono_tol_rel * abs(e)
        if previous is not None and e > previous + tol:
            rising += 1
            log.warning("第 %d 步能量上升: %.8g -> %.8g", step, previous, e)
            if rising >= MONOTONE_PATIENCE:
                raise NonMonotoneEnergy(
                    f"energy rose for {rising} consecutive steps at step {step}", trajectory
                )
        else:
            rising = 0
        previous = e

        if step == cfg.max_steps:
            break
        if grad_norm < cfg.stop_grad_norm:
            reason = "converged"
            break
        if cfg.aux == "radius" and aux < cfg.stop_radius:
            reason = "radius"
            break

        speed = -density * speed_taper(current)
        vel = VelocitySpec.normal_speed(
            ScalarField3(current.spec, speed), order=spec.flow_order, stiffness=spec.stiffness, name="descent"
        )
        if cfg.scheme == "explicit":
            dt = stable_dt(vel, current.spec, cfg.dt_safety)
            current = transport_step(current, vel, dt, cfg.dt_safety)
        else:
            current, dt = semi_implicit_step(current, vel, cfg.dt_scale, cfg.dt_safety)
        time += dt

    log.info("流 %s 在 %d 步后停止（%s）", spec.name, len(trajectory) - 1, reason)
    return FlowResult(trajectory, current, reason)
