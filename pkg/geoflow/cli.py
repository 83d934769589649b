from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from typing import Sequence

from . import __version__
from .dynamics import (
    FlowConfig,
    compare_with_oracle,
    gradient_flow,
    named_velocity,
    redistance,
)
from .eikonal import set_threads
from .errors import ConfigError, GeoflowError, NonMonotoneEnergy
from .fields import GridSpec, set_workers
from .functionals import FunctionalSpec, energy, preset, shape_gradient
from .geometry import LevelSet, geometry_bundle
from .outputs import vtk_filename, write_trajectory_csv, write_vtk_scalar
from .quadrature import SmearKernel
from .settings import RunConfig, load_config, save_config, threads_from_env
from .shapes import AnalyticShape, Ellipsoid, Perturbed, Plane, Sphere, Torus, sample
from .trajectory import TrajectoryRow
from .validation import validate

log = logging.getLogger(__name__)


LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
ORACLE_TOL: float = 0.06
# area flow stops once the sphere is this many cells across
STOP_RADIUS_CELLS: float = 5.0

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


# builders


def build_grid(cfg: RunConfig) -> GridSpec:
    return GridSpec.from_box(cfg.grid_lower, cfg.grid_upper, cfg.grid_h)


def build_shape(cfg: RunConfig) -> AnalyticShape:
    if cfg.shape == "sphere":
        shape: AnalyticShape = Sphere(cfg.shape_radius, cfg.shape_center)
    elif cfg.shape == "ellipsoid":
        shape = Ellipsoid(cfg.shape_semi_axes, cfg.shape_center)
    elif cfg.shape == "torus":
        shape = Torus(cfg.shape_major, cfg.shape_minor, cfg.shape_center)
    elif cfg.shape == "plane":
        shape = Plane(point=cfg.shape_center)
    else:
        raise ConfigError(f"unknown shape: {cfg.shape}")
    if cfg.shape_perturb != "none":
        shape = Perturbed.named(shape, cfg.shape_perturb)
    return shape


def build_functional(cfg: RunConfig) -> FunctionalSpec:
    if cfg.functional == "helfrich":
        return preset("helfrich", c0=cfg.functional_c0)
    if cfg.functional == "aniso_diag":
        m1, m2, m3 = cfg.functional_m
        return preset("aniso_diag", m1=m1, m2=m2, m3=m3)
    return preset(cfg.functional)


def build_kernel(cfg: RunConfig, grid: GridSpec) -> SmearKernel:
    return SmearKernel.for_grid(grid, cfg.kernel_ratio)


def exact_energy(cfg: RunConfig, shape: AnalyticShape) -> float | None:
    """Closed-form value of the configured functional, when one is known."""
    name = cfg.functional
    if name == "zero":
        return 0.0
    if name == "area":
        return shape.exact_area
    if name == "gauss":
        return shape.exact_total_G
    base = shape.base if isinstance(shape, Perturbed) else shape
    if not isinstance(base, Sphere):
        return None
    r = base.radius
    area = 4.0 * math.pi * r * r
    h = 2.0 / r
    if name == "willmore":
        return h * h * area
    if name == "helfrich":
        return (h - cfg.functional_c0) ** 2 * area
    if name == "mean_linear":
        return h * area
    if name == "willmore_gauss":
        return (h * h + 1.0 / (r * r)) * area
    return None


def _output_path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.output_dir, name)


def _vtk_path(cfg: RunConfig, field: str, step: int) -> str:
    return os.path.join(cfg.output_vtk, vtk_filename(cfg.run, field, step))


def _sample(cfg: RunConfig) -> tuple[GridSpec, AnalyticShape, SmearKernel, LevelSet]:
    grid = build_grid(cfg)
    shape = build_shape(cfg)
    kernel = build_kernel(cfg, grid)
    ls = sample(shape, grid, epsilon=kernel.epsilon)
    log.info("网格 %s, h=%g, eps=%g, 形状 %s", grid.dims, grid.h, kernel.epsilon, cfg.shape)
    return grid, shape, kernel, ls


# commands


def cmd_integrate(cfg: RunConfig) -> int:
    _, shape, kernel, ls = _sample(cfg)
    spec = build_functional(cfg)
    value = energy(ls, spec, kernel)
    exact = exact_energy(cfg, shape)
    if exact is None:
        print(f"J={value:.6g}")
    elif abs(exact) > 0:
        print(f"J={value:.6g} exact={exact:.6g} rel={abs(value - exact) / abs(exact):.1e}")
    else:
        print(f"J={value:.6g} exact={exact:.6g} abs={abs(value - exact):.1e}")
    return EXIT_OK


def cmd_gradient(cfg: RunConfig) -> int:
    grid, _, kernel, ls = _sample(cfg)
    spec = build_functional(cfg)
    if spec.requires_distance and not ls.is_distance:
        ls = redistance(ls)
    grad = shape_gradient(ls, spec, geometry_bundle(ls))
    print(f"functional={spec.name} max|d|={grad.max_abs():.6g}")
    for key, gap in grad.diagnostics.items():
        print(f"{key}={gap:.4g}")
    if cfg.output_vtk:
        write_vtk_scalar(grad.field, "gradient", _vtk_path(cfg, "gradient", 0))

    ok = True
    print(f"{'velocity':<12} {'predicted':>14} {'fd':>14} {'error':>10}  status")
    for name in cfg.velocities:
        vel = named_velocity(name)
        cmp = compare_with_oracle(ls, spec, vel, kernel)
        agrees = cmp.agrees(ORACLE_TOL)
        ok = ok and agrees
        status = "pass" if agrees else "FAIL"
        print(f"{name:<12} {cmp.predicted:>14.6g} {cmp.fd:>14.6g} {cmp.error:>10.3g}  {status}")
    log.info("网格 %s 上的梯度检查完成", grid.dims)
    return EXIT_OK if ok else EXIT_FAILED


def cmd_validate(cfg: RunConfig) -> int:
    grid = build_grid(cfg)
    shape = build_shape(cfg)
    table = validate(shape, grid, cfg.kernel_ratio, refine=cfg.validate_refine)
    print(table.format())
    failed = table.failed()
    if failed:
        print(f"{len(failed)} check(s) failed")
        return EXIT_FAILED
    return EXIT_OK


def cmd_flow(cfg: RunConfig) -> int:
    grid, shape, kernel, ls = _sample(cfg)
    spec = build_functional(cfg)
    redistance_every = cfg.flow_redistance_every
    if (spec.requires_distance or cfg.flow_scheme == "semi_implicit") and redistance_every != 1:
        log.warning("%s/%s 需要每步重新距离化，flow.redistance_every 已改为 1", spec.name, cfg.flow_scheme)
        redistance_every = 1
    is_sphere = isinstance(shape, Sphere)
    flow_cfg = FlowConfig(
        dt_safety=cfg.flow_dt_safety,
        redistance_every=redistance_every,
        max_steps=cfg.flow_steps,
        stop_grad_norm=cfg.flow_stop_grad_norm,
        stop_radius=STOP_RADIUS_CELLS * grid.h if is_sphere else 0.0,
        aux="radius" if is_sphere else "total_gauss",
        scheme=cfg.flow_scheme,
        dt_scale=cfg.flow_dt_scale,
    )
    save_config(cfg, _output_path(cfg, f"{cfg.run}_config.txt"))

    def dump(row: TrajectoryRow, current: LevelSet, grad) -> None:
        if not cfg.output_vtk or row.step % cfg.output_vtk_stride:
            return
        write_vtk_scalar(current.phi, "phi", _vtk_path(cfg, "phi", row.step))
        write_vtk_scalar(grad.field, "gradient", _vtk_path(cfg, "gradient", row.step))

    csv_path = cfg.output_csv or _output_path(cfg, f"{cfg.run}_trajectory.csv")
    try:
        result = gradient_flow(ls, spec, kernel, flow_cfg, on_row=dump)
    except NonMonotoneEnergy as e:
        if e.trajectory is not None:
            write_trajectory_csv(e.trajectory.rows(), csv_path)
        raise
    write_trajectory_csv(result.trajectory.rows(), csv_path)
    last = result.trajectory.last
    print(
        f"steps={last.step} time={last.time:.6g} energy={last.energy:.6g} "
        f"aux={last.aux:.6g} stop={result.stop_reason}"
    )
    return EXIT_OK


COMMANDS = {
    "integrate": cmd_integrate,
    "gradient": cmd_gradient,
    "validate": cmd_validate,
    "flow": cmd_flow,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoflow", description="Level-set geometry checks and gradient flows.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=level, format=LOG_FORMAT, handlers=[logging.StreamHandler(sys.stderr)])
    root.setLevel(level)


def apply_threads() -> None:
    count = threads_from_env()
    if count > 0:
        set_workers(count)
        set_threads(count)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        apply_threads()
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](cfg)
    except GeoflowError as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR
    except ValueError:
        log.exception("命令 %s 执行失败", args.command)
        return EXIT_ERROR
