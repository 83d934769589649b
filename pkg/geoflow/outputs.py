from __future__ import annotations

import csv
import logging
import os
from typing import Iterable

import numpy as np

from .fields import ScalarField3
from .trajectory import TrajectoryRow

log = logging.getLogger(__name__)


CSV_HEADER: tuple[str, ...] = ("step", "time", "energy", "grad_norm", "aux")
VTK_VALUE_FORMAT = "%.10e"
VTK_VALUES_PER_LINE = 6


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _num(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(rows: Iterable[TrajectoryRow], path: str) -> int:
    """Write flow rows with the ``step,time,energy,grad_norm,aux`` header.

    Returns the number of data rows written.
    """
    _ensure_parent(path)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow((r.step, _num(r.time), _num(r.energy), _num(r.grad_norm), _num(r.aux)))
            count += 1
    log.info("已写入轨迹 %s（%d 行）", path, count)
    return count


def read_trajectory_csv(path: str) -> list[TrajectoryRow]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"unexpected trajectory header in {path}")
        return [
            TrajectoryRow(int(step), float(t), float(e), float(g), float(a))
            for step, t, e, g, a in reader
        ]


def vtk_filename(run: str, field: str, step: int) -> str:
    return f"{run}_{field}_{int(step):06d}.vtk"


def write_vtk_scalar(field: ScalarField3, name: str, path: str) -> None:
    """Legacy ASCII STRUCTURED_POINTS file holding one point-data scalar."""
    spec = field.spec
    nx, ny, nz = spec.dims
    ox, oy, oz = spec.origin
    h = spec.h
    values = field.flat()
    rest = values.size % VTK_VALUES_PER_LINE
    _ensure_parent(path)
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"geoflow {name}\n")
        f.write("ASCII\n")
        f.write("DATASET STRUCTURED_POINTS\n")
        f.write(f"DIMENSIONS {nx} {ny} {nz}\n")
        f.write(f"ORIGIN {_num(ox)} {_num(oy)} {_num(oz)}\n")
        f.write(f"SPACING {_num(h)} {_num(h)} {_num(h)}\n")
        f.write(f"POINT_DATA {values.size}\n")
        f.write(f"SCALARS {name} double 1\n")
        f.write("LOOKUP_TABLE default\n")
        full = values[: values.size - rest]
        if full.size:
            np.savetxt(f, full.reshape(-1, VTK_VALUES_PER_LINE), fmt=VTK_VALUE_FORMAT)
        if rest:
            np.savetxt(f, values[full.size:].reshape(1, -1), fmt=VTK_VALUE_FORMAT)
    log.debug("已写入 VTK %s", path)


def read_vtk_scalar(path: str) -> tuple[tuple[int, int, int], np.ndarray]:
    """Dimensions and Fortran-ordered values of a file written by ``write_vtk_scalar``."""
    with open(path, "r", encoding="ascii") as f:
        lines = f.read().split("\n")
    dims = None
    start = None
    for i, line in enumerate(lines):
        if line.startswith("DIMENSIONS"):
            dims = tuple(int(v) for v in line.split()[1:4])
        if line.startswith("LOOKUP_TABLE"):
            start = i + 1
            break
    if dims is None or start is None:
        raise ValueError(f"not a structured points file: {path}")
    values = np.array(" ".join(lines[start:]).split(), dtype=np.float64)
    return dims, values
