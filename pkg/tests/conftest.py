from __future__ import annotations

import pytest

from geoflow.fields import GridSpec
from geoflow.quadrature import SmearKernel
from geoflow.shapes import Perturbed, Sphere, sample

H32 = 1.0 / 32.0


@pytest.fixture(scope="session")
def grid32() -> GridSpec:
    return GridSpec.from_box((-0.75, -0.75, -0.75), (0.75, 0.75, 0.75), H32)


@pytest.fixture(scope="session")
def kernel32(grid32: GridSpec) -> SmearKernel:
    return SmearKernel.for_grid(grid32, 3.0)


@pytest.fixture(scope="session")
def sphere_ls(grid32: GridSpec):
    return sample(Sphere(0.5), grid32)


@pytest.fixture(scope="session")
def perturbed_sphere_ls(grid32: GridSpec):
    return sample(Perturbed.named(Sphere(0.5), "linear"), grid32)
