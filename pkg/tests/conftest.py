"""Shared helpers: seeded random-but-valid lens generation."""

import numpy as np
import pytest

from lensmc.core import ElementKind, LensSystem, SurfaceSpec


def random_lens(rng, n_elements=None, target_z=500.0):
    """A random valid lens with moderate curvatures and sane gaps."""
    if n_elements is None:
        n_elements = int(rng.integers(1, 4))
    kinds = tuple(ElementKind.SINGLET if rng.uniform() < 0.7
                  else ElementKind.CEMENTED_DOUBLET
                  for _ in range(n_elements))
    surfaces = []
    for kind in kinds:
        extent = rng.uniform(6.0, 14.0)
        for s in range(kind.n_surfaces):
            last = s == kind.n_surfaces - 1
            cap = 0.9 / extent
            curvature = float(np.clip(rng.normal(0.0, 0.01), -cap, cap))
            gap = (rng.uniform(1.0, 4.0) if not last
                   else rng.uniform(20.0, 80.0))
            index = 1.0 if last else rng.uniform(1.45, 1.7)
            surfaces.append(SurfaceSpec(curvature, extent, gap, index))
    return LensSystem(tuple(surfaces), kinds, target_z)


def biconvex_singlet(curvature=0.005, extent=10.0, thickness=2.0,
                     index=1.5, sensor_gap=200.0, target_z=500.0):
    return LensSystem(
        (SurfaceSpec(curvature, extent, thickness, index),
         SurfaceSpec(-curvature, extent, sensor_gap, 1.0)),
        (ElementKind.SINGLET,), target_z)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
