"""Starting-point lens designs and default run settings.

Four simple primes (28, 50, 105, 135 mm) built from thin-lens formulas:
biconvex crown singlets whose curvatures come from the lensmaker
equation, refocused onto the sensor with the exact first-order matrices.
They are deliberately unsophisticated — the optimizer's job is to improve
them.  Two of the four (the fast wide-angle 28 and the slow telephoto
135) start with apertures smaller than the sampled beam footprint, so
they are throughput-limited; the other two start sharpness-limited.
"""

from __future__ import annotations

import numpy as np

from . import loss as loss_mod
from . import restore
from .core import ElementKind, LensSystem, SurfaceSpec, to_vector
from .paraxial import bare_matrix

CROWN_INDEX = 1.5168
DEFAULT_TARGET_Z = 500.0


def focus_sensor_gap(lens: LensSystem) -> LensSystem:
    """Set the last gap so an axial object point images onto the sensor
    (first-order); leaves the rest of the lens untouched."""
    m = bare_matrix(lens)
    phi = m[0, 0] + m[0, 1] * lens.target_z
    y = m[1, 0] + m[1, 1] * lens.target_z
    if phi == 0:
        raise ValueError("system is afocal for this object distance")
    gap = float(np.real(-y / phi))
    if gap <= 0:
        raise ValueError("first-order image lies before the last vertex")
    last = lens.surfaces[-1]
    surfaces = lens.surfaces[:-1] + (
        SurfaceSpec(last.curvature, last.extent, gap, last.index_after),)
    return LensSystem(surfaces, lens.elements, lens.target_z)


def singlet_prime(focal_mm: float, extent: float = 10.0,
                  thickness: float = 3.0,
                  target_z: float = DEFAULT_TARGET_Z) -> LensSystem:
    """Symmetric biconvex crown singlet of the given focal length,
    focused on the sensor for an object at the target plane."""
    # Lensmaker (thin): 1/f = (n-1) * (k1 - k2) with k2 = -k1.
    k = 1.0 / (2.0 * (CROWN_INDEX - 1.0) * focal_mm)
    lens = LensSystem(
        (SurfaceSpec(k, extent, thickness, CROWN_INDEX),
         SurfaceSpec(-k, extent, focal_mm, 1.0)),
        (ElementKind.SINGLET,), target_z)
    return focus_sensor_gap(lens)


def preset(name: str) -> LensSystem:
    """A named starting design: 'prime28', 'prime50', 'prime105',
    'prime135'."""
    table = {
        "prime28": lambda: singlet_prime(28.0, extent=8.0, thickness=2.5),
        "prime50": lambda: singlet_prime(50.0, extent=10.0, thickness=3.0),
        "prime105": lambda: singlet_prime(105.0, extent=12.0, thickness=3.5),
        "prime135": lambda: singlet_prime(135.0, extent=8.0, thickness=4.0),
    }
    if name not in table:
        raise KeyError(f"unknown preset {name!r}; "
                       f"choose from {sorted(table)}")
    return table[name]()


PRESET_NAMES = ("prime28", "prime50", "prime105", "prime135")


def default_loss_weights(focal_mm: float = 50.0,
                         target_z: float = DEFAULT_TARGET_Z,
                         rays_per_point: int = 32,
                         t0: float = 1e-3) -> loss_mod.LossWeights:
    """Loss settings used by the run subcommands: spot plus throughput
    plus a thin-lens focal term and a thickness floor.  The throughput
    normalizer defaults to roughly the solid angle a 10 mm semi-aperture
    subtends from half a meter, so the deficit term stays responsive."""
    return loss_mod.LossWeights(
        w_spot=1.0, w_throughput=0.5, w_focal=0.01, w_thickness=0.1,
        t0=t0, focal_target=focal_mm, rays_per_point=rays_per_point,
        field_points=((0.0, 0.0, -target_z),
                      (5.0, 0.0, -target_z),
                      (10.0, 0.0, -target_z)))


def default_restore_config(initial_loss: float) -> restore.RestoreConfig:
    """Sampler defaults with the temperature calibrated so the starting
    design sits at density one half."""
    return restore.RestoreConfig(
        temperature=loss_mod.calibrate_temperature(initial_loss))
