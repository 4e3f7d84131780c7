"""Loss terms against hand-computed oracles, the Boltzmann density, and
gradient sanity on the aggregate objective."""

import numpy as np
import pytest

from lensmc.core import ElementKind, LensSystem, SurfaceSpec
from lensmc.loss import (LossWeights, boltzmann, calibrate_temperature,
                         focal_loss, grad_total_loss, spot_loss,
                         thickness_loss, thin_image_point, throughput_loss,
                         total_loss)
from lensmc.trace import DirectionGrid, sample_cone

from conftest import biconvex_singlet, random_lens


def _grid_towards(points, origin):
    """A grid whose rays from ``origin`` pass through given lens-plane
    points, with unit weights."""
    dirs = []
    for p in points:
        v = np.asarray(p, dtype=float) - origin
        dirs.append(v / np.linalg.norm(v))
    return DirectionGrid(cone_axis=np.array([0.0, 0.0, 1.0]),
                         cone_half_angle=0.1,
                         directions=np.stack(dirs),
                         weights=np.ones(len(dirs)))


# ---------------------------------------------------------------------------
# spot
# ---------------------------------------------------------------------------

def test_spot_loss_hand_value():
    # Empty lens: rays through (0, +-1, 0) continue to the sensor at z=0,
    # hitting y = +-1.  Centroid 0, weights 0.5 each: spread = 1.0.
    lens = LensSystem((), (), 500.0)
    origin = np.array([0.0, 0.0, -500.0])
    grid = _grid_towards([(0.0, 1.0, 0.0), (0.0, -1.0, 0.0)], origin)
    grid = DirectionGrid(cone_axis=grid.cone_axis,
                         cone_half_angle=grid.cone_half_angle,
                         directions=grid.directions,
                         weights=np.array([0.5, 0.5]))
    assert spot_loss(lens, origin, grid) == pytest.approx(1.0, abs=1e-12)


def test_spot_loss_zero_for_single_ray():
    lens = biconvex_singlet()
    origin = np.array([0.0, 0.0, -500.0])
    grid = sample_cone(origin, lens, 1)
    assert spot_loss(lens, origin, grid) == pytest.approx(0.0, abs=1e-18)


def test_spot_loss_empty_valid_set_is_zero():
    lens = biconvex_singlet(extent=0.001)
    origin = np.array([0.0, 15.0, -500.0])
    grid = sample_cone(origin, biconvex_singlet(), 16)
    assert spot_loss(lens, origin, grid) == 0.0


def test_spot_loss_shrinks_near_focus():
    # A focused singlet has a smaller spot than a defocused one (spherical
    # aberration keeps the focused spot finite).
    # Object at 500 mm, f = 200 mm: Gaussian image near 333 mm.
    good = biconvex_singlet(sensor_gap=333.0)
    bad = biconvex_singlet(sensor_gap=80.0)
    origin = np.array([0.0, 0.0, -500.0])
    grid = sample_cone(origin, good, 32)
    assert spot_loss(good, origin, grid) < 0.05 * spot_loss(bad, origin, grid)


# ---------------------------------------------------------------------------
# throughput
# ---------------------------------------------------------------------------

def test_throughput_loss_all_valid():
    lens = LensSystem((), (), 500.0)
    origin = np.array([0.0, 0.0, -500.0])
    grid = sample_cone(origin, lens, 16, half_angle=0.02)
    t_total = float(grid.weights.sum())
    assert throughput_loss(lens, origin, grid, t_total) \
        == pytest.approx(0.0, abs=1e-12)
    # Half the required solid angle present: deficit 0.5.
    assert throughput_loss(lens, origin, grid, 2 * t_total) \
        == pytest.approx(0.5, rel=1e-12)


def test_throughput_loss_none_valid():
    lens = biconvex_singlet(extent=0.001)
    origin = np.array([0.0, 15.0, -500.0])
    grid = sample_cone(origin, biconvex_singlet(), 16)
    assert throughput_loss(lens, origin, grid, 0.05) == 1.0


def test_throughput_loss_clamped_at_zero():
    lens = LensSystem((), (), 500.0)
    origin = np.array([0.0, 0.0, -500.0])
    grid = sample_cone(origin, lens, 16, half_angle=0.02)
    tiny_t0 = 0.5 * float(grid.weights.sum())
    assert throughput_loss(lens, origin, grid, tiny_t0) == 0.0


# ---------------------------------------------------------------------------
# focal / thin-lens reference
# ---------------------------------------------------------------------------

def test_thin_image_point_unit_magnification():
    # Object at 2f from a thin lens images at 2f with magnification -1.
    lens = LensSystem(
        (SurfaceSpec(0.004, 10.0, 1e-9, 1.5),
         SurfaceSpec(-0.004, 10.0, 500.0, 1.0)),
        (ElementKind.SINGLET,), 500.0)
    f = 1.0 / (0.5 * 0.008)   # 250 mm; target at 2f = 500
    target = thin_image_point(lens, np.array([3.0, 0.0, -500.0]), f)
    assert target[0] == pytest.approx(-3.0, rel=1e-6)
    assert target[2] == pytest.approx(lens.sensor_z)


def test_thin_image_point_magnification_formula():
    lens = biconvex_singlet()
    f = 200.0
    x = np.array([2.0, -1.0, -500.0])
    target = thin_image_point(lens, x, f)
    # s_o ~ 500 (principal plane ~ first vertex), m = -f/(s_o - f).
    m = target[0] / x[0]
    assert m == pytest.approx(-f / (500.0 - f), rel=1e-2)
    assert target[1] / x[1] == pytest.approx(m, rel=1e-9)


def test_focal_loss_zero_on_axis_focused():
    lens = biconvex_singlet()
    origin = np.array([0.0, 0.0, -500.0])
    grid = sample_cone(origin, lens, 16)
    # On-axis: centroid and target both sit on the axis.
    assert focal_loss(lens, origin, grid, 200.0) < 1e-6


def test_focal_loss_empty_valid_set_is_zero():
    lens = biconvex_singlet(extent=0.001)
    origin = np.array([0.0, 15.0, -500.0])
    grid = sample_cone(origin, biconvex_singlet(), 16)
    assert focal_loss(lens, origin, grid, 200.0) == 0.0


# ---------------------------------------------------------------------------
# thickness
# ---------------------------------------------------------------------------

def test_thickness_loss_hand_value():
    lens = biconvex_singlet(thickness=0.5)
    assert thickness_loss(lens, 1.0) == pytest.approx(0.25, abs=1e-15)
    assert thickness_loss(lens, 0.5) == 0.0


def test_thickness_loss_sums_over_elements():
    s = lambda g: SurfaceSpec(0.0, 10.0, g, 1.5)
    a = lambda g: SurfaceSpec(0.0, 10.0, g, 1.0)
    lens = LensSystem((s(0.5), a(10.0), s(0.8), a(50.0)),
                      (ElementKind.SINGLET, ElementKind.SINGLET), 500.0)
    assert thickness_loss(lens, 1.0) == pytest.approx(0.25 + 0.04, abs=1e-15)


# ---------------------------------------------------------------------------
# aggregate
# ---------------------------------------------------------------------------

def test_total_loss_recombines_terms(rng):
    lens = random_lens(rng, n_elements=2)
    cfg = LossWeights(w_spot=1.0, w_throughput=0.5, w_focal=0.01,
                      w_thickness=0.1, t0=1e-3, focal_target=50.0,
                      field_points=((0.0, 0.0, -500.0), (5.0, 0.0, -500.0)),
                      rays_per_point=16)
    bd = total_loss(lens, cfg)
    recombined = (1.0 * sum(bd.spot) + 0.5 * sum(bd.throughput)
                  + 0.01 * sum(bd.focal) + 0.1 * bd.thickness)
    assert bd.total == pytest.approx(recombined, abs=1e-12)


def test_total_loss_deterministic(rng):
    lens = random_lens(rng)
    cfg = LossWeights(rays_per_point=16)
    assert total_loss(lens, cfg).total == total_loss(lens, cfg).total


def test_grad_total_loss_matches_fd():
    lens = biconvex_singlet(curvature=0.004, sensor_gap=150.0)
    cfg = LossWeights(w_spot=1.0, w_throughput=0.5, w_focal=0.01,
                      w_thickness=0.1, t0=1e-3, focal_target=200.0,
                      field_points=((0.0, 0.0, -500.0), (3.0, 0.0, -500.0)),
                      rays_per_point=24)
    from lensmc.core import from_vector, to_vector
    from lensmc.loss import build_grids, smooth_total
    grids = build_grids(lens, cfg)
    g = grad_total_loss(lens, cfg, grids)
    theta = to_vector(lens)
    h = 1e-5
    for j in (0, 2, 3, 4, 6):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        lp = smooth_total(from_vector(tp, lens.elements, lens.target_z),
                          cfg, grids)
        lm = smooth_total(from_vector(tm, lens.elements, lens.target_z),
                          cfg, grids)
        fd = (lp - lm) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-3, abs=1e-7)


def test_grad_total_loss_descent_direction():
    lens = biconvex_singlet(sensor_gap=150.0)   # defocused
    cfg = LossWeights(rays_per_point=24)
    from lensmc.core import clamp_theta, from_vector, to_vector
    g = grad_total_loss(lens, cfg)
    theta = to_vector(lens)
    stepped = theta - 1e-2 * g / max(np.linalg.norm(g), 1.0)
    stepped = from_vector(clamp_theta(stepped, lens.elements),
                          lens.elements, lens.target_z)
    assert total_loss(stepped, cfg).total < total_loss(lens, cfg).total


# ---------------------------------------------------------------------------
# Boltzmann density and temperature calibration
# ---------------------------------------------------------------------------

def test_boltzmann_values():
    assert boltzmann(0.0, 1.0) == 1.0
    assert boltzmann(1.0, 1.0) == pytest.approx(np.exp(-1.0), rel=1e-15)
    assert boltzmann(3.0, 1.5) == pytest.approx(np.exp(-2.0), rel=1e-15)
    assert boltzmann(1e9, 1.0) == 0.0   # underflow guard


def test_boltzmann_rejects_bad_temperature():
    with pytest.raises(ValueError):
        boltzmann(1.0, 0.0)


def test_calibrate_temperature_half_density():
    for l0 in (0.3, 1.0, 42.0):
        t = calibrate_temperature(l0)
        assert boltzmann(l0, t) == pytest.approx(0.5, rel=1e-12)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(w_spot=-1.0)
    with pytest.raises(ValueError):
        LossWeights(t0=0.0)
    with pytest.raises(ValueError):
        LossWeights(field_points=())
