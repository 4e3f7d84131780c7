"""Design losses, their gradients, and the Boltzmann target density.

Four terms: variance-based spot size, solid-angle throughput deficit,
thin-lens focal conformity, and an element thickness penalty; the total is
their weighted sum aggregated over field points.

Reported values use the hard validity indicator.  The gradient replaces
the throughput indicator with a sigmoid relaxation of each extent clip
(the indicator itself has zero derivative almost everywhere); spot and
focal terms are differentiated with the validity set frozen.  Derivatives
flow through a single complex-step evaluation of the traced batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import paraxial
from .core import LensSystem, to_vector
from .trace import CSTEP, DirectionGrid, sample_cone, trace_batch

FULL_FRAME_SEMI_DIAGONAL = 21.635  # mm, 35 mm full-frame sensor


class FocalConfigurationError(ValueError):
    """The thin-lens reference image lies at infinity."""


@dataclass(frozen=True)
class LossWeights:
    """Loss weights, reference quantities, and the ray sampling budget."""

    w_spot: float = 1.0
    w_throughput: float = 0.0
    w_focal: float = 0.0
    w_thickness: float = 0.0
    d_min: float = 1.0            # mm, minimum element thickness
    t0: float = 0.05              # sr, throughput normalizer
    focal_target: float = 50.0    # mm
    field_points: tuple = ((0.0, 0.0, -500.0),)
    rays_per_point: int = 64
    cone_half_angle: float | None = None
    sigma_clip: float = 0.05      # mm, extent relaxation width

    def __post_init__(self):
        for name in ("w_spot", "w_throughput", "w_focal", "w_thickness"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.t0 > 0:
            raise ValueError("t0 must be > 0")
        if self.focal_target == 0:
            raise ValueError("focal_target must be nonzero")
        if len(self.field_points) < 1:
            raise ValueError("at least one field point required")
        object.__setattr__(self, "field_points",
                           tuple(tuple(float(v) for v in p)
                                 for p in self.field_points))


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term loss values; ``total`` is their weighted sum."""

    spot: tuple
    throughput: tuple
    focal: tuple
    thickness: float
    total: float

    def as_dict(self) -> dict:
        return {
            "L_spot": sum(self.spot),
            "L_throughput": sum(self.throughput),
            "L_focal": sum(self.focal),
            "L_thickness": self.thickness,
            "L_total": self.total,
        }


def boltzmann(loss_total: float, temperature: float) -> float:
    """Positive target density exp(-L/T), monotone decreasing in L."""
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    x = loss_total / temperature
    if x > 700:
        return 0.0
    return float(np.exp(-x))


def calibrate_temperature(initial_loss: float) -> float:
    """Temperature putting the initial design at density 0.5."""
    return max(initial_loss, 1e-12) / np.log(2.0)


# ---------------------------------------------------------------------------
# Individual loss terms (operate on an explicit direction grid)
# ---------------------------------------------------------------------------

def _weighted_moments(hits, weights, valid):
    w = weights[valid]
    if w.size == 0 or w.sum() == 0:
        return None, 0.0
    x = hits[valid]
    centroid = (w[:, None] * x).sum(axis=0) / w.sum()
    spread = np.sum(w * np.sum((x - centroid) ** 2, axis=1))
    return centroid, spread


def spot_loss(lens: LensSystem, x0, grid: DirectionGrid) -> float:
    """Solid-angle-weighted variance of valid sensor hits [mm^2 sr]."""
    origins = np.broadcast_to(np.asarray(x0, dtype=float),
                              (grid.directions.shape[0], 3))
    res = trace_batch(lens, origins, grid.directions)
    _, spread = _weighted_moments(res.hits, grid.weights, res.valid)
    return float(np.real(spread))


def throughput_loss(lens: LensSystem, x0, grid: DirectionGrid,
                    t0: float) -> float:
    """Deficit of valid solid angle against t0, clamped to [0, 1]."""
    origins = np.broadcast_to(np.asarray(x0, dtype=float),
                              (grid.directions.shape[0], 3))
    res = trace_batch(lens, origins, grid.directions)
    return max(0.0, 1.0 - float(grid.weights[res.valid].sum()) / t0)


def thin_image_point(lens_or_theta, x0, focal: float):
    """Sensor point predicted by the Gaussian formula for an ideal thin
    lens of the target focal length, placed at the front principal plane."""
    if isinstance(lens_or_theta, LensSystem):
        theta = to_vector(lens_or_theta)
        target_z = lens_or_theta.target_z
    else:
        theta, target_z = lens_or_theta
    m = paraxial._product(paraxial._factors(theta, include_sensor_gap=False))
    a, b = m[0, 0], m[0, 1]
    z_h1 = (a - 1.0) / b if np.real(b) != 0.0 else 0.0
    s_o = z_h1 + target_z
    if abs(np.real(s_o - focal)) < 1e-9:
        raise FocalConfigurationError("thin-lens image at infinity")
    mag = -focal / (s_o - focal)  # = -s_i/s_o
    x0 = np.asarray(x0)
    z_sensor = sum(theta[4 * k + 2] for k in range(theta.size // 4))
    return np.array([mag * x0[0], mag * x0[1], z_sensor])


def focal_loss(lens: LensSystem, x0, grid: DirectionGrid,
               focal: float) -> float:
    """Squared distance of the valid-hit centroid from the thin-lens
    prediction [mm^2]; zero when no rays are valid."""
    origins = np.broadcast_to(np.asarray(x0, dtype=float),
                              (grid.directions.shape[0], 3))
    res = trace_batch(lens, origins, grid.directions)
    centroid, _ = _weighted_moments(res.hits, grid.weights, res.valid)
    if centroid is None:
        return 0.0
    target = thin_image_point(lens, x0, focal)
    return float(np.real(np.sum((centroid - target) ** 2)))


def thickness_loss(lens: LensSystem, d_min: float) -> float:
    """Quadratic penalty on elements thinner than d_min [mm^2]."""
    total = 0.0
    for e in range(len(lens.elements)):
        gap = d_min - lens.element_thickness(e)
        if gap > 0:
            total += gap * gap
    return total


# ---------------------------------------------------------------------------
# Aggregate objective and gradient
# ---------------------------------------------------------------------------

def build_grids(lens: LensSystem, cfg: LossWeights) -> list[DirectionGrid]:
    """One deterministic direction grid per field point (frozen during
    any single gradient evaluation)."""
    return [sample_cone(p, lens, cfg.rays_per_point,
                        half_angle=cfg.cone_half_angle)
            for p in cfg.field_points]


def _evaluate(theta, target_z, cfg: LossWeights, grids, elements):
    """All loss terms at once; theta may be complex (complex-step).

    Returns (hard per-point terms as real floats, smooth total as a
    possibly-complex scalar whose throughput part uses the sigmoid
    relaxation).
    """
    n_pts = len(cfg.field_points)
    counts = [g.directions.shape[0] for g in grids]
    origins = np.concatenate([
        np.broadcast_to(np.asarray(p, dtype=float), (c, 3))
        for p, c in zip(cfg.field_points, counts)])
    dirs = np.concatenate([g.directions for g in grids])
    res = trace_batch(theta, origins, dirs, soft_extent=True,
                      sigma_clip=cfg.sigma_clip)

    spot, thr_hard, thr_soft, focal = [], [], [], []
    start = 0
    smooth = 0.0
    for m in range(n_pts):
        sl = slice(start, start + counts[m])
        start += counts[m]
        w = grids[m].weights
        hits = res.hits[sl]
        valid = res.valid[sl]
        soft = res.soft[sl]

        centroid, spread = _weighted_moments(hits, w, valid)
        spot.append(float(np.real(spread)))
        s_term = cfg.w_spot * spread

        t_soft = 1.0 - np.sum(w * soft) / cfg.t0
        thr_soft.append(float(np.real(t_soft)))
        thr_hard.append(max(0.0, 1.0 - float(w[valid].sum()) / cfg.t0))
        s_term = s_term + cfg.w_throughput * t_soft

        if cfg.w_focal > 0 and centroid is not None:
            target = thin_image_point((theta, target_z),
                                      cfg.field_points[m], cfg.focal_target)
            f_val = np.sum((centroid - target) ** 2)
        else:
            f_val = 0.0
        focal.append(float(np.real(f_val)))
        s_term = s_term + cfg.w_focal * f_val
        smooth = smooth + s_term

    # Thickness from per-element internal gaps (smooth where active).
    thick = 0.0
    start_s = 0
    for kind in elements:
        stop_s = start_s + kind.n_surfaces
        t_e = sum(theta[4 * s + 2] for s in range(start_s, stop_s - 1))
        deficit = cfg.d_min - t_e
        if np.real(deficit) > 0:
            thick = thick + deficit * deficit
        start_s = stop_s
    smooth = smooth + cfg.w_thickness * thick

    return spot, thr_hard, thr_soft, focal, float(np.real(thick)), smooth


def total_loss(lens: LensSystem, cfg: LossWeights,
               grids=None) -> LossBreakdown:
    """Weighted total with the hard validity indicator everywhere."""
    grids = grids or build_grids(lens, cfg)
    theta = to_vector(lens)
    spot, thr_hard, _, focal, thick, _ = _evaluate(
        theta, lens.target_z, cfg, grids, lens.elements)
    total = (cfg.w_spot * sum(spot) + cfg.w_throughput * sum(thr_hard)
             + cfg.w_focal * sum(focal) + cfg.w_thickness * thick)
    return LossBreakdown(tuple(spot), tuple(thr_hard), tuple(focal),
                         thick, float(total))


def smooth_total(lens: LensSystem, cfg: LossWeights, grids=None) -> float:
    """The objective actually differentiated: hard spot/focal terms plus
    the sigmoid-relaxed throughput term (no clamp)."""
    grids = grids or build_grids(lens, cfg)
    theta = to_vector(lens)
    return float(np.real(_evaluate(theta, lens.target_z, cfg, grids,
                                   lens.elements)[5]))


def grad_total_loss(lens: LensSystem, cfg: LossWeights,
                    grids=None) -> np.ndarray:
    """d(smooth total)/d(theta) by complex step, validity set frozen."""
    grids = grids or build_grids(lens, cfg)
    theta = to_vector(lens)
    grad = np.zeros(theta.size)
    for j in range(theta.size):
        th = theta.astype(complex)
        th[j] += 1j * CSTEP
        smooth = _evaluate(th, lens.target_z, cfg, grids, lens.elements)[5]
        grad[j] = np.imag(smooth) / CSTEP
    return grad


def default_field_points(lens: LensSystem, cfg: LossWeights, n_points: int = 4,
                         sensor_semi_diagonal: float = FULL_FRAME_SEMI_DIAGONAL):
    """Field points whose thin-lens sensor projections are uniformly
    spaced from the axis to the sensor corner."""
    origin = np.array([1.0, 0.0, -lens.target_z])
    image = thin_image_point(lens, origin, cfg.focal_target)
    mag = abs(image[0]) if abs(image[0]) > 1e-9 else 1.0
    radii = np.linspace(0.0, sensor_semi_diagonal, n_points)
    return tuple((float(r / mag), 0.0, -lens.target_z) for r in radii)
