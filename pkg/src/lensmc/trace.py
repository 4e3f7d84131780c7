"""Sequential ray tracing through a lens, with parameter derivatives.

The tracer is written once, over arrays that may be real or complex.  All
branch decisions (root selection, forward checks, extent clips, total
internal reflection) are taken on real parts, so evaluating the same code
with a purely imaginary parameter perturbation leaves every branch
unchanged and yields the exact directional derivative via the complex-step
rule: df/dx = Im f(x + ih) / h with h far below float precision.  This is
also how the validity set stays frozen during a gradient evaluation.

Sphere intersections use the curvature form kappa*|q|^2 - 2 q_z = 0 of the
surface (q relative to the vertex), which degrades gracefully to the plane
as kappa -> 0 and never divides by the curvature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CURVATURE, EXTENT, GAP, INDEX, BlockReason, LensSystem,
                   Ray, TraceOutcome, to_vector)

CSTEP = 1e-30

BLOCK_NONE = 0
BLOCK_MISSED = 1
BLOCK_EXTENT = 2
BLOCK_TIR = 3

_REASONS = {
    BLOCK_MISSED: BlockReason.MISSED_SURFACE,
    BLOCK_EXTENT: BlockReason.EXCEEDED_EXTENT,
    BLOCK_TIR: BlockReason.TOTAL_INTERNAL_REFLECTION,
}


@dataclass
class TraceResult:
    """Batched trace output: sensor hits, block codes, soft extent weights.

    ``hits`` rows are meaningful only where ``reason == BLOCK_NONE`` (or,
    in soft mode, also where the only violation was an extent clip).
    ``soft`` holds the product of sigmoid extent factors used by the
    differentiable throughput relaxation.
    """

    hits: np.ndarray
    reason: np.ndarray
    soft: np.ndarray
    path: list | None = None

    @property
    def valid(self) -> np.ndarray:
        return self.reason == BLOCK_NONE


@dataclass(frozen=True)
class DirectionGrid:
    """Deterministic stratified directions covering a cone, with solid
    angle weights (sums to 2*pi*(1 - cos(half_angle)))."""

    cone_axis: np.ndarray
    cone_half_angle: float
    directions: np.ndarray
    weights: np.ndarray


def _sigmoid(x):
    # Complex-safe logistic; far from the transition the derivative is
    # negligible, so saturated arguments are replaced by their clipped
    # real part to keep exp in range.
    xr = np.real(x)
    inside = (xr >= -60) & (xr <= 60)
    safe = np.where(inside, x, np.clip(xr, -60, 60))
    return 1.0 / (1.0 + np.exp(-safe))


def trace_batch(lens: LensSystem | np.ndarray, origins, directions, *,
                soft_extent: bool = False, sigma_clip: float = 0.05,
                collect_path: bool = False) -> TraceResult:
    """Trace many rays through the lens at once.

    ``lens`` may be a LensSystem or a (possibly complex) flat parameter
    vector.  With ``soft_extent`` the extent clip neither blocks rays nor
    sets their reason; instead every surface contributes a sigmoid factor
    to ``soft`` (misses and TIR still zero it).
    """
    if isinstance(lens, LensSystem):
        theta = to_vector(lens)
    else:
        theta = np.asarray(lens)
    origins = np.asarray(origins)
    directions = np.asarray(directions)
    dtype = np.result_type(theta, origins, directions, float)
    o = origins.astype(dtype).copy()
    d = directions.astype(dtype).copy()
    n_rays = o.shape[0]
    n_surf = theta.size // 4

    reason = np.full(n_rays, BLOCK_NONE, dtype=np.int8)
    soft = np.ones(n_rays, dtype=dtype)
    hard_ok = np.ones(n_rays, dtype=bool)   # no block of any kind
    soft_ok = np.ones(n_rays, dtype=bool)   # no miss/TIR (extent tolerated)
    path = [o.copy()] if collect_path else None

    z_vertex = np.zeros((), dtype=dtype)
    n_before = np.ones((), dtype=dtype)
    for k in range(n_surf):
        kappa = theta[4 * k + CURVATURE]
        extent = theta[4 * k + EXTENT]
        gap = theta[4 * k + GAP]
        n_after = theta[4 * k + INDEX]

        tracked = soft_ok if soft_extent else hard_ok
        # Intersection: a t^2 + b t + c = 0 in the curvature form; the
        # citardauq root is the one continuous through kappa = 0.
        q = o.copy()
        q[:, 2] = q[:, 2] - z_vertex
        qd = np.sum(q * d, axis=1)
        qq = np.sum(q * q, axis=1)
        b = 2.0 * (kappa * qd - d[:, 2])
        c = kappa * qq - 2.0 * q[:, 2]
        disc = b * b - 4.0 * kappa * c
        no_root = np.real(disc) < 0.0
        s = np.sqrt(np.where(no_root, 0.0, disc))
        denom = -b + s
        degenerate = np.abs(np.real(denom)) < 1e-14
        t = 2.0 * c / np.where(degenerate, 1.0, denom)
        t = np.where(degenerate, 0.0, t)
        miss = no_root | degenerate | (np.real(t) < -1e-9)

        new_miss = tracked & miss
        reason[hard_ok & miss] = BLOCK_MISSED
        hard_ok = hard_ok & ~miss
        soft_ok = soft_ok & ~miss
        soft = np.where(new_miss, 0.0, soft)
        tracked = tracked & ~miss

        hit = o + t[:, None] * d
        r = np.sqrt(hit[:, 0] ** 2 + hit[:, 1] ** 2)
        over = np.real(r) > np.real(extent)
        reason[hard_ok & over] = BLOCK_EXTENT
        hard_ok = hard_ok & ~over
        if soft_extent:
            soft = np.where(tracked,
                            soft * _sigmoid((extent - r) / sigma_clip), soft)

        # Surface normal kappa*q_hit - z_hat, oriented against the ray.
        qh = hit.copy()
        qh[:, 2] = qh[:, 2] - z_vertex
        nvec = kappa * qh
        nvec[:, 2] = nvec[:, 2] - 1.0
        nnorm = np.sqrt(np.sum(nvec * nvec, axis=1))
        nvec = nvec / nnorm[:, None]

        mu = n_before / n_after
        cosi = -np.sum(d * nvec, axis=1)
        sin2t = mu * mu * (1.0 - cosi * cosi)
        tir = np.real(sin2t) > 1.0
        new_tir = tracked & tir
        reason[hard_ok & tir] = BLOCK_TIR
        hard_ok = hard_ok & ~tir
        soft_ok = soft_ok & ~tir
        soft = np.where(new_tir, 0.0, soft)
        tracked = tracked & ~tir

        cost = np.sqrt(1.0 - np.where(tir, 0.0, sin2t))
        d_new = mu * d + (mu * cosi - cost)[:, None] * nvec
        d_new = d_new / np.sqrt(np.sum(d_new * d_new, axis=1))[:, None]

        o = np.where(tracked[:, None], hit, o)
        d = np.where(tracked[:, None], d_new, d)
        if collect_path:
            path.append(o.copy())
        z_vertex = z_vertex + gap
        n_before = n_after

    # Final propagation to the sensor plane (z = sum of gaps).
    alive = soft_ok if soft_extent else hard_ok
    dz = d[:, 2]
    dz_safe = np.where(np.abs(np.real(dz)) < 1e-14, 1.0, dz)
    t_final = (z_vertex - o[:, 2]) / dz_safe
    hits = np.where(alive[:, None], o + t_final[:, None] * d, o)
    if collect_path:
        path.append(hits.copy())
    return TraceResult(hits=hits, reason=reason, soft=soft, path=path)


def intersect(ray: Ray, surface, vertex_z: float):
    """Nearest forward intersection of one ray with one surface.

    Returns the 3D hit point, or the blocking :class:`BlockReason`
    (MissedSurface / ExceededExtent).
    """
    o = np.asarray(ray.origin, dtype=float)
    d = np.asarray(ray.direction, dtype=float)
    kappa = surface.curvature
    q = o - np.array([0.0, 0.0, vertex_z])
    b = 2.0 * (kappa * np.dot(q, d) - d[2])
    c = kappa * np.dot(q, q) - 2.0 * q[2]
    disc = b * b - 4.0 * kappa * c
    if disc < 0.0:
        return BlockReason.MISSED_SURFACE
    denom = -b + np.sqrt(disc)
    if abs(denom) < 1e-14:
        return BlockReason.MISSED_SURFACE
    t = 2.0 * c / denom
    if t < -1e-9:
        return BlockReason.MISSED_SURFACE
    hit = o + t * d
    if np.hypot(hit[0], hit[1]) > surface.extent:
        return BlockReason.EXCEEDED_EXTENT
    return hit


def refract(direction, normal, n_in: float, n_out: float):
    """Vector Snell refraction; returns the unit refracted direction or
    :data:`BlockReason.TOTAL_INTERNAL_REFLECTION`."""
    d = np.asarray(direction, dtype=float)
    n = np.asarray(normal, dtype=float)
    if np.dot(d, n) > 0:
        n = -n
    mu = n_in / n_out
    cosi = -np.dot(d, n)
    sin2t = mu * mu * (1.0 - cosi * cosi)
    if sin2t > 1.0:
        return BlockReason.TOTAL_INTERNAL_REFLECTION
    out = mu * d + (mu * cosi - np.sqrt(1.0 - sin2t)) * n
    return out / np.linalg.norm(out)


def trace(ray: Ray, lens: LensSystem) -> TraceOutcome:
    """Trace a single ray; never raises, returns a block outcome instead."""
    res = trace_batch(lens, np.array([ray.origin], dtype=float),
                      np.array([ray.direction], dtype=float))
    if res.reason[0] != BLOCK_NONE:
        return TraceOutcome(blocked=_REASONS[int(res.reason[0])])
    return TraceOutcome(position=tuple(float(v) for v in res.hits[0]))


def grad_trace(lens: LensSystem, rays) -> tuple[np.ndarray, np.ndarray]:
    """Jacobian of sensor hit positions with respect to theta.

    Returns (valid_indices, jacobian) where jacobian has shape
    (n_valid, 3, n_params).  The validity set is frozen at the current
    parameters; invalid rays contribute no rows.
    """
    theta = to_vector(lens)
    origins = np.array([r.origin for r in rays], dtype=float)
    dirs = np.array([r.direction for r in rays], dtype=float)
    base = trace_batch(theta, origins, dirs)
    valid = np.nonzero(base.valid)[0]
    jac = np.zeros((valid.size, 3, theta.size))
    for j in range(theta.size):
        th = theta.astype(complex)
        th[j] += 1j * CSTEP
        res = trace_batch(th, origins, dirs)
        jac[:, :, j] = np.imag(res.hits[valid]) / CSTEP
    return valid, jac


def sample_cone(origin, lens: LensSystem, n: int,
                half_angle: float | None = None) -> DirectionGrid:
    """Deterministic stratified direction grid toward the lens entrance.

    The cone axis points from ``origin`` to the first vertex; the default
    half-angle subtends the first surface's extent.  Weights are exact
    band solid angles divided evenly within each ring.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    origin = np.asarray(origin, dtype=float)
    apex_to_vertex = np.array([0.0, 0.0, 0.0]) - origin
    dist = np.linalg.norm(apex_to_vertex)
    if dist <= 0 or apex_to_vertex[2] <= 0:
        raise ValueError("degenerate cone: first surface not ahead of origin")
    axis = apex_to_vertex / dist
    if half_angle is None:
        if lens.n_surfaces == 0:
            raise ValueError("half_angle required for an empty lens")
        half_angle = float(np.arctan2(lens.surfaces[0].extent, dist))
    total_solid = 2.0 * np.pi * (1.0 - np.cos(half_angle))

    if n == 1:
        return DirectionGrid(axis, half_angle, axis[None, :].copy(),
                             np.array([total_solid]))

    n_rings = max(1, int(round(np.sqrt(n / 3.0))))
    base, extra = divmod(n, n_rings)
    counts = [base + (1 if i < extra else 0) for i in range(n_rings)]
    u_lo, u_hi = np.cos(half_angle), 1.0
    edges = np.linspace(u_lo, u_hi, n_rings + 1)
    dirs, weights = [], []
    golden = 0.618033988749895
    for i, cnt in enumerate(counts):
        u = 0.5 * (edges[i] + edges[i + 1])
        band = 2.0 * np.pi * (edges[i + 1] - edges[i])
        sin_t = np.sqrt(max(0.0, 1.0 - u * u))
        offset = 2.0 * np.pi * ((i * golden) % 1.0)
        for j in range(cnt):
            phi = offset + 2.0 * np.pi * (j + 0.5) / cnt
            dirs.append([sin_t * np.cos(phi), sin_t * np.sin(phi), u])
            weights.append(band / cnt)
    local = np.array(dirs)
    weights = np.array(weights)

    # Rotate the +z-aligned grid onto the cone axis.
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, axis)
    s = np.linalg.norm(v)
    cth = float(np.dot(z, axis))
    if s < 1e-15:
        rot = np.eye(3) if cth > 0 else -np.eye(3)
    else:
        vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        rot = np.eye(3) + vx + vx @ vx * ((1 - cth) / (s * s))
    world = local @ rot.T
    world /= np.linalg.norm(world, axis=1)[:, None]
    return DirectionGrid(axis, half_angle, world, weights)
