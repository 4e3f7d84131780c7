"""Deterministic SVG cross-sections of a lens, optionally with rays.

The drawing is a meridional (y-z) section: each surface is a sampled
circular arc, each element a filled outline, the sensor a vertical line,
and traced rays appear as polylines from the target plane to their sensor
hit (or to the surface that blocked them).
"""

from __future__ import annotations

import numpy as np

from .core import LensSystem
from .trace import trace_batch

ARC_SAMPLES = 64


def surface_arc(curvature: float, extent: float, vertex_z: float,
                n_samples: int = ARC_SAMPLES) -> np.ndarray:
    """(z, y) polyline of a spherical cap from -extent to +extent."""
    y = np.linspace(-extent, extent, n_samples)
    z = vertex_z + sag(curvature, y)
    return np.column_stack([z, y])


def sag(curvature: float, y) -> np.ndarray:
    """Axial depth of a sphere of the given curvature at height y."""
    y = np.asarray(y, dtype=float)
    if curvature == 0.0:
        return np.zeros_like(y)
    r = 1.0 / curvature
    return r - np.sign(r) * np.sqrt(r * r - y * y)


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def _polyline(points, stroke, width, fill="none", opacity=1.0) -> str:
    pts = " ".join(f"{_fmt(z)},{_fmt(-y)}" for z, y in points)
    return (f'<polyline points="{pts}" fill="{fill}" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}" opacity="{_fmt(opacity)}"/>')


def _element_outline(lens: LensSystem, start: int, stop: int) -> str:
    """Closed filled path around one element's glass."""
    front = surface_arc(lens.surfaces[start].curvature,
                        lens.surfaces[start].extent, lens.vertex_z(start))
    back = surface_arc(lens.surfaces[stop - 1].curvature,
                       lens.surfaces[stop - 1].extent,
                       lens.vertex_z(stop - 1))
    pts = np.vstack([front, back[::-1]])
    path = " ".join(f"{_fmt(z)},{_fmt(-y)}" for z, y in pts)
    return (f'<polygon points="{path}" fill="#aac6e8" fill-opacity="0.55" '
            f'stroke="#27496d" stroke-width="0.15"/>')


def render_svg(lens: LensSystem, rays=None, margin: float = 5.0) -> str:
    """SVG document for the lens cross-section.

    ``rays`` is an optional (origins, directions) pair; they are traced
    with path collection and drawn as polylines.
    """
    parts = []
    max_extent = max((s.extent for s in lens.surfaces), default=10.0)
    z_lo = -0.2 * lens.target_z if rays is not None else -margin
    z_hi = lens.sensor_z + margin
    y_half = max_extent + margin

    # Element glass and surface arcs.
    start = 0
    for kind in lens.elements:
        stop = start + kind.n_surfaces
        parts.append(_element_outline(lens, start, stop))
        start = stop
    for k, s in enumerate(lens.surfaces):
        parts.append(_polyline(surface_arc(s.curvature, s.extent,
                                           lens.vertex_z(k)),
                               stroke="#27496d", width=0.25))

    # Rays.
    if rays is not None:
        origins, directions = rays
        res = trace_batch(lens, np.asarray(origins, dtype=float),
                          np.asarray(directions, dtype=float),
                          collect_path=True)
        for i in range(len(res.path[0])):
            pts = [(float(np.real(p[i][2])), float(np.real(p[i][1])))
                   for p in res.path]
            color = "#b03030" if not res.valid[i] else "#2a7d2a"
            parts.append(_polyline(pts, stroke=color, width=0.12,
                                   opacity=0.85))

    # Sensor line.
    zs = lens.sensor_z
    parts.append(_polyline([(zs, -y_half + margin / 2),
                            (zs, y_half - margin / 2)],
                           stroke="#111111", width=0.4))

    width = z_hi - z_lo
    height = 2 * y_half
    body = "\n  ".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'viewBox="{_fmt(z_lo)} {_fmt(-y_half)} {_fmt(width)} '
            f'{_fmt(height)}" width="{_fmt(8 * width)}" '
            f'height="{_fmt(8 * height)}">\n  {body}\n</svg>\n')
