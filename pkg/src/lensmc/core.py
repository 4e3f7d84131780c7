"""Domain model for compound lenses.

A lens is an ordered stack of spherical refractive surfaces, grouped into
elements (singlets or cemented doublets), imaging a target plane onto a
sensor plane.  Each surface carries four parameters: curvature, lateral
extent (semi-aperture), axial gap to the next surface (or to the sensor for
the last surface), and the refractive index of the medium after it.  The
whole system maps bijectively to a flat parameter vector of length 4*K.

Conventions (millimeters everywhere):
  * the optical axis is +z, the first surface vertex sits at z = 0;
  * the target plane is at z = -target_z, the sensor plane at the sum of
    all gaps;
  * curvature is positive when the center of curvature lies toward the
    sensor (+z side).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

PARAMS_PER_SURFACE = 4

# Offsets of each field inside a surface's 4-entry slice of theta.
CURVATURE, EXTENT, GAP, INDEX = 0, 1, 2, 3


class LensInvariantError(ValueError):
    """A lens or surface violates a structural invariant."""

    def __init__(self, message: str, surface: int | None = None,
                 field_name: str | None = None):
        self.surface = surface
        self.field_name = field_name
        where = "" if surface is None else f" (surface {surface}"
        if surface is not None:
            where += f", field {field_name})" if field_name else ")"
        super().__init__(message + where)


class ElementKind(Enum):
    SINGLET = "singlet"
    CEMENTED_DOUBLET = "doublet"

    @property
    def n_surfaces(self) -> int:
        return 2 if self is ElementKind.SINGLET else 3


class BlockReason(Enum):
    MISSED_SURFACE = "missed_surface"
    EXCEEDED_EXTENT = "exceeded_extent"
    TOTAL_INTERNAL_REFLECTION = "total_internal_reflection"


@dataclass(frozen=True)
class SurfaceSpec:
    """One refractive surface: curvature [1/mm], semi-aperture [mm],
    gap to the next surface or sensor [mm], refractive index after [-]."""

    curvature: float
    extent: float
    gap: float
    index_after: float

    def __post_init__(self):
        if not self.extent > 0:
            raise LensInvariantError(
                f"extent must be > 0, got {self.extent}", field_name="extent")
        if not self.gap >= 0:
            raise LensInvariantError(
                f"gap must be >= 0, got {self.gap}", field_name="gap")
        if not self.index_after >= 1:
            raise LensInvariantError(
                f"index_after must be >= 1, got {self.index_after}",
                field_name="index_after")
        if not abs(self.curvature) * self.extent < 1:
            raise LensInvariantError(
                f"|curvature|*extent must be < 1 (hemisphere cap), got "
                f"{abs(self.curvature) * self.extent}", field_name="curvature")


@dataclass(frozen=True)
class Ray:
    """Position [mm] and unit direction of a light ray."""

    origin: tuple[float, float, float]
    direction: tuple[float, float, float]

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError(f"ray direction must be unit-norm, got {d}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "direction", tuple(float(v) for v in d))


@dataclass(frozen=True)
class TraceOutcome:
    """Where a traced ray ended up: a sensor hit or a block reason."""

    position: tuple[float, float, float] | None = None
    blocked: BlockReason | None = None

    def __post_init__(self):
        if (self.position is None) == (self.blocked is None):
            raise ValueError("exactly one of position/blocked must be set")

    @property
    def is_valid(self) -> bool:
        return self.position is not None


@dataclass(frozen=True)
class LensSystem:
    """Ordered surfaces plus element grouping and the target plane offset.

    ``target_z`` is the distance from the target plane to the first surface
    vertex; the sensor plane sits at the sum of all gaps.
    """

    surfaces: tuple[SurfaceSpec, ...]
    elements: tuple[ElementKind, ...]
    target_z: float = 500.0

    def __post_init__(self):
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        object.__setattr__(self, "elements", tuple(self.elements))
        if not self.target_z > 0:
            raise LensInvariantError(
                f"target_z must be > 0, got {self.target_z}")
        n_claimed = sum(e.n_surfaces for e in self.elements)
        if n_claimed != len(self.surfaces):
            raise LensInvariantError(
                f"elements claim {n_claimed} surfaces, lens has "
                f"{len(self.surfaces)}")
        if self.surfaces and self.surfaces[-1].index_after != 1.0:
            raise LensInvariantError(
                "last surface must be followed by air (index_after = 1)",
                surface=len(self.surfaces) - 1, field_name="index_after")
        for (start, stop), kind in zip(self.element_spans(), self.elements):
            last = stop - 1
            if self.surfaces[last].index_after != 1.0:
                raise LensInvariantError(
                    "inter-element gap must be air (index_after = 1)",
                    surface=last, field_name="index_after")
            if kind is ElementKind.CEMENTED_DOUBLET:
                for s in range(start, last):
                    if not self.surfaces[s].index_after > 1.0:
                        raise LensInvariantError(
                            "doublet interior must be glass (index_after > 1)",
                            surface=s, field_name="index_after")

    # -- structure ---------------------------------------------------------

    @property
    def n_surfaces(self) -> int:
        return len(self.surfaces)

    @property
    def n_params(self) -> int:
        return PARAMS_PER_SURFACE * len(self.surfaces)

    def element_spans(self) -> list[tuple[int, int]]:
        """Half-open surface index ranges, one per element."""
        spans, start = [], 0
        for kind in self.elements:
            spans.append((start, start + kind.n_surfaces))
            start += kind.n_surfaces
        return spans

    def element_thickness(self, e: int) -> float:
        """Center thickness of element e (sum of its internal gaps)."""
        start, stop = self.element_spans()[e]
        return sum(self.surfaces[s].gap for s in range(start, stop - 1))

    def vertex_z(self, k: int) -> float:
        """Axial position of surface k's vertex."""
        return sum(self.surfaces[i].gap for i in range(k))

    @property
    def sensor_z(self) -> float:
        """Axial position of the sensor plane."""
        return sum(s.gap for s in self.surfaces)


def to_vector(lens: LensSystem) -> np.ndarray:
    """Flatten a lens to theta, ordered entrance -> sensor, per surface
    (curvature, extent, gap, index_after)."""
    theta = np.empty(lens.n_params, dtype=float)
    for k, s in enumerate(lens.surfaces):
        theta[4 * k + CURVATURE] = s.curvature
        theta[4 * k + EXTENT] = s.extent
        theta[4 * k + GAP] = s.gap
        theta[4 * k + INDEX] = s.index_after
    return theta


def from_vector(theta, elements, target_z: float = 500.0) -> LensSystem:
    """Inverse of :func:`to_vector`; validates all invariants.

    Raises :class:`LensInvariantError` on a length mismatch or any
    violated surface/system invariant, naming the offending surface.
    """
    theta = np.asarray(theta, dtype=float)
    elements = tuple(elements)
    n_surf = sum(e.n_surfaces for e in elements)
    if theta.shape != (PARAMS_PER_SURFACE * n_surf,):
        raise LensInvariantError(
            f"theta has length {theta.size}, elements imply "
            f"{PARAMS_PER_SURFACE * n_surf}")
    surfaces = []
    for k in range(n_surf):
        try:
            surfaces.append(SurfaceSpec(
                curvature=float(theta[4 * k + CURVATURE]),
                extent=float(theta[4 * k + EXTENT]),
                gap=float(theta[4 * k + GAP]),
                index_after=float(theta[4 * k + INDEX])))
        except LensInvariantError as err:
            raise LensInvariantError(str(err), surface=k) from err
    return LensSystem(tuple(surfaces), elements, target_z)


def replace_theta(lens: LensSystem, theta) -> LensSystem:
    """Rebuild a lens from a new parameter vector, keeping its topology."""
    return from_vector(theta, lens.elements, lens.target_z)


def clamp_theta(theta, elements,
                min_gap: float = 0.0,
                min_extent: float = 1e-2,
                max_sag_fraction: float = 0.999) -> np.ndarray:
    """Project a raw parameter vector onto the feasible box.

    Used after unconstrained gradient steps, which may wander slightly
    outside the invariant region (negative gaps, index below 1, surface
    cap beyond a hemisphere).
    """
    theta = np.array(theta, dtype=float)
    n_surf = theta.size // PARAMS_PER_SURFACE
    spans, start = [], 0
    glass_interior = set()
    for kind in elements:
        stop = start + kind.n_surfaces
        spans.append((start, stop))
        if kind is ElementKind.CEMENTED_DOUBLET:
            glass_interior.update(range(start, stop - 1))
        start = stop
    last_of_element = {stop - 1 for (_, stop) in spans}
    for k in range(n_surf):
        theta[4 * k + EXTENT] = max(theta[4 * k + EXTENT], min_extent)
        theta[4 * k + GAP] = max(theta[4 * k + GAP], min_gap)
        if k in last_of_element:
            theta[4 * k + INDEX] = 1.0
        else:
            floor = 1.001 if k in glass_interior else 1.0
            theta[4 * k + INDEX] = max(theta[4 * k + INDEX], floor)
        cap = max_sag_fraction / theta[4 * k + EXTENT]
        theta[4 * k + CURVATURE] = float(
            np.clip(theta[4 * k + CURVATURE], -cap, cap))
    return theta
