"""Topology mutations: add/remove singlets, glue singlets, split doublets.

Every mutation preserves the absolute axial positions of the untouched
surfaces (host air spaces are split or merged around the edited element)
and is followed by a paraxial projection against the pre-mutation state,
so that a converged mutation leaves the first-order focusing behavior of
the lens unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import ElementKind, LensSystem, SurfaceSpec
from .paraxial import paraxial_project, paraxial_state

CROWN_INDEX = 1.5168   # common crown glass
MIN_SPACE = 1e-3       # mm, smallest air space / thickness we create
SPLIT_GAP = 0.5        # mm, air gap introduced by doublet splitting


class MutationTag(Enum):
    ADD_SINGLET = "add_singlet"
    REMOVE_SINGLET = "remove_singlet"
    GLUE_SINGLETS = "glue_singlets"
    SPLIT_DOUBLET = "split_doublet"


@dataclass(frozen=True)
class MutationKind:
    """A mutation tag plus its site: an insertion slot for additions
    (0..E inclusive), otherwise an element index."""

    tag: MutationTag
    site: int


def applicable_mutations(lens: LensSystem) -> list[MutationKind]:
    """Every legal (tag, site) pair for this lens, in a fixed order."""
    out = []
    n_el = len(lens.elements)
    for slot in range(n_el + 1):
        out.append(MutationKind(MutationTag.ADD_SINGLET, slot))
    if n_el >= 2:
        for e, kind in enumerate(lens.elements):
            if kind is ElementKind.SINGLET:
                out.append(MutationKind(MutationTag.REMOVE_SINGLET, e))
    for e in range(n_el - 1):
        if (lens.elements[e] is ElementKind.SINGLET
                and lens.elements[e + 1] is ElementKind.SINGLET):
            out.append(MutationKind(MutationTag.GLUE_SINGLETS, e))
    for e, kind in enumerate(lens.elements):
        if kind is ElementKind.CEMENTED_DOUBLET:
            out.append(MutationKind(MutationTag.SPLIT_DOUBLET, e))
    return out


def _host_space(lens: LensSystem, slot: int) -> float:
    """Air space available at an insertion slot."""
    if slot == 0:
        return lens.target_z
    start, stop = lens.element_spans()[slot - 1]
    return lens.surfaces[stop - 1].gap


def _frozen_for_surfaces(surface_indices) -> tuple[int, ...]:
    out = []
    for s in surface_indices:
        out.extend(range(4 * s, 4 * s + 4))
    return tuple(out)


def _add_singlet(lens: LensSystem, slot: int, rng):
    host = _host_space(lens, slot)
    thickness = min(abs(rng.normal(1.0, 1.0)) + 0.1, max(host / 2, MIN_SPACE))
    if slot == 0:
        # Front insertion: keep the newcomer near the old front element
        # (a small standoff) rather than deep in the target space, so the
        # follow-up first-order correction stays well-conditioned.
        trailing = min(0.05 * host, 5.0)
        space = max(host - thickness - trailing, MIN_SPACE)
    else:
        space = max((host - thickness) / 2.0, MIN_SPACE)
    k1 = rng.normal(0.0, 0.01)
    k2 = rng.normal(0.0, 0.01)

    spans = lens.element_spans()
    if lens.surfaces:
        if slot == 0:
            extent = lens.surfaces[0].extent
        elif slot == len(lens.elements):
            extent = lens.surfaces[-1].extent
        else:
            extent = 0.5 * (lens.surfaces[spans[slot - 1][1] - 1].extent
                            + lens.surfaces[spans[slot][0]].extent)
    else:
        extent = 10.0
    cap = 0.95 / extent
    k1 = float(np.clip(k1, -cap, cap))
    k2 = float(np.clip(k2, -cap, cap))

    new_front = SurfaceSpec(k1, extent, thickness, CROWN_INDEX)
    insert_at = spans[slot - 1][1] if slot > 0 else 0

    surfaces = list(lens.surfaces)
    target_z = lens.target_z
    if slot == 0:
        # The new element consumes part of the target-to-lens space.
        target_z = space
        trailing = host - space - thickness
        new_back = SurfaceSpec(k2, extent, max(trailing, MIN_SPACE), 1.0)
    else:
        prev_last = spans[slot - 1][1] - 1
        trailing = host - space - thickness
        surfaces[prev_last] = SurfaceSpec(
            surfaces[prev_last].curvature, surfaces[prev_last].extent,
            space, surfaces[prev_last].index_after)
        new_back = SurfaceSpec(k2, extent, max(trailing, MIN_SPACE), 1.0)
    surfaces[insert_at:insert_at] = [new_front, new_back]

    elements = list(lens.elements)
    elements.insert(slot, ElementKind.SINGLET)
    mutated = LensSystem(tuple(surfaces), tuple(elements), target_z)
    frozen = _frozen_for_surfaces((insert_at, insert_at + 1))
    return mutated, frozen


def _remove_singlet(lens: LensSystem, e: int):
    start, stop = lens.element_spans()[e]
    removed_span = (lens.element_thickness(e)
                    + lens.surfaces[stop - 1].gap)
    surfaces = list(lens.surfaces)
    target_z = lens.target_z
    if e == 0:
        target_z = lens.target_z + removed_span
    else:
        prev_last = lens.element_spans()[e - 1][1] - 1
        s = surfaces[prev_last]
        surfaces[prev_last] = SurfaceSpec(s.curvature, s.extent,
                                          s.gap + removed_span,
                                          s.index_after)
    del surfaces[start:stop]
    elements = list(lens.elements)
    del elements[e]
    return LensSystem(tuple(surfaces), tuple(elements), target_z), ()


def _glue_singlets(lens: LensSystem, e: int):
    spans = lens.element_spans()
    (a0, a1), (b0, b1) = spans[e], spans[e + 1]
    s_front = lens.surfaces[a0]
    s_back_a = lens.surfaces[a1 - 1]    # rear of first singlet (air after)
    s_front_b = lens.surfaces[b0]       # front of second singlet
    s_back = lens.surfaces[b1 - 1]

    cemented = SurfaceSpec(
        0.5 * (s_back_a.curvature + s_front_b.curvature),
        0.5 * (s_back_a.extent + s_front_b.extent),
        s_front_b.gap,                   # second glass thickness
        s_front_b.index_after)
    # The eliminated air gap joins the downstream (sensor-side) gap.
    s_back_new = SurfaceSpec(s_back.curvature, s_back.extent,
                             s_back.gap + s_back_a.gap, s_back.index_after)

    surfaces = list(lens.surfaces)
    surfaces[a0:b1] = [s_front, cemented, s_back_new]
    elements = list(lens.elements)
    elements[e:e + 2] = [ElementKind.CEMENTED_DOUBLET]
    return LensSystem(tuple(surfaces), tuple(elements), lens.target_z), ()


def _split_doublet(lens: LensSystem, e: int):
    start, stop = lens.element_spans()[e]
    s_front, cem, s_back = (lens.surfaces[start], lens.surfaces[start + 1],
                            lens.surfaces[stop - 1])
    air = min(SPLIT_GAP, max(s_back.gap / 2.0, MIN_SPACE))
    first_back = SurfaceSpec(cem.curvature, cem.extent, air, 1.0)
    second_front = SurfaceSpec(cem.curvature, cem.extent, cem.gap,
                               cem.index_after)
    s_back_new = SurfaceSpec(s_back.curvature, s_back.extent,
                             max(s_back.gap - air, MIN_SPACE),
                             s_back.index_after)
    surfaces = list(lens.surfaces)
    surfaces[start:stop] = [s_front, first_back, second_front, s_back_new]
    elements = list(lens.elements)
    elements[e:e + 1] = [ElementKind.SINGLET, ElementKind.SINGLET]
    mutated = LensSystem(tuple(surfaces), tuple(elements), lens.target_z)
    frozen = _frozen_for_surfaces((start + 1, start + 2))
    return mutated, frozen


def apply_mutation(lens: LensSystem, m: MutationKind, rng):
    """Apply one mutation; returns (mutated lens, frozen theta indices).

    Raises ValueError when the mutation is not applicable to this lens.
    """
    if m not in applicable_mutations(lens):
        raise ValueError(f"mutation {m} not applicable")
    if m.tag is MutationTag.ADD_SINGLET:
        return _add_singlet(lens, m.site, rng)
    if m.tag is MutationTag.REMOVE_SINGLET:
        return _remove_singlet(lens, m.site)
    if m.tag is MutationTag.GLUE_SINGLETS:
        return _glue_singlets(lens, m.site)
    return _split_doublet(lens, m.site)


def mutate_lens(lens: LensSystem, rng, project: bool = True) -> LensSystem:
    """Uniformly sample an applicable mutation, apply it, and refine with
    a paraxial projection against the pre-mutation state.

    A projection that fails to converge is tolerated: the unprojected
    mutant is returned (the sampler has no rejection step).  ``project``
    disables the refinement entirely (ablation support).
    """
    options = applicable_mutations(lens)
    if not options:
        return lens
    choice = options[int(rng.integers(len(options)))]
    reference = paraxial_state(lens)
    mutated, frozen = apply_mutation(lens, choice, rng)
    if not project:
        return mutated
    result = paraxial_project(mutated, reference, frozen=frozen)
    return result.lens if result.converged else mutated
