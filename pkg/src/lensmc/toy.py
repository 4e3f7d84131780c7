"""Low-dimensional validation targets for the sampler.

Two miniature design problems over fixed singlet geometry: placing one
singlet's sensor distance (a 1D target density) or the two inter-element
distances of a pair of singlets (2D).  The target is the Boltzmann density
of the real spot-size loss, and its normalization constant is computed by
dense quadrature, giving an independent oracle for total-variation tests
of the sampler's occupation histogram.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import loss as loss_mod
from . import restore
from .core import ElementKind, LensSystem, SurfaceSpec, to_vector
from .trace import CSTEP


class ToyVariant(Enum):
    ONE_GAP = "1d"
    TWO_GAPS = "2d"


@dataclass(frozen=True)
class ToyDesign:
    """A point in one of the toy domains."""

    variant: ToyVariant
    x: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))


@dataclass
class ToyProblem:
    """One toy variant: fixed glass, free axial distances, box bounds.

    ``temperature`` controls how peaked the Boltzmann target is; the
    defaults give a clearly unimodal but non-degenerate density on the
    stated bounds.
    """

    variant: ToyVariant = ToyVariant.ONE_GAP
    target_z: float = 200.0
    curvature: float = 0.02        # biconvex singlet, +/- this curvature
    extent: float = 8.0
    thickness: float = 2.0
    index: float = 1.5168
    bounds: tuple = ()             # ((lo, hi), ...) one pair per free param
    temperature: float = 0.025
    rays: int = 24
    cone_half_angle: float = 0.03

    _cfg: loss_mod.LossWeights = field(init=False, repr=False)
    _grids: list = field(init=False, repr=False)
    _template: np.ndarray = field(init=False, repr=False)
    _free: tuple = field(init=False, repr=False)
    _elements: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not self.bounds:
            self.bounds = (((40.0, 90.0),) if self.variant is ToyVariant.ONE_GAP
                           else ((5.0, 60.0), (40.0, 80.0)))
        k, ex, th, n = self.curvature, self.extent, self.thickness, self.index
        if self.variant is ToyVariant.ONE_GAP:
            surfaces = (SurfaceSpec(k, ex, th, n),
                        SurfaceSpec(-k, ex, 60.0, 1.0))
            self._elements = (ElementKind.SINGLET,)
            self._free = (6,)       # sensor gap of the rear surface
        else:
            half = k / 2.0
            surfaces = (SurfaceSpec(half, ex, th, n),
                        SurfaceSpec(-half, ex, 30.0, 1.0),
                        SurfaceSpec(half, ex, th, n),
                        SurfaceSpec(-half, ex, 30.0, 1.0))
            self._elements = (ElementKind.SINGLET, ElementKind.SINGLET)
            self._free = (6, 14)    # gap between singlets, gap to sensor
        lens = LensSystem(surfaces, self._elements, self.target_z)
        self._template = to_vector(lens)
        self._cfg = loss_mod.LossWeights(
            w_spot=1.0, rays_per_point=self.rays,
            cone_half_angle=self.cone_half_angle,
            field_points=((0.0, 0.0, -self.target_z),))
        self._grids = loss_mod.build_grids(lens, self._cfg)

    @property
    def n_free(self) -> int:
        return len(self._free)

    def lens(self, x) -> LensSystem:
        theta = self._theta(x)
        from .core import from_vector
        return from_vector(theta, self._elements, self.target_z)

    def _theta(self, x, dtype=float):
        theta = self._template.astype(dtype)
        for j, v in zip(self._free, x):
            theta[j] = v
        return theta

    def in_bounds(self, x) -> bool:
        return all(lo <= v <= hi for v, (lo, hi) in zip(x, self.bounds))

    def clamp(self, x):
        return tuple(float(np.clip(v, lo, hi))
                     for v, (lo, hi) in zip(x, self.bounds))

    def loss(self, x) -> float:
        theta = self._theta(x)
        return float(np.real(loss_mod._evaluate(
            theta, self.target_z, self._cfg, self._grids, self._elements)[5]))

    def grad(self, x) -> np.ndarray:
        out = np.zeros(self.n_free)
        for i, j in enumerate(self._free):
            theta = self._theta(x, dtype=complex)
            theta[j] += 1j * CSTEP
            smooth = loss_mod._evaluate(theta, self.target_z, self._cfg,
                                        self._grids, self._elements)[5]
            out[i] = np.imag(smooth) / CSTEP
        return out

    def density(self, x) -> float:
        """Unnormalized Boltzmann density at an in-bounds point."""
        if not self.in_bounds(x):
            raise ValueError(f"point {x} outside bounds {self.bounds}")
        return loss_mod.boltzmann(self.loss(x), self.temperature)

    @property
    def domain_measure(self) -> float:
        out = 1.0
        for lo, hi in self.bounds:
            out *= hi - lo
        return out

    # -- quadrature oracle ---------------------------------------------

    def grid_axes(self, n_per_axis: int):
        return [np.linspace(lo, hi, n_per_axis) for lo, hi in self.bounds]

    def density_grid(self, n_per_axis: int) -> np.ndarray:
        axes = self.grid_axes(n_per_axis)
        if self.n_free == 1:
            return np.array([self.density((v,)) for v in axes[0]])
        return np.array([[self.density((a, b)) for b in axes[1]]
                         for a in axes[0]])

    def normalizer(self, n_per_axis: int = 1001) -> float:
        """Integral of the unnormalized density (trapezoid quadrature)."""
        axes = self.grid_axes(n_per_axis)
        dens = self.density_grid(n_per_axis)
        if self.n_free == 1:
            return float(np.trapezoid(dens, axes[0]))
        return float(np.trapezoid(np.trapezoid(dens, axes[1], axis=1),
                                  axes[0]))


def toy_target(p: ToyProblem, x) -> float:
    """Unnormalized target density at x; errors outside the bounds."""
    return p.density(x)


# ---------------------------------------------------------------------------
# Sampler bindings
# ---------------------------------------------------------------------------

def _uniform_point(p: ToyProblem, rng) -> ToyDesign:
    return ToyDesign(p.variant, tuple(rng.uniform(lo, hi)
                                      for lo, hi in p.bounds))


def restore_problem(p: ToyProblem) -> restore.Problem:
    """Single-variant sampler binding; the mutation relocates the free
    distances uniformly within the bounds."""
    return restore.Problem(
        loss=lambda d: p.loss(d.x),
        grad=lambda d: p.grad(d.x),
        theta=lambda d: np.array(d.x),
        with_theta=lambda d, th: ToyDesign(d.variant, p.clamp(th)),
        mutate=lambda d, rng: _uniform_point(p, rng),
        sample_global=lambda rng: _uniform_point(p, rng),
        summarize=lambda d: (d.variant.value,) + d.x,
    )


def mixed_problem(problems: dict) -> restore.Problem:
    """Cross-topology binding over the disjoint union of toy domains.

    Mutation draws a point uniformly from the union (topology chosen
    proportionally to domain measure), so regenerations are unbiased
    across topologies.
    """
    variants = sorted(problems, key=lambda v: v.value)
    measures = np.array([problems[v].domain_measure for v in variants])
    weights = measures / measures.sum()

    def _mutate(design, rng):
        v = variants[int(rng.choice(len(variants), p=weights))]
        return _uniform_point(problems[v], rng)

    return restore.Problem(
        loss=lambda d: problems[d.variant].loss(d.x),
        grad=lambda d: problems[d.variant].grad(d.x),
        theta=lambda d: np.array(d.x),
        with_theta=lambda d, th: ToyDesign(
            d.variant, problems[d.variant].clamp(th)),
        mutate=_mutate,
        sample_global=lambda rng: _mutate(None, rng),
        summarize=lambda d: (d.variant.value,) + d.x,
    )


# ---------------------------------------------------------------------------
# Total-variation diagnostics
# ---------------------------------------------------------------------------

def target_bin_masses(p: ToyProblem, n_bins: int,
                      n_quad_per_bin: int = 20) -> np.ndarray:
    """Normalized target mass of each histogram bin, by quadrature."""
    if p.n_free == 1:
        lo, hi = p.bounds[0]
        edges = np.linspace(lo, hi, n_bins + 1)
        masses = np.empty(n_bins)
        for b in range(n_bins):
            xs = np.linspace(edges[b], edges[b + 1], n_quad_per_bin)
            ys = np.array([p.density((v,)) for v in xs])
            masses[b] = np.trapezoid(ys, xs)
    else:
        (lo0, hi0), (lo1, hi1) = p.bounds
        e0 = np.linspace(lo0, hi0, n_bins + 1)
        e1 = np.linspace(lo1, hi1, n_bins + 1)
        masses = np.empty((n_bins, n_bins))
        for i in range(n_bins):
            xs = np.linspace(e0[i], e0[i + 1], n_quad_per_bin)
            for j in range(n_bins):
                ys = np.linspace(e1[j], e1[j + 1], n_quad_per_bin)
                dens = np.array([[p.density((a, b)) for b in ys]
                                 for a in xs])
                masses[i, j] = np.trapezoid(
                    np.trapezoid(dens, ys, axis=1), xs)
        masses = masses.ravel()
    return masses / masses.sum()


def visited_histogram(p: ToyProblem, visited, n_bins: int) -> np.ndarray:
    """Normalized bin counts of visited points (1D or flattened 2D)."""
    pts = np.array([v for v in visited], dtype=float)
    if p.n_free == 1:
        lo, hi = p.bounds[0]
        counts, _ = np.histogram(pts[:, 0], bins=n_bins, range=(lo, hi))
    else:
        (lo0, hi0), (lo1, hi1) = p.bounds
        counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=n_bins,
                                      range=((lo0, hi0), (lo1, hi1)))
        counts = counts.ravel()
    total = counts.sum()
    if total == 0:
        raise ValueError("no visited points")
    return counts / total


def tv_distance(hist: np.ndarray, target: np.ndarray) -> float:
    """Total-variation distance between two discrete distributions."""
    return 0.5 * float(np.abs(hist - target).sum())


@dataclass(frozen=True)
class ToyRunReport:
    variant: str
    n_iters: int
    n_bins: int
    tv: float
    topology_masses: dict   # visited mass per variant (mixed runs)
    target_topology_masses: dict


def run_toy(p: ToyProblem, n_iters: int, seed: int, cfg=None,
            n_bins: int = 25) -> ToyRunReport:
    """Run the sampler on one toy variant and report the TV distance of
    the occupation histogram against the quadrature target."""
    cfg = cfg or toy_sampler_config(p)
    rng = np.random.default_rng(seed)
    prob = restore_problem(p)
    initial = _uniform_point(p, rng)
    result = restore.run(initial, prob, cfg, n_iters, rng=rng)
    visited = [rec.visited[1:] for rec in result.log]
    hist = visited_histogram(p, visited, n_bins)
    target = target_bin_masses(p, n_bins)
    return ToyRunReport(p.variant.value, n_iters, n_bins,
                        tv_distance(hist, target), {}, {})


def run_mixed_toy(problems: dict, n_iters: int, seed: int, cfg=None,
                  n_bins: int = 25) -> dict:
    """Mixed-topology run: per-variant TV plus the cross-topology mass
    split, compared against quadrature masses over the union."""
    any_p = next(iter(problems.values()))
    cfg = cfg or toy_sampler_config(any_p)
    rng = np.random.default_rng(seed)
    prob = mixed_problem(problems)
    initial = prob.mutate(None, rng)
    result = restore.run(initial, prob, cfg, n_iters, rng=rng)

    by_variant = {v: [] for v in problems}
    for rec in result.log:
        tag = rec.visited[0]
        v = next(k for k in problems if k.value == tag)
        by_variant[v].append(rec.visited[1:])

    z = {v: problems[v].normalizer(201) for v in problems}
    z_total = sum(z.values())
    out = {}
    for v, pts in by_variant.items():
        hist = visited_histogram(problems[v], pts, n_bins)
        target = target_bin_masses(problems[v], n_bins)
        out[v] = {
            "tv": tv_distance(hist, target),
            "visited_mass": len(pts) / len(result.log),
            "target_mass": z[v] / z_total,
        }
    return out


def toy_sampler_config(p: ToyProblem,
                       lr: float = 0.2) -> restore.RestoreConfig:
    """Sampler settings used for the validation runs.

    The termination constant sits at its smallest admissible value so the
    occupation histogram tracks the target's dynamic range as closely as
    the termination rule allows.
    """
    return restore.RestoreConfig(
        temperature=p.temperature,
        c_termination=1.0,
        adam=restore.AdamParams(lr=lr))
