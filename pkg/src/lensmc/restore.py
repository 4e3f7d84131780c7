"""Rejection-free sampling of the Boltzmann design density.

The chain alternates deterministic, Adam-adapted gradient perturbation
sequences with stochastic regenerations.  After every gradient step a
termination probability is computed from the density before and after the
step; on termination the current design is offered to a bounded reservoir
of the best designs seen, a fresh design is drawn from a small-weight
global/reservoir mixture, mutated, and a new perturbation sequence starts.
There is no accept/reject anywhere.

The sampler is generic over a :class:`Problem`, so the full lens design
problem and the low-dimensional validation targets run the same code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import loss as loss_mod
from .core import (ElementKind, LensSystem, SurfaceSpec, from_vector,
                   clamp_theta, to_vector)
from .mutate import mutate_lens

EVENT_STEP = "step"
EVENT_REGEN_GLOBAL = "regen-global"
EVENT_REGEN_RESERVOIR = "regen-reservoir"


@dataclass(frozen=True)
class AdamParams:
    lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class GlobalBounds:
    """Per-parameter-class bounds for uniform global sampling."""

    curvature: tuple = (-0.05, 0.05)
    extent: tuple = (2.0, 30.0)
    gap: tuple = (0.1, 50.0)
    index: tuple = (1.4, 1.9)
    max_elements: int = 8


@dataclass(frozen=True)
class RestoreConfig:
    temperature: float = 1.0
    gamma: float = 0.02            # global-sample weight in the mixture
    c_termination: float = 2.0     # constant in the termination rule
    adam: AdamParams = AdamParams()
    bounds: GlobalBounds = GlobalBounds()
    loss_ceiling: float = 1e6      # L substituted for non-finite losses

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.c_termination < 1:
            raise ValueError("c_termination must be >= 1 to keep the "
                             "termination probability in [0, 1]")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


def termination_prob(pi_old: float, pi_new: float, c: float) -> float:
    """Probability of ending the current perturbation sequence."""
    beta = (pi_old - pi_new + c) / (pi_old + c)
    assert 0.0 <= beta <= 1.0, f"termination probability {beta} out of [0,1]"
    return beta


# ---------------------------------------------------------------------------
# Reservoir
# ---------------------------------------------------------------------------

@dataclass
class Reservoir:
    """Capacity-bounded store of the best designs, sorted by density
    descending; the lowest-density entry is evicted first."""

    capacity: int = 5
    entries: list = field(default_factory=list)  # [(pi, serial, design)]
    _serial: int = 0

    def update(self, design, pi: float) -> None:
        if len(self.entries) >= self.capacity:
            if pi <= self.entries[-1][0]:
                return
            self.entries.pop()
        self.entries.append((pi, self._serial, design))
        self._serial += 1
        self.entries.sort(key=lambda e: (-e[0], e[1]))

    def sample(self, rng):
        idx = int(rng.integers(len(self.entries)))
        return self.entries[idx][2]

    @property
    def min_pi(self) -> float:
        return self.entries[-1][0] if self.entries else 0.0

    def __len__(self) -> int:
        return len(self.entries)


def update_reservoir(reservoir: Reservoir, design, pi: float) -> Reservoir:
    """Functional wrapper over :meth:`Reservoir.update`."""
    reservoir.update(design, pi)
    return reservoir


# ---------------------------------------------------------------------------
# Problem interface
# ---------------------------------------------------------------------------

@dataclass
class Problem:
    """Callbacks defining one sampling problem over designs of varying
    dimension.  ``theta``/``with_theta`` expose the continuous parameters
    the gradient sequence acts on."""

    loss: Callable[[Any], float]
    grad: Callable[[Any], np.ndarray]
    theta: Callable[[Any], np.ndarray]
    with_theta: Callable[[Any, np.ndarray], Any]
    mutate: Callable[[Any, np.random.Generator], Any]
    sample_global: Callable[[np.random.Generator], Any]
    describe: Callable[[Any], dict] = lambda design: {}
    summarize: Callable[[Any], tuple] = lambda design: ()


@dataclass
class LogRecord:
    """One sampler iteration.

    ``visited`` summarizes the chain state occupied during this iteration
    (the post-gradient-step design, before any regeneration); occupation
    histograms are built from it.  ``loss``/``pi`` describe the design the
    next iteration starts from.
    """

    iteration: int
    event: str
    loss: float
    pi: float
    dimension: int
    visited: tuple = ()
    visited_pi: float = 0.0


@dataclass
class SamplerState:
    design: Any
    loss: float
    pi: float
    adam_m: np.ndarray
    adam_v: np.ndarray
    adam_t: int
    reservoir: Reservoir
    iteration: int = 0
    log: list = field(default_factory=list)


def _density(loss_value: float, cfg: RestoreConfig) -> float:
    if not np.isfinite(loss_value):
        loss_value = cfg.loss_ceiling
    return loss_mod.boltzmann(loss_value, cfg.temperature)


def init_state(design, problem: Problem, cfg: RestoreConfig,
               reservoir_capacity: int = 5) -> SamplerState:
    l0 = problem.loss(design)
    n = problem.theta(design).size
    return SamplerState(design, l0, _density(l0, cfg),
                        np.zeros(n), np.zeros(n), 0, Reservoir(reservoir_capacity))


def _reset_adam(state: SamplerState, n: int) -> None:
    state.adam_m = np.zeros(n)
    state.adam_v = np.zeros(n)
    state.adam_t = 0


def gradient_step(state: SamplerState, problem: Problem,
                  cfg: RestoreConfig):
    """One noiseless Adam step on the current design.

    Returns (new design, new loss, ok); a non-finite gradient leaves the
    design unchanged and reports ok=False (forcing a regeneration).
    """
    g = problem.grad(state.design)
    if not np.all(np.isfinite(g)):
        return state.design, state.loss, False
    a = cfg.adam
    state.adam_t += 1
    state.adam_m = a.beta1 * state.adam_m + (1 - a.beta1) * g
    state.adam_v = a.beta2 * state.adam_v + (1 - a.beta2) * g * g
    m_hat = state.adam_m / (1 - a.beta1 ** state.adam_t)
    v_hat = state.adam_v / (1 - a.beta2 ** state.adam_t)
    theta = problem.theta(state.design)
    theta = theta - a.lr * m_hat / (np.sqrt(v_hat) + a.eps)
    design = problem.with_theta(state.design, theta)
    return design, problem.loss(design), True


def single_restore_step(state: SamplerState, problem: Problem,
                        cfg: RestoreConfig, rng) -> SamplerState:
    """One iteration: gradient step, termination draw, and on termination
    a reservoir update plus a mutated regeneration.  Never rejects."""
    pi_old = state.pi
    design, loss_value, ok = gradient_step(state, problem, cfg)
    pi_new = _density(loss_value, cfg)
    beta = 1.0 if not ok else termination_prob(
        pi_old, pi_new, cfg.c_termination)
    visited = problem.summarize(design)
    visited_pi = pi_new

    event = EVENT_STEP
    if rng.uniform() < beta:
        state.reservoir.update(design, pi_new)
        if rng.uniform() < cfg.gamma or len(state.reservoir) == 0:
            design = problem.sample_global(rng)
            event = EVENT_REGEN_GLOBAL
        else:
            design = state.reservoir.sample(rng)
            event = EVENT_REGEN_RESERVOIR
        design = problem.mutate(design, rng)
        loss_value = problem.loss(design)
        pi_new = _density(loss_value, cfg)
        _reset_adam(state, problem.theta(design).size)

    state.design = design
    state.loss = loss_value
    state.pi = pi_new
    state.iteration += 1
    state.log.append(LogRecord(state.iteration, event, loss_value, pi_new,
                               problem.theta(design).size,
                               visited, visited_pi))
    return state


@dataclass
class RunResult:
    best_design: Any
    best_loss: float
    best_pi: float
    reservoir: Reservoir
    log: list


def run(initial, problem: Problem, cfg: RestoreConfig, n_iters: int,
        rng=None, seed: int | None = None,
        reservoir_capacity: int = 5) -> RunResult:
    """Run the sampler; best design is the argmax of the density over all
    visited states, the initial one included."""
    if rng is None:
        rng = np.random.default_rng(seed)
    state = init_state(initial, problem, cfg, reservoir_capacity)
    best_design, best_loss, best_pi = initial, state.loss, state.pi
    for _ in range(n_iters):
        state = single_restore_step(state, problem, cfg, rng)
        if state.pi > best_pi or (state.pi == best_pi
                                  and state.loss < best_loss):
            best_design, best_loss, best_pi = (state.design, state.loss,
                                               state.pi)
    return RunResult(best_design, best_loss, best_pi, state.reservoir,
                     state.log)


# ---------------------------------------------------------------------------
# The lens design problem
# ---------------------------------------------------------------------------

def sample_global_lens(bounds: GlobalBounds, rng,
                       target_z: float = 500.0) -> LensSystem:
    """Uniform per-entry sample within class bounds, over a topology
    drawn uniformly from 1..max_elements elements of uniform kind."""
    n_el = int(rng.integers(1, bounds.max_elements + 1))
    kinds = [ElementKind.SINGLET if rng.uniform() < 0.5
             else ElementKind.CEMENTED_DOUBLET for _ in range(n_el)]
    surfaces = []
    for e, kind in enumerate(kinds):
        for s in range(kind.n_surfaces):
            last_of_element = s == kind.n_surfaces - 1
            extent = rng.uniform(*bounds.extent)
            cap = 0.95 / extent
            lo = max(bounds.curvature[0], -cap)
            hi = min(bounds.curvature[1], cap)
            curvature = rng.uniform(lo, hi)
            gap = rng.uniform(*bounds.gap)
            index = 1.0 if last_of_element else rng.uniform(*bounds.index)
            surfaces.append(SurfaceSpec(curvature, extent, gap, index))
    return LensSystem(tuple(surfaces), tuple(kinds), target_z)


def lens_problem(cfg_loss: loss_mod.LossWeights,
                 bounds: GlobalBounds = GlobalBounds(),
                 target_z: float = 500.0,
                 project_mutations: bool = True) -> Problem:
    """Bind the loss stack and the mutation kernel into a Problem.

    Gradient steps act on the raw parameter vector; the result is clamped
    back onto the feasible box before rebuilding the lens.
    """

    def _loss(lens):
        try:
            return total_with_cache(lens)
        except Exception:
            return float("inf")

    def total_with_cache(lens):
        return loss_mod.total_loss(lens, cfg_loss).total

    def _grad(lens):
        try:
            return loss_mod.grad_total_loss(lens, cfg_loss)
        except Exception:
            return np.full(lens.n_params, np.nan)

    def _with_theta(lens, theta):
        theta = clamp_theta(theta, lens.elements)
        return from_vector(theta, lens.elements, lens.target_z)

    def _describe(lens):
        bd = loss_mod.total_loss(lens, cfg_loss)
        d = bd.as_dict()
        d["K"] = len(lens.elements)
        d["n_surfaces"] = lens.n_surfaces
        return d

    return Problem(
        loss=_loss,
        grad=_grad,
        theta=to_vector,
        with_theta=_with_theta,
        mutate=lambda lens, rng: mutate_lens(lens, rng,
                                             project=project_mutations),
        sample_global=lambda rng: sample_global_lens(bounds, rng, target_z),
        describe=_describe,
    )
