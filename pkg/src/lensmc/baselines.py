"""Comparison methods: Metropolis-Hastings with Langevin perturbations
plus reversible topology jumps, and brute-force add/remove search.

Both baselines consume the same loss/gradient stack as the main sampler,
so a change to the losses shifts all methods identically.

The transdimensional MH moves need a reverse-proposal density.  A
topology mutation here is "insert/merge, then project back onto the
first-order constraint", so the proposal density carries the
change-of-variables factor of the projection map (its Jacobian
determinant).  Reverse moves that would have to regenerate continuous
parameters exactly (e.g. re-adding a just-removed singlet) have zero
density under the continuous seed distribution, so those proposals carry
q_rev = 0 and are always rejected; this is the well-known weakness of
MH-based topology search that the main sampler avoids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import loss as loss_mod
from .core import LensSystem, clamp_theta, from_vector, to_vector
from .mutate import (MutationKind, MutationTag, apply_mutation,
                     applicable_mutations)
from .paraxial import paraxial_project, paraxial_state, projection_jacobian
from .restore import AdamParams


@dataclass(frozen=True)
class MHConfig:
    """Step size, proposal mixture weight, and chain settings."""

    eta: float = 1e-4              # Langevin step size
    w_perturb: float = 0.9         # mixture weight of Langevin proposals
    temperature: float = 1.0
    adam: AdamParams = AdamParams()  # used only by brute-force descent

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if not 0 <= self.w_perturb <= 1:
            raise ValueError("w_perturb must be in [0, 1]")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


# ---------------------------------------------------------------------------
# Langevin perturbations
# ---------------------------------------------------------------------------

def mala_propose(theta: np.ndarray, grad: np.ndarray, eta: float, rng):
    """Langevin proposal theta - eta*grad + sqrt(eta)*eps, eps ~ N(0, I)."""
    eps = rng.standard_normal(theta.size)
    return theta - eta * grad + math.sqrt(eta) * eps


def mala_log_density(theta_to: np.ndarray, theta_from: np.ndarray,
                     grad_from: np.ndarray, eta: float) -> float:
    """Log proposal density of the Langevin kernel (unnormalized terms
    included; normalizers cancel between forward and reverse at equal
    dimension)."""
    mean = theta_from - eta * grad_from
    resid = theta_to - mean
    d = theta_to.size
    return float(-0.5 * resid @ resid / eta
                 - 0.5 * d * math.log(2.0 * math.pi * eta))


def mh_accept(l_old: float, l_new: float, q_fwd: float, q_rev: float,
              temperature: float, rng) -> bool:
    """Accept with probability min{1, exp((L_old-L_new)/T) * q_rev/q_fwd}."""
    if not q_fwd > 0:
        raise ValueError("forward proposal density must be positive")
    if q_rev == 0.0:
        return False
    alpha = min(1.0, math.exp(min((l_old - l_new) / temperature, 700.0))
                * (q_rev / q_fwd))
    return bool(rng.uniform() < alpha)


# ---------------------------------------------------------------------------
# Transdimensional moves
# ---------------------------------------------------------------------------

_SEED_THICK_MEAN, _SEED_THICK_STD = 1.0, 1.0
_SEED_CURV_STD = 0.01


def _seed_log_density(thickness: float, k1: float, k2: float) -> float:
    """Density of the singlet seed draw: folded-normal thickness (less
    the 0.1 mm offset) and two centered normal curvatures."""
    t = thickness - 0.1
    if t < 0:
        return -math.inf
    var = _SEED_THICK_STD ** 2
    ft = (math.exp(-0.5 * (t - _SEED_THICK_MEAN) ** 2 / var)
          + math.exp(-0.5 * (t + _SEED_THICK_MEAN) ** 2 / var))
    ft /= math.sqrt(2.0 * math.pi * var)
    lk = sum(-0.5 * (k / _SEED_CURV_STD) ** 2
             - 0.5 * math.log(2.0 * math.pi * _SEED_CURV_STD ** 2)
             for k in (k1, k2))
    return math.log(ft) + lk


def _reverse_kind(m: MutationKind, lens_after: LensSystem):
    """The mutation that undoes m on the mutated lens, or None when the
    reverse would need to regenerate continuous parameters exactly."""
    if m.tag is MutationTag.ADD_SINGLET:
        return MutationKind(MutationTag.REMOVE_SINGLET, m.site)
    if m.tag is MutationTag.GLUE_SINGLETS:
        return MutationKind(MutationTag.SPLIT_DOUBLET, m.site)
    if m.tag is MutationTag.SPLIT_DOUBLET:
        return MutationKind(MutationTag.GLUE_SINGLETS, m.site)
    return None   # removal: re-adding the exact singlet has density zero


def propose_mutation(lens: LensSystem, temperature_unused, rng):
    """Draw one projected topology mutation and its forward/reverse log
    proposal densities.  Returns None when the projection fails."""
    options = applicable_mutations(lens)
    m = options[int(rng.integers(len(options)))]
    reference = paraxial_state(lens)

    seed_logp = 0.0
    if m.tag is MutationTag.ADD_SINGLET:
        # Re-draw the seed here so its density is known exactly.
        probe = np.random.default_rng(int(rng.integers(2 ** 32)))
        mutated, frozen = apply_mutation(lens, m, probe)
        spans = mutated.element_spans()[m.site]
        new_front = mutated.surfaces[spans[0]]
        seed_logp = _seed_log_density(new_front.gap,
                                      new_front.curvature,
                                      mutated.surfaces[spans[0] + 1].curvature)
    else:
        mutated, frozen = apply_mutation(lens, m, rng)

    result = paraxial_project(mutated, reference, frozen=frozen)
    if not result.converged:
        return None
    projected = result.lens

    sign, logdet = np.linalg.slogdet(
        projection_jacobian(projected, result.multipliers, frozen))
    if sign == 0:
        return None
    log_q_fwd = -math.log(len(options)) + seed_logp - logdet

    rev = _reverse_kind(m, projected)
    if rev is None or rev not in applicable_mutations(projected):
        return m, projected, log_q_fwd, -math.inf
    log_q_rev = -math.log(len(applicable_mutations(projected)))
    return m, projected, log_q_fwd, log_q_rev


# ---------------------------------------------------------------------------
# The chains
# ---------------------------------------------------------------------------

@dataclass
class MHLogRecord:
    iteration: int
    event: str              # "perturb" or "mutate"
    accepted: bool
    loss: float
    pi: float
    dimension: int
    visited: tuple = ()
    visited_pi: float = 0.0


@dataclass
class MHResult:
    best_design: object
    best_loss: float
    log: list
    perturb_accept_rate: float
    mutate_accept_rate: float


def rjmh_run(initial, cfg: MHConfig, n_iters: int,
             loss_fn, grad_fn, theta_fn, with_theta_fn,
             rng=None, seed: int | None = None,
             summarize=lambda d: ()) -> MHResult:
    """Generic MH chain mixing Langevin perturbations with projected
    topology mutations (mutations only for LensSystem designs)."""
    if rng is None:
        rng = np.random.default_rng(seed)
    design = initial
    l_cur = loss_fn(design)
    best_design, best_loss = design, l_cur
    log = []
    acc = {"perturb": [0, 0], "mutate": [0, 0]}

    for it in range(1, n_iters + 1):
        is_lens = isinstance(design, LensSystem)
        do_perturb = (not is_lens) or rng.uniform() < cfg.w_perturb
        accepted = False
        if do_perturb:
            event = "perturb"
            theta = theta_fn(design)
            g = grad_fn(design)
            if np.all(np.isfinite(g)):
                theta_new = mala_propose(theta, g, cfg.eta, rng)
                try:
                    proposal = with_theta_fn(design, theta_new)
                    l_new = loss_fn(proposal)
                    g_new = grad_fn(proposal)
                    ok = np.isfinite(l_new) and np.all(np.isfinite(g_new))
                except Exception:
                    ok = False
                if ok:
                    lq_fwd = mala_log_density(theta_new, theta, g, cfg.eta)
                    lq_rev = mala_log_density(theta, theta_new, g_new,
                                              cfg.eta)
                    ref = max(lq_fwd, lq_rev)
                    accepted = mh_accept(l_cur, l_new,
                                         math.exp(lq_fwd - ref),
                                         math.exp(lq_rev - ref),
                                         cfg.temperature, rng)
                    if accepted:
                        design, l_cur = proposal, l_new
        else:
            event = "mutate"
            prop = propose_mutation(design, cfg.temperature, rng)
            if prop is not None:
                _, projected, lq_fwd, lq_rev = prop
                try:
                    l_new = loss_fn(projected)
                    ok = np.isfinite(l_new)
                except Exception:
                    ok = False
                if ok:
                    if lq_rev == -math.inf:
                        accepted = False
                        rng.uniform()   # burn the accept draw for parity
                    else:
                        ref = max(lq_fwd, lq_rev)
                        accepted = mh_accept(l_cur, l_new,
                                             math.exp(lq_fwd - ref),
                                             math.exp(lq_rev - ref),
                                             cfg.temperature, rng)
                    if accepted:
                        design, l_cur = projected, l_new
        acc[event][1] += 1
        acc[event][0] += int(accepted)
        if l_cur < best_loss:
            best_design, best_loss = design, l_cur
        pi = loss_mod.boltzmann(l_cur, cfg.temperature)
        log.append(MHLogRecord(it, event, accepted, l_cur, pi,
                               theta_fn(design).size, summarize(design), pi))

    def rate(ev):
        got, tot = acc[ev]
        return got / tot if tot else 0.0

    return MHResult(best_design, best_loss, log,
                    rate("perturb"), rate("mutate"))


def rjmh_run_lens(initial: LensSystem, cfg: MHConfig,
                  loss_cfg: loss_mod.LossWeights, n_iters: int,
                  rng=None, seed: int | None = None) -> MHResult:
    """MH baseline bound to the lens loss stack."""

    def _loss(lens):
        return loss_mod.total_loss(lens, loss_cfg).total

    def _grad(lens):
        return loss_mod.grad_total_loss(lens, loss_cfg)

    def _with_theta(lens, theta):
        return from_vector(clamp_theta(theta, lens.elements),
                           lens.elements, lens.target_z)

    return rjmh_run(initial, cfg, n_iters, _loss, _grad, to_vector,
                    _with_theta, rng=rng, seed=seed,
                    summarize=lambda lens: (len(lens.elements),))


# ---------------------------------------------------------------------------
# Brute-force add/remove search
# ---------------------------------------------------------------------------

@dataclass
class BruteForceBranch:
    label: str
    start_loss: float
    final_loss: float
    lens: LensSystem


@dataclass
class BruteForceResult:
    best_design: LensSystem
    best_loss: float
    branches: list


def adam_descent(lens: LensSystem, loss_cfg: loss_mod.LossWeights,
                 n_iters: int, adam: AdamParams = AdamParams()):
    """Plain Adam gradient descent on the smooth objective; returns the
    best iterate by the reported (hard) loss."""
    theta = to_vector(lens)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best = lens
    best_loss = loss_mod.total_loss(lens, loss_cfg).total
    cur = lens
    for t in range(1, n_iters + 1):
        g = loss_mod.grad_total_loss(cur, loss_cfg)
        if not np.all(np.isfinite(g)):
            break
        m = adam.beta1 * m + (1 - adam.beta1) * g
        v = adam.beta2 * v + (1 - adam.beta2) * g * g
        m_hat = m / (1 - adam.beta1 ** t)
        v_hat = v / (1 - adam.beta2 ** t)
        theta = theta - adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps)
        theta = clamp_theta(theta, cur.elements)
        cur = from_vector(theta, cur.elements, cur.target_z)
        l_cur = loss_mod.total_loss(cur, loss_cfg).total
        if l_cur < best_loss:
            best, best_loss = cur, l_cur
    return best, best_loss


def brute_force_candidates(lens: LensSystem) -> list[MutationKind]:
    """All add slots plus all removable singlets, in enumeration order."""
    return [m for m in applicable_mutations(lens)
            if m.tag in (MutationTag.ADD_SINGLET,
                         MutationTag.REMOVE_SINGLET)]


def brute_force_search(initial: LensSystem,
                       loss_cfg: loss_mod.LossWeights,
                       total_iters: int,
                       adam: AdamParams = AdamParams(),
                       rng=None, seed: int | None = None) -> BruteForceResult:
    """Try adding a seeded singlet at every slot and removing every
    singlet, descend each candidate for an equal share of the iteration
    budget, and keep the best result (the initial lens included)."""
    if rng is None:
        rng = np.random.default_rng(seed)
    candidates = brute_force_candidates(initial)
    best_loss = loss_mod.total_loss(initial, loss_cfg).total
    best = initial
    branches = [BruteForceBranch("initial", best_loss, best_loss, initial)]
    if total_iters <= 0 or not candidates:
        return BruteForceResult(best, best_loss, branches)

    share = max(total_iters // len(candidates), 1)
    reference = paraxial_state(initial)
    for m in candidates:
        mutated, frozen = apply_mutation(initial, m, rng)
        result = paraxial_project(mutated, reference, frozen=frozen)
        start = result.lens if result.converged else mutated
        try:
            start_loss = loss_mod.total_loss(start, loss_cfg).total
            lens, final_loss = adam_descent(start, loss_cfg, share, adam)
        except Exception:
            continue
        branches.append(BruteForceBranch(f"{m.tag.value}@{m.site}",
                                         start_loss, final_loss, lens))
        if final_loss < best_loss:
            best, best_loss = lens, final_loss
    return BruteForceResult(best, best_loss, branches)
