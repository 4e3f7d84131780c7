"""Acceptance suite: one test per release criterion, each printing a
single PASS/FAIL line.

Criteria with stochastic search components run at desk scale (reduced ray
budgets, capped element counts) with pinned iteration counts and seeds;
the asserted statements are directional orderings and tolerances, not the
absolute numbers of any larger-scale study.
"""

import math
import time

import numpy as np
import pytest

from lensmc import loss as loss_mod
from lensmc import presets, restore, toy as toy_mod
from lensmc.baselines import (MHConfig, adam_descent, brute_force_search,
                              rjmh_run_lens)
from lensmc.cli import cli_dispatch
from lensmc.core import clamp_theta, from_vector, to_vector
from lensmc.loss import LossWeights, build_grids, grad_total_loss, smooth_total
from lensmc.mutate import applicable_mutations, apply_mutation
from lensmc.paraxial import (paraxial_project, paraxial_state,
                             projection_jacobian, system_matrix)
from lensmc.restore import AdamParams, GlobalBounds, RestoreConfig
from lensmc.trace import trace_batch

from conftest import random_lens


def _report(number: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f"  [{detail}]" if detail else ""
    print(f"ACCEPTANCE {number:2d} {status} - {name}{suffix}")
    assert ok, f"criterion {number} ({name}) failed: {detail}"


# Shared desk-scale protocol pieces (see the repository notes for the
# rationale of each choice).
_STANDIN = "prime50"


def _protocol_loss(rays: int = 8) -> LossWeights:
    return presets.default_loss_weights(50.0, rays_per_point=rays)


def _protocol_config(l0: float, lr: float = 1e-3) -> RestoreConfig:
    return RestoreConfig(
        temperature=loss_mod.calibrate_temperature(l0),
        adam=AdamParams(lr=lr),
        bounds=GlobalBounds(max_elements=3))


# ---------------------------------------------------------------------------
# 1. Gradient correctness
# ---------------------------------------------------------------------------

def test_criterion_01_gradient_correctness():
    rng = np.random.default_rng(2024)
    t_start = time.time()
    checked = failures = 0
    worst = 0.0
    for trial in range(20):
        lens = random_lens(rng, n_elements=int(rng.integers(2, 4)))
        cfg = LossWeights(
            w_spot=1.0, w_throughput=0.5, w_focal=0.01, w_thickness=0.1,
            t0=1e-3, focal_target=50.0, rays_per_point=64,
            field_points=tuple((float(x), 0.0, -lens.target_z)
                               for x in (0.0, 2.0, 4.0, 6.0)))
        grids = build_grids(lens, cfg)
        g = grad_total_loss(lens, cfg, grids)
        theta = to_vector(lens)
        h = 1e-5

        def valid_mask(th):
            counts = [gr.directions.shape[0] for gr in grids]
            origins = np.concatenate([
                np.broadcast_to(np.asarray(p, dtype=float), (c, 3))
                for p, c in zip(cfg.field_points, counts)])
            dirs = np.concatenate([gr.directions for gr in grids])
            return trace_batch(th, origins, dirs).valid

        air_idx = {4 * (start + lens.elements[e].n_surfaces - 1) + 3
                   for e, (start, _) in enumerate(lens.element_spans())}
        for j in range(theta.size):
            if j in air_idx:
                continue   # structurally-pinned entries are not free
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            lp_lens = from_vector(tp, lens.elements, lens.target_z)
            lm_lens = from_vector(tm, lens.elements, lens.target_z)
            # A parameter is "boundary" when the perturbation flips any
            # ray's validity: the hard objective is non-differentiable
            # there and finite differences are meaningless.
            if not np.array_equal(valid_mask(tp), valid_mask(tm)):
                continue
            fp = smooth_total(lp_lens, cfg, grids)
            fm = smooth_total(lm_lens, cfg, grids)
            fd = (fp - fm) / (2 * h)
            # Central differences cannot resolve derivatives below the
            # rounding floor of the difference, ~eps*|f|/(2h).  When both
            # the analytic and numeric values sit under that floor the
            # oracle has no information; skip, as for boundary params.
            noise = 100.0 * np.finfo(float).eps * max(abs(fp), abs(fm)) / (2 * h)
            if max(abs(g[j]), abs(fd)) < noise:
                continue
            scale = max(abs(fd), abs(g[j]), 1e-10)
            err = abs(g[j] - fd)
            checked += 1
            if err < noise:
                continue   # agreement within the oracle's resolution
            rel = err / scale
            worst = max(worst, rel)
            if rel >= 1e-3:
                failures += 1
    elapsed = time.time() - t_start
    ok = failures == 0 and checked > 200 and elapsed < 120.0
    _report(1, "gradient matches central finite differences", ok,
            f"{checked} params, worst rel err {worst:.2e}, "
            f"{failures} failures, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 2. Paraxial consistency
# ---------------------------------------------------------------------------

def test_criterion_02_paraxial_consistency():
    rng = np.random.default_rng(7)
    ok_all = True
    worst_ratio = math.inf
    for _ in range(10):
        lens = random_lens(rng)
        y_f = float((system_matrix(lens) @ np.array([0.0, 1.0]))[1])
        errs = []
        for h in (0.4, 0.2, 0.1):
            origin = np.array([0.0, h, -1.0])
            direction = np.array([0.0, 0.0, 1.0])
            res = trace_batch(lens, origin[None, :], direction[None, :])
            if not res.valid[0]:
                errs = []
                break
            errs.append(abs(float(np.real(res.hits[0][1])) - h * y_f))
        if len(errs) < 3 or min(errs) < 1e-13:
            continue   # degenerate draw: ray blocked or error at noise floor
        for a, b in zip(errs, errs[1:]):
            ratio = a / b
            worst_ratio = min(worst_ratio, ratio)
            if ratio < 4.0:
                ok_all = False
    _report(2, "trace converges to transfer-matrix prediction (>= 4x per "
            "height halving)", ok_all and worst_ratio < math.inf,
            f"worst ratio {worst_ratio:.2f}")


# ---------------------------------------------------------------------------
# 3. Projection contract
# ---------------------------------------------------------------------------

def test_criterion_03_projection_contract():
    rng = np.random.default_rng(99)
    converged = 0
    contract_ok = True
    for _ in range(100):
        lens = random_lens(rng)
        reference = paraxial_state(lens)
        options = applicable_mutations(lens)
        m = options[int(rng.integers(len(options)))]
        mutated, frozen = apply_mutation(lens, m, rng)
        result = paraxial_project(mutated, reference, frozen=frozen)
        if not result.converged:
            continue
        converged += 1
        if result.residual > 1e-9:
            contract_ok = False
        again = paraxial_project(result.lens, reference, frozen=frozen)
        if (not again.converged
                or np.max(np.abs(to_vector(again.lens)
                                 - to_vector(result.lens))) > 1e-9):
            contract_ok = False
    ok = contract_ok and converged >= 90
    _report(3, "projection residual/idempotence contract, >= 90% "
            "convergence", ok, f"{converged}/100 converged")


# ---------------------------------------------------------------------------
# 4. Projection Jacobian
# ---------------------------------------------------------------------------

def test_criterion_04_projection_jacobian():
    rng = np.random.default_rng(17)
    instances = 0
    worst = 0.0
    ok = True
    attempts = 0
    while instances < 10 and attempts < 100:
        attempts += 1
        lens = random_lens(rng, n_elements=int(rng.integers(1, 3)))
        reference = paraxial_state(lens) + rng.normal(0.0, 1e-4, 2)
        base = paraxial_project(lens, reference)
        if not base.converged:
            continue
        jac = projection_jacobian(base.lens, base.multipliers)
        theta0 = to_vector(lens)
        h = 1e-6
        # Directions live in the free-parameter subspace: the air index
        # after each element's last surface is structurally pinned at 1
        # and perturbing it violates the lens invariants.
        air_idx = [4 * (start + lens.elements[e].n_surfaces - 1) + 3
                   for e, (start, _) in enumerate(lens.element_spans())]
        directions_done = 0
        for _ in range(20):
            if directions_done == 10:
                break
            v = rng.normal(0.0, 1.0, theta0.size)
            v[air_idx] = 0.0
            v /= np.linalg.norm(v)
            try:
                lp = from_vector(theta0 + h * v, lens.elements, lens.target_z)
                lm = from_vector(theta0 - h * v, lens.elements, lens.target_z)
            except Exception:
                continue
            rp = paraxial_project(lp, reference)
            rm = paraxial_project(lm, reference)
            if not (rp.converged and rm.converged):
                continue
            fd = (to_vector(rp.lens) - to_vector(rm.lens)) / (2 * h)
            pred = jac @ v
            rel = (np.linalg.norm(pred - fd)
                   / max(np.linalg.norm(fd), 1e-10))
            worst = max(worst, rel)
            if rel >= 1e-3:
                ok = False
            directions_done += 1
        if directions_done == 10:
            instances += 1
    ok = ok and instances == 10
    _report(4, "projection Jacobian matches re-solve finite differences",
            ok, f"worst rel err {worst:.2e} over {instances}x10")


# ---------------------------------------------------------------------------
# 5. Toy sampler stationarity
# ---------------------------------------------------------------------------

def test_criterion_05_toy_stationarity():
    t_start = time.time()
    p1 = toy_mod.ToyProblem()
    p2 = toy_mod.ToyProblem(variant=toy_mod.ToyVariant.TWO_GAPS)
    rep1 = toy_mod.run_toy(p1, 100000, seed=0, n_bins=25)
    rep2 = toy_mod.run_toy(p2, 100000, seed=7, n_bins=12)
    mixed = toy_mod.run_mixed_toy(
        {toy_mod.ToyVariant.ONE_GAP: p1, toy_mod.ToyVariant.TWO_GAPS: p2},
        30000, seed=11, n_bins=10)
    elapsed = time.time() - t_start
    split_err = max(abs(r["visited_mass"] - r["target_mass"])
                    for r in mixed.values())
    ok = (rep1.tv < 0.05 and rep2.tv < 0.05 and split_err < 0.02
          and elapsed < 600.0)
    _report(5, "toy occupation matches quadrature target (TV < 0.05, "
            "mixed mass split)", ok,
            f"1D TV {rep1.tv:.4f}, 2D TV {rep2.tv:.4f}, "
            f"split err {split_err:.4f}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 6. Projection ablation direction
# ---------------------------------------------------------------------------

def test_criterion_06_projection_ablation():
    lens = presets.preset(_STANDIN)
    cfg_loss = _protocol_loss()
    l0 = loss_mod.total_loss(lens, cfg_loss).total
    fracs = {True: [], False: []}
    for project in (True, False):
        for seed in range(5):
            cfg = _protocol_config(l0)
            prob = restore.lens_problem(cfg_loss, bounds=cfg.bounds,
                                        project_mutations=project)
            res = restore.run(lens, prob, cfg, 1000, seed=seed)
            fracs[project].append(
                sum(1 for r in res.log if r.loss < l0) / len(res.log))
    with_p = float(np.median(fracs[True]))
    without_p = float(np.median(fracs[False]))
    ok = with_p > without_p
    _report(6, "better-than-initial fraction higher with projection", ok,
            f"median {with_p:.3f} (with) vs {without_p:.3f} (without)")


# ---------------------------------------------------------------------------
# 7. MH comparison direction
# ---------------------------------------------------------------------------

def test_criterion_07_mh_comparison():
    lens = presets.preset(_STANDIN)
    cfg_loss = _protocol_loss()
    l0 = loss_mod.total_loss(lens, cfg_loss).total
    restore_best, mh_best, mh_mut_rates = [], [], []
    for seed in range(5):
        cfg = _protocol_config(l0)
        prob = restore.lens_problem(cfg_loss, bounds=cfg.bounds)
        res = restore.run(lens, prob, cfg, 2000, seed=seed)
        restore_best.append(res.best_loss)

        mh_cfg = MHConfig(eta=1e-8, w_perturb=0.9,
                          temperature=loss_mod.calibrate_temperature(l0))
        mh = rjmh_run_lens(lens, mh_cfg, cfg_loss, 2000, seed=seed)
        mh_best.append(mh.best_loss)
        mh_mut_rates.append(mh.mutate_accept_rate)
    r_med = float(np.median(restore_best))
    m_med = float(np.median(mh_best))
    mut_rate = float(np.mean(mh_mut_rates))
    ok = r_med < m_med and mut_rate < 0.2
    _report(7, "sampler beats Metropolis-Hastings at equal budget", ok,
            f"median best {r_med:.3e} vs {m_med:.3e}, "
            f"MH mutation acceptance {mut_rate:.3f}")


# ---------------------------------------------------------------------------
# 8. Brute-force comparison direction
# ---------------------------------------------------------------------------

def test_criterion_08_brute_force_comparison():
    """Equal-budget comparison on the two throughput-limited stand-ins
    (apertures smaller than the sampled beam).  Opening the aperture by
    gradient descent is slow — extent parameters only receive gradient
    from rays at the clip rim — so the fixed-topology search, which splits
    the budget across candidate element counts, stays on the deficit
    plateau, while mutations resample extents outright."""
    budget = 2000
    wins_by_lens = {}
    for name, focal in (("prime28", 28.0), ("prime135", 135.0)):
        lens = presets.preset(name)
        cfg_loss = presets.default_loss_weights(focal, rays_per_point=8)
        l0 = loss_mod.total_loss(lens, cfg_loss).total
        wins = 0
        for seed in range(5):
            cfg = _protocol_config(l0)
            prob = restore.lens_problem(cfg_loss, bounds=cfg.bounds)
            res = restore.run(lens, prob, cfg, budget, seed=seed)
            bf = brute_force_search(lens, cfg_loss, budget,
                                    adam=AdamParams(lr=1e-3), seed=seed)
            wins += int(res.best_loss <= bf.best_loss)
        wins_by_lens[name] = wins
    ok = all(w >= 4 for w in wins_by_lens.values())
    _report(8, "sampler best <= brute-force best in >= 4/5 seeds", ok,
            ", ".join(f"{n}: {w}/5" for n, w in wins_by_lens.items()))


# ---------------------------------------------------------------------------
# 9. Pareto expansion
# ---------------------------------------------------------------------------

def test_criterion_09_pareto_expansion():
    """Sweep the spot/throughput weight on the slow-telephoto stand-in and
    compare speed-sharpness fronts.  The gradient-only front is computed
    first; each sampler run is then initialized from that setting's
    gradient endpoint (the front-expansion experiment: start from the
    front one method can reach, show the other extends it).  The sampler
    front is every design its chains occupy, the initial states included;
    it must weakly dominate the gradient-only endpoint at every setting
    and strictly dominate at least one.

    The stand-in starts throughput-limited (aperture below the sampled
    beam footprint), so the sweep traces a genuine tradeoff: opening the
    aperture buys throughput at the cost of spot size.
    """
    import dataclasses

    t_start = time.time()
    lens = presets.preset("prime135")
    base = presets.default_loss_weights(135.0, rays_per_point=8)

    def coords(design):
        bd = loss_mod.total_loss(design, base)
        return (sum(bd.spot), sum(bd.throughput))

    weights = (0.05, 0.1, 0.2, 0.5, 1.0)
    grad_pts, restore_pts = [], []
    for w in weights:
        cfg_loss = dataclasses.replace(base, w_throughput=float(w))
        g_best, _ = adam_descent(lens, cfg_loss, 2000, AdamParams(lr=1e-3))
        g_coords = coords(g_best)
        grad_pts.append(g_coords)

        lg = loss_mod.total_loss(g_best, cfg_loss).total
        cfg = _protocol_config(max(lg, 1e-12))
        prob = restore.lens_problem(cfg_loss, bounds=cfg.bounds)
        prob.summarize = coords
        res = restore.run(g_best, prob, cfg, 2000, seed=0)
        restore_pts.append(g_coords)
        restore_pts.extend(r.visited for r in res.log if r.visited)

    strict = False
    dominated_everywhere = True
    for g in grad_pts:
        if not any(r[0] <= g[0] and r[1] <= g[1] for r in restore_pts):
            dominated_everywhere = False
        if any((r[0] < g[0] and r[1] <= g[1])
               or (r[0] <= g[0] and r[1] < g[1]) for r in restore_pts):
            strict = True
    elapsed = time.time() - t_start
    ok = dominated_everywhere and strict and elapsed < 1800.0
    _report(9, "sampler front weakly dominates gradient-only front, "
            "strictly somewhere", ok,
            f"covered {dominated_everywhere}, strict {strict}, "
            f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 10. Termination-probability arithmetic
# ---------------------------------------------------------------------------

def test_criterion_10_termination_arithmetic():
    t1 = restore.termination_prob(0.5, 0.5, 2.0)
    t2 = restore.termination_prob(0.5, 0.9, 2.0)
    t3 = restore.termination_prob(0.5, 0.1, 2.0)
    exact = (abs(t1 - 0.8) <= 1e-15 and abs(t2 - 0.64) <= 1e-15
             and abs(t3 - 0.96) <= 1e-15)
    # The [0, 1] range assertion lives inside termination_prob and is
    # exercised on every step of a full run.
    prob = restore.Problem(
        loss=lambda x: float(x @ x),
        grad=lambda x: 2.0 * x,
        theta=lambda x: x,
        with_theta=lambda x, th: th,
        mutate=lambda x, rng: x + rng.normal(0.0, 0.1, x.size),
        sample_global=lambda rng: rng.normal(0.0, 1.0, 2))
    restore.run(np.array([1.0, -1.0]), prob,
                RestoreConfig(temperature=0.5), 2000, seed=0)
    _report(10, "termination probability arithmetic exact, in [0,1] "
            "throughout a run", exact,
            f"values {t1!r}, {t2!r}, {t3!r}")


# ---------------------------------------------------------------------------
# 11. No-rejection invariant
# ---------------------------------------------------------------------------

def test_criterion_11_no_rejection_invariant():
    lens = presets.preset(_STANDIN)
    cfg_loss = _protocol_loss()
    l0 = loss_mod.total_loss(lens, cfg_loss).total
    cfg = _protocol_config(l0)
    prob = restore.lens_problem(cfg_loss, bounds=cfg.bounds)
    res = restore.run(lens, prob, cfg, 500, seed=1)
    events = [r.event for r in res.log]
    steps = events.count(restore.EVENT_STEP)
    regens = (events.count(restore.EVENT_REGEN_GLOBAL)
              + events.count(restore.EVENT_REGEN_RESERVOIR))
    ok = (len(events) == 500
          and steps + regens == 500
          and set(events) <= {restore.EVENT_STEP,
                              restore.EVENT_REGEN_GLOBAL,
                              restore.EVENT_REGEN_RESERVOIR})
    _report(11, "zero rejection events; iterations = steps + regenerations",
            ok, f"{steps} steps + {regens} regenerations")


# ---------------------------------------------------------------------------
# 12. Determinism of seeded CLI runs
# ---------------------------------------------------------------------------

def test_criterion_12_cli_determinism(tmp_path, capsys):
    outputs = []
    for tag in ("a", "b"):
        log = tmp_path / f"log-{tag}.csv"
        svg = tmp_path / f"view-{tag}.svg"
        lens_out = tmp_path / f"lens-{tag}.json"
        assert cli_dispatch(["optimize", "--preset", _STANDIN,
                             "--iters", "25", "--seed", "7", "--rays", "8",
                             "--out-log", str(log),
                             "--out-lens", str(lens_out)]) == 0
        assert cli_dispatch(["render", "--prescription", str(lens_out),
                             "--rays", "12", "--out", str(svg)]) == 0
        outputs.append((log.read_bytes(), svg.read_bytes(),
                        lens_out.read_bytes()))
    capsys.readouterr()
    ok = outputs[0] == outputs[1]
    _report(12, "seeded CLI reruns are byte-identical (CSV and SVG)", ok)
