"""Command-line entry points.

Subcommands: optimize, baseline-mh, baseline-brute, trace, project, toy,
pareto, render.  Every run-style subcommand takes --seed and is
bit-reproducible for a fixed seed.  Exit codes: 0 success, 1 usage error,
2 input error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys

import numpy as np

from . import baselines, loss as loss_mod, presets, restore, toy as toy_mod
from .core import LensSystem
from .mutate import (MutationKind, MutationTag, apply_mutation,
                     applicable_mutations)
from .paraxial import paraxial_project, paraxial_state
from .prescription import (PrescriptionError, load_prescription,
                           save_prescription)
from .render import render_svg
from .trace import sample_cone, trace_batch

USAGE_ERROR, INPUT_ERROR = 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


class InputError(Exception):
    pass


def _load_lens(args) -> LensSystem:
    if getattr(args, "prescription", None):
        try:
            lens, _ = load_prescription(args.prescription)
        except FileNotFoundError:
            raise InputError(f"no such file: {args.prescription}")
        except PrescriptionError as exc:
            raise InputError(str(exc))
        return lens
    try:
        return presets.preset(args.preset)
    except KeyError as exc:
        raise InputError(str(exc))


def _add_lens_args(p):
    p.add_argument("--preset", default="prime50",
                   help="starting design name (default prime50)")
    p.add_argument("--prescription", help="prescription JSON path "
                   "(overrides --preset)")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _loss_config(args):
    return presets.default_loss_weights(
        focal_mm=args.focal, rays_per_point=args.rays)


def _log_rows(log):
    return [(r.iteration, r.event, repr(r.loss), repr(r.pi), r.dimension)
            for r in log]


LOG_HEADER = ("iteration", "event", "loss", "pi", "dimension")


def _cmd_optimize(args):
    lens = _load_lens(args)
    cfg_loss = _loss_config(args)
    l0 = loss_mod.total_loss(lens, cfg_loss).total
    cfg = presets.default_restore_config(l0)
    problem = restore.lens_problem(cfg_loss)
    result = restore.run(lens, problem, cfg, args.iters, seed=args.seed)
    print(f"initial loss {l0:.6g}  best loss {result.best_loss:.6g}  "
          f"best elements {len(result.best_design.elements)}")
    if args.out_log:
        _write_csv(args.out_log, LOG_HEADER, _log_rows(result.log))
    if args.out_lens:
        save_prescription(args.out_lens, result.best_design)
    return 0


def _cmd_baseline_mh(args):
    lens = _load_lens(args)
    cfg_loss = _loss_config(args)
    l0 = loss_mod.total_loss(lens, cfg_loss).total
    cfg = baselines.MHConfig(eta=args.eta, w_perturb=args.w_perturb,
                             temperature=loss_mod.calibrate_temperature(l0))
    result = baselines.rjmh_run_lens(lens, cfg, cfg_loss, args.iters,
                                     seed=args.seed)
    print(f"initial loss {l0:.6g}  best loss {result.best_loss:.6g}  "
          f"perturb accept {result.perturb_accept_rate:.3f}  "
          f"mutate accept {result.mutate_accept_rate:.3f}")
    if args.out_log:
        rows = [(r.iteration, r.event, repr(r.loss), repr(r.pi), r.dimension)
                for r in result.log]
        _write_csv(args.out_log, LOG_HEADER, rows)
    if args.out_lens:
        save_prescription(args.out_lens, result.best_design)
    return 0


def _cmd_baseline_brute(args):
    lens = _load_lens(args)
    cfg_loss = _loss_config(args)
    result = baselines.brute_force_search(lens, cfg_loss, args.iters,
                                          seed=args.seed)
    for b in result.branches:
        print(f"{b.label:24s} start {b.start_loss:.6g}  "
              f"final {b.final_loss:.6g}")
    print(f"best loss {result.best_loss:.6g}")
    if args.out_lens:
        save_prescription(args.out_lens, result.best_design)
    return 0


def _cmd_trace(args):
    lens = _load_lens(args)
    origin = np.array([args.field_x, args.field_y, -lens.target_z])
    grid = sample_cone(origin, lens, args.rays)
    origins = np.broadcast_to(origin, (grid.directions.shape[0], 3))
    res = trace_batch(lens, origins, grid.directions)
    rows = []
    for i in range(grid.directions.shape[0]):
        rows.append((i,
                     repr(float(grid.directions[i, 0])),
                     repr(float(grid.directions[i, 1])),
                     repr(float(grid.directions[i, 2])),
                     repr(float(np.real(res.hits[i, 0]))),
                     repr(float(np.real(res.hits[i, 1]))),
                     int(res.valid[i]), int(res.reason[i])))
    header = ("ray", "dx", "dy", "dz", "hit_x", "hit_y", "valid", "reason")
    if args.out:
        _write_csv(args.out, header, rows)
    else:
        print(",".join(header))
        for r in rows:
            print(",".join(str(v) for v in r))
    print(f"valid {int(res.valid.sum())}/{len(rows)}", file=sys.stderr)
    return 0


_MUTATION_TAGS = {"add": MutationTag.ADD_SINGLET,
                  "remove": MutationTag.REMOVE_SINGLET,
                  "glue": MutationTag.GLUE_SINGLETS,
                  "split": MutationTag.SPLIT_DOUBLET}


def _cmd_project(args):
    lens = _load_lens(args)
    kind = MutationKind(_MUTATION_TAGS[args.mutation], args.site)
    if kind not in applicable_mutations(lens):
        raise InputError(f"mutation {args.mutation}@{args.site} is not "
                         f"applicable to this lens")
    rng = np.random.default_rng(args.seed)
    reference = paraxial_state(lens)
    mutated, frozen = apply_mutation(lens, kind, rng)
    result = paraxial_project(mutated, reference, frozen=frozen)
    print(f"converged {result.converged}  residual {result.residual:.3e}  "
          f"iterations {result.iterations}")
    if args.out_lens:
        save_prescription(args.out_lens, result.lens)
    return 0 if result.converged else 2


def _cmd_toy(args):
    if args.variant == "mixed":
        problems = {toy_mod.ToyVariant.ONE_GAP: toy_mod.ToyProblem(),
                    toy_mod.ToyVariant.TWO_GAPS:
                        toy_mod.ToyProblem(variant=toy_mod.ToyVariant.TWO_GAPS)}
        report = toy_mod.run_mixed_toy(problems, args.iters, args.seed,
                                       n_bins=args.bins)
        for v, r in sorted(report.items(), key=lambda kv: kv[0].value):
            print(f"{v.value}: tv {r['tv']:.4f}  visited mass "
                  f"{r['visited_mass']:.4f}  target mass "
                  f"{r['target_mass']:.4f}")
        return 0
    variant = (toy_mod.ToyVariant.ONE_GAP if args.variant == "1d"
               else toy_mod.ToyVariant.TWO_GAPS)
    p = toy_mod.ToyProblem(variant=variant)
    rep = toy_mod.run_toy(p, args.iters, args.seed, n_bins=args.bins)
    print(f"variant {rep.variant}  iters {rep.n_iters}  bins {rep.n_bins}  "
          f"tv {rep.tv:.4f}")
    return 0


def _pareto_filter(points):
    """Keep rows not weakly dominated in (spot, throughput)."""
    keep = []
    for i, a in enumerate(points):
        dominated = any(
            b["L_spot"] <= a["L_spot"] and b["L_throughput"] <= a["L_throughput"]
            and (b["L_spot"] < a["L_spot"]
                 or b["L_throughput"] < a["L_throughput"])
            for j, b in enumerate(points) if j != i)
        if not dominated:
            keep.append(a)
    return keep


def _cmd_pareto(args):
    lens = _load_lens(args)
    weights = np.linspace(args.w_min, args.w_max, args.settings)
    points = []
    for w in weights:
        cfg_loss = dataclasses.replace(
            presets.default_loss_weights(focal_mm=args.focal,
                                         rays_per_point=args.rays),
            w_throughput=float(w))
        l0 = loss_mod.total_loss(lens, cfg_loss).total
        cfg = presets.default_restore_config(max(l0, 1e-9))
        problem = restore.lens_problem(cfg_loss)
        result = restore.run(lens, problem, cfg, args.iters, seed=args.seed)
        bd = loss_mod.total_loss(result.best_design, cfg_loss)
        points.append({"w_throughput": float(w), **bd.as_dict()})
    front = _pareto_filter(points)
    header = ("w_throughput", "L_spot", "L_throughput", "L_focal",
              "L_thickness", "L_total")
    rows = [tuple(repr(p[h]) for h in header) for p in front]
    if args.out:
        _write_csv(args.out, header, rows)
    for p in front:
        print(f"w_throughput {p['w_throughput']:.3f}  "
              f"L_spot {p['L_spot']:.6g}  L_throughput "
              f"{p['L_throughput']:.6g}")
    return 0


def _cmd_render(args):
    lens = _load_lens(args)
    rays = None
    if args.rays > 0:
        origin = np.array([args.field_x, args.field_y, -lens.target_z])
        grid = sample_cone(origin, lens, args.rays)
        rays = (np.broadcast_to(origin, (grid.directions.shape[0], 3)),
                grid.directions)
    svg = render_svg(lens, rays=rays)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(svg)
    else:
        print(svg)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="lensmc", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def runner(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        return p

    p = runner("optimize", _cmd_optimize, "run the sampler on a lens")
    _add_lens_args(p)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--focal", type=float, default=50.0)
    p.add_argument("--rays", type=int, default=32)
    p.add_argument("--out-log")
    p.add_argument("--out-lens")

    p = runner("baseline-mh", _cmd_baseline_mh, "Metropolis-Hastings baseline")
    _add_lens_args(p)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--focal", type=float, default=50.0)
    p.add_argument("--rays", type=int, default=32)
    p.add_argument("--eta", type=float, default=1e-6)
    p.add_argument("--w-perturb", type=float, default=0.9)
    p.add_argument("--out-log")
    p.add_argument("--out-lens")

    p = runner("baseline-brute", _cmd_baseline_brute,
               "brute-force add/remove search")
    _add_lens_args(p)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--focal", type=float, default=50.0)
    p.add_argument("--rays", type=int, default=32)
    p.add_argument("--out-lens")

    p = runner("trace", _cmd_trace, "spot diagram CSV")
    _add_lens_args(p)
    p.add_argument("--rays", type=int, default=64)
    p.add_argument("--field-x", type=float, default=0.0)
    p.add_argument("--field-y", type=float, default=0.0)
    p.add_argument("--out")

    p = runner("project", _cmd_project,
               "apply one mutation and report the projection residual")
    _add_lens_args(p)
    p.add_argument("--mutation", choices=sorted(_MUTATION_TAGS), required=True)
    p.add_argument("--site", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-lens")

    p = runner("toy", _cmd_toy, "sampler validation on the toy targets")
    p.add_argument("--variant", choices=("1d", "2d", "mixed"), default="1d")
    p.add_argument("--iters", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=25)

    p = runner("pareto", _cmd_pareto, "spot/throughput trade-off sweep")
    _add_lens_args(p)
    p.add_argument("--settings", type=int, default=5)
    p.add_argument("--w-min", type=float, default=0.1)
    p.add_argument("--w-max", type=float, default=2.0)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--focal", type=float, default=50.0)
    p.add_argument("--rays", type=int, default=24)
    p.add_argument("--out")

    p = runner("render", _cmd_render, "SVG cross-section")
    _add_lens_args(p)
    p.add_argument("--rays", type=int, default=0)
    p.add_argument("--field-x", type=float, default=0.0)
    p.add_argument("--field-y", type=float, default=0.0)
    p.add_argument("--out")

    return parser


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_ERROR
    if not getattr(args, "fn", None):
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INPUT_ERROR


def main() -> None:
    raise SystemExit(cli_dispatch())


if __name__ == "__main__":
    main()
