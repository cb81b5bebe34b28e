"""Command-line entry point.

Subcommands: ``simulate``, ``analyze``, ``mitigate``, ``convergence`` and
``evaluate``. Exit codes: 0 success, 2 usage or I/O problem, 3 no
multi-generation cascades to analyze, 4 strategy precondition not met.
"""

from __future__ import annotations

import argparse
import cmath
import csv
import hashlib
import logging
import math
import os
import sys
import warnings

from . import cascade_data as cd
from . import generators as gen
from .interaction_graph import build_state_graph, stochastic_matrix, write_graph, write_matrix_csv
from .mitigation import (
    Strategy,
    StrategyPreconditionError,
    apply_plan_to_chain,
    apply_plan_to_grid,
    evaluate,
    plan_strategy,
    write_evaluation_csv,
    write_plan,
)
from .spectral import (
    BoundaryModeWarning,
    classify_modes,
    convergence_study,
    write_eigenvectors_csv,
    write_modes_csv,
)

log = logging.getLogger("cascade_eigen")

EXIT_OK, EXIT_USAGE, EXIT_EMPTY, EXIT_STRATEGY = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, msg, code=EXIT_USAGE):
        super().__init__(msg)
        self.code = code


def derived_seed(seed: int, label: str) -> int:
    """Deterministic 64-bit child seed for an independent stream."""
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _path(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _load_world(args):
    if bool(args.chain) == bool(args.grid):
        raise CliError("give exactly one of --chain or --grid")
    path = args.chain or args.grid
    try:
        with open(path, encoding="utf-8") as fh:
            return ("chain", gen.read_chain(fh)) if args.chain else ("grid", gen.read_grid(fh))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot load {path}: {exc}") from None


def _simulate(world, M, seed, args):
    kind, model = world
    if kind == "chain":
        return gen.sample_cascades(model, M, seed, args.max_generations, workers=args.workers)
    return gen.simulate_grid_cascades(model, M, seed, args.load_jitter, args.max_generations)


def _read(path):
    try:
        return cd.read_cascades(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from None


def _analyze(ds, args):
    ds = cd.filter_multi_generation(ds)
    if len(ds) == 0:
        raise CliError("no cascade with two or more generations", EXIT_EMPTY)
    g = build_state_graph(ds)
    W = stochastic_matrix(g)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BoundaryModeWarning)
        an = classify_modes(W, g, args.tol_unity, args.tol_zero)
    for w in caught:
        log.warning("%s", w.message)
    return ds, g, W, an


def cmd_simulate(args):
    world = _load_world(args)
    ds = _simulate(world, args.M, args.seed, args)
    out = args.out or _path(args, "cascades.jsonl")
    cd.write_cascades(ds, out)
    mean = sum(len(c.generations) for c in ds) / len(ds)
    print(f"M={len(ds)} mean_generations={mean:.6g}")
    return EXIT_OK


def cmd_analyze(args):
    ds, g, W, an = _analyze(_read(args.cascades), args)
    with open(_path(args, "graph.json"), "w", encoding="utf-8") as fh:
        write_graph(g, fh)
    with open(_path(args, "matrix.csv"), "w", encoding="utf-8") as fh:
        write_matrix_csv(W, fh)
    with open(_path(args, "modes.csv"), "w", encoding="utf-8") as fh:
        write_modes_csv(an, fh, args.epsilon)
    with open(_path(args, "eigenvectors.csv"), "w", encoding="utf-8") as fh:
        write_eigenvectors_csv(an, fh)
    stats = cd.dataset_stats(ds)
    with open(_path(args, "ending_generation.csv"), "w", encoding="utf-8") as e, \
            open(_path(args, "component_frequency.csv"), "w", encoding="utf-8") as c:
        cd.write_stats_csv(stats, e, c)
    summary = f"N={g.n} E={g.edge_count} selfloops={g.self_loop_count} {an.summary()}"
    with open(_path(args, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")
    print(summary)
    return EXIT_OK


def cmd_mitigate(args):
    world = _load_world(args)
    kind, model = world
    if args.cascades:
        baseline = _read(args.cascades)
    else:
        baseline = _simulate(world, args.M, args.seed, args)
    _, g, _, an = _analyze(baseline, args)
    strategy = Strategy(args.strategy)
    universe = set(model.line_ids) if kind == "grid" else {c for s in model.states for c in s}
    s_prime = args.S_prime
    try:
        if strategy in (Strategy.RANDOM, Strategy.MOST_FREQUENT) and s_prime is None:
            # match the line count an eigen plan with the same S would touch
            try:
                s_prime = plan_strategy("eigen", analysis=an, graph=g, S=args.S,
                                        threshold=args.threshold).S_prime
            except StrategyPreconditionError:
                s_prime = args.S
            if s_prime is None:
                raise StrategyPreconditionError(f"strategy {strategy.value} needs --S or --S-prime")
        params = {"rho": args.rho} if kind == "chain" else {"factor": args.factor}
        plan = plan_strategy(
            strategy, analysis=an, graph=g, stats=cd.dataset_stats(cd.filter_multi_generation(baseline)),
            universe=universe, S=args.S, S_prime=s_prime, threshold=args.threshold,
            seed=args.seed, eps=args.epsilon, target=args.target, **params,
        )
    except StrategyPreconditionError as exc:
        raise CliError(f"strategy precondition failed: {exc}", EXIT_STRATEGY) from None
    if kind == "chain":
        mitigated_model = apply_plan_to_chain(plan, model, g)
    else:
        mitigated_model = apply_plan_to_grid(plan, model)
    M = args.M if args.M is not None else len(baseline)
    mitigated = _simulate((kind, mitigated_model), M, derived_seed(args.seed, "mitigated"), args)
    report = evaluate(baseline, mitigated, args.large_threshold)
    with open(_path(args, "plan.json"), "w", encoding="utf-8") as fh:
        write_plan(plan, fh)
    cd.write_cascades(mitigated, _path(args, "mitigated.jsonl"))
    _write_report(args, report)
    print(f"strategy={plan.strategy.value} S={plan.S} S_prime={plan.S_prime} "
          f"large_baseline={report.baseline_large:.6g} large_mitigated={report.mitigated_large:.6g} "
          f"reduction_pct={report.reduction_pct:.4g}")
    return EXIT_OK


def _write_report(args, report):
    with open(_path(args, "evaluation.csv"), "w", encoding="utf-8") as fh, \
            open(_path(args, "ending_baseline.csv"), "w", encoding="utf-8") as b, \
            open(_path(args, "ending_mitigated.csv"), "w", encoding="utf-8") as m:
        write_evaluation_csv(report, fh, b, m)


def cmd_evaluate(args):
    base, mit = _read(args.baseline), _read(args.mitigated)
    if len(base) == 0 or len(mit) == 0:
        raise CliError("empty dataset", EXIT_EMPTY)
    report = evaluate(base, mit, args.large_threshold)
    _write_report(args, report)
    print(f"large_baseline={report.baseline_large:.6g} large_mitigated={report.mitigated_large:.6g} "
          f"reduction_pct={report.reduction_pct:.4g}")
    return EXIT_OK


def cmd_convergence(args):
    world = _load_world(args)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if any(s < 1 for s in sizes):
        raise CliError("sizes must be positive")
    rows = []
    if sizes:
        full = _simulate(world, max(sizes), args.seed, args)
        # prefixes are taken before filtering so that sizes count simulated cascades
        prefixes = [full.head(s) for s in sorted(sizes)]
        for size, ds in zip(sorted(sizes), prefixes):
            rows += [r._replace(size=size) for r in convergence_study([ds], tol_unity=args.tol_unity,
                                                                      tol_zero=args.tol_zero)]
    out = args.out or _path(args, "convergence.csv")
    with open(out, "w", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "kind", "re", "im", "modulus", "angle_deg"])
        for r in rows:
            z = r.eigenvalue
            w.writerow([r.size, r.kind, repr(float(z.real)), repr(float(z.imag)), repr(float(abs(z))),
                        repr(math.degrees(cmath.phase(z)))])
    print(f"rows={len(rows)} sizes={','.join(map(str, sorted(sizes)))}")
    return EXIT_OK


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _epsilon(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("must be in (0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--tol-unity", type=_positive_float, default=1e-8)
    common.add_argument("--tol-zero", type=_positive_float, default=1e-8)
    common.add_argument("--epsilon", type=_epsilon, default=0.5,
                        help="participation threshold on |v_j|")
    common.add_argument("--large-threshold", type=int, default=3,
                        help="a cascade is large if it ends after this generation")
    common.add_argument("-v", "--verbose", action="store_true")

    world = argparse.ArgumentParser(add_help=False)
    world.add_argument("--chain", help="ground-truth chain file (JSON)")
    world.add_argument("--grid", help="threshold grid file (JSON)")
    world.add_argument("--max-generations", type=_positive_int, default=50)
    world.add_argument("--load-jitter", type=float, default=0.0)
    world.add_argument("--workers", type=_positive_int, default=1)

    p = argparse.ArgumentParser(prog="cascade-eigen", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, world], help="generate a cascade file")
    s.add_argument("--M", type=_positive_int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", parents=[common], help="build the graph and classify modes")
    s.add_argument("--cascades", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("mitigate", parents=[common, world], help="plan, re-simulate and evaluate")
    s.add_argument("--strategy", choices=[x.value for x in Strategy], required=True)
    s.add_argument("--cascades", help="baseline cascade file (simulated with --seed if absent)")
    s.add_argument("--M", type=_positive_int, help="cascades per arm (default: baseline size)")
    s.add_argument("--S", type=_positive_int)
    s.add_argument("--S-prime", dest="S_prime", type=_positive_int)
    s.add_argument("--threshold", type=float, help="select eigenvector entries above this modulus")
    s.add_argument("--rho", type=float, default=0.2, help="chain world: transition reduction")
    s.add_argument("--factor", type=_positive_float, default=1.2, help="grid world: capacity factor")
    s.add_argument("--target", choices=["subgraph", "max_sw"], default="subgraph")
    s.set_defaults(func=cmd_mitigate)

    s = sub.add_parser("convergence", parents=[common, world], help="top eigenvalues vs dataset size")
    s.add_argument("--sizes", required=True, help="comma-separated dataset sizes")
    s.add_argument("--out")
    s.set_defaults(func=cmd_convergence)

    s = sub.add_parser("evaluate", parents=[common], help="compare two cascade files")
    s.add_argument("--baseline", required=True)
    s.add_argument("--mitigated", required=True)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    logging.captureWarnings(True)
    if args.command == "mitigate" and args.M is None and not args.cascades:
        parser.error("mitigate needs --cascades or --M")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
