"""Command line harness: ``gen``, ``solve`` and ``bench``.

Exit codes: 0 success, 2 parameter error, 3 input/format error,
4 numerical failure (Sinkhorn underflow), 5 invariant violation under --verify.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from collections import defaultdict
from pathlib import Path

from . import assignment, instances, oracles, sinkhorn, transport
from .core import (
    AssignmentInstance,
    InputFormatError,
    InvariantViolation,
    NumericalError,
    ParameterError,
    matching_cost,
)

log = logging.getLogger("pushrelabel_ot")

SOLVERS = ("pushrelabel", "pushrelabel-ot", "sinkhorn", "hungarian", "exact-ot")
DATA_ENV = "PUSHRELABEL_OT_DATA"

BENCH_FIELDS = ["solver", "n", "eps", "seed", "cost", "oracle_cost", "time_ms", "phases",
                "reg", "status"]
AGG_FIELDS = ["solver", "n", "eps", "runs", "ok_runs", "mean_cost", "mean_oracle_cost",
              "mean_time_ms", "mean_phases"]

EXIT_PARAM, EXIT_INPUT, EXIT_NUMERIC, EXIT_INVARIANT = 2, 3, 4, 5


def _images_path(p: str | None) -> Path:
    if p is None:
        raise ParameterError("--images is required for --kind mnist")
    path = Path(p)
    if not path.is_absolute() and not path.exists() and os.environ.get(DATA_ENV):
        path = Path(os.environ[DATA_ENV]) / path
    return path


def _make_instance(kind: str, n: int, seed: int, images: str | None) -> AssignmentInstance:
    if kind == "square":
        return instances.gen_uniform_square(n, seed)
    if kind == "mnist":
        return instances.load_mnist_pair(_images_path(images), n, seed)
    raise ParameterError(f"unknown instance kind {kind!r}")


def run_solver(inst: AssignmentInstance, solver: str, eps: float | None, *,
               reg: float | None = None, verify: bool = False, threads: int = 1,
               normalize: bool = True, max_iters: int = 10_000) -> dict:
    """Solve one instance and return a flat result record.

    Costs in the record are on the normalized scale unless ``normalize`` is
    off, in which case both ``eps`` and the costs refer to raw units.
    """
    unit = 1.0 if normalize else inst.scale
    n = min(inst.n_a, inst.n_b)
    rec: dict = {"solver": solver, "n": n, "eps": eps, "reg": None, "phases": None,
                 "oracle_cost": None, "violations": []}
    inner = None
    if solver in ("pushrelabel", "pushrelabel-ot") or (solver == "sinkhorn" and reg is None):
        if eps is None:
            raise ParameterError(f"--eps is required for solver {solver}")
        inner = eps / unit

    t0 = time.perf_counter()
    if solver == "pushrelabel":
        m, stats = assignment.solve(inst, inner, verify=verify, threads=threads)
        cost = matching_cost(m, inst)
        rec["phases"] = stats.phases
        rec["violations"] += stats.violations
        rec["_matching"] = m
        rec["_stats"] = stats
    elif solver == "pushrelabel-ot":
        plan, stats = transport.solve_ot(instances.assignment_to_ot(inst), inner,
                                         verify=verify, threads=threads)
        cost = plan.cost * n
        rec["phases"] = stats.phases
        rec["violations"] += stats.violations
        rec["_plan"] = plan
    elif solver == "sinkhorn":
        if reg is None:
            reg = sinkhorn.reg_for_eps(inner, n)
        rec["reg"] = reg
        _, iters, cost = sinkhorn.sinkhorn(instances.assignment_to_ot(inst),
                                           sinkhorn.SinkhornConfig(reg=reg, max_iters=max_iters))
        cost *= n
        rec["phases"] = iters
    elif solver == "hungarian":
        _, cost = oracles.hungarian_exact(inst, cap=max(inst.n_a, inst.n_b))
    elif solver == "exact-ot":
        _, cost = oracles.exact_ot(instances.assignment_to_ot(inst))
        cost *= n
    else:
        raise ParameterError(f"unknown solver {solver!r}; choose from {', '.join(SOLVERS)}")
    rec["time_ms"] = 1000.0 * (time.perf_counter() - t0)

    # every solver reports total matching cost; transport plans with mass 1/n are scaled by n
    rec["cost"] = cost * unit
    if verify:
        _verify(inst, solver, rec, inner, unit)
    return rec


def _verify(inst, solver, rec, inner, unit):
    n = min(inst.n_a, inst.n_b)
    if solver == "pushrelabel":
        rec["violations"] += rec["_stats"].bound_violations()
        if max(inst.n_a, inst.n_b) <= oracles.HUNGARIAN_CAP:
            _, opt = oracles.hungarian_exact(inst)
            rec["oracle_cost"] = opt * unit
            bound = opt + 3 * inner * n
            if rec["cost"] / unit > bound:
                rec["violations"].append(f"cost {rec['cost']} above oracle bound {bound * unit}")
    elif solver == "pushrelabel-ot":
        plan = rec["_plan"]
        ot = instances.assignment_to_ot(inst)
        if plan.supply_marginals(inst.n_b) != list(ot.nu):
            rec["violations"].append("plan does not ship all supply")
        if max(inst.n_a, inst.n_b) <= oracles.EXACT_OT_CAP:
            _, opt = oracles.exact_ot(ot)
            rec["oracle_cost"] = opt * n * unit
            if plan.cost > opt + inner:
                rec["violations"].append(f"cost {plan.cost} above oracle bound {opt + inner}")
    elif solver == "sinkhorn":
        if max(inst.n_a, inst.n_b) <= oracles.HUNGARIAN_CAP:
            rec["oracle_cost"] = oracles.hungarian_exact(inst)[1] * unit
    elif solver == "hungarian":
        if max(inst.n_a, inst.n_b) <= 8:
            bf = oracles.brute_force_matching(inst)
            rec["oracle_cost"] = bf * unit
            if abs(bf - rec["cost"] / unit) > 1e-12:
                rec["violations"].append(f"hungarian {rec['cost']} != brute force {bf * unit}")
    elif solver == "exact-ot":
        opt = oracles.hungarian_exact(inst)[1]
        rec["oracle_cost"] = opt * unit
        if abs(opt - rec["cost"] / unit) > 1e-9 * n:
            rec["violations"].append(f"exact OT {rec['cost']} != assignment optimum {opt * unit}")


def _print_record(rec: dict, verify: bool) -> None:
    keys = ["solver", "n", "eps", "reg", "cost", "time_ms", "phases"]
    if verify:
        keys.append("oracle_cost")
    for k in keys:
        v = rec.get(k)
        if v is None:
            continue
        print(f"{k}: {v:.6f}" if isinstance(v, float) else f"{k}: {v}")
    if rec.get("oracle_cost") is not None and rec["solver"] in ("pushrelabel", "sinkhorn",
                                                                "pushrelabel-ot"):
        print(f"oracle_gap: {rec['cost'] - rec['oracle_cost']:.6f}")
    if verify:
        viol = rec["violations"]
        print(f"verify: {'pass' if not viol else 'FAIL'} ({len(viol)} violations)")
        for v in viol[:20]:
            print(f"  {v}")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _append_csv(path: Path, rows: list[dict], fields: list[str]) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r.get(f)) for f in fields])


def cmd_gen(args) -> int:
    inst = _make_instance(args.kind, args.n, args.seed, args.images)
    instances.save_instance(inst, args.out)
    print(f"wrote {args.out}: n_a={inst.n_a} n_b={inst.n_b} scale={inst.scale:.6f}")
    return 0


def cmd_solve(args) -> int:
    if args.instance:
        inst = instances.load_instance(args.instance)
    else:
        if args.n is None:
            raise ParameterError("give --instance or --n with --kind")
        inst = _make_instance(args.kind, args.n, args.seed, args.images)
    rec = run_solver(inst, args.solver, args.eps, reg=args.reg, verify=args.verify,
                     threads=args.threads, normalize=not args.no_normalize,
                     max_iters=args.max_iters)
    rec["seed"] = inst.meta.get("seed")
    rec["status"] = "ok"
    _print_record(rec, args.verify)
    if args.csv:
        _append_csv(Path(args.csv), [rec], BENCH_FIELDS)
    return EXIT_INVARIANT if args.verify and rec["violations"] else 0


def aggregate(rows: list[dict]) -> list[dict]:
    cells: dict[tuple, list[dict]] = defaultdict(list)
    for r in rows:
        cells[(r["solver"], r["n"], r["eps"])].append(r)

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return sum(vals) / len(vals) if vals else None

    out = []
    for (solver, n, eps), rs in cells.items():
        ok = [r for r in rs if r["status"] == "ok"]
        out.append({"solver": solver, "n": n, "eps": eps, "runs": len(rs), "ok_runs": len(ok),
                    "mean_cost": mean([r["cost"] for r in ok]),
                    "mean_oracle_cost": mean([r["oracle_cost"] for r in ok]),
                    "mean_time_ms": mean([r["time_ms"] for r in rs]),
                    "mean_phases": mean([r["phases"] for r in ok])})
    return out


def cmd_bench(args) -> int:
    solvers = args.solvers.split(",")
    for s in solvers:
        if s not in SOLVERS:
            raise ParameterError(f"unknown solver {s!r}")
    ns = [int(x) for x in args.n.split(",")]
    if args.eps:
        eps_grid = [float(x) for x in args.eps.split(",")]
    else:
        eps_grid = [0.75, 0.5, 0.25, 0.1] if args.kind == "mnist" else [0.1, 0.01]
    out = Path(args.out)
    agg_path = Path(args.agg) if args.agg else out.with_name(out.stem + "_agg" + out.suffix)
    if out.exists():
        out.unlink()
    rows = []
    any_violation = False
    for n in ns:
        for run in range(args.runs):
            seed = args.seed + run
            inst = _make_instance(args.kind, n, seed, args.images)
            for eps in eps_grid:
                for solver in solvers:
                    try:
                        rec = run_solver(inst, solver, eps, verify=args.verify,
                                         threads=args.threads,
                                         normalize=not args.no_normalize,
                                         max_iters=args.max_iters)
                        rec["status"] = "ok"
                    except NumericalError as exc:
                        log.warning("%s n=%d eps=%g seed=%d: %s", solver, n, eps, seed, exc)
                        rec = {"solver": solver, "n": n, "eps": eps, "cost": None,
                               "time_ms": None, "phases": None, "oracle_cost": None,
                               "reg": None, "status": "underflow", "violations": []}
                    rec["eps"] = eps
                    rec["seed"] = seed
                    if rec["violations"]:
                        any_violation = True
                        log.error("%s n=%d eps=%g seed=%d: %s", solver, n, eps, seed,
                                  rec["violations"][0])
                    rows.append(rec)
                    _append_csv(out, [rec], BENCH_FIELDS)
                    if not args.quiet:
                        print(f"{solver:15s} n={n:<6d} eps={eps:<7g} seed={seed:<5d} "
                              f"time_ms={_fmt(rec['time_ms']):>22s} status={rec['status']}")
    if agg_path.exists():
        agg_path.unlink()
    _append_csv(agg_path, aggregate(rows), AGG_FIELDS)
    print(f"wrote {len(rows)} rows to {out} and {agg_path}")
    return EXIT_INVARIANT if args.verify and any_violation else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pushrelabel-ot",
                                description="Approximate assignment / optimal transport benchmarks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def instance_flags(sp, n_required=False):
        sp.add_argument("--kind", choices=("square", "mnist"), default="square")
        sp.add_argument("--n", type=int, required=n_required)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--images", help=f"IDX3 image file (relative paths also tried under ${DATA_ENV})")

    g = sub.add_parser("gen", help="generate and cache an instance")
    instance_flags(g, n_required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve one instance")
    instance_flags(s)
    s.add_argument("--instance", help="cached instance file from `gen`")
    s.add_argument("--solver", choices=SOLVERS, default="pushrelabel")
    s.add_argument("--eps", type=float)
    s.add_argument("--reg", type=float, help="Sinkhorn regularization (default from --eps)")
    s.add_argument("--verify", action="store_true", help="check invariants and compare to an oracle")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--no-normalize", action="store_true",
                   help="interpret --eps and report costs in raw distance units")
    s.add_argument("--max-iters", type=int, default=10_000)
    s.add_argument("--csv", help="append the result row to this CSV file")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run a grid of (solver, n, eps, seed) cells")
    b.add_argument("--kind", choices=("square", "mnist"), default="square")
    b.add_argument("--images")
    b.add_argument("--n", default="500,1000,2000", help="comma separated sizes")
    b.add_argument("--eps", help="comma separated eps grid (default depends on --kind)")
    b.add_argument("--runs", type=int, default=30)
    b.add_argument("--seed", type=int, default=0, help="seed of the first run")
    b.add_argument("--solvers", default="pushrelabel,sinkhorn")
    b.add_argument("--out", default="bench.csv")
    b.add_argument("--agg", help="aggregate CSV (default: <out>_agg.csv)")
    b.add_argument("--verify", action="store_true")
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--no-normalize", action="store_true")
    b.add_argument("--max-iters", type=int, default=10_000)
    b.add_argument("--quiet", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except InputFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
