"""Command line entry point: ``prefego {run,trace,psweep,reference-best,serve}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import engine, harness
from .dm import compute_reference_best
from .scalarize import DEFAULT_RHO, UtilityModel
from .testbed import PROBLEMS, lookup_problem


def _common(p: argparse.ArgumentParser, multi: bool = False) -> None:
    if multi:
        p.add_argument("--problem", nargs="+", default=["POL"], choices=sorted(PROBLEMS))
    else:
        p.add_argument("--problem", default="POL", choices=sorted(PROBLEMS))
    p.add_argument("--budget", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dm-utility", choices=("tchebychev", "linear"), default="tchebychev")
    p.add_argument("--rho", type=float, default=DEFAULT_RHO)
    p.add_argument("--generations", type=int, default=300, help="NSGA-II generations")
    p.add_argument("--pop-size", type=int, default=100, help="NSGA-II population")
    p.add_argument("--out", type=Path, default=None)


def _experiment_args(p: argparse.ArgumentParser, default_p: list[int]) -> None:
    _common(p, multi=True)
    p.add_argument("-p", type=int, nargs="+", default=default_p)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--paper-scale", action="store_true",
                   help="50 replications for HOLE, 160 for POL, NSGA-II 100 x 300")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefego", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one run with a simulated DM")
    _common(p)
    p.add_argument("-p", type=int, default=1)
    p.add_argument("--theta", type=float, nargs="+", help="true DM weights (random if omitted)")

    _experiment_args(sub.add_parser("trace", help="replicated OC traces"), [0, 1, 2])
    _experiment_args(sub.add_parser("psweep", help="final OC as a function of p"), [])

    p = sub.add_parser("reference-best", help="utility optimum of a problem")
    _common(p)
    p.add_argument("--theta", type=float, nargs="+", required=True)

    p = sub.add_parser("serve", help="HTTP service for interactive runs")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--persist-dir", type=Path, default=None)
    p.add_argument("--reveal-designs", action="store_true")
    return parser


def _emit(obj, out: Path | None, name: str) -> None:
    text = json.dumps(obj, indent=1)
    if out is None:
        print(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    print(f"wrote {out / name}")


def _spec(args, final_only: bool) -> list[harness.ExperimentSpec]:
    p_values = args.p
    if not p_values:
        n0 = 11 * lookup_problem(args.problem[0]).D - 1
        p_values = [p for p in harness.DEFAULT_P_GRID if p < args.budget - n0]
    base = harness.ExperimentSpec(
        problems=list(args.problem), budget=args.budget, p_values=p_values, reps=args.reps,
        dm_kind=args.dm_utility, base_seed=args.seed, stride=args.stride,
        out_dir=str(args.out) if args.out else None, rho=args.rho, pop_size=args.pop_size,
        generations=args.generations, workers=args.workers, final_only=final_only,
    )
    if not args.paper_scale:
        return [base]
    specs = []
    for name in args.problem:
        out = str(Path(args.out) / name) if args.out else None
        specs.append(replace(base, problems=[name], reps=harness.PAPER_REPS[name], pop_size=100,
                             generations=300, out_dir=out))
    return specs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            spec = lookup_problem(args.problem)
            if args.theta:
                model = UtilityModel(args.dm_utility, tuple(args.theta), args.rho)
            else:
                model = harness.true_model(args.dm_utility, args.seed, spec.K, args.rho)
            cfg = engine.RunConfig(args.problem, args.budget, args.p, dm_model=model, rho=args.rho,
                                   pop_size=args.pop_size, generations=args.generations, seed=args.seed)
            res = engine.run(cfg)
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / "result.json").write_text(res.to_json())
                (args.out / "history.csv").write_text(res.history_csv())
            summary = {"problem": args.problem, "theta_true": list(model.theta), "oc": res.oc,
                       "theta_hat": None if res.elicitation is None else res.elicitation.theta_hat.tolist(),
                       "evaluations": len(res.X), "error": res.error}
            print(json.dumps(summary, indent=1))
            return 1 if res.failed else 0

        if args.command in ("trace", "psweep"):
            for spec in _spec(args, final_only=args.command == "psweep"):
                agg = harness.run_experiment(spec)
                for row in agg.rows:
                    print(f"{row['problem']:7s} p={row['p']:<3d} iter={row['iter']:<4d} "
                          f"OC={row['mean_oc']:.5g} +/- {row['half_width']:.3g} (n={row['n']})")
                if agg.failures:
                    print(f"{len(agg.failures)} failed replications", file=sys.stderr)
            return 0

        if args.command == "reference-best":
            model = UtilityModel(args.dm_utility, tuple(args.theta), args.rho)
            ref = compute_reference_best(lookup_problem(args.problem), model)
            _emit(ref.to_dict(), args.out, "reference_best.json")
            return 0

        if args.command == "serve":
            import uvicorn

            from .service import create_app

            uvicorn.run(create_app(args.persist_dir, args.reveal_designs), host=args.host, port=args.port)
            return 0
    except (ValueError, KeyError, OSError) as exc:
        print(f"prefego: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
