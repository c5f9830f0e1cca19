"""Replicated experiments: OC traces, p-sweeps, aggregation and plot-ready CSV output."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import t as student_t

from .dm import SimulatedDM, compute_reference_best
from .engine import RunConfig, RunState, advance, oc_trace, substream
from .scalarize import DEFAULT_RHO, UtilityModel, sample_theta
from .testbed import lookup_problem

log = logging.getLogger(__name__)

DEFAULT_P_GRID = (0, 1, 2, 5, 10, 20, 40, 60)
PAPER_REPS = {"HOLE-1": 50, "HOLE-2": 50, "POL": 160}
FLOAT_FMT = ".9g"


@dataclass
class ExperimentSpec:
    problems: list[str]
    budget: int
    p_values: list[int]
    reps: int = 10
    dm_kind: str = "tchebychev"
    base_seed: int = 0
    stride: int = 5
    out_dir: str | None = None
    rho: float = DEFAULT_RHO
    pop_size: int = 100
    generations: int = 300
    workers: int = 1
    final_only: bool = False

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("need at least one replication")
        if self.dm_kind not in ("tchebychev", "linear"):
            raise ValueError(f"unknown DM utility {self.dm_kind!r}")
        for name in self.problems:
            n0 = 11 * lookup_problem(name).D - 1
            for p in self.p_values:
                if not 0 <= p < self.budget - n0:
                    raise ValueError(f"p={p} must be smaller than remaining budget {self.budget - n0}")

    def checkpoints(self, problem: str, p: int) -> list[int]:
        if self.final_only:
            return [self.budget]
        n0 = 11 * lookup_problem(problem).D - 1
        first = n0 + p + 1
        pts = [i for i in range(self.stride, self.budget + 1, self.stride) if i >= first]
        if not pts or pts[-1] != self.budget:
            pts.append(self.budget)
        return pts


def replicate_seed(base_seed: int, rep: int) -> int:
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(rep),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def true_model(kind: str, seed: int, K: int = 2, rho: float = DEFAULT_RHO) -> UtilityModel:
    """The hidden DM utility of one replication."""
    return UtilityModel(kind, tuple(sample_theta(K, substream(seed, "truth"))), rho)


def _replicate(args) -> list[dict]:
    spec, problem, rep = args
    seed = replicate_seed(spec.base_seed, rep)
    pspec = lookup_problem(problem)
    model = true_model(spec.dm_kind, seed, pspec.K, spec.rho)
    base = dict(problem=problem, rep=rep, seed=seed, theta=list(model.theta))
    try:
        reference = compute_reference_best(pspec, model)
        oracle = SimulatedDM(model)
        common = dict(rho=spec.rho, pop_size=spec.pop_size, generations=spec.generations, seed=seed)
        # one plain-ParEGO prefix serves every p of this replication
        longest = max(spec.budget - p for p in spec.p_values)
        prefix = RunState(RunConfig(problem, budget=longest, p=0, **common))
        advance(prefix)
    except Exception as exc:  # noqa: BLE001 - reported per replication
        return [dict(base, p=p, trace=[], error=f"{type(exc).__name__}: {exc}") for p in spec.p_values]

    rows = []
    for p in spec.p_values:
        try:
            cfg = RunConfig(problem, budget=spec.budget, p=p, dm_model=model, **common)
            trace = oc_trace(cfg, oracle, spec.checkpoints(problem, p), reference=reference, prefix=prefix)
            rows.append(dict(base, p=p, trace=[[i, oc] for i, oc in trace], error=None))
        except Exception as exc:  # noqa: BLE001
            rows.append(dict(base, p=p, trace=[], error=f"{type(exc).__name__}: {exc}"))
    return rows


def summarize(values) -> tuple[float, float]:
    """Mean and Student-t 95% half-width; order of ``values`` does not matter."""
    v = sorted(float(x) for x in values)
    n = len(v)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(v) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((x - mean) ** 2 for x in v) / (n - 1)
    return mean, float(student_t.ppf(0.975, n - 1) * math.sqrt(var / n))


@dataclass
class AggregateResult:
    spec: dict
    rows: list[dict] = field(default_factory=list)
    paired: list[dict] = field(default_factory=list)
    replicates: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def series(self, problem: str, p: int) -> list[dict]:
        return [r for r in self.rows if r["problem"] == problem and r["p"] == p]

    def final(self, problem: str, p: int) -> dict:
        return self.series(problem, p)[-1]

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate(spec: ExperimentSpec, replicates: list[dict]) -> AggregateResult:
    ok = [r for r in replicates if r["error"] is None]
    failures = [r for r in replicates if r["error"] is not None]
    for f in failures:
        warnings.warn(f"replication {f['rep']} of {f['problem']} p={f['p']} failed: {f['error']}")

    table: dict[tuple, dict[int, float]] = {}
    for r in ok:
        for i, oc in r["trace"]:
            table.setdefault((r["problem"], r["p"], i), {})[r["rep"]] = oc

    rows = []
    for (problem, p, i), by_rep in sorted(table.items()):
        mean, hw = summarize(by_rep.values())
        rows.append(dict(problem=problem, p=p, iter=i, mean_oc=mean, half_width=hw,
                         ci_lo=mean - hw, ci_hi=mean + hw, n=len(by_rep)))

    paired = []
    if 0 in spec.p_values:
        for (problem, p, i), by_rep in sorted(table.items()):
            base = table.get((problem, 0, i))
            if p == 0 or base is None:
                continue
            reps = sorted(set(by_rep) & set(base))
            diffs = [by_rep[k] - base[k] for k in reps]
            mean, hw = summarize(diffs)
            paired.append(dict(problem=problem, p=p, iter=i, mean_diff=mean, ci_lo=mean - hw, ci_hi=mean + hw,
                               n_better=sum(d < 0 for d in diffs), n_worse=sum(d > 0 for d in diffs),
                               n_tie=sum(d == 0 for d in diffs), n=len(diffs)))

    spec_d = asdict(spec)
    spec_d.pop("workers")
    spec_d.pop("out_dir")
    return AggregateResult(spec_d, rows, paired, sorted(ok, key=_rep_key), sorted(failures, key=_rep_key))


def _rep_key(r):
    return (r["problem"], r["p"], r["rep"])


def _collect(spec: ExperimentSpec) -> list[dict]:
    tasks = [(spec, problem, rep) for problem in spec.problems for rep in range(spec.reps)]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            chunks = list(pool.map(_replicate, tasks))
    else:
        chunks = [_replicate(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def run_experiment(spec: ExperimentSpec) -> AggregateResult:
    """Replicate OC traces for every (problem, p) and aggregate them.

    Every replication draws its own true DM weights; all p values of a
    replication share the seed, so differences against p=0 are paired.
    """
    agg = aggregate(spec, _collect(spec))
    if spec.out_dir:
        emit_plotdata(agg, spec.out_dir)
    return agg


def psweep(spec: ExperimentSpec) -> AggregateResult:
    """Final OC (checkpoint B) as a function of p."""
    spec = ExperimentSpec(**{**asdict(spec), "final_only": True})
    return run_experiment(spec)


def _fmt(x) -> str:
    return format(float(x), FLOAT_FMT)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_plotdata(agg: AggregateResult, path) -> list[Path]:
    """Write plot-ready CSVs (and the full aggregate as JSON) into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    final_only = agg.spec.get("final_only", False)

    if final_only:
        for problem in sorted({r["problem"] for r in agg.rows}):
            f = out / f"psweep_{problem}.csv"
            rows = [[r["p"], _fmt(r["mean_oc"]), _fmt(r["ci_lo"]), _fmt(r["ci_hi"])]
                    for r in agg.rows if r["problem"] == problem]
            _write_csv(f, ["p", "mean_oc", "ci_lo", "ci_hi"], rows)
            written.append(f)
    else:
        f = out / "trace.csv"
        rows = [[r["iter"], f"{r['problem']} p={r['p']}", _fmt(r["mean_oc"]), _fmt(r["ci_lo"]), _fmt(r["ci_hi"])]
                for r in agg.rows]
        _write_csv(f, ["iter", "series", "mean_oc", "ci_lo", "ci_hi"], rows)
        written.append(f)

    if agg.paired:
        f = out / "paired.csv"
        rows = [[r["iter"], f"{r['problem']} p={r['p']}", _fmt(r["mean_diff"]), _fmt(r["ci_lo"]), _fmt(r["ci_hi"]),
                 r["n_better"], r["n_worse"], r["n_tie"]] for r in agg.paired]
        _write_csv(f, ["iter", "series", "mean_diff", "ci_lo", "ci_hi", "n_better", "n_worse", "n_tie"], rows)
        written.append(f)

    f = out / "replicates.csv"
    rows = [[r["problem"], r["p"], r["rep"], r["seed"], *map(_fmt, r["theta"]), i, _fmt(oc)]
            for r in agg.replicates for i, oc in r["trace"]]
    K = len(agg.replicates[0]["theta"]) if agg.replicates else 2
    _write_csv(f, ["problem", "p", "rep", "seed", *(f"theta_{k + 1}" for k in range(K)), "iter", "oc"], rows)
    written.append(f)

    f = out / "aggregate.json"
    f.write_text(json.dumps(agg.to_dict(), indent=1, sort_keys=True))
    written.append(f)
    return written


def read_plotdata(path) -> list[dict]:
    """Parse a CSV written by :func:`emit_plotdata` back into typed rows."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = {"iter", "p", "rep", "seed", "n_better", "n_worse", "n_tie"}
    return [{k: (int(v) if k in ints else v if k in ("series", "problem") else float(v)) for k, v in r.items()}
            for r in rows]
