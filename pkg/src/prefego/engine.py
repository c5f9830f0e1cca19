"""ParEGO with an optional one-step preference elicitation.

A run evaluates an initial Latin hypercube design, performs ParEGO steps
(random Tchebychev weights, GP on scalarized utilities, EI), and, when
``p > 0``, stops ``p`` evaluations before the end to show the DM a dense
front predicted from per-objective GP posterior means. The weights implied
by the DM's pick drive the final ``p`` EI steps.

Randomness comes from named substreams keyed by ``(seed, name, iteration)``,
so runs that differ only in ``p`` share their evaluations up to the earlier
elicitation point, and a run can resume from a snapshot of its state.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from . import gp
from .acquisition import EIQuery, maximize_ei
from .dm import (
    ReferenceBest,
    SimulatedDM,
    compute_reference_best,
    final_pick,
    opportunity_cost,
    pick_from_front,
)
from .nsga2 import FrontApproximation, non_dominated_mask, run_nsga2
from .scalarize import DEFAULT_RHO, UtilityModel, estimate_theta, sample_theta, utility
from .testbed import lookup_problem

log = logging.getLogger(__name__)

N_INCUMBENTS = 5

PHASES = ("InitialDesign", "ParEGOLoop", "AwaitingElicitation", "FocusedPhase", "Done")


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Independent generator for one named purpose at one iteration."""
    key = (zlib.crc32(name.encode()), int(index))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


@dataclass
class RunConfig:
    problem: str
    budget: int = 40
    p: int = 0
    n_init: int | None = None
    dm_model: UtilityModel | None = None
    interactive: bool = False
    rho: float = DEFAULT_RHO
    pop_size: int = 100
    generations: int = 300
    seed: int = 0
    theta_lattice: int | None = None

    def __post_init__(self):
        spec = lookup_problem(self.problem)
        if self.n_init is None:
            self.n_init = 11 * spec.D - 1
        if isinstance(self.dm_model, dict):
            self.dm_model = UtilityModel.from_dict(self.dm_model)
        if self.n_init < spec.D + 1:
            raise ValueError(f"n_init must be at least D + 1 = {spec.D + 1}")
        if self.budget <= self.n_init:
            raise ValueError(f"budget {self.budget} must exceed the initial design size {self.n_init}")
        if not 0 <= self.p < self.budget - self.n_init:
            raise ValueError("p must be smaller than remaining budget")
        if not self.rho > 0:
            raise ValueError("rho must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dm_model"] = self.dm_model.to_dict() if self.dm_model else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)


@dataclass
class ElicitationRecord:
    iteration: int
    front: FrontApproximation
    picked: int | None = None
    theta_hat: np.ndarray | None = None

    @property
    def picked_objectives(self) -> np.ndarray | None:
        return None if self.picked is None else self.front.objectives[self.picked]

    def to_dict(self, include_front: bool = True) -> dict:
        d = {
            "iteration": self.iteration,
            "picked": self.picked,
            "picked_design": None if self.picked is None else self.front.designs[self.picked].tolist(),
            "picked_objectives": None if self.picked is None else self.picked_objectives.tolist(),
            "theta_hat": None if self.theta_hat is None else self.theta_hat.tolist(),
            "front_size": len(self.front),
            "descriptor": self.front.descriptor,
        }
        if include_front:
            d["front"] = self.front.to_json()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ElicitationRecord":
        front = FrontApproximation.from_json(d["front"], descriptor=d.get("descriptor", ""))
        th = None if d.get("theta_hat") is None else np.array(d["theta_hat"])
        return cls(d["iteration"], front, d.get("picked"), th)


@dataclass
class RunState:
    config: RunConfig
    X: list = field(default_factory=list)
    Y: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    u_max: list = field(default_factory=list)
    phase: str = "InitialDesign"
    elicitation: ElicitationRecord | None = None

    @property
    def n(self) -> int:
        return len(self.X)

    def set_phase(self, phase: str) -> None:
        if PHASES.index(phase) < PHASES.index(self.phase):
            raise RuntimeError(f"illegal phase transition {self.phase} -> {phase}")
        self.phase = phase

    def truncated(self, n: int) -> "RunState":
        """Copy of the state as it was after ``n`` evaluations of the ParEGO loop."""
        if n < self.config.n_init or n > self.n:
            raise ValueError(f"cannot truncate a {self.n}-point history to {n}")
        if any(lbl == "focused" for lbl in self.labels[:n]):
            raise ValueError("truncation point lies inside the focused phase")
        return RunState(
            copy.copy(self.config),
            self.X[:n], self.Y[:n], self.labels[:n], self.thetas[:n], self.u_max[:n],
            phase="ParEGOLoop",
        )

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "X": [list(map(float, x)) for x in self.X],
            "Y": [list(map(float, y)) for y in self.Y],
            "labels": list(self.labels),
            "thetas": [None if t is None else list(map(float, t)) for t in self.thetas],
            "u_max": [None if u is None else float(u) for u in self.u_max],
            "phase": self.phase,
            "elicitation": None if self.elicitation is None else self.elicitation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunState":
        s = cls(RunConfig.from_dict(d["config"]))
        s.X = [np.array(x) for x in d["X"]]
        s.Y = [np.array(y) for y in d["Y"]]
        s.labels = list(d["labels"])
        s.thetas = [None if t is None else np.array(t) for t in d["thetas"]]
        s.u_max = list(d["u_max"])
        s.phase = d["phase"]
        if d.get("elicitation"):
            s.elicitation = ElicitationRecord.from_dict(d["elicitation"])
        return s


@dataclass
class RunResult:
    config: RunConfig
    X: np.ndarray
    Y: np.ndarray
    labels: list
    thetas: list
    gamma: np.ndarray
    elicitation: ElicitationRecord | None = None
    final_index: int | None = None
    oc: float | None = None
    oc_trace: list | None = None
    reference: ReferenceBest | None = None
    error: dict | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "history": [
                {"x": x.tolist(), "y": y.tolist(), "phase": lbl, "theta": None if t is None else t.tolist()}
                for x, y, lbl, t in zip(self.X, self.Y, self.labels, self.thetas)
            ],
            "gamma": self.gamma.tolist(),
            "elicitation": None if self.elicitation is None else self.elicitation.to_dict(),
            "final_index": self.final_index,
            "oc": self.oc,
            "oc_trace": self.oc_trace,
            "reference": None if self.reference is None else self.reference.to_dict(),
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def history_csv(self) -> str:
        D = self.X.shape[1] if len(self.X) else 0
        K = self.Y.shape[1] if len(self.Y) else 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["iter", *(f"x_{d + 1}" for d in range(D)), *(f"f_{k + 1}" for k in range(K)), "phase",
             *(f"theta_{k + 1}" for k in range(K))]
        )
        for i, (x, y, lbl, t) in enumerate(zip(self.X, self.Y, self.labels, self.thetas), start=1):
            th = [repr(float(v)) for v in t] if t is not None else [""] * K
            w.writerow([i, *map(repr, map(float, x)), *map(repr, map(float, y)), lbl, *th])
        return buf.getvalue()


def initial_design(config: RunConfig, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube sample of ``config.n_init`` points inside the problem bounds."""
    spec = lookup_problem(config.problem)
    sampler = qmc.LatinHypercube(d=spec.D, seed=rng)
    U = sampler.random(config.n_init)
    return qmc.scale(U, spec.lower, spec.upper)


def _record(state: RunState, x, y, label, theta=None, u_max=None):
    state.X.append(np.asarray(x, dtype=float))
    state.Y.append(np.asarray(y, dtype=float))
    state.labels.append(label)
    state.thetas.append(None if theta is None else np.asarray(theta, dtype=float))
    state.u_max.append(u_max)


def _check_budget(state: RunState):
    if state.n >= state.config.budget:
        raise RuntimeError("evaluation budget exhausted")


def _scalarized_step(state: RunState, theta, ei_rng, label):
    cfg = state.config
    spec = lookup_problem(cfg.problem)
    X = np.array(state.X)
    u = utility(np.array(state.Y), UtilityModel("tchebychev", tuple(theta), cfg.rho))
    model = gp.fit(X, u, spec.bounds)
    u_max = float(np.max(u))
    top = X[np.argsort(-u, kind="stable")[:N_INCUMBENTS]]
    choice = maximize_ei(EIQuery(model, u_max, spec.bounds), ei_rng, avoid=X, incumbents=top)
    y = spec.evaluate(choice.x)
    _record(state, choice.x, y, label, theta, u_max)
    return choice.x, y


def run_initial_design(state: RunState) -> None:
    cfg = state.config
    spec = lookup_problem(cfg.problem)
    for x in initial_design(cfg, substream(cfg.seed, "design")):
        _record(state, x, spec.evaluate(x), "design")
    state.set_phase("ParEGOLoop")


def parego_step(state: RunState, rng: np.random.Generator | None = None):
    """One ParEGO iteration with freshly drawn Tchebychev weights."""
    if state.phase != "ParEGOLoop":
        raise RuntimeError(f"parego_step called in phase {state.phase}")
    _check_budget(state)
    cfg = state.config
    spec = lookup_problem(cfg.problem)
    theta_rng = rng or substream(cfg.seed, "theta", state.n)
    ei_rng = rng or substream(cfg.seed, "ei", state.n)
    theta = sample_theta(spec.K, theta_rng, cfg.theta_lattice)
    return _scalarized_step(state, theta, ei_rng, "parego")


def prepare_elicitation(state: RunState, rng: np.random.Generator | None = None) -> FrontApproximation:
    """Fit one GP per objective and build the predicted front shown to the DM."""
    cfg = state.config
    spec = lookup_problem(cfg.problem)
    X = np.array(state.X)
    Y = np.array(state.Y)
    models = [gp.fit(X, Y[:, j], spec.bounds) for j in range(spec.K)]

    def predicted(Xq):
        return np.column_stack([m.predict(Xq)[0] for m in models])

    front = run_nsga2(
        predicted,
        spec.bounds,
        cfg.pop_size,
        cfg.generations,
        rng or substream(cfg.seed, "nsga2", state.n),
        descriptor=f"posterior-mean of GP snapshot at iteration {state.n}",
    )
    state.elicitation = ElicitationRecord(state.n, front)
    state.set_phase("AwaitingElicitation")
    return front


def apply_pick(state: RunState, index: int) -> ElicitationRecord:
    rec = state.elicitation
    if state.phase != "AwaitingElicitation" or rec is None:
        raise RuntimeError("no elicitation is pending")
    if not 0 <= index < len(rec.front):
        raise IndexError(f"pick index {index} outside [0, {len(rec.front)})")
    rec.picked = int(index)
    rec.theta_hat = estimate_theta(rec.front.objectives[index])
    state.set_phase("FocusedPhase")
    return rec


def elicit(state: RunState, oracle, rng: np.random.Generator | None = None, on_update=None) -> ElicitationRecord:
    if state.config.p <= 0:
        raise RuntimeError("elicitation requires p > 0")
    if state.n != state.config.budget - state.config.p:
        raise RuntimeError(f"elicitation expected at n = {state.config.budget - state.config.p}, got {state.n}")
    front = prepare_elicitation(state, rng)
    if on_update:
        on_update(state)
    return apply_pick(state, pick_from_front(oracle, front))


def focused_step(state: RunState, rng: np.random.Generator | None = None):
    """EI step under the weights estimated from the DM's pick."""
    if state.phase != "FocusedPhase" or state.elicitation is None or state.elicitation.theta_hat is None:
        raise RuntimeError("focused_step needs an applied pick")
    _check_budget(state)
    ei_rng = rng or substream(state.config.seed, "ei", state.n)
    return _scalarized_step(state, state.elicitation.theta_hat, ei_rng, "focused")


def advance(state: RunState, oracle=None, on_update=None) -> RunState:
    """Drive ``state`` to ``Done``, calling ``on_update(state)`` after each event."""
    cfg = state.config
    while state.phase != "Done":
        if state.phase == "InitialDesign":
            run_initial_design(state)
        elif state.phase == "ParEGOLoop":
            if state.n < cfg.budget - cfg.p:
                parego_step(state)
            elif cfg.p > 0:
                if oracle is None:
                    raise RuntimeError("elicitation needs a decision maker")
                elicit(state, oracle, on_update=on_update)
            else:
                state.set_phase("Done")
        elif state.phase == "AwaitingElicitation":
            # resumed from a snapshot parked at the elicitation
            apply_pick(state, pick_from_front(oracle, state.elicitation.front))
        elif state.phase == "FocusedPhase":
            if state.n < cfg.budget:
                focused_step(state)
            else:
                state.set_phase("Done")
        if on_update:
            on_update(state)
    return state


def _default_oracle(config: RunConfig):
    return SimulatedDM(config.dm_model) if config.dm_model is not None else None


def _result(state: RunState, oracle, reference: ReferenceBest | None, error=None) -> RunResult:
    X = np.array(state.X).reshape(state.n, -1)
    Y = np.array(state.Y).reshape(state.n, -1)
    gamma = np.flatnonzero(non_dominated_mask(Y)) if len(Y) else np.zeros(0, dtype=int)
    res = RunResult(state.config, X, Y, list(state.labels), list(state.thetas), gamma, state.elicitation, error=error)
    if error is None and oracle is not None and not oracle.interactive:
        spec = lookup_problem(state.config.problem)
        if reference is None:
            reference = compute_reference_best(spec, oracle.true_model)
        res.final_index, _, y = final_pick(oracle, X, Y)
        res.oc = opportunity_cost(reference, y, oracle.true_model)
        res.reference = reference
    return res


def run(
    config: RunConfig,
    oracle=None,
    *,
    state: RunState | None = None,
    reference: ReferenceBest | None = None,
    on_update=None,
) -> RunResult:
    """Execute (or resume) a full run and score the DM's final choice.

    ``oracle`` defaults to a simulated DM with ``config.dm_model``. Failures
    are captured in ``RunResult.error`` together with the phase they hit.
    """
    oracle = oracle if oracle is not None else _default_oracle(config)
    state = state if state is not None else RunState(config)
    try:
        advance(state, oracle, on_update)
    except Exception as exc:  # noqa: BLE001 - recorded, not swallowed
        log.exception("run failed in phase %s", state.phase)
        return _result(state, oracle, reference, {"phase": state.phase, "message": f"{type(exc).__name__}: {exc}"})
    return _result(state, oracle, reference)


def oc_trace(
    config: RunConfig,
    oracle=None,
    checkpoints=None,
    *,
    reference: ReferenceBest | None = None,
    prefix: RunState | None = None,
) -> list[tuple[int, float]]:
    """Opportunity cost had the run stopped at each checkpoint ``i``.

    For every ``i`` the shared ParEGO prefix is cut at ``i - p``, the DM is
    consulted there, ``p`` focused steps follow, and the final choice is
    scored. The prefix is evaluated once for all checkpoints; pass a finished
    plain-ParEGO ``prefix`` state with the same problem, seed and rho to share
    it between several values of ``p``.
    """
    oracle = oracle if oracle is not None else _default_oracle(config)
    if oracle is None or oracle.interactive:
        raise ValueError("oc_trace needs a simulated decision maker")
    cfg = config
    checkpoints = sorted(checkpoints) if checkpoints is not None else list(range(cfg.n_init + cfg.p + 1, cfg.budget + 1))
    for i in checkpoints:
        if not cfg.n_init + cfg.p < i <= cfg.budget:
            raise ValueError(f"checkpoint {i} outside ({cfg.n_init + cfg.p}, {cfg.budget}]")
    if reference is None:
        reference = compute_reference_best(lookup_problem(cfg.problem), oracle.true_model)

    if prefix is None:
        prefix = RunState(RunConfig(**{**cfg.__dict__, "p": 0, "budget": cfg.budget - cfg.p}))
        advance(prefix)
    elif (prefix.config.problem, prefix.config.seed, prefix.config.rho) != (cfg.problem, cfg.seed, cfg.rho) or (
        prefix.n < checkpoints[-1] - cfg.p
    ):
        raise ValueError("prefix does not belong to this configuration or is too short")

    trace = []
    for i in checkpoints:
        if cfg.p == 0:
            Y = np.array(prefix.Y[:i])
            _, _, y = final_pick(oracle, np.array(prefix.X[:i]), Y)
            trace.append((i, opportunity_cost(reference, y, oracle.true_model)))
            continue
        branch = prefix.truncated(i - cfg.p)
        branch.config = RunConfig(**{**cfg.__dict__, "budget": i})
        advance(branch, oracle)
        res = _result(branch, oracle, reference)
        trace.append((i, res.oc))
    return trace
