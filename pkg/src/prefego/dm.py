"""Decision makers: simulated (hidden true utility) and interactive (human via the service).

Also computes the reference optimum of a utility over a problem and the
opportunity cost of a chosen solution against it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .nsga2 import FrontApproximation, non_dominated_mask
from .scalarize import UtilityModel, utility
from .testbed import ProblemSpec

log = logging.getLogger(__name__)

CACHE_ENV = "PREFEGO_CACHE_DIR"
OC_TOLERANCE = 1e-9


class SimulatedDM:
    """A DM who picks by maximizing a known true utility."""

    interactive = False

    def __init__(self, true_model: UtilityModel):
        self.true_model = true_model

    def __repr__(self):
        return f"SimulatedDM({self.true_model!r})"


class AlreadyPicked(RuntimeError):
    pass


class NotAwaiting(RuntimeError):
    pass


class InteractiveDM:
    """Rendezvous between a parked run (one waiter) and a pick source (one resolver).

    ``timeout=None`` waits forever; ``timeout=0`` means no human is attached
    and picking raises immediately.
    """

    interactive = True

    def __init__(self, timeout: float | None = None, on_present=None):
        self.timeout = timeout
        self.on_present = on_present
        self.front: FrontApproximation | None = None
        self._index: int | None = None
        self._lock = threading.Lock()
        self._event = threading.Event()

    @property
    def awaiting(self) -> bool:
        return self.front is not None and self._index is None

    def present(self, front: FrontApproximation) -> None:
        with self._lock:
            self.front = front
            self._index = None
            self._event.clear()
        if self.on_present is not None:
            self.on_present(front)

    def deliver(self, index: int) -> None:
        """Hand a pick to the waiting run; succeeds at most once per front."""
        with self._lock:
            if self.front is None:
                raise NotAwaiting("no front has been presented")
            if self._index is not None:
                raise AlreadyPicked("a pick was already delivered")
            if not 0 <= index < len(self.front):
                raise IndexError(f"pick index {index} outside [0, {len(self.front)})")
            self._index = int(index)
            self._event.set()

    def wait(self) -> int:
        if self.timeout == 0:
            raise TimeoutError("interactive decision maker used without an attached UI")
        if not self._event.wait(self.timeout):
            raise TimeoutError(f"no pick received within {self.timeout} s")
        return self._index


def pick_from_front(oracle, front: FrontApproximation) -> int:
    """Index of the front member the DM prefers (ties go to the lowest index)."""
    if len(front) == 0:
        raise ValueError("cannot pick from an empty front")
    if oracle.interactive:
        if oracle.front is not front:
            oracle.present(front)
        return oracle.wait()
    u = utility(front.objectives, oracle.true_model)
    return int(np.argmax(u))


def final_pick(oracle, designs, objectives) -> tuple[int, np.ndarray, np.ndarray]:
    """DM's end-of-run choice among the non-dominated evaluated points.

    Returns ``(index, design, objectives)`` with ``index`` into the full list.
    """
    X = np.atleast_2d(np.asarray(designs, dtype=float))
    Y = np.atleast_2d(np.asarray(objectives, dtype=float))
    if len(Y) == 0:
        raise ValueError("no evaluated points to pick from")
    if oracle.interactive:
        raise TypeError("the final choice of an interactive DM is made through the service")
    gamma = np.flatnonzero(non_dominated_mask(Y))
    u = utility(Y[gamma], oracle.true_model)
    i = int(gamma[np.argmax(u)])
    return i, X[i], Y[i]


@dataclass(frozen=True)
class ReferenceBest:
    problem: str
    kind: str
    theta: tuple[float, ...]
    rho: float
    u_star: float
    x_star: tuple[float, ...]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta"], d["x_star"] = list(self.theta), list(self.x_star)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceBest":
        return cls(d["problem"], d["kind"], tuple(d["theta"]), d["rho"], d["u_star"], tuple(d["x_star"]))

    @property
    def model(self) -> UtilityModel:
        return UtilityModel(self.kind, self.theta, self.rho)


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "prefego")


def _cache_path(cache_dir: Path, problem: ProblemSpec, model: UtilityModel, grid: int) -> Path:
    key = json.dumps([problem.name, model.kind, [repr(t) for t in model.theta], repr(model.rho), grid])
    digest = hashlib.sha256(key.encode()).hexdigest()[:24]
    return cache_dir / f"{problem.name}-{model.kind}-{digest}.json"


def _grid_search(problem: ProblemSpec, model: UtilityModel, grid: int, top: int):
    lo, hi = problem.lower, problem.upper
    axes = [np.linspace(lo[d], hi[d], grid) for d in range(problem.D)]
    g1, g2 = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    u = np.empty(len(pts))
    chunk = 250_000
    for s in range(0, len(pts), chunk):
        u[s : s + chunk] = utility(problem.evaluate(pts[s : s + chunk]), model)
    best = np.argsort(-u, kind="stable")[:top]
    return pts[best], u[best]


def compute_reference_best(
    problem: ProblemSpec,
    model: UtilityModel,
    *,
    grid: int = 1001,
    n_polish: int = 10,
    cache_dir: Path | str | None | bool = None,
) -> ReferenceBest:
    """Global utility maximizer over a 2-D problem: dense grid, then local polish.

    Results are cached as JSON under ``cache_dir`` (default from the
    ``PREFEGO_CACHE_DIR`` environment variable); pass ``cache_dir=False`` to
    bypass the cache.
    """
    if problem.D != 2:
        raise ValueError("reference search needs a 2-D design space")
    path = None
    if cache_dir is not False:
        cdir = Path(cache_dir) if cache_dir else default_cache_dir()
        path = _cache_path(cdir, problem, model, grid)
        if path.exists():
            return ReferenceBest.from_dict(json.loads(path.read_text()))

    starts, start_u = _grid_search(problem, model, grid, n_polish)
    best_x, best_u = starts[0], float(start_u[0])
    lo, hi = problem.lower, problem.upper
    bounds = list(zip(lo, hi))

    def neg_u(x):
        return -float(utility(problem.evaluate(np.clip(x, lo, hi)), model))

    for x0 in starts:
        x = x0
        # restarted simplex copes with the Tchebychev kink
        for _ in range(3):
            res = minimize(
                neg_u, x, method="Nelder-Mead", bounds=bounds,
                options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 4000},
            )
            x = np.clip(res.x, lo, hi)
        val = -neg_u(x)
        if val > best_u:
            best_x, best_u = x, val

    ref = ReferenceBest(
        problem.name, model.kind, tuple(model.theta), float(model.rho), float(best_u),
        tuple(float(v) for v in best_x),
    )
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp")
        tmp.write_text(json.dumps(ref.to_dict(), indent=1))
        tmp.replace(path)
    return ref


def opportunity_cost(best: ReferenceBest, picked_y, model: UtilityModel | None = None) -> float:
    model = model or best.model
    if (model.kind, tuple(model.theta), model.rho) != (best.kind, best.theta, best.rho):
        raise ValueError("utility model does not match the reference optimum")
    oc = best.u_star - float(utility(np.asarray(picked_y, dtype=float), model))
    if oc < -OC_TOLERANCE:
        raise ValueError(
            f"negative opportunity cost {oc:.3e}: reference optimum for {best.problem} is stale or wrong"
        )
    return oc
