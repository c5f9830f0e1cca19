"""NSGA-II with simulated binary crossover and polynomial mutation (minimization)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def dominates(a, b) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("objective vectors must have equal length")
    return bool(np.all(a <= b) and np.any(a < b))


def dominance_matrix(F: np.ndarray) -> np.ndarray:
    """``M[i, j]`` is True iff row ``i`` dominates row ``j``."""
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    return le & lt


def non_dominated_mask(F) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    return ~dominance_matrix(F).any(axis=0)


def fast_non_dominated_sort(points) -> list[list[int]]:
    """Partition indices into successive non-dominated fronts."""
    F = np.atleast_2d(np.asarray(points, dtype=float))
    if len(F) == 0:
        raise ValueError("cannot sort an empty population")
    M = dominance_matrix(F)
    counts = M.sum(axis=0)
    fronts = []
    current = np.flatnonzero(counts == 0)
    while len(current):
        fronts.append(current.tolist())
        counts = counts - M[current].sum(axis=0)
        counts[current] = -1
        current = np.flatnonzero(counts == 0)
    return fronts


def crowding_distance(front) -> np.ndarray:
    F = np.atleast_2d(np.asarray(front, dtype=float))
    n, K = F.shape
    if n == 0:
        raise ValueError("empty front")
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for k in range(K):
        order = np.argsort(F[:, k], kind="stable")
        fk = F[order, k]
        dist[order[0]] = dist[order[-1]] = np.inf
        rng_k = fk[-1] - fk[0]
        if rng_k > 0:
            dist[order[1:-1]] += (fk[2:] - fk[:-2]) / rng_k
    return dist


def rank_and_crowding(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rank = np.empty(len(F), dtype=int)
    crowd = np.empty(len(F))
    for r, idx in enumerate(fast_non_dominated_sort(F)):
        rank[idx] = r
        crowd[idx] = crowding_distance(F[idx])
    return rank, crowd


@dataclass
class Individual:
    design: np.ndarray
    objectives: np.ndarray
    rank: int = 0
    crowding: float = np.inf


@dataclass
class FrontApproximation:
    """Rank-0 members of a final NSGA-II population."""

    designs: np.ndarray
    objectives: np.ndarray
    generations: int
    pop_size: int
    descriptor: str = ""

    def __len__(self):
        return len(self.designs)

    @property
    def individuals(self) -> list[Individual]:
        crowd = crowding_distance(self.objectives) if len(self) else []
        return [Individual(d, o, 0, c) for d, o, c in zip(self.designs, self.objectives, crowd)]

    def to_json(self) -> list[dict]:
        return [
            {"design": d.tolist(), "objectives": o.tolist()}
            for d, o in zip(self.designs, self.objectives)
        ]

    @classmethod
    def from_json(cls, items: list[dict], generations=0, pop_size=0, descriptor="") -> "FrontApproximation":
        designs = np.array([it["design"] for it in items], dtype=float)
        objectives = np.array([it["objectives"] for it in items], dtype=float)
        return cls(designs, objectives, generations, pop_size, descriptor)


def _sbx(P1, P2, lo, hi, eta, rate, rng):
    n, D = P1.shape
    C1, C2 = P1.copy(), P2.copy()
    do_pair = rng.random(n) < rate
    do_var = (rng.random((n, D)) < 0.5) & do_pair[:, None]
    y1 = np.minimum(P1, P2)
    y2 = np.maximum(P1, P2)
    gap = y2 - y1
    do_var &= gap > 1e-14
    gap = np.where(do_var, gap, 1.0)
    u = rng.random((n, D))
    e = 1.0 / (eta + 1.0)

    def betaq(beta):
        alpha = 2.0 - beta ** (-(eta + 1.0))
        return np.where(
            u <= 1.0 / alpha,
            (u * alpha) ** e,
            (1.0 / np.maximum(2.0 - u * alpha, 1e-300)) ** e,
        )

    c1 = 0.5 * (y1 + y2 - betaq(1.0 + 2.0 * (y1 - lo) / gap) * gap)
    c2 = 0.5 * (y1 + y2 + betaq(1.0 + 2.0 * (hi - y2) / gap) * gap)
    c1, c2 = np.clip(c1, lo, hi), np.clip(c2, lo, hi)
    swap = rng.random((n, D)) < 0.5
    c1, c2 = np.where(swap, c2, c1), np.where(swap, c1, c2)
    C1[do_var] = c1[do_var]
    C2[do_var] = c2[do_var]
    return C1, C2


def _polynomial_mutation(X, lo, hi, eta, rate, rng):
    n, D = X.shape
    mask = rng.random((n, D)) < rate
    span = hi - lo
    d1 = (X - lo) / span
    d2 = (hi - X) / span
    r = rng.random((n, D))
    p = 1.0 / (eta + 1.0)
    low = r < 0.5
    v_low = 2.0 * r + (1.0 - 2.0 * r) * (1.0 - d1) ** (eta + 1.0)
    v_high = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * (1.0 - d2) ** (eta + 1.0)
    dq = np.where(low, v_low ** p - 1.0, 1.0 - v_high ** p)
    Y = X + np.where(mask, dq * span, 0.0)
    return np.clip(Y, lo, hi)


def _tournament(rank, crowd, n, rng):
    a = rng.integers(len(rank), size=n)
    b = rng.integers(len(rank), size=n)
    a_wins = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] >= crowd[b]))
    return np.where(a_wins, a, b)


def _evaluate(evaluator, X):
    F = np.atleast_2d(np.asarray(evaluator(X), dtype=float))
    bad = ~np.all(np.isfinite(F), axis=1)
    if np.any(bad):
        raise ValueError(f"evaluator returned non-finite objectives at design {X[bad][0].tolist()}")
    return F


def run_nsga2(
    evaluator: Callable[[np.ndarray], np.ndarray],
    bounds,
    pop_size: int = 100,
    generations: int = 300,
    rng: np.random.Generator | None = None,
    *,
    eta_c: float = 15.0,
    crossover_rate: float = 0.9,
    eta_m: float = 20.0,
    mutation_rate: float | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
    descriptor: str = "",
) -> FrontApproximation:
    """Evolve a population and return its non-dominated members.

    ``evaluator`` maps an ``(n, D)`` batch of designs to ``(n, K)`` objectives.
    ``callback(gen, X, F)`` is called with the population after each generation
    (``gen = 0`` is the initial population).
    """
    if pop_size < 4 or pop_size % 2:
        raise ValueError("pop_size must be even and >= 4")
    rng = rng if rng is not None else np.random.default_rng()
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    D = len(lo)
    pm = 1.0 / D if mutation_rate is None else mutation_rate

    X = lo + rng.random((pop_size, D)) * (hi - lo)
    F = _evaluate(evaluator, X)
    rank, crowd = rank_and_crowding(F)
    if callback:
        callback(0, X, F)

    for gen in range(1, generations + 1):
        parents = _tournament(rank, crowd, pop_size, rng)
        P1, P2 = X[parents[0::2]], X[parents[1::2]]
        C1, C2 = _sbx(P1, P2, lo, hi, eta_c, crossover_rate, rng)
        Q = _polynomial_mutation(np.vstack([C1, C2]), lo, hi, eta_m, pm, rng)
        FQ = _evaluate(evaluator, Q)

        RX = np.vstack([X, Q])
        RF = np.vstack([F, FQ])
        keep: list[int] = []
        for front in fast_non_dominated_sort(RF):
            if len(keep) + len(front) <= pop_size:
                keep.extend(front)
                continue
            cd = crowding_distance(RF[front])
            order = np.argsort(-cd, kind="stable")
            keep.extend(np.asarray(front)[order[: pop_size - len(keep)]].tolist())
            break
        X, F = RX[keep], RF[keep]
        rank, crowd = rank_and_crowding(F)
        if callback:
            callback(gen, X, F)

    first = rank == 0
    return FrontApproximation(X[first], F[first], generations, pop_size, descriptor)
