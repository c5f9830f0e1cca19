"""Expected improvement on a GP over utilities (higher is better) and its maximization."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .gp import GPModel

log = logging.getLogger(__name__)

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def expected_improvement(mean, variance, u_max):
    """Closed-form ``E[max(U - u_max, 0)]`` for ``U ~ N(mean, variance)``."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be nonnegative")
    s = np.sqrt(variance)
    diff = mean - u_max
    pos = s > 0
    z = np.divide(diff, s, out=np.zeros_like(diff), where=pos)
    pdf = np.exp(-0.5 * z**2) / _SQRT_2PI
    ei = np.where(pos, s * (z * ndtr(z) + pdf), np.maximum(diff, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


@dataclass(frozen=True)
class EIQuery:
    model: GPModel
    u_max: float
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not np.isfinite(self.u_max):
            raise ValueError("u_max must be finite")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError(f"invalid bounds ({lo}, {hi})")

    def ei(self, X) -> np.ndarray:
        m, v = self.model.predict(X)
        return expected_improvement(m, v, self.u_max)


@dataclass(frozen=True)
class EIChoice:
    x: np.ndarray
    ei: float
    flat: bool = False  # EI vanished on every candidate
    skipped: int = 0  # better candidates rejected as duplicates of `avoid`


def maximize_ei(
    query: EIQuery,
    rng: np.random.Generator,
    *,
    n_candidates: int = 1000,
    n_polish: int = 5,
    polish_iters: int = 100,
    avoid=None,
    min_dist: float = 1e-9,
    incumbents=None,
    n_local: int = 50,
) -> EIChoice:
    """Multi-start search for the EI maximizer inside ``query.bounds``.

    ``n_candidates`` uniform points, plus ``n_local`` multi-scale Gaussian
    perturbations of each row of ``incumbents``, are scored; the best
    ``n_polish`` are refined with a bounded coordinate-direction (Powell)
    search. Points within ``min_dist`` (normalized units) of any row of
    ``avoid`` are never returned.
    """
    lo = np.array([b[0] for b in query.bounds], dtype=float)
    hi = np.array([b[1] for b in query.bounds], dtype=float)
    span = hi - lo
    D = len(lo)

    U = rng.random((n_candidates, D))
    if incumbents is not None and len(incumbents) and n_local > 0:
        # EI is usually a thin shell around the incumbents that uniform draws miss
        C = (np.atleast_2d(np.asarray(incumbents, dtype=float)) - lo) / span
        scales = np.geomspace(0.1, 0.001, 5)
        sd = np.resize(scales, n_local)[None, :, None]
        local = C[:, None, :] + sd * rng.standard_normal((len(C), n_local, D))
        U = np.vstack([U, np.clip(local.reshape(-1, D), 0.0, 1.0)])
    scores = query.ei(lo + U * span)

    if np.max(scores) <= 0.0:
        log.info("EI is zero on all %d candidates", n_candidates)
        pool, pool_ei = U, scores
        flat = True
    else:
        flat = False
        polished, polished_ei = [], []
        for i in np.argsort(-scores, kind="stable")[:n_polish]:
            res = minimize(
                lambda u: -float(query.ei(lo + np.clip(u, 0, 1) * span)[0]),
                U[i],
                method="Powell",
                bounds=[(0.0, 1.0)] * D,
                options={"maxiter": polish_iters, "xtol": 1e-8, "ftol": 1e-12},
            )
            u = np.clip(res.x, 0.0, 1.0)
            val = float(query.ei(lo + u * span)[0])
            if val >= scores[i]:
                polished.append(u)
                polished_ei.append(val)
        pool = np.vstack([np.array(polished).reshape(-1, D), U])
        pool_ei = np.concatenate([polished_ei, scores])

    order = np.argsort(-pool_ei, kind="stable")
    if avoid is not None and len(avoid):
        A = (np.atleast_2d(np.asarray(avoid, dtype=float)) - lo) / span
        dist = np.min(np.linalg.norm(pool[:, None, :] - A[None, :, :], axis=2), axis=1)
        keep = dist[order] > min_dist
        skipped = int(np.argmax(keep)) if keep.any() else len(order)
        if skipped:
            log.info("EI maximizer duplicated an evaluated point; using next-best candidate")
        order = order[keep]
    else:
        skipped = 0
    if not len(order):
        raise RuntimeError("every EI candidate coincides with an evaluated point")
    best = order[0]
    return EIChoice(lo + pool[best] * span, float(pool_ei[best]), flat, skipped)
