"""Bi-objective test problems: HOLE (two hardness settings) and POL.

All evaluators accept a single point of shape ``(D,)`` or a batch of shape
``(n, D)`` and return objectives of shape ``(K,)`` or ``(n, K)`` respectively.
Objectives are minimized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DomainError(ValueError):
    """Raised when a design lies outside the problem bounds."""


@dataclass(frozen=True)
class ProblemSpec:
    """A fully parameterized test problem.

    Parameters
    ----------
    name : str
        Stable identifier used by the CLI and the service.
    D, K : int
        Number of design variables and objectives.
    bounds : tuple of (lo, hi) pairs
        Box constraints, one pair per design variable.
    params : dict
        Variant parameters (for HOLE: ``q``, ``p``, ``d0``, ``h``, ``hole``).
    """

    name: str
    D: int
    K: int
    bounds: tuple[tuple[float, float], ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.bounds) != self.D:
            raise ValueError(f"{self.name}: expected {self.D} bound pairs, got {len(self.bounds)}")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError(f"{self.name}: invalid bounds ({lo}, {hi})")

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds], dtype=float)

    @property
    def hole_enabled(self) -> bool:
        return bool(self.params.get("hole", False))

    def evaluate(self, x) -> np.ndarray:
        return _EVALUATORS[self.params["family"]](x, self)


def _as_batch(x, spec: ProblemSpec, tol: float = 0.0) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != spec.D:
        raise DomainError(f"{spec.name} expects {spec.D} design variables, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{spec.name}: non-finite design {arr[~np.all(np.isfinite(arr), axis=1)][0]}")
    lo, hi = spec.lower, spec.upper
    bad = np.any((arr < lo - tol) | (arr > hi + tol), axis=1)
    if np.any(bad):
        raise DomainError(
            f"{spec.name}: design {arr[bad][0].tolist()} outside bounds {list(spec.bounds)}"
        )
    return arr, single


def eval_hole(x, spec: ProblemSpec) -> np.ndarray:
    """Evaluate the HOLE problem on ``[-1, 1]^2``."""
    X, single = _as_batch(x, spec)
    q, p, d0, h = (spec.params[k] for k in ("q", "p", "d0", "h"))

    delta = 1.0 - np.sqrt(2.0) / 2.0
    x1 = X[:, 0] + delta
    x2 = X[:, 1] - delta

    # 45 degree rotation; cos and sin share one constant so that x1 + x2 = 0
    # maps to exactly 0 (the hardness exponent amplifies any rounding residue)
    cs = np.sqrt(2.0) / 2.0
    r1 = x1 * cs + x2 * cs
    r2 = -x1 * cs + x2 * cs

    s1 = r1 * np.pi
    s2 = r2 * np.pi

    u = np.sin(s1 / 2.0)
    v = np.sin(s2 / 2.0) ** 2

    # u == 0 maps to 0 on both branches
    t = np.sign(u) * np.abs(u) ** h
    a = v ** (1.0 / h) * 2.0 * p

    if spec.hole_enabled:
        b = np.where(a <= p, (p - a) * np.exp(q), 0.0)
    else:
        b = np.zeros_like(a)
    d = a / 2.0 + d0
    c = q / d**2

    f1 = (t + 1.0) ** 2 + a + b * np.exp(-((c - t) ** 2))
    f2 = (t - 1.0) ** 2 + a + b * np.exp(-((c + t) ** 2))
    out = np.column_stack([f1, f2])
    return out[0] if single else out


_POL_A = 0.5 * np.sin(1.0) - 2.0 * np.cos(1.0) + 1.0 * np.sin(2.0) - 1.5 * np.cos(2.0)
_POL_C = 1.5 * np.sin(1.0) - 1.0 * np.cos(1.0) + 2.0 * np.sin(2.0) - 0.5 * np.cos(2.0)


def eval_pol(x, spec: ProblemSpec | None = None) -> np.ndarray:
    """Evaluate the POL problem on ``[-pi, pi]^2``."""
    spec = spec or POL
    X, single = _as_batch(x, spec)
    x1, x2 = X[:, 0], X[:, 1]
    b = 0.5 * np.sin(x1) - 2.0 * np.cos(x1) + 1.0 * np.sin(x2) - 1.5 * np.cos(x2)
    d = 1.5 * np.sin(x1) - 1.0 * np.cos(x1) + 2.0 * np.sin(x2) - 0.5 * np.cos(x2)
    f1 = 1.0 + (_POL_A - b) ** 2 + (_POL_C - d) ** 2
    f2 = (x1 + 3.0) ** 2 + (x2 + 1.0) ** 2
    out = np.column_stack([f1, f2])
    return out[0] if single else out


_EVALUATORS: dict[str, Callable] = {"hole": eval_hole, "pol": eval_pol}

_HOLE_PARAMS = dict(family="hole", q=0.2, p=2.0, d0=0.02, h=0.2)

HOLE1 = ProblemSpec("HOLE-1", 2, 2, ((-1.0, 1.0), (-1.0, 1.0)), {**_HOLE_PARAMS, "hole": True})
HOLE2 = ProblemSpec("HOLE-2", 2, 2, ((-1.0, 1.0), (-1.0, 1.0)), {**_HOLE_PARAMS, "hole": False})
POL = ProblemSpec("POL", 2, 2, ((-np.pi, np.pi), (-np.pi, np.pi)), {"family": "pol"})

PROBLEMS: dict[str, ProblemSpec] = {s.name: s for s in (HOLE1, HOLE2, POL)}


def lookup_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise KeyError(
            f"unknown problem {name!r}; supported problems: {', '.join(PROBLEMS)}"
        ) from None
