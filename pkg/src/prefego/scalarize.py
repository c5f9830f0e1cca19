"""Utility models over objective vectors and simplex weight handling.

Objectives are minimized, utilities are maximized: the Tchebychev utility is
the negated augmented Tchebychev achievement function and the linear utility
is the negated weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

DEFAULT_RHO = 0.05
THETA_FLOOR = 1e-6


def validate_theta(theta, K: int | None = None) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    if th.ndim != 1 or (K is not None and len(th) != K):
        raise ValueError(f"theta must be a vector of length {K}, got shape {th.shape}")
    if np.any(th < 0) or np.any(th > 1) or abs(th.sum() - 1.0) > 1e-9:
        raise ValueError(f"theta must lie on the unit simplex, got {th.tolist()}")
    return th


@dataclass(frozen=True)
class UtilityModel:
    """A DM utility: ``kind`` is ``"tchebychev"`` or ``"linear"``."""

    kind: Literal["tchebychev", "linear"]
    theta: tuple[float, ...]
    rho: float = DEFAULT_RHO

    def __post_init__(self):
        if self.kind not in ("tchebychev", "linear"):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "tchebychev" and not self.rho > 0:
            raise ValueError("rho must be positive for the Tchebychev utility")
        validate_theta(self.theta)
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))

    def __call__(self, y) -> float | np.ndarray:
        return utility(y, self)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "theta": list(self.theta), "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "UtilityModel":
        return cls(d["kind"], tuple(d["theta"]), d.get("rho", DEFAULT_RHO))


def tchebychev_asf(y, theta, rho: float = DEFAULT_RHO):
    """Augmented Tchebychev achievement value ``max_j t_j y_j + rho * sum_j t_j y_j``.

    Lower is better. Accepts a single vector or an ``(n, K)`` batch.
    """
    ty = np.asarray(theta, dtype=float) * np.asarray(y, dtype=float)
    out = np.max(ty, axis=-1) + rho * np.sum(ty, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def utility(y, model: UtilityModel):
    if model.kind == "tchebychev":
        return -tchebychev_asf(y, model.theta, model.rho)
    out = -np.sum(np.asarray(model.theta) * np.asarray(y, dtype=float), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def sample_theta(K: int, rng: np.random.Generator, lattice_steps: int | None = None) -> np.ndarray:
    """Draw a weight vector uniformly from the simplex.

    With ``lattice_steps`` set, draw uniformly from the evenly spaced lattice
    ``{theta : theta_j = k_j / lattice_steps}`` instead.
    """
    if K < 2:
        raise ValueError("need at least two objectives")
    if lattice_steps is not None:
        # uniform over compositions via stars and bars
        bars = np.sort(rng.choice(lattice_steps + K - 1, size=K - 1, replace=False))
        counts = np.diff(np.concatenate([[-1], bars, [lattice_steps + K - 1]])) - 1
        return counts / lattice_steps
    e = rng.exponential(size=K)
    theta = e / e.sum()
    # renormalize so the sum is exactly representable
    theta[-1] = max(1.0 - theta[:-1].sum(), 0.0)
    return theta


def estimate_theta(y_picked, eps: float = THETA_FLOOR) -> np.ndarray:
    """Weights under which the picked vector sits on the Tchebychev kink.

    Solves ``theta_i / theta_j = y_j / y_i`` on the simplex, i.e.
    ``theta_i`` proportional to ``1 / max(y_i, eps)``.
    """
    y = np.maximum(np.asarray(y_picked, dtype=float), eps)
    inv = 1.0 / y
    return inv / inv.sum()
