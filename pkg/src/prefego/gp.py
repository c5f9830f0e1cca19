"""Zero-mean Gaussian process regression with an isotropic squared-exponential kernel.

Inputs are mapped affinely to the unit box and targets are standardized before
fitting; all public predictions are returned in the original units. The
signal variance is profiled out of the marginal likelihood in closed form, so
hyperparameter search is one-dimensional over the log lengthscale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

log = logging.getLogger(__name__)

BASE_JITTER = 1e-8
MAX_JITTER = 1e-4
LENGTHSCALE_BOUNDS = (1e-3, 10.0)
SIGNAL_VARIANCE_BOUNDS = (1e-6, 1e3)
N_RESTARTS = 10
# used when the standardized targets carry no information (n == 1 or constant)
DEFAULT_LENGTHSCALE = 0.3

_LOG_2PI = np.log(2.0 * np.pi)


class GPFitError(ValueError):
    """Raised for invalid training data or an unfactorizable Gram matrix."""


@dataclass(frozen=True)
class KernelParams:
    signal_variance: float
    lengthscale: float

    def __post_init__(self):
        if not self.signal_variance >= 0:
            raise ValueError(f"signal variance must be >= 0, got {self.signal_variance}")
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be > 0, got {self.lengthscale}")


def se_kernel(A: np.ndarray, B: np.ndarray, params: KernelParams) -> np.ndarray:
    """Squared-exponential covariance between the rows of ``A`` and ``B``."""
    sq = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    np.maximum(sq, 0.0, out=sq)
    return params.signal_variance * np.exp(-0.5 * sq / params.lengthscale**2)


def _correlation(Z: np.ndarray, lengthscale: float) -> np.ndarray:
    return se_kernel(Z, Z, KernelParams(1.0, lengthscale))


def _factor(R: np.ndarray, jitter: float) -> tuple[np.ndarray, float]:
    """Cholesky of ``R + jitter * I``, doubling the jitter on failure."""
    n = R.shape[0]
    while True:
        try:
            return cholesky(R + jitter * np.eye(n), lower=True), jitter
        except np.linalg.LinAlgError:
            if jitter * 2 > MAX_JITTER:
                raise GPFitError(
                    f"Gram matrix not positive definite with jitter {jitter:.1e}; "
                    "inputs are nearly duplicated, try a larger jitter"
                ) from None
            jitter *= 2


class GPModel:
    """A fitted (immutable) Gaussian process posterior.

    Use :func:`fit` to construct one. ``X`` and ``y`` hold the training data in
    original units, sorted lexicographically by input so that the model does not
    depend on the order in which data were supplied.
    """

    def __init__(self, X, y, params: KernelParams, lower, scale, y_mean, y_scale):
        self.X = X
        self.y = y
        self.params = params
        self.lower = lower
        self.scale = scale
        self.y_mean = float(y_mean)
        self.y_scale = float(y_scale)
        self.Z = self.normalize(X) if len(X) else X
        self.ys = (y - self.y_mean) / self.y_scale
        self.jitter = BASE_JITTER
        if len(X):
            R = _correlation(self.Z, params.lengthscale)
            Lc, self.jitter = _factor(R, BASE_JITTER)
            # K = s2 * (R + jitter I)  =>  chol(K) = sqrt(s2) * chol(R + jitter I)
            self._L = np.sqrt(params.signal_variance) * Lc
            self._alpha = cho_solve((self._L, True), self.ys)
        else:
            self._L = np.zeros((0, 0))
            self._alpha = np.zeros(0)

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def prior_variance(self) -> float:
        """Prior variance in original target units."""
        return self.params.signal_variance * self.y_scale**2

    def normalize(self, X) -> np.ndarray:
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.lower) / self.scale

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at the rows of ``X`` (original units)."""
        Xq = np.atleast_2d(np.asarray(X, dtype=float))
        if not np.all(np.isfinite(Xq)):
            raise ValueError("non-finite query point")
        s2 = self.params.signal_variance
        if self.n == 0:
            m = np.zeros(len(Xq))
            v = np.full(len(Xq), s2)
        else:
            Ks = se_kernel(self.normalize(Xq), self.Z, self.params)
            m = Ks @ self._alpha
            W = solve_triangular(self._L, Ks.T, lower=True)
            v = np.maximum(s2 - np.sum(W**2, axis=0), 0.0)
        return self.y_mean + self.y_scale * m, v * self.y_scale**2

    def posterior_mean(self, x) -> float | np.ndarray:
        m, _ = self.predict(x)
        return float(m[0]) if np.ndim(x) == 1 else m

    def posterior_variance(self, x) -> float | np.ndarray:
        _, v = self.predict(x)
        return float(v[0]) if np.ndim(x) == 1 else v

    def log_marginal_likelihood(self) -> float:
        """Gaussian evidence of the standardized targets under the fitted kernel."""
        if self.n == 0:
            return 0.0
        return float(
            -0.5 * self.ys @ self._alpha
            - np.sum(np.log(np.diag(self._L)))
            - 0.5 * self.n * _LOG_2PI
        )


def posterior_mean(model: GPModel, x):
    return model.posterior_mean(x)


def posterior_variance(model: GPModel, x):
    return model.posterior_variance(x)


def log_marginal_likelihood(model: GPModel) -> float:
    return model.log_marginal_likelihood()


def _profile_nll(log_l: float, Z: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    """Negative log likelihood with the signal variance at its conditional optimum.

    Returns the value and the optimal signal variance.
    """
    n = len(ys)
    R = _correlation(Z, float(np.exp(log_l)))
    try:
        L, _ = _factor(R, BASE_JITTER)
    except GPFitError:
        return np.inf, np.nan
    a = cho_solve((L, True), ys)
    quad = float(ys @ a)
    s2 = float(np.clip(quad / n, *SIGNAL_VARIANCE_BOUNDS))
    nll = 0.5 * quad / s2 + 0.5 * n * np.log(s2) + np.sum(np.log(np.diag(L))) + 0.5 * n * _LOG_2PI
    return float(nll), s2


def _optimize_params(Z: np.ndarray, ys: np.ndarray, n_restarts: int) -> KernelParams:
    lo, hi = np.log(LENGTHSCALE_BOUNDS[0]), np.log(LENGTHSCALE_BOUNDS[1])
    starts = np.linspace(lo, hi, n_restarts)
    best = (np.inf, None)
    for s in starts:
        res = minimize(
            lambda t: _profile_nll(t[0], Z, ys)[0],
            x0=[s],
            method="L-BFGS-B",
            bounds=[(lo, hi)],
        )
        val = float(res.fun)
        if val < best[0]:
            best = (val, float(res.x[0]))
    if best[1] is None:
        raise GPFitError("marginal likelihood could not be evaluated at any lengthscale")
    _, s2 = _profile_nll(best[1], Z, ys)
    return KernelParams(s2, float(np.exp(best[1])))


def fit(
    inputs,
    targets,
    bounds=None,
    *,
    params: KernelParams | None = None,
    standardize: bool = True,
    n_restarts: int = N_RESTARTS,
) -> GPModel:
    """Fit a GP to ``(inputs, targets)`` by maximum marginal likelihood.

    Parameters
    ----------
    inputs : array_like, shape (n, D)
        Distinct training inputs.
    targets : array_like, shape (n,)
        Finite training targets.
    bounds : sequence of (lo, hi), optional
        Box used to normalize inputs to ``[0, 1]``. Defaults to the data range.
    params : KernelParams, optional
        Fixed hyperparameters (in standardized units); skips the likelihood search.
    standardize : bool
        Standardize targets to zero mean and unit variance before fitting.
    n_restarts : int
        Number of log-spaced lengthscale starts for the local optimizer.
    """
    X = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    if X.ndim == 1:
        X = X.reshape(-1, 1) if len(X) else X.reshape(0, len(bounds) if bounds is not None else 1)
    if len(X) != len(y):
        raise GPFitError(f"{len(X)} inputs but {len(y)} targets")
    if not np.all(np.isfinite(y)):
        raise GPFitError("targets must be finite")
    if not np.all(np.isfinite(X)):
        raise GPFitError("inputs must be finite")

    if bounds is not None:
        lower = np.array([b[0] for b in bounds], dtype=float)
        scale = np.array([b[1] - b[0] for b in bounds], dtype=float)
    elif len(X):
        lower = X.min(axis=0)
        scale = X.max(axis=0) - lower
        scale[scale == 0] = 1.0
    else:
        lower, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])

    if len(X) > 1:
        order = np.lexsort(X.T[::-1])
        X, y = X[order], y[order]
        if np.any(np.all(X[1:] == X[:-1], axis=1)):
            raise GPFitError("duplicate training inputs; deduplicate before fitting")

    if standardize and len(y):
        y_mean = float(np.mean(y))
        y_scale = float(np.std(y))
        if y_scale == 0.0:
            y_scale = 1.0
    else:
        y_mean, y_scale = 0.0, 1.0

    if params is None:
        ys = (y - y_mean) / y_scale
        if len(y) == 0 or not np.any(ys):
            params = KernelParams(1.0, DEFAULT_LENGTHSCALE)
        else:
            params = _optimize_params((X - lower) / scale, ys, n_restarts)

    return GPModel(X, y, params, lower, scale, y_mean, y_scale)
