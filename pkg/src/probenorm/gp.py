"""Gaussian-process regression with an RBF-plus-white kernel.

The covariance between two poses is

    k(p, q) = s_r * exp(-|p - q|^2 / (2 l^2)) + s_w * [p is q]

where the white term only lands on the Gram-matrix diagonal.  Hyperparameters
are optimized in log-space by maximizing the log marginal likelihood with
L-BFGS-B.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular
from scipy.optimize import minimize

LOG_2PI = math.log(2.0 * math.pi)

JITTER_START = 1e-10
JITTER_MAX = 1e-6


class GPNumericalError(ArithmeticError):
    """Gram matrix could not be factorized."""

    def __init__(self, message, condition=None, jitter=None):
        super().__init__(message)
        self.condition = condition
        self.jitter = jitter


class HyperparamFitWarning(UserWarning):
    """No restart improved on its starting point."""


@dataclass(frozen=True)
class Hyperparams:
    """Kernel hyperparameters.

    Parameters
    ----------
    overall_variance : float
        Signal variance ``s_r`` (> 0).
    noise_variance : float
        White-noise variance ``s_w`` (>= 0).
    length_scale : float
        RBF length-scale ``l`` (> 0), in pose-coordinate units.
    """

    overall_variance: float
    noise_variance: float
    length_scale: float

    def __post_init__(self):
        vals = (self.overall_variance, self.noise_variance, self.length_scale)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite hyperparameters: {vals}")
        if self.overall_variance <= 0 or self.length_scale <= 0:
            raise ValueError("overall_variance and length_scale must be > 0")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")

    def to_log(self) -> np.ndarray:
        """Return ``(log s_r, log l, log s_w)``.

        A zero noise variance maps to ``-inf``.
        """
        with np.errstate(divide="ignore"):
            return np.log(
                [self.overall_variance, self.length_scale, self.noise_variance]
            )

    @classmethod
    def from_log(cls, theta) -> "Hyperparams":
        log_sr, log_l, log_sw = (float(t) for t in theta)
        return cls(math.exp(log_sr), math.exp(log_sw), math.exp(log_l))


def _as_points(poses) -> np.ndarray:
    x = np.asarray(poses, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise ValueError("pose coordinates must be finite")
    return x


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kernel_eval(p_i, p_j, h: Hyperparams, same_index: bool = False) -> float:
    """Evaluate the kernel between two single poses."""
    a = np.atleast_1d(np.asarray(p_i, dtype=float))
    b = np.atleast_1d(np.asarray(p_j, dtype=float))
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("pose coordinates must be finite")
    r2 = float(np.dot(a - b, a - b))
    value = h.overall_variance * math.exp(-r2 / (2.0 * h.length_scale**2))
    if same_index:
        value += h.noise_variance
    return value


def cross_covariance(a, b, h: Hyperparams) -> np.ndarray:
    """RBF block between two point sets (no white term)."""
    a = _as_points(a)
    b = _as_points(b)
    return h.overall_variance * np.exp(-_sq_dists(a, b) / (2.0 * h.length_scale**2))


def gram_matrix(poses, h: Hyperparams) -> np.ndarray:
    """Training Gram matrix ``K`` including the white-noise diagonal."""
    x = _as_points(poses)
    k = cross_covariance(x, x, h)
    k[np.diag_indices_from(k)] += h.noise_variance
    return k


def _factorize(k: np.ndarray):
    """Cholesky with escalating diagonal jitter; returns ``(L, jitter)``."""
    jitter = JITTER_START
    n = k.shape[0]
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            low = np.linalg.cholesky(k + jitter * np.eye(n))
            return low, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    cond = np.linalg.cond(k)
    raise GPNumericalError(
        f"Gram matrix not positive definite (cond={cond:.3e}) "
        f"even with jitter {JITTER_MAX:g}",
        condition=cond,
        jitter=JITTER_MAX,
    )


@dataclass(frozen=True, eq=False)
class GPModel:
    """A fitted GP surrogate.  Immutable once built by :func:`gp_fit`."""

    train_poses: np.ndarray
    train_values: np.ndarray
    hyper: Hyperparams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    y_mean: float = 0.0
    y_std: float = 1.0

    @property
    def n(self) -> int:
        return len(self.train_values)

    @property
    def dim(self) -> int:
        return self.train_poses.shape[1]

    @property
    def targets(self) -> np.ndarray:
        """Training values in the (possibly standardized) space the GP sees."""
        return (self.train_values - self.y_mean) / self.y_std


@dataclass(frozen=True)
class PosteriorEstimate:
    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("posterior variance must be >= 0")


def _refine(k, low, alpha, t, steps=3):
    # The jitter biases alpha by about jitter*|alpha|, which breaks exact
    # interpolation on ill-conditioned noise-free designs.  Iterative
    # refinement against the un-jittered K removes the bias; a step is kept
    # only if it shrinks the residual.
    res = t - k @ alpha
    err = np.linalg.norm(res)
    for _ in range(steps):
        cand = alpha + cho_solve((low, True), res)
        r2 = t - k @ cand
        e2 = np.linalg.norm(r2)
        if not e2 < err:
            break
        alpha, res, err = cand, r2, e2
    return alpha


def gp_fit(poses, values, h: Hyperparams, normalize: bool = False) -> GPModel:
    """Assemble and factorize the Gram matrix for a training set.

    With ``normalize=True`` the values are standardized to zero mean and unit
    variance before fitting; predictions are mapped back to the raw scale.
    """
    x = _as_points(poses)
    y = np.asarray(values, dtype=float).ravel()
    if len(y) == 0:
        raise ValueError("need at least one training point")
    if len(y) != len(x):
        raise ValueError(f"{len(x)} poses but {len(y)} values")
    if not np.all(np.isfinite(y)):
        raise ValueError("training values must be finite")
    if h.noise_variance == 0 and len(x) > 1:
        d2 = _sq_dists(x, x)
        d2[np.diag_indices_from(d2)] = np.inf
        if np.any(d2 == 0):
            raise GPNumericalError(
                "duplicate training poses with zero noise variance",
                condition=math.inf,
                jitter=0.0,
            )

    y_mean, y_std = 0.0, 1.0
    if normalize:
        y_mean = float(np.mean(y))
        y_std = float(np.std(y))
        if not y_std > 0:
            y_std = 1.0
    t = (y - y_mean) / y_std

    k = gram_matrix(x, h)
    low, jitter = _factorize(k)
    alpha = _refine(k, low, cho_solve((low, True), t), t)
    return GPModel(x, y, h, low, alpha, jitter, y_mean, y_std)


def predict(m: GPModel, poses, latent: bool = False):
    """Vectorized posterior mean and variance at an array of poses.

    The variance includes the white-noise term unless ``latent`` is set, in
    which case it is the variance of the noise-free function.
    """
    x = _as_points(poses)
    if x.shape[1] != m.dim:
        raise ValueError(f"expected {m.dim}-D poses, got {x.shape[1]}-D")
    ks = cross_covariance(x, m.train_poses, m.hyper)
    mean = ks @ m.alpha
    v = solve_triangular(m.chol, ks.T, lower=True, check_finite=False)
    prior = m.hyper.overall_variance
    if not latent:
        prior = prior + m.hyper.noise_variance
    var = prior - np.einsum("ij,ij->j", v, v)
    np.maximum(var, 0.0, out=var)
    return mean * m.y_std + m.y_mean, var * m.y_std**2


def gp_predict(m: GPModel, p) -> PosteriorEstimate:
    """Posterior at a single pose."""
    mean, var = predict(m, np.atleast_1d(np.asarray(p, dtype=float))[None, :])
    return PosteriorEstimate(float(mean[0]), float(var[0]))


def _chol_lower(k: np.ndarray):
    """Lower Cholesky factor with the same jitter ladder as :func:`_factorize`."""
    n = k.shape[0]
    jitter = JITTER_START
    diag = np.diag_indices(n)
    base = k[diag].copy()
    while jitter <= JITTER_MAX * (1 + 1e-9):
        k[diag] = base + jitter
        low, info = lapack.dpotrf(k, lower=1, clean=1)
        if info == 0:
            k[diag] = base
            return low
        jitter *= 10.0
    k[diag] = base
    raise GPNumericalError("Gram matrix not positive definite", jitter=JITTER_MAX)


def _lml_terms(x, t, theta, d2=None):
    """Log marginal likelihood and its gradient w.r.t. ``(log s_r, log l, log s_w)``."""
    sr, ell, sw = np.exp(theta)
    if d2 is None:
        d2 = _sq_dists(x, x)
    e = np.exp(d2 * (-0.5 / (ell * ell)))
    k = sr * e
    k[np.diag_indices_from(k)] += sw
    low = _chol_lower(k)
    alpha, _ = lapack.dpotrs(low, t, lower=1)
    n = len(t)
    lml = -0.5 * (t @ alpha) - np.sum(np.log(np.diag(low))) - 0.5 * n * LOG_2PI

    kinv, _ = lapack.dpotri(low, lower=1)
    kinv = np.tril(kinv) + np.tril(kinv, -1).T
    w = np.outer(alpha, alpha) - kinv
    we = w * e
    grad = 0.5 * np.array(
        [sr * we.sum(), sr * np.sum(we * d2) / (ell * ell), sw * np.trace(w)]
    )
    return float(lml), grad


def log_marginal_likelihood(m: GPModel, with_grad: bool = True):
    """Log marginal likelihood of a fitted model's (standardized) targets.

    Returns ``(lml, grad)`` with the gradient taken in log-hyperparameter
    space, ordered ``(log s_r, log l, log s_w)``.  The diagonal jitter used for
    factorization is not part of the likelihood.
    """
    t = m.targets
    n = len(t)
    lml = -0.5 * t @ m.alpha - np.sum(np.log(np.diag(m.chol))) - 0.5 * n * LOG_2PI
    if not with_grad:
        return float(lml)
    h = m.hyper
    d2 = _sq_dists(m.train_poses, m.train_poses)
    e = np.exp(-d2 / (2.0 * h.length_scale**2))
    kinv = cho_solve((m.chol, True), np.eye(n))
    w = np.outer(m.alpha, m.alpha) - kinv
    d_sr = h.overall_variance * e
    d_ell = d_sr * d2 / h.length_scale**2
    grad = 0.5 * np.array(
        [np.sum(w * d_sr), np.sum(w * d_ell), h.noise_variance * np.trace(w)]
    )
    return float(lml), grad


def default_bounds(domain_width: float, min_length_frac: float = 0.01, log_sr_min: float = -6.0):
    """Log-space bounds ``[(lo, hi)] * 3`` for ``(log s_r, log l, log s_w)``.

    The length-scale range is ``[min_length_frac, 10] * domain_width``.
    """
    return [
        (log_sr_min, 6.0),
        (math.log(min_length_frac * domain_width), math.log(10.0 * domain_width)),
        (-12.0, 2.0),
    ]


@dataclass
class _Objective:
    x: np.ndarray
    t: np.ndarray
    d2: np.ndarray = field(init=False)

    def __post_init__(self):
        self.d2 = _sq_dists(self.x, self.x)

    def __call__(self, theta):
        try:
            lml, grad = _lml_terms(self.x, self.t, theta, self.d2)
        except GPNumericalError:
            return 1e25, np.zeros(3)
        return -lml, -grad

    def value(self, theta):
        try:
            return _lml_terms(self.x, self.t, theta, self.d2)[0]
        except GPNumericalError:
            return -math.inf


def fit_hyperparams(
    poses,
    values,
    n_restarts: int = 2,
    bounds=None,
    previous: Hyperparams | None = None,
    rng: np.random.Generator | None = None,
    normalize: bool = False,
    max_iter: int = 200,
) -> Hyperparams:
    """Maximize the log marginal likelihood over log-hyperparameters.

    Runs bounded L-BFGS from ``previous`` (or the box centre when absent) plus
    ``n_restarts`` uniform random starts inside ``bounds`` and keeps the best
    end point.  When no run improves on its own start a
    :class:`HyperparamFitWarning` is issued and the best start is returned.
    """
    x = _as_points(poses)
    y = np.asarray(values, dtype=float).ravel()
    if len(y) < 2:
        raise ValueError("need at least two training points")
    if bounds is None:
        width = float(np.max(np.ptp(x, axis=0))) or 1.0
        bounds = default_bounds(width)
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if rng is None:
        rng = np.random.default_rng(0)

    if normalize:
        sd = float(np.std(y)) or 1.0
        t = (y - np.mean(y)) / sd
    else:
        t = y
    obj = _Objective(x, t)

    starts = []
    if previous is not None:
        starts.append(np.clip(previous.to_log(), lo, hi))
    else:
        starts.append(0.5 * (lo + hi))
    for _ in range(n_restarts):
        starts.append(rng.uniform(lo, hi))

    best_theta, best_val = None, -math.inf
    improved = False
    for s in starts:
        start_val = obj.value(s)
        if start_val > best_val:
            best_theta, best_val = s, start_val
        res = minimize(
            obj,
            s,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxcor": 10, "maxiter": max_iter},
        )
        end = np.clip(res.x, lo, hi)
        end_val = obj.value(end)
        if end_val > start_val:
            improved = True
        if end_val > best_val:
            best_theta, best_val = end, end_val

    if not improved:
        warnings.warn(
            "hyperparameter search did not improve on any start point",
            HyperparamFitWarning,
            stacklevel=2,
        )
    if best_theta is None:
        raise GPNumericalError("no start point gave a finite likelihood")
    return Hyperparams.from_log(best_theta)
