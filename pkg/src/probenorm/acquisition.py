"""Expected-improvement acquisition and its maximization over a box."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .gp import GPModel, PosteriorEstimate, predict

IN_PLANE = "in-plane"
OUT_PLANE = "out-plane"

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Axis:
    name: str
    lower: float
    upper: float

    def __post_init__(self):
        if self.name not in (IN_PLANE, OUT_PLANE):
            raise ValueError(f"unknown rotation axis {self.name!r}")
        if not self.lower < self.upper:
            raise ValueError(
                f"{self.name} bounds need lower < upper, got [{self.lower}, {self.upper}]"
            )
        if abs(self.lower) > 90 or abs(self.upper) > 90:
            raise ValueError("rotation bounds must lie within [-90, 90] degrees")

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class SearchSpace:
    """Box of probe rotations in degrees, one or two axes."""

    axes: tuple

    def __post_init__(self):
        axes = tuple(self.axes)
        object.__setattr__(self, "axes", axes)
        if len(axes) not in (1, 2):
            raise ValueError("search space needs one or two axes")
        if len({a.name for a in axes}) != len(axes):
            raise ValueError("repeated rotation axis")

    @classmethod
    def single(cls, name: str, lower: float, upper: float) -> "SearchSpace":
        return cls((Axis(name, lower, upper),))

    @classmethod
    def both(cls, lower: float, upper: float) -> "SearchSpace":
        return cls((Axis(OUT_PLANE, lower, upper), Axis(IN_PLANE, lower, upper)))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def lower(self) -> np.ndarray:
        return np.array([a.lower for a in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([a.upper for a in self.axes])

    @property
    def width(self) -> float:
        return float(max(a.width for a in self.axes))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


@dataclass(frozen=True)
class AcquisitionConfig:
    """EI settings.

    ``xi`` is the exploration margin.  With ``xi_relative`` (the default) it is
    measured in units of the training-value standard deviation, otherwise in
    raw objective units.  ``variance_weighted`` swaps the ``sigma * pdf(Z)``
    term for ``sigma**2 * pdf(Z)``.  ``include_noise`` scores candidates with
    the full predictive variance instead of the latent-function variance;
    with it, a surrogate that explains the data as noise sees a near-uniform
    spread and keeps re-sampling the same corner of the box.
    """

    xi: float = 0.45
    grid_density: int | None = None
    refine_steps: int = 20
    xi_relative: bool = True
    variance_weighted: bool = False
    include_noise: bool = False

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("xi must be >= 0")
        if self.grid_density is not None and self.grid_density < 16:
            raise ValueError("grid_density must be >= 16")
        if self.refine_steps < 0:
            raise ValueError("refine_steps must be >= 0")

    def density_for(self, dim: int) -> int:
        if self.grid_density is not None:
            return self.grid_density
        return 256 if dim == 1 else 64


def ei_from_moments(mean, variance, f_best: float, xi: float, variance_weighted=False):
    """Vectorized expected improvement; zero wherever the variance is zero."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(variance, dtype=float)
    sigma = np.sqrt(np.maximum(var, 0.0))
    gap = mean - f_best - xi
    pos = sigma > 0
    safe = np.where(pos, sigma, 1.0)
    z = gap / safe
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    spread = var if variance_weighted else sigma
    ei = gap * ndtr(z) + spread * pdf
    return np.where(pos, np.maximum(ei, 0.0), 0.0)


def expected_improvement(
    est: PosteriorEstimate, f_best: float, xi: float, variance_weighted=False
) -> float:
    if est.variance < 0:
        raise ValueError("variance must be >= 0")
    return float(ei_from_moments(est.mean, est.variance, f_best, xi, variance_weighted))


def effective_xi(m: GPModel, cfg: AcquisitionConfig) -> float:
    return cfg.xi * m.y_std if cfg.xi_relative else cfg.xi


def ei_at(m: GPModel, x, f_best: float, cfg: AcquisitionConfig) -> np.ndarray:
    mean, var = predict(m, x, latent=not cfg.include_noise)
    return ei_from_moments(mean, var, f_best, effective_xi(m, cfg), cfg.variance_weighted)


def grid_points(space: SearchSpace, density: int) -> np.ndarray:
    """Uniform grid including the bounds, first axis varying slowest."""
    ticks = [np.linspace(a.lower, a.upper, density) for a in space.axes]
    mesh = np.meshgrid(*ticks, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _golden_max(f, lo: float, hi: float, steps: int):
    """Golden-section search for a maximum on ``[lo, hi]``."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(steps):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def maximize_acquisition(
    m: GPModel, space: SearchSpace, f_best: float, cfg: AcquisitionConfig | None = None
):
    """Dense grid scan followed by coordinate golden-section refinement.

    Returns ``(x, ei)`` where ``x`` holds the active-axis rotations.  The
    refined point replaces the grid winner only on strict improvement; grid
    ties resolve to the lowest index.
    """
    cfg = cfg or AcquisitionConfig()
    if m.dim != space.dim:
        raise ValueError(f"model is {m.dim}-D but space is {space.dim}-D")
    density = cfg.density_for(space.dim)
    grid = grid_points(space, density)
    values = ei_at(m, grid, f_best, cfg)
    idx = int(np.argmax(values))
    best_x = grid[idx].copy()
    best_v = float(values[idx])
    if cfg.refine_steps == 0 or best_v <= 0.0:
        return best_x, best_v

    lower, upper = space.lower, space.upper
    cell = (upper - lower) / (density - 1)
    x = best_x.copy()
    for k in range(space.dim):
        lo = max(lower[k], x[k] - cell[k])
        hi = min(upper[k], x[k] + cell[k])

        def along(t, k=k):
            probe = x.copy()
            probe[k] = t
            return float(ei_at(m, probe[None, :], f_best, cfg)[0])

        t, _ = _golden_max(along, lo, hi, cfg.refine_steps)
        x[k] = t
    v = float(ei_at(m, x[None, :], f_best, cfg)[0])
    if v > best_v:
        return np.clip(x, lower, upper), v
    return best_x, best_v
