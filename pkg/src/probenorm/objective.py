"""Force-based alignment objective.

The probe is well aligned when the reaction force points straight back along
its axis, so the score rewards ``fz`` and penalizes the tangential cross term
and, through ``lam``, the overall force magnitude (which damps sensor noise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DENOMINATOR_GUARD = 1e-9


class DegenerateObjectiveError(ArithmeticError):
    """The objective denominator vanished for this reading."""


@dataclass(frozen=True)
class ForceReading:
    """Reaction force in the probe frame, newtons."""

    fx: float
    fy: float
    fz: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.fx, self.fy, self.fz)):
            raise ValueError(f"non-finite force reading {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.fz])

    @classmethod
    def from_array(cls, f) -> "ForceReading":
        fx, fy, fz = (float(v) for v in f)
        return cls(fx, fy, fz)


@dataclass(frozen=True)
class ObjectiveConfig:
    """``abs_cross`` swaps ``fx*fy`` for ``|fx*fy|``.

    The signed product lets two tilts of opposite sign shrink the
    denominator, so over a two-axis box the printed form peaks away from
    alignment; the absolute variant is kept for comparison.
    """

    lam: float = 0.3
    epsilon: float = 1.0
    abs_cross: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


def l2_norm(f: ForceReading) -> float:
    return math.sqrt(f.fx * f.fx + f.fy * f.fy + f.fz * f.fz)


def objective(f: ForceReading, cfg: ObjectiveConfig | None = None) -> float:
    """``fz / (fx*fy + lam*|f| + epsilon)``.

    Raises
    ------
    DegenerateObjectiveError
        If the denominator is within 1e-9 of zero, which can happen because
        the cross term ``fx*fy`` may be negative.
    """
    cfg = cfg or ObjectiveConfig()
    cross = f.fx * f.fy
    if cfg.abs_cross:
        cross = abs(cross)
    denom = cross + cfg.lam * l2_norm(f) + cfg.epsilon
    if abs(denom) < DENOMINATOR_GUARD:
        raise DegenerateObjectiveError(
            f"objective denominator {denom:.3e} for reading {f}"
        )
    return f.fz / denom


def objective_noise_robustness(samples, cfg: ObjectiveConfig | None = None):
    """Mean and sample standard deviation of the objective over readings."""
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    vals = np.array([objective(f, cfg) for f in samples])
    return float(np.mean(vals)), float(np.std(vals, ddof=1))
