"""The Bayesian-optimization loop that searches for the probe normal."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import (
    IN_PLANE,
    OUT_PLANE,
    AcquisitionConfig,
    SearchSpace,
    grid_points,
    maximize_acquisition,
)
from .contact import (
    ContactModelConfig,
    ContactSurface,
    ProbePose,
    angular_error,
    sense_force,
)
from .gp import (
    GPNumericalError,
    Hyperparams,
    HyperparamFitWarning,
    default_bounds,
    fit_hyperparams,
    gp_fit,
    predict,
)
from .mesh import NoContactError
from .objective import DegenerateObjectiveError, ForceReading, ObjectiveConfig, objective

log = logging.getLogger(__name__)

MAX_ITERS = "max-iters"
EI_CONVERGED = "ei-converged"
DEGENERATE = "degenerate-objective"

BEST_OBSERVED = "observed"
BEST_SMOOTHED = "posterior-observed"
BEST_POSTERIOR = "posterior-mean"
BEST_RULES = (BEST_OBSERVED, BEST_SMOOTHED, BEST_POSTERIOR)


class RunAbortedError(RuntimeError):
    """Every initial probe placement failed."""


@dataclass(frozen=True)
class BORunConfig:
    """Settings for a single run.

    ``ei_stop_threshold`` is relative: the run stops once the best EI drops
    below ``ei_stop_threshold * (max observed - min observed)``.

    ``hold`` gives ``(alpha_out, alpha_in)`` for any axis the space does not
    search.

    ``best_by`` picks the reported pose: ``"posterior-observed"`` takes the
    probed pose with the highest posterior mean under the final surrogate,
    ``"observed"`` the probed pose with the highest raw objective, and
    ``"posterior-mean"`` the posterior-mean maximizer over the search grid.

    ``incumbent`` sets the EI reference value: ``"observed"`` is the largest
    raw objective so far, ``"posterior"`` the largest posterior mean among the
    probed poses, which a single lucky noisy reading cannot inflate.
    """

    space: SearchSpace
    n_init: int = 3
    n_max: int = 50
    ei_stop_threshold: float = 1e-6
    min_iters_before_stop: int = 10
    seed: int = 0
    objective_cfg: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    acquisition_cfg: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    refit_restarts: int = 2
    best_by: str = BEST_POSTERIOR
    min_length_frac: float = 0.1
    log_sr_min: float = -2.3
    hold: tuple = (0.0, 0.0)
    incumbent: str = "posterior"

    def __post_init__(self):
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.n_max < self.n_init:
            raise ValueError("n_max must be >= n_init")
        if self.ei_stop_threshold < 0:
            raise ValueError("ei_stop_threshold must be >= 0")
        if self.best_by not in BEST_RULES:
            raise ValueError(f"unknown best_by {self.best_by!r}")
        if self.incumbent not in ("observed", "posterior"):
            raise ValueError(f"unknown incumbent {self.incumbent!r}")


@dataclass(frozen=True)
class Sample:
    pose: ProbePose
    force: ForceReading | None
    value: float
    ei: float
    failed: bool = False


@dataclass
class RunResult:
    history: list
    best_pose: ProbePose
    best_value: float
    angular_error_deg: float
    iterations_used: int
    termination_reason: str
    converged_at: int = 0
    ei_evaluations: int = 0
    seed: int = 0

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.history])


def pose_from_vector(space: SearchSpace, x, contact_point, hold=(0.0, 0.0)) -> ProbePose:
    angles = {OUT_PLANE: float(hold[0]), IN_PLANE: float(hold[1])}
    for axis, v in zip(space.axes, x):
        angles[axis.name] = float(v)
    return ProbePose(angles[OUT_PLANE], angles[IN_PLANE], contact_point)


def pose_to_vector(space: SearchSpace, p: ProbePose) -> np.ndarray:
    lookup = {OUT_PLANE: p.alpha_out, IN_PLANE: p.alpha_in}
    return np.array([lookup[a.name] for a in space.axes])


def _evaluate(pose, surface, contact_cfg, obj_cfg, rng):
    try:
        f = sense_force(pose, surface, contact_cfg, rng)
        return f, objective(f, obj_cfg), False
    except (DegenerateObjectiveError, NoContactError) as exc:
        log.debug("failed probe placement at %s: %s", pose, exc)
        return None, math.nan, True


def _grid_evals(space: SearchSpace, cfg: AcquisitionConfig) -> int:
    n = cfg.density_for(space.dim) ** space.dim
    return n + (3 + cfg.refine_steps) * space.dim if cfg.refine_steps else n


def run_bo(
    surface: ContactSurface,
    contact_cfg: ContactModelConfig | None,
    cfg: BORunConfig,
) -> RunResult:
    """Search the space for the pose that best aligns the probe with the normal.

    Raises
    ------
    RunAbortedError
        If none of the initial random poses could be evaluated.
    """
    contact_cfg = contact_cfg or ContactModelConfig()
    space = cfg.space
    seq = np.random.SeedSequence(cfg.seed)
    search_rng, noise_rng = (np.random.default_rng(s) for s in seq.spawn(2))
    contact = surface.contact_point
    bounds = default_bounds(space.width, cfg.min_length_frac, cfg.log_sr_min)
    history = []
    ei_evals = 0

    for x in space.sample(search_rng, cfg.n_init):
        pose = pose_from_vector(space, x, contact, cfg.hold)
        f, v, failed = _evaluate(pose, surface, contact_cfg, cfg.objective_cfg, noise_rng)
        history.append(Sample(pose, f, v, math.nan, failed))
    if all(s.failed for s in history):
        raise RunAbortedError(
            f"all {cfg.n_init} initial poses failed on {surface.kind} surface"
        )

    hyper = None
    reason = MAX_ITERS
    while len(history) < cfg.n_max:
        ok = [s for s in history if not s.failed]
        xs = np.array([pose_to_vector(space, s.pose) for s in ok])
        ys = np.array([s.value for s in ok])
        model = _fit_surrogate(xs, ys, hyper, bounds, cfg, search_rng)
        hyper = model.hyper
        if cfg.incumbent == "posterior":
            f_best = float(predict(model, xs)[0].max())
        else:
            f_best = float(ys.max())
        x_next, ei = maximize_acquisition(model, space, f_best, cfg.acquisition_cfg)
        ei_evals += _grid_evals(space, cfg.acquisition_cfg)
        value_range = float(ys.max() - ys.min())
        if len(history) >= cfg.min_iters_before_stop and ei < cfg.ei_stop_threshold * value_range:
            reason = EI_CONVERGED
            break
        pose = pose_from_vector(space, x_next, contact, cfg.hold)
        f, v, failed = _evaluate(pose, surface, contact_cfg, cfg.objective_cfg, noise_rng)
        history.append(Sample(pose, f, v, float(ei), failed))

    ok_idx = [i for i, s in enumerate(history) if not s.failed]
    xs = np.array([pose_to_vector(space, history[i].pose) for i in ok_idx])
    vals = np.array([history[i].value for i in ok_idx])
    best_i = ok_idx[int(np.argmax(vals))]
    best_pose = history[best_i].pose
    if cfg.best_by != BEST_OBSERVED and len(ok_idx) >= 2:
        final = _fit_surrogate(xs, vals, hyper, bounds, cfg, search_rng)
        if cfg.best_by == BEST_SMOOTHED:
            mean, _ = predict(final, xs)
            best_i = ok_idx[int(np.argmax(mean))]
            best_pose = history[best_i].pose
        else:
            grid = grid_points(space, cfg.acquisition_cfg.density_for(space.dim))
            mean, _ = predict(final, grid)
            best_pose = pose_from_vector(space, grid[int(np.argmax(mean))], contact, cfg.hold)
    return RunResult(
        history=history,
        best_pose=best_pose,
        best_value=float(vals.max()),
        angular_error_deg=angular_error(best_pose, surface),
        iterations_used=len(history),
        termination_reason=reason,
        converged_at=best_i + 1,
        ei_evaluations=ei_evals,
        seed=cfg.seed,
    )


def _fit_surrogate(xs, ys, hyper, bounds, cfg, rng):
    if len(ys) >= 2:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", HyperparamFitWarning)
            hyper = fit_hyperparams(
                xs, ys, cfg.refit_restarts, bounds, previous=hyper, rng=rng, normalize=True
            )
    elif hyper is None:
        hyper = Hyperparams(1.0, 1e-2, 0.3 * cfg.space.width)
    try:
        return gp_fit(xs, ys, hyper, normalize=True)
    except GPNumericalError:
        bumped = replace(hyper, noise_variance=max(hyper.noise_variance, 1e-4))
        return gp_fit(xs, ys, bumped, normalize=True)

