"""Experiment grids: spec parsing, batch execution, CSV output and reports.

Spec files are flat ``key = value`` text.  Global keys come first; each
``[surface NAME]`` header opens a block of surface keys.  ``#`` starts a
comment.  See the README for the full grammar.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import re
from dataclasses import dataclass, field
from functools import lru_cache
from multiprocessing import get_context

import numpy as np

from .acquisition import IN_PLANE, OUT_PLANE, AcquisitionConfig, SearchSpace
from .bo import BEST_RULES, BORunConfig, RunAbortedError, run_bo
from .contact import (
    ContactModelConfig,
    MeshSurface,
    normal_to_angles,
    PlanarSurface,
    ProbeTip,
    RoughSurface,
    TiltedSurface,
)
from .mesh import MeshError, NoContactError, bundled_mesh_path, load_mesh
from .objective import ObjectiveConfig

log = logging.getLogger(__name__)

BOTH = "both"
MODES = (IN_PLANE, OUT_PLANE, BOTH)
KINDS = ("planar", "tilted", "rough", "mesh")
TIPS = ("linear", "convex")
INACTIVE = ("aligned", "zero")
SUCCESS_DEG = 3.0

RESULT_COLUMNS = [
    "run_id", "surface", "kind", "tip", "mode", "lower", "upper", "lambda",
    "repeat", "seed", "status", "error_deg", "best_alpha_out", "best_alpha_in",
    "best_value", "iterations", "converged_at", "termination", "ei_evals",
    "failed_probes", "message",
]
SUMMARY_COLUMNS = [
    "surface", "tip", "mode", "limit", "lambda", "mean_error_deg", "sd_error_deg",
    "mean_iters", "n_runs", "n_failed", "frac_below_3deg", "mean_converged_at",
    "mean_ei_evals",
]
TRACE_COLUMNS = ["step", "alpha_out", "alpha_in", "fx", "fy", "fz", "value", "ei", "failed"]


class SpecError(ValueError):
    """Invalid experiment spec; ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.message = message
        self.line = line
        self.path = path
        where = f"{path or '<spec>'}:{line}: " if line else ""
        super().__init__(where + message)


class ReportError(RuntimeError):
    """summary.csv is missing or unreadable."""


# ---------------------------------------------------------------------------
# spec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceSpec:
    name: str
    kind: str
    tilt_deg: float = 3.0
    tilt_axis: str = "auto"
    max_deflection_deg: float = 5.0
    texture_deg: float = 2.0
    field_seed: int = 0
    mesh: str | None = None
    contact: tuple = (0.0, 0.0)
    contact_in_plane: tuple | None = None
    contact_out_plane: tuple | None = None

    def contact_for(self, mode: str) -> tuple:
        if mode == IN_PLANE and self.contact_in_plane is not None:
            return self.contact_in_plane
        if mode == OUT_PLANE and self.contact_out_plane is not None:
            return self.contact_out_plane
        return self.contact


@dataclass(frozen=True)
class ExperimentSpec:
    surfaces: tuple
    tips: tuple = ("linear",)
    modes: tuple = (IN_PLANE,)
    limits: tuple = ((-15.0, 15.0),)
    lambdas: tuple = (0.3,)
    repeats: int = 5
    seed: int | None = None
    out: str | None = None
    n_init: int = 3
    n_max: int = 50
    noise: float = 0.05
    desired_force: float = 5.0
    epsilon: float = 1.0
    xi: float = 0.45
    best_by: str = BORunConfig.best_by
    min_length_frac: float = BORunConfig.min_length_frac
    log_sr_min: float = BORunConfig.log_sr_min
    inactive: str = "aligned"

    @property
    def n_runs(self) -> int:
        return (
            len(self.surfaces) * len(self.tips) * len(self.modes)
            * len(self.limits) * len(self.lambdas) * self.repeats
        )


def _num(v, line, key, kind=float):
    try:
        x = kind(v)
    except ValueError:
        raise SpecError(f"{key}: expected {kind.__name__}, got {v!r}", line) from None
    if kind is float and not math.isfinite(x):
        raise SpecError(f"{key}: value must be finite", line)
    return x


def _num_list(v, line, key):
    items = [s for s in re.split(r"[,\s]+", v.strip()) if s]
    if not items:
        raise SpecError(f"{key}: empty list", line)
    return tuple(_num(s, line, key) for s in items)


def _word_list(v, line, key, allowed):
    items = tuple(s for s in re.split(r"[,\s]+", v.strip()) if s)
    for s in items:
        if s not in allowed:
            raise SpecError(f"{key}: {s!r} is not one of {', '.join(allowed)}", line)
    if not items:
        raise SpecError(f"{key}: empty list", line)
    return items


_LIMIT = re.compile(r"\[\s*([^,\]]+?)\s*,\s*([^\]]+?)\s*\]")


def parse_limits(v: str, line=None) -> tuple:
    """``"[-5,5] [-10,10]"`` -> ``((-5.0, 5.0), (-10.0, 10.0))``."""
    found = _LIMIT.findall(v)
    rest = _LIMIT.sub("", v).replace(",", " ").strip()
    if not found or rest:
        raise SpecError(f"limits: cannot parse {v!r}, expected [lo,hi] items", line)
    out = []
    for a, b in found:
        lo, hi = _num(a, line, "limits"), _num(b, line, "limits")
        if not lo < hi:
            raise SpecError(f"limits: [{a},{b}] violates lower < upper", line)
        if max(abs(lo), abs(hi)) > 90:
            raise SpecError(f"limits: [{a},{b}] exceeds 90 degrees", line)
        out.append((lo, hi))
    return tuple(out)


def _pair(v, line, key):
    xy = _num_list(v, line, key)
    if len(xy) != 2:
        raise SpecError(f"{key}: expected two numbers 'x, y'", line)
    return xy


_GLOBAL_KEYS = {
    "seed": lambda v, ln: _num(v, ln, "seed", int),
    "repeats": lambda v, ln: _num(v, ln, "repeats", int),
    "out": lambda v, ln: v,
    "modes": lambda v, ln: _word_list(v, ln, "modes", MODES),
    "tips": lambda v, ln: _word_list(v, ln, "tips", TIPS),
    "limits": lambda v, ln: parse_limits(v, ln),
    "lambdas": lambda v, ln: _num_list(v, ln, "lambdas"),
    "n_init": lambda v, ln: _num(v, ln, "n_init", int),
    "n_max": lambda v, ln: _num(v, ln, "n_max", int),
    "noise": lambda v, ln: _num(v, ln, "noise"),
    "desired_force": lambda v, ln: _num(v, ln, "desired_force"),
    "epsilon": lambda v, ln: _num(v, ln, "epsilon"),
    "xi": lambda v, ln: _num(v, ln, "xi"),
    "best_by": lambda v, ln: _word_list(v, ln, "best_by", BEST_RULES)[0],
    "min_length_frac": lambda v, ln: _num(v, ln, "min_length_frac"),
    "log_sr_min": lambda v, ln: _num(v, ln, "log_sr_min"),
    "inactive": lambda v, ln: _word_list(v, ln, "inactive", INACTIVE)[0],
}
_ALIASES = {"mode": "modes", "tip": "tips", "limit": "limits", "lambda": "lambdas"}

_SURFACE_KEYS = {
    "kind": lambda v, ln: _word_list(v, ln, "kind", KINDS)[0],
    "tilt_deg": lambda v, ln: _num(v, ln, "tilt_deg"),
    "tilt_axis": lambda v, ln: _word_list(v, ln, "tilt_axis", ("auto", "x", "y"))[0],
    "max_deflection_deg": lambda v, ln: _num(v, ln, "max_deflection_deg"),
    "texture_deg": lambda v, ln: _num(v, ln, "texture_deg"),
    "field_seed": lambda v, ln: _num(v, ln, "field_seed", int),
    "mesh": lambda v, ln: v,
    "contact": lambda v, ln: _pair(v, ln, "contact"),
    "contact_in_plane": lambda v, ln: _pair(v, ln, "contact_in_plane"),
    "contact_out_plane": lambda v, ln: _pair(v, ln, "contact_out_plane"),
}


def resolve_mesh(ref: str, base_dir: str = ".") -> str:
    """``bundled:NAME`` names a packaged mesh; anything else is a file path."""
    if ref.startswith("bundled:"):
        return bundled_mesh_path(ref.split(":", 1)[1])
    path = ref if os.path.isabs(ref) else os.path.join(base_dir, ref)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return os.path.abspath(path)


def parse_spec_text(text: str, base_dir: str = ".", path=None) -> ExperimentSpec:
    top: dict = {}
    blocks: list = []
    seen_line: dict = {}
    current = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        m = re.fullmatch(r"\[\s*surface\s+([A-Za-z0-9_.\-]+)\s*\]", s)
        if m:
            if any(b["name"] == m.group(1) for b in blocks):
                raise SpecError(f"duplicate surface {m.group(1)!r}", ln, path)
            current = {"name": m.group(1), "_line": ln}
            blocks.append(current)
            continue
        if s.startswith("["):
            raise SpecError(f"bad section header {s!r}", ln, path)
        if "=" not in s:
            raise SpecError(f"expected 'key = value', got {s!r}", ln, path)
        key, value = (p.strip() for p in s.split("=", 1))
        try:
            if current is None:
                key = _ALIASES.get(key, key)
                if key not in _GLOBAL_KEYS:
                    raise SpecError(f"unknown key {key!r}", ln)
                top[key] = _GLOBAL_KEYS[key](value, ln)
                seen_line[key] = ln
            else:
                if key not in _SURFACE_KEYS:
                    raise SpecError(f"unknown surface key {key!r}", ln)
                current[key] = _SURFACE_KEYS[key](value, ln)
                if key == "mesh":
                    try:
                        current[key] = resolve_mesh(current[key], base_dir)
                    except FileNotFoundError as exc:
                        raise SpecError(f"mesh file not found: {exc}", ln) from None
                current["_" + key] = ln
        except SpecError as exc:
            raise SpecError(exc.message, exc.line, path) from None

    if not blocks:
        raise SpecError("spec defines no [surface ...] block", None, path)
    surfaces = []
    for b in blocks:
        ln = b["_line"]
        if "kind" not in b:
            raise SpecError(f"surface {b['name']!r} has no kind", ln, path)
        if b["kind"] == "mesh" and "mesh" not in b:
            raise SpecError(f"mesh surface {b['name']!r} needs a mesh file", ln, path)
        fields = {k: v for k, v in b.items() if not k.startswith("_")}
        surfaces.append(SurfaceSpec(**fields))
    spec = ExperimentSpec(surfaces=tuple(surfaces), **top)
    if spec.repeats < 1:
        raise SpecError("repeats must be >= 1", seen_line.get("repeats"), path)
    if spec.n_init < 1 or spec.n_max <= spec.n_init:
        raise SpecError("need n_init >= 1 and n_max > n_init",
                        seen_line.get("n_max") or seen_line.get("n_init"), path)
    for key in ("noise", "lambdas"):
        vals = np.atleast_1d(getattr(spec, key))
        if np.any(vals < 0):
            raise SpecError(f"{key} must be >= 0", seen_line.get(key), path)
    for key in ("desired_force", "epsilon"):
        if not getattr(spec, key) > 0:
            raise SpecError(f"{key} must be > 0", seen_line.get(key), path)
    return spec


def parse_spec(path) -> ExperimentSpec:
    """Read and validate a spec file.

    Raises
    ------
    SpecError
        On unknown keys, bad values or missing mesh files, naming the line.
    """
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_spec_text(text, base_dir=os.path.dirname(os.path.abspath(path)), path=path)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunTask:
    run_id: int
    surface: SurfaceSpec
    tip: str
    mode: str
    limit: tuple
    lam: float
    repeat: int
    seed: int


@dataclass
class RunRecord:
    task: RunTask
    result: object = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.result is not None


def run_seed(master: int, run_id: int) -> int:
    """Per-run seed; depends only on the master seed and the run's grid index."""
    return int(np.random.SeedSequence([int(master), int(run_id)]).generate_state(1)[0])


def plan_runs(spec: ExperimentSpec, master_seed: int) -> list:
    """All runs in fixed (surface, tip, mode, limit, lambda, repeat) order."""
    tasks = []
    for surf in spec.surfaces:
        for tip in spec.tips:
            for mode in spec.modes:
                for lim in spec.limits:
                    for lam in spec.lambdas:
                        for rep in range(spec.repeats):
                            i = len(tasks)
                            tasks.append(
                                RunTask(i, surf, tip, mode, lim, lam, rep, run_seed(master_seed, i))
                            )
    return tasks


@lru_cache(maxsize=8)
def _mesh(path):
    from .mesh import build_bvh

    m = load_mesh(path)
    return m, build_bvh(m)


def _tilt_axis(surf: SurfaceSpec, mode: str) -> str:
    if surf.tilt_axis != "auto":
        return surf.tilt_axis
    # tilt inside the plane the search rotates through
    return "y" if mode == IN_PLANE else "x"


def build_surface(surf: SurfaceSpec, tip: str, mode: str, noise: float):
    probe = ProbeTip.linear() if tip == "linear" else ProbeTip.convex()
    kw = dict(probe_tip=probe, sensor_noise_sigma=noise, rng_seed=surf.field_seed)
    if surf.kind == "planar":
        return PlanarSurface(**kw)
    if surf.kind == "tilted":
        return TiltedSurface(tilt_axis=_tilt_axis(surf, mode), tilt_deg=surf.tilt_deg, **kw)
    if surf.kind == "rough":
        return RoughSurface(
            max_deflection_deg=surf.max_deflection_deg, texture_deg=surf.texture_deg, **kw
        )
    mesh, bvh = _mesh(surf.mesh)
    x, y = surf.contact_for(mode)
    return MeshSurface.over(mesh, x, y, bvh=bvh, **kw)


def _space(mode: str, limit: tuple) -> SearchSpace:
    if mode == BOTH:
        return SearchSpace.both(*limit)
    return SearchSpace.single(mode, *limit)


def hold_angles(spec: ExperimentSpec, mode: str, surface) -> tuple:
    """Angles for the rotation a single-axis run does not search.

    With ``inactive = aligned`` the idle axis matches the true normal, so the
    searched interval contains an exact solution; ``zero`` leaves it at 0.
    """
    if mode == BOTH or spec.inactive == "zero":
        return (0.0, 0.0)
    return normal_to_angles(surface.true_normal(surface.contact_point))


def task_config(spec: ExperimentSpec, t: RunTask, hold=(0.0, 0.0)) -> BORunConfig:
    return BORunConfig(
        space=_space(t.mode, t.limit),
        n_init=spec.n_init,
        n_max=spec.n_max,
        seed=t.seed,
        objective_cfg=ObjectiveConfig(lam=t.lam, epsilon=spec.epsilon),
        acquisition_cfg=AcquisitionConfig(xi=spec.xi),
        best_by=spec.best_by,
        min_length_frac=spec.min_length_frac,
        log_sr_min=spec.log_sr_min,
        hold=hold,
    )


def execute(args) -> RunRecord:
    spec, t = args
    try:
        surface = build_surface(t.surface, t.tip, t.mode, spec.noise)
        cfg = task_config(spec, t, hold_angles(spec, t.mode, surface))
        res = run_bo(surface, ContactModelConfig(desired_force=spec.desired_force), cfg)
    except (RunAbortedError, NoContactError, MeshError, ValueError, ArithmeticError) as exc:
        log.warning("run %d failed: %s", t.run_id, exc)
        return RunRecord(t, None, f"{type(exc).__name__}: {exc}")
    return RunRecord(t, res)


def run_batch(spec: ExperimentSpec, master_seed: int | None = None, jobs: int = 1) -> list:
    """Execute every planned run; the output order is the plan order for any ``jobs``."""
    seed = spec.seed if master_seed is None else master_seed
    tasks = plan_runs(spec, 0 if seed is None else seed)
    work = [(spec, t) for t in tasks]
    if jobs <= 1 or len(work) <= 1:
        return [execute(w) for w in work]
    with get_context("spawn").Pool(min(jobs, len(work))) as pool:
        return pool.map(execute, work, chunksize=1)


# ---------------------------------------------------------------------------
# summaries and files
# ---------------------------------------------------------------------------


def limit_label(limit) -> str:
    return f"[{limit[0]:g},{limit[1]:g}]"


@dataclass
class CellSummary:
    surface: str
    tip: str
    mode: str
    limit: tuple
    lam: float
    errors: list = field(default_factory=list)
    iters: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    ei_evals: list = field(default_factory=list)
    n_failed: int = 0

    @property
    def n_runs(self) -> int:
        return len(self.errors) + self.n_failed

    @property
    def partial(self) -> bool:
        return self.n_failed > 0

    def _mean(self, xs):
        return float(np.mean(xs)) if xs else math.nan

    @property
    def mean_error(self):
        return self._mean(self.errors)

    @property
    def sd_error(self):
        return float(np.std(self.errors, ddof=1)) if len(self.errors) > 1 else 0.0 if self.errors else math.nan

    @property
    def mean_iters(self):
        return self._mean(self.iters)

    @property
    def mean_converged_at(self):
        return self._mean(self.converged)

    @property
    def frac_below(self):
        return float(np.mean(np.array(self.errors) < SUCCESS_DEG)) if self.errors else math.nan


def summarize(records) -> list:
    cells: dict = {}
    for r in records:
        t = r.task
        key = (t.surface.name, t.tip, t.mode, t.limit, t.lam)
        c = cells.setdefault(key, CellSummary(*key))
        if not r.ok:
            c.n_failed += 1
            continue
        c.errors.append(r.result.angular_error_deg)
        c.iters.append(r.result.iterations_used)
        c.converged.append(r.result.converged_at)
        c.ei_evals.append(r.result.ei_evaluations)
    return list(cells.values())


def _f(x, digits=6):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.{digits}f}"


def result_rows(records):
    for r in records:
        t = r.task
        row = {
            "run_id": t.run_id, "surface": t.surface.name, "kind": t.surface.kind,
            "tip": t.tip, "mode": t.mode, "lower": f"{t.limit[0]:g}", "upper": f"{t.limit[1]:g}",
            "lambda": f"{t.lam:g}", "repeat": t.repeat, "seed": t.seed,
        }
        if r.ok:
            res = r.result
            row.update(
                status="ok", error_deg=_f(res.angular_error_deg, 2),
                best_alpha_out=_f(res.best_pose.alpha_out, 4),
                best_alpha_in=_f(res.best_pose.alpha_in, 4),
                best_value=_f(res.best_value), iterations=res.iterations_used,
                converged_at=res.converged_at, termination=res.termination_reason,
                ei_evals=res.ei_evaluations,
                failed_probes=sum(s.failed for s in res.history), message="",
            )
        else:
            row.update(status="failed", message=r.error)
        yield row


def summary_rows(cells):
    for c in cells:
        yield {
            "surface": c.surface, "tip": c.tip, "mode": c.mode, "limit": limit_label(c.limit),
            "lambda": f"{c.lam:g}", "mean_error_deg": _f(c.mean_error, 2),
            "sd_error_deg": _f(c.sd_error, 2), "mean_iters": _f(c.mean_iters, 2),
            "n_runs": c.n_runs, "n_failed": c.n_failed, "frac_below_3deg": _f(c.frac_below, 3),
            "mean_converged_at": _f(c.mean_converged_at, 2),
            "mean_ei_evals": _f(float(np.mean(c.ei_evals)) if c.ei_evals else math.nan, 1),
        }


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in columns})


def write_trace(path, res):
    rows = []
    for i, s in enumerate(res.history):
        f = s.force
        rows.append({
            "step": i, "alpha_out": _f(s.pose.alpha_out), "alpha_in": _f(s.pose.alpha_in),
            "fx": _f(f.fx) if f else "", "fy": _f(f.fy) if f else "", "fz": _f(f.fz) if f else "",
            "value": _f(s.value), "ei": _f(s.ei, 9), "failed": int(s.failed),
        })
    _write_csv(path, TRACE_COLUMNS, rows)


def write_outputs(out_dir, records):
    os.makedirs(os.path.join(out_dir, "traces"), exist_ok=True)
    _write_csv(os.path.join(out_dir, "results.csv"), RESULT_COLUMNS, result_rows(records))
    _write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, summary_rows(summarize(records)))
    for r in records:
        if r.ok:
            write_trace(os.path.join(out_dir, "traces", f"run_{r.task.run_id:05d}.csv"), r.result)


def run_experiment(spec: ExperimentSpec, out_dir=None, master_seed=None, jobs: int = 1) -> int:
    """Run the grid and write ``results.csv``, ``summary.csv`` and ``traces/``.

    Returns 0 when at least one run succeeded (or the grid is empty), else 1.
    """
    out_dir = out_dir or spec.out or "results"
    records = run_batch(spec, master_seed, jobs)
    write_outputs(out_dir, records)
    n_ok = sum(r.ok for r in records)
    log.info("%d/%d runs succeeded, outputs in %s", n_ok, len(records), out_dir)
    return 0 if n_ok or not records else 1


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def read_summary(out_dir) -> list:
    path = os.path.join(out_dir, "summary.csv")
    if not os.path.exists(path):
        raise ReportError(f"no summary.csv in {out_dir}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = set(SUMMARY_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise ReportError(f"summary.csv lacks columns {sorted(missing)}")
        return list(reader)


def _limit_key(label):
    lo, hi = (float(v) for v in label.strip("[]").split(","))
    return (hi - lo, lo)


def _table(rows, colnames, cells, title):
    width = [max(len(r) for r in [colnames[0]] + [row[0] for row in rows])]
    for j in range(1, len(colnames)):
        width.append(max([len(colnames[j])] + [len(cells[i][j - 1]) for i in range(len(rows))]))
    out = io.StringIO()
    out.write(title + "\n")
    out.write("  ".join(c.ljust(w) for c, w in zip(colnames, width)).rstrip() + "\n")
    out.write("  ".join("-" * w for w in width) + "\n")
    for i, row in enumerate(rows):
        parts = [row[0].ljust(width[0])] + [cells[i][j].rjust(width[j + 1]) for j in range(len(colnames) - 1)]
        out.write("  ".join(parts).rstrip() + "\n")
    return out.getvalue()


def report(out_dir) -> str:
    """Surface by limit tables of ``mean±sd`` error per (mode, tip, lambda)."""
    rows = read_summary(out_dir)
    if not rows:
        return "no runs\n"
    try:
        groups: dict = {}
        for r in rows:
            groups.setdefault((r["mode"], r["tip"], r["lambda"]), []).append(r)
        chunks = []
        for (mode, tip, lam), rs in groups.items():
            surfaces = list(dict.fromkeys(r["surface"] for r in rs))
            limits = sorted(set(r["limit"] for r in rs), key=_limit_key)
            lookup = {(r["surface"], r["limit"]): r for r in rs}
            cells = []
            for s in surfaces:
                line = []
                for lim in limits:
                    r = lookup.get((s, lim))
                    if r is None or r["mean_error_deg"] == "":
                        line.append("-")
                    else:
                        mark = "*" if int(r["n_failed"]) else ""
                        line.append(f"{r['mean_error_deg']}±{r['sd_error_deg']}{mark}")
                cells.append(line)
            title = f"angular error (deg), mode={mode} tip={tip} lambda={lam}"
            chunks.append(_table([[s] for s in surfaces], ["surface"] + limits, cells, title))
        errs = [float(r["mean_error_deg"]) for r in rows if r["mean_error_deg"]]
        n = sum(int(r["n_runs"]) - int(r["n_failed"]) for r in rows)
        foot = f"cells={len(rows)} runs={n}"
        if errs:
            foot += f" mean of cell means={np.mean(errs):.2f}"
        return "\n".join(chunks) + "\n" + foot + "\n"
    except (KeyError, ValueError) as exc:
        raise ReportError(f"corrupt summary.csv: {exc}") from None
