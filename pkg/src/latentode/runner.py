"""Run configured tasks and persist their results."""
from __future__ import annotations

import csv
import io
import itertools
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from .config import TASKS, ConfigError, ExperimentConfig
from .estimate import FAMILY, SINGLE, SolverOptions, make_problem, run_replications
from .identifiability import (
    check_A0,
    check_A1,
    check_aug_A0,
    check_B1,
    check_B2_B3_B4,
    check_B3,
    check_B4,
    check_B5,
    check_C1,
    check_C2,
    check_C3,
)
from .recovery import B3ViolationError, B4ViolationError
from .simulate import InterventionSpec, equally_spaced, intervene_clamp, sample_trajectory
from .systems import LatentDagSystem, LatentDriverSystem, augment

__all__ = [
    "NumericalFailure",
    "ResultRecord",
    "run_task",
    "emit_results",
    "load_record",
    "REPORT_COLUMNS",
    "SUMMARY_COLUMNS",
    "LONG_COLUMNS",
]

REPORT_COLUMNS = ("case", "condition_id", "label", "holds", "rank", "required_rank",
                  "margin", "tolerance")
SUMMARY_COLUMNS = ("case", "n", "block", "mse_mean", "mse_var")
LONG_COLUMNS = ("case", "n", "replication", "block", "squared_error")
COMPARISON_COLUMNS = ("case_a", "case_b", "max_abs_difference")


class NumericalFailure(RuntimeError):
    """A task hit a numerical breakdown (singular solve, rank violation, overflow)."""


@dataclass
class ResultRecord:
    """Everything a task produced, as plain JSON-compatible data."""

    config_name: str
    config_digest: str
    task: str
    reports: List[Dict[str, Any]] = field(default_factory=list)
    grids: List[Dict[str, Any]] = field(default_factory=list)
    comparisons: List[Dict[str, Any]] = field(default_factory=list)
    summaries: List[Dict[str, Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    tool_version: str = __version__
    timestamp: str = ""

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


# --- check ------------------------------------------------------------------

def _grid(sec, n=None):
    n = int(n if n is not None else sec.get("n", 10))
    return equally_spaced(n, float(sec.get("t_start", 0.0)), float(sec.get("t_end", 1.0)),
                          include_start=bool(sec.get("include_start", True)))


def _grid_metadata(sec):
    start, end = float(sec.get("t_start", 0.0)), float(sec.get("t_end", 1.0))
    left = "[" if sec.get("include_start", True) else "("
    return f"equally spaced on {left}{start:g}, {end:g}]"


def _needs_dag(sys, cid):
    if not isinstance(sys, LatentDagSystem):
        raise ConfigError(f"check.conditions: {cid} requires a latent_dag system")


def _needs(value, cid, what):
    if value is None:
        raise ConfigError(f"check.conditions: {cid} requires controls.{what}")
    return value


def _intervened_starts(sys, interventions):
    """Latent-major list of initial latent states, two per latent."""
    out = []
    for j, pair in enumerate(interventions):
        for val in pair:
            z = sys.z0.copy()
            z[j] = val
            out.append(z)
    return out


def _check_one(cfg: ExperimentConfig, sys, req, sec, tol):
    cid = req.condition_id
    if cid == "A0":
        return check_A0(sys.x0, sys.A, tol)
    if cid == "A1":
        if not (isinstance(sys, LatentDriverSystem) and sys.driver.kind == "polynomial"):
            raise ConfigError("check.conditions: A1 requires a polynomial driver system")
        return check_A1(sys, tol)
    if cid in ("AUG_A0", "D1", "E1"):
        aug = augment(sys)
        want = {"D1": "exponential", "E1": "trigonometric"}.get(cid)
        if want is not None and aug.kind != want:
            raise ConfigError(f"check.conditions: {cid} requires an {want} driver system")
        return check_aug_A0(aug, tol)
    _needs_dag(sys, cid)
    if cid == "B1":
        return check_B1(sys, tol)
    if cid == "B4":
        return check_B4(sys.B, sys.G, tol)
    if cid == "C1":
        grid = sample_trajectory(sys, _grid(sec, req.n))
        return check_C1(grid.times, grid.states, sys.p, tol)
    if cid == "B3":
        return check_B3(_needs(cfg.z0_stars, cid, "z0_stars"), tol)
    if cid == "B2":
        return check_B2_B3_B4(sys, _needs(cfg.z0_stars, cid, "z0_stars"), tol)
    if cid == "C2":
        stars = _needs(cfg.z0_stars, cid, "z0_stars")
        times = _grid(sec, req.n)
        xs = [sample_trajectory(sys.replace(z0=z), times).states for z in stars]
        return check_C2(times, xs, sys.p, stars, sys.B, sys.G, tol)
    if cid == "B5":
        return check_B5(sys, _needs(cfg.interventions, cid, "interventions"), tol)
    if cid == "C3":
        iv = _needs(cfg.interventions, cid, "interventions")
        times = _grid(sec, req.n)
        sets = [(times, sample_trajectory(sys.replace(z0=z), times).states)
                for z in _intervened_starts(sys, iv)]
        return check_C3(sets, sys.d, sys.p, sys.B, sys.G, tol)
    raise ConfigError(f"check.conditions: unsupported condition {cid}")


def _run_check(cfg, record):
    sec = cfg.section("check")
    tol = sec.get("tol")
    tol = float(tol) if tol is not None else None
    requests = cfg.conditions()
    if not requests:
        raise ConfigError("check.conditions: no conditions requested")
    for case in cfg.cases_for("check"):
        sys = cfg.systems[case]
        for req in requests:
            rep = _check_one(cfg, sys, req, sec, tol)
            d = rep.to_dict()
            d["case"] = case
            if req.n is not None or req.condition_id in ("C1", "C2", "C3"):
                d["n"] = int(req.n if req.n is not None else sec.get("n", 10))
            record.reports.append(d)


# --- simulate / intervene ------------------------------------------------------

def _grid_entry(case, label, times, states):
    return {"case": case, "label": label,
            "times": [float(t) for t in times],
            "states": np.asarray(states, dtype=float).tolist()}


def _add_comparisons(record):
    for a, b in itertools.combinations(record.grids, 2):
        if a["times"] == b["times"]:
            diff = np.max(np.abs(np.array(a["states"]) - np.array(b["states"])))
            record.comparisons.append({"case_a": a["label"], "case_b": b["label"],
                                       "max_abs_difference": float(diff)})


def _run_simulate(cfg, record):
    sec = cfg.section("simulate")
    times = _grid(sec, sec.get("n", 50))
    for case in cfg.cases_for("simulate"):
        g = sample_trajectory(cfg.systems[case], times, case)
        record.grids.append(_grid_entry(case, case, g.times, g.states))
    _add_comparisons(record)


def _run_intervene(cfg, record):
    sec = cfg.section("intervene")
    if "variable" not in sec or "value" not in sec:
        raise ConfigError("intervene: both 'variable' and 'value' are required")
    spec = InterventionSpec(int(sec["variable"]), float(sec["value"]))
    times = np.asarray(_grid(sec, sec.get("n", 50)))
    for case in cfg.cases_for("intervene"):
        sys = cfg.systems[case]
        if not isinstance(sys, LatentDagSystem):
            raise ConfigError("intervene: clamping requires a latent_dag system")
        try:
            traj = intervene_clamp(sys, spec)
        except ValueError as exc:
            raise ConfigError(f"intervene.variable: {exc}") from None
        label = f"{case}:do(x{spec.clamped_index}={spec.value:g})"
        record.grids.append(_grid_entry(case, label, times, traj(times)))
    _add_comparisons(record)


# --- estimate / reproduce ------------------------------------------------------

def _solver(sec):
    raw = sec.get("solver") or {}
    try:
        return SolverOptions(**raw)
    except TypeError as exc:
        raise ConfigError(f"solver: {exc}") from None


def _estimate_cases(cfg, task, n_values, record):
    sec = cfg.section(task)
    mode = sec.get("mode", SINGLE)
    if mode not in (SINGLE, FAMILY):
        raise ConfigError(f"{task}.mode: must be {SINGLE} or {FAMILY}, got {mode!r}")
    stars = None
    if mode == FAMILY:
        if cfg.z0_stars is None:
            raise ConfigError(f"{task}.mode: {FAMILY} requires controls.z0_stars")
        stars = cfg.z0_stars
    reps = int(sec.get("reps", 20))
    delta = float(sec.get("delta", 0.1))
    seed = int(sec.get("seed", 0))
    g_entries = sec.get("g_entries", "full")
    workers = int(sec.get("workers", 1))
    solver = _solver(sec)
    for case in cfg.cases_for(task):
        sys = cfg.systems[case]
        if not isinstance(sys, LatentDagSystem):
            raise ConfigError(f"{task}: estimation requires a latent_dag system")
        for n in n_values:
            times = _grid(sec, n)
            try:
                problem = make_problem(sys, mode, times, delta, stars, solver, seed, g_entries)
            except ValueError as exc:
                raise ConfigError(f"{task}: {exc}") from None
            summary = run_replications(problem, reps, workers=workers)
            record.summaries.append({
                "case": case,
                "n": int(n),
                "mode": mode,
                "blocks": list(summary.blocks),
                "mse_mean": dict(summary.mse_mean),
                "mse_var": dict(summary.mse_var),
                "replications": summary.replications,
                "n_failed": summary.n_failed,
                "records": [
                    {"replication": r.replication, "squared_errors": dict(r.squared_errors),
                     "residual_norm": float(r.residual_norm), "iterations": int(r.iterations),
                     "converged": bool(r.converged), "status": r.status}
                    for r in summary.records
                ],
            })


def _run_estimate(cfg, record):
    sec = cfg.section("estimate")
    _estimate_cases(cfg, "estimate", [int(sec.get("n", 100))], record)


def _run_reproduce(cfg, record):
    sec = cfg.section("reproduce")
    n_values = sec.get("n_values", [10, 100, 500])
    if not isinstance(n_values, list) or not n_values:
        raise ConfigError("reproduce.n_values: expected a nonempty list of sample sizes")
    _estimate_cases(cfg, "reproduce", [int(n) for n in n_values], record)


_RUNNERS = {"check": _run_check, "simulate": _run_simulate, "intervene": _run_intervene,
            "estimate": _run_estimate, "reproduce": _run_reproduce}


def run_task(cfg: ExperimentConfig, task: Optional[str] = None, timestamp=None) -> ResultRecord:
    """Dispatch one task; ``task`` defaults to the config's own ``task`` field.

    Configuration problems raise :class:`ConfigError`; numerical breakdowns are
    wrapped in :class:`NumericalFailure` naming the task.
    """
    task = task or cfg.task
    if task not in TASKS:
        raise ConfigError(f"task: must be one of {TASKS}, got {task!r}")
    if timestamp is None:
        timestamp = datetime.now(timezone.utc).isoformat()
    record = ResultRecord(cfg.name, cfg.digest, task, timestamp=timestamp)
    record.metadata["cases"] = cfg.cases_for(task)
    if task != "check" or any(r.condition_id in ("C1", "C2", "C3") for r in cfg.conditions()):
        record.metadata["time_grid"] = _grid_metadata(cfg.section(task))
    try:
        if task in ("estimate", "reproduce"):
            # The optimizer probes extreme parameters on purpose; it handles
            # non-finite residuals itself.
            _RUNNERS[task](cfg, record)
        else:
            with np.errstate(over="raise", invalid="raise"):
                _RUNNERS[task](cfg, record)
    except ConfigError:
        raise
    except (np.linalg.LinAlgError, FloatingPointError, B3ViolationError,
            B4ViolationError) as exc:
        raise NumericalFailure(f"{task} on {cfg.name}: {exc}") from exc
    return record


# --- output ---------------------------------------------------------------------

def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([row[c] for c in columns])
    return buf.getvalue()


def _report_rows(reports):
    for top in reports:
        stack = [top]
        while stack:
            r = stack.pop(0)
            yield {"case": top["case"], "condition_id": r["condition_id"], "label": r["label"],
                   "holds": r["holds"], "rank": r["rank"], "required_rank": r["required_rank"],
                   "margin": r["margin"], "tolerance": r["tolerance"]}
            stack[0:0] = r.get("sub_reports", [])


def _summary_rows(summaries):
    for s in summaries:
        for b in s["blocks"]:
            yield {"case": s["case"], "n": s["n"], "block": b,
                   "mse_mean": s["mse_mean"][b], "mse_var": s["mse_var"][b]}


def _long_rows(summaries):
    for s in summaries:
        for rec in s["records"]:
            for b in s["blocks"]:
                yield {"case": s["case"], "n": s["n"], "replication": rec["replication"],
                       "block": b, "squared_error": rec["squared_errors"][b]}


def _grid_text(grids):
    d = max((len(g["states"][0]) for g in grids if g["states"]), default=0)
    cols = ("case", "label", "t") + tuple(f"x{i + 1}" for i in range(d))
    rows = []
    for g in grids:
        for t, x in zip(g["times"], g["states"]):
            row = {"case": g["case"], "label": g["label"], "t": t}
            row.update({f"x{i + 1}": v for i, v in enumerate(x)})
            rows.append(row)
    return _csv_text(cols, rows)


def emit_results(record: ResultRecord, out_dir, fmt="csv") -> List[Path]:
    """Write ``record`` under ``out_dir`` and return the written paths.

    ``fmt="json"`` writes ``record.json``. ``fmt="csv"`` writes the tables that
    belong to the task: ``reports.csv`` for checks, ``grids.csv`` (plus
    ``comparisons.csv``) for trajectories, ``summary.csv`` and
    ``replications.csv`` for estimation. CSV files carry no timestamp, so
    reruns with the same config and seed reproduce them byte for byte.
    """
    out = Path(out_dir)
    written = []
    if fmt == "json":
        path = out / "record.json"
        _atomic_write(path, json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")
        return [path]
    if fmt != "csv":
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    tables = []
    if record.task == "check":
        tables.append(("reports.csv", _csv_text(REPORT_COLUMNS, _report_rows(record.reports))))
    elif record.task in ("simulate", "intervene"):
        tables.append(("grids.csv", _grid_text(record.grids)))
        tables.append(("comparisons.csv", _csv_text(COMPARISON_COLUMNS, record.comparisons)))
    else:
        tables.append(("summary.csv", _csv_text(SUMMARY_COLUMNS, _summary_rows(record.summaries))))
        tables.append(("replications.csv", _csv_text(LONG_COLUMNS, _long_rows(record.summaries))))
    for name, text in tables:
        path = out / name
        _atomic_write(path, text)
        written.append(path)
    return written


def load_record(path) -> ResultRecord:
    """Read a ``record.json`` written by :func:`emit_results`."""
    return ResultRecord.from_dict(json.loads(Path(path).read_text()))
