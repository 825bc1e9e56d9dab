"""Experiment configuration files.

A config is a YAML mapping::

    name: sec5_identifiable
    system:
      kind: latent_dag          # or "driver"
      label: identifiable       # case name of the base system
      x0: [...]
      z0: [...]
      A: [[...], ...]
      B: [[...], ...]
      G: [[...], ...]           # latent_dag only
      driver: {...}             # driver only, see below
    variants:                   # extra cases, each overriding system fields
      unidentifiable: {A: [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}
    controls:
      z0_stars: [[1, 0, 0], ...]      # one controlled latent start per row
      interventions: [[0, 1], ...]    # two start values per latent
    task: check
    check: {conditions: [B1, "C1(n=10)"], n: 10, tol: null}
    simulate: {n: 50, t_start: 0, t_end: 1}
    intervene: {variable: 1, value: 1.0, n: 50}
    estimate: {mode: single_trajectory_eta, n: 100, reps: 20, delta: 0.1, seed: 0}
    reproduce: {mode: ..., n_values: [10, 100, 500], reps: 100, delta: 0.1, seed: 0}

Drivers are ``{kind: polynomial, coefficients: [[v0...], [v1...]]}``,
``{kind: exponential, v: [...]}`` or ``{kind: trigonometric, v1: [...], v2: [...]}``.
Matrices are row-major nested lists. Sections that sample trajectories accept
``t_start`` / ``t_end`` (default 0 and 1) and ``include_start`` (default true:
both endpoints are on the grid). Every task section may carry a ``cases``
list; it defaults to the base case, except for ``reproduce`` which runs every
case.
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from .identifiability import CONDITION_IDS
from .systems import (
    Exponential,
    LatentDagSystem,
    LatentDriverSystem,
    NotADagError,
    Polynomial,
    Trigonometric,
)

__all__ = [
    "ConfigError",
    "TASKS",
    "ConditionRequest",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "bundled_fixtures",
    "fixture_path",
    "config_digest",
]

TASKS = ("check", "simulate", "intervene", "estimate", "reproduce")
_SYSTEM_KINDS = ("latent_dag", "driver")
_CONDITION_RE = re.compile(r"^\s*([A-Z][A-Z0-9_]*)\s*(?:\(\s*n\s*=\s*(\d+)\s*\))?\s*$")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; the message names the field path."""


@dataclass(frozen=True)
class ConditionRequest:
    condition_id: str
    n: Optional[int] = None


def _matrix(raw, path, shape=None):
    try:
        M = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a numeric matrix ({exc})") from None
    if M.ndim != 2:
        raise ConfigError(f"{path}: expected a matrix (list of rows), got {M.ndim}-d data")
    if shape is not None and M.shape != tuple(shape):
        raise ConfigError(f"{path}: expected {shape[0]}x{shape[1]} matrix, got "
                          f"{M.shape[0]}x{M.shape[1]}")
    if not np.all(np.isfinite(M)):
        raise ConfigError(f"{path}: entries must be finite")
    return M


def _vector(raw, path, dim=None):
    try:
        v = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a numeric vector ({exc})") from None
    if v.ndim != 1:
        raise ConfigError(f"{path}: expected a flat list of numbers")
    if dim is not None and v.shape[0] != dim:
        raise ConfigError(f"{path}: expected length {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{path}: entries must be finite")
    return v


def _require(mapping, key, path):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ConfigError(f"{path}.{key}: missing required field")
    return mapping[key]


def _build_driver(raw, d_latent, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    kind = raw.get("kind")
    if kind == "polynomial":
        coeffs = _matrix(_require(raw, "coefficients", path), f"{path}.coefficients")
        if coeffs.shape[1] != d_latent:
            raise ConfigError(f"{path}.coefficients: rows must have length {d_latent}, "
                              f"got {coeffs.shape[1]}")
        return Polynomial(coeffs)
    if kind == "exponential":
        return Exponential(_vector(_require(raw, "v", path), f"{path}.v", d_latent))
    if kind == "trigonometric":
        return Trigonometric(_vector(_require(raw, "v1", path), f"{path}.v1", d_latent),
                             _vector(_require(raw, "v2", path), f"{path}.v2", d_latent))
    raise ConfigError(f"{path}.kind: must be polynomial, exponential or trigonometric, got {kind!r}")


def _build_system(raw, path="system"):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    kind = raw.get("kind", "latent_dag")
    if kind not in _SYSTEM_KINDS:
        raise ConfigError(f"{path}.kind: must be one of {_SYSTEM_KINDS}, got {kind!r}")
    x0 = _vector(_require(raw, "x0", path), f"{path}.x0")
    z0 = _vector(_require(raw, "z0", path), f"{path}.z0")
    d, p = len(x0), len(z0)
    if d == 0 or p == 0:
        raise ConfigError(f"{path}: x0 and z0 must be nonempty")
    A = _matrix(_require(raw, "A", path), f"{path}.A", (d, d))
    B = _matrix(_require(raw, "B", path), f"{path}.B", (d, p))
    try:
        if kind == "latent_dag":
            G = _matrix(_require(raw, "G", path), f"{path}.G", (p, p))
            return LatentDagSystem(x0, z0, A, B, G)
        driver = _build_driver(_require(raw, "driver", path), p, f"{path}.driver")
        return LatentDriverSystem(x0, z0, A, B, driver)
    except NotADagError as exc:
        raise ConfigError(f"{path}.G: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def _parse_conditions(raw, path):
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ConfigError(f"{path}: expected a list of condition ids")
    out = []
    for i, item in enumerate(raw):
        where = f"{path}[{i}]"
        if isinstance(item, dict):
            cid, n = item.get("id"), item.get("n")
        elif isinstance(item, str):
            m = _CONDITION_RE.match(item)
            if not m:
                raise ConfigError(f"{where}: cannot parse condition {item!r}")
            cid, n = m.group(1), m.group(2)
        else:
            raise ConfigError(f"{where}: expected a condition id")
        if cid not in CONDITION_IDS:
            raise ConfigError(f"{where}: unknown condition id {cid!r}; valid ids are "
                              f"{', '.join(CONDITION_IDS)}")
        if n is not None:
            n = int(n)
            if n < 1:
                raise ConfigError(f"{where}: n must be positive")
        out.append(ConditionRequest(cid, n))
    return out


@dataclass
class ExperimentConfig:
    """Validated configuration.

    ``raw`` keeps the parsed mapping (after command-line overrides) and is what
    the digest is computed from.
    """

    name: str
    raw: Dict[str, Any]
    systems: Dict[str, Any]
    base_case: str
    z0_stars: Optional[np.ndarray] = None
    interventions: Optional[List[List[float]]] = None
    task: Optional[str] = None
    sections: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    source: Optional[str] = None

    @property
    def digest(self):
        return config_digest(self.raw)

    @property
    def base_system(self):
        return self.systems[self.base_case]

    def section(self, task):
        return dict(self.sections.get(task) or {})

    def cases_for(self, task):
        sec = self.section(task)
        default = list(self.systems) if task == "reproduce" else [self.base_case]
        cases = sec.get("cases", default)
        unknown = [c for c in cases if c not in self.systems]
        if unknown:
            raise ConfigError(f"{task}.cases: unknown case(s) {unknown}; defined cases are "
                              f"{list(self.systems)}")
        return list(cases)

    def conditions(self):
        return _parse_conditions(self.section("check").get("conditions"), "check.conditions")

    def with_overrides(self, **overrides):
        """New config with ``seed``, ``reps`` or ``tol`` pushed into every task section."""
        raw = copy.deepcopy(self.raw)
        keys = {"seed": ("estimate", "reproduce"), "reps": ("estimate", "reproduce"),
                "tol": ("check",)}
        for key, value in overrides.items():
            if value is None:
                continue
            for task in keys[key]:
                raw.setdefault(task, {})
                if raw[task] is None:
                    raw[task] = {}
                raw[task][key] = value
        return parse_config(raw, self.source)


def _check_sections(raw):
    for task in TASKS:
        sec = raw.get(task)
        if sec is not None and not isinstance(sec, dict):
            raise ConfigError(f"{task}: expected a mapping")
    check = raw.get("check") or {}
    _parse_conditions(check.get("conditions"), "check.conditions")
    if check.get("tol") is not None and not float(check["tol"]) > 0:
        raise ConfigError("check.tol: must be positive")
    for task in ("estimate", "reproduce"):
        sec = raw.get(task) or {}
        if "reps" in sec and int(sec["reps"]) < 1:
            raise ConfigError(f"{task}.reps: must be >= 1")
        if "seed" in sec and int(sec["seed"]) < 0:
            raise ConfigError(f"{task}.seed: must be a nonnegative integer")
        if "delta" in sec and not float(sec["delta"]) > 0:
            raise ConfigError(f"{task}.delta: must be positive")
    for task in ("check", "simulate", "intervene", "estimate"):
        sec = raw.get(task) or {}
        if "n" in sec and int(sec["n"]) < 1:
            raise ConfigError(f"{task}.n: must be positive")


def parse_config(raw, source=None) -> ExperimentConfig:
    """Validate an already-parsed mapping."""
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    raw = copy.deepcopy(raw)
    name = str(raw.get("name") or (Path(source).stem if source else "experiment"))
    sys_raw = _require(raw, "system", "config")
    base = _build_system(sys_raw)
    base_case = str(sys_raw.get("label", "base"))
    systems = {base_case: base}
    variants = raw.get("variants") or {}
    if not isinstance(variants, dict):
        raise ConfigError("variants: expected a mapping of case name to overrides")
    for vname, over in variants.items():
        if not isinstance(over, dict):
            raise ConfigError(f"variants.{vname}: expected a mapping")
        if str(vname) in systems:
            raise ConfigError(f"variants.{vname}: duplicates the base case name")
        merged = dict(sys_raw)
        merged.update(over)
        systems[str(vname)] = _build_system(merged, f"variants.{vname}")

    controls = raw.get("controls") or {}
    if not isinstance(controls, dict):
        raise ConfigError("controls: expected a mapping")
    p = base.p
    z0_stars = None
    if controls.get("z0_stars") is not None:
        z0_stars = _matrix(controls["z0_stars"], "controls.z0_stars", (p, p))
    interventions = None
    if controls.get("interventions") is not None:
        iv = _matrix(controls["interventions"], "controls.interventions", (p, 2))
        interventions = iv.tolist()

    task = raw.get("task")
    if task is not None and task not in TASKS:
        raise ConfigError(f"task: must be one of {TASKS}, got {task!r}")
    _check_sections(raw)
    sections = {t: dict(raw.get(t) or {}) for t in TASKS if raw.get(t) is not None}
    return ExperimentConfig(name, raw, systems, base_case, z0_stars, interventions, task,
                            sections, str(source) if source else None)


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML config file.

    A bare fixture name (``"sec5_identifiable"``) resolves to the bundled copy
    when no such file exists.
    """
    p = Path(path)
    if not p.exists():
        bundled = fixture_path(str(path))
        if bundled is None:
            raise ConfigError(f"config file not found: {path}")
        p = bundled
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: parse error: {exc}") from None
    return parse_config(raw, str(p))


def bundled_fixtures():
    """Names of the configs shipped with the package."""
    root = resources.files("latentode") / "fixtures"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".yaml"))


def fixture_path(name):
    root = resources.files("latentode") / "fixtures"
    stem = name[:-5] if name.endswith(".yaml") else name
    candidate = root / f"{stem}.yaml"
    return Path(str(candidate)) if candidate.is_file() else None


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (int, float, np.integer, np.floating)):
        return float(obj)
    return str(obj)


def config_digest(raw) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, numbers as floats)."""
    text = json.dumps(_canonical(raw), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
