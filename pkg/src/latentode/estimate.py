"""Nonlinear least-squares estimation of latent-DAG systems from sampled trajectories.

Two estimation modes are supported:

``single_trajectory_eta``
    One trajectory with unknown ``z0``. Free parameters are
    ``(x0, z0, A, B, G)``; only ``(x0, A, B z0, B G z0, ...)`` are identifiable,
    so errors are scored on those products.
``multi_trajectory_eta_family``
    ``p`` trajectories sharing ``(x0, A, B, G)`` but started from known latent
    states ``z0*^i``. Free parameters are ``(x0, A, B, G)``.

By default every entry of ``G`` is free, matching a plain flattening of the
parameters; ``g_entries="upper"`` restricts candidates to the known latent DAG
order instead.
"""
from __future__ import annotations

import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.optimize

from .linalg_core import mat_exp_batch
from .simulate import TrajectoryGrid, sample_trajectory
from .systems import LatentDagSystem, moments

__all__ = [
    "SINGLE",
    "FAMILY",
    "ParameterLayout",
    "SolverOptions",
    "EstimationProblem",
    "EstimationResult",
    "ReplicationRecord",
    "ReplicationSummary",
    "make_problem",
    "residuals",
    "jacobian_fd",
    "fit_nls",
    "initial_guess",
    "run_replications",
    "mse_blocks",
    "block_names",
]

SINGLE = "single_trajectory_eta"
FAMILY = "multi_trajectory_eta_family"
_MODES = (SINGLE, FAMILY)
_SQRT_EPS = np.sqrt(np.finfo(float).eps)


def _product_name(k):
    return ("Bz0", "BGz0")[k] if k < 2 else f"BG^{k}z0"


def block_names(mode, p):
    """Scored blocks for a mode, in reporting order."""
    if mode == SINGLE:
        return ("x0", "A") + tuple(_product_name(k) for k in range(p))
    if mode == FAMILY:
        return ("x0", "A", "B", "G")
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class ParameterLayout:
    """Flat parameter vector layout.

    Segments, in order: ``x0`` (d), ``z0`` (p, single-trajectory mode only),
    ``A`` (d*d, row major), ``B`` (d*p, row major) and ``G``. With
    ``g_entries="upper"`` only the strictly upper entries of ``G`` are free,
    which pins the latent DAG order; ``"full"`` frees all ``p*p`` entries.
    """

    mode: str
    d: int
    p: int
    g_entries: str = "full"

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.d < 1 or self.p < 1:
            raise ValueError("d and p must be positive")
        if self.g_entries not in ("upper", "full"):
            raise ValueError(f"g_entries must be 'upper' or 'full', got {self.g_entries!r}")

    def _g_index(self):
        if self.g_entries == "full":
            return np.unravel_index(np.arange(self.p * self.p), (self.p, self.p))
        return np.triu_indices(self.p, 1)

    @property
    def segments(self) -> List[Tuple[str, int]]:
        d, p = self.d, self.p
        segs = [("x0", d)]
        if self.mode == SINGLE:
            segs.append(("z0", p))
        n_g = p * p if self.g_entries == "full" else p * (p - 1) // 2
        segs += [("A", d * d), ("B", d * p), ("G", n_g)]
        return segs

    @property
    def size(self):
        return sum(n for _, n in self.segments)

    def slices(self) -> Dict[str, slice]:
        out, start = {}, 0
        for name, n in self.segments:
            out[name] = slice(start, start + n)
            start += n
        return out

    def pack(self, sys: LatentDagSystem):
        if (sys.d, sys.p) != (self.d, self.p):
            raise ValueError(f"system is d={sys.d}, p={sys.p}; layout expects d={self.d}, p={self.p}")
        if self.g_entries == "upper" and np.any(np.tril(sys.G)):
            raise ValueError("G must be strictly upper triangular to be packed")
        parts = [sys.x0]
        if self.mode == SINGLE:
            parts.append(sys.z0)
        parts += [sys.A.ravel(), sys.B.ravel(), sys.G[self._g_index()]]
        return np.concatenate(parts).astype(float)

    def unpack(self, theta):
        """Dictionary of raw arrays (no validation, may hold extreme values)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"parameter vector must have length {self.size}, got {theta.shape}")
        s = self.slices()
        d, p = self.d, self.p
        G = np.zeros((p, p))
        G[self._g_index()] = theta[s["G"]]
        out = {
            "x0": theta[s["x0"]].copy(),
            "A": theta[s["A"]].reshape(d, d).copy(),
            "B": theta[s["B"]].reshape(d, p).copy(),
            "G": G,
        }
        if self.mode == SINGLE:
            out["z0"] = theta[s["z0"]].copy()
        return out

    def to_system(self, theta, z0=None) -> LatentDagSystem:
        parts = self.unpack(theta)
        z = parts.get("z0", z0)
        if z is None:
            z = np.zeros(self.p)
        return LatentDagSystem(parts["x0"], z, parts["A"], parts["B"], parts["G"])


@dataclass(frozen=True)
class SolverOptions:
    """Settings passed to :func:`scipy.optimize.least_squares`.

    The tolerances map to ``xtol``, ``ftol`` and ``gtol``. ``max_iterations``
    caps residual evaluations and defaults to 200 times the parameter count.
    """

    step_tolerance: float = 1e-8
    residual_tolerance: float = 1e-8
    gradient_tolerance: float = 1e-8
    max_iterations: Optional[int] = None
    method: str = "trf"

    def __post_init__(self):
        if self.method not in ("trf", "dogbox", "lm"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if min(self.step_tolerance, self.residual_tolerance, self.gradient_tolerance) < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")

    def iteration_cap(self, n_params):
        return self.max_iterations if self.max_iterations is not None else 200 * n_params


@dataclass(frozen=True, eq=False)
class EstimationProblem:
    """Observations plus everything needed to score and reinitialize fits.

    ``z0_stars`` (one row per trajectory) is required in family mode and must
    line up with ``observations``. ``delta`` is the half-width of the uniform
    perturbation added to the truth to start each replication.
    """

    mode: str
    truth: LatentDagSystem
    observations: Tuple[TrajectoryGrid, ...]
    delta: float = 0.1
    z0_stars: Optional[np.ndarray] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    seed: int = 0
    g_entries: str = "full"

    def __post_init__(self):
        layout = ParameterLayout(self.mode, self.truth.d, self.truth.p, self.g_entries)
        obs = tuple(self.observations)
        if not obs:
            raise ValueError("at least one trajectory is required")
        if any(g.d != self.truth.d for g in obs):
            raise ValueError("observation dimension does not match the system")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        stars = None
        if self.mode == FAMILY:
            if self.z0_stars is None:
                raise ValueError("family mode requires z0_stars")
            stars = np.atleast_2d(np.asarray(self.z0_stars, dtype=float))
            if stars.shape != (len(obs), self.truth.p):
                raise ValueError(f"z0_stars must be ({len(obs)}, {self.truth.p}), got {stars.shape}")
        elif len(obs) != 1:
            raise ValueError("single-trajectory mode takes exactly one trajectory")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "z0_stars", stars)
        object.__setattr__(self, "_layout", layout)

    @property
    def layout(self) -> ParameterLayout:
        return self._layout

    @property
    def n_observations(self):
        return self.observations[0].n

    @property
    def truth_vector(self):
        return self.layout.pack(self.truth)


@dataclass(frozen=True, eq=False)
class EstimationResult:
    fitted: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    status: str = ""
    cost_history: Tuple[float, ...] = ()


def make_problem(truth: LatentDagSystem, mode, times, delta=0.1, z0_stars=None,
                 solver: Optional[SolverOptions] = None, seed=0,
                 g_entries="full") -> EstimationProblem:
    """Simulate error-free observations of ``truth`` and wrap them in a problem."""
    if mode == FAMILY:
        if z0_stars is None:
            raise ValueError("family mode requires z0_stars")
        stars = np.atleast_2d(np.asarray(z0_stars, dtype=float))
        obs = tuple(sample_trajectory(truth.replace(z0=z), times, f"z0*{i + 1}")
                    for i, z in enumerate(stars))
    else:
        stars = None
        obs = (sample_trajectory(truth, times, "eta"),)
    return EstimationProblem(mode, truth, obs, delta, stars, solver or SolverOptions(), seed,
                             g_entries)


def _initial_states(problem, parts):
    """Rows ``[x0; z0]`` for every observed trajectory."""
    x0 = parts["x0"]
    if problem.mode == SINGLE:
        return np.concatenate([x0, parts["z0"]])[None, :]
    return np.hstack([np.broadcast_to(x0, (len(problem.z0_stars), len(x0))), problem.z0_stars])


def _generator(parts):
    A, B, G = parts["A"], parts["B"], parts["G"]
    d, p = B.shape
    M = np.zeros((d + p, d + p))
    M[:d, :d], M[:d, d:], M[d:, d:] = A, B, G
    return M


def _flows(Ms, problem):
    """``exp(M t)`` per trajectory grid, shape (k, n_i, m, m) each."""
    grids = [g.times for g in problem.observations]
    if all(np.array_equal(t, grids[0]) for t in grids):
        E = mat_exp_batch(Ms, grids[0])
        return [E] * len(grids)
    return [mat_exp_batch(Ms, t) for t in grids]


def _residual_batch(problem: EstimationProblem, thetas):
    """Residual vectors for a stack of parameter vectors; failing rows become inf."""
    layout = problem.layout
    d = layout.d
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    target = np.concatenate([g.states.ravel() for g in problem.observations])
    out = np.full((len(thetas), target.size), np.inf)
    rows = np.nonzero(np.all(np.isfinite(thetas), axis=1))[0]
    if rows.size == 0:
        return out
    parts = [layout.unpack(thetas[j]) for j in rows]
    Ms = np.stack([_generator(pt) for pt in parts])
    y0s = np.stack([_initial_states(problem, pt) for pt in parts])  # (k, traj, m)
    with np.errstate(all="ignore"):
        try:
            flows = _flows(Ms, problem)
        except (np.linalg.LinAlgError, ValueError):
            if len(rows) == 1:
                return out
            for j in rows:
                out[j] = _residual_batch(problem, thetas[j])[0]
            return out
        states = [np.einsum("ktab,kb->kta", E, y0s[:, i])[..., :d]
                  for i, E in enumerate(flows)]
        model = np.concatenate([s.reshape(len(rows), -1) for s in states], axis=1)
        res = model - target[None, :]
    good = np.all(np.isfinite(res), axis=1)
    out[rows[good]] = res[good]
    return out


def residuals(theta, problem: EstimationProblem):
    """Model minus observation, stacked over trajectories, times and coordinates.

    Parameter values that make the flow blow up give an all-``inf`` vector
    instead of raising, so optimizers simply reject them.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.layout.size,):
        raise ValueError(f"parameter vector must have length {problem.layout.size}")
    return _residual_batch(problem, theta[None, :])[0]


def jacobian_fd(theta, problem: EstimationProblem, r0=None):
    """Forward-difference Jacobian with step ``sqrt(eps) * max(1, |theta_i|)``."""
    theta = np.asarray(theta, dtype=float)
    if r0 is None:
        r0 = residuals(theta, problem)
    h = _SQRT_EPS * np.maximum(1.0, np.abs(theta))
    shifted = theta[None, :] + np.diag(h)
    # Use the representable step so the quotient is exact in the denominator.
    h = np.diag(shifted) - theta
    R = _residual_batch(problem, shifted)
    return ((R - r0[None, :]) / h[:, None]).T


def fit_nls(problem: EstimationProblem, theta0=None) -> EstimationResult:
    """Trust-region least-squares fit starting from ``theta0`` (default: the truth).

    Wraps :func:`scipy.optimize.least_squares` with the forward-difference
    Jacobian of :func:`jacobian_fd`. The solver only asks for a Jacobian at
    accepted iterates, which is where ``cost_history`` is recorded; it starts
    with the initial cost and never increases. Hitting the evaluation cap
    leaves ``converged=False`` with the best iterate found.
    """
    opts = problem.solver
    theta = problem.truth_vector if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != (problem.layout.size,):
        raise ValueError(f"parameter vector must have length {problem.layout.size}")
    r0 = residuals(theta, problem)
    if not np.all(np.isfinite(r0)):
        return EstimationResult(theta, sys.float_info.max, 0, False, "nonfinite_initial", ())
    if not np.any(r0):
        return EstimationResult(theta, 0.0, 0, True, "zero_residual", (0.0,))

    history = []
    cache = {}

    def fun(th):
        r = residuals(th, problem)
        cache["last"] = (th.copy(), r)
        return r

    def jac(th):
        th_c, r = cache.get("last", (None, None))
        if th_c is None or not np.array_equal(th_c, th):
            r = residuals(th, problem)
        history.append(0.5 * float(r @ r))
        return jacobian_fd(th, problem, r)

    with np.errstate(all="ignore"):
        sol = scipy.optimize.least_squares(
            fun, theta, jac=jac, method=opts.method,
            xtol=opts.step_tolerance or None, ftol=opts.residual_tolerance or None,
            gtol=opts.gradient_tolerance or None,
            max_nfev=opts.iteration_cap(theta.size))
    cost = 0.5 * float(sol.fun @ sol.fun)
    if not history or cost < history[-1]:
        history.append(cost)
    status = {-1: "improper_input", 0: "max_iterations", 1: "gradient_tolerance",
              2: "residual_tolerance", 3: "step_tolerance", 4: "residual_and_step_tolerance"}
    return EstimationResult(sol.x, float(np.sqrt(2.0 * cost)), int(sol.njev or 0),
                            sol.status > 0, status.get(sol.status, str(sol.status)),
                            tuple(history))


def initial_guess(problem: EstimationProblem, replication: int):
    """Truth plus ``U(-delta, delta)`` noise from the replication's own stream.

    The stream is Philox seeded with ``SeedSequence([seed, replication])``.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([problem.seed, replication])))
    truth = problem.truth_vector
    return truth + rng.uniform(-problem.delta, problem.delta, size=truth.size)


def _moments_of(parts, z0, p):
    out, v = [], np.asarray(z0, dtype=float)
    for _ in range(p):
        out.append(parts["B"] @ v)
        v = parts["G"] @ v
    return out


def mse_blocks(fitted, truth: LatentDagSystem, mode, g_entries="full") -> Dict[str, float]:
    """Mean squared entrywise error per block.

    Single-trajectory mode scores the identifiable products
    ``B G^k z0``; family mode scores the raw ``B`` and ``G``.
    """
    layout = ParameterLayout(mode, truth.d, truth.p, g_entries)
    est = layout.unpack(fitted)
    out = {"x0": float(np.mean((est["x0"] - truth.x0) ** 2)),
           "A": float(np.mean((est["A"] - truth.A) ** 2))}
    if mode == SINGLE:
        true_m = moments(truth)
        for k, m_hat in enumerate(_moments_of(est, est["z0"], truth.p)):
            out[_product_name(k)] = float(np.mean((m_hat - true_m[k]) ** 2))
    else:
        out["B"] = float(np.mean((est["B"] - truth.B) ** 2))
        out["G"] = float(np.mean((est["G"] - truth.G) ** 2))
    return out


@dataclass(frozen=True)
class ReplicationRecord:
    replication: int
    squared_errors: Dict[str, float]
    residual_norm: float
    iterations: int
    converged: bool
    status: str


@dataclass(frozen=True, eq=False)
class ReplicationSummary:
    """Per-block mean and (population) variance of the squared error over replications."""

    mode: str
    blocks: Tuple[str, ...]
    mse_mean: Dict[str, float]
    mse_var: Dict[str, float]
    replications: int
    n_observations: int
    records: Tuple[ReplicationRecord, ...] = ()

    @property
    def n_failed(self):
        return sum(not r.converged for r in self.records)


def _one_replication(args):
    problem, rep = args
    res = fit_nls(problem, initial_guess(problem, rep))
    errs = mse_blocks(res.fitted, problem.truth, problem.mode, problem.g_entries)
    return ReplicationRecord(rep, errs, res.residual_norm, res.iterations, res.converged, res.status)


def summarize(problem: EstimationProblem, records: Sequence[ReplicationRecord]) -> ReplicationSummary:
    blocks = block_names(problem.mode, problem.truth.p)
    records = tuple(sorted(records, key=lambda r: r.replication))
    mean, var = {}, {}
    for b in blocks:
        vals = np.array([r.squared_errors[b] for r in records], dtype=float)
        mean[b] = float(vals.mean()) if vals.size else float("nan")
        var[b] = float(vals.var()) if vals.size else float("nan")
    return ReplicationSummary(problem.mode, blocks, mean, var, len(records),
                              problem.n_observations, records)


def run_replications(problem: EstimationProblem, R: int, workers: Optional[int] = None,
                     ) -> ReplicationSummary:
    """Fit ``R`` independently initialized replications and aggregate block errors.

    Non-converged fits stay in the averages and are flagged on their records.
    ``workers > 1`` runs replications in separate processes; results do not
    depend on the worker count.
    """
    R = int(R)
    if R < 1:
        raise ValueError("R must be >= 1")
    jobs = [(problem, rep) for rep in range(R)]
    if workers and workers > 1 and R > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_one_replication, jobs))
    else:
        records = [_one_replication(j) for j in jobs]
    return summarize(problem, records)
