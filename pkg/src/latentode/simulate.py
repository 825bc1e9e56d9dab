"""Closed-form trajectories, sampling grids and clamp interventions.

All trajectories are evaluated through the matrix exponential; no step-based
integrator is involved, so sampled observations are error-free up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Callable, Sequence

import numpy as np

from .linalg_core import mat_exp
from .systems import (
    LatentDagSystem,
    LatentDriverSystem,
    augment,
    block_matrix,
    moments,
)

__all__ = [
    "TrajectoryGrid",
    "InterventionSpec",
    "latent_state",
    "observed_state",
    "hidden_state",
    "sample_trajectory",
    "equally_spaced",
    "intervene_clamp",
]


@dataclass(frozen=True, eq=False)
class TrajectoryGrid:
    """Observable states ``states[j] = x(times[j])``."""

    times: np.ndarray
    states: np.ndarray
    source_label: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if states.shape[0] != times.shape[0]:
            raise ValueError("states must have one row per time point")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def n(self):
        return self.times.shape[0]

    @property
    def d(self):
        return self.states.shape[1]


@dataclass(frozen=True)
class InterventionSpec:
    """Hold observable ``x_{clamped_index}`` (1-based) at a constant ``value``."""

    clamped_index: int
    value: float


def latent_state(sys: LatentDagSystem, t):
    """``z(t) = sum_{k<p} G^k z0 t^k / k!`` (exact: ``G`` is nilpotent)."""
    times = np.atleast_1d(np.asarray(t, dtype=float))
    z = np.zeros((times.shape[0], sys.p))
    Gk_z0 = sys.z0.copy()
    for k in range(sys.p):
        z += np.outer(times ** k / factorial(k), Gk_z0)
        Gk_z0 = sys.G @ Gk_z0
    return z[0] if np.ndim(t) == 0 else z


def hidden_state(sys: LatentDagSystem, t):
    """Full ``[x(t); z(t)] = exp(M t) [x0; z0]`` with ``M = [[A, B], [0, G]]``."""
    E = mat_exp(block_matrix(sys), t)
    return E @ np.concatenate([sys.x0, sys.z0])


def observed_state(sys, t):
    """Observable ``x(t)`` for a scalar ``t`` or an (n, d) array for a vector of times.

    Latent-DAG systems are propagated with the block generator
    ``[[A, B], [0, G]]``; driver systems through their augmented flow.
    """
    if isinstance(sys, LatentDagSystem):
        return hidden_state(sys, t)[..., :sys.d]
    if isinstance(sys, LatentDriverSystem):
        aug = augment(sys)
        return (mat_exp(aug.F, t) @ aug.y0)[..., :sys.d]
    raise TypeError(f"unsupported system type {type(sys).__name__}")


def equally_spaced(n, t_start=0.0, t_end=1.0, include_start=True):
    """``n`` equally spaced points on ``[t_start, t_end]``.

    With ``include_start=False`` the grid is ``t_start + k h`` for
    ``k = 1..n`` with ``h = (t_end - t_start) / n``.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    if not include_start:
        return list(t_start + (t_end - t_start) * np.arange(1, n + 1) / n)
    if n == 1:
        return [float(t_start)]
    return list(np.linspace(t_start, t_end, n))


def sample_trajectory(sys, times: Sequence[float], label: str = "") -> TrajectoryGrid:
    """Error-free observations of ``x`` at the given times."""
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0:
        raise ValueError("at least one time point is required")
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    return TrajectoryGrid(times, np.atleast_2d(observed_state(sys, times)), label)


def intervene_clamp(sys: LatentDagSystem, spec: InterventionSpec) -> Callable:
    """Post-intervention trajectory with one observable held constant.

    The remaining observables follow
    ``x_r' = A_rr x_r + A_rc * value + B_r z(t)``; the constant forcing is
    folded into the ``1`` column of the polynomial augmentation, so the whole
    trajectory is one matrix exponential. Returns ``f(t)`` giving the full
    d-vector (or an (n, d) array for a vector of times).
    """
    d, p = sys.d, sys.p
    c = int(spec.clamped_index) - 1
    if not 0 <= c < d:
        raise ValueError(f"clamped_index must be in 1..{d}, got {spec.clamped_index}")
    value = float(spec.value)
    rest = [i for i in range(d) if i != c]
    q = len(rest)
    F = np.zeros((q + p, q + p))
    F[:q, :q] = sys.A[np.ix_(rest, rest)]
    for k, mk in enumerate(moments(sys)):
        F[:q, q + k] = mk[rest] / factorial(k)
    F[:q, q] += sys.A[rest, c] * value
    for k in range(1, p):
        F[q + k, q + k - 1] = k
    y0 = np.zeros(q + p)
    y0[:q] = sys.x0[rest]
    y0[q] = 1.0

    def trajectory(t):
        y = mat_exp(F, t) @ y0
        out = np.empty(np.shape(y)[:-1] + (d,))
        out[..., c] = value
        out[..., rest] = y[..., :q]
        return out

    return trajectory
