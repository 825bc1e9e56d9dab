"""Identifiability conditions as numerical rank tests.

Every check returns an :class:`IdentifiabilityReport` carrying the rank it
found, the rank it needed, and the singular values on both sides of the
threshold so that near-degenerate verdicts can be spotted. Composite
conditions evaluate every sub-check even after one fails.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .linalg_core import RankResult, krylov_matrix, numerical_rank, time_power_row
from .systems import (
    AugmentedSystem,
    LatentDagSystem,
    LatentDriverSystem,
    beta_vector,
    gamma_vector_for,
)

__all__ = [
    "CONDITION_IDS",
    "IdentifiabilityReport",
    "check_A0",
    "check_A1",
    "check_B1",
    "check_aug_A0",
    "check_C1",
    "check_B3",
    "check_B4",
    "check_B2_B3_B4",
    "check_C2",
    "check_B5",
    "check_C3",
    "observation_matrix",
]

CONDITION_IDS = ("A0", "A1", "B1", "C1", "B2", "B3", "B4", "C2",
                 "D1", "E1", "B5", "C3", "AUG_A0")


@dataclass
class IdentifiabilityReport:
    condition_id: str
    holds: bool
    tested_matrix_shape: Tuple[int, int]
    computed_rank: int
    required_rank: int
    margin: float
    tolerance_used: float
    largest_discarded_sv: float = 0.0
    label: str = ""
    sub_reports: List["IdentifiabilityReport"] = field(default_factory=list)

    @property
    def is_composite(self):
        return bool(self.sub_reports)

    def is_borderline(self, factor=10.0):
        """True when the verdict sits within ``factor`` of the rank threshold.

        A holding atomic check is borderline if its smallest retained singular
        value is below ``factor * tol``; a failing one if its largest discarded
        singular value is above ``tol / factor``.
        """
        if self.sub_reports:
            return any(r.is_borderline(factor) for r in self.sub_reports)
        if self.holds:
            return self.margin <= factor * self.tolerance_used
        return self.largest_discarded_sv >= self.tolerance_used / factor

    def to_dict(self):
        return {
            "condition_id": self.condition_id,
            "label": self.label or self.condition_id,
            "holds": bool(self.holds),
            "rank": int(self.computed_rank),
            "required_rank": int(self.required_rank),
            "margin": float(self.margin),
            "largest_discarded_sv": float(self.largest_discarded_sv),
            "tolerance": float(self.tolerance_used),
            "shape": list(self.tested_matrix_shape),
            "sub_reports": [r.to_dict() for r in self.sub_reports],
        }

    def flatten(self):
        """This report followed by all nested sub-reports, depth first."""
        out = [self]
        for r in self.sub_reports:
            out.extend(r.flatten())
        return out


def _atomic(condition_id, matrix, required, tol, label=""):
    rr: RankResult = numerical_rank(matrix, tol)
    return IdentifiabilityReport(
        condition_id=condition_id,
        holds=rr.rank == required,
        tested_matrix_shape=tuple(np.atleast_2d(matrix).shape),
        computed_rank=rr.rank,
        required_rank=required,
        margin=rr.smallest_retained_sv,
        tolerance_used=rr.tolerance_used,
        largest_discarded_sv=rr.largest_discarded_sv,
        label=label or condition_id,
    )


def _composite(condition_id, subs, label=""):
    return IdentifiabilityReport(
        condition_id=condition_id,
        holds=all(r.holds for r in subs),
        tested_matrix_shape=(0, 0),
        computed_rank=sum(r.holds for r in subs),
        required_rank=len(subs),
        margin=min((r.margin for r in subs), default=0.0),
        tolerance_used=max((r.tolerance_used for r in subs), default=0.0),
        largest_discarded_sv=max((r.largest_discarded_sv for r in subs), default=0.0),
        label=label or condition_id,
        sub_reports=list(subs),
    )


def check_A0(x0, A, tol=None, condition_id="A0", label=""):
    """``{x0, A x0, ..., A^{d-1} x0}`` linearly independent."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    return _atomic(condition_id, krylov_matrix(A, x0, d), d, tol, label)


def check_A1(sys: LatentDriverSystem, tol=None):
    """Krylov rank of ``beta`` under ``A`` (polynomial driver)."""
    return check_A0(beta_vector(sys), sys.A, tol, condition_id="A1")


def check_B1(sys: LatentDagSystem, tol=None):
    """Krylov rank of ``gamma`` under ``A`` (latent DAG, one trajectory)."""
    return check_A0(gamma_vector_for(sys, sys.z0), sys.A, tol, condition_id="B1")


def check_aug_A0(aug: AugmentedSystem, tol=None):
    """Krylov rank of ``y0`` under the augmented generator ``F``."""
    cid = {"exponential": "D1", "trigonometric": "E1"}.get(aug.kind, "AUG_A0")
    return check_A0(aug.y0, aug.F, tol, condition_id=cid)


def observation_matrix(times, xs, p):
    """Rows ``[x_j, 1, t_j, ..., t_j^{p-1}]``."""
    times = np.asarray(times, dtype=float).ravel()
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[0] != times.shape[0]:
        raise ValueError(f"got {times.shape[0]} times but {xs.shape[0]} observations")
    if times.shape[0] < 1:
        raise ValueError("at least one observation is required")
    powers = np.vstack([time_power_row(t, p) for t in times])
    return np.hstack([xs, powers])


def check_C1(times, xs, p, tol=None, condition_id="C1", label=""):
    """Discrete observations span all ``d + p`` augmented directions."""
    Y = observation_matrix(times, xs, p)
    return _atomic(condition_id, Y, Y.shape[1], tol, label)


def _z_matrix(z0_stars, p):
    Z = np.atleast_2d(np.asarray(z0_stars, dtype=float))
    if Z.shape != (p, p):
        raise ValueError(f"expected {p} initial latent conditions of length {p}, got {Z.shape}")
    return Z.T  # columns are the initial conditions


def check_B3(z0_stars, tol=None):
    """Controlled initial latent states are linearly independent."""
    Z = np.atleast_2d(np.asarray(z0_stars, dtype=float))
    return _atomic("B3", Z.T, Z.shape[1], tol)


def check_B4(B, G, tol=None):
    """``[B; BG; ...; BG^{p-1}]`` has rank ``p``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    p = G.shape[0]
    blocks, Bk = [], B
    for _ in range(p):
        blocks.append(Bk)
        Bk = Bk @ G
    return _atomic("B4", np.vstack(blocks), p, tol)


def check_B2_B3_B4(sys: LatentDagSystem, z0_stars, tol=None):
    """Composite condition for ``p`` controlled whole trajectories.

    ``sys.z0`` is ignored; ``z0_stars`` holds one initial latent state per row.
    """
    p = sys.p
    Z = _z_matrix(z0_stars, p)
    b2 = [check_A0(gamma_vector_for(sys, Z[:, i]), sys.A, tol,
                   condition_id="B2", label=f"B2[{i + 1}]") for i in range(p)]
    subs = [_composite("B2", b2), check_B3(Z.T, tol), check_B4(sys.B, sys.G, tol)]
    return _composite("B2", subs, "B2+B3+B4")


def check_C2(times, xs_per_traj: Sequence, p, z0_stars, B, G, tol=None):
    """Composite condition for discrete samples of ``p`` controlled trajectories."""
    if len(xs_per_traj) != p:
        raise ValueError(f"expected {p} trajectories, got {len(xs_per_traj)}")
    n = len(np.asarray(times).ravel())
    lengths = {len(np.atleast_2d(xs)) for xs in xs_per_traj}
    if lengths != {n}:
        raise ValueError("every trajectory needs one observation per time point")
    per_traj = [check_C1(times, xs, p, tol, condition_id="C2", label=f"C2[{i + 1}]")
                for i, xs in enumerate(xs_per_traj)]
    subs = [_composite("C2", per_traj), check_B3(z0_stars, tol), check_B4(B, G, tol)]
    return _composite("C2", subs, "C2+B3+B4")


def _single_node(z0, j, value):
    z = np.array(z0, dtype=float)
    z[j] = value
    return z


def check_B5(sys: LatentDagSystem, interventions, tol=None):
    """Every single-latent intervention of the initial state satisfies the
    one-trajectory Krylov condition.

    ``interventions[j] = (value1, value2)`` are the two initial values used for
    latent ``j``; they must differ.
    """
    if len(interventions) != sys.p:
        raise ValueError(f"expected {sys.p} intervention pairs, got {len(interventions)}")
    subs = []
    for j, pair in enumerate(interventions):
        a, b = (float(v) for v in pair)
        if a == b:
            raise ValueError(f"intervention values for latent {j + 1} must differ")
        for i, val in enumerate((a, b)):
            g = gamma_vector_for(sys, _single_node(sys.z0, j, val))
            subs.append(check_A0(g, sys.A, tol, condition_id="B5",
                                 label=f"B5[{j + 1},{i + 1}]"))
    return _composite("B5", subs)


def check_C3(observation_sets: Sequence, d, p, B, G, tol=None):
    """Discrete-sample counterpart of :func:`check_B5` plus the ``B4`` rank test.

    ``observation_sets`` is ordered latent-major: entry ``2 j + i`` holds
    ``(times, xs)`` for latent ``j`` under its ``i``-th intervention value.
    """
    if len(observation_sets) != 2 * p:
        raise ValueError(f"expected {2 * p} observation sets, got {len(observation_sets)}")
    subs = []
    for k, (times, xs) in enumerate(observation_sets):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[1] != d:
            raise ValueError(f"observation set {k + 1} has dimension {xs.shape[1]}, expected {d}")
        subs.append(check_C1(times, xs, p, tol, condition_id="C3",
                             label=f"C3[{k // 2 + 1},{k % 2 + 1}]"))
    return _composite("C3", [_composite("C3", subs), check_B4(B, G, tol)], "C3+B4")
