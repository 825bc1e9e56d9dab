"""Closed-form recovery of ``B``, ``B G^k`` and ``G`` from identified products.

A single trajectory only pins down ``(x0, A, B z0, B G z0, ..., B G^{p-1} z0)``.
With ``p`` trajectories from known, linearly independent initial latent states
(or ``2p`` single-latent interventions) those products determine ``B`` and
every ``B G^k``; stacking them then determines ``G`` whenever
``[B; BG; ...; BG^{p-1}]`` has full column rank.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from .linalg_core import numerical_rank
from .systems import LatentDagSystem, moments

__all__ = [
    "B3ViolationError",
    "B4ViolationError",
    "IdentifiedProducts",
    "products_from_system",
    "recover_B",
    "recover_moment_matrices",
    "select_rows",
    "recover_G",
    "recover_B_entrywise",
    "recover_moment_matrices_entrywise",
    "recovery_diagnostics",
]


class B3ViolationError(ValueError):
    """Initial latent conditions are not linearly independent."""


class B4ViolationError(ValueError):
    """Stacked ``[B; BG; ...; BG^{p-1}]`` is rank deficient."""


@dataclass(frozen=True, eq=False)
class IdentifiedProducts:
    """Quantities recoverable from one trajectory.

    ``moments[k]`` is ``B G^k z0`` for the initial latent state named by
    ``z0_label``.
    """

    x0: np.ndarray
    A: np.ndarray
    moments: List[np.ndarray] = field(default_factory=list)
    z0_label: str = ""

    @property
    def p(self):
        return len(self.moments)


def products_from_system(sys: LatentDagSystem, z0=None, label="") -> IdentifiedProducts:
    """Exact products of ``sys`` started from ``z0`` (default ``sys.z0``)."""
    return IdentifiedProducts(sys.x0.copy(), sys.A.copy(),
                              [m.copy() for m in moments(sys, z0)], label)


def _z_columns(Z, p):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape != (p, p):
        raise ValueError(f"Z must be {p}x{p}, got {Z.shape}")
    if numerical_rank(Z).rank < p:
        raise B3ViolationError("initial latent conditions are linearly dependent")
    return Z


def recover_moment_matrices(products: Sequence[IdentifiedProducts], Z):
    """``[B, BG, ..., BG^{p-1}]`` from products under known initial states.

    ``Z[:, i]`` must be the initial latent state behind ``products[i]``.
    """
    p = len(products)
    if p == 0:
        raise ValueError("no products given")
    if any(pr.p != p for pr in products):
        raise ValueError("each product set must carry p moments")
    Z = _z_columns(Z, p)
    out = []
    for k in range(p):
        S = np.column_stack([pr.moments[k] for pr in products])
        # S = M Z  =>  M = S Z^{-1}
        out.append(np.linalg.solve(Z.T, S.T).T)
    return out


def recover_B(products: Sequence[IdentifiedProducts], Z):
    """``B = S Z^{-1}`` with ``S = [B z0*1, ..., B z0*p]``."""
    return recover_moment_matrices(products, Z)[0]


def _stack(BG_powers):
    W = np.vstack(BG_powers)
    V = np.vstack(list(BG_powers[1:]) + [np.zeros_like(BG_powers[0])])
    return W, V


def select_rows(W, p):
    """Indices of ``p`` well-conditioned independent rows (column-pivoted QR of ``W.T``)."""
    _, _, piv = scipy.linalg.qr(np.asarray(W).T, pivoting=True, mode="economic")
    return np.sort(piv[:p])


def recover_G(BG_powers: Sequence[np.ndarray], rows: Optional[Sequence[int]] = None):
    """Solve ``V_p = W_p G`` on ``p`` independent rows of ``W = [B; ...; BG^{p-1}]``.

    ``V`` is ``W`` shifted by one power (with ``B G^p = 0``). Any valid row
    choice gives the same ``G`` in exact arithmetic; by default rows come from
    a column-pivoted QR for conditioning.
    """
    BG_powers = [np.atleast_2d(np.asarray(M, dtype=float)) for M in BG_powers]
    p = BG_powers[0].shape[1]
    if len(BG_powers) != p:
        raise ValueError(f"expected {p} matrices B G^k, got {len(BG_powers)}")
    W, V = _stack(BG_powers)
    if numerical_rank(W).rank < p:
        raise B4ViolationError("stacked [B; BG; ...; BG^(p-1)] has rank below p")
    rows = select_rows(W, p) if rows is None else np.asarray(rows)
    Wp = W[rows]
    if numerical_rank(Wp).rank < p:
        raise B4ViolationError("selected rows of W are linearly dependent")
    return np.linalg.solve(Wp, V[rows])


def _entrywise(vec_pairs, values):
    cols = []
    for j, ((m1, m2), (a, b)) in enumerate(zip(vec_pairs, values)):
        a, b = float(a), float(b)
        if a == b:
            raise ValueError(f"intervention values for latent {j + 1} must differ")
        cols.append((np.asarray(m1, dtype=float) - np.asarray(m2, dtype=float)) / (a - b))
    return np.column_stack(cols)


def recover_B_entrywise(pairs, values):
    """Column ``j`` of ``B`` from two single-latent interventions on ``z_j``.

    ``pairs[j] = (B z~_j^1, B z~_j^2)`` and ``values[j] = (z*_j^1, z*_j^2)``;
    the two initial states differ only in coordinate ``j``.
    """
    if len(pairs) != len(values):
        raise ValueError("need one value pair per latent")
    return _entrywise(pairs, values)


def recover_moment_matrices_entrywise(product_pairs, values):
    """``[B, BG, ..., BG^{p-1}]`` from ``p`` pairs of :class:`IdentifiedProducts`."""
    p = len(product_pairs)
    return [_entrywise([(a.moments[k], b.moments[k]) for a, b in product_pairs], values)
            for k in range(p)]


def recovery_diagnostics(Z, BG_powers):
    """Condition numbers of ``Z`` and of the selected ``W_p`` block."""
    W, _ = _stack([np.atleast_2d(M) for M in BG_powers])
    p = W.shape[1]
    rows = select_rows(W, p)
    return {
        "cond_Z": float(np.linalg.cond(np.atleast_2d(Z))),
        "cond_Wp": float(np.linalg.cond(W[rows])),
        "rows": [int(r) for r in rows],
    }
