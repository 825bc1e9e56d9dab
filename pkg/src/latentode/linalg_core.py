"""Small dense matrix kernels shared by the rest of the package.

Everything here works on plain ``numpy`` arrays. General matrix exponentials
go through :func:`scipy.linalg.expm` (scaling and squaring with a Pade
approximant), evaluated on a stack so a whole sampling grid costs one call.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

__all__ = [
    "RankResult",
    "Nilpotency",
    "mat_exp",
    "mat_exp_batch",
    "uniform_steps",
    "krylov_matrix",
    "numerical_rank",
    "nilpotency",
    "time_power_row",
    "is_strictly_triangular",
]

_EPS = np.finfo(float).eps


def _as_square(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {M.shape}")
    return M


def is_strictly_triangular(M):
    """True if ``M`` is strictly upper or strictly lower triangular (hence nilpotent)."""
    M = np.asarray(M)
    return bool(not np.any(np.tril(M)) or not np.any(np.triu(M)))


def _nilpotent_series(M, times):
    m = M.shape[0]
    powers = [np.eye(m)]
    for k in range(1, m):
        nxt = powers[-1] @ M
        if not np.any(nxt):
            break
        powers.append(nxt)
    out = np.zeros((len(times), m, m))
    for k, Pk in enumerate(powers):
        out += (times ** k / factorial(k))[:, None, None] * Pk
    return out


def mat_exp(M, t=1.0):
    """Matrix exponential ``exp(M t)``.

    Parameters
    ----------
    M : array_like, shape (m, m)
        Square real matrix.
    t : float or array_like of shape (k,)
        Time(s). With a vector of times a stack of shape (k, m, m) is returned.

    Strictly triangular ``M`` is evaluated with the terminating power series,
    which is exact up to rounding; everything else goes through
    scaling-and-squaring with a Pade approximant.
    """
    M = _as_square(M)
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if times.ndim != 1 or not np.all(np.isfinite(times)):
        raise ValueError("t must be a finite scalar or 1-D array")
    if not np.all(np.isfinite(M)):
        raise ValueError("M must be finite")
    if M.shape[0] == 0:
        out = np.zeros((len(times), 0, 0))
    elif is_strictly_triangular(M):
        out = _nilpotent_series(M, times)
    else:
        out = scipy.linalg.expm(times[:, None, None] * M[None, :, :])
    return out[0] if scalar else out


def uniform_steps(times, rtol=1e-13):
    """Step ``h`` and integers ``k`` with ``times == k * h``, or ``None``.

    Only sorted grids of at least three points whose spacing is constant to
    ``rtol`` (relative to the largest time) qualify.
    """
    times = np.asarray(times, dtype=float).ravel()
    n = times.shape[0]
    if n < 3 or times[0] < 0 or not times[-1] > times[0]:
        return None
    h = (times[-1] - times[0]) / (n - 1)
    k0 = round(times[0] / h)
    ks = k0 + np.arange(n)
    if np.max(np.abs(times - ks * h)) > rtol * times[-1]:
        return None
    return h, ks


def _powers(P, ks):
    """``P_i^k`` for every matrix in the stack and every ``k`` (binary powering)."""
    k, m = P.shape[0], P.shape[1]
    out = np.broadcast_to(np.eye(m), (k, len(ks), m, m)).copy()
    S = P
    for bit in range(int(ks.max()).bit_length()):
        if bit:
            S = S @ S
        sel = (ks >> bit) & 1 == 1
        out[:, sel] = out[:, sel] @ S[:, None]
    return out


def mat_exp_batch(Ms, times):
    """``exp(M_i t_j)`` for a stack of matrices and a vector of times.

    Returns an array of shape (len(Ms), len(times), m, m). Suits callers that
    evaluate many unrelated generators at once (finite-difference Jacobians).
    On an equally spaced grid ``t_j = k_j h`` only ``exp(M_i h)`` is computed
    and the rest follow from the semigroup property by binary powering, the
    same squaring step the Pade algorithm itself uses. Non-finite inputs raise.
    """
    Ms = np.asarray(Ms, dtype=float)
    if Ms.ndim != 3 or Ms.shape[1] != Ms.shape[2]:
        raise ValueError(f"Ms must have shape (k, m, m), got {Ms.shape}")
    times = np.asarray(times, dtype=float).ravel()
    if not (np.all(np.isfinite(Ms)) and np.all(np.isfinite(times))):
        raise ValueError("inputs must be finite")
    k, m = Ms.shape[0], Ms.shape[1]
    if k == 0 or m == 0 or times.size == 0:
        return np.zeros((k, len(times), m, m))
    grid = uniform_steps(times)
    if grid is not None:
        h, ks = grid
        return _powers(scipy.linalg.expm(h * Ms), ks)
    X = (times[None, :, None, None] * Ms[:, None, :, :]).reshape(-1, m, m)
    return scipy.linalg.expm(X).reshape(k, len(times), m, m)


def krylov_matrix(A, v, k):
    """Columns ``v, A v, ..., A^{k-1} v``."""
    A = _as_square(A, "A")
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != A.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, v has {v.shape[0]} entries")
    if int(k) < 1:
        raise ValueError("k must be a positive integer")
    K = np.empty((A.shape[0], int(k)))
    K[:, 0] = v
    for j in range(1, int(k)):
        K[:, j] = A @ K[:, j - 1]
    return K


@dataclass(frozen=True)
class RankResult:
    """Numerical rank together with both sides of the singular-value gap."""

    rank: int
    smallest_retained_sv: float
    largest_discarded_sv: float
    tolerance_used: float
    singular_values: tuple = ()

    @property
    def margin(self):
        return self.smallest_retained_sv


def numerical_rank(M, tol: Optional[float] = None) -> RankResult:
    """Rank of ``M`` as the number of singular values above a threshold.

    The default threshold is ``max(rows, cols) * sigma_max * eps``, the same
    convention as :func:`numpy.linalg.matrix_rank`. Passing ``tol`` replaces it
    with an absolute threshold.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix must be finite")
    if M.size == 0:
        t = float(tol) if tol is not None else _EPS
        return RankResult(0, 0.0, 0.0, t, ())
    s = np.linalg.svd(M, compute_uv=False)
    if tol is None:
        tol = max(M.shape) * s[0] * _EPS
        # Zero matrix: any positive threshold reports rank 0.
        tol = tol if tol > 0 else _EPS
    tol = float(tol)
    if tol <= 0:
        raise ValueError("tol must be positive")
    keep = s > tol
    rank = int(keep.sum())
    smallest = float(s[rank - 1]) if rank > 0 else 0.0
    largest_drop = float(s[rank]) if rank < len(s) else 0.0
    return RankResult(rank, smallest, largest_drop, tol, tuple(float(x) for x in s))


class Nilpotency(NamedTuple):
    is_nilpotent: bool
    index: Optional[int]


def nilpotency(G, atol: float = 1e-12) -> Nilpotency:
    """Decide whether ``G`` is nilpotent and find its index.

    ``G^k`` counts as zero when every entry is below ``atol`` times
    ``max(1, max|G|)^k``.
    """
    G = _as_square(G, "G")
    p = G.shape[0]
    scale = max(1.0, float(np.abs(G).max()) if G.size else 1.0)
    P = np.eye(p)
    for k in range(1, p + 1):
        P = P @ G
        if np.all(np.abs(P) <= atol * scale ** k):
            return Nilpotency(True, k)
    return Nilpotency(False, None)


def time_power_row(t, p):
    """``[1, t, t^2, ..., t^{p-1}]``."""
    if int(p) < 1:
        raise ValueError("p must be >= 1")
    return float(t) ** np.arange(int(p), dtype=float)
