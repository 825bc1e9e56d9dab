"""Latent-confounded linear ODE systems and their augmented homogeneous forms.

Two families are supported:

* :class:`LatentDagSystem` -- ``x' = A x + B z``, ``z' = G z`` where the latent
  coupling ``G`` is the adjacency of a DAG (nilpotent).
* :class:`LatentDriverSystem` -- ``x' = A x + B z``, ``z' = f(t)`` with ``f`` a
  polynomial, exponential or trigonometric driver.

In both cases the observable trajectory ``x(t)`` is the leading block of a
homogeneous linear flow ``y' = F y`` whose extra coordinates are known
functions of time (``1, t, t^2, ...``, ``e^t``, ``sin t``, ...). The
``augment_*`` functions build that ``(F, y0)`` pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Tuple, Union

import numpy as np

__all__ = [
    "NotADagError",
    "Polynomial",
    "Exponential",
    "Trigonometric",
    "LatentDagSystem",
    "LatentDriverSystem",
    "AugmentedSystem",
    "validate_latent_dag",
    "augment",
    "augment_dag",
    "augment_poly",
    "augment_exp",
    "augment_trig",
    "beta_vector",
    "gamma_vector",
    "gamma_vector_for",
    "moments",
    "block_matrix",
]


class NotADagError(ValueError):
    """Latent coupling matrix has a self-loop or a directed cycle."""


def _vec(v, name, dim=None):
    v = np.asarray(v, dtype=float).ravel()
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"{name} must have {dim} entries, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


def _mat(M, name, shape):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} must be finite")
    return M


def validate_latent_dag(G) -> Tuple[int, ...]:
    """Return a topological ordering of the latent DAG encoded by ``G``.

    ``G[i, j] != 0`` is read as an edge ``z_j -> z_i``. The returned
    permutation ``perm`` makes ``G[np.ix_(perm, perm)]`` strictly upper
    triangular. Already strictly upper triangular input yields the identity.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"G must be square, got shape {G.shape}")
    p = G.shape[0]
    if np.any(np.diag(G) != 0):
        raise NotADagError("G has a nonzero diagonal entry (latent self-loop)")
    if not np.any(np.tril(G)):
        return tuple(range(p))
    return _upper_order(G)


def _upper_order(G):
    p = G.shape[0]
    remaining = set(range(p))
    back = []
    # Fill from the last position: a node fits there if its row is zero
    # over the other remaining nodes (it depends on nothing still unplaced).
    while remaining:
        cands = [i for i in sorted(remaining)
                 if not any(G[i, j] != 0 for j in remaining if j != i)]
        if not cands:
            raise NotADagError("G contains a directed cycle among latent variables")
        back.append(cands[0])
        remaining.remove(cands[0])
    return tuple(reversed(back))


# --- drivers -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Polynomial:
    """``f(t) = sum_k v_k t^k``; ``coefficients[k]`` is ``v_k``."""

    coefficients: Tuple[np.ndarray, ...]

    @property
    def degree(self):
        return len(self.coefficients) - 1

    kind = "polynomial"


@dataclass(frozen=True, eq=False)
class Exponential:
    """``f(t) = v e^t``."""

    v: np.ndarray
    kind = "exponential"


@dataclass(frozen=True, eq=False)
class Trigonometric:
    """``f(t) = v1 sin t + v2 cos t``."""

    v1: np.ndarray
    v2: np.ndarray
    kind = "trigonometric"


Driver = Union[Polynomial, Exponential, Trigonometric]


# --- systems -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LatentDagSystem:
    """``[x; z]' = [[A, B], [0, G]] [x; z]`` with ``G`` a latent DAG.

    ``G`` is kept in the caller's variable order; the topological permutation
    found at construction time is stored in ``perm``.
    """

    x0: np.ndarray
    z0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    perm: Tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        x0 = _vec(self.x0, "x0")
        d = x0.shape[0]
        z0 = _vec(self.z0, "z0")
        p = z0.shape[0]
        if d == 0:
            raise ValueError("at least one observable variable is required")
        if p == 0:
            raise ValueError("systems without latent variables are not supported")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "z0", z0)
        object.__setattr__(self, "A", _mat(self.A, "A", (d, d)))
        object.__setattr__(self, "B", _mat(self.B, "B", (d, p)))
        G = _mat(self.G, "G", (p, p))
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "perm", validate_latent_dag(G))

    @property
    def d(self):
        return self.x0.shape[0]

    @property
    def p(self):
        return self.z0.shape[0]

    def replace(self, **changes):
        kw = dict(x0=self.x0, z0=self.z0, A=self.A, B=self.B, G=self.G)
        kw.update(changes)
        return LatentDagSystem(**kw)


@dataclass(frozen=True, eq=False)
class LatentDriverSystem:
    """``x' = A x + B z``, ``z' = f(t)`` with a polynomial/exp/trig driver."""

    x0: np.ndarray
    z0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    driver: Driver

    def __post_init__(self):
        x0 = _vec(self.x0, "x0")
        z0 = _vec(self.z0, "z0")
        d, p = x0.shape[0], z0.shape[0]
        if d == 0:
            raise ValueError("at least one observable variable is required")
        if p == 0:
            raise ValueError("systems without latent variables are not supported")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "z0", z0)
        object.__setattr__(self, "A", _mat(self.A, "A", (d, d)))
        object.__setattr__(self, "B", _mat(self.B, "B", (d, p)))
        drv = self.driver
        if isinstance(drv, Polynomial):
            if len(drv.coefficients) < 1:
                raise ValueError("polynomial driver needs at least one coefficient")
            drv = Polynomial(tuple(_vec(v, f"v{k}", p) for k, v in enumerate(drv.coefficients)))
        elif isinstance(drv, Exponential):
            drv = Exponential(_vec(drv.v, "v", p))
        elif isinstance(drv, Trigonometric):
            drv = Trigonometric(_vec(drv.v1, "v1", p), _vec(drv.v2, "v2", p))
        else:
            raise TypeError(f"unsupported driver {type(drv).__name__}")
        object.__setattr__(self, "driver", drv)

    @property
    def d(self):
        return self.x0.shape[0]

    @property
    def p(self):
        return self.z0.shape[0]


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    """Homogeneous observable flow ``y' = F y``, ``y(0) = y0``.

    The first ``observed_dim`` coordinates of ``exp(F t) y0`` are ``x(t)``;
    the remaining ones are the functions of time named in ``basis_labels``.
    """

    F: np.ndarray
    y0: np.ndarray
    observed_dim: int
    basis_labels: Tuple[str, ...]

    def __post_init__(self):
        m = self.observed_dim + len(self.basis_labels)
        object.__setattr__(self, "F", _mat(self.F, "F", (m, m)))
        object.__setattr__(self, "y0", _vec(self.y0, "y0", m))

    @property
    def m(self):
        return self.F.shape[0]

    @property
    def kind(self):
        labels = set(self.basis_labels)
        if "e^t" in labels:
            return "exponential"
        if "sin t" in labels:
            return "trigonometric"
        return "polynomial"


def block_matrix(sys: LatentDagSystem):
    """The full ``(d+p) x (d+p)`` generator ``[[A, B], [0, G]]``."""
    d, p = sys.d, sys.p
    M = np.zeros((d + p, d + p))
    M[:d, :d] = sys.A
    M[:d, d:] = sys.B
    M[d:, d:] = sys.G
    return M


def moments(sys: LatentDagSystem, z0=None):
    """``[B z0, B G z0, ..., B G^{p-1} z0]`` as a list of vectors."""
    z = sys.z0 if z0 is None else _vec(z0, "z0", sys.p)
    out = []
    for _ in range(sys.p):
        out.append(sys.B @ z)
        z = sys.G @ z
    return out


def _power_labels(count):
    labels = []
    for k in range(count):
        labels.append("1" if k == 0 else "t" if k == 1 else f"t^{k}")
    return tuple(labels)


def _polynomial_flow(A, x0, columns):
    """Augmented (F, y0) for ``x' = A x + sum_k columns[k] t^k``."""
    d = A.shape[0]
    q = len(columns)
    F = np.zeros((d + q, d + q))
    F[:d, :d] = A
    for k, c in enumerate(columns):
        F[:d, d + k] = c
    for k in range(1, q):
        F[d + k, d + k - 1] = k
    y0 = np.zeros(d + q)
    y0[:d] = x0
    y0[d] = 1.0
    return F, y0


def augment_dag(sys: LatentDagSystem) -> AugmentedSystem:
    """Augmented flow on ``[x; 1; t; ...; t^{p-1}]`` for a latent-DAG system."""
    cols = [mk / factorial(k) for k, mk in enumerate(moments(sys))]
    F, y0 = _polynomial_flow(sys.A, sys.x0, cols)
    return AugmentedSystem(F, y0, sys.d, _power_labels(sys.p))


def _require(sys, kind):
    if not isinstance(sys, LatentDriverSystem) or sys.driver.kind != kind:
        got = getattr(getattr(sys, "driver", None), "kind", type(sys).__name__)
        raise ValueError(f"expected a system with a {kind} driver, got {got}")


def augment_poly(sys: LatentDriverSystem) -> AugmentedSystem:
    """Augmented flow on ``[x; 1; t; ...; t^{r+1}]`` for a polynomial driver.

    ``z(t) = z0 + sum_k v_k t^{k+1} / (k+1)``, so the forcing column for
    ``t^{k+1}`` is ``B v_k / (k+1)``.
    """
    _require(sys, "polynomial")
    B = sys.B
    cols = [B @ sys.z0] + [B @ v / (k + 1) for k, v in enumerate(sys.driver.coefficients)]
    F, y0 = _polynomial_flow(sys.A, sys.x0, cols)
    return AugmentedSystem(F, y0, sys.d, _power_labels(len(cols)))


def augment_exp(sys: LatentDriverSystem) -> AugmentedSystem:
    """Augmented flow on ``[x; e^t; 1]``; ``z(t) = v e^t + z0 - v``."""
    _require(sys, "exponential")
    d = sys.d
    Bv = sys.B @ sys.driver.v
    F = np.zeros((d + 2, d + 2))
    F[:d, :d] = sys.A
    F[:d, d] = Bv
    F[:d, d + 1] = sys.B @ sys.z0 - Bv
    F[d, d] = 1.0
    y0 = np.concatenate([sys.x0, [1.0, 1.0]])
    return AugmentedSystem(F, y0, d, ("e^t", "1"))


def augment_trig(sys: LatentDriverSystem) -> AugmentedSystem:
    """Augmented flow on ``[x; sin t; cos t; 1]``.

    ``z(t) = v2 sin t - v1 cos t + z0 + v1``.
    """
    _require(sys, "trigonometric")
    d = sys.d
    Bv1 = sys.B @ sys.driver.v1
    Bv2 = sys.B @ sys.driver.v2
    F = np.zeros((d + 3, d + 3))
    F[:d, :d] = sys.A
    F[:d, d] = Bv2
    F[:d, d + 1] = -Bv1
    F[:d, d + 2] = sys.B @ sys.z0 + Bv1
    F[d, d + 1] = 1.0
    F[d + 1, d] = -1.0
    y0 = np.concatenate([sys.x0, [0.0, 1.0, 1.0]])
    return AugmentedSystem(F, y0, d, ("sin t", "cos t", "1"))


def augment(sys) -> AugmentedSystem:
    """Dispatch to the augmentation matching the system family."""
    if isinstance(sys, LatentDagSystem):
        return augment_dag(sys)
    if isinstance(sys, LatentDriverSystem):
        return {"polynomial": augment_poly,
                "exponential": augment_exp,
                "trigonometric": augment_trig}[sys.driver.kind](sys)
    raise TypeError(f"cannot augment {type(sys).__name__}")


def beta_vector(sys: LatentDriverSystem):
    """``A^{r+1}(A x0 + B z0) + sum_j j! A^{r-j} B v_j`` for a polynomial driver."""
    _require(sys, "polynomial")
    A, B = sys.A, sys.B
    coeffs = sys.driver.coefficients
    r = len(coeffs) - 1
    mp = np.linalg.matrix_power
    beta = mp(A, r + 1) @ (A @ sys.x0 + B @ sys.z0)
    for j, v in enumerate(coeffs):
        beta = beta + factorial(j) * (mp(A, r - j) @ (B @ v))
    return beta


def gamma_vector_for(sys: LatentDagSystem, z0_star):
    """``A^p x0 + sum_j A^{p-1-j} B G^j z0_star``."""
    p = sys.p
    mp = np.linalg.matrix_power
    gamma = mp(sys.A, p) @ sys.x0
    for j, mk in enumerate(moments(sys, z0_star)):
        gamma = gamma + mp(sys.A, p - 1 - j) @ mk
    return gamma


def gamma_vector(sys: LatentDagSystem):
    """Vector whose ``A``-Krylov rank decides single-trajectory identifiability."""
    return gamma_vector_for(sys, sys.z0)
