from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from latentode.identifiability import check_B4
from latentode.recovery import (
    B3ViolationError,
    B4ViolationError,
    products_from_system,
    recover_B,
    recover_B_entrywise,
    recover_G,
    recover_moment_matrices,
    recover_moment_matrices_entrywise,
    recovery_diagnostics,
    select_rows,
)
from latentode.systems import LatentDagSystem

from conftest import random_dag_system


def basis_products(sys, Z):
    return [products_from_system(sys, Z[:, i], f"z{i + 1}") for i in range(sys.p)]


def true_powers(sys):
    out, M = [], sys.B
    for _ in range(sys.p):
        out.append(M)
        M = M @ sys.G
    return out


def single_node_products(sys, values):
    pairs = []
    for j, (a, b) in enumerate(values):
        za, zb = sys.z0.copy(), sys.z0.copy()
        za[j], zb[j] = a, b
        pairs.append((products_from_system(sys, za), products_from_system(sys, zb)))
    return pairs


# --- recover_B / moment matrices ---------------------------------------------

def test_recover_B_identity_Z(sec5):
    prods = basis_products(sec5, np.eye(3))
    S = np.column_stack([pr.moments[0] for pr in prods])
    assert_allclose(recover_B(prods, np.eye(3)), S)


def test_recover_B_sec5_general_Z(sec5):
    Z = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, -1.0], [1.0, 0.0, 3.0]])
    assert_allclose(recover_B(basis_products(sec5, Z), Z), sec5.B, atol=1e-9)


def test_recover_B_equal_columns_rejected(sec5):
    Z = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    with pytest.raises(B3ViolationError):
        recover_B(basis_products(sec5, Z), Z)


def test_moment_matrices_sec5(sec5):
    mats = recover_moment_matrices(basis_products(sec5, np.eye(3)), np.eye(3))
    assert_allclose(mats[0], recover_B(basis_products(sec5, np.eye(3)), np.eye(3)))
    for got, want in zip(mats, true_powers(sec5)):
        assert_allclose(got, want, atol=1e-9)
    assert np.max(np.abs(mats[-1] @ sec5.G)) < 1e-12


# --- recover_G ---------------------------------------------------------------

def test_recover_G_top_block():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    G = np.triu(rng.normal(size=(3, 3)), 1)
    powers = [B, B @ G, B @ G @ G]
    assert_allclose(recover_G(powers, rows=[0, 1, 2]), np.linalg.solve(B, B @ G), atol=1e-12)


def test_recover_G_sec5(sec5):
    mats = recover_moment_matrices(basis_products(sec5, np.eye(3)), np.eye(3))
    assert_allclose(recover_G(mats), sec5.G, atol=1e-9)


def test_recover_G_zero_B():
    with pytest.raises(B4ViolationError):
        recover_G([np.zeros((2, 2))] * 2)


def test_recover_G_dependent_rows(sec5):
    with pytest.raises(B4ViolationError):
        recover_G(true_powers(sec5), rows=[0, 0, 1])


def test_recover_G_wrong_count():
    with pytest.raises(ValueError):
        recover_G([np.eye(2)])


def test_selection_independence(sec5):
    W = np.vstack(true_powers(sec5))
    ref = recover_G(true_powers(sec5))
    used = 0
    for rows in combinations(range(W.shape[0]), 3):
        if np.linalg.cond(W[list(rows)]) > 1e6:
            continue
        assert_allclose(recover_G(true_powers(sec5), rows=rows), ref, atol=1e-8)
        used += 1
    assert used > 10


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_round_trip(d, p, seed):
    rng = np.random.default_rng(seed)
    sys = random_dag_system(rng, d, p)
    if not check_B4(sys.B, sys.G).holds:
        return
    Z = rng.uniform(-2, 2, (p, p)) + 2 * np.eye(p)
    mats = recover_moment_matrices(basis_products(sys, Z), Z)
    diag = recovery_diagnostics(Z, mats)
    if diag["cond_Z"] > 1e6 or diag["cond_Wp"] > 1e6:
        return
    assert np.max(np.abs(mats[0] - sys.B)) <= 1e-8
    assert np.max(np.abs(recover_G(mats) - sys.G)) <= 1e-8


def test_diagnostics_rows(sec5):
    diag = recovery_diagnostics(np.eye(3), true_powers(sec5))
    assert diag["cond_Z"] == pytest.approx(1.0)
    assert len(diag["rows"]) == 3
    assert diag["rows"] == sorted(diag["rows"])
    assert list(select_rows(np.vstack(true_powers(sec5)), 3)) == diag["rows"]


# --- entrywise ---------------------------------------------------------------

def test_entrywise_unit_denominator(sec5):
    pairs = single_node_products(sec5, [(1.0, 0.0)] * 3)
    cols = [a.moments[0] - b.moments[0] for a, b in pairs]
    got = recover_B_entrywise([(a.moments[0], b.moments[0]) for a, b in pairs], [(1.0, 0.0)] * 3)
    assert_allclose(got, np.column_stack(cols))


def test_entrywise_sec5(sec5):
    values = [(0.0, 1.0), (2.0, -1.0), (0.5, 3.0)]
    pairs = single_node_products(sec5, values)
    B = recover_B_entrywise([(a.moments[0], b.moments[0]) for a, b in pairs], values)
    assert_allclose(B, sec5.B, atol=1e-9)
    mats = recover_moment_matrices_entrywise(pairs, values)
    for got, want in zip(mats, true_powers(sec5)):
        assert_allclose(got, want, atol=1e-9)


def test_entrywise_scalar():
    sys = LatentDagSystem([1.0], [0.3], [[0.5]], [[2.5]], [[0.0]])
    (a, b), = single_node_products(sys, [(4.0, 1.0)])
    assert recover_B_entrywise([(a.moments[0], b.moments[0])], [(4.0, 1.0)])[0, 0] == pytest.approx(2.5)


def test_entrywise_equal_values_rejected():
    with pytest.raises(ValueError):
        recover_B_entrywise([(np.ones(2), np.zeros(2))], [(1.0, 1.0)])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_entrywise_consistent_with_basis(d, p, seed):
    rng = np.random.default_rng(seed)
    sys = random_dag_system(rng, d, p)
    values = [(0.0, 1.0)] * p
    pairs = single_node_products(sys, values)
    entry = recover_moment_matrices_entrywise(pairs, values)
    basis = recover_moment_matrices(basis_products(sys, np.eye(p)), np.eye(p))
    for a, b in zip(entry, basis):
        assert np.max(np.abs(a - b)) <= 1e-8 * max(1.0, np.max(np.abs(b)))
