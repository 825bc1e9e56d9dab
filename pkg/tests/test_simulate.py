import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import solve_ivp

from latentode.linalg_core import mat_exp
from latentode.simulate import (
    InterventionSpec,
    equally_spaced,
    hidden_state,
    intervene_clamp,
    latent_state,
    observed_state,
    sample_trajectory,
)
from latentode.systems import LatentDagSystem, augment_dag

from conftest import SEC5, random_dag_system


# --- latent / observed state -------------------------------------------------

def test_latent_state_at_zero(sec5):
    assert_array_equal(latent_state(sec5, 0.0), sec5.z0)


def test_latent_state_sec2(sec2):
    for t in (0.0, 0.5, 1.0):
        assert_allclose(latent_state(sec2, t), [1 + t, 1])


def test_latent_state_sec5(sec5):
    G = np.array(SEC5["G"])
    expected = (np.eye(3) + G + G @ G / 2) @ sec5.z0
    assert_allclose(latent_state(sec5, 1.0), expected, atol=1e-14)


def test_observed_state_at_zero(sec5):
    assert_array_equal(observed_state(sec5, 0.0), sec5.x0)


def test_observed_state_sec5_frozen(sec5):
    # 40-digit evaluation of the block flow
    assert_allclose(observed_state(sec5, 0.5),
                    [-2.373477118779819, 1.3747938990896598, 4.322178455136125], rtol=1e-12)


def test_observed_state_matches_integration(sec5):
    M = np.zeros((6, 6))
    M[:3, :3], M[:3, 3:], M[3:, 3:] = sec5.A, sec5.B, sec5.G
    ts = np.linspace(0, 1, 9)
    sol = solve_ivp(lambda t, y: M @ y, (0, 1), np.concatenate([sec5.x0, sec5.z0]),
                    t_eval=ts, method="DOP853", rtol=1e-12, atol=1e-12)
    assert_allclose(observed_state(sec5, ts), sol.y[:3].T, rtol=1e-9, atol=1e-9)


def test_sec2_generators_share_trajectory(sec2, sec2_prime):
    assert_allclose(observed_state(sec2, 1.0), observed_state(sec2_prime, 1.0), atol=1e-12)


def test_unidentifiable_fixture_fifty_points(sec2, sec2_prime):
    ts = equally_spaced(50)
    diff = np.abs(observed_state(sec2, ts) - observed_state(sec2_prime, ts))
    assert diff.max() <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1), st.floats(0, 1))
def test_dual_path_equality(d, p, seed, t):
    sys = random_dag_system(np.random.default_rng(seed), d, p)
    aug = augment_dag(sys)
    block = observed_state(sys, t)
    flow = (mat_exp(aug.F, t) @ aug.y0)[:d]
    assert np.max(np.abs(block - flow)) <= 1e-9 * max(1.0, np.max(np.abs(block)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1),
       st.floats(0, 1), st.floats(0, 1))
def test_flow_semigroup(d, p, seed, s, t):
    sys = random_dag_system(np.random.default_rng(seed), d, p)
    mid = hidden_state(sys, s)
    restarted = sys.replace(x0=mid[:d], z0=mid[d:])
    direct = observed_state(sys, s + t)
    assert np.max(np.abs(observed_state(restarted, t) - direct)) <= 1e-9 * max(1.0, np.max(np.abs(direct)))


# --- grids -------------------------------------------------------------------

def test_equally_spaced_examples():
    assert equally_spaced(2) == [0.0, 1.0]
    assert_allclose(equally_spaced(5), [0, 0.25, 0.5, 0.75, 1])
    g = equally_spaced(10)
    assert g[0] == 0.0 and g[-1] == 1.0 and len(g) == 10
    assert equally_spaced(1) == [0.0]


def test_equally_spaced_exclusive_start():
    assert_allclose(equally_spaced(4, include_start=False), [0.25, 0.5, 0.75, 1.0])


def test_sample_single_time(sec5):
    g = sample_trajectory(sec5, [0.0])
    assert g.n == 1
    assert_array_equal(g.states[0], sec5.x0)


def test_sample_sec5_grid(sec5):
    ts = equally_spaced(10)
    g = sample_trajectory(sec5, ts, "identifiable")
    assert g.states.shape == (10, 3)
    for t, row in zip(ts, g.states):
        assert_allclose(row, observed_state(sec5, t), rtol=1e-13)


def test_sample_time_translation(sec5):
    t0 = 0.3
    ts = np.array(equally_spaced(5))
    shifted = sample_trajectory(sec5, ts + t0).states
    mid = hidden_state(sec5, t0)
    restarted = sample_trajectory(sec5.replace(x0=mid[:3], z0=mid[3:]), ts).states
    assert_allclose(shifted, restarted, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("times", [[0.5, 0.2], [-0.1, 0.5], [0.2, 0.2], []])
def test_sample_rejects_bad_times(sec5, times):
    with pytest.raises(ValueError):
        sample_trajectory(sec5, times)


# --- clamp interventions -----------------------------------------------------

def test_clamp_sec2_M(sec2):
    f = intervene_clamp(sec2, InterventionSpec(1, 1.0))
    ts = np.array(equally_spaced(50))
    X = f(ts)
    assert_array_equal(X[:, 0], 1.0)
    assert_allclose(X[:, 1], 4 * np.exp(ts) - ts - 3, atol=1e-12)


def test_clamp_sec2_Mprime(sec2_prime):
    f = intervene_clamp(sec2_prime, InterventionSpec(1, 1.0))
    ts = np.array(equally_spaced(50))
    assert_allclose(f(ts)[:, 1], ts ** 2 / 2 + 3 * ts + 1, atol=1e-12)


def test_clamp_decoupled_system():
    sys = LatentDagSystem([1.0, 2.0, -1.0], [1.0], np.diag([0.5, -1.0, 0.2]),
                          np.zeros((3, 1)), [[0.0]])
    f = intervene_clamp(sys, InterventionSpec(2, 7.0))
    ts = np.linspace(0, 1, 6)
    X, free = f(ts), observed_state(sys, ts)
    assert_allclose(X[:, [0, 2]], free[:, [0, 2]], rtol=1e-13)
    assert_array_equal(X[:, 1], 7.0)


def test_clamp_matches_integration(sec5):
    f = intervene_clamp(sec5, InterventionSpec(2, -0.5))

    def rhs(t, x):
        full = np.insert(x, 1, -0.5)
        return np.delete(sec5.A @ full + sec5.B @ latent_state(sec5, t), 1)

    ts = np.linspace(0, 1, 6)
    sol = solve_ivp(rhs, (0, 1), np.delete(sec5.x0, 1), t_eval=ts,
                    method="DOP853", rtol=1e-12, atol=1e-12)
    assert_allclose(f(ts)[:, [0, 2]], sol.y.T, rtol=1e-9, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 32 - 1),
       st.floats(-5, 5))
def test_clamp_initial_consistency(d, p, seed, value):
    rng = np.random.default_rng(seed)
    sys = random_dag_system(rng, d, p)
    c = int(rng.integers(1, d + 1))
    x = intervene_clamp(sys, InterventionSpec(c, value))(0.0)
    assert x[c - 1] == value
    assert_array_equal(np.delete(x, c - 1), np.delete(sys.x0, c - 1))


def test_clamp_index_out_of_range(sec2):
    with pytest.raises(ValueError):
        intervene_clamp(sec2, InterventionSpec(3, 1.0))
    with pytest.raises(ValueError):
        intervene_clamp(sec2, InterventionSpec(0, 1.0))
