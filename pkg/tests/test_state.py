from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dense_oracles as dense
from ucps.models import BlockHamiltonian, model_hamiltonian
from ucps.state import (
    DegenerateStateError,
    NotNormalisedError,
    UcpsState,
    block_energy,
    environments,
    expectation_one_block,
    expectation_two_block,
    left_environment,
    load_state,
    mixed_transfer,
    normalize,
    random_state,
    right_environment,
    save_state,
    schmidt_coefficients,
    state_from_dict,
    state_to_dict,
    to_umps,
    transfer_matrix,
)

# (n, s) pairs with D = s**n <= 6
SHAPES = [(1, 2), (1, 3), (2, 2), (1, 6)]


def hermitian(d, rng):
    m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return m + m.conj().T


def random_block_hamiltonian(n, s, seed):
    rng = np.random.default_rng(seed)
    d = s**n
    return BlockHamiltonian(n=n, s=s, intra_terms=(hermitian(d, rng),), boundary_terms=((hermitian(d, rng), hermitian(d, rng)),))


@given(shape=st.sampled_from(SHAPES), seed=st.integers(0, 5000))
@settings(max_examples=30, deadline=None)
def test_environments_are_normalised_fixed_points(shape, seed):
    n, s = shape
    state = random_state(n, s, seed=seed)
    env = environments(state)
    E = transfer_matrix(state)
    assert np.allclose(E @ env.vr, env.vr, atol=1e-10)
    assert np.allclose(env.vl @ E, env.vl, atol=1e-10)
    assert abs(env.vl @ env.vr - 1) < 1e-12
    assert np.max(env.vr) == pytest.approx(1.0)
    assert np.all(env.vl >= 0) and np.all(env.vr >= 0)


@given(shape=st.sampled_from(SHAPES), seed=st.integers(0, 5000))
@settings(max_examples=30, deadline=None)
def test_expectations_match_dense_contractions(shape, seed):
    n, s = shape
    state = random_state(n, s, seed=seed)
    env = environments(state)
    H = random_block_hamiltonian(n, s, seed + 1)
    op = H.intra_terms[0]
    h1, h2 = H.boundary_terms[0]
    assert abs(expectation_one_block(state, env, op) - dense.one_block(state, op)) < 1e-10
    assert abs(expectation_two_block(state, env, h1, h2) - dense.two_block(state, h1, h2)) < 1e-10
    assert abs(block_energy(state, env, H) - dense.energy_per_block(state, H)) < 1e-10


def test_identity_expectation_is_one():
    state = random_state(2, seed=5)
    env = environments(state)
    assert abs(expectation_one_block(state, env, np.eye(4)) - 1) < 1e-12
    assert abs(np.sum(np.diag(left_environment(state, env)) * np.diag(right_environment(state, env))) - 1) < 1e-12


@given(seed=st.integers(0, 5000), n=st.integers(1, 3))
@settings(max_examples=25, deadline=None)
def test_schmidt_coefficients_are_normalised(seed, n):
    state = random_state(n, seed=seed)
    sv = schmidt_coefficients(state, environments(state))
    assert np.sum(sv**2) == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(sv) <= 1e-14)


def test_product_state_has_single_schmidt_value():
    C = np.ones((2, 2), dtype=complex)
    state = normalize(UcpsState(C, 1))
    sv = schmidt_coefficients(state, environments(state))
    assert sv[0] == pytest.approx(1.0) and np.allclose(sv[1:], 0, atol=1e-7)


def test_normalize_and_errors():
    state = UcpsState(3.0 * random_state(1, seed=0).C, 1)
    with pytest.raises(NotNormalisedError):
        environments(state)
    assert np.max(np.abs(np.linalg.eigvals(transfer_matrix(normalize(state))))) == pytest.approx(1.0)
    with pytest.raises(DegenerateStateError):
        normalize(UcpsState(np.zeros((2, 2)), 1))
    with pytest.raises(ValueError):
        UcpsState(np.zeros((3, 3)), 1)
    with pytest.raises(ValueError):
        UcpsState(np.full((2, 2), np.inf), 1)


def test_mixed_transfer_of_state_with_itself_is_transfer_matrix():
    state = random_state(2, seed=1)
    assert np.allclose(mixed_transfer(state, state), transfer_matrix(state))
    with pytest.raises(ValueError):
        mixed_transfer(state, random_state(1, seed=1))


def test_mapped_umps_has_same_energy():
    from ucps.umps import block_bond_matrix, umps_energy, umps_environments

    state = random_state(2, seed=4)
    env = environments(state)
    H = model_hamiltonian("ising", 2, h=0.7)
    u = to_umps(state)
    assert abs(umps_energy(u, umps_environments(u), block_bond_matrix(H)) - block_energy(state, env, H).real) < 1e-12


def test_serialisation_round_trip_is_exact(tmp_path):
    state = random_state(2, seed=9)
    assert np.array_equal(state_from_dict(state_to_dict(state)).C, state.C)
    path = tmp_path / "state.json"
    save_state(path, state)
    back = load_state(path)
    assert np.array_equal(back.C, state.C) and back.n == 2 and back.s == 2
    record = state_to_dict(state)
    record["C"] = record["C"][:-1]
    with pytest.raises(ValueError):
        state_from_dict(record)
