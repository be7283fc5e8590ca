from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucps.models import build_model
from ucps.oracles import (
    MAX_ED_SITES,
    QuenchOracle,
    chain_hamiltonian,
    critical_momentum,
    critical_times,
    exact_diag_ground,
    graded_quad,
    heisenberg_ground_energy,
    ising_ground_energy,
    ising_quench_rate,
    ising_quench_rate_ed,
    ising_quench_rate_ring,
    xy_ground_energy,
)


@pytest.mark.parametrize("h,expected", [(0.0, -1.0), (1.0, -4 / np.pi)])
def test_ising_closed_forms(h, expected):
    assert ising_ground_energy(h) == pytest.approx(expected, abs=1e-14)


def test_ising_large_field_limit_and_negative_field():
    assert ising_ground_energy(50.0) == pytest.approx(-50.0 - 1 / (4 * 50.0), abs=1e-4)
    with pytest.raises(ValueError):
        ising_ground_energy(-1.0)


@given(h=st.floats(0.0, 3.0))
@settings(max_examples=20, deadline=None)
def test_xy_reduces_to_ising_at_full_anisotropy(h):
    assert xy_ground_energy(h, 1.0) == pytest.approx(ising_ground_energy(h), abs=1e-12)


@pytest.mark.parametrize("h,expected", [(0.0, -2 / np.pi), (1.3, -1.3)])
def test_xx_chain(h, expected):
    assert xy_ground_energy(h, 0.0) == pytest.approx(expected, abs=1e-12)


def test_heisenberg_constant():
    assert heisenberg_ground_energy() == pytest.approx(1 - 4 * np.log(2))


def test_graded_quadrature_handles_endpoint_singularity():
    assert graded_quad(np.sqrt, 0.0, 1.0, points=[0.0]) == pytest.approx(2 / 3, abs=1e-13)
    assert graded_quad(lambda x: np.abs(x - 0.3), 0.0, 1.0, points=[0.3]) == pytest.approx(0.29, abs=1e-13)


@pytest.mark.parametrize("N", [8, 10])
@pytest.mark.parametrize("h", [0.5, 1.0, 1.5])
def test_ring_ground_energy_against_exact_diagonalisation(N, h):
    k = np.pi * (2 * np.arange(1, N // 2 + 1) - 1) / N
    free = -np.sum(2 * np.sqrt(1 + h * h - 2 * h * np.cos(k))) / N
    e, _ = exact_diag_ground(build_model("ising", h=h), N)
    assert e == pytest.approx(free, abs=1e-12)


def test_exact_diag_rejects_large_systems():
    with pytest.raises(ValueError):
        chain_hamiltonian(build_model("ising"), MAX_ED_SITES + 1)
    with pytest.raises(ValueError):
        chain_hamiltonian(build_model("ising"), 1)


def test_critical_times_of_reference_quench():
    times = critical_times(1.5, 0.1, count=3)
    assert times == pytest.approx([0.8438558346, 2.5315675039, 4.2192791731], abs=1e-9)
    assert critical_momentum(0.5, 0.7) is None
    assert critical_times(0.5, 0.7).size == 0


@pytest.mark.parametrize("t,expected", [(0.3, 0.078718), (0.6, 0.317073), (1.2, 0.171677)])
def test_quench_rate_reference_values(t, expected):
    assert ising_quench_rate(1.5, 0.1, t) == pytest.approx(expected, abs=1e-6)


def test_quench_rate_trivial_cases():
    assert ising_quench_rate(1.5, 0.1, 0.0) == 0.0
    assert ising_quench_rate(0.7, 0.7, 3.0) == 0.0
    with pytest.raises(ValueError):
        QuenchOracle(1.5, 0.1, order=64)


@pytest.mark.parametrize("N", [8, 10])
def test_ring_quench_formula_matches_brute_force(N):
    times = [0.2, 0.5, 1.1]
    ed = ising_quench_rate_ed(1.5, 0.1, times, N)
    free = [ising_quench_rate_ring(1.5, 0.1, t, N) for t in times]
    assert np.allclose(ed, free, atol=1e-10)


def test_ring_rate_approaches_thermodynamic_limit():
    t = 0.4
    exact = ising_quench_rate(1.5, 0.1, t)
    errors = [abs(ising_quench_rate_ring(1.5, 0.1, t, N) - exact) for N in (20, 80, 320)]
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-8


def test_rate_has_kink_at_critical_time():
    orc = QuenchOracle(1.5, 0.1)
    tc = critical_times(1.5, 0.1, 1)[0]
    d = 1e-4
    left = (orc.rate(tc) - orc.rate(tc - d)) / d
    right = (orc.rate(tc + d) - orc.rate(tc)) / d
    assert left - right > 0.5
