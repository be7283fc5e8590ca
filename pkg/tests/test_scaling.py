from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucps.scaling import (
    central_charge_estimate,
    fit_report,
    kappa_from_c,
    kappa_tilde_estimate,
    linear_fit,
    local_slopes,
    read_scaling_table,
)


@given(slope=st.floats(-5, 5), intercept=st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_linear_fit_recovers_exact_line(slope, intercept):
    x = np.linspace(0.0, 3.0, 7)
    fit = linear_fit(x, slope * x + intercept)
    assert fit.slope == pytest.approx(slope, abs=1e-9)
    assert fit.intercept == pytest.approx(intercept, abs=1e-9)
    assert fit.stderr_slope < 1e-8 and fit.npoints == 7


@pytest.mark.parametrize("x,y", [([1, 2], [1, 2]), ([1, 1, 1], [1, 2, 3]), ([1, 2, 3], [1, 2])])
def test_linear_fit_rejects_bad_input(x, y):
    with pytest.raises(ValueError):
        linear_fit(x, y)


def test_kappa_tilde_from_power_law():
    n = np.arange(2, 9)
    fit = kappa_tilde_estimate(n, 0.7 * n**1.004)
    assert fit.slope == pytest.approx(1.004)
    with pytest.raises(ValueError):
        kappa_tilde_estimate([3, 3, 3], [1, 2, 3])


def test_central_charge_from_synthetic_data():
    n = np.arange(2, 9)
    mu = 0.7 * n
    c = 0.5
    S = c / 6 * np.log(mu) + 0.02
    assert central_charge_estimate(S, mu, n, extrapolate=False) == pytest.approx(c)
    assert central_charge_estimate(S, mu, n) == pytest.approx(c)
    # a 1/n correction to the local slope is removed by the extrapolation
    S_corr = np.concatenate([[0.0], np.cumsum(np.diff(np.log(mu)) * (c / 6 + 0.05 * 2 / (n[1:] + n[:-1])))])
    assert central_charge_estimate(S_corr, mu, n) == pytest.approx(c, abs=1e-9)
    with pytest.raises(ValueError):
        central_charge_estimate(S[:3], mu[:3], n[:3])


def test_local_slopes_sort_by_size():
    x, s = local_slopes([0.3, 0.1, 0.2], [np.e**3, np.e, np.e**2], [4, 2, 3])
    assert np.allclose(x, [2 / 5, 2 / 7])
    assert np.allclose(s, [0.1, 0.1])


def test_kappa_for_ising():
    assert kappa_from_c(0.5) == pytest.approx(2.0343, abs=1e-4)
    with pytest.raises(ValueError):
        kappa_from_c(0.0)


def test_table_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("# comment\nn_or_D,energy,entropy,corr_length\n2,-1.2,0.1,1.4\n3,-1.27,0.13,2.1\n")
    table = read_scaling_table(path)
    assert np.allclose(table["n_or_D"], [2, 3])
    assert np.allclose(table["corr_length"], [1.4, 2.1])


def test_fit_report_keys():
    n = np.arange(2, 7)
    mu = 0.7 * n
    rep = fit_report(n, 0.5 / 6 * np.log(mu), mu)
    assert set(rep) == {"kappa_tilde", "kappa_tilde_stderr", "c_global", "c_extrapolated"}
