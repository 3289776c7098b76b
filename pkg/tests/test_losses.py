import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blfrb.losses import (C0_BREAKDOWN, C1_EFFICIENCY, DEFAULT_LOSS0, DEFAULT_LOSS1,
                          TukeyLoss, mscale_constant)

# 50-digit evaluations of u^2/2 - u^4/(2c^2) + u^6/(6c^4) and its derivative
RHO_4685_AT_2_3 = 2.0587391333527827
PSI_4685_AT_1_5 = 1.2082342968884712

reals = st.floats(-50, 50, allow_nan=False)
tunings = st.floats(0.5, 10)


def test_rho_zero_and_plateau():
    assert DEFAULT_LOSS1.rho(0.0) == 0.0
    assert DEFAULT_LOSS0.rho(10.0) == pytest.approx(1.547**2 / 6, rel=1e-15)
    assert DEFAULT_LOSS0.rho(10.0) == pytest.approx(0.39886816666666667, rel=1e-14)


def test_rho_polynomial_branch_matches_high_precision_value():
    assert DEFAULT_LOSS1.rho(2.3) == pytest.approx(RHO_4685_AT_2_3, rel=1e-14)


def test_psi_values():
    assert DEFAULT_LOSS0.psi(0.0) == 0.0
    assert DEFAULT_LOSS0.psi(2.0) == 0.0
    assert DEFAULT_LOSS1.psi(1.5) == pytest.approx(PSI_4685_AT_1_5, rel=1e-14)


def test_psi_matches_central_differences_of_rho():
    for loss in (DEFAULT_LOSS0, DEFAULT_LOSS1):
        u = np.linspace(-2 * loss.c, 2 * loss.c, 801)
        h = 1e-5
        fd = (loss.rho(u + h) - loss.rho(u - h)) / (2 * h)
        assert np.max(np.abs(fd - loss.psi(u))) < 1e-8
    h = 1e-5
    fd = (DEFAULT_LOSS1.rho(1.0 + h) - DEFAULT_LOSS1.rho(1.0 - h)) / (2 * h)
    assert abs(fd - DEFAULT_LOSS1.psi(1.0)) < 1e-8


def test_psi_deriv_and_weight_deriv_match_differences():
    loss = DEFAULT_LOSS1
    u = np.linspace(-1.5 * loss.c, 1.5 * loss.c, 601)
    h = 1e-6
    assert np.max(np.abs((loss.psi(u + h) - loss.psi(u - h)) / (2 * h) - loss.psi_deriv(u))) < 1e-6
    assert np.max(np.abs((loss.weight(u + h) - loss.weight(u - h)) / (2 * h)
                         - loss.weight_deriv(u))) < 1e-6


def test_weight_limits():
    assert DEFAULT_LOSS1.weight(0.0) == 1.0
    assert DEFAULT_LOSS1.weight(1e-13) == pytest.approx(1.0)
    assert DEFAULT_LOSS1.weight(5.0) == 0.0
    assert DEFAULT_LOSS1.weight(1.5) == pytest.approx(DEFAULT_LOSS1.psi(1.5) / 1.5, rel=1e-14)


def test_twice_differentiable_at_the_knot():
    loss = DEFAULT_LOSS0
    c = loss.c
    for side in (c - 1e-9, c + 1e-9):
        assert loss.psi(side) == pytest.approx(0.0, abs=1e-8)
        assert loss.psi_deriv(side) == pytest.approx(0.0, abs=1e-8)
    assert loss.rho(c - 1e-9) == pytest.approx(loss.rho_max, abs=1e-12)


def test_mscale_constant():
    assert mscale_constant(DEFAULT_LOSS0) == pytest.approx(C0_BREAKDOWN**2 / 12, rel=1e-15)


def test_tunings():
    assert (C0_BREAKDOWN, C1_EFFICIENCY) == (1.547, 4.685)


@pytest.mark.parametrize("c", [0.0, -1.0, math.inf, math.nan])
def test_invalid_tuning(c):
    with pytest.raises(ValueError):
        TukeyLoss(c)


def test_vectorized_matches_scalar():
    u = np.array([-7.0, -1.0, 0.0, 0.3, 2.0, 9.0])
    loss = DEFAULT_LOSS1
    for f in (loss.rho, loss.psi, loss.weight, loss.psi_deriv):
        assert np.array_equal(f(u), np.array([f(x) for x in u]))


@settings(max_examples=200, deadline=None)
@given(u=reals, c=tunings)
def test_symmetry_and_bounds(u, c):
    loss = TukeyLoss(c)
    assert loss.rho(u) == loss.rho(-u)
    assert loss.psi(u) == -loss.psi(-u)
    assert 0.0 <= loss.rho(u) <= loss.rho_max * (1 + 1e-15)
    assert loss.weight(u) >= 0.0


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0, 10), b=st.floats(0, 10), c=tunings)
def test_rho_nondecreasing_in_absolute_value(a, b, c):
    loss = TukeyLoss(c)
    lo, hi = sorted((a, b))
    assert loss.rho(lo) <= loss.rho(hi) + 1e-15


@settings(max_examples=100, deadline=None)
@given(c=tunings)
def test_rho_plateau_beyond_tuning(c):
    loss = TukeyLoss(c)
    assert loss.rho(c * 1.0001) == pytest.approx(c * c / 6, rel=1e-14)
    assert loss.psi(c * 1.0001) == 0.0
