import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import erfc, erfcx

from nldw.damping import (DampingModel, aux_table, build_aux, compute_b_star, compute_g,
                          compute_gprime, validate_lemma22)
from nldw.errors import NonConvergent, OutOfRange


def b_star_mp(beta):
    a = mpmath.mpf(1) - beta
    return float(mpmath.quad(lambda s: mpmath.exp(-((1 + s) ** a - 1) / a), [0, 1, 10, mpmath.inf]))


def g_explicit_mp(beta, t):
    """e^{B(t)} (b* - int_0^t e^{-B}) evaluated in high precision."""
    mpmath.mp.dps = 40
    a = mpmath.mpf(1) - beta
    B = lambda s: ((1 + s) ** a - 1) / a
    bstar = mpmath.quad(lambda s: mpmath.exp(-B(s)), [0, 1, 10, mpmath.inf])
    head = mpmath.quad(lambda s: mpmath.exp(-B(s)), [0, t])
    val = mpmath.exp(B(t)) * (bstar - head)
    mpmath.mp.dps = 15
    return float(val)


def test_b_star_half_is_three_halves():
    assert compute_b_star(DampingModel(0.5)) == pytest.approx(1.5, rel=1e-12)


def test_b_star_minus_one_matches_erfc():
    expected = math.exp(0.5) * math.sqrt(math.pi / 2) * erfc(1 / math.sqrt(2))
    assert compute_b_star(DampingModel(-1.0)) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.6556795424, abs=1e-10)


@pytest.mark.parametrize("beta", [-0.75, -0.5, 0.25, 0.9])
def test_b_star_two_routes(beta):
    assert compute_b_star(DampingModel(beta)) == pytest.approx(b_star_mp(beta), rel=1e-10)


def test_classical_damping_is_trivial():
    m = DampingModel(0.0)
    assert m.classical and not m.theorem_regime
    assert compute_b_star(m) == 1.0
    assert compute_g(m, 3.0) == 1.0
    assert compute_gprime(m, 3.0) == 0.0


@pytest.mark.parametrize("t", [0.0, 0.3, 2.0, 50.0, 1e4])
def test_g_closed_form_half(t):
    assert compute_g(DampingModel(0.5), t) == pytest.approx(math.sqrt(t + 1) + 0.5, rel=1e-12)
    assert compute_gprime(DampingModel(0.5), t) == pytest.approx(0.5 / math.sqrt(t + 1), rel=1e-10)


@pytest.mark.parametrize("t", [0.0, 1.0, 10.0, 1e3])
def test_g_closed_form_minus_one(t):
    expected = math.sqrt(math.pi / 2) * erfcx((t + 1) / math.sqrt(2))
    assert compute_g(DampingModel(-1.0), t) == pytest.approx(expected, rel=1e-11)


@pytest.mark.parametrize("beta", [-0.5, 0.3])
@pytest.mark.parametrize("t", [0.5, 2.0, 5.0])
def test_g_matches_explicit_product_formula(beta, t):
    assert compute_g(DampingModel(beta), t) == pytest.approx(g_explicit_mp(beta, t), rel=1e-9)


@given(beta=st.floats(-1.0, 0.95).filter(lambda b: b != 0.0), t=st.floats(0.0, 200.0))
def test_g_solves_its_ode(beta, t):
    m = DampingModel(beta)
    g = compute_g(m, t)
    gp = compute_gprime(m, t)
    assert g > 0
    assert gp == pytest.approx(float(m.b(t)) * g - 1.0, rel=1e-7, abs=1e-10)


def test_errors():
    with pytest.raises(NonConvergent):
        compute_b_star(DampingModel(1.0))
    with pytest.raises(NonConvergent):
        build_aux(DampingModel(1.2), 10.0)
    with pytest.raises(OutOfRange):
        compute_g(DampingModel(0.5), -1.0)
    with pytest.raises(ValueError):
        DampingModel(0.5, form="Exponential")


def test_aux_matches_closed_forms():
    aux = build_aux(DampingModel(0.5), 100.0, 513)
    t = np.array([0.0, 0.7, 5.0, 37.0, 100.0])
    w = np.sqrt(t + 1)
    G = (2 / 3) * (w**3 - 1) + 0.5 * t
    Gamma = 2 * (w - 1) - np.log((w + 0.5) / 1.5)
    np.testing.assert_allclose(aux.g(t), w + 0.5, rtol=1e-9)
    np.testing.assert_allclose(aux.G(t), G, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(aux.Gamma(t), Gamma, rtol=1e-8, atol=1e-12)
    assert aux.b_star == pytest.approx(1.5)
    assert aux.flags == ()


def test_aux_guards_and_flags():
    aux = build_aux(DampingModel(0.0), 10.0, 64)
    assert "classical-damping" in aux.flags
    assert aux.G(4.0) == pytest.approx(4.0)
    with pytest.raises(OutOfRange):
        aux.g(11.0)
    with pytest.raises(OutOfRange):
        aux.G(-0.1)
    with pytest.raises(ValueError):
        aux.g_grid[0] = 2.0
    assert "outside-theorem-range" in build_aux(DampingModel(-1.5), 5.0, 64).flags


@pytest.mark.parametrize("beta", [-1.0, -0.5, 0.5])
def test_large_time_asymptotics(beta):
    rep = validate_lemma22(build_aux(DampingModel(beta), 1e3), 1e3)
    assert rep.ok, rep


def test_aux_table_columns():
    tab = aux_table(build_aux(DampingModel(0.5), 4.0, 32))
    assert tab.shape == (32, 7)
    np.testing.assert_allclose(tab[:, 6], tab[:, 1] * tab[:, 2] - 1.0)


@given(beta=st.floats(-1.0, 0.9), t=st.floats(0.0, 1e3), s=st.floats(0.0, 1e3))
def test_increments_are_consistent(beta, t, s):
    m = DampingModel(beta)
    dB = float(m.delta_B(t, s))
    assert dB >= 0
    assert dB == pytest.approx(float(m.B(t + s) - m.B(t)), rel=1e-8, abs=1e-9 * (1 + float(m.B(t + s))))
