import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from nldw.damping import DampingModel, build_aux
from nldw.errors import DomainTooSmall, InsufficientSnapshots, OutOfRange
from nldw.heat_kernel import Grid
from nldw.identity import (estimate_J0, functional_H, identity_report, term_A, term_B, term_C,
                           term_D, term_E, write_report_csv)
from nldw.solver import InitialData, ProblemParams, SimState, SnapshotStore, run


@pytest.fixture(scope="module")
def aux_half():
    return build_aux(DampingModel(0.5), 200.0)


@pytest.fixture(scope="module")
def aux_classical():
    return build_aux(DampingModel(0.0), 200.0, 257)


def frozen_store(grid, times, u, v, p=2.0, beta=0.0):
    store = SnapshotStore(stride=1, capacity=len(times) + 4)
    store.params = ProblemParams(grid.n, p, 1.0, DampingModel(beta), grid, float(times[-1]))
    for k, t in enumerate(times):
        store.add(SimState(float(t), u(t), v(t), k))
    return store


def test_term_A_examples(aux_half):
    t = 3.0
    W = aux_half.G(t) + 1
    g = Grid(1, 10 * math.sqrt(W), 2048)
    zero = np.zeros(g.shape)
    assert term_A(SimState(t, zero, zero), aux_half, g) == 0.0
    one = np.ones(g.shape)
    assert term_A(SimState(t, one, zero), aux_half, g) == pytest.approx(math.sqrt(4 * math.pi * W), abs=1e-8)
    w = np.exp(-g.r2 / (4 * W))
    assert term_A(SimState(t, w, zero), aux_half, g) == pytest.approx(math.sqrt(2 * math.pi * W), rel=1e-12)


def test_term_B_examples(aux_half, aux_classical):
    g = Grid(1, 60.0, 1024)
    zero = np.zeros(g.shape)
    one = np.ones(g.shape)
    assert term_B(SimState(2.0, one, zero), aux_half, g) == 0.0
    assert term_B(SimState(2.0, zero, one), aux_classical, g) == \
        term_A(SimState(2.0, one, zero), aux_classical, g)
    bump = InitialData().profile(g)
    a = term_A(SimState(2.0, bump, zero), aux_half, g)
    b = term_B(SimState(2.0, zero, -bump), aux_half, g)
    assert b < 0 and b == pytest.approx(-aux_half.g(2.0) * a, rel=1e-14)


def test_term_C_examples(aux_half):
    g = Grid(1, 40.0, 1024)
    data = InitialData(amplitude_u1=0.4)
    assert term_C(1.0, aux_half, data, 0.0, g) == 0.0
    u0, u1 = data.fields(g)
    k1 = (4 * math.pi) ** -0.5 * np.exp(-g.r2 / 4)
    expected = 0.3 * math.sqrt(4 * math.pi) * g.integrate(k1 * (u0 + 1.5 * u1))
    assert term_C(0.0, aux_half, data, 0.3, g) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(DomainTooSmall):
        term_C(150.0, aux_half, data, 0.3, g)


def test_term_C_narrow_bump_limit(aux_half):
    w = 0.05
    data = InitialData(amplitude_u0=1 / (w * math.sqrt(math.pi)), width=w)
    t = 60.0
    G = aux_half.G(t)
    g = Grid(1, 8.5 * math.sqrt(2 * G + 1), 1 << 15)
    expected = 0.2 * math.sqrt((G + 1) / (2 * G + 1))
    assert term_C(t, aux_half, data, 0.2, g) == pytest.approx(expected, rel=1e-3)
    assert expected == pytest.approx(0.2 / math.sqrt(2), rel=2e-3)


def test_history_terms_vanish_trivially(aux_half):
    g = Grid(1, 40.0, 256)
    times = np.linspace(0, 2, 9)
    zero = lambda t: np.zeros(g.shape)
    store = frozen_store(g, times, zero, zero, beta=0.5)
    assert term_D(store, aux_half, 2.0) == 0.0
    assert term_E(store, aux_half, 2.0) == 0.0
    bump = lambda t: InitialData().profile(g)
    store = frozen_store(g, times, bump, bump, beta=0.5)
    assert term_D(store, aux_half, 0.0) == 0.0 and term_E(store, aux_half, 0.0) == 0.0
    with pytest.raises(OutOfRange):
        term_D(store, aux_half, 0.3)
    with pytest.raises(InsufficientSnapshots):
        term_D(frozen_store(g, times[:3], bump, bump), aux_half, 0.5)


def test_term_D_frozen_bump(aux_classical):
    g = Grid(1, 40.0, 1024)
    t = 3.0
    phi = InitialData().profile(g)
    coarse = frozen_store(g, np.linspace(0, t, 13), lambda s: phi, lambda s: 0 * phi)
    fine = frozen_store(g, np.linspace(0, t, 25), lambda s: phi, lambda s: 0 * phi)
    Dc, Df = term_D(coarse, aux_classical, t), term_D(fine, aux_classical, t)

    def inner(s):
        tau = 2 * t - s + 1
        # Gaussian product integral of the kernel against exp(-2x^2)
        return (4 * math.pi * tau) ** -0.5 * math.sqrt(math.pi / (1 / (4 * tau) + 2))
    exact = math.sqrt(4 * math.pi * (t + 1)) * quad(inner, 0, t, epsabs=1e-14)[0]
    assert Df == pytest.approx(exact, rel=1e-4)
    assert abs(Df - exact) < abs(Dc - exact)
    assert abs(Dc - exact) / abs(Df - exact) == pytest.approx(4.0, rel=0.05)


@pytest.mark.parametrize("n", [1, 2])
def test_term_E_gaussian_oracle(aux_half, n):
    t = 2.0
    Gt = aux_half.G(t)
    g = Grid(n, 9 * math.sqrt(2 * Gt + 1), 1024 if n == 1 else 256)
    times = np.linspace(0, t, 401)
    kernel = lambda s: (4 * math.pi * (aux_half.G(s) + 1)) ** (-n / 2) * \
        np.exp(-g.r2 / (4 * (aux_half.G(s) + 1)))
    store = frozen_store(g, times, kernel, kernel, beta=0.5)
    store.params = ProblemParams(n, 2.0, 1.0, DampingModel(0.5), g, t)
    W = Gt + 1
    # int_0^t (sqrt(s+1) + 1/2)^2 ds
    g2 = 0.5 * ((t + 1) ** 2 - 1) + (2 / 3) * ((t + 1) ** 1.5 - 1) + 0.25 * t
    exact = (n / 2) * 2 ** (-n / 2) / (2 * W) * g2
    assert term_E(store, aux_half, t) == pytest.approx(exact, rel=1e-6)


def test_J0_and_H(aux_half):
    g = Grid(1, 400.0, 4096)
    data = InitialData(amplitude_u0=1 / math.sqrt(math.pi))
    assert estimate_J0(aux_half, data, g) == pytest.approx(2**-0.5, rel=1e-12)
    only_u1 = InitialData(amplitude_u0=0.0, amplitude_u1=2.0)
    assert estimate_J0(aux_half, only_u1, g) == pytest.approx(2**-0.5 * 1.5 * 2 * math.sqrt(math.pi), rel=1e-12)
    t = 131.0
    assert aux_half.G(t) >= 1e3
    assert functional_H(t, aux_half, data, g) == pytest.approx(2**-0.5, rel=0.05)


@given(t=st.floats(0.0, 100.0), w=st.floats(0.5, 3.0))
def test_H_closed_form(aux_half, t, w):
    G = aux_half.G(t)
    tau = 2 * G + 1
    g = Grid(1, max(9 * math.sqrt(tau), 12 * w), 4096)
    data = InitialData(width=w, amplitude_u1=0.3)
    c = 1 / (4 * tau) + 1 / w**2
    I0 = math.sqrt(math.pi / c)
    I2 = math.sqrt(math.pi) / (2 * c**1.5)
    g0 = 1.5
    expected = math.sqrt((G + 1) / tau) * (
        (1 + 0.3 * g0) * I0 + g0**2 / (2 * tau) * I0 - g0**2 / tau * I2 / (4 * tau))
    assert functional_H(t, aux_half, data, g) == pytest.approx(expected, rel=1e-9)


def test_zero_trajectory_report(aux_half):
    P = ProblemParams(1, 2.0, 0.0, DampingModel(0.5), Grid(1, 64.0, 512), 4.0)
    store, _ = run(P, InitialData(), snapshot_stride=4)
    rep = identity_report(store, aux_half, InitialData(), 0.0, [0.0, 2.0, 4.0])
    for arr in (rep.A, rep.B, rep.C, rep.D, rep.E, rep.residual, rep.relative_residual):
        assert np.all(arr == 0.0)


def test_linear_run_balances(aux_half, tmp_path):
    P = ProblemParams(1, 2.0, 0.01, DampingModel(0.5), Grid(1, 64.0, 1024), 6.0, nonlinearity_on=False)
    data = InitialData(amplitude_u1=0.5)
    store, _ = run(P, data, snapshot_stride=4)
    rep = identity_report(store, aux_half, data, 0.01, np.linspace(0, 6, 7))
    assert rep.max_relative_residual <= 0.05
    assert rep.D[0] == 0.0 and np.all(rep.D[1:] > 0)
    assert len(rep.times) == len(rep.A) == len(rep.H)
    write_report_csv(rep, tmp_path / "i.csv")
    assert (tmp_path / "i.csv").read_text().splitlines()[0] == \
        "t,A,B,C,D,E,residual,relative_residual,H,J0"


def test_nonlinear_run_balances(aux_half):
    P = ProblemParams(1, 2.0, 0.5, DampingModel(0.5), Grid(1, 64.0, 1024), 8.0)
    store, _ = run(P, InitialData(), snapshot_stride=8)
    rep = identity_report(store, aux_half, InitialData(), 0.5, np.linspace(0, 8, 9))
    assert rep.max_relative_residual <= 0.05
    assert np.all(rep.D >= 0)
    assert np.all(rep.margin >= 1)


def test_report_keeps_going_past_errors(aux_half):
    P = ProblemParams(1, 2.0, 0.01, DampingModel(0.5), Grid(1, 20.0, 256), 6.0, nonlinearity_on=False)
    store, _ = run(P, InitialData(), snapshot_stride=4)
    rep = identity_report(store, aux_half, InitialData(), 0.01, [0.0, 6.0])
    assert np.isfinite(rep.A[0]) and np.isnan(rep.C[1])
    assert any("DomainTooSmall" in m for m in rep.errors.values())
