import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nldw.damping import DampingModel
from nldw.errors import InsufficientPoints
from nldw.heat_kernel import Grid
from nldw.lifespan import (estimate_lifespan, fit_scaling, is_monotone, read_sweep_csv,
                           subcritical_exponent, svg_polyline, sweep, write_fit_csv, write_svg,
                           write_sweep_csv)
from nldw.records import FAILED, NO_BLOWUP, THRESHOLD_CROSSED, BlowupDetector, LifespanRecord
from nldw.solver import InitialData, ProblemParams


def template(eps=1.0, t_end=40.0):
    return ProblemParams(1, 2.0, eps, DampingModel(0.0), Grid(1, 48.0, 512), t_end)


def synthetic(eps, T):
    return [LifespanRecord(e, t, math.nextafter(t, math.inf), THRESHOLD_CROSSED) for e, t in zip(eps, T)]


def test_zero_amplitude_never_blows_up():
    rec = estimate_lifespan(template(0.0), InitialData())
    assert rec.reason == NO_BLOWUP and not rec.accepted


def test_nonlinearity_required():
    P = ProblemParams(1, 2.0, 1.0, DampingModel(0.0), Grid(1, 48.0, 512), 5.0, nonlinearity_on=False)
    with pytest.raises(ValueError):
        estimate_lifespan(P, InitialData())


def test_refinement_tightens_bracket():
    P = template(2.0)
    rec = estimate_lifespan(P, InitialData())
    coarse = estimate_lifespan(P, InitialData(), refine=False)
    assert rec.T_lo < rec.T_hi
    assert rec.T_hi - rec.T_lo <= 5 * rec.dt_final
    assert rec.T_hi - rec.T_lo < coarse.T_hi - coarse.T_lo
    assert rec.T == pytest.approx(coarse.T, rel=1e-3)
    assert rec.insensitivity_ratio <= 0.02 and rec.accepted
    lo, hi = rec.crossings[1e6]
    assert (lo, hi) == (rec.T_lo, rec.T_hi)


def test_sweep_edge_cases():
    assert sweep(template(), [], InitialData()) == []
    with pytest.raises(ValueError):
        sweep(template(), [0.5, 1.0], InitialData())
    with pytest.raises(ValueError):
        sweep(template(), [1.0, -0.5], InitialData())


def test_sweep_is_monotone_and_flags_infeasible_points():
    recs = sweep(template(t_end=20.0), [2.0, 1.0, 0.5, 0.05], InitialData(), workers=1)
    assert [r.epsilon for r in recs] == [2.0, 1.0, 0.5, 0.05]
    T = [r.T for r in recs[:3]]
    assert T[0] < T[1] < T[2]
    assert recs[3].reason == NO_BLOWUP and not recs[3].accepted
    assert is_monotone(recs)
    fit = fit_scaling(recs, "SubcriticalPoly")
    assert fit.n_points == 3


def test_sweep_records_failures():
    P = ProblemParams(1, 2.0, 1.0, DampingModel(0.5), Grid(1, 48.0, 512), 5.0, theorem_regime=True)
    recs = sweep(P, [1.0, 0.5], InitialData(amplitude_u0=0.0, amplitude_u1=-1.0), workers=1)
    assert all(r.reason == FAILED and "PositivityViolation" in r.message for r in recs)


def test_fit_exact_power_law():
    eps = np.array([0.4, 0.2, 0.1, 0.05])
    fit = fit_scaling(synthetic(eps, eps**-2.0), "SubcriticalPoly")
    assert fit.slope == pytest.approx(-2.0, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_fit_exact_exponential():
    eps = np.array([1.0, 0.8, 0.6, 0.5])
    fit = fit_scaling(synthetic(eps, np.exp(3.0 * eps**-2.0)), "CriticalExp", p=3.0)
    assert fit.slope == pytest.approx(3.0, rel=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_fit_double_exponential_uses_log_time():
    eps = np.array([1.0, 0.8, 0.6])
    recs = [LifespanRecord(e, math.inf, math.inf, THRESHOLD_CROSSED, log_T=math.exp(2 * e**-2 + 1))
            for e in eps]
    fit = fit_scaling(recs, "CriticalDoubleExp", p=3.0)
    assert fit.slope == pytest.approx(2.0) and fit.intercept == pytest.approx(1.0)


def test_fit_guards():
    with pytest.raises(InsufficientPoints):
        fit_scaling(synthetic([0.5, 0.25], [4.0, 16.0]), "SubcriticalPoly")
    with pytest.raises(ValueError):
        fit_scaling(synthetic([0.5, 0.25, 0.1], [4.0, 16.0, 100.0]), "Quadratic")
    with pytest.raises(ValueError):
        fit_scaling(synthetic([0.5, 0.25, 0.1], [4.0, 16.0, 100.0]), "CriticalExp")


def test_threshold_sensitive_records_are_excluded():
    recs = synthetic([0.5, 0.25, 0.1, 0.05], [4.0, 16.0, 100.0, 400.0])
    recs[0].insensitivity_ratio = 0.5
    assert fit_scaling(recs, "SubcriticalPoly").n_points == 3


@given(perm=st.permutations(range(6)), noise=st.lists(st.floats(-0.1, 0.1), min_size=6, max_size=6))
def test_fit_ignores_record_order(perm, noise):
    eps = np.geomspace(0.5, 0.05, 6)
    T = eps**-2 * np.exp(noise)
    recs = synthetic(eps, T)
    a = fit_scaling(recs, "SubcriticalPoly")
    b = fit_scaling([recs[i] for i in perm], "SubcriticalPoly")
    assert (a.slope, a.intercept, a.r_squared) == (b.slope, b.intercept, b.r_squared)
    assert 0.0 <= a.r_squared <= 1.0


def test_predicted_exponent():
    assert subcritical_exponent(1, 2.0, 0.0) == pytest.approx(-2.0)


def test_csv_roundtrip(tmp_path):
    recs = synthetic([0.5, 0.25, 0.1], [4.0, 16.0, 100.0])
    recs.append(LifespanRecord(0.01, 40.0, math.inf, NO_BLOWUP, theta_used=1e6))
    path = tmp_path / "s.csv"
    write_sweep_csv(recs, path)
    assert path.read_text().splitlines()[0] == "epsilon,T_lo,T_hi,reason,theta,insensitivity_ratio"
    back = read_sweep_csv(path)
    assert [(r.epsilon, r.T_lo, r.T_hi, r.reason) for r in back] == \
        [(r.epsilon, r.T_lo, r.T_hi, r.reason) for r in recs]
    fit = fit_scaling(back, "SubcriticalPoly")
    write_fit_csv(fit, tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "regime,slope,intercept,r_squared,n_points"
    write_svg(fit, tmp_path / "f.svg")
    assert "<polyline" in (tmp_path / "f.svg").read_text()


def test_svg_degenerate_inputs():
    assert "<svg" in svg_polyline([], [])
    assert "<svg" in svg_polyline([1.0, 1.0], [2.0, 2.0])


def test_detector_invariants():
    with pytest.raises(ValueError):
        BlowupDetector(theta=-1.0)
    with pytest.raises(ValueError):
        BlowupDetector().check_initial(100.0)
    assert BlowupDetector().thresholds == (1e4, 1e6, 1e8)
