"""Comparison ODEs a(t) f'' + c(t) f' = C2 r(t) f^p and their log-time forms.

Forms (t is the form's own time variable):

    LiZhouBase          f'' + C1 f' = C2 f^p
    LemmaA1             (t+1)^beta f'' + C1 f' = C2 f^p / (t+1)
    LemmaA2             (t+1)^-1 f'' + C1 f' = C2 f^p / ((t+1)(log(t+1)+1))
    LemmaA1Log          e^{(beta-1)t} h'' + (C1 - e^{(beta-1)t}) h' = C2 h^p
    LemmaA2DoubleLog    q e^{-t} h'' + (C1 - q - q e^{-t}) h' = C2 h^p,  q = e^{-2(e^t-1)}

The log forms follow from t -> e^t - 1 and t -> e^{e^t-1} - 1.

Integration runs in an arclength-like variable s with dt/ds = 1/(1 + f'/f),
so the solution reaches any finite threshold at finite s even though f
itself blows up at finite t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp

from .errors import HypothesisViolation
from .lifespan import ScalingFit, fit_scaling
from .records import NO_BLOWUP, THRESHOLD_CROSSED, LifespanRecord

KINDS = ("LemmaA1", "LemmaA2", "LiZhouBase", "LemmaA1Log", "LemmaA2DoubleLog")
KIND_ALIASES = {"lemmaa1": "LemmaA1", "lemmaa2": "LemmaA2", "lizhou": "LiZhouBase",
                "lizhoubase": "LiZhouBase"}
THETA = 1e12
THETA_CAP = 1e200
HORIZON = 1e12
# below this ratio a/c the second-order term is dropped (reduced first-order model)
REDUCTION_RATIO = 1e-16


def canonical_kind(name: str) -> str:
    if name in KINDS:
        return name
    try:
        return KIND_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown ODE kind {name!r}") from None


@dataclass(frozen=True)
class OdeProblem:
    kind: str
    C1: float = 1.0
    C2: float = 1.0
    p: float = 3.0
    t0: float = 0.0
    f0: float = 0.1
    f0p: float = 0.0
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        bad = []
        if self.C1 < 1:
            bad.append("C1 must be >= 1")
        if not self.C2 > 0:
            bad.append("C2 must be positive")
        if not self.p > 1:
            bad.append("p must exceed 1")
        if not self.f0 > 0:
            bad.append("f0 must be positive")
        if self.f0p < 0:
            bad.append("f0p must be non-negative")
        if self.kind in ("LemmaA1", "LemmaA1Log") and self.beta is None:
            bad.append(f"{self.kind} needs beta")
        if bad:
            raise HypothesisViolation("; ".join(bad))
        if self.kind in ("LemmaA1Log", "LemmaA2DoubleLog") and not self.coefficients(self.t0)[1] > 0:
            raise HypothesisViolation(
                f"damping coefficient {self.coefficients(self.t0)[1]:.4g} <= 0 at the start time")

    def coefficients(self, t: float):
        """(a, c, r) at time t."""
        k = self.kind
        if k == "LiZhouBase":
            return 1.0, self.C1, 1.0
        if k == "LemmaA1":
            return (t + 1.0) ** self.beta, self.C1, 1.0 / (t + 1.0)
        if k == "LemmaA2":
            return 1.0 / (t + 1.0), self.C1, 1.0 / ((t + 1.0) * (math.log1p(t) + 1.0))
        if k == "LemmaA1Log":
            a = math.exp((self.beta - 1.0) * t)
            return a, self.C1 - a, 1.0
        q = math.exp(-2.0 * math.expm1(t))
        a = q * math.exp(-t)
        return a, self.C1 - q - a, 1.0

    def second_derivative(self, t, f, fp):
        a, c, r = self.coefficients(t)
        return (self.C2 * r * f**self.p - c * fp) / a


@dataclass
class OdeBracket:
    """Blow-up bracket in the problem's own time variable.

    Iterating yields ``(T_lo, T_hi)``.  T_lo is where f crosses the final
    threshold; T_hi adds the self-similar remainder inferred from the last
    doubling of f.
    """

    T_lo: float
    T_hi: float
    reason: str
    theta: float
    confirmed: bool
    positivity_ok: bool
    convexity_ok: bool
    n_steps: int
    kind: str = ""
    reduced_from: float | None = None

    def __iter__(self):
        return iter((self.T_lo, self.T_hi))

    @property
    def blew_up(self) -> bool:
        return self.reason == THRESHOLD_CROSSED


def _segment_full(problem, s0, y0, theta, horizon, rtol):
    p = problem.p
    reducible = problem.kind in ("LemmaA1Log", "LemmaA2DoubleLog")

    def rhs(s, y):
        t, f, fp = y
        f = max(f, 1e-300)
        fpp = problem.second_derivative(t, f, fp)
        w = 1.0 / (1.0 + abs(fp) / f)
        return (w, w * fp, w * fpp)

    def hit(level):
        ev = lambda s, y: y[1] - level
        ev.direction = 1.0
        return ev

    top = hit(theta)
    top.terminal = True
    half = hit(0.5 * theta)
    over = lambda s, y: y[0] - horizon
    over.terminal = True
    events = [top, half, over]
    if reducible:
        def reduce(s, y):
            a, c, _ = problem.coefficients(y[0])
            return a - REDUCTION_RATIO * c
        reduce.terminal = True
        reduce.direction = -1.0
        events.append(reduce)
    atol = rtol * 1e-6 * np.array([1.0, y0[1], max(y0[1], abs(y0[2]))])
    return solve_ivp(rhs, (s0, s0 + 4.0 * horizon), y0, method="Radau", rtol=rtol, atol=atol,
                     events=events, dense_output=False)


def _segment_reduced(problem, s0, y0, theta, horizon, rtol):
    def slope(t, f):
        _, c, r = problem.coefficients(t)
        return problem.C2 * r * f**problem.p / c

    def rhs(s, y):
        t, f = y
        f = max(f, 1e-300)
        fp = slope(t, f)
        w = 1.0 / (1.0 + fp / f)
        return (w, w * fp)

    top = lambda s, y: y[1] - theta
    top.terminal = True
    top.direction = 1.0
    half = lambda s, y: y[1] - 0.5 * theta
    half.direction = 1.0
    over = lambda s, y: y[0] - horizon
    over.terminal = True
    atol = rtol * 1e-6 * np.array([1.0, y0[1]])
    return solve_ivp(rhs, (s0, s0 + 4.0 * horizon), y0[:2], method="Radau", rtol=rtol, atol=atol,
                     events=[top, half, over]), slope


def integrate_blowup(problem: OdeProblem, tol: float = 1e-8, theta: float = THETA,
                     horizon: float = HORIZON) -> OdeBracket:
    """Integrate the equality form until f reaches ``theta`` or t reaches ``horizon``.

    The threshold is raised (up to 1e200) until the last doubling interval
    confirms blow-up and the bracket's relative width is at most ``tol``.
    f' > 0 is checked at every accepted step, as is f'' > 0 for forms started
    from rest.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    t0 = problem.t0
    y = np.array([t0, problem.f0, problem.f0p], dtype=float)
    s = 0.0
    steps = 0
    positivity = True
    convexity = True
    check_convex = problem.f0p == 0.0
    reduced = False
    reduced_at = None
    slope = None
    pexp = 0.5 * (problem.p - 1.0)
    while True:
        if not reduced:
            sol = _segment_full(problem, s, y, theta, horizon, tol)
            ts, fs, fps = sol.y
            fpps = np.array([problem.second_derivative(a, b, c) for a, b, c in zip(ts, fs, fps)])
            ev_top, ev_half, ev_over = sol.t_events[:3]
            hit_reduce = len(sol.t_events) > 3 and len(sol.t_events[3]) > 0
        else:
            sol, slope = _segment_reduced(problem, s, y[:2], theta, horizon, tol)
            ts, fs = sol.y
            fps = np.array([slope(a, b) for a, b in zip(ts, fs)])
            fpps = None
            ev_top, ev_half, ev_over = sol.t_events
            hit_reduce = False
        if sol.status < 0:
            raise ArithmeticError(f"ODE integration failed: {sol.message}")
        steps += len(sol.t) - 1
        later = ts > t0
        positivity &= bool(np.all(fps[later] > 0))
        if check_convex and fpps is not None:
            convexity &= bool(np.all(fpps[later] > 0))
        if len(ev_over):
            return OdeBracket(horizon, math.inf, NO_BLOWUP, theta, False, positivity, convexity,
                              steps, problem.kind, reduced_at)
        if hit_reduce:
            reduced = True
            reduced_at = float(sol.y_events[3][0][0])
            s = float(sol.t_events[3][0])
            y = np.array(sol.y_events[3][0])
            continue
        if not len(ev_top):
            return OdeBracket(float(ts[-1]), math.inf, NO_BLOWUP, theta, False, positivity,
                              convexity, steps, problem.kind, reduced_at)
        t_top = float(sol.y_events[0][0][0])
        t_half = float(sol.y_events[1][0][0]) if len(ev_half) else t0
        gap = t_top - t_half
        remainder = gap / (2.0**pexp - 1.0)
        confirmed = gap <= 1e-3 * max(t_top - t0, 1.0)
        span = max(abs(t_top), 1.0)
        if (confirmed and remainder <= tol * span) or theta * 1e8 > THETA_CAP:
            t_hi = t_top + remainder
            if not t_hi > t_top:
                t_hi = math.nextafter(t_top, math.inf)
            return OdeBracket(t_top, t_hi, THRESHOLD_CROSSED, theta, confirmed, positivity,
                              convexity, steps, problem.kind, reduced_at)
        s = float(ev_top[0])
        y = np.array(sol.y_events[0][0])
        if reduced:
            y = np.concatenate([y, [slope(y[0], y[1])]])
        theta *= 1e8


def substitute_log(problem: OdeProblem) -> OdeProblem:
    """t -> e^tau - 1 for the LemmaA1 form."""
    if problem.kind != "LemmaA1":
        raise ValueError("substitute_log applies to LemmaA1 problems")
    tau0 = math.log1p(problem.t0)
    a0 = math.exp((problem.beta - 1.0) * tau0)
    if not problem.C1 - a0 > 0:
        raise HypothesisViolation(f"C1 - e^((beta-1) tau0) = {problem.C1 - a0:.4g} <= 0")
    return replace(problem, kind="LemmaA1Log", t0=tau0, f0p=problem.f0p * (problem.t0 + 1.0))


def substitute_doublelog(problem: OdeProblem) -> OdeProblem:
    """t -> e^{e^tau - 1} - 1 for the LemmaA2 form."""
    if problem.kind != "LemmaA2":
        raise ValueError("substitute_doublelog applies to LemmaA2 problems")
    L = math.log1p(problem.t0)
    tau0 = math.log(L + 1.0)
    q = math.exp(-2.0 * math.expm1(tau0))
    margin = problem.C1 - q - q * math.exp(-tau0)
    if not margin > 0:
        raise HypothesisViolation(f"admissibility margin {margin:.4g} <= 0 at tau0={tau0:.4g}")
    return replace(problem, kind="LemmaA2DoubleLog", t0=tau0,
                   f0p=problem.f0p * (problem.t0 + 1.0) * (L + 1.0))


def back_map_log(tau):
    return math.expm1(tau) if tau < 709.0 else math.inf


def back_map_doublelog(tau):
    inner = math.expm1(tau) if tau < 709.0 else math.inf
    return math.expm1(inner) if inner < 709.0 else math.inf


def log_time_log(tau):
    """log(e^tau - 1) without overflow."""
    return tau + math.log1p(-math.exp(-tau))


def log_time_doublelog(tau):
    """log(e^{e^tau - 1} - 1) without overflow."""
    x = math.expm1(tau) if tau < 709.0 else math.inf
    return x + math.log1p(-math.exp(-x)) if math.isfinite(x) else math.inf


DEFAULT_C1 = {"LemmaA1": 3.0, "LemmaA2": 3.0, "LiZhouBase": 1.0}


@dataclass
class OdeSweepPoint:
    epsilon: float
    T_lo: float
    T_hi: float
    tau_blowup: float
    record: LifespanRecord = field(repr=False)


def blowup_record(kind: str, epsilon: float, beta: float | None = None, p: float = 3.0,
                  C1: float | None = None, C2: float = 1.0, tol: float = 1e-8) -> OdeSweepPoint:
    """Blow-up time for data f(0) = epsilon, f'(0) = 0, integrated in log time where applicable."""
    kind = canonical_kind(kind)
    C1 = DEFAULT_C1[kind] if C1 is None else C1
    base = OdeProblem(kind=kind, C1=C1, C2=C2, p=p, t0=0.0, f0=epsilon, f0p=0.0, beta=beta)
    if kind == "LemmaA1":
        prob, back, logt = substitute_log(base), back_map_log, log_time_log
    elif kind == "LemmaA2":
        prob, back, logt = substitute_doublelog(base), back_map_doublelog, log_time_doublelog
    else:
        prob, back, logt = base, float, lambda x: math.log(x)
    br = integrate_blowup(prob, tol)
    if not br.blew_up:
        rec = LifespanRecord(epsilon=epsilon, T_lo=back(br.T_lo), T_hi=math.inf, reason=NO_BLOWUP)
        return OdeSweepPoint(epsilon, rec.T_lo, math.inf, math.nan, rec)
    T_lo, T_hi = back(br.T_lo), back(br.T_hi)
    if not T_hi > T_lo and math.isfinite(T_lo):
        T_hi = math.nextafter(T_lo, math.inf)
    rec = LifespanRecord(epsilon=epsilon, T_lo=T_lo, T_hi=T_hi, reason=THRESHOLD_CROSSED,
                         theta_used=br.theta, confirmed=br.confirmed,
                         log_T=logt(0.5 * (br.T_lo + br.T_hi)))
    return OdeSweepPoint(epsilon, T_lo, T_hi, 0.5 * (br.T_lo + br.T_hi), rec)


REGIME_FOR_KIND = {"LemmaA1": "CriticalExp", "LemmaA2": "CriticalDoubleExp",
                   "LiZhouBase": "SubcriticalPoly"}


def scaling_points(kind, beta, p, epsilons, **kw) -> list:
    return [blowup_record(kind, float(e), beta, p, **kw) for e in epsilons]


def scaling_study(kind, beta, p, epsilons, **kw) -> ScalingFit:
    """Fit log T (LemmaA1), log log T (LemmaA2) against eps^-(p-1), or log T vs log eps (LiZhouBase)."""
    if len(epsilons) < 3:
        raise ValueError("a scaling study needs at least 3 epsilons")
    kind = canonical_kind(kind)
    pts = scaling_points(kind, beta, p, epsilons, **kw)
    return fit_scaling([pt.record for pt in pts], REGIME_FOR_KIND[kind], p)
