"""Damping coefficient b(t) = (t+1)^(-beta) and the auxiliary functions g, G, Gamma.

The auxiliary function g solves g' = b g - 1 with g(0) = b*.  Neither that ODE
(its homogeneous mode grows like exp(B(t))) nor the explicit product formula
(exp(B(t)) overflows) is usable in floating point, so g is evaluated from the
equivalent tail integral

    g(t) = int_0^inf exp(-[B(t+s) - B(t)]) ds,

and g' from the cancellation-free companion

    g'(t) = b(t) g(t) - 1 = int_0^inf (b(t) - b(t+s)) exp(-[B(t+s) - B(t)]) ds,

which follows from int_0^inf b(t+s) exp(-[B(t+s) - B(t)]) ds = 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import PchipInterpolator

from .errors import NonConvergent, OutOfRange

log = logging.getLogger(__name__)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
_PANEL_GROWTH = 1.25
_PANELS_PER_CHUNK = 64
MAX_PANELS = 10**7


@dataclass(frozen=True)
class DampingModel:
    """Power-law damping b(t) = (t+1)^(-beta).

    Any real beta is representable; quantities that need beta < 1 raise
    :class:`NonConvergent` themselves.  ``beta == 0`` (classical damping) is
    outside the admissible damping class and is reported through
    :attr:`classical`.
    """

    beta: float
    form: str = "PowerLaw"

    def __post_init__(self):
        if self.form != "PowerLaw":
            raise ValueError(f"unknown damping form {self.form!r}")
        if not math.isfinite(self.beta):
            raise ValueError("beta must be finite")

    @property
    def classical(self) -> bool:
        return self.beta == 0.0

    @property
    def theorem_regime(self) -> bool:
        return -1.0 <= self.beta < 1.0 and self.beta != 0.0

    def b(self, t):
        return np.power(np.add(t, 1.0), -self.beta)

    def db(self, t):
        return -self.beta * np.power(np.add(t, 1.0), -self.beta - 1.0)

    def d2b(self, t):
        return self.beta * (self.beta + 1.0) * np.power(np.add(t, 1.0), -self.beta - 2.0)

    def B(self, t):
        """int_0^t b(s) ds."""
        lt = np.log1p(t)
        a = 1.0 - self.beta
        if a == 0.0:
            return lt
        return np.expm1(a * lt) / a

    def delta_B(self, t, s):
        """B(t+s) - B(t), evaluated without cancellation for s << t."""
        t = np.asarray(t, dtype=float)
        r = np.log1p(np.asarray(s, dtype=float) / (t + 1.0))
        a = 1.0 - self.beta
        if a == 0.0:
            return r
        return np.power(t + 1.0, a) * np.expm1(a * r) / a

    def b_drop(self, t, s):
        """b(t) - b(t+s), evaluated without cancellation."""
        t = np.asarray(t, dtype=float)
        r = np.log1p(np.asarray(s, dtype=float) / (t + 1.0))
        return -np.power(t + 1.0, -self.beta) * np.expm1(-self.beta * r)


def _require_decay(model: DampingModel):
    if model.beta >= 1.0:
        raise NonConvergent(
            f"beta={model.beta} >= 1: B(t) grows at most logarithmically, so "
            "int_0^inf exp(-B) may diverge"
        )


def _tail_integral(model: DampingModel, t: float, tol: float, derivative: bool) -> float:
    """Panelled Gauss-Legendre quadrature of the tail integrals for g or g'.

    Panels grow geometrically from a width set by the local decay rate b(t).
    Integration stops at the first panel whose contribution is below
    ``tol`` times the running sum, provided exp(-Delta B) has also dropped
    below tol * e^-10 there.
    """
    _require_decay(model)
    bt = float(model.b(t))
    width = 0.25 / bt
    start = 0.0
    total = 0.0
    used = 0
    k = np.arange(_PANELS_PER_CHUNK)
    stop_exponent = math.log(1.0 / tol) + 10.0
    while used < MAX_PANELS:
        widths = width * _PANEL_GROWTH**k
        edges = start + np.concatenate(([0.0], np.cumsum(widths)))
        lo, hi = edges[:-1], edges[1:]
        half = 0.5 * (hi - lo)
        s = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_NODES
        f = np.exp(-model.delta_B(t, s))
        if derivative:
            f = f * model.b_drop(t, s)
        contrib = (f @ _GL_WEIGHTS) * half
        running = total + np.cumsum(contrib)
        done = (np.abs(contrib) <= tol * np.abs(running)) & (model.delta_B(t, hi) > stop_exponent)
        if done.any():
            return float(running[np.argmax(done)])
        total = float(running[-1])
        start = float(edges[-1])
        width = float(widths[-1]) * _PANEL_GROWTH
        used += _PANELS_PER_CHUNK
    raise NonConvergent(f"tail quadrature at t={t} did not settle within {MAX_PANELS} panels")


def compute_b_star(model: DampingModel, tol: float = 1e-12) -> float:
    """b* = int_0^inf exp(-B(tau)) dtau."""
    if model.classical:
        return 1.0
    return _tail_integral(model, 0.0, tol, derivative=False)


def compute_g(model: DampingModel, t: float, tol: float = 1e-12) -> float:
    if t < 0:
        raise OutOfRange(f"g is defined for t >= 0, got {t}")
    if model.classical:
        return 1.0
    return _tail_integral(model, float(t), tol, derivative=False)


def compute_gprime(model: DampingModel, t: float, tol: float = 1e-12) -> float:
    if t < 0:
        raise OutOfRange(f"g' is defined for t >= 0, got {t}")
    if model.classical:
        return 0.0
    return _tail_integral(model, float(t), tol, derivative=True)


@dataclass(frozen=True)
class AuxFunctions:
    """Dense curves of g, g', G, Gamma on a geometric time grid.

    Immutable once built; queries between nodes use monotone cubic
    interpolation.
    """

    model: DampingModel
    b_star: float
    t_grid: np.ndarray
    g_grid: np.ndarray
    gprime_grid: np.ndarray
    G_grid: np.ndarray
    Gamma_grid: np.ndarray
    t_max: float
    tol_quad: float
    flags: tuple = ()
    _interp: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("t_grid", "g_grid", "gprime_grid", "G_grid", "Gamma_grid"):
            getattr(self, name).setflags(write=False)
        for name, ys in (("g", self.g_grid), ("gprime", self.gprime_grid),
                         ("G", self.G_grid), ("Gamma", self.Gamma_grid)):
            self._interp[name] = PchipInterpolator(self.t_grid, ys, extrapolate=False)

    def _query(self, name, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0) or np.any(t_arr > self.t_max * (1 + 1e-12)):
            raise OutOfRange(f"t outside the cached grid [0, {self.t_max}]")
        out = self._interp[name](np.clip(t_arr, 0.0, self.t_max))
        return float(out) if out.ndim == 0 else out

    def g(self, t):
        return self._query("g", t)

    def gprime(self, t):
        return self._query("gprime", t)

    def G(self, t):
        return self._query("G", t)

    def Gamma(self, t):
        return self._query("Gamma", t)

    def b(self, t):
        return self.model.b(t)


def build_aux(model: DampingModel, t_max: float, n_samples: int = 2049,
              tol: float = 1e-12) -> AuxFunctions:
    """Tabulate g, g', G, Gamma on nodes with log(t+1) uniformly spaced.

    G and Gamma are cumulative composite-Simpson integrals taken in the
    variable log(t+1), where the grid is uniform.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if n_samples < 16:
        raise ValueError("n_samples must be at least 16")
    _require_decay(model)
    flags = ()
    if model.classical:
        flags = ("classical-damping",)
        log.warning("beta=0 (classical damping) lies outside the admissible damping class")
    elif not model.theorem_regime:
        flags = ("outside-theorem-range",)

    logt = np.linspace(0.0, math.log1p(t_max), n_samples)
    t = np.expm1(logt)
    t[-1] = t_max
    if model.classical:
        g = np.ones_like(t)
        gp = np.zeros_like(t)
        G = t.copy()
        Gamma = t.copy()
        b_star = 1.0
    else:
        g = np.array([_tail_integral(model, ti, tol, derivative=False) for ti in t])
        gp = np.array([_tail_integral(model, ti, tol, derivative=True) for ti in t])
        jac = t + 1.0
        G = cumulative_simpson(g * jac, x=logt, initial=0.0)
        Gamma = cumulative_simpson(jac / g, x=logt, initial=0.0)
        b_star = compute_b_star(model, tol)
    return AuxFunctions(model=model, b_star=b_star, t_grid=t, g_grid=g, gprime_grid=gp,
                        G_grid=G, Gamma_grid=Gamma, t_max=float(t_max), tol_quad=tol,
                        flags=flags)


@dataclass
class Lemma22Report:
    t: float
    bg_minus_1: float
    gprime_ratio: float
    G_slope: float
    G_slope_expected: float
    Gamma_slope: float
    Gamma_slope_expected: float
    passed: dict

    @property
    def ok(self) -> bool:
        return all(v for v in self.passed.values() if v is not None)


def validate_lemma22(aux: AuxFunctions, t_probe: float, bg_tol: float = 0.05,
                     ratio_band: tuple = (0.8, 1.2), slope_tol: float = 0.1) -> Lemma22Report:
    """Check the large-time behaviour of g, G and Gamma at ``t_probe``.

    Slopes are local logarithmic derivatives computed from g itself:
    d log(G+1)/d log(t+1) = g (t+1) / (G+1), and similarly for Gamma.  For
    beta = -1 the G slope is taken against log(t+1)+1 instead of t+1.
    """
    if not 0 < t_probe <= aux.t_max:
        raise OutOfRange(f"t_probe={t_probe} outside the cached grid (0, {aux.t_max}]")
    m = aux.model
    g = aux.g(t_probe)
    gp = aux.gprime(t_probe)
    G = aux.G(t_probe)
    Gam = aux.Gamma(t_probe)
    b = float(m.b(t_probe))
    bg1 = b * g - 1.0
    inv_b_prime = -float(m.db(t_probe)) / b**2
    ratio = gp / inv_b_prime if inv_b_prime != 0.0 else math.nan

    tp1 = t_probe + 1.0
    if m.beta == -1.0:
        G_slope = g * tp1 * (math.log(tp1) + 1.0) / (G + 1.0)
        G_expected = 1.0
    else:
        G_slope = g * tp1 / (G + 1.0)
        G_expected = m.beta + 1.0
    Gamma_slope = tp1 / g / (Gam + 1.0)
    Gamma_expected = 1.0 - m.beta

    passed = {
        "bg_minus_1": abs(bg1) <= bg_tol,
        "gprime_ratio": None if math.isnan(ratio) else ratio_band[0] <= ratio <= ratio_band[1],
        "G_slope": abs(G_slope - G_expected) <= slope_tol,
        "Gamma_slope": abs(Gamma_slope - Gamma_expected) <= slope_tol,
    }
    return Lemma22Report(t=t_probe, bg_minus_1=bg1, gprime_ratio=ratio, G_slope=G_slope,
                         G_slope_expected=G_expected, Gamma_slope=Gamma_slope,
                         Gamma_slope_expected=Gamma_expected, passed=passed)


def aux_table(aux: AuxFunctions):
    """Rows (t, b, g, gprime, G, Gamma, bg_minus_1) at the grid nodes."""
    b = aux.model.b(aux.t_grid)
    return np.column_stack([aux.t_grid, b, aux.g_grid, aux.gprime_grid, aux.G_grid,
                            aux.Gamma_grid, b * aux.g_grid - 1.0])
