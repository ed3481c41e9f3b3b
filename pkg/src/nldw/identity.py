"""Heat-kernel test-function identity A + B = C + D + E along a stored run.

With W = G(t) + 1 and the backward kernel time tau(s) = 2G(t) - G(s) + 1:

    A = int exp(-|x|^2/4W) u(t)
    B = g(t) int exp(-|x|^2/4W) u_t(t)
    C = eps (4 pi W)^(n/2) int K(2G(t)+1) (u0 + g(0) u1)
    D = (4 pi W)^(n/2) int_0^t g(s) int K(tau(s)) |u(s)|^p ds
    E = -(4 pi W)^(n/2) int_0^t g(s)^2 int dK/dtau(tau(s)) u_s(s) ds

where K is the heat kernel.  The identity is exact for solutions of the
equation; its numerical residual measures time-stepping, snapshot
quadrature, auxiliary-function and box-truncation errors together.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .damping import AuxFunctions
from .errors import InsufficientSnapshots, NldwError, OutOfRange
from .heat_kernel import ADMISSIBLE_WIDTHS, Grid, check_admissible, dt_multiplier, gaussian_values
from .solver import InitialData, SimState, SnapshotStore

MIN_SNAPSHOTS = 4
REPORT_COLUMNS = ("t", "A", "B", "C", "D", "E", "residual", "relative_residual", "H", "J0")


def _weight(grid: Grid, W: float) -> np.ndarray:
    return np.exp(-grid.r2 / (4.0 * W))


def term_A(state: SimState, aux: AuxFunctions, grid: Grid) -> float:
    W = aux.G(state.t) + 1.0
    return grid.integrate(_weight(grid, W) * state.u)


def term_B(state: SimState, aux: AuxFunctions, grid: Grid) -> float:
    W = aux.G(state.t) + 1.0
    return aux.g(state.t) * grid.integrate(_weight(grid, W) * state.v)


def term_C(t: float, aux: AuxFunctions, data: InitialData, epsilon: float, grid: Grid) -> float:
    G = aux.G(t)
    tau = 2.0 * G + 1.0
    check_admissible(grid, tau)
    u0, u1 = data.fields(grid)
    pref = (4.0 * math.pi * (G + 1.0)) ** (0.5 * grid.n)
    kernel = gaussian_values(grid.r2, tau, grid.n)
    return epsilon * pref * grid.integrate(kernel * (u0 + aux.g(0.0) * u1))


def _upto(store: SnapshotStore, t: float) -> int:
    """Number of snapshots with time <= t; t itself must be a snapshot time."""
    if len(store) < MIN_SNAPSHOTS:
        raise InsufficientSnapshots(f"{len(store)} snapshots stored; need at least {MIN_SNAPSHOTS}")
    times = store.times
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise OutOfRange(f"t={t} is not a stored snapshot time")
    return k + 1


def _history_integral(store: SnapshotStore, aux: AuxFunctions, t: float, which: str) -> float:
    grid = store.params.grid
    n = grid.n
    k = _upto(store, t)
    if k == 1:
        return 0.0
    Gt = aux.G(t)
    check_admissible(grid, 2.0 * Gt + 1.0)
    pref = (4.0 * math.pi * (Gt + 1.0)) ** (0.5 * n)
    r2 = grid.r2
    s = store.times[:k]
    Gs = aux.G(s)
    gs = aux.g(s)
    inner = np.empty(k)
    for j in range(k):
        tau = 2.0 * Gt - Gs[j] + 1.0
        kern = gaussian_values(r2, tau, n)
        _, u, v = store.entries[j]
        if which == "D":
            inner[j] = gs[j] * grid.integrate(kern * np.abs(u) ** store.params.p)
        else:
            inner[j] = gs[j] ** 2 * grid.integrate(dt_multiplier(r2, tau, n) * kern * v)
    total = pref * trapezoid(inner, s)
    return total if which == "D" else -total


def term_D(store: SnapshotStore, aux: AuxFunctions, t: float) -> float:
    """Nonlinear source term, trapezoid over the snapshots in [0, t]."""
    return _history_integral(store, aux, t, "D")


def term_E(store: SnapshotStore, aux: AuxFunctions, t: float) -> float:
    return _history_integral(store, aux, t, "E")


def functional_H(t: float, aux: AuxFunctions, data: InitialData, grid: Grid) -> float:
    """Initial-data functional whose large-time limit is J0."""
    G = aux.G(t)
    tau = 2.0 * G + 1.0
    check_admissible(grid, tau)
    n = grid.n
    g0 = aux.g(0.0)
    u0, u1 = data.fields(grid)
    q = grid.r2 / (4.0 * tau)
    e = np.exp(-q)
    scale = ((G + 1.0) / tau) ** (0.5 * n)
    first = grid.integrate(e * (u0 + g0 * u1))
    second = n * g0**2 / (2.0 * tau) * grid.integrate(e * u0)
    third = g0**2 / tau * grid.integrate(q * e * u0)
    return scale * (first + second - third)


def estimate_J0(aux: AuxFunctions, data: InitialData, grid: Grid) -> float:
    """2^(-n/2) int (u0 + b* u1) by grid quadrature."""
    u0, u1 = data.fields(grid)
    return 2.0 ** (-0.5 * grid.n) * grid.integrate(u0 + aux.b_star * u1)


def admissibility_margin(aux: AuxFunctions, grid: Grid, t: float) -> float:
    """L / (8 sqrt(2G(t)+1)); values below 1 mean the box is too small."""
    return grid.L / (ADMISSIBLE_WIDTHS * math.sqrt(2.0 * aux.G(t) + 1.0))


@dataclass
class IdentityReport:
    times: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    residual: np.ndarray
    relative_residual: np.ndarray
    H: np.ndarray
    J0: float
    margin: np.ndarray
    errors: dict = field(default_factory=dict)

    @property
    def max_relative_residual(self) -> float:
        rr = self.relative_residual[np.isfinite(self.relative_residual)]
        return float(rr.max()) if rr.size else math.nan

    def rows(self):
        for k in range(len(self.times)):
            yield (self.times[k], self.A[k], self.B[k], self.C[k], self.D[k], self.E[k],
                   self.residual[k], self.relative_residual[k], self.H[k], self.J0)


def identity_report(store: SnapshotStore, aux: AuxFunctions, data: InitialData, epsilon: float,
                    times) -> IdentityReport:
    """Evaluate every term at each requested time.

    Requested times snap to the nearest stored snapshot time.  When the run
    had the nonlinearity switched off, D is still reported but left out of
    the balance.  A failure at one time becomes a NaN row plus an entry in
    ``errors``.
    """
    if store.params is None:
        raise ValueError("snapshot store carries no problem parameters")
    grid = store.params.grid
    with_source = store.params.nonlinearity_on
    snap_t = store.times
    idx = sorted({int(np.argmin(np.abs(snap_t - t))) for t in times})
    m = len(idx)
    cols = {k: np.full(m, math.nan) for k in ("A", "B", "C", "D", "E", "H", "margin")}
    errors = {}
    for i, j in enumerate(idx):
        t = float(snap_t[j])
        t_, u, v = store.entries[j]
        state = SimState(t_, u, v)
        try:
            cols["margin"][i] = admissibility_margin(aux, grid, t)
            cols["A"][i] = term_A(state, aux, grid)
            cols["B"][i] = term_B(state, aux, grid)
            cols["C"][i] = term_C(t, aux, data, epsilon, grid)
            cols["D"][i] = term_D(store, aux, t)
            cols["E"][i] = term_E(store, aux, t)
            cols["H"][i] = functional_H(t, aux, data, grid)
        except NldwError as exc:
            errors[t] = f"{type(exc).__name__}: {exc}"
    A, B, C, D, E = (cols[k] for k in "ABCDE")
    D_bal = D if with_source else np.zeros_like(D)
    residual = np.abs(A + B - C - D_bal - E)
    total = np.abs(A) + np.abs(B) + np.abs(C) + np.abs(D_bal) + np.abs(E)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(total > 0, residual / total, 0.0)
    rel[~np.isfinite(residual)] = math.nan
    return IdentityReport(times=snap_t[idx], A=A, B=B, C=C, D=D, E=E, residual=residual,
                          relative_residual=rel, H=cols["H"], J0=estimate_J0(aux, data, grid),
                          margin=cols["margin"], errors=errors)


def write_report_csv(report: IdentityReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for row in report.rows():
            w.writerow([repr(float(x)) for x in row])
