"""Method-of-lines integration of u_tt - Lap u + b(t) u_t = |u|^p on a periodic box.

Space is Fourier-spectral, time is classical RK4 on the first-order system
(u, v = u_t).  A growth controller halves the step whenever max|u| doubles
within ten accepted steps, which keeps the step proportional to the
remaining time near a blow-up.
"""

from __future__ import annotations

import json
import math
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .damping import AuxFunctions, DampingModel, compute_b_star
from .errors import PositivityViolation, SolverOverflow
from .heat_kernel import Grid
from .records import (DT_UNDERFLOW, NO_BLOWUP, OVERFLOW, THRESHOLD_CROSSED, BlowupDetector,
                      LifespanRecord)

DT_FLOOR = 1e-8
FLOOR_STEP_BUDGET = 100_000
GROWTH_WINDOW = 10
SNAPSHOT_MAGIC = b"NLDWSNP1"
_HEADER = struct.Struct("<8siidd")
assert _HEADER.size == 32

DATA_SHAPES = ("GaussianBump", "CompactBump", "Uniform")


@dataclass(frozen=True)
class InitialData:
    """u0 = amplitude_u0 * phi, u1 = amplitude_u1 * phi for a bump profile phi.

    ``GaussianBump``: phi = exp(-|x - offset|^2 / width^2).
    ``CompactBump``: phi = exp(1 - 1 / (1 - r^2/width^2)) inside r < width.
    ``Uniform``: phi = 1, whose Laplacian vanishes identically (ODE mode).
    """

    shape: str = "GaussianBump"
    amplitude_u0: float = 1.0
    amplitude_u1: float = 0.0
    width: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.shape not in DATA_SHAPES:
            raise ValueError(f"unknown data shape {self.shape!r}; expected one of {DATA_SHAPES}")
        if not self.width > 0:
            raise ValueError("width must be positive")

    @property
    def radius(self) -> float:
        """Support radius around the offset (infinite unless compact)."""
        return self.width if self.shape == "CompactBump" else math.inf

    def profile(self, grid: Grid) -> np.ndarray:
        if self.shape == "Uniform":
            return np.ones(grid.shape)
        r2 = sum((c - self.offset) ** 2 for c in grid.coords()) / self.width**2
        if self.shape == "GaussianBump":
            return np.exp(-r2)
        out = np.zeros(grid.shape)
        inside = r2 < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out

    def fields(self, grid: Grid):
        phi = self.profile(grid)
        return self.amplitude_u0 * phi, self.amplitude_u1 * phi


@dataclass(frozen=True)
class ProblemParams:
    n: int
    p: float
    epsilon: float
    model: DampingModel
    grid: Grid
    t_end: float
    cfl: float = 0.5
    nonlinearity_on: bool = True
    damping_on: bool = True
    theorem_regime: bool = False
    p_prime: float = field(init=False)
    p_F: float = field(init=False)

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.grid.n != self.n:
            raise ValueError(f"grid dimension {self.grid.n} differs from n={self.n}")
        if not self.t_end > 0 or not self.cfl > 0:
            raise ValueError("t_end and cfl must be positive")
        object.__setattr__(self, "p_prime", self.p / (self.p - 1.0))
        object.__setattr__(self, "p_F", 1.0 + 2.0 / self.n)

    @property
    def dt_base(self) -> float:
        return self.cfl * self.grid.dx


@dataclass
class SimState:
    t: float
    u: np.ndarray
    v: np.ndarray
    step_count: int = 0
    dt_current: float = math.nan


class SnapshotStore:
    """Decimated (t, u, v) history.

    When ``capacity`` entries are reached every other entry after the first
    is dropped and the stride doubles.  ``stride == 0`` keeps only the
    initial state.
    """

    def __init__(self, stride: int = 8, capacity: int = 4096):
        if stride < 0 or capacity < 4:
            raise ValueError("stride must be >= 0 and capacity >= 4")
        self.stride = stride
        self.capacity = capacity
        self.entries: list = []
        self.trajectory: list = []
        self.last_safe: SimState | None = None
        self.growth_reference = 0.0
        self.params: ProblemParams | None = None

    def __len__(self):
        return len(self.entries)

    def add(self, state: SimState):
        if self.entries and state.t <= self.entries[-1][0]:
            return
        self.entries.append((state.t, state.u.copy(), state.v.copy()))
        if len(self.entries) > self.capacity:
            self.entries = self.entries[:1] + self.entries[2::2]
            self.stride *= 2

    def offer(self, state: SimState):
        if self.stride and state.step_count % self.stride == 0:
            self.add(state)

    @property
    def times(self) -> np.ndarray:
        return np.array([e[0] for e in self.entries])


def initial_functional(grid: Grid, data: InitialData, b_star: float) -> float:
    """int (u0 + b* u1) dx on the grid."""
    u0, u1 = data.fields(grid)
    return grid.integrate(u0 + b_star * u1)


def init_state(params: ProblemParams, data: InitialData, aux: AuxFunctions | None = None) -> SimState:
    grid = params.grid
    u0, u1 = data.fields(grid)
    if params.theorem_regime:
        b_star = aux.b_star if aux is not None else compute_b_star(params.model)
        j = grid.integrate(u0 + b_star * u1)
        if j <= 0:
            raise PositivityViolation(f"int(u0 + b* u1) = {j:.6g} <= 0")
    eps = params.epsilon
    return SimState(t=0.0, u=eps * u0, v=eps * u1, step_count=0, dt_current=params.dt_base)


def _acceleration(t, u, v, params: ProblemParams):
    acc = params.grid.laplacian(u)
    if params.damping_on:
        acc = acc - params.model.b(t) * v
    if params.nonlinearity_on:
        acc = acc + np.abs(u) ** params.p
    return acc


def step(state: SimState, params: ProblemParams, aux: AuxFunctions | None = None,
         dt: float | None = None) -> SimState:
    """One classical RK4 step; raises :class:`SolverOverflow` on a non-finite result."""
    h = state.dt_current if dt is None else dt
    t, u, v = state.t, state.u, state.v
    with np.errstate(over="ignore", invalid="ignore"):
        a1 = _acceleration(t, u, v, params)
        u2, v2 = u + 0.5 * h * v, v + 0.5 * h * a1
        a2 = _acceleration(t + 0.5 * h, u2, v2, params)
        u3, v3 = u + 0.5 * h * v2, v + 0.5 * h * a2
        a3 = _acceleration(t + 0.5 * h, u3, v3, params)
        u4, v4 = u + h * v3, v + h * a3
        a4 = _acceleration(t + h, u4, v4, params)
        un = u + (h / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
        vn = v + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    if not (np.all(np.isfinite(un)) and np.all(np.isfinite(vn))):
        raise SolverOverflow(f"non-finite state after step from t={t}")
    return SimState(t=t + h, u=un, v=vn, step_count=state.step_count + 1,
                    dt_current=state.dt_current)


def energy(grid: Grid, u, v) -> float:
    return 0.5 * grid.integrate(v * v + grid.grad_sq(u))


@dataclass
class _Outcome:
    state: SimState
    reason: str
    crossings: dict
    bracket: tuple
    safe: SimState | None


def _integrate(params: ProblemParams, state: SimState, thresholds=(), stop_at=math.inf,
               growth_reference=0.0, store: SnapshotStore | None = None,
               window: int = GROWTH_WINDOW) -> _Outcome:
    grid = params.grid
    t_end = params.t_end
    pending = sorted(thresholds)
    crossings: dict = {}
    safe_level = 0.5 * min(thresholds) if thresholds else math.inf
    safe = state if float(np.max(np.abs(state.u))) < safe_level else None
    history: deque = deque(maxlen=window)
    floor_since = None
    floor_steps = 0
    while True:
        if state.t >= t_end * (1.0 - 1e-14):
            return _Outcome(state, NO_BLOWUP, crossings, (t_end, math.inf), safe)
        h = min(state.dt_current, t_end - state.t)
        try:
            new = step(state, params, dt=h)
        except SolverOverflow:
            bracket = (state.t, state.t + h)
            for th in pending:
                crossings[th] = bracket
            return _Outcome(state, OVERFLOW, crossings, bracket, safe)
        if new.t == state.t:
            return _Outcome(state, DT_UNDERFLOW, crossings, (floor_since or state.t, t_end), safe)
        m = float(np.max(np.abs(new.u)))
        while pending and m >= pending[0]:
            crossings[pending.pop(0)] = (state.t, new.t)
        prev = state
        state = new
        if store is not None:
            store.offer(state)
            store.trajectory.append((state.t, m, math.sqrt(grid.integrate(state.u**2)),
                                     energy(grid, state.u, state.v), h))
        if m < safe_level:
            safe = state
        if m >= stop_at:
            return _Outcome(state, THRESHOLD_CROSSED, crossings, (prev.t, state.t), safe)

        if m > 0 and m > 4.0 * growth_reference and history and m >= 2.0 * min(history):
            state.dt_current = max(0.5 * state.dt_current, DT_FLOOR)
            history.clear()
        else:
            history.append(m)
        if state.dt_current <= DT_FLOOR:
            floor_since = floor_since if floor_since is not None else state.t
            floor_steps += 1
            if floor_steps > FLOOR_STEP_BUDGET:
                return _Outcome(state, DT_UNDERFLOW, crossings, (floor_since, state.t), safe)


def _make_record(params: ProblemParams, detector: BlowupDetector | None, out: _Outcome) -> LifespanRecord:
    eps = params.epsilon
    if out.reason == NO_BLOWUP:
        return LifespanRecord(epsilon=eps, T_lo=params.t_end, T_hi=math.inf, reason=NO_BLOWUP,
                              theta_used=detector.theta if detector else math.nan,
                              crossings=dict(out.crossings))
    theta = detector.theta if detector else math.nan
    if detector and theta in out.crossings:
        t_lo, t_hi = out.crossings[theta]
    else:
        t_lo, t_hi = out.bracket
    if not t_hi > t_lo:
        t_hi = math.nextafter(t_lo, math.inf)
    confirmed = True
    ratio = math.nan
    if detector:
        half = 0.5 * theta
        if detector.confirm_doubling and out.reason == THRESHOLD_CROSSED:
            if theta in out.crossings and half in out.crossings:
                confirmed = out.crossings[theta][1] - out.crossings[half][1] < 10.0 * params.dt_base
            else:
                confirmed = False
        alts = [s for s in detector.insensitivity_span if s in out.crossings]
        if theta in out.crossings and len(alts) == len(detector.insensitivity_span):
            ref = out.crossings[theta][1]
            ratio = max((abs(out.crossings[s][1] - ref) / ref for s in alts), default=0.0)
    return LifespanRecord(epsilon=eps, T_lo=t_lo, T_hi=t_hi, reason=out.reason, theta_used=theta,
                          insensitivity_ratio=ratio, crossings=dict(out.crossings),
                          confirmed=confirmed, dt_final=t_hi - t_lo,
                          ratio_limit=detector.max_ratio if detector else 0.02)


def _detector_levels(detector: BlowupDetector | None):
    if detector is None:
        return (), math.inf
    levels = tuple(sorted({*detector.thresholds, 0.5 * detector.theta}))
    return levels, max(detector.thresholds)


def run(params: ProblemParams, data: InitialData, aux: AuxFunctions | None = None,
        detector: BlowupDetector | None = None, snapshot_stride: int = 8,
        capacity: int = 4096):
    """Integrate to ``t_end`` or until the detector's largest threshold is crossed.

    Returns ``(store, record)``; ``record.reason`` is ``NoBlowupWithinHorizon``
    when the horizon is reached.
    """
    state = init_state(params, data, aux)
    store = SnapshotStore(snapshot_stride, capacity)
    store.params = params
    store.add(state)
    m0 = float(np.max(np.abs(state.u)))
    store.growth_reference = max(m0, float(np.max(np.abs(state.v))))
    grid = params.grid
    store.trajectory.append((0.0, m0, math.sqrt(grid.integrate(state.u**2)),
                             energy(grid, state.u, state.v), 0.0))
    if detector is not None:
        detector.check_initial(m0)
    levels, stop_at = _detector_levels(detector)
    out = _integrate(params, state, levels, stop_at, store.growth_reference, store)
    if store.entries[-1][0] < out.state.t:
        store.add(out.state)
    store.last_safe = out.safe
    return store, _make_record(params, detector, out)


def refine_from(params: ProblemParams, safe: SimState, detector: BlowupDetector,
                growth_reference: float, factor: int = 4) -> LifespanRecord:
    """Re-integrate the final window from ``safe`` with the step divided by ``factor``.

    The growth window is widened by the same factor so the controller keeps
    the finer step all the way into the singularity.
    """
    start = replace(safe, dt_current=safe.dt_current / factor)
    levels, stop_at = _detector_levels(detector)
    out = _integrate(params, start, levels, stop_at, growth_reference, None,
                     window=GROWTH_WINDOW * factor)
    return _make_record(params, detector, out)


# snapshot files -------------------------------------------------------------

def write_field(path, grid: Grid, t: float, values: np.ndarray):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, grid.n, grid.N, float(grid.L), float(t)))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_field(path):
    raw = Path(path).read_bytes()
    magic, n, N, L, t = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape((N,) * n)
    return Grid(n, L, N), t, values.copy()


def write_snapshots(directory, store: SnapshotStore, params: ProblemParams, data: InitialData):
    """Dump each snapshot as ``u_<k>.bin`` / ``v_<k>.bin`` plus ``run.json`` metadata."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, (t, u, v) in enumerate(store.entries):
        write_field(d / f"u_{k:06d}.bin", params.grid, t, u)
        write_field(d / f"v_{k:06d}.bin", params.grid, t, v)
    meta = {
        "n": params.n, "p": params.p, "epsilon": params.epsilon, "beta": params.model.beta,
        "L": params.grid.L, "N": params.grid.N, "cfl": params.cfl, "t_end": params.t_end,
        "nonlinearity_on": params.nonlinearity_on, "damping_on": params.damping_on,
        "stride": store.stride, "count": len(store.entries),
        "data": {"shape": data.shape, "amplitude_u0": data.amplitude_u0,
                 "amplitude_u1": data.amplitude_u1, "width": data.width, "offset": data.offset},
    }
    (d / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_snapshots(directory):
    """Inverse of :func:`write_snapshots`: returns ``(params, data, store)``."""
    d = Path(directory)
    meta = json.loads((d / "run.json").read_text())
    grid = Grid(meta["n"], meta["L"], meta["N"])
    params = ProblemParams(n=meta["n"], p=meta["p"], epsilon=meta["epsilon"],
                           model=DampingModel(meta["beta"]), grid=grid, t_end=meta["t_end"],
                           cfl=meta["cfl"], nonlinearity_on=meta["nonlinearity_on"],
                           damping_on=meta["damping_on"])
    data = InitialData(**meta["data"])
    store = SnapshotStore(meta["stride"], max(4, meta["count"]))
    store.params = params
    for k in range(meta["count"]):
        g_u, t, u = read_field(d / f"u_{k:06d}.bin")
        _, _, v = read_field(d / f"v_{k:06d}.bin")
        if g_u != grid:
            raise ValueError(f"snapshot {k} grid {g_u} differs from run metadata")
        store.entries.append((t, u, v))
    return params, data, store
