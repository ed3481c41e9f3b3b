"""Lifespan estimation, epsilon sweeps and scaling-law fits."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .damping import AuxFunctions
from .errors import InsufficientPoints, NldwError
from .records import FAILED, BlowupDetector, LifespanRecord
from .solver import InitialData, ProblemParams, refine_from, run

log = logging.getLogger(__name__)

REGIMES = ("SubcriticalPoly", "CriticalExp", "CriticalDoubleExp")
SWEEP_COLUMNS = ("epsilon", "T_lo", "T_hi", "reason", "theta", "insensitivity_ratio")
FIT_COLUMNS = ("regime", "slope", "intercept", "r_squared", "n_points")


def subcritical_exponent(n: int, p: float, beta: float) -> float:
    """Predicted slope of log T against log eps below the Fujita exponent."""
    return -1.0 / ((1.0 / (p - 1.0) - 0.5 * n) * (1.0 + beta))


def estimate_lifespan(params: ProblemParams, data: InitialData, aux: AuxFunctions | None = None,
                      detector: BlowupDetector | None = None, refine: bool = True) -> LifespanRecord:
    """Bracket the blow-up time of the run with amplitude ``params.epsilon``.

    After a detection the last window is integrated again from the last
    state below theta_min/2 with a quarter of the step; the finer run
    supplies the bracket and the threshold-insensitivity ratio.
    """
    if not params.nonlinearity_on:
        raise ValueError("lifespan estimation needs the nonlinearity switched on")
    detector = detector or BlowupDetector()
    if params.epsilon == 0:
        return LifespanRecord(epsilon=0.0, T_lo=params.t_end, T_hi=math.inf,
                              reason="NoBlowupWithinHorizon", theta_used=detector.theta)
    store, record = run(params, data, aux, detector, snapshot_stride=0)
    if record.blew_up and refine and store.last_safe is not None:
        finer = refine_from(params, store.last_safe, detector, store.growth_reference)
        if finer.blew_up:
            record = finer
    return record


def _sweep_point(args):
    params, data, aux, detector = args
    try:
        return estimate_lifespan(params, data, aux, detector)
    except (NldwError, ValueError, FloatingPointError) as exc:
        return LifespanRecord(epsilon=params.epsilon, T_lo=math.nan, T_hi=math.nan,
                              reason=FAILED, message=f"{type(exc).__name__}: {exc}")


def worker_count() -> int:
    env = os.environ.get("NLDW_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def sweep(template: ProblemParams, epsilons, data: InitialData, aux: AuxFunctions | None = None,
          detector: BlowupDetector | None = None, workers: int | None = None) -> list:
    """One independent lifespan estimate per epsilon, returned in input order.

    Failures become records with reason ``Failed``; they never abort the
    sweep.
    """
    eps = [float(e) for e in epsilons]
    if any(e <= 0 for e in eps):
        raise ValueError("epsilons must be positive")
    if any(a <= b for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    if not eps:
        return []
    jobs = [(replace(template, epsilon=e), data, aux, detector or BlowupDetector()) for e in eps]
    workers = min(workers or worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_sweep_point, jobs))
    else:
        records = [_sweep_point(j) for j in jobs]
    if not is_monotone(records):
        log.warning("lifespan is not monotone in epsilon across this sweep")
    return records


def is_monotone(records) -> bool:
    """True when T never increases as epsilon increases (blown-up records only)."""
    pts = sorted((r.epsilon, r.T) for r in records if r.blew_up)
    return all(b[1] <= a[1] for a, b in zip(pts, pts[1:]))


@dataclass(frozen=True)
class ScalingFit:
    regime: str
    xs: np.ndarray
    ys: np.ndarray
    slope: float
    intercept: float
    r_squared: float

    @property
    def n_points(self) -> int:
        return len(self.xs)


def transform(records, regime: str, p: float | None = None):
    """Map accepted records to the regime's straight-line coordinates."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if regime != "SubcriticalPoly" and p is None:
        raise ValueError(f"regime {regime} needs the exponent p")
    usable = sorted((r for r in records if r.accepted), key=lambda r: (r.epsilon, r.T_lo))
    eps = np.array([r.epsilon for r in usable], dtype=float)
    logT = np.array([r.log_lifespan for r in usable], dtype=float)
    if regime == "SubcriticalPoly":
        return np.log(eps), logT
    xs = eps ** (-(p - 1.0))
    if regime == "CriticalExp":
        return xs, logT
    with np.errstate(invalid="ignore", divide="ignore"):
        ys = np.log(logT)
    keep = np.isfinite(ys)
    return xs[keep], ys[keep]


def fit_scaling(records, regime: str, p: float | None = None) -> ScalingFit:
    """Least-squares line through the transformed lifespans.

    ``SubcriticalPoly``: (log eps, log T).  ``CriticalExp``: (eps^-(p-1), log T).
    ``CriticalDoubleExp``: (eps^-(p-1), log log T).
    """
    xs, ys = transform(records, regime, p)
    if len(xs) < 3:
        raise InsufficientPoints(f"{len(xs)} usable records; a fit needs at least 3")
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(regime, xs, ys, float(slope), float(intercept), min(1.0, max(0.0, r2)))


# file formats ---------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating, int)) and not isinstance(x, bool) else str(x)


def write_sweep_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in records:
            w.writerow([_fmt(r.epsilon), _fmt(r.T_lo), _fmt(r.T_hi), r.reason,
                        _fmt(r.theta_used), _fmt(r.insensitivity_ratio)])


def read_sweep_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(SWEEP_COLUMNS) - set(rows[0]):
        raise ValueError(f"{path}: expected columns {SWEEP_COLUMNS}")
    return [LifespanRecord(epsilon=float(r["epsilon"]), T_lo=float(r["T_lo"]), T_hi=float(r["T_hi"]),
                           reason=r["reason"], theta_used=float(r["theta"]),
                           insensitivity_ratio=float(r["insensitivity_ratio"]))
            for r in rows]


def write_fit_csv(fit: ScalingFit, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIT_COLUMNS)
        w.writerow([fit.regime, _fmt(fit.slope), _fmt(fit.intercept), _fmt(fit.r_squared),
                    fit.n_points])


def svg_polyline(xs, ys, width: int = 480, height: int = 320, pad: int = 40,
                 xlabel: str = "x", ylabel: str = "y") -> str:
    """A bare SVG document drawing the points (xs, ys) as one polyline."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    order = np.argsort(xs, kind="stable")
    xs, ys = xs[order], ys[order]

    def scale(v, lo, hi, a, b):
        return a + (b - a) * ((v - lo) / (hi - lo) if hi > lo else 0.5)

    pts = " ".join(
        f"{scale(x, xs.min(), xs.max(), pad, width - pad):.2f},"
        f"{scale(y, ys.min(), ys.max(), height - pad, pad):.2f}"
        for x, y in zip(xs, ys)) if len(xs) else ""
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n'
        f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1.5"/>\n'
        f'<text x="{width // 2}" y="{height - 8}" text-anchor="middle">{xlabel}</text>\n'
        f'<text x="12" y="{height // 2}" transform="rotate(-90 12 {height // 2})" '
        f'text-anchor="middle">{ylabel}</text>\n'
        "</svg>\n"
    )


def write_svg(fit: ScalingFit, path):
    labels = {"SubcriticalPoly": ("log eps", "log T"), "CriticalExp": ("eps^-(p-1)", "log T"),
              "CriticalDoubleExp": ("eps^-(p-1)", "log log T")}
    xl, yl = labels[fit.regime]
    Path(path).write_text(svg_polyline(fit.xs, fit.ys, xlabel=xl, ylabel=yl))
