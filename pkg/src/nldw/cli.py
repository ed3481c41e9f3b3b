"""Command-line front end: ``nldw <subcommand> ...``.

Exit status: 0 success, 1 bad config or arguments, 2 missing inputs,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .damping import DampingModel, aux_table, build_aux, validate_lemma22
from .errors import ConfigParseError, ConfigValidationError, NldwError
from .identity import identity_report, write_report_csv
from .lifespan import (fit_scaling, read_sweep_csv, sweep, write_fit_csv, write_svg,
                       write_sweep_csv)
from .ode_lab import REGIME_FOR_KIND, canonical_kind, scaling_points
from .config import ExperimentConfig, parse_config
from .solver import read_snapshots, run, write_snapshots
from .lifespan import FIT_COLUMNS

log = logging.getLogger("nldw")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3
AUX_COLUMNS = ("t", "b", "g", "gprime", "G", "Gamma", "bg_minus_1")
TRAJECTORY_COLUMNS = ("t", "max_abs_u", "l2_u", "energy", "dt")
ODE_COLUMNS = ("epsilon", "T_lo", "T_hi", "tau_blowup")


class MissingInput(Exception):
    pass


def _num(x) -> str:
    return repr(float(x))


@contextmanager
def atomic_output(path):
    """Write to ``path.partial`` and rename on success; the partial file stays on failure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    yield tmp
    os.replace(tmp, path)


def _write_rows(path, header, rows):
    with atomic_output(path) as tmp, open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"config file {p} not found")
    return parse_config(p.read_text())


def _epsilon_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


# stages -------------------------------------------------------------------------

def stage_aux(cfg: ExperimentConfig | None, out, beta=None, t_max=None, t_probe=None,
              n_samples=None):
    model = DampingModel(beta if beta is not None else cfg.get("damping", "beta"))
    t_max = t_max if t_max is not None else cfg.get("aux", "t_max")
    if n_samples is None:
        n_samples = cfg.get("aux", "n_samples") if cfg else 2049
    aux = build_aux(model, t_max, n_samples)
    _write_rows(out, AUX_COLUMNS, ([_num(x) for x in row] for row in aux_table(aux)))
    if t_probe is None and cfg is not None and not math.isnan(cfg.get("aux", "t_probe")):
        t_probe = cfg.get("aux", "t_probe")
    if t_probe is not None:
        rep = validate_lemma22(aux, t_probe)
        print(f"t={t_probe:g} bg-1={rep.bg_minus_1:.3g} g'-ratio={rep.gprime_ratio:.4g} "
              f"G-slope={rep.G_slope:.4g}/{rep.G_slope_expected:g} "
              f"Gamma-slope={rep.Gamma_slope:.4g}/{rep.Gamma_slope_expected:g} "
              f"{'ok' if rep.ok else 'FAILED'}")
    return [str(out)]


def stage_simulate(cfg: ExperimentConfig, out, snapshot_dir=None):
    params = cfg.params()
    data = cfg.data
    aux = None
    if params.theorem_regime:
        aux = build_aux(params.model, params.t_end, 257)
    detector = cfg.detector if params.nonlinearity_on else None
    stride = cfg.get("output", "snapshot_stride")
    store, record = run(params, data, aux, detector, snapshot_stride=stride,
                        capacity=1 << 16)
    _write_rows(out, TRAJECTORY_COLUMNS,
                ([_num(x) for x in row] for row in store.trajectory))
    written = [str(out)]
    if snapshot_dir:
        write_snapshots(snapshot_dir, store, params, data)
        written.append(str(snapshot_dir))
    print(f"{record.reason}: T in [{record.T_lo:.10g}, {record.T_hi:.10g}]")
    return written


def stage_sweep(cfg: ExperimentConfig, out, epsilons=None, svg=None):
    eps = epsilons if epsilons is not None else cfg.epsilons
    if not eps:
        raise ValueError("sweep needs a list of epsilons")
    records = sweep(cfg.params(eps[0]), eps, cfg.data, None, cfg.detector)
    with atomic_output(out) as tmp:
        write_sweep_csv(records, tmp)
    written = [str(out)]
    for r in records:
        if not r.accepted:
            print(f"epsilon={r.epsilon:g}: flagged ({r.reason}{'; ' + r.message if r.message else ''})")
    if svg:
        try:
            fit = fit_scaling(records, cfg.get("fit", "regime"), cfg.get("problem", "p"))
        except NldwError as exc:
            print(f"no plot: {exc}")
        else:
            with atomic_output(svg) as tmp:
                write_svg(fit, tmp)
            written.append(str(svg))
    return written


def stage_fit(in_path, out, regime, p=None, svg=None):
    if not Path(in_path).is_file():
        raise MissingInput(f"sweep CSV {in_path} not found")
    fit = fit_scaling(read_sweep_csv(in_path), regime, p)
    with atomic_output(out) as tmp:
        write_fit_csv(fit, tmp)
    print(f"{fit.regime}: slope={fit.slope:.6g} intercept={fit.intercept:.6g} "
          f"R^2={fit.r_squared:.6f} n={fit.n_points}")
    written = [str(out)]
    if svg:
        with atomic_output(svg) as tmp:
            write_svg(fit, tmp)
        written.append(str(svg))
    return written


def stage_identity(run_dir, times, out):
    d = Path(run_dir)
    if not (d / "run.json").is_file():
        raise MissingInput(f"snapshot directory {d} is missing or holds no run.json")
    params, data, store = read_snapshots(d)
    t_last = float(store.times[-1])
    aux = build_aux(params.model, max(t_last, 1e-6), 1025)
    times = times if times else list(store.times)
    report = identity_report(store, aux, data, params.epsilon, times)
    with atomic_output(out) as tmp:
        write_report_csv(report, tmp)
    for t, msg in report.errors.items():
        print(f"t={t:g}: {msg}")
    print(f"max relative residual {report.max_relative_residual:.3e}, J0={report.J0:.6g}")
    return [str(out)]


def stage_odelab(kind, beta, p, epsilons, out, C1=None, C2=1.0, tol=1e-8, svg=None):
    kind = canonical_kind(kind)
    pts = scaling_points(kind, beta, p, epsilons, C1=C1, C2=C2, tol=tol)
    rows = [[_num(pt.epsilon), _num(pt.T_lo), _num(pt.T_hi), _num(pt.tau_blowup)] for pt in pts]
    fit = None
    try:
        fit = fit_scaling([pt.record for pt in pts], REGIME_FOR_KIND[kind], p)
    except NldwError as exc:
        print(f"no fit: {exc}")
    if fit is not None:
        rows += [[], list(FIT_COLUMNS),
                 [fit.regime, _num(fit.slope), _num(fit.intercept), _num(fit.r_squared),
                  fit.n_points]]
    _write_rows(out, ODE_COLUMNS, rows)
    written = [str(out)]
    if svg and fit is not None:
        with atomic_output(svg) as tmp:
            write_svg(fit, tmp)
        written.append(str(svg))
    return written


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> int:
    """Execute the configured stages in order and write ``manifest.json``.

    Stops at the first failing stage and returns its exit status.
    """
    root = Path(out_dir or cfg.get("output", "dir"))
    root.mkdir(parents=True, exist_ok=True)
    svg = cfg.get("output", "svg")
    snap = cfg.get("output", "snapshot_dir") or str(root / "snapshots")
    manifest = {
        "config_sha256": cfg.text_hash,
        "versions": {"nldw": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "flags": cfg.flags,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "stages": [],
    }
    status = EXIT_OK
    for stage in cfg.stages:
        t0 = time.perf_counter()
        entry = {"stage": stage}
        try:
            if stage == "aux":
                files = stage_aux(cfg, root / "aux.csv")
            elif stage == "simulate":
                files = stage_simulate(cfg, root / "trajectory.csv", snap)
            elif stage == "sweep":
                files = stage_sweep(cfg, root / "sweep.csv", svg=root / "sweep.svg" if svg else None)
            elif stage == "fit":
                files = stage_fit(root / "sweep.csv", root / "fit.csv", cfg.get("fit", "regime"),
                                  cfg.get("problem", "p"), root / "fit.svg" if svg else None)
            elif stage == "identity":
                files = stage_identity(snap, cfg.get("identity", "times"), root / "identity.csv")
            else:
                o = cfg.values["odelab"]
                beta = None if math.isnan(o["beta"]) else o["beta"]
                p = cfg.get("problem", "p") if math.isnan(o["p"]) else o["p"]
                C1 = None if math.isnan(o["C1"]) else o["C1"]
                eps = o["epsilons"] or cfg.epsilons
                files = stage_odelab(o["kind"], beta, p, eps, root / "odelab.csv", C1, o["C2"],
                                     o["tol"], root / "odelab.svg" if svg else None)
            entry.update(status="ok", outputs=files)
        except Exception as exc:  # noqa: BLE001 - mapped to an exit status below
            status = exit_status(exc)
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            print(f"stage {stage} failed: {exc}", file=sys.stderr)
        entry["wall_clock_s"] = round(time.perf_counter() - t0, 6)
        manifest["stages"].append(entry)
        if status != EXIT_OK:
            break
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return status


def exit_status(exc: BaseException) -> int:
    if isinstance(exc, (ConfigParseError, ConfigValidationError, ValueError)):
        return EXIT_CONFIG
    if isinstance(exc, (MissingInput, FileNotFoundError)):
        return EXIT_MISSING
    return EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nldw", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("aux", help="tabulate b, g, g', G, Gamma")
    a.add_argument("--config")
    a.add_argument("--beta", type=float)
    a.add_argument("--tmax", "--t-max", dest="t_max", type=float)
    a.add_argument("--samples", type=int)
    a.add_argument("--probe", type=float, help="also check large-time asymptotics at this t")
    a.add_argument("--out", required=True)

    s = sub.add_parser("simulate", help="integrate one PDE run")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="trajectory CSV")
    s.add_argument("--snapshots", help="directory for binary snapshots")

    w = sub.add_parser("sweep", help="lifespan for a list of amplitudes")
    w.add_argument("--config", required=True)
    w.add_argument("--epsilons", type=_epsilon_list)
    w.add_argument("--out", required=True)
    w.add_argument("--svg")

    f = sub.add_parser("fit", help="scaling-law fit of a sweep CSV")
    f.add_argument("--regime", required=True)
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--p", type=float, help="nonlinearity exponent (critical regimes)")
    f.add_argument("--svg")

    i = sub.add_parser("identity", help="A+B=C+D+E residuals from stored snapshots")
    i.add_argument("--run", required=True)
    i.add_argument("--times", type=_epsilon_list, default=[])
    i.add_argument("--out", required=True)

    o = sub.add_parser("odelab", help="blow-up times of the comparison ODEs")
    o.add_argument("--kind", required=True)
    o.add_argument("--beta", type=float)
    o.add_argument("--p", type=float, required=True)
    o.add_argument("--epsilons", type=_epsilon_list, required=True)
    o.add_argument("--C1", type=float)
    o.add_argument("--C2", type=float, default=1.0)
    o.add_argument("--tol", type=float, default=1e-8)
    o.add_argument("--out", required=True)
    o.add_argument("--svg")

    r = sub.add_parser("run", help="execute every stage listed in a config")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "aux":
            cfg = _load_config(args.config) if args.config else None
            if cfg is None and (args.beta is None or args.t_max is None):
                raise ValueError("aux needs --config or both --beta and --t-max")
            stage_aux(cfg, args.out, args.beta, args.t_max, args.probe, args.samples)
        elif args.command == "simulate":
            stage_simulate(_load_config(args.config), args.out, args.snapshots)
        elif args.command == "sweep":
            stage_sweep(_load_config(args.config), args.out, args.epsilons, args.svg)
        elif args.command == "fit":
            stage_fit(args.inp, args.out, args.regime, args.p, args.svg)
        elif args.command == "identity":
            stage_identity(args.run, args.times, args.out)
        elif args.command == "odelab":
            stage_odelab(args.kind, args.beta, args.p, args.epsilons, args.out, args.C1,
                         args.C2, args.tol, args.svg)
        else:
            return run_experiment(_load_config(args.config), args.out_dir)
    except Exception as exc:  # noqa: BLE001
        code = exit_status(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
