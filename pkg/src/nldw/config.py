"""INI experiment configuration: parsing, defaults and validation.

Every invariant is checked and all violations are reported together.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field

from .damping import DampingModel
from .errors import ConfigParseError, ConfigValidationError
from .heat_kernel import Grid
from .lifespan import REGIMES
from .ode_lab import KIND_ALIASES, KINDS
from .records import BlowupDetector
from .solver import DATA_SHAPES, InitialData, ProblemParams

STAGES = ("aux", "simulate", "sweep", "fit", "identity", "odelab")
MAX_CFL = 0.85


def _floats(text):
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _words(text):
    return [w.strip() for w in text.replace(";", ",").split(",") if w.strip()]


# section -> key -> (converter, default); a default of ``...`` marks a required key
SCHEMA = {
    "experiment": {"stages": (_words, ["simulate"]), "deterministic": (_bool, True)},
    "damping": {"beta": (float, ...)},
    "problem": {"n": (int, 1), "p": (float, ...), "epsilon": (float, 1.0),
                "epsilons": (_floats, []), "t_end": (float, 100.0),
                "nonlinearity": (_bool, True), "theorem_regime": (_bool, False)},
    "grid": {"L": (float, 128.0), "N": (int, 1024), "cfl": (float, 0.5)},
    "data": {"shape": (str, "GaussianBump"), "amplitude_u0": (float, 1.0),
             "amplitude_u1": (float, 0.0), "width": (float, 1.0), "offset": (float, 0.0)},
    "detector": {"theta": (float, 1e6), "span": (_floats, [1e4, 1e8]),
                 "confirm_doubling": (_bool, True), "max_ratio": (float, 0.02)},
    "aux": {"t_max": (float, 1000.0), "n_samples": (int, 2049), "t_probe": (float, math.nan)},
    "fit": {"regime": (str, "SubcriticalPoly")},
    "identity": {"times": (_floats, [])},
    "odelab": {"kind": (str, "LemmaA1"), "beta": (float, math.nan), "p": (float, math.nan),
               "epsilons": (_floats, []), "C1": (float, math.nan), "C2": (float, 1.0),
               "tol": (float, 1e-8)},
    "output": {"dir": (str, "out"), "snapshot_stride": (int, 8), "snapshot_dir": (str, ""),
               "svg": (_bool, False)},
}


@dataclass
class ExperimentConfig:
    values: dict
    text_hash: str
    flags: list = field(default_factory=list)

    def get(self, section, key):
        return self.values[section][key]

    @property
    def stages(self):
        return self.values["experiment"]["stages"]

    @property
    def model(self) -> DampingModel:
        return DampingModel(self.get("damping", "beta"))

    @property
    def grid(self) -> Grid:
        g = self.values["grid"]
        return Grid(self.get("problem", "n"), g["L"], g["N"])

    @property
    def data(self) -> InitialData:
        d = self.values["data"]
        return InitialData(d["shape"], d["amplitude_u0"], d["amplitude_u1"], d["width"], d["offset"])

    @property
    def detector(self) -> BlowupDetector:
        d = self.values["detector"]
        return BlowupDetector(d["theta"], d["confirm_doubling"], tuple(d["span"]), d["max_ratio"])

    def params(self, epsilon: float | None = None) -> ProblemParams:
        pr = self.values["problem"]
        return ProblemParams(n=pr["n"], p=pr["p"],
                             epsilon=pr["epsilon"] if epsilon is None else epsilon,
                             model=self.model, grid=self.grid, t_end=pr["t_end"],
                             cfl=self.get("grid", "cfl"), nonlinearity_on=pr["nonlinearity"],
                             theorem_regime=pr["theorem_regime"])

    @property
    def epsilons(self):
        return self.get("problem", "epsilons")


def _read(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParseError("key-value line before any [section] header", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigParseError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigParseError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigParseError(f"cannot parse {line.strip()!r}", lineno) from None
    return cp


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises with every violation listed, not just the first."""
    cp = _read(text)
    problems = []
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            problems.append(f"unknown section [{section}]")
    for section, keys in SCHEMA.items():
        values[section] = {}
        present = cp[section] if cp.has_section(section) else {}
        for key in present:
            if key not in keys:
                problems.append(f"unknown key {key!r} in [{section}]")
        for key, (conv, default) in keys.items():
            if key in present:
                try:
                    values[section][key] = conv(present[key])
                except ValueError as exc:
                    problems.append(f"[{section}] {key}: {exc}")
                    values[section][key] = None if default is ... else default
            elif default is ...:
                problems.append(f"missing required key {key!r} in [{section}]")
                values[section][key] = None
            else:
                values[section][key] = list(default) if isinstance(default, list) else default
    flags = []
    problems.extend(_validate(values, flags))
    if problems:
        raise ConfigValidationError(problems)
    return ExperimentConfig(values, hashlib.sha256(text.encode()).hexdigest(), flags)


def _validate(v, flags):
    bad = []
    beta = v["damping"]["beta"]
    if beta is not None:
        if not -1.0 <= beta < 1.0:
            bad.append(f"beta={beta} outside the admissible range [-1, 1)")
        elif beta == 0.0:
            flags.append("classical-damping")
    pr = v["problem"]
    if pr["n"] not in (1, 2):
        bad.append("n must be 1 or 2")
    if pr["p"] is not None and not pr["p"] > 1:
        bad.append("p must exceed 1")
    if not pr["epsilon"] > 0:
        bad.append("epsilon must be positive")
    eps = pr["epsilons"]
    if any(e <= 0 for e in eps):
        bad.append("epsilons must all be positive")
    if any(a <= b for a, b in zip(eps, eps[1:])):
        bad.append("epsilons must be strictly decreasing")
    if not pr["t_end"] > 0:
        bad.append("t_end must be positive")

    g = v["grid"]
    if not g["L"] > 0:
        bad.append("L must be positive")
    if g["N"] < 32 or g["N"] & (g["N"] - 1):
        bad.append("N must be a power of two and at least 32")
    if not 0 < g["cfl"] <= MAX_CFL:
        bad.append(f"cfl must lie in (0, {MAX_CFL}] for RK4 with the spectral Laplacian")

    d = v["data"]
    if d["shape"] not in DATA_SHAPES:
        bad.append(f"data shape must be one of {DATA_SHAPES}")
    if not d["width"] > 0:
        bad.append("data width must be positive")

    det = v["detector"]
    if not det["theta"] > 0 or any(s <= 0 for s in det["span"]):
        bad.append("detector thresholds must be positive")
    peak = max(abs(d["amplitude_u0"]), 1e-300) * max([pr["epsilon"], *eps])
    if min([det["theta"], *det["span"]]) < 1e3 * peak:
        bad.append("detector thresholds must exceed the initial max|u| by a factor of 1e3")
    if not 0 < det["max_ratio"] < 1:
        bad.append("max_ratio must lie in (0, 1)")

    a = v["aux"]
    if not a["t_max"] > 0:
        bad.append("aux t_max must be positive")
    if a["n_samples"] < 16:
        bad.append("aux n_samples must be at least 16")

    if v["fit"]["regime"] not in REGIMES:
        bad.append(f"fit regime must be one of {REGIMES}")
    o = v["odelab"]
    if o["kind"] not in KINDS and o["kind"].lower() not in KIND_ALIASES:
        bad.append(f"odelab kind {o['kind']!r} unknown")
    if not math.isnan(o["C1"]) and o["C1"] < 1:
        bad.append("odelab C1 must be >= 1")
    if not o["C2"] > 0:
        bad.append("odelab C2 must be positive")
    if not o["tol"] > 0:
        bad.append("odelab tol must be positive")
    if v["output"]["snapshot_stride"] < 0:
        bad.append("snapshot_stride must be non-negative")
    for s in v["experiment"]["stages"]:
        if s not in STAGES:
            bad.append(f"unknown stage {s!r}; expected some of {STAGES}")
    return bad
