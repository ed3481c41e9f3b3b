"""Blow-up detector settings and per-run lifespan records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

THRESHOLD_CROSSED = "ThresholdCrossed"
DT_UNDERFLOW = "DtUnderflow"
OVERFLOW = "Overflow"
NO_BLOWUP = "NoBlowupWithinHorizon"
FAILED = "Failed"

BLOWUP_REASONS = (THRESHOLD_CROSSED, DT_UNDERFLOW, OVERFLOW)


@dataclass(frozen=True)
class BlowupDetector:
    """Sup-norm threshold proxy for finite-time blow-up.

    ``confirm_doubling`` requires the last doubling of max|u| before the
    threshold (theta/2 -> theta) to take less than ten base time steps.
    """

    theta: float = 1e6
    confirm_doubling: bool = True
    insensitivity_span: tuple = (1e4, 1e8)
    max_ratio: float = 0.02

    def __post_init__(self):
        if not self.theta > 0 or any(not s > 0 for s in self.insensitivity_span):
            raise ValueError("thresholds must be positive")

    @property
    def thresholds(self) -> tuple:
        return tuple(sorted({self.theta, *self.insensitivity_span}))

    def check_initial(self, initial_max: float):
        if min(self.thresholds) < 1e3 * initial_max:
            raise ValueError(
                f"thresholds {self.thresholds} must exceed the initial max|u|={initial_max:.3g} "
                "by a factor of at least 1e3"
            )


@dataclass
class LifespanRecord:
    epsilon: float
    T_lo: float
    T_hi: float
    reason: str
    theta_used: float = math.nan
    insensitivity_ratio: float = math.nan
    crossings: dict = field(default_factory=dict)
    confirmed: bool = True
    dt_final: float = math.nan
    log_T: float | None = None
    ratio_limit: float = 0.02
    message: str = ""

    @property
    def blew_up(self) -> bool:
        return self.reason in BLOWUP_REASONS

    @property
    def T(self) -> float:
        return 0.5 * (self.T_lo + self.T_hi)

    @property
    def log_lifespan(self) -> float:
        if self.log_T is not None:
            return self.log_T
        return math.log(self.T)

    @property
    def accepted(self) -> bool:
        """Usable for scaling fits: blew up, growth confirmed, threshold-robust."""
        if not self.blew_up or not self.confirmed:
            return False
        if math.isnan(self.insensitivity_ratio):
            return True
        return self.insensitivity_ratio <= self.ratio_limit
