"""Gaussian heat kernel, its time derivatives, and periodic grid convolution."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainTooSmall, GridMismatch

ADMISSIBLE_WIDTHS = 8.0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic box [-L, L)^n with N points per axis.

    Node j sits at x_j = -L + j*dx, so the origin is node N/2.
    """

    n: int
    L: float
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only n = 1 or 2 is supported")
        if self.N < 32 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two and at least 32")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def cell(self) -> float:
        """Volume element dx^n."""
        return self.dx**self.n

    @property
    def shape(self):
        return (self.N,) * self.n

    @property
    def axes_all(self):
        return tuple(range(self.n))

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.N)

    @cached_property
    def r2(self) -> np.ndarray:
        """Squared distance to the origin (the origin is its own minimal image)."""
        x2 = self.axis**2
        if self.n == 1:
            return x2
        return x2[:, None] + x2[None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        """Squared wavenumbers laid out for ``rfftn`` of a field on this grid."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dx)
        if self.n == 1:
            return np.fft.rfftfreq(self.N, d=self.dx) ** 2 * (2.0 * np.pi) ** 2
        kr = 2.0 * np.pi * np.fft.rfftfreq(self.N, d=self.dx)
        return k[:, None] ** 2 + kr[None, :] ** 2

    def coords(self):
        if self.n == 1:
            return (self.axis,)
        return tuple(np.meshgrid(self.axis, self.axis, indexing="ij"))

    def integrate(self, field) -> float:
        return float(np.sum(field) * self.cell)

    def laplacian(self, field: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(-self.k2 * np.fft.rfftn(field), s=self.shape, axes=self.axes_all)

    def grad_sq(self, field: np.ndarray) -> np.ndarray:
        """|grad u|^2 via spectral differentiation (Nyquist mode dropped)."""
        fh = np.fft.rfftn(field)
        k = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dx)
        k[self.N // 2] = 0.0
        kr = 2.0 * np.pi * np.fft.rfftfreq(self.N, d=self.dx)
        kr[-1] = 0.0
        if self.n == 1:
            return np.fft.irfft(1j * kr * fh, n=self.N) ** 2
        gx = np.fft.irfftn(1j * k[:, None] * fh, s=self.shape, axes=self.axes_all)
        gy = np.fft.irfftn(1j * kr[None, :] * fh, s=self.shape, axes=self.axes_all)
        return gx**2 + gy**2


@dataclass(frozen=True)
class KernelField:
    grid: Grid
    tau: float
    values: np.ndarray

    def mass(self) -> float:
        return self.grid.integrate(self.values)


def check_admissible(grid: Grid, tau: float):
    if not tau > 0:
        raise ValueError(f"kernel time must be positive, got {tau}")
    if ADMISSIBLE_WIDTHS * math.sqrt(tau) > grid.L:
        raise DomainTooSmall(
            f"L={grid.L} < {ADMISSIBLE_WIDTHS}*sqrt(tau)={ADMISSIBLE_WIDTHS * math.sqrt(tau):.4g}"
        )


def gaussian_values(r2, tau: float, n: int):
    """(4 pi tau)^(-n/2) exp(-|x|^2 / 4 tau) for an array of squared radii."""
    return (4.0 * np.pi * tau) ** (-0.5 * n) * np.exp(-r2 / (4.0 * tau))


def dt_multiplier(r2, tau: float, n: int):
    return -n / (2.0 * tau) + r2 / (4.0 * tau**2)


def dtt_multiplier(r2, tau: float, n: int):
    return ((2 * n + n * n) / (4.0 * tau**2) - (n + 2) * r2 / (4.0 * tau**3)
            + r2**2 / (16.0 * tau**4))


def gaussian(grid: Grid, tau: float) -> KernelField:
    check_admissible(grid, tau)
    return KernelField(grid, tau, gaussian_values(grid.r2, tau, grid.n))


def gaussian_dt(grid: Grid, tau: float) -> KernelField:
    """d/dtau of the heat kernel."""
    check_admissible(grid, tau)
    r2 = grid.r2
    return KernelField(grid, tau, dt_multiplier(r2, tau, grid.n) * gaussian_values(r2, tau, grid.n))


def gaussian_dtt(grid: Grid, tau: float) -> KernelField:
    """d^2/dtau^2 of the heat kernel."""
    check_admissible(grid, tau)
    r2 = grid.r2
    return KernelField(grid, tau, dtt_multiplier(r2, tau, grid.n) * gaussian_values(r2, tau, grid.n))


def _unwrap(f):
    if isinstance(f, KernelField):
        return f.grid, f.values
    return None, np.asarray(f, dtype=float)


def convolve(a, b, grid: Grid | None = None) -> np.ndarray:
    """Periodic convolution scaled by dx^n, approximating the continuum integral.

    Accepts :class:`KernelField` objects or raw arrays (then ``grid`` is
    required).  ``convolve(a, b)`` and ``convolve(b, a)`` agree bitwise.
    """
    ga, va = _unwrap(a)
    gb, vb = _unwrap(b)
    grids = {g for g in (ga, gb, grid) if g is not None}
    if len(grids) != 1:
        raise GridMismatch("convolution operands live on different (or unspecified) grids")
    (g,) = grids
    if va.shape != g.shape or vb.shape != g.shape:
        raise GridMismatch(f"field shapes {va.shape}, {vb.shape} do not match grid {g.shape}")
    # a fixed operand order makes the result independent of argument order bitwise
    if va.tobytes() > vb.tobytes():
        va, vb = vb, va
    prod = np.fft.rfftn(va) * np.fft.rfftn(vb)
    raw = np.fft.irfftn(prod, s=g.shape, axes=g.axes_all) * g.cell
    # node sums x_j + x_k = -2L + m dx land on node m - N/2
    return np.roll(raw, g.N // 2, axis=tuple(range(g.n)))
