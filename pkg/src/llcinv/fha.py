"""First-harmonic-approximation analytics for the LLC resonant tank.

Everything in this module is a pure function of its arguments: gain and
impedance-angle curves, the ZVS boundary test, and the inversion of the
gain curve used by the modulation controller.  Angles are radians
throughout; degrees belong to the presentation layer.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, InfeasibleError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ResonantTank:
    """LLC tank: series Lr-Cr, shunt Lm at the primary of an ideal 1:N transformer.

    N is the secondary-to-primary turns ratio.
    """

    Lr: float
    Cr: float
    Lm: float
    N: float

    def __post_init__(self):
        for name in ("Lr", "Cr", "Lm", "N"):
            if getattr(self, name) <= 0:
                raise DomainError(f"tank {name} must be positive")

    @property
    def fr1(self) -> float:
        """Series resonance 1/(2*pi*sqrt(Cr*Lr))."""
        return 1.0 / (TWO_PI * math.sqrt(self.Cr * self.Lr))

    @property
    def fr2(self) -> float:
        """Lower resonance 1/(2*pi*sqrt(Cr*(Lr+Lm))); always below fr1."""
        return 1.0 / (TWO_PI * math.sqrt(self.Cr * (self.Lr + self.Lm)))

    @property
    def m(self) -> float:
        """Inductance ratio (Lm + Lr)/Lr, always > 1."""
        return (self.Lm + self.Lr) / self.Lr

    @property
    def lx(self) -> float:
        """Lm/Lr = m - 1."""
        return self.Lm / self.Lr

    @property
    def z0(self) -> float:
        """Characteristic impedance sqrt(Lr/Cr)."""
        return math.sqrt(self.Lr / self.Cr)


@dataclass(frozen=True)
class LoadContext:
    """A load level reduced to the quantities the FHA math consumes.

    Vo is the RMS voltage at the port that defines the load resistance
    (per converter module), Po the active power taken at that port.
    """

    Vo: float
    Po: float
    Ro: float
    Rac: float
    Q: float


@dataclass(frozen=True)
class OperatingPoint:
    """A commanded (fs, phi, Vin) triple of the hybrid modulator."""

    fs: float
    phi: float
    Vin: float

    def __post_init__(self):
        if not 0.0 <= self.phi <= math.pi:
            raise DomainError("phase shift must lie in [0, pi]")
        if self.fs <= 0 or self.Vin <= 0:
            raise DomainError("fs and Vin must be positive")


def load_context(tank: ResonantTank, Vo: float, Po: float) -> LoadContext:
    """Build a LoadContext from per-module RMS voltage and power.

    Ro = Vo^2/Po, reflected to the primary as Rac = 8*Ro/(pi^2*N^2).
    """
    if Vo <= 0 or Po <= 0:
        raise DomainError("Vo and Po must be positive")
    Ro = Vo * Vo / Po
    Rac = 8.0 * Ro / (math.pi**2 * tank.N**2)
    return LoadContext(Vo=Vo, Po=Po, Ro=Ro, Rac=Rac, Q=quality_factor(tank, Rac))


def resonant_frequencies(tank: ResonantTank) -> tuple[float, float]:
    """Return (fr1, fr2) of the tank."""
    return tank.fr1, tank.fr2


def quality_factor(tank: ResonantTank, Rac: float) -> float:
    """Q = sqrt(Lr/Cr)/Rac, the characteristic impedance over the reflected load."""
    if Rac <= 0:
        raise DomainError("Rac must be positive")
    return tank.z0 / Rac


def gain_fha(tank: ResonantTank, Q: float, Fx: float) -> float:
    """FHA voltage gain of the loaded tank at normalized frequency Fx = fs/fr1.

        M = N*Fx^2*(m-1) / sqrt((m*Fx^2 - 1)^2 + Fx^2*(Fx^2 - 1)^2*(m-1)^2*Q^2)

    At Fx = 1 this collapses to N for every Q (load-independent point).
    """
    if Fx <= 0:
        raise DomainError("Fx must be positive")
    if Q < 0:
        raise DomainError("Q must be non-negative")
    m = tank.m
    fx2 = Fx * Fx
    num = tank.N * fx2 * (m - 1.0)
    den = math.hypot(m * fx2 - 1.0, Fx * (fx2 - 1.0) * (m - 1.0) * Q)
    return num / den


def gain_with_phase_shift(M: float, phi: float) -> float:
    """Effective gain under phase-shift modulation: M*cos(phi/2).

    The fundamental of the quasi-square bridge voltage scales with
    cos(phi/2), so the gain runs from M at phi=0 down to zero at phi=pi.
    """
    if not 0.0 <= phi <= math.pi:
        raise DomainError("phase shift must lie in [0, pi]")
    return M * math.cos(0.5 * phi)


def input_impedance(tank: ResonantTank, Rac: float, fs: float) -> complex:
    """Complex FHA input impedance j*w*Lr + 1/(j*w*Cr) + (j*w*Lm || Rac)."""
    if fs <= 0:
        raise DomainError("fs must be positive")
    if Rac <= 0:
        raise DomainError("Rac must be positive")
    w = TWO_PI * fs
    z_series = 1j * (w * tank.Lr - 1.0 / (w * tank.Cr))
    zm = 1j * w * tank.Lm
    return z_series + zm * Rac / (Rac + zm)


def impedance_angle(tank: ResonantTank, Rac: float, fs: float) -> float:
    """Argument of the FHA input impedance; positive means inductive."""
    return cmath.phase(input_impedance(tank, Rac, fs))


def impedance_angle_closed_form(Fx: float, Q: float, Lx: float) -> float:
    """Closed-form angle expression, kept as a diagnostic only.

    This evaluates the published rational form verbatim.  It does not
    dimension-check and disagrees with the circuit-derived angle, so
    impedance_angle() is authoritative everywhere downstream.
    """
    if Fx <= 0:
        raise DomainError("Fx must be positive")
    if Q == 0:
        raise DomainError("closed form divides by Q")
    num = Fx**4 * Q + Fx**2 * Lx**2 + Fx**2 * Lx - Fx**2 * Q**2 - Lx**2
    den = Fx**3 * Q
    return math.atan(num / den)


def zvs_margin(theta: float, phi: float) -> float:
    """ZVS boundary margin delta = theta - phi/2; ZVS is predicted iff delta > 0."""
    if not 0.0 <= phi <= math.pi:
        raise DomainError("phase shift must lie in [0, pi]")
    return theta - 0.5 * phi


def solve_fs_for_gain(
    tank: ResonantTank,
    Q: float,
    M_target: float,
    fs_range: tuple[float, float],
) -> tuple[float, bool]:
    """Invert the gain curve: find fs with gain_fha(tank, Q, fs/fr1) = M_target.

    Assumes above-resonance operation where the gain decreases
    monotonically over fs_range.  Returns (fs, saturated); saturated is
    True when M_target falls below the gain at the top of the range and
    fs_max is returned instead of a root.

    Raises InfeasibleError when M_target exceeds the gain available at
    the bottom of the range.
    """
    fs_lo, fs_hi = fs_range
    if not 0 < fs_lo < fs_hi:
        raise DomainError("fs_range must satisfy 0 < fs_min < fs_max")
    fr1 = tank.fr1
    g_lo = gain_fha(tank, Q, fs_lo / fr1)
    g_hi = gain_fha(tank, Q, fs_hi / fr1)
    if g_lo < g_hi:
        raise DomainError("gain is not monotone decreasing over fs_range")
    if M_target > g_lo:
        raise InfeasibleError(
            f"target gain {M_target:.6g} exceeds {g_lo:.6g} available at fs_min"
        )
    if M_target <= g_hi:
        return fs_hi, True

    lo, hi = fs_lo, fs_hi  # gain(lo) >= M_target >= gain(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gain_fha(tank, Q, mid / fr1) >= M_target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * lo:
            break
    fs = 0.5 * (lo + hi)
    return fs, False


def sweep_curves(
    tank: ResonantTank,
    loads: Sequence[LoadContext],
    fs_grid: Sequence[float],
) -> np.ndarray:
    """Tabulate (fs, Q, M, theta) rows for each load over a frequency grid.

    Rows are ordered load-major; this is the data behind the usual
    gain/angle-vs-frequency curve families.
    """
    if len(loads) == 0 or len(fs_grid) == 0:
        raise DomainError("loads and fs_grid must be non-empty")
    fr1 = tank.fr1
    rows = np.empty((len(loads) * len(fs_grid), 4))
    i = 0
    for load in loads:
        for fs in fs_grid:
            rows[i, 0] = fs
            rows[i, 1] = load.Q
            rows[i, 2] = gain_fha(tank, load.Q, fs / fr1)
            rows[i, 3] = impedance_angle(tank, load.Rac, fs)
            i += 1
    return rows
