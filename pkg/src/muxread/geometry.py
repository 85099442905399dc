"""Quarter-wave resonator frequencies from transmission-line geometry.

A lambda/4 line of length ``d`` is grounded at x = 0, loaded by ``C0`` at the
open end x = d and coupled through ``C_c`` at x = x_c.  The end load fixes
the phase offset, tan(theta) = C0 Z0 omega, and current conservation at the
coupling point gives

    cot(k x_c) + tan(k (x_c - d) - theta) = C_c Z0 omega,     k = omega / v.

Multiplying by sin(k x_c) cos(k (x_c - d) - theta) removes the tangent poles:

    cos(k d + theta) - C_c Z0 omega sin(k x_c) cos(k (x_c - d) - theta) = 0.
"""

from dataclasses import dataclass, replace
import math

import numpy as np
from scipy.optimize import brentq

from .errors import InputError, NumericalError


@dataclass(frozen=True)
class QuarterWaveGeometry:
    d: float
    x_c: float
    C0: float
    C_c: float
    l: float
    c: float

    def __post_init__(self):
        if not (self.l > 0 and self.c > 0):
            raise InputError("inductance and capacitance per length must be positive")
        if not 0 < self.x_c < self.d:
            raise InputError(f"coupling point must satisfy 0 < x_c < d, got x_c={self.x_c}, d={self.d}")
        if self.C0 < 0 or self.C_c < 0:
            raise InputError("capacitances must be non-negative")

    @classmethod
    def from_impedance(cls, d, x_c, C0, C_c, Z0=50.0, v=1.2e8):
        """Build from characteristic impedance and phase velocity instead of l, c."""
        return cls(d=d, x_c=x_c, C0=C0, C_c=C_c, l=Z0 / v, c=1.0 / (Z0 * v))

    @property
    def Z0(self):
        return math.sqrt(self.l / self.c)

    @property
    def v(self):
        return 1.0 / math.sqrt(self.l * self.c)

    @property
    def omega_unloaded(self):
        """Bare lambda/4 frequency pi v / (2 d)."""
        return math.pi * self.v / (2.0 * self.d)


@dataclass(frozen=True)
class ModeSolution:
    omega: float
    theta: float
    B: float


def end_phase(geom, omega):
    return np.arctan(geom.C0 * geom.Z0 * omega)


def pole_free_residual(geom, omega):
    omega = np.asarray(omega, dtype=float)
    k = omega / geom.v
    theta = end_phase(geom, omega)
    phi = k * (geom.x_c - geom.d) - theta
    return np.cos(k * geom.d + theta) - geom.C_c * geom.Z0 * omega * np.sin(k * geom.x_c) * np.cos(phi)


def boundary_residuals(geom, omega, theta):
    """Residuals of the end-load and coupling-point equations at (omega, theta)."""
    k = omega / geom.v
    r_end = math.tan(theta) - geom.C0 * geom.Z0 * omega
    r_couple = 1.0 / math.tan(k * geom.x_c) + math.tan(k * (geom.x_c - geom.d) - theta) - geom.C_c * geom.Z0 * omega
    return r_end, r_couple


def solve_fundamental_mode(geom, rtol=1e-12, n_scan=4000, window=(1e-3, 2.0), residual_tol=1e-10):
    """Lowest-frequency mode of the loaded quarter-wave resonator.

    Scans the pole-free residual on ``window`` (in units of the unloaded
    lambda/4 frequency), takes the first sign change whose refined root also
    satisfies the original boundary equations, and refines it with Brent's
    method.
    """
    w0 = geom.omega_unloaded
    grid = np.linspace(window[0] * w0, window[1] * w0, n_scan)
    f = pole_free_residual(geom, grid)
    crossings = np.nonzero(np.sign(f[:-1]) * np.sign(f[1:]) <= 0)[0]
    for i in crossings:
        lo, hi = grid[i], grid[i + 1]
        if f[i] == 0:
            omega = lo
        else:
            omega = brentq(lambda w: float(pole_free_residual(geom, w)), lo, hi,
                           xtol=rtol * lo * 1e-3, rtol=4 * np.finfo(float).eps, maxiter=500)
        theta = float(end_phase(geom, omega))
        r_end, r_couple = boundary_residuals(geom, omega, theta)
        if abs(r_end) > residual_tol:
            raise NumericalError(f"end-load residual {r_end:.3e} exceeds tolerance")
        if abs(r_couple) > residual_tol:
            # multiplying through can add roots where a tangent diverges; skip those
            if abs(r_couple) > 1e-3:
                continue
            raise NumericalError(
                f"coupling residual {r_couple:.3e} exceeds tolerance at omega={omega:.6e}")
        k = omega / geom.v
        B = math.cos(k * (geom.x_c - geom.d) - theta) / math.sin(k * geom.x_c)
        return ModeSolution(omega=omega, theta=theta, B=B)
    raise NumericalError("no fundamental mode in search window")


def design_scan(template, parameter, values, **solver_kwargs):
    """Fundamental frequency for each value of ``parameter`` (one of d, C_c, C0).

    Returns a list of ``(value, omega)`` rows.
    """
    if parameter not in ("d", "C_c", "C0"):
        raise InputError(f"cannot scan {parameter!r}; choose d, C_c or C0")
    rows = []
    for i, value in enumerate(values):
        try:
            geom = replace(template, **{parameter: float(value)})
            rows.append((float(value), solve_fundamental_mode(geom, **solver_kwargs).omega))
        except (InputError, NumericalError) as exc:
            raise type(exc)(f"row {i} ({parameter}={value}): {exc}") from exc
    return rows


def length_for_frequency(template, omega_target, rtol=1e-12):
    """Resonator length ``d`` whose fundamental mode lies at ``omega_target``.

    The coupling point keeps its distance from the grounded end.
    """
    # loaded lines run below the bare estimate, so bracket generously on the short side
    d_bare = math.pi * template.v / (2.0 * omega_target)
    lo = max(template.x_c * 1.0001, 0.3 * d_bare)
    hi = 1.5 * d_bare

    def mismatch(d):
        return solve_fundamental_mode(replace(template, d=d)).omega - omega_target

    f_lo, f_hi = mismatch(lo), mismatch(hi)
    if f_lo * f_hi > 0:
        raise NumericalError("target frequency not reachable by varying the length")
    return brentq(mismatch, lo, hi, xtol=rtol * d_bare, rtol=4 * np.finfo(float).eps)
