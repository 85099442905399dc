"""Unit conversions used at the configuration boundary.

Everything inside the package is SI with angular frequencies (rad/s).
Config files and CLI flags use ordinary frequency (GHz, MHz) and ns/us.
"""

import math

TWO_PI = 2.0 * math.pi


def ghz(value):
    """Ordinary frequency in GHz -> angular frequency in rad/s."""
    return TWO_PI * value * 1e9


def mhz(value):
    """Ordinary frequency in MHz -> angular frequency in rad/s."""
    return TWO_PI * value * 1e6


def to_ghz(omega):
    return omega / TWO_PI / 1e9


def to_mhz(omega):
    return omega / TWO_PI / 1e6


def ns(value):
    return value * 1e-9


def us(value):
    return value * 1e-6
