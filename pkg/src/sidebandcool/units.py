"""Physical constants and the few unit conversions used throughout.

Everything inside the package works in SI base units with angular
frequencies in rad/s.  Configuration files and CSV data are in plain Hz and
get converted with :func:`angular` / :func:`to_hz` at the boundary.
"""
import math

import numpy as np

# SI exact values; hbar derived from the exact Planck constant
HBAR = 6.62607015e-34 / (2.0 * math.pi)  # J s
K_B = 1.380649e-23  # J / K
C_LIGHT = 2.99792458e8  # m / s

TWO_PI = 2.0 * math.pi


def angular(f):
    """Convert a frequency in Hz to an angular frequency in rad/s."""
    return TWO_PI * f


def to_hz(omega):
    """Convert an angular frequency in rad/s to Hz."""
    return omega / TWO_PI


def optical_angular_frequency(wavelength):
    """Angular frequency 2*pi*c/lambda of light with vacuum wavelength in m."""
    wl = np.asarray(wavelength, dtype=float)
    if np.any(~(wl > 0)):
        raise ValueError(f"wavelength must be positive, got {wavelength!r}")
    out = TWO_PI * C_LIGHT / wl
    return float(out) if np.ndim(out) == 0 else out
