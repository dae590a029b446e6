"""Split whispering-gallery-mode optics.

Backscattering couples the clockwise and counter-clockwise modes at rate
``gamma_split``; the symmetric and antisymmetric combinations ``a_plus`` and
``a_minus`` are the eigenmodes, sitting at detunings ``-gamma/2`` and
``+gamma/2``.  Both are driven by the taper with amplitude
``sqrt(kappa_ex / 2) * s_in``.

All functions accept array detunings and broadcast.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .units import HBAR, optical_angular_frequency

PLUS = "plus"
MINUS = "minus"
BRANCHES = (PLUS, MINUS)


@dataclass(frozen=True)
class CavityConfig:
    """Optical mode parameters, all rates in rad/s.

    ``kappa_abs`` defaults to ``kappa - kappa_ex``, the largest absorption
    rate compatible with the intrinsic loss.  ``omega_c`` may be left unset,
    in which case the laser frequency stands in for it (the two differ by a
    detuning many orders of magnitude smaller).
    """

    kappa: float
    kappa_ex: float
    gamma_split: float = 0.0
    G: float = 0.0  # rad/s per m, d(omega_c)/dx
    kappa_abs: Optional[float] = None
    omega_c: Optional[float] = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 <= self.kappa_ex <= self.kappa:
            raise ValueError("kappa_ex must lie in [0, kappa]")
        if not self.gamma_split >= 0:
            raise ValueError("gamma_split must be non-negative")
        if not np.isfinite(self.G):
            raise ValueError("G must be finite")
        if self.kappa_abs is None:
            object.__setattr__(self, "kappa_abs", self.kappa - self.kappa_ex)
        # a few ulp of slack so that kappa_abs = kappa - kappa_ex passed explicitly is accepted
        slack = 1e-12 * self.kappa
        if not -slack <= self.kappa_abs <= self.kappa - self.kappa_ex + slack:
            raise ValueError("kappa_abs must lie in [0, kappa - kappa_ex]")
        if self.omega_c is not None and not self.omega_c > 0:
            raise ValueError("omega_c must be positive")

    @classmethod
    def from_coupling(cls, kappa, eta_c, **kwargs):
        """Build from the total linewidth and the coupling efficiency ``kappa_ex/kappa``."""
        if not 0 <= eta_c <= 1:
            raise ValueError("eta_c must lie in [0, 1]")
        return cls(kappa=kappa, kappa_ex=eta_c * kappa, **kwargs)

    @property
    def eta_c(self):
        return self.kappa_ex / self.kappa

    @property
    def kappa_0(self):
        """Intrinsic loss rate."""
        return self.kappa - self.kappa_ex

    def resonance(self, drive):
        return self.omega_c if self.omega_c is not None else drive.omega_l


@dataclass(frozen=True)
class Drive:
    """Laser drive: input power (W), mean detuning ``omega_l - omega_c`` (rad/s), wavelength (m)."""

    P_in: float
    detuning: float = 0.0
    wavelength: float = 780e-9

    def __post_init__(self):
        if np.any(~(np.asarray(self.P_in) >= 0)):
            raise ValueError("P_in must be non-negative")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")

    @property
    def omega_l(self):
        return optical_angular_frequency(self.wavelength)

    @property
    def photon_flux(self):
        """``|s_in|^2`` in photons per second."""
        return self.P_in / (HBAR * self.omega_l)

    @property
    def s_in(self):
        """Drive amplitude, taken real and positive."""
        return np.sqrt(self.photon_flux)

    def at(self, detuning):
        return replace(self, detuning=detuning)


@dataclass(frozen=True)
class FieldPair:
    """Mean intracavity amplitudes of the two eigenmodes (sqrt of photon number)."""

    a_plus: complex
    a_minus: complex

    @property
    def n_plus(self):
        return np.abs(self.a_plus) ** 2

    @property
    def n_minus(self):
        return np.abs(self.a_minus) ** 2


def _sign(branch):
    if branch in (PLUS, +1):
        return 1.0
    if branch in (MINUS, -1):
        return -1.0
    raise ValueError(f"branch must be 'plus' or 'minus', got {branch!r}")


def lorentzian_response(detuning, branch, cav):
    """``L_pm(D) = 1 / (-i (D pm gamma/2) + kappa/2)`` in seconds."""
    d = np.asarray(detuning, dtype=float) + _sign(branch) * 0.5 * cav.gamma_split
    out = 1.0 / (-1j * d + 0.5 * cav.kappa)
    return complex(out) if np.ndim(out) == 0 else out


def mean_fields(drive, cav):
    """Steady-state amplitudes ``sqrt(kappa_ex/2) L_pm(detuning) s_in``."""
    drive_amp = np.sqrt(0.5 * cav.kappa_ex) * drive.s_in
    return FieldPair(
        drive_amp * lorentzian_response(drive.detuning, PLUS, cav),
        drive_amp * lorentzian_response(drive.detuning, MINUS, cav),
    )


def total_photons(fields):
    """``|a_plus|^2 + |a_minus|^2``.

    The interference term between the two eigenmodes has a
    ``cos(m phi) sin(m phi)`` azimuthal profile and exerts no net force on the
    breathing mode, so it is left out.
    """
    out = fields.n_plus + fields.n_minus
    return float(out) if np.ndim(out) == 0 else out


def absorbed_power(drive, cav):
    """Power dissipated inside the resonator, ``kappa_abs * N * hbar * omega_l`` (W)."""
    n = total_photons(mean_fields(drive, cav))
    return cav.kappa_abs * n * HBAR * drive.omega_l


def static_displacement(fields, m_eff, Omega_m, G):
    """Mean radiation-pressure displacement ``-hbar G N / (m_eff Omega_m^2)`` (m)."""
    if not (m_eff > 0 and Omega_m > 0):
        raise ValueError("m_eff and Omega_m must be positive")
    return -HBAR * G * total_photons(fields) / (m_eff * Omega_m**2)
