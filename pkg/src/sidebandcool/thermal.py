"""Laser heating, effective temperature, occupancy and the force-noise budget.

Spectral densities are double-sided and symmetrized throughout, so the
thermal force noise of a bath at temperature T is ``2 m k_B T Gamma``.
"""
from dataclasses import dataclass
from typing import Optional
import warnings

import numpy as np

from .cavity import absorbed_power, mean_fields, total_photons
from .errors import RegimeError, RegimeWarning
from .units import HBAR, K_B


@dataclass(frozen=True)
class Environment:
    """Cryostat temperature and heating coefficients.

    The temperature rise from intracavity absorption is ``beta * P_abs``
    with ``beta`` in K/W.  When the absorption rate is not known separately,
    ``heating_product`` (K/J, equal to ``beta * kappa_abs``) may be supplied
    instead; it multiplies ``N * hbar * omega_l`` directly.
    """

    T_cryo: float
    dT_stray: float = 0.0
    beta: float = 0.0
    heating_product: Optional[float] = None

    def __post_init__(self):
        if not self.T_cryo > 0:
            raise ValueError("T_cryo must be positive")
        if not self.dT_stray >= 0:
            raise ValueError("dT_stray must be non-negative")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if self.heating_product is not None:
            if not self.heating_product >= 0:
                raise ValueError("heating_product must be non-negative")
            if self.beta != 0:
                raise ValueError("give either beta or heating_product, not both")


def cavity_heating(drive, cav, env):
    """Temperature rise from absorption inside the cavity (K)."""
    if env.heating_product is not None:
        n = total_photons(mean_fields(drive, cav))
        return env.heating_product * n * HBAR * drive.omega_l
    return env.beta * absorbed_power(drive, cav)


def sample_temperature(drive, cav, env):
    """``T_cryo + dT_stray + dT_cavity`` in K."""
    return env.T_cryo + env.dT_stray + cavity_heating(drive, cav, env)


def effective_temperature(T, gamma_m_T, gamma_eff):
    """Mode temperature under backaction, ``T * Gamma_m(T) / Gamma_eff``."""
    gamma_eff = np.asarray(gamma_eff, dtype=float)
    if np.any(~(gamma_eff > 0)):
        raise RegimeError("effective temperature undefined: Gamma_eff <= 0 (unstable regime)")
    out = np.asarray(T, dtype=float) * gamma_m_T / gamma_eff
    return float(out) if np.ndim(out) == 0 else out


def mean_occupancy(T_eff, omega_eff, classical=False):
    """Phonon occupancy.

    Bose-Einstein ``1/(exp(hbar w / k T) - 1)`` by default; with
    ``classical`` the equipartition ratio ``k T / hbar w``.
    """
    T_eff = np.asarray(T_eff, dtype=float)
    omega_eff = np.asarray(omega_eff, dtype=float)
    if np.any(~(T_eff > 0)) or np.any(~(omega_eff > 0)):
        raise ValueError("T_eff and omega_eff must be positive")
    x = HBAR * omega_eff / (K_B * T_eff)
    with np.errstate(over="ignore"):
        out = 1.0 / x if classical else 1.0 / np.expm1(x)
    return float(out) if np.ndim(out) == 0 else out


def occupancy_temperature(n_bar, omega, classical=False):
    """Inverse of :func:`mean_occupancy`."""
    n_bar = np.asarray(n_bar, dtype=float)
    if classical:
        out = n_bar * HBAR * omega / K_B
    else:
        out = HBAR * omega / (K_B * np.log1p(1.0 / n_bar))
    return float(out) if np.ndim(out) == 0 else out


def ground_state_probability(n_bar):
    """``P(n=0) = 1 / (1 + n_bar)`` for a thermal state."""
    n_bar = np.asarray(n_bar, dtype=float)
    if np.any(~(n_bar >= 0)):
        raise ValueError("n_bar must be non-negative")
    out = 1.0 / (1.0 + n_bar)
    return float(out) if np.ndim(out) == 0 else out


def force_noise_thermal(m_eff, T_eff, gamma_eff, omega=None):
    """``2 m k_B T_eff Gamma_eff`` (N^2/Hz).

    If ``omega`` is given, warns when ``k_B T_eff / hbar omega < 1`` since
    the classical fluctuation-dissipation form no longer holds there.
    """
    if omega is not None and np.any(K_B * np.asarray(T_eff) / (HBAR * np.asarray(omega)) < 1.0):
        warnings.warn("k_B T_eff < hbar Omega: classical thermal force noise is inaccurate", RegimeWarning)
    return 2.0 * m_eff * K_B * T_eff * gamma_eff


def force_noise_cryo(m_eff, T_cryo, gamma_m_at_cryo):
    """Bath force noise at the cryostat temperature, ``2 m k_B T_cryo Gamma_m(T_cryo)``."""
    return 2.0 * m_eff * K_B * T_cryo * gamma_m_at_cryo


def force_noise_quantum_from_G(G, m_eff, P_in, eta_c, omega_c, omega_m):
    """Radiation-pressure shot-noise force, ``2 hbar G^2 P eta_c / (omega_c Omega_m^2)``."""
    return 2.0 * HBAR * G**2 * P_in * eta_c / (omega_c * omega_m**2)


def force_noise_quantum(g0, m_eff, P_in, eta_c, omega_c, omega_m, kappa=None):
    """Quantum backaction force noise ``4 g0^2 m P eta_c / (omega_c Omega_m)`` (N^2/Hz).

    Valid deep in the resolved-sideband regime; warns if ``Omega_m/kappa < 5``
    when ``kappa`` is supplied.  The equivalent ``G``-form is evaluated too
    and must agree.
    """
    if kappa is not None and omega_m / kappa < 5:
        warnings.warn(f"Omega_m/kappa = {omega_m / kappa:.3g} < 5: not resolved-sideband", RegimeWarning)
    s = 4.0 * g0**2 * m_eff * P_in * eta_c / (omega_c * omega_m)
    x_zpf = np.sqrt(HBAR / (2.0 * m_eff * omega_m))
    s_alt = force_noise_quantum_from_G(g0 / x_zpf, m_eff, P_in, eta_c, omega_c, omega_m)
    if not np.allclose(s, s_alt, rtol=1e-12, atol=0.0):
        raise AssertionError("quantum backaction forms disagree")
    return s


def imprecision_backaction_product(S_xx_imp, S_FF):
    """``sqrt(S_xx_imp * S_FF)`` in units of ``hbar/2``."""
    if np.any(np.asarray(S_xx_imp) < 0) or np.any(np.asarray(S_FF) < 0):
        raise ValueError("spectral densities must be non-negative")
    return np.sqrt(S_xx_imp * S_FF) / (0.5 * HBAR)


@dataclass(frozen=True)
class NoiseBudget:
    S_FF_the: float
    S_FF_cryo: float
    S_FF_ba: float
    S_FF_qba: float
    S_xx_imp: float
    product_over_hbar2: float

    @property
    def cryo_fraction(self):
        return self.S_FF_cryo / self.S_FF_the

    @property
    def ba_fraction(self):
        return self.S_FF_ba / self.S_FF_the

    @property
    def qba_ratio(self):
        return self.S_FF_qba / self.S_FF_the


def noise_budget(S_FF_the, S_FF_cryo, S_FF_qba, S_xx_imp):
    """Assemble the budget; the excess backaction term is ``the - cryo``.

    A negative difference (the two inputs are separately measured) is
    clamped to zero with a warning.
    """
    for name, val in (("S_FF_the", S_FF_the), ("S_FF_cryo", S_FF_cryo),
                      ("S_FF_qba", S_FF_qba), ("S_xx_imp", S_xx_imp)):
        if not val >= 0:
            raise ValueError(f"{name} must be non-negative")
    ba = S_FF_the - S_FF_cryo
    if ba < 0:
        warnings.warn(f"S_FF_the < S_FF_cryo by {-ba:.3g} N^2/Hz; excess backaction clamped to 0",
                      RegimeWarning)
        ba = 0.0
    return NoiseBudget(float(S_FF_the), float(S_FF_cryo), float(ba), float(S_FF_qba), float(S_xx_imp),
                       float(imprecision_backaction_product(S_xx_imp, S_FF_the)))
