"""Dynamical backaction of the split optical doublet on the mechanical mode.

Everything is built on the backaction function

    f(W) = 2 g0^2 sum_s |a_s|^2 (L_s(D + W) - conj(L_s(D - W))),

whose real part at the mechanical frequency adds to the damping and whose
imaginary part (halved) shifts the frequency.  A second, algebraically
equivalent formulation in terms of ``hbar G^2`` is kept alongside for
cross-checking; it never shares code with the first.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cavity import MINUS, PLUS, lorentzian_response
from .errors import NumericalError
from .units import HBAR

WEAK_COUPLING_LIMIT = 0.1


@dataclass(frozen=True)
class MechanicalMode:
    """Mechanical mode at the current sample temperature.

    ``omega_m`` and ``gamma_m`` are the temperature-corrected values
    ``Omega_m(T)`` and ``Gamma_m(T)``; ``x_zpf`` follows from them.
    """

    m_eff: float
    omega_m: float
    gamma_m: float

    def __post_init__(self):
        if not self.m_eff > 0:
            raise ValueError("m_eff must be positive")
        if np.any(~(np.asarray(self.omega_m) > 0)):
            raise ValueError("omega_m must be positive")
        if np.any(~(np.asarray(self.gamma_m) > 0)):
            raise ValueError("gamma_m must be positive")

    @property
    def x_zpf(self):
        return np.sqrt(HBAR / (2.0 * self.m_eff * self.omega_m))

    @property
    def q_m(self):
        return self.omega_m / self.gamma_m

    def g0(self, cav):
        """Vacuum coupling rate ``G * x_zpf`` (rad/s)."""
        return cav.G * self.x_zpf


def bare_susceptibility(Omega, mech):
    """``1 / (m (Omega_m^2 - W^2 - i W Gamma_m))`` in m/N."""
    W = np.asarray(Omega, dtype=float)
    out = 1.0 / (mech.m_eff * (mech.omega_m**2 - W**2 - 1j * W * mech.gamma_m))
    return complex(out) if np.ndim(out) == 0 else out


def backaction_function(Omega, fields, detuning, cav, g0):
    """The backaction function ``f(Omega)`` in rad/s (complex)."""
    W = np.asarray(Omega, dtype=float)
    D = np.asarray(detuning, dtype=float)
    total = 0.0
    for branch, amp in ((PLUS, fields.a_plus), (MINUS, fields.a_minus)):
        n = np.abs(amp) ** 2
        total = total + n * (lorentzian_response(D + W, branch, cav)
                             - np.conj(lorentzian_response(D - W, branch, cav)))
    out = 2.0 * g0**2 * total
    return complex(out) if np.ndim(out) == 0 else out


def effective_susceptibility(Omega, mech, fields, detuning, cav):
    """``1 / (m (Omega_m^2 - W^2 - i Gamma_m W - i Omega_m f(W)))`` in m/N."""
    W = np.asarray(Omega, dtype=float)
    f = backaction_function(W, fields, detuning, cav, mech.g0(cav))
    inv = mech.m_eff * (mech.omega_m**2 - W**2 - 1j * mech.gamma_m * W - 1j * mech.omega_m * f)
    out = 1.0 / inv
    return complex(out) if np.ndim(out) == 0 else out


# -- dual formulation -------------------------------------------------------

def _doublet_sum(Omega, fields, detuning, cav):
    # sum_s |a_s|^2 (L_s(D+W) - conj(L_s(D-W))) written out explicitly.
    W = np.asarray(Omega, dtype=float)
    D = np.asarray(detuning, dtype=float)
    h = 0.5 * cav.kappa
    out = 0.0
    for amp, offset in ((fields.a_plus, 0.5 * cav.gamma_split), (fields.a_minus, -0.5 * cav.gamma_split)):
        up = D + offset + W
        down = D + offset - W
        term = 1.0 / (h - 1j * up) - 1.0 / (h + 1j * down)
        out = out + np.real(amp * np.conj(amp)) * term
    return out


def inverse_effective_susceptibility_dual(Omega, mech, fields, detuning, cav):
    """``1/chi_m(W) - i hbar G^2 S(W)`` with ``S`` the doublet sum."""
    W = np.asarray(Omega, dtype=float)
    inv_bare = mech.m_eff * (-W**2 - 1j * W * mech.gamma_m + mech.omega_m**2)
    out = inv_bare - 1j * HBAR * cav.G**2 * _doublet_sum(W, fields, detuning, cav)
    return complex(out) if np.ndim(out) == 0 else out


def effective_damping_dual(mech, fields, detuning, cav):
    """``Gamma_m + 2 x_zpf^2 G^2 Re S(Omega_m)``."""
    s = _doublet_sum(mech.omega_m, fields, detuning, cav)
    return mech.gamma_m + 2.0 * HBAR / (2.0 * mech.m_eff * mech.omega_m) * cav.G**2 * np.real(s)


def effective_frequency_dual(mech, fields, detuning, cav):
    """``Omega_m + x_zpf^2 G^2 Im S(Omega_m)``."""
    s = _doublet_sum(mech.omega_m, fields, detuning, cav)
    return mech.omega_m + HBAR / (2.0 * mech.m_eff * mech.omega_m) * cav.G**2 * np.imag(s)


# -- weak-coupling effective parameters -------------------------------------

class BackactionResponse(NamedTuple):
    gamma_eff: object  # rad/s
    omega_eff: object  # rad/s
    f: object  # f evaluated where the answer was taken, rad/s
    unstable: object  # gamma_eff <= 0
    coupling_ratio: object  # max(|Re f|, |Im f|) / kappa
    strained: object  # coupling_ratio above the weak-coupling limit


class DampingResult(NamedTuple):
    gamma_eff: object
    unstable: object
    coupling_ratio: object
    strained: object


def backaction_response(mech, fields, detuning, cav, self_consistent=False):
    """Effective damping and frequency together, with regime flags.

    By default ``f`` is evaluated at the bare ``Omega_m``.  With
    ``self_consistent`` it is re-evaluated once at the resulting
    ``Omega_eff``, a diagnostic for how much the first-order result moves.
    """
    g0 = mech.g0(cav)
    f = backaction_function(mech.omega_m, fields, detuning, cav, g0)
    if self_consistent:
        f = backaction_function(mech.omega_m + 0.5 * np.imag(f), fields, detuning, cav, g0)
    gamma_eff = mech.gamma_m + np.real(f)
    omega_eff = mech.omega_m + 0.5 * np.imag(f)
    ratio = np.maximum(np.abs(np.real(f)), np.abs(np.imag(f))) / cav.kappa
    unstable = gamma_eff <= 0

    def out(x):
        return np.asarray(x).item() if np.ndim(x) == 0 else x

    return BackactionResponse(out(gamma_eff), out(omega_eff), out(f), out(unstable),
                              out(ratio), out(ratio > WEAK_COUPLING_LIMIT))


def effective_damping(mech, fields, detuning, cav, self_consistent=False):
    """``Gamma_eff = Gamma_m + Re f(Omega_m)``, flagged rather than raised when unstable."""
    r = backaction_response(mech, fields, detuning, cav, self_consistent)
    return DampingResult(r.gamma_eff, r.unstable, r.coupling_ratio, r.strained)


def effective_frequency(mech, fields, detuning, cav, self_consistent=False):
    """``Omega_eff = Omega_m + Im f(Omega_m) / 2`` in rad/s."""
    return backaction_response(mech, fields, detuning, cav, self_consistent).omega_eff


def weak_coupling_ratio(mech, fields, detuning, cav):
    return backaction_response(mech, fields, detuning, cav).coupling_ratio


def _continued_f(w, fields, detuning, cav, g0):
    # f with the mechanical frequency continued into the complex plane, and df/dw
    f = 0.0
    df = 0.0
    for sign, n in ((1.0, fields.n_plus), (-1.0, fields.n_minus)):
        d = detuning + sign * 0.5 * cav.gamma_split
        l1 = 1.0 / (-1j * (d + w) + 0.5 * cav.kappa)
        l2 = 1.0 / (1j * (d - w) + 0.5 * cav.kappa)
        f = f + n * (l1 - l2)
        df = df + n * 1j * (l1 * l1 - l2 * l2)
    return 2.0 * g0**2 * f, 2.0 * g0**2 * df


def mechanical_pole(mech, fields, detuning, cav, tol=1e-14, max_iter=50):
    """Exact damping and frequency of the linearized mode, ``(Gamma, Omega)`` in rad/s.

    Solves ``1/chi_eff(w) = 0`` for complex ``w`` by Newton iteration from
    the first-order result; ``Gamma = -2 Im w``, ``Omega = Re w``.  The
    first-order ``Gamma_eff`` evaluates ``f`` at the real ``Omega_m`` and
    differs from this by roughly ``Gamma_eff / kappa`` in relative terms, which
    matters near the cooling optimum at high power.
    """
    g0 = mech.g0(cav)
    first = backaction_response(mech, fields, detuning, cav)
    w = first.omega_eff - 0.5j * first.gamma_eff
    for _ in range(max_iter):
        f, df = _continued_f(w, fields, detuning, cav, g0)
        F = mech.omega_m**2 - w * w - 1j * mech.gamma_m * w - 1j * mech.omega_m * f
        dF = -2.0 * w - 1j * mech.gamma_m - 1j * mech.omega_m * df
        step = F / dF
        w = w - step
        if abs(step) <= tol * abs(w):
            return float(-2.0 * w.imag), float(w.real)
    raise NumericalError("mechanical pole iteration did not converge")


def calibration_transduction_factor(Omega_mod, mech, fields, detuning, cav):
    """``|chi_eff(W_mod) / chi_m(W_mod)|``: how the optomechanical response rescales a calibration tone.

    A value below one means the tone is de-amplified by the cooling beam.
    """
    ratio = np.abs(effective_susceptibility(Omega_mod, mech, fields, detuning, cav)
                   / bare_susceptibility(Omega_mod, mech))
    return float(ratio) if np.ndim(ratio) == 0 else ratio


__all__ = [
    "MechanicalMode", "bare_susceptibility", "backaction_function", "effective_susceptibility",
    "inverse_effective_susceptibility_dual", "effective_damping_dual", "effective_frequency_dual",
    "BackactionResponse", "DampingResult", "backaction_response", "effective_damping",
    "effective_frequency", "weak_coupling_ratio", "calibration_transduction_factor",
    "WEAK_COUPLING_LIMIT", "mechanical_pole",
]
