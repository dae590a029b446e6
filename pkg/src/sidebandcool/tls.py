"""Two-level-system (TLS) model of the mechanical mode's temperature dependence.

Glassy silica hosts tunnelling defects whose relaxation damps the mode and
shifts its frequency.  Two channels are kept: tunnelling-assisted relaxation
(a double integral over TLS energy and relaxation rate) and resonant
absorption (closed form).  The same curves, once calibrated, are inverted to
read the sample temperature off the measured frequency or linewidth.

Conventions: energies in J, temperatures in K, frequencies in rad/s.  The
tunnelling integrals use ``eps = E / k_B T`` on ``(0, 50]`` for the energy
and ``v = sqrt(1 - u)`` for the relaxation-rate variable, which leaves smooth
integrands on fixed domains.
"""
from dataclasses import dataclass, field, replace
import math
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import RegimeError
from .quadrature import integrate_batch
from .units import HBAR, K_B

T_MIN = 0.1
T_MAX = 10.0
EPS_MAX = 50.0
DEFAULT_RTOL = 1e-7


class TemperatureRangeError(RegimeError):
    """Temperature outside the range the TLS model is used in."""


class UnattainableObservation(RegimeError):
    """The observed value is not reached anywhere inside the bracket."""


class AmbiguousInversion(RegimeError):
    """The observed value is reached at more than one temperature."""

    def __init__(self, message, roots):
        super().__init__(message)
        self.roots = list(roots)


@dataclass(frozen=True)
class TlsMaterial:
    """Material constants of the amorphous host and its TLS ensemble.

    ``pbar_q`` and ``pbar_omega`` are the TLS densities used for damping and
    frequency terms respectively; the two are allowed to differ.
    """

    B: float  # deformation potential, J
    rho: float  # kg / m^3
    c_s: float  # m / s
    pbar_q: float  # m^-3
    pbar_omega: float  # m^-3
    T0: float = 1.0  # reference temperature of the resonant shift, K

    def __post_init__(self):
        for name in ("B", "rho", "c_s", "T0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TlsMaterial.{name} must be positive")
        for name in ("pbar_q", "pbar_omega"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"TlsMaterial.{name} must be non-negative")

    def constant(self, pbar):
        """Dimensionless coupling ``pbar * B**2 / (rho * c_s**2)``."""
        return pbar * self.B**2 / (self.rho * self.c_s**2)

    @property
    def c_q(self):
        return self.constant(self.pbar_q)

    @property
    def c_omega(self):
        return self.constant(self.pbar_omega)

    @property
    def rate_prefactor(self):
        """Coefficient of ``E**3 coth(E/2kT)`` in the maximum relaxation rate."""
        return 3.0 * self.B**2 / (2.0 * math.pi * self.rho * HBAR**4 * self.c_s**5)


@dataclass(frozen=True)
class TlsModel:
    """Calibrated temperature dependence of one mechanical mode."""

    material: TlsMaterial
    omega_m_bare: float  # rad/s
    q_cla_inv: float = 0.0
    arrhenius_V: Optional[float] = None  # J
    arrhenius_tau0: Optional[float] = None  # s

    def __post_init__(self):
        if not self.omega_m_bare > 0:
            raise ValueError("omega_m_bare must be positive")
        if not self.q_cla_inv >= 0:
            raise ValueError("q_cla_inv must be non-negative")
        if self.arrhenius_tau0 is not None and not self.arrhenius_tau0 > 0:
            raise ValueError("arrhenius_tau0 must be positive")

    @classmethod
    def anchored(cls, material, omega_m_bare, T, q_m, **kwargs):
        """Model whose clamping loss is chosen so that ``Q_m(T) == q_m``."""
        probe = cls(material, omega_m_bare, 0.0, **kwargs)
        tls_part = float(q_inv_tunneling(T, probe)) + float(
            q_inv_resonant(T, omega_m_bare, material))
        q_cla_inv = 1.0 / q_m - tls_part
        if q_cla_inv < 0:
            raise RegimeError(
                f"Q_m({T} K) = {q_m} is below the TLS-only limit {1 / tls_part:.4g}")
        return replace(probe, q_cla_inv=q_cla_inv)

    def frequency(self, T):
        return mechanical_frequency(T, self)

    def damping(self, T):
        return mechanical_damping(T, self)

    def mechanical_response(self, T):
        """``(delta_omega, q_inv)``: total TLS frequency shift and total Q^-1."""
        T = _check_range(T)
        shift = freq_shift_tunneling(T, self) + freq_shift_resonant(T, self.omega_m_bare, self.material)
        q_inv = self.q_cla_inv + q_inv_tunneling(T, self) + q_inv_resonant(T, self.omega_m_bare, self.material)
        return shift, q_inv


def _check_range(T):
    T = np.asarray(T, dtype=float)
    if np.any(~((T >= T_MIN) & (T <= T_MAX))):
        bad = T[~((T >= T_MIN) & (T <= T_MAX))]
        raise TemperatureRangeError(
            f"temperature {float(bad.ravel()[0])!r} K outside supported range [{T_MIN}, {T_MAX}] K")
    return T


def _as_output(x):
    x = np.asarray(x)
    return float(x) if np.ndim(x) == 0 else x


def _sech2(y):
    # 4 e^{-2|y|} / (1 + e^{-2|y|})^2, overflow-free.
    z = np.exp(-2.0 * np.abs(y))
    return 4.0 * z / (1.0 + z) ** 2


def _fermi(E, T):
    return 1.0 / (np.exp(E / (K_B * T)) + 1.0)


def occupation_derivative(E, T):
    """``-dn0/dE`` for the TLS equilibrium occupation ``n0 = 1/(exp(E/kT)+1)``."""
    T = np.asarray(T, dtype=float)
    if np.any(~(T > 0)):
        raise ValueError("temperature must be positive")
    E = np.asarray(E, dtype=float)
    return _as_output(_sech2(E / (2.0 * K_B * T)) / (4.0 * K_B * T))


def _x_coth_x(x):
    # x * coth(x), equal to 1 at x = 0
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x * x / 3.0, safe / np.tanh(safe))


def max_relaxation_rate(E, T, mat):
    """Maximum (symmetric-TLS) tunnelling relaxation rate at splitting ``E``, in 1/s."""
    E = np.asarray(E, dtype=float)
    T = np.asarray(T, dtype=float)
    x = E / (2.0 * K_B * T)
    # E^3 coth(x) = E^2 * 2kT * x coth(x), finite as E -> 0
    rate = mat.rate_prefactor * E**2 * (2.0 * K_B * T) * _x_coth_x(x)
    return _as_output(rate)


def _damping_kernel(v, a):
    one_minus = (1.0 - v) * (1.0 + v)
    return 2.0 * v * v / (one_minus**2 + a * a)


def _spring_kernel(v, a):
    one_minus = (1.0 - v) * (1.0 + v)
    return 2.0 * v * v * one_minus / (one_minus**2 + a * a)


def _inner(a, kernel, rtol):
    a = np.asarray(a, dtype=float)
    shape = a.shape
    flat = a.ravel()
    if np.any(~(flat > 0)):
        raise ValueError("inner TLS integral requires a > 0 (it diverges at a = 0)")
    val, err = integrate_batch(
        lambda v, idx: kernel(v, flat[idx][:, None]),
        np.zeros(flat.size), np.ones(flat.size), rtol=rtol)
    return val.reshape(shape), err.reshape(shape)


def inner_integral_damping(a, rtol=DEFAULT_RTOL, full_output=False):
    """``int_0^1 sqrt(1-u) / (u^2 + a^2) du`` with ``a = Omega_m * tau_m``."""
    val, err = _inner(a, _damping_kernel, rtol)
    return (_as_output(val), _as_output(err)) if full_output else _as_output(val)


def inner_integral_spring(a, rtol=DEFAULT_RTOL, full_output=False):
    """``int_0^1 u sqrt(1-u) / (u^2 + a^2) du`` with ``a = Omega_m * tau_m``."""
    val, err = _inner(a, _spring_kernel, rtol)
    return (_as_output(val), _as_output(err)) if full_output else _as_output(val)


def _omega_tau(eps, T, model):
    E = eps * K_B * T
    return model.omega_m_bare / max_relaxation_rate(E, T, model.material)


def _outer(T, model, rtol, damping):
    T = _check_range(T)
    shape = T.shape
    temps = T.ravel()
    inner_rtol = 0.1 * rtol
    kernel = _damping_kernel if damping else _spring_kernel

    def integrand(eps, idx):
        a = _omega_tau(eps, temps[idx][:, None], model)
        inner_val, inner_err = _inner(a, kernel, inner_rtol)
        weight = 0.25 * _sech2(0.5 * eps)  # (-dn0/dE) dE in units of eps
        if damping:
            return weight * a * inner_val, weight * a * inner_err
        return weight * inner_val, weight * inner_err

    val, err = integrate_batch(integrand, np.zeros(temps.size), np.full(temps.size, EPS_MAX), rtol=rtol)
    return val.reshape(shape), err.reshape(shape)


def q_inv_tunneling(T, model, rtol=DEFAULT_RTOL, full_output=False):
    """Inverse quality factor from tunnelling-assisted TLS relaxation.

    Accepts a scalar or an array of temperatures; all temperatures are
    integrated together.  With ``full_output`` the absolute error estimate is
    returned as well.
    """
    val, err = _outer(T, model, rtol, damping=True)
    scale = 2.0 * model.material.c_q
    if full_output:
        return _as_output(scale * val), _as_output(scale * err)
    return _as_output(scale * val)


def freq_shift_tunneling(T, model, rtol=DEFAULT_RTOL, full_output=False):
    """Frequency shift (rad/s, negative) from tunnelling-assisted relaxation."""
    val, err = _outer(T, model, rtol, damping=False)
    scale = model.omega_m_bare * model.material.c_omega
    if full_output:
        return _as_output(-scale * val), _as_output(scale * err)
    return _as_output(-scale * val)


def q_inv_resonant(T, omega_m, mat):
    """Inverse quality factor from resonant phonon absorption by TLS."""
    T = np.asarray(T, dtype=float)
    if np.any(~(T > 0)):
        raise ValueError("temperature must be positive")
    return _as_output(math.pi * mat.c_q * np.tanh(HBAR * omega_m / (2.0 * K_B * T)))


def freq_shift_resonant(T, omega_m, mat):
    """Resonant TLS frequency shift ``omega_m * C * ln(T/T0)`` in rad/s."""
    T = np.asarray(T, dtype=float)
    if np.any(~(T > 0)):
        raise ValueError("temperature must be positive")
    return _as_output(omega_m * mat.c_omega * np.log(T / mat.T0))


def arrhenius_rate(T, model):
    """Thermally activated relaxation rate ``exp(-V/kT)/tau0`` (1/s).

    Provided for completeness; it is not part of the frequency or damping
    curves in the 0.1-10 K range.
    """
    if model.arrhenius_V is None or model.arrhenius_tau0 is None:
        raise ValueError("model has no Arrhenius parameters (arrhenius_V, arrhenius_tau0)")
    T = np.asarray(T, dtype=float)
    if np.any(~(T > 0)):
        raise ValueError("temperature must be positive")
    with np.errstate(over="ignore"):
        rate = np.exp(-model.arrhenius_V / (K_B * T)) / model.arrhenius_tau0
    return _as_output(rate)


def mechanical_frequency(T, model):
    """Temperature-dependent resonance frequency (rad/s)."""
    shift, _ = model.mechanical_response(T)
    return _as_output(model.omega_m_bare + shift)


def mechanical_damping(T, model):
    """Temperature-dependent energy damping rate ``Omega_m(T) / Q_m(T)`` (rad/s)."""
    shift, q_inv = model.mechanical_response(T)
    return _as_output((model.omega_m_bare + shift) * q_inv)


def thermometer(observed, observable, model, bracket=(T_MIN, T_MAX), n_scan=64, rtol=1e-10):
    """Infer the sample temperature from a measured frequency or damping rate.

    Parameters
    ----------
    observed : float
        Measured resonance frequency or damping rate in rad/s.
    observable : {"frequency", "damping"}
    model : TlsModel or TlsCurve
        Anything with ``frequency(T)`` and ``damping(T)`` accepting arrays.
    bracket : (float, float)
        Temperature interval to search, within [0.1, 10] K.

    Raises
    ------
    UnattainableObservation
        The observed value is not crossed inside the bracket.
    AmbiguousInversion
        The value is crossed more than once; all roots are attached.
    """
    if observable not in ("frequency", "damping"):
        raise ValueError(f"observable must be 'frequency' or 'damping', got {observable!r}")
    t_lo, t_hi = (float(b) for b in bracket)
    if not t_lo < t_hi:
        raise ValueError("bracket must be increasing")
    _check_range([t_lo, t_hi])
    forward = model.frequency if observable == "frequency" else model.damping

    grid = np.linspace(t_lo, t_hi, n_scan)
    resid = np.asarray(forward(grid), dtype=float) - observed

    def g(t):
        return float(forward(t)) - observed

    roots = [float(t) for t in grid[resid == 0.0]]
    for i in range(n_scan - 1):
        r0, r1 = resid[i], resid[i + 1]
        if r0 != 0.0 and r1 != 0.0 and np.sign(r0) != np.sign(r1):
            roots.append(brentq(g, grid[i], grid[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200))
    roots.sort()

    if not roots:
        lo, hi = float(resid.min() + observed), float(resid.max() + observed)
        raise UnattainableObservation(
            f"unattainable observation: {observable} {observed!r} rad/s not reached in "
            f"[{t_lo}, {t_hi}] K (range {lo:.10g} .. {hi:.10g} rad/s)")
    if len(roots) > 1:
        listing = ", ".join(f"{r:.9g} K" for r in roots)
        raise AmbiguousInversion(
            f"ambiguous inversion: {observable} {observed!r} rad/s is reached at {listing}", roots)
    return roots[0]


@dataclass(frozen=True)
class TlsCurve:
    """Cached spline of a :class:`TlsModel` over a temperature window.

    Evaluating the double integrals costs milliseconds; detuning-series fits
    need the curves thousands of times, so they are tabulated once on a
    log-spaced grid and interpolated.  Outside the window the response is NaN.
    """

    model: TlsModel
    t_min: float = 0.3
    t_max: float = 6.0
    n: int = 161
    _splines: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_range([self.t_min, self.t_max])
        grid = np.geomspace(self.t_min, self.t_max, self.n)
        shift, q_inv = self.model.mechanical_response(grid)
        x = np.log(grid)
        object.__setattr__(self, "_splines", (CubicSpline(x, shift), CubicSpline(x, q_inv)))

    @property
    def omega_m_bare(self):
        return self.model.omega_m_bare

    def mechanical_response(self, T):
        T = np.asarray(T, dtype=float)
        inside = (T >= self.t_min) & (T <= self.t_max)
        x = np.log(np.where(inside, T, self.t_min))
        shift = np.where(inside, self._splines[0](x), np.nan)
        q_inv = np.where(inside, self._splines[1](x), np.nan)
        return _as_output(shift), _as_output(q_inv)

    def _checked(self, T):
        T = np.asarray(T, dtype=float)
        if np.any(~((T >= self.t_min) & (T <= self.t_max))):
            raise TemperatureRangeError(f"temperature outside tabulated window [{self.t_min}, {self.t_max}] K")
        return T

    def frequency(self, T):
        shift, _ = self.mechanical_response(self._checked(T))
        return _as_output(self.model.omega_m_bare + shift)

    def damping(self, T):
        shift, q_inv = self.mechanical_response(self._checked(T))
        return _as_output((self.model.omega_m_bare + shift) * q_inv)


@dataclass(frozen=True)
class FixedMechanics:
    """Temperature-independent mode: constant frequency and quality factor."""

    omega_m_bare: float
    q_m: float

    def __post_init__(self):
        if not (self.omega_m_bare > 0 and self.q_m > 0):
            raise ValueError("FixedMechanics needs positive omega_m_bare and q_m")

    def mechanical_response(self, T):
        T = np.asarray(T, dtype=float)
        return _as_output(np.zeros_like(T)), _as_output(np.full_like(T, 1.0 / self.q_m))

    def frequency(self, T):
        return _as_output(np.full_like(np.asarray(T, dtype=float), self.omega_m_bare))

    def damping(self, T):
        return _as_output(np.full_like(np.asarray(T, dtype=float), self.omega_m_bare / self.q_m))
