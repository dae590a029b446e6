"""Displacement noise spectra: synthesis, tone calibration, peak fitting.

Spectra are stored against frequency in Hz with the PSD double-sided and
symmetrized, i.e. per Hz with the variance split evenly between positive
and negative frequencies.  A mechanical peak seen at positive frequency
therefore integrates to half of ``<x^2>``; the fitted ``area`` is the full
variance.
"""
from dataclasses import dataclass, field, replace
import math
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import least_squares

from .backaction import effective_susceptibility
from .errors import ConfigError, NumericalError
from .units import K_B, TWO_PI

RAW = "raw_detector"
METERS = "meters_squared"
DOUBLE_SIDED = "double-sided symmetrized"
SINGLE_SIDED = "single-sided"
MIN_POINTS = 8
MIN_FIT_POINTS = 16


class CalibrationError(ConfigError):
    """The calibration tone is missing or too weak in the raw spectrum."""


class PeakFitError(NumericalError):
    """Lorentzian fit failed or found no resolvable peak."""


@dataclass(frozen=True)
class CalibrationTone:
    """Phase-modulation calibration tone.

    ``known_displacement_equiv`` is the rms displacement that the modulation
    mimics (m).  Converting a modulation depth into this number needs the
    separately calibrated phase-to-displacement relation, so it is supplied
    rather than derived.
    """

    f_mod: float  # Hz
    depth: float  # rad
    known_displacement_equiv: float  # m, rms

    def __post_init__(self):
        if not self.depth > 0:
            raise ValueError("tone depth must be positive")
        if not self.known_displacement_equiv > 0:
            raise ValueError("known_displacement_equiv must be positive")
        if not self.f_mod > 0:
            raise ValueError("f_mod must be positive")


@dataclass(frozen=True)
class Spectrum:
    freq: np.ndarray  # Hz
    psd: np.ndarray
    units: str = METERS
    convention: str = DOUBLE_SIDED
    calib: Optional[CalibrationTone] = None
    meta: tuple = field(default=())  # extra (key, value) header pairs, kept for round trips

    def __post_init__(self):
        freq = np.asarray(self.freq, dtype=float)
        psd = np.asarray(self.psd, dtype=float)
        object.__setattr__(self, "freq", freq)
        object.__setattr__(self, "psd", psd)
        if freq.ndim != 1 or freq.shape != psd.shape:
            raise ValueError("freq and psd must be 1-D arrays of equal length")
        if freq.size < MIN_POINTS:
            raise ValueError(f"a spectrum needs at least {MIN_POINTS} points, got {freq.size}")
        if not np.all(np.isfinite(freq)) or np.any(np.diff(freq) <= 0):
            raise ValueError("freq must be finite and strictly increasing")
        if not np.all(np.isfinite(psd)) or np.any(psd < 0):
            raise ValueError("psd must be finite and non-negative")
        if self.units not in (RAW, METERS):
            raise ValueError(f"units must be {RAW!r} or {METERS!r}, got {self.units!r}")
        if self.convention != DOUBLE_SIDED:
            raise ValueError(f"spectra are held as {DOUBLE_SIDED!r}; convert single-sided data on ingest")
        if self.calib is not None and not freq[0] <= self.calib.f_mod <= freq[-1]:
            raise ValueError("calibration tone frequency outside the spectrum span")

    @property
    def omega(self):
        return TWO_PI * self.freq


@dataclass(frozen=True)
class PeakFit:
    omega_eff: float  # rad/s
    gamma_eff: float  # rad/s, FWHM
    area: float  # <x^2>, both frequency signs
    background: float  # psd units
    residual_norm: float  # rms relative residual

    @property
    def f_eff(self):
        return self.omega_eff / TWO_PI


def synthesize_spectrum(grid, mech, fields, detuning, cav, S_FF, S_xx_imp, calib=None):
    """``S_xx = S_xx_imp + |chi_eff|^2 S_FF`` on a frequency grid in Hz (white inputs)."""
    grid = np.asarray(grid, dtype=float)
    chi = effective_susceptibility(TWO_PI * grid, mech, fields, detuning, cav)
    psd = S_xx_imp + np.abs(chi) ** 2 * S_FF
    return Spectrum(grid, psd, METERS, DOUBLE_SIDED, calib)


def add_calibration_tone(spec, tone, transduction=1.0):
    """Add a single-bin tone of rms size ``transduction * known_displacement_equiv``.

    The apparent tone is rescaled by the optomechanical transduction factor,
    exactly as :func:`calibrate_spectrum` assumes on the way back.
    """
    i = int(np.argmin(np.abs(spec.freq - tone.f_mod)))
    df = _bin_width(spec.freq, i)
    psd = spec.psd.copy()
    psd[i] += 0.5 * (transduction * tone.known_displacement_equiv) ** 2 / df
    return replace(spec, psd=psd, calib=tone)


def _bin_width(freq, i):
    lo = freq[max(i - 1, 0)]
    hi = freq[min(i + 1, freq.size - 1)]
    return (hi - lo) / (min(i + 1, freq.size - 1) - max(i - 1, 0))


def tone_power(spec, f_mod, half_width=3, bg_inner=4, bg_outer=20):
    """Integrated excess power of a narrow tone and its local SNR.

    Bins within ``half_width`` of the tone are summed (rectangular window);
    the background is the median of bins ``bg_inner``..``bg_outer`` away on
    either side.  Returns ``(power, snr, background)`` where ``snr`` is the
    excess over the background power in the same bins.
    """
    freq, psd = spec.freq, spec.psd
    n = freq.size
    if not freq[0] <= f_mod <= freq[-1]:
        raise CalibrationError(
            f"calibration tone not found: f_mod = {f_mod!r} Hz lies outside the spectrum "
            f"[{freq[0]!r}, {freq[-1]!r}] Hz")
    i = int(np.argmin(np.abs(freq - f_mod)))
    lo, hi = max(i - half_width, 0), min(i + half_width, n - 1)
    side = np.r_[np.arange(i - bg_outer, i - bg_inner + 1), np.arange(i + bg_inner, i + bg_outer + 1)]
    side = side[(side >= 0) & (side < n)]
    window = f"[{freq[lo]!r}, {freq[hi]!r}] Hz"
    if side.size < 4:
        raise CalibrationError(f"calibration tone not found: no background bins around window {window}")
    bg = float(np.median(psd[side]))
    df = np.array([_bin_width(freq, k) for k in range(lo, hi + 1)])
    excess = float(np.sum((psd[lo:hi + 1] - bg) * df))
    floor = bg * float(np.sum(df))
    snr = excess / floor if floor > 0 else (math.inf if excess > 0 else 0.0)
    if not excess > 0:
        raise CalibrationError(f"calibration tone not found in window {window} (no excess over background)")
    return excess, snr, bg


def calibrate_spectrum(raw, tone=None, transduction=1.0, min_snr=5.0, half_width=3):
    """Scale a raw detector spectrum into displacement units with the calibration tone.

    The tone's apparent rms size is ``transduction * known_displacement_equiv``
    (``transduction`` is ``|chi_eff/chi_m|`` at the tone frequency), so the
    scale factor is ``(transduction * x_cal)^2 / (2 * P_tone)``.  The factor 2
    accounts for the positive-frequency half of the double-sided spectrum.
    """
    if raw.units != RAW:
        raise ValueError(f"calibrate_spectrum expects units {RAW!r}, got {raw.units!r}")
    tone = tone if tone is not None else raw.calib
    if tone is None:
        raise CalibrationError("no calibration tone given and none recorded in the spectrum")
    if not transduction > 0:
        raise ValueError("transduction factor must be positive")
    power, snr, _ = tone_power(raw, tone.f_mod, half_width=half_width)
    if snr < min_snr:
        raise CalibrationError(f"calibration tone too weak: SNR {snr:.3g} < {min_snr:g} at {tone.f_mod!r} Hz")
    k = 0.5 * (transduction * tone.known_displacement_equiv) ** 2 / power
    return replace(raw, psd=raw.psd * k, units=METERS, calib=tone), k


def _lorentz_hz(f, f0, hwhm, area, bg):
    return bg + 0.5 * area / math.pi * hwhm / ((f - f0) ** 2 + hwhm**2)


def _exact_hz(f, f0, hwhm, area, bg):
    # |chi|^2-type line, FWHM Gamma = 4 pi hwhm, normalised to the same area
    w, w0, g = TWO_PI * f, TWO_PI * f0, 2.0 * TWO_PI * hwhm
    return bg + 2.0 * g * w0**2 * area / ((w0**2 - w**2) ** 2 + g**2 * w**2)


def fit_lorentzian(spec, window=None, shape="lorentzian", max_nfev=2000):
    """Least-squares peak fit of ``background + Lorentzian`` within ``window`` (Hz).

    The fit is done on log residuals, which treats multiplicative noise
    evenly across the peak and the floor.  ``shape="exact"`` uses the full
    harmonic-oscillator line instead of the symmetric Lorentzian.
    """
    if shape not in ("lorentzian", "exact"):
        raise ValueError("shape must be 'lorentzian' or 'exact'")
    model = _lorentz_hz if shape == "lorentzian" else _exact_hz
    f, S = spec.freq, spec.psd
    if window is not None:
        lo, hi = window
        if not lo < hi:
            raise ValueError("degenerate fit window")
        sel = (f >= lo) & (f <= hi)
        f, S = f[sel], S[sel]
    if f.size < MIN_FIT_POINTS:
        raise PeakFitError(f"fit window holds {f.size} points, need at least {MIN_FIT_POINTS}")

    span = f[-1] - f[0]
    df_min = float(np.min(np.diff(f)))
    bg0 = float(np.percentile(S, 10))
    ipk = int(np.argmax(S))
    f0, height = f[ipk], S[ipk] - bg0
    if not height > 0:
        raise PeakFitError("no peak above the background in the fit window")
    above = np.count_nonzero(S - bg0 > 0.5 * height)
    hwhm0 = max(0.5 * above * span / (f.size - 1), df_min)
    area0 = 2.0 * math.pi * height * hwhm0

    fc = 0.5 * (f[0] + f[-1])
    scale = S.max()
    floor = 1e-300
    logS = np.log(np.maximum(S, floor))

    def unpack(p):
        return fc + p[0] * span, math.exp(p[1]) * span, math.exp(p[2]) * scale * span, math.exp(p[3]) * scale

    def resid(p):
        return np.log(np.maximum(model(f, *unpack(p)), floor)) - logS

    p0 = np.array([(f0 - fc) / span, math.log(hwhm0 / span), math.log(area0 / (scale * span)),
                   math.log(max(bg0, 1e-30 * scale) / scale)])
    lower = np.array([-0.5, math.log(0.05 * df_min / span), -200.0, -200.0])
    upper = np.array([0.5, math.log(0.5), 50.0, 5.0])
    p0 = np.clip(p0, lower + 1e-9, upper - 1e-9)
    sol = least_squares(resid, p0, bounds=(lower, upper), x_scale="jac", xtol=1e-15, ftol=1e-15,
                        gtol=1e-15, max_nfev=max_nfev)
    if sol.status <= 0:
        raise PeakFitError(f"Lorentzian fit did not converge ({sol.message})")
    f0, hwhm, area, bg = unpack(sol.x)
    mod = model(f, f0, hwhm, area, bg)
    rel = (S - mod) / mod
    rms = float(np.sqrt(np.mean(rel**2)))
    peak_height = 0.5 * area / (math.pi * hwhm)
    at_bound = (sol.x[1] >= upper[1] - 1e-6) or (sol.x[1] <= lower[1] + 1e-6)
    if at_bound or not f[0] <= f0 <= f[-1]:
        raise PeakFitError("Lorentzian fit ran to a bound: no resolvable peak in the window")
    if peak_height < max(3.0 * rms, 1e-6) * bg:
        raise PeakFitError(f"no significant peak: fitted height {peak_height:.3g} vs background {bg:.3g}")
    return PeakFit(TWO_PI * f0, 2.0 * TWO_PI * hwhm, area, bg, rms)


def noise_temperature(fit, m_eff):
    """Equipartition temperature ``m Omega_eff^2 <x^2> / k_B`` (K)."""
    if fit.area < 0:
        raise ValueError("peak area must be non-negative")
    return m_eff * fit.omega_eff**2 * fit.area / K_B


def peak_variance(spec, center_hz, half_width_hz):
    """``<x^2>`` by direct trapezoidal integration of the positive-frequency peak (doubled)."""
    sel = (spec.freq >= center_hz - half_width_hz) & (spec.freq <= center_hz + half_width_hz)
    return 2.0 * float(trapezoid(spec.psd[sel], spec.freq[sel]))


# -- CSV --------------------------------------------------------------------

_KNOWN_KEYS = ("units", "convention", "f_mod_hz", "phase_depth_rad", "displacement_equiv_m")


def _fmt(x):
    return repr(float(x))


def write_spectrum(spec, path):
    lines = [f"# units={spec.units}", f"# convention={spec.convention}"]
    if spec.calib is not None:
        lines += [f"# f_mod_hz={_fmt(spec.calib.f_mod)}", f"# phase_depth_rad={_fmt(spec.calib.depth)}",
                  f"# displacement_equiv_m={_fmt(spec.calib.known_displacement_equiv)}"]
    lines += [f"# {k}={v}" for k, v in spec.meta]
    lines.append("freq_hz,psd")
    lines += [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(spec.freq, spec.psd)]
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def read_spectrum(path, halve_single_sided=False):
    """Parse a spectrum CSV.

    Single-sided files are rejected unless ``halve_single_sided`` is set, in
    which case the PSD is halved to the double-sided convention.
    """
    if hasattr(path, "read"):
        text = path.read()
        name = getattr(path, "name", "<stream>")
    else:
        with open(path) as fh:
            text = fh.read()
        name = str(path)
    header, meta = {}, []
    freq, psd = [], []
    seen_columns = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            body = s[1:].strip()
            if "=" in body:
                key, val = (t.strip() for t in body.split("=", 1))
                if key in _KNOWN_KEYS:
                    header[key] = val
                else:
                    meta.append((key, val))
            continue
        if not seen_columns:
            cols = [c.strip() for c in s.split(",")]
            if cols != ["freq_hz", "psd"]:
                raise ConfigError(f"{name}:{lineno}: expected column header 'freq_hz,psd', got {s!r}")
            seen_columns = True
            continue
        parts = s.split(",")
        if len(parts) != 2:
            raise ConfigError(f"{name}:{lineno}: expected 2 columns, got {len(parts)}")
        try:
            freq.append(float(parts[0]))
            psd.append(float(parts[1]))
        except ValueError:
            raise ConfigError(f"{name}:{lineno}: non-numeric value in {s!r}") from None
    if not seen_columns:
        raise ConfigError(f"{name}: missing 'freq_hz,psd' column header")

    units = header.get("units", METERS)
    convention = header.get("convention", DOUBLE_SIDED)
    psd = np.array(psd)
    if convention == SINGLE_SIDED:
        if not halve_single_sided:
            raise ConfigError(f"{name}: single-sided spectrum; pass the halving option to convert it")
        psd = 0.5 * psd
        convention = DOUBLE_SIDED
    elif convention != DOUBLE_SIDED:
        raise ConfigError(f"{name}: unknown convention {convention!r}")
    calib = None
    if "f_mod_hz" in header:
        try:
            calib = CalibrationTone(float(header["f_mod_hz"]), float(header.get("phase_depth_rad", "nan")),
                                    float(header.get("displacement_equiv_m", "nan")))
        except ValueError as exc:
            raise ConfigError(f"{name}: bad calibration header: {exc}") from None
    try:
        return Spectrum(np.array(freq), psd, units, convention, calib, tuple(meta))
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
