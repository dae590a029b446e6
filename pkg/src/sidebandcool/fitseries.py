"""Detuning-series forward model and the coupled frequency/damping fit.

For each laser detuning the chain is: mean fields -> intracavity photon
number -> sample temperature (cryostat + stray + absorption heating) ->
TLS-corrected ``Omega_m(T)``, ``Gamma_m(T)`` -> backaction -> ``Omega_eff``,
``Gamma_eff``, ``T_eff``.  The fit weighs frequency residuals with ``w`` and
damping residuals with ``1 - w``; frequency carries most of the weight since
it is read off the spectra far more precisely.

The optimizer runs a Nelder-Mead simplex in log-parameter space to find the
basin, then a damped Gauss-Newton (Levenberg-Marquardt) polish with a
finite-difference Jacobian.  Only steps that lower the objective are
accepted, so the recorded objective history is monotone.
"""
from dataclasses import dataclass, replace
import math
from typing import NamedTuple, Optional
import warnings

import numpy as np
from scipy.optimize import minimize

from .backaction import MechanicalMode, backaction_response, calibration_transduction_factor
from .cavity import CavityConfig, Drive, mean_fields, total_photons
from .errors import ConfigError
from .thermal import ground_state_probability, mean_occupancy
from .units import HBAR, TWO_PI, optical_angular_frequency

DEFAULT_WEIGHT = 0.9
PENALTY = 1e6
PARAM_NAMES = ("kappa", "gamma_split", "P_in_eff", "omega_m_bare", "dT_stray", "heating_product")
DEFAULT_FLOATED = ("kappa", "gamma_split", "P_in_eff", "dT_stray", "heating_product")


class FitError(ConfigError):
    """Fit preconditions not met (too few points, bad start)."""


@dataclass(frozen=True)
class DetuningPoint:
    detuning: float  # rad/s
    omega_eff_meas: float  # rad/s
    gamma_eff_meas: float  # rad/s
    sigma_omega: Optional[float] = None  # rad/s; default gamma_eff_meas / 20
    sigma_gamma: Optional[float] = None  # rad/s; default gamma_eff_meas / 5
    t_noise_meas: Optional[float] = None  # K

    def __post_init__(self):
        if self.sigma_omega is None:
            object.__setattr__(self, "sigma_omega", abs(self.gamma_eff_meas) / 20.0)
        if self.sigma_gamma is None:
            object.__setattr__(self, "sigma_gamma", abs(self.gamma_eff_meas) / 5.0)
        if not (self.sigma_omega > 0 and self.sigma_gamma > 0):
            raise ValueError("sigma_omega and sigma_gamma must be positive")


@dataclass(frozen=True)
class FitParameters:
    """Floatable parameters of the detuning series.

    ``heating_product`` is ``beta * kappa_abs`` in K/J: the temperature
    rise is ``heating_product * N * hbar * omega_l``.  ``floated`` names
    the parameters the optimizer may move; the rest stay frozen.
    """

    kappa: float
    gamma_split: float
    P_in_eff: float
    omega_m_bare: float
    dT_stray: float = 0.0
    heating_product: float = 0.0
    floated: tuple = DEFAULT_FLOATED

    def __post_init__(self):
        object.__setattr__(self, "floated", tuple(self.floated))
        unknown = set(self.floated) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown parameter(s) in mask: {sorted(unknown)}")
        if not (self.kappa > 0 and self.omega_m_bare > 0):
            raise ValueError("kappa and omega_m_bare must be positive")
        for name in ("gamma_split", "P_in_eff", "dT_stray", "heating_product"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def mask(self):
        return {name: name in self.floated for name in PARAM_NAMES}

    def vector(self, names=None):
        return np.array([getattr(self, n) for n in (names or self.floated)], dtype=float)

    def with_values(self, values, names=None):
        return replace(self, **dict(zip(names or self.floated, (float(v) for v in values))))

    def freeze(self, *names):
        return replace(self, floated=tuple(n for n in self.floated if n not in names))

    def only(self, *names):
        return replace(self, floated=tuple(names))


class Prediction(NamedTuple):
    omega_eff: np.ndarray
    gamma_eff: np.ndarray
    T: np.ndarray
    T_eff: np.ndarray  # NaN where unstable
    omega_m: np.ndarray
    gamma_m: np.ndarray
    photons: np.ndarray
    unstable: np.ndarray
    out_of_range: np.ndarray  # sample temperature outside the TLS tabulation
    coupling_ratio: np.ndarray

    @property
    def flagged(self):
        return self.unstable | self.out_of_range


@dataclass(frozen=True)
class SeriesModel:
    """Everything held fixed while a detuning series is fitted.

    ``tls`` supplies ``mechanical_response(T) -> (delta_omega, q_inv)``
    (a :class:`~sidebandcool.tls.TlsCurve`, a full TLS model, or fixed
    mechanics).  The TLS shift is added to the fit's ``omega_m_bare``.
    """

    tls: object
    m_eff: float
    eta_c: float
    G: float
    T_cryo: float
    wavelength: float = 780e-9
    self_consistent: bool = False

    def __post_init__(self):
        if not (self.m_eff > 0 and self.T_cryo > 0 and self.wavelength > 0):
            raise ValueError("m_eff, T_cryo and wavelength must be positive")
        if not 0 <= self.eta_c <= 1:
            raise ValueError("eta_c must lie in [0, 1]")

    @property
    def omega_l(self):
        return optical_angular_frequency(self.wavelength)

    def cavity(self, params):
        return CavityConfig(kappa=params.kappa, kappa_ex=self.eta_c * params.kappa,
                            gamma_split=params.gamma_split, G=self.G)

    def predict(self, detuning, params):
        D = np.atleast_1d(np.asarray(detuning, dtype=float))
        cav = self.cavity(params)
        drive = Drive(params.P_in_eff, D, self.wavelength)
        flds = mean_fields(drive, cav)
        N = np.atleast_1d(total_photons(flds))
        T = self.T_cryo + params.dT_stray + params.heating_product * N * HBAR * self.omega_l
        shift, q_inv = (np.atleast_1d(x) for x in self.tls.mechanical_response(T))
        bad_T = ~np.isfinite(shift) | ~np.isfinite(q_inv)
        omega_m = params.omega_m_bare + np.where(bad_T, 0.0, shift)
        gamma_m = omega_m * np.where(bad_T, np.nan, q_inv)
        # keep the arithmetic finite for flagged points; they are penalised, not used
        gamma_m_safe = np.where(bad_T | ~(gamma_m > 0), omega_m * 1e-4, gamma_m)
        mech = MechanicalMode(self.m_eff, omega_m, gamma_m_safe)
        r = backaction_response(mech, flds, D, cav, self.self_consistent)
        gamma_eff = np.atleast_1d(r.gamma_eff)
        unstable = gamma_eff <= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            T_eff = np.where(unstable | bad_T, np.nan, T * gamma_m_safe / gamma_eff)
        return Prediction(np.atleast_1d(r.omega_eff), gamma_eff, T, T_eff, omega_m,
                          np.where(bad_T, np.nan, gamma_m), N, unstable, bad_T,
                          np.atleast_1d(r.coupling_ratio))


def predict_point(detuning, params, tls, cav_base, mech_base, env_base, wavelength=780e-9):
    """Single-detuning evaluation: ``(omega_eff, gamma_eff, T, T_eff)`` plus diagnostics.

    ``cav_base`` provides ``eta_c`` and ``G``, ``mech_base`` the effective mass
    and ``env_base`` the cryostat temperature; the rest comes from ``params``.
    """
    model = SeriesModel(tls, mech_base.m_eff, cav_base.eta_c, cav_base.G, env_base.T_cryo, wavelength)
    p = model.predict(detuning, params)
    return Prediction(*(np.asarray(x)[0].item() for x in p))


class _Data(NamedTuple):
    detuning: np.ndarray
    omega: np.ndarray
    gamma: np.ndarray
    s_omega: np.ndarray
    s_gamma: np.ndarray


def _as_data(series):
    if len(series) == 0:
        raise FitError("empty detuning series")
    return _Data(*(np.array([getattr(p, name) for p in series], dtype=float)
                   for name in ("detuning", "omega_eff_meas", "gamma_eff_meas", "sigma_omega", "sigma_gamma")))


class ObjectiveTerms(NamedTuple):
    total: float
    residual_omega: np.ndarray  # (meas - pred) / sigma
    residual_gamma: np.ndarray
    penalty: np.ndarray  # per point, 0 where not flagged
    prediction: Prediction


def objective_terms(series, params, model, weight=DEFAULT_WEIGHT):
    if not 0 <= weight <= 1:
        raise ValueError("weight must lie in [0, 1]")
    data = series if isinstance(series, _Data) else _as_data(series)
    pred = model.predict(data.detuning, params)
    flagged = pred.flagged
    r_om = np.where(flagged, 0.0, (data.omega - pred.omega_eff) / data.s_omega)
    r_ga = np.where(flagged, 0.0, (data.gamma - pred.gamma_eff) / data.s_gamma)
    scale = np.where(np.isfinite(pred.gamma_m), pred.gamma_m, np.abs(pred.gamma_eff))
    with np.errstate(divide="ignore", invalid="ignore"):
        pen = PENALTY * (1.0 + np.abs(pred.gamma_eff) / scale)
    pen = np.where(flagged, np.where(np.isfinite(pen), pen, 2 * PENALTY), 0.0)
    total = float(weight * np.sum(r_om**2) + (1 - weight) * np.sum(r_ga**2) + np.sum(pen))
    return ObjectiveTerms(total, r_om, r_ga, pen, pred)


def objective(series, params, model, weight=DEFAULT_WEIGHT):
    """``w * sum(dOmega/sigma)^2 + (1-w) * sum(dGamma/sigma)^2`` plus instability penalties."""
    return objective_terms(series, params, model, weight).total


def _residual_vector(data, params, model, weight):
    t = objective_terms(data, params, model, weight)
    return np.concatenate([math.sqrt(weight) * t.residual_omega,
                           math.sqrt(1 - weight) * t.residual_gamma, np.sqrt(t.penalty)])


@dataclass(frozen=True)
class FitResult:
    params: FitParameters
    objective: float
    residual_omega: np.ndarray
    residual_gamma: np.ndarray
    flagged: np.ndarray
    covariance: np.ndarray  # over params.floated, natural units
    converged: bool
    iterations: int
    n_evaluations: int
    history: tuple = ()  # objective after each accepted step
    message: str = ""
    identifiability: str = ""

    @property
    def names(self):
        return self.params.floated

    @property
    def stderr(self):
        return dict(zip(self.names, np.sqrt(np.abs(np.diag(self.covariance)))))


def _to_z(params, names, ref):
    return np.log(params.vector(names) / ref)


def fit(series, initial, model, weight=DEFAULT_WEIGHT, n_starts=1, seed=0, max_simplex=2000,
        max_iter=200, xtol=1e-10, ftol=1e-12, start_spread=0.2):
    """Coupled fit of a detuning series.

    Floated parameters are optimized as ``log(p / p_initial)``.  With
    ``n_starts > 1`` additional starts are drawn log-uniformly within
    ``start_spread`` of the initial values using ``seed``; the best final
    objective wins.  Returns the best-so-far result with ``converged=False``
    rather than raising when the iteration caps are hit.
    """
    data = _as_data(series)
    names = initial.floated
    if len(names) == 0:
        raise FitError("no parameters are floated")
    if data.detuning.size < 2 * len(names):
        raise FitError(f"{data.detuning.size} points for {len(names)} floated parameters; "
                       f"need at least {2 * len(names)}")
    ref = initial.vector(names)
    if np.any(~(ref > 0)):
        bad = [n for n, v in zip(names, ref) if not v > 0]
        raise FitError(f"floated parameters must start positive (log transform): {bad}")

    def params_at(z):
        return initial.with_values(ref * np.exp(z), names)

    count = [0]

    def J(z):
        count[0] += 1
        return objective(data, params_at(z), model, weight)

    def R(z):
        count[0] += 1
        return _residual_vector(data, params_at(z), model, weight)

    rng = np.random.default_rng(seed)
    starts = [np.zeros(len(names))]
    for _ in range(n_starts - 1):
        starts.append(rng.uniform(math.log(1 - start_spread), math.log(1 + start_spread), len(names)))

    best = None
    for z0 in starts:
        simplex = minimize(J, z0, method="Nelder-Mead",
                           options={"maxfev": max_simplex, "xatol": 1e-8, "fatol": 1e-12,
                                    "initial_simplex": z0 + np.vstack([np.zeros(len(names)), 0.05 * np.eye(len(names))])})
        out = _levenberg_marquardt(R, simplex.x, max_iter, xtol, ftol)
        if best is None or out["objective"] < best["objective"]:
            best = out

    z = best["z"]
    p = params_at(z)
    terms = objective_terms(data, p, model, weight)
    cov_z, hint = _covariance(best["jac"], names)
    scale = ref * np.exp(z)
    cov = cov_z * np.outer(scale, scale)
    return FitResult(p, terms.total, terms.residual_omega, terms.residual_gamma, terms.prediction.flagged,
                     cov, best["converged"], best["iterations"], count[0], tuple(best["history"]),
                     best["message"], hint)


def _jacobian(R, z, r0, h=1e-6):
    cols = []
    for k in range(z.size):
        dz = np.zeros_like(z)
        dz[k] = h
        cols.append((R(z + dz) - R(z - dz)) / (2 * h))
    return np.column_stack(cols)


def _levenberg_marquardt(R, z0, max_iter, xtol, ftol):
    z = np.asarray(z0, dtype=float).copy()
    r = R(z)
    cost = float(r @ r)
    history = [cost]
    lam = 1e-3
    converged = False
    message = "iteration limit reached"
    jac = _jacobian(R, z, r)
    it = 0
    for it in range(1, max_iter + 1):
        g = jac.T @ r
        A = jac.T @ jac
        diag = np.maximum(np.diag(A), 1e-300)
        if np.max(np.abs(g)) <= 1e-12 * (1.0 + cost) or cost <= ftol:
            converged, message = True, "gradient or objective below tolerance"
            break
        accepted = False
        for _ in range(40):
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            z_new = z + step
            r_new = R(z_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= 4.0
            if np.max(np.abs(step)) <= xtol * (1.0 + np.max(np.abs(z))):
                break
        if not accepted:
            small = np.max(np.abs(g)) <= 1e-6 * (1.0 + cost) * (1.0 + np.max(np.sqrt(diag)))
            converged = bool(small)
            message = "no further decrease" + (" at a stationary point" if small else "")
            break
        decrease = cost - cost_new
        z, r, cost = z_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 3.0, 1e-12)
        jac = _jacobian(R, z, r)
        if np.max(np.abs(step)) <= xtol * (1.0 + np.max(np.abs(z))) or decrease <= ftol:
            converged, message = True, "step or objective change below tolerance"
            break
    return {"z": z, "objective": cost, "history": history, "converged": converged,
            "iterations": it, "jac": jac, "message": message}


def _covariance(jac, names):
    A = jac.T @ jac
    s = np.linalg.svd(jac, compute_uv=False) if jac.size else np.array([])
    hint = ""
    if s.size and (s[-1] <= 1e-10 * s[0] or not np.all(np.isfinite(A))):
        _, _, vt = np.linalg.svd(jac)
        weak = vt[-1]
        order = np.argsort(-np.abs(weak))
        involved = [names[i] for i in order if abs(weak[i]) > 0.3]
        hint = ("singular Jacobian: the data do not separate " + ", ".join(involved)
                + "; freeze one of them or add detunings that distinguish them")
        warnings.warn(hint)
        return np.linalg.pinv(A), hint
    return np.linalg.inv(A), hint


# -- consistency with noise thermometry ---------------------------------------

class ConsistencyRow(NamedTuple):
    detuning: float  # rad/s
    T: float  # sample temperature, K
    T_eff_model: float  # K
    T_eff_noise: Optional[float]  # corrected noise temperature, K
    transduction: float  # |chi_eff/chi_m| at the tone
    cooling_factor: float  # (T_cryo + dT_stray) / T_eff_model
    n_bar: float
    p_ground: float
    unstable: bool


def consistency_report(series, result, model, omega_mod=None, classical=False):
    """Compare model ``T_eff`` with noise thermometry, point by point.

    Noise temperatures in the series are taken as calibrated with the tone
    at ``omega_mod`` without any optomechanical correction.  The tone is
    rescaled by ``|chi_eff/chi_m|`` so the calibrated PSD, and with it the
    noise temperature, scales with the square of that factor.  The correction
    is applied here.  With ``omega_mod=None`` no correction is applied
    (factor 1).
    """
    params = result.params if isinstance(result, FitResult) else result
    data = _as_data(series)
    pred = model.predict(data.detuning, params)
    cav = model.cavity(params)
    rows = []
    for i, pt in enumerate(series):
        unstable = bool(pred.flagged[i])
        if omega_mod is not None and not unstable:
            mech = MechanicalMode(model.m_eff, pred.omega_m[i], pred.gamma_m[i])
            flds = mean_fields(Drive(params.P_in_eff, pt.detuning, model.wavelength), cav)
            factor = calibration_transduction_factor(omega_mod, mech, flds, pt.detuning, cav)
        else:
            factor = 1.0
        t_noise = None if pt.t_noise_meas is None else pt.t_noise_meas * factor**2
        T_eff = float(pred.T_eff[i])
        if unstable or not T_eff > 0:
            n_bar = p0 = cooling = math.nan
        else:
            n_bar = mean_occupancy(T_eff, pred.omega_eff[i], classical=classical)
            p0 = ground_state_probability(n_bar)
            cooling = (model.T_cryo + params.dT_stray) / T_eff
        rows.append(ConsistencyRow(pt.detuning, float(pred.T[i]), T_eff, t_noise, float(factor),
                                   cooling, n_bar, p0, unstable))
    return rows


# -- synthetic data ------------------------------------------------------------

def synthesize_series(model, params, detunings, rng=None, rel_omega=0.005, rel_gamma=0.05, t_noise=False):
    """Detuning points from the forward model with Gaussian noise.

    Noise is scaled with the local linewidth: ``sigma_Omega = rel_omega *
    Gamma_eff`` and ``sigma_Gamma = rel_gamma * Gamma_eff``, and those sigmas
    are stored on the points.  Unstable detunings are skipped.
    """
    rng = np.random.default_rng(rng)
    pred = model.predict(detunings, params)
    points = []
    for i, d in enumerate(np.atleast_1d(detunings)):
        if pred.flagged[i]:
            continue
        g = pred.gamma_eff[i]
        s_om, s_ga = rel_omega * g, rel_gamma * g
        om = pred.omega_eff[i] + (rng.normal(0.0, s_om) if rel_omega > 0 else 0.0)
        ga = g + (rng.normal(0.0, s_ga) if rel_gamma > 0 else 0.0)
        points.append(DetuningPoint(float(d), float(om), float(ga), s_om if s_om > 0 else g / 20,
                                    s_ga if s_ga > 0 else g / 5,
                                    float(pred.T_eff[i]) if t_noise else None))
    return points


# -- CSV -------------------------------------------------------------------------

SERIES_COLUMNS = ("detuning_hz", "omega_eff_hz", "gamma_eff_hz", "sigma_omega_hz", "sigma_gamma_hz", "t_noise_k")
_REQUIRED = SERIES_COLUMNS[:3]


def read_series(path):
    """Parse a detuning-series CSV into ``(points, meta)``; frequencies are converted to rad/s."""
    name = str(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    meta = {}
    cols = None
    points = []
    for lineno, line in enumerate(lines, start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            body = s[1:].strip()
            if "=" in body:
                k, v = (t.strip() for t in body.split("=", 1))
                try:
                    meta[k] = float(v)
                except ValueError:
                    meta[k] = v
            continue
        if cols is None:
            cols = [c.strip() for c in s.split(",")]
            unknown = [c for c in cols if c not in SERIES_COLUMNS]
            missing = [c for c in _REQUIRED if c not in cols]
            if unknown or missing or len(set(cols)) != len(cols):
                raise ConfigError(f"{name}:{lineno}: bad column header {s!r} (unknown {unknown}, missing {missing})")
            continue
        parts = [t.strip() for t in s.split(",")]
        if len(parts) != len(cols):
            raise ConfigError(f"{name}:{lineno}: expected {len(cols)} fields, got {len(parts)}")
        row = {}
        for c, t in zip(cols, parts):
            if t == "" or t.lower() == "nan":
                if c in _REQUIRED:
                    raise ConfigError(f"{name}:{lineno}: missing required value for {c}")
                continue
            try:
                row[c] = float(t)
            except ValueError:
                raise ConfigError(f"{name}:{lineno}: non-numeric value {t!r} in column {c}") from None
        try:
            points.append(DetuningPoint(
                TWO_PI * row["detuning_hz"], TWO_PI * row["omega_eff_hz"], TWO_PI * row["gamma_eff_hz"],
                TWO_PI * row["sigma_omega_hz"] if "sigma_omega_hz" in row else None,
                TWO_PI * row["sigma_gamma_hz"] if "sigma_gamma_hz" in row else None,
                row.get("t_noise_k")))
        except ValueError as exc:
            raise ConfigError(f"{name}:{lineno}: {exc}") from None
    if cols is None:
        raise ConfigError(f"{name}: missing column header")
    return points, meta


def write_series(points, path, meta=None):
    lines = [f"# {k}={v!r}" if isinstance(v, float) else f"# {k}={v}" for k, v in (meta or {}).items()]
    lines.append(",".join(SERIES_COLUMNS))
    for p in points:
        vals = [p.detuning / TWO_PI, p.omega_eff_meas / TWO_PI, p.gamma_eff_meas / TWO_PI,
                p.sigma_omega / TWO_PI, p.sigma_gamma / TWO_PI]
        cells = [repr(float(v)) for v in vals] + ["" if p.t_noise_meas is None else repr(float(p.t_noise_meas))]
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


__all__ = [
    "DetuningPoint", "FitParameters", "FitResult", "SeriesModel", "Prediction", "predict_point",
    "objective", "objective_terms", "fit", "consistency_report", "ConsistencyRow", "synthesize_series",
    "read_series", "write_series", "FitError", "DEFAULT_WEIGHT", "PARAM_NAMES", "DEFAULT_FLOATED",
]
