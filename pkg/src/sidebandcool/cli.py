"""Command-line front end.

Every subcommand takes ``--config`` (a file, or the name of a shipped
configuration) and writes plot-ready CSV.  Frequencies are printed in Hz,
temperatures in K, powers in W, with 9 significant digits.

Exit codes: 0 success, 2 configuration or parse error, 3 numerical
non-convergence, 4 physical-regime error.
"""
import argparse
from dataclasses import replace
import math
import sys
import warnings

import numpy as np

from . import __version__
from .backaction import MechanicalMode, backaction_response, calibration_transduction_factor
from .cavity import mean_fields
from .config import load_config, shipped_configs
from .errors import ConfigError, NumericalError, RegimeError
from .fitseries import (DEFAULT_FLOATED, DEFAULT_WEIGHT, FitParameters, SeriesModel, consistency_report,
                        fit, objective_terms, read_series, synthesize_series, write_series)
from .spectra import (RAW, CalibrationTone, add_calibration_tone, calibrate_spectrum, fit_lorentzian,
                      noise_temperature, read_spectrum, synthesize_spectrum, write_spectrum)
from .thermal import (force_noise_cryo, force_noise_quantum, force_noise_thermal, ground_state_probability,
                      mean_occupancy, noise_budget, sample_temperature)
from .tls import (T_MIN, TlsCurve, freq_shift_resonant, freq_shift_tunneling, q_inv_resonant,
                  q_inv_tunneling, thermometer)
from .units import TWO_PI, angular, to_hz

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_REGIME = 0, 2, 3, 4


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    x = float(x)
    return "%.8e" % x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


def write_table(columns, rows, out):
    out.write(",".join(columns) + "\n")
    for row in rows:
        out.write(",".join(fmt(v) for v in row) + "\n")


def read_table(text):
    """Parse a table written by :func:`write_table` back into ``(columns, float rows)``."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    columns = lines[0].split(",")
    rows = [[float(v) if v else math.nan for v in ln.split(",")] for ln in lines[1:]]
    return columns, rows


# -- model plumbing -------------------------------------------------------------

def series_model(cfg, T_cryo=None, tabulate=False):
    mechanics = cfg.mechanics
    if tabulate and cfg.has_tls:
        t_cryo = cfg.environment.T_cryo if T_cryo is None else T_cryo
        mechanics = TlsCurve(mechanics, t_min=max(T_MIN, min(0.3, 0.9 * t_cryo)), t_max=6.0)
    return SeriesModel(mechanics, cfg.m_eff, cfg.cavity.eta_c, cfg.cavity.G,
                       cfg.environment.T_cryo if T_cryo is None else T_cryo,
                       cfg.drive.wavelength, bool(cfg.fit.get("self_consistent", False)))


def base_parameters(cfg, P_in=None):
    return FitParameters(cfg.cavity.kappa, cfg.cavity.gamma_split, cfg.drive.P_in if P_in is None else P_in,
                         cfg.mechanics.omega_m_bare, cfg.environment.dT_stray, cfg.heating_product,
                         tuple(cfg.fit.get("float", DEFAULT_FLOATED)))


def operating_point(cfg, detuning=None):
    """Mechanics and backaction at the configured drive (or ``detuning``)."""
    drive = cfg.drive if detuning is None else cfg.drive.at(detuning)
    cav = cfg.cavity
    T = sample_temperature(drive, cav, cfg.environment)
    mech = MechanicalMode(cfg.m_eff, float(cfg.mechanics.frequency(T)), float(cfg.mechanics.damping(T)))
    fields = mean_fields(drive, cav)
    resp = backaction_response(mech, fields, drive.detuning, cav, bool(cfg.fit.get("self_consistent", False)))
    return drive, T, mech, fields, resp


# -- commands -------------------------------------------------------------------

TLS_COLUMNS = ("t_k", "f_m_hz", "q_inv", "q_inv_cla", "q_inv_tun", "q_inv_res", "df_tun_hz", "df_res_hz")


def cmd_tls_curve(cfg, t_min, t_max, n):
    if not cfg.has_tls:
        raise ConfigError("tls-curve needs [mechanics] model = tls")
    if n < 1:
        raise ConfigError("n must be at least 1")
    if t_min > t_max or (n == 1 and t_min != t_max):
        raise ConfigError("need t_min <= t_max, and t_min == t_max when n = 1")
    model = cfg.mechanics
    T = np.linspace(t_min, t_max, n)
    tun = np.atleast_1d(q_inv_tunneling(T, model))
    res = np.atleast_1d(q_inv_resonant(T, model.omega_m_bare, model.material))
    d_tun = np.atleast_1d(freq_shift_tunneling(T, model))
    d_res = np.atleast_1d(freq_shift_resonant(T, model.omega_m_bare, model.material))
    f_m = to_hz(model.omega_m_bare + d_tun + d_res)
    cla = np.full_like(T, model.q_cla_inv)
    total = cla + tun + res
    rows = list(zip(T, f_m, total, cla, tun, res, to_hz(d_tun), to_hz(d_res)))
    return TLS_COLUMNS, rows


def cmd_thermometer(cfg, frequency_hz=None, damping_hz=None, bracket=None):
    if (frequency_hz is None) == (damping_hz is None):
        raise ConfigError("give exactly one of --frequency-hz, --damping-hz")
    model = cfg.mechanics
    if not cfg.has_tls:
        raise ConfigError("thermometer needs [mechanics] model = tls")
    bracket = tuple(bracket) if bracket else cfg.bracket
    if frequency_hz is not None:
        observed, kind = angular(frequency_hz), "frequency"
    else:
        observed, kind = angular(damping_hz), "damping"
    T = thermometer(observed, kind, model, bracket)
    forward = model.frequency(T) if kind == "frequency" else model.damping(T)
    return T, to_hz(forward - observed)


SWEEP_COLUMNS = ("detuning_hz", "omega_eff_hz", "gamma_eff_hz", "t_k", "t_eff_k", "n_bar", "p0",
                 "cooling_factor", "unstable", "coupling_ratio")


def cmd_detuning_sweep(cfg, delta_min_hz, delta_max_hz, n):
    if n < 1:
        raise ConfigError("n must be at least 1")
    model = series_model(cfg)
    params = base_parameters(cfg)
    D = angular(np.linspace(delta_min_hz, delta_max_hz, n))
    pred = model.predict(D, params)
    rows = []
    for i in range(D.size):
        T_eff = pred.T_eff[i]
        if pred.flagged[i] or not T_eff > 0:
            n_bar = p0 = cool = math.nan
        else:
            n_bar = mean_occupancy(T_eff, pred.omega_eff[i])
            p0 = ground_state_probability(n_bar)
            cool = (cfg.environment.T_cryo + cfg.environment.dT_stray) / T_eff
        rows.append((to_hz(D[i]), to_hz(pred.omega_eff[i]), to_hz(pred.gamma_eff[i]), pred.T[i], T_eff, n_bar,
                     p0, cool, bool(pred.unstable[i]), pred.coupling_ratio[i]))
    return SWEEP_COLUMNS, rows, (model, params, D)


def cmd_fit(cfg, series_path, weight=None, n_starts=None, seed=None):
    points, meta = read_series(series_path)
    T_cryo = float(meta["t_cryo_k"]) if "t_cryo_k" in meta else None
    P_in = float(meta["p_in_w"]) if "p_in_w" in meta else None
    model = series_model(cfg, T_cryo, tabulate=True)
    initial = base_parameters(cfg, P_in)
    opts = cfg.fit
    weight = opts.get("weight", DEFAULT_WEIGHT) if weight is None else weight
    result = fit(points, initial, model, weight=weight,
                 n_starts=opts.get("n_starts", 1) if n_starts is None else n_starts,
                 seed=opts.get("seed", 0) if seed is None else seed,
                 max_simplex=opts.get("max_simplex", 2000), max_iter=opts.get("max_iter", 200))
    consistency = consistency_report(points, result, model, omega_mod=opts.get("omega_mod_hz"))
    terms = objective_terms(points, result.params, model, weight)
    return result, points, terms, consistency


_PARAM_UNITS = {"kappa": ("kappa_hz", TWO_PI), "gamma_split": ("gamma_split_hz", TWO_PI),
                "P_in_eff": ("p_in_eff_w", 1.0), "omega_m_bare": ("omega_m_bare_hz", TWO_PI),
                "dT_stray": ("dt_stray_k", 1.0), "heating_product": ("heating_product_k_per_j", 1.0)}


def report_fit(result, points, terms, consistency, out):
    out.write(f"# converged={int(result.converged)} objective={fmt(result.objective)} "
              f"iterations={result.iterations} evaluations={result.n_evaluations}\n")
    if result.message:
        out.write(f"# {result.message}\n")
    if result.identifiability:
        out.write(f"# {result.identifiability}\n")
    err = result.stderr
    rows = []
    for name in FitParameters.__dataclass_fields__:
        if name == "floated":
            continue
        label, scale = _PARAM_UNITS[name]
        val = getattr(result.params, name) / scale
        se = err[name] / scale if name in err else math.nan
        rows.append((label, fmt(val), fmt(se), str(int(name in result.names))))
    out.write("parameter,value,stderr,floated\n")
    for r in rows:
        out.write(",".join(r) + "\n")
    out.write("\n")
    pred = terms.prediction
    res_rows = [(to_hz(p.detuning), to_hz(p.omega_eff_meas), to_hz(pred.omega_eff[i]), terms.residual_omega[i],
                 to_hz(p.gamma_eff_meas), to_hz(pred.gamma_eff[i]), terms.residual_gamma[i], bool(pred.flagged[i]))
                for i, p in enumerate(points)]
    write_table(("detuning_hz", "omega_meas_hz", "omega_pred_hz", "res_omega", "gamma_meas_hz", "gamma_pred_hz",
                 "res_gamma", "flagged"), res_rows, out)
    out.write("\n")
    write_table(("detuning_hz", "t_k", "t_eff_model_k", "t_eff_noise_k", "transduction", "cooling_factor",
                 "n_bar", "p0", "unstable"),
                [(to_hz(r.detuning), r.T, r.T_eff_model, r.T_eff_noise, r.transduction, r.cooling_factor,
                  r.n_bar, r.p_ground, r.unstable) for r in consistency], out)


def cmd_spectrum_synthesize(cfg, noise=0.0, seed=0, raw_scale=None):
    spec_opts = cfg.spectrum
    drive, T, mech, fields, resp = operating_point(cfg)
    if resp.unstable:
        raise RegimeError("configured detuning is unstable (Gamma_eff <= 0); no stationary spectrum")
    T_eff = T * mech.gamma_m / resp.gamma_eff
    S_FF = force_noise_thermal(cfg.m_eff, T_eff, resp.gamma_eff)
    S_imp = spec_opts.get("s_xx_imp_m2_hz", 0.0)
    hw = spec_opts.get("window_halfwidth", 50.0)
    f0, g = to_hz(resp.omega_eff), to_hz(resp.gamma_eff)
    grid = np.linspace(spec_opts.get("f_min_hz", f0 - hw * g), spec_opts.get("f_max_hz", f0 + hw * g),
                       spec_opts.get("n_points", 4001))
    spec = synthesize_spectrum(grid, mech, fields, drive.detuning, cfg.cavity, S_FF, S_imp)
    tone = _config_tone(cfg)
    if tone is not None and not grid[0] <= tone.f_mod <= grid[-1]:
        # a detector-unit spectrum without its tone could never be calibrated
        if raw_scale is not None:
            raise ConfigError(f"calibration tone at {tone.f_mod!r} Hz lies outside the synthesized span "
                              f"[{grid[0]!r}, {grid[-1]!r}] Hz; set f_min_hz/f_max_hz to include it")
        tone = None
    if tone is not None:
        factor = calibration_transduction_factor(angular(tone.f_mod), mech, fields, drive.detuning, cfg.cavity)
        spec = add_calibration_tone(spec, tone, factor)
    if noise > 0:
        rng = np.random.default_rng(seed)
        spec = replace(spec, psd=spec.psd * np.abs(1.0 + noise * rng.standard_normal(spec.psd.size)))
    if raw_scale is not None:
        spec = replace(spec, psd=spec.psd * raw_scale, units=RAW)
    info = {"t_k": T, "t_eff_k": T_eff, "s_ff_n2_hz": S_FF, "f_eff_hz": f0, "gamma_eff_hz": g}
    return spec, info


def _config_tone(cfg):
    s = cfg.spectrum
    if "f_mod_hz" not in s:
        return None
    if "displacement_equiv_m" not in s:
        raise ConfigError("[spectrum] f_mod_hz needs displacement_equiv_m")
    return CalibrationTone(s["f_mod_hz"], s.get("depth_rad", 1.0), s["displacement_equiv_m"])


ANALYZE_COLUMNS = ("f_eff_hz", "gamma_eff_hz", "area_m2", "background_m2_hz", "t_eff_k", "n_bar", "p0",
                   "residual_norm", "calibration_scale")


def cmd_spectrum_analyze(cfg, path, window=None, transduction=None, model_transduction=False,
                         halve_single_sided=False):
    spec = read_spectrum(path, halve_single_sided=halve_single_sided)
    scale = 1.0
    tone = spec.calib or _config_tone(cfg)
    if spec.units == RAW:
        if tone is None:
            raise ConfigError("raw spectrum without calibration tone (header or [spectrum] f_mod_hz)")
        if model_transduction:
            drive, T, mech, fields, resp = operating_point(cfg)
            transduction = calibration_transduction_factor(angular(tone.f_mod), mech, fields, drive.detuning,
                                                           cfg.cavity)
        spec, scale = calibrate_spectrum(spec, tone, 1.0 if transduction is None else transduction)
    if tone is not None and spec.freq[0] <= tone.f_mod <= spec.freq[-1]:
        # keep the tone out of the peak fit
        f = spec.freq
        i = int(np.argmin(np.abs(f - tone.f_mod)))
        keep = np.ones(f.size, bool)
        keep[max(i - 3, 0):i + 4] = False
        spec = replace(spec, freq=f[keep], psd=spec.psd[keep], calib=None)
    pk = fit_lorentzian(spec, window)
    T_eff = noise_temperature(pk, cfg.m_eff)
    n_bar = mean_occupancy(T_eff, pk.omega_eff) if T_eff > 0 else math.nan
    return ANALYZE_COLUMNS, [(pk.f_eff, to_hz(pk.gamma_eff), pk.area, pk.background, T_eff, n_bar,
                              ground_state_probability(n_bar) if n_bar == n_bar else math.nan,
                              pk.residual_norm, scale)]


BUDGET_COLUMNS = ("quantity", "value", "amplitude", "source")


def cmd_budget(cfg):
    b = cfg.budget
    drive, T, mech, fields, resp = operating_point(cfg)
    if resp.unstable:
        raise RegimeError("configured detuning is unstable (Gamma_eff <= 0)")
    if "s_ff_the_n2_hz" in b:
        S_the, src_the = b["s_ff_the_n2_hz"], "measured"
    else:
        # T_eff * Gamma_eff = T * Gamma_m(T): the thermal force noise is unchanged by backaction
        S_the, src_the = force_noise_thermal(cfg.m_eff, T, mech.gamma_m), "model"
    if "s_ff_cryo_n2_hz" in b:
        S_cryo, src_cryo = b["s_ff_cryo_n2_hz"], "measured"
    else:
        T_c = cfg.environment.T_cryo
        S_cryo, src_cryo = force_noise_cryo(cfg.m_eff, T_c, float(cfg.mechanics.damping(T_c))), "model"
    S_qba = force_noise_quantum(mech.g0(cfg.cavity), cfg.m_eff, drive.P_in, cfg.cavity.eta_c,
                                cfg.cavity.resonance(drive), mech.omega_m, cfg.cavity.kappa)
    S_imp = b.get("s_xx_imp_m2_hz", cfg.spectrum.get("s_xx_imp_m2_hz"))
    if S_imp is None:
        raise ConfigError("[budget] s_xx_imp_m2_hz is required")
    budget = noise_budget(S_the, S_cryo, S_qba, S_imp)
    rows = [
        ("s_ff_the_n2_hz", budget.S_FF_the, math.sqrt(budget.S_FF_the), src_the),
        ("s_ff_cryo_n2_hz", budget.S_FF_cryo, math.sqrt(budget.S_FF_cryo), src_cryo),
        ("s_ff_ba_n2_hz", budget.S_FF_ba, math.sqrt(budget.S_FF_ba), "the - cryo"),
        ("s_ff_qba_n2_hz", budget.S_FF_qba, math.sqrt(budget.S_FF_qba), "model"),
        ("s_xx_imp_m2_hz", budget.S_xx_imp, math.sqrt(budget.S_xx_imp), "config"),
        ("product_hbar_over_2", budget.product_over_hbar2, None, "sqrt(imp * the)"),
        ("cryo_percent", 100 * budget.cryo_fraction, None, ""),
        ("ba_percent", 100 * budget.ba_fraction, None, ""),
        ("qba_over_the", budget.qba_ratio, None, ""),
    ]
    return budget, rows


# -- argument parsing ---------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="sidebandcool", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="shipped configs: " + ", ".join(shipped_configs()))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", required=True, help="INI file, or the name of a shipped config")
        sp.add_argument("--output", "-o", default=None, help="write the table here instead of stdout")
        return sp

    sp = add("tls-curve", "TLS temperature curves: frequency, Q^-1 and their components")
    sp.add_argument("--t-min", type=float, default=0.6, help="lowest temperature, K")
    sp.add_argument("--t-max", type=float, default=3.0, help="highest temperature, K")
    sp.add_argument("--n", type=int, default=25, help="number of temperatures")

    sp = add("thermometer", "infer the sample temperature from a measured frequency or damping rate")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--frequency-hz", type=float, help="measured resonance frequency, Hz")
    g.add_argument("--damping-hz", type=float, help="measured damping rate Gamma_m/2pi, Hz")
    sp.add_argument("--bracket", type=float, nargs=2, metavar=("T_LO", "T_HI"), help="search interval, K")

    sp = add("sweep", "detuning sweep of the cooling model")
    sp.add_argument("--delta-min-hz", type=float, required=True)
    sp.add_argument("--delta-max-hz", type=float, required=True)
    sp.add_argument("--n", type=int, default=101)
    sp.add_argument("--series-out", default=None, help="also write a detuning-series CSV (for fitting)")
    sp.add_argument("--rel-omega", type=float, default=0.005, help="series noise on Omega_eff, in units of Gamma_eff")
    sp.add_argument("--rel-gamma", type=float, default=0.05, help="series noise on Gamma_eff, relative")
    sp.add_argument("--seed", type=int, default=0, help="noise seed for --series-out")
    sp.add_argument("--with-noise-temperature", action="store_true",
                    help="include model T_eff as t_noise_k in the series CSV")

    sp = add("fit", "coupled fit of a detuning series")
    sp.add_argument("--series", required=True, help="detuning-series CSV")
    sp.add_argument("--weight", type=float, default=None, help="frequency weight w in [0, 1]")
    sp.add_argument("--n-starts", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)

    sp = add("spectrum", "synthesize or analyze displacement spectra")
    sp.add_argument("mode", choices=("synthesize", "analyze"))
    sp.add_argument("--input", default=None, help="spectrum CSV to analyze")
    sp.add_argument("--noise", type=float, default=0.0, help="multiplicative noise level for synthesis")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--raw-scale", type=float, default=None, help="emit detector units scaled by this factor")
    sp.add_argument("--window", type=float, nargs=2, metavar=("F_LO", "F_HI"), help="fit window, Hz")
    sp.add_argument("--transduction", type=float, default=None, help="calibration transduction factor")
    sp.add_argument("--model-transduction", action="store_true",
                    help="compute the transduction factor from the config's operating point")
    sp.add_argument("--halve-single-sided", action="store_true", help="accept single-sided input by halving it")

    add("budget", "force-noise budget and imprecision-backaction product")
    return p


def _open_out(path):
    return open(path, "w") if path else sys.stdout


def run(args):
    cfg = load_config(args.config)
    out = _open_out(args.output)
    try:
        if args.command == "tls-curve":
            cols, rows = cmd_tls_curve(cfg, args.t_min, args.t_max, args.n)
            write_table(cols, rows, out)
        elif args.command == "thermometer":
            T, resid = cmd_thermometer(cfg, args.frequency_hz, args.damping_hz, args.bracket)
            write_table(("t_k", "residual_hz"), [(T, resid)], out)
        elif args.command == "sweep":
            cols, rows, (model, params, D) = cmd_detuning_sweep(cfg, args.delta_min_hz, args.delta_max_hz, args.n)
            write_table(cols, rows, out)
            if args.series_out:
                pts = synthesize_series(model, params, D, args.seed, args.rel_omega, args.rel_gamma,
                                        t_noise=args.with_noise_temperature)
                write_series(pts, args.series_out, {"p_in_w": float(cfg.drive.P_in),
                                                    "t_cryo_k": float(cfg.environment.T_cryo)})
        elif args.command == "fit":
            result, points, terms, consistency = cmd_fit(cfg, args.series, args.weight, args.n_starts, args.seed)
            report_fit(result, points, terms, consistency, out)
            if not result.converged:
                print("error: fit did not converge: " + result.message, file=sys.stderr)
                return EXIT_NUMERICAL
        elif args.command == "spectrum":
            if args.mode == "synthesize":
                if not args.output:
                    raise ConfigError("spectrum synthesize needs --output")
                spec, _ = cmd_spectrum_synthesize(cfg, args.noise, args.seed, args.raw_scale)
                write_spectrum(spec, out)
            else:
                if not args.input:
                    raise ConfigError("spectrum analyze needs --input")
                cols, rows = cmd_spectrum_analyze(cfg, args.input, args.window, args.transduction,
                                                  args.model_transduction, args.halve_single_sided)
                write_table(cols, rows, out)
        elif args.command == "budget":
            _, rows = cmd_budget(cfg)
            out.write(",".join(BUDGET_COLUMNS) + "\n")
            for name, val, amp, src in rows:
                out.write(f"{name},{fmt(val)},{fmt(amp)},{src}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RegimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
