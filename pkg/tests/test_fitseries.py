import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from sidebandcool import presets
from sidebandcool.backaction import MechanicalMode, bare_susceptibility, effective_susceptibility
from sidebandcool.cavity import Drive, mean_fields
from sidebandcool.errors import ConfigError
from sidebandcool.fitseries import (DetuningPoint, FitError, FitParameters, SeriesModel, consistency_report, fit,
                                    objective, objective_terms, predict_point, read_series, synthesize_series,
                                    write_series)
from sidebandcool.thermal import Environment, mean_occupancy
from sidebandcool.tls import TlsCurve
from sidebandcool.units import angular

CAV = presets.cavity()
DETUNINGS = angular(np.linspace(-115e6, -30e6, 40))


@pytest.fixture(scope="module")
def curve():
    return TlsCurve(presets.cooling_tls_model(), t_min=0.6, t_max=6.0)


@pytest.fixture(scope="module")
def model(curve):
    return SeriesModel(curve, presets.M_EFF, CAV.eta_c, CAV.G, presets.T_CRYO)


@pytest.fixture(scope="module")
def truth():
    return FitParameters(CAV.kappa, CAV.gamma_split, 2e-3, presets.OMEGA_M, presets.DT_STRAY_2MW,
                         presets.BETA_2MW * CAV.kappa_abs)


@pytest.fixture(scope="module")
def clean(model, truth):
    return synthesize_series(model, truth, DETUNINGS, rel_omega=0.0, rel_gamma=0.0)


def test_point_and_parameter_validation():
    with pytest.raises(ValueError):
        DetuningPoint(0.0, 1.0, 1.0, sigma_omega=0.0)
    p = DetuningPoint(0.0, 1e8, 2e5)
    assert p.sigma_omega == pytest.approx(1e4) and p.sigma_gamma == pytest.approx(4e4)
    with pytest.raises(ValueError):
        FitParameters(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        FitParameters(1.0, 1.0, 1.0, 1.0, floated=("kappa", "mass"))
    fp = FitParameters(1.0, 2.0, 3.0, 4.0)
    assert fp.freeze("kappa").mask["kappa"] is False
    assert fp.only("gamma_split").floated == ("gamma_split",)


def test_predict_point_dark(model):
    tls = presets.cooling_tls_model()
    p = FitParameters(CAV.kappa, CAV.gamma_split, 0.0, tls.omega_m_bare, 0.0, 1e9)
    env = Environment(presets.T_CRYO)
    mech = MechanicalMode(presets.M_EFF, presets.OMEGA_M, 1.0)
    out = predict_point(-presets.OMEGA_M, p, tls, CAV, mech, env)
    assert out.T == presets.T_CRYO and out.T_eff == pytest.approx(presets.T_CRYO, rel=1e-14)
    assert out.omega_eff == pytest.approx(float(tls.frequency(presets.T_CRYO)), rel=1e-14)
    assert out.gamma_eff == pytest.approx(float(tls.damping(presets.T_CRYO)), rel=1e-12)


def test_predict_far_detuned_reads_stray_heating(model, truth, curve):
    D = -presets.OMEGA_M - 0.5 * CAV.gamma_split - 100 * CAV.kappa
    pred = model.predict(D, truth)
    T0 = presets.T_CRYO + presets.DT_STRAY_2MW
    gamma_m = presets.cooling_tls_model().damping(T0)
    assert pred.gamma_eff[0] == pytest.approx(gamma_m, rel=1e-3)


def test_predict_cooling_point(model, truth):
    pred = model.predict(presets.cooling_detuning(), truth)
    assert pred.T[0] == pytest.approx(1.14, abs=0.005)
    assert pred.gamma_eff[0] / pred.gamma_m[0] > 10
    assert pred.T_eff[0] == pytest.approx(pred.T[0] * pred.gamma_m[0] / pred.gamma_eff[0], rel=1e-14)


def test_predict_flags_out_of_range_temperature(curve):
    m = SeriesModel(curve, presets.M_EFF, CAV.eta_c, CAV.G, 0.3)
    p = FitParameters(CAV.kappa, CAV.gamma_split, 0.0, presets.OMEGA_M)
    pred = m.predict(0.0, p)
    assert pred.out_of_range[0] and pred.flagged[0]


def test_objective_perfect_data_zero(clean, model, truth):
    assert len(clean) == DETUNINGS.size
    assert objective(clean, truth, model) == pytest.approx(0.0, abs=1e-20)


def test_objective_weight_one_ignores_damping(clean, model, truth):
    shifted = [DetuningPoint(p.detuning, p.omega_eff_meas, 3 * p.gamma_eff_meas, p.sigma_omega, p.sigma_gamma)
               for p in clean]
    assert objective(shifted, truth, model, weight=1.0) == pytest.approx(0.0, abs=1e-20)
    assert objective(shifted, truth, model, weight=0.9) > 1.0


def test_objective_formula(model, truth, rng):
    pts = synthesize_series(model, truth, DETUNINGS, rng)
    t = objective_terms(pts, truth, model, 0.9)
    pred = model.predict(DETUNINGS, truth)
    r_om = np.array([(p.omega_eff_meas - w) / p.sigma_omega for p, w in zip(pts, pred.omega_eff)])
    r_ga = np.array([(p.gamma_eff_meas - g) / p.sigma_gamma for p, g in zip(pts, pred.gamma_eff)])
    assert t.total == pytest.approx(0.9 * np.sum(r_om**2) + 0.1 * np.sum(r_ga**2), rel=1e-12)


def test_objective_errors(clean, model, truth):
    with pytest.raises(FitError):
        objective([], truth, model)
    with pytest.raises(ValueError):
        objective(clean, truth, model, weight=1.5)


def test_objective_penalises_unstable_points(model, truth):
    blue = presets.OMEGA_M + 0.5 * CAV.gamma_split
    hot = truth.with_values([0.05], ["P_in_eff"])
    pred = model.predict(blue, hot)
    assert pred.unstable[0]
    t = objective_terms([DetuningPoint(blue, presets.OMEGA_M, 1e4)], hot, model)
    assert t.penalty[0] >= 1e6 and math.isfinite(t.total)


def _perturbed(truth, rng):
    names = truth.floated
    return truth.with_values(truth.vector() * rng.uniform(0.8, 1.2, len(names)))


def test_recovery_median_over_seeds(model, truth):
    errs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pts = synthesize_series(model, truth, DETUNINGS, rng)
        res = fit(pts, _perturbed(truth, rng), model)
        p = res.params
        errs.append([abs(p.kappa / truth.kappa - 1), abs(p.gamma_split / truth.gamma_split - 1),
                     abs(p.P_in_eff / truth.P_in_eff - 1), abs(p.dT_stray / truth.dT_stray - 1)])
    med = np.median(errs, axis=0)
    assert med[0] < 0.05 and med[1] < 0.03 and med[2] < 0.10 and med[3] < 0.15


def test_zero_noise_fit_reaches_zero(clean, model, truth):
    res = fit(clean, _perturbed(truth, np.random.default_rng(7)), model)
    assert res.converged
    assert res.objective < 1e-10


def test_history_monotone(model, truth, rng):
    pts = synthesize_series(model, truth, DETUNINGS, rng)
    res = fit(pts, _perturbed(truth, rng), model)
    h = np.array(res.history)
    assert h.size >= 1 and np.all(np.diff(h) < 0)
    assert set(res.stderr) == set(truth.floated)
    assert all(v > 0 for v in res.stderr.values())


def test_one_dimensional_fit_matches_golden_section(model, truth, rng):
    pts = synthesize_series(model, truth, DETUNINGS, rng)
    start = truth.with_values([1.1 * truth.kappa], ["kappa"]).only("kappa")
    res = fit(pts, start, model)
    scan = minimize_scalar(lambda k: objective(pts, start.with_values([k]), model), method="golden",
                           bracket=(0.9 * truth.kappa, truth.kappa, 1.1 * truth.kappa),
                           options={"xtol": 1e-10})
    assert res.params.kappa == pytest.approx(scan.x, rel=1e-6)


def test_fit_invariant_under_reordering(model, truth, rng):
    pts = synthesize_series(model, truth, DETUNINGS, rng)
    start = _perturbed(truth, rng)
    a = fit(pts, start, model)
    b = fit(pts[::-1], start, model)
    np.testing.assert_allclose(b.params.vector(), a.params.vector(), rtol=1e-6)
    assert b.objective == pytest.approx(a.objective, rel=1e-8)


def test_fit_equivariant_under_sigma_scaling(model, truth, rng):
    pts = synthesize_series(model, truth, DETUNINGS, rng)
    c = 3.0
    scaled = [DetuningPoint(p.detuning, p.omega_eff_meas, p.gamma_eff_meas, c * p.sigma_omega, c * p.sigma_gamma)
              for p in pts]
    start = _perturbed(truth, rng)
    a = fit(pts, start, model)
    b = fit(scaled, start, model)
    assert objective(scaled, a.params, model) == pytest.approx(a.objective / c**2, rel=1e-10)
    np.testing.assert_allclose(b.params.vector(), a.params.vector(), rtol=1e-5)


def test_splitting_is_identifiable(model, truth, rng):
    pts = synthesize_series(model, truth, DETUNINGS, rng)
    good = fit(pts, truth, model)
    no_split = fit(pts, truth.with_values([0.0], ["gamma_split"]).freeze("gamma_split"), model)
    assert no_split.objective > 10 * good.objective


def test_fit_preconditions(clean, model, truth):
    with pytest.raises(FitError):
        fit(clean[:9], truth, model)
    with pytest.raises(FitError):
        fit(clean, truth.only(), model)
    with pytest.raises(FitError):
        fit(clean, truth.with_values([0.0], ["dT_stray"]), model)


def test_multistart_deterministic(model, truth, rng):
    pts = synthesize_series(model, truth, DETUNINGS, rng)
    a = fit(pts, truth, model, n_starts=3, seed=11)
    b = fit(pts, truth, model, n_starts=3, seed=11)
    np.testing.assert_array_equal(a.params.vector(), b.params.vector())


def test_consistency_report_model_only(clean, model, truth):
    rows = consistency_report(clean, truth, model)
    assert all(r.T_eff_noise is None for r in rows)
    r = rows[int(np.argmin([abs(p.detuning - presets.cooling_detuning()) for p in clean]))]
    assert r.cooling_factor == pytest.approx((presets.T_CRYO + presets.DT_STRAY_2MW) / r.T_eff_model, rel=1e-14)
    assert r.p_ground == pytest.approx(1 / (1 + r.n_bar), rel=1e-14)


def test_consistency_report_noise_columns_agree(model, truth):
    pts = synthesize_series(model, truth, DETUNINGS, rel_omega=0.0, rel_gamma=0.0, t_noise=True)
    rows = consistency_report(pts, truth, model)
    for r in rows:
        assert r.T_eff_noise == pytest.approx(r.T_eff_model, rel=1e-12)
        assert r.transduction == 1.0


def test_consistency_report_transduction_correction(model, truth):
    pts = synthesize_series(model, truth, DETUNINGS[::8], rel_omega=0.0, rel_gamma=0.0, t_noise=True)
    omega_mod = angular(67.5e6)
    rows = consistency_report(pts, truth, model, omega_mod=omega_mod)
    pred = model.predict([p.detuning for p in pts], truth)
    for i, (p, r) in enumerate(zip(pts, rows)):
        mech = MechanicalMode(presets.M_EFF, pred.omega_m[i], pred.gamma_m[i])
        flds = mean_fields(Drive(truth.P_in_eff, p.detuning), model.cavity(truth))
        factor = abs(effective_susceptibility(omega_mod, mech, flds, p.detuning, model.cavity(truth))
                     / bare_susceptibility(omega_mod, mech))
        assert r.transduction == pytest.approx(factor, rel=1e-12)
        assert r.T_eff_noise == pytest.approx(p.t_noise_meas * factor**2, rel=1e-12)


def test_minimum_occupancy_high_power_run():
    drive, env, mech = presets.run_4mw()
    m = SeriesModel(mech, presets.M_EFF, CAV.eta_c, CAV.G, env.T_cryo)
    p = FitParameters(CAV.kappa, CAV.gamma_split, drive.P_in, presets.OMEGA_M, env.dT_stray, 0.0)
    pts = synthesize_series(m, p, angular(np.linspace(-110e6, -40e6, 141)), rel_omega=0.0, rel_gamma=0.0)
    n = np.array([r.n_bar for r in consistency_report(pts, p, m)])
    # "about 9 to 10" read as that range with 5 % either side
    assert 0.95 * 9 <= np.nanmin(n) <= 1.05 * 10
    assert np.nanmin(n) == pytest.approx(mean_occupancy(np.nanmin(m.predict([q.detuning for q in pts], p).T_eff),
                                                        presets.OMEGA_M), rel=0.01)


def test_series_csv_round_trip(tmp_path, model, truth, rng):
    pts = synthesize_series(model, truth, DETUNINGS[:5], rng)
    pts[1] = DetuningPoint(pts[1].detuning, pts[1].omega_eff_meas, pts[1].gamma_eff_meas,
                           pts[1].sigma_omega, pts[1].sigma_gamma, 0.12)
    path = tmp_path / "series.csv"
    write_series(pts, path, {"p_in_w": 2e-3, "t_cryo_k": 0.85})
    back, meta = read_series(path)
    assert meta == {"p_in_w": 2e-3, "t_cryo_k": 0.85}
    for a, b in zip(pts, back):
        for name in ("detuning", "omega_eff_meas", "gamma_eff_meas", "sigma_omega", "sigma_gamma"):
            assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-15)
        assert b.t_noise_meas == a.t_noise_meas


def test_series_csv_optional_columns(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("detuning_hz,omega_eff_hz,gamma_eff_hz\n-8.5e7,7e7,2e4\n")
    (p,), meta = read_series(path)
    assert p.sigma_omega == pytest.approx(angular(2e4) / 20)
    assert meta == {}


@pytest.mark.parametrize("body, lineno", [
    ("detuning_hz,omega_eff_hz,gamma_eff_hz\n1,2,3\n1,2\n", 3),
    ("# p_in_w=1e-3\ndetuning_hz,omega_eff_hz,gamma_eff_hz\n1,2,x\n", 3),
    ("detuning_hz,omega_eff_hz\n1,2\n", 1),
    ("detuning_hz,omega_eff_hz,gamma_eff_hz,bogus\n1,2,3,4\n", 1),
    ("detuning_hz,omega_eff_hz,gamma_eff_hz\n1,,3\n", 2),
    ("detuning_hz,omega_eff_hz,gamma_eff_hz,sigma_omega_hz\n1,2,3,-1\n", 2),
])
def test_series_csv_malformed_reports_line(tmp_path, body, lineno):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ConfigError, match=f":{lineno}:"):
        read_series(path)
