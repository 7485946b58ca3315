//! The per-run audit: every single-path check, evaluated in one replay.

use phasefield_core::diagnostics::{
    AdmissibilityObserver, AlphaScanObserver, Check, DiagnosticsReport, ItoField, ItoSquareObserver,
    PhiEnergyObserver, Series, TestFunctionSet, WeakForm, WeakFormObserver, Weight, WeightSupportObserver,
    DEFAULT_GUARD,
};
use phasefield_core::dynamics::{invariance_band, replay, Observer, PhiSource, SubsolutionMonitor, Trajectory};
use phasefield_core::models::lipschitz_estimates;
use phasefield_core::build_spectrum;

use crate::config::DiagnosticsBlock;
use crate::error::Result;

/// Largest `|residual| / ||c_0||^2` accepted for the square identity on a
/// run without noise.
pub const DETERMINISTIC_ITO_TOL: f64 = 1e-6;

/// Trend bound of the alpha scan: values may grow at most like
/// `alpha^(-1/4)` as `alpha` decreases.
pub const ALPHA_TREND_TOL: f64 = 0.25;

pub fn audit_trajectory(traj: &Trajectory, diag: &DiagnosticsBlock, config_hash: &str) -> Result<DiagnosticsReport> {
    let mut report = DiagnosticsReport::new(config_hash);
    let cfg = &traj.config;
    let dt = cfg.dt;
    let tol = diag.tolerance;
    let a = diag.weight_alpha;
    let coupled = traj.source == PhiSource::Coupled && !cfg.freeze_phi;
    let noisy = cfg.noise_scale > 0.0 && !traj.model.is_noiseless();
    let trace = if cfg.noise_scale > 0.0 { build_spectrum(&traj.noise, traj.grid())?.trace() } else { 0.0 };

    let band = invariance_band(dt, traj.stats.sup_b_eta, trace);
    report.push(Check::at_most("run.excursion", "sup dist(c, K) <= 5 dt + 3 sup|b_eta| sqrt(dt trQ)", traj.stats.max_excursion, band));
    let k_phi = traj.model.k_phi();
    let phi_out = (-traj.stats.phi_min).max(traj.stats.phi_max - k_phi).max(0.0);
    report.push(Check::at_most("run.phi_band", "phi in [-5 dt, K_phi + 5 dt]", phi_out, 5.0 * dt));

    if !diag.enabled {
        return Ok(report);
    }
    let tests = TestFunctionSet::standard(traj.grid(), traj.model.d(), diag.test_seed)?;
    let positive = traj.phi0.min() > 0.0;

    let mut adm = AdmissibilityObserver::new(traj, Weight::PhiPower(a), &diag.guards)?;
    let mut ito = ItoSquareObserver::for_trajectory(traj, ItoField::AllC)?;
    let mut wf_heat = WeakFormObserver::new(traj, Weight::SqrtHeat, &tests, WeakForm::Definition)?;
    let mut wf_const = if positive {
        Some(WeakFormObserver::new(traj, Weight::Constant, &tests, WeakForm::Definition)?)
    } else {
        None
    };
    let mut coupled_obs = if coupled {
        let lip = lipschitz_estimates(&traj.model, diag.model_samples, diag.test_seed)?;
        Some((
            AlphaScanObserver::new(&diag.alphas, DEFAULT_GUARD)?,
            WeakFormObserver::new(traj, Weight::PhiPower(a), &tests, WeakForm::Expanded { alpha: a })?,
            WeightSupportObserver::new(traj, Weight::SqrtHeat, a)?,
            PhiEnergyObserver::new(),
            SubsolutionMonitor::new(&traj.phi0, lip.m1, lip.m2, cfg, 10.0 * dt)?,
        ))
    } else {
        None
    };
    {
        let mut obs: Vec<&mut dyn Observer> = vec![&mut adm, &mut ito, &mut wf_heat];
        if let Some(w) = wf_const.as_mut() {
            obs.push(w);
        }
        if let Some((s, w, ws, e, m)) = coupled_obs.as_mut() {
            obs.extend([s as &mut dyn Observer, w, ws, e, m]);
        }
        replay(traj, &mut obs)?;
    }

    let adm = adm.finish();
    report.push(Check::holds(
        "admissibility.phi^a",
        "sum dt int phi^a |grad phi|^2 / max(phi, g)^2 finite",
        adm.integrals.iter().all(|v| v.is_finite()),
    ));

    let ito = ito.finish();
    let ito_tol = if noisy { tol } else { DETERMINISTIC_ITO_TOL };
    report.push(Check::at_most(
        "ito_square.c",
        "max_t |Ito residual of ||c||^2| / ||c_0||^2",
        ito.max_relative,
        ito_tol,
    ));
    report.series.push(Series { id: "ito_square.residual".into(), t: ito.t.clone(), values: ito.residual });
    report.series.push(Series { id: "ito_square.martingale".into(), t: ito.t, values: ito.martingale });

    let wf = wf_heat.finish();
    report.push(Check::at_most("weak_form.sqrt_heat", "weighted weak form, rho^2 = heat flow of phi_0", wf.max_normalized, tol));
    if let Some(w) = wf_const {
        let w = w.finish();
        report.push(Check::at_most("weak_form.const", "weak form, rho = 1", w.max_normalized, tol));
    }

    if let Some((scan, wf_a, support, energy, floor)) = coupled_obs {
        let scan = scan.finish();
        report.push(Check::at_most(
            "alpha_scan.ratio",
            "max/min over alpha of alpha sum dt ||grad phi / phi^(1-alpha)||^2",
            scan.ratio,
            diag.alpha_ratio,
        ));
        report.push(Check::at_most(
            "alpha_scan.trend",
            "slope of log value against log(1/alpha)",
            scan.trend_slope,
            ALPHA_TREND_TOL,
        ));
        let w = wf_a.finish();
        report.push(Check::at_most("weak_form.phi^a", "expanded weak form for (phi+eps)^a c", w.max_normalized, tol));
        let s = support.finish();
        report.push(Check::at_most("weight_support.sqrt_heat", "chain rule for int (1 - phi^a) rho^2", s.normalized, tol));
        let e = energy.finish();
        report.push(Check::at_most("phi_energy", "balance of ||grad phi||^2", e.normalized, tol));
        report.push(Check::at_least(
            "positivity.floor",
            "min over nodes, t >= 10 dt of phi - u",
            floor.worst_gap,
            -diag.floor_slack,
        ));
    }

    let t: Vec<f64> = (1..=traj.drift.len()).map(|n| n as f64 * dt).collect();
    let pick = |f: fn(&phasefield_core::dynamics::DriftNorms) -> f64| traj.drift.iter().map(f).collect::<Vec<_>>();
    report.series.push(Series { id: "drift.diffusion".into(), t: t.clone(), values: pick(|d| d.diffusion) });
    report.series.push(Series { id: "drift.singular".into(), t: t.clone(), values: pick(|d| d.singular) });
    report.series.push(Series { id: "drift.reaction".into(), t: t.clone(), values: pick(|d| d.reaction) });
    report.series.push(Series { id: "drift.noise".into(), t, values: pick(|d| d.noise) });
    Ok(report)
}
