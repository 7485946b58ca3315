//! Single runs, ensembles and cascade studies.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use phasefield_core::diagnostics::{
    centeredness, qv_estimate, weak_form_residual_with, Centeredness, Check, DiagnosticsReport, ItoField,
    ItoSquareObserver, QvObserver, QvPath, QvReport, TestFunctionSet, WeakForm, Weight,
};
use phasefield_core::dynamics::{
    invariance_band, run_coupled, run_coupled_observed, run_uncoupled, run_uncoupled_observed, Observer, PhiPath,
    RegParams, Trajectory,
};
use phasefield_core::{build_spectrum, ScalarField, Spectral, VectorField};
use rayon::prelude::*;

use crate::audit::audit_trajectory;
use crate::config::{LedgerOutput, Pairing, Resolved, RunConfig, RunMode};
use crate::error::{LabError, Result};
use crate::formats::{encode_ledger, encode_snapshot, write_file};
use crate::initial::{c_field, phi_field};
use crate::manifest::{sha256_hex, RunManifest, MANIFEST_FILE};
use crate::report::{emit_report, Summary};

/// Environment variable with the worker count of ensembles and cascades.
pub const WORKERS_ENV: &str = "PHASEFIELD_WORKERS";

pub fn workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers())
        .build()
        .map_err(|e| LabError::Config(format!("{WORKERS_ENV}: {e}")))
}

pub fn initial_data(r: &Resolved) -> Result<(ScalarField, VectorField)> {
    Ok((phi_field(&r.config.initial.phi, r.grid)?, c_field(&r.config.initial.c, r.grid, &r.model)?))
}

fn phi_path(r: &Resolved, phi0: &ScalarField) -> Option<PhiPath> {
    match r.config.solver.mode {
        RunMode::Coupled => None,
        RunMode::UncoupledConstant => Some(PhiPath::Constant(phi0.clone())),
        RunMode::UncoupledHeat => Some(PhiPath::Heat {
            phi0: phi0.clone(),
            kappa: r.config.solver.path_kappa.unwrap_or(r.solver.gamma),
        }),
    }
}

/// Integrates the configured system.
pub fn simulate(r: &Resolved) -> Result<Trajectory> {
    simulate_with(r, &r.reg, &mut [])
}

/// As [`simulate`] with other regularization parameters and observers.
pub fn simulate_with(r: &Resolved, reg: &RegParams, observers: &mut [&mut dyn Observer]) -> Result<Trajectory> {
    let (phi0, c0) = initial_data(r)?;
    let t = match phi_path(r, &phi0) {
        None if observers.is_empty() => run_coupled(&r.solver, &r.model, reg, &r.noise, &phi0, &c0)?,
        None => run_coupled_observed(&r.solver, &r.model, reg, &r.noise, &phi0, &c0, observers)?,
        Some(p) if observers.is_empty() => run_uncoupled(&r.solver, &r.model, reg, &r.noise, p, &c0)?,
        Some(p) => run_uncoupled_observed(&r.solver, &r.model, reg, &r.noise, p, &c0, observers)?,
    };
    Ok(t)
}

pub struct SingleRun {
    pub trajectory: Trajectory,
    pub report: DiagnosticsReport,
    pub manifest: RunManifest,
    pub summary: Summary,
    pub dir: PathBuf,
}

/// Runs, audits and writes all artifacts plus the manifest into `out`.
pub fn run_single(config: &RunConfig, out: &Path) -> Result<SingleRun> {
    let start = Instant::now();
    let r = config.resolve()?;
    let traj = simulate(&r)?;
    let mut manifest = RunManifest::new(&r.config);
    let report = audit_trajectory(&traj, &r.config.diagnostics, &manifest.config_hash)?;

    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, r.config.to_toml()).map_err(|e| LabError::io(&cfg_path, e))?;
    files.push(cfg_path);
    let snap_dir = out.join("snapshots");
    std::fs::create_dir_all(&snap_dir).map_err(|e| LabError::io(&snap_dir, e))?;
    let mut index = String::from("step,t,file\n");
    for s in &traj.snapshots {
        let name = format!("snap_{:07}.sdf", s.step);
        let p = snap_dir.join(&name);
        write_file(&p, &encode_snapshot(s.phi.values(), &s.c)?)?;
        index.push_str(&format!("{},{:e},{}\n", s.step, s.t, name));
        files.push(p);
    }
    let p = snap_dir.join("index.csv");
    std::fs::write(&p, index).map_err(|e| LabError::io(&p, e))?;
    files.push(p);
    if let Some(ledger) = &traj.ledger {
        let p = out.join("ledger.sdl");
        write_file(&p, &encode_ledger(ledger, r.config.output.ledger == LedgerOutput::Full)?)?;
        files.push(p);
    }
    let summary = emit_report(out, &[("run".into(), report.clone())], None, r.config.output.plots)?;
    files.extend(summary.files.iter().cloned());

    manifest.seeds.insert("noise".into(), r.noise.seed);
    manifest.seeds.insert("tests".into(), r.config.diagnostics.test_seed);
    manifest.artifacts = hash_files(out, &files)?;
    manifest.checks_passed = summary.passed;
    manifest.checks_failed = summary.failed;
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(SingleRun { trajectory: traj, report, manifest, summary, dir: out.to_path_buf() })
}

fn hash_files(root: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for f in files {
        let bytes = std::fs::read(f).map_err(|e| LabError::io(f, e))?;
        let rel = f.strip_prefix(root).unwrap_or(f).to_string_lossy().replace('\\', "/");
        m.insert(rel, sha256_hex(&bytes));
    }
    Ok(m)
}

/// Re-runs the config echoed in `dir/manifest.toml` into `out` and lists
/// artifacts whose hashes differ.
pub fn replay_manifest(dir: &Path, out: &Path) -> Result<Vec<String>> {
    let old = RunManifest::read(&dir.join(MANIFEST_FILE))?;
    let run = run_single(&old.config, out)?;
    Ok(old.artifact_mismatches(&run.manifest))
}

// ---------------------------------------------------------------------------
// ensembles

/// Noise seed of path `i`; distinct paths get distinct counter keys.
pub fn path_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64)
}

/// Labels of the test functions used by ensemble statistics.
pub fn ensemble_tests(r: &Resolved) -> Result<TestFunctionSet> {
    let full = TestFunctionSet::standard(r.grid, r.model.d(), r.config.diagnostics.test_seed)?;
    let keep = |l: &str| l.starts_with("1@") || l.starts_with("cos[1, 0, 0]") || l.starts_with("random");
    Ok(TestFunctionSet { tests: full.tests.into_iter().filter(|t| keep(&t.label)).collect() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome {
    pub seed: u64,
    pub qv: QvPath,
    /// Final `sum 2 <c, b_eta dW>`.
    pub martingale: f64,
    pub max_excursion: f64,
    pub band: f64,
    pub ito_rms: f64,
}

pub fn run_path(r: &Resolved, tests: &TestFunctionSet, seed: u64) -> Result<PathOutcome> {
    let mut r = r.clone();
    r.noise.seed = seed;
    let spectrum = build_spectrum(&r.noise, r.grid)?;
    let trace = spectrum.trace();
    let mut qv = QvObserver::from_spectrum(spectrum, tests);
    let mut ito = ItoSquareObserver::new(ItoField::AllC, trace);
    let traj = simulate_with(&r, &r.reg, &mut [&mut qv, &mut ito])?;
    let ito = ito.finish();
    Ok(PathOutcome {
        seed,
        qv: qv.finish(),
        martingale: ito.martingale.last().copied().unwrap_or(0.0),
        max_excursion: traj.stats.max_excursion,
        band: invariance_band(r.solver.dt, traj.stats.sup_b_eta, trace),
        ito_rms: ito.rms,
    })
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub requested: usize,
    pub outcomes: Vec<PathOutcome>,
    /// `(seed, error)` of paths that failed.
    pub failures: Vec<(u64, String)>,
    pub qv: Option<QvReport>,
    pub martingale: Centeredness,
    /// Fewer than 100 completed paths.
    pub unreliable: bool,
    pub report: DiagnosticsReport,
}

/// `m` paths with seeds `path_seed(base_seed, i)`. Failed paths are
/// reported and left out of the statistics.
pub fn run_ensemble(config: &RunConfig, m: usize, base_seed: u64) -> Result<EnsembleResult> {
    if m < 2 {
        return Err(LabError::Config("ensemble: need at least 2 paths".into()));
    }
    let r = config.resolve()?;
    let tests = ensemble_tests(&r)?;
    let results: Vec<(u64, Result<PathOutcome>)> = pool()?.install(|| {
        (0..m)
            .into_par_iter()
            .map(|i| {
                let seed = path_seed(base_seed, i);
                (seed, run_path(&r, &tests, seed))
            })
            .collect()
    });
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let hash = sha256_hex(r.config.to_toml().as_bytes());
    let mut report = DiagnosticsReport::new(hash);
    report.push(Check::holds("ensemble.completed", "every path completed", failures.is_empty()));
    let mart: Vec<f64> = outcomes.iter().map(|o| o.martingale).collect();
    let martingale = centeredness(&mart, 3.0);
    let qv = if outcomes.is_empty() {
        None
    } else {
        let paths: Vec<QvPath> = outcomes.iter().map(|o| o.qv.clone()).collect();
        Some(qv_estimate(&paths)?)
    };
    if !outcomes.is_empty() {
        let noisy = r.solver.noise_scale > 0.0 && !r.model.is_noiseless();
        if noisy {
            report.push(Check::holds("ensemble.martingale_centered", "|mean| <= 3 std / sqrt(M)", martingale.within));
        }
        if let Some(q) = &qv {
            report.push(Check::at_most(
                "ensemble.qv",
                "max over tests |E[QV] - E[predicted]| / E[predicted]",
                q.max_rel_error,
                0.10,
            ));
        }
        let worst = outcomes.iter().map(|o| o.max_excursion - o.band).fold(f64::NEG_INFINITY, f64::max);
        report.push(Check::at_most("ensemble.excursion", "max over paths of excursion minus band", worst, 0.0));
    }
    let unreliable = outcomes.len() < 100;
    Ok(EnsembleResult { requested: m, outcomes, failures, qv, martingale, unreliable, report })
}

/// Writes the per-path table and the aggregate report.
pub fn write_ensemble(out: &Path, e: &EnsembleResult, plots: bool) -> Result<Summary> {
    std::fs::create_dir_all(out).map_err(|err| LabError::io(out, err))?;
    let p = out.join("paths.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["seed", "status", "martingale", "max_excursion", "band", "ito_rms"])?;
    for o in &e.outcomes {
        w.write_record([
            o.seed.to_string(),
            "ok".into(),
            format!("{:e}", o.martingale),
            format!("{:e}", o.max_excursion),
            format!("{:e}", o.band),
            format!("{:e}", o.ito_rms),
        ])?;
    }
    for (seed, err) in &e.failures {
        w.write_record([seed.to_string(), format!("failed: {err}"), String::new(), String::new(), String::new(), String::new()])?;
    }
    w.flush().map_err(|err| LabError::io(&p, err))?;
    let p = out.join("ensemble.txt");
    let mut s = format!(
        "paths requested={} completed={} failed={} unreliable={}\nmartingale mean={:e} std={:e} within_3sigma={}\n",
        e.requested,
        e.outcomes.len(),
        e.failures.len(),
        e.unreliable,
        e.martingale.mean,
        e.martingale.std,
        e.martingale.within
    );
    if let Some(q) = &e.qv {
        for k in 0..q.empirical.len() {
            s.push_str(&format!(
                "qv test={} empirical={:e} predicted={:e} second_moment={:e} rel_error={:e}\n",
                k, q.empirical[k], q.predicted[k], q.second_moment[k], q.rel_error[k]
            ));
        }
    }
    std::fs::write(&p, s).map_err(|err| LabError::io(&p, err))?;
    emit_report(out, &[("ensemble".into(), e.report.clone())], None, plots)
}

// ---------------------------------------------------------------------------
// cascades

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSchedule {
    pub taus: Vec<f64>,
    pub epss: Vec<f64>,
    pub alphas: Vec<f64>,
    pub pairing: Pairing,
}

impl CascadeSchedule {
    pub fn from_config(c: &RunConfig) -> Result<Self> {
        let s = Self {
            taus: c.cascade.taus.clone(),
            epss: c.cascade.epss.clone(),
            alphas: c.cascade.alphas.clone(),
            pairing: c.cascade.pairing.clone(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let strictly = |v: &[f64], up: bool| v.windows(2).all(|w| if up { w[0] < w[1] } else { w[0] > w[1] });
        if !strictly(&self.taus, true) || self.taus.iter().any(|t| !(*t > 0.0)) {
            return Err(LabError::Config("cascade.taus: must be positive and strictly increasing".into()));
        }
        if !strictly(&self.epss, false) || self.epss.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(LabError::Config("cascade.epss: must be positive and strictly decreasing".into()));
        }
        if !strictly(&self.alphas, false) || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 0.5)) {
            return Err(LabError::Config("cascade.alphas: must lie in (0, 1/2) and strictly decrease".into()));
        }
        if self.pairing == Pairing::Simultaneous && self.taus.len() != self.epss.len() {
            return Err(LabError::Config("cascade: simultaneous pairing needs as many taus as epss".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeMember {
    pub tau: f64,
    pub eps: f64,
    pub cap_activations: usize,
    pub min_denominator: f64,
}

/// Difference between consecutive members.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeDiff {
    pub stage: String,
    pub from: f64,
    pub to: f64,
    /// `L^2(0,T; H^1)` surrogate of the phase-field difference.
    pub phi_h1: f64,
    /// `L^2(0,T; L^2)` of the chemistry difference.
    pub c_l2: f64,
    /// `L^2(0,T; L^2)` of `phi^alpha (c - c')`.
    pub c_weighted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTable {
    pub members: Vec<(String, CascadeMember)>,
    pub diffs: Vec<CascadeDiff>,
    /// Slope of `log c_l2` against `log eps` over the eps stage.
    pub eps_rate: f64,
    /// `(alpha, max normalized weak-form residual)`.
    pub alpha_residuals: Vec<(f64, f64)>,
    pub report: DiagnosticsReport,
}

fn time_integral(snaps_a: &Trajectory, snaps_b: &Trajectory, mut f: impl FnMut(usize, usize) -> f64) -> Result<f64> {
    let n = snaps_a.snapshots.len();
    if n != snaps_b.snapshots.len() || n < 2 {
        return Err(LabError::Config("cascade members recorded different snapshot times".into()));
    }
    let vals: Vec<f64> = (0..n).map(|k| f(k, k)).collect();
    let mut s = 0.0;
    for k in 0..n - 1 {
        let h = snaps_a.snapshots[k + 1].t - snaps_a.snapshots[k].t;
        s += 0.5 * h * (vals[k] + vals[k + 1]);
    }
    Ok(s.sqrt())
}

fn member_diff(stage: &str, from: f64, to: f64, a: &Trajectory, b: &Trajectory, alpha: f64) -> Result<CascadeDiff> {
    let grid = a.grid();
    let mut ws = Spectral::new(grid);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    let phi_h1 = time_integral(a, b, |i, j| {
        let d = a.snapshots[i].phi.zip_map(&b.snapshots[j].phi, |x, y| x - y).expect("same grid");
        let g = ws.gradient(&d).expect("finite difference");
        sq(d.values()) + g.comps().iter().map(|c| sq(c)).sum::<f64>()
    })?;
    let c_l2 = time_integral(a, b, |i, j| {
        let (x, y) = (&a.snapshots[i].c, &b.snapshots[j].c);
        x.comps().iter().zip(y.comps()).map(|(p, q)| sq(&p.iter().zip(q).map(|(u, v)| u - v).collect::<Vec<_>>())).sum()
    })?;
    let c_weighted = time_integral(a, b, |i, j| {
        let (x, y) = (&a.snapshots[i].c, &b.snapshots[j].c);
        let phi = b.snapshots[j].phi.values();
        x.comps()
            .iter()
            .zip(y.comps())
            .map(|(p, q)| {
                let d: Vec<f64> = (0..p.len()).map(|n| phi[n].max(0.0).powf(alpha) * (p[n] - q[n])).collect();
                sq(&d)
            })
            .sum()
    })?;
    Ok(CascadeDiff { stage: stage.into(), from, to, phi_h1, c_l2, c_weighted })
}

/// Runs the members of `schedule` on common random numbers and tabulates
/// successive differences; then audits the weighted weak form for each
/// alpha on the last member.
pub fn run_cascade(config: &RunConfig, schedule: &CascadeSchedule) -> Result<CascadeTable> {
    schedule.validate()?;
    let mut r = config.resolve()?;
    let steps = r.solver.steps();
    r.solver.record_every = (steps / 250).max(1);
    let eta = r.reg.eta;
    let mk = |tau: f64, eps: f64| RegParams { tau, eps, alpha: r.reg.alpha, eta };
    let mut plan: Vec<(String, RegParams)> = Vec::new();
    match schedule.pairing {
        Pairing::Sequential => {
            for &t in &schedule.taus {
                plan.push(("tau".into(), mk(t, schedule.epss[0])));
            }
            for &e in &schedule.epss {
                plan.push(("eps".into(), mk(f64::INFINITY, e)));
            }
        }
        Pairing::Simultaneous => {
            for (&t, &e) in schedule.taus.iter().zip(&schedule.epss) {
                plan.push(("joint".into(), mk(t, e)));
            }
        }
    }
    let runs: Vec<Result<Trajectory>> =
        pool()?.install(|| plan.par_iter().map(|(_, reg)| simulate_with(&r, reg, &mut [])).collect());
    let runs: Vec<Trajectory> = runs.into_iter().collect::<Result<_>>()?;

    let members: Vec<(String, CascadeMember)> = plan
        .iter()
        .zip(&runs)
        .map(|((stage, reg), t)| {
            (
                stage.clone(),
                CascadeMember {
                    tau: reg.tau,
                    eps: reg.eps,
                    cap_activations: t.stats.cap_activations,
                    min_denominator: t.stats.min_denominator,
                },
            )
        })
        .collect();
    let mut diffs = Vec::new();
    for k in 0..plan.len().saturating_sub(1) {
        if plan[k].0 != plan[k + 1].0 {
            continue;
        }
        let (from, to) = match plan[k].0.as_str() {
            "tau" => (plan[k].1.tau, plan[k + 1].1.tau),
            _ => (plan[k].1.eps, plan[k + 1].1.eps),
        };
        diffs.push(member_diff(&plan[k].0, from, to, &runs[k], &runs[k + 1], r.reg.alpha)?);
    }

    let hash = sha256_hex(r.config.to_toml().as_bytes());
    let mut report = DiagnosticsReport::new(hash);
    let eps_stage = if schedule.pairing == Pairing::Sequential { "eps" } else { "joint" };
    let eps_diffs: Vec<&CascadeDiff> = diffs.iter().filter(|d| d.stage == eps_stage).collect();
    let decreasing = eps_diffs.windows(2).all(|w| w[1].c_l2 < w[0].c_l2);
    report.push(Check::holds("cascade.eps.decreasing", "successive c differences strictly decrease", decreasing));
    let pts: Vec<(f64, f64)> = eps_diffs.iter().map(|d| (d.to.ln(), d.c_l2.max(1e-300).ln())).collect();
    let eps_rate = phasefield_core::diagnostics::ls_slope(&pts);

    if schedule.pairing == Pairing::Sequential {
        let tau_members: Vec<&CascadeMember> =
            members.iter().filter(|(s, _)| s == "tau").map(|(_, m)| m).collect();
        let mut worst = 0.0f64;
        for (k, d) in diffs.iter().filter(|d| d.stage == "tau").enumerate() {
            if tau_members[k].cap_activations == 0 && tau_members[k + 1].cap_activations == 0 {
                worst = worst.max(d.c_l2).max(d.phi_h1);
            }
        }
        report.push(Check::at_most(
            "cascade.tau.inactive_cap",
            "difference between members whose caps never act",
            worst,
            1e-12,
        ));
    }

    let last = runs.last().expect("nonempty cascade");
    let tests = TestFunctionSet::standard(r.grid, r.model.d(), r.config.diagnostics.test_seed)?;
    let mut alpha_residuals = Vec::new();
    let coupled = r.config.solver.mode == RunMode::Coupled && !r.solver.freeze_phi;
    if coupled {
        let res: Vec<Result<(f64, f64)>> = pool()?.install(|| {
            schedule
                .alphas
                .par_iter()
                .map(|&a| {
                    let w = weak_form_residual_with(last, Weight::PhiPower(a), &tests, WeakForm::Expanded { alpha: a }, &[])?;
                    Ok((a, w.max_normalized))
                })
                .collect()
        });
        alpha_residuals = res.into_iter().collect::<Result<_>>()?;
        let worst = alpha_residuals.iter().map(|p| p.1).fold(0.0, f64::max);
        report.push(Check::at_most(
            "cascade.alpha.weak_form",
            "max over alpha of the expanded weak-form residual",
            worst,
            r.config.diagnostics.tolerance,
        ));
    }
    Ok(CascadeTable { members, diffs, eps_rate, alpha_residuals, report })
}

pub fn write_cascade(out: &Path, t: &CascadeTable, plots: bool) -> Result<Summary> {
    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let p = out.join("members.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["stage", "tau", "eps", "cap_activations", "min_denominator"])?;
    for (s, m) in &t.members {
        w.write_record([s.clone(), m.tau.to_string(), m.eps.to_string(), m.cap_activations.to_string(), format!("{:e}", m.min_denominator)])?;
    }
    w.flush().map_err(|e| LabError::io(&p, e))?;
    let p = out.join("differences.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["stage", "from", "to", "phi_h1", "c_l2", "c_weighted"])?;
    for d in &t.diffs {
        w.write_record([
            d.stage.clone(),
            d.from.to_string(),
            d.to.to_string(),
            format!("{:e}", d.phi_h1),
            format!("{:e}", d.c_l2),
            format!("{:e}", d.c_weighted),
        ])?;
    }
    w.flush().map_err(|e| LabError::io(&p, e))?;
    let p = out.join("alpha.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["alpha", "weak_form_residual"])?;
    for (a, v) in &t.alpha_residuals {
        w.write_record([a.to_string(), format!("{v:e}")])?;
    }
    w.flush().map_err(|e| LabError::io(&p, e))?;
    let p = out.join("rates.txt");
    std::fs::write(&p, format!("eps_rate={:e}\n", t.eps_rate)).map_err(|e| LabError::io(&p, e))?;
    emit_report(out, &[("cascade".into(), t.report.clone())], None, plots)
}

/// Runs the config once per `dt` level and writes the combined report.
pub fn run_levels(config: &RunConfig, levels: &[f64], out: &Path) -> Result<Summary> {
    let mut reports = Vec::new();
    for &dt in levels {
        let mut c = config.clone();
        c.solver.dt = dt;
        c.solver.record_every = None;
        let dir = out.join(format!("dt_{dt:e}"));
        let run = run_single(&c, &dir)?;
        reports.push((format!("dt={dt:e}"), run.report));
    }
    emit_report(out, &reports, Some(levels), config.output.plots)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.grid.points = 32;
        c.noise.k_max = 4;
        c.solver.dt = 1e-3;
        c.solver.t_end = 0.05;
        c.diagnostics.model_samples = 2000;
        c
    }

    #[test]
    fn seeds_are_distinct() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|i| path_seed(3, i)).collect();
        assert_eq!(s.len(), 1000);
    }

    #[test]
    fn schedule_validation() {
        let mut s = CascadeSchedule::from_config(&RunConfig::default()).unwrap();
        s.epss = vec![1e-2, 1e-1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_run_writes_manifest_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_single(&small(), &dir.path().join("a")).unwrap();
        assert!(run.manifest.artifacts.contains_key("ledger.sdl"));
        assert!(run.manifest.artifacts.contains_key("snapshots/snap_0000000.sdf"));
        let diff = replay_manifest(&dir.path().join("a"), &dir.path().join("b")).unwrap();
        assert!(diff.is_empty(), "{diff:?}");
    }

    #[test]
    fn ensemble_of_two_is_flagged() {
        let e = run_ensemble(&small(), 2, 5).unwrap();
        assert_eq!(e.outcomes.len(), 2);
        assert!(e.unreliable);
        assert!(e.qv.unwrap().too_few_paths);
    }

    #[test]
    fn bad_box_rejected_before_compute() {
        let mut c = small();
        c.model.params.insert("lower_0".into(), 2.0);
        assert!(matches!(run_single(&c, Path::new("/nonexistent/never")), Err(LabError::Config(_))));
    }
}
