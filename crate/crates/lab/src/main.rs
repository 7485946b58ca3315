use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phasefield_core::diagnostics::DiagnosticsReport;
use phasefield_core::models::validate_invariance;
use phasefield_lab::report::{emit_report, parse_records, Summary};
use phasefield_lab::runner::{
    replay_manifest, run_cascade, run_ensemble, run_levels, run_single, write_cascade, write_ensemble,
    CascadeSchedule,
};
use phasefield_lab::{LabError, Result, RunConfig};

/// Stochastic phase-field simulations and identity audits.
#[derive(Parser)]
#[command(name = "phasefield", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args)]
struct Common {
    /// Config file, a manifest, or `abs_smoke` for the bundled config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to `output.dir` of the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `noise.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Verb {
    /// One trajectory with the per-run audit.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated time steps; runs once per level and writes a
        /// convergence table.
        #[arg(long, value_delimiter = ',')]
        dt_levels: Option<Vec<f64>>,
        /// Re-run the manifest in `--config` and compare artifact hashes.
        #[arg(long)]
        replay: bool,
    },
    /// Monte Carlo ensemble with quadratic-variation and centeredness checks.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        paths: usize,
    },
    /// Regularization cascade from the `[cascade]` block.
    Cascade {
        #[command(flatten)]
        common: Common,
    },
    /// Combines `report.txt` files of earlier runs into one summary.
    Report {
        /// Run directories.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Face conditions and empirical constants of the configured model.
    ValidateModel {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(c: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.noise.seed = s;
    }
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    Ok((cfg, out))
}

fn print_summary(s: &Summary, out: &std::path::Path) {
    println!("checks passed: {}  failed: {}  ({})", s.passed, s.failed, out.join("summary.txt").display());
}

fn execute(verb: Verb) -> Result<bool> {
    match verb {
        Verb::Run { common, dt_levels, replay } => {
            if replay {
                let out = common.out.clone().ok_or_else(|| LabError::Config("--replay needs --out".into()))?;
                let dir = common.config.parent().map(|p| p.to_path_buf()).unwrap_or_default();
                let diff = replay_manifest(&dir, &out)?;
                for d in &diff {
                    println!("hash mismatch: {d}");
                }
                println!("replay: {}", if diff.is_empty() { "identical artifact hashes" } else { "differs" });
                return Ok(diff.is_empty());
            }
            let (cfg, out) = load(&common)?;
            if let Some(levels) = dt_levels {
                let s = run_levels(&cfg, &levels, &out)?;
                print_summary(&s, &out);
                return Ok(s.success());
            }
            let run = run_single(&cfg, &out)?;
            print_summary(&run.summary, &out);
            Ok(run.summary.success())
        }
        Verb::Ensemble { common, paths } => {
            let (cfg, out) = load(&common)?;
            let e = run_ensemble(&cfg, paths, cfg.noise.seed)?;
            if e.unreliable {
                println!("note: {} completed paths; confidence intervals are unreliable below 100", e.outcomes.len());
            }
            let s = write_ensemble(&out, &e, cfg.output.plots)?;
            print_summary(&s, &out);
            Ok(s.success())
        }
        Verb::Cascade { common } => {
            let (cfg, out) = load(&common)?;
            let schedule = CascadeSchedule::from_config(&cfg)?;
            let t = run_cascade(&cfg, &schedule)?;
            let s = write_cascade(&out, &t, cfg.output.plots)?;
            print_summary(&s, &out);
            Ok(s.success())
        }
        Verb::Report { dirs, out } => {
            let mut reports = Vec::new();
            for d in &dirs {
                let p = d.join("report.txt");
                let text = std::fs::read_to_string(&p).map_err(|e| LabError::io(&p, e))?;
                let checks = parse_records(&text)?;
                let hash = checks.first().map(|c| c.config_hash.clone()).unwrap_or_default();
                let mut r = DiagnosticsReport::new(hash);
                r.checks = checks;
                reports.push((d.display().to_string(), r));
            }
            let s = emit_report(&out, &reports, None, false)?;
            print_summary(&s, &out);
            Ok(s.success())
        }
        Verb::ValidateModel { config, samples, seed } => {
            let r = RunConfig::load(&config)?.resolve()?;
            let rep = validate_invariance(&r.model, samples, seed)?;
            println!("model {} samples={} violations={}", r.model.preset().name(), rep.samples, rep.violations.len());
            for v in rep.violations.iter().take(20) {
                println!("  {:?} phi={} c={:?} value={:e}", v.kind, v.phi, v.c, v.value);
            }
            let l = rep.lipschitz;
            println!(
                "M1={:e} M2={:e} lip_f={:e} lip_b_eta={:e}",
                l.m1, l.m2, l.f_lipschitz, l.b_eta_lipschitz
            );
            Ok(rep.violations.is_empty())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.verb) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
