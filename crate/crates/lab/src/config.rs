//! Run configuration. Every block has defaults; [`RunConfig::resolve`]
//! fills in the values that depend on the model so the echoed config in a
//! manifest contains no implicit defaults.

use std::collections::BTreeMap;
use std::path::Path;

use phasefield_core::dynamics::{RegParams, SingularForm, SolverConfig};
use phasefield_core::models::{make_model, EtaCutoff, ModelSpec, ParamMap};
use phasefield_core::{NoiseSpec, TorusGrid};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const ABS_SMOKE: &str = include_str!("../configs/abs_smoke.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub dim: usize,
    pub points: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self { dim: 2, points: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub preset: String,
    pub params: BTreeMap<String, f64>,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self { preset: "abs".into(), params: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegBlock {
    /// Gradient cap, `inf` for none.
    pub tau: f64,
    pub eps: f64,
    pub alpha: f64,
    /// Defaults to the model's `eta_margin`.
    pub eta_margin: Option<f64>,
}

impl Default for RegBlock {
    fn default() -> Self {
        Self { tau: f64::INFINITY, eps: 1e-2, alpha: 0.25, eta_margin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseBlock {
    pub r: f64,
    pub s: f64,
    pub k_max: usize,
    pub seed: u64,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        let n = NoiseSpec::new(1, 0);
        Self { r: n.r, s: n.s, k_max: n.k_max, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Coupled,
    /// `c` against the frozen `phi_0`.
    UncoupledConstant,
    /// `c` against the exact heat flow of `phi_0`.
    UncoupledHeat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularFormName {
    Quotient,
    ColeHopf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub dt: f64,
    pub t_end: f64,
    /// Defaults to the model's `gamma`.
    pub gamma: Option<f64>,
    /// Defaults to the model's diffusivities.
    pub diffusion: Option<Vec<f64>>,
    /// Defaults to 50 snapshots.
    pub record_every: Option<usize>,
    pub mode: RunMode,
    /// Diffusivity of the heat path in `uncoupled_heat` mode; defaults to `gamma`.
    pub path_kappa: Option<f64>,
    pub clip: bool,
    pub freeze_phi: bool,
    pub dealias: bool,
    pub noise_scale: f64,
    pub noise_refine: usize,
    pub singular_form: SingularFormName,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_end: 0.5,
            gamma: None,
            diffusion: None,
            record_every: None,
            mode: RunMode::Coupled,
            path_kappa: None,
            clip: false,
            freeze_phi: false,
            dealias: true,
            noise_scale: 1.0,
            noise_refine: 1,
            singular_form: SingularFormName::Quotient,
        }
    }
}

/// Initial phase field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiInit {
    Constant { value: f64 },
    /// `mean + amplitude cos(2 pi k . x)`.
    Cosine { mean: f64, amplitude: f64, k: Vec<i64> },
    /// `floor + height max(0, 1 - |x - center|^2 / width^2)`.
    Bump { center: Vec<f64>, width: f64, height: f64, floor: f64 },
    /// Field equal to zero on the disk of `radius` and to `height` beyond
    /// `radius + transition`. The edge is the `C^inf` step, or
    /// `s^p / (s^p + (1 - s)^p)` when `order = p` is given.
    VanishingDisk {
        center: Vec<f64>,
        radius: f64,
        transition: f64,
        height: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        order: Option<u32>,
    },
    /// `floor + height (1 + w) / 2` with `w` a seeded band-limited field.
    Random { seed: u64, floor: f64, height: f64 },
}

impl Default for PhiInit {
    fn default() -> Self {
        Self::Bump { center: vec![0.5, 0.5], width: 0.35, height: 0.9, floor: 0.05 }
    }
}

/// Initial chemistry, as fractions of each box interval `[L_i, K_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CInit {
    Uniform { fraction: f64 },
    /// `mean + amplitude sin(2 pi (x_1 + x_2 + i / d))`.
    Wave { mean: f64, amplitude: f64 },
}

impl Default for CInit {
    fn default() -> Self {
        Self::Wave { mean: 0.3, amplitude: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InitialBlock {
    pub phi: PhiInit,
    pub c: CInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsBlock {
    pub enabled: bool,
    /// Normalized residual tolerance of the identity audits.
    pub tolerance: f64,
    pub guards: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Exponent of the `phi^a` weight and of the weight-support identity.
    pub weight_alpha: f64,
    pub test_seed: u64,
    /// Ratio bound of the uniform-in-alpha check.
    pub alpha_ratio: f64,
    /// Allowed dip of `phi` below the subsolution floor.
    pub floor_slack: f64,
    /// Samples of the model's face and Lipschitz audit.
    pub model_samples: usize,
}

impl Default for DiagnosticsBlock {
    fn default() -> Self {
        Self {
            enabled: true,
            tolerance: 0.05,
            guards: vec![1e-12],
            alphas: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            weight_alpha: 0.25,
            test_seed: 7,
            alpha_ratio: 10.0,
            floor_slack: 1e-3,
            model_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerOutput {
    /// Header only; increments are regenerated from the seed.
    SpecOnly,
    /// Every increment.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: String,
    pub ledger: LedgerOutput,
    pub plots: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: "out".into(), ledger: LedgerOutput::SpecOnly, plots: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Sweep `tau` at the first `eps`, then `eps` at `tau = inf`, then `alpha`.
    Sequential,
    /// Members `(tau_n, eps_n)` advance together.
    Simultaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeBlock {
    pub taus: Vec<f64>,
    pub epss: Vec<f64>,
    pub alphas: Vec<f64>,
    pub pairing: Pairing,
}

impl Default for CascadeBlock {
    fn default() -> Self {
        Self {
            taus: vec![1.0, 2.0, 4.0, f64::INFINITY],
            epss: vec![1e-1, 3e-2, 1e-2, 3e-3],
            alphas: vec![0.4, 0.2, 0.1, 0.05],
            pairing: Pairing::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridBlock,
    pub model: ModelBlock,
    pub reg: RegBlock,
    pub noise: NoiseBlock,
    pub solver: SolverBlock,
    pub initial: InitialBlock,
    pub diagnostics: DiagnosticsBlock,
    pub output: OutputBlock,
    pub cascade: CascadeBlock,
}

/// Everything a run needs, checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub grid: TorusGrid,
    pub model: ModelSpec,
    pub reg: RegParams,
    pub noise: NoiseSpec,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    /// `abs_smoke` names the bundled config; anything else is a path. A
    /// manifest is accepted in place of a config.
    pub fn load(path: &Path) -> Result<Self> {
        if path.as_os_str() == "abs_smoke" {
            return Self::from_toml(ABS_SMOKE);
        }
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        if let Ok(m) = toml::from_str::<crate::manifest::RunManifest>(&text) {
            return Ok(m.config);
        }
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validates every block and writes all model-dependent defaults back.
    pub fn resolve(&self) -> Result<Resolved> {
        let mut cfg = self.clone();
        let grid = TorusGrid::new(cfg.grid.dim, cfg.grid.points).map_err(|e| at("grid", e))?;
        let overrides: ParamMap = cfg.model.params.clone().into_iter().collect();
        let model = make_model(&cfg.model.preset, &overrides).map_err(|e| at("model", e))?;
        cfg.model.params = model.params().clone().into_iter().collect();

        let margin = *cfg.reg.eta_margin.get_or_insert(model.eta().margin);
        let eta = EtaCutoff::new(margin).map_err(|e| at("reg.eta_margin", e))?;
        let reg = RegParams::new(cfg.reg.tau, cfg.reg.eps, cfg.reg.alpha, eta).map_err(|e| at("reg", e))?;

        let noise = NoiseSpec { r: cfg.noise.r, s: cfg.noise.s, k_max: cfg.noise.k_max, d: model.d(), seed: cfg.noise.seed };
        noise.validate(grid.dim()).map_err(|e| at("noise", e))?;
        if 2 * noise.k_max >= grid.points() {
            return Err(LabError::Config("noise.k_max: must stay below N/2".into()));
        }

        let s = &mut cfg.solver;
        let mut solver = SolverConfig::new(&model, s.dt, s.t_end);
        solver.gamma = *s.gamma.get_or_insert(model.gamma());
        solver.diffusion = s.diffusion.get_or_insert_with(|| model.diffusion().to_vec()).clone();
        solver.record_every = *s.record_every.get_or_insert(solver.record_every);
        if s.mode == RunMode::UncoupledHeat {
            s.path_kappa.get_or_insert(solver.gamma);
        }
        solver.clip = s.clip;
        solver.freeze_phi = s.freeze_phi;
        solver.dealias = s.dealias;
        solver.noise_scale = s.noise_scale;
        solver.noise_refine = s.noise_refine;
        solver.singular_form = match s.singular_form {
            SingularFormName::Quotient => SingularForm::Quotient,
            SingularFormName::ColeHopf => SingularForm::ColeHopf,
        };
        solver.validate(model.d()).map_err(|e| at("solver", e))?;

        let d = &cfg.diagnostics;
        if !(d.tolerance > 0.0) || d.guards.iter().any(|g| !(*g > 0.0)) || d.guards.is_empty() {
            return Err(LabError::Config("diagnostics: tolerance and guards must be positive".into()));
        }
        if d.alphas.iter().chain([&d.weight_alpha]).any(|a| !(*a > 0.0 && *a < 0.5)) {
            return Err(LabError::Config("diagnostics.alphas: need values in (0, 1/2)".into()));
        }
        cfg.initial.check(grid.dim())?;
        Ok(Resolved { config: cfg, grid, model, reg, noise, solver })
    }
}

impl InitialBlock {
    fn check(&self, dim: usize) -> Result<()> {
        let center_ok = |c: &Vec<f64>| c.len() == dim;
        let ok = match &self.phi {
            PhiInit::Cosine { k, .. } => k.len() == dim,
            PhiInit::Bump { center, width, .. } => center_ok(center) && *width > 0.0,
            PhiInit::VanishingDisk { center, radius, transition, .. } => {
                center_ok(center) && *radius > 0.0 && *transition > 0.0
            }
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::Config("initial.phi: vectors need one entry per axis, widths must be positive".into()))
        }
    }
}

fn at(key: &str, e: phasefield_core::Error) -> LabError {
    LabError::Config(format!("{key}: {e}"))
}
