//! IMEX Euler-Maruyama integration of the phase field and the chemistry.
//!
//! Per step, with `R_k = (I - dt k Laplacian)^{-1}` applied spectrally and
//! `P` the 2/3-rule projection:
//!
//! ```text
//! phi' = R_gamma [phi + dt P(g + Psi(grad^tau phi))]
//! c_i' = R_{D_i} [c_i + dt P(D_i m_i grad c_i . grad^tau phi / (phi + eps) + f_i) + b_eta,i dW_i]
//! ```
//!
//! Observers receive every step with the pre- and post-step state and the
//! individual drift terms, so identity audits run without storing the path.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
// unused when another crate in the graph links std
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::field::{cap_in_place, pairwise_sum, ScalarField, TorusGrid, VectorField};
use crate::models::{clip_in_place, EtaCutoff, ModelSpec};
use crate::noise::{build_spectrum, coarse_increment_into, NoiseLedger, NoiseSampler, NoiseSpec};
use crate::spectral::Spectral;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Floor below which an unshifted quotient is refused.
pub const SINGULAR_FLOOR: f64 = 1e-12;

/// Tolerance of the box checks on initial data.
pub const INITIAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    /// Gradient cap; `f64::INFINITY` disables it.
    pub tau: f64,
    /// Shift of the singular quotient.
    pub eps: f64,
    /// Weight exponent.
    pub alpha: f64,
    pub eta: EtaCutoff,
}

impl RegParams {
    pub fn new(tau: f64, eps: f64, alpha: f64, eta: EtaCutoff) -> Result<Self> {
        let r = Self { tau, eps, alpha, eta };
        r.validate()?;
        Ok(r)
    }

    /// `tau = inf`, `eps = 1e-2`, `alpha = 0.25`, the model's cutoff.
    pub fn for_model(model: &ModelSpec) -> Self {
        Self { tau: f64::INFINITY, eps: 1e-2, alpha: 0.25, eta: model.eta() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(invalid("reg.tau", "must be positive (or inf)"));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(invalid("reg.eps", "must be finite and nonnegative"));
        }
        if !(self.alpha >= 0.0 && self.alpha < 0.5) {
            return Err(invalid("reg.alpha", "must lie in [0, 1/2)"));
        }
        EtaCutoff::new(self.eta.margin).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Phase-field diffusivity.
    pub gamma: f64,
    /// Diagonal of `D`.
    pub diffusion: Vec<f64>,
    /// Snapshot stride in steps.
    pub record_every: usize,
    /// Project `c` onto the box after every step (off by default).
    pub clip: bool,
    /// Keep `phi` fixed at `phi_0`.
    pub freeze_phi: bool,
    /// 2/3-rule projection of the explicit drift.
    pub dealias: bool,
    /// Multiplies every noise increment; 0 skips sampling.
    pub noise_scale: f64,
    /// Each increment sums this many fine increments at `dt / refine`.
    pub noise_refine: usize,
    pub singular_form: SingularForm,
}

/// How the singular drift of `c` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingularForm {
    /// `D m grad c . grad^tau phi / (phi + eps)` nodewise.
    #[default]
    Quotient,
    /// `-D m grad c . grad z` with `z = log(1 / (phi + eps))` differentiated
    /// spectrally. The gradient cap is not applied.
    ColeHopf,
}

impl SolverConfig {
    /// `gamma` and `D` from the model; `record_every` gives 50 snapshots.
    pub fn new(model: &ModelSpec, dt: f64, t_end: f64) -> Self {
        let steps = (t_end / dt).round().max(1.0) as usize;
        Self {
            dt,
            t_end,
            gamma: model.gamma(),
            diffusion: model.diffusion().to_vec(),
            record_every: (steps / 50).max(1),
            clip: false,
            freeze_phi: false,
            dealias: true,
            noise_scale: 1.0,
            noise_refine: 1,
            singular_form: SingularForm::Quotient,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("solver.dt", "must be positive"));
        }
        if !(self.t_end >= self.dt) {
            return Err(invalid("solver.t_end", "need T >= dt"));
        }
        let steps = self.steps() as f64;
        if ((steps * self.dt - self.t_end) / self.t_end).abs() > 1e-9 {
            return Err(invalid("solver.t_end", "T must be an integer multiple of dt"));
        }
        if !(self.gamma > 0.0) {
            return Err(invalid("solver.gamma", "must be positive"));
        }
        if self.diffusion.len() != d || self.diffusion.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("solver.diffusion", "need one positive entry per component"));
        }
        if self.record_every == 0 {
            return Err(invalid("solver.record_every", "must be at least 1"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(invalid("solver.noise_scale", "must be finite and nonnegative"));
        }
        if self.noise_refine == 0 {
            return Err(invalid("solver.noise_refine", "must be at least 1"));
        }
        Ok(())
    }
}

/// Prescribed phase field for the uncoupled mode.
#[derive(Debug, Clone, PartialEq)]
pub enum PhiPath {
    Constant(ScalarField),
    /// Exact heat flow of `phi0` with diffusivity `kappa`.
    Heat { phi0: ScalarField, kappa: f64 },
    /// One field per step time, `steps + 1` entries.
    Fields(Vec<ScalarField>),
}

impl PhiPath {
    fn initial(&self) -> &ScalarField {
        match self {
            Self::Constant(f) | Self::Heat { phi0: f, .. } => f,
            Self::Fields(v) => &v[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhiSource {
    Coupled,
    Path(PhiPath),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub phi: ScalarField,
    pub c: VectorField,
}

/// Per-step `L^2` norms of the drift parts of the `c` equation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriftNorms {
    /// `||D Laplacian c'||`.
    pub diffusion: f64,
    /// `||D m grad c . grad^tau phi / (phi + eps)||`.
    pub singular: f64,
    /// `||f||`.
    pub reaction: f64,
    /// `||b_eta dW||`.
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunStats {
    /// Largest distance of any `c` node outside the box.
    pub max_excursion: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    /// Nodes where the gradient cap acted, summed over steps.
    pub cap_activations: usize,
    /// Nodes moved by opt-in clipping.
    pub clip_activations: usize,
    /// Smallest `phi + eps` fed to the quotient.
    pub min_denominator: f64,
    /// Largest `|b_eta|` over nodes and steps.
    pub sup_b_eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: SolverConfig,
    pub model: ModelSpec,
    pub reg: RegParams,
    pub noise: NoiseSpec,
    pub source: PhiSource,
    pub phi0: ScalarField,
    pub c0: VectorField,
    pub snapshots: Vec<Snapshot>,
    pub ledger: Option<NoiseLedger>,
    pub drift: Vec<DriftNorms>,
    pub stats: RunStats,
}

impl Trajectory {
    pub fn grid(&self) -> TorusGrid {
        self.phi0.grid()
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory has an initial snapshot")
    }
}

/// Everything an audit sees about one step. Pre-step gradients were taken
/// spectrally from the pre-step state; `post` carries the state after the
/// implicit solve together with its gradients and Laplacians.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub step: usize,
    /// Time at the start of the step.
    pub t: f64,
    pub dt: f64,
    pub pre: &'a State,
    pub post: &'a State,
    /// Gradient actually used in `Psi` and the quotient.
    pub grad_phi_used: &'a [Vec<f64>],
    pub g: &'a [f64],
    pub psi: &'a [f64],
    pub f: &'a [Vec<f64>],
    /// `D_i m_i grad c_i . grad^tau phi / (phi + eps)`.
    pub singular: &'a [Vec<f64>],
    /// The explicit terms as the scheme applies them, i.e. after the 2/3-rule
    /// projection (equal to the raw terms when dealiasing is off).
    pub g_applied: &'a [f64],
    pub psi_applied: &'a [f64],
    pub f_applied: &'a [Vec<f64>],
    pub singular_applied: &'a [Vec<f64>],
    pub b_eta: &'a [Vec<f64>],
    /// Raw increment `Delta W` (zero when noise is off).
    pub dw: &'a [Vec<f64>],
    /// Applied stochastic term `b_eta Delta W`.
    pub noise: &'a [Vec<f64>],
    pub model: &'a ModelSpec,
    pub reg: &'a RegParams,
    pub config: &'a SolverConfig,
    /// `4 pi^2 |k|^2`.
    pub k2: &'a [f64],
}

pub trait Observer {
    fn observe(&mut self, rec: &StepRecord<'_>);
}

/// Nodal and spectral state with first and second derivatives.
#[derive(Debug, Clone)]
pub struct State {
    pub phi: Vec<f64>,
    pub c: Vec<Vec<f64>>,
    pub phi_hat: Vec<Complex64>,
    pub c_hat: Vec<Vec<Complex64>>,
    /// `[axis][node]`.
    pub grad_phi: Vec<Vec<f64>>,
    /// `[component][axis][node]`.
    pub grad_c: Vec<Vec<Vec<f64>>>,
    pub lap_phi: Vec<f64>,
    pub lap_c: Vec<Vec<f64>>,
}

impl State {
    fn zeros(len: usize, dim: usize, d: usize) -> Self {
        Self {
            phi: vec![0.0; len],
            c: vec![vec![0.0; len]; d],
            phi_hat: vec![ZERO; len],
            c_hat: vec![vec![ZERO; len]; d],
            grad_phi: vec![vec![0.0; len]; dim],
            grad_c: vec![vec![vec![0.0; len]; dim]; d],
            lap_phi: vec![0.0; len],
            lap_c: vec![vec![0.0; len]; d],
        }
    }

    /// Fills coefficients from nodal values.
    fn transform(&mut self, ws: &mut Spectral) {
        let d = self.c.len();
        let mut i = 0;
        // phi is paired with the first component
        if d > 0 {
            ws.forward_pair_into(&self.phi, &self.c[0], &mut self.phi_hat, &mut self.c_hat[0]);
            i = 1;
        } else {
            ws.forward_into(&self.phi, &mut self.phi_hat);
        }
        while i < d {
            if i + 1 < d {
                let (lo, hi) = self.c.split_at(i + 1);
                let (clo, chi) = self.c_hat.split_at_mut(i + 1);
                ws.forward_pair_into(&lo[i], &hi[0], &mut clo[i], &mut chi[0]);
                i += 2;
            } else {
                ws.forward_into(&self.c[i], &mut self.c_hat[i]);
                i += 1;
            }
        }
    }

    /// Nodal values from coefficients.
    fn synthesize(&mut self, ws: &mut Spectral) {
        let d = self.c.len();
        ws.inverse_pair_into(&self.phi_hat, &self.c_hat[0], &mut self.phi, &mut self.c[0]);
        let mut i = 1;
        while i < d {
            if i + 1 < d {
                let (lo, hi) = self.c.split_at_mut(i + 1);
                ws.inverse_pair_into(&self.c_hat[i], &self.c_hat[i + 1], &mut lo[i], &mut hi[0]);
                i += 2;
            } else {
                ws.inverse_into(&self.c_hat[i], &mut self.c[i]);
                i += 1;
            }
        }
    }

    fn derivatives(&mut self, ws: &mut Spectral, laplacians: bool, scratch: &mut [Vec<Complex64>; 2]) {
        ws.gradient_from_coeffs(&self.phi_hat, &mut self.grad_phi);
        for i in 0..self.c.len() {
            ws.gradient_from_coeffs(&self.c_hat[i], &mut self.grad_c[i]);
        }
        if laplacians {
            let d = self.c.len();
            let k2 = ws.k_squared().to_vec();
            let lap = |src: &[Complex64], dst: &mut Vec<Complex64>| {
                for ((o, z), k) in dst.iter_mut().zip(src).zip(&k2) {
                    *o = *z * -k;
                }
            };
            lap(&self.phi_hat, &mut scratch[0]);
            lap(&self.c_hat[0], &mut scratch[1]);
            ws.inverse_pair_into(&scratch[0], &scratch[1], &mut self.lap_phi, &mut self.lap_c[0]);
            let mut i = 1;
            while i < d {
                lap(&self.c_hat[i], &mut scratch[0]);
                if i + 1 < d {
                    lap(&self.c_hat[i + 1], &mut scratch[1]);
                    let (lo, hi) = self.lap_c.split_at_mut(i + 1);
                    ws.inverse_pair_into(&scratch[0], &scratch[1], &mut lo[i], &mut hi[0]);
                    i += 2;
                } else {
                    ws.inverse_into(&scratch[0], &mut self.lap_c[i]);
                    i += 1;
                }
            }
        }
    }
}

struct Terms {
    g: Vec<f64>,
    psi: Vec<f64>,
    f: Vec<Vec<f64>>,
    singular: Vec<Vec<f64>>,
    b_eta: Vec<Vec<f64>>,
    dw: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
    grad_used: Vec<Vec<f64>>,
    rhs_phi: Vec<f64>,
    rhs_c: Vec<Vec<f64>>,
    rhs_hat: Vec<Vec<Complex64>>,
    noise_hat: Vec<Vec<Complex64>>,
    scratch: Vec<Vec<f64>>,
    g_p: Vec<f64>,
    psi_p: Vec<f64>,
    f_p: Vec<Vec<f64>>,
    s_p: Vec<Vec<f64>>,
    z: Vec<f64>,
    z_hat: Vec<Complex64>,
    grad_z: Vec<Vec<f64>>,
    lap_scratch: [Vec<Complex64>; 2],
}

/// Stepping engine shared by the coupled and uncoupled modes.
pub struct Integrator<'a> {
    model: &'a ModelSpec,
    cfg: &'a SolverConfig,
    reg: RegParams,
    ws: Spectral,
    sampler: Option<NoiseSampler>,
    cur: State,
    next: State,
    terms: Terms,
    path: Option<&'a PhiPath>,
    stats: RunStats,
    c_limit: f64,
    steps_done: usize,
}

impl<'a> Integrator<'a> {
    pub fn new(
        model: &'a ModelSpec,
        cfg: &'a SolverConfig,
        reg: RegParams,
        noise: &NoiseSpec,
        phi0: &ScalarField,
        c0: &VectorField,
        path: Option<&'a PhiPath>,
    ) -> Result<Self> {
        cfg.validate(model.d())?;
        reg.validate()?;
        validate_initial(model, phi0, c0)?;
        let grid = phi0.grid();
        let (len, dim, d) = (grid.len(), grid.dim(), model.d());
        if noise.d != d {
            return Err(invalid("noise.d", "must equal the component count of c"));
        }
        let sampler = if cfg.noise_scale > 0.0 { Some(NoiseSampler::new(build_spectrum(noise, grid)?)) } else { None };
        let mut ws = Spectral::new(grid);
        let mut cur = State::zeros(len, dim, d);
        cur.phi.copy_from_slice(phi0.values());
        for i in 0..d {
            cur.c[i].copy_from_slice(c0.comp(i));
        }
        cur.transform(&mut ws);
        let mut lap_scratch = [vec![ZERO; len], vec![ZERO; len]];
        cur.derivatives(&mut ws, true, &mut lap_scratch);
        let terms = Terms {
            g: vec![0.0; len],
            psi: vec![0.0; len],
            f: vec![vec![0.0; len]; d],
            singular: vec![vec![0.0; len]; d],
            b_eta: vec![vec![0.0; len]; d],
            dw: vec![vec![0.0; len]; d],
            noise: vec![vec![0.0; len]; d],
            grad_used: vec![vec![0.0; len]; dim],
            rhs_phi: vec![0.0; len],
            rhs_c: vec![vec![0.0; len]; d],
            rhs_hat: vec![vec![ZERO; len]; d + 1],
            noise_hat: vec![vec![ZERO; len]; d],
            scratch: vec![vec![0.0; len]; d],
            g_p: vec![0.0; len],
            psi_p: vec![0.0; len],
            f_p: vec![vec![0.0; len]; d],
            s_p: vec![vec![0.0; len]; d],
            z: Vec::new(),
            z_hat: Vec::new(),
            grad_z: Vec::new(),
            lap_scratch,
        };
        let bound = model.lower().iter().chain(model.upper()).fold(1.0f64, |m, x| m.max(x.abs()));
        let stats = RunStats {
            max_excursion: excursion(model, &cur.c),
            phi_min: phi0.min(),
            phi_max: phi0.max(),
            min_denominator: f64::INFINITY,
            ..RunStats::default()
        };
        Ok(Self {
            model,
            cfg,
            reg,
            ws,
            sampler,
            next: cur.clone(),
            cur,
            terms,
            path,
            stats,
            c_limit: 10.0 * bound,
            steps_done: 0,
        })
    }

    pub fn state(&self) -> &State {
        &self.cur
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn grid(&self) -> TorusGrid {
        self.ws.grid()
    }

    /// Advances one step and reports it to `observers`.
    pub fn step(&mut self, observers: &mut [&mut dyn Observer]) -> Result<DriftNorms> {
        let step = self.steps_done;
        let dt = self.cfg.dt;
        let t = step as f64 * dt;
        let model = self.model;
        let d = model.d();
        let len = self.cur.phi.len();
        let grid = self.ws.grid();
        let tm = &mut self.terms;

        // gradient used by Psi and the quotient
        for (dst, src) in tm.grad_used.iter_mut().zip(&self.cur.grad_phi) {
            dst.copy_from_slice(src);
        }
        if self.reg.tau.is_finite() {
            self.stats.cap_activations += cap_in_place(&mut tm.grad_used, self.reg.tau);
        }

        let min_phi = self.cur.phi.iter().copied().fold(f64::INFINITY, f64::min);
        let min_den = min_phi + self.reg.eps;
        self.stats.min_denominator = self.stats.min_denominator.min(min_den);
        if min_den < SINGULAR_FLOOR {
            return Err(Error::SingularDivision { step, min_phi });
        }

        let cole_hopf = self.cfg.singular_form == SingularForm::ColeHopf;
        if cole_hopf {
            tm.z.resize(len, 0.0);
            tm.z_hat.resize(len, ZERO);
            tm.grad_z.resize(grid.dim(), vec![0.0; len]);
            for (z, p) in tm.z.iter_mut().zip(&self.cur.phi) {
                *z = -Float::ln(p + self.reg.eps);
            }
            self.ws.forward_into(&tm.z, &mut tm.z_hat);
            self.ws.gradient_from_coeffs(&tm.z_hat, &mut tm.grad_z);
        }

        let nl = model.nonlocal(&self.cur.phi, &self.cur.c);
        let mut cbuf = [0.0f64; 8];
        let mut fbuf = [0.0f64; 8];
        let mut bbuf = [0.0f64; 8];
        let coupled = self.path.is_none() && !self.cfg.freeze_phi;
        let dim = grid.dim();
        let mult = model.log_multiplier();
        let mut sup_b = 0.0f64;
        for j in 0..len {
            let phi = self.cur.phi[j];
            for i in 0..d {
                cbuf[i] = self.cur.c[i][j];
            }
            let cj = &cbuf[..d];
            let mut gmag2 = 0.0;
            for a in 0..dim {
                gmag2 += tm.grad_used[a][j] * tm.grad_used[a][j];
            }
            if coupled {
                tm.g[j] = model.g_node(phi, cj, &nl);
                tm.psi[j] = model.psi_coefficient(phi, cj, &nl) * gmag2.sqrt();
            } else {
                tm.g[j] = 0.0;
                tm.psi[j] = 0.0;
            }
            tm.rhs_phi[j] = tm.g[j] + tm.psi[j];
            model.f_node(phi, cj, &nl, &mut fbuf[..d]);
            model.b_node(phi, cj, &mut bbuf[..d]);
            let eta = self.reg.eta.eval(cj, model.lower(), model.upper());
            let inv = 1.0 / (phi + self.reg.eps);
            for i in 0..d {
                let mut dot = 0.0;
                if cole_hopf {
                    for a in 0..dim {
                        dot -= self.cur.grad_c[i][a][j] * tm.grad_z[a][j];
                    }
                } else {
                    for a in 0..dim {
                        dot += self.cur.grad_c[i][a][j] * tm.grad_used[a][j];
                    }
                    dot *= inv;
                }
                let s = self.cfg.diffusion[i] * mult[i] * dot;
                tm.singular[i][j] = s;
                tm.f[i][j] = fbuf[i];
                tm.b_eta[i][j] = eta * bbuf[i];
                sup_b = sup_b.max(tm.b_eta[i][j].abs());
                tm.rhs_c[i][j] = s + fbuf[i];
            }
        }

        if self.sampler.is_some() {
            self.stats.sup_b_eta = self.stats.sup_b_eta.max(sup_b * self.cfg.noise_scale);
        }

        // noise
        if let Some(sampler) = self.sampler.as_mut() {
            coarse_increment_into(
                sampler,
                &mut self.ws,
                dt,
                self.cfg.noise_refine,
                step as u64,
                &mut tm.dw,
                &mut tm.scratch,
            )?;
            let scale = self.cfg.noise_scale;
            for i in 0..d {
                for j in 0..len {
                    tm.dw[i][j] *= scale;
                    tm.noise[i][j] = tm.b_eta[i][j] * tm.dw[i][j];
                }
            }
        }

        let audit = !observers.is_empty();
        if audit {
            let ws = &mut self.ws;
            let dealias = self.cfg.dealias;
            let sc = &mut tm.lap_scratch;
            project_pair(ws, dealias, &tm.g, &tm.psi, &mut tm.g_p, &mut tm.psi_p, sc);
            for i in 0..d {
                project_pair(ws, dealias, &tm.f[i], &tm.singular[i], &mut tm.f_p[i], &mut tm.s_p[i], sc);
            }
        }

        // explicit drift to spectral space, two fields per transform
        {
            let (first, rest) = tm.rhs_hat.split_at_mut(1);
            self.ws.forward_pair_into(&tm.rhs_phi, &tm.rhs_c[0], &mut first[0], &mut rest[0]);
            let mut i = 1;
            while i < d {
                let (lo, hi) = rest.split_at_mut(i + 1);
                if i + 1 < d {
                    self.ws.forward_pair_into(&tm.rhs_c[i], &tm.rhs_c[i + 1], &mut lo[i], &mut hi[0]);
                    i += 2;
                } else {
                    self.ws.forward_into(&tm.rhs_c[i], &mut lo[i]);
                    i += 1;
                }
            }
            if self.cfg.dealias {
                for c in tm.rhs_hat.iter_mut() {
                    self.ws.dealias(c);
                }
            }
        }
        let noisy = self.sampler.is_some();
        if noisy {
            let mut i = 0;
            while i < d {
                if i + 1 < d {
                    let (lo, hi) = tm.noise_hat.split_at_mut(i + 1);
                    self.ws.forward_pair_into(&tm.noise[i], &tm.noise[i + 1], &mut lo[i], &mut hi[0]);
                    i += 2;
                } else {
                    self.ws.forward_into(&tm.noise[i], &mut tm.noise_hat[i]);
                    i += 1;
                }
            }
        }

        // implicit solve
        let nx = &mut self.next;
        match self.path {
            Some(path) => {
                let vals = path_at(path, step + 1, dt, &mut self.ws)?;
                nx.phi.copy_from_slice(&vals);
                self.ws.forward_into(&nx.phi, &mut nx.phi_hat);
            }
            None if self.cfg.freeze_phi => {
                nx.phi_hat.copy_from_slice(&self.cur.phi_hat);
            }
            None => {
                for ((o, z), r) in nx.phi_hat.iter_mut().zip(&self.cur.phi_hat).zip(&tm.rhs_hat[0]) {
                    *o = *z + *r * dt;
                }
                self.ws.apply_resolvent(&mut nx.phi_hat, dt * self.cfg.gamma);
            }
        }
        for i in 0..d {
            let dst = &mut nx.c_hat[i];
            for ((o, z), r) in dst.iter_mut().zip(&self.cur.c_hat[i]).zip(&tm.rhs_hat[i + 1]) {
                *o = *z + *r * dt;
            }
            if noisy {
                for (o, n) in dst.iter_mut().zip(&tm.noise_hat[i]) {
                    *o += *n;
                }
            }
            self.ws.apply_resolvent(dst, dt * self.cfg.diffusion[i]);
        }
        let phi_from_path = self.path.is_some();
        if phi_from_path {
            // keep the exact path values; synthesize c only
            let keep = nx.phi.clone();
            nx.synthesize(&mut self.ws);
            nx.phi = keep;
        } else {
            nx.synthesize(&mut self.ws);
        }
        if self.cfg.freeze_phi && self.path.is_none() {
            nx.phi.copy_from_slice(&self.cur.phi);
        }
        if self.cfg.clip {
            let moved = clip_in_place(&mut nx.c, model);
            if moved > 0 {
                self.stats.clip_activations += moved;
                nx.transform(&mut self.ws);
            }
        }
        nx.derivatives(&mut self.ws, audit, &mut tm.lap_scratch);

        // blow-up and finiteness
        let t_next = t + dt;
        let phi_sup = nx.phi.iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::NAN });
        if !(phi_sup <= 10.0 * model.k_phi()) {
            return Err(Error::BlowUp { step: step + 1, time: t_next, field: "phi", sup: phi_sup });
        }
        let c_sup = nx
            .c
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::NAN });
        if !(c_sup <= self.c_limit) {
            return Err(Error::BlowUp { step: step + 1, time: t_next, field: "c", sup: c_sup });
        }
        self.stats.max_excursion = self.stats.max_excursion.max(excursion(model, &nx.c));
        for &p in &nx.phi {
            self.stats.phi_min = self.stats.phi_min.min(p);
            self.stats.phi_max = self.stats.phi_max.max(p);
        }

        let norms = drift_norms(self.cfg, &self.ws, nx, tm, noisy);
        if audit {
            let rec = StepRecord {
                step,
                t,
                dt,
                pre: &self.cur,
                post: nx,
                grad_phi_used: &tm.grad_used,
                g: &tm.g,
                psi: &tm.psi,
                f: &tm.f,
                singular: &tm.singular,
                g_applied: &tm.g_p,
                psi_applied: &tm.psi_p,
                f_applied: &tm.f_p,
                singular_applied: &tm.s_p,
                b_eta: &tm.b_eta,
                dw: &tm.dw,
                noise: &tm.noise,
                model,
                reg: &self.reg,
                config: self.cfg,
                k2: self.ws.k_squared(),
            };
            for o in observers.iter_mut() {
                o.observe(&rec);
            }
        }
        core::mem::swap(&mut self.cur, &mut self.next);
        self.steps_done += 1;
        Ok(norms)
    }
}

/// Nodal values of the 2/3-rule projections of `a` and `b`.
fn project_pair(
    ws: &mut Spectral,
    dealias: bool,
    a: &[f64],
    b: &[f64],
    out_a: &mut [f64],
    out_b: &mut [f64],
    scratch: &mut [Vec<Complex64>; 2],
) {
    if !dealias {
        out_a.copy_from_slice(a);
        out_b.copy_from_slice(b);
        return;
    }
    let [ha, hb] = scratch;
    ws.forward_pair_into(a, b, ha, hb);
    ws.dealias(ha);
    ws.dealias(hb);
    ws.inverse_pair_into(ha, hb, out_a, out_b);
}

fn drift_norms(cfg: &SolverConfig, ws: &Spectral, post: &State, tm: &Terms, noisy: bool) -> DriftNorms {
    let norm = |v: &[f64]| (pairwise_sum(&v.iter().map(|x| x * x).collect::<Vec<_>>()) / v.len() as f64).sqrt();
    let d = post.c.len();
    let mut out = DriftNorms::default();
    for i in 0..d {
        // Parseval on the post-step coefficients
        let lap: f64 = post.c_hat[i].iter().zip(ws.k_squared()).map(|(z, k)| z.norm_sqr() * k * k).sum();
        out.diffusion += cfg.diffusion[i] * cfg.diffusion[i] * lap;
        out.singular += norm(&tm.singular[i]).powi(2);
        out.reaction += norm(&tm.f[i]).powi(2);
        if noisy {
            out.noise += norm(&tm.noise[i]).powi(2);
        }
    }
    DriftNorms {
        diffusion: out.diffusion.sqrt(),
        singular: out.singular.sqrt(),
        reaction: out.reaction.sqrt(),
        noise: out.noise.sqrt(),
    }
}

fn path_at(path: &PhiPath, step: usize, dt: f64, ws: &mut Spectral) -> Result<Vec<f64>> {
    match path {
        PhiPath::Constant(f) => Ok(f.values().to_vec()),
        PhiPath::Heat { phi0, kappa } => {
            let t = step as f64 * dt;
            let mut c = vec![ZERO; phi0.values().len()];
            ws.forward_into(phi0.values(), &mut c);
            for (z, k2) in c.iter_mut().zip(ws.k_squared()) {
                *z *= Float::exp(-kappa * k2 * t);
            }
            let mut out = vec![0.0; c.len()];
            ws.inverse_into(&c, &mut out);
            Ok(out)
        }
        PhiPath::Fields(v) => v
            .get(step)
            .map(|f| f.values().to_vec())
            .ok_or_else(|| invalid("phi_path", "path shorter than steps + 1")),
    }
}

/// Admissible per-step overshoot of `c` beyond the box:
/// `5 dt + 3 sup|b_eta| sqrt(dt tr Q)`.
pub fn invariance_band(dt: f64, sup_b_eta: f64, trace_q: f64) -> f64 {
    5.0 * dt + 3.0 * sup_b_eta * Float::sqrt(dt * trace_q)
}

/// Largest distance of any node of `c` outside the box.
pub fn excursion(model: &ModelSpec, c: &[Vec<f64>]) -> f64 {
    let mut m = 0.0f64;
    for (i, ci) in c.iter().enumerate() {
        let (lo, hi) = (model.lower()[i], model.upper()[i]);
        for &x in ci {
            m = m.max(lo - x).max(x - hi);
        }
    }
    m
}

/// Box checks on initial data with tolerance [`INITIAL_TOL`].
pub fn validate_initial(model: &ModelSpec, phi0: &ScalarField, c0: &VectorField) -> Result<()> {
    if phi0.grid() != c0.grid() {
        return Err(Error::GridMismatch);
    }
    phi0.check_finite_as("phi0")?;
    c0.check_finite_as("c0")?;
    if c0.d() != model.d() {
        return Err(Error::InvalidInitialData(alloc::format!("c0 has {} components, model needs {}", c0.d(), model.d())));
    }
    let (lo, hi) = (phi0.min(), phi0.max());
    if lo < -INITIAL_TOL || hi > model.k_phi() + INITIAL_TOL {
        return Err(Error::InvalidInitialData(alloc::format!(
            "phi0 must lie in [0, {}], found [{lo}, {hi}]",
            model.k_phi()
        )));
    }
    if hi <= 0.0 {
        return Err(Error::InvalidInitialData("phi0 vanishes identically".into()));
    }
    for i in 0..model.d() {
        let ci = c0.component(i);
        let (a, b) = (ci.min(), ci.max());
        let (l, k) = (model.lower()[i], model.upper()[i]);
        if a < l - INITIAL_TOL || b > k + INITIAL_TOL {
            return Err(Error::InvalidInitialData(alloc::format!(
                "c0 component {i} must lie in [{l}, {k}], found [{a}, {b}]"
            )));
        }
    }
    Ok(())
}

fn snapshot(step: usize, t: f64, st: &State, grid: TorusGrid) -> Snapshot {
    Snapshot {
        step,
        t,
        phi: ScalarField::from_raw(grid, st.phi.clone()),
        c: VectorField::from_raw(grid, st.c.clone()),
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    cfg: &SolverConfig,
    model: &ModelSpec,
    reg: &RegParams,
    noise: &NoiseSpec,
    phi0: &ScalarField,
    c0: &VectorField,
    source: PhiSource,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    let path = match &source {
        PhiSource::Coupled => None,
        PhiSource::Path(p) => Some(p),
    };
    let mut integ = Integrator::new(model, cfg, *reg, noise, phi0, c0, path)?;
    let grid = phi0.grid();
    let steps = cfg.steps();
    let mut snapshots = vec![snapshot(0, 0.0, integ.state(), grid)];
    let mut drift = Vec::with_capacity(steps);
    for n in 0..steps {
        drift.push(integ.step(observers)?);
        let done = n + 1;
        if done % cfg.record_every == 0 || done == steps {
            snapshots.push(snapshot(done, done as f64 * cfg.dt, integ.state(), grid));
        }
    }
    let stats = integ.stats();
    let ledger = (cfg.noise_scale > 0.0).then(|| NoiseLedger::lazy_refined(*noise, grid, cfg.dt, steps, cfg.noise_refine));
    Ok(Trajectory {
        config: cfg.clone(),
        model: model.clone(),
        reg: *reg,
        noise: *noise,
        source,
        phi0: phi0.clone(),
        c0: c0.clone(),
        snapshots,
        ledger,
        drift,
        stats,
    })
}

/// Coupled system from `(phi0, c0)`.
pub fn run_coupled(
    cfg: &SolverConfig,
    model: &ModelSpec,
    reg: &RegParams,
    noise: &NoiseSpec,
    phi0: &ScalarField,
    c0: &VectorField,
) -> Result<Trajectory> {
    run(cfg, model, reg, noise, phi0, c0, PhiSource::Coupled, &mut [])
}

/// As [`run_coupled`], reporting every step to `observers`.
pub fn run_coupled_observed(
    cfg: &SolverConfig,
    model: &ModelSpec,
    reg: &RegParams,
    noise: &NoiseSpec,
    phi0: &ScalarField,
    c0: &VectorField,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    run(cfg, model, reg, noise, phi0, c0, PhiSource::Coupled, observers)
}

/// `c` against a prescribed phase field. Paths touching zero need `eps > 0`.
pub fn run_uncoupled(
    cfg: &SolverConfig,
    model: &ModelSpec,
    reg: &RegParams,
    noise: &NoiseSpec,
    phi_path: PhiPath,
    c0: &VectorField,
) -> Result<Trajectory> {
    run_uncoupled_observed(cfg, model, reg, noise, phi_path, c0, &mut [])
}

pub fn run_uncoupled_observed(
    cfg: &SolverConfig,
    model: &ModelSpec,
    reg: &RegParams,
    noise: &NoiseSpec,
    phi_path: PhiPath,
    c0: &VectorField,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    if reg.eps == 0.0 && phi_path_min(&phi_path) < SINGULAR_FLOOR {
        return Err(invalid("reg.eps", "a phase-field path with zeros needs eps > 0"));
    }
    let phi0 = phi_path.initial().clone();
    run(cfg, model, reg, noise, &phi0, c0, PhiSource::Path(phi_path), observers)
}

fn phi_path_min(p: &PhiPath) -> f64 {
    match p {
        PhiPath::Constant(f) | PhiPath::Heat { phi0: f, .. } => f.min(),
        PhiPath::Fields(v) => v.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min),
    }
}

/// Re-runs a trajectory from its recorded inputs, reporting every step.
/// The result is bit-identical to the original run.
pub fn replay(traj: &Trajectory, observers: &mut [&mut dyn Observer]) -> Result<Trajectory> {
    run(&traj.config, &traj.model, &traj.reg, &traj.noise, &traj.phi0, &traj.c0, traj.source.clone(), observers)
}

/// IMEX stepper for `du = gamma Laplacian u - M1 u - M2 |grad u|`.
#[derive(Debug, Clone)]
pub struct Subsolution {
    m1: f64,
    m2: f64,
    gamma: f64,
    dt: f64,
    u: Vec<f64>,
    u_hat: Vec<Complex64>,
    grad: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    rhs_hat: Vec<Complex64>,
    ws: Spectral,
    dealias: bool,
}

impl Subsolution {
    pub fn new(phi0: &ScalarField, m1: f64, m2: f64, cfg: &SolverConfig) -> Result<Self> {
        if !(phi0.min() >= -INITIAL_TOL) {
            return Err(Error::InvalidInitialData("subsolution needs phi0 >= 0".into()));
        }
        if !(phi0.max() > 0.0) {
            return Err(Error::InvalidInitialData("phi0 vanishes identically".into()));
        }
        if !(m1 >= 0.0 && m2 >= 0.0) {
            return Err(invalid("M1/M2", "must be nonnegative"));
        }
        let grid = phi0.grid();
        let mut ws = Spectral::new(grid);
        let mut u_hat = vec![ZERO; grid.len()];
        ws.forward_into(phi0.values(), &mut u_hat);
        Ok(Self {
            m1,
            m2,
            gamma: cfg.gamma,
            dt: cfg.dt,
            u: phi0.values().to_vec(),
            u_hat,
            grad: vec![vec![0.0; grid.len()]; grid.dim()],
            rhs: vec![0.0; grid.len()],
            rhs_hat: vec![ZERO; grid.len()],
            ws,
            dealias: cfg.dealias,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn min(&self) -> f64 {
        self.u.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn step(&mut self) {
        self.ws.gradient_from_coeffs(&self.u_hat, &mut self.grad);
        for j in 0..self.u.len() {
            let g2: f64 = self.grad.iter().map(|a| a[j] * a[j]).sum();
            self.rhs[j] = -self.m1 * self.u[j] - self.m2 * g2.sqrt();
        }
        self.ws.forward_into(&self.rhs, &mut self.rhs_hat);
        if self.dealias {
            self.ws.dealias(&mut self.rhs_hat);
        }
        for (z, r) in self.u_hat.iter_mut().zip(&self.rhs_hat) {
            *z += *r * self.dt;
        }
        self.ws.apply_resolvent(&mut self.u_hat, self.dt * self.gamma);
        self.ws.inverse_into(&self.u_hat, &mut self.u);
    }
}

/// Subsolution at time `t` (rounded to whole steps of `cfg.dt`) and its
/// minimum.
pub fn subsolution_floor(phi0: &ScalarField, m1: f64, m2: f64, t: f64, cfg: &SolverConfig) -> Result<(ScalarField, f64)> {
    let mut s = Subsolution::new(phi0, m1, m2, cfg)?;
    let steps = (t / cfg.dt).round() as usize;
    for _ in 0..steps {
        s.step();
    }
    let min = s.min();
    Ok((ScalarField::from_raw(phi0.grid(), s.u), min))
}

/// Tracks `min (phi - u)` for times `>= start`, stepping the subsolution
/// alongside the run.
pub struct SubsolutionMonitor {
    sub: Subsolution,
    start: f64,
    /// Most negative `phi - u` seen (`+inf` before `start`).
    pub worst_gap: f64,
    pub worst_time: f64,
    /// Smallest subsolution minimum over the monitored times.
    pub floor_min: f64,
}

impl SubsolutionMonitor {
    pub fn new(phi0: &ScalarField, m1: f64, m2: f64, cfg: &SolverConfig, start: f64) -> Result<Self> {
        Ok(Self {
            sub: Subsolution::new(phi0, m1, m2, cfg)?,
            start,
            worst_gap: f64::INFINITY,
            worst_time: 0.0,
            floor_min: f64::INFINITY,
        })
    }
}

impl Observer for SubsolutionMonitor {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        self.sub.step();
        let t = rec.t + rec.dt;
        if t + 1e-12 < self.start {
            return;
        }
        self.floor_min = self.floor_min.min(self.sub.min());
        for (p, u) in rec.post.phi.iter().zip(self.sub.values()) {
            let gap = p - u;
            if gap < self.worst_gap {
                self.worst_gap = gap;
                self.worst_time = t;
            }
        }
    }
}

/// Boxed observer list helper for callers assembling audits dynamically.
pub fn as_dyn(list: &mut [Box<dyn Observer>]) -> Vec<&mut dyn Observer> {
    list.iter_mut().map(|b| b.as_mut() as &mut dyn Observer).collect()
}
