//! Reaction terms, noise amplitudes and invariant boxes of the model family.
//!
//! Every preset uses the Euclidean norm as the gradient nonlinearity, so the
//! gradient term is `Psi = psi_coefficient(phi, c) * |grad phi|`, and every
//! amplitude matrix is diagonal.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
// unused when another crate in the graph links std
#[allow(unused_imports)]
use num_traits::Float;
use rand_core::{RngCore, SeedableRng};

use crate::error::{invalid, Error, Result};
use crate::field::{ScalarField, VectorField};

pub type ParamMap = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Abs,
    KirkpatrickBarton,
    CaoRappel,
    Torres,
    /// No reactions, constant amplitude `sigma`, linear decay `kappa`.
    Linear,
}

impl Preset {
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "abs" => Self::Abs,
            "kirkpatrick_barton" => Self::KirkpatrickBarton,
            "cao_rappel" => Self::CaoRappel,
            "torres" => Self::Torres,
            "linear" => Self::Linear,
            other => return Err(Error::UnknownPreset(other.to_string())),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Abs => "abs",
            Self::KirkpatrickBarton => "kirkpatrick_barton",
            Self::CaoRappel => "cao_rappel",
            Self::Torres => "torres",
            Self::Linear => "linear",
        }
    }

    pub const ALL: [Preset; 5] = [Self::Abs, Self::KirkpatrickBarton, Self::CaoRappel, Self::Torres, Self::Linear];
}

/// Noise cutoff: product over components of a C1 cubic ramp that is 1 on
/// the `margin`-inset of the box and 0 outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaCutoff {
    pub margin: f64,
}

impl EtaCutoff {
    pub fn new(margin: f64) -> Result<Self> {
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(invalid("eta_margin", "must be positive"));
        }
        Ok(Self { margin })
    }

    /// Ramp in one component.
    pub fn ramp(&self, x: f64, lo: f64, hi: f64) -> f64 {
        let s = ((x - lo).min(hi - x) / self.margin).clamp(0.0, 1.0);
        s * s * (3.0 - 2.0 * s)
    }

    pub fn eval(&self, c: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
        c.iter().zip(lower.iter().zip(upper)).map(|(&x, (&lo, &hi))| self.ramp(x, lo, hi)).product()
    }

    /// Lipschitz constant of one ramp.
    pub fn lipschitz(&self) -> f64 {
        1.5 / self.margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Abs { k: f64, k_alpha: f64, delta0: f64, m: f64, a0: f64, a1: f64, alpha: f64, beta: f64, rho: f64 },
    Kb { g: f64 },
    CaoRappel {
        s1: f64, s2: f64, ks: f64, ks_half: f64, c1: f64, c2: f64, tau: f64, d1: f64, d2: f64, b: f64,
        k: f64, a0: f64, alpha: f64, beta: f64,
    },
    Torres { b: f64, gamma_r: f64, s: f64, relax: f64, p0: f64, p1: f64, k: f64, a0: f64, alpha: f64, beta: f64 },
    Linear { kappa: f64 },
}

/// Nonlocal inputs: means of the projected `phi` and `phi * c_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Nonlocal {
    pub phi_mean: f64,
    pub phi_c_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    preset: Preset,
    params: ParamMap,
    kind: Kind,
    d: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    k_phi: f64,
    gamma: f64,
    diffusion: Vec<f64>,
    multiplier: Vec<f64>,
    sigma: f64,
    reaction_scale: f64,
    eta: EtaCutoff,
    /// Restrict audited states to `c_0 + c_1 <= 1`.
    mass_bounded: bool,
}

fn defaults(preset: Preset, d_linear: usize) -> Vec<(String, f64)> {
    let mut v: Vec<(&str, f64)> = match preset {
        Preset::Abs => vec![
            ("K", 1.0), ("K_alpha", 1.0), ("delta0", 0.5), ("M", 0.5), ("A0", 0.3), ("A1", 0.1),
            ("alpha", 0.5), ("beta", 1.0), ("gamma", 0.01), ("D", 0.1), ("rho", 0.2),
        ],
        Preset::KirkpatrickBarton => vec![("G", 1.0), ("gamma", 1.0), ("D", 1.0), ("log_factor", 2.0), ("sigma", 1.0)],
        Preset::CaoRappel => vec![
            ("S1", 1.0), ("S2", 0.5), ("k_s", 1.0), ("K_s", 0.5), ("c1", 1.0), ("c2", 1.0), ("tau", 1.0),
            ("d1", 1.0), ("d2", 1.0), ("b", 0.1), ("D_R", 0.1), ("D_S", 0.1), ("sigma", 1.0),
            ("K", 1.0), ("A0", 0.3), ("alpha", 0.5), ("beta", 1.0), ("gamma", 0.01),
        ],
        Preset::Torres => vec![
            ("b_r", 0.5), ("gamma_r", 0.5), ("D_u", 1.0), ("D_v", 1.0), ("D_F", 1.0), ("s", 1.0),
            ("eta_F", 1.0), ("p0", 0.5), ("p1", 0.5), ("sigma", 0.1),
            ("K", 1.0), ("A0", 0.3), ("alpha", 0.5), ("beta", 1.0), ("gamma", 0.01),
        ],
        Preset::Linear => vec![("kappa", 0.0), ("sigma", 0.0), ("gamma", 1.0), ("D", 1.0)],
    };
    v.push(("k_phi", 1.0));
    v.push(("reaction_scale", 1.0));
    v.push(("eta_margin", 0.1));
    let mut out: Vec<(String, f64)> = v.into_iter().map(|(k, x)| (k.to_string(), x)).collect();
    let d = match preset {
        Preset::Abs | Preset::KirkpatrickBarton => 1,
        Preset::CaoRappel => 2,
        Preset::Torres => 3,
        Preset::Linear => d_linear,
    };
    if preset == Preset::Linear {
        out.push(("d".to_string(), d as f64));
    }
    for i in 0..d {
        out.push((format!("lower_{i}"), 0.0));
        out.push((format!("upper_{i}"), 1.0));
    }
    out
}

/// Builds a preset with `overrides` applied. Unknown keys are rejected.
pub fn make_model(name: &str, overrides: &ParamMap) -> Result<ModelSpec> {
    let preset = Preset::from_name(name)?;
    let d_linear = match overrides.get("d") {
        Some(&d) if preset == Preset::Linear => {
            if !(d >= 1.0 && d <= 8.0 && d.fract() == 0.0) {
                return Err(invalid("d", "component count must be an integer in 1..=8"));
            }
            d as usize
        }
        _ => 1,
    };
    let mut params: ParamMap = defaults(preset, d_linear).into_iter().collect();
    for (k, &v) in overrides {
        if !params.contains_key(k) {
            return Err(invalid(k, format!("not a parameter of preset `{}`", preset.name())));
        }
        if !v.is_finite() {
            return Err(invalid(k, "must be finite"));
        }
        params.insert(k.clone(), v);
    }
    ModelSpec::from_params(preset, params)
}

impl ModelSpec {
    fn from_params(preset: Preset, params: ParamMap) -> Result<Self> {
        let p = |k: &str| params[k];
        let d = match preset {
            Preset::Abs | Preset::KirkpatrickBarton => 1,
            Preset::CaoRappel => 2,
            Preset::Torres => 3,
            Preset::Linear => p("d") as usize,
        };
        let lower: Vec<f64> = (0..d).map(|i| p(&format!("lower_{i}"))).collect();
        let upper: Vec<f64> = (0..d).map(|i| p(&format!("upper_{i}"))).collect();
        for i in 0..d {
            if !(lower[i] < upper[i]) {
                return Err(invalid(&format!("upper_{i}"), "need lower_i < upper_i"));
            }
        }
        let k_phi = p("k_phi");
        if !(k_phi > 0.0) {
            return Err(invalid("k_phi", "must be positive"));
        }
        let width = lower.iter().zip(&upper).map(|(l, u)| u - l).fold(f64::INFINITY, f64::min);
        let margin = p("eta_margin");
        if !(margin > 0.0 && margin < width / 2.0) {
            return Err(invalid("eta_margin", "need 0 < margin < (upper - lower)/2"));
        }
        let (kind, diffusion, multiplier, sigma) = match preset {
            Preset::Abs => (
                Kind::Abs {
                    k: p("K"), k_alpha: p("K_alpha"), delta0: p("delta0"), m: p("M"), a0: p("A0"), a1: p("A1"),
                    alpha: p("alpha"), beta: p("beta"), rho: p("rho"),
                },
                vec![p("D")],
                vec![1.0],
                1.0,
            ),
            Preset::KirkpatrickBarton => (Kind::Kb { g: p("G") }, vec![p("D")], vec![p("log_factor")], p("sigma")),
            Preset::CaoRappel => (
                Kind::CaoRappel {
                    s1: p("S1"), s2: p("S2"), ks: p("k_s"), ks_half: p("K_s"), c1: p("c1"), c2: p("c2"),
                    tau: p("tau"), d1: p("d1"), d2: p("d2"), b: p("b"), k: p("K"), a0: p("A0"),
                    alpha: p("alpha"), beta: p("beta"),
                },
                vec![p("D_R"), p("D_S")],
                vec![1.0, 1.0],
                p("sigma"),
            ),
            Preset::Torres => (
                Kind::Torres {
                    b: p("b_r"), gamma_r: p("gamma_r"), s: p("s"), relax: p("eta_F"), p0: p("p0"), p1: p("p1"),
                    k: p("K"), a0: p("A0"), alpha: p("alpha"), beta: p("beta"),
                },
                vec![p("D_u"), p("D_v"), p("D_F")],
                vec![1.0; 3],
                p("sigma"),
            ),
            Preset::Linear => (Kind::Linear { kappa: p("kappa") }, vec![p("D"); d], vec![1.0; d], p("sigma")),
        };
        if let Kind::CaoRappel { tau, .. } = kind {
            if tau == 0.0 {
                return Err(invalid("tau", "must be nonzero"));
            }
        }
        if diffusion.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("D", "diffusivities must be positive"));
        }
        if !(p("gamma") > 0.0) {
            return Err(invalid("gamma", "must be positive"));
        }
        Ok(Self {
            preset,
            kind,
            d,
            lower,
            upper,
            k_phi,
            gamma: p("gamma"),
            diffusion,
            multiplier,
            sigma,
            reaction_scale: p("reaction_scale"),
            eta: EtaCutoff { margin },
            mass_bounded: preset == Preset::Torres,
            params,
        })
    }

    pub fn preset(&self) -> Preset {
        self.preset
    }

    /// Every parameter, defaults included.
    pub fn params(&self) -> &ParamMap {
        &self.params
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn k_phi(&self) -> f64 {
        self.k_phi
    }

    /// Preset phase-field diffusivity.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Preset diagonal of `D`.
    pub fn diffusion(&self) -> &[f64] {
        &self.diffusion
    }

    /// Factor in front of the logarithmic-derivative drift, per component.
    pub fn log_multiplier(&self) -> &[f64] {
        &self.multiplier
    }

    pub fn eta(&self) -> EtaCutoff {
        self.eta
    }

    /// States audited for invariance satisfy `c_0 + c_1 <= 1` (Torres).
    pub fn mass_bounded(&self) -> bool {
        self.mass_bounded
    }

    pub fn with_mass_bound(mut self, on: bool) -> Self {
        self.mass_bounded = on;
        self
    }

    /// Nonlocal inputs computed from the projections of `phi` to
    /// `[0, K_phi]` and of `c` to the box.
    pub fn nonlocal(&self, phi: &[f64], c: &[Vec<f64>]) -> Nonlocal {
        let n = phi.len();
        let clip_phi: Vec<f64> = phi.iter().map(|&x| x.clamp(0.0, self.k_phi)).collect();
        let phi_mean = crate::field::pairwise_sum(&clip_phi) / n as f64;
        let phi_c_mean = c
            .iter()
            .enumerate()
            .map(|(i, ci)| {
                let prod: Vec<f64> = clip_phi
                    .iter()
                    .zip(ci)
                    .map(|(p, &x)| p * x.clamp(self.lower[i], self.upper[i]))
                    .collect();
                crate::field::pairwise_sum(&prod) / n as f64
            })
            .collect();
        Nonlocal { phi_mean, phi_c_mean }
    }

    /// Truncated ABS threshold `median(0.05, delta, 0.95)`.
    pub fn delta_tilde(&self, nl: &Nonlocal) -> Option<f64> {
        match self.kind {
            Kind::Abs { delta0, m, a1, .. } => Some((delta0 + m * (nl.phi_c_mean[0] - a1)).clamp(0.05, 0.95)),
            _ => None,
        }
    }

    fn cubic_g(k: f64, x: f64) -> f64 {
        -k * x * (x - 1.0) * (x - 0.5)
    }

    /// `g` at one node.
    pub fn g_node(&self, phi: f64, c: &[f64], _nl: &Nonlocal) -> f64 {
        match self.kind {
            Kind::Abs { k, .. } | Kind::CaoRappel { k, .. } | Kind::Torres { k, .. } => Self::cubic_g(k, phi),
            Kind::Kb { .. } => phi * (1.0 - phi) * (phi - c[0] * c[0]),
            Kind::Linear { .. } => 0.0,
        }
    }

    /// Writes `f` at one node into `out`.
    pub fn f_node(&self, phi: f64, c: &[f64], nl: &Nonlocal, out: &mut [f64]) {
        match self.kind {
            Kind::Abs { k_alpha, rho, .. } => {
                let delta = self.delta_tilde(nl).unwrap_or(0.5);
                let x = c[0];
                out[0] = -k_alpha * x * (x - 1.0) * (x - delta) - rho * x;
            }
            Kind::Kb { g } => out[0] = -2.0 * g * (1.0 - phi) * c[0],
            Kind::CaoRappel { s1, ks, ks_half, c1, c2, tau, d1, d2, b, .. } => {
                let (r, s) = (c[0], c[1]);
                out[0] = (c2 * s - c1 * r) / tau;
                out[1] = (ks * s * s / (ks_half * ks_half + s * s) + b) * (s1 - s) - (d1 + d2 * r) * s;
            }
            Kind::Torres { b, gamma_r, s, relax, p0, p1, .. } => {
                let (u, v, f) = (c[0], c[1], c[2]);
                let exchange = (b + gamma_r * u * u) * v - (1.0 + s * f + u * u) * u;
                out[0] = exchange;
                out[1] = -exchange;
                out[2] = relax * (p0 + p1 * u - f);
            }
            Kind::Linear { kappa } => {
                for (o, &x) in out.iter_mut().zip(c) {
                    *o = -kappa * x;
                }
            }
        }
        if self.reaction_scale != 1.0 {
            for o in out.iter_mut() {
                *o *= self.reaction_scale;
            }
        }
    }

    /// Factor multiplying `|grad phi|` in the phase-field equation.
    pub fn psi_coefficient(&self, _phi: f64, c: &[f64], nl: &Nonlocal) -> f64 {
        match self.kind {
            Kind::Abs { a0, alpha, beta, .. } => beta * (nl.phi_mean - a0) + alpha * c[0],
            Kind::CaoRappel { s2, a0, alpha, beta, .. } => {
                let s3 = c[1].max(0.0).powi(3);
                alpha * s3 / (s3 + s2 * s2 * s2) - beta * (nl.phi_mean - a0)
            }
            Kind::Torres { a0, alpha, beta, .. } => alpha * c[0] - beta * (nl.phi_mean - a0),
            Kind::Kb { .. } | Kind::Linear { .. } => 0.0,
        }
    }

    /// Diagonal of the amplitude matrix `b(phi, c)` before the cutoff.
    pub fn b_node(&self, phi: f64, _c: &[f64], out: &mut [f64]) {
        match self.kind {
            Kind::Abs { .. } => out[0] = phi * (1.0 - phi),
            _ => out.iter_mut().for_each(|o| *o = self.sigma),
        }
    }

    /// Diagonal of `eta(c) b(phi, c)` at one node.
    pub fn b_eta_node(&self, phi: f64, c: &[f64], out: &mut [f64]) {
        self.b_node(phi, c, out);
        let e = self.eta.eval(c, &self.lower, &self.upper);
        for o in out.iter_mut() {
            *o *= e;
        }
    }

    /// True when every node of the amplitude is identically zero.
    pub fn is_noiseless(&self) -> bool {
        !matches!(self.kind, Kind::Abs { .. }) && self.sigma == 0.0
    }

    fn check(&self, phi: &ScalarField, c: &VectorField) -> Result<()> {
        if phi.grid() != c.grid() {
            return Err(Error::GridMismatch);
        }
        if c.d() != self.d {
            return Err(invalid("c", format!("expected {} components, got {}", self.d, c.d())));
        }
        phi.check_finite_as("phi")?;
        c.check_finite_as("c")
    }

    fn node_state(c: &VectorField, j: usize, buf: &mut [f64]) {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = c.comp(i)[j];
        }
    }
}

pub fn eval_g(model: &ModelSpec, phi: &ScalarField, c: &VectorField) -> Result<ScalarField> {
    model.check(phi, c)?;
    let nl = model.nonlocal(phi.values(), c.comps());
    let mut buf = vec![0.0; model.d];
    let vals = (0..phi.values().len())
        .map(|j| {
            ModelSpec::node_state(c, j, &mut buf);
            model.g_node(phi.values()[j], &buf, &nl)
        })
        .collect();
    Ok(ScalarField::from_raw(phi.grid(), vals))
}

pub fn eval_f(model: &ModelSpec, phi: &ScalarField, c: &VectorField) -> Result<VectorField> {
    model.check(phi, c)?;
    let nl = model.nonlocal(phi.values(), c.comps());
    let len = phi.values().len();
    let mut comps = vec![vec![0.0; len]; model.d];
    let mut buf = vec![0.0; model.d];
    let mut out = vec![0.0; model.d];
    for j in 0..len {
        ModelSpec::node_state(c, j, &mut buf);
        model.f_node(phi.values()[j], &buf, &nl, &mut out);
        for i in 0..model.d {
            comps[i][j] = out[i];
        }
    }
    Ok(VectorField::from_raw(phi.grid(), comps))
}

/// `Psi(phi, c, grad phi)` with the gradient supplied by the caller (capped
/// or not).
pub fn eval_psi(model: &ModelSpec, phi: &ScalarField, c: &VectorField, grad_phi: &VectorField) -> Result<ScalarField> {
    model.check(phi, c)?;
    if grad_phi.grid() != phi.grid() || grad_phi.d() != phi.grid().dim() {
        return Err(invalid("grad_phi", "must have one component per spatial axis"));
    }
    grad_phi.check_finite_as("grad_phi")?;
    let nl = model.nonlocal(phi.values(), c.comps());
    let mag = grad_phi.magnitude();
    let mut buf = vec![0.0; model.d];
    let vals = (0..phi.values().len())
        .map(|j| {
            ModelSpec::node_state(c, j, &mut buf);
            model.psi_coefficient(phi.values()[j], &buf, &nl) * mag.values()[j]
        })
        .collect();
    Ok(ScalarField::from_raw(phi.grid(), vals))
}

/// Diagonal amplitudes `eta(c) b(phi, c)`, one field per component.
pub fn eval_b_eta(model: &ModelSpec, eta: &EtaCutoff, phi: &ScalarField, c: &VectorField) -> Result<VectorField> {
    model.check(phi, c)?;
    let len = phi.values().len();
    let mut comps = vec![vec![0.0; len]; model.d];
    let mut buf = vec![0.0; model.d];
    let mut out = vec![0.0; model.d];
    for j in 0..len {
        ModelSpec::node_state(c, j, &mut buf);
        model.b_node(phi.values()[j], &buf, &mut out);
        let e = eta.eval(&buf, &model.lower, &model.upper);
        for i in 0..model.d {
            comps[i][j] = e * out[i];
        }
    }
    Ok(VectorField::from_raw(phi.grid(), comps))
}

/// Componentwise projection onto the box.
#[allow(non_snake_case)]
pub fn clip_to_K(c: &VectorField, model: &ModelSpec) -> VectorField {
    let comps = c
        .comps()
        .iter()
        .enumerate()
        .map(|(i, ci)| ci.iter().map(|&x| x.clamp(model.lower[i], model.upper[i])).collect())
        .collect();
    VectorField::from_raw(c.grid(), comps)
}

pub(crate) fn clip_in_place(comps: &mut [Vec<f64>], model: &ModelSpec) -> usize {
    let mut count = 0;
    for (i, ci) in comps.iter_mut().enumerate() {
        for x in ci.iter_mut() {
            let y = x.clamp(model.lower[i], model.upper[i]);
            if y != *x {
                count += 1;
                *x = y;
            }
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    /// `f_i < 0` on the face `c_i = L_i`.
    LowerFace(usize),
    /// `f_i > 0` on the face `c_i = K_i`.
    UpperFace(usize),
    /// `g != 0` at `phi = 0`.
    PhiZero,
    /// `g != 0` at `phi = K_phi`.
    PhiTop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub phi: f64,
    pub c: Vec<f64>,
    pub nonlocal: Nonlocal,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
    /// Empirical `sup |g| / phi` over sampled states.
    pub g_over_phi: f64,
    pub lipschitz: LipschitzEstimate,
}

/// Empirical constants for the positivity subsolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    /// `sup |g(phi, c)| / phi`.
    pub m1: f64,
    /// `sup |psi_coefficient|`, the Lipschitz constant of `Psi` in
    /// `grad phi`.
    pub m2: f64,
    /// Largest difference quotient of `f` over sampled pairs.
    pub f_lipschitz: f64,
    /// Largest difference quotient of `eta b` in `c` over sampled pairs.
    pub b_eta_lipschitz: f64,
}

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    fn state(&mut self, model: &ModelSpec) -> (f64, Vec<f64>, Nonlocal) {
        let phi = self.range(0.0, model.k_phi);
        let mut c: Vec<f64> = (0..model.d).map(|i| self.range(model.lower[i], model.upper[i])).collect();
        if model.mass_bounded && model.d >= 2 {
            // uniform on the simplex part of the square
            while c[0] + c[1] > 1.0 {
                c[0] = self.range(model.lower[0], model.upper[0]);
                c[1] = self.range(model.lower[1], model.upper[1]);
            }
        }
        let phi_mean = self.range(0.0, model.k_phi);
        let phi_c_mean = (0..model.d)
            .map(|i| {
                let lo = (model.lower[i] * model.k_phi).min(0.0);
                let hi = (model.upper[i] * model.k_phi).max(0.0);
                self.range(lo, hi)
            })
            .collect();
        (phi, c, Nonlocal { phi_mean, phi_c_mean })
    }
}

/// Randomised audit of the face conditions on the box and the vanishing of
/// `g` at `phi = 0` and `phi = K_phi`, plus empirical constants.
pub fn validate_invariance(model: &ModelSpec, samples: usize, seed: u64) -> Result<InvarianceReport> {
    if samples == 0 {
        return Err(invalid("samples", "need at least one sample"));
    }
    let mut s = Sampler { rng: ChaCha8Rng::seed_from_u64(seed) };
    let d = model.d;
    let mut violations = Vec::new();
    let mut out = vec![0.0; d];
    let tol = 1e-12;
    for _ in 0..samples {
        let (phi, c, nl) = s.state(model);
        for i in 0..d {
            for upper in [false, true] {
                let mut cf = c.clone();
                cf[i] = if upper { model.upper[i] } else { model.lower[i] };
                if model.mass_bounded && d >= 2 && i < 2 && cf[0] + cf[1] > 1.0 {
                    // project the partner onto the mass bound
                    cf[1 - i] = (1.0 - cf[i]).max(model.lower[1 - i]);
                }
                model.f_node(phi, &cf, &nl, &mut out);
                let bad = if upper { out[i] > tol } else { out[i] < -tol };
                if bad {
                    violations.push(Violation {
                        kind: if upper { ViolationKind::UpperFace(i) } else { ViolationKind::LowerFace(i) },
                        phi,
                        c: cf,
                        nonlocal: nl.clone(),
                        value: out[i],
                    });
                }
            }
        }
        for (phi_face, kind) in [(0.0, ViolationKind::PhiZero), (model.k_phi, ViolationKind::PhiTop)] {
            let g = model.g_node(phi_face, &c, &nl);
            if g.abs() > tol {
                violations.push(Violation { kind, phi: phi_face, c: c.clone(), nonlocal: nl.clone(), value: g });
            }
        }
    }
    let lipschitz = lipschitz_estimates(model, samples, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok(InvarianceReport { samples, violations, g_over_phi: lipschitz.m1, lipschitz })
}

/// Sampled constants for `g`, `Psi`, `f` and `eta b` over the admissible
/// state set.
pub fn lipschitz_estimates(model: &ModelSpec, samples: usize, seed: u64) -> Result<LipschitzEstimate> {
    if samples == 0 {
        return Err(invalid("samples", "need at least one sample"));
    }
    let mut s = Sampler { rng: ChaCha8Rng::seed_from_u64(seed) };
    let d = model.d;
    let (mut m1, mut m2, mut lf, mut lb) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut fa, mut fb, mut ba, mut bb) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for _ in 0..samples {
        let (phi, c, nl) = s.state(model);
        let phi_q = phi.max(1e-8);
        m1 = m1.max(model.g_node(phi_q, &c, &nl).abs() / phi_q);
        // the nonlocal mean ranges over [0, K_phi]; probe both ends
        for pm in [0.0, model.k_phi, nl.phi_mean] {
            let nl2 = Nonlocal { phi_mean: pm, phi_c_mean: nl.phi_c_mean.clone() };
            m2 = m2.max(model.psi_coefficient(phi, &c, &nl2).abs());
        }
        let (_, c2, _) = s.state(model);
        let dist = c.iter().zip(&c2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if dist > 1e-9 {
            model.f_node(phi, &c, &nl, &mut fa);
            model.f_node(phi, &c2, &nl, &mut fb);
            lf = lf.max(fa.iter().zip(&fb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / dist);
            model.b_eta_node(phi, &c, &mut ba);
            model.b_eta_node(phi, &c2, &mut bb);
            lb = lb.max(ba.iter().zip(&bb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / dist);
        }
    }
    Ok(LipschitzEstimate { m1, m2, f_lipschitz: lf, b_eta_lipschitz: lb })
}
