//! Audits of the identities a weighted solution must satisfy, evaluated on
//! simulated paths.
//!
//! Every audit is an [`Observer`]; the free functions replay a trajectory
//! with the observer attached. Implicit (diffusive) terms are paired at the
//! level the scheme uses them, explicit terms at the pre-step state, and
//! time derivatives of weights and test functions are step increments over
//! `dt`. Residuals are divided by the largest single term of their identity.
//!
//! The square-norm and product identities pair every `dt` term with the
//! trapezoid mean of the other factor, which makes them exact for the
//! scheme without noise; their stochastic integrals stay left-point.
//!
//! Quotients `|grad phi|^2 / phi^p` use `max(phi, guard)` in the denominator;
//! reports count the nodes where the guard acted.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
// unused when another crate in the graph links std
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::dynamics::{replay, Observer, PhiSource, StepRecord, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::field::{mean_of, pairwise_sum, phase, ScalarField, TorusGrid};
use crate::noise::{build_spectrum, Spectrum};
use crate::spectral::Spectral;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default quotient guard `g_0`.
pub const DEFAULT_GUARD: f64 = 1e-12;

/// Residuals at or below this are treated as converged when checking
/// decrease under `dt` halving.
pub const ROUNDOFF_FLOOR: f64 = 1e-10;

/// Weight path, described by `rho^2`.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    /// `rho = 1`.
    Constant,
    /// `rho^2 = phi^a` with `a` in `(0, 1/2)`.
    PhiPower(f64),
    /// `rho^2 = phi`, the exponent of the uncoupled solution concept.
    Phi,
    /// `rho^2 = h` with `h` the heat flow of `phi_0` at diffusivity `gamma`.
    SqrtHeat,
    /// User path of `rho` at every step time.
    Path(Vec<ScalarField>),
}

impl Weight {
    pub fn validate(&self, steps: usize, grid: TorusGrid) -> Result<()> {
        match self {
            Self::PhiPower(a) if !(*a > 0.0 && *a < 0.5) => Err(invalid("weight.alpha", "must lie in (0, 1/2)")),
            Self::Path(v) => {
                if v.len() != steps + 1 {
                    return Err(invalid("weight.path", "need one field per step time"));
                }
                for f in v {
                    if f.grid() != grid {
                        return Err(Error::GridMismatch);
                    }
                    f.check_finite_as("weight.path")?;
                    if f.min() < 0.0 {
                        return Err(Error::InadmissibleWeight("path takes negative values".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Constant => "const".into(),
            Self::PhiPower(a) => alloc::format!("phi^{a}"),
            Self::Phi => "phi".into(),
            Self::SqrtHeat => "sqrt-heat".into(),
            Self::Path(_) => "path".into(),
        }
    }
}

/// Evaluates `rho^2` along a run, step by step.
struct WeightTracker {
    weight: Weight,
    gamma: f64,
    ws: Spectral,
    /// `rho^2` at the pre-step time, valid once `primed`.
    cur: Vec<f64>,
    next: Vec<f64>,
    heat_hat: Vec<Complex64>,
    primed: bool,
}

impl WeightTracker {
    fn new(weight: Weight, traj_grid: TorusGrid, gamma: f64, phi0: &[f64]) -> Self {
        let mut ws = Spectral::new(traj_grid);
        let mut heat_hat = Vec::new();
        if weight == Weight::SqrtHeat {
            heat_hat = vec![ZERO; phi0.len()];
            ws.forward_into(phi0, &mut heat_hat);
        }
        Self {
            weight,
            gamma,
            ws,
            cur: vec![0.0; phi0.len()],
            next: vec![0.0; phi0.len()],
            heat_hat,
            primed: false,
        }
    }

    fn is_constant(&self) -> bool {
        self.weight == Weight::Constant
    }

    fn eval_into(&mut self, phi: &[f64], step: usize, t: f64, out_next: bool) {
        let out = if out_next { &mut self.next } else { &mut self.cur };
        match &self.weight {
            Weight::Constant => out.iter_mut().for_each(|o| *o = 1.0),
            Weight::PhiPower(a) => {
                for (o, &p) in out.iter_mut().zip(phi) {
                    *o = Float::powf(p.max(0.0), *a);
                }
            }
            Weight::Phi => {
                for (o, &p) in out.iter_mut().zip(phi) {
                    *o = p.max(0.0);
                }
            }
            Weight::SqrtHeat => {
                if step == 0 {
                    for (o, &p) in out.iter_mut().zip(phi) {
                        *o = p.max(0.0);
                    }
                } else {
                    let k2 = self.ws.k_squared();
                    let c: Vec<Complex64> =
                        self.heat_hat.iter().zip(k2).map(|(z, k)| *z * Float::exp(-self.gamma * k * t)).collect();
                    self.ws.inverse_into(&c, out);
                    out.iter_mut().for_each(|o| *o = o.max(0.0));
                }
            }
            Weight::Path(v) => {
                for (o, &r) in out.iter_mut().zip(v[step].values()) {
                    *o = r * r;
                }
            }
        }
    }

    /// `rho^2` before and after the step.
    fn advance(&mut self, rec: &StepRecord<'_>) {
        if !self.primed {
            self.eval_into(&rec.pre.phi, rec.step, rec.t, false);
            self.primed = true;
        } else {
            core::mem::swap(&mut self.cur, &mut self.next);
        }
        self.eval_into(&rec.post.phi, rec.step + 1, rec.t + rec.dt, true);
    }

    /// Spectral gradient of the pre-step `rho^2`.
    fn grad_cur(&mut self, out: &mut [Vec<f64>]) {
        let mut c = vec![ZERO; self.cur.len()];
        self.ws.forward_into(&self.cur, &mut c);
        self.ws.gradient_from_coeffs(&c, out);
    }
}

fn dot_at(a: &[Vec<f64>], b: &[Vec<f64>], j: usize) -> f64 {
    a.iter().zip(b).map(|(x, y)| x[j] * y[j]).sum()
}

fn norm_sq_at(a: &[Vec<f64>], j: usize) -> f64 {
    a.iter().map(|x| x[j] * x[j]).sum()
}

/// `mean_of` of `f(0..len)` without materializing the values; same
/// summation order as [`pairwise_sum`].
fn mean_map(len: usize, f: impl Fn(usize) -> f64) -> f64 {
    fn sum(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= 32 {
            return (lo..hi).map(f).sum();
        }
        let mid = lo + (hi - lo) / 2;
        sum(lo, mid, f) + sum(mid, hi, f)
    }
    if len == 0 {
        return 0.0;
    }
    sum(0, len, &f) / len as f64
}

/// `|residual| / max |term|`, zero when every term vanishes.
pub fn normalized(residual: f64, terms: &[f64]) -> f64 {
    let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if scale == 0.0 {
        0.0
    } else {
        residual.abs() / scale
    }
}

/// `||a|| ||v||` in the normalized `L^2` norm.
fn pairing_size(a: &[f64], v: impl Fn(usize) -> f64) -> f64 {
    let len = a.len();
    Float::sqrt(mean_map(len, |j| a[j] * a[j]) * mean_map(len, |j| v(j) * v(j)))
}

/// Decrease under one `dt` halving, allowing both levels to sit at the
/// round-off floor.
pub fn halves(coarse: f64, fine: f64, floor: f64) -> bool {
    fine < coarse || (coarse <= floor && fine <= floor)
}

/// A test function supported in one component of `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub label: String,
    pub comp: usize,
    pub values: Vec<f64>,
    /// Spectral gradient, `[axis][node]`.
    pub grad: Vec<Vec<f64>>,
}

impl TestFunction {
    pub fn new(label: impl Into<String>, comp: usize, field: &ScalarField) -> Result<Self> {
        field.check_finite_as("test function")?;
        let grid = field.grid();
        let mut ws = Spectral::new(grid);
        let mut c = vec![ZERO; grid.len()];
        ws.forward_into(field.values(), &mut c);
        let mut grad = vec![vec![0.0; grid.len()]; grid.dim()];
        ws.gradient_from_coeffs(&c, &mut grad);
        Ok(Self { label: label.into(), comp, values: field.values().to_vec(), grad })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctionSet {
    pub tests: Vec<TestFunction>,
}

impl TestFunctionSet {
    /// Real Fourier modes with `|k|_inf <= 1` plus one seeded random
    /// band-limited field, replicated in each of the `d` components.
    pub fn standard(grid: TorusGrid, d: usize, seed: u64) -> Result<Self> {
        let mut scalars: Vec<(String, ScalarField)> = Vec::new();
        for k in half_space(grid.dim(), 1) {
            if k == [0, 0, 0] {
                scalars.push(("1".into(), ScalarField::constant(grid, 1.0)));
                continue;
            }
            let cosf = field_from(grid, |j| core::f64::consts::SQRT_2 * phase(&grid, j, k).0);
            let sinf = field_from(grid, |j| core::f64::consts::SQRT_2 * phase(&grid, j, k).1);
            scalars.push((alloc::format!("cos{k:?}"), cosf));
            scalars.push((alloc::format!("sin{k:?}"), sinf));
        }
        scalars.push(("random".into(), random_band_limited(grid, 3, seed)));
        let mut tests = Vec::new();
        for comp in 0..d {
            for (label, f) in &scalars {
                tests.push(TestFunction::new(alloc::format!("{label}@c{comp}"), comp, f)?);
            }
        }
        Ok(Self { tests })
    }

    pub fn single(test: TestFunction) -> Self {
        Self { tests: vec![test] }
    }

    pub fn len(&self) -> usize {
        self.tests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tests.is_empty()
    }
}

fn field_from(grid: TorusGrid, f: impl Fn(usize) -> f64) -> ScalarField {
    ScalarField::from_raw(grid, (0..grid.len()).map(f).collect())
}

/// Wavevectors with `|k|_inf <= kmax` in a half space, `k = 0` first.
fn half_space(dim: usize, kmax: i64) -> Vec<[i64; 3]> {
    let r = |a: usize| if a < dim { -kmax..=kmax } else { 0..=0 };
    let mut out = Vec::new();
    for k0 in r(0) {
        for k1 in r(1) {
            for k2 in r(2) {
                let k = [k0, k1, k2];
                let first = k.iter().find(|&&x| x != 0);
                if first.map_or(true, |&x| x > 0) {
                    out.push(k);
                }
            }
        }
    }
    out.sort_by_key(|k| k.iter().map(|x| x.abs()).sum::<i64>());
    out
}

/// Random trigonometric polynomial with `|k|_inf <= kmax`, coefficients
/// damped by `1 / (1 + |k|^2)`, scaled to unit sup norm.
pub fn random_band_limited(grid: TorusGrid, kmax: i64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
    let mut vals = vec![0.0; grid.len()];
    for k in half_space(grid.dim(), kmax) {
        let damp = 1.0 / (1.0 + (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
        let (a, b) = (unit() * damp, unit() * damp);
        for (j, v) in vals.iter_mut().enumerate() {
            let (c, s) = phase(&grid, j, k);
            *v += a * c + b * s;
        }
    }
    let sup = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sup > 0.0 {
        vals.iter_mut().for_each(|v| *v /= sup);
    }
    ScalarField::from_raw(grid, vals)
}

/// One audited quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: String,
    /// Identity or bound the value audits.
    pub formula: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub config_hash: String,
}

impl Check {
    pub fn at_most(id: impl Into<String>, formula: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            id: id.into(),
            formula: formula.into(),
            value,
            tolerance,
            pass: value <= tolerance,
            config_hash: String::new(),
        }
    }

    pub fn at_least(id: impl Into<String>, formula: impl Into<String>, value: f64, tolerance: f64) -> Self {
        let mut c = Self::at_most(id, formula, value, tolerance);
        c.pass = value >= tolerance;
        c
    }

    /// A boolean property, recorded as value 1 (holds) or 0.
    pub fn holds(id: impl Into<String>, formula: impl Into<String>, ok: bool) -> Self {
        let mut c = Self::at_least(id, formula, if ok { 1.0 } else { 0.0 }, 1.0);
        c.pass = ok;
        c
    }
}

/// Time series attached to a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub id: String,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticsReport {
    pub config_hash: String,
    pub checks: Vec<Check>,
    pub series: Vec<Series>,
}

impl DiagnosticsReport {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), ..Self::default() }
    }

    pub fn push(&mut self, mut check: Check) {
        check.config_hash = self.config_hash.clone();
        self.checks.push(check);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }
}

// ---------------------------------------------------------------------------
// admissibility

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub weight: String,
    pub guards: Vec<f64>,
    /// `sum_n dt int rho^2 |grad phi|^2 / max(phi, g)^2` at `t_{n+1}`, per guard.
    pub integrals: Vec<f64>,
    /// Node-steps where `phi < g` with a nonzero integrand, per guard.
    pub guard_activations: Vec<usize>,
}

impl AdmissibilityReport {
    pub fn value(&self) -> f64 {
        self.integrals[0]
    }

    /// Ratio of the integral at the last guard to the first.
    pub fn growth(&self) -> f64 {
        self.integrals[self.integrals.len() - 1] / self.integrals[0]
    }
}

pub struct AdmissibilityObserver {
    weight: WeightTracker,
    guards: Vec<f64>,
    sums: Vec<f64>,
    activations: Vec<usize>,
}

impl AdmissibilityObserver {
    pub fn new(traj: &Trajectory, weight: Weight, guards: &[f64]) -> Result<Self> {
        weight.validate(traj.config.steps(), traj.grid())?;
        if guards.is_empty() || guards.iter().any(|g| !(*g > 0.0)) {
            return Err(invalid("guards", "need at least one positive guard"));
        }
        Ok(Self {
            weight: WeightTracker::new(weight, traj.grid(), traj.config.gamma, traj.phi0.values()),
            guards: guards.to_vec(),
            sums: vec![0.0; guards.len()],
            activations: vec![0; guards.len()],
        })
    }

    pub fn finish(self) -> AdmissibilityReport {
        AdmissibilityReport {
            weight: self.weight.weight.name(),
            guards: self.guards,
            integrals: self.sums,
            guard_activations: self.activations,
        }
    }
}

impl Observer for AdmissibilityObserver {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        // Right-point rule: the datum at t = 0 carries the sampling error of
        // phi_0 and is left out of the time integral.
        self.weight.advance(rec);
        let rho2 = &self.weight.next;
        let phi = &rec.post.phi;
        let grad = &rec.post.grad_phi;
        for (gi, &g) in self.guards.iter().enumerate() {
            let mut act = 0;
            let terms: Vec<f64> = (0..phi.len())
                .map(|j| {
                    let num = rho2[j] * norm_sq_at(grad, j);
                    if phi[j] < g && num > 0.0 {
                        act += 1;
                    }
                    let den = phi[j].max(g);
                    num / (den * den)
                })
                .collect();
            self.sums[gi] += rec.dt * mean_of(&terms);
            self.activations[gi] += act;
        }
    }
}

/// Weighted gradient integral at the default guard.
pub fn admissibility_integral(traj: &Trajectory, w: Weight) -> Result<AdmissibilityReport> {
    guard_sweep(traj, w, &[DEFAULT_GUARD])
}

/// Admissibility integral for several guards in one replay.
pub fn guard_sweep(traj: &Trajectory, w: Weight, guards: &[f64]) -> Result<AdmissibilityReport> {
    let mut obs = AdmissibilityObserver::new(traj, w, guards)?;
    replay(traj, &mut [&mut obs])?;
    Ok(obs.finish())
}

/// Relative change between two resolutions of the same quantity.
pub fn relative_change(coarse: f64, fine: f64) -> f64 {
    let scale = coarse.abs().max(fine.abs());
    if scale == 0.0 {
        0.0
    } else {
        (fine - coarse).abs() / scale
    }
}

// ---------------------------------------------------------------------------
// uniform-in-alpha bound

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaScanReport {
    pub alphas: Vec<f64>,
    /// `alpha sum_n dt || grad phi / phi^(1 - alpha) ||^2`.
    pub values: Vec<f64>,
    pub max: f64,
    pub min: f64,
    /// `max / min` (1 when all values vanish).
    pub ratio: f64,
    /// Least-squares slope of `log value` against `log(1 / alpha)`.
    pub trend_slope: f64,
    /// `sum_n dt || grad phi / phi ||^2`.
    pub log_gradient: f64,
    pub log_l1_initial: f64,
    /// `sup_t || log phi_t ||_1`.
    pub log_l1_sup: f64,
    pub guard_activations: usize,
}

impl AlphaScanReport {
    /// Ratio within `max_ratio` and no growth faster than
    /// `alpha^(-max_slope)` as `alpha` decreases.
    pub fn uniform(&self, max_ratio: f64, max_slope: f64) -> bool {
        self.ratio <= max_ratio && self.trend_slope <= max_slope
    }
}

pub struct AlphaScanObserver {
    alphas: Vec<f64>,
    guard: f64,
    sums: Vec<f64>,
    log_gradient: f64,
    log_l1_initial: f64,
    log_l1_sup: f64,
    activations: usize,
}

impl AlphaScanObserver {
    pub fn new(alphas: &[f64], guard: f64) -> Result<Self> {
        if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a < 0.5)) {
            return Err(invalid("alphas", "need values in (0, 1/2)"));
        }
        Ok(Self {
            alphas: alphas.to_vec(),
            guard,
            sums: vec![0.0; alphas.len()],
            log_gradient: 0.0,
            log_l1_initial: f64::NAN,
            log_l1_sup: 0.0,
            activations: 0,
        })
    }

    fn log_l1(&self, phi: &[f64]) -> f64 {
        mean_map(phi.len(), |j| Float::ln(phi[j].max(self.guard)).abs())
    }

    pub fn finish(self) -> AlphaScanReport {
        let values: Vec<f64> = self.alphas.iter().zip(&self.sums).map(|(a, s)| a * s).collect();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let ratio = if max == 0.0 { 1.0 } else { max / min };
        let pts: Vec<(f64, f64)> = self
            .alphas
            .iter()
            .zip(&values)
            .filter(|(_, v)| **v > 0.0)
            .map(|(a, v)| (Float::ln(1.0 / a), Float::ln(*v)))
            .collect();
        AlphaScanReport {
            alphas: self.alphas,
            values,
            max,
            min,
            ratio,
            trend_slope: ls_slope(&pts),
            log_gradient: self.log_gradient,
            log_l1_initial: self.log_l1_initial,
            log_l1_sup: self.log_l1_sup,
            guard_activations: self.activations,
        }
    }
}

/// Least-squares slope; 0 for fewer than two points.
pub fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

impl Observer for AlphaScanObserver {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        let phi = &rec.pre.phi;
        let grad = &rec.pre.grad_phi;
        if rec.step == 0 {
            self.log_l1_initial = self.log_l1(phi);
            self.log_l1_sup = self.log_l1_initial;
        }
        let g = self.guard;
        let len = phi.len();
        let q: Vec<f64> = (0..len).map(|j| norm_sq_at(grad, j)).collect();
        let p: Vec<f64> = phi.iter().map(|&x| x.max(g)).collect();
        self.activations += (0..len).filter(|&j| phi[j] < g && q[j] > 0.0).count();
        for (s, &a) in self.sums.iter_mut().zip(&self.alphas) {
            *s += rec.dt * mean_map(len, |j| q[j] / Float::powf(p[j], 2.0 - 2.0 * a));
        }
        self.log_gradient += rec.dt * mean_map(len, |j| q[j] / (p[j] * p[j]));
        let l = self.log_l1(&rec.post.phi);
        self.log_l1_sup = self.log_l1_sup.max(l);
    }
}

pub fn alpha_scan(traj: &Trajectory, alphas: &[f64]) -> Result<AlphaScanReport> {
    let mut obs = AlphaScanObserver::new(alphas, DEFAULT_GUARD)?;
    replay(traj, &mut [&mut obs])?;
    Ok(obs.finish())
}

// ---------------------------------------------------------------------------
// weight support

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSupportReport {
    pub lhs_initial: f64,
    pub lhs_final: f64,
    /// `-alpha (1 - alpha) gamma int |grad phi|^2 rho^2 / phi^(2 - alpha)`.
    pub quotient: f64,
    /// `alpha gamma int phi^(alpha - 1) grad phi . grad rho^2`.
    pub cross: f64,
    pub psi: f64,
    pub g: f64,
    /// `2 int <d_s rho, rho (1 - phi^alpha)>`.
    pub rho_term: f64,
    pub rho_term_included: bool,
    pub residual: f64,
    pub normalized: f64,
    pub guard_activations: usize,
}

pub struct WeightSupportObserver {
    weight: WeightTracker,
    alpha: f64,
    gamma: f64,
    guard: f64,
    include_rho_term: bool,
    grad_rho2: Vec<Vec<f64>>,
    sums: [f64; 5],
    lhs0: f64,
    lhs_t: f64,
    activations: usize,
}

impl WeightSupportObserver {
    pub fn new(traj: &Trajectory, weight: Weight, alpha: f64) -> Result<Self> {
        require_phi_dynamics(traj, "weight support identity")?;
        weight.validate(traj.config.steps(), traj.grid())?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha", "must lie in (0, 1)"));
        }
        let g = traj.grid();
        Ok(Self {
            weight: WeightTracker::new(weight, g, traj.config.gamma, traj.phi0.values()),
            alpha,
            gamma: traj.config.gamma,
            guard: DEFAULT_GUARD,
            include_rho_term: true,
            grad_rho2: vec![vec![0.0; g.len()]; g.dim()],
            sums: [0.0; 5],
            lhs0: 0.0,
            lhs_t: 0.0,
            activations: 0,
        })
    }

    /// Drops the `d_s rho` term, for sensitivity checks.
    pub fn without_rho_term(mut self) -> Self {
        self.include_rho_term = false;
        self
    }

    fn lhs(&self, phi: &[f64], rho2: &[f64]) -> f64 {
        mean_map(phi.len(), |j| (1.0 - Float::powf(phi[j].max(0.0), self.alpha)) * rho2[j])
    }

    pub fn finish(self) -> WeightSupportReport {
        let [quotient, cross, psi, g, rho_term] = self.sums;
        let rho_used = if self.include_rho_term { rho_term } else { 0.0 };
        let residual = (self.lhs_t - self.lhs0) - (quotient + cross + psi + g + rho_used);
        let mut terms = vec![self.lhs0, self.lhs_t, quotient, cross, psi, g];
        if self.include_rho_term {
            terms.push(rho_term);
        }
        WeightSupportReport {
            lhs_initial: self.lhs0,
            lhs_final: self.lhs_t,
            quotient,
            cross,
            psi,
            g,
            rho_term,
            rho_term_included: self.include_rho_term,
            residual,
            normalized: normalized(residual, &terms),
            guard_activations: self.activations,
        }
    }
}

impl Observer for WeightSupportObserver {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        self.weight.advance(rec);
        let (a, gm, dt) = (self.alpha, self.gamma, rec.dt);
        let phi = &rec.pre.phi;
        let len = phi.len();
        if rec.step == 0 {
            self.lhs0 = self.lhs(phi, &self.weight.cur);
        }
        if !self.weight.is_constant() {
            let mut gr = core::mem::take(&mut self.grad_rho2);
            self.weight.grad_cur(&mut gr);
            self.grad_rho2 = gr;
        }
        let rho2 = &self.weight.cur;
        let rho2n = &self.weight.next;
        let g0 = self.guard;
        self.activations += phi.iter().filter(|&&p| p < g0).count();
        let pm1: Vec<f64> = phi.iter().map(|&p| Float::powf(p.max(g0), a - 1.0)).collect();
        let gp = &rec.pre.grad_phi;
        let gpn = &rec.post.grad_phi;
        self.sums[0] += -a * (1.0 - a) * gm * dt * mean_map(len, |j| pm1[j] / phi[j].max(g0) * rho2[j] * dot_at(gp, gpn, j));
        if !self.weight.is_constant() {
            self.sums[1] += a * gm * dt * mean_map(len, |j| pm1[j] * dot_at(&self.grad_rho2, gpn, j));
        }
        self.sums[2] += -a * dt * mean_map(len, |j| pm1[j] * rho2[j] * rec.psi_applied[j]);
        self.sums[3] += -a * dt * mean_map(len, |j| pm1[j] * rho2[j] * rec.g_applied[j]);
        self.sums[4] += 2.0
            * mean_map(len, |j| {
                let (r, rn) = (Float::sqrt(rho2[j]), Float::sqrt(rho2n[j]));
                (rn - r) * r * (1.0 - Float::powf(phi[j].max(0.0), a))
            });
        self.lhs_t = self.lhs(&rec.post.phi, rho2n);
    }
}

pub fn weight_support_residual(traj: &Trajectory, w: Weight, alpha: f64) -> Result<WeightSupportReport> {
    let mut obs = WeightSupportObserver::new(traj, w, alpha)?;
    replay(traj, &mut [&mut obs])?;
    Ok(obs.finish())
}

fn require_phi_dynamics(traj: &Trajectory, what: &str) -> Result<()> {
    if traj.source != PhiSource::Coupled || traj.config.freeze_phi {
        return Err(invalid("trajectory", alloc::format!("{what} needs phi to follow its own equation")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ito formula for the square norm

/// Field whose squared norm is audited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItoField {
    /// One component of `c`.
    C(usize),
    /// All components of `c`.
    AllC,
    /// The phase field (coupled runs only).
    Phi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItoSquareReport {
    pub t: Vec<f64>,
    /// Cumulative residual after each step.
    pub residual: Vec<f64>,
    /// Cumulative martingale term `sum 2 <x, b_eta dW>`.
    pub martingale: Vec<f64>,
    /// `||x_0||^2`.
    pub scale: f64,
    pub drift: f64,
    pub trace: f64,
    pub final_residual: f64,
    /// RMS of the residual series.
    pub rms: f64,
    /// Largest `|residual| / ||x_0||^2` along the path.
    pub max_relative: f64,
}

pub struct ItoSquareObserver {
    field: ItoField,
    trace_q: f64,
    t: Vec<f64>,
    residual: Vec<f64>,
    martingale: Vec<f64>,
    scale: f64,
    acc: [f64; 4],
}

impl ItoSquareObserver {
    /// `trace_q` is `tr Q` of one noise component.
    pub fn new(field: ItoField, trace_q: f64) -> Self {
        Self { field, trace_q, t: Vec::new(), residual: Vec::new(), martingale: Vec::new(), scale: 0.0, acc: [0.0; 4] }
    }

    pub fn for_trajectory(traj: &Trajectory, field: ItoField) -> Result<Self> {
        if let ItoField::C(i) = field {
            if i >= traj.model.d() {
                return Err(invalid("field", "component out of range"));
            }
        }
        if field == ItoField::Phi {
            require_phi_dynamics(traj, "phi square identity")?;
        }
        let trace = if traj.config.noise_scale > 0.0 {
            if traj.ledger.is_none() {
                return Err(Error::MissingLedger);
            }
            build_spectrum(&traj.noise, traj.grid())?.trace()
        } else {
            0.0
        };
        Ok(Self::new(field, trace))
    }

    pub fn finish(self) -> ItoSquareReport {
        let sq: Vec<f64> = self.residual.iter().map(|r| r * r).collect();
        let rms = if sq.is_empty() { 0.0 } else { Float::sqrt(mean_of(&sq)) };
        let final_residual = self.residual.last().copied().unwrap_or(0.0);
        let max_abs = self.residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        ItoSquareReport {
            t: self.t,
            residual: self.residual,
            martingale: self.martingale,
            scale: self.scale,
            drift: self.acc[1],
            trace: self.acc[3],
            final_residual,
            rms,
            max_relative: if self.scale > 0.0 { max_abs / self.scale } else { max_abs },
        }
    }
}

impl Observer for ItoSquareObserver {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        let dt = rec.dt;
        let (mut lhs, mut drift, mut mart, mut trace, mut norm0) = (0.0, 0.0, 0.0, 0.0, 0.0);
        match self.field {
            ItoField::Phi => {
                let (x, xn) = (&rec.pre.phi, &rec.post.phi);
                let len = x.len();
                norm0 = mean_map(len, |j| x[j] * x[j]);
                lhs = mean_map(len, |j| xn[j] * xn[j]) - norm0;
                let gamma = rec.config.gamma;
                drift = dt * mean_map(len, |j| (gamma * rec.post.lap_phi[j] + rec.g_applied[j] + rec.psi_applied[j]) * (x[j] + xn[j]));
            }
            ItoField::C(_) | ItoField::AllC => {
                let comps: Vec<usize> = match self.field {
                    ItoField::C(i) => vec![i],
                    _ => (0..rec.pre.c.len()).collect(),
                };
                let noisy = rec.config.noise_scale > 0.0;
                let s2 = rec.config.noise_scale * rec.config.noise_scale;
                for i in comps {
                    let (x, xn) = (&rec.pre.c[i], &rec.post.c[i]);
                    let len = x.len();
                    let n0 = mean_map(len, |j| x[j] * x[j]);
                    norm0 += n0;
                    lhs += mean_map(len, |j| xn[j] * xn[j]) - n0;
                    let d = rec.config.diffusion[i];
                    drift += dt
                        * mean_map(len, |j| {
                            (d * rec.post.lap_c[i][j] + rec.singular_applied[i][j] + rec.f_applied[i][j]) * (x[j] + xn[j])
                        });
                    if noisy {
                        mart += 2.0 * mean_map(len, |j| x[j] * rec.noise[i][j]);
                        trace += dt * s2 * self.trace_q * mean_map(len, |j| rec.b_eta[i][j] * rec.b_eta[i][j]);
                    }
                }
            }
        }
        if rec.step == 0 {
            self.scale = norm0;
        }
        self.acc[0] += lhs;
        self.acc[1] += drift;
        self.acc[2] += mart;
        self.acc[3] += trace;
        self.t.push(rec.t + dt);
        self.residual.push(self.acc[0] - self.acc[1] - self.acc[2] - self.acc[3]);
        self.martingale.push(self.acc[2]);
    }
}

pub fn ito_square_residual(traj: &Trajectory, field: ItoField) -> Result<ItoSquareReport> {
    let mut obs = ItoSquareObserver::for_trajectory(traj, field)?;
    replay(traj, &mut [&mut obs])?;
    Ok(obs.finish())
}

/// Ensemble mean of a zero-mean statistic and its `z`-interval check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centeredness {
    pub paths: usize,
    pub mean: f64,
    pub std: f64,
    /// `|mean| <= z std / sqrt(M)`.
    pub within: bool,
}

pub fn centeredness(values: &[f64], z: f64) -> Centeredness {
    let m = values.len();
    if m < 2 {
        return Centeredness { paths: m, mean: values.first().copied().unwrap_or(0.0), std: 0.0, within: false };
    }
    let mean = pairwise_sum(values) / m as f64;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let std = Float::sqrt(pairwise_sum(&dev) / (m - 1) as f64);
    Centeredness { paths: m, mean, std, within: mean.abs() <= z * std / Float::sqrt(m as f64) }
}

// ---------------------------------------------------------------------------
// quadratic variation

/// Per-path quadratic variation data for each test function.
#[derive(Debug, Clone, PartialEq)]
pub struct QvPath {
    /// `<M_T, v>`.
    pub terminal: Vec<f64>,
    /// `sum_n <b_eta dW_n, v>^2`.
    pub realized: Vec<f64>,
    /// `sum_n dt || sqrt(Q) b_eta^* v ||^2`.
    pub predicted: Vec<f64>,
}

pub struct QvObserver {
    tests: Vec<TestFunction>,
    spectrum: Spectrum,
    ws: Spectral,
    buf: Vec<f64>,
    hat: Vec<Complex64>,
    out: QvPath,
}

impl QvObserver {
    pub fn new(traj: &Trajectory, tests: &TestFunctionSet) -> Result<Self> {
        if traj.config.noise_scale > 0.0 && traj.ledger.is_none() {
            return Err(Error::MissingLedger);
        }
        let grid = traj.grid();
        for t in &tests.tests {
            if t.comp >= traj.model.d() || t.values.len() != grid.len() {
                return Err(invalid("test function", "does not match the trajectory"));
            }
        }
        Ok(Self::from_spectrum(build_spectrum(&traj.noise, grid)?, tests))
    }

    /// For attaching to a run before it exists; the caller guarantees the
    /// tests match the run's grid and components.
    pub fn from_spectrum(spectrum: Spectrum, tests: &TestFunctionSet) -> Self {
        let grid = spectrum.grid();
        let n = tests.len();
        Self {
            tests: tests.tests.clone(),
            spectrum,
            ws: Spectral::new(grid),
            buf: vec![0.0; grid.len()],
            hat: vec![ZERO; grid.len()],
            out: QvPath { terminal: vec![0.0; n], realized: vec![0.0; n], predicted: vec![0.0; n] },
        }
    }

    pub fn finish(self) -> QvPath {
        self.out
    }
}

impl Observer for QvObserver {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        if rec.config.noise_scale == 0.0 {
            return;
        }
        let s2 = rec.config.noise_scale * rec.config.noise_scale;
        for (k, t) in self.tests.iter().enumerate() {
            let i = t.comp;
            let len = t.values.len();
            let inc = mean_map(len, |j| rec.noise[i][j] * t.values[j]);
            self.out.terminal[k] += inc;
            self.out.realized[k] += inc * inc;
            for j in 0..len {
                self.buf[j] = rec.b_eta[i][j] * t.values[j];
            }
            self.ws.forward_into(&self.buf, &mut self.hat);
            self.out.predicted[k] += rec.dt * s2 * self.spectrum.q_norm_sq(&self.hat);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QvReport {
    pub paths: usize,
    /// Ensemble mean of the realized quadratic variation, per test.
    pub empirical: Vec<f64>,
    /// Ensemble mean of the predicted covariation, per test.
    pub predicted: Vec<f64>,
    /// `E <M_T, v>^2` estimated over paths, per test.
    pub second_moment: Vec<f64>,
    pub rel_error: Vec<f64>,
    pub max_rel_error: f64,
    /// Fewer than 100 paths.
    pub too_few_paths: bool,
}

/// Combines per-path data. Sums are pairwise, so the result does not depend
/// on path order beyond round-off.
pub fn qv_estimate(paths: &[QvPath]) -> Result<QvReport> {
    let m = paths.len();
    if m == 0 {
        return Err(invalid("paths", "need at least one path"));
    }
    let n = paths[0].realized.len();
    if paths.iter().any(|p| p.realized.len() != n) {
        return Err(invalid("paths", "paths carry different test sets"));
    }
    let avg = |f: &dyn Fn(&QvPath) -> f64| -> f64 {
        let v: Vec<f64> = paths.iter().map(f).collect();
        pairwise_sum(&v) / m as f64
    };
    let mut report = QvReport {
        paths: m,
        empirical: Vec::new(),
        predicted: Vec::new(),
        second_moment: Vec::new(),
        rel_error: Vec::new(),
        max_rel_error: 0.0,
        too_few_paths: m < 100,
    };
    for k in 0..n {
        let e = avg(&|p| p.realized[k]);
        let q = avg(&|p| p.predicted[k]);
        let s = avg(&|p| p.terminal[k] * p.terminal[k]);
        let rel = if q == 0.0 {
            if e == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (e - q).abs() / q
        };
        report.empirical.push(e);
        report.predicted.push(q);
        report.second_moment.push(s);
        report.rel_error.push(rel);
        report.max_rel_error = report.max_rel_error.max(rel);
    }
    Ok(report)
}

/// `sigma^2 t ||sqrt(Q) v||^2` for constant amplitude `sigma`.
pub fn constant_amplitude_qv(spectrum: &Spectrum, v: &[f64], sigma: f64, t: f64) -> f64 {
    let mut ws = Spectral::new(spectrum.grid());
    let mut hat = vec![ZERO; v.len()];
    ws.forward_into(v, &mut hat);
    sigma * sigma * t * spectrum.q_norm_sq(&hat)
}

// ---------------------------------------------------------------------------
// Cole-Hopf transform

#[derive(Debug, Clone, PartialEq)]
pub struct ColeHopfReport {
    /// `( sum_n dt || r_n ||^2 )^(1/2)` of the discrete `z` residual.
    pub residual: f64,
    /// Same norm of `d_t z`, for scale.
    pub scale: f64,
    pub relative: f64,
    /// Largest `|g| + |Psi|` seen; the transform assumes both vanish.
    pub reaction_sup: f64,
}

pub struct ColeHopfObserver {
    ws: Spectral,
    z: Vec<f64>,
    zn: Vec<f64>,
    hat: Vec<Complex64>,
    lap: Vec<Complex64>,
    grad: Vec<Vec<f64>>,
    lapz: Vec<f64>,
    sum: f64,
    scale: f64,
    reaction: f64,
    error: Option<Error>,
}

impl ColeHopfObserver {
    pub fn new(grid: TorusGrid) -> Self {
        Self {
            ws: Spectral::new(grid),
            z: vec![0.0; grid.len()],
            zn: vec![0.0; grid.len()],
            hat: vec![ZERO; grid.len()],
            lap: vec![ZERO; grid.len()],
            grad: vec![vec![0.0; grid.len()]; grid.dim()],
            lapz: vec![0.0; grid.len()],
            sum: 0.0,
            scale: 0.0,
            reaction: 0.0,
            error: None,
        }
    }

    pub fn finish(self) -> Result<ColeHopfReport> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let residual = Float::sqrt(self.sum);
        let scale = Float::sqrt(self.scale);
        Ok(ColeHopfReport {
            residual,
            scale,
            relative: if scale > 0.0 { residual / scale } else { residual },
            reaction_sup: self.reaction,
        })
    }
}

impl Observer for ColeHopfObserver {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        if self.error.is_some() {
            return;
        }
        let (phi, phin) = (&rec.pre.phi, &rec.post.phi);
        if let Some(j) = phi.iter().chain(phin.iter()).position(|&p| !(p > 0.0)) {
            self.error = Some(Error::NonFinite { field: "log(1/phi)", node: j % phi.len() });
            return;
        }
        for j in 0..phi.len() {
            self.z[j] = -Float::ln(phi[j]);
            self.zn[j] = -Float::ln(phin[j]);
            self.reaction = self.reaction.max(rec.g[j].abs() + rec.psi[j].abs());
        }
        self.ws.forward_into(&self.zn, &mut self.hat);
        self.ws.gradient_from_coeffs(&self.hat, &mut self.grad);
        let k2 = self.ws.k_squared();
        for ((l, h), k) in self.lap.iter_mut().zip(&self.hat).zip(k2) {
            *l = *h * -k;
        }
        self.ws.inverse_into(&self.lap, &mut self.lapz);
        let gamma = rec.config.gamma;
        let dt = rec.dt;
        let len = phi.len();
        let r = mean_map(len, |j| {
            let dz = (self.zn[j] - self.z[j]) / dt;
            let rhs = gamma * (self.lapz[j] - norm_sq_at(&self.grad, j));
            (dz - rhs) * (dz - rhs)
        });
        let s = mean_map(len, |j| {
            let dz = (self.zn[j] - self.z[j]) / dt;
            dz * dz
        });
        self.sum += dt * r;
        self.scale += dt * s;
    }
}

/// Residual of `d_t z = gamma (Laplacian z - |grad z|^2)` with
/// `z = log(1 / phi)` along a heat-flow phase field.
pub fn cole_hopf_residual(traj: &Trajectory) -> Result<ColeHopfReport> {
    if traj.phi0.min() <= 0.0 {
        return Err(Error::InvalidInitialData("the transform needs phi > 0".into()));
    }
    let mut obs = ColeHopfObserver::new(traj.grid());
    replay(traj, &mut [&mut obs])?;
    obs.finish()
}

/// Largest nodal difference of `c` over matching snapshots.
pub fn max_snapshot_difference(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.snapshots.len() != b.snapshots.len() || a.grid() != b.grid() {
        return Err(Error::GridMismatch);
    }
    let mut m = 0.0f64;
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        for (p, q) in x.c.comps().iter().flatten().zip(y.c.comps().iter().flatten()) {
            m = m.max((p - q).abs());
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// weighted weak form

/// Which variational identity is audited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeakForm {
    /// `v_t = rho_t^2 u` paired directly with the equation for `c`.
    Definition,
    /// `<(phi + eps)^a c, u>` with the equation for `phi` substituted and
    /// integrated by parts into seven drift terms.
    Expanded { alpha: f64 },
}

/// Drift terms that can be left out for sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakTerm {
    Diffusion,
    Singular,
    Reaction,
    WeightDerivative,
    Martingale,
    /// `-<D (phi+eps)^a grad c, grad u>`.
    WeightedGradient,
    /// `-<((D + gamma) a - D) (phi+eps)^(a-1) grad c . grad phi, u>`.
    LogCross,
    WeightedReaction,
    /// `-a gamma <(phi+eps)^(a-1) c grad phi, grad u>`.
    PhiTransport,
    /// `-a (a - 1) gamma <|grad phi|^2 / (phi+eps)^(2-a) c, u>`.
    Quotient,
    PsiCoupling,
    GCoupling,
}

const DEF_TERMS: [WeakTerm; 5] =
    [WeakTerm::Diffusion, WeakTerm::Singular, WeakTerm::Reaction, WeakTerm::WeightDerivative, WeakTerm::Martingale];
const EXP_TERMS: [WeakTerm; 8] = [
    WeakTerm::WeightedGradient,
    WeakTerm::LogCross,
    WeakTerm::WeightedReaction,
    WeakTerm::PhiTransport,
    WeakTerm::Quotient,
    WeakTerm::PsiCoupling,
    WeakTerm::GCoupling,
    WeakTerm::Martingale,
];

#[derive(Debug, Clone, PartialEq)]
pub struct WeakTestResult {
    pub label: String,
    pub lhs_initial: f64,
    pub lhs_final: f64,
    /// Time-integrated terms, in the order of [`WeakFormReport::terms`].
    pub term_values: Vec<f64>,
    pub residual: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakFormReport {
    pub form: WeakForm,
    pub weight: String,
    pub terms: Vec<WeakTerm>,
    pub skipped: Vec<WeakTerm>,
    pub tests: Vec<WeakTestResult>,
    pub max_normalized: f64,
    pub guard_activations: usize,
}

pub struct WeakFormObserver {
    form: WeakForm,
    weight: Option<WeightTracker>,
    weight_name: String,
    tests: Vec<TestFunction>,
    skip: Vec<WeakTerm>,
    eps: f64,
    guard: f64,
    sums: Vec<Vec<f64>>,
    lhs0: Vec<f64>,
    lhs_t: Vec<f64>,
    /// `||c_0|| ||v_0||`, the natural size of the pairing.
    size: Vec<f64>,
    activations: usize,
}

impl WeakFormObserver {
    pub fn new(traj: &Trajectory, w: Weight, tests: &TestFunctionSet, form: WeakForm) -> Result<Self> {
        let grid = traj.grid();
        for t in &tests.tests {
            if t.comp >= traj.model.d() || t.values.len() != grid.len() {
                return Err(invalid("test function", "does not match the trajectory"));
            }
        }
        if traj.config.noise_scale > 0.0 && traj.ledger.is_none() {
            return Err(Error::MissingLedger);
        }
        let (weight, name, terms) = match form {
            WeakForm::Definition => {
                w.validate(traj.config.steps(), grid)?;
                let name = w.name();
                (Some(WeightTracker::new(w, grid, traj.config.gamma, traj.phi0.values())), name, DEF_TERMS.len())
            }
            WeakForm::Expanded { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(invalid("alpha", "expanded form needs an exponent in (0, 1)"));
                }
                require_phi_dynamics(traj, "expanded weak form")?;
                if traj.config.singular_form != crate::dynamics::SingularForm::Quotient {
                    return Err(invalid("singular_form", "expanded weak form assumes the quotient form"));
                }
                (None, alloc::format!("(phi+eps)^{alpha}"), EXP_TERMS.len())
            }
        };
        Ok(Self {
            form,
            weight,
            weight_name: name,
            tests: tests.tests.clone(),
            skip: Vec::new(),
            eps: traj.reg.eps,
            guard: DEFAULT_GUARD,
            sums: vec![vec![0.0; terms]; tests.len()],
            lhs0: vec![0.0; tests.len()],
            lhs_t: vec![0.0; tests.len()],
            size: vec![0.0; tests.len()],
            activations: 0,
        })
    }

    /// Leaves `term` out of the identity.
    pub fn skipping(mut self, term: WeakTerm) -> Self {
        self.skip.push(term);
        self
    }

    pub fn finish(self) -> WeakFormReport {
        let terms: Vec<WeakTerm> = match self.form {
            WeakForm::Definition => DEF_TERMS.to_vec(),
            WeakForm::Expanded { .. } => EXP_TERMS.to_vec(),
        };
        let mut results = Vec::new();
        let mut max_n = 0.0f64;
        for (k, t) in self.tests.iter().enumerate() {
            let mut rhs = 0.0;
            let mut scale_terms = vec![self.lhs0[k], self.lhs_t[k], self.size[k]];
            for (term, v) in terms.iter().zip(&self.sums[k]) {
                if !self.skip.contains(term) {
                    rhs += v;
                    scale_terms.push(*v);
                }
            }
            let residual = self.lhs_t[k] - self.lhs0[k] - rhs;
            let n = normalized(residual, &scale_terms);
            max_n = max_n.max(n);
            results.push(WeakTestResult {
                label: t.label.clone(),
                lhs_initial: self.lhs0[k],
                lhs_final: self.lhs_t[k],
                term_values: self.sums[k].clone(),
                residual,
                normalized: n,
            });
        }
        WeakFormReport {
            form: self.form,
            weight: self.weight_name,
            terms,
            skipped: self.skip,
            tests: results,
            max_normalized: max_n,
            guard_activations: self.activations,
        }
    }

    fn observe_definition(&mut self, rec: &StepRecord<'_>) {
        let wt = self.weight.as_mut().expect("definition form carries a weight");
        wt.advance(rec);
        let (rho2, rho2n) = (&wt.cur, &wt.next);
        let dt = rec.dt;
        for (k, t) in self.tests.iter().enumerate() {
            let i = t.comp;
            let u = &t.values;
            let len = u.len();
            let (c, cn) = (&rec.pre.c[i], &rec.post.c[i]);
            if rec.step == 0 {
                self.lhs0[k] = mean_map(len, |j| c[j] * rho2[j] * u[j]);
                self.size[k] = pairing_size(c, |j| rho2[j] * u[j]);
            }
            let d = rec.config.diffusion[i];
            let s = &mut self.sums[k];
            s[0] += dt * d * mean_map(len, |j| rec.post.lap_c[i][j] * rho2[j] * u[j]);
            s[1] += dt * mean_map(len, |j| rec.singular_applied[i][j] * rho2[j] * u[j]);
            s[2] += dt * mean_map(len, |j| rec.f_applied[i][j] * rho2[j] * u[j]);
            s[3] += mean_map(len, |j| c[j] * (rho2n[j] - rho2[j]) * u[j]);
            s[4] += mean_map(len, |j| rec.noise[i][j] * rho2[j] * u[j]);
            self.lhs_t[k] = mean_map(len, |j| cn[j] * rho2n[j] * u[j]);
        }
    }

    fn observe_expanded(&mut self, rec: &StepRecord<'_>, a: f64) {
        let (phi, phin) = (&rec.pre.phi, &rec.post.phi);
        let len = phi.len();
        let g0 = self.guard;
        let base = |p: f64| (p + self.eps).max(g0);
        self.activations += phi.iter().filter(|&&p| p + self.eps < g0).count();
        let w: Vec<f64> = phi.iter().map(|&p| Float::powf(base(p), a)).collect();
        let wn: Vec<f64> = phin.iter().map(|&p| Float::powf(base(p), a)).collect();
        let w1: Vec<f64> = phi.iter().map(|&p| Float::powf(base(p), a - 1.0)).collect();
        let w2: Vec<f64> = phi.iter().zip(&w1).map(|(&p, x)| x / base(p)).collect();
        let (gp, gpn) = (&rec.pre.grad_phi, &rec.post.grad_phi);
        let gamma = rec.config.gamma;
        let dt = rec.dt;
        for (k, t) in self.tests.iter().enumerate() {
            let i = t.comp;
            let (u, gu) = (&t.values, &t.grad);
            let (c, cn) = (&rec.pre.c[i], &rec.post.c[i]);
            let (gc, gcn) = (&rec.pre.grad_c[i], &rec.post.grad_c[i]);
            let d = rec.config.diffusion[i];
            if rec.step == 0 {
                self.lhs0[k] = mean_map(len, |j| w[j] * c[j] * u[j]);
                self.size[k] = pairing_size(c, |j| w[j] * u[j]);
            }
            let s = &mut self.sums[k];
            s[0] += -dt * d * mean_map(len, |j| w[j] * dot_at(gcn, gu, j));
            s[1] += dt
                * mean_map(len, |j| {
                    -d * a * w1[j] * dot_at(gcn, gp, j) * u[j] - gamma * a * w1[j] * dot_at(gc, gpn, j) * u[j]
                        + w[j] * rec.singular_applied[i][j] * u[j]
                });
            s[2] += dt * mean_map(len, |j| w[j] * rec.f_applied[i][j] * u[j]);
            s[3] += -dt * a * gamma * mean_map(len, |j| w1[j] * c[j] * dot_at(gpn, gu, j));
            s[4] += -dt * a * (a - 1.0) * gamma * mean_map(len, |j| w2[j] * dot_at(gp, gpn, j) * c[j] * u[j]);
            s[5] += dt * a * mean_map(len, |j| w1[j] * rec.psi_applied[j] * c[j] * u[j]);
            s[6] += dt * a * mean_map(len, |j| w1[j] * rec.g_applied[j] * c[j] * u[j]);
            s[7] += mean_map(len, |j| w[j] * rec.noise[i][j] * u[j]);
            self.lhs_t[k] = mean_map(len, |j| wn[j] * cn[j] * u[j]);
        }
    }
}

impl Observer for WeakFormObserver {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        match self.form {
            WeakForm::Definition => self.observe_definition(rec),
            WeakForm::Expanded { alpha } => self.observe_expanded(rec, alpha),
        }
    }
}

/// Weighted weak-form residual. `PhiPower` weights use the expanded form
/// with exponent `a` (so `v = (phi + eps)^a u`); every other weight uses
/// the definition form with `v_t = rho_t^2 u`.
pub fn weak_form_residual(traj: &Trajectory, w: Weight, tests: &TestFunctionSet) -> Result<WeakFormReport> {
    let form = match w {
        Weight::PhiPower(a) => WeakForm::Expanded { alpha: a },
        _ => WeakForm::Definition,
    };
    weak_form_residual_with(traj, w, tests, form, &[])
}

pub fn weak_form_residual_with(
    traj: &Trajectory,
    w: Weight,
    tests: &TestFunctionSet,
    form: WeakForm,
    skip: &[WeakTerm],
) -> Result<WeakFormReport> {
    let mut obs = WeakFormObserver::new(traj, w, tests, form)?;
    for &t in skip {
        obs = obs.skipping(t);
    }
    replay(traj, &mut [&mut obs])?;
    Ok(obs.finish())
}

// ---------------------------------------------------------------------------
// phase-field energy

#[derive(Debug, Clone, PartialEq)]
pub struct PhiEnergyReport {
    pub initial: f64,
    pub final_energy: f64,
    /// `-gamma int ||Laplacian phi||^2`, paired as the implicit step pairs it.
    pub dissipation: f64,
    /// `-2 int <g + Psi, Laplacian phi>`.
    pub reaction: f64,
    pub residual: f64,
    pub normalized: f64,
    /// Steps whose dissipation increment came out positive.
    pub positive_dissipation_steps: usize,
}

#[derive(Default)]
pub struct PhiEnergyObserver {
    initial: f64,
    last: f64,
    dissipation: f64,
    reaction: f64,
    positive: usize,
}

impl PhiEnergyObserver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(self) -> PhiEnergyReport {
        let residual = (self.last - self.initial) - (self.dissipation + self.reaction);
        PhiEnergyReport {
            initial: self.initial,
            final_energy: self.last,
            dissipation: self.dissipation,
            reaction: self.reaction,
            residual,
            normalized: normalized(residual, &[self.initial, self.last, self.dissipation, self.reaction]),
            positive_dissipation_steps: self.positive,
        }
    }
}

impl Observer for PhiEnergyObserver {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        let (gp, gpn) = (&rec.pre.grad_phi, &rec.post.grad_phi);
        let len = rec.pre.phi.len();
        if rec.step == 0 {
            self.initial = mean_map(len, |j| norm_sq_at(gp, j));
        }
        let (l, ln) = (&rec.pre.lap_phi, &rec.post.lap_phi);
        let diss = -rec.dt * rec.config.gamma * mean_map(len, |j| ln[j] * (ln[j] + l[j]));
        if diss > 0.0 {
            self.positive += 1;
        }
        self.dissipation += diss;
        self.reaction += -2.0 * rec.dt * mean_map(len, |j| (rec.g_applied[j] + rec.psi_applied[j]) * l[j]);
        self.last = mean_map(len, |j| norm_sq_at(gpn, j));
    }
}

/// Balance of `||grad phi_t||^2`.
pub fn phi_energy_residual(traj: &Trajectory) -> Result<PhiEnergyReport> {
    require_phi_dynamics(traj, "phi energy identity")?;
    let mut obs = PhiEnergyObserver::new();
    replay(traj, &mut [&mut obs])?;
    Ok(obs.finish())
}

// ---------------------------------------------------------------------------
// product rule

/// First factor of the product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProdFactor {
    C(usize),
    Phi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProdRuleReport {
    pub lhs_initial: f64,
    pub lhs_final: f64,
    /// `int <u_x, y w>`.
    pub x_drift: f64,
    /// `int <d_s y, x w>` from step increments of `y`.
    pub y_drift: f64,
    /// `<w, int y dM>`.
    pub stochastic: f64,
    pub residual: f64,
    pub normalized: f64,
}

pub struct ProdRuleObserver {
    x: ProdFactor,
    y: WeightTracker,
    w: Vec<f64>,
    acc: [f64; 3],
    lhs0: f64,
    lhs_t: f64,
    size: f64,
}

impl ProdRuleObserver {
    /// `y` is the multiplier path `rho^2` of `y_weight`; `w` a fixed test field.
    pub fn new(traj: &Trajectory, x: ProdFactor, y_weight: Weight, w: &ScalarField) -> Result<Self> {
        y_weight.validate(traj.config.steps(), traj.grid())?;
        if w.grid() != traj.grid() {
            return Err(Error::GridMismatch);
        }
        match x {
            ProdFactor::C(i) if i >= traj.model.d() => return Err(invalid("x", "component out of range")),
            ProdFactor::Phi => require_phi_dynamics(traj, "product rule for phi")?,
            _ => {}
        }
        if traj.config.noise_scale > 0.0 && traj.ledger.is_none() {
            return Err(Error::MissingLedger);
        }
        Ok(Self {
            x,
            y: WeightTracker::new(y_weight, traj.grid(), traj.config.gamma, traj.phi0.values()),
            w: w.values().to_vec(),
            acc: [0.0; 3],
            lhs0: 0.0,
            lhs_t: 0.0,
            size: 0.0,
        })
    }

    pub fn finish(self) -> ProdRuleReport {
        let [x_drift, y_drift, stochastic] = self.acc;
        let residual = self.lhs_t - self.lhs0 - (x_drift + y_drift + stochastic);
        ProdRuleReport {
            lhs_initial: self.lhs0,
            lhs_final: self.lhs_t,
            x_drift,
            y_drift,
            stochastic,
            residual,
            normalized: normalized(residual, &[self.lhs0, self.lhs_t, self.size, x_drift, y_drift, stochastic]),
        }
    }
}

impl Observer for ProdRuleObserver {
    fn observe(&mut self, rec: &StepRecord<'_>) {
        self.y.advance(rec);
        let (y, yn) = (&self.y.cur, &self.y.next);
        let w = &self.w;
        let len = w.len();
        let dt = rec.dt;
        let (x, xn): (&[f64], &[f64]) = match self.x {
            ProdFactor::C(i) => (&rec.pre.c[i], &rec.post.c[i]),
            ProdFactor::Phi => (&rec.pre.phi, &rec.post.phi),
        };
        if rec.step == 0 {
            self.lhs0 = mean_map(len, |j| x[j] * y[j] * w[j]);
            self.size = pairing_size(x, |j| y[j] * w[j]);
        }
        match self.x {
            ProdFactor::C(i) => {
                let d = rec.config.diffusion[i];
                self.acc[0] += 0.5
                    * dt
                    * mean_map(len, |j| {
                        (d * rec.post.lap_c[i][j] + rec.singular_applied[i][j] + rec.f_applied[i][j])
                            * (y[j] + yn[j])
                            * w[j]
                    });
                self.acc[2] += mean_map(len, |j| y[j] * rec.noise[i][j] * w[j]);
            }
            ProdFactor::Phi => {
                let gamma = rec.config.gamma;
                self.acc[0] += 0.5
                    * dt
                    * mean_map(len, |j| {
                        (gamma * rec.post.lap_phi[j] + rec.g_applied[j] + rec.psi_applied[j]) * (y[j] + yn[j]) * w[j]
                    });
            }
        }
        self.acc[1] += 0.5 * mean_map(len, |j| (yn[j] - y[j]) * (x[j] + xn[j]) * w[j]);
        self.lhs_t = mean_map(len, |j| xn[j] * yn[j] * w[j]);
    }
}

/// Product identity for `x_t y_t` against the fixed field `w`.
pub fn prod_rule_residual(
    traj: &Trajectory,
    x: ProdFactor,
    y: Weight,
    w: &ScalarField,
) -> Result<ProdRuleReport> {
    let mut obs = ProdRuleObserver::new(traj, x, y, w)?;
    replay(traj, &mut [&mut obs])?;
    Ok(obs.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_coupled, run_uncoupled, PhiPath, RegParams, SolverConfig};
    use crate::field::VectorField;
    use crate::models::{make_model, ModelSpec, ParamMap};
    use crate::noise::NoiseSpec;
    use core::f64::consts::PI;

    fn grid() -> TorusGrid {
        TorusGrid::new(2, 16).unwrap()
    }

    fn linear(extra: &[(&str, f64)]) -> ModelSpec {
        let o: ParamMap = extra.iter().map(|(k, v)| ((*k).into(), *v)).collect();
        make_model("linear", &o).unwrap()
    }

    fn bump(g: TorusGrid) -> ScalarField {
        ScalarField::from_fn(g, |x| 0.6 + 0.3 * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).sin()).unwrap()
    }

    fn c_field(g: TorusGrid) -> VectorField {
        VectorField::from_scalars(vec![
            ScalarField::from_fn(g, |x| 0.5 + 0.2 * (2.0 * PI * (x[0] + x[1])).sin()).unwrap(),
        ])
        .unwrap()
    }

    fn deterministic(m: &ModelSpec, phi0: &ScalarField, t_end: f64) -> Trajectory {
        let mut cfg = SolverConfig::new(m, 1e-3, t_end);
        cfg.noise_scale = 0.0;
        run_coupled(&cfg, m, &RegParams::for_model(m), &NoiseSpec::new(1, 3), phi0, &c_field(phi0.grid())).unwrap()
    }

    #[test]
    fn test_set_shape() {
        let s = TestFunctionSet::standard(grid(), 2, 1).unwrap();
        assert_eq!(s.len(), 2 * 10);
        let one = &s.tests[0];
        assert!(one.values.iter().all(|v| *v == 1.0));
        for t in &s.tests[1..9] {
            assert!(mean_of(&t.values).abs() < 1e-12);
            let l2 = mean_map(t.values.len(), |j| t.values[j] * t.values[j]);
            assert!((l2 - 1.0).abs() < 1e-12, "{l2}");
        }
        let a = random_band_limited(grid(), 3, 9);
        let b = random_band_limited(grid(), 3, 9);
        assert_eq!(a, b);
        assert!((a.values().iter().fold(0.0f64, |m, v| m.max(v.abs())) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn admissibility_of_constant_phi_vanishes() {
        let m = linear(&[]);
        let tr = deterministic(&m, &ScalarField::constant(grid(), 1.0), 0.01);
        let r = guard_sweep(&tr, Weight::PhiPower(0.25), &[1e-12, 1e-8]).unwrap();
        assert!(r.integrals.iter().all(|v| *v < 1e-25), "{:?}", r.integrals);
        assert_eq!(r.guard_activations, vec![0, 0]);
        let s = alpha_scan(&tr, &[0.05, 0.1, 0.2]).unwrap();
        assert!(s.values.iter().all(|v| *v < 1e-25));
        assert_eq!(s.log_l1_sup, 0.0);
    }

    #[test]
    fn weight_support_on_constants() {
        let m = linear(&[]);
        let tr = deterministic(&m, &ScalarField::constant(grid(), 0.5), 0.01);
        let r = weight_support_residual(&tr, Weight::Constant, 0.25).unwrap();
        assert!(r.residual.abs() < 1e-14, "{r:?}");
        assert!(r.quotient.abs() < 1e-25 && r.cross == 0.0);
    }

    #[test]
    fn ito_square_without_noise_or_reaction() {
        let m = linear(&[]);
        let tr = deterministic(&m, &ScalarField::constant(grid(), 0.7), 0.02);
        let r = ito_square_residual(&tr, ItoField::C(0)).unwrap();
        assert!(r.max_relative <= 1e-6, "{}", r.max_relative);
        assert!(r.martingale.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ito_square_of_additive_noise() {
        let m = linear(&[("sigma", 0.05)]);
        let g = grid();
        let mut cfg = SolverConfig::new(&m, 1e-3, 0.02);
        cfg.noise_scale = 1.0;
        let mut noise = NoiseSpec::new(1, 5);
        noise.k_max = 4;
        let reg = RegParams::for_model(&m);
        let tr = run_uncoupled(&cfg, &m, &reg, &noise, PhiPath::Constant(ScalarField::constant(g, 1.0)), &c_field(g))
            .unwrap();
        let r = ito_square_residual(&tr, ItoField::AllC).unwrap();
        assert!(r.trace > 0.0);
        // pathwise, the trace term replaces the realized squared increments
        assert!(r.max_relative < 1e-2, "{}", r.max_relative);
    }

    #[test]
    fn cole_hopf_of_constant_is_zero() {
        let m = linear(&[]);
        let tr = deterministic(&m, &ScalarField::constant(grid(), 0.4), 0.01);
        let r = cole_hopf_residual(&tr).unwrap();
        assert!(r.residual < 1e-12, "{r:?}");
    }

    #[test]
    fn cole_hopf_converges_for_heat_flow() {
        let m = linear(&[]);
        let phi0 = bump(grid());
        let mut res = Vec::new();
        for dt in [2e-3, 1e-3] {
            let mut cfg = SolverConfig::new(&m, dt, 0.02);
            cfg.noise_scale = 0.0;
            let tr = run_coupled(&cfg, &m, &RegParams::for_model(&m), &NoiseSpec::new(1, 3), &phi0, &c_field(grid()))
                .unwrap();
            res.push(cole_hopf_residual(&tr).unwrap().relative);
        }
        assert!(res[1] < res[0], "{res:?}");
    }

    #[test]
    fn unweighted_weak_form_is_exact_for_linear_dynamics() {
        let m = linear(&[]);
        let tr = deterministic(&m, &bump(grid()), 0.02);
        let tests = TestFunctionSet::standard(grid(), 1, 4).unwrap();
        let r = weak_form_residual(&tr, Weight::Constant, &tests).unwrap();
        assert!(r.max_normalized <= 1e-6, "{}", r.max_normalized);
    }

    #[test]
    fn phi_energy_of_pure_heat() {
        let m = linear(&[]);
        let tr = deterministic(&m, &bump(grid()), 0.02);
        let r = phi_energy_residual(&tr).unwrap();
        assert!(r.normalized <= 1e-8, "{r:?}");
        assert_eq!(r.positive_dissipation_steps, 0);
    }

    #[test]
    fn prod_rule_with_unit_factor_matches_weak_form() {
        let m = linear(&[]);
        let g = grid();
        let tr = deterministic(&m, &bump(g), 0.02);
        let w = random_band_limited(g, 2, 11);
        let p = prod_rule_residual(&tr, ProdFactor::C(0), Weight::Constant, &w).unwrap();
        let t = TestFunctionSet::single(TestFunction::new("w", 0, &w).unwrap());
        let q = weak_form_residual(&tr, Weight::Constant, &t).unwrap();
        assert_eq!(p.y_drift, 0.0);
        assert!((p.residual - q.tests[0].residual).abs() < 1e-14);
    }

    #[test]
    fn skipping_a_term_is_detected() {
        let m = linear(&[("kappa", 10.0)]);
        let tr = deterministic(&m, &bump(grid()), 0.02);
        let tests = TestFunctionSet::standard(grid(), 1, 4).unwrap();
        let full = weak_form_residual_with(&tr, Weight::Phi, &tests, WeakForm::Definition, &[]).unwrap();
        let cut = weak_form_residual_with(&tr, Weight::Phi, &tests, WeakForm::Definition, &[WeakTerm::Reaction]).unwrap();
        assert!(cut.max_normalized > 5.0 * full.max_normalized, "{} {}", cut.max_normalized, full.max_normalized);
    }

    #[test]
    fn qv_estimate_combines_paths() {
        let p = QvPath { terminal: vec![1.0], realized: vec![2.0], predicted: vec![2.0] };
        let q = QvPath { terminal: vec![-1.0], realized: vec![4.0], predicted: vec![2.0] };
        let r = qv_estimate(&[p, q]).unwrap();
        assert_eq!(r.empirical, vec![3.0]);
        assert_eq!(r.second_moment, vec![1.0]);
        assert!((r.max_rel_error - 0.5).abs() < 1e-15);
        assert!(r.too_few_paths);
    }

    #[test]
    fn halving_and_slopes() {
        assert!(halves(1.0, 0.5, 1e-10));
        assert!(!halves(1.0, 1.0, 1e-10));
        assert!(halves(1e-12, 2e-12, 1e-10));
        let pts: Vec<(f64, f64)> = (0..4).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        assert!((ls_slope(&pts) - 2.0).abs() < 1e-14);
        let c = centeredness(&[1.0, -1.0, 0.5, -0.5], 3.0);
        assert!(c.within && c.mean == 0.0);
    }
}
