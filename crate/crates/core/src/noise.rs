//! Q-Wiener forcing with Bessel-potential covariance spectrum.
//!
//! Eigenvalues are `lambda_k = (1 + 4 pi^2 |k|^2)^(-s)` on the real
//! trigonometric basis `1, sqrt2 cos(2 pi k.x), sqrt2 sin(2 pi k.x)` for
//! `|k|_inf <= K_max`. Increments are keyed by `(seed, step, component,
//! mode)` through a ChaCha stream, so any step can be regenerated on its own.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
// unused when another crate in the graph links std
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{invalid, Error, Result};
use crate::field::{pairwise_sum, TorusGrid, VectorField};
use crate::spectral::Spectral;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Sobolev index of the Hilbert-Schmidt condition.
    pub r: f64,
    /// Spectral decay exponent.
    pub s: f64,
    pub k_max: usize,
    /// Number of independent components.
    pub d: usize,
    pub seed: u64,
}

impl NoiseSpec {
    /// Defaults for `n = 2`: `r = 0.1`, `s = 2`, `K_max = 8`.
    pub fn new(d: usize, seed: u64) -> Self {
        Self { r: 0.1, s: 2.0, k_max: 8, d, seed }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bound = self.r + dim as f64 / 2.0;
        if !(self.s > bound) {
            return Err(Error::HilbertSchmidt { s: self.s, bound });
        }
        if !(self.r > dim as f64 / 2.0 - 1.0) {
            return Err(invalid("noise.r", "need r > n/2 - 1"));
        }
        if self.d == 0 {
            return Err(invalid("noise.d", "need at least one component"));
        }
        Ok(())
    }
}

/// Bessel-potential eigenvalue for `4 pi^2 |k|^2 = k2`.
pub fn bessel_eigenvalue(k2: f64, s: f64) -> f64 {
    (1.0 + k2).powf(-s)
}

fn for_each_wavevector(dim: usize, k_max: usize, mut f: impl FnMut([i64; 3])) {
    let m = k_max as i64;
    let range = |axis: usize| if axis < dim { -m..=m } else { 0..=0 };
    for a in range(0) {
        for b in range(1) {
            for c in range(2) {
                f([a, b, c]);
            }
        }
    }
}

/// Trace `sum lambda_k` and Hilbert-Schmidt sum
/// `sum lambda_k (1 + 4 pi^2 |k|^2)^r` over `|k|_inf <= k_max`, without
/// checking summability.
pub fn spectral_sums(dim: usize, r: f64, s: f64, k_max: usize) -> (f64, f64) {
    let mut tr = Vec::new();
    let mut hs = Vec::new();
    for_each_wavevector(dim, k_max, |k| {
        let k2 = 4.0 * PI * PI * ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
        let lam = bessel_eigenvalue(k2, s);
        tr.push(lam);
        hs.push(lam * (1.0 + k2).powf(r));
    });
    (pairwise_sum(&tr), pairwise_sum(&hs))
}

/// Relative change of the Hilbert-Schmidt sum over two successive
/// doublings of the cutoff, `K -> 2K -> 4K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummabilityProbe {
    pub sums: [f64; 3],
    pub rel_change: [f64; 2],
    /// Last doubling changed the sum by less than 1%.
    pub stable: bool,
}

pub fn probe_summability(dim: usize, r: f64, s: f64, k_max: usize) -> SummabilityProbe {
    let k = k_max.max(1);
    let sums = [
        spectral_sums(dim, r, s, k).1,
        spectral_sums(dim, r, s, 2 * k).1,
        spectral_sums(dim, r, s, 4 * k).1,
    ];
    let rel_change = [(sums[1] - sums[0]) / sums[0], (sums[2] - sums[1]) / sums[1]];
    SummabilityProbe { sums, rel_change, stable: rel_change[1] < 0.01 }
}

/// One real basis function of the noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub k: [i64; 3],
    pub lambda: f64,
    /// Flat coefficient index of `k` (and of `-k`).
    pub index: usize,
    pub neg_index: usize,
}

/// Eigenvalue table of `Q` on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    spec: NoiseSpec,
    grid: TorusGrid,
    /// `k = 0` first, then one representative per `{k, -k}` pair.
    modes: Vec<Mode>,
    trace: f64,
    hs_sum: f64,
}

pub fn build_spectrum(spec: &NoiseSpec, grid: TorusGrid) -> Result<Spectrum> {
    spec.validate(grid.dim())?;
    if 2 * spec.k_max >= grid.points() {
        return Err(invalid("noise.k_max", "cutoff must stay below the Nyquist wave number N/2"));
    }
    let mut modes = Vec::new();
    for_each_wavevector(grid.dim(), spec.k_max, |k| {
        // representative half-space: first nonzero component positive
        let first = k.iter().copied().find(|&x| x != 0);
        if matches!(first, Some(x) if x < 0) {
            return;
        }
        let k2 = 4.0 * PI * PI * ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
        modes.push(Mode {
            k,
            lambda: bessel_eigenvalue(k2, spec.s),
            index: grid.index_of_wavevector(k),
            neg_index: grid.index_of_wavevector([-k[0], -k[1], -k[2]]),
        });
    });
    modes.sort_by_key(|m| m.k != [0, 0, 0]);
    let (trace, hs_sum) = spectral_sums(grid.dim(), spec.r, spec.s, spec.k_max);
    Ok(Spectrum { spec: *spec, grid, modes, trace, hs_sum })
}

impl Spectrum {
    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// `tr Q = sum_k lambda_k` over every basis function.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn hs_sum(&self) -> f64 {
        self.hs_sum
    }

    /// Number of real basis functions per component.
    pub fn basis_len(&self) -> usize {
        2 * self.modes.len() - 1
    }

    /// `||sqrt(Q) w||^2 = sum_k lambda_k <w, e_k>^2` from the normalised
    /// Fourier coefficients of `w`.
    pub fn q_norm_sq(&self, coeffs: &[Complex64]) -> f64 {
        let terms: Vec<f64> = self
            .modes
            .iter()
            .map(|m| {
                if m.index == m.neg_index {
                    m.lambda * coeffs[m.index].re * coeffs[m.index].re
                } else {
                    2.0 * m.lambda * coeffs[m.index].norm_sqr()
                }
            })
            .collect();
        pairwise_sum(&terms)
    }
}

const WORDS_PER_MODE: u128 = 4;

fn unit_open(x: u64) -> f64 {
    ((x >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal pair by Box-Muller; consumes exactly two `u64`.
fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = unit_open(rng.next_u64());
    let u2 = unit_open(rng.next_u64());
    let r = (-2.0 * u1.ln()).sqrt();
    let a = 2.0 * PI * u2;
    (r * a.cos(), r * a.sin())
}

/// Standard normal coordinates `(xi_cos, xi_sin)` of every mode of one
/// component at one step. The constant mode uses only `xi_cos`.
pub fn mode_normals(spec: &NoiseSpec, n_modes: usize, step: u64, comp: usize, out: &mut Vec<(f64, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(step);
    rng.set_word_pos(WORDS_PER_MODE * (comp * n_modes) as u128);
    out.clear();
    out.extend((0..n_modes).map(|_| normal_pair(&mut rng)));
}

/// Per-path generator of `Delta W` fields.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    spectrum: Spectrum,
    normals: Vec<(f64, f64)>,
    coeffs: [Vec<Complex64>; 2],
}

impl NoiseSampler {
    pub fn new(spectrum: Spectrum) -> Self {
        let len = spectrum.grid.len();
        Self {
            spectrum,
            normals: Vec::new(),
            coeffs: [vec![Complex64::new(0.0, 0.0); len], vec![Complex64::new(0.0, 0.0); len]],
        }
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    fn fill_coeffs(&mut self, slot: usize, dt: f64, step: u64, comp: usize) {
        let modes = &self.spectrum.modes;
        mode_normals(&self.spectrum.spec, modes.len(), step, comp, &mut self.normals);
        let c = &mut self.coeffs[slot];
        for m in modes {
            c[m.index] = Complex64::new(0.0, 0.0);
            c[m.neg_index] = Complex64::new(0.0, 0.0);
        }
        for (m, &(xc, xs)) in modes.iter().zip(&self.normals) {
            let amp = (m.lambda * dt).sqrt();
            if m.index == m.neg_index {
                c[m.index] = Complex64::new(amp * xc, 0.0);
            } else {
                let z = Complex64::new(xc, -xs) * (amp / 2.0.sqrt());
                c[m.index] = z;
                c[m.neg_index] = z.conj();
            }
        }
    }

    /// Writes `Delta W` for `step` into `out` (one nodal array per
    /// component).
    pub fn increment_into(&mut self, ws: &mut Spectral, dt: f64, step: u64, out: &mut [Vec<f64>]) -> Result<()> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "noise increment needs dt > 0"));
        }
        let d = out.len();
        let mut comp = 0;
        while comp < d {
            self.fill_coeffs(0, dt, step, comp);
            if comp + 1 < d {
                self.fill_coeffs(1, dt, step, comp + 1);
                let (lo, hi) = out.split_at_mut(comp + 1);
                ws.inverse_pair_into(&self.coeffs[0], &self.coeffs[1], &mut lo[comp], &mut hi[0]);
                comp += 2;
            } else {
                ws.inverse_into(&self.coeffs[0], &mut out[comp]);
                comp += 1;
            }
        }
        Ok(())
    }
}

/// `Delta W = sum_k sqrt(lambda_k dt) xi_k e_k` for every component of the
/// spectrum's spec, keyed by `step`.
pub fn sample_increment(spectrum: &Spectrum, dt: f64, step: u64, ws: &mut Spectral) -> Result<VectorField> {
    let grid = spectrum.grid;
    let mut comps = vec![vec![0.0; grid.len()]; spectrum.spec.d];
    NoiseSampler::new(spectrum.clone()).increment_into(ws, dt, step, &mut comps)?;
    Ok(VectorField::from_raw(grid, comps))
}

/// Record of the increments that drove a path. Increments are regenerated
/// from `(spec, seed, step)` on demand unless materialised.
///
/// With `refine = r`, the increment of coarse step `n` is the sum of the
/// fine increments `n r .. n r + r - 1` drawn at `dt / r`, so runs at
/// `dt` and `dt / r` see the same Brownian path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLedger {
    spec: NoiseSpec,
    grid: TorusGrid,
    dt: f64,
    steps: usize,
    refine: usize,
    stored: Option<Vec<VectorField>>,
}

/// Sums `refine` fine increments into `out` for coarse step `step`.
pub fn coarse_increment_into(
    sampler: &mut NoiseSampler,
    ws: &mut Spectral,
    dt: f64,
    refine: usize,
    step: u64,
    out: &mut [Vec<f64>],
    scratch: &mut [Vec<f64>],
) -> Result<()> {
    if refine <= 1 {
        return sampler.increment_into(ws, dt, step, out);
    }
    let fine = dt / refine as f64;
    for o in out.iter_mut() {
        o.iter_mut().for_each(|x| *x = 0.0);
    }
    for j in 0..refine as u64 {
        sampler.increment_into(ws, fine, step * refine as u64 + j, scratch)?;
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            o.iter_mut().zip(s).for_each(|(x, y)| *x += y);
        }
    }
    Ok(())
}

impl NoiseLedger {
    pub fn lazy(spec: NoiseSpec, grid: TorusGrid, dt: f64, steps: usize) -> Self {
        Self::lazy_refined(spec, grid, dt, steps, 1)
    }

    pub fn lazy_refined(spec: NoiseSpec, grid: TorusGrid, dt: f64, steps: usize, refine: usize) -> Self {
        Self { spec, grid, dt, steps, refine: refine.max(1), stored: None }
    }

    /// Ledger of explicitly given increments (loaded from disk or built by
    /// hand).
    pub fn from_increments(spec: NoiseSpec, grid: TorusGrid, dt: f64, increments: Vec<VectorField>) -> Self {
        Self { spec, grid, dt, steps: increments.len(), refine: 1, stored: Some(increments) }
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn refine(&self) -> usize {
        self.refine
    }

    pub fn is_materialized(&self) -> bool {
        self.stored.is_some()
    }

    pub fn increment(&self, step: usize, ws: &mut Spectral) -> Result<VectorField> {
        if let Some(stored) = &self.stored {
            return stored.get(step).cloned().ok_or_else(|| invalid("step", "beyond ledger length"));
        }
        let spectrum = build_spectrum(&self.spec, self.grid)?;
        let mut sampler = NoiseSampler::new(spectrum);
        let mut out = vec![vec![0.0; self.grid.len()]; self.spec.d];
        let mut scratch = out.clone();
        coarse_increment_into(&mut sampler, ws, self.dt, self.refine, step as u64, &mut out, &mut scratch)?;
        Ok(VectorField::from_raw(self.grid, out))
    }

    pub fn materialize(&mut self, ws: &mut Spectral) -> Result<()> {
        if self.stored.is_none() {
            let spectrum = build_spectrum(&self.spec, self.grid)?;
            let mut sampler = NoiseSampler::new(spectrum);
            let mut out = Vec::with_capacity(self.steps);
            let mut scratch = vec![vec![0.0; self.grid.len()]; self.spec.d];
            for step in 0..self.steps {
                let mut comps = vec![vec![0.0; self.grid.len()]; self.spec.d];
                coarse_increment_into(&mut sampler, ws, self.dt, self.refine, step as u64, &mut comps, &mut scratch)?;
                out.push(VectorField::from_raw(self.grid, comps));
            }
            self.stored = Some(out);
        }
        Ok(())
    }

    pub fn increments(&self) -> Option<&[VectorField]> {
        self.stored.as_deref()
    }

    /// Reorders stored increments; a no-op for lazy ledgers.
    pub fn permute(&mut self, order: &[usize]) {
        if let Some(stored) = &mut self.stored {
            let old = core::mem::take(stored);
            *stored = order.iter().map(|&i| old[i].clone()).collect();
        }
    }
}

/// Empirical variance of one basis coordinate against its prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeVariance {
    pub k: [i64; 3],
    pub comp: usize,
    /// `true` for the sine member of a pair.
    pub sine: bool,
    pub empirical: f64,
    pub expected: f64,
    /// `(empirical / expected - 1) / sqrt(2 / M)`: approximately standard
    /// normal for a chi-square with `M` degrees of freedom.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceReport {
    pub samples: usize,
    pub modes: Vec<ModeVariance>,
    pub max_rel_error: f64,
    /// Mean of `||Delta W||^2 / dt` per component, estimating `tr Q`.
    pub trace_estimate: f64,
    pub trace_expected: f64,
    /// Mean lag-one correlation of mode coordinates (steps `i`, `i+1`).
    pub lag_one_correlation: f64,
    pub too_few_samples: bool,
    pub degenerate: bool,
}

/// Sorted pairwise sum: invariant under permutation of the inputs.
fn order_free_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    pairwise_sum(&v)
}

/// Mode variance audit of a materialised ledger. `which` selects entries of
/// the spectrum's mode list (all when `None`).
pub fn covariance_diagnostic(
    ledger: &NoiseLedger,
    ws: &mut Spectral,
    which: Option<&[usize]>,
) -> Result<CovarianceReport> {
    let spectrum = build_spectrum(&ledger.spec, ledger.grid)?;
    let mut owned = ledger.clone();
    owned.materialize(ws)?;
    let incs = owned.increments().unwrap_or(&[]);
    let m = incs.len();
    let grid = ledger.grid;
    let d = ledger.spec.d;
    let all: Vec<usize> = (0..spectrum.modes.len()).collect();
    let picked = which.unwrap_or(&all);

    // coordinates[comp][pick][sample] for cos and sin
    let mut coords_c = vec![vec![Vec::with_capacity(m); picked.len()]; d];
    let mut coords_s = vec![vec![Vec::with_capacity(m); picked.len()]; d];
    let mut norms = Vec::with_capacity(m * d);
    let mut c = vec![Complex64::new(0.0, 0.0); grid.len()];
    for inc in incs {
        for comp in 0..d {
            ws.forward_into(inc.comp(comp), &mut c);
            norms.push(crate::field::inner(inc.comp(comp), inc.comp(comp)) / ledger.dt);
            for (p, &mi) in picked.iter().enumerate() {
                let mode = spectrum.modes[mi];
                if mode.index == mode.neg_index {
                    coords_c[comp][p].push(c[mode.index].re);
                } else {
                    coords_c[comp][p].push(2.0.sqrt() * c[mode.index].re);
                    coords_s[comp][p].push(-(2.0.sqrt()) * c[mode.index].im);
                }
            }
        }
    }

    let mut modes = Vec::new();
    let mut lag = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    let scale = (2.0 / m.max(1) as f64).sqrt();
    for comp in 0..d {
        for (p, &mi) in picked.iter().enumerate() {
            let mode = spectrum.modes[mi];
            let expected = mode.lambda * ledger.dt;
            for (sine, xs) in [(false, &coords_c[comp][p]), (true, &coords_s[comp][p])] {
                if xs.is_empty() {
                    continue;
                }
                let var = order_free_sum(xs.iter().map(|x| x * x).collect()) / xs.len() as f64;
                let rel = var / expected - 1.0;
                max_rel_error = max_rel_error.max(rel.abs());
                modes.push(ModeVariance { k: mode.k, comp, sine, empirical: var, expected, z: rel / scale });
                if xs.len() > 1 && var > 0.0 {
                    let cross = pairwise_sum(&xs.windows(2).map(|w| w[0] * w[1]).collect::<Vec<_>>())
                        / (xs.len() - 1) as f64;
                    lag.push(cross / var);
                }
            }
        }
    }
    let trace_estimate = if norms.is_empty() { 0.0 } else { order_free_sum(norms) / (m * d) as f64 };
    let lag_one_correlation = if lag.is_empty() { 0.0 } else { pairwise_sum(&lag) / lag.len() as f64 };
    Ok(CovarianceReport {
        samples: m,
        modes,
        max_rel_error,
        trace_estimate,
        trace_expected: spectrum.trace,
        lag_one_correlation,
        too_few_samples: m < 100,
        degenerate: trace_estimate == 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TorusGrid {
        TorusGrid::new(2, 32).unwrap()
    }

    #[test]
    fn single_mode_has_unit_trace() {
        let spec = NoiseSpec { k_max: 0, ..NoiseSpec::new(1, 0) };
        let s = build_spectrum(&spec, grid()).unwrap();
        assert_eq!(s.modes().len(), 1);
        assert_eq!(s.trace(), 1.0);
    }

    #[test]
    fn rejects_boundary_of_summability() {
        let spec = NoiseSpec { r: 0.1, s: 1.1, ..NoiseSpec::new(1, 0) };
        assert!(matches!(build_spectrum(&spec, grid()), Err(Error::HilbertSchmidt { .. })));
        let spec = NoiseSpec { r: -0.5, s: 2.0, ..NoiseSpec::new(1, 0) };
        assert!(build_spectrum(&spec, grid()).is_err());
    }

    #[test]
    fn cutoff_doubling_is_stable() {
        let (_, hs8) = spectral_sums(2, 0.1, 2.0, 8);
        let (_, hs16) = spectral_sums(2, 0.1, 2.0, 16);
        assert!(((hs16 - hs8) / hs8).abs() < 0.01);
        assert!(probe_summability(2, 0.1, 2.0, 8).stable);
        assert!(!probe_summability(2, 0.1, 1.1, 8).stable);
    }

    #[test]
    fn basis_count_matches_cube() {
        let spec = NoiseSpec { k_max: 3, ..NoiseSpec::new(1, 0) };
        let s = build_spectrum(&spec, grid()).unwrap();
        assert_eq!(s.basis_len(), 49);
        let total: f64 = s.modes().iter().map(|m| if m.k == [0, 0, 0] { m.lambda } else { 2.0 * m.lambda }).sum();
        assert!((total - s.trace()).abs() < 1e-12);
    }

    #[test]
    fn increments_are_deterministic() {
        let spec = NoiseSpec::new(3, 42);
        let s = build_spectrum(&spec, grid()).unwrap();
        let mut ws = Spectral::new(grid());
        let a = sample_increment(&s, 1e-3, 7, &mut ws).unwrap();
        let b = sample_increment(&s, 1e-3, 7, &mut ws).unwrap();
        let c = sample_increment(&s, 1e-3, 8, &mut ws).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(sample_increment(&s, 0.0, 0, &mut ws).is_err());
    }

    #[test]
    fn refined_ledger_sums_fine_steps() {
        let g = grid();
        let spec = NoiseSpec::new(1, 5);
        let mut ws = Spectral::new(g);
        let coarse = NoiseLedger::lazy_refined(spec, g, 2e-3, 4, 2);
        let fine = NoiseLedger::lazy(spec, g, 1e-3, 8);
        let c = coarse.increment(1, &mut ws).unwrap();
        let a = fine.increment(2, &mut ws).unwrap();
        let b = fine.increment(3, &mut ws).unwrap();
        for j in 0..g.len() {
            assert!((c.comp(0)[j] - a.comp(0)[j] - b.comp(0)[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_ledger_is_degenerate() {
        let g = grid();
        let spec = NoiseSpec::new(1, 1);
        let incs = (0..10).map(|_| VectorField::zeros(g, 1)).collect();
        let ledger = NoiseLedger::from_increments(spec, g, 1e-3, incs);
        let mut ws = Spectral::new(g);
        let rep = covariance_diagnostic(&ledger, &mut ws, None).unwrap();
        assert_eq!(rep.trace_estimate, 0.0);
        assert!(rep.degenerate);
        assert!(rep.too_few_samples);
    }
}
