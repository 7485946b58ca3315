//! Spectral differential operators on the unit torus.
//!
//! A [`Spectral`] workspace owns the FFT plan and scratch buffers for one
//! grid. Workspaces are cheap to clone; give each worker its own.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::FftNd;
use crate::field::{inner, ScalarField, SpectralCoeffs, TorusGrid, VectorField};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone)]
pub struct Spectral {
    grid: TorusGrid,
    fft: FftNd,
    buf: Vec<Complex64>,
    /// `4 pi^2 |k|^2`
    k2: Vec<f64>,
    /// `2 pi k_axis` with the Nyquist wave number zeroed.
    kaxis: Vec<Vec<f64>>,
    /// 2/3-rule mask: true where every `|k_i| <= N/3`.
    keep: Vec<bool>,
    /// Flat index of `-k` for every `k`.
    neg: Vec<usize>,
}

impl Spectral {
    pub fn new(grid: TorusGrid) -> Self {
        let len = grid.len();
        let n = grid.points() as i64;
        let mut k2 = vec![0.0; len];
        let mut kaxis = vec![vec![0.0; len]; grid.dim()];
        let mut keep = vec![true; len];
        let mut neg = vec![0; len];
        for i in 0..len {
            let k = grid.wavevector(i);
            neg[i] = grid.index_of_wavevector([-k[0], -k[1], -k[2]]);
            let mut s = 0.0;
            for axis in 0..grid.dim() {
                let ka = k[axis];
                s += (ka * ka) as f64;
                kaxis[axis][i] = if ka == -n / 2 { 0.0 } else { 2.0 * PI * ka as f64 };
                if 3 * ka.abs() > n {
                    keep[i] = false;
                }
            }
            k2[i] = 4.0 * PI * PI * s;
        }
        Self { grid, fft: FftNd::new(grid.dim(), grid.points()), buf: vec![ZERO; len], k2, kaxis, keep, neg }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// `4 pi^2 |k|^2` per coefficient.
    pub fn k_squared(&self) -> &[f64] {
        &self.k2
    }

    /// Normalised forward transform of nodal values.
    pub fn forward_into(&mut self, values: &[f64], out: &mut [Complex64]) {
        let scale = 1.0 / values.len() as f64;
        for (o, &v) in out.iter_mut().zip(values) {
            *o = Complex64::new(v, 0.0);
        }
        self.fft.process(out, false);
        for o in out.iter_mut() {
            *o *= scale;
        }
    }

    /// Two real fields with one complex transform.
    pub fn forward_pair_into(&mut self, a: &[f64], b: &[f64], out_a: &mut [Complex64], out_b: &mut [Complex64]) {
        let len = a.len();
        let scale = 1.0 / len as f64;
        for i in 0..len {
            self.buf[i] = Complex64::new(a[i], b[i]);
        }
        self.fft.process(&mut self.buf, false);
        for i in 0..len {
            let j = self.neg[i];
            let z = self.buf[i];
            let zc = self.buf[j].conj();
            out_a[i] = (z + zc) * (0.5 * scale);
            // (z - zc) / 2i
            let d = z - zc;
            out_b[i] = Complex64::new(d.im, -d.re) * (0.5 * scale);
        }
    }

    /// Inverse transform; discards the imaginary part.
    pub fn inverse_into(&mut self, coeffs: &[Complex64], out: &mut [f64]) {
        self.buf.copy_from_slice(coeffs);
        self.fft.process(&mut self.buf, true);
        for (o, z) in out.iter_mut().zip(&self.buf) {
            *o = z.re;
        }
    }

    /// Inverse of two Hermitian spectra with one complex transform.
    pub fn inverse_pair_into(&mut self, a: &[Complex64], b: &[Complex64], out_a: &mut [f64], out_b: &mut [f64]) {
        for i in 0..a.len() {
            self.buf[i] = a[i] + Complex64::new(-b[i].im, b[i].re);
        }
        self.fft.process(&mut self.buf, true);
        for i in 0..a.len() {
            out_a[i] = self.buf[i].re;
            out_b[i] = self.buf[i].im;
        }
    }

    pub fn transform(&mut self, f: &ScalarField) -> SpectralCoeffs {
        let mut out = vec![ZERO; f.grid().len()];
        self.forward_into(f.values(), &mut out);
        SpectralCoeffs::new(f.grid(), out).expect("grid-sized buffer")
    }

    pub fn synthesize(&mut self, c: &SpectralCoeffs) -> ScalarField {
        let mut out = vec![0.0; c.grid().len()];
        self.inverse_into(c.coeffs(), &mut out);
        ScalarField::from_raw(c.grid(), out)
    }

    fn check(&self, f: &ScalarField) -> Result<()> {
        if f.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        f.check_finite()
    }

    /// Spectral multiplier `-4 pi^2 |k|^2`.
    pub fn laplacian(&mut self, f: &ScalarField) -> Result<ScalarField> {
        self.check(f)?;
        let mut c = vec![ZERO; f.grid().len()];
        self.forward_into(f.values(), &mut c);
        for (z, k2) in c.iter_mut().zip(&self.k2) {
            *z *= -k2;
        }
        let mut out = vec![0.0; c.len()];
        self.inverse_into(&c, &mut out);
        Ok(ScalarField::from_raw(self.grid, out))
    }

    /// Spectral multiplier `2 pi i k` per axis.
    pub fn gradient(&mut self, f: &ScalarField) -> Result<VectorField> {
        self.check(f)?;
        let mut c = vec![ZERO; f.grid().len()];
        self.forward_into(f.values(), &mut c);
        let mut comps = vec![vec![0.0; c.len()]; self.grid.dim()];
        self.gradient_from_coeffs(&c, &mut comps);
        Ok(VectorField::from_raw(self.grid, comps))
    }

    /// Gradient components from coefficients, two axes per transform.
    pub fn gradient_from_coeffs(&mut self, c: &[Complex64], out: &mut [Vec<f64>]) {
        let dim = self.grid.dim();
        let len = c.len();
        let mut a = vec![ZERO; len];
        let mut b = vec![ZERO; len];
        let mut axis = 0;
        while axis < dim {
            for i in 0..len {
                a[i] = c[i] * Complex64::new(0.0, self.kaxis[axis][i]);
            }
            if axis + 1 < dim {
                for i in 0..len {
                    b[i] = c[i] * Complex64::new(0.0, self.kaxis[axis + 1][i]);
                }
                let (lo, hi) = out.split_at_mut(axis + 1);
                self.inverse_pair_into(&a, &b, &mut lo[axis], &mut hi[0]);
                axis += 2;
            } else {
                self.inverse_into(&a, &mut out[axis]);
                axis += 1;
            }
        }
    }

    /// Sum of spectral partial derivatives of the components.
    pub fn divergence(&mut self, v: &VectorField) -> Result<ScalarField> {
        if v.grid() != self.grid || v.d() != self.grid.dim() {
            return Err(Error::GridMismatch);
        }
        let len = self.grid.len();
        let mut acc = vec![ZERO; len];
        let mut c = vec![ZERO; len];
        for axis in 0..self.grid.dim() {
            self.forward_into(v.comp(axis), &mut c);
            for i in 0..len {
                acc[i] += c[i] * Complex64::new(0.0, self.kaxis[axis][i]);
            }
        }
        let mut out = vec![0.0; len];
        self.inverse_into(&acc, &mut out);
        Ok(ScalarField::from_raw(self.grid, out))
    }

    /// Apply `(1 + factor * 4 pi^2 |k|^2)^{-1}`, the implicit-Euler resolvent
    /// of `factor * Laplacian`.
    pub fn apply_resolvent(&self, c: &mut [Complex64], factor: f64) {
        for (z, k2) in c.iter_mut().zip(&self.k2) {
            *z /= 1.0 + factor * k2;
        }
    }

    /// Zero every coefficient outside the 2/3-rule band.
    pub fn dealias(&self, c: &mut [Complex64]) {
        for (z, &keep) in c.iter_mut().zip(&self.keep) {
            if !keep {
                *z = ZERO;
            }
        }
    }

    /// Multiply coefficients by `-4 pi^2 |k|^2`.
    pub fn apply_laplacian(&self, c: &mut [Complex64]) {
        for (z, k2) in c.iter_mut().zip(&self.k2) {
            *z *= -k2;
        }
    }

    /// Residual of the weighted weak-derivative identity
    /// `sum_i |<phi g_i, v> + <d_i phi, u v> + <phi u, d_i v>|`.
    pub fn weighted_derivative_residual(
        &mut self,
        phi: &ScalarField,
        u: &ScalarField,
        g: &VectorField,
        v: &ScalarField,
    ) -> Result<f64> {
        let grid = self.grid;
        if [phi.grid(), u.grid(), g.grid(), v.grid()].iter().any(|&x| x != grid) || g.d() != grid.dim() {
            return Err(Error::GridMismatch);
        }
        let dphi = self.gradient(phi)?;
        let dv = self.gradient(v)?;
        let len = grid.len();
        let mut total = 0.0;
        for i in 0..grid.dim() {
            let t1: Vec<f64> = (0..len).map(|j| phi.values()[j] * g.comp(i)[j]).collect();
            let t2: Vec<f64> = (0..len).map(|j| dphi.comp(i)[j] * u.values()[j]).collect();
            let t3: Vec<f64> = (0..len).map(|j| phi.values()[j] * u.values()[j]).collect();
            let r = inner(&t1, v.values()) + inner(&t2, v.values()) + inner(&t3, dv.comp(i));
            total += r.abs();
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::mean_integral;

    fn grid() -> TorusGrid {
        TorusGrid::new(2, 32).unwrap()
    }

    #[test]
    fn constants_are_harmonic() {
        let mut s = Spectral::new(grid());
        let f = ScalarField::constant(grid(), 7.0);
        assert!(s.laplacian(&f).unwrap().sup_norm() < 1e-12);
        assert!(s.gradient(&ScalarField::constant(grid(), 3.0)).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn cosine_eigenfunction() {
        let g = grid();
        let mut s = Spectral::new(g);
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos()).unwrap();
        let lap = s.laplacian(&f).unwrap();
        for (a, b) in lap.values().iter().zip(f.values()) {
            assert!((a + 4.0 * PI * PI * b).abs() < 1e-12 * 4.0 * PI * PI);
        }
        assert!(mean_integral(&lap).abs() < 1e-12);
    }

    #[test]
    fn sine_derivative() {
        let g = grid();
        let mut s = Spectral::new(g);
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[1]).sin()).unwrap();
        let d = s.gradient(&f).unwrap();
        for j in 0..g.len() {
            let x = g.coords(j);
            assert!(d.comp(0)[j].abs() < 1e-12);
            assert!((d.comp(1)[j] - 2.0 * PI * (2.0 * PI * x[1]).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_transforms_match_single() {
        let g = grid();
        let mut s = Spectral::new(g);
        let a = ScalarField::from_fn(g, |x| (x[0] * 3.0).sin() + x[1]).unwrap();
        let b = ScalarField::from_fn(g, |x| (x[1] * 5.0).cos() * x[0]).unwrap();
        let ca = s.transform(&a);
        let cb = s.transform(&b);
        let mut pa = vec![ZERO; g.len()];
        let mut pb = vec![ZERO; g.len()];
        s.forward_pair_into(a.values(), b.values(), &mut pa, &mut pb);
        for i in 0..g.len() {
            assert!((pa[i] - ca.coeffs()[i]).norm() < 1e-14);
            assert!((pb[i] - cb.coeffs()[i]).norm() < 1e-14);
        }
        let mut ra = vec![0.0; g.len()];
        let mut rb = vec![0.0; g.len()];
        s.inverse_pair_into(&pa, &pb, &mut ra, &mut rb);
        for i in 0..g.len() {
            assert!((ra[i] - a.values()[i]).abs() < 1e-12);
            assert!((rb[i] - b.values()[i]).abs() < 1e-12);
        }
    }
}
