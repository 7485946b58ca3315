//! Scalar and vector fields on the flat unit torus with normalised measure.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
// unused when another crate in the graph links std
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};

/// Uniform grid on `T^n = [0,1)^n` with `points` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    dim: usize,
    points: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, points: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} outside 1..=3")));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "{points} points per axis; need a power of two >= 8"
            )));
        }
        Ok(Self { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.points as f64
    }

    /// Total node count `N^n`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one node under the normalised Lebesgue measure.
    pub fn node_weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// The existence theory is stated for `n >= 2`; one-dimensional runs are
    /// allowed but flagged.
    pub fn outside_theory(&self) -> bool {
        self.dim < 2
    }

    /// Multi-index of a flat node index, axis 0 slowest.
    pub fn multi_index(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for axis in (0..self.dim).rev() {
            out[axis] = idx % self.points;
            idx /= self.points;
        }
        out
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let h = self.spacing();
        [m[0] as f64 * h, m[1] as f64 * h, m[2] as f64 * h]
    }

    /// Signed wave number of a 1-d index, in `[-N/2, N/2)`.
    pub fn wavenumber(&self, j: usize) -> i64 {
        let n = self.points as i64;
        let j = j as i64;
        if j < n / 2 {
            j
        } else {
            j - n
        }
    }

    pub fn wavevector(&self, idx: usize) -> [i64; 3] {
        let m = self.multi_index(idx);
        let mut k = [0i64; 3];
        for axis in 0..self.dim {
            k[axis] = self.wavenumber(m[axis]);
        }
        k
    }

    /// Flat index of the wave vector `k` (components taken modulo N).
    pub fn index_of_wavevector(&self, k: [i64; 3]) -> usize {
        let n = self.points as i64;
        let mut idx = 0usize;
        for &kk in k.iter().take(self.dim) {
            idx = idx * self.points + kk.rem_euclid(n) as usize;
        }
        idx
    }
}

pub(crate) fn check_finite(field: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(node) => Err(Error::NonFinite { field, node }),
        None => Ok(()),
    }
}

/// Pairwise (cascade) summation; order independent up to rounding of a
/// balanced tree.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        check_finite("scalar field", &values)?;
        Ok(Self { grid, values })
    }

    /// Skips the finiteness scan; for values produced by operators on
    /// already validated fields.
    pub(crate) fn from_raw(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_fn(grid: TorusGrid, mut f: impl FnMut([f64; 3]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite("scalar field", &self.values)
    }

    /// Like `check_finite`, naming the field in the error.
    pub fn check_finite_as(&self, name: &'static str) -> Result<()> {
        check_finite(name, &self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `<self, other>` in `L^2(T^n)` with normalised measure.
    pub fn inner(&self, other: &Self) -> f64 {
        inner(&self.values, &other.values)
    }

    pub fn norm_sq(&self) -> f64 {
        inner(&self.values, &self.values)
    }
}

/// Normalised-measure inner product of two nodal arrays.
pub fn inner(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&prods) / a.len() as f64
}

/// Mean of nodal values: the integral against the normalised measure.
pub fn mean_integral(f: &ScalarField) -> f64 {
    pairwise_sum(&f.values) / f.values.len() as f64
}

pub fn mean_of(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: TorusGrid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.is_empty() {
            return Err(invalid("components", "a vector field needs d >= 1"));
        }
        for c in &comps {
            if c.len() != grid.len() {
                return Err(Error::GridMismatch);
            }
            check_finite("vector field", c)?;
        }
        Ok(Self { grid, comps })
    }

    pub(crate) fn from_raw(grid: TorusGrid, comps: Vec<Vec<f64>>) -> Self {
        Self { grid, comps }
    }

    pub fn check_finite_as(&self, name: &'static str) -> Result<()> {
        self.comps.iter().try_for_each(|c| check_finite(name, c))
    }

    pub fn zeros(grid: TorusGrid, d: usize) -> Self {
        Self { grid, comps: vec![vec![0.0; grid.len()]; d.max(1)] }
    }

    pub fn from_scalars(fields: Vec<ScalarField>) -> Result<Self> {
        let grid = fields.first().ok_or_else(|| invalid("components", "empty"))?.grid;
        if fields.iter().any(|f| f.grid != grid) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, comps: fields.into_iter().map(|f| f.values).collect() })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn d(&self) -> usize {
        self.comps.len()
    }

    pub fn comp(&self, i: usize) -> &[f64] {
        &self.comps[i]
    }

    pub fn comp_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.comps[i]
    }

    pub fn comps(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn component(&self, i: usize) -> ScalarField {
        ScalarField::from_raw(self.grid, self.comps[i].clone())
    }

    /// Nodal Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        let values = (0..self.grid.len())
            .map(|j| self.comps.iter().map(|c| c[j] * c[j]).sum::<f64>().sqrt())
            .collect();
        ScalarField::from_raw(self.grid, values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.magnitude().max()
    }

    pub fn norm_sq(&self) -> f64 {
        self.comps.iter().map(|c| inner(c, c)).sum()
    }

    pub fn inner(&self, other: &Self) -> f64 {
        self.comps.iter().zip(&other.comps).map(|(a, b)| inner(a, b)).sum()
    }
}

/// Normalised Fourier coefficients; coefficient of `k = 0` is the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralCoeffs {
    pub fn new(grid: TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// Largest violation of `c(-k) = conj(c(k))`.
    pub fn hermitian_defect(&self) -> f64 {
        let g = self.grid;
        (0..g.len())
            .map(|i| {
                let k = g.wavevector(i);
                let j = g.index_of_wavevector([-k[0], -k[1], -k[2]]);
                (self.coeffs[i] - self.coeffs[j].conj()).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Sum of `|c_k|^2`; equals the nodal mean square (discrete Parseval).
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Radial truncation `v` if `|v| <= tau`, else `tau v / |v|`.
pub fn grad_cap(v: &VectorField, tau: f64) -> Result<VectorField> {
    if !(tau > 0.0) {
        return Err(invalid("tau", "gradient cap must be positive"));
    }
    let mut out = v.clone();
    cap_in_place(&mut out.comps, tau);
    Ok(out)
}

/// In-place cap; returns the number of capped nodes.
pub(crate) fn cap_in_place(comps: &mut [Vec<f64>], tau: f64) -> usize {
    if tau.is_infinite() {
        return 0;
    }
    let len = comps[0].len();
    let mut count = 0;
    for j in 0..len {
        let m = comps.iter().map(|c| c[j] * c[j]).sum::<f64>().sqrt();
        if m > tau {
            count += 1;
            let s = tau / m;
            for c in comps.iter_mut() {
                c[j] *= s;
            }
        }
    }
    count
}

/// `e^{2 pi i k.x}` evaluated at a node, split into cos/sin.
pub(crate) fn phase(grid: &TorusGrid, idx: usize, k: [i64; 3]) -> (f64, f64) {
    let x = grid.coords(idx);
    let a = 2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1] + k[2] as f64 * x[2]);
    (a.cos(), a.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(TorusGrid::new(2, 6).is_err());
        assert!(TorusGrid::new(2, 4).is_err());
        assert!(TorusGrid::new(2, 48).is_err());
        assert!(TorusGrid::new(4, 8).is_err());
        let g = TorusGrid::new(2, 64).unwrap();
        assert_eq!(g.spacing() * g.points() as f64, 1.0);
        assert!(!g.outside_theory());
        assert!(TorusGrid::new(1, 8).unwrap().outside_theory());
    }

    #[test]
    fn constant_has_unit_quadrature() {
        let g = TorusGrid::new(2, 16).unwrap();
        assert_eq!(mean_integral(&ScalarField::constant(g, 1.0)), 1.0);
        assert_eq!(mean_integral(&ScalarField::constant(g, 7.5)), 7.5);
    }

    #[test]
    fn wavevector_round_trip() {
        let g = TorusGrid::new(3, 8).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.index_of_wavevector(g.wavevector(i)), i);
        }
    }

    #[test]
    fn cap_projects_radially() {
        let g = TorusGrid::new(1, 8).unwrap();
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        a[3] = 5.0;
        b[5] = 1.0;
        let v = VectorField::new(g, vec![a, b]).unwrap();
        let capped = grad_cap(&v, 2.0).unwrap();
        assert_eq!(capped.comp(0)[3], 2.0);
        assert_eq!(capped.comp(1)[3], 0.0);
        assert_eq!(capped.comp(1)[5], 1.0);
        assert!(grad_cap(&v, 0.0).is_err());
        assert!(grad_cap(&v, -1.0).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let g = TorusGrid::new(1, 8).unwrap();
        let mut v = vec![0.0; 8];
        v[6] = f64::NAN;
        assert_eq!(ScalarField::new(g, v), Err(Error::NonFinite { field: "scalar field", node: 6 }));
    }
}
