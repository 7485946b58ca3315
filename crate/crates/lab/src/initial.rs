//! Initial data from the `[initial]` block.

use std::f64::consts::PI;

use phasefield_core::diagnostics::random_band_limited;
use phasefield_core::models::ModelSpec;
use phasefield_core::{ScalarField, TorusGrid, VectorField};

use crate::config::{CInit, PhiInit};
use crate::error::Result;

/// Distance on the unit torus.
pub fn torus_distance(x: [f64; 3], center: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, c) in x.iter().zip(center) {
        let mut d = (a - c).abs();
        d = d.min(1.0 - d);
        s += d * d;
    }
    s.sqrt()
}

/// `C^inf` step: 0 for `s <= 0`, 1 for `s >= 1`.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / s).exp();
    let b = (-1.0 / (1.0 - s)).exp();
    a / (a + b)
}

/// `s^p / (s^p + (1 - s)^p)` on `[0, 1]`: vanishes to order `p` at 0.
pub fn poly_step(s: f64, p: u32) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let (a, b) = (s.powi(p as i32), (1.0 - s).powi(p as i32));
    a / (a + b)
}

pub fn phi_field(init: &PhiInit, grid: TorusGrid) -> Result<ScalarField> {
    let f = match init {
        PhiInit::Constant { value } => ScalarField::constant(grid, *value),
        PhiInit::Cosine { mean, amplitude, k } => ScalarField::from_fn(grid, |x| {
            let arg: f64 = k.iter().zip(x).map(|(k, x)| *k as f64 * x).sum();
            mean + amplitude * (2.0 * PI * arg).cos()
        })?,
        PhiInit::Bump { center, width, height, floor } => ScalarField::from_fn(grid, |x| {
            let r = torus_distance(x, center) / width;
            floor + height * (1.0 - r * r).max(0.0)
        })?,
        PhiInit::VanishingDisk { center, radius, transition, height, order } => ScalarField::from_fn(grid, |x| {
            let s = (torus_distance(x, center) - radius) / transition;
            height * order.map_or_else(|| smooth_step(s), |p| poly_step(s, p))
        })?,
        PhiInit::Random { seed, floor, height } => {
            random_band_limited(grid, 3, *seed).map(|w| floor + height * (1.0 + w) / 2.0)
        }
    };
    Ok(f)
}

pub fn c_field(init: &CInit, grid: TorusGrid, model: &ModelSpec) -> Result<VectorField> {
    let d = model.d();
    let mut comps = Vec::with_capacity(d);
    for i in 0..d {
        let (lo, hi) = (model.lower()[i], model.upper()[i]);
        let f = match init {
            CInit::Uniform { fraction } => ScalarField::constant(grid, lo + (hi - lo) * fraction),
            CInit::Wave { mean, amplitude } => ScalarField::from_fn(grid, |x| {
                let s = x[0] + if grid.dim() > 1 { x[1] } else { 0.0 } + i as f64 / d as f64;
                lo + (hi - lo) * (mean + amplitude * (2.0 * PI * s).sin())
            })?,
        };
        comps.push(f);
    }
    Ok(VectorField::from_scalars(comps)?)
}
