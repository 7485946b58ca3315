//! Radix-2 complex FFT over the axes of a row-major hypercubic array.
//!
//! Only power-of-two lengths are supported; that is all the torus grid needs.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
// unused when another crate in the graph links std
#[allow(unused_imports)]
use num_traits::Float;

/// Precomputed twiddles and bit-reversal table for one transform length.
#[derive(Debug, Clone)]
pub struct Fft1d {
    len: usize,
    twiddles: Vec<Complex64>,
    twiddles_inv: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Fft1d {
    /// Panics if `len` is not a power of two.
    pub fn new(len: usize) -> Self {
        assert!(len.is_power_of_two(), "fft length {len} is not a power of two");
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles: Vec<Complex64> = (0..len / 2)
            .map(|j| {
                let a = -2.0 * PI * j as f64 / len as f64;
                Complex64::new(a.cos(), a.sin())
            })
            .collect();
        let twiddles_inv = twiddles.iter().map(|w| w.conj()).collect();
        Self { len, twiddles, twiddles_inv, bitrev }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn table(&self, inverse: bool) -> &[Complex64] {
        if inverse {
            &self.twiddles_inv
        } else {
            &self.twiddles
        }
    }

    /// Unnormalised in-place transform. `inverse` flips the exponent sign.
    pub fn process(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.len;
        debug_assert_eq!(data.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                data.swap(i, j);
            }
        }
        let tw = self.table(inverse);
        let mut half = 1;
        while half < n {
            let stride = n / (2 * half);
            for pair in data.chunks_exact_mut(2 * half) {
                let (a, b) = pair.split_at_mut(half);
                for (j, (x, y)) in a.iter_mut().zip(b.iter_mut()).enumerate() {
                    let t = *y * tw[j * stride];
                    *y = *x - t;
                    *x += t;
                }
            }
            half *= 2;
        }
    }

    /// Transforms `block` interleaved sequences at once: element `i` of
    /// sequence `b` sits at `data[i * block + b]`.
    pub fn process_blocks(&self, data: &mut [Complex64], block: usize, inverse: bool) {
        let n = self.len;
        debug_assert_eq!(data.len(), n * block);
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                for b in 0..block {
                    data.swap(i * block + b, j * block + b);
                }
            }
        }
        let tw = self.table(inverse);
        let mut half = 1;
        while half < n {
            let stride = n / (2 * half);
            for start in (0..n).step_by(2 * half) {
                for j in 0..half {
                    let w = tw[j * stride];
                    let lo = (start + j) * block;
                    let hi = (start + j + half) * block;
                    let (head, tail) = data.split_at_mut(hi);
                    let a_row = &mut head[lo..lo + block];
                    let b_row = &mut tail[..block];
                    for (a, b) in a_row.iter_mut().zip(b_row.iter_mut()) {
                        let t = *b * w;
                        *b = *a - t;
                        *a += t;
                    }
                }
            }
            half *= 2;
        }
    }
}

/// Multi-dimensional transform on an `n^dim` row-major array.
#[derive(Debug, Clone)]
pub struct FftNd {
    dim: usize,
    plan: Fft1d,
}

impl FftNd {
    pub fn new(dim: usize, n: usize) -> Self {
        Self { dim, plan: Fft1d::new(n) }
    }

    /// Unnormalised transform along every axis.
    pub fn process(&mut self, data: &mut [Complex64], inverse: bool) {
        let n = self.plan.len();
        let total = n.pow(self.dim as u32);
        debug_assert_eq!(data.len(), total);
        for axis in 0..self.dim {
            // stride of this axis in row-major order (axis 0 slowest)
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                for chunk in data.chunks_exact_mut(n) {
                    self.plan.process(chunk, inverse);
                }
            } else {
                for chunk in data.chunks_exact_mut(stride * n) {
                    self.plan.process_blocks(chunk, stride, inverse);
                }
            }
        }
    }
}
