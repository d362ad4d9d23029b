//! FFT-backed products with block-Toeplitz matrices on uniform grids.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

/// Linear map `u ↦ (Σ_j K(j − i) u_j)_i` on a grid of `n[0] × n[1]` nodes.
pub struct Toeplitz {
    n: [usize; 2],
    m: [usize; 2],
    kernel_hat: Vec<Complex<f64>>,
    fwd: [Arc<dyn Fft<f64>>; 2],
    inv: [Arc<dyn Fft<f64>>; 2],
}

impl Toeplitz {
    pub fn new<K: Fn(isize, isize) -> f64>(grid: &Grid, kernel: K) -> Self {
        let n = grid.n;
        let m = [
            (2 * n[0]).next_power_of_two(),
            if grid.dim == 2 { (2 * n[1]).next_power_of_two() } else { 1 },
        ];
        let mut planner = FftPlanner::new();
        let fwd = [planner.plan_fft_forward(m[0]), planner.plan_fft_forward(m[1])];
        let inv = [planner.plan_fft_inverse(m[0]), planner.plan_fft_inverse(m[1])];
        let mut buf = vec![Complex::new(0.0, 0.0); m[0] * m[1]];
        let r0 = n[0] as isize - 1;
        let r1 = if grid.dim == 2 { n[1] as isize - 1 } else { 0 };
        for k1 in -r1..=r1 {
            for k0 in -r0..=r0 {
                let a = (-k0).rem_euclid(m[0] as isize) as usize;
                let b = (-k1).rem_euclid(m[1] as isize) as usize;
                buf[a + m[0] * b] = Complex::new(kernel(k0, k1), 0.0);
            }
        }
        let mut t = Toeplitz { n, m, kernel_hat: Vec::new(), fwd, inv };
        t.transform(&mut buf, false);
        t.kernel_hat = buf;
        t
    }

    fn transform(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let plans = if inverse { &self.inv } else { &self.fwd };
        let [m0, m1] = self.m;
        for row in buf.chunks_mut(m0) {
            plans[0].process(row);
        }
        if m1 > 1 {
            let mut col = vec![Complex::new(0.0, 0.0); m1];
            for i in 0..m0 {
                for j in 0..m1 {
                    col[j] = buf[i + m0 * j];
                }
                plans[1].process(&mut col);
                for j in 0..m1 {
                    buf[i + m0 * j] = col[j];
                }
            }
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let [n0, n1] = self.n;
        let [m0, m1] = self.m;
        assert_eq!(u.len(), n0 * n1);
        let mut buf = vec![Complex::new(0.0, 0.0); m0 * m1];
        for j in 0..n1 {
            for i in 0..n0 {
                buf[i + m0 * j] = Complex::new(u[i + n0 * j], 0.0);
            }
        }
        self.transform(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.transform(&mut buf, true);
        let scale = 1.0 / (m0 * m1) as f64;
        let mut out = vec![0.0; n0 * n1];
        for j in 0..n1 {
            for i in 0..n0 {
                out[i + n0 * j] = buf[i + m0 * j].re * scale;
            }
        }
        out
    }
}
