//! Principal-value evaluation of `(−Δ)^α f = c_{d,α} P.V.∫ (f(x) − f(x+y)) |y|^{−d−2α} dy`.

use crate::conv::Toeplitz;
use crate::error::{Error, Result};
use crate::grid::SampledFunction;

use super::weights::{box_constants, outside_tail_integral, KernelCells};

/// Half-width, in cells, of the zone where the second-order Taylor polynomial is subtracted.
const NEAR: isize = 4;

/// Precomputed weights for evaluating `(−Δ)^α` on one grid.
pub struct FracLaplacian {
    alpha: f64,
    c_dalpha: f64,
    cells: KernelCells,
    far_const: f64,
    quad_const: f64,
    far_conv: Option<Toeplitz>,
    grid: crate::grid::Grid,
}

impl FracLaplacian {
    pub fn new(grid: &crate::grid::Grid, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Range(format!("α = {alpha} must lie in (0, 1)")));
        }
        let cells = KernelCells::new(grid, alpha);
        let rn = (NEAR as f64 + 0.5) * grid.h;
        let (far_const, quad_const) = box_constants(grid.dim, alpha, rn);
        let c_dalpha = c_dalpha(grid.dim, alpha);
        Ok(FracLaplacian {
            alpha,
            c_dalpha,
            cells,
            far_const,
            quad_const,
            far_conv: None,
            grid: grid.clone(),
        })
    }

    fn far_weight(&self, k0: isize, k1: isize) -> f64 {
        if k0.abs().max(k1.abs()) > NEAR {
            self.cells.cell_at(k0, k1)
        } else {
            0.0
        }
    }

    fn check(&self, f: &SampledFunction) -> Result<()> {
        if f.grid != self.grid {
            return Err(Error::Invalid("function grid differs from the operator grid".into()));
        }
        f.require_decay()
    }

    /// Near-field, Taylor-corrected part plus the closed-form complement, at node `(i, j)`.
    fn local_part(&self, f: &SampledFunction, i: isize, j: isize) -> f64 {
        let h = self.grid.h;
        let f0 = f.at(i, j);
        let mut acc = self.far_const * f0;
        if self.grid.dim == 1 {
            let d1 = (f.at(i + 1, 0) - f.at(i - 1, 0)) / (2.0 * h);
            let d2 = (f.at(i + 1, 0) - 2.0 * f0 + f.at(i - 1, 0)) / (h * h);
            acc -= 0.5 * d2 * self.quad_const;
            for k in -NEAR..=NEAR {
                if k == 0 {
                    continue;
                }
                let y = k as f64 * h;
                let taylor = f0 + d1 * y + 0.5 * d2 * y * y;
                acc += self.cells.cell_at(k, 0) * (taylor - f.at(i + k, 0));
            }
        } else {
            let fx = (f.at(i + 1, j) - f.at(i - 1, j)) / (2.0 * h);
            let fy = (f.at(i, j + 1) - f.at(i, j - 1)) / (2.0 * h);
            let fxx = (f.at(i + 1, j) - 2.0 * f0 + f.at(i - 1, j)) / (h * h);
            let fyy = (f.at(i, j + 1) - 2.0 * f0 + f.at(i, j - 1)) / (h * h);
            let fxy = (f.at(i + 1, j + 1) - f.at(i + 1, j - 1) - f.at(i - 1, j + 1)
                + f.at(i - 1, j - 1))
                / (4.0 * h * h);
            acc -= 0.5 * (fxx + fyy) * self.quad_const;
            for a in -NEAR..=NEAR {
                for b in -NEAR..=NEAR {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    let (y0, y1) = (a as f64 * h, b as f64 * h);
                    let taylor = f0
                        + fx * y0
                        + fy * y1
                        + 0.5 * (fxx * y0 * y0 + 2.0 * fxy * y0 * y1 + fyy * y1 * y1);
                    acc += self.cells.cell_at(a, b) * (taylor - f.at(i + a, j + b));
                }
            }
        }
        if let Some(tail) = &f.tail {
            let rn = (NEAR as f64 + 0.5) * h;
            acc -= outside_tail_integral(&self.grid, self.alpha, tail, self.grid.coord_signed(i, j), rn);
        }
        acc
    }

    /// Value at grid node `k` by direct summation.
    pub fn at_node(&self, f: &SampledFunction, k: usize) -> Result<f64> {
        self.check(f)?;
        let (i, j) = self.grid.unflat(k);
        let (i, j) = (i as isize, j as isize);
        let mut acc = self.local_part(f, i, j);
        let g = &self.grid;
        for jj in 0..g.n[1] as isize {
            for ii in 0..g.n[0] as isize {
                let w = self.far_weight(ii - i, jj - j);
                if w != 0.0 {
                    acc -= w * f.values[g.flat(ii as usize, jj as usize)];
                }
            }
        }
        Ok(self.c_dalpha * acc)
    }

    /// Values at every grid node (far field by FFT).
    pub fn on_grid(&mut self, f: &SampledFunction) -> Result<Vec<f64>> {
        self.check(f)?;
        if self.far_conv.is_none() {
            let conv = Toeplitz::new(&self.grid, |a, b| self.far_weight(a, b));
            self.far_conv = Some(conv);
        }
        let far = self.far_conv.as_ref().expect("far convolution").apply(&f.values);
        let g = &self.grid;
        Ok((0..g.len())
            .map(|k| {
                let (i, j) = g.unflat(k);
                self.c_dalpha * (self.local_part(f, i as isize, j as isize) - far[k])
            })
            .collect())
    }
}

fn c_dalpha(dim: usize, alpha: f64) -> f64 {
    use statrs::function::gamma::gamma;
    let d = dim as f64;
    alpha * 4f64.powf(alpha) * gamma(0.5 * d + alpha)
        / (std::f64::consts::PI.powf(0.5 * d) * gamma(1.0 - alpha))
}

/// `(−Δ)^α f(x)`; off-grid points are handled by interpolating the values at the
/// surrounding nodes.
pub fn frac_laplacian_pv(f: &SampledFunction, alpha: f64, x: [f64; 2]) -> Result<f64> {
    let op = FracLaplacian::new(&f.grid, alpha)?;
    let g = &f.grid;
    if !g.contains(x) {
        return Err(Error::Invalid(format!("evaluation point {x:?} lies outside the grid")));
    }
    let u = ((x[0] - g.origin[0]) / g.h).clamp(0.0, (g.n[0] - 1) as f64);
    let v = if g.dim == 2 { ((x[1] - g.origin[1]) / g.h).clamp(0.0, (g.n[1] - 1) as f64) } else { 0.0 };
    let (i0, j0) = (u.floor() as usize, v.floor() as usize);
    let (t, w) = (u - i0 as f64, v - j0 as f64);
    let mut acc = 0.0;
    let corners: &[(usize, usize, f64)] = &[
        (0, 0, (1.0 - t) * (1.0 - w)),
        (1, 0, t * (1.0 - w)),
        (0, 1, (1.0 - t) * w),
        (1, 1, t * w),
    ];
    for &(a, b, wt) in corners {
        if wt < 1e-14 {
            continue;
        }
        let (i, j) = ((i0 + a).min(g.n[0] - 1), (j0 + b).min(g.n[1] - 1));
        acc += wt * op.at_node(f, g.flat(i, j))?;
    }
    Ok(acc)
}

/// `(−Δ)^α f` at every node of the function's grid.
pub fn frac_laplacian_grid(f: &SampledFunction, alpha: f64) -> Result<Vec<f64>> {
    FracLaplacian::new(&f.grid, alpha)?.on_grid(f)
}
