//! Commutator functionals `A_n(X, μ, ψ) = ½ ∬_{x≠y} ∇^{⊗n} g(x − y) : (ψ(x) − ψ(y))^{⊗n}`
//! against the fluctuation `Σ δ_{x_i} − N μ` on both sides.

use super::Configuration;
use crate::error::{Error, Result};
use crate::grid::GridMeasure;
use crate::kernel::RieszParams;
use crate::quad::{compensated_sum, CompensatedSum, GaussLegendre};

/// `g^{(n)}(u)` for the one-dimensional kernel.
fn kernel_derivative(s: f64, n: usize, u: f64) -> f64 {
    let a = u.abs();
    let mut c = 1.0;
    for k in 1..n {
        c *= s + k as f64;
    }
    let sign = if n % 2 == 1 { -u.signum() } else { 1.0 };
    sign * c * a.powf(-s - n as f64)
}

struct Integrand<'a, F: Fn(f64) -> f64 + Sync> {
    s: f64,
    n: usize,
    psi: &'a F,
}

impl<F: Fn(f64) -> f64 + Sync> Integrand<'_, F> {
    #[inline]
    fn with_values(&self, x: f64, px: f64, y: f64, py: f64) -> f64 {
        let d = x - y;
        if d == 0.0 {
            return 0.0;
        }
        kernel_derivative(self.s, self.n, d) * (px - py).powi(self.n as i32)
    }

    fn eval(&self, x: f64, px: f64, y: f64) -> f64 {
        self.with_values(x, px, y, (self.psi)(y))
    }

    /// `∫_a^b k(x, y) dy` with geometric grading toward the end of `[a, b]` nearest to `x`
    /// (and a split at `x` when it lies inside).
    fn near_integral(&self, rule: &GaussLegendre, x: f64, px: f64, a: f64, b: f64) -> f64 {
        let levels = 16;
        if x > a && x < b {
            return rule.integrate_graded(0.0, b - x, levels, 0.3, |u| self.eval(x, px, x + u))
                + rule.integrate_graded(0.0, x - a, levels, 0.3, |u| self.eval(x, px, x - u));
        }
        if x <= a {
            rule.integrate_graded(0.0, b - a, levels, 0.3, |u| self.eval(x, px, a + u))
        } else {
            rule.integrate_graded(0.0, b - a, levels, 0.3, |u| self.eval(x, px, b - u))
        }
    }
}

/// `A_n(X, μ, ψ)` for `n ∈ {1, 2, 3}` in one dimension: the pair sum plus the point–measure
/// and measure–measure integrals, the latter with graded rules on neighbouring cells.
pub fn commutator_an<F: Fn(f64) -> f64 + Sync>(
    config: &Configuration,
    mu: &GridMeasure,
    psi: F,
    n: usize,
    params: &RieszParams,
) -> Result<f64> {
    config.check_params(params)?;
    config.check_distinct()?;
    if !(1..=3).contains(&n) {
        return Err(Error::Range(format!("commutator order must be 1, 2 or 3, got {n}")));
    }
    if params.d != 1 || mu.grid.dim != 1 {
        return Err(Error::Unsupported("commutator functionals are implemented for d = 1 only".into()));
    }
    let k = Integrand { s: params.s, n, psi: &psi };
    let xs: Vec<f64> = config.points.iter().map(|p| p[0]).collect();
    let ps: Vec<f64> = xs.iter().map(|&x| psi(x)).collect();
    let np = xs.len() as f64;

    let mut pairs = CompensatedSum::new();
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            pairs.add(k.with_values(xs[i], ps[i], xs[j], ps[j]));
        }
    }

    let g = &mu.grid;
    let h = g.h;
    let cells: Vec<usize> = (0..g.len()).filter(|&c| mu.mass[c] > 0.0).collect();
    let far_rule = GaussLegendre::cached(6);
    let near_rule = GaussLegendre::cached(8);
    // Gauss nodes of every occupied cell with ψ cached: (x, ψ(x), weight × density).
    let nodes: Vec<Vec<(f64, f64, f64)>> = cells
        .iter()
        .map(|&c| {
            let rho = mu.density(c);
            let xc = g.x(c);
            far_rule
                .nodes
                .iter()
                .zip(&far_rule.weights)
                .map(|(t, w)| {
                    let x = xc + 0.5 * h * t;
                    (x, psi(x), 0.5 * h * w * rho)
                })
                .collect()
        })
        .collect();

    let mut cross = CompensatedSum::new();
    for (&x, &px) in xs.iter().zip(&ps) {
        for (ci, &c) in cells.iter().enumerate() {
            let a = g.x(c) - 0.5 * h;
            let b = a + h;
            let gap = (a - x).max(x - b).max(0.0);
            if gap > h {
                cross.add(nodes[ci].iter().map(|&(y, py, w)| w * k.with_values(x, px, y, py)).sum());
            } else {
                cross.add(mu.density(c) * k.near_integral(&near_rule, x, px, a, b));
            }
        }
    }

    let outer = GaussLegendre::cached(12);
    let mut self_parts = Vec::with_capacity(cells.len());
    for (ci, &c) in cells.iter().enumerate() {
        let mut acc = CompensatedSum::new();
        for (cj, &d) in cells.iter().enumerate() {
            if c.abs_diff(d) > 1 {
                let mut v = 0.0;
                for &(x, px, wx) in &nodes[ci] {
                    for &(y, py, wy) in &nodes[cj] {
                        v += wx * wy * k.with_values(x, px, y, py);
                    }
                }
                acc.add(v);
            } else {
                let a = g.x(d) - 0.5 * h;
                let rho_y = mu.density(d);
                let xc = g.x(c);
                let v = 0.5 * h * mu.density(c) * outer
                    .nodes
                    .iter()
                    .zip(&outer.weights)
                    .map(|(t, w)| {
                        let x = xc + 0.5 * h * t;
                        w * rho_y * k.near_integral(&near_rule, x, psi(x), a, a + h)
                    })
                    .sum::<f64>();
                acc.add(v);
            }
        }
        self_parts.push(acc.value());
    }
    let mm = compensated_sum(self_parts);
    Ok(pairs.value() - np * cross.value() + 0.5 * np * np * mm)
}
