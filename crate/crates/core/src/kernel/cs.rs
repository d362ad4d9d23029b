//! Potentials of charges on `R^d` extended to `R^{d+1} = R^d × R_y`.
//!
//! For a signed source `ν` on `{y = 0}`, `h(X) = ∫ g(|X − (x', 0)|) dν(x')` solves
//! `−div(|y|^γ ∇h) = c_ext ν δ_{y=0}`; by symmetry the weighted normal derivative
//! `−y^γ ∂_y h` tends to `(c_ext/2) ν` as `y ↓ 0`.

use statrs::function::beta::{beta, beta_reg};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridMeasure};
use crate::quad::GaussLegendre;

use super::{g_of_r, RieszParams};

/// Tensor grid over `base × (0, y_max]`, with `y`-cells growing geometrically from the slab.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedGrid {
    pub base: Grid,
    /// Cell edges in `y`, starting at 0.
    pub y_edges: Vec<f64>,
}

impl ExtendedGrid {
    pub fn graded(base: Grid, y_first: f64, y_max: f64, ratio: f64) -> Result<Self> {
        if !(y_first > 0.0 && y_max > y_first && ratio >= 1.0) {
            return Err(Error::Invalid(format!(
                "graded y-axis needs 0 < y_first < y_max and ratio ≥ 1 (got {y_first}, {y_max}, {ratio})"
            )));
        }
        let mut y_edges = vec![0.0];
        let mut step = y_first;
        while *y_edges.last().unwrap() < y_max {
            let next = y_edges.last().unwrap() + step;
            y_edges.push(next.min(y_max));
            step *= ratio;
        }
        Ok(ExtendedGrid { base, y_edges })
    }

    /// Standard grading: first cell of height `h`, ratio 1.3.
    pub fn standard(base: Grid, y_max: f64) -> Result<Self> {
        let h = base.h;
        Self::graded(base, h, y_max, 1.3)
    }

    pub fn ny(&self) -> usize {
        self.y_edges.len() - 1
    }

    pub fn y_nodes(&self) -> Vec<f64> {
        self.y_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn len(&self) -> usize {
        self.base.len() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Charges on `{y = 0}`: unit point charges scaled by `point_charge` plus a measure scaled
/// by `measure_charge` (so `Σδ_{x_i} − Nμ` is `point_charge = 1, measure_charge = −N`).
#[derive(Debug, Clone, Copy)]
pub struct ExtensionSource<'a> {
    pub points: &'a [[f64; 2]],
    pub point_charge: f64,
    pub measure: Option<&'a GridMeasure>,
    pub measure_charge: f64,
}

impl<'a> ExtensionSource<'a> {
    pub fn points(points: &'a [[f64; 2]]) -> Self {
        ExtensionSource { points, point_charge: 1.0, measure: None, measure_charge: 0.0 }
    }

    pub fn measure(mu: &'a GridMeasure) -> Self {
        ExtensionSource { points: &[], point_charge: 0.0, measure: Some(mu), measure_charge: 1.0 }
    }

    /// `Σ δ_{x_i} − N μ`.
    pub fn fluctuation(points: &'a [[f64; 2]], mu: &'a GridMeasure) -> Self {
        ExtensionSource {
            points,
            point_charge: 1.0,
            measure: Some(mu),
            measure_charge: -(points.len() as f64),
        }
    }
}

/// Potential, horizontal gradient and weighted flux `−y^γ ∂_y h` at the nodes of an
/// [`ExtendedGrid`], stored with the base index running fastest. Values for `y < 0`
/// follow from `h(x, −y) = h(x, y)`.
#[derive(Debug, Clone)]
pub struct ExtensionField {
    pub grid: ExtendedGrid,
    pub gamma: f64,
    pub potential: Vec<f64>,
    pub grad_x: Vec<[f64; 2]>,
    pub flux: Vec<f64>,
}

impl ExtensionField {
    pub fn index(&self, base: usize, j: usize) -> usize {
        base + self.grid.base.len() * j
    }

    /// `|y|^γ` on the `j`-th row of nodes.
    pub fn weight(&self, j: usize) -> f64 {
        self.grid.y_nodes()[j].powf(self.gamma)
    }

    /// `|y|^γ |∇h|²` at a node.
    pub fn energy_density(&self, k: usize, y: f64) -> f64 {
        let gx = self.grad_x[k];
        let w = y.powf(self.gamma);
        let dy = self.flux[k] / w;
        w * (gx[0] * gx[0] + gx[1] * gx[1] + dy * dy)
    }
}

/// Value, horizontal gradient and weighted flux of the potential of a unit point charge
/// at `p`, evaluated at `(x, y)` with `y > 0`.
pub(crate) fn point_field(dim: usize, s: f64, gamma: f64, p: [f64; 2], x: [f64; 2], y: f64) -> (f64, [f64; 2], f64) {
    let dx = [x[0] - p[0], if dim == 2 { x[1] - p[1] } else { 0.0 }];
    let r2 = dx[0] * dx[0] + dx[1] * dx[1] + y * y;
    let r = r2.sqrt();
    let dg_over_r = -r.powf(-s - 2.0);
    let flux = y.powf(gamma + 1.0) * r.powf(-s - 2.0);
    (g_of_r(r, s), [dg_over_r * dx[0], dg_over_r * dx[1]], flux)
}

/// `∫_0^θ cos^s t dt` for `θ ∈ [−π/2, π/2]`.
pub(crate) fn cos_power_integral(s: f64, theta: f64) -> f64 {
    let a = 0.5;
    let b = 0.5 * (s + 1.0);
    let x = theta.sin().powi(2).min(1.0);
    (0.5 * beta(a, b) * beta_reg(a, b, x)).copysign(theta)
}

/// Gradient `(∂_x h, −y^γ ∂_y h)` at `(x, y)` of a uniform unit density on `[a, b] × {0}`
/// in one dimension, in closed form.
pub(crate) fn segment_gradient_1d(s: f64, a: f64, b: f64, x: f64, y: f64) -> (f64, f64) {
    let gx = g_of_r(((x - a).powi(2) + y * y).sqrt(), s) - g_of_r(((x - b).powi(2) + y * y).sqrt(), s);
    let ta = ((a - x) / y).atan();
    let tb = ((b - x) / y).atan();
    // With t − x = y tan θ and γ = s the flux integrand reduces to cos^s θ dθ.
    let flux = cos_power_integral(s, tb) - cos_power_integral(s, ta);
    (gx, flux)
}

/// Potential at `(x, y)` of a uniform unit density on `[a, b] × {0}` in one dimension.
pub(crate) fn segment_potential_1d(s: f64, a: f64, b: f64, x: f64, y: f64) -> f64 {
    if s == 0.0 {
        let f = |u: f64| u * (u * u + y * y).ln() - 2.0 * u + 2.0 * y * (u / y).atan();
        return -0.5 * (f(b - x) - f(a - x));
    }
    let rule = GaussLegendre::cached(12);
    let kernel = |t: f64| g_of_r(((x - t).powi(2) + y * y).sqrt(), s);
    let len = b - a;
    let near = if x < a { a - x } else if x > b { x - b } else { 0.0 };
    if near > 2.0 * len || y > len {
        return rule.integrate(a, b, kernel);
    }
    let levels = ((len / y).ln() / 0.3f64.recip().ln()).ceil().max(1.0) as usize + 2;
    let c = x.clamp(a, b);
    let mut acc = 0.0;
    if c > a {
        acc += rule.integrate_graded(0.0, c - a, levels, 0.3, |u| kernel(c - u));
    }
    if b > c {
        acc += rule.integrate_graded(0.0, b - c, levels, 0.3, |u| kernel(c + u));
    }
    acc
}

/// Potential and gradient at `(x, y)` of a uniform unit density on the square cell
/// centred at `c` with side `h` in two dimensions.
fn cell_field_2d(s: f64, gamma: f64, c: [f64; 2], h: f64, x: [f64; 2], y: f64) -> (f64, [f64; 2], f64) {
    let dist = ((x[0] - c[0]).abs().max((x[1] - c[1]).abs()) - 0.5 * h).max(0.0).hypot(y);
    let (split, q) = if dist > 3.0 * h {
        (1usize, 3usize)
    } else if dist > h {
        (2, 6)
    } else {
        let k = ((h / dist.max(1e-12 * h)).log2().ceil() as usize).clamp(2, 64);
        (k, 6)
    };
    let rule = GaussLegendre::cached(q);
    let sub = h / split as f64;
    let mut pot = 0.0;
    let mut gx = [0.0; 2];
    let mut flux = 0.0;
    for a in 0..split {
        for b in 0..split {
            let lo = [c[0] - 0.5 * h + a as f64 * sub, c[1] - 0.5 * h + b as f64 * sub];
            for (u, wu) in rule.nodes.iter().zip(&rule.weights) {
                for (v, wv) in rule.nodes.iter().zip(&rule.weights) {
                    let p = [lo[0] + 0.5 * sub * (1.0 + u), lo[1] + 0.5 * sub * (1.0 + v)];
                    let w = 0.25 * sub * sub * wu * wv / (h * h);
                    let (pp, gg, ff) = point_field(2, s, gamma, p, x, y);
                    pot += w * pp;
                    gx[0] += w * gg[0];
                    gx[1] += w * gg[1];
                    flux += w * ff;
                }
            }
        }
    }
    (pot, gx, flux)
}

/// Field of `mu` at one point `(x, y)`, `y > 0`: potential, horizontal gradient, flux.
pub(crate) fn measure_field(params: &RieszParams, mu: &GridMeasure, x: [f64; 2], y: f64, with_potential: bool) -> (f64, [f64; 2], f64) {
    let g = &mu.grid;
    let mut pot = 0.0;
    let mut gx = [0.0; 2];
    let mut flux = 0.0;
    for k in 0..g.len() {
        let m = mu.mass[k];
        if m == 0.0 {
            continue;
        }
        let c = g.coord(k);
        if g.dim == 1 {
            let (a, b) = (c[0] - 0.5 * g.h, c[0] + 0.5 * g.h);
            let rho = m / g.h;
            let (dx, fl) = segment_gradient_1d(params.s, a, b, x[0], y);
            gx[0] += rho * dx;
            flux += rho * fl;
            if with_potential {
                pot += rho * segment_potential_1d(params.s, a, b, x[0], y);
            }
        } else {
            let (p, gg, fl) = cell_field_2d(params.s, params.gamma, c, g.h, x, y);
            pot += m * p;
            gx[0] += m * gg[0];
            gx[1] += m * gg[1];
            flux += m * fl;
        }
    }
    (pot, gx, flux)
}

/// `(g∗μ)(x)` on the plane for a two-dimensional grid measure.
pub(crate) fn measure_potential_2d(params: &RieszParams, mu: &GridMeasure, x: [f64; 2]) -> f64 {
    measure_field(params, mu, x, 0.0, true).0
}

/// Evaluates the extended potential of `source` at every node of `grid`.
pub fn cs_extension(source: &ExtensionSource, grid: &ExtendedGrid, params: &RieszParams) -> Result<ExtensionField> {
    let dim = grid.base.dim;
    if dim != params.d {
        return Err(Error::Invalid("extended grid dimension differs from params.d".into()));
    }
    if let Some(mu) = source.measure {
        if mu.grid.dim != dim {
            return Err(Error::Invalid("measure dimension differs from params.d".into()));
        }
    }
    let ys = grid.y_nodes();
    let nb = grid.base.len();
    let n = nb * ys.len();
    let mut potential = vec![0.0; n];
    let mut grad_x = vec![[0.0; 2]; n];
    let mut flux = vec![0.0; n];
    for (j, &y) in ys.iter().enumerate() {
        for i in 0..nb {
            let x = grid.base.coord(i);
            let k = i + nb * j;
            for &p in source.points {
                let (v, g, f) = point_field(dim, params.s, params.gamma, p, x, y);
                potential[k] += source.point_charge * v;
                grad_x[k][0] += source.point_charge * g[0];
                grad_x[k][1] += source.point_charge * g[1];
                flux[k] += source.point_charge * f;
            }
            if let Some(mu) = source.measure {
                let (v, g, f) = measure_field(params, mu, x, y, true);
                potential[k] += source.measure_charge * v;
                grad_x[k][0] += source.measure_charge * g[0];
                grad_x[k][1] += source.measure_charge * g[1];
                flux[k] += source.measure_charge * f;
            }
        }
    }
    Ok(ExtensionField { grid: grid.clone(), gamma: params.gamma, potential, grad_x, flux })
}
