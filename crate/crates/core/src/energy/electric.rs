//! Weighted Dirichlet energies `∫ |y|^γ |∇h_{N,η}|²` of the truncated fluctuation
//! potential on the extended half-space, over all of `R^{d+1}` or over a slab `Q_ℓ × [−ℓ, ℓ]`.
//!
//! Every field value is analytic: point charges in closed form and the background measure
//! through its cell-edge representation. Integration uses a smooth partition of unity:
//! polar patches around each particle, split exactly at the truncation radius, and graded
//! tensor cells with adaptive refinement elsewhere.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{minimal_distances, Configuration, MeanField};
use crate::error::{Error, Result};
use crate::grid::GridMeasure;
use crate::kernel::{cos_power_integral, g_of_r, RieszParams};
use crate::quad::{compensated_sum, GaussLegendre};

/// Largest configuration accepted by the extended-space quadratures.
pub const MAX_PARTICLES: usize = 64;

/// Quadrature settings for the extended-space energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectricQuadrature {
    /// Gauss points per axis in each tensor cell.
    pub order: usize,
    /// Gauss points on `r ∈ (0, η)` in a patch.
    pub radial_inner: usize,
    /// Gauss points on each of the two outer radial pieces of a patch.
    pub radial_outer: usize,
    /// Gauss points per quarter turn in a patch.
    pub angular: usize,
    /// A cell is refined while its side exceeds `refine` times its distance to a particle.
    pub refine: f64,
    /// A cell meeting a patch is refined while its side exceeds `patch_refine · ρ_i`.
    pub patch_refine: f64,
    pub max_depth: usize,
    /// Geometric growth of cell sizes away from the particles and the line `y = 0`.
    pub ratio: f64,
    /// Half-width of the global integration box in units of the configuration span.
    pub far_factor: f64,
}

impl Default for ElectricQuadrature {
    fn default() -> Self {
        ElectricQuadrature {
            order: 6,
            radial_inner: 6,
            radial_outer: 8,
            angular: 8,
            refine: 0.6,
            patch_refine: 0.25,
            max_depth: 16,
            ratio: 1.3,
            far_factor: 64.0,
        }
    }
}

/// A cube `Q_ℓ` of side `side` centred at `center` (only the first coordinate is used in 1-D).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: [f64; 2],
    pub side: f64,
}

impl Cube {
    pub fn contains(&self, p: [f64; 2], dim: usize) -> bool {
        let h = 0.5 * self.side;
        (p[0] - self.center[0]).abs() <= h && (dim == 1 || (p[1] - self.center[1]).abs() <= h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEnergyReport {
    pub cube: Cube,
    /// `∫_{Q_ℓ × [−ℓ, ℓ]} |y|^γ |∇h_{N,r}|²`.
    pub value: f64,
    /// Number of points in `Q_ℓ`.
    pub point_count: usize,
}

/// Global extended-space energy and the next-order energy it reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectricEnergy {
    /// `∫_{R^{d+1}} |y|^γ |∇h_{N,r}|²`, restricted to the integration box.
    pub dirichlet: f64,
    /// `Σ_i g(r_i)`.
    pub self_sum: f64,
    /// `Σ_i ∫ f_{r_i}(x − x_i) dμ(x)`.
    pub smeared_sum: f64,
    /// `(dirichlet − c_ext Σ g(r_i)) / (2 c_ext) − N Σ_i ∫ f_{r_i} dμ`.
    pub next_order: f64,
    /// Half-width of the integration box.
    pub half_width: f64,
}

/// Extended field `(∂_x h, −y^γ ∂_y h)` of a one-dimensional piecewise-constant measure.
///
/// The field is a sum over cell edges weighted by the density jumps, with
/// `∫_0^θ cos^s` tabulated for Hermite interpolation and expanded in series near `±π/2`.
#[derive(Debug, Clone)]
pub struct MeasureField {
    s: f64,
    levels: Vec<EdgeLevel>,
    half_beta: f64,
    table: Vec<(f64, f64)>,
    table_step: f64,
    support: (f64, f64),
    h: f64,
    interp: OnceLock<FieldTable>,
}

/// Samples of the field on a tensor grid in `(x, ln y)` for Catmull–Rom interpolation.
#[derive(Debug, Clone)]
struct FieldTable {
    x0: f64,
    dx: f64,
    nx: usize,
    ly0: f64,
    dly: f64,
    ny: usize,
    values: Vec<(f64, f64)>,
}

impl FieldTable {
    fn build(field: &MeasureField) -> Self {
        let (lo, hi) = field.support;
        let span = hi - lo;
        let pad = 0.25 * span;
        let dx = field.h;
        let nx = ((span + 2.0 * pad) / dx).ceil() as usize + 1;
        let x0 = lo - pad;
        let ly0 = (1e-5 * span).ln();
        let dly = 0.12;
        let ny = ((span.ln() - ly0) / dly).ceil() as usize + 1;
        let values = (0..nx * ny)
            .into_par_iter()
            .map(|k| field.gradient(x0 + (k / ny) as f64 * dx, (ly0 + (k % ny) as f64 * dly).exp()))
            .collect();
        FieldTable { x0, dx, nx, ly0, dly, ny, values }
    }

    fn eval(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let tx = (x - self.x0) / self.dx;
        // Below the table the field is frozen at its second level.
        let ty = ((y.ln() - self.ly0) / self.dly).max(1.0);
        let (i, j) = (tx.floor(), ty.floor());
        if i < 1.0 || i + 2.0 >= self.nx as f64 || j + 2.0 >= self.ny as f64 {
            return None;
        }
        let (fx, fy) = (tx - i, ty - j);
        let (i, j) = (i as usize, j as usize);
        let wx = catmull_rom(fx);
        let wy = catmull_rom(fy);
        let mut acc = (0.0, 0.0);
        for (a, wa) in wx.iter().enumerate() {
            let row = (i + a - 1) * self.ny + j - 1;
            for (b, wb) in wy.iter().enumerate() {
                let v = self.values[row + b];
                acc.0 += wa * wb * v.0;
                acc.1 += wa * wb * v.1;
            }
        }
        Some(acc)
    }
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

#[derive(Debug, Clone)]
struct EdgeLevel {
    width: f64,
    lo: f64,
    hi: f64,
    edges: Vec<(f64, f64)>,
}

const SERIES_CUT: f64 = 0.1;
const TABLE_INTERVALS: usize = 2048;

impl MeasureField {
    pub fn new(mu: &GridMeasure, params: &RieszParams) -> Result<Self> {
        if params.d != 1 || mu.grid.dim != 1 {
            return Err(Error::Unsupported(
                "extended-space energies are implemented for d = 1 only".into(),
            ));
        }
        let s = params.s;
        let g = &mu.grid;
        let lo = g.x(0) - 0.5 * g.h;
        let rho = mu.densities();
        let mut levels = vec![edge_level(lo, g.h, &rho)];
        let mut coarse = rho;
        let mut width = g.h;
        while coarse.len() >= 64 {
            coarse = coarse.chunks(8).map(|c| c.iter().sum::<f64>() / 8.0).collect();
            width *= 8.0;
            levels.push(edge_level(lo, width, &coarse));
        }
        let half_beta = cos_power_integral(s, std::f64::consts::FRAC_PI_2);
        let span = std::f64::consts::PI - 2.0 * SERIES_CUT;
        let table_step = span / TABLE_INTERVALS as f64;
        let table = (0..=TABLE_INTERVALS)
            .map(|k| {
                let th = -0.5 * span + k as f64 * table_step;
                (cos_power_integral(s, th), th.cos().powf(s) * table_step)
            })
            .collect();
        let support = (levels[0].edges.first().map_or(lo, |e| e.0), levels[0].edges.last().map_or(lo, |e| e.0));
        Ok(MeasureField { s, levels, half_beta, table, table_step, support, h: g.h, interp: OnceLock::new() })
    }

    /// `∫_0^{atan(u/y)} cos^s t dt`.
    fn angle_integral(&self, u: f64, y: f64) -> f64 {
        let s = self.s;
        if s == 0.0 {
            return u.atan2(y);
        }
        let phi = y.atan2(u.abs());
        if phi < SERIES_CUT {
            let p2 = phi * phi;
            let tail = phi.powf(1.0 + s)
                * (1.0 / (1.0 + s) - s * p2 / (6.0 * (3.0 + s)) + s * (5.0 * s - 2.0) * p2 * p2 / (360.0 * (5.0 + s)));
            return (self.half_beta - tail).copysign(u);
        }
        let theta = u.atan2(y);
        let span = std::f64::consts::PI - 2.0 * SERIES_CUT;
        let t = ((theta + 0.5 * span) / self.table_step).clamp(0.0, TABLE_INTERVALS as f64);
        let k = (t.floor() as usize).min(TABLE_INTERVALS - 1);
        let f = t - k as f64;
        let ((v0, d0), (v1, d1)) = (self.table[k], self.table[k + 1]);
        let f2 = f * f;
        let f3 = f2 * f;
        (2.0 * f3 - 3.0 * f2 + 1.0) * v0 + (f3 - 2.0 * f2 + f) * d0 + (-2.0 * f3 + 3.0 * f2) * v1 + (f3 - f2) * d1
    }

    /// `(∂_x h^μ, −y^γ ∂_y h^μ)` at `(x, y)`, `y > 0`.
    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let level = self.pick_level(x, y);
        let s = self.s;
        let y2 = y * y;
        let mut gx = 0.0;
        let mut flux = 0.0;
        for &(e, jump) in &level.edges {
            let u = e - x;
            let r = (u * u + y2).sqrt();
            gx += jump * g_of_r(r, s);
            flux -= jump * self.angle_integral(u, y);
        }
        (gx, flux)
    }

    /// The field from a cached interpolation table near the support (built on first use),
    /// falling back to [`MeasureField::gradient`] elsewhere.
    pub fn gradient_interpolated(&self, x: f64, y: f64) -> (f64, f64) {
        let table = self.interp.get_or_init(|| FieldTable::build(self));
        table.eval(x, y).unwrap_or_else(|| self.gradient(x, y))
    }

    fn pick_level(&self, x: f64, y: f64) -> &EdgeLevel {
        let base = &self.levels[0];
        let dx = (base.lo - x).max(x - base.hi).max(0.0);
        let dist = dx.hypot(y);
        self.levels.iter().rev().find(|l| l.width <= 0.02 * dist).unwrap_or(base)
    }
}

fn edge_level(lo: f64, width: f64, rho: &[f64]) -> EdgeLevel {
    let mut edges = Vec::new();
    let mut prev = 0.0;
    for k in 0..=rho.len() {
        let cur = if k < rho.len() { rho[k] } else { 0.0 };
        if cur != prev {
            edges.push((lo + k as f64 * width, cur - prev));
        }
        prev = cur;
    }
    EdgeLevel { width, lo, hi: lo + rho.len() as f64 * width, edges }
}

/// Particles with their truncation radii `η_i` and patch radii `ρ_i`.
struct Charges {
    x: Vec<f64>,
    eta: Vec<f64>,
    patch: Vec<f64>,
}

impl Charges {
    fn new(config: &Configuration, params: &RieszParams) -> Result<Self> {
        config.check_distinct()?;
        let eta = minimal_distances(config, params)?.eta;
        let cap = 1.0 / config.n() as f64;
        let patch: Vec<f64> = config.nearest().iter().map(|&d| (0.45 * d).min(cap)).collect();
        Ok(Charges { x: config.points.iter().map(|p| p[0]).collect(), eta, patch })
    }
}

fn cutoff(t: f64) -> f64 {
    if t <= 0.6 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let tau = (t - 0.6) / 0.4;
    let a = (-1.0 / (1.0 - tau)).exp();
    let b = (-1.0 / tau).exp();
    a / (a + b)
}

struct FieldEval<'a> {
    s: f64,
    gamma: f64,
    n: f64,
    charges: &'a Charges,
    measure: &'a MeasureField,
}

impl FieldEval<'_> {
    /// `(∂_x, −y^γ ∂_y)` of the truncated point potentials.
    fn particles(&self, x: f64, y: f64) -> (f64, f64) {
        let y2 = y * y;
        let yg1 = y.powf(self.gamma + 1.0);
        let e = -0.5 * (self.s + 2.0);
        let mut tx = 0.0;
        let mut phi = 0.0;
        for (xj, eta) in self.charges.x.iter().zip(&self.charges.eta) {
            let dx = x - xj;
            let r2 = dx * dx + y2;
            if r2 < eta * eta {
                continue;
            }
            let w = r2.powf(e);
            tx -= w * dx;
            phi += yg1 * w;
        }
        (tx, phi)
    }

    fn density_with(&self, x: f64, y: f64, m: (f64, f64)) -> f64 {
        let (px, pphi) = self.particles(x, y);
        let tx = px - self.n * m.0;
        let phi = pphi - self.n * m.1;
        let yg = y.powf(self.gamma);
        yg * tx * tx + phi * phi / yg
    }

    fn density(&self, x: f64, y: f64) -> f64 {
        self.density_with(x, y, self.measure.gradient_interpolated(x, y))
    }

    /// `1 − Σ_i χ_i` at `(x, y)`.
    fn outer_weight(&self, x: f64, y: f64) -> f64 {
        let c = self.charges;
        let k = c.x.partition_point(|&v| v < x);
        let mut w = 1.0;
        for j in k.saturating_sub(1)..(k + 1).min(c.x.len()) {
            let r = (x - c.x[j]).hypot(y);
            if r < c.patch[j] {
                w -= cutoff(r / c.patch[j]);
            }
        }
        w
    }
}

/// Cached quadrature nodes of one tensor cell, with the background field at each node.
struct BaseCell {
    bounds: [f64; 4],
    nodes: Vec<(f64, f64, f64, (f64, f64))>,
}

/// Integration region `[x0, x1] × [0, y1]` (mirrored to `y < 0`) with cached base cells.
pub(crate) struct SlabIntegrator<'a> {
    measure: &'a MeasureField,
    params: RieszParams,
    quad: ElectricQuadrature,
    x0: f64,
    x1: f64,
    y1: f64,
    cells: Vec<BaseCell>,
}

impl<'a> SlabIntegrator<'a> {
    fn new(
        measure: &'a MeasureField,
        params: &RieszParams,
        quad: ElectricQuadrature,
        x_edges: Vec<f64>,
        y_edges: Vec<f64>,
    ) -> Self {
        let x0 = x_edges[0];
        let x1 = *x_edges.last().unwrap();
        let y1 = *y_edges.last().unwrap();
        let mut slab = SlabIntegrator { measure, params: *params, quad, x0, x1, y1, cells: Vec::new() };
        let mut cells = Vec::with_capacity((x_edges.len() - 1) * (y_edges.len() - 1));
        for xw in x_edges.windows(2) {
            for yw in y_edges.windows(2) {
                let bounds = [xw[0], xw[1], yw[0], yw[1]];
                let nodes = slab
                    .cell_nodes(bounds)
                    .into_iter()
                    .map(|(x, y, w)| (x, y, w, measure.gradient_interpolated(x, y)))
                    .collect();
                cells.push(BaseCell { bounds, nodes });
            }
        }
        slab.cells = cells;
        slab
    }

    /// Tensor Gauss nodes `(x, y, weight)` on a cell, with `y = u^q`, `q = 1/(1 − |γ|)`, to
    /// absorb the `y^{−|γ|}` behaviour at `y = 0`. Weights include the mirror factor 2.
    fn cell_nodes(&self, b: [f64; 4]) -> Vec<(f64, f64, f64)> {
        let rule = GaussLegendre::cached(self.quad.order);
        let q = 1.0 / (1.0 - self.params.gamma.abs());
        let (ua, ub) = (b[2].powf(1.0 / q), b[3].powf(1.0 / q));
        let (cx, rx) = (0.5 * (b[0] + b[1]), 0.5 * (b[1] - b[0]));
        let (cu, ru) = (0.5 * (ua + ub), 0.5 * (ub - ua));
        let mut out = Vec::with_capacity(rule.nodes.len() * rule.nodes.len());
        for (tx, wx) in rule.nodes.iter().zip(&rule.weights) {
            for (tu, wu) in rule.nodes.iter().zip(&rule.weights) {
                let u = cu + ru * tu;
                let y = u.powf(q);
                let jac = q * u.powf(q - 1.0);
                out.push((cx + rx * tx, y, 2.0 * wx * wu * rx * ru * jac));
            }
        }
        out
    }

    fn field<'b>(&'b self, charges: &'b Charges, n: usize) -> FieldEval<'b> {
        FieldEval { s: self.params.s, gamma: self.params.gamma, n: n as f64, charges, measure: self.measure }
    }

    /// What to do with a cell: skip it, refine it, or integrate it directly.
    fn classify(&self, charges: &Charges, b: [f64; 4]) -> CellAction {
        let size = (b[1] - b[0]).max(b[3] - b[2]);
        let lo = charges.x.partition_point(|&v| v < b[0] - 4.0 * size - 1.0);
        let mut refine = false;
        for j in lo..charges.x.len() {
            let xj = charges.x[j];
            if xj > b[1] + 4.0 * size + 1.0 {
                break;
            }
            let dx = (b[0] - xj).max(xj - b[1]).max(0.0);
            let dist = dx.hypot(b[2]);
            let far_x = (b[0] - xj).abs().max((b[1] - xj).abs());
            if far_x.hypot(b[3]) <= 0.6 * charges.patch[j] {
                return CellAction::Skip;
            }
            let rho = charges.patch[j];
            if size > self.quad.refine * dist || (dist < rho && size > self.quad.patch_refine * rho) {
                refine = true;
            }
        }
        if refine {
            CellAction::Refine
        } else {
            CellAction::Integrate
        }
    }

    fn integrate_cell(&self, f: &FieldEval, charges: &Charges, b: [f64; 4], depth: usize) -> Result<f64> {
        match self.classify(charges, b) {
            CellAction::Skip => Ok(0.0),
            CellAction::Integrate => Ok(self
                .cell_nodes(b)
                .into_iter()
                .map(|(x, y, w)| {
                    let o = f.outer_weight(x, y);
                    if o <= 0.0 {
                        0.0
                    } else {
                        w * o * f.density(x, y)
                    }
                })
                .sum()),
            CellAction::Refine => {
                if depth >= self.quad.max_depth {
                    return Err(Error::Resolution(format!(
                        "cell [{:.3e}, {:.3e}]×[{:.3e}, {:.3e}] still too coarse near a particle after {} refinements",
                        b[0], b[1], b[2], b[3], depth
                    )));
                }
                let xm = 0.5 * (b[0] + b[1]);
                let ym = 0.5 * (b[2] + b[3]);
                let mut acc = 0.0;
                for sub in [[b[0], xm, b[2], ym], [xm, b[1], b[2], ym], [b[0], xm, ym, b[3]], [xm, b[1], ym, b[3]]] {
                    acc += self.integrate_cell(f, charges, sub, depth + 1)?;
                }
                Ok(acc)
            }
        }
    }

    /// `∫ χ_i |y|^γ |∇h_{N,η}|²` over the patch of particle `i`, in polar coordinates.
    fn integrate_patch(&self, f: &FieldEval, charges: &Charges, i: usize) -> f64 {
        let (xi, eta, rho) = (charges.x[i], charges.eta[i], charges.patch[i]);
        let q = 1.0 / (1.0 - self.params.gamma.abs());
        let ang = GaussLegendre::cached(self.quad.angular);
        let mut thetas = Vec::with_capacity(2 * self.quad.angular);
        for (t, w) in ang.nodes.iter().zip(&ang.weights) {
            let v = 0.5 * (1.0 + t);
            let th = std::f64::consts::FRAC_PI_2 * v.powf(q);
            let wt = 0.5 * w * std::f64::consts::FRAC_PI_2 * q * v.powf(q - 1.0);
            thetas.push((th, wt));
            thetas.push((std::f64::consts::PI - th, wt));
        }
        let mut radii = Vec::new();
        let inner = GaussLegendre::cached(self.quad.radial_inner);
        for (t, w) in inner.nodes.iter().zip(&inner.weights) {
            let v = 0.5 * (1.0 + t);
            radii.push((eta * v * v, 0.5 * w * 2.0 * eta * v));
        }
        let outer = GaussLegendre::cached(self.quad.radial_outer);
        for (a, b) in [(eta, 0.6 * rho), (0.6 * rho, rho)] {
            if b <= a {
                continue;
            }
            let (la, lb) = (a.ln(), b.ln());
            for (t, w) in outer.nodes.iter().zip(&outer.weights) {
                let r = (0.5 * (la + lb) + 0.5 * (lb - la) * t).exp();
                radii.push((r, 0.5 * (lb - la) * w * r));
            }
        }
        let mut acc = 0.0;
        for &(r, wr) in &radii {
            let chi = cutoff(r / rho);
            if chi == 0.0 {
                continue;
            }
            for &(th, wt) in &thetas {
                let x = xi + r * th.cos();
                let y = r * th.sin();
                if x < self.x0 || x > self.x1 || y > self.y1 || y <= 0.0 {
                    continue;
                }
                acc += 2.0 * wr * wt * r * chi * f.density(x, y);
            }
        }
        acc
    }

    /// `∫ |y|^γ |∇h_{N,r}|²` over the region for the configuration.
    fn dirichlet(&self, config: &Configuration) -> Result<f64> {
        if config.n() > MAX_PARTICLES {
            return Err(Error::Unsupported(format!(
                "extended-space energies are capped at N = {MAX_PARTICLES}, got N = {}",
                config.n()
            )));
        }
        let mut order: Vec<usize> = (0..config.n()).collect();
        order.sort_by(|&a, &b| config.points[a][0].total_cmp(&config.points[b][0]));
        let sorted = Configuration::from_line(&order.iter().map(|&i| config.points[i][0]).collect::<Vec<_>>())?;
        let charges = Charges::new(&sorted, &self.params)?;
        let f = self.field(&charges, config.n());
        let mut parts = Vec::with_capacity(self.cells.len() + config.n());
        for cell in &self.cells {
            match self.classify(&charges, cell.bounds) {
                CellAction::Integrate => parts.push(
                    cell.nodes
                        .iter()
                        .map(|&(x, y, w, m)| {
                            let o = f.outer_weight(x, y);
                            if o <= 0.0 {
                                0.0
                            } else {
                                w * o * f.density_with(x, y, m)
                            }
                        })
                        .sum(),
                ),
                _ => parts.push(self.integrate_cell(&f, &charges, cell.bounds, 0)?),
            }
        }
        for i in 0..config.n() {
            let (xi, rho) = (charges.x[i], charges.patch[i]);
            if xi + rho > self.x0 && xi - rho < self.x1 {
                parts.push(self.integrate_patch(&f, &charges, i));
            }
        }
        Ok(compensated_sum(parts))
    }
}

enum CellAction {
    Skip,
    Refine,
    Integrate,
}

fn geometric_edges(start: f64, first: f64, ratio: f64, end: f64) -> Vec<f64> {
    let mut out = vec![start];
    let mut w = first;
    let mut x = start;
    while x + w < end - 0.5 * w {
        x += w;
        out.push(x);
        w *= ratio;
    }
    out.push(end);
    out
}

fn uniform_edges(a: f64, b: f64, max_width: f64) -> Vec<f64> {
    let n = ((b - a) / max_width).ceil().max(1.0) as usize;
    (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
}

/// Typical interparticle spacing `(N ‖μ‖_∞)^{−1/d}`.
fn spacing(mu: &GridMeasure, n: usize) -> f64 {
    1.0 / (n as f64 * mu.max_density()).max(1e-300)
}

fn support_bounds(mu: &GridMeasure) -> (f64, f64) {
    let g = &mu.grid;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..g.len() {
        if mu.mass[k] > 0.0 {
            lo = lo.min(g.x(k) - 0.5 * g.h);
            hi = hi.max(g.x(k) + 0.5 * g.h);
        }
    }
    (lo, hi)
}

/// Integrator for one slab `Q_ℓ × [−ℓ, ℓ]`, reusable across configurations of `n` points.
pub struct LocalEnergyIntegrator<'a> {
    slab: SlabIntegrator<'a>,
    cube: Cube,
}

impl<'a> LocalEnergyIntegrator<'a> {
    pub fn new(
        measure: &'a MeasureField,
        mu: &GridMeasure,
        cube: Cube,
        n: usize,
        params: &RieszParams,
        quad: ElectricQuadrature,
    ) -> Result<Self> {
        if params.d != 1 {
            return Err(Error::Unsupported("local electric energies are implemented for d = 1 only".into()));
        }
        if !(cube.side > 0.0) {
            return Err(Error::Invalid("cube side must be positive".into()));
        }
        let hc = 0.5 * spacing(mu, n);
        let a = cube.center[0] - 0.5 * cube.side;
        let b = cube.center[0] + 0.5 * cube.side;
        let xs = uniform_edges(a, b, hc);
        let ys = geometric_edges(0.0, hc.min(cube.side), quad.ratio, cube.side);
        Ok(LocalEnergyIntegrator { slab: SlabIntegrator::new(measure, params, quad, xs, ys), cube })
    }

    pub fn evaluate(&self, config: &Configuration) -> Result<LocalEnergyReport> {
        let value = self.slab.dirichlet(config)?.max(0.0);
        let point_count = config.points.iter().filter(|p| self.cube.contains(**p, config.dim)).count();
        Ok(LocalEnergyReport { cube: self.cube, value, point_count })
    }
}

/// `∫_{Q_ℓ × [−ℓ, ℓ]} |y|^γ |∇h_{N,r}|²` for one configuration.
pub fn local_electric_energy(
    config: &Configuration,
    mu: &GridMeasure,
    cube: Cube,
    params: &RieszParams,
    quad: &ElectricQuadrature,
) -> Result<LocalEnergyReport> {
    config.check_params(params)?;
    let measure = MeasureField::new(mu, params)?;
    LocalEnergyIntegrator::new(&measure, mu, cube, config.n(), params, *quad)?.evaluate(config)
}

/// Global weighted Dirichlet energy of `h_{N,r}` and the next-order energy it yields through
/// the electric formulation.
pub fn electric_energy(
    config: &Configuration,
    mu: &GridMeasure,
    params: &RieszParams,
    quad: &ElectricQuadrature,
) -> Result<ElectricEnergy> {
    config.check_params(params)?;
    let measure = MeasureField::new(mu, params)?;
    electric_energy_with_field(config, mu, &measure, params, quad)
}

/// [`electric_energy`] with a prebuilt background field, reusable across configurations.
pub fn electric_energy_with_field(
    config: &Configuration,
    mu: &GridMeasure,
    measure: &MeasureField,
    params: &RieszParams,
    quad: &ElectricQuadrature,
) -> Result<ElectricEnergy> {
    config.check_params(params)?;
    let (mut lo, mut hi) = support_bounds(mu);
    for p in &config.points {
        lo = lo.min(p[0]);
        hi = hi.max(p[0]);
    }
    let n = config.n();
    let hc = 0.5 * spacing(mu, n).min(hi - lo);
    let half_width = quad.far_factor * (hi - lo);
    let pad = 4.0 * hc;
    let core = uniform_edges(lo - pad, hi + pad, hc);
    let right = geometric_edges(hi + pad, hc * quad.ratio, quad.ratio, hi + half_width);
    let left = geometric_edges(-(lo - pad), hc * quad.ratio, quad.ratio, -(lo - half_width));
    let mut xs: Vec<f64> = left.iter().rev().map(|v| -v).collect();
    xs.pop();
    xs.extend_from_slice(&core);
    xs.extend_from_slice(&right[1..]);
    let ys = geometric_edges(0.0, hc, quad.ratio, half_width);
    let slab = SlabIntegrator::new(measure, params, *quad, xs, ys);
    let dirichlet = slab.dirichlet(config)?;
    let eta = minimal_distances(config, params)?.eta;
    let field = MeanField::new(mu, params)?;
    let self_sum = compensated_sum(eta.iter().map(|&e| params.g(e)));
    let smeared_sum = compensated_sum(config.points.iter().zip(&eta).map(|(p, &e)| field.smeared_truncation(*p, e)));
    let next_order = (dirichlet - params.c_ext * self_sum) / (2.0 * params.c_ext) - n as f64 * smeared_sum;
    Ok(ElectricEnergy { dirichlet, self_sum, smeared_sum, next_order, half_width })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::next_order_energy;
    use crate::grid::Grid;
    use crate::kernel::segment_gradient_1d as segment_gradient;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn semicircle(cells: usize) -> GridMeasure {
        let g = Grid::covering_1d(-1.2, 1.2, cells).unwrap();
        GridMeasure::from_density(g, |x| (2.0 / std::f64::consts::PI) * (1.0 - x[0] * x[0]).max(0.0).sqrt()).unwrap()
    }

    #[test]
    fn edge_representation_matches_segment_formulas() {
        for &s in &[0.5, 0.0, -0.5] {
            let p = RieszParams::new(1, s).unwrap();
            let mu = semicircle(96);
            let mf = MeasureField::new(&mu, &p).unwrap();
            for &(x, y) in &[(0.3f64, 0.01f64), (1.1, 0.2), (-0.7, 1e-4), (5.0, 3.0), (0.0, 40.0)] {
                let (mut gx, mut fl) = (0.0, 0.0);
                for k in 0..mu.grid.len() {
                    let c = mu.grid.x(k);
                    let (a, b) = segment_gradient(s, c - 0.5 * mu.grid.h, c + 0.5 * mu.grid.h, x, y);
                    gx += mu.density(k) * a;
                    fl += mu.density(k) * b;
                }
                let (ex, ef) = mf.gradient(x, y);
                let tol = if x.hypot(y) > 5.0 { 2e-3 } else { 1e-8 };
                assert!((ex - gx).abs() <= tol * gx.abs().max(1e-3), "s={s} ({x},{y}): {ex} vs {gx}");
                assert!((ef - fl).abs() <= tol * fl.abs().max(1e-3), "s={s} ({x},{y}): {ef} vs {fl}");
                let (ix, iflux) = mf.gradient_interpolated(x, y);
                assert!((ix - gx).abs() <= 1e-3 * gx.abs().max(1.0), "s={s} ({x},{y}): {ix} vs {gx}");
                assert!((iflux - fl).abs() <= 1e-3 * fl.abs().max(1.0), "s={s} ({x},{y}): {iflux} vs {fl}");
            }
        }
    }

    #[test]
    fn global_identity_recovers_next_order_energy() {
        for &s in &[0.5, 0.0] {
            let p = RieszParams::new(1, s).unwrap();
            let mu = semicircle(256);
            let mut rng = StdRng::seed_from_u64(3);
            for n in [1usize, 4, 12] {
                let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-0.9..0.9)).collect();
                let x = Configuration::from_line(&xs).unwrap();
                let direct = next_order_energy(&x, &mu, &p).unwrap();
                let e = electric_energy(&x, &mu, &p, &ElectricQuadrature::default()).unwrap();
                let scale = direct.abs().max(1.0);
                assert!(
                    (e.next_order - direct).abs() < 0.05 * scale,
                    "s={s} n={n}: electric {} vs direct {direct}",
                    e.next_order
                );
            }
        }
    }

    #[test]
    fn local_energy_monotone_in_nested_boxes_and_small_far_away() {
        let p = RieszParams::new(1, 0.5).unwrap();
        let mu = semicircle(256);
        let xs: Vec<f64> = (0..16).map(|i| -0.9 + 1.8 * (i as f64 + 0.3) / 16.0).collect();
        let x = Configuration::from_line(&xs).unwrap();
        let q = ElectricQuadrature::default();
        let mut prev = 0.0;
        for side in [0.1, 0.2, 0.4, 0.8] {
            let r = local_electric_energy(&x, &mu, Cube { center: [0.05, 0.0], side }, &p, &q).unwrap();
            assert!(r.value >= prev, "side {side}: {} < {prev}", r.value);
            prev = r.value;
        }
        let far = local_electric_energy(&x, &mu, Cube { center: [40.0, 0.0], side: 1.0 }, &p, &q).unwrap();
        assert_eq!(far.point_count, 0);
        assert!(far.value < 1e-3 * prev, "{} vs {prev}", far.value);
        let partition: f64 = (0..4)
            .map(|k| {
                let c = -0.3 + 0.2 * k as f64;
                local_electric_energy(&x, &mu, Cube { center: [c, 0.0], side: 0.2 }, &p, &q).unwrap().value
            })
            .sum();
        let global = electric_energy(&x, &mu, &p, &q).unwrap();
        assert!(partition <= global.dirichlet, "{partition} > {}", global.dirichlet);
    }

    #[test]
    fn caps_and_dimension() {
        let p = RieszParams::new(1, 0.5).unwrap();
        let mu = semicircle(64);
        let xs: Vec<f64> = (0..65).map(|i| -1.0 + i as f64 / 32.0).collect();
        let x = Configuration::from_line(&xs).unwrap();
        assert!(matches!(electric_energy(&x, &mu, &p, &ElectricQuadrature::default()), Err(Error::Unsupported(_))));
        let p2 = RieszParams::new(2, 1.0).unwrap();
        let g2 = Grid::covering_square(-1.0, 1.0, 8).unwrap();
        let mu2 = GridMeasure::from_density(g2, |_| 0.25).unwrap();
        assert!(matches!(MeasureField::new(&mu2, &p2), Err(Error::Unsupported(_))));
    }
}
