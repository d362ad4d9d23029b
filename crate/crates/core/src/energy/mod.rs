//! Hamiltonian, next-order energy `F_N`, the splitting identity, minimal distances,
//! truncations, extended-space electric energies and commutator functionals.

mod commutator;
mod electric;

pub use commutator::commutator_an;
pub use electric::{
    electric_energy, electric_energy_with_field, local_electric_energy, Cube, ElectricEnergy, ElectricQuadrature, LocalEnergyIntegrator,
    LocalEnergyReport, MeasureField, MAX_PARTICLES,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{EquilibriumResult, Potential};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridMeasure};
use crate::kernel::weights::pair_toeplitz;
use crate::kernel::{g_antiderivative1, g_of_r, RieszParams};
use crate::quad::{compensated_sum, CompensatedSum};

/// A configuration `X_N` of points in `R^d` with cached nearest-neighbour distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub dim: usize,
    pub points: Vec<[f64; 2]>,
    nearest: Vec<f64>,
}

impl Configuration {
    pub fn new(dim: usize, points: Vec<[f64; 2]>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Range(format!("dimension must be 1 or 2, got {dim}")));
        }
        if points.is_empty() {
            return Err(Error::Invalid("a configuration needs at least one point".into()));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Invalid("configuration contains a non-finite coordinate".into()));
        }
        let points: Vec<[f64; 2]> =
            if dim == 1 { points.into_iter().map(|p| [p[0], 0.0]).collect() } else { points };
        let nearest = nearest_distances(dim, &points);
        Ok(Configuration { dim, points, nearest })
    }

    pub fn from_line(xs: &[f64]) -> Result<Self> {
        Self::new(1, xs.iter().map(|&x| [x, 0.0]).collect())
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// Distance from each point to its nearest neighbour (`∞` when `N = 1`).
    pub fn nearest(&self) -> &[f64] {
        &self.nearest
    }

    pub fn min_distance(&self) -> f64 {
        self.nearest.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn check_distinct(&self) -> Result<()> {
        if self.min_distance() == 0.0 {
            return Err(Error::Singularity("configuration has coincident points".into()));
        }
        Ok(())
    }

    fn check_params(&self, params: &RieszParams) -> Result<()> {
        if self.dim != params.d {
            return Err(Error::Invalid(format!(
                "configuration dimension {} differs from params.d = {}",
                self.dim, params.d
            )));
        }
        Ok(())
    }
}

fn nearest_distances(dim: usize, points: &[[f64; 2]]) -> Vec<f64> {
    let n = points.len();
    if dim == 1 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
        let mut out = vec![f64::INFINITY; n];
        for w in order.windows(2) {
            let d = points[w[1]][0] - points[w[0]][0];
            out[w[0]] = out[w[0]].min(d);
            out[w[1]] = out[w[1]].min(d);
        }
        return out;
    }
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| Grid::dist(points[i], points[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Per-point truncation radii `η_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationVector {
    pub eta: Vec<f64>,
}

/// `r_i = ¼ min(min_{j≠i} |x_i − x_j|, N^{−1/d})`.
pub fn minimal_distances(config: &Configuration, params: &RieszParams) -> Result<TruncationVector> {
    config.check_params(params)?;
    let cap = (config.n() as f64).powf(-1.0 / params.d as f64);
    Ok(TruncationVector { eta: config.nearest().iter().map(|&d| 0.25 * d.min(cap)).collect() })
}

/// `f_η(x) = (g(x) − g(η))_+`, supported in the ball of radius `η`. `x` may carry the
/// extension coordinate as an extra component.
pub fn truncation_f(eta: f64, x: &[f64], params: &RieszParams) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::Invalid(format!("truncation radius must be positive, got {eta}")));
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r >= eta {
        return Ok(0.0);
    }
    if r == 0.0 {
        return Err(Error::Singularity("f_η is singular at the origin".into()));
    }
    Ok(params.g(r) - params.g(eta))
}

/// `Σ_{i<j} g(x_i − x_j)`, summed row by row in a fixed order so the result does not depend
/// on the number of threads.
pub fn pair_energy(config: &Configuration, params: &RieszParams) -> Result<f64> {
    config.check_params(params)?;
    config.check_distinct()?;
    let pts = &config.points;
    let rows: Vec<f64> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = CompensatedSum::new();
            for q in &pts[i + 1..] {
                acc.add(g_of_r(Grid::dist(pts[i], *q), params.s));
            }
            acc.value()
        })
        .collect();
    Ok(compensated_sum(rows))
}

/// `H_N = ½ Σ_{i≠j} g(x_i − x_j) + N Σ_i V(x_i)`.
pub fn hamiltonian(config: &Configuration, potential: &Potential, params: &RieszParams) -> Result<f64> {
    let pairs = pair_energy(config, params)?;
    let n = config.n() as f64;
    let v = compensated_sum(config.points.iter().map(|p| potential.value(config.dim, *p)));
    Ok(pairs + n * v)
}

/// The potential `g∗μ` and self-energy `∬ g dμ dμ` of a piecewise-constant measure,
/// evaluated exactly cell by cell in one dimension.
#[derive(Debug, Clone)]
pub struct MeanField<'a> {
    pub mu: &'a GridMeasure,
    pub params: RieszParams,
    cells: Vec<(f64, f64, f64)>,
    self_energy: f64,
}

impl<'a> MeanField<'a> {
    pub fn new(mu: &'a GridMeasure, params: &RieszParams) -> Result<Self> {
        if mu.grid.dim != params.d {
            return Err(Error::Invalid("measure dimension differs from params.d".into()));
        }
        let g = &mu.grid;
        let cells = (0..g.len())
            .filter(|&k| mu.mass[k] > 0.0)
            .map(|k| {
                let c = g.coord(k);
                (c[0], c[1], mu.mass[k])
            })
            .collect();
        let gm = pair_toeplitz(g, params.s).apply(&mu.mass);
        let self_energy = compensated_sum(mu.mass.iter().zip(&gm).map(|(m, v)| m * v));
        Ok(MeanField { mu, params: *params, cells, self_energy })
    }

    /// `∬ g(x − y) dμ(x) dμ(y)`.
    pub fn self_energy(&self) -> f64 {
        self.self_energy
    }

    /// `(g∗μ)(x)`.
    pub fn potential(&self, x: [f64; 2]) -> f64 {
        let h = self.mu.grid.h;
        let s = self.params.s;
        if self.params.d == 1 {
            let mut acc = CompensatedSum::new();
            for &(c, _, m) in &self.cells {
                let u = x[0] - c;
                acc.add(m / h * (g_antiderivative1(u + 0.5 * h, s) - g_antiderivative1(u - 0.5 * h, s)));
            }
            return acc.value();
        }
        crate::kernel::measure_potential_2d(&self.params, self.mu, x)
    }

    /// `∫ f_η(x − p) dμ(x)`.
    pub fn smeared_truncation(&self, p: [f64; 2], eta: f64) -> f64 {
        let g = &self.mu.grid;
        let s = self.params.s;
        if self.params.d == 1 {
            let h = g.h;
            let ge = g_of_r(eta, s);
            let mut acc = 0.0;
            for &(c, _, m) in &self.cells {
                let lo = (c - 0.5 * h).max(p[0] - eta);
                let hi = (c + 0.5 * h).min(p[0] + eta);
                if hi > lo {
                    let int_g = g_antiderivative1(hi - p[0], s) - g_antiderivative1(lo - p[0], s);
                    acc += m / h * (int_g - ge * (hi - lo));
                }
            }
            return acc;
        }
        self.mu.integrate(6, |x| {
            let r = Grid::dist(x, p);
            if r < eta && r > 0.0 {
                g_of_r(r, s) - g_of_r(eta, s)
            } else {
                0.0
            }
        })
    }

    /// `F_N(X, μ) = ½ Σ_{i≠j} g(x_i − x_j) − N Σ_i (g∗μ)(x_i) + ½ N² ∬ g dμ dμ`.
    pub fn next_order_energy(&self, config: &Configuration) -> Result<f64> {
        let pairs = pair_energy(config, &self.params)?;
        let n = config.n() as f64;
        let cross: Vec<f64> = config.points.par_iter().map(|p| self.potential(*p)).collect();
        Ok(pairs - n * compensated_sum(cross) + 0.5 * n * n * self.self_energy)
    }
}

/// Next-order energy `F_N(X, μ)`, the off-diagonal energy of `Σ δ_{x_i} − N μ`.
pub fn next_order_energy(config: &Configuration, mu: &GridMeasure, params: &RieszParams) -> Result<f64> {
    config.check_params(params)?;
    MeanField::new(mu, params)?.next_order_energy(config)
}

/// `|H_N − N² E(μ_V) − N Σ ζ_V(x_i) − F_N(X, μ_V)|`, with every term evaluated
/// independently: `E(μ_V)` from the exact pair integral and the cell averages of `V`,
/// `ζ_V(x_i)` from the exact potential of `μ_V` at the points.
pub fn splitting_residual(
    config: &Configuration,
    potential: &Potential,
    equilibrium: &EquilibriumResult,
    params: &RieszParams,
) -> Result<f64> {
    config.check_params(params)?;
    let field = MeanField::new(&equilibrium.mu, params)?;
    let n = config.n() as f64;
    let h_n = hamiltonian(config, potential, params)?;
    let f_n = field.next_order_energy(config)?;
    let v_int = equilibrium.mu.integrate(6, |x| potential.value(params.d, x));
    let e_mu = 0.5 * field.self_energy() + v_int;
    let zeta_sum = compensated_sum(
        config.points.iter().map(|p| field.potential(*p) + potential.value(params.d, *p) - equilibrium.c_v),
    );
    Ok((h_n - n * n * e_mu - n * zeta_sum - f_n).abs())
}
