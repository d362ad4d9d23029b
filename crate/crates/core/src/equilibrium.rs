//! Equilibrium measures of the mean-field energy `E(μ) = ½∬ g(x − y) dμ dμ + ∫ V dμ`
//! on a uniform grid, with the Euler–Lagrange constant, the effective potential
//! `ζ = g∗μ + V − c_V` and free-boundary exponent fits.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conv::Toeplitz;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridMeasure, SampledFunction};
use crate::kernel::weights::pair_toeplitz;
use crate::kernel::{g_antiderivative1, RieszParams};
use crate::quad::{compensated_sum, GaussLegendre};
use crate::solve::conjugate_gradient;

/// Confining potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Potential {
    /// `Σ_k c_k x^k` in one dimension and the radial `Σ_k c_k |x|^k` in two.
    Polynomial { coefficients: Vec<f64> },
    /// Interpolated samples.
    Tabulated { samples: SampledFunction },
}

impl Potential {
    /// `a·x²` (or `a·|x|²`).
    pub fn quadratic(a: f64) -> Self {
        Potential::Polynomial { coefficients: vec![0.0, 0.0, a] }
    }

    pub fn value(&self, dim: usize, x: [f64; 2]) -> f64 {
        match self {
            Potential::Polynomial { coefficients } => {
                let t = if dim == 1 { x[0] } else { x[0].hypot(x[1]) };
                coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
            Potential::Tabulated { samples } => samples.eval(x),
        }
    }

    pub fn gradient(&self, dim: usize, x: [f64; 2]) -> [f64; 2] {
        match self {
            Potential::Polynomial { coefficients } => {
                let t = if dim == 1 { x[0] } else { x[0].hypot(x[1]) };
                let dv = dv_horner(coefficients, t);
                if dim == 1 {
                    [dv, 0.0]
                } else if t == 0.0 {
                    [0.0, 0.0]
                } else {
                    [dv * x[0] / t, dv * x[1] / t]
                }
            }
            Potential::Tabulated { samples } => {
                let e = 1e-3 * samples.grid.h;
                let mut g = [0.0; 2];
                for a in 0..dim {
                    let mut xp = x;
                    let mut xm = x;
                    xp[a] += e;
                    xm[a] -= e;
                    g[a] = (samples.eval(xp) - samples.eval(xm)) / (2.0 * e);
                }
                g
            }
        }
    }

    /// Checks that `V + g(|x|)` on the box edge exceeds its minimum over the box, the boxed
    /// form of the growth condition. Growth of `|∇V|` at infinity cannot be checked on a grid.
    pub fn check_boxed_growth(&self, grid: &Grid, params: &RieszParams) -> Result<()> {
        let f = |x: [f64; 2]| {
            let r = if grid.dim == 1 { x[0].abs() } else { x[0].hypot(x[1]) };
            self.value(grid.dim, x) + if r > 0.0 { params.g(r.max(1.0)) } else { 0.0 }
        };
        let mut inner = f64::INFINITY;
        let mut edge = f64::INFINITY;
        for k in 0..grid.len() {
            let (i, j) = grid.unflat(k);
            let on_edge = i == 0 || i + 1 == grid.n[0] || (grid.dim == 2 && (j == 0 || j + 1 == grid.n[1]));
            let v = f(grid.coord(k));
            if on_edge {
                edge = edge.min(v);
            } else {
                inner = inner.min(v);
            }
        }
        if !(edge > inner) {
            return Err(Error::BoxTooSmall(format!(
                "V + g does not grow toward the box edge (edge min {edge:.4e}, interior min {inner:.4e})"
            )));
        }
        Ok(())
    }
}

fn dv_horner(coefficients: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for k in (1..coefficients.len()).rev() {
        acc = acc * t + k as f64 * coefficients[k];
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    /// Frank–Wolfe gap `⟨∇E, μ⟩ − min ∇E` of the returned measure.
    pub duality_gap: f64,
    /// Energy after each projected-gradient iteration.
    pub energy_history: Vec<f64>,
    pub polished: bool,
    pub polish_cg_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub params: RieszParams,
    pub potential: Potential,
    pub mu: GridMeasure,
    pub sigma: Vec<bool>,
    pub c_v: f64,
    pub zeta: SampledFunction,
    pub energy: f64,
    pub report: SolverReport,
}

/// Discrete energy `E(m) = ½ mᵀ G m + V̄ᵀ m` on cell masses.
struct DiscreteEnergy {
    pair: Toeplitz,
    v_cell: Vec<f64>,
}

impl DiscreteEnergy {
    fn new(grid: &Grid, potential: &Potential, params: &RieszParams) -> Self {
        DiscreteEnergy { pair: pair_toeplitz(grid, params.s), v_cell: cell_averages(grid, potential) }
    }

    fn gradient(&self, m: &[f64]) -> Vec<f64> {
        let gm = self.pair.apply(m);
        gm.iter().zip(&self.v_cell).map(|(a, b)| a + b).collect()
    }

    fn energy_with(&self, m: &[f64], grad: &[f64]) -> f64 {
        // ½ mᵀGm + V̄ᵀm = ½ mᵀ(Gm + V̄) + ½ V̄ᵀm.
        compensated_sum(m.iter().zip(grad).zip(&self.v_cell).map(|((mi, gi), vi)| 0.5 * mi * (gi + vi)))
    }
}

fn cell_averages(grid: &Grid, potential: &Potential) -> Vec<f64> {
    let rule = GaussLegendre::cached(4);
    let h = grid.h;
    (0..grid.len())
        .map(|k| {
            let c = grid.coord(k);
            if grid.dim == 1 {
                0.5 * rule.integrate(-1.0, 1.0, |t| potential.value(1, [c[0] + 0.5 * h * t, 0.0]))
            } else {
                let mut acc = 0.0;
                for (u, wu) in rule.nodes.iter().zip(&rule.weights) {
                    for (v, wv) in rule.nodes.iter().zip(&rule.weights) {
                        acc += 0.25 * wu * wv * potential.value(2, [c[0] + 0.5 * h * u, c[1] + 0.5 * h * v]);
                    }
                }
                acc
            }
        })
        .collect()
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn fw_gap(m: &[f64], grad: &[f64]) -> f64 {
    let lin = compensated_sum(m.iter().zip(grad).map(|(a, b)| a * b));
    let min = grad.iter().copied().fold(f64::INFINITY, f64::min);
    lin - min
}

/// Minimises the energy with `m` restricted to `support` and `Σ m = 1`, by conjugate
/// gradients on the mean-zero subspace (where the kernel is positive definite for every
/// admissible `s`). Returns the masses and the CG iteration count.
fn solve_on_support(energy: &DiscreteEnergy, support: &[usize], n: usize) -> Result<(Vec<f64>, usize)> {
    let ns = support.len();
    let embed = |v: &[f64]| {
        let mut full = vec![0.0; n];
        for (k, &i) in support.iter().enumerate() {
            full[i] = v[k];
        }
        full
    };
    let project = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / ns as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    };
    let m0 = vec![1.0 / ns as f64; ns];
    let g0 = energy.gradient(&embed(&m0));
    let mut b: Vec<f64> = support.iter().map(|&i| -g0[i]).collect();
    project(&mut b);
    let apply = |z: &[f64]| {
        let mut zp = z.to_vec();
        project(&mut zp);
        let gz = energy.pair.apply(&embed(&zp));
        let mut out: Vec<f64> = support.iter().map(|&i| gz[i]).collect();
        project(&mut out);
        out
    };
    let sol = conjugate_gradient(apply, &vec![1.0; ns], &b, None, 1e-13, 20 * ns + 200, "equilibrium polish")
        .or_else(|e| match e {
            Error::NoConvergence { residual, .. } if residual < 1e-9 => Ok(crate::solve::CgSolution {
                x: vec![0.0; ns],
                iterations: 0,
                relative_residual: residual,
            }),
            other => Err(other),
        })?;
    let mut z = sol.x;
    project(&mut z);
    let m: Vec<f64> = m0.iter().zip(&z).map(|(a, b)| a + b).collect();
    Ok((embed(&m), sol.iterations))
}

/// Active-set refinement of a projected-gradient iterate: solve the equality-constrained
/// problem on the current support, drop cells with negative mass, add cells violating the
/// Euler–Lagrange inequality, and repeat.
fn polish(energy: &DiscreteEnergy, start: &[f64]) -> Result<(Vec<f64>, usize)> {
    let n = start.len();
    let max_m = start.iter().copied().fold(0.0, f64::max);
    let mut active: Vec<bool> = start.iter().map(|&m| m > 1e-12 * max_m).collect();
    let mut cg_total = 0;
    for _ in 0..200 {
        let support: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
        if support.is_empty() {
            return Err(Error::Internal("active set became empty during polishing".into()));
        }
        let (m, its) = solve_on_support(energy, &support, n)?;
        cg_total += its;
        let negative: Vec<usize> = support.iter().copied().filter(|&i| m[i] < 0.0).collect();
        if !negative.is_empty() {
            // Drop the most negative cell and any cell adjacent to the support edge that went negative.
            let worst = *negative.iter().min_by(|&&a, &&b| m[a].partial_cmp(&m[b]).unwrap()).unwrap();
            for &i in &negative {
                if m[i] <= 0.5 * m[worst] || i == worst {
                    active[i] = false;
                }
            }
            continue;
        }
        let grad = energy.gradient(&m);
        let lambda = compensated_sum(support.iter().map(|&i| m[i] * grad[i]));
        let scale = lambda.abs().max(1.0);
        let violators: Vec<usize> = (0..n).filter(|&i| !active[i] && grad[i] < lambda - 1e-11 * scale).collect();
        if violators.is_empty() {
            return Ok((m, cg_total));
        }
        for i in violators {
            active[i] = true;
        }
    }
    Err(Error::NoConvergence { context: "equilibrium active-set polish".into(), iterations: 200, residual: f64::NAN })
}

/// Projected gradient on the simplex with Armijo backtracking and Barzilai–Borwein steps.
struct ProjectedGradient {
    m: Vec<f64>,
    grad: Vec<f64>,
    e: f64,
    step: f64,
    history: Vec<f64>,
    iterations: usize,
}

impl ProjectedGradient {
    fn new(energy: &DiscreteEnergy, m: Vec<f64>) -> Self {
        let grad = energy.gradient(&m);
        let e = energy.energy_with(&m, &grad);
        let step = 1.0 / m.len() as f64;
        ProjectedGradient { m, grad, e, step, history: vec![e], iterations: 0 }
    }

    fn run(&mut self, energy: &DiscreteEnergy, target: f64, max_iter: usize) {
        for _ in 0..max_iter {
            if fw_gap(&self.m, &self.grad) <= target {
                return;
            }
            self.iterations += 1;
            let mut t = self.step;
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = self.m.iter().zip(&self.grad).map(|(a, b)| a - t * b).collect();
                let cand = project_simplex(&trial);
                let gc = energy.gradient(&cand);
                let ec = energy.energy_with(&cand, &gc);
                let decrease =
                    compensated_sum(self.grad.iter().zip(cand.iter().zip(&self.m)).map(|(g, (c, o))| g * (c - o)));
                if ec <= self.e + 1e-4 * decrease {
                    accepted = Some((cand, gc, ec));
                    break;
                }
                t *= 0.5;
            }
            let Some((m_new, grad_new, e_new)) = accepted else {
                return;
            };
            let dm: Vec<f64> = m_new.iter().zip(&self.m).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = grad_new.iter().zip(&self.grad).map(|(a, b)| a - b).collect();
            let num = compensated_sum(dm.iter().map(|x| x * x));
            let den = compensated_sum(dm.iter().zip(&dg).map(|(a, b)| a * b));
            if num == 0.0 {
                return;
            }
            self.step = if den > 0.0 { (num / den).clamp(1e-12, 1e12) } else { 2.0 * t };
            self.m = m_new;
            self.grad = grad_new;
            self.e = e_new.min(self.e);
            self.history.push(self.e);
        }
    }
}

/// Computes the equilibrium measure of `potential` on `grid`.
///
/// `tol` bounds the Frank–Wolfe duality gap of the returned discrete minimiser.
pub fn solve_equilibrium(potential: &Potential, grid: &Grid, params: &RieszParams, tol: f64) -> Result<EquilibriumResult> {
    if grid.dim != params.d {
        return Err(Error::Invalid("grid dimension differs from params.d".into()));
    }
    potential.check_boxed_growth(grid, params)?;
    let energy = DiscreteEnergy::new(grid, potential, params);
    let n = grid.len();
    let mut pg = ProjectedGradient::new(&energy, vec![1.0 / n as f64; n]);
    pg.run(&energy, tol.max(1e-6), 4000);
    let mut polished = false;
    let mut polish_cg = 0;
    if let Ok((mp, its)) = polish(&energy, &pg.m) {
        let gp = energy.gradient(&mp);
        let ep = energy.energy_with(&mp, &gp);
        if ep <= pg.e + 1e-12 * pg.e.abs().max(1.0) && fw_gap(&mp, &gp) <= fw_gap(&pg.m, &pg.grad) {
            pg.m = mp;
            pg.grad = gp;
            pg.e = ep;
            pg.history.push(ep);
            polished = true;
            polish_cg = its;
        }
    }
    if fw_gap(&pg.m, &pg.grad) > tol {
        pg.run(&energy, tol, 20_000);
    }
    let ProjectedGradient { mut m, history, iterations, .. } = pg;
    // Clean round-off so the mass is one and masses are non-negative.
    let total: f64 = compensated_sum(m.iter().map(|x| x.max(0.0)));
    m.iter_mut().for_each(|x| *x = x.max(0.0) / total);
    let grad = energy.gradient(&m);
    let gap = fw_gap(&m, &grad);
    let e_final = energy.energy_with(&m, &grad);
    let report = SolverReport {
        iterations,
        duality_gap: gap,
        energy_history: history,
        polished,
        polish_cg_iterations: polish_cg,
        converged: gap <= tol,
    };
    if !report.converged {
        return Err(Error::NoConvergence {
            context: "equilibrium projected gradient".into(),
            iterations,
            residual: gap,
        });
    }
    let mu = GridMeasure::new(grid.clone(), m)?;
    let mut result = evaluate_measure(potential, mu, params)?;
    result.energy = e_final;
    result.report = report;
    if touches_edge(grid, &result.mu) {
        return Err(Error::BoxTooSmall("the support of μ_V reaches the edge of the grid".into()));
    }
    Ok(result)
}

fn touches_edge(grid: &Grid, mu: &GridMeasure) -> bool {
    let cut = 1e-4 * mu.max_density();
    (0..grid.len()).any(|k| {
        let (i, j) = grid.unflat(k);
        let edge = i == 0 || i + 1 == grid.n[0] || (grid.dim == 2 && (j == 0 || j + 1 == grid.n[1]));
        edge && mu.density(k) > cut
    })
}

/// Node-to-cell interaction weights: `w_k` is the average of `g` over the cell at lattice
/// offset `k` seen from a node.
pub(crate) fn potential_toeplitz(grid: &Grid, s: f64) -> Toeplitz {
    if grid.dim == 2 {
        return pair_toeplitz(grid, s);
    }
    let h = grid.h;
    Toeplitz::new(grid, |k, _| {
        let kf = k as f64;
        (g_antiderivative1((kf + 0.5) * h, s) - g_antiderivative1((kf - 0.5) * h, s)) / h
    })
}

/// `g ∗ μ` at the grid nodes.
pub fn potential_of(mu: &GridMeasure, params: &RieszParams) -> Vec<f64> {
    potential_toeplitz(&mu.grid, params.s).apply(&mu.mass)
}

/// Largest connected component (4-neighbour in 2-D) of `mask`.
pub(crate) fn largest_component(grid: &Grid, mask: &[bool]) -> Vec<bool> {
    let n = grid.len();
    let mut label = vec![usize::MAX; n];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..n {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        label[start] = start;
        while let Some(k) = queue.pop_front() {
            let (i, j) = grid.unflat(k);
            let mut nbrs = Vec::with_capacity(4);
            if i > 0 {
                nbrs.push(grid.flat(i - 1, j));
            }
            if i + 1 < grid.n[0] {
                nbrs.push(grid.flat(i + 1, j));
            }
            if grid.dim == 2 {
                if j > 0 {
                    nbrs.push(grid.flat(i, j - 1));
                }
                if j + 1 < grid.n[1] {
                    nbrs.push(grid.flat(i, j + 1));
                }
            }
            for q in nbrs {
                if mask[q] && label[q] == usize::MAX {
                    label[q] = start;
                    comp.push(q);
                    queue.push_back(q);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    let mut out = vec![false; n];
    for k in best {
        out[k] = true;
    }
    out
}

/// Support, Euler–Lagrange constant and effective potential of an arbitrary probability
/// measure on the grid; used for solver output and for trial measures.
pub fn evaluate_measure(potential: &Potential, mu: GridMeasure, params: &RieszParams) -> Result<EquilibriumResult> {
    let grid = mu.grid.clone();
    let total = mu.total_mass();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("μ must have unit mass, got {total}")));
    }
    let sigma = largest_component(&grid, &mu.threshold_mask(1e-4));
    let h_mu = potential_of(&mu, params);
    let total_pot: Vec<f64> = (0..grid.len()).map(|k| h_mu[k] + potential.value(grid.dim, grid.coord(k))).collect();
    let rho = mu.densities();
    let cut = 0.1 * mu.max_density();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..grid.len() {
        if rho[k] > cut {
            num += mu.mass[k] * total_pot[k];
            den += mu.mass[k];
        }
    }
    let c_v = num / den;
    let zeta = SampledFunction::new(grid.clone(), total_pot.iter().map(|t| t - c_v).collect(), None)?;
    let energy_model = DiscreteEnergy::new(&grid, potential, params);
    let grad = energy_model.gradient(&mu.mass);
    let energy = energy_model.energy_with(&mu.mass, &grad);
    let gap = fw_gap(&mu.mass, &grad);
    Ok(EquilibriumResult {
        params: *params,
        potential: potential.clone(),
        mu,
        sigma,
        c_v,
        zeta,
        energy,
        report: SolverReport {
            iterations: 0,
            duality_gap: gap,
            energy_history: vec![energy],
            polished: false,
            polish_cg_iterations: 0,
            converged: false,
        },
    })
}

/// `ζ_V = g∗μ_V + V − c_V` at the grid nodes.
pub fn effective_potential(result: &EquilibriumResult) -> SampledFunction {
    result.zeta.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElResidual {
    /// `max(0, −min ζ)` over all nodes.
    pub below: f64,
    /// `max |ζ|` over nodes of `Σ` at least two cells from its boundary.
    pub on_support: f64,
    /// `max(1, |c_V|)`, the scale the residuals are compared against.
    pub scale: f64,
}

pub fn el_residual(result: &EquilibriumResult) -> ElResidual {
    let grid = &result.mu.grid;
    let zeta = &result.zeta.values;
    let below = zeta.iter().fold(0.0f64, |m, z| m.max(-z));
    let interior = erode(grid, &result.sigma, 2);
    let on_support = (0..grid.len()).filter(|&k| interior[k]).fold(0.0f64, |m, k| m.max(zeta[k].abs()));
    ElResidual { below, on_support, scale: result.c_v.abs().max(1.0) }
}

/// Removes `layers` rings of nodes from the mask.
pub(crate) fn erode(grid: &Grid, mask: &[bool], layers: usize) -> Vec<bool> {
    let mut cur = mask.to_vec();
    for _ in 0..layers {
        let prev = cur.clone();
        for k in 0..grid.len() {
            if !prev[k] {
                continue;
            }
            let (i, j) = grid.unflat(k);
            let mut keep = i > 0 && i + 1 < grid.n[0] && prev[grid.flat(i - 1, j)] && prev[grid.flat(i + 1, j)];
            if grid.dim == 2 {
                keep = keep && j > 0 && j + 1 < grid.n[1] && prev[grid.flat(i, j - 1)] && prev[grid.flat(i, j + 1)];
            }
            cur[k] = keep;
        }
    }
    cur
}

/// Endpoints `[a, b]` of a one-dimensional support mask, at the outer cell faces.
pub fn support_interval(grid: &Grid, sigma: &[bool]) -> Result<(f64, f64)> {
    if grid.dim != 1 {
        return Err(Error::Unsupported("support intervals exist only in one dimension".into()));
    }
    let first = sigma.iter().position(|&m| m).ok_or_else(|| Error::Invalid("empty support".into()))?;
    let last = sigma.iter().rposition(|&m| m).unwrap();
    if sigma[first..=last].iter().any(|m| !m) {
        return Err(Error::Unsupported("the support is not an interval".into()));
    }
    Ok((grid.x(first) - 0.5 * grid.h, grid.x(last) + 0.5 * grid.h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFit {
    /// Fitted `p` in `μ_V ≈ c·dist^p` inside `Σ`, averaged over both endpoints.
    pub density_exponent: f64,
    /// Fitted `q` in `ζ_V ≈ c·dist^q` outside `Σ`, averaged over both endpoints.
    pub liftoff_exponent: f64,
    /// Per-endpoint fits `(endpoint, density exponent, lift-off exponent)`.
    pub endpoints: Vec<(f64, f64, f64)>,
    /// Samples `(x, μ_V(x)/dist(x)^{1−α})` in the density windows.
    pub prefactor: Vec<(f64, f64)>,
}

/// Least-squares fit of `log y = a + p log d + q d`; returns `(p, residual sum of squares)`.
fn log_fit(ds: &[f64], ys: &[f64]) -> (f64, f64) {
    let rows: Vec<[f64; 3]> = ds.iter().map(|d| [1.0, d.ln(), *d]).collect();
    let rhs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (r, b) in rows.iter().zip(&rhs) {
        for i in 0..3 {
            atb[i] += r[i] * b;
            for j in 0..3 {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    let coef = solve3(ata, atb);
    let rss = rows
        .iter()
        .zip(&rhs)
        .map(|(r, b)| (coef[0] * r[0] + coef[1] * r[1] + coef[2] * r[2] - b).powi(2))
        .sum();
    (coef[1], rss)
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let mut acc = b[r];
        for k in r + 1..3 {
            acc -= a[r][k] * x[k];
        }
        x[r] = acc / a[r][r];
    }
    x
}

/// Log-log fits of the density decay inside `Σ` and of the lift-off of `ζ_V` outside, in
/// one dimension. Fit windows skip the two cells nearest `∂Σ` and extend `window` cells.
pub fn boundary_exponent_fit(result: &EquilibriumResult, window: usize) -> Result<BoundaryFit> {
    let grid = &result.mu.grid;
    if grid.dim != 1 {
        return Err(Error::Unsupported("boundary exponent fits are implemented in one dimension".into()));
    }
    if window < 8 {
        return Err(Error::Resolution(format!("fit window of {window} cells is below the minimum of 8")));
    }
    let (a, b) = support_interval(grid, &result.sigma)?;
    let n_sigma = ((b - a) / grid.h).round() as usize;
    if n_sigma < 2 * (window + 2) + 2 {
        return Err(Error::Resolution(format!(
            "support spans {n_sigma} cells, too few for two {window}-cell boundary windows"
        )));
    }
    let rho = result.mu.densities();
    let zeta = &result.zeta.values;
    let alpha = result.params.alpha;
    let h = grid.h;
    let first = result.sigma.iter().position(|&m| m).unwrap();
    let last = result.sigma.iter().rposition(|&m| m).unwrap();
    let mut endpoints = Vec::new();
    let mut prefactor = Vec::new();
    for side in [-1i64, 1] {
        let edge = if side < 0 { a } else { b };
        let edge_cell = if side < 0 { first as i64 } else { last as i64 };
        let inner: Vec<usize> = (2..2 + window).map(|k| (edge_cell - side * k as i64) as usize).collect();
        let outer: Vec<usize> = (3..3 + window)
            .map(|k| edge_cell + side * k as i64)
            .filter(|&i| i >= 0 && (i as usize) < grid.n[0])
            .map(|i| i as usize)
            .collect();
        if outer.len() < 8 || outer.iter().any(|&i| zeta[i] <= 0.0) || inner.iter().any(|&i| rho[i] <= 0.0) {
            return Err(Error::Resolution(format!("boundary layer at {edge:.4} is not resolved on this grid")));
        }
        // Locate the free boundary to sub-cell accuracy by the best density fit.
        let mut best = (f64::INFINITY, edge, 0.0);
        for t in -40..=40 {
            let xb = edge + side as f64 * t as f64 * h / 20.0;
            let ds: Vec<f64> = inner.iter().map(|&i| side as f64 * (xb - grid.x(i))).collect();
            if ds.iter().any(|d| *d <= 0.0) {
                continue;
            }
            let ys: Vec<f64> = inner.iter().map(|&i| rho[i]).collect();
            let (p, rss) = log_fit(&ds, &ys);
            if rss < best.0 {
                best = (rss, xb, p);
            }
        }
        let xb = best.1;
        let ds_out: Vec<f64> = outer.iter().map(|&i| side as f64 * (grid.x(i) - xb)).collect();
        let ys_out: Vec<f64> = outer.iter().map(|&i| zeta[i]).collect();
        if ds_out.iter().any(|d| *d <= 0.0) {
            return Err(Error::Resolution("fitted boundary falls inside the lift-off window".into()));
        }
        let (q, _) = log_fit(&ds_out, &ys_out);
        for &i in &inner {
            let d = side as f64 * (xb - grid.x(i));
            prefactor.push((grid.x(i), rho[i] / d.powf(1.0 - alpha)));
        }
        endpoints.push((xb, best.2, q));
    }
    let density_exponent = endpoints.iter().map(|e| e.1).sum::<f64>() / endpoints.len() as f64;
    let liftoff_exponent = endpoints.iter().map(|e| e.2).sum::<f64>() / endpoints.len() as f64;
    Ok(BoundaryFit { density_exponent, liftoff_exponent, endpoints, prefactor })
}

#[derive(Serialize)]
struct Manifest<'a> {
    params: &'a RieszParams,
    potential: &'a Potential,
    c_v: f64,
    energy: f64,
    support_cells: usize,
    el_residual: ElResidual,
    boundary_fit: Option<&'a BoundaryFit>,
    solver: SolverSummary,
    limitations: Vec<&'static str>,
}

#[derive(Serialize)]
struct SolverSummary {
    iterations: usize,
    duality_gap: f64,
    polished: bool,
    polish_cg_iterations: usize,
    converged: bool,
    energy_monotone: bool,
}

impl EquilibriumResult {
    /// Writes `equilibrium.csv` (x…, mu, zeta, in_support) and `equilibrium.json`.
    pub fn write(&self, dir: &Path, fit: Option<&BoundaryFit>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let grid = &self.mu.grid;
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("equilibrium.csv"))?));
        if grid.dim == 1 {
            w.write_record(["x", "mu", "zeta", "in_support"])?;
        } else {
            w.write_record(["x", "y", "mu", "zeta", "in_support"])?;
        }
        for k in 0..grid.len() {
            let c = grid.coord(k);
            let mut row = vec![format!("{:.17e}", c[0])];
            if grid.dim == 2 {
                row.push(format!("{:.17e}", c[1]));
            }
            row.push(format!("{:.17e}", self.mu.density(k)));
            row.push(format!("{:.17e}", self.zeta.values[k]));
            row.push((self.sigma[k] as u8).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        let history = &self.report.energy_history;
        let manifest = Manifest {
            params: &self.params,
            potential: &self.potential,
            c_v: self.c_v,
            energy: self.energy,
            support_cells: self.sigma.iter().filter(|m| **m).count(),
            el_residual: el_residual(self),
            boundary_fit: fit,
            solver: SolverSummary {
                iterations: self.report.iterations,
                duality_gap: self.report.duality_gap,
                polished: self.report.polished,
                polish_cg_iterations: self.report.polish_cg_iterations,
                converged: self.report.converged,
                energy_monotone: history.windows(2).all(|w| w[1] <= w[0]),
            },
            limitations: vec![
                "growth of |∇V| at infinity is not verifiable on a bounded grid; only the boxed growth of V + g is checked",
            ],
        };
        let mut f = BufWriter::new(File::create(dir.join("equilibrium.json"))?);
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn semicircle(x: f64, r: f64) -> f64 {
        2.0 / (PI * r * r) * (r * r - x * x).max(0.0).sqrt()
    }

    fn l1_error(mu: &GridMeasure, rho: impl Fn(f64) -> f64) -> f64 {
        let g = &mu.grid;
        let rule = GaussLegendre::cached(8);
        (0..g.len())
            .map(|k| {
                let c = g.x(k);
                let d = mu.density(k);
                rule.integrate(c - 0.5 * g.h, c + 0.5 * g.h, |x| (d - rho(x)).abs())
            })
            .sum()
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.5, 0.9, -0.2]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.iter().all(|x| *x >= 0.0));
        assert_eq!(p[2], 0.0);
        assert!((p[1] - p[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn polynomial_gradient() {
        let v = Potential::Polynomial { coefficients: vec![1.0, -2.0, 0.5, 0.25] };
        let x = 0.7;
        let e = 1e-6;
        let fd = (v.value(1, [x + e, 0.0]) - v.value(1, [x - e, 0.0])) / (2.0 * e);
        assert!((v.gradient(1, [x, 0.0])[0] - fd).abs() < 1e-8);
        let q = Potential::quadratic(1.0);
        let g = q.gradient(2, [0.3, 0.4]);
        assert!((g[0] - 0.6).abs() < 1e-14 && (g[1] - 0.8).abs() < 1e-14);
    }

    #[test]
    fn log_gas_semicircle() {
        let p = RieszParams::new(1, 0.0).unwrap();
        let grid = Grid::covering_1d(-1.5, 1.5, 512).unwrap();
        let res = solve_equilibrium(&Potential::quadratic(1.0), &grid, &p, 1e-9).unwrap();
        assert!((res.mu.total_mass() - 1.0).abs() < 1e-14);
        let err = l1_error(&res.mu, |x| semicircle(x, 1.0));
        assert!(err < 0.02, "L1 error {err}");
        // c_V = ½ + log 2 for V = x².
        assert!((res.c_v - (0.5 + 2f64.ln())).abs() < 2e-3, "c_V {}", res.c_v);
        let r = el_residual(&res);
        assert!(r.below < 1e-3 * r.scale && r.on_support < 1e-3 * r.scale, "{r:?}");
        let hist = &res.report.energy_history;
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
        // Evenness.
        let n = grid.len();
        for k in 0..n / 2 {
            assert!((res.mu.mass[k] - res.mu.mass[n - 1 - k]).abs() < 1e-9);
        }
    }

    #[test]
    fn trial_measures_are_not_certified() {
        let p = RieszParams::new(1, 0.0).unwrap();
        let grid = Grid::covering_1d(-1.5, 1.5, 128).unwrap();
        let n = grid.len();
        let uniform = GridMeasure::new(grid, vec![1.0 / n as f64; n]).unwrap();
        let res = evaluate_measure(&Potential::quadratic(1.0), uniform, &p).unwrap();
        let r = el_residual(&res);
        assert!(r.below > 1e-3 * r.scale || r.on_support > 1e-3 * r.scale);
    }

    #[test]
    fn small_box_is_rejected() {
        let p = RieszParams::new(1, 0.0).unwrap();
        let grid = Grid::covering_1d(-0.8, 0.8, 128).unwrap();
        let err = solve_equilibrium(&Potential::quadratic(1.0), &grid, &p, 1e-8).unwrap_err();
        assert!(matches!(err, Error::BoxTooSmall(_)), "{err}");
    }

    #[test]
    fn riesz_case_exponents() {
        let p = RieszParams::new(1, 0.5).unwrap();
        let grid = Grid::covering_1d(-1.6, 1.6, 1024).unwrap();
        let res = solve_equilibrium(&Potential::quadratic(1.0), &grid, &p, 1e-10).unwrap();
        let fit = boundary_exponent_fit(&res, 24).unwrap();
        assert!((fit.density_exponent - 0.75).abs() < 0.05, "{fit:?}");
        assert!((fit.liftoff_exponent - 1.25).abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn log_case_rescales_support() {
        let p = RieszParams::new(1, 0.0).unwrap();
        let g1 = Grid::covering_1d(-1.5, 1.5, 256).unwrap();
        let g2 = Grid::covering_1d(-3.0, 3.0, 256).unwrap();
        let r1 = solve_equilibrium(&Potential::quadratic(1.0), &g1, &p, 1e-9).unwrap();
        let r2 = solve_equilibrium(&Potential::quadratic(0.25), &g2, &p, 1e-9).unwrap();
        let (a1, b1) = support_interval(&g1, &r1.sigma).unwrap();
        let (a2, b2) = support_interval(&g2, &r2.sigma).unwrap();
        assert!(((b2 - a2) - 2.0 * (b1 - a1)).abs() <= 2.0 * g2.h);
        for k in 0..256 {
            assert!((r1.mu.mass[k] - r2.mu.mass[k]).abs() < 1e-8);
        }
        assert!((r2.c_v - r1.c_v + 2f64.ln()).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn equilibrium_is_a_probability_measure_satisfying_el(s in -0.5f64..0.6, a in 0.5f64..2.0, b in 0.0f64..1.0) {
            let p = RieszParams::new(1, s).unwrap();
            let grid = Grid::covering_1d(-3.0, 3.0, 192).unwrap();
            let v = Potential::Polynomial { coefficients: vec![0.0, 0.0, a, 0.0, b] };
            let res = solve_equilibrium(&v, &grid, &p, 1e-9).unwrap();
            prop_assert!((res.mu.total_mass() - 1.0).abs() < 1e-12);
            prop_assert!(res.mu.mass.iter().all(|&m| m >= 0.0));
            let r = el_residual(&res);
            prop_assert!(r.below < 1e-3 * r.scale, "{:?}", r);
            let (lo, hi) = support_interval(&grid, &res.sigma).unwrap();
            prop_assert!(lo > -3.0 && hi < 3.0 && lo < 0.0 && hi > 0.0);
        }
    }
}
