//! α-harmonic extension of a function given on a set `Σ`: `u = φ` on `Σ` and
//! `(−Δ)^α u = 0` on the complement, computed on a box around `Σ` with a power tail beyond.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, PowerTail, SampledFunction};
use crate::solve::conjugate_gradient;

use super::weights::{outside_tail_integral, GagliardoForm};
use super::RieszParams;

/// Which decaying extension to return.
///
/// `MeanZero` returns `φ^Σ − κ`, the extension whose fractional Laplacian has zero total
/// mass; `κ` is the value of `φ^Σ` at infinity and is reported. It decays like
/// `|x − z|^{−(s+2)}` and exists for every admissible `s`. `Dirichlet` returns the
/// extension vanishing at infinity (`κ = 0`), which decays like `|x − z|^{−s}` and is
/// only available for `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionNormalization {
    MeanZero,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionReport {
    /// `κ`: the returned function equals `φ − κ` on `Σ`.
    pub gauge: f64,
    /// `∫ (−Δ)^α u` over `Σ` for the returned `u`.
    pub monopole: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub tail: Option<PowerTail>,
}

struct ExteriorProblem<'a> {
    form: GagliardoForm,
    sigma: &'a [bool],
    /// Outside-box integrals of unit tails: `[right, left]` in 1-D, `[radial]` in 2-D.
    unit_sources: Vec<Vec<f64>>,
    center: [f64; 2],
    exponent: f64,
    iterations: usize,
    residual: f64,
}

impl ExteriorProblem<'_> {
    fn grid(&self) -> &Grid {
        &self.form.grid
    }

    /// `c_{d,α} ∫_{outside box} tail(y) |x_i − y|^{−d−2α} dy` for the given amplitudes.
    fn tail_source(&self, amplitudes: &[f64]) -> Vec<f64> {
        let c = self.form.c_dalpha;
        (0..self.grid().len())
            .map(|i| c * self.unit_sources.iter().zip(amplitudes).map(|(t, a)| a * t[i]).sum::<f64>())
            .collect()
    }

    /// Solves `(L u)_i = source_i` at exterior nodes with `u = boundary` on `Σ`.
    fn solve(&mut self, boundary: &[f64], source: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.grid().len();
        let ext: Vec<usize> = (0..n).filter(|&i| !self.sigma[i]).collect();
        let mut fixed = vec![0.0; n];
        for i in 0..n {
            if self.sigma[i] {
                fixed[i] = boundary[i];
            }
        }
        let lf = self.form.apply(&fixed);
        let b: Vec<f64> = ext.iter().map(|&i| source[i] - lf[i]).collect();
        let diag: Vec<f64> = ext.iter().map(|&i| self.form.diag[i]).collect();
        let form = &self.form;
        let apply = |v: &[f64]| -> Vec<f64> {
            let mut full = vec![0.0; n];
            for (k, &i) in ext.iter().enumerate() {
                full[i] = v[k];
            }
            let lv = form.apply(&full);
            ext.iter().map(|&i| lv[i]).collect()
        };
        let x0: Option<Vec<f64>> = guess.map(|g| ext.iter().map(|&i| g[i]).collect());
        let sol = conjugate_gradient(apply, &diag, &b, x0.as_deref(), 1e-11, 20_000, "α-harmonic extension")?;
        self.iterations += sol.iterations;
        self.residual = self.residual.max(sol.relative_residual);
        let mut u = fixed;
        for (k, &i) in ext.iter().enumerate() {
            u[i] = sol.x[k];
        }
        Ok(u)
    }

    /// `∫_Σ [(L u)_i − source_i]`.
    fn monopole(&self, u: &[f64], source: &[f64]) -> f64 {
        let lu = self.form.apply(u);
        let vol = self.grid().cell_volume();
        crate::quad::compensated_sum(
            (0..u.len()).filter(|&i| self.sigma[i]).map(|i| lu[i] - source[i]),
        ) * vol
    }

    /// Tail amplitudes matching `u` at the outermost nodes.
    fn fit_amplitudes(&self, u: &[f64]) -> Vec<f64> {
        let g = self.grid();
        let p = self.exponent;
        if g.dim == 1 {
            let n = g.n[0];
            let right = u[n - 1] * (g.x(n - 1) - self.center[0]).abs().powf(p);
            let left = u[0] * (g.x(0) - self.center[0]).abs().powf(p);
            return vec![right, left];
        }
        let mut acc = 0.0;
        let mut count = 0usize;
        for j in 0..g.n[1] {
            for i in 0..g.n[0] {
                if i == 0 || j == 0 || i + 1 == g.n[0] || j + 1 == g.n[1] {
                    let k = g.flat(i, j);
                    acc += u[k] * Grid::dist(g.coord(k), self.center).powf(p);
                    count += 1;
                }
            }
        }
        vec![acc / count as f64]
    }

    fn tail_model(&self, amplitudes: &[f64]) -> PowerTail {
        if self.grid().dim == 1 {
            PowerTail {
                center: self.center,
                exponent: self.exponent,
                amplitude: amplitudes[0],
                amplitude_left: Some(amplitudes[1]),
            }
        } else {
            PowerTail::symmetric(self.center, self.exponent, amplitudes[0])
        }
    }
}

/// Bounding box `(lo, hi)` of the cells flagged in `mask`.
fn mask_bounds(grid: &Grid, mask: &[bool]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (k, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let x = grid.coord(k);
        for a in 0..grid.dim {
            lo[a] = lo[a].min(x[a] - 0.5 * grid.h);
            hi[a] = hi[a].max(x[a] + 0.5 * grid.h);
        }
    }
    (lo, hi)
}

/// α-harmonic extension of `phi` from the nodes flagged in `sigma`.
///
/// The exterior equations `(−Δ)^α u = 0` are imposed at every grid node outside `Σ`, with
/// the discrete operator of [`GagliardoForm`] plus the contribution of the power tail
/// beyond the box, whose amplitude is matched to the solution at the box edge.
pub fn alpha_harmonic_extension(
    phi: &SampledFunction,
    sigma: &[bool],
    params: &RieszParams,
    normalization: ExtensionNormalization,
) -> Result<(SampledFunction, ExtensionReport)> {
    let grid = &phi.grid;
    if grid.dim != params.d {
        return Err(Error::Invalid("function dimension differs from params.d".into()));
    }
    if sigma.len() != grid.len() {
        return Err(Error::Invalid(format!("mask has {} entries for {} nodes", sigma.len(), grid.len())));
    }
    if !sigma.iter().any(|&m| m) {
        return Err(Error::Invalid("Σ is empty on the grid".into()));
    }
    if sigma.iter().all(|&m| m) {
        let report = ExtensionReport {
            gauge: 0.0,
            monopole: f64::NAN,
            cg_iterations: 0,
            cg_residual: 0.0,
            tail: phi.tail.clone(),
        };
        return Ok((phi.clone(), report));
    }
    if normalization == ExtensionNormalization::Dirichlet && params.s <= 0.0 {
        return Err(Error::Unsupported(format!(
            "no extension vanishing at infinity for s = {} ≤ 0; use the mean-zero normalization",
            params.s
        )));
    }
    let (lo, hi) = mask_bounds(grid, sigma);
    let diam = if grid.dim == 1 {
        hi[0] - lo[0]
    } else {
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    };
    let side = (0..grid.dim).map(|a| grid.n[a] as f64 * grid.h).fold(f64::INFINITY, f64::min);
    if side < 4.0 * diam * (1.0 - 1e-9) {
        return Err(Error::BoxTooSmall(format!(
            "box side {side:.4} is below 4·diam(Σ) = {:.4}",
            4.0 * diam
        )));
    }
    let center = [0.5 * (lo[0] + hi[0]), if grid.dim == 2 { 0.5 * (lo[1] + hi[1]) } else { 0.0 }];
    let exponent = match normalization {
        ExtensionNormalization::MeanZero => params.s + 2.0,
        ExtensionNormalization::Dirichlet => params.s,
    };
    let units: Vec<PowerTail> = if grid.dim == 1 {
        vec![
            PowerTail { center, exponent, amplitude: 1.0, amplitude_left: Some(0.0) },
            PowerTail { center, exponent, amplitude: 0.0, amplitude_left: Some(1.0) },
        ]
    } else {
        vec![PowerTail::symmetric(center, exponent, 1.0)]
    };
    let unit_sources = units
        .iter()
        .map(|t| {
            (0..grid.len())
                .map(|k| outside_tail_integral(grid, params.alpha, t, grid.coord(k), 0.0))
                .collect()
        })
        .collect();
    let mut prob = ExteriorProblem {
        form: GagliardoForm::new(grid, params.alpha, params.c_dalpha),
        sigma,
        unit_sources,
        center,
        exponent,
        iterations: 0,
        residual: 0.0,
    };

    let n = grid.len();
    let zero = vec![0.0; n];
    let unit_solution = match normalization {
        ExtensionNormalization::MeanZero => {
            let u0 = prob.solve(&vec![1.0; n], &zero, None)?;
            let m0 = prob.monopole(&u0, &zero);
            Some((u0, m0))
        }
        ExtensionNormalization::Dirichlet => None,
    };

    // Every quantity below is affine in the tail amplitudes `A`: solve for the response to
    // `φ` and to each unit tail, then pick `A` so the fitted tail reproduces itself.
    let with_gauge = |prob: &ExteriorProblem, v: Vec<f64>, source: &[f64]| -> (Vec<f64>, f64) {
        match &unit_solution {
            Some((u0, m0)) => {
                let kappa = prob.monopole(&v, source) / m0;
                (v.iter().zip(u0).map(|(a, b)| a - kappa * b).collect(), kappa)
            }
            None => (v, 0.0),
        }
    };
    let base_raw = prob.solve(&phi.values, &zero, None)?;
    let (base, base_gauge) = with_gauge(&prob, base_raw, &zero);
    let m = units.len();
    let mut responses = Vec::with_capacity(m);
    for j in 0..m {
        let mut unit = vec![0.0; m];
        unit[j] = 1.0;
        let source = prob.tail_source(&unit);
        let raw = prob.solve(&zero, &source, None)?;
        responses.push(with_gauge(&prob, raw, &source));
    }
    let f0 = prob.fit_amplitudes(&base);
    let fits: Vec<Vec<f64>> = responses.iter().map(|(w, _)| prob.fit_amplitudes(w)).collect();
    // (I − M) A = f0 with M[i][j] = fits[j][i].
    let amplitudes = if m == 1 {
        vec![f0[0] / (1.0 - fits[0][0])]
    } else {
        let (a11, a12, a21, a22) =
            (1.0 - fits[0][0], -fits[1][0], -fits[0][1], 1.0 - fits[1][1]);
        let det = a11 * a22 - a12 * a21;
        vec![(f0[0] * a22 - a12 * f0[1]) / det, (a11 * f0[1] - a21 * f0[0]) / det]
    };
    let mut u = base;
    let mut gauge = base_gauge;
    for (j, (w, k)) in responses.iter().enumerate() {
        for i in 0..n {
            u[i] += amplitudes[j] * w[i];
        }
        gauge += amplitudes[j] * k;
    }
    let source = prob.tail_source(&amplitudes);
    let monopole = prob.monopole(&u, &source);
    let tail = prob.tail_model(&amplitudes);
    let report = ExtensionReport {
        gauge,
        monopole,
        cg_iterations: prob.iterations,
        cg_residual: prob.residual,
        tail: Some(tail.clone()),
    };
    Ok((SampledFunction { grid: grid.clone(), values: u, tail: Some(tail) }, report))
}
