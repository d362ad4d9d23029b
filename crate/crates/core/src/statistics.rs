//! Linear statistics of sampled configurations: fluctuations, the predicted Gaussian limit
//! and its empirical check, Laplace transforms, discrepancies, local laws and minimal
//! distances.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::energy::{minimal_distances, Configuration, Cube, ElectricQuadrature, LocalEnergyIntegrator, MeasureField};
use crate::equilibrium::{support_interval, EquilibriumResult};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridMeasure, SampledFunction};
use crate::kernel::{
    alpha_harmonic_extension, frac_laplacian_grid, sobolev_seminorm, ExtensionNormalization, RieszParams, SeminormMethod,
};
use crate::quad::compensated_sum;
use crate::sampler::Ensemble;

/// Largest order of derivative with a recorded bound.
pub const MAX_DERIVATIVE: usize = 5;
/// The threshold `s₀` below which the one-dimensional Gaussian limit is proved.
pub const S0_ONE_DIMENSIONAL: f64 = 0.03973;
/// Effective sample size below which [`clt_report`] refuses to report.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 100.0;

/// `φ_0(t) = exp(1 − 1/(1 − t²))` on `|t| < 1`, zero outside, with `φ_0(0) = 1`.
pub fn bump(t: f64) -> f64 {
    let u = 1.0 - t * t;
    if u <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / u).exp()
    }
}

/// Polynomials `p_k` with `φ_0^{(k)}(t) = p_k(t) φ_0(t) / (1 − t²)^{2k}`, from
/// `p_{k+1} = (1 − t²)² p_k' − 2t p_k + 4k t (1 − t²) p_k`.
fn bump_polynomials(order: usize) -> Vec<Vec<f64>> {
    let mul = |a: &[f64], b: &[f64]| {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    };
    let add = |a: &[f64], b: &[f64]| {
        let mut out = vec![0.0; a.len().max(b.len())];
        for (i, x) in a.iter().enumerate() {
            out[i] += x;
        }
        for (i, y) in b.iter().enumerate() {
            out[i] += y;
        }
        out
    };
    let u = [1.0, 0.0, -1.0];
    let u2 = mul(&u, &u);
    let mut polys = vec![vec![1.0]];
    for k in 0..order {
        let p = &polys[k];
        let dp: Vec<f64> = if p.len() > 1 { (1..p.len()).map(|i| i as f64 * p[i]).collect() } else { vec![0.0] };
        let a = mul(&u2, &dp);
        let b = mul(&[0.0, -2.0], p);
        let c = mul(&mul(&[0.0, 4.0 * k as f64], &u), p);
        polys.push(add(&add(&a, &b), &c));
    }
    polys
}

/// `φ_0^{(k)}(t)`.
pub fn bump_derivative(k: usize, t: f64) -> f64 {
    let u = 1.0 - t * t;
    if u <= 0.0 {
        return 0.0;
    }
    let polys = bump_polynomials(k);
    let p = polys[k].iter().rev().fold(0.0, |acc, c| acc * t + c);
    p * bump(t) / u.powi(2 * k as i32)
}

/// `φ(x) = a · φ_0(2|x − z| / ℓ)`, supported in the ball of radius `ℓ/2` inside the cube of
/// side `ℓ` centred at `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub dim: usize,
    pub center: [f64; 2],
    pub scale: f64,
    pub amplitude: f64,
}

impl TestFunction {
    pub fn new(dim: usize, center: [f64; 2], scale: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Range(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Range(format!("scale must be positive, got {scale}")));
        }
        Ok(TestFunction { dim, center, scale, amplitude: 1.0 })
    }

    /// The same shape with amplitude multiplied by `a`.
    pub fn times(mut self, a: f64) -> Self {
        self.amplitude *= a;
        self
    }

    /// The unit-scale profile `φ_0(2·)` centred at the origin, keeping the amplitude.
    pub fn base(&self) -> Self {
        TestFunction { dim: self.dim, center: [0.0, 0.0], scale: 1.0, amplitude: self.amplitude }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        let r = if self.dim == 1 {
            (x[0] - self.center[0]).abs()
        } else {
            Grid::dist(x, self.center)
        };
        self.amplitude * bump(2.0 * r / self.scale)
    }

    /// `φ^{(k)}(x)` in one dimension.
    pub fn derivative(&self, k: usize, x: f64) -> f64 {
        let c = 2.0 / self.scale;
        self.amplitude * c.powi(k as i32) * bump_derivative(k, c * (x - self.center[0]))
    }

    /// The constant `M` with `|φ|_{C^σ} ≤ M ℓ^{−σ}` for `σ ≤ 5`, from the sup of each
    /// derivative of the one-dimensional profile on a fine grid.
    pub fn smoothness_constant(&self) -> f64 {
        let polys = bump_polynomials(MAX_DERIVATIVE);
        let m = 4000;
        (0..=MAX_DERIVATIVE)
            .map(|k| {
                let sup = (0..m)
                    .map(|i| {
                        let t = -1.0 + 2.0 * (i as f64 + 0.5) / m as f64;
                        let u = 1.0 - t * t;
                        let p = polys[k].iter().rev().fold(0.0, |acc, c| acc * t + c);
                        (p * bump(t) / u.powi(2 * k as i32)).abs()
                    })
                    .fold(0.0, f64::max);
                2f64.powi(k as i32) * sup
            })
            .fold(0.0, f64::max)
            * self.amplitude.abs()
    }

    /// Node values on `grid`; the grid must contain the support.
    pub fn sampled(&self, grid: Grid) -> SampledFunction {
        SampledFunction::from_fn(grid, |x| self.value(x))
    }

    /// `∫ φ dμ`.
    pub fn integral(&self, mu: &GridMeasure) -> f64 {
        mu.integrate(8, |x| self.value(x))
    }
}

/// `Σ φ(x_i)`.
pub fn linear_statistic(points: &[[f64; 2]], phi: &TestFunction) -> f64 {
    compensated_sum(points.iter().map(|p| phi.value(*p)))
}

/// `Fluct_μ(φ) = Σ φ(x_i) − N ∫ φ dμ`.
pub fn fluctuation(config: &Configuration, phi: &TestFunction, mu: &GridMeasure) -> f64 {
    linear_statistic(&config.points, phi) - config.n() as f64 * phi.integral(mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CltMode {
    /// `ℓ = 1`: the variance uses the α-harmonic extension `φ^Σ` of `φ`.
    Macroscopic,
    /// `ℓ → 0`: the variance uses the unit profile and the mean shift vanishes.
    Mesoscopic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanStatus {
    /// Every term of the mean is included.
    Complete,
    /// Pressure terms are missing (`s > 0` without pressure data).
    Partial,
    /// The mesoscopic limit, where the mean shift is zero.
    Vanishing,
}

/// Tabulated pressure `f_{d,s}(β)` with linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureTable {
    pub beta: Vec<f64>,
    pub f: Vec<f64>,
}

impl PressureTable {
    fn locate(&self, b: f64) -> Result<usize> {
        if self.beta.len() < 2 || self.beta.len() != self.f.len() {
            return Err(Error::Invalid("pressure table needs at least two matching entries".into()));
        }
        if b < self.beta[0] || b > *self.beta.last().unwrap() {
            return Err(Error::Range(format!(
                "effective temperature {b} outside the tabulated range [{}, {}]",
                self.beta[0],
                self.beta.last().unwrap()
            )));
        }
        Ok(self.beta.windows(2).position(|w| b <= w[1]).unwrap_or(self.beta.len() - 2))
    }

    pub fn value(&self, b: f64) -> Result<f64> {
        let k = self.locate(b)?;
        let t = (b - self.beta[k]) / (self.beta[k + 1] - self.beta[k]);
        Ok(self.f[k] + t * (self.f[k + 1] - self.f[k]))
    }

    pub fn derivative(&self, b: f64) -> Result<f64> {
        let k = self.locate(b)?;
        Ok((self.f[k + 1] - self.f[k]) / (self.beta[k + 1] - self.beta[k]))
    }
}

/// Predicted limit of `√(2β) Fluct(φ) / (N^{1/d} ℓ)^{s/2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltPrediction {
    pub mode: CltMode,
    /// `2 Λ / C` with `Λ = ‖·‖²_{Ḣ^α}` and `C` the constant of `(−Δ)^α g = C δ`.
    pub variance: f64,
    /// `c_{d,α} / (2 c_{d,s}) · Λ`, the literal prefactor, kept for comparison with `variance`.
    pub variance_literal: f64,
    /// The seminorm `Λ` entering both variances.
    pub seminorm: f64,
    /// `Mean(φ)`; the rescaled statistic is centred at `(ℓ N^{−1/d})^{−s/2} Mean(φ)`.
    pub mean: f64,
    pub mean_status: MeanStatus,
}

/// Limit variance and mean of the rescaled fluctuation.
///
/// Mesoscopic mode evaluates `Λ` on the unit profile by the Fourier method. Macroscopic mode
/// extends `φ` α-harmonically outside `Σ` on the equilibrium grid and assembles
/// `Mean(φ) = √(2/β)/C (−1 + β/(2d)·1_{s=0}) ∫_Σ (−Δ)^α φ^Σ log μ_V` minus the pressure
/// terms, which need `pressure` when `s > 0`.
pub fn predicted_clt(
    phi: &TestFunction,
    equilibrium: &EquilibriumResult,
    params: &RieszParams,
    beta: f64,
    mode: CltMode,
    pressure: Option<&PressureTable>,
) -> Result<CltPrediction> {
    if !(beta > 0.0) {
        return Err(Error::Range(format!("β must be positive, got {beta}")));
    }
    if phi.dim != params.d {
        return Err(Error::Invalid("test function dimension differs from params.d".into()));
    }
    let scale_pair = |lambda: f64| (2.0 * lambda / params.green, params.c_dalpha / (2.0 * params.c_ds) * lambda);
    if phi.amplitude == 0.0 {
        let status = if mode == CltMode::Mesoscopic { MeanStatus::Vanishing } else { MeanStatus::Complete };
        return Ok(CltPrediction { mode, variance: 0.0, variance_literal: 0.0, seminorm: 0.0, mean: 0.0, mean_status: status });
    }
    match mode {
        CltMode::Mesoscopic => {
            let base = phi.base();
            let grid = if params.d == 1 { Grid::covering_1d(-1.0, 1.0, 2048)? } else { Grid::covering_square(-1.0, 1.0, 128)? };
            let lambda = sobolev_seminorm(&base.sampled(grid), params.alpha, SeminormMethod::Fourier)?;
            let (variance, variance_literal) = scale_pair(lambda);
            Ok(CltPrediction {
                mode,
                variance,
                variance_literal,
                seminorm: lambda,
                mean: 0.0,
                mean_status: MeanStatus::Vanishing,
            })
        }
        CltMode::Macroscopic => {
            let grid = equilibrium.mu.grid.clone();
            let sampled = phi.sampled(grid.clone());
            let (ext, _) = alpha_harmonic_extension(&sampled, &equilibrium.sigma, params, ExtensionNormalization::MeanZero)?;
            let lambda = sobolev_seminorm(&ext, params.alpha, SeminormMethod::Fourier)?;
            let (variance, variance_literal) = scale_pair(lambda);
            let rho = frac_laplacian_grid(&ext, params.alpha)?;
            let h = grid.cell_volume();
            let inside: Vec<usize> =
                (0..grid.len()).filter(|&k| equilibrium.sigma[k] && equilibrium.mu.mass[k] > 0.0).collect();
            let log_term = compensated_sum(inside.iter().map(|&k| h * rho[k] * equilibrium.mu.density(k).ln()));
            let d = params.d as f64;
            let s = params.s;
            let indicator = if s == 0.0 { beta / (2.0 * d) } else { 0.0 };
            let mut mean = (2.0 / beta).sqrt() / params.green * (-1.0 + indicator) * log_term;
            let mut status = MeanStatus::Complete;
            if s > 0.0 {
                match pressure {
                    Some(table) => {
                        let mut acc = Vec::with_capacity(inside.len());
                        for &k in &inside {
                            let m = equilibrium.mu.density(k).powf(s / d);
                            let b = beta * m;
                            acc.push(h * rho[k] * ((1.0 + s / d) * table.value(b)? * m + s / d * table.derivative(b)? * m * m));
                        }
                        mean -= (2.0 * beta).sqrt() / params.green * compensated_sum(acc);
                    }
                    None => status = MeanStatus::Partial,
                }
            }
            Ok(CltPrediction { mode, variance, variance_literal, seminorm: lambda, mean, mean_status: status })
        }
    }
}

/// Integrated autocorrelation estimate of the effective sample size, truncating the sum of
/// autocorrelations at the first non-positive pair (initial positive sequence), with pair
/// sums forced to be non-increasing.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let var0 = centred.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var0 == 0.0 || !var0.is_finite() {
        return n as f64;
    }
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = centred.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let rho = |k: usize| buf[k].re / (m as f64 * n as f64 * var0);
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while k + 1 < n {
        let pair = (rho(k) + rho(k + 1)).min(prev);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        prev = pair;
        k += 2;
    }
    (n as f64 / tau.max(1e-12)).min(n as f64)
}

/// Kolmogorov–Smirnov distance between the empirical law of `values` and `N(mean, sd²)`.
pub fn ks_distance(values: &[f64], mean: f64, sd: f64) -> f64 {
    if values.is_empty() || !(sd > 0.0) {
        return 0.0;
    }
    let Ok(normal) = Normal::new(mean, sd) else { return 0.0 };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = normal.cdf(v);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub samples: usize,
    pub effective_samples: f64,
    pub empirical_mean: f64,
    pub mean_std_error: f64,
    pub empirical_variance: f64,
    pub variance_std_error: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_distance: f64,
    pub predicted_variance: f64,
    pub predicted_variance_literal: f64,
    /// Predicted centre of the rescaled statistic.
    pub predicted_mean_shift: f64,
    pub mean_status: MeanStatus,
    /// False when the parameters lie outside the proved range, so agreement is exploratory.
    pub binding: bool,
}

/// Summary of rescaled fluctuations grouped in consecutive chains of equal length.
pub fn summarize_clt(values: &[f64], chains: usize, prediction: &CltPrediction, shift: f64, binding: bool) -> Result<CltReport> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Invalid("at least two samples are required".into()));
    }
    if chains == 0 || n % chains != 0 {
        return Err(Error::Invalid(format!("{n} samples cannot be split into {chains} equal chains")));
    }
    let per = n / chains;
    let ess: f64 = values.chunks(per).map(effective_sample_size).sum();
    if ess < MIN_EFFECTIVE_SAMPLES {
        return Err(Error::Resolution(format!(
            "effective sample size {ess:.1} is below {MIN_EFFECTIVE_SAMPLES}; run longer chains"
        )));
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    let central = |p: i32| values.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n as f64;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    let variance = m2 * n as f64 / (n - 1) as f64;
    let (skewness, excess_kurtosis) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) } else { (0.0, 0.0) };
    Ok(CltReport {
        samples: n,
        effective_samples: ess,
        empirical_mean: mean,
        mean_std_error: (variance / ess).sqrt(),
        empirical_variance: variance,
        variance_std_error: ((m4 - m2 * m2).max(0.0) / ess).sqrt(),
        skewness,
        excess_kurtosis,
        ks_distance: ks_distance(values, mean, variance.sqrt()),
        predicted_variance: prediction.variance,
        predicted_variance_literal: prediction.variance_literal,
        predicted_mean_shift: shift,
        mean_status: prediction.mean_status,
        binding,
    })
}

/// Whether `(d, s, ℓ, N)` lies in the range where the Gaussian limit is proved:
/// `s ≤ s₀` in one dimension, and `ℓ` below `N^{−s/(d(s+2))}` at the mesoscale.
pub fn clt_binding(params: &RieszParams, n: usize, ell: f64) -> bool {
    if params.d != 1 || params.s > S0_ONE_DIMENSIONAL {
        return false;
    }
    let d = params.d as f64;
    ell <= 1.0 && (params.s <= 0.0 || ell < (n as f64).powf(-params.s / (d * (params.s + 2.0))))
}

/// Rescaled fluctuations `√(2β) Fluct(φ) / (N^{1/d} ℓ)^{s/2}` of every sample.
pub fn rescaled_fluctuations(ensemble: &Ensemble, phi: &TestFunction, mu: &GridMeasure) -> Vec<f64> {
    let p = &ensemble.meta.params;
    let n = ensemble.meta.n;
    let mean_part = n as f64 * phi.integral(mu);
    let norm = (2.0 * ensemble.meta.beta).sqrt() / ((n as f64).powf(1.0 / p.d as f64) * phi.scale).powf(0.5 * p.s);
    (0..ensemble.len())
        .into_par_iter()
        .map(|k| norm * (linear_statistic(&ensemble.points(k), phi) - mean_part))
        .collect()
}

/// CLT check on an ensemble: moments, effective sample size and normality of the rescaled
/// fluctuation, against [`predicted_clt`] with `ℓ` the test-function scale.
pub fn clt_report(
    ensemble: &Ensemble,
    phi: &TestFunction,
    equilibrium: &EquilibriumResult,
    mode: CltMode,
    pressure: Option<&PressureTable>,
) -> Result<CltReport> {
    let p = &ensemble.meta.params;
    let beta = ensemble.meta.beta;
    let n = ensemble.meta.n;
    let prediction = predicted_clt(phi, equilibrium, p, beta, mode, pressure)?;
    let values = rescaled_fluctuations(ensemble, phi, &equilibrium.mu);
    let ell = if mode == CltMode::Macroscopic { 1.0 } else { phi.scale };
    let shift = (ell * (n as f64).powf(-1.0 / p.d as f64)).powf(-0.5 * p.s) * prediction.mean;
    summarize_clt(&values, ensemble.meta.chains, &prediction, shift, clt_binding(p, n, ell))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacePoint {
    pub tau: f64,
    /// `log E[exp(τ β/(1+β) Fluct)]`.
    pub log_mean_exp: f64,
    /// Largest normalised sample weight.
    pub max_weight: f64,
    pub reliable: bool,
    /// `|log E| / ((|τ| + τ²)(ℓ N^{1/d})^s)`.
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceReport {
    pub points: Vec<LaplacePoint>,
    /// `(|τ|, C(|τ|))` with `C(|τ|)` the larger constant of `±τ`, the least constant for which
    /// the bound holds at both signs.
    pub level_constants: Vec<(f64, f64)>,
    /// Ratio of the largest to the smallest `C(|τ|)` over `|τ| > 0`.
    pub constant_spread: f64,
    /// The largest constant over all `τ`.
    pub fitted_constant: f64,
}

/// `log E[exp(τ β/(1+β) Fluct)]` by max-shifted log-mean-exp over `fluctuations`, for each
/// `τ`, with the bound constant of each point.
pub fn laplace_estimate(fluctuations: &[f64], tau_grid: &[f64], beta: f64, n: usize, ell: f64, params: &RieszParams) -> Result<LaplaceReport> {
    if fluctuations.is_empty() {
        return Err(Error::Invalid("no samples".into()));
    }
    let k = beta / (1.0 + beta);
    let scale = (ell * (n as f64).powf(1.0 / params.d as f64)).powf(params.s);
    let points: Vec<LaplacePoint> = tau_grid
        .iter()
        .map(|&tau| {
            if tau == 0.0 {
                return LaplacePoint { tau, log_mean_exp: 0.0, max_weight: 1.0 / fluctuations.len() as f64, reliable: true, constant: 0.0 };
            }
            let l: Vec<f64> = fluctuations.iter().map(|f| tau * k * f).collect();
            let top = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = l.iter().map(|v| (v - top).exp()).collect();
            let total = compensated_sum(weights.iter().copied());
            let log_mean_exp = top + (total / fluctuations.len() as f64).ln();
            let max_weight = weights.iter().copied().fold(0.0, f64::max) / total;
            let bound = (tau.abs() + tau * tau) * scale;
            LaplacePoint { tau, log_mean_exp, max_weight, reliable: max_weight <= 0.5, constant: log_mean_exp.abs() / bound }
        })
        .collect();
    let mut level_constants: Vec<(f64, f64)> = Vec::new();
    for p in points.iter().filter(|p| p.tau != 0.0) {
        match level_constants.iter_mut().find(|(t, _)| *t == p.tau.abs()) {
            Some(level) => level.1 = level.1.max(p.constant),
            None => level_constants.push((p.tau.abs(), p.constant)),
        }
    }
    level_constants.sort_by(|a, b| a.0.total_cmp(&b.0));
    let hi = level_constants.iter().map(|l| l.1).fold(0.0, f64::max);
    let lo = level_constants.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
    let constant_spread = if level_constants.is_empty() { 1.0 } else if lo > 0.0 { hi / lo } else { f64::INFINITY };
    Ok(LaplaceReport { points, level_constants, constant_spread, fitted_constant: hi })
}

/// `D(B_R) = #{x_i ∈ B_R} − N μ(B_R)`.
pub fn discrepancy(config: &Configuration, mu: &GridMeasure, center: [f64; 2], radius: f64) -> f64 {
    let inside = config
        .points
        .iter()
        .filter(|p| {
            if config.dim == 1 {
                (p[0] - center[0]).abs() <= radius
            } else {
                Grid::dist(**p, center) <= radius
            }
        })
        .count();
    inside as f64 - config.n() as f64 * mu.ball_mass(center, radius)
}

/// `D² / R^s · |min(1, D / R^d)|`, the left side of the discrepancy bound.
pub fn discrepancy_functional(d: f64, radius: f64, params: &RieszParams) -> f64 {
    d * d / radius.powf(params.s) * (d / radius.powi(params.d as i32)).min(1.0).abs()
}

/// Options of the local-law report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLawOptions {
    /// Distance from `∂Σ` defining the bulk.
    pub bulk_margin: f64,
    /// Use at most this many samples (the first ones).
    pub max_samples: Option<usize>,
    pub quadrature: ElectricQuadrature,
}

impl Default for LocalLawOptions {
    fn default() -> Self {
        LocalLawOptions { bulk_margin: 0.1, max_samples: None, quadrature: ElectricQuadrature::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalLawRow {
    pub scale: f64,
    pub cubes: usize,
    /// Tiles of `Σ` at this scale that leave the bulk.
    pub skipped: usize,
    pub samples: usize,
    pub energy_mean: f64,
    pub energy_q50: f64,
    pub energy_q99: f64,
    pub energy_max: f64,
    /// `energy_mean / (ℓ^d N^{1+s/d})`.
    pub energy_normalized: f64,
    pub count_mean: f64,
    pub count_max: usize,
    /// Per (sample, cube) energies, sample-major.
    pub energies: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalLawReport {
    pub rows: Vec<LocalLawRow>,
    /// Least-squares slope of `log energy_mean` against `log ℓ`.
    pub slope: Option<f64>,
    /// `C` fitted as the largest `count / (ℓ^d N)` on the first half of the samples.
    pub count_constant: f64,
    /// Fraction of (sample, cube) pairs in the second half with `count > C ℓ^d N`.
    pub count_violation_rate: f64,
}

/// Centres of the cubes of side `ell` tiling `Σ = [a, b]` from its midpoint, split into those
/// inside the bulk and the number leaving it.
pub fn bulk_cubes(a: f64, b: f64, ell: f64, margin: f64) -> (Vec<Cube>, usize) {
    let mid = 0.5 * (a + b);
    let reach = ((b - a) / ell).ceil() as i64;
    let mut inside = Vec::new();
    let mut skipped = 0;
    for k in -reach..=reach {
        let c = mid + k as f64 * ell;
        let (lo, hi) = (c - 0.5 * ell, c + 0.5 * ell);
        if hi <= a || lo >= b {
            continue;
        }
        if lo >= a + margin && hi <= b - margin {
            inside.push(Cube { center: [c, 0.0], side: ell });
        } else {
            skipped += 1;
        }
    }
    (inside, skipped)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Local energies `∫_{Q_ℓ × [−ℓ, ℓ]} |y|^γ |∇h_{N,r}|²` and point counts in every bulk cube
/// of every scale, over the ensemble, with the log-log slope of the mean energy.
pub fn local_law_report(
    ensemble: &Ensemble,
    equilibrium: &EquilibriumResult,
    scales: &[f64],
    options: &LocalLawOptions,
) -> Result<LocalLawReport> {
    let p = &ensemble.meta.params;
    let n = ensemble.meta.n;
    let d = p.d as f64;
    if p.d != 1 {
        return Err(Error::Unsupported("local laws are evaluated in d = 1 only".into()));
    }
    if scales.is_empty() {
        return Err(Error::Invalid("no scales given".into()));
    }
    let floor = 4.0 * (n as f64).powf(-1.0 / d);
    if let Some(bad) = scales.iter().find(|&&l| l < floor * (1.0 - 1e-12)) {
        return Err(Error::Range(format!("scale {bad} is below the minimal scale 4·N^(-1/d) = {floor}")));
    }
    let (a, b) = support_interval(&equilibrium.mu.grid, &equilibrium.sigma)?;
    let samples = options.max_samples.map_or(ensemble.len(), |m| m.min(ensemble.len()));
    let configs = (0..samples).map(|k| ensemble.configuration(k)).collect::<Result<Vec<_>>>()?;
    let field = MeasureField::new(&equilibrium.mu, p)?;
    let mut rows = Vec::with_capacity(scales.len());
    for &ell in scales {
        let (cubes, skipped) = bulk_cubes(a, b, ell, options.bulk_margin);
        let integrators = cubes
            .iter()
            .map(|c| LocalEnergyIntegrator::new(&field, &equilibrium.mu, *c, n, p, options.quadrature))
            .collect::<Result<Vec<_>>>()?;
        let per_sample = configs
            .par_iter()
            .map(|x| integrators.iter().map(|it| it.evaluate(x)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let energies: Vec<f64> = per_sample.iter().flatten().map(|r| r.value).collect();
        let counts: Vec<usize> = per_sample.iter().flatten().map(|r| r.point_count).collect();
        let mut sorted = energies.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = if energies.is_empty() { f64::NAN } else { compensated_sum(energies.iter().copied()) / energies.len() as f64 };
        rows.push(LocalLawRow {
            scale: ell,
            cubes: cubes.len(),
            skipped,
            samples,
            energy_mean: mean,
            energy_q50: quantile(&sorted, 0.5),
            energy_q99: quantile(&sorted, 0.99),
            energy_max: sorted.last().copied().unwrap_or(f64::NAN),
            energy_normalized: mean / (ell.powf(d) * (n as f64).powf(1.0 + p.s / d)),
            count_mean: counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64,
            count_max: counts.iter().copied().max().unwrap_or(0),
            energies,
            counts,
        });
    }
    let usable: Vec<&LocalLawRow> = rows.iter().filter(|r| r.cubes > 0 && r.energy_mean > 0.0).collect();
    let slope = fit_slope(
        &usable.iter().map(|r| r.scale.ln()).collect::<Vec<_>>(),
        &usable.iter().map(|r| r.energy_mean.ln()).collect::<Vec<_>>(),
    );
    let half = samples / 2;
    let ratio = |row: &LocalLawRow, c: usize| row.counts[c] as f64 / (row.scale.powf(d) * n as f64);
    let mut count_constant: f64 = 0.0;
    let mut holdout = 0usize;
    for row in &rows {
        for c in 0..half * row.cubes {
            count_constant = count_constant.max(ratio(row, c));
        }
    }
    let mut violations = 0usize;
    for row in &rows {
        for c in half * row.cubes..samples * row.cubes {
            holdout += 1;
            violations += (ratio(row, c) > count_constant) as usize;
        }
    }
    Ok(LocalLawReport {
        rows,
        slope,
        count_constant,
        count_violation_rate: if holdout == 0 { 0.0 } else { violations as f64 / holdout as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinDistanceRow {
    pub cube: Cube,
    pub mean: f64,
    pub q99: f64,
    pub max: f64,
    /// Samples whose sum is non-finite or dominated by a single near-coincident pair.
    pub flagged: usize,
}

/// `Σ_{x_i ∈ Q} g(r_i)` (or `Σ g(40 r_i N^{−1/d})` when `s = 0`) for one configuration, and
/// whether terms above ten times the typical value `g(N^{−1/d}/4)` make up most of the sum.
pub fn min_distance_sum(config: &Configuration, cube: &Cube, params: &RieszParams) -> Result<(f64, bool)> {
    let r = minimal_distances(config, params)?;
    let n = config.n() as f64;
    let unit = n.powf(-1.0 / params.d as f64);
    let terms: Vec<f64> = config
        .points
        .iter()
        .zip(&r.eta)
        .filter(|(p, _)| cube.contains(**p, config.dim))
        .map(|(_, &ri)| if params.s == 0.0 { params.g(40.0 * ri * unit) } else { params.g(ri) })
        .collect();
    let total = compensated_sum(terms.iter().copied());
    let typical = if params.s == 0.0 { params.g(10.0 * unit * unit) } else { params.g(0.25 * unit) };
    let outliers = compensated_sum(terms.iter().copied().filter(|t| *t > 10.0 * typical.abs()));
    let flagged = !total.is_finite() || (outliers > 0.0 && outliers > 0.5 * total);
    Ok((total, flagged))
}

/// Statistics of [`min_distance_sum`] over the ensemble for each box.
pub fn min_distance_report(ensemble: &Ensemble, boxes: &[Cube]) -> Result<Vec<MinDistanceRow>> {
    let p = &ensemble.meta.params;
    boxes
        .iter()
        .map(|cube| {
            let values = (0..ensemble.len())
                .into_par_iter()
                .map(|k| min_distance_sum(&ensemble.configuration(k)?, cube, p))
                .collect::<Result<Vec<_>>>()?;
            let flagged = values.iter().filter(|v| v.1).count();
            let mut sums: Vec<f64> = values.iter().map(|v| v.0).collect();
            sums.sort_by(f64::total_cmp);
            let mean = compensated_sum(sums.iter().copied()) / sums.len().max(1) as f64;
            Ok(MinDistanceRow {
                cube: *cube,
                mean,
                q99: quantile(&sums, 0.99),
                max: sums.last().copied().unwrap_or(f64::NAN),
                flagged,
            })
        })
        .collect()
}

/// Gaussian variance of `Σφ(x_i)` for the sine process at inverse temperature `β`:
/// `(2/β)(2π)^{−2} ∫ |k| |φ̂(k)|² dk`, evaluated from the Fourier transform of the profile.
/// Used only as an independent check of [`predicted_clt`] at `s = 0`.
pub fn log_gas_variance(phi: &TestFunction, beta: f64) -> f64 {
    let m = 1 << 15;
    let l = 64.0 * phi.scale;
    let h = l / m as f64;
    let mut buf: Vec<Complex<f64>> =
        (0..m).map(|k| Complex::new(phi.value([phi.center[0] - 0.5 * l + k as f64 * h, 0.0]), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let dk = 2.0 * PI / l;
    let mut acc = 0.0;
    for (j, z) in buf.iter().enumerate().take(m / 2).skip(1) {
        let k = j as f64 * dk;
        acc += 2.0 * k * (h * z.norm()).powi(2) * dk;
    }
    (2.0 / beta) * acc / (4.0 * PI * PI)
}
