//! Homogeneous fractional Sobolev seminorms.
//!
//! `Λ(u) = ∫ u (−Δ)^α u = ½ c_{d,α} ∬ (u(x) − u(y))² |x − y|^{−d−2α} dx dy
//!       = (2π)^{−d} ∫ |ξ|^{2α} |û(ξ)|² dξ`  with `û(ξ) = ∫ u e^{−iξ·x}`,
//! and for signed densities `‖f‖²_{Ḣ^{−α}} = ∬ g(x − y) f(x) f(y) = C (2π)^{−d} ∫ |ξ|^{−2α} |f̂|²`
//! where `C` is the fundamental-solution constant of `g`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{Grid, SampledFunction};

use super::weights::{pair_toeplitz, GagliardoForm};
use super::RieszParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeminormMethod {
    Fourier,
    Gagliardo,
}

/// Negative-order norm together with a flag raised when the input is not mean-zero
/// although the kernel requires it (`s ≤ 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeNorm {
    pub value: f64,
    pub mean_zero_warning: bool,
}

/// Copies `f` onto a grid `factor` times wider (same spacing), filling the new nodes
/// from the tail model; the result has no tail.
fn materialize(f: &SampledFunction, factor: usize) -> SampledFunction {
    if f.tail.is_none() || factor <= 1 {
        return f.clone();
    }
    let g = &f.grid;
    let extra = [g.n[0] * (factor - 1) / 2, if g.dim == 2 { g.n[1] * (factor - 1) / 2 } else { 0 }];
    let n = [g.n[0] + 2 * extra[0], if g.dim == 2 { g.n[1] + 2 * extra[1] } else { 1 }];
    let grid = Grid {
        dim: g.dim,
        origin: [g.origin[0] - g.h * extra[0] as f64, g.origin[1] - g.h * extra[1] as f64],
        h: g.h,
        n,
    };
    let mut values = vec![0.0; grid.len()];
    for j in 0..n[1] {
        for i in 0..n[0] {
            let ii = i as isize - extra[0] as isize;
            let jj = j as isize - extra[1] as isize;
            values[grid.flat(i, j)] = f.at(ii, jj);
        }
    }
    SampledFunction { grid, values, tail: None }
}

/// `|F(ξ_k)|²` on the FFT lattice of `u` zero-padded to at least `pad` times its size,
/// together with the lattice spacing `Δξ` and the lattice sizes.
fn power_spectrum(f: &SampledFunction, pad: usize) -> (Vec<f64>, f64, [usize; 2]) {
    let g = &f.grid;
    let m = [
        (pad * g.n[0]).next_power_of_two(),
        if g.dim == 2 { (pad * g.n[1]).next_power_of_two() } else { 1 },
    ];
    // Equal spacing in both directions requires equal padded sizes.
    let m = if g.dim == 2 { [m[0].max(m[1]), m[0].max(m[1])] } else { m };
    let mut planner = FftPlanner::new();
    let mut buf = vec![Complex::new(0.0, 0.0); m[0] * m[1]];
    for j in 0..g.n[1] {
        for i in 0..g.n[0] {
            buf[i + m[0] * j] = Complex::new(f.values[g.flat(i, j)], 0.0);
        }
    }
    let p0 = planner.plan_fft_forward(m[0]);
    for row in buf.chunks_mut(m[0]) {
        p0.process(row);
    }
    if g.dim == 2 {
        let p1 = planner.plan_fft_forward(m[1]);
        let mut col = vec![Complex::new(0.0, 0.0); m[1]];
        for i in 0..m[0] {
            for j in 0..m[1] {
                col[j] = buf[i + m[0] * j];
            }
            p1.process(&mut col);
            for j in 0..m[1] {
                buf[i + m[0] * j] = col[j];
            }
        }
    }
    let vol = g.cell_volume();
    let power = buf.iter().map(|c| c.norm_sqr() * vol * vol).collect();
    (power, 2.0 * PI / (m[0] as f64 * g.h), m)
}

/// `(2π)^{−d} ∫ |ξ|^{2q} |F|² dξ` from lattice samples; the cusp of `|ξ|^{2q}` at the origin is
/// handled by subtracting `|F(0)|² e^{−σ²|ξ|²}` and adding its integral in closed form.
/// When that closed form diverges (`2q ≤ −d`) the zero mode is dropped instead, which is
/// exact for mean-zero input.
fn spectral_integral(f: &SampledFunction, q: f64, pad: usize) -> f64 {
    let g = &f.grid;
    let (power, dxi, m) = power_spectrum(f, pad);
    let d = g.dim as f64;
    let f0 = if 2.0 * q + d > 0.0 { power[0] } else { 0.0 };
    let extent = g.h * g.n[0].min(if g.dim == 2 { g.n[1] } else { g.n[0] }) as f64;
    let sigma = 0.125 * extent;
    let freq = |k: usize, len: usize| -> f64 {
        let kk = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
        kk * dxi
    };
    let mut acc = crate::quad::CompensatedSum::new();
    for j in 0..m[1] {
        let xi1 = if g.dim == 2 { freq(j, m[1]) } else { 0.0 };
        for i in 0..m[0] {
            if i == 0 && j == 0 {
                continue;
            }
            let xi0 = freq(i, m[0]);
            let r2 = xi0 * xi0 + xi1 * xi1;
            let smooth = power[i + m[0] * j] - f0 * (-sigma * sigma * r2).exp();
            acc.add(r2.powf(q) * smooth);
        }
    }
    let lattice = acc.value() * dxi.powi(g.dim as i32);
    let cusp = if f0 == 0.0 {
        0.0
    } else if g.dim == 1 {
        gamma(q + 0.5) * sigma.powf(-2.0 * q - 1.0)
    } else {
        PI * gamma(q + 1.0) * sigma.powf(-2.0 * q - 2.0)
    };
    (lattice + f0 * cusp) / (2.0 * PI).powf(d)
}

/// `‖f‖²_{Ḣ^α} = Λ(f)` by the requested method.
pub fn sobolev_seminorm(f: &SampledFunction, alpha: f64, method: SeminormMethod) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Range(format!("α = {alpha} must lie in (0, 1)")));
    }
    f.require_decay()?;
    let widen = if f.grid.dim == 1 { 8 } else { 4 };
    let u = materialize(f, widen);
    match method {
        SeminormMethod::Fourier => {
            Ok(spectral_integral(&u, alpha, 4))
        }
        SeminormMethod::Gagliardo => {
            let c = c_dalpha(u.grid.dim, alpha);
            let form = GagliardoForm::new(&u.grid, alpha, c);
            Ok(form.energy(&u.values))
        }
    }
}

/// `‖f‖²_{Ḣ^{−α}} = ∬ g(x − y) f(x) f(y)` with `α = (d − s)/2`; the Gagliardo method
/// evaluates the kernel double integral with exact cell-pair averages of `g`.
pub fn negative_sobolev_norm(
    f: &SampledFunction,
    params: &RieszParams,
    method: SeminormMethod,
) -> Result<NegativeNorm> {
    if f.grid.dim != params.d {
        return Err(Error::Invalid("function dimension differs from params.d".into()));
    }
    f.require_decay()?;
    let total: f64 = f.integral();
    let scale: f64 = f.values.iter().map(|v| v.abs()).sum::<f64>() * f.grid.cell_volume();
    let mean_zero = total.abs() <= 1e-8 * scale.max(1e-300);
    let mean_zero_warning = params.s <= 0.0 && !mean_zero;
    let value = match method {
        SeminormMethod::Gagliardo => {
            let vol = f.grid.cell_volume();
            let masses: Vec<f64> = f.values.iter().map(|v| v * vol).collect();
            let conv = pair_toeplitz(&f.grid, params.s);
            let gm = conv.apply(&masses);
            crate::quad::compensated_sum(masses.iter().zip(&gm).map(|(a, b)| a * b))
        }
        SeminormMethod::Fourier => {
            let integral = spectral_integral(f, -params.alpha, 4);
            params.green * integral
        }
    };
    Ok(NegativeNorm { value, mean_zero_warning })
}

fn c_dalpha(dim: usize, alpha: f64) -> f64 {
    let d = dim as f64;
    alpha * 4f64.powf(alpha) * gamma(0.5 * d + alpha) / (PI.powf(0.5 * d) * gamma(1.0 - alpha))
}
