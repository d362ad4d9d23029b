//! Riesz kernels, their constants, the fractional Laplacian, fractional Sobolev
//! seminorms, α-harmonic extensions and the Caffarelli–Silvestre extension.

mod cs;
mod extension;
mod fraclap;
mod seminorm;
pub(crate) mod weights;

pub use cs::{cs_extension, ExtendedGrid, ExtensionField, ExtensionSource};
pub(crate) use cs::{cos_power_integral, measure_potential_2d};
#[cfg(test)]
pub(crate) use cs::segment_gradient_1d;
pub use extension::{alpha_harmonic_extension, ExtensionNormalization, ExtensionReport};
pub use fraclap::{frac_laplacian_grid, frac_laplacian_pv, FracLaplacian};
pub use seminorm::{negative_sobolev_norm, sobolev_seminorm, NegativeNorm, SeminormMethod};
pub use weights::GagliardoForm;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Dimension, Riesz exponent and every constant derived from them.
///
/// `c_ds`, `c_dalpha` and `cbar_alpha` are the three tabulated constants. `green` is the
/// constant `C` in `(−Δ)^α g = C δ` for the kernel `g` as normalised here (`c_ds / s`,
/// and `π` for the one-dimensional logarithm), and `c_ext` is the constant in
/// `−div(|y|^γ ∇g) = c_ext δ` on `R^{d+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RieszParams {
    pub d: usize,
    pub s: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub c_ds: f64,
    pub c_dalpha: f64,
    pub cbar_alpha: f64,
    pub green: f64,
    pub c_ext: f64,
}

impl RieszParams {
    pub fn new(d: usize, s: f64) -> Result<Self> {
        check_range(d, s)?;
        let alpha = 0.5 * (d as f64 - s);
        let gamma_w = s + 1.0 - d as f64;
        let (c_ds, c_dalpha, cbar_alpha) = kernel_constants(d, s)?;
        let green = if s == 0.0 { PI } else { c_ds / s };
        let c_ext = extension_constant(d, gamma_w);
        Ok(RieszParams { d, s, alpha, gamma: gamma_w, c_ds, c_dalpha, cbar_alpha, green, c_ext })
    }

    /// Kernel value at distance `r > 0`.
    #[inline]
    pub fn g(&self, r: f64) -> f64 {
        g_of_r(r, self.s)
    }

    /// Radial derivative `g'(r) = −r^{−s−1}`.
    #[inline]
    pub fn dg(&self, r: f64) -> f64 {
        -r.powf(-self.s - 1.0)
    }

    /// The mean-field scaling factor `N^{s/d}` of the kernel (one for the logarithm).
    pub fn n_pow_s_over_d(&self, n: usize) -> f64 {
        (n as f64).powf(self.s / self.d as f64)
    }
}

fn check_range(d: usize, s: f64) -> Result<()> {
    if d != 1 && d != 2 {
        return Err(Error::Range(format!("dimension must be 1 or 2, got {d}")));
    }
    let lo = d as f64 - 2.0;
    let hi = d as f64;
    if !(s > lo && s < hi) || !s.is_finite() {
        return Err(Error::Range(format!(
            "exponent s = {s} must lie in the open interval ({lo}, {hi}) for d = {d}"
        )));
    }
    Ok(())
}

/// `g(x) = |x|^{−s}/s` for `s ≠ 0` and `−log|x|` for `s = 0`.
pub fn riesz_g(x: &[f64], params: &RieszParams) -> Result<f64> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(Error::Singularity("the Riesz kernel is singular at the origin".into()));
    }
    Ok(g_of_r(r, params.s))
}

#[inline]
pub(crate) fn g_of_r(r: f64, s: f64) -> f64 {
    if s == 0.0 {
        -r.ln()
    } else {
        r.powf(-s) / s
    }
}

/// Odd antiderivative of `u ↦ g(|u|)` on the line.
pub(crate) fn g_antiderivative1(u: f64, s: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    let a = u.abs();
    let v = if s == 0.0 { a - a * a.ln() } else { a.powf(1.0 - s) / (s * (1.0 - s)) };
    v * u.signum()
}

/// Even second antiderivative of `u ↦ g(|u|)` on the line.
pub(crate) fn g_antiderivative2(u: f64, s: f64) -> f64 {
    let a = u.abs();
    if a == 0.0 {
        return 0.0;
    }
    if s == 0.0 {
        -0.5 * a * a * a.ln() + 0.75 * a * a
    } else {
        a.powf(2.0 - s) / (s * (1.0 - s) * (2.0 - s))
    }
}

/// `(c_ds, c_dalpha, cbar_alpha)` for `d − 2 < s < d`.
///
/// `c_ds = π^{d/2} 4^α Γ(α)/Γ(d/2 − α)`, replaced by `π` for the one-dimensional
/// logarithmic kernel where the Gamma expression degenerates;
/// `c_dalpha = α 4^α Γ(d/2 + α)/(π^{d/2} Γ(1 − α))`; `cbar_alpha = −Γ(1 + α)/Γ(1 − α)`.
pub fn kernel_constants(d: usize, s: f64) -> Result<(f64, f64, f64)> {
    check_range(d, s)?;
    let df = d as f64;
    let alpha = 0.5 * (df - s);
    let c_ds = if s == 0.0 {
        PI
    } else {
        PI.powf(0.5 * df) * 4f64.powf(alpha) * gamma(alpha) / gamma(0.5 * df - alpha)
    };
    let c_dalpha =
        alpha * 4f64.powf(alpha) * gamma(0.5 * df + alpha) / (PI.powf(0.5 * df) * gamma(1.0 - alpha));
    let cbar = -gamma(1.0 + alpha) / gamma(1.0 - alpha);
    Ok((c_ds, c_dalpha, cbar))
}

/// `∫_{S^d} |ω_{d+1}|^γ dω`, the flux constant of `|y|^γ ∇g` through spheres of `R^{d+1}`.
pub fn extension_constant(d: usize, gamma_w: f64) -> f64 {
    let df = d as f64;
    2.0 * PI.powf(0.5 * df) * gamma(0.5 * (gamma_w + 1.0)) / gamma(0.5 * (df + 1.0 + gamma_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::GaussLegendre;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn kernel_values() {
        let p = RieszParams::new(1, 0.5).unwrap();
        assert_relative_eq!(riesz_g(&[1.0], &p).unwrap(), 2.0);
        assert_relative_eq!(riesz_g(&[0.5], &p).unwrap(), 2.0 * 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(riesz_g(&[-0.5], &p).unwrap(), riesz_g(&[0.5], &p).unwrap());
        let p0 = RieszParams::new(1, 0.0).unwrap();
        assert_eq!(riesz_g(&[1.0], &p0).unwrap(), 0.0);
        assert!(matches!(riesz_g(&[0.0], &p0), Err(Error::Singularity(_))));
        let p2 = RieszParams::new(2, 1.0).unwrap();
        assert_relative_eq!(riesz_g(&[3.0, 4.0], &p2).unwrap(), 0.2);
    }

    #[test]
    fn range_checks() {
        assert!(RieszParams::new(1, 1.0).is_err());
        assert!(RieszParams::new(1, -1.0).is_err());
        assert!(RieszParams::new(2, 0.0).is_err());
        assert!(RieszParams::new(3, 1.5).is_err());
        let p = RieszParams::new(1, -0.5).unwrap();
        assert!(p.alpha > 0.0 && p.alpha < 1.0 && p.gamma.abs() < 1.0);
        assert!(p.c_ds < 0.0 && p.green > 0.0);
    }

    #[test]
    fn antiderivatives_differentiate_back() {
        for &s in &[0.0, 0.5, -0.4, 0.9] {
            for &u in &[0.3, 1.7, -0.8] {
                let e = 1e-5;
                let e2 = 1e-3;
                let d1 = (g_antiderivative1(u + e, s) - g_antiderivative1(u - e, s)) / (2.0 * e);
                assert_relative_eq!(d1, g_of_r(u.abs(), s), max_relative = 1e-8);
                let d2 = (g_antiderivative2(u + e2, s) - 2.0 * g_antiderivative2(u, s)
                    + g_antiderivative2(u - e2, s))
                    / (e2 * e2);
                assert_relative_eq!(d2, g_of_r(u.abs(), s), max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn green_constant_is_continuous_at_the_logarithm() {
        let near = RieszParams::new(1, 1e-7).unwrap();
        assert_relative_eq!(near.green, PI, max_relative = 1e-6);
    }

    #[test]
    fn extension_constant_matches_sphere_flux() {
        for &s in &[0.0, 0.5, -0.5] {
            let p = RieszParams::new(1, s).unwrap();
            let rule = GaussLegendre::new(200);
            let flux = 4.0 * rule.integrate_graded(0.0, std::f64::consts::FRAC_PI_2, 80, 0.4, |t| {
                t.sin().powf(p.gamma)
            });
            assert_relative_eq!(flux, p.c_ext, max_relative = 1e-9);
        }
        let p = RieszParams::new(1, 0.0).unwrap();
        assert_relative_eq!(p.c_ext, 2.0 * PI, max_relative = 1e-14);
        let p2 = RieszParams::new(2, 1.0).unwrap();
        assert_relative_eq!(p2.c_ext, 4.0 * PI, max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn derived_constants_stay_in_range(d in 1usize..=2, t in 0.001f64..0.999) {
            let s = d as f64 - 2.0 + 2.0 * t;
            let p = RieszParams::new(d, s).unwrap();
            prop_assert!(p.alpha > 0.0 && p.alpha < 1.0);
            prop_assert!(p.gamma.abs() < 1.0);
            prop_assert!(p.green > 0.0 && p.green.is_finite());
            prop_assert!(p.c_ext > 0.0);
            prop_assert!(p.cbar_alpha < 0.0);
            prop_assert!(p.c_dalpha > 0.0);
            if s > 0.0 {
                prop_assert!(p.c_ds > 0.0);
            }
        }
    }
}
