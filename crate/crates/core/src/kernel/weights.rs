//! Cell integrals of the fractional kernel `|y|^{−d−2α}` on a uniform lattice and the
//! discrete Gagliardo quadratic form built from them.

use std::f64::consts::{FRAC_PI_4, PI};

use crate::conv::Toeplitz;
use crate::grid::{Grid, PowerTail};
use crate::quad::GaussLegendre;

/// Kernel cell integrals for offsets `k` with `|k_a| ≤ n_a − 1`.
pub(crate) struct KernelCells {
    range: [usize; 2],
    /// `∫_{C_k} |y|^{−d−2α} dy` (zero at `k = 0`).
    pub cell: Vec<f64>,
    /// `∫_{C_k} |y|^{2−d−2α} dy / |y_k|²` (zero at `k = 0`).
    pub moment: Vec<f64>,
    /// `(1/d) ∫_{C_0} |y|^{2−d−2α} dy`.
    pub m0: f64,
}

impl KernelCells {
    pub fn new(grid: &Grid, alpha: f64) -> Self {
        let dim = grid.dim;
        let h = grid.h;
        let range = [grid.n[0] - 1, if dim == 2 { grid.n[1] - 1 } else { 0 }];
        let w0 = 2 * range[0] + 1;
        let w1 = 2 * range[1] + 1;
        let mut cell = vec![0.0; w0 * w1];
        let mut moment = vec![0.0; w0 * w1];
        let two_a = 2.0 * alpha;
        if dim == 1 {
            for k in 1..=range[0] {
                let a = (k as f64 - 0.5) * h;
                let b = (k as f64 + 0.5) * h;
                let wk = (a.powf(-two_a) - b.powf(-two_a)) / two_a;
                let mk = (b.powf(2.0 - two_a) - a.powf(2.0 - two_a))
                    / ((2.0 - two_a) * (k as f64 * h).powi(2));
                for idx in [range[0] + k, range[0] - k] {
                    cell[idx] = wk;
                    moment[idx] = mk;
                }
            }
            let m0 = 2.0 * (0.5 * h).powf(2.0 - two_a) / (2.0 - two_a);
            return KernelCells { range, cell, moment, m0 };
        }
        let fine = GaussLegendre::cached(20);
        let coarse = GaussLegendre::cached(3);
        for k1 in 0..=range[1] {
            for k0 in 0..=range[0] {
                if k0 == 0 && k1 == 0 {
                    continue;
                }
                let rule = if k0.max(k1) <= 6 { &fine } else { &coarse };
                let c0 = k0 as f64 * h;
                let c1 = k1 as f64 * h;
                let mut wk = 0.0;
                let mut mk = 0.0;
                for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
                    for (y, wy) in rule.nodes.iter().zip(&rule.weights) {
                        let r2 = (c0 + 0.5 * h * x).powi(2) + (c1 + 0.5 * h * y).powi(2);
                        let w = 0.25 * h * h * wx * wy;
                        wk += w * r2.powf(-1.0 - alpha);
                        mk += w * r2.powf(-alpha);
                    }
                }
                mk /= c0 * c0 + c1 * c1;
                for (s0, s1) in [(1isize, 1isize), (-1, 1), (1, -1), (-1, -1)] {
                    let i0 = (range[0] as isize + s0 * k0 as isize) as usize;
                    let i1 = (range[1] as isize + s1 * k1 as isize) as usize;
                    cell[i0 + w0 * i1] = wk;
                    moment[i0 + w0 * i1] = mk;
                }
            }
        }
        let half = 0.5 * h;
        let m0 = 0.5
            * 8.0
            * fine.integrate(0.0, FRAC_PI_4, |t| (half / t.cos()).powf(2.0 - two_a) / (2.0 - two_a));
        KernelCells { range, cell, moment, m0 }
    }

    #[inline]
    pub fn index(&self, k0: isize, k1: isize) -> usize {
        let w0 = 2 * self.range[0] + 1;
        (k0 + self.range[0] as isize) as usize + w0 * (k1 + self.range[1] as isize) as usize
    }

    pub fn cell_at(&self, k0: isize, k1: isize) -> f64 {
        self.cell[self.index(k0, k1)]
    }

    pub fn moment_at(&self, k0: isize, k1: isize) -> f64 {
        self.moment[self.index(k0, k1)]
    }
}

/// `∫_{|y|_∞ > R} |y|^{−d−2α}` and `∫_{|y|_∞ ≤ R} y_1² |y|^{−d−2α}`.
pub(crate) fn box_constants(dim: usize, alpha: f64, r: f64) -> (f64, f64) {
    let two_a = 2.0 * alpha;
    if dim == 1 {
        return (2.0 * r.powf(-two_a) / two_a, 2.0 * r.powf(2.0 - two_a) / (2.0 - two_a));
    }
    let rule = GaussLegendre::cached(40);
    let far = 8.0 * rule.integrate(0.0, FRAC_PI_4, |t| (r / t.cos()).powf(-two_a) / two_a);
    let quad = 0.5
        * 8.0
        * rule.integrate(0.0, FRAC_PI_4, |t| (r / t.cos()).powf(2.0 - two_a) / (2.0 - two_a));
    (far, quad)
}

/// Distance from `x` (inside the rectangle `[lo, hi]`) to its boundary along direction `theta`.
pub(crate) fn ray_exit(x: [f64; 2], lo: [f64; 2], hi: [f64; 2], theta: f64) -> f64 {
    let e = [theta.cos(), theta.sin()];
    let mut t = f64::INFINITY;
    for a in 0..2 {
        if e[a] > 1e-300 {
            t = t.min((hi[a] - x[a]) / e[a]);
        } else if e[a] < -1e-300 {
            t = t.min((lo[a] - x[a]) / e[a]);
        }
    }
    t.max(0.0)
}

/// Angles in `[θ0, θ0 + 2π)` at which the ray from `x` hits a corner of `[lo, hi]`.
fn corner_angles(x: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Vec<f64> {
    let mut v: Vec<f64> = [[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]
        .iter()
        .map(|c| (c[1] - x[1]).atan2(c[0] - x[0]).rem_euclid(2.0 * PI))
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Integrates `f(θ)` over the circle, splitting at the given breakpoints.
pub(crate) fn integrate_circle<F: FnMut(f64) -> f64>(breaks: &[f64], q: usize, mut f: F) -> f64 {
    let rule = GaussLegendre::cached(q);
    let mut b: Vec<f64> = breaks.iter().map(|t| t.rem_euclid(2.0 * PI)).collect();
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
    if b.is_empty() {
        b.push(0.0);
    }
    let mut acc = 0.0;
    for i in 0..b.len() {
        let a0 = b[i];
        let a1 = if i + 1 < b.len() { b[i + 1] } else { b[0] + 2.0 * PI };
        if a1 > a0 {
            acc += rule.integrate(a0, a1, &mut f);
        }
    }
    acc
}

/// `∫_{y ∉ grid} |x − y|^{−d−2α} dy` for a node `x` of the grid.
pub(crate) fn outside_mass(grid: &Grid, alpha: f64, x: [f64; 2]) -> f64 {
    let two_a = 2.0 * alpha;
    let lo = grid.lower();
    let hi = grid.upper();
    if grid.dim == 1 {
        return ((x[0] - lo[0]).powf(-two_a) + (hi[0] - x[0]).powf(-two_a)) / two_a;
    }
    let breaks = corner_angles(x, lo, hi);
    integrate_circle(&breaks, 24, |t| ray_exit(x, lo, hi, t).powf(-two_a) / two_a)
}

/// `∫_{y ∉ grid, |y − x|_∞ > r_min} tail(y) |x − y|^{−d−2α} dy`.
pub(crate) fn outside_tail_integral(
    grid: &Grid,
    alpha: f64,
    tail: &PowerTail,
    x: [f64; 2],
    r_min: f64,
) -> f64 {
    let two_a = 2.0 * alpha;
    let lo = grid.lower();
    let hi = grid.upper();
    let vrule = GaussLegendre::cached(16);
    let radial = |r0: f64, dir: [f64; 2]| -> f64 {
        let mut acc = 0.0;
        for piece in 0..4 {
            let a = piece as f64 / 4.0;
            acc += vrule.integrate(a, a + 0.25, |v| {
                let r = r0 * v.powf(-1.0 / two_a);
                tail.value(grid.dim, [x[0] + r * dir[0], x[1] + r * dir[1]])
            });
        }
        acc * r0.powf(-two_a) / two_a
    };
    if grid.dim == 1 {
        let right = (hi[0] - x[0]).max(r_min);
        let left = (x[0] - lo[0]).max(r_min);
        return radial(right, [1.0, 0.0]) + radial(left, [-1.0, 0.0]);
    }
    let mut breaks = corner_angles(x, lo, hi);
    for q in 0..4 {
        breaks.push(FRAC_PI_4 + q as f64 * 0.5 * PI);
    }
    let near_lo = [x[0] - r_min, x[1] - r_min];
    let near_hi = [x[0] + r_min, x[1] + r_min];
    integrate_circle(&breaks, 16, |t| {
        let r0 = ray_exit(x, lo, hi, t).max(ray_exit(x, near_lo, near_hi, t));
        radial(r0, [t.cos(), t.sin()])
    })
}

/// Discrete Gagliardo form on a grid:
/// `E(u) = ½ c_{d,α} h^d [Σ_i Σ_{k≠0} w_k (u_i − u_{i+k})² + 2 Σ_i Out_i u_i²]`
/// with moment-corrected weights `w_k` (the self-cell gradient moment is folded into
/// the nearest-neighbour weights) and `u ≡ 0` beyond the grid. The associated operator
/// `(L u)_i = c_{d,α}[(S_i + Out_i) u_i − Σ_k w_k u_{i+k}]` approximates `(−Δ)^α u`.
pub struct GagliardoForm {
    pub grid: Grid,
    pub alpha: f64,
    pub c_dalpha: f64,
    conv: Toeplitz,
    /// `c_{d,α}(S_i + Out_i)`, the diagonal of `L`.
    pub diag: Vec<f64>,
    pub outside: Vec<f64>,
}

impl GagliardoForm {
    pub fn new(grid: &Grid, alpha: f64, c_dalpha: f64) -> Self {
        let cells = KernelCells::new(grid, alpha);
        let h = grid.h;
        let dim = grid.dim;
        let nn = cells.m0 / (2.0 * h * h);
        let weight = |k0: isize, k1: isize| -> f64 {
            if k0 == 0 && k1 == 0 {
                return 0.0;
            }
            let mut w = cells.moment_at(k0, k1);
            if (k0.abs() == 1 && k1 == 0) || (dim == 2 && k0 == 0 && k1.abs() == 1) {
                w += nn;
            }
            w
        };
        let conv = Toeplitz::new(grid, weight);
        let row = conv.apply(&vec![1.0; grid.len()]);
        let outside: Vec<f64> = (0..grid.len()).map(|k| outside_mass(grid, alpha, grid.coord(k))).collect();
        let diag = row.iter().zip(&outside).map(|(r, o)| c_dalpha * (r + o)).collect();
        GagliardoForm { grid: grid.clone(), alpha, c_dalpha, conv, diag, outside }
    }

    /// `L u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let wu = self.conv.apply(u);
        u.iter()
            .zip(&wu)
            .zip(&self.diag)
            .map(|((ui, wi), di)| di * ui - self.c_dalpha * wi)
            .collect()
    }

    /// `Λ(u) = h^d Σ_i u_i (L u)_i`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let lu = self.apply(u);
        crate::quad::compensated_sum(u.iter().zip(&lu).map(|(a, b)| a * b)) * self.grid.cell_volume()
    }

    /// Bilinear form `h^d Σ_i u_i (L v)_i`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let lv = self.apply(v);
        crate::quad::compensated_sum(u.iter().zip(&lv).map(|(a, b)| a * b)) * self.grid.cell_volume()
    }
}


/// Average of `g(x − y)` over `x ∈ C_0`, `y ∈ C_k` for square cells of side `h`.
pub(crate) fn pair_weight(dim: usize, h: f64, s: f64, k0: isize, k1: isize) -> f64 {
    use super::{g_antiderivative2, g_of_r};
    if dim == 1 {
        let k = k0.abs();
        if k > 64 {
            let r = k as f64 * h;
            let g2 = (s + 1.0) * r.powf(-s - 2.0);
            let g4 = (s + 1.0) * (s + 2.0) * (s + 3.0) * r.powf(-s - 4.0);
            return g_of_r(r, s) + h * h * g2 / 12.0 + h.powi(4) * g4 / 360.0;
        }
        let kf = k as f64;
        let p = |t: f64| g_antiderivative2(t * h, s);
        return (p(kf + 1.0) - 2.0 * p(kf) + p(kf - 1.0)) / (h * h);
    }
    let (a, b) = (k0.abs(), k1.abs());
    if a.max(b) > 6 {
        let r = h * ((a * a + b * b) as f64).sqrt();
        return g_of_r(r, s) + h * h * s * r.powf(-s - 2.0) / 12.0;
    }
    // Integrate the tent-weighted kernel over the four quadrants of [−h, h]².
    let centre = [a as f64 * h, b as f64 * h];
    let mut acc = 0.0;
    for (qx, qy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
        let f = |u: f64, v: f64| -> f64 {
            let (x, y) = (qx * u, qy * v);
            let tent = (1.0 - u / h) * (1.0 - v / h) / (h * h);
            let r = ((centre[0] + x).powi(2) + (centre[1] + y).powi(2)).sqrt();
            if r == 0.0 {
                0.0
            } else {
                tent * g_of_r(r, s)
            }
        };
        // The singular point −k h is a corner of this quadrant iff it equals one of its corners.
        let corner = [(-centre[0]) * qx, (-centre[1]) * qy];
        let singular_corner = [0.0, h]
            .iter()
            .flat_map(|&cx| [0.0, h].into_iter().map(move |cy| (cx, cy)))
            .find(|&(cx, cy)| (cx - corner[0]).abs() < 1e-12 * h && (cy - corner[1]).abs() < 1e-12 * h);
        acc += match singular_corner {
            Some(c) => duffy_square(h, c, &f),
            None => {
                let rule = GaussLegendre::cached(16);
                rule.integrate(0.0, h, |u| rule.integrate(0.0, h, |v| f(u, v)))
            }
        };
    }
    acc
}

/// `∫_{[0,h]²} f` for an integrand singular at the corner `c`, via two Duffy triangles.
fn duffy_square<F: Fn(f64, f64) -> f64>(h: f64, c: (f64, f64), f: &F) -> f64 {
    let rule = GaussLegendre::cached(16);
    let sx = if c.0 == 0.0 { 1.0 } else { -1.0 };
    let sy = if c.1 == 0.0 { 1.0 } else { -1.0 };
    let mut acc = 0.0;
    for swap in [false, true] {
        acc += rule.integrate_graded(0.0, 1.0, 12, 0.35, |xi| {
            rule.integrate(0.0, 1.0, |eta| {
                let (p, q) = if swap { (xi * eta, xi) } else { (xi, xi * eta) };
                f(c.0 + sx * p * h, c.1 + sy * q * h) * xi * h * h
            })
        });
    }
    acc
}

/// Toeplitz product with the cell-pair averages of `g` on `grid`.
pub(crate) fn pair_toeplitz(grid: &Grid, s: f64) -> Toeplitz {
    let dim = grid.dim;
    let h = grid.h;
    if dim == 1 {
        let table: Vec<f64> = (0..grid.n[0]).map(|k| pair_weight(1, h, s, k as isize, 0)).collect();
        return Toeplitz::new(grid, |a, _| table[a.unsigned_abs()]);
    }
    let n0 = grid.n[0];
    let n1 = grid.n[1];
    let mut table = vec![0.0; n0 * n1];
    for b in 0..n1 {
        for a in 0..n0 {
            table[a + n0 * b] = pair_weight(2, h, s, a as isize, b as isize);
        }
    }
    Toeplitz::new(grid, |a, b| table[a.unsigned_abs() + n0 * b.unsigned_abs()])
}

#[cfg(test)]
mod pair_tests {
    use super::*;

    #[test]
    fn pair_weights_match_brute_force_1d() {
        let h = 0.1;
        for &s in &[0.0, 0.5, -0.5] {
            for k in [0isize, 1, 3, 70] {
                let rule = GaussLegendre::new(40);
                let g = |r: f64| if r == 0.0 { 0.0 } else { super::super::g_of_r(r, s) };
                let kh = k as f64 * h;
                let right = rule.integrate_graded(0.0, h, 60, 0.3, |v| (1.0 - v / h) / h * g(kh + v));
                let left = rule.integrate_graded(0.0, h, 60, 0.3, |w| w / h / h * g((kh - h + w).abs()));
                let brute = if k == 0 { 2.0 * right } else { right + left };
                let w = pair_weight(1, h, s, k, 0);
                let tol = 1e-9;
                assert!((w - brute).abs() < tol * w.abs().max(1.0), "s={s} k={k} {w} {brute}");
            }
        }
    }

    #[test]
    fn pair_weights_2d_are_continuous_across_the_switch() {
        let h = 0.05;
        let s = 1.0;
        let near = pair_weight(2, h, s, 6, 0);
        let far = {
            let r: f64 = 6.0 * h;
            super::super::g_of_r(r, s) + h * h * s * r.powf(-s - 2.0) / 12.0
        };
        assert!((near - far).abs() < 1e-4 * near);
        let w0 = pair_weight(2, h, s, 0, 0);
        assert!(w0.is_finite() && w0 > near);
    }
}
