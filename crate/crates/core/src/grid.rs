//! Uniform cell-centred grids, sampled functions with power tails, and grid measures.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::GaussLegendre;

/// Uniform lattice of `n[0] × n[1]` cells of side `h`; node `(i, j)` sits at the centre of its cell.
/// One-dimensional grids have `dim == 1` and `n[1] == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub origin: [f64; 2],
    pub h: f64,
    pub n: [usize; 2],
}

impl Grid {
    pub fn new_1d(origin: f64, h: f64, n: usize) -> Result<Self> {
        Self::validate(h, n)?;
        Ok(Grid { dim: 1, origin: [origin, 0.0], h, n: [n, 1] })
    }

    pub fn new_2d(origin: [f64; 2], h: f64, n: [usize; 2]) -> Result<Self> {
        Self::validate(h, n[0])?;
        Self::validate(h, n[1])?;
        Ok(Grid { dim: 2, origin, h, n })
    }

    /// `n` cells exactly covering `[a, b]`.
    pub fn covering_1d(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(b > a) {
            return Err(Error::Invalid(format!("empty interval [{a}, {b}]")));
        }
        let h = (b - a) / n as f64;
        Self::new_1d(a + 0.5 * h, h, n)
    }

    /// Square cells of side `(b - a) / n` covering `[a, b]²`.
    pub fn covering_square(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(b > a) {
            return Err(Error::Invalid(format!("empty interval [{a}, {b}]")));
        }
        let h = (b - a) / n as f64;
        Self::new_2d([a + 0.5 * h, a + 0.5 * h], h, [n, n])
    }

    fn validate(h: f64, n: usize) -> Result<()> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Invalid(format!("grid spacing must be positive, got {h}")));
        }
        if n == 0 {
            return Err(Error::Invalid("grid needs at least one cell".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn flat(&self, i: usize, j: usize) -> usize {
        i + self.n[0] * j
    }

    pub fn unflat(&self, k: usize) -> (usize, usize) {
        (k % self.n[0], k / self.n[0])
    }

    pub fn x(&self, i: usize) -> f64 {
        self.origin[0] + self.h * i as f64
    }

    pub fn coord_signed(&self, i: isize, j: isize) -> [f64; 2] {
        [
            self.origin[0] + self.h * i as f64,
            if self.dim == 2 { self.origin[1] + self.h * j as f64 } else { 0.0 },
        ]
    }

    pub fn coord(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.unflat(k);
        self.coord_signed(i as isize, j as isize)
    }

    pub fn nodes_1d(&self) -> Vec<f64> {
        (0..self.n[0]).map(|i| self.x(i)).collect()
    }

    /// Lower corner of the covered region (cell edges).
    pub fn lower(&self) -> [f64; 2] {
        [self.origin[0] - 0.5 * self.h, self.origin[1] - 0.5 * self.h]
    }

    /// Upper corner of the covered region (cell edges).
    pub fn upper(&self) -> [f64; 2] {
        [
            self.origin[0] + self.h * (self.n[0] as f64 - 0.5),
            self.origin[1] + self.h * (self.n[1] as f64 - 0.5),
        ]
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        let lo = self.lower();
        let hi = self.upper();
        if x[0] < lo[0] || x[0] > hi[0] {
            return false;
        }
        self.dim == 1 || (x[1] >= lo[1] && x[1] <= hi[1])
    }

    /// Cell index containing `x`, if any.
    pub fn locate(&self, x: [f64; 2]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let i = (((x[0] - self.origin[0]) / self.h) + 0.5).floor().clamp(0.0, (self.n[0] - 1) as f64);
        let j = if self.dim == 2 {
            (((x[1] - self.origin[1]) / self.h) + 0.5).floor().clamp(0.0, (self.n[1] - 1) as f64)
        } else {
            0.0
        };
        Some(self.flat(i as usize, j as usize))
    }

    /// Same lattice refined by an integer factor (cells split, extent unchanged).
    pub fn refined(&self, factor: usize) -> Self {
        let h = self.h / factor as f64;
        let lo = self.lower();
        let mut n = [self.n[0] * factor, self.n[1]];
        let mut origin = [lo[0] + 0.5 * h, 0.0];
        if self.dim == 2 {
            n[1] = self.n[1] * factor;
            origin[1] = lo[1] + 0.5 * h;
        }
        Grid { dim: self.dim, origin, h, n }
    }

    pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }
}

/// Power-law model `A·|x − c|^{−p}` for values beyond the grid. In one dimension the
/// left side (`x < c`) may carry its own amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTail {
    pub center: [f64; 2],
    pub exponent: f64,
    pub amplitude: f64,
    pub amplitude_left: Option<f64>,
}

impl PowerTail {
    pub fn symmetric(center: [f64; 2], exponent: f64, amplitude: f64) -> Self {
        PowerTail { center, exponent, amplitude, amplitude_left: None }
    }

    pub fn value(&self, dim: usize, x: [f64; 2]) -> f64 {
        let r = if dim == 1 { (x[0] - self.center[0]).abs() } else { Grid::dist(x, self.center) };
        if r == 0.0 {
            return 0.0;
        }
        let a = if dim == 1 && x[0] < self.center[0] {
            self.amplitude_left.unwrap_or(self.amplitude)
        } else {
            self.amplitude
        };
        a * r.powf(-self.exponent)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        PowerTail {
            center: self.center,
            exponent: self.exponent,
            amplitude: self.amplitude * factor,
            amplitude_left: self.amplitude_left.map(|a| a * factor),
        }
    }
}

/// Node values on a [`Grid`] plus an optional power tail used beyond the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub tail: Option<PowerTail>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    grid: Grid,
    tail: Option<PowerTail>,
    columns: Vec<String>,
}

impl SampledFunction {
    pub fn new(grid: Grid, values: Vec<f64>, tail: Option<PowerTail>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Invalid(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(t) = &tail {
            if !(t.exponent > 0.0) {
                return Err(Error::Invalid(format!(
                    "tail exponent must be positive, got {}",
                    t.exponent
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite sample".into()));
        }
        Ok(SampledFunction { grid, values, tail })
    }

    pub fn from_fn<F: Fn([f64; 2]) -> f64>(grid: Grid, f: F) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.coord(k))).collect();
        SampledFunction { grid, values, tail: None }
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = vec![0.0; grid.len()];
        SampledFunction { grid, values, tail: None }
    }

    pub fn with_tail(mut self, tail: PowerTail) -> Self {
        self.tail = Some(tail);
        self
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Value at a (possibly out-of-range) lattice index; the tail model or zero beyond the grid.
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let inside = i >= 0
            && (i as usize) < self.grid.n[0]
            && (self.grid.dim == 1 || (j >= 0 && (j as usize) < self.grid.n[1]));
        if inside {
            let jj = if self.grid.dim == 1 { 0 } else { j as usize };
            self.values[self.grid.flat(i as usize, jj)]
        } else {
            self.outside_value(self.grid.coord_signed(i, j))
        }
    }

    fn outside_value(&self, x: [f64; 2]) -> f64 {
        match &self.tail {
            Some(t) => t.value(self.grid.dim, x),
            None => 0.0,
        }
    }

    /// Linear (1-D) or bilinear (2-D) interpolation, tail model beyond the covered region.
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        if !self.grid.contains(x) {
            return self.outside_value(x);
        }
        let g = &self.grid;
        let u = (x[0] - g.origin[0]) / g.h;
        let i0 = u.floor();
        let t = u - i0;
        if g.dim == 1 {
            let i0 = i0 as isize;
            return (1.0 - t) * self.at(i0, 0) + t * self.at(i0 + 1, 0);
        }
        let v = (x[1] - g.origin[1]) / g.h;
        let j0 = v.floor();
        let w = v - j0;
        let (i0, j0) = (i0 as isize, j0 as isize);
        (1.0 - t) * (1.0 - w) * self.at(i0, j0)
            + t * (1.0 - w) * self.at(i0 + 1, j0)
            + (1.0 - t) * w * self.at(i0, j0 + 1)
            + t * w * self.at(i0 + 1, j0 + 1)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute value on the outermost ring of nodes.
    pub fn boundary_max_abs(&self) -> f64 {
        let g = &self.grid;
        let mut m = 0.0f64;
        for k in 0..g.len() {
            let (i, j) = g.unflat(k);
            let edge = i == 0
                || i + 1 == g.n[0]
                || (g.dim == 2 && (j == 0 || j + 1 == g.n[1]));
            if edge {
                m = m.max(self.values[k].abs());
            }
        }
        m
    }

    /// Errors unless the function is effectively compactly supported or carries a tail.
    pub fn require_decay(&self) -> Result<()> {
        if self.tail.is_some() {
            return Ok(());
        }
        let scale = self.max_abs();
        let edge = self.boundary_max_abs();
        if edge > 1e-8 * scale.max(1e-300) && edge > 1e-14 {
            return Err(Error::TailRequired(format!(
                "boundary values reach {edge:.3e} (max {scale:.3e}) and no tail model is attached"
            )));
        }
        Ok(())
    }

    /// Riemann sum `∫ f` over the grid (tail ignored).
    pub fn integral(&self) -> f64 {
        crate::quad::compensated_sum(self.values.iter().copied()) * self.grid.cell_volume()
    }

    pub fn linear_combination(a: f64, f: &Self, b: f64, g: &Self) -> Result<Self> {
        if f.grid != g.grid {
            return Err(Error::Invalid("functions live on different grids".into()));
        }
        let values = f.values.iter().zip(&g.values).map(|(x, y)| a * x + b * y).collect();
        let tail = match (&f.tail, &g.tail) {
            (None, None) => None,
            (Some(t), None) => Some(t.scaled(a)),
            (None, Some(t)) => Some(t.scaled(b)),
            (Some(t1), Some(t2)) => {
                if t1.exponent != t2.exponent || t1.center != t2.center {
                    return Err(Error::Invalid("tails with different exponents or centres".into()));
                }
                Some(PowerTail {
                    center: t1.center,
                    exponent: t1.exponent,
                    amplitude: a * t1.amplitude + b * t2.amplitude,
                    amplitude_left: match (t1.amplitude_left, t2.amplitude_left) {
                        (None, None) => None,
                        (l1, l2) => Some(
                            a * l1.unwrap_or(t1.amplitude) + b * l2.unwrap_or(t2.amplitude),
                        ),
                    },
                })
            }
        };
        Ok(SampledFunction { grid: f.grid.clone(), values, tail })
    }

    /// Writes `x[,y],value` rows to `csv_path` and the geometry and tail to `json_path`.
    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
        let columns: Vec<String> = if self.grid.dim == 1 {
            vec!["x".into(), "value".into()]
        } else {
            vec!["x".into(), "y".into(), "value".into()]
        };
        w.write_record(&columns)?;
        for k in 0..self.grid.len() {
            let c = self.grid.coord(k);
            let mut row = vec![format!("{:.17e}", c[0])];
            if self.grid.dim == 2 {
                row.push(format!("{:.17e}", c[1]));
            }
            row.push(format!("{:.17e}", self.values[k]));
            w.write_record(&row)?;
        }
        w.flush()?;
        let sidecar = Sidecar { grid: self.grid.clone(), tail: self.tail.clone(), columns };
        let mut f = BufWriter::new(File::create(json_path)?);
        serde_json::to_writer_pretty(&mut f, &sidecar)?;
        f.flush()?;
        Ok(())
    }

    pub fn read(csv_path: &Path, json_path: &Path) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(json_path)?))?;
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(csv_path)?));
        let value_col = sidecar.columns.len() - 1;
        let mut values = Vec::with_capacity(sidecar.grid.len());
        for rec in r.records() {
            let rec = rec?;
            let v: f64 = rec
                .get(value_col)
                .ok_or_else(|| Error::Format("short CSV row".into()))?
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("bad value: {e}")))?;
            values.push(v);
        }
        SampledFunction::new(sidecar.grid, values, sidecar.tail)
    }
}

/// Piecewise-constant measure: `mass[k]` is the mass of cell `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub grid: Grid,
    pub mass: Vec<f64>,
}

impl GridMeasure {
    pub fn new(grid: Grid, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.len() {
            return Err(Error::Invalid("mass vector does not match grid".into()));
        }
        if mass.iter().any(|m| !(m.is_finite()) || *m < 0.0) {
            return Err(Error::Invalid("masses must be finite and non-negative".into()));
        }
        Ok(GridMeasure { grid, mass })
    }

    /// Measure with density `rho` sampled at the cell centres.
    pub fn from_density<F: Fn([f64; 2]) -> f64>(grid: Grid, rho: F) -> Result<Self> {
        let vol = grid.cell_volume();
        let mass = (0..grid.len()).map(|k| rho(grid.coord(k)).max(0.0) * vol).collect();
        Self::new(grid, mass)
    }

    pub fn total_mass(&self) -> f64 {
        crate::quad::compensated_sum(self.mass.iter().copied())
    }

    pub fn density(&self, k: usize) -> f64 {
        self.mass[k] / self.grid.cell_volume()
    }

    pub fn densities(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.mass.iter().map(|m| m / vol).collect()
    }

    pub fn max_density(&self) -> f64 {
        self.densities().into_iter().fold(0.0, f64::max)
    }

    /// Density at an arbitrary point (piecewise constant; zero off the grid).
    pub fn density_at(&self, x: [f64; 2]) -> f64 {
        match self.grid.locate(x) {
            Some(k) => self.density(k),
            None => 0.0,
        }
    }

    /// `{density > theta · max density}`.
    pub fn threshold_mask(&self, theta: f64) -> Vec<bool> {
        let cut = theta * self.max_density();
        self.densities().into_iter().map(|r| r > cut).collect()
    }

    /// `∫ f dμ` with a tensor Gauss rule of `q` points per axis in each cell.
    pub fn integrate<F: Fn([f64; 2]) -> f64 + Sync>(&self, q: usize, f: F) -> f64 {
        let rule = GaussLegendre::cached(q);
        let h = self.grid.h;
        let mut acc = crate::quad::CompensatedSum::new();
        for k in 0..self.grid.len() {
            let m = self.mass[k];
            if m == 0.0 {
                continue;
            }
            let c = self.grid.coord(k);
            let mut avg = 0.0;
            if self.grid.dim == 1 {
                for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                    avg += 0.5 * w * f([c[0] + 0.5 * h * x, 0.0]);
                }
            } else {
                for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
                    for (y, wy) in rule.nodes.iter().zip(&rule.weights) {
                        avg += 0.25 * wx * wy * f([c[0] + 0.5 * h * x, c[1] + 0.5 * h * y]);
                    }
                }
            }
            acc.add(m * avg);
        }
        acc.value()
    }

    /// Mass of the interval `[a, b]` (1-D, exact for piecewise-constant density).
    pub fn interval_mass(&self, a: f64, b: f64) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for i in 0..g.n[0] {
            let lo = g.x(i) - 0.5 * g.h;
            let hi = lo + g.h;
            let overlap = (hi.min(b) - lo.max(a)).max(0.0);
            if overlap > 0.0 {
                acc += self.mass[i] * overlap / g.h;
            }
        }
        acc
    }

    /// Mass of the closed ball `B(center, r)`; exact in 1-D, sub-sampled overlap in 2-D.
    pub fn ball_mass(&self, center: [f64; 2], r: f64) -> f64 {
        if self.grid.dim == 1 {
            return self.interval_mass(center[0] - r, center[0] + r);
        }
        let g = &self.grid;
        let half_diag = g.h * std::f64::consts::FRAC_1_SQRT_2;
        let sub = 16;
        let mut acc = 0.0;
        for k in 0..g.len() {
            if self.mass[k] == 0.0 {
                continue;
            }
            let c = g.coord(k);
            let d = Grid::dist(c, center);
            if d + half_diag <= r {
                acc += self.mass[k];
            } else if d - half_diag < r {
                let mut inside = 0usize;
                for a in 0..sub {
                    for b in 0..sub {
                        let p = [
                            c[0] - 0.5 * g.h + g.h * (a as f64 + 0.5) / sub as f64,
                            c[1] - 0.5 * g.h + g.h * (b as f64 + 0.5) / sub as f64,
                        ];
                        if Grid::dist(p, center) <= r {
                            inside += 1;
                        }
                    }
                }
                acc += self.mass[k] * inside as f64 / (sub * sub) as f64;
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_grid_geometry() {
        let g = Grid::covering_1d(-1.0, 1.0, 4).unwrap();
        assert_eq!(g.h, 0.5);
        assert_eq!(g.x(0), -0.75);
        assert_eq!(g.lower()[0], -1.0);
        assert!((g.upper()[0] - 1.0).abs() < 1e-15);
        assert_eq!(g.locate([0.1, 0.0]), Some(2));
    }

    #[test]
    fn interpolation_and_tail() {
        let g = Grid::covering_1d(0.0, 1.0, 10).unwrap();
        let f = SampledFunction::from_fn(g, |x| 2.0 * x[0])
            .with_tail(PowerTail::symmetric([0.0, 0.0], 2.0, 3.0));
        assert!((f.eval([0.52, 0.0]) - 1.04).abs() < 1e-12);
        assert!((f.eval([2.0, 0.0]) - 0.75).abs() < 1e-12);
        assert!((f.at(20, 0) - 3.0 / (2.05f64).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn constant_without_tail_is_rejected() {
        let g = Grid::covering_1d(-1.0, 1.0, 32).unwrap();
        let f = SampledFunction::from_fn(g, |_| 1.0);
        assert!(matches!(f.require_decay(), Err(Error::TailRequired(_))));
    }

    #[test]
    fn measure_masses() {
        let g = Grid::covering_1d(-1.0, 1.0, 100).unwrap();
        let m = GridMeasure::from_density(g, |_| 0.5).unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        assert!((m.interval_mass(-0.25, 0.25) - 0.25).abs() < 1e-12);
        assert!((m.integrate(3, |x| x[0] * x[0]) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = std::env::temp_dir().join(format!("riesz-grid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let g = Grid::covering_square(-1.0, 1.0, 5).unwrap();
        let f = SampledFunction::from_fn(g, |x| x[0] - 2.0 * x[1])
            .with_tail(PowerTail::symmetric([0.0, 0.0], 3.0, 0.5));
        f.write(&dir.join("f.csv"), &dir.join("f.json")).unwrap();
        let back = SampledFunction::read(&dir.join("f.csv"), &dir.join("f.json")).unwrap();
        assert_eq!(back, f);
        std::fs::remove_dir_all(&dir).ok();
    }
}
