//! Metropolis sampling of the Gibbs measure `exp(−β N^{−s/d} H_N)`, ensembles with
//! binary persistence, and free energies by thermodynamic integration.
//!
//! Every chain owns a ChaCha8 stream selected by `(master seed, chain index)`, so results do
//! not depend on how chains are scheduled across threads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::energy::{Configuration, MeanField};
use crate::equilibrium::{EquilibriumResult, Potential};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridMeasure};
use crate::kernel::{g_of_r, RieszParams};
use crate::quad::{compensated_sum, CompensatedSum};
use crate::statistics::effective_sample_size;

const MAGIC: &[u8; 8] = b"RZENSMBL";
const FORMAT_VERSION: u32 = 1;
/// Proposals between full recomputations of the cached energy.
pub const CHECK_INTERVAL: u64 = 1000;
/// Relative tolerance of the cache-consistency check.
pub const CHECK_TOLERANCE: f64 = 1e-8;
/// Proposals closer than this to another particle are rejected.
const COINCIDENCE: f64 = 1e-14;
const TARGET_ACCEPTANCE: f64 = 0.3;
const ADAPT_WINDOW: u64 = 50;
/// Gelman–Rubin value above which an ensemble is flagged as poorly mixed.
pub const MIXING_THRESHOLD: f64 = 1.1;

/// State space and energy of the sampled system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    /// Points in `R^d` confined by `V`; the target is `exp(−β N^{−s/d} H_N)`.
    Confined { potential: Potential },
    /// One particle coordinate restricted to `origin + k·spacing`, `0 ≤ k < states`, with
    /// lattice-valued random-walk proposals. Used to check the sampler against an exact
    /// enumeration of the chain.
    Lattice { potential: Potential, origin: f64, spacing: f64, states: usize },
    /// `N` points in the torus `[0, L)^d` with background density `N / L^d`, interacting through
    /// the minimum-image kernel `g(r) − g(L/2)` cut off at `r = L/2`. The target is `exp(−β F)`
    /// where `F` includes the uniform background.
    PeriodicBox { length: f64 },
}

/// A fully specified sampling problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub params: RieszParams,
    pub model: Model,
    pub n: usize,
    pub beta: f64,
    /// Multiplier of the energy in the log-density.
    factor: f64,
    /// `g(L/2)` for the periodic model.
    cutoff_value: f64,
    /// Constant part of the energy (the background self-interaction in the periodic model).
    constant: f64,
}

impl Target {
    pub fn new(params: RieszParams, model: Model, n: usize, beta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("the number of particles must be positive".into()));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Range(format!("β must be finite and non-negative, got {beta}")));
        }
        let d = params.d;
        let (factor, cutoff_value, constant) = match &model {
            Model::Confined { .. } => (beta / params.n_pow_s_over_d(n), 0.0, 0.0),
            Model::Lattice { origin, spacing, states, .. } => {
                if d != 1 {
                    return Err(Error::Unsupported("the lattice model is one-dimensional".into()));
                }
                if !(*spacing > 0.0) || !origin.is_finite() || *states < n.max(2) {
                    return Err(Error::Invalid(format!(
                        "lattice needs a positive spacing and at least max(N, 2) states (spacing {spacing}, {states} states)"
                    )));
                }
                (beta / params.n_pow_s_over_d(n), 0.0, 0.0)
            }
            Model::PeriodicBox { length } => {
                if !(*length > 0.0) || !length.is_finite() {
                    return Err(Error::Invalid(format!("box length must be positive, got {length}")));
                }
                let half = 0.5 * length;
                let density = n as f64 / length.powi(d as i32);
                (beta, g_of_r(half, params.s), -0.5 * density * n as f64 * truncated_kernel_integral(&params, half))
            }
        };
        Ok(Target { params, model, n, beta, factor, cutoff_value, constant })
    }

    /// The coefficient of the energy in the log-density: `β N^{−s/d}`, or `β` in the box.
    pub fn exponent_factor(&self) -> f64 {
        self.factor
    }

    pub fn dim(&self) -> usize {
        self.params.d
    }

    #[inline]
    fn pair(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match &self.model {
            Model::PeriodicBox { length } => {
                let r = minimum_image(a, b, *length, self.params.d);
                if r >= 0.5 * length {
                    0.0
                } else {
                    g_of_r(r, self.params.s) - self.cutoff_value
                }
            }
            _ => g_of_r(Grid::dist(a, b), self.params.s),
        }
    }

    #[inline]
    fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match &self.model {
            Model::PeriodicBox { length } => minimum_image(a, b, *length, self.params.d),
            _ => Grid::dist(a, b),
        }
    }

    #[inline]
    fn one_body(&self, a: [f64; 2]) -> f64 {
        match &self.model {
            Model::Confined { potential } | Model::Lattice { potential, .. } => {
                self.n as f64 * potential.value(self.params.d, a)
            }
            Model::PeriodicBox { .. } => 0.0,
        }
    }

    /// Energy of a configuration: `H_N` for the confined and lattice models, the jellium
    /// energy `F` for the periodic box.
    pub fn energy(&self, points: &[[f64; 2]]) -> Result<f64> {
        self.check_points(points)?;
        let (pairs, one) = self.energy_parts(points);
        Ok(compensated_sum(pairs.iter().map(|u| 0.5 * u).chain(one)) + self.constant)
    }

    /// Per-particle interaction sums `Σ_{j≠i} k(x_i, x_j)` and one-body terms.
    fn energy_parts(&self, points: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
        let pairs = points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let mut acc = CompensatedSum::new();
                for (j, &q) in points.iter().enumerate() {
                    if j != i {
                        acc.add(self.pair(p, q));
                    }
                }
                acc.value()
            })
            .collect();
        let one = points.iter().map(|&p| self.one_body(p)).collect();
        (pairs, one)
    }

    fn check_points(&self, points: &[[f64; 2]]) -> Result<()> {
        if points.len() != self.n {
            return Err(Error::Invalid(format!("expected {} points, got {}", self.n, points.len())));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Invalid("configuration contains a non-finite coordinate".into()));
        }
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if self.distance(points[i], points[j]) < COINCIDENCE {
                    return Err(Error::Singularity(format!("points {i} and {j} coincide")));
                }
            }
        }
        if let Model::Lattice { origin, spacing, states, .. } = &self.model {
            for p in points {
                let k = (p[0] - origin) / spacing;
                if (k - k.round()).abs() > 1e-9 || k.round() < 0.0 || k.round() >= *states as f64 {
                    return Err(Error::Invalid(format!("{} is not a lattice state", p[0])));
                }
            }
        }
        Ok(())
    }

    /// Independent draws used to start a chain: from `mu` when given, otherwise uniform on
    /// `[−1, 1]^d`, the lattice states or the box.
    pub fn initial_positions(&self, mu: Option<&GridMeasure>, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 2]>> {
        let d = self.params.d;
        let draw = |rng: &mut ChaCha8Rng| -> [f64; 2] {
            match &self.model {
                Model::Lattice { origin, spacing, states, .. } => {
                    [origin + spacing * rng.random_range(0..*states) as f64, 0.0]
                }
                Model::PeriodicBox { length } => {
                    let x = rng.random::<f64>() * length;
                    let y = if d == 2 { rng.random::<f64>() * length } else { 0.0 };
                    [x, y]
                }
                Model::Confined { .. } => match mu {
                    Some(m) => draw_from_measure(m, rng),
                    None => {
                        let x = rng.random_range(-1.0..1.0);
                        let y = if d == 2 { rng.random_range(-1.0..1.0) } else { 0.0 };
                        [x, y]
                    }
                },
            }
        };
        for _ in 0..1000 {
            let pts: Vec<[f64; 2]> = (0..self.n).map(|_| draw(rng)).collect();
            if self.check_points(&pts).is_ok() {
                return Ok(pts);
            }
        }
        Err(Error::Invalid("could not draw a configuration of distinct admissible points".into()))
    }
}

/// `∫_{|x| < R} (g(|x|) − g(R)) dx = ω_d R^{d−s} / (d (d − s))`.
fn truncated_kernel_integral(params: &RieszParams, r: f64) -> f64 {
    let d = params.d as f64;
    let omega = if params.d == 1 { 2.0 } else { 2.0 * std::f64::consts::PI };
    omega * r.powf(d - params.s) / (d * (d - params.s))
}

#[inline]
fn minimum_image(a: [f64; 2], b: [f64; 2], length: f64, dim: usize) -> f64 {
    let wrap = |t: f64| t - length * (t / length).round();
    let dx = wrap(a[0] - b[0]);
    if dim == 1 {
        dx.abs()
    } else {
        dx.hypot(wrap(a[1] - b[1]))
    }
}

fn draw_from_measure(mu: &GridMeasure, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let total = mu.total_mass();
    let mut u = rng.random::<f64>() * total;
    let mut cell = mu.mass.len() - 1;
    for (k, &m) in mu.mass.iter().enumerate() {
        if u < m {
            cell = k;
            break;
        }
        u -= m;
    }
    let c = mu.grid.coord(cell);
    let h = mu.grid.h;
    let x = c[0] + h * (rng.random::<f64>() - 0.5);
    let y = if mu.grid.dim == 2 { c[1] + h * (rng.random::<f64>() - 0.5) } else { 0.0 };
    [x, y]
}

/// Deterministic seed for a named purpose, derived from a master seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // FNV-1a selects the ChaCha stream for the label.
    let stream = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.random()
}

/// The generator of chain `chain` under master seed `seed`.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// `min(1, exp(−β N^{−s/d} ΔH))` for the target.
pub fn acceptance_probability(delta_h: f64, target: &Target) -> f64 {
    let e = -target.exponent_factor() * delta_h;
    if e >= 0.0 {
        1.0
    } else {
        e.exp()
    }
}

/// Probability that a lattice proposal with scale `scale` moves by `offset` lattice steps:
/// the mass of `[offset − ½, offset + ½] · spacing` under `N(0, scale²)`.
pub fn lattice_proposal_probability(offset: i64, scale: f64, spacing: f64) -> f64 {
    let z = |t: f64| 0.5 * erfc(-t / std::f64::consts::SQRT_2);
    let lo = (offset as f64 - 0.5) * spacing / scale;
    let hi = (offset as f64 + 0.5) * spacing / scale;
    if lo >= 0.0 {
        // Upper tails avoid cancellation.
        z(-lo) - z(-hi)
    } else {
        z(hi) - z(lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub proposals: u64,
    pub acceptances: u64,
    /// Standard deviation of the Gaussian random-walk proposal.
    pub scale: f64,
}

impl ChainStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.acceptances as f64 / self.proposals as f64
        }
    }
}

/// A running chain: positions, cached interaction sums, cached energy and generator.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub positions: Vec<[f64; 2]>,
    pair_sums: Vec<f64>,
    one_body: Vec<f64>,
    energy: f64,
    rng: ChaCha8Rng,
    pub stats: ChainStats,
    since_check: u64,
    scratch: Vec<f64>,
}

impl ChainState {
    pub fn new(target: &Target, positions: Vec<[f64; 2]>, scale: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Range(format!("proposal scale must be positive, got {scale}")));
        }
        target.check_points(&positions)?;
        let positions: Vec<[f64; 2]> = if target.dim() == 1 {
            positions.into_iter().map(|p| [p[0], 0.0]).collect()
        } else {
            positions
        };
        let (pair_sums, one_body) = target.energy_parts(&positions);
        let energy = total_energy(target, &pair_sums, &one_body);
        Ok(ChainState {
            scratch: vec![0.0; positions.len()],
            positions,
            pair_sums,
            one_body,
            energy,
            rng,
            stats: ChainStats { proposals: 0, acceptances: 0, scale },
            since_check: 0,
        })
    }

    /// Cached energy (see [`Target::energy`]).
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn log_density(&self, target: &Target) -> f64 {
        -target.exponent_factor() * self.energy
    }

    pub fn configuration(&self, dim: usize) -> Result<Configuration> {
        Configuration::new(dim, self.positions.clone())
    }

    /// Recomputes every cached quantity and compares the energy with the cached value;
    /// returns the relative discrepancy.
    pub fn check_consistency(&mut self, target: &Target) -> Result<f64> {
        let (pairs, one) = target.energy_parts(&self.positions);
        let fresh = total_energy(target, &pairs, &one);
        let magnitude = compensated_sum(pairs.iter().map(|u| 0.5 * u.abs()).chain(one.iter().map(|v| v.abs())))
            + target.constant.abs();
        let rel = (fresh - self.energy).abs() / magnitude.max(fresh.abs()).max(f64::MIN_POSITIVE);
        if !(rel < CHECK_TOLERANCE) {
            return Err(Error::Internal(format!(
                "cached energy {:.12e} differs from recomputed {:.12e} (relative {rel:.3e}) after {} proposals",
                self.energy, fresh, self.stats.proposals
            )));
        }
        self.pair_sums = pairs;
        self.one_body = one;
        self.energy = fresh;
        self.since_check = 0;
        Ok(rel)
    }

    fn propose(&mut self, target: &Target, x: [f64; 2]) -> Option<[f64; 2]> {
        let sigma = self.stats.scale;
        let d = target.dim();
        match &target.model {
            Model::Confined { .. } => {
                let dx: f64 = self.rng.sample(StandardNormal);
                let dy: f64 = if d == 2 { self.rng.sample(StandardNormal) } else { 0.0 };
                Some([x[0] + sigma * dx, x[1] + sigma * dy])
            }
            Model::Lattice { origin, spacing, states, .. } => {
                let z: f64 = self.rng.sample(StandardNormal);
                let step = (sigma * z / spacing).round();
                let k = ((x[0] - origin) / spacing).round() + step;
                if k < 0.0 || k >= *states as f64 || step == 0.0 {
                    return None;
                }
                Some([origin + k * spacing, 0.0])
            }
            Model::PeriodicBox { length } => {
                let dx: f64 = self.rng.sample(StandardNormal);
                let dy: f64 = if d == 2 { self.rng.sample(StandardNormal) } else { 0.0 };
                let wrap = |t: f64| {
                    let w = t.rem_euclid(*length);
                    if w >= *length {
                        0.0
                    } else {
                        w
                    }
                };
                Some([wrap(x[0] + sigma * dx), if d == 2 { wrap(x[1] + sigma * dy) } else { 0.0 }])
            }
        }
    }
}

fn total_energy(target: &Target, pairs: &[f64], one: &[f64]) -> f64 {
    compensated_sum(pairs.iter().map(|u| 0.5 * u).chain(one.iter().copied())) + target.constant
}

/// One single-particle Metropolis update: a uniformly chosen particle makes a Gaussian
/// random-walk proposal (lattice-rounded or wrapped according to the model), accepted with
/// probability `min(1, exp(−β N^{−s/d} ΔH))`. `ΔH` costs `O(N)` from the cached sums.
/// Returns whether the proposal was accepted.
pub fn metropolis_step(state: &mut ChainState, target: &Target) -> Result<bool> {
    let n = state.positions.len();
    let i = state.rng.random_range(0..n);
    let x = state.positions[i];
    state.stats.proposals += 1;
    state.since_check += 1;
    let accepted = match state.propose(target, x) {
        None => false,
        Some(y) => {
            let mut new_sum = CompensatedSum::new();
            let mut clash = false;
            for (j, &q) in state.positions.iter().enumerate() {
                if j == i {
                    state.scratch[j] = 0.0;
                    continue;
                }
                if target.distance(y, q) < COINCIDENCE {
                    clash = true;
                    break;
                }
                let k = target.pair(y, q);
                state.scratch[j] = k;
                new_sum.add(k);
            }
            if clash {
                false
            } else {
                let new_one = target.one_body(y);
                let new_pair = new_sum.value();
                let delta = (new_pair - state.pair_sums[i]) + (new_one - state.one_body[i]);
                let p = acceptance_probability(delta, target);
                let accept = p >= 1.0 || state.rng.random::<f64>() < p;
                if accept {
                    for j in 0..n {
                        if j != i {
                            state.pair_sums[j] += state.scratch[j] - target.pair(x, state.positions[j]);
                        }
                    }
                    state.pair_sums[i] = new_pair;
                    state.one_body[i] = new_one;
                    state.positions[i] = y;
                    state.energy += delta;
                    state.stats.acceptances += 1;
                }
                accept
            }
        }
    };
    if state.since_check >= CHECK_INTERVAL {
        state.check_consistency(target)?;
    }
    Ok(accepted)
}

/// Chain lengths, counted in sweeps of `N` proposals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub initial_scale: f64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps <= self.burn_in {
            return Err(Error::Invalid(format!(
                "sweeps ({}) must exceed burn-in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Invalid("thinning must be at least 1".into()));
        }
        if !(self.initial_scale > 0.0) {
            return Err(Error::Range(format!("proposal scale must be positive, got {}", self.initial_scale)));
        }
        Ok(())
    }

    pub fn samples_per_chain(&self) -> usize {
        (self.sweeps - self.burn_in) / self.thinning
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub params: RieszParams,
    pub model: Model,
    pub n: usize,
    pub beta: f64,
    pub seed: u64,
    pub schedule: Schedule,
    pub chains: usize,
    pub samples_per_chain: usize,
    /// Acceptance rate of each chain after burn-in.
    pub acceptance: Vec<f64>,
    /// Frozen proposal scale of each chain.
    pub scales: Vec<f64>,
    /// Potential scale reduction factor of the energy across chains.
    pub gelman_rubin: Option<f64>,
    pub mixing_warning: bool,
    /// Set for the periodic model, whose energy stands in for the Neumann-box energy.
    pub proxy: Option<String>,
}

/// Thinned samples of one or more chains, stored chain after chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub meta: EnsembleMeta,
    /// Coordinates, `n · dim` per sample.
    pub positions: Vec<f64>,
    /// Energy of each sample.
    pub energies: Vec<f64>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.meta.params.d
    }

    /// Flat coordinates of sample `k`.
    pub fn sample(&self, k: usize) -> &[f64] {
        let w = self.meta.n * self.dim();
        &self.positions[k * w..(k + 1) * w]
    }

    pub fn points(&self, k: usize) -> Vec<[f64; 2]> {
        let d = self.dim();
        self.sample(k)
            .chunks(d)
            .map(|c| if d == 1 { [c[0], 0.0] } else { [c[0], c[1]] })
            .collect()
    }

    pub fn configuration(&self, k: usize) -> Result<Configuration> {
        Configuration::new(self.dim(), self.points(k))
    }

    /// Index range of the samples of chain `c`.
    pub fn chain_range(&self, c: usize) -> std::ops::Range<usize> {
        let m = self.meta.samples_per_chain;
        c * m..(c + 1) * m
    }

    /// Writes the little-endian binary payload and its JSON manifest.
    pub fn write(&self, bin_path: &Path, manifest_path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(bin_path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.n as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in self.positions.iter().chain(&self.energies) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(manifest_path)?), &self.meta)?;
        Ok(())
    }

    pub fn read(bin_path: &Path, manifest_path: &Path) -> Result<Self> {
        let meta: EnsembleMeta = serde_json::from_reader(BufReader::new(File::open(manifest_path)?))?;
        let mut r = BufReader::new(File::open(bin_path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("{} is not an ensemble file", bin_path.display())));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported ensemble format version {version}")));
        }
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        if n != meta.n || d != meta.params.d || count != meta.chains * meta.samples_per_chain {
            return Err(Error::Format("binary header disagrees with the manifest".into()));
        }
        let mut read_block = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8)?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let positions = read_block(count * n * d)?;
        let energies = read_block(count)?;
        Ok(Ensemble { meta, positions, energies })
    }
}

struct ChainOutput {
    positions: Vec<f64>,
    energies: Vec<f64>,
    acceptance: f64,
    scale: f64,
}

fn run_single(target: &Target, initial: Vec<[f64; 2]>, schedule: &Schedule, rng: ChaCha8Rng) -> Result<ChainOutput> {
    let n = target.n as u64;
    let d = target.dim();
    let mut state = ChainState::new(target, initial, schedule.initial_scale, rng)?;
    let mut window = (0u64, 0u64);
    for _ in 0..schedule.burn_in {
        for _ in 0..n {
            let acc = metropolis_step(&mut state, target)?;
            window.0 += 1;
            window.1 += acc as u64;
            if window.0 == ADAPT_WINDOW {
                let rate = window.1 as f64 / window.0 as f64;
                state.stats.scale *= if rate > TARGET_ACCEPTANCE { 1.1 } else { 1.0 / 1.1 };
                if let Model::Lattice { spacing, .. } = &target.model {
                    state.stats.scale = state.stats.scale.max(*spacing);
                }
                window = (0, 0);
            }
        }
    }
    let before = state.stats;
    let m = schedule.samples_per_chain();
    let mut positions = Vec::with_capacity(m * target.n * d);
    let mut energies = Vec::with_capacity(m);
    let recorded = schedule.burn_in + m * schedule.thinning;
    for sweep in schedule.burn_in..recorded {
        for _ in 0..n {
            metropolis_step(&mut state, target)?;
        }
        if (sweep - schedule.burn_in + 1) % schedule.thinning == 0 {
            for p in &state.positions {
                positions.extend_from_slice(&p[..d]);
            }
            energies.push(state.energy);
        }
    }
    let proposals = state.stats.proposals - before.proposals;
    let accepted = state.stats.acceptances - before.acceptances;
    Ok(ChainOutput {
        positions,
        energies,
        acceptance: if proposals == 0 { 0.0 } else { accepted as f64 / proposals as f64 },
        scale: state.stats.scale,
    })
}

/// Runs chain `chain` of master seed `seed`. The proposal scale adapts toward acceptance
/// 0.3 during burn-in only. Without `initial`, the start is drawn by
/// [`Target::initial_positions`] from `mu`.
pub fn run_chain(
    target: &Target,
    initial: Option<Vec<[f64; 2]>>,
    mu: Option<&GridMeasure>,
    schedule: &Schedule,
    seed: u64,
    chain: u64,
) -> Result<Ensemble> {
    schedule.validate()?;
    let mut rng = chain_rng(seed, chain);
    let start = match initial {
        Some(p) => p,
        None => target.initial_positions(mu, &mut rng)?,
    };
    let out = run_single(target, start, schedule, rng)?;
    Ok(assemble(target, schedule, seed, vec![out]))
}

/// Independent chains `0..n_chains` run in parallel and concatenated in chain order, with
/// the Gelman–Rubin diagnostic of the energy.
pub fn sample_ensemble(
    target: &Target,
    mu: Option<&GridMeasure>,
    schedule: &Schedule,
    n_chains: usize,
    seed: u64,
) -> Result<Ensemble> {
    if n_chains == 0 {
        return Err(Error::Invalid("at least one chain is required".into()));
    }
    schedule.validate()?;
    let outputs = (0..n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = chain_rng(seed, c as u64);
            let start = target.initial_positions(mu, &mut rng)?;
            run_single(target, start, schedule, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(target, schedule, seed, outputs))
}

fn assemble(target: &Target, schedule: &Schedule, seed: u64, outputs: Vec<ChainOutput>) -> Ensemble {
    let series: Vec<&[f64]> = outputs.iter().map(|o| o.energies.as_slice()).collect();
    let gelman_rubin = gelman_rubin(&series);
    let proxy = matches!(target.model, Model::PeriodicBox { .. })
        .then(|| "minimum-image periodic kernel g(r) − g(L/2) for r < L/2 with uniform background".to_string());
    let meta = EnsembleMeta {
        params: target.params,
        model: target.model.clone(),
        n: target.n,
        beta: target.beta,
        seed,
        schedule: *schedule,
        chains: outputs.len(),
        samples_per_chain: schedule.samples_per_chain(),
        acceptance: outputs.iter().map(|o| o.acceptance).collect(),
        scales: outputs.iter().map(|o| o.scale).collect(),
        gelman_rubin,
        mixing_warning: gelman_rubin.is_some_and(|r| !(r <= MIXING_THRESHOLD)),
        proxy,
    };
    let mut positions = Vec::new();
    let mut energies = Vec::new();
    for o in outputs {
        positions.extend(o.positions);
        energies.extend(o.energies);
    }
    Ensemble { meta, positions, energies }
}

/// Potential scale reduction `√(((m−1)/m · W + B/m) / W)` over equally long chains; `None`
/// with fewer than two chains or two samples per chain.
pub fn gelman_rubin(chains: &[&[f64]]) -> Option<f64> {
    let k = chains.len();
    let m = chains.first()?.len();
    if k < 2 || m < 2 || chains.iter().any(|c| c.len() != m) {
        return None;
    }
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / m as f64).collect();
    let grand = means.iter().sum::<f64>() / k as f64;
    let b = m as f64 / (k - 1) as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (m - 1) as f64)
        .sum::<f64>()
        / k as f64;
    if w == 0.0 {
        return Some(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Some((((m - 1) as f64 / m as f64 * w + b / m as f64) / w).sqrt())
}

/// One point of a thermodynamic-integration curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyPoint {
    pub beta: f64,
    /// Estimate of `d/dβ log K`.
    pub derivative: f64,
    /// Monte Carlo standard error of `derivative`.
    pub std_error: f64,
    /// `log K(β) − log K(β_0)` by the trapezoid rule.
    pub log_k: f64,
    /// `−log K(β) / (β L^d)` when the curve starts at `β_0 = 0` in the periodic model, where
    /// `log K(0) = 0`.
    pub pressure: Option<f64>,
    pub reliable: bool,
}

/// Thermodynamic integration of `d/dβ log K = −c E_β[E]` on an increasing grid of inverse
/// temperatures. In the periodic model `E` is the jellium energy and `c = 1`. In the confined
/// model `E = F_N(X, μ_V) + N Σ ζ_V(x_i)` and `c = N^{−s/d}`, which needs `equilibrium`.
///
/// Each grid point runs its own chain, seeded by its index; a point whose effective sample
/// size is below 50 is rerun once with twice the sweeps and flagged when still short.
pub fn free_energy_curve(
    params: &RieszParams,
    model: &Model,
    n: usize,
    beta_grid: &[f64],
    schedule: &Schedule,
    seed: u64,
    equilibrium: Option<&EquilibriumResult>,
) -> Result<Vec<FreeEnergyPoint>> {
    if beta_grid.len() < 4 {
        return Err(Error::Invalid(format!("need at least 4 inverse temperatures, got {}", beta_grid.len())));
    }
    if beta_grid.windows(2).any(|w| !(w[1] >= w[0])) || !(beta_grid[0] >= 0.0) {
        return Err(Error::Invalid("the β grid must be non-negative and non-decreasing".into()));
    }
    let mean_field = match model {
        Model::PeriodicBox { .. } => None,
        _ => {
            let eq = equilibrium.ok_or_else(|| {
                Error::Invalid("the confined model needs the equilibrium measure for F_N + NΣζ".into())
            })?;
            Some((MeanField::new(&eq.mu, params)?, eq))
        }
    };
    let observable = |ens: &Ensemble| -> Result<Vec<f64>> {
        match &mean_field {
            None => Ok(ens.energies.clone()),
            Some((mf, eq)) => (0..ens.len())
                .map(|k| {
                    let x = ens.configuration(k)?;
                    let zeta = compensated_sum(x.points.iter().map(|p| eq.zeta.eval(*p)));
                    Ok(mf.next_order_energy(&x)? + n as f64 * zeta)
                })
                .collect(),
        }
    };
    let c = match model {
        Model::PeriodicBox { .. } => 1.0,
        _ => 1.0 / params.n_pow_s_over_d(n),
    };
    let mu = mean_field.as_ref().map(|(_, eq)| &eq.mu);
    let estimates = beta_grid
        .iter()
        .enumerate()
        .map(|(k, &beta)| {
            let target = Target::new(*params, model.clone(), n, beta)?;
            let mut sched = *schedule;
            let mut attempt = 0;
            loop {
                let ens = run_chain(&target, None, mu, &sched, seed, k as u64)?;
                let obs = observable(&ens)?;
                let mean = compensated_sum(obs.iter().copied()) / obs.len() as f64;
                let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (obs.len().max(2) - 1) as f64;
                let ess = effective_sample_size(&obs);
                let reliable = ess >= 50.0 && var.is_finite();
                if reliable || attempt == 1 {
                    return Ok((beta, -c * mean, c * (var / ess.max(1.0)).sqrt(), reliable));
                }
                attempt += 1;
                sched.sweeps = sched.burn_in + 2 * (sched.sweeps - sched.burn_in);
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let volume = match model {
        Model::PeriodicBox { length } => Some(length.powi(params.d as i32)),
        _ => None,
    };
    let mut log_k = 0.0;
    let mut out = Vec::with_capacity(estimates.len());
    for (k, &(beta, derivative, std_error, reliable)) in estimates.iter().enumerate() {
        if k > 0 {
            let (b0, d0, _, _) = estimates[k - 1];
            log_k += 0.5 * (beta - b0) * (derivative + d0);
        }
        let pressure = match volume {
            Some(v) if beta_grid[0] == 0.0 && beta > 0.0 => Some(-log_k / (beta * v)),
            _ => None,
        };
        out.push(FreeEnergyPoint { beta, derivative, std_error, log_k, pressure, reliable });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn confined(n: usize, s: f64, beta: f64) -> Target {
        Target::new(RieszParams::new(1, s).unwrap(), Model::Confined { potential: Potential::quadratic(1.0) }, n, beta).unwrap()
    }

    fn lattice_target(beta: f64) -> Target {
        let model = Model::Lattice { potential: Potential::quadratic(1.0), origin: -1.5, spacing: 3.0 / 63.0, states: 64 };
        Target::new(RieszParams::new(1, 0.5).unwrap(), model, 1, beta).unwrap()
    }

    #[test]
    fn zero_temperature_accepts_everything() {
        let t = confined(8, 0.5, 0.0);
        let mut rng = chain_rng(1, 0);
        let start = t.initial_positions(None, &mut rng).unwrap();
        let mut st = ChainState::new(&t, start, 0.5, rng).unwrap();
        for _ in 0..500 {
            assert!(metropolis_step(&mut st, &t).unwrap());
        }
        assert_eq!(acceptance_probability(0.0, &confined(8, 0.5, 3.0)), 1.0);
        assert_eq!(acceptance_probability(-2.0, &confined(8, 0.5, 3.0)), 1.0);
    }

    #[test]
    fn cached_energy_tracks_recomputation() {
        for (s, model) in [
            (0.5, Model::Confined { potential: Potential::quadratic(1.0) }),
            (0.0, Model::Confined { potential: Potential::quadratic(1.0) }),
            (0.5, Model::PeriodicBox { length: 24.0 }),
        ] {
            let t = Target::new(RieszParams::new(1, s).unwrap(), model, 24, 2.0).unwrap();
            let mut rng = chain_rng(3, 0);
            let start = t.initial_positions(None, &mut rng).unwrap();
            let mut st = ChainState::new(&t, start, 0.1, rng).unwrap();
            for _ in 0..5 * CHECK_INTERVAL + 17 {
                metropolis_step(&mut st, &t).unwrap();
            }
            let rel = (st.energy() - t.energy(&st.positions).unwrap()).abs() / st.energy().abs();
            assert!(rel < CHECK_TOLERANCE, "s={s}: {rel:e}");
            assert!(st.stats.acceptance_rate() > 0.0 && st.stats.acceptance_rate() <= 1.0);
        }
    }

    #[test]
    fn energy_matches_hamiltonian() {
        let p = RieszParams::new(1, 0.5).unwrap();
        let xs = [-0.7, -0.1, 0.35, 0.9];
        let t = confined(4, 0.5, 1.0);
        let pts: Vec<[f64; 2]> = xs.iter().map(|&x| [x, 0.0]).collect();
        let h = crate::energy::hamiltonian(&Configuration::from_line(&xs).unwrap(), &Potential::quadratic(1.0), &p).unwrap();
        assert_relative_eq!(t.energy(&pts).unwrap(), h, max_relative = 1e-14);
        assert!(t.energy(&[[0.1, 0.0], [0.1, 0.0], [0.2, 0.0], [0.3, 0.0]]).is_err());
    }

    /// The exact transition matrix of the one-particle lattice chain leaves the Boltzmann
    /// weights invariant and is reversible with respect to them.
    #[test]
    fn lattice_chain_is_reversible() {
        let t = lattice_target(1.7);
        let Model::Lattice { potential, origin, spacing, states } = &t.model else { unreachable!() };
        let x = |k: usize| origin + spacing * k as f64;
        let weights: Vec<f64> = (0..*states).map(|k| (-t.exponent_factor() * potential.value(1, [x(k), 0.0])).exp()).collect();
        let z: f64 = weights.iter().sum();
        let pi: Vec<f64> = weights.iter().map(|w| w / z).collect();
        let scale = 0.2;
        let mut p = vec![vec![0.0; *states]; *states];
        for a in 0..*states {
            let mut stay = 1.0;
            for b in 0..*states {
                if a != b {
                    let q = lattice_proposal_probability(b as i64 - a as i64, scale, *spacing);
                    let dh = potential.value(1, [x(b), 0.0]) - potential.value(1, [x(a), 0.0]);
                    p[a][b] = q * acceptance_probability(dh, &t);
                    stay -= p[a][b];
                }
            }
            p[a][a] = stay;
        }
        for a in 0..*states {
            for b in 0..*states {
                assert!((pi[a] * p[a][b] - pi[b] * p[b][a]).abs() < 1e-16);
            }
        }
        for b in 0..*states {
            let next: f64 = (0..*states).map(|a| pi[a] * p[a][b]).sum();
            assert!((next - pi[b]).abs() < 1e-15);
        }
        let total: f64 = (-200..=200).map(|k| lattice_proposal_probability(k, scale, *spacing)).sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn chains_are_reproducible_and_seed_dependent() {
        let t = confined(6, 0.5, 2.0);
        let sched = Schedule { sweeps: 300, burn_in: 100, thinning: 5, initial_scale: 0.3 };
        let a = sample_ensemble(&t, None, &sched, 3, 11).unwrap();
        let b = sample_ensemble(&t, None, &sched, 3, 11).unwrap();
        let c = sample_ensemble(&t, None, &sched, 3, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.positions, c.positions);
        assert_eq!(a.len(), 3 * sched.samples_per_chain());
        assert!(a.meta.gelman_rubin.is_some());
        // Each chain equals the standalone run with the same index.
        for ch in 0..3 {
            let single = run_chain(&t, None, None, &sched, 11, ch as u64).unwrap();
            assert_eq!(single.energies, a.energies[a.chain_range(ch)].to_vec());
        }
    }

    #[test]
    fn ensemble_round_trip() {
        let t = Target::new(RieszParams::new(2, 1.0).unwrap(), Model::Confined { potential: Potential::quadratic(1.0) }, 5, 1.0)
            .unwrap();
        let sched = Schedule { sweeps: 40, burn_in: 10, thinning: 3, initial_scale: 0.2 };
        let e = sample_ensemble(&t, None, &sched, 2, 4).unwrap();
        let dir = std::env::temp_dir().join(format!("riesz-ens-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let (bin, json) = (dir.join("e.bin"), dir.join("e.json"));
        e.write(&bin, &json).unwrap();
        let back = Ensemble::read(&bin, &json).unwrap();
        assert_eq!(back, e);
        std::fs::write(&bin, b"not an ensemble").unwrap();
        assert!(Ensemble::read(&bin, &json).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    /// At `β = 0` the points are independent and uniform on the torus, so `E[F] = −ρC/2` with
    /// `C` the integral of the truncated kernel.
    #[test]
    fn periodic_box_at_infinite_temperature() {
        let p = RieszParams::new(1, 0.5).unwrap();
        let l = 16.0;
        let t = Target::new(p, Model::PeriodicBox { length: l }, 16, 0.0).unwrap();
        let sched = Schedule { sweeps: 4000, burn_in: 10, thinning: 1, initial_scale: 4.0 };
        let e = sample_ensemble(&t, None, &sched, 2, 7).unwrap();
        let mean = e.energies.iter().sum::<f64>() / e.len() as f64;
        // Oracle: C = 2∫_0^{L/2} (r^{-s} − (L/2)^{-s})/s dr evaluated by Simpson on r = u².
        let half = 0.5 * l;
        let m = 20000;
        let f = |u: f64| if u == 0.0 { 2.0 / p.s } else { 2.0 * u * (u.powf(-2.0 * p.s) - half.powf(-p.s)) / p.s };
        let hu = half.sqrt() / m as f64;
        let simpson: f64 = (0..=m)
            .map(|k| {
                let w = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                w * f(k as f64 * hu)
            })
            .sum::<f64>()
            * hu
            / 3.0;
        let expected = -0.5 * (16.0 / l) * 2.0 * simpson;
        let sd = e.energies.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt() / e.len() as f64;
        assert!((mean - expected).abs() < 5.0 * sd.max(1e-3), "mean {mean}, expected {expected}, sd {sd}");
    }

    #[test]
    fn gelman_rubin_detects_disagreement() {
        let a: Vec<f64> = (0..100).map(|k| (k as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..100).map(|k| (k as f64 * 0.41).cos()).collect();
        let shifted: Vec<f64> = b.iter().map(|v| v + 5.0).collect();
        assert!(gelman_rubin(&[&a, &b]).unwrap() < 1.05);
        assert!(gelman_rubin(&[&a, &shifted]).unwrap() > 2.0);
        assert!(gelman_rubin(&[&a]).is_none());
    }

    #[test]
    fn identical_temperatures_integrate_to_zero() {
        let p = RieszParams::new(1, 0.5).unwrap();
        let sched = Schedule { sweeps: 200, burn_in: 50, thinning: 1, initial_scale: 1.0 };
        let curve = free_energy_curve(&p, &Model::PeriodicBox { length: 8.0 }, 8, &[0.5; 4], &sched, 1, None).unwrap();
        for pt in &curve {
            assert_eq!(pt.log_k, 0.0);
        }
        assert!(free_energy_curve(&p, &Model::PeriodicBox { length: 8.0 }, 8, &[0.5, 1.0, 2.0], &sched, 1, None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn energy_is_permutation_invariant(xs in proptest::collection::vec(-2.0f64..2.0, 2..10), rot in 0usize..10) {
            let t = confined(xs.len(), 0.5, 1.0);
            let pts: Vec<[f64; 2]> = xs.iter().map(|&x| [x, 0.0]).collect();
            prop_assume!(t.check_points(&pts).is_ok());
            let mut shuffled = pts.clone();
            shuffled.rotate_left(rot % pts.len());
            shuffled.reverse();
            let a = t.energy(&pts).unwrap();
            let b = t.energy(&shuffled).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn acceptance_is_a_probability(dh in -50.0f64..50.0, beta in 0.0f64..10.0) {
            let p = acceptance_probability(dh, &confined(4, 0.5, beta));
            prop_assert!((0.0..=1.0).contains(&p));
            if dh <= 0.0 { prop_assert_eq!(p, 1.0); }
        }
    }
}
