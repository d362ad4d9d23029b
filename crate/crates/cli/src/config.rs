//! Run configuration: one TOML table per pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use riesz_core::statistics::CltMode;

/// The configuration shipped with the crate; it validates cleanly.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stochastic stage derives its own seed from it.
    pub seed: u64,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub sampler: SamplerConfig,
    pub locallaw: LocalLawConfig,
    pub clt: CltConfig,
    pub transport: TransportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub s: f64,
    pub beta: f64,
    pub n: usize,
    /// Coefficients `c_k` of `V = Σ c_k |x|^k`.
    pub potential: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// The grid covers `[−half_width, half_width]^d`.
    pub half_width: f64,
    /// Cells per axis.
    pub cells: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub initial_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalLawConfig {
    /// Directory written by `sample`.
    pub ensemble: Option<PathBuf>,
    pub scales: Vec<f64>,
    pub bulk_margin: f64,
    pub max_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    /// Directory written by `sample`.
    pub ensemble: Option<PathBuf>,
    pub center: f64,
    pub ell: f64,
    pub mode: CltMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    pub center: f64,
    pub ell: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_CONFIG).expect("the shipped configuration parses")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// `N^{−1/d}`, the typical interparticle distance.
    pub fn spacing(&self) -> f64 {
        (self.model.n as f64).powf(-1.0 / self.model.d.max(1) as f64)
    }
}

/// Static checks of `config`; empty when it is admissible.
pub fn validate_config(config: &RunConfig) -> Vec<String> {
    let mut v = Vec::new();
    let m = &config.model;
    if !(1..=2).contains(&m.d) {
        v.push(format!("model.d = {} is not supported (1 or 2)", m.d));
    } else {
        let d = m.d as f64;
        if !(m.s > d - 2.0 && m.s < d) || m.s < 0.0 {
            v.push(format!(
                "model.s = {} lies outside the super-Coulombic range (d−2, d) = ({}, {}) with s ≥ 0",
                m.s,
                d - 2.0,
                d
            ));
        }
    }
    if !(m.beta > 0.0) || !m.beta.is_finite() {
        v.push(format!("model.beta = {} must be positive", m.beta));
    }
    if m.n == 0 {
        v.push("model.n must be at least 1".into());
    }
    if m.potential.is_empty() || m.potential.iter().any(|c| !c.is_finite()) {
        v.push("model.potential needs finite coefficients".into());
    } else if !(m.potential.last().copied().unwrap_or(0.0) > 0.0) || m.potential.len() < 2 {
        v.push("model.potential must grow at infinity (positive leading coefficient of degree ≥ 1)".into());
    }

    let g = &config.grid;
    if !(g.half_width > 0.0) || !g.half_width.is_finite() {
        v.push(format!("grid.half_width = {} must be positive", g.half_width));
    }
    if g.cells < 16 {
        v.push(format!("grid.cells = {} is below the minimum of 16", g.cells));
    }
    if !(g.tolerance > 0.0) {
        v.push(format!("grid.tolerance = {} must be positive", g.tolerance));
    }

    let s = &config.sampler;
    if s.chains == 0 {
        v.push("sampler.chains must be at least 1".into());
    }
    if s.sweeps <= s.burn_in {
        v.push(format!("sampler.sweeps = {} must exceed sampler.burn_in = {}", s.sweeps, s.burn_in));
    }
    if s.thinning == 0 {
        v.push("sampler.thinning must be at least 1".into());
    }
    if !(s.initial_scale > 0.0) {
        v.push(format!("sampler.initial_scale = {} must be positive", s.initial_scale));
    }

    let floor = 4.0 * config.spacing();
    let l = &config.locallaw;
    if l.scales.is_empty() {
        v.push("locallaw.scales is empty".into());
    }
    if let Some(ell) = l.scales.iter().find(|&&ell| !(ell >= floor)) {
        v.push(format!("locallaw scale {ell} is below the floor 4·N^(−1/d) = {floor:.4}"));
    }
    if !(0.0..0.5).contains(&l.bulk_margin) {
        v.push(format!("locallaw.bulk_margin = {} must lie in [0, 0.5)", l.bulk_margin));
    }
    if !(config.clt.ell >= floor) {
        v.push(format!("clt.ell = {} is below the floor 4·N^(−1/d) = {floor:.4}", config.clt.ell));
    }
    if !(config.transport.ell > 0.0) {
        v.push(format!("transport.ell = {} must be positive", config.transport.ell));
    }
    v
}
