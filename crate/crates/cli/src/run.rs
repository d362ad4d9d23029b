//! Pipelines behind each subcommand and the run manifest.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use riesz_core::equilibrium::{boundary_exponent_fit, el_residual, solve_equilibrium, EquilibriumResult, Potential};
use riesz_core::grid::Grid;
use riesz_core::kernel::RieszParams;
use riesz_core::sampler::{derive_seed, sample_ensemble, Ensemble, Model, Schedule, Target};
use riesz_core::statistics::{
    clt_report, laplace_estimate, linear_statistic, local_law_report, rescaled_fluctuations, LocalLawOptions, TestFunction,
};
use riesz_core::transport::{decay_and_continuity_check, master_residual, solve_transport_1d};

use crate::config::{validate_config, RunConfig};

/// Window, in cells, of the boundary exponent fits reported by `equilibrium`.
const BOUNDARY_FIT_WINDOW: usize = 24;
/// `τ` values of the Laplace-transform estimate reported by `clt`.
const LAPLACE_TAUS: [f64; 5] = [-0.2, -0.1, 0.0, 0.1, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Equilibrium,
    Sample,
    Locallaw,
    Clt,
    Transport,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Equilibrium => "equilibrium",
            Stage::Sample => "sample",
            Stage::Locallaw => "locallaw",
            Stage::Clt => "clt",
            Stage::Transport => "transport",
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    /// Rejected before any computation; exit status 2.
    Validation(Vec<String>),
    Core(riesz_core::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        use riesz_core::Error as E;
        match self {
            Failure::Validation(_) => 2,
            Failure::Core(E::NoConvergence { .. } | E::Singularity(_) | E::Internal(_)) => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(v) => {
                writeln!(f, "invalid configuration:")?;
                for line in v {
                    writeln!(f, "  - {line}")?;
                }
                Ok(())
            }
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<riesz_core::Error> for Failure {
    fn from(e: riesz_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

/// Files written by a stage (names inside the run directory) and its headline numbers.
struct Outcome {
    artifacts: Vec<String>,
    summary: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Serialize)]
struct Timing {
    started_unix: u64,
    elapsed_seconds: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: Stage,
    config: &'a RunConfig,
    threads: usize,
    deterministic: bool,
    artifacts: Vec<Artifact>,
    /// SHA-256 over `name:sha256` lines of the artifacts in name order.
    content_hash: String,
    summary: Value,
    timing: Option<Timing>,
}

/// Validates `config`, runs `stage` into `<out>/<stage>` and writes `manifest.json` there.
/// Returns the run directory.
pub fn run(stage: Stage, config: &RunConfig, threads: usize, deterministic: bool) -> Result<PathBuf, Failure> {
    let violations = validate_config(config);
    if !violations.is_empty() {
        return Err(Failure::Validation(violations));
    }
    let dir = config.out.join(stage.name());
    std::fs::create_dir_all(&dir)?;
    let started = SystemTime::now();
    let clock = Instant::now();
    let outcome = match stage {
        Stage::Equilibrium => equilibrium(config, &dir)?,
        Stage::Sample => sample(config, &dir)?,
        Stage::Locallaw => locallaw(config, &dir)?,
        Stage::Clt => clt(config, &dir)?,
        Stage::Transport => transport(config, &dir)?,
    };
    let mut artifacts = outcome.artifacts.iter().map(|name| hash_file(&dir, name)).collect::<Result<Vec<_>, _>>()?;
    artifacts.sort_by(|a, b| a.name.cmp(&b.name));
    let content_hash = content_hash(&artifacts);
    let timing = (!deterministic).then(|| Timing {
        started_unix: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
    });
    let manifest = Manifest {
        tool: "rieszlab",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: stage,
        config,
        threads,
        deterministic,
        artifacts,
        content_hash,
        summary: outcome.summary,
        timing,
    };
    let mut f = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, &manifest).map_err(riesz_core::Error::from)?;
    f.flush()?;
    Ok(dir)
}

pub fn hash_file(dir: &Path, name: &str) -> std::io::Result<Artifact> {
    let mut file = File::open(dir.join(name))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let k = file.read(&mut buf)?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
        bytes += k as u64;
    }
    Ok(Artifact { name: name.to_string(), bytes, sha256: hex(&hasher.finalize()) })
}

fn content_hash(artifacts: &[Artifact]) -> String {
    let mut hasher = Sha256::new();
    for a in artifacts {
        hasher.update(format!("{}:{}\n", a.name, a.sha256).as_bytes());
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn params(config: &RunConfig) -> Result<RieszParams, Failure> {
    Ok(RieszParams::new(config.model.d, config.model.s)?)
}

fn potential(config: &RunConfig) -> Potential {
    Potential::Polynomial { coefficients: config.model.potential.clone() }
}

fn grid(config: &RunConfig, d: usize) -> Result<Grid, Failure> {
    let g = &config.grid;
    Ok(if d == 1 {
        Grid::covering_1d(-g.half_width, g.half_width, g.cells)?
    } else {
        Grid::covering_square(-g.half_width, g.half_width, g.cells)?
    })
}

fn solve(config: &RunConfig, params: &RieszParams, potential: &Potential) -> Result<EquilibriumResult, Failure> {
    let grid = grid(config, params.d)?;
    Ok(solve_equilibrium(potential, &grid, params, config.grid.tolerance)?)
}

fn equilibrium(config: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    let p = params(config)?;
    let eq = solve(config, &p, &potential(config))?;
    let fit = if p.d == 1 { boundary_exponent_fit(&eq, BOUNDARY_FIT_WINDOW).ok() } else { None };
    eq.write(dir, fit.as_ref())?;
    let el = el_residual(&eq);
    Ok(Outcome {
        artifacts: vec!["equilibrium.csv".into(), "equilibrium.json".into()],
        summary: json!({
            "energy": eq.energy,
            "c_v": eq.c_v,
            "support_cells": eq.sigma.iter().filter(|m| **m).count(),
            "el_residual": el,
            "density_exponent": fit.as_ref().map(|f| f.density_exponent),
            "liftoff_exponent": fit.as_ref().map(|f| f.liftoff_exponent),
        }),
    })
}

fn sample(config: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    let p = params(config)?;
    let v = potential(config);
    let eq = solve(config, &p, &v)?;
    let m = &config.model;
    let target = Target::new(p, Model::Confined { potential: v }, m.n, m.beta)?;
    let s = &config.sampler;
    let schedule = Schedule { sweeps: s.sweeps, burn_in: s.burn_in, thinning: s.thinning, initial_scale: s.initial_scale };
    let ensemble = sample_ensemble(&target, Some(&eq.mu), &schedule, s.chains, derive_seed(config.seed, "sample"))?;
    ensemble.write(&dir.join("ensemble.bin"), &dir.join("ensemble.json"))?;

    let mut w = csv_writer(&dir.join("energies.csv"))?;
    w.write_record(["chain", "sample", "energy"]).map_err(riesz_core::Error::from)?;
    for c in 0..ensemble.meta.chains {
        for (j, k) in ensemble.chain_range(c).enumerate() {
            w.write_record([c.to_string(), j.to_string(), format!("{:.17e}", ensemble.energies[k])])
                .map_err(riesz_core::Error::from)?;
        }
    }
    w.flush()?;
    let meta = &ensemble.meta;
    Ok(Outcome {
        artifacts: vec!["ensemble.bin".into(), "ensemble.json".into(), "energies.csv".into()],
        summary: json!({
            "samples": ensemble.len(),
            "acceptance": meta.acceptance,
            "gelman_rubin": meta.gelman_rubin,
            "mixing_warning": meta.mixing_warning,
        }),
    })
}

fn load_ensemble(path: Option<&Path>, key: &str) -> Result<Ensemble, Failure> {
    let dir = path.ok_or_else(|| Failure::Validation(vec![format!("{key} is not set; run `sample` first")]))?;
    let (bin, meta) = (dir.join("ensemble.bin"), dir.join("ensemble.json"));
    if !bin.is_file() || !meta.is_file() {
        return Err(Failure::Validation(vec![format!(
            "{key} = {} does not hold ensemble.bin and ensemble.json",
            dir.display()
        )]));
    }
    Ok(Ensemble::read(&bin, &meta)?)
}

/// The equilibrium measure of the ensemble's own model on the configured grid.
fn ensemble_equilibrium(config: &RunConfig, ensemble: &Ensemble) -> Result<EquilibriumResult, Failure> {
    let Model::Confined { potential } = &ensemble.meta.model else {
        return Err(riesz_core::Error::Unsupported("only confined ensembles have an equilibrium measure".into()).into());
    };
    solve(config, &ensemble.meta.params, potential)
}

fn locallaw(config: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    let l = &config.locallaw;
    let ensemble = load_ensemble(l.ensemble.as_deref(), "locallaw.ensemble")?;
    let eq = ensemble_equilibrium(config, &ensemble)?;
    let options = LocalLawOptions { bulk_margin: l.bulk_margin, max_samples: l.max_samples, ..LocalLawOptions::default() };
    let report = local_law_report(&ensemble, &eq, &l.scales, &options)?;

    let mut w = csv_writer(&dir.join("locallaw.csv"))?;
    w.write_record([
        "scale",
        "cubes",
        "skipped",
        "samples",
        "energy_mean",
        "energy_q50",
        "energy_q99",
        "energy_max",
        "energy_normalized",
        "count_mean",
        "count_max",
    ])
    .map_err(riesz_core::Error::from)?;
    for r in &report.rows {
        w.write_record([
            format!("{:.17e}", r.scale),
            r.cubes.to_string(),
            r.skipped.to_string(),
            r.samples.to_string(),
            format!("{:.17e}", r.energy_mean),
            format!("{:.17e}", r.energy_q50),
            format!("{:.17e}", r.energy_q99),
            format!("{:.17e}", r.energy_max),
            format!("{:.17e}", r.energy_normalized),
            format!("{:.17e}", r.count_mean),
            r.count_max.to_string(),
        ])
        .map_err(riesz_core::Error::from)?;
    }
    w.flush()?;
    write_json(&dir.join("locallaw.json"), &report)?;
    Ok(Outcome {
        artifacts: vec!["locallaw.csv".into(), "locallaw.json".into()],
        summary: json!({
            "slope": report.slope,
            "count_constant": report.count_constant,
            "count_violation_rate": report.count_violation_rate,
        }),
    })
}

fn clt(config: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    let c = &config.clt;
    let ensemble = load_ensemble(c.ensemble.as_deref(), "clt.ensemble")?;
    let eq = ensemble_equilibrium(config, &ensemble)?;
    let meta = &ensemble.meta;
    let phi = TestFunction::new(meta.params.d, [c.center, 0.0], c.ell)?;
    let report = clt_report(&ensemble, &phi, &eq, c.mode, None)?;
    let rescaled = rescaled_fluctuations(&ensemble, &phi, &eq.mu);
    let mean_part = meta.n as f64 * phi.integral(&eq.mu);
    let raw: Vec<f64> = (0..ensemble.len()).map(|k| linear_statistic(&ensemble.points(k), &phi) - mean_part).collect();
    let laplace = laplace_estimate(&raw, &LAPLACE_TAUS, meta.beta, meta.n, c.ell, &meta.params)?;

    let mut w = csv_writer(&dir.join("fluctuations.csv"))?;
    w.write_record(["sample", "fluctuation", "rescaled"]).map_err(riesz_core::Error::from)?;
    for (k, (f, r)) in raw.iter().zip(&rescaled).enumerate() {
        w.write_record([k.to_string(), format!("{f:.17e}"), format!("{r:.17e}")]).map_err(riesz_core::Error::from)?;
    }
    w.flush()?;
    write_json(&dir.join("clt.json"), &json!({ "test_function": phi, "report": report, "laplace": laplace }))?;
    Ok(Outcome {
        artifacts: vec!["fluctuations.csv".into(), "clt.json".into()],
        summary: json!({
            "effective_samples": report.effective_samples,
            "empirical_variance": report.empirical_variance,
            "predicted_variance": report.predicted_variance,
            "skewness": report.skewness,
            "excess_kurtosis": report.excess_kurtosis,
            "binding": report.binding,
            "laplace_constant_spread": laplace.constant_spread,
        }),
    })
}

fn transport(config: &RunConfig, dir: &Path) -> Result<Outcome, Failure> {
    let p = params(config)?;
    let eq = solve(config, &p, &potential(config))?;
    let t = &config.transport;
    let phi = TestFunction::new(p.d, [t.center, 0.0], t.ell)?;
    let field = solve_transport_1d(&phi, &eq, &p)?;
    let residual = master_residual(&field, &phi, &eq, &p)?;
    let decay = decay_and_continuity_check(&field, &phi, &p)?;
    field.write(&dir.join("transport.csv"), &dir.join("transport.json"), Some(&decay))?;
    Ok(Outcome {
        artifacts: vec!["transport.csv".into(), "transport.json".into()],
        summary: json!({ "master_residual": residual, "decay": decay }),
    })
}

fn csv_writer(path: &Path) -> std::io::Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(riesz_core::Error::from)?;
    f.flush()?;
    Ok(())
}
