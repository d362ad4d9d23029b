//! Exact and structural checks that run in well under a second each.

use riesz_core::energy::{commutator_an, hamiltonian, minimal_distances, truncation_f, Configuration};
use riesz_core::equilibrium::{solve_equilibrium, Potential};
use riesz_core::grid::{Grid, GridMeasure, SampledFunction};
use riesz_core::kernel::{riesz_g, sobolev_seminorm, RieszParams, SeminormMethod};
use riesz_core::sampler::{acceptance_probability, run_chain, Model, Schedule, Target};
use riesz_core::statistics::{discrepancy, fluctuation, laplace_estimate, TestFunction};
use riesz_core::transport::{master_residual, solve_transport_1d};
use riesz_core::Result;

use crate::config::{validate_config, RunConfig};

type Check = fn() -> Result<Option<String>>;

fn close(name: &str, got: f64, want: f64, tol: f64) -> Option<String> {
    (!((got - want).abs() <= tol)).then(|| format!("{name}: got {got}, expected {want} ± {tol}"))
}

fn first_failure(items: impl IntoIterator<Item = Option<String>>) -> Option<String> {
    items.into_iter().flatten().next()
}

fn kernel_values() -> Result<Option<String>> {
    let half = RieszParams::new(1, 0.5)?;
    let log = RieszParams::new(1, 0.0)?;
    Ok(first_failure([
        close("g(1), s=0.5", riesz_g(&[1.0], &half)?, 2.0, 1e-14),
        close("g(1), s=0", riesz_g(&[1.0], &log)?, 0.0, 1e-14),
        close("g(0.5), s=0.5", riesz_g(&[0.5], &half)?, 2.0 * 2f64.sqrt(), 1e-12),
    ]))
}

fn truncation_values() -> Result<Option<String>> {
    let p = RieszParams::new(1, 0.5)?;
    let want = 2.0 * (0.05f64.powf(-0.5) - 0.1f64.powf(-0.5));
    Ok(first_failure([
        close("f_η(η)", truncation_f(0.1, &[0.1], &p)?, 0.0, 0.0),
        close("f_η(2η)", truncation_f(0.1, &[0.2], &p)?, 0.0, 0.0),
        close("f_η(η/2)", truncation_f(0.1, &[0.05], &p)?, want, 1e-12),
    ]))
}

fn minimal_distance_values() -> Result<Option<String>> {
    let p = RieszParams::new(1, 0.5)?;
    let r = minimal_distances(&Configuration::from_line(&[0.0, 1.0, 3.0])?, &p)?.eta;
    let n = 8;
    let spacing = 1.0 / n as f64;
    let lattice: Vec<f64> = (0..n).map(|i| i as f64 * spacing).collect();
    let even = minimal_distances(&Configuration::from_line(&lattice)?, &p)?.eta;
    Ok(first_failure(
        std::iter::once(close("r_1 of {0, 1, 3}", r[0], 1.0 / 12.0, 1e-15))
            .chain(even.iter().map(|&e| close("r_i of a lattice", e, spacing / 4.0, 1e-15))),
    ))
}

fn hamiltonian_values() -> Result<Option<String>> {
    let p = RieszParams::new(1, 0.5)?;
    let zero = Potential::Polynomial { coefficients: vec![0.0] };
    let pair = hamiltonian(&Configuration::from_line(&[0.0, 1.0])?, &zero, &p)?;
    let single = hamiltonian(&Configuration::from_line(&[0.7])?, &Potential::quadratic(1.0), &p)?;
    Ok(first_failure([close("H of one pair", pair, 2.0, 1e-14), close("H of one point", single, 0.49, 1e-14)]))
}

fn acceptance_values() -> Result<Option<String>> {
    let p = RieszParams::new(1, 0.5)?;
    let model = Model::Confined { potential: Potential::quadratic(1.0) };
    let cold = Target::new(p, model.clone(), 4, 0.0)?;
    let warm = Target::new(p, model, 4, 2.0)?;
    Ok(first_failure([
        close("acceptance at β = 0", acceptance_probability(5.0, &cold), 1.0, 0.0),
        close("acceptance at ΔH = 0", acceptance_probability(0.0, &warm), 1.0, 0.0),
    ]))
}

fn semicircle_measure() -> Result<GridMeasure> {
    let grid = Grid::covering_1d(-2.0, 2.0, 256)?;
    GridMeasure::from_density(grid, |x| 2.0 / std::f64::consts::PI * (1.0 - x[0] * x[0]).max(0.0).sqrt())
}

fn constant_commutator_vanishes() -> Result<Option<String>> {
    let p = RieszParams::new(1, 0.5)?;
    let mu = semicircle_measure()?;
    let config = Configuration::from_line(&[-0.5, 0.1, 0.6])?;
    let mut out = Vec::new();
    for n in 1..=3 {
        out.push(close(&format!("A_{n} for constant ψ"), commutator_an(&config, &mu, |_| 1.0, n, &p)?, 0.0, 0.0));
    }
    Ok(first_failure(out))
}

fn discrepancy_values() -> Result<Option<String>> {
    let mu = semicircle_measure()?;
    let config = Configuration::from_line(&[-0.5, 0.1, 0.6])?;
    let everything = discrepancy(&config, &mu, [0.0, 0.0], 1.9);
    let far = discrepancy(&config, &mu, [1.7, 0.0], 0.2);
    Ok(first_failure([
        close("D of a ball holding everything", everything, 3.0 * (1.0 - mu.ball_mass([0.0, 0.0], 1.9)), 1e-12),
        close("D of an empty ball", far, 0.0, 1e-12),
    ]))
}

fn zero_test_function() -> Result<Option<String>> {
    let mu = semicircle_measure()?;
    let config = Configuration::from_line(&[-0.5, 0.1, 0.6])?;
    let phi = TestFunction::new(1, [0.0, 0.0], 0.5)?.times(0.0);
    let p = RieszParams::new(1, 0.0)?;
    let laplace = laplace_estimate(&[0.3, -1.0, 2.0], &[0.0], 2.0, 3, 0.5, &p)?;
    Ok(first_failure([
        close("Fluct of φ ≡ 0", fluctuation(&config, &phi, &mu), 0.0, 0.0),
        close("Laplace estimate at τ = 0", laplace.points[0].log_mean_exp, 0.0, 0.0),
    ]))
}

fn seminorm_of_zero() -> Result<Option<String>> {
    let grid = Grid::covering_1d(-1.0, 1.0, 64)?;
    let zero = SampledFunction::zeros(grid);
    Ok(first_failure([
        close("Fourier seminorm of 0", sobolev_seminorm(&zero, 0.5, SeminormMethod::Fourier)?, 0.0, 0.0),
        close("Gagliardo seminorm of 0", sobolev_seminorm(&zero, 0.5, SeminormMethod::Gagliardo)?, 0.0, 0.0),
    ]))
}

fn even_potential_gives_even_measure() -> Result<Option<String>> {
    let p = RieszParams::new(1, 0.5)?;
    let grid = Grid::covering_1d(-3.0, 3.0, 128)?;
    let eq = solve_equilibrium(&Potential::quadratic(1.0), &grid, &p, 1e-9)?;
    let n = grid.len();
    let asym = (0..n).map(|k| (eq.mu.mass[k] - eq.mu.mass[n - 1 - k]).abs()).fold(0.0, f64::max);
    Ok(first_failure([
        close("mass of μ_V", eq.mu.total_mass(), 1.0, 1e-12),
        close("asymmetry of μ_V", asym, 0.0, 1e-9),
    ]))
}

fn transport_of_zero() -> Result<Option<String>> {
    let p = RieszParams::new(1, 0.0)?;
    let grid = Grid::covering_1d(-4.5, 4.5, 1024)?;
    let eq = solve_equilibrium(&Potential::quadratic(1.0), &grid, &p, 1e-9)?;
    let phi = TestFunction::new(1, [0.1, 0.0], 0.4)?.times(0.0);
    let field = solve_transport_1d(&phi, &eq, &p)?;
    let largest = field.psi.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(first_failure([
        close("ψ of φ ≡ 0", largest, 0.0, 0.0),
        close("master residual of ψ ≡ 0", master_residual(&field, &phi, &eq, &p)?.sup, 0.0, 0.0),
    ]))
}

fn sampler_determinism() -> Result<Option<String>> {
    let p = RieszParams::new(1, 0.5)?;
    let target = Target::new(p, Model::Confined { potential: Potential::quadratic(1.0) }, 4, 2.0)?;
    let schedule = Schedule { sweeps: 200, burn_in: 50, thinning: 5, initial_scale: 0.2 };
    let a = run_chain(&target, None, None, &schedule, 7, 0)?;
    let b = run_chain(&target, None, None, &schedule, 7, 0)?;
    let c = run_chain(&target, None, None, &schedule, 8, 0)?;
    let same = a.positions.iter().zip(&b.positions).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok(if !same {
        Some("equal seeds gave different chains".into())
    } else if a.positions == c.positions {
        Some("different seeds gave the same chain".into())
    } else {
        None
    })
}

fn shipped_config() -> Result<Option<String>> {
    let mut config = RunConfig::default();
    let clean = validate_config(&config);
    config.model.beta = 0.0;
    let hot = validate_config(&config);
    Ok(if !clean.is_empty() {
        Some(format!("shipped config has violations: {clean:?}"))
    } else if hot.len() != 1 {
        Some(format!("β = 0 gave {} violations", hot.len()))
    } else {
        None
    })
}

const CHECKS: &[(&str, Check)] = &[
    ("kernel values", kernel_values),
    ("truncated kernel values", truncation_values),
    ("minimal distances", minimal_distance_values),
    ("hamiltonian values", hamiltonian_values),
    ("acceptance probability", acceptance_values),
    ("commutators of a constant map", constant_commutator_vanishes),
    ("discrepancy of trivial balls", discrepancy_values),
    ("zero test function", zero_test_function),
    ("seminorms of zero", seminorm_of_zero),
    ("even potential, even measure", even_potential_gives_even_measure),
    ("transport of zero", transport_of_zero),
    ("sampler determinism", sampler_determinism),
    ("shipped configuration", shipped_config),
];

/// Runs every check, printing one line each; returns the number of failures.
pub fn run() -> usize {
    let mut failures = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(None) => println!("ok    {name}"),
            Ok(Some(why)) => {
                failures += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(e) => {
                failures += 1;
                println!("FAIL  {name}: {e}");
            }
        }
    }
    println!("{} of {} checks passed", CHECKS.len() - failures, CHECKS.len());
    failures
}
